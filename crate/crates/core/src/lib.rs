//! Spectral toolkit for the continuum Anderson Hamiltonian -Laplace + noise
//! on the torus [0, 2pi)^d, d = 2, 3: white-noise sampling and mollification,
//! Wick renormalization constants, exponential-transform bilinear forms, and
//! eigenvalue solvers for the renormalized operator.

pub mod besov;
pub mod eigen;
pub mod error;
pub mod experiments;
pub mod form;
pub mod grid;
pub mod noise;
pub mod stats;
pub mod wick;

pub use error::{Error, Result};
pub use grid::{
    apply_multiplier, dealiased_product, forward_transform, gradient, gradient_fields,
    inverse_laplacian_zero_mean, inverse_transform, laplacian, GridField, Lattice, ProductMode,
    SpectralField, TWO_PI,
};
