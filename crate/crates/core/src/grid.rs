//! Spectral discretization of the torus [0, 2pi)^d for d = 2, 3.
//!
//! Grid fields hold real point values at x_j = 2pi j / N; spectral fields hold
//! Fourier coefficients indexed over Lambda* = {-N/2, ..., N/2 - 1}^d in FFT
//! layout. The forward transform is coeffs(k) = N^{-d} sum_j values(x_j) e^{-ik.x_j},
//! so coeffs(0) is the spatial mean and ||u||_{L^2}^2 = (2pi)^d sum_k |coeffs(k)|^2.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

pub const TWO_PI: f64 = 2.0 * PI;

/// Uniform collocation lattice with cached FFT plans. Cheap to clone.
#[derive(Clone)]
pub struct Lattice {
    d: usize,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Lattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Lattice {{ d: {}, n: {} }}", self.d, self.n)
    }
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.n == other.n
    }
}

impl Lattice {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::DimensionUnsupported(d));
        }
        if n < 8 {
            return Err(Error::GridSize { n, reason: "N must be at least 8" });
        }
        if n % 2 != 0 {
            return Err(Error::GridSize { n, reason: "N must be even" });
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft(n, FftDirection::Forward);
        let inv = planner.plan_fft(n, FftDirection::Inverse);
        Ok(Lattice { d, n, fwd, inv })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of lattice points, N^d.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing h = 2pi / N.
    pub fn h(&self) -> f64 {
        TWO_PI / self.n as f64
    }

    /// Quadrature weight h^d of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }

    /// Signed frequency of a per-axis index: 0..N/2-1 then -N/2..-1.
    pub fn freq(&self, i: usize) -> i64 {
        if i <= self.n / 2 - 1 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    fn axis_index(&self, k: i64) -> usize {
        if k >= 0 {
            k as usize
        } else {
            (k + self.n as i64) as usize
        }
    }

    /// Decomposes a flat index into per-axis indices (axis 0 slowest).
    pub fn unravel(&self, flat: usize, out: &mut [usize; 3]) {
        let mut rem = flat;
        for a in (0..self.d).rev() {
            out[a] = rem % self.n;
            rem /= self.n;
        }
    }

    /// Frequency vector of a flat spectral index; components beyond d are zero.
    pub fn freq_vec(&self, flat: usize, out: &mut [i64; 3]) {
        let mut idx = [0usize; 3];
        self.unravel(flat, &mut idx);
        *out = [0, 0, 0];
        for a in 0..self.d {
            out[a] = self.freq(idx[a]);
        }
    }

    /// Flat index of the mirrored frequency -k. Nyquist rows map to themselves.
    pub fn mirror(&self, flat: usize) -> usize {
        let mut idx = [0usize; 3];
        self.unravel(flat, &mut idx);
        let mut m = 0usize;
        for a in 0..self.d {
            let i = idx[a];
            let mi = if i == 0 { 0 } else { self.n - i };
            m = m * self.n + mi;
        }
        m
    }

    /// True if any axis index sits on the unpaired Nyquist row k_j = -N/2.
    pub fn is_nyquist(&self, flat: usize) -> bool {
        let mut idx = [0usize; 3];
        self.unravel(flat, &mut idx);
        idx[..self.d].iter().any(|&i| i == self.n / 2)
    }

    /// Flat spectral index of an explicit frequency vector.
    pub fn index_of(&self, k: &[i64]) -> usize {
        let mut flat = 0usize;
        for a in 0..self.d {
            debug_assert!(k[a] >= -(self.n as i64) / 2 && k[a] < self.n as i64 / 2);
            flat = flat * self.n + self.axis_index(k[a]);
        }
        flat
    }

    /// Coordinates of grid point j.
    pub fn point(&self, flat: usize, out: &mut [f64; 3]) {
        let mut idx = [0usize; 3];
        self.unravel(flat, &mut idx);
        *out = [0.0, 0.0, 0.0];
        for a in 0..self.d {
            out[a] = TWO_PI * idx[a] as f64 / self.n as f64;
        }
    }

    /// Lattice for 3/2-rule padded products.
    pub fn padded(&self) -> Result<Lattice> {
        Lattice::new(self.d, 3 * self.n / 2)
    }

    fn fft_all_axes(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.len());
        let n = self.n;
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for axis in 0..self.d {
            let stride = n.pow((self.d - 1 - axis) as u32);
            let outer = n.pow(axis as u32);
            for o in 0..outer {
                let block = o * n * stride;
                for i in 0..stride {
                    let base = block + i;
                    if stride == 1 {
                        plan.process_with_scratch(&mut data[base..base + n], &mut scratch);
                    } else {
                        for (t, slot) in line.iter_mut().enumerate() {
                            *slot = data[base + t * stride];
                        }
                        plan.process_with_scratch(&mut line, &mut scratch);
                        for (t, slot) in line.iter().enumerate() {
                            data[base + t * stride] = *slot;
                        }
                    }
                }
            }
        }
    }
}

/// Real point values on a lattice.
#[derive(Clone, Debug)]
pub struct GridField {
    lattice: Lattice,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::LatticeMismatch);
        }
        Ok(GridField { lattice, values })
    }

    pub fn zeros(lattice: &Lattice) -> Self {
        GridField { lattice: lattice.clone(), values: vec![0.0; lattice.len()] }
    }

    pub fn constant(lattice: &Lattice, value: f64) -> Self {
        GridField { lattice: lattice.clone(), values: vec![value; lattice.len()] }
    }

    /// Samples a closure at the grid points. Coordinates beyond d read as 0.
    pub fn from_fn(lattice: &Lattice, f: impl Fn(&[f64; 3]) -> f64) -> Self {
        let mut values = vec![0.0; lattice.len()];
        let mut x = [0.0f64; 3];
        for (j, v) in values.iter_mut().enumerate() {
            lattice.point(j, &mut x);
            *v = f(&x);
        }
        GridField { lattice: lattice.clone(), values }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridField {
            lattice: self.lattice.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.lattice != other.lattice {
            return Err(Error::LatticeMismatch);
        }
        Ok(GridField {
            lattice: self.lattice.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn shifted(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// Pointwise product (aliased; see `dealiased_product` for the 3/2 rule).
    pub fn product(&self, other: &GridField) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    /// L^2 pairing by collocation quadrature, h^d sum_j a_j b_j.
    pub fn inner(&self, other: &GridField) -> Result<f64> {
        if self.lattice != other.lattice {
            return Err(Error::LatticeMismatch);
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Ok(dot * self.lattice.cell_volume())
    }

    /// L^p norm; p = infinity gives the sup norm over grid points.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if p.is_infinite() {
            return Ok(self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        if !(p >= 1.0) {
            return Err(Error::InvalidExponent(p));
        }
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        Ok((s * self.lattice.cell_volume()).powf(1.0 / p))
    }

    pub fn l2_norm(&self) -> f64 {
        self.lp_norm(2.0).expect("p = 2 is valid")
    }
}

/// Fourier coefficients over Lambda* in FFT index order.
#[derive(Clone, Debug)]
pub struct SpectralField {
    lattice: Lattice,
    coeffs: Vec<Complex64>,
    hermitian: bool,
}

impl SpectralField {
    pub fn new(lattice: Lattice, coeffs: Vec<Complex64>, hermitian: bool) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(Error::LatticeMismatch);
        }
        Ok(SpectralField { lattice, coeffs, hermitian })
    }

    pub fn zeros(lattice: &Lattice) -> Self {
        SpectralField {
            lattice: lattice.clone(),
            coeffs: vec![Complex64::new(0.0, 0.0); lattice.len()],
            hermitian: true,
        }
    }

    /// Builds coefficients from a closure of the frequency vector.
    /// Nyquist rows are zeroed; the hermitian flag is measured from the result.
    pub fn from_coeff_fn(lattice: &Lattice, f: impl Fn(&[i64; 3]) -> Complex64) -> Self {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); lattice.len()];
        let mut k = [0i64; 3];
        for (j, c) in coeffs.iter_mut().enumerate() {
            if lattice.is_nyquist(j) {
                continue;
            }
            lattice.freq_vec(j, &mut k);
            *c = f(&k);
        }
        let mut field = SpectralField { lattice: lattice.clone(), coeffs, hermitian: false };
        field.hermitian = field.measures_hermitian(1e-12);
        field
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn set_hermitian(&mut self, flag: bool) {
        self.hermitian = flag;
    }

    /// Spatial mean, the k = 0 coefficient.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// Coefficient at an explicit frequency vector (length d).
    pub fn coeff_at(&self, k: &[i64]) -> Complex64 {
        self.coeffs[self.lattice.index_of(k)]
    }

    /// Checks coeffs(-k) = conj(coeffs(k)) within tol * max|coeffs|.
    pub fn measures_hermitian(&self, tol: f64) -> bool {
        let scale = self
            .coeffs
            .iter()
            .fold(0.0f64, |m, c| m.max(c.norm_sqr()))
            .sqrt()
            .max(1e-300);
        for j in 0..self.coeffs.len() {
            let m = self.lattice.mirror(j);
            if m < j {
                continue;
            }
            let diff = self.coeffs[m] - self.coeffs[j].conj();
            if diff.norm() > tol * scale {
                return false;
            }
        }
        true
    }

    /// Averages conjugate-mirror pairs so the result is exactly hermitian.
    pub fn symmetrized(&self) -> SpectralField {
        let mut coeffs = self.coeffs.clone();
        for j in 0..coeffs.len() {
            let m = self.lattice.mirror(j);
            if m < j {
                continue;
            }
            if m == j {
                coeffs[j] = Complex64::new(self.coeffs[j].re, 0.0);
            } else {
                let avg = 0.5 * (self.coeffs[j] + self.coeffs[m].conj());
                coeffs[j] = avg;
                coeffs[m] = avg.conj();
            }
        }
        SpectralField { lattice: self.lattice.clone(), coeffs, hermitian: true }
    }

    /// Parseval L^2 norm, sqrt((2pi)^d sum |coeffs|^2).
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        (s * TWO_PI.powi(self.lattice.d as i32)).sqrt()
    }

    /// Squared H^1 norm, (2pi)^d sum (1 + |k|^2) |coeffs|^2.
    pub fn h1_norm_sq(&self) -> f64 {
        let mut k = [0i64; 3];
        let mut s = 0.0;
        for (j, c) in self.coeffs.iter().enumerate() {
            self.lattice.freq_vec(j, &mut k);
            let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            s += (1.0 + k2) * c.norm_sqr();
        }
        s * TWO_PI.powi(self.lattice.d as i32)
    }

    /// Zero-pads onto a finer lattice of the same dimension.
    /// Nyquist rows of the source are dropped.
    pub fn embed(&self, fine: &Lattice) -> Result<SpectralField> {
        if fine.d != self.lattice.d || fine.n < self.lattice.n {
            return Err(Error::LatticeMismatch);
        }
        let mut out = SpectralField::zeros(fine);
        let mut k = [0i64; 3];
        for (j, c) in self.coeffs.iter().enumerate() {
            if self.lattice.is_nyquist(j) {
                continue;
            }
            self.lattice.freq_vec(j, &mut k);
            out.coeffs[fine.index_of(&k[..fine.d])] = *c;
        }
        out.hermitian = self.hermitian;
        Ok(out)
    }

    /// Restricts to a coarser lattice; modes outside its non-Nyquist range are dropped.
    pub fn restrict(&self, coarse: &Lattice) -> Result<SpectralField> {
        if coarse.d != self.lattice.d || coarse.n > self.lattice.n {
            return Err(Error::LatticeMismatch);
        }
        let mut out = SpectralField::zeros(coarse);
        let mut k = [0i64; 3];
        for j in 0..out.coeffs.len() {
            if coarse.is_nyquist(j) {
                continue;
            }
            coarse.freq_vec(j, &mut k);
            out.coeffs[j] = self.coeffs[self.lattice.index_of(&k[..coarse.d])];
        }
        out.hermitian = self.hermitian;
        Ok(out)
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        if self.lattice != other.lattice {
            return Err(Error::LatticeMismatch);
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        Ok(SpectralField {
            lattice: self.lattice.clone(),
            coeffs,
            hermitian: self.hermitian && other.hermitian,
        })
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        if self.lattice != other.lattice {
            return Err(Error::LatticeMismatch);
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        Ok(SpectralField {
            lattice: self.lattice.clone(),
            coeffs,
            hermitian: self.hermitian && other.hermitian,
        })
    }

    pub fn scaled(&self, s: f64) -> SpectralField {
        SpectralField {
            lattice: self.lattice.clone(),
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
            hermitian: self.hermitian,
        }
    }
}

/// Forward transform: coeffs(k) = N^{-d} sum_j values(x_j) e^{-ik.x_j}.
pub fn forward_transform(field: &GridField) -> SpectralField {
    let lattice = field.lattice.clone();
    let mut data: Vec<Complex64> = field.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    lattice.fft_all_axes(&mut data, &lattice.fwd.clone());
    let scale = 1.0 / lattice.len() as f64;
    for c in &mut data {
        *c *= scale;
    }
    // real input: the exact coefficients are conjugate-symmetric, so the
    // asymmetric half of the FFT rounding is discarded here; downstream
    // |k|^2-scale multipliers would otherwise amplify it past the
    // inverse-transform contract on large grids
    for j in 0..data.len() {
        let m = lattice.mirror(j);
        if m < j {
            continue;
        }
        if m == j {
            data[j].im = 0.0;
        } else {
            let avg = 0.5 * (data[j] + data[m].conj());
            data[j] = avg;
            data[m] = avg.conj();
        }
    }
    SpectralField { lattice, coeffs: data, hermitian: true }
}

/// Inverse transform: values(x_j) = sum_k coeffs(k) e^{ik.x_j}.
/// Requires the hermitian flag; residual imaginary parts above
/// 1e-12 x field magnitude are treated as contract violations.
pub fn inverse_transform(field: &SpectralField) -> Result<GridField> {
    if !field.hermitian {
        return Err(Error::NonHermitian);
    }
    let lattice = field.lattice.clone();
    let mut data = field.coeffs.clone();
    lattice.fft_all_axes(&mut data, &lattice.inv.clone());
    let mag = data.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
    let im = data.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
    if im > 1e-12 * mag.max(1e-30) && im > 1e-14 {
        return Err(Error::NonHermitian);
    }
    Ok(GridField { lattice, values: data.into_iter().map(|c| c.re).collect() })
}

fn apply_multiplier_impl(
    field: &SpectralField,
    m: impl Fn(&[i64; 3]) -> Complex64,
    trust_symmetry: bool,
) -> SpectralField {
    let lattice = &field.lattice;
    let mut out = vec![Complex64::new(0.0, 0.0); field.coeffs.len()];
    let mut k = [0i64; 3];
    for (j, slot) in out.iter_mut().enumerate() {
        if lattice.is_nyquist(j) {
            continue; // unpaired rows are zeroed in every multiplier output
        }
        lattice.freq_vec(j, &mut k);
        *slot = m(&k) * field.coeffs[j];
    }
    let mut result = SpectralField {
        lattice: lattice.clone(),
        coeffs: out,
        hermitian: false,
    };
    result.hermitian = if trust_symmetry {
        field.hermitian
    } else {
        field.hermitian && result.measures_hermitian(1e-12)
    };
    result
}

/// Pointwise Fourier multiplier. The output keeps the hermitian flag only when
/// the multiplied coefficients remain conjugate-symmetric, i.e. m(-k) = conj(m(k)).
pub fn apply_multiplier(
    field: &SpectralField,
    m: impl Fn(&[i64; 3]) -> Complex64,
) -> SpectralField {
    apply_multiplier_impl(field, m, false)
}

/// Multiplier known by construction to satisfy m(-k) = conj(m(k)).
pub(crate) fn apply_symmetric_multiplier(
    field: &SpectralField,
    m: impl Fn(&[i64; 3]) -> Complex64,
) -> SpectralField {
    apply_multiplier_impl(field, m, true)
}

/// Spectral gradient: component a multiplies by i k_a.
pub fn gradient(field: &SpectralField) -> Vec<SpectralField> {
    (0..field.lattice.d)
        .map(|a| {
            apply_symmetric_multiplier(field, |k| Complex64::new(0.0, k[a] as f64))
        })
        .collect()
}

/// Spectral Laplacian, multiplication by -|k|^2.
pub fn laplacian(field: &SpectralField) -> SpectralField {
    apply_symmetric_multiplier(field, |k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        Complex64::new(-k2, 0.0)
    })
}

/// Zero-mean inverse Laplacian: divides by -|k|^2 and zeroes the k = 0 mode.
pub fn inverse_laplacian_zero_mean(field: &SpectralField) -> SpectralField {
    let mut out = apply_symmetric_multiplier(field, |k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(-1.0 / k2, 0.0)
        }
    });
    out.coeffs[0] = Complex64::new(0.0, 0.0);
    out
}

/// Gradient realized on the grid.
pub fn gradient_fields(field: &SpectralField) -> Result<Vec<GridField>> {
    gradient(field).iter().map(inverse_transform).collect()
}

/// Product via the 3/2-rule: both factors are zero-padded to 3N/2, multiplied
/// pointwise there, and the result truncated back to Lambda*. Quadratic
/// aliasing onto retained modes is removed exactly for band-limited factors.
pub fn dealiased_product(a: &GridField, b: &GridField) -> Result<GridField> {
    if a.lattice != b.lattice {
        return Err(Error::LatticeMismatch);
    }
    let coarse = &a.lattice;
    let fine = coarse.padded()?;
    let fa = forward_transform(a).embed(&fine)?;
    let fb = forward_transform(b).embed(&fine)?;
    let ga = inverse_transform(&fa)?;
    let gb = inverse_transform(&fb)?;
    let prod = ga.product(&gb)?;
    let spec = forward_transform(&prod).restrict(coarse)?;
    inverse_transform(&spec)
}

/// How pointwise products inside bilinear forms are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ProductMode {
    /// Plain collocation product (default).
    Pointwise,
    /// 3/2-rule zero-padded product.
    Padded,
}

impl ProductMode {
    pub fn multiply(self, a: &GridField, b: &GridField) -> Result<GridField> {
        match self {
            ProductMode::Pointwise => a.product(b),
            ProductMode::Padded => dealiased_product(a, b),
        }
    }
}
