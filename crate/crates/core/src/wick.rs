//! Wick renormalization constants and the enhanced noise data.
//!
//! With X solving Delta X = xi_eps - mean, the pointwise expectation
//! E|grad X|^2 equals the lattice sum c_X = sigma^2 sum_{k != 0}
//! |rho_hat(eps|k|)|^2 / |k|^2, which diverges as eps -> 0 (log in 2D,
//! 1/eps in 3D). Subtracting it defines the Wick square. In 3D a second
//! constant c_Y = E|grad Y|^2 enters through Y = -Delta^{-1}(W_X - mean).

use crate::error::{Error, Result};
use crate::grid::{
    forward_transform, gradient, inverse_transform,GridField, Lattice, ProductMode,
    SpectralField,
};
use crate::noise::{noise_sigma_sq, solve_x, solve_y, Mollifier, NoiseSample};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// First-order constant c_X as an exact truncated lattice sum.
pub fn expected_grad_sq_x(lattice: &Lattice, eps: f64, mollifier: Mollifier) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidEpsilon(eps));
    }
    let sigma2 = noise_sigma_sq(lattice.d());
    let mut sum = 0.0;
    let mut k = [0i64; 3];
    for j in 1..lattice.len() {
        if lattice.is_nyquist(j) {
            continue;
        }
        lattice.freq_vec(j, &mut k);
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 == 0.0 {
            continue;
        }
        let rho = mollifier.rho_hat(eps * k2.sqrt());
        sum += rho * rho / k2;
    }
    Ok(sigma2 * sum)
}

/// How the second-order constant is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SecondOrderMethod {
    /// Average of per-realization spectral sums over a dedicated seed stream.
    MonteCarlo { samples: usize },
    /// Exact fourth-moment double sum; quadratic in the mode count, so
    /// restricted to small lattices.
    ExactSum,
}

const SECOND_ORDER_SEED_BASE: u64 = 0x9e37_79b9_7f4a_7c15;
const EXACT_SUM_MAX_N: usize = 16;

type CacheKey = (usize, usize, u64, Mollifier, u8, usize, u8);

fn second_order_cache() -> &'static Mutex<HashMap<CacheKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<CacheKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Second-order constant c_Y = sum_{k != 0} E|W_hat(k)|^2 / |k|^2, where W is
/// the grid realization of |grad X|^2 (the Wick shift drops out for k != 0).
/// Monte-Carlo results are memoized per (lattice, eps, mollifier, mode).
pub fn expected_grad_sq_y(
    lattice: &Lattice,
    eps: f64,
    mollifier: Mollifier,
    mode: ProductMode,
    method: SecondOrderMethod,
) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidEpsilon(eps));
    }
    let (tag, samples) = match method {
        SecondOrderMethod::MonteCarlo { samples } => (0u8, samples),
        SecondOrderMethod::ExactSum => (1u8, 0),
    };
    let mode_tag = match mode {
        ProductMode::Pointwise => 0u8,
        ProductMode::Padded => 1u8,
    };
    let key = (lattice.d(), lattice.n(), eps.to_bits(), mollifier, tag, samples, mode_tag);
    if let Some(&v) = second_order_cache().lock().unwrap().get(&key) {
        return Ok(v);
    }
    let value = match method {
        SecondOrderMethod::MonteCarlo { samples } => {
            second_order_monte_carlo(lattice, eps, mollifier, mode, samples)?.0
        }
        SecondOrderMethod::ExactSum => second_order_exact(lattice, eps, mollifier, mode)?,
    };
    second_order_cache().lock().unwrap().insert(key, value);
    Ok(value)
}

/// Monte-Carlo estimate of c_Y with its standard error.
pub fn second_order_monte_carlo(
    lattice: &Lattice,
    eps: f64,
    mollifier: Mollifier,
    mode: ProductMode,
    samples: usize,
) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(Error::Config("Monte-Carlo sample count must be positive".into()));
    }
    let mut per_sample = Vec::with_capacity(samples);
    let mut k = [0i64; 3];
    for i in 0..samples {
        let noise = NoiseSample::sample(lattice, SECOND_ORDER_SEED_BASE.wrapping_add(i as u64));
        let xi_eps = noise.mollified(eps, mollifier)?;
        let x = solve_x(&xi_eps);
        let g = grad_square(&x, mode)?;
        let w_hat = forward_transform(&g);
        let mut acc = 0.0;
        for (j, c) in w_hat.coeffs().iter().enumerate() {
            if j == 0 || lattice.is_nyquist(j) {
                continue;
            }
            lattice.freq_vec(j, &mut k);
            let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            acc += c.norm_sqr() / k2;
        }
        per_sample.push(acc);
    }
    Ok(crate::stats::mean_and_se(&per_sample))
}

/// Exact c_Y by Wick pairing: E|W_hat(k)|^2 = 2 sigma^4 sum over mode pairs
/// k1 + k2 = k (mod N for pointwise products, exactly for padded ones) of
/// |rho_hat(eps|k1|) rho_hat(eps|k2|)|^2 (k1 . k2)^2 / (|k1|^4 |k2|^4).
fn second_order_exact(
    lattice: &Lattice,
    eps: f64,
    mollifier: Mollifier,
    mode: ProductMode,
) -> Result<f64> {
    let n = lattice.n();
    if n > EXACT_SUM_MAX_N {
        return Err(Error::ExactSumTooLarge { n, max: EXACT_SUM_MAX_N });
    }
    let sigma2 = noise_sigma_sq(lattice.d());
    // active modes of grad X: nonzero, non-Nyquist
    let mut modes: Vec<([i64; 3], f64, f64)> = Vec::new();
    let mut k = [0i64; 3];
    for j in 1..lattice.len() {
        if lattice.is_nyquist(j) {
            continue;
        }
        lattice.freq_vec(j, &mut k);
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 == 0.0 {
            continue;
        }
        let rho = mollifier.rho_hat(eps * k2.sqrt());
        modes.push((k, rho * rho, k2));
    }
    let half = n as i64 / 2;
    let wrap = |c: i64| -> Option<i64> {
        let mut w = c;
        while w >= half {
            w -= n as i64;
        }
        while w < -half {
            w += n as i64;
        }
        if w == -half {
            None // Nyquist row, never populated
        } else {
            Some(w)
        }
    };
    let mut c_y = 0.0;
    for j in 1..lattice.len() {
        if lattice.is_nyquist(j) {
            continue;
        }
        lattice.freq_vec(j, &mut k);
        let kk2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if kk2 == 0.0 {
            continue;
        }
        let mut e_w2 = 0.0;
        for (k1, rho1, k1n) in &modes {
            let mut k2v = [0i64; 3];
            let mut ok = true;
            let mut wrapped = false;
            for a in 0..3 {
                let raw = k[a] - k1[a];
                match wrap(raw) {
                    Some(w) => {
                        if w != raw {
                            wrapped = true;
                        }
                        k2v[a] = w;
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok || (wrapped && mode == ProductMode::Padded) {
                continue;
            }
            let k2n = (k2v[0] * k2v[0] + k2v[1] * k2v[1] + k2v[2] * k2v[2]) as f64;
            if k2n == 0.0 {
                continue;
            }
            let rho2 = {
                let r = mollifier.rho_hat(eps * k2n.sqrt());
                r * r
            };
            let dot = (k1[0] * k2v[0] + k1[1] * k2v[1] + k1[2] * k2v[2]) as f64;
            e_w2 += rho1 * rho2 * dot * dot / (k1n * k1n * k2n * k2n);
        }
        c_y += 2.0 * sigma2 * sigma2 * e_w2 / kk2;
    }
    Ok(c_y)
}

/// Renormalization constants for one (eps, mollifier) level.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct RenormConstants {
    pub eps: f64,
    pub mollifier: Mollifier,
    pub c_x: f64,
    /// Present in 3D only.
    pub c_y: Option<f64>,
}

impl RenormConstants {
    /// First-order constant alone; enough in 2D.
    pub fn first_order(lattice: &Lattice, eps: f64, mollifier: Mollifier) -> Result<Self> {
        Ok(RenormConstants {
            eps,
            mollifier,
            c_x: expected_grad_sq_x(lattice, eps, mollifier)?,
            c_y: None,
        })
    }

    /// Both constants; required in 3D.
    pub fn with_second_order(
        lattice: &Lattice,
        eps: f64,
        mollifier: Mollifier,
        mode: ProductMode,
        method: SecondOrderMethod,
    ) -> Result<Self> {
        Ok(RenormConstants {
            eps,
            mollifier,
            c_x: expected_grad_sq_x(lattice, eps, mollifier)?,
            c_y: Some(expected_grad_sq_y(lattice, eps, mollifier, mode, method)?),
        })
    }

    /// Total subtraction c_X (+ c_Y when present).
    pub fn total(&self) -> f64 {
        self.c_x + self.c_y.unwrap_or(0.0)
    }

    /// Guards against pairing constants with a field built at another eps.
    pub fn check_eps(&self, field_eps: f64) -> Result<()> {
        if (self.eps - field_eps).abs() > 1e-15 * self.eps.abs().max(field_eps.abs()) {
            return Err(Error::ConstantsMismatch { field_eps, consts_eps: self.eps });
        }
        Ok(())
    }
}

fn grad_square(field: &SpectralField, mode: ProductMode) -> Result<GridField> {
    let grads = gradient(field);
    let mut acc = GridField::zeros(field.lattice());
    for g in &grads {
        let grid = inverse_transform(g)?;
        let sq = mode.multiply(&grid, &grid)?;
        acc = acc.zip_with(&sq, |a, b| a + b)?;
    }
    Ok(acc)
}

/// Wick square |grad field|^2 - c on the grid.
pub fn wick_gradient_square(field: &SpectralField, c: f64, mode: ProductMode) -> Result<GridField> {
    Ok(grad_square(field, mode)?.shifted(-c))
}

/// Pointwise grad a . grad b. Its expectation vanishes when a and b sit in
/// chaoses of different parity, so no subtraction is applied.
pub fn gradient_dot(a: &SpectralField, b: &SpectralField, mode: ProductMode) -> Result<GridField> {
    let ga = gradient(a);
    let gb = gradient(b);
    let mut acc = GridField::zeros(a.lattice());
    for (pa, pb) in ga.iter().zip(&gb) {
        let term = mode.multiply(&inverse_transform(pa)?, &inverse_transform(pb)?)?;
        acc = acc.zip_with(&term, |x, y| x + y)?;
    }
    Ok(acc)
}

/// The renormalized stack of fields derived from one noise realization:
/// everything the bilinear form needs beyond the raw coefficients.
#[derive(Clone, Debug)]
pub struct EnhancedNoise {
    pub seed: u64,
    pub constants: RenormConstants,
    pub mode: ProductMode,
    /// Mollified noise.
    pub xi_eps: SpectralField,
    /// Delta X = xi_eps - mean, zero mean.
    pub x: SpectralField,
    /// Wick square |grad X|^2 - c_X.
    pub w_x: GridField,
    /// 3D only: Y = -Delta^{-1}(W_X - mean), zero mean.
    pub y: Option<SpectralField>,
    /// 3D only: |grad Y|^2 - c_Y.
    pub w_y: Option<GridField>,
    /// 3D only: grad X . grad Y.
    pub cross: Option<GridField>,
}

/// Builds the enhanced data. In 3D the constants must carry c_Y.
pub fn enhance(
    noise: &NoiseSample,
    constants: &RenormConstants,
    mode: ProductMode,
) -> Result<EnhancedNoise> {
    let lattice = noise.lattice().clone();
    let xi_eps = noise.mollified(constants.eps, constants.mollifier)?;
    let x = solve_x(&xi_eps);
    let w_x = wick_gradient_square(&x, constants.c_x, mode)?;
    let (y, w_y, cross) = if lattice.d() == 2 {
        (None, None, None)
    } else {
        let c_y = constants.c_y.ok_or(Error::MissingComponent("c_y"))?;
        let y = solve_y(&forward_transform(&w_x)).scaled(-1.0);
        let w_y = wick_gradient_square(&y, c_y, mode)?;
        let cross = gradient_dot(&x, &y, mode)?;
        (Some(y), Some(w_y), Some(cross))
    };
    Ok(EnhancedNoise {
        seed: noise.seed(),
        constants: *constants,
        mode,
        xi_eps,
        x,
        w_x,
        y,
        w_y,
        cross,
    })
}

impl EnhancedNoise {
    pub fn lattice(&self) -> &Lattice {
        self.xi_eps.lattice()
    }

    /// Transform exponent: X in 2D, X + Y in 3D.
    pub fn transform_field(&self) -> Result<SpectralField> {
        match &self.y {
            None => Ok(self.x.clone()),
            Some(y) => self.x.add(y),
        }
    }
}

/// Distance between two enhancement levels: the max over components of the
/// Hoelder-scale norm native to each, C^{-1-kappa} / C^{-2 kappa} for
/// (xi, W_X) in 2D, and C^{-3/2-kappa} / C^{-1-2kappa} / C^{-4kappa} /
/// C^{-1/2-3kappa} for (xi, W_X, W_Y, grad X . grad Y) in 3D.
pub fn enhanced_distance(a: &EnhancedNoise, b: &EnhancedNoise, kappa: f64) -> Result<f64> {
    if a.lattice() != b.lattice() {
        return Err(Error::LatticeMismatch);
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidExponent(kappa));
    }
    let inf = f64::INFINITY;
    let holder = |f: &SpectralField, alpha: f64| crate::besov::besov_norm(f, alpha, inf, inf);
    let d = a.lattice().d();
    let xi_diff = a.xi_eps.sub(&b.xi_eps)?;
    let wx_diff = forward_transform(&a.w_x.zip_with(&b.w_x, |p, q| p - q)?);
    if d == 2 {
        Ok(holder(&xi_diff, -1.0 - kappa)?.max(holder(&wx_diff, -2.0 * kappa)?))
    } else {
        let wy_diff = forward_transform(
            &a.w_y
                .as_ref()
                .ok_or(Error::MissingComponent("w_y"))?
                .zip_with(b.w_y.as_ref().ok_or(Error::MissingComponent("w_y"))?, |p, q| p - q)?,
        );
        let cr_diff = forward_transform(
            &a.cross
                .as_ref()
                .ok_or(Error::MissingComponent("cross"))?
                .zip_with(b.cross.as_ref().ok_or(Error::MissingComponent("cross"))?, |p, q| {
                    p - q
                })?,
        );
        Ok(holder(&xi_diff, -1.5 - kappa)?
            .max(holder(&wx_diff, -1.0 - 2.0 * kappa)?)
            .max(holder(&wy_diff, -4.0 * kappa)?)
            .max(holder(&cr_diff, -0.5 - 3.0 * kappa)?))
    }
}
