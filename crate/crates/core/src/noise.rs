//! Spatial white noise on the torus and its mollifications.
//!
//! Noise coefficients carry variance sigma^2 = (2pi)^{-d} per mode, which
//! makes the pairing isometric: E<xi, phi>^2 = ||phi||_{L^2}^2 for real
//! band-limited phi. Coefficients are drawn on a canonical half-lattice in
//! flat index order and mirrored by conjugation, so a seed fixes the
//! realization exactly; Nyquist rows are never populated.

use crate::error::{Error, Result};
use crate::grid::{inverse_laplacian_zero_mean, Lattice, SpectralField, TWO_PI};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Per-mode coefficient variance of white noise, (2pi)^{-d}.
pub fn noise_sigma_sq(d: usize) -> f64 {
    TWO_PI.powi(-(d as i32))
}

/// Smoothing kernel given by its radial Fourier profile rho_hat.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mollifier {
    /// rho_hat(z) = exp(-z^2 / 2).
    Gaussian,
    /// rho_hat(z) = 1 for z <= 1, else 0.
    SharpCutoff,
}

impl Mollifier {
    pub fn rho_hat(self, z: f64) -> f64 {
        match self {
            Mollifier::Gaussian => (-0.5 * z * z).exp(),
            Mollifier::SharpCutoff => {
                if z <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// True if k's first nonzero component is positive: picks one member of
/// each conjugate pair {k, -k}.
fn canonical_half(k: &[i64; 3]) -> bool {
    for &c in k {
        if c != 0 {
            return c > 0;
        }
    }
    false
}

/// One realization of white noise, stored as spectral coefficients.
#[derive(Clone, Debug)]
pub struct NoiseSample {
    seed: u64,
    xi: SpectralField,
}

impl NoiseSample {
    /// Draws a realization. The generator is seeded only from `seed`, and
    /// modes are visited in a fixed order, so this is fully reproducible.
    pub fn sample(lattice: &Lattice, seed: u64) -> NoiseSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = noise_sigma_sq(lattice.d()).sqrt();
        let mut xi = SpectralField::zeros(lattice);
        let half = sigma / 2f64.sqrt();
        let mut k = [0i64; 3];
        for j in 0..lattice.len() {
            if lattice.is_nyquist(j) {
                continue;
            }
            lattice.freq_vec(j, &mut k);
            if j == 0 {
                let g: f64 = rng.sample(StandardNormal);
                xi.coeffs_mut()[0] = Complex64::new(sigma * g, 0.0);
            } else if canonical_half(&k) {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let c = Complex64::new(half * re, half * im);
                xi.coeffs_mut()[j] = c;
                xi.coeffs_mut()[lattice.mirror(j)] = c.conj();
            }
        }
        xi.set_hermitian(true);
        NoiseSample { seed, xi }
    }

    /// The deterministic zero realization, for no-noise references.
    pub fn zero(lattice: &Lattice) -> NoiseSample {
        NoiseSample { seed: 0, xi: SpectralField::zeros(lattice) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn xi(&self) -> &SpectralField {
        &self.xi
    }

    pub fn lattice(&self) -> &Lattice {
        self.xi.lattice()
    }

    /// The same realization carried onto a finer lattice: coefficients are
    /// copied and new high modes stay zero, so refining the grid keeps the
    /// underlying rough field fixed.
    pub fn embed(&self, fine: &Lattice) -> Result<NoiseSample> {
        Ok(NoiseSample { seed: self.seed, xi: self.xi.embed(fine)? })
    }

    pub fn mollified(&self, eps: f64, mollifier: Mollifier) -> Result<SpectralField> {
        mollify(&self.xi, eps, mollifier)
    }
}

/// Applies the multiplier rho_hat(eps |k|).
pub fn mollify(xi: &SpectralField, eps: f64, mollifier: Mollifier) -> Result<SpectralField> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidEpsilon(eps));
    }
    Ok(crate::grid::apply_symmetric_multiplier(xi, |k| {
        let norm = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
        Complex64::new(mollifier.rho_hat(eps * norm), 0.0)
    }))
}

/// Zero-mean solution of Delta X = xi_eps - mean(xi_eps).
pub fn solve_x(xi_eps: &SpectralField) -> SpectralField {
    inverse_laplacian_zero_mean(xi_eps)
}

/// Zero-mean solution of Delta Y = w - mean(w).
pub fn solve_y(w: &SpectralField) -> SpectralField {
    inverse_laplacian_zero_mean(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{forward_transform, inverse_transform, laplacian, GridField};
    use crate::stats::mean_and_se;
    use approx::assert_relative_eq;

    #[test]
    fn sampling_is_deterministic_and_seed_sensitive() {
        let lat = Lattice::new(2, 16).unwrap();
        let a = NoiseSample::sample(&lat, 7);
        let b = NoiseSample::sample(&lat, 7);
        let c = NoiseSample::sample(&lat, 8);
        assert_eq!(a.xi().coeffs(), b.xi().coeffs());
        assert_ne!(a.xi().coeffs(), c.xi().coeffs());
    }

    #[test]
    fn coefficients_are_exactly_hermitian_and_nyquist_free() {
        let lat = Lattice::new(3, 8).unwrap();
        let s = NoiseSample::sample(&lat, 3);
        assert!(s.xi().measures_hermitian(0.0));
        for j in 0..lat.len() {
            if lat.is_nyquist(j) {
                assert_eq!(s.xi().coeffs()[j], Complex64::new(0.0, 0.0));
            }
        }
        assert!(inverse_transform(s.xi()).is_ok());
    }

    #[test]
    fn mode_variance_matches_sigma() {
        let lat = Lattice::new(2, 8).unwrap();
        let sigma2 = noise_sigma_sq(2);
        let mut sq_k = Vec::new();
        let mut sq_0 = Vec::new();
        for seed in 0..600u64 {
            let s = NoiseSample::sample(&lat, seed);
            sq_k.push(s.xi().coeff_at(&[2, -1]).norm_sqr());
            sq_0.push(s.xi().coeff_at(&[0, 0]).norm_sqr());
        }
        let (m, se) = mean_and_se(&sq_k);
        assert!((m - sigma2).abs() < 3.0 * se, "mode variance {m} vs {sigma2}");
        let (m0, se0) = mean_and_se(&sq_0);
        assert!((m0 - sigma2).abs() < 3.0 * se0, "mean-mode variance {m0} vs {sigma2}");
    }

    #[test]
    fn pairing_is_an_isometry_in_expectation() {
        // E<xi, cos x0>^2 = ||cos x0||^2 = 2 pi^2 on the 2-torus, and
        // pairings against orthogonal test functions decorrelate
        let lat = Lattice::new(2, 16).unwrap();
        let phi = GridField::from_fn(&lat, |x| x[0].cos());
        let psi = GridField::from_fn(&lat, |x| (2.0 * x[1]).sin());
        let mut sq = Vec::new();
        let mut cross = Vec::new();
        for seed in 0..600u64 {
            let xi = inverse_transform(NoiseSample::sample(&lat, seed).xi()).unwrap();
            let a = xi.inner(&phi).unwrap();
            let b = xi.inner(&psi).unwrap();
            sq.push(a * a);
            cross.push(a * b);
        }
        let (m, se) = mean_and_se(&sq);
        let target = phi.inner(&phi).unwrap();
        assert_relative_eq!(target, 2.0 * std::f64::consts::PI.powi(2), max_relative = 1e-12);
        assert!((m - target).abs() < 3.0 * se, "pairing second moment {m} vs {target}");
        let (mc, sec) = mean_and_se(&cross);
        assert!(mc.abs() < 3.0 * sec, "orthogonal pairings correlate: {mc}");
    }

    #[test]
    fn pairing_is_gaussian_to_fourth_order() {
        let lat = Lattice::new(2, 8).unwrap();
        let phi = GridField::from_fn(&lat, |x| x[0].cos() + 0.5 * (2.0 * x[1]).cos());
        let var_target = phi.inner(&phi).unwrap();
        let mut fourth = Vec::new();
        for seed in 0..600u64 {
            let xi = inverse_transform(NoiseSample::sample(&lat, seed).xi()).unwrap();
            let a = xi.inner(&phi).unwrap();
            fourth.push(a.powi(4));
        }
        let (m4, se4) = mean_and_se(&fourth);
        let target = 3.0 * var_target * var_target;
        assert!((m4 - target).abs() < 3.0 * se4, "fourth moment {m4} vs {target}");
    }

    #[test]
    fn mollifier_profiles() {
        assert_eq!(Mollifier::Gaussian.rho_hat(0.0), 1.0);
        assert_eq!(Mollifier::SharpCutoff.rho_hat(0.0), 1.0);
        assert_eq!(Mollifier::SharpCutoff.rho_hat(1.0), 1.0);
        assert_eq!(Mollifier::SharpCutoff.rho_hat(1.0001), 0.0);
        assert_relative_eq!(Mollifier::Gaussian.rho_hat(2.0), (-2.0f64).exp());
    }

    #[test]
    fn sharp_mollifier_truncates_modes() {
        let lat = Lattice::new(2, 16).unwrap();
        let s = NoiseSample::sample(&lat, 11);
        let eps = 0.5;
        let xi_eps = s.mollified(eps, Mollifier::SharpCutoff).unwrap();
        let mut k = [0i64; 3];
        for (j, c) in xi_eps.coeffs().iter().enumerate() {
            lat.freq_vec(j, &mut k);
            let norm = ((k[0] * k[0] + k[1] * k[1]) as f64).sqrt();
            if eps * norm > 1.0 {
                assert_eq!(*c, Complex64::new(0.0, 0.0));
            } else if !lat.is_nyquist(j) {
                assert_eq!(*c, s.xi().coeffs()[j]);
            }
        }
        assert!(mollify(s.xi(), 0.0, Mollifier::Gaussian).is_err());
        assert!(mollify(s.xi(), -1.0, Mollifier::Gaussian).is_err());
    }

    #[test]
    fn solve_x_inverts_laplacian_with_mean_removed() {
        let lat = Lattice::new(2, 32).unwrap();
        let s = NoiseSample::sample(&lat, 5);
        let xi_eps = s.mollified(0.25, Mollifier::Gaussian).unwrap();
        let x = solve_x(&xi_eps);
        assert_eq!(x.mean(), 0.0);
        let lap = laplacian(&x);
        let mut expect = xi_eps.clone();
        expect.coeffs_mut()[0] = Complex64::new(0.0, 0.0);
        for (a, b) in lap.coeffs().iter().zip(expect.coeffs()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn solve_y_on_pure_cosine() {
        // Delta Y = cos(x2)  =>  Y = -cos(x2)
        let lat = Lattice::new(3, 8).unwrap();
        let w = forward_transform(&GridField::from_fn(&lat, |x| x[2].cos()));
        let y = inverse_transform(&solve_y(&w)).unwrap();
        let expect = GridField::from_fn(&lat, |x| -x[2].cos());
        for (a, b) in y.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn embedding_preserves_the_realization() {
        let coarse = Lattice::new(2, 16).unwrap();
        let fine = Lattice::new(2, 32).unwrap();
        let s = NoiseSample::sample(&coarse, 21);
        let e = s.embed(&fine).unwrap();
        assert_eq!(e.seed(), s.seed());
        // shared modes agree, new modes vanish
        let mut k = [0i64; 3];
        for j in 0..fine.len() {
            fine.freq_vec(j, &mut k);
            let c = e.xi().coeffs()[j];
            let inside = k[0].abs() < 8 && k[1].abs() < 8;
            if inside {
                assert_eq!(c, s.xi().coeff_at(&[k[0], k[1]]));
            } else {
                assert_eq!(c, Complex64::new(0.0, 0.0));
            }
        }
        // grid realizations agree at shared points
        let gc = inverse_transform(s.xi()).unwrap();
        let gf = inverse_transform(e.xi()).unwrap();
        for i0 in 0..16 {
            for i1 in 0..16 {
                let a = gc.values()[i0 * 16 + i1];
                let b = gf.values()[(2 * i0) * 32 + 2 * i1];
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
