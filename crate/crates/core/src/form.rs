//! Bilinear forms for the renormalized Anderson operator, on both sides of
//! the exponential ground-state transform.
//!
//! Direct side: a(u1, u2) = <D u1, D u2> + <xi_eps u1, u2> - c_eps <u1, u2>,
//! the form of -Delta + xi_eps - c_eps. The renormalized choice is
//! c_eps = -(c_X + c_Y), i.e. the constants are *added* to the operator.
//!
//! Transformed side: substituting u_i = e^T v_i with T = X (2D) or X + Y (3D)
//! turns the direct form into
//!   a(u1, u2) = <w D v1, D v2> - <P v1, v2> + s <w v1, v2>,
//! where w = e^{2T}, P = W_X w in 2D and (W_Y + 2 grad X . grad Y) w in 3D,
//! and s = mean(xi_eps) in 2D, mean(xi_eps) - mean(W_X) in 3D. All divergent
//! quantities cancel inside the Wick squares, so the transformed data stays
//! bounded as eps -> 0.

use crate::error::{Error, Result};
use crate::grid::{
    apply_symmetric_multiplier, forward_transform, gradient, inverse_transform, GridField,
    Lattice, ProductMode, SpectralField,
};
use crate::noise::{Mollifier, NoiseSample};
use crate::wick::{EnhancedNoise, RenormConstants};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Transformed-side operator A v = -div(w grad v) - P v + s w v, symmetric
/// against the plain h^d inner product, paired with mass weights w.
#[derive(Clone, Debug)]
pub struct FormOperator {
    mode: ProductMode,
    weight: GridField,
    potential: GridField,
    zero_mode_shift: f64,
    transform: SpectralField,
}

/// Builds the transformed-side operator from enhanced noise data.
pub fn assemble_form(e: &EnhancedNoise) -> Result<FormOperator> {
    let transform = e.transform_field()?;
    let weight = inverse_transform(&transform)?.map(|t| (2.0 * t).exp());
    let (rough, zero_mode_shift) = match (&e.w_y, &e.cross) {
        (None, None) => (e.w_x.clone(), e.xi_eps.mean()),
        (Some(w_y), Some(cross)) => (
            w_y.zip_with(cross, |a, b| a + 2.0 * b)?,
            e.xi_eps.mean() - e.w_x.mean(),
        ),
        _ => return Err(Error::MissingComponent("w_y and cross")),
    };
    let potential = e.mode.multiply(&rough, &weight)?;
    Ok(FormOperator { mode: e.mode, weight, potential, zero_mode_shift, transform })
}

impl FormOperator {
    pub fn lattice(&self) -> &Lattice {
        self.weight.lattice()
    }

    pub fn product_mode(&self) -> ProductMode {
        self.mode
    }

    /// e^{2T} at the grid points; also the diagonal of the mass operator B.
    pub fn weight(&self) -> &GridField {
        &self.weight
    }

    pub fn potential(&self) -> &GridField {
        &self.potential
    }

    pub fn zero_mode_shift(&self) -> f64 {
        self.zero_mode_shift
    }

    /// The exponent T as a spectral field.
    pub fn transform(&self) -> &SpectralField {
        &self.transform
    }

    /// Mass weights of B: (B v)_j = w_j v_j under the h^d pairing.
    pub fn mass_weights(&self) -> &GridField {
        &self.weight
    }

    /// Maps a transformed eigenfunction back: u = e^T v pointwise.
    pub fn to_exponential(&self, v: &GridField) -> Result<GridField> {
        let t = inverse_transform(&self.transform)?;
        v.zip_with(&t, |vv, tt| vv * tt.exp())
    }

    /// A v = -div(w grad v) - P v + s w v.
    pub fn apply(&self, v: &GridField) -> Result<GridField> {
        let vhat = forward_transform(v);
        let mut div_hat = SpectralField::zeros(self.lattice());
        for (a, g) in gradient(&vhat).iter().enumerate() {
            let flux = self.mode.multiply(&self.weight, &inverse_transform(g)?)?;
            let d = apply_symmetric_multiplier(&forward_transform(&flux), |k| {
                Complex64::new(0.0, k[a] as f64)
            });
            div_hat = div_hat.add(&d)?;
        }
        let div = inverse_transform(&div_hat)?;
        let pot = self.mode.multiply(&self.potential, v)?;
        let wv = self.mode.multiply(&self.weight, v)?;
        let s = self.zero_mode_shift;
        div.zip_with(&pot, |dv, pv| -dv - pv)?
            .zip_with(&wv, |acc, wvv| acc + s * wvv)
    }

    /// a(v1, v2); agrees with <A v1, v2>_h to rounding because the spectral
    /// derivative is exactly antisymmetric under the h^d pairing.
    pub fn form_value(&self, v1: &GridField, v2: &GridField) -> Result<f64> {
        let mut acc = self.dirichlet_pairing(v1, v2)?;
        acc -= self.mode.multiply(&self.potential, v1)?.inner(v2)?;
        acc += self.zero_mode_shift * self.mode.multiply(&self.weight, v1)?.inner(v2)?;
        Ok(acc)
    }

    /// Weighted Dirichlet pairing <w grad v1, grad v2>.
    pub fn dirichlet_pairing(&self, v1: &GridField, v2: &GridField) -> Result<f64> {
        let g1 = gradient(&forward_transform(v1));
        let g2 = gradient(&forward_transform(v2));
        let mut acc = 0.0;
        for (a, b) in g1.iter().zip(&g2) {
            let wa = self.mode.multiply(&self.weight, &inverse_transform(a)?)?;
            acc += wa.inner(&inverse_transform(b)?)?;
        }
        Ok(acc)
    }
}

/// Direct-side operator H u = -Delta u + xi_eps u - c_eps u.
#[derive(Clone, Debug)]
pub struct RegularizedForm {
    mode: ProductMode,
    eps: f64,
    xi_eps: GridField,
    c_eps: f64,
}

impl RegularizedForm {
    /// No subtraction: the bare regularized operator -Delta + xi_eps.
    pub fn bare(
        noise: &NoiseSample,
        eps: f64,
        mollifier: Mollifier,
        mode: ProductMode,
    ) -> Result<Self> {
        Self::with_constant(noise, eps, mollifier, 0.0, mode)
    }

    /// Renormalized subtraction c_eps = -(c_X + c_Y): the operator gains the
    /// divergent constants with a plus sign, which is what keeps the
    /// transformed side bounded.
    pub fn renormalized(
        noise: &NoiseSample,
        eps: f64,
        constants: &RenormConstants,
        mode: ProductMode,
    ) -> Result<Self> {
        constants.check_eps(eps)?;
        if noise.lattice().d() == 3 && constants.c_y.is_none() {
            return Err(Error::MissingComponent("c_y"));
        }
        Self::with_constant(noise, eps, constants.mollifier, -constants.total(), mode)
    }

    /// Explicit subtraction constant, for sweeps over wrong values.
    pub fn with_constant(
        noise: &NoiseSample,
        eps: f64,
        mollifier: Mollifier,
        c_eps: f64,
        mode: ProductMode,
    ) -> Result<Self> {
        let xi_eps = inverse_transform(&noise.mollified(eps, mollifier)?)?;
        Ok(RegularizedForm { mode, eps, xi_eps, c_eps })
    }

    pub fn lattice(&self) -> &Lattice {
        self.xi_eps.lattice()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn c_eps(&self) -> f64 {
        self.c_eps
    }

    pub fn xi_eps(&self) -> &GridField {
        &self.xi_eps
    }

    /// H u = -Delta u + xi_eps u - c_eps u.
    pub fn apply(&self, u: &GridField) -> Result<GridField> {
        let uhat = forward_transform(u);
        let lap = inverse_transform(&crate::grid::laplacian(&uhat))?;
        let xi_u = self.mode.multiply(&self.xi_eps, u)?;
        let c = self.c_eps;
        lap.zip_with(&xi_u, |l, x| -l + x)?
            .zip_with(u, |acc, uu| acc - c * uu)
    }

    /// a(u1, u2) = <D u1, D u2> + <xi_eps u1, u2> - c_eps <u1, u2>.
    pub fn form_value(&self, u1: &GridField, u2: &GridField) -> Result<f64> {
        let g1 = gradient(&forward_transform(u1));
        let g2 = gradient(&forward_transform(u2));
        let mut acc = 0.0;
        for (a, b) in g1.iter().zip(&g2) {
            acc += inverse_transform(a)?.inner(&inverse_transform(b)?)?;
        }
        acc += self.mode.multiply(&self.xi_eps, u1)?.inner(u2)?;
        acc -= self.c_eps * u1.inner(u2)?;
        Ok(acc)
    }
}

const PROBE_SEED_BASE: u64 = 0x51ab_e77e_0000_0000;

/// Band-limited random probe with coefficient envelope max(|k|, 1)^{-s},
/// normalized to unit H^1 norm.
pub fn probe_field(lattice: &Lattice, s: f64, seed: u64) -> Result<GridField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = SpectralField::zeros(lattice);
    let mut k = [0i64; 3];
    for j in 0..lattice.len() {
        if lattice.is_nyquist(j) {
            continue;
        }
        lattice.freq_vec(j, &mut k);
        let kn = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        raw.coeffs_mut()[j] = Complex64::new(re, im) * kn.max(1.0).powf(-s);
    }
    let sym = raw.symmetrized();
    let scale = 1.0 / sym.h1_norm_sq().sqrt();
    inverse_transform(&sym.scaled(scale))
}

/// Smallest constant C' (over a deterministic probe family) making the
/// Gaarding bound a(v, v) >= delta <w grad v, grad v> - C' ||e^T v||^2 hold,
/// clamped to be nonnegative.
pub fn coercivity_probe(
    form: &FormOperator,
    delta: f64,
    probes_per_envelope: usize,
) -> Result<f64> {
    let envelopes = [0.6, 1.0, 2.0];
    let mut worst = 0.0f64;
    for (ei, &s) in envelopes.iter().enumerate() {
        for p in 0..probes_per_envelope {
            let seed = PROBE_SEED_BASE + (ei * probes_per_envelope + p) as u64;
            let v = probe_field(form.lattice(), s, seed)?;
            let dirichlet = form.dirichlet_pairing(&v, &v)?;
            let a_vv = form.form_value(&v, &v)?;
            let u = form.to_exponential(&v)?;
            let denom = u.inner(&u)?;
            worst = worst.max((delta * dirichlet - a_vv) / denom);
        }
    }
    Ok(worst.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TWO_PI;
    use crate::wick::{enhance, SecondOrderMethod};
    use approx::assert_relative_eq;

    fn zero_constants(d: usize, eps: f64) -> RenormConstants {
        RenormConstants {
            eps,
            mollifier: Mollifier::Gaussian,
            c_x: 0.0,
            c_y: if d == 3 { Some(0.0) } else { None },
        }
    }

    #[test]
    fn zero_noise_form_is_the_dirichlet_energy() {
        let lat = Lattice::new(2, 16).unwrap();
        let e = enhance(
            &NoiseSample::zero(&lat),
            &zero_constants(2, 0.5),
            ProductMode::Pointwise,
        )
        .unwrap();
        let form = assemble_form(&e).unwrap();
        let v = GridField::from_fn(&lat, |x| x[0].cos());
        // a(cos x0, cos x0) = ||grad cos||^2 = 2 pi^2
        let val = form.form_value(&v, &v).unwrap();
        assert_relative_eq!(val, 2.0 * std::f64::consts::PI.powi(2), max_relative = 1e-12);
        assert_eq!(form.zero_mode_shift(), 0.0);
        assert!(form.potential().lp_norm(f64::INFINITY).unwrap() < 1e-14);
        // and the probe constant vanishes for delta = 1/2
        let c = coercivity_probe(&form, 0.5, 3).unwrap();
        assert!(c <= 1e-9, "zero-noise probe constant {c}");
    }

    #[test]
    fn form_value_matches_operator_pairing() {
        for d in [2usize, 3] {
            let n = if d == 2 { 32 } else { 16 };
            let lat = Lattice::new(d, n).unwrap();
            let eps = 0.5;
            let consts = if d == 2 {
                RenormConstants::first_order(&lat, eps, Mollifier::Gaussian).unwrap()
            } else {
                RenormConstants::with_second_order(
                    &lat,
                    eps,
                    Mollifier::Gaussian,
                    ProductMode::Pointwise,
                    SecondOrderMethod::ExactSum,
                )
                .unwrap()
            };
            for mode in [ProductMode::Pointwise, ProductMode::Padded] {
                let noise = NoiseSample::sample(&lat, 17);
                let e = enhance(&noise, &consts, mode).unwrap();
                let form = assemble_form(&e).unwrap();
                let v1 = GridField::from_fn(&lat, |x| (2.0 * x[0]).cos() + 0.3 * x[1].sin());
                let v2 = GridField::from_fn(&lat, |x| x[0].sin() - 0.7 * (3.0 * x[1]).cos());
                let via_form = form.form_value(&v1, &v2).unwrap();
                let via_apply = form.apply(&v1).unwrap().inner(&v2).unwrap();
                let scale = via_form.abs().max(1.0);
                assert!(
                    (via_form - via_apply).abs() < 1e-11 * scale,
                    "d={d} {mode:?}: {via_form} vs {via_apply}"
                );
                // symmetry
                let swapped = form.form_value(&v2, &v1).unwrap();
                assert!((via_form - swapped).abs() < 1e-11 * scale);
            }
        }
    }

    #[test]
    fn direct_form_matches_operator_pairing() {
        let lat = Lattice::new(2, 32).unwrap();
        let noise = NoiseSample::sample(&lat, 4);
        let consts = RenormConstants::first_order(&lat, 0.25, Mollifier::Gaussian).unwrap();
        let h = RegularizedForm::renormalized(&noise, 0.25, &consts, ProductMode::Pointwise)
            .unwrap();
        assert_relative_eq!(h.c_eps(), -consts.c_x, max_relative = 1e-15);
        let u1 = GridField::from_fn(&lat, |x| (2.0 * x[1]).cos() + 0.1);
        let u2 = GridField::from_fn(&lat, |x| x[0].sin() * x[1].cos());
        let via_form = h.form_value(&u1, &u2).unwrap();
        let via_apply = h.apply(&u1).unwrap().inner(&u2).unwrap();
        assert!((via_form - via_apply).abs() < 1e-11 * via_form.abs().max(1.0));
        // pure Laplacian piece: H cos x0 = (1 - c_eps) cos x0 + xi_eps cos x0
        let u = GridField::from_fn(&lat, |x| x[0].cos());
        let hu = h.apply(&u).unwrap();
        let expect = u
            .zip_with(h.xi_eps(), |uu, xi| uu + xi * uu)
            .unwrap()
            .zip_with(&u, |acc, uu| acc - h.c_eps() * uu)
            .unwrap();
        for (a, b) in hu.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn renormalized_rejects_mismatched_eps() {
        let lat = Lattice::new(2, 16).unwrap();
        let noise = NoiseSample::sample(&lat, 1);
        let consts = RenormConstants::first_order(&lat, 0.5, Mollifier::Gaussian).unwrap();
        assert!(matches!(
            RegularizedForm::renormalized(&noise, 0.25, &consts, ProductMode::Pointwise),
            Err(Error::ConstantsMismatch { .. })
        ));
    }

    /// The arbiter for the sign conventions: with u_i = e^T v_i sampled
    /// pointwise, the direct renormalized form evaluated on (u1, u2) and the
    /// transformed form evaluated on (v1, v2) are the same continuum
    /// quantity, so their discrete gap must vanish under grid refinement.
    fn identity_gap(
        noise_base: &NoiseSample,
        consts: &RenormConstants,
        n: usize,
        c_eps_override: Option<f64>,
    ) -> f64 {
        let lat = Lattice::new(noise_base.lattice().d(), n).unwrap();
        let noise = noise_base.embed(&lat).unwrap();
        let e = enhance(&noise, consts, ProductMode::Pointwise).unwrap();
        let form = assemble_form(&e).unwrap();
        let direct = match c_eps_override {
            None => RegularizedForm::renormalized(&noise, consts.eps, consts, ProductMode::Pointwise)
                .unwrap(),
            Some(c) => RegularizedForm::with_constant(
                &noise,
                consts.eps,
                consts.mollifier,
                c,
                ProductMode::Pointwise,
            )
            .unwrap(),
        };
        let v1 = GridField::from_fn(&lat, |x| 1.0 + 0.5 * x[0].cos());
        let v2 = GridField::from_fn(&lat, |x| {
            0.3 * (2.0 * x[1]).sin() + x[0].sin() + 0.4 * x[2].cos()
        });
        let u1 = form.to_exponential(&v1).unwrap();
        let u2 = form.to_exponential(&v2).unwrap();
        let lhs = direct.form_value(&u1, &u2).unwrap();
        let rhs = form.form_value(&v1, &v2).unwrap();
        (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
    }

    #[test]
    fn transform_identity_two_dimensions() {
        let base = Lattice::new(2, 32).unwrap();
        let noise0 = NoiseSample::sample(&base, 12);
        let eps = 0.15;
        let consts = RenormConstants::first_order(&base, eps, Mollifier::Gaussian).unwrap();
        let gaps: Vec<f64> = [32usize, 64, 128]
            .iter()
            .map(|&n| identity_gap(&noise0, &consts, n, None))
            .collect();
        assert!(
            gaps[0] > gaps[1] && gaps[1] > gaps[2],
            "transform gap not shrinking: {gaps:?}"
        );
        assert!(gaps[0] > 1e-6, "starting gap suspiciously small: {gaps:?}");
        assert!(gaps[2] < 1e-12, "finest-grid gap too large: {gaps:?}");
        // flipping the subtraction sign (the operator -Delta + xi - c_X)
        // breaks the identity by an O(1) amount at every resolution
        let wrong = identity_gap(&noise0, &consts, 128, Some(consts.total()));
        assert!(
            wrong > 1e6 * gaps[2],
            "sign flip not detected: wrong {wrong} vs right {}",
            gaps[2]
        );
    }

    #[test]
    fn transform_identity_three_dimensions() {
        let base = Lattice::new(3, 16).unwrap();
        let noise0 = NoiseSample::sample(&base, 23);
        let eps = 0.35;
        let consts = RenormConstants::with_second_order(
            &base,
            eps,
            Mollifier::Gaussian,
            ProductMode::Pointwise,
            SecondOrderMethod::ExactSum,
        )
        .unwrap();
        let gaps: Vec<f64> = [16usize, 32]
            .iter()
            .map(|&n| identity_gap(&noise0, &consts, n, None))
            .collect();
        assert!(gaps[0] > gaps[1], "transform gap not shrinking: {gaps:?}");
        assert!(gaps[0] > 1e-7, "starting gap suspiciously small: {gaps:?}");
        assert!(gaps[1] < 1e-10, "fine-grid gap too large: {gaps:?}");
        let wrong = identity_gap(&noise0, &consts, 32, Some(consts.total()));
        assert!(wrong > 1e6 * gaps[1], "sign flip not detected: {wrong}");
    }

    #[test]
    fn mass_weights_scale_constants() {
        // <B 1, 1> = integral of e^{2T} = (2pi)^d mean(w)
        let lat = Lattice::new(2, 16).unwrap();
        let consts = RenormConstants::first_order(&lat, 0.5, Mollifier::Gaussian).unwrap();
        let e = enhance(&NoiseSample::sample(&lat, 3), &consts, ProductMode::Pointwise).unwrap();
        let form = assemble_form(&e).unwrap();
        let one = GridField::constant(&lat, 1.0);
        let bw = form.mass_weights().product(&one).unwrap();
        assert_relative_eq!(
            bw.inner(&one).unwrap(),
            TWO_PI.powi(2) * form.weight().mean(),
            max_relative = 1e-12
        );
    }
}
