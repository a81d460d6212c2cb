//! Competing models for the divergence of c_X(eps).

use crate::error::{Error, Result};
use crate::stats::linear_fit;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DivergenceModel {
    /// c = a + b log(1/eps); the 2D rate.
    Log,
    /// c = a + b / eps; the 3D rate.
    Inverse,
}

/// Least-squares (a, b, r^2) for `points` of (eps, c) under `model`.
pub fn fit_divergence(points: &[(f64, f64)], model: DivergenceModel) -> Result<(f64, f64, f64)> {
    if points.len() < 4 {
        return Err(Error::TooFewPoints { need: 4, got: points.len() });
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(eps, c) in points {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidEpsilon(eps));
        }
        xs.push(match model {
            DivergenceModel::Log => eps.recip().ln(),
            DivergenceModel::Inverse => eps.recip(),
        });
        ys.push(c);
    }
    linear_fit(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_log_data_is_recovered() {
        let points: Vec<(f64, f64)> =
            (1..=6).map(|j| { let e = 0.5f64.powi(j); (e, 3.0 + 5.0 * e.recip().ln()) }).collect();
        let (a, b, r2) = fit_divergence(&points, DivergenceModel::Log).unwrap();
        assert_relative_eq!(a, 3.0, max_relative = 1e-12);
        assert_relative_eq!(b, 5.0, max_relative = 1e-12);
        assert_relative_eq!(r2, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn exact_inverse_data_is_recovered() {
        let points: Vec<(f64, f64)> =
            (1..=6).map(|j| { let e = 0.5f64.powi(j); (e, -1.0 + 2.0 / e) }).collect();
        let (a, b, r2) = fit_divergence(&points, DivergenceModel::Inverse).unwrap();
        assert_relative_eq!(a, -1.0, max_relative = 1e-12);
        assert_relative_eq!(b, 2.0, max_relative = 1e-12);
        assert_relative_eq!(r2, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn fewer_than_four_points_is_an_error() {
        let points = [(0.5, 1.0), (0.25, 2.0), (0.125, 3.0)];
        assert!(matches!(
            fit_divergence(&points, DivergenceModel::Log),
            Err(Error::TooFewPoints { need: 4, got: 3 })
        ));
    }

    #[test]
    fn the_wrong_model_scores_a_lower_r_squared() {
        let points: Vec<(f64, f64)> =
            (1..=6).map(|j| { let e = 0.5f64.powi(j); (e, 3.0 + 5.0 / e) }).collect();
        let (_, _, r2_right) = fit_divergence(&points, DivergenceModel::Inverse).unwrap();
        let (_, _, r2_wrong) = fit_divergence(&points, DivergenceModel::Log).unwrap();
        assert!(r2_right > r2_wrong + 0.05);
    }
}
