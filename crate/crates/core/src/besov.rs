//! Littlewood-Paley blocks and discrete Besov norms.
//!
//! Block 0 is the k = 0 mode; block n >= 1 keeps the Euclidean annulus
//! 2^{n-1} <= |k| < 2^n. Blocks run up to n_max = log2(N/2), so corner modes
//! with |k| >= N/2 fall outside every block and are dropped.

use crate::error::{Error, Result};
use crate::grid::{inverse_transform, Lattice, SpectralField};
use crate::stats::linear_fit;

/// Number of blocks, n_max + 1.
pub fn block_count(lattice: &Lattice) -> usize {
    let mut n_max = 0usize;
    while (1usize << (n_max + 1)) <= lattice.n() / 2 {
        n_max += 1;
    }
    n_max + 1
}

/// Projects onto Littlewood-Paley block n.
pub fn block(field: &SpectralField, n: usize) -> Result<SpectralField> {
    let lattice = field.lattice();
    let max = block_count(lattice) - 1;
    if n > max {
        return Err(Error::BlockOutOfRange { n, max });
    }
    let (lo2, hi2) = if n == 0 {
        (0u64, 1u64)
    } else {
        let lo = 1u64 << (n - 1);
        (lo * lo, (2 * lo) * (2 * lo))
    };
    let mut out = SpectralField::zeros(lattice);
    let mut k = [0i64; 3];
    for (j, c) in field.coeffs().iter().enumerate() {
        if lattice.is_nyquist(j) {
            continue;
        }
        lattice.freq_vec(j, &mut k);
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as u64;
        if k2 >= lo2 && k2 < hi2 {
            out.coeffs_mut()[j] = *c;
        }
    }
    out.set_hermitian(field.is_hermitian());
    Ok(out)
}

/// L^q norms of every block; q = infinity gives grid sup norms.
pub fn block_norms(field: &SpectralField, q: f64) -> Result<Vec<f64>> {
    (0..block_count(field.lattice()))
        .map(|n| block_lq_norm(field, n, q))
        .collect()
}

pub fn block_lq_norm(field: &SpectralField, n: usize, q: f64) -> Result<f64> {
    let piece = block(field, n)?;
    if q == 2.0 {
        return Ok(piece.l2_norm());
    }
    if !q.is_infinite() && !(q >= 1.0) {
        return Err(Error::InvalidExponent(q));
    }
    inverse_transform(&piece)?.lp_norm(q)
}

/// Besov norm B^alpha_{p,q}: (sum_n (2^{alpha n} ||Delta_n u||_{L^q})^p)^{1/p},
/// with p = infinity read as the sup over n.
pub fn besov_norm(field: &SpectralField, alpha: f64, p: f64, q: f64) -> Result<f64> {
    if !p.is_infinite() && !(p >= 1.0) {
        return Err(Error::InvalidExponent(p));
    }
    let norms = block_norms(field, q)?;
    let weighted = norms
        .iter()
        .enumerate()
        .map(|(n, v)| 2f64.powf(alpha * n as f64) * v);
    if p.is_infinite() {
        Ok(weighted.fold(0.0, f64::max))
    } else {
        Ok(weighted.map(|w| w.powf(p)).sum::<f64>().powf(1.0 / p))
    }
}

/// Least-squares readout of a field family's regularity.
#[derive(Clone, Debug)]
pub struct RegularityFit {
    /// Estimated exponent, the negated slope of log2 mean block norm vs n.
    pub alpha_hat: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// Block indices that entered the fit.
    pub blocks_used: Vec<usize>,
}

/// Fits log2 of the sample-mean block L^p norm against the block index over
/// n in [n_lo, n_hi]. Blocks whose mean norm vanishes are dropped; fewer than
/// three usable blocks is an error.
pub fn regularity_exponent(
    samples: &[SpectralField],
    p: f64,
    n_lo: usize,
    n_hi: usize,
) -> Result<RegularityFit> {
    if samples.is_empty() {
        return Err(Error::NoData("regularity fit needs at least one field".into()));
    }
    let lattice = samples[0].lattice().clone();
    let max = block_count(&lattice) - 1;
    if n_hi > max || n_lo > n_hi {
        return Err(Error::BlockOutOfRange { n: n_hi, max });
    }
    let mut means = Vec::new();
    for n in n_lo..=n_hi {
        let mut acc = 0.0;
        for s in samples {
            if *s.lattice() != lattice {
                return Err(Error::LatticeMismatch);
            }
            acc += block_lq_norm(s, n, p)?;
        }
        means.push(acc / samples.len() as f64);
    }
    regularity_from_means(n_lo, &means)
}

/// Fits log2 of pre-averaged block norms, `means[i]` belonging to block
/// n_lo + i. Entry point for callers that accumulate norms incrementally.
pub fn regularity_from_means(n_lo: usize, means: &[f64]) -> Result<RegularityFit> {
    // blocks carrying only roundoff dust would poison the log fit
    let floor = means.iter().fold(0.0f64, |m, &v| m.max(v)) * 1e-12;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut blocks_used = Vec::new();
    for (i, &mean) in means.iter().enumerate() {
        if mean > floor {
            xs.push((n_lo + i) as f64);
            ys.push(mean.log2());
            blocks_used.push(n_lo + i);
        }
    }
    if xs.len() < 3 {
        return Err(Error::TooFewBlocks { usable: xs.len() });
    }
    let (_, slope, r_squared) = linear_fit(&xs, &ys)?;
    Ok(RegularityFit { alpha_hat: -slope, slope, r_squared, blocks_used })
}

/// Modes of the annulus 2^{n-1} <= |k| < 2^n (all of Lambda* minus Nyquist
/// rows for n = 0's complement); used by exact-count oracles and sampling.
pub fn annulus_mode_count(lattice: &Lattice, n: usize) -> usize {
    let (lo2, hi2) = if n == 0 {
        (0u64, 1u64)
    } else {
        let lo = 1u64 << (n - 1);
        (lo * lo, (2 * lo) * (2 * lo))
    };
    let mut count = 0usize;
    let mut k = [0i64; 3];
    for j in 0..lattice.len() {
        if lattice.is_nyquist(j) {
            continue;
        }
        lattice.freq_vec(j, &mut k);
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as u64;
        if k2 >= lo2 && k2 < hi2 {
            count += 1;
        }
    }
    count
}
