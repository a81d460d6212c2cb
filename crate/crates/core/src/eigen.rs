//! Lowest eigenpairs of A v = lambda B v for the form operators.
//!
//! The pencil is posed on the band-limited subspace V of fields with no
//! Nyquist-row coefficients: the spectral derivatives annihilate those rows,
//! so on the full grid the pointwise-product terms would hand the pencil a
//! spurious near-null subspace with no Dirichlet penalty. Every block vector
//! is kept inside V by spectral projection.
//!
//! Iteration is a preconditioned block Rayleigh-Ritz scheme (LOBPCG-type)
//! with B-orthonormal bases and full re-orthonormalization each sweep. The
//! weight similarity normalizes the leading symbol to |k|^2, so the plain
//! (1 - Delta)^{-1} multiplier is an effective preconditioner.

use crate::error::{Error, Result};
use crate::form::{FormOperator, RegularizedForm};
use crate::grid::{
    apply_multiplier, forward_transform, inverse_transform, GridField, Lattice,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Symmetric pencil (A, B) with pointwise mass B, seen through grid fields.
pub trait SymmetricOperator {
    fn lattice(&self) -> &Lattice;

    /// A v.
    fn apply(&self, v: &GridField) -> Result<GridField>;

    /// Diagonal of the mass weights; None means the identity.
    fn mass(&self) -> Option<&GridField> {
        None
    }

    /// Approximate inverse of A + B applied to a residual; identity by
    /// default.
    fn precondition(&self, r: &GridField) -> Result<GridField> {
        Ok(r.clone())
    }
}

/// (1 - Delta)^{-1} in spectral space.
pub fn inverse_helmholtz(r: &GridField) -> Result<GridField> {
    let hat = forward_transform(r);
    let out = apply_multiplier(&hat, |k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        Complex64::new(1.0 / (1.0 + k2), 0.0)
    });
    inverse_transform(&out)
}

impl SymmetricOperator for FormOperator {
    fn lattice(&self) -> &Lattice {
        FormOperator::lattice(self)
    }

    fn apply(&self, v: &GridField) -> Result<GridField> {
        FormOperator::apply(self, v)
    }

    fn mass(&self) -> Option<&GridField> {
        Some(self.mass_weights())
    }

    fn precondition(&self, r: &GridField) -> Result<GridField> {
        inverse_helmholtz(r)
    }
}

impl SymmetricOperator for RegularizedForm {
    fn lattice(&self) -> &Lattice {
        RegularizedForm::lattice(self)
    }

    fn apply(&self, v: &GridField) -> Result<GridField> {
        RegularizedForm::apply(self, v)
    }

    fn precondition(&self, r: &GridField) -> Result<GridField> {
        inverse_helmholtz(r)
    }
}

#[derive(Clone, Debug)]
pub struct EigenOptions {
    /// How many of the lowest eigenpairs to resolve.
    pub count: usize,
    /// Relative residual target ||A v - lambda B v|| / (max(1, |lambda|) ||B v||).
    pub tol: f64,
    pub max_iterations: usize,
    /// Extra block vectors beyond `count` to stabilize clustered modes.
    pub extra_block: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            count: 6,
            tol: 1e-7,
            max_iterations: 600,
            extra_block: 4,
            seed: 0xb10c_5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Ascending generalized eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors v, normalized to unit B-weighted L^2 norm.
    pub eigenvectors: Vec<GridField>,
    /// ||A v - lambda B v|| / ||B v|| per pair.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// One block vector with its cached pencil images.
#[derive(Clone)]
struct Triple {
    v: DVector<f64>,
    av: DVector<f64>,
    bv: DVector<f64>,
}

struct Pencil<'a> {
    op: &'a dyn SymmetricOperator,
    lattice: Lattice,
}

impl<'a> Pencil<'a> {
    fn new(op: &'a dyn SymmetricOperator) -> Result<Self> {
        if let Some(w) = op.mass() {
            if w.values().iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Config("mass weights must be strictly positive".into()));
            }
        }
        Ok(Pencil { op, lattice: op.lattice().clone() })
    }

    fn grid(&self, v: &DVector<f64>) -> Result<GridField> {
        GridField::new(self.lattice.clone(), v.iter().cloned().collect())
    }

    /// Orthogonal projection onto V: zeroes Nyquist-row coefficients.
    fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let hat = forward_transform(&self.grid(v)?);
        let cleaned = apply_multiplier(&hat, |_| Complex64::new(1.0, 0.0));
        Ok(DVector::from_vec(inverse_transform(&cleaned)?.values().to_vec()))
    }

    /// P A v for v already in V.
    fn apply_a(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let av = self.op.apply(&self.grid(v)?)?;
        self.project(&DVector::from_vec(av.values().to_vec()))
    }

    /// P B v for v already in V.
    fn apply_b(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self.op.mass() {
            None => Ok(v.clone()),
            Some(w) => {
                let wv: Vec<f64> =
                    v.iter().zip(w.values()).map(|(a, b)| a * b).collect();
                self.project(&DVector::from_vec(wv))
            }
        }
    }

    fn precondition(&self, r: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.op.precondition(&self.grid(r)?)?;
        self.project(&DVector::from_vec(out.values().to_vec()))
    }

    fn triple(&self, v: DVector<f64>) -> Result<Triple> {
        let av = self.apply_a(&v)?;
        let bv = self.apply_b(&v)?;
        Ok(Triple { v, av, bv })
    }
}

fn check_symmetry(pencil: &Pencil, seed: u64) -> Result<()> {
    let n = pencil.lattice.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5711_c4ec);
    for _ in 0..5 {
        let y1 = pencil
            .project(&DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))?;
        let y2 = pencil
            .project(&DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))?;
        let a = pencil.apply_a(&y1)?.dot(&y2);
        let b = y1.dot(&pencil.apply_a(&y2)?);
        let scale = a.abs().max(b.abs()).max(1e-30);
        if (a - b).abs() > 1e-9 * scale {
            return Err(Error::NotSymmetric { discrepancy: (a - b).abs(), scale });
        }
    }
    Ok(())
}

/// Deterministic low-frequency trigonometric block seeds.
fn initial_vectors(lattice: &Lattice, block: usize, seed: u64) -> Vec<DVector<f64>> {
    let n = lattice.len();
    let mut order: Vec<(i64, usize)> = (0..n)
        .filter(|&j| !lattice.is_nyquist(j))
        .map(|j| {
            let mut k = [0i64; 3];
            lattice.freq_vec(j, &mut k);
            (k[0] * k[0] + k[1] * k[1] + k[2] * k[2], j)
        })
        .collect();
    order.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = Vec::with_capacity(block);
    let mut x = [0.0f64; 3];
    'outer: for (_, j) in order {
        let mut k = [0i64; 3];
        lattice.freq_vec(j, &mut k);
        if lattice.mirror(j) < j {
            continue; // one representative per conjugate pair
        }
        let waves: &[bool] = if j == 0 { &[true] } else { &[true, false] };
        for &is_cos in waves {
            let mut vals = DVector::zeros(n);
            for (i, v) in vals.iter_mut().enumerate() {
                lattice.point(i, &mut x);
                let phase =
                    (k[0] as f64) * x[0] + (k[1] as f64) * x[1] + (k[2] as f64) * x[2];
                *v = if is_cos { phase.cos() } else { phase.sin() };
                // deterministic jitter breaks symmetry lock-in; it gets
                // projected back into V before use
                *v += 1e-3 * rng.sample::<f64, _>(StandardNormal);
            }
            cols.push(vals);
            if cols.len() == block {
                break 'outer;
            }
        }
    }
    cols
}

/// Appends a triple with fresh images to the B-orthonormal set: two passes
/// of consistent projection across v, Av, Bv, then B-normalization. Assumes
/// the candidate is already near-orthogonal, so the subtractions are small
/// and the images stay consistent.
fn polish(kept: &mut Vec<Triple>, mut t: Triple) {
    for _ in 0..2 {
        for q in kept.iter() {
            let proj = q.bv.dot(&t.v);
            t.v -= &q.v * proj;
            t.av -= &q.av * proj;
            t.bv -= &q.bv * proj;
        }
    }
    let nrm = t.v.dot(&t.bv).max(0.0).sqrt();
    if nrm > 1e-10 {
        t.v /= nrm;
        t.av /= nrm;
        t.bv /= nrm;
        kept.push(t);
    }
}

/// Extends the B-orthonormal set by raw candidate vectors. Gram-Schmidt runs
/// on the vectors alone with Euclidean-norm cancellation control; pencil
/// images are computed fresh only for survivors, so cached-image rounding
/// can never masquerade as a new direction.
fn b_orthonormalize(
    kept: &mut Vec<Triple>,
    candidates: Vec<DVector<f64>>,
    pencil: &Pencil,
) -> Result<()> {
    'cands: for mut v in candidates {
        let entry = v.norm();
        if !(entry > 1e-300) {
            continue;
        }
        v /= entry;
        let mut size = 1.0f64;
        for _ in 0..4 {
            for q in kept.iter() {
                let proj = q.bv.dot(&v);
                v -= &q.v * proj;
            }
            let next = v.norm();
            let cancelled = next < 0.5 * size;
            size = next;
            if size <= 1e-6 {
                continue 'cands; // below this the direction is rounding debris
            }
            if !cancelled {
                break;
            }
        }
        v /= size;
        polish(kept, pencil.triple(v)?);
    }
    Ok(())
}

/// Cyclic Jacobi eigensolver for the small dense symmetric matrices of the
/// reduced problems, returning ascending eigenpairs. Jacobi keeps every
/// eigenvalue consistently paired with its eigenvector, which the block
/// recombination depends on; a mispaired vector poisons the whole block.
fn jacobi_eigen(mat: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = mat.nrows();
    let mut a = mat.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..60 {
        let mut off = 0.0f64;
        let mut diag = 0.0f64;
        for p in 0..n {
            diag += a[(p, p)] * a[(p, p)];
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off <= (f64::EPSILON * f64::EPSILON) * diag.max(1e-300) {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let scale = a[(p, p)].abs() + a[(q, q)].abs();
                if apq.abs() <= f64::EPSILON * 1e-3 * scale.max(1e-300) {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let evals: Vec<f64> = idx.iter().map(|&i| a[(i, i)]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        vecs.set_column(col, &v.column(i));
    }
    (evals, vecs)
}

fn rayleigh_ritz(triples: &[Triple]) -> (Vec<f64>, DMatrix<f64>) {
    let b = triples.len();
    let mut ga = DMatrix::zeros(b, b);
    let mut gb = DMatrix::zeros(b, b);
    for i in 0..b {
        for j in i..b {
            let a = triples[i].v.dot(&triples[j].av);
            ga[(i, j)] = a;
            ga[(j, i)] = a;
            let m = triples[i].v.dot(&triples[j].bv);
            gb[(i, j)] = m;
            gb[(j, i)] = m;
        }
    }
    // canonical orthogonalization against the measured B-Gram: directions
    // with negligible B-mass are rounding debris, and solving the reduced
    // problem as if the basis were exactly B-orthonormal would let a
    // near-duplicate direction mint a phantom low Ritz value
    let (mu, u) = jacobi_eigen(&gb);
    let mu_max = mu.last().cloned().unwrap_or(0.0).max(1e-300);
    let kept: Vec<usize> = (0..b).filter(|&i| mu[i] > 1e-8 * mu_max).collect();
    let mut w = DMatrix::zeros(b, kept.len());
    for (col, &i) in kept.iter().enumerate() {
        w.set_column(col, &(u.column(i) * mu[i].sqrt().recip()));
    }
    let reduced = w.transpose() * &ga * &w;
    let (evals, y) = jacobi_eigen(&((reduced.clone() + reduced.transpose()) * 0.5));
    (evals, w * y)
}

fn combine_vectors(triples: &[Triple], c: &DMatrix<f64>, take: usize) -> Vec<DVector<f64>> {
    let n = triples[0].v.len();
    (0..take)
        .map(|t| {
            let mut acc = DVector::zeros(n);
            for (i, tr) in triples.iter().enumerate() {
                acc += &tr.v * c[(i, t)];
            }
            acc
        })
        .collect()
}

/// Resolves the lowest `opts.count` eigenpairs of A v = lambda B v.
pub fn lowest_eigenpairs(op: &dyn SymmetricOperator, opts: &EigenOptions) -> Result<Spectrum> {
    if opts.count == 0 {
        return Err(Error::Config("eigenpair count must be positive".into()));
    }
    let pencil = Pencil::new(op)?;
    let block = opts.count + opts.extra_block;
    check_symmetry(&pencil, opts.seed)?;

    let mut x: Vec<Triple> = Vec::new();
    let init: Result<Vec<DVector<f64>>> = initial_vectors(&pencil.lattice, block, opts.seed)
        .iter()
        .map(|col| pencil.project(col))
        .collect();
    b_orthonormalize(&mut x, init?, &pencil)?;
    if x.len() < opts.count {
        return Err(Error::Config("block does not fit the resolved subspace".into()));
    }
    let (_, c) = rayleigh_ritz(&x);
    let keep = x.len();
    x = rebuild_block(&pencil, &x, &c, keep)?;
    if x.len() < opts.count {
        return Err(Error::Config("block does not fit the resolved subspace".into()));
    }
    let mut evals: Vec<f64> = x.iter().map(|t| t.v.dot(&t.av)).collect();

    // directions of travel from the previous sweep, fed back raw
    let mut p_dirs: Vec<DVector<f64>> = Vec::new();
    let mut iterations = 0;
    let mut last_residuals = vec![f64::INFINITY; opts.count];
    let mut history: Vec<f64> = Vec::new();

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        // residuals of the current Ritz pairs; converged ones stay out of
        // the expansion block so they cannot reinject rounding noise
        let mut w: Vec<DVector<f64>> = Vec::new();
        let mut converged = x.len() >= opts.count;
        for (j, t) in x.iter().enumerate() {
            let r = &t.av - &t.bv * evals[j];
            let rel = r.norm() / (evals[j].abs().max(1.0) * t.bv.norm().max(1e-300));
            if j < opts.count {
                last_residuals[j] = rel;
                if rel > opts.tol {
                    converged = false;
                }
            }
            if rel > opts.tol {
                w.push(pencil.precondition(&r)?);
            }
        }
        if converged {
            break;
        }
        // rounding floor guard: once the worst tracked residual stops
        // improving, iterating further only feeds noise into the basis
        let worst = last_residuals.iter().cloned().fold(0.0f64, f64::max);
        history.push(worst);
        let lookback = 25;
        if history.len() > lookback {
            let past = history[history.len() - 1 - lookback];
            if worst > 0.7 * past {
                if worst <= (100.0 * opts.tol).max(1e-5) {
                    break;
                }
                return Err(Error::NotConverged {
                    tol: opts.tol,
                    iterations,
                    residuals: last_residuals,
                });
            }
        }
        if iter == opts.max_iterations - 1 {
            return Err(Error::NotConverged {
                tol: opts.tol,
                iterations,
                residuals: last_residuals,
            });
        }

        let prev: Vec<Triple> = x.clone();

        // re-enforce B-orthonormality of the carried block every sweep;
        // trusting it across sweeps lets rounding drift compound
        let mut basis = Vec::with_capacity(3 * block);
        for t in x {
            polish(&mut basis, t);
        }
        let mut candidates = w;
        candidates.append(&mut p_dirs);
        b_orthonormalize(&mut basis, candidates, &pencil)?;
        let (_, c) = rayleigh_ritz(&basis);
        let take = block.min(basis.len());
        x = rebuild_block(&pencil, &basis, &c, take)?;
        evals = x.iter().map(|t| t.v.dot(&t.av)).collect();

        // implicit CG directions: the part of the new block outside the old
        p_dirs = Vec::with_capacity(take);
        for t in &x {
            let mut d = t.v.clone();
            for q in &prev {
                let proj = q.bv.dot(&d);
                d -= &q.v * proj;
            }
            if d.norm() > 1e-10 {
                p_dirs.push(d);
            }
        }
    }

    // the refreshed Rayleigh quotients can come back microscopically out of
    // order relative to the Ritz sort
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| evals[a].total_cmp(&evals[b]));

    let mut eigenvalues = Vec::with_capacity(opts.count);
    let mut eigenvectors = Vec::with_capacity(opts.count);
    let mut residuals = Vec::with_capacity(opts.count);
    let scale = pencil.lattice.cell_volume().sqrt();
    for &i in order.iter().take(opts.count) {
        let t = &x[i];
        let lambda = evals[i];
        let r = &t.av - &t.bv * lambda;
        residuals.push(r.norm() / t.bv.norm().max(1e-300));
        eigenvalues.push(lambda);
        // ||v||_B = 1 in the Euclidean sense; rescale so the B-weighted
        // L^2 quadrature norm is 1
        eigenvectors.push(pencil.grid(&t.v)?.scaled(1.0 / scale));
    }
    Ok(Spectrum { eigenvalues, eigenvectors, residuals, iterations })
}

/// Combines the Ritz rotation and refreshes the pencil images of the result,
/// keeping every cached image at most one generation old; recombined images
/// would otherwise accumulate a rounding amplification per sweep that ends
/// up corrupting the projections.
fn rebuild_block(
    pencil: &Pencil,
    basis: &[Triple],
    c: &DMatrix<f64>,
    take: usize,
) -> Result<Vec<Triple>> {
    let mut out = Vec::with_capacity(take);
    for v in combine_vectors(basis, c, take.min(c.ncols())) {
        let mut t = pencil.triple(v)?;
        // a combination that lost its B-mass in the recombination is
        // degenerate; drop it rather than renormalize noise into the block
        let bn = t.v.dot(&t.bv);
        if bn < 0.25 {
            continue;
        }
        let s = bn.sqrt().recip();
        t.v *= s;
        t.av *= s;
        t.bv *= s;
        out.push(t);
    }
    Ok(out)
}

/// lambda_2 - lambda_1.
pub fn spectral_gap(spectrum: &Spectrum) -> Result<f64> {
    if spectrum.eigenvalues.len() < 2 {
        return Err(Error::TooFewPoints { need: 2, got: spectrum.eigenvalues.len() });
    }
    Ok(spectrum.eigenvalues[1] - spectrum.eigenvalues[0])
}

/// Ground state mapped back through the exponential transform, with the sign
/// fixed so the spatial mean is positive.
pub fn ground_state(form: &FormOperator, spectrum: &Spectrum) -> Result<GridField> {
    let v = spectrum
        .eigenvectors
        .first()
        .ok_or(Error::TooFewPoints { need: 1, got: 0 })?;
    let u = form.to_exponential(v)?;
    Ok(if u.mean() < 0.0 { u.scaled(-1.0) } else { u })
}

/// min / max over the grid; positive iff the field never changes sign.
pub fn positivity_ratio(u: &GridField) -> f64 {
    u.min() / u.max()
}

fn pcg_solve(
    pencil: &Pencil,
    tau: f64,
    rhs: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    // solves (B + tau A) v = rhs in V, preconditioned by (1 + tau |k|^2)^{-1}
    let precond = |r: &DVector<f64>| -> Result<DVector<f64>> {
        let hat = forward_transform(&pencil.grid(r)?);
        let out = apply_multiplier(&hat, |k| {
            let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            Complex64::new(1.0 / (1.0 + tau * k2), 0.0)
        });
        Ok(DVector::from_vec(inverse_transform(&out)?.values().to_vec()))
    };
    let apply = |v: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(pencil.apply_b(v)? + pencil.apply_a(v)? * tau)
    };

    let mut v = rhs.clone();
    let mut r = rhs - apply(&v)?;
    let rhs_norm = rhs.norm().max(1e-300);
    if r.norm() / rhs_norm < tol {
        return Ok(v);
    }
    let mut z = precond(&r)?;
    let mut pdir = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..max_iter {
        let apv = apply(&pdir)?;
        let alpha = rz / pdir.dot(&apv);
        v += &pdir * alpha;
        r -= apv * alpha;
        if r.norm() / rhs_norm < tol {
            return Ok(v);
        }
        z = precond(&r)?;
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        pdir = z.clone() + pdir * beta;
    }
    Err(Error::LinearSolveFailed { residual: r.norm() / rhs_norm })
}

/// Semigroup action with respect to the pencil, v(t) solving B dv/dt = -A v,
/// by implicit Euler substeps solved with preconditioned conjugate gradients.
pub fn heat_apply(
    op: &dyn SymmetricOperator,
    v0: &GridField,
    t: f64,
    steps: usize,
) -> Result<GridField> {
    if steps == 0 || !(t > 0.0) {
        return Err(Error::Config("heat flow needs t > 0 and at least one step".into()));
    }
    let pencil = Pencil::new(op)?;
    let tau = t / steps as f64;
    let mut v = pencil.project(&DVector::from_vec(v0.values().to_vec()))?;
    for _ in 0..steps {
        let rhs = pencil.apply_b(&v)?;
        v = pcg_solve(&pencil, tau, &rhs, 1e-11, 2000)?;
    }
    pencil.grid(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::form::assemble_form;
    use crate::grid::ProductMode;
    use crate::noise::{Mollifier, NoiseSample};
    use crate::wick::{enhance, RenormConstants};
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    fn zero_form(d: usize, n: usize) -> FormOperator {
        let lat = Lattice::new(d, n).unwrap();
        let consts = RenormConstants {
            eps: 0.5,
            mollifier: Mollifier::Gaussian,
            c_x: 0.0,
            c_y: if d == 3 { Some(0.0) } else { None },
        };
        let e = enhance(&NoiseSample::zero(&lat), &consts, ProductMode::Pointwise).unwrap();
        assemble_form(&e).unwrap()
    }

    #[test]
    fn zero_noise_spectrum_is_the_laplacian_spectrum() {
        // 2D: 0, 1, 1, 1, 1, 2; 3D: 0, then six 1s, then 2
        let form2 = zero_form(2, 16);
        let spec2 = lowest_eigenpairs(
            &form2,
            &EigenOptions { count: 6, tol: 1e-9, ..EigenOptions::default() },
        )
        .unwrap();
        let expect2 = [0.0, 1.0, 1.0, 1.0, 1.0, 2.0];
        for (got, want) in spec2.eigenvalues.iter().zip(expect2) {
            assert!((got - want).abs() < 1e-7, "{:?}", spec2.eigenvalues);
        }
        for r in &spec2.residuals {
            assert!(*r < 1e-7);
        }

        let form3 = zero_form(3, 8);
        let spec3 = lowest_eigenpairs(
            &form3,
            &EigenOptions { count: 8, extra_block: 6, ..EigenOptions::default() },
        )
        .unwrap();
        let expect3 = [0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0];
        for (got, want) in spec3.eigenvalues.iter().zip(expect3) {
            assert!((got - want).abs() < 1e-6, "{:?}", spec3.eigenvalues);
        }
    }

    #[test]
    fn matches_dense_solver_on_small_noisy_problem() {
        let lat = Lattice::new(2, 8).unwrap();
        let consts = RenormConstants::first_order(&lat, 0.4, Mollifier::Gaussian).unwrap();
        let e = enhance(&NoiseSample::sample(&lat, 31), &consts, ProductMode::Pointwise)
            .unwrap();
        let form = assemble_form(&e).unwrap();

        // orthonormal basis of V: cosine and sine columns per conjugate pair
        let n = lat.len();
        let mut q_cols: Vec<DVector<f64>> = Vec::new();
        let mut x = [0.0f64; 3];
        for j in 0..n {
            if lat.is_nyquist(j) || lat.mirror(j) < j {
                continue;
            }
            let mut k = [0i64; 3];
            lat.freq_vec(j, &mut k);
            let waves: &[bool] = if j == 0 { &[true] } else { &[true, false] };
            for &is_cos in waves {
                let mut col = DVector::zeros(n);
                for (i, v) in col.iter_mut().enumerate() {
                    lat.point(i, &mut x);
                    let phase = (k[0] as f64) * x[0] + (k[1] as f64) * x[1];
                    *v = if is_cos { phase.cos() } else { phase.sin() };
                }
                col /= col.norm();
                q_cols.push(col);
            }
        }
        let dim = q_cols.len();
        assert_eq!(dim, 7 * 7); // non-Nyquist mode count at N = 8 in 2D

        // dense pencil on V, then similarity through B^{-1/2}
        let mut a_r = DMatrix::zeros(dim, dim);
        let mut b_r = DMatrix::zeros(dim, dim);
        for (j, qj) in q_cols.iter().enumerate() {
            let grid = GridField::new(lat.clone(), qj.iter().cloned().collect()).unwrap();
            let aq = form.apply(&grid).unwrap();
            let bq = grid.product(form.mass_weights()).unwrap();
            for (i, qi) in q_cols.iter().enumerate() {
                a_r[(i, j)] = qi.dot(&DVector::from_vec(aq.values().to_vec()));
                b_r[(i, j)] = qi.dot(&DVector::from_vec(bq.values().to_vec()));
            }
        }
        let a_r = (a_r.clone() + a_r.transpose()) * 0.5;
        let b_r = (b_r.clone() + b_r.transpose()) * 0.5;
        let beig = SymmetricEigen::new(b_r);
        let mut inv_sqrt = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            inv_sqrt[(i, i)] = 1.0 / beig.eigenvalues[i].sqrt();
        }
        let b_inv_sqrt = &beig.eigenvectors * inv_sqrt * beig.eigenvectors.transpose();
        let m = &b_inv_sqrt * a_r * &b_inv_sqrt;
        let m = (m.clone() + m.transpose()) * 0.5;
        let mut dense: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().cloned().collect();
        dense.sort_by(f64::total_cmp);

        let spec = lowest_eigenpairs(
            &form,
            &EigenOptions { count: 4, ..EigenOptions::default() },
        )
        .unwrap();
        for (got, want) in spec.eigenvalues.iter().zip(&dense[..4]) {
            assert_relative_eq!(got, want, max_relative = 1e-7, epsilon = 1e-8);
        }
    }

    #[test]
    fn generalized_residuals_certify_the_pencil() {
        let lat = Lattice::new(2, 16).unwrap();
        let consts = RenormConstants::first_order(&lat, 0.3, Mollifier::Gaussian).unwrap();
        let e = enhance(&NoiseSample::sample(&lat, 7), &consts, ProductMode::Pointwise).unwrap();
        let form = assemble_form(&e).unwrap();
        let spec = lowest_eigenpairs(
            &form,
            &EigenOptions { count: 3, ..EigenOptions::default() },
        )
        .unwrap();
        assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        for r in &spec.residuals {
            assert!(*r < 1e-7, "residuals {:?}", spec.residuals);
        }
        // B-weighted normalization
        let v = &spec.eigenvectors[0];
        let bnorm = form.mass_weights().product(v).unwrap().inner(v).unwrap();
        assert_relative_eq!(bnorm, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn ground_state_comes_back_positive() {
        let lat = Lattice::new(2, 16).unwrap();
        let consts = RenormConstants::first_order(&lat, 0.3, Mollifier::Gaussian).unwrap();
        let e = enhance(&NoiseSample::sample(&lat, 19), &consts, ProductMode::Pointwise)
            .unwrap();
        let form = assemble_form(&e).unwrap();
        let spec = lowest_eigenpairs(
            &form,
            &EigenOptions { count: 2, ..EigenOptions::default() },
        )
        .unwrap();
        let u = ground_state(&form, &spec).unwrap();
        assert!(u.mean() > 0.0);
        assert!(positivity_ratio(&u) > 0.0, "ground state changes sign");
        assert!(spectral_gap(&spec).unwrap() > 0.0);
    }

    #[test]
    fn heat_step_matches_implicit_euler_factor() {
        // A = -Delta, v0 = cos x0: 64 implicit Euler steps of size 1/64
        // multiply the mode by (1 + 1/64)^{-64} = 0.370727...
        let form = zero_form(2, 16);
        let lat = form.lattice().clone();
        let v0 = GridField::from_fn(&lat, |x| x[0].cos());
        let v = heat_apply(&form, &v0, 1.0, 64).unwrap();
        let amp = 2.0 * forward_transform(&v).coeff_at(&[1, 0]).re;
        let expect = (1.0f64 + 1.0 / 64.0).powi(-64);
        assert_relative_eq!(amp, expect, max_relative = 1e-8);
        // within 1% of the exact semigroup e^{-1}
        assert!((amp - (-1.0f64).exp()).abs() / (-1.0f64).exp() < 0.01);
    }

    #[test]
    fn jacobi_recovers_a_planted_spectrum() {
        use rand::Rng;
        let n = 24;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // orthogonal Q from QR of a random matrix, planted eigenvalues with
        // a tight cluster and a wide magnitude spread
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let q = raw.qr().q();
        let mut planted: Vec<f64> = (0..n)
            .map(|i| match i {
                0 => -3.0,
                1 => 1e-9,
                2 => 1e-9 + 1e-15,
                _ => 10.0f64.powi((i % 7) as i32 - 2) * (1.0 + i as f64),
            })
            .collect();
        planted.sort_by(f64::total_cmp);
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(planted.clone()));
        let mat = &q * lambda * q.transpose();
        let sym = (mat.clone() + mat.transpose()) * 0.5;

        let (evals, vecs) = jacobi_eigen(&sym);
        let scale = planted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            assert!((evals[i] - planted[i]).abs() <= 1e-12 * scale);
            // each returned vector must actually belong to its eigenvalue
            let vi = vecs.column(i);
            let res = (&sym * vi - vi * evals[i]).norm();
            assert!(res <= 1e-11 * scale, "pair {i} residual {res}");
            for j in (i + 1)..n {
                assert!(vi.dot(&vecs.column(j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn asymmetric_operator_is_rejected() {
        struct Skewed(Lattice);
        impl SymmetricOperator for Skewed {
            fn lattice(&self) -> &Lattice {
                &self.0
            }
            fn apply(&self, v: &GridField) -> Result<GridField> {
                // shift by one grid point: not symmetric
                let n = self.0.len();
                let mut vals = vec![0.0; n];
                for (i, slot) in vals.iter_mut().enumerate() {
                    *slot = v.values()[(i + 1) % n];
                }
                GridField::new(self.0.clone(), vals)
            }
        }
        let op = Skewed(Lattice::new(2, 8).unwrap());
        assert!(matches!(
            lowest_eigenpairs(&op, &EigenOptions::default()),
            Err(Error::NotSymmetric { .. })
        ));
    }
}
