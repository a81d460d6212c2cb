//! Experiment drivers.
//!
//! Each driver expands its config into independent (seed, eps) cells,
//! evaluates them in a work pool, and appends fit/aggregate records computed
//! from the collected cells. Cell failures are recorded, never fatal, and
//! record order is fixed by the config alone, so output does not depend on
//! pool width. Assessment is a pure function of the records, which lets a
//! reporting pass re-check a results file without recomputing anything.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::besov::{block_lq_norm, regularity_from_means};
use crate::eigen::{ground_state, heat_apply, lowest_eigenpairs, positivity_ratio, EigenOptions};
use crate::error::{Error, Result};
use crate::form::{assemble_form, probe_field, RegularizedForm};
use crate::grid::{forward_transform, inverse_transform, GridField, Lattice, TWO_PI};
use crate::noise::{solve_x, NoiseSample};
use crate::stats::mean_and_se;
use crate::wick::{
    enhance, enhanced_distance, expected_grad_sq_x, wick_gradient_square, RenormConstants,
    SecondOrderMethod,
};

use super::config::{ExperimentConfig, ExperimentKind};
use super::fit::{fit_divergence, DivergenceModel};
use super::record::{Assertion, RecordMeta, ResultRecord};

/// Probe envelopes cycled across form-convergence pairs.
const PROBE_ENVELOPES: [f64; 3] = [0.6, 1.0, 2.0];
/// Seed base for form-convergence probes; distinct from noise seeds.
const PROBE_SEED_BASE: u64 = 2000;

pub struct RunOutput {
    pub records: Vec<ResultRecord>,
    pub assertions: Vec<Assertion>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let records = match config.experiment {
        ExperimentKind::Divergence => run_divergence(config)?,
        ExperimentKind::Regularity => run_regularity(config)?,
        ExperimentKind::RenormNecessity => run_renorm_necessity(config)?,
        ExperimentKind::TransformEquivalence => run_transform_equivalence(config)?,
        ExperimentKind::SpectralGap => run_spectral_gap(config)?,
        ExperimentKind::Positivity => run_positivity(config)?,
        ExperimentKind::FormConvergence => run_form_convergence(config)?,
    };
    let assertions = assess(config.experiment, &records);
    Ok(RunOutput { records, assertions })
}

/// Re-derives pass/fail assertions from records alone.
pub fn assess(kind: ExperimentKind, records: &[ResultRecord]) -> Vec<Assertion> {
    if records.is_empty() {
        return vec![Assertion::new("records present", false, "no records".into())];
    }
    let checks = match kind {
        ExperimentKind::Divergence => divergence_checks(records),
        ExperimentKind::Regularity => regularity_checks(records),
        ExperimentKind::RenormNecessity => renorm_checks(records),
        ExperimentKind::TransformEquivalence => transform_checks(records),
        ExperimentKind::SpectralGap => gap_checks(records),
        ExperimentKind::Positivity => positivity_checks(records),
        ExperimentKind::FormConvergence => form_convergence_checks(records),
    };
    checks.unwrap_or_else(|e| vec![Assertion::new("assessment prerequisites", false, e.to_string())])
}

// ---- record plumbing ----------------------------------------------------

fn timed_cell(
    config: &ExperimentConfig,
    seed: u64,
    eps: f64,
    f: impl FnOnce() -> Result<BTreeMap<String, f64>>,
) -> ResultRecord {
    let start = Instant::now();
    let (payload, error) = match f() {
        Ok(p) => (p, None),
        Err(e) => (BTreeMap::new(), Some(e.to_string())),
    };
    ResultRecord {
        experiment: config.experiment.name().to_string(),
        kind: "cell".to_string(),
        seed,
        eps,
        payload,
        error,
        config: config.snapshot(),
        meta: RecordMeta {
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    }
}

fn derived(
    config: &ExperimentConfig,
    kind: &str,
    eps: f64,
    payload: BTreeMap<String, f64>,
    error: Option<String>,
) -> ResultRecord {
    ResultRecord {
        experiment: config.experiment.name().to_string(),
        kind: kind.to_string(),
        seed: 0,
        eps,
        payload,
        error,
        config: config.snapshot(),
        meta: RecordMeta { wall_ms: 0.0, version: env!("CARGO_PKG_VERSION").to_string() },
    }
}

fn constants_for(config: &ExperimentConfig, lattice: &Lattice, eps: f64) -> Result<RenormConstants> {
    if lattice.d() == 2 {
        RenormConstants::first_order(lattice, eps, config.mollifier)
    } else {
        RenormConstants::with_second_order(
            lattice,
            eps,
            config.mollifier,
            config.dealias,
            SecondOrderMethod::MonteCarlo { samples: config.second_order_samples },
        )
    }
}

fn eigen_opts(config: &ExperimentConfig, count: usize, seed: u64) -> EigenOptions {
    EigenOptions {
        count,
        tol: config.tol,
        max_iterations: config.max_iterations,
        seed,
        ..EigenOptions::default()
    }
}

fn ok_cells(records: &[ResultRecord]) -> impl Iterator<Item = &ResultRecord> {
    records.iter().filter(|r| r.kind == "cell" && r.error.is_none())
}

fn find_kind<'a>(records: &'a [ResultRecord], kind: &str) -> Result<&'a ResultRecord> {
    records
        .iter()
        .find(|r| r.kind == kind)
        .ok_or_else(|| Error::NoData(format!("no '{kind}' record")))
}

fn value(r: &ResultRecord, key: &str) -> Result<f64> {
    r.payload
        .get(key)
        .copied()
        .ok_or_else(|| Error::NoData(format!("{} record lacks '{key}'", r.kind)))
}

fn config_str<'a>(records: &'a [ResultRecord], key: &str) -> Result<&'a str> {
    records
        .first()
        .and_then(|r| r.config.get(key))
        .map(String::as_str)
        .ok_or_else(|| Error::NoData(format!("records carry no config key '{key}'")))
}

fn config_f64(records: &[ResultRecord], key: &str) -> Result<f64> {
    config_str(records, key)?
        .parse()
        .map_err(|_| Error::Config(format!("config key '{key}' is not a number")))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// First assertion of every experiment: no cell errored.
fn cells_ok(records: &[ResultRecord]) -> Assertion {
    let total = records.iter().filter(|r| r.kind == "cell").count();
    let failed = records.iter().filter(|r| r.kind == "cell" && r.error.is_some()).count();
    Assertion::new(
        "all cells computed",
        failed == 0 && total > 0,
        format!("{}/{} cells succeeded", total - failed, total),
    )
}

// ---- divergence of c_X ---------------------------------------------------

fn run_divergence(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let lattice = Lattice::new(config.dimension, config.n)?;
    let mut records: Vec<ResultRecord> = config
        .eps
        .par_iter()
        .map(|&eps| {
            timed_cell(config, 0, eps, || {
                let c_x = expected_grad_sq_x(&lattice, eps, config.mollifier)?;
                Ok(BTreeMap::from([("c_x".to_string(), c_x)]))
            })
        })
        .collect();

    let points: Vec<(f64, f64)> = ok_cells(&records)
        .filter_map(|r| r.payload.get("c_x").map(|&c| (r.eps, c)))
        .collect();
    let mut payload = BTreeMap::new();
    let mut error = None;
    for (model, tag) in [(DivergenceModel::Log, "log"), (DivergenceModel::Inverse, "inv")] {
        match fit_divergence(&points, model) {
            Ok((a, b, r2)) => {
                payload.insert(format!("{tag}_intercept"), a);
                payload.insert(format!("{tag}_slope"), b);
                payload.insert(format!("{tag}_r2"), r2);
            }
            Err(e) => error = Some(e.to_string()),
        }
    }
    records.push(derived(config, "fit", 0.0, payload, error));
    Ok(records)
}

fn divergence_checks(records: &[ResultRecord]) -> Result<Vec<Assertion>> {
    let d = config_f64(records, "dimension")? as usize;
    let fit = find_kind(records, "fit")?;
    let target = TWO_PI.powi(-2);
    let mut out = vec![cells_ok(records)];
    if d == 2 {
        let r2 = value(fit, "log_r2")?;
        let b = value(fit, "log_slope")?;
        let margin = r2 - value(fit, "inv_r2")?;
        let rel = (b - target).abs() / target;
        out.push(Assertion::new(
            "log model fits",
            r2 > 0.99,
            format!("r^2 = {r2:.6}, need > 0.99"),
        ));
        out.push(Assertion::new(
            "log slope matches (2pi)^-2",
            rel <= 0.20,
            format!("b = {b:.6} vs target {target:.6}, rel err {:.1}% (allowed 20%)", rel * 100.0),
        ));
        out.push(Assertion::new(
            "log model beats 1/eps model",
            margin >= 0.05,
            format!("r^2 margin = {margin:.4}, need >= 0.05"),
        ));
    } else {
        let b = value(fit, "inv_slope")?;
        let margin = value(fit, "inv_r2")? - value(fit, "log_r2")?;
        let rel = (b - target).abs() / target;
        out.push(Assertion::new(
            "1/eps slope matches (2pi)^-2",
            rel <= 0.25,
            format!("b = {b:.6} vs target {target:.6}, rel err {:.1}% (allowed 25%)", rel * 100.0),
        ));
        out.push(Assertion::new(
            "1/eps model beats log model",
            margin >= 0.05,
            format!("r^2 margin = {margin:.4}, need >= 0.05"),
        ));
    }
    Ok(out)
}

// ---- Besov regularity ----------------------------------------------------

fn run_regularity(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let lattice = Lattice::new(config.dimension, config.n)?;
    let eps = config.eps[0];
    let c_x = expected_grad_sq_x(&lattice, eps, config.mollifier)?;
    let (lo, hi) = (config.block_lo, config.block_hi);

    let mut records: Vec<ResultRecord> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            timed_cell(config, seed, eps, || {
                let noise = NoiseSample::sample(&lattice, seed);
                let xi_eps = noise.mollified(eps, config.mollifier)?;
                let x = solve_x(&xi_eps);
                let w = forward_transform(&wick_gradient_square(&x, c_x, config.dealias)?);
                let mut payload = BTreeMap::new();
                for n in lo..=hi {
                    payload.insert(format!("xi_b{n}"), block_lq_norm(&xi_eps, n, 2.0)?);
                    payload.insert(format!("x_b{n}"), block_lq_norm(&x, n, 2.0)?);
                    // sup-norm blocks of a chaos field carry an extreme-value
                    // log factor, so the scaling fit uses p = 2 and the sup
                    // fit rides along for reporting
                    payload.insert(format!("w_b{n}"), block_lq_norm(&w, n, 2.0)?);
                    payload.insert(format!("wsup_b{n}"), block_lq_norm(&w, n, f64::INFINITY)?);
                }
                Ok(payload)
            })
        })
        .collect();

    let mut payload = BTreeMap::new();
    let mut error = None;
    for tag in ["xi", "x", "w", "wsup"] {
        let mut means = Vec::new();
        for n in lo..=hi {
            let key = format!("{tag}_b{n}");
            let vals: Vec<f64> =
                ok_cells(&records).filter_map(|r| r.payload.get(&key).copied()).collect();
            if vals.is_empty() {
                break;
            }
            means.push(mean(&vals));
        }
        match regularity_from_means(lo, &means) {
            Ok(fit) => {
                payload.insert(format!("{tag}_slope"), fit.slope);
                payload.insert(format!("{tag}_alpha"), fit.alpha_hat);
                payload.insert(format!("{tag}_r2"), fit.r_squared);
            }
            Err(e) => error = Some(e.to_string()),
        }
    }
    records.push(derived(config, "fit", eps, payload, error));
    Ok(records)
}

fn regularity_checks(records: &[ResultRecord]) -> Result<Vec<Assertion>> {
    let d = config_f64(records, "dimension")?;
    let fit = find_kind(records, "fit")?;
    let mut out = vec![cells_ok(records)];
    if d as usize == 2 {
        let xi_slope = value(fit, "xi_slope")?;
        let x_slope = value(fit, "x_slope")?;
        let shift = xi_slope - x_slope;
        let w_alpha = value(fit, "w_alpha")?;
        out.push(Assertion::new(
            "white noise block growth is d/2",
            (xi_slope - d / 2.0).abs() <= 0.15,
            format!("slope = {xi_slope:.4}, target {:.1} within 0.15", d / 2.0),
        ));
        out.push(Assertion::new(
            "solving the Poisson problem gains two derivatives",
            (shift - 2.0).abs() <= 0.10,
            format!("slope difference = {shift:.4}, target 2 within 0.10"),
        ));
        out.push(Assertion::new(
            "Wick square is almost a function",
            w_alpha >= -0.2,
            format!("alpha = {w_alpha:.4}, need >= -0.2"),
        ));
    } else {
        let w_alpha = value(fit, "w_alpha")?;
        out.push(Assertion::new(
            "Wick square sits in the expected window",
            (-1.3..=-0.8).contains(&w_alpha),
            format!("alpha = {w_alpha:.4}, need within [-1.3, -0.8]"),
        ));
    }
    Ok(out)
}

// ---- renormalization necessity --------------------------------------------

fn run_renorm_necessity(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let lattice = Lattice::new(config.dimension, config.n)?;
    for w in config.eps.windows(2) {
        if (w[1] - 0.5 * w[0]).abs() > 1e-12 * w[0] {
            return Err(Error::Config("renorm-necessity needs a halving eps ladder".into()));
        }
    }
    let cells: Vec<(u64, f64)> = config
        .seeds
        .iter()
        .flat_map(|&s| config.eps.iter().map(move |&e| (s, e)))
        .collect();
    let mut records: Vec<ResultRecord> = cells
        .par_iter()
        .map(|&(seed, eps)| {
            timed_cell(config, seed, eps, || {
                let noise = NoiseSample::sample(&lattice, seed);
                let bare = RegularizedForm::bare(&noise, eps, config.mollifier, config.dealias)?;
                let spectrum = lowest_eigenpairs(&bare, &eigen_opts(config, 1, seed))?;
                // the subtracted operator is the bare one plus c * identity,
                // so its ground eigenvalue needs no second solve
                let c = constants_for(config, &lattice, eps)?.total();
                let lambda_raw = spectrum.eigenvalues[0];
                Ok(BTreeMap::from([
                    ("lambda_raw".to_string(), lambda_raw),
                    ("lambda_renorm".to_string(), lambda_raw + c),
                    ("c_total".to_string(), c),
                    ("residual".to_string(), spectrum.residuals[0]),
                    ("iterations".to_string(), spectrum.iterations as f64),
                ]))
            })
        })
        .collect();

    let cell_value = |seed: u64, eps: f64, key: &str| -> Option<f64> {
        records
            .iter()
            .find(|r| r.kind == "cell" && r.seed == seed && r.eps == eps && r.error.is_none())
            .and_then(|r| r.payload.get(key).copied())
    };
    let mut aggregates = Vec::new();
    for pair in config.eps.windows(2) {
        let (e0, e1) = (pair[0], pair[1]);
        let mut shifts = Vec::new();
        let mut drifts = Vec::new();
        for &seed in &config.seeds {
            if let (Some(r0), Some(r1), Some(n0), Some(n1)) = (
                cell_value(seed, e0, "lambda_raw"),
                cell_value(seed, e1, "lambda_raw"),
                cell_value(seed, e0, "lambda_renorm"),
                cell_value(seed, e1, "lambda_renorm"),
            ) {
                shifts.push(r1 - r0);
                drifts.push((n1 - n0).abs());
            }
        }
        let mut payload = BTreeMap::new();
        payload.insert("eps_next".to_string(), e1);
        payload.insert("pairs".to_string(), shifts.len() as f64);
        let mut error = None;
        if shifts.is_empty() {
            error = Some("no seed succeeded at both scales".to_string());
        } else {
            let (sm, sse) = mean_and_se(&shifts);
            let (dm, dse) = mean_and_se(&drifts);
            payload.insert("shift_raw_mean".to_string(), sm);
            payload.insert("shift_raw_se".to_string(), sse);
            payload.insert("drift_renorm_mean".to_string(), dm);
            payload.insert("drift_renorm_se".to_string(), dse);
        }
        aggregates.push(derived(config, "aggregate", e0, payload, error));
    }
    records.extend(aggregates);
    Ok(records)
}

fn renorm_checks(records: &[ResultRecord]) -> Result<Vec<Assertion>> {
    let target = -TWO_PI.powi(-2) * std::f64::consts::LN_2;
    let steps: Vec<&ResultRecord> = records.iter().filter(|r| r.kind == "aggregate").collect();
    if steps.len() < 3 {
        return Err(Error::NoData(format!("need 3 halving steps, found {}", steps.len())));
    }
    let mut out = vec![cells_ok(records)];
    for step in &steps {
        let shift = value(step, "shift_raw_mean")?;
        let rel = (shift - target).abs() / target.abs();
        out.push(Assertion::new(
            &format!("bare shift tracks -(2pi)^-2 log 2 at eps={}", step.eps),
            rel <= 0.30,
            format!("mean shift = {shift:.5} vs target {target:.5}, rel err {:.0}% (allowed 30%)", rel * 100.0),
        ));
    }
    let drifts: Vec<f64> =
        steps.iter().map(|s| value(s, "drift_renorm_mean")).collect::<Result<_>>()?;
    let monotone = drifts.windows(2).all(|w| w[1] < w[0]);
    out.push(Assertion::new(
        "subtracted eigenvalue settles down",
        monotone,
        format!("successive |lambda(eps) - lambda(eps/2)| means: {drifts:?}"),
    ));
    Ok(out)
}

// ---- transform equivalence -------------------------------------------------

fn run_transform_equivalence(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let base = Lattice::new(config.dimension, config.n)?;
    let eps = config.eps[0];
    let consts = constants_for(config, &base, eps)?;
    let levels: Vec<usize> =
        if config.refine { vec![config.n, 2 * config.n] } else { vec![config.n] };
    let cells: Vec<(u64, usize)> = config
        .seeds
        .iter()
        .flat_map(|&s| levels.iter().map(move |&n| (s, n)))
        .collect();

    let mut records: Vec<ResultRecord> = cells
        .par_iter()
        .map(|&(seed, n_level)| {
            timed_cell(config, seed, eps, || {
                let lat = Lattice::new(config.dimension, n_level)?;
                let base_noise = NoiseSample::sample(&base, seed);
                let noise =
                    if n_level == config.n { base_noise } else { base_noise.embed(&lat)? };
                let enhanced = enhance(&noise, &consts, config.dealias)?;
                let form = assemble_form(&enhanced)?;
                let st = lowest_eigenpairs(&form, &eigen_opts(config, 1, seed))?;
                let direct = RegularizedForm::renormalized(&noise, eps, &consts, config.dealias)?;
                let sd = lowest_eigenpairs(&direct, &eigen_opts(config, 1, seed))?;
                let (lt, ld) = (st.eigenvalues[0], sd.eigenvalues[0]);
                let scale = lt.abs().max(ld.abs()).max(1e-12);
                Ok(BTreeMap::from([
                    ("n_level".to_string(), n_level as f64),
                    ("lambda_transformed".to_string(), lt),
                    ("lambda_direct".to_string(), ld),
                    ("mismatch_rel".to_string(), (lt - ld).abs() / scale),
                    ("residual_transformed".to_string(), st.residuals[0]),
                    ("residual_direct".to_string(), sd.residuals[0]),
                ]))
            })
        })
        .collect();

    let mut payload = BTreeMap::new();
    for &n_level in &levels {
        let vals: Vec<f64> = ok_cells(&records)
            .filter(|r| r.payload.get("n_level") == Some(&(n_level as f64)))
            .filter_map(|r| r.payload.get("mismatch_rel").copied())
            .collect();
        if !vals.is_empty() {
            payload.insert(format!("mismatch_rel_mean_n{n_level}"), mean(&vals));
        }
    }
    records.push(derived(config, "aggregate", eps, payload, None));
    Ok(records)
}

fn transform_checks(records: &[ResultRecord]) -> Result<Vec<Assertion>> {
    let d = config_f64(records, "dimension")? as usize;
    let n = config_f64(records, "n")? as usize;
    let refine = config_str(records, "refine")? == "true";
    let allowed = if d == 2 { 0.01 } else { 0.03 };
    let mut out = vec![cells_ok(records)];

    let base: Vec<&ResultRecord> = records
        .iter()
        .filter(|r| r.kind == "cell" && r.payload.get("n_level") == Some(&(n as f64)))
        .collect();
    if base.is_empty() {
        return Err(Error::NoData("no base-grid cells".into()));
    }
    let worst = base
        .iter()
        .filter_map(|r| value(r, "mismatch_rel").ok().map(|m| (m, r.seed)))
        .fold((0.0f64, 0u64), |acc, x| if x.0 > acc.0 { x } else { acc });
    out.push(Assertion::new(
        "both routes agree on the ground eigenvalue",
        base.len() == records.iter().filter(|r| r.kind == "cell").count() / if refine { 2 } else { 1 }
            && base.iter().all(|r| {
                value(r, "mismatch_rel").map(|m| m <= allowed).unwrap_or(false)
            }),
        format!(
            "worst relative mismatch {:.5} at seed {} (allowed {allowed})",
            worst.0, worst.1
        ),
    ));
    if refine {
        let agg = find_kind(records, "aggregate")?;
        let coarse = value(agg, &format!("mismatch_rel_mean_n{n}"))?;
        let fine = value(agg, &format!("mismatch_rel_mean_n{}", 2 * n))?;
        out.push(Assertion::new(
            "mismatch shrinks under grid refinement",
            fine < coarse,
            format!("mean mismatch {coarse:.6} at n={n} vs {fine:.6} at n={}", 2 * n),
        ));
    }
    Ok(out)
}

// ---- spectral gap -----------------------------------------------------------

fn gap_payload(spectrum: &crate::eigen::Spectrum) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("lambda1".to_string(), spectrum.eigenvalues[0]),
        ("lambda2".to_string(), spectrum.eigenvalues[1]),
        ("gap".to_string(), spectrum.eigenvalues[1] - spectrum.eigenvalues[0]),
        ("residual1".to_string(), spectrum.residuals[0]),
        ("residual2".to_string(), spectrum.residuals[1]),
        ("iterations".to_string(), spectrum.iterations as f64),
    ])
}

fn run_spectral_gap(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let lattice = Lattice::new(config.dimension, config.n)?;
    let eps = config.eps[0];
    let consts = constants_for(config, &lattice, eps)?;
    let mut records: Vec<ResultRecord> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            timed_cell(config, seed, eps, || {
                let noise = NoiseSample::sample(&lattice, seed);
                let form = assemble_form(&enhance(&noise, &consts, config.dealias)?)?;
                let spectrum = lowest_eigenpairs(&form, &eigen_opts(config, 2, seed))?;
                Ok(gap_payload(&spectrum))
            })
        })
        .collect();

    let gaps: Vec<f64> = ok_cells(&records).filter_map(|r| r.payload.get("gap").copied()).collect();
    let mut payload = BTreeMap::new();
    if !gaps.is_empty() {
        let (gm, gse) = mean_and_se(&gaps);
        payload.insert("gap_min".to_string(), gaps.iter().cloned().fold(f64::INFINITY, f64::min));
        payload.insert("gap_mean".to_string(), gm);
        payload.insert("gap_se".to_string(), gse);
    }
    records.push(derived(config, "aggregate", eps, payload, None));
    Ok(records)
}

fn gap_checks(records: &[ResultRecord]) -> Result<Vec<Assertion>> {
    let tol = config_f64(records, "tol")?;
    let mut out = vec![cells_ok(records)];
    let agg = find_kind(records, "aggregate")?;
    let gap_min = value(agg, "gap_min")?;
    out.push(Assertion::new(
        "ground state is simple in every run",
        gap_min > 10.0 * tol,
        format!("smallest gap {gap_min:.6}, need > {:.1e}", 10.0 * tol),
    ));
    Ok(out)
}

// ---- positivity ---------------------------------------------------------------

/// C^1 bump (1 - (r/r0)^2)^2 of radius pi/2 centered in the box.
fn bump_field(lattice: &Lattice) -> GridField {
    let d = lattice.d();
    let r0 = std::f64::consts::PI / 2.0;
    let center = std::f64::consts::PI;
    GridField::from_fn(lattice, |x| {
        let r2: f64 = (0..d).map(|a| (x[a] - center) * (x[a] - center)).sum();
        let s = 1.0 - r2 / (r0 * r0);
        if s > 0.0 {
            s * s
        } else {
            0.0
        }
    })
}

fn run_positivity(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let lattice = Lattice::new(config.dimension, config.n)?;
    let eps = config.eps[0];
    let consts = constants_for(config, &lattice, eps)?;
    let mut records: Vec<ResultRecord> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            timed_cell(config, seed, eps, || {
                let noise = NoiseSample::sample(&lattice, seed);
                let form = assemble_form(&enhance(&noise, &consts, config.dealias)?)?;
                let spectrum = lowest_eigenpairs(&form, &eigen_opts(config, 2, seed))?;
                let u = ground_state(&form, &spectrum)?;
                // heat flow runs in transformed coordinates; conjugating the
                // nonnegative bump keeps the comparison in the original ones
                let t_grid = inverse_transform(form.transform())?;
                let v0 = bump_field(&lattice).zip_with(&t_grid, |b, t| b * (-t).exp())?;
                let vt = heat_apply(&form, &v0, config.heat_time, config.heat_steps)?;
                let ut = form.to_exponential(&vt)?;
                let mut payload = gap_payload(&spectrum);
                payload.insert("gs_min".to_string(), u.min());
                payload.insert("gs_max".to_string(), u.max());
                payload.insert("gs_ratio".to_string(), positivity_ratio(&u));
                payload.insert("heat_min".to_string(), ut.min());
                payload.insert("heat_max".to_string(), ut.max());
                Ok(payload)
            })
        })
        .collect();

    let mut payload = BTreeMap::new();
    let collect = |records: &[ResultRecord], key: &str| -> Vec<f64> {
        ok_cells(records).filter_map(|r| r.payload.get(key).copied()).collect()
    };
    for key in ["gap", "gs_min", "heat_min"] {
        let vals = collect(&records, key);
        if !vals.is_empty() {
            payload
                .insert(format!("{key}_worst"), vals.iter().cloned().fold(f64::INFINITY, f64::min));
        }
    }
    records.push(derived(config, "aggregate", eps, payload, None));
    Ok(records)
}

fn positivity_checks(records: &[ResultRecord]) -> Result<Vec<Assertion>> {
    let tol = config_f64(records, "tol")?;
    let agg = find_kind(records, "aggregate")?;
    let gap = value(agg, "gap_worst")?;
    let gs = value(agg, "gs_min_worst")?;
    let heat = value(agg, "heat_min_worst")?;
    Ok(vec![
        cells_ok(records),
        Assertion::new(
            "ground state is strictly sign-definite",
            gs > 0.0,
            format!("worst ground-state minimum {gs:.3e}, need > 0"),
        ),
        Assertion::new(
            "ground state is simple in every run",
            gap > 10.0 * tol,
            format!("smallest gap {gap:.6}, need > {:.1e}", 10.0 * tol),
        ),
        Assertion::new(
            "heat flow spreads the bump to a strictly positive field",
            heat > 0.0,
            format!("worst heat minimum {heat:.3e}, need > 0"),
        ),
    ])
}

// ---- form convergence -----------------------------------------------------------

fn run_form_convergence(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let lattice = Lattice::new(config.dimension, config.n)?;
    let seed = config.seeds[0];
    let probes: Vec<(GridField, GridField)> = (0..config.probes)
        .map(|i| {
            let s = PROBE_ENVELOPES[i % PROBE_ENVELOPES.len()];
            let a = probe_field(&lattice, s, PROBE_SEED_BASE + 2 * i as u64)?;
            let b = probe_field(&lattice, s, PROBE_SEED_BASE + 2 * i as u64 + 1)?;
            Ok((a, b))
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<ResultRecord> = config
        .eps
        .par_iter()
        .map(|&eps| {
            timed_cell(config, seed, eps, || {
                let noise = NoiseSample::sample(&lattice, seed);
                let coarse = enhance(&noise, &constants_for(config, &lattice, eps)?, config.dealias)?;
                let fine =
                    enhance(&noise, &constants_for(config, &lattice, eps / 2.0)?, config.dealias)?;
                let fc = assemble_form(&coarse)?;
                let ff = assemble_form(&fine)?;
                let dist = enhanced_distance(&coarse, &fine, config.kappa)?;
                if !(dist > 0.0) {
                    return Err(Error::NoData("enhanced distance vanished".into()));
                }
                let mut payload = BTreeMap::from([("distance".to_string(), dist)]);
                for (i, (v1, v2)) in probes.iter().enumerate() {
                    // probes carry unit H^1 norm, so the continuity-bound
                    // denominator reduces to the distance alone
                    let da = (fc.form_value(v1, v2)? - ff.form_value(v1, v2)?).abs();
                    payload.insert(format!("ratio_p{i:02}"), da / dist);
                }
                Ok(payload)
            })
        })
        .collect();

    let mut payload = BTreeMap::new();
    for i in 0..config.probes {
        let key = format!("ratio_p{i:02}");
        let vals: Vec<f64> =
            ok_cells(&records).filter_map(|r| r.payload.get(&key).copied()).collect();
        if vals.len() == config.eps.len() {
            let m = mean(&vals);
            let dev = vals.iter().map(|v| (v - m).abs()).fold(0.0, f64::max) / m;
            payload.insert(format!("ratio_mean_p{i:02}"), m);
            payload.insert(format!("ratio_maxdev_p{i:02}"), dev);
        }
    }
    records.push(derived(config, "aggregate", config.eps[0], payload, None));
    Ok(records)
}

fn form_convergence_checks(records: &[ResultRecord]) -> Result<Vec<Assertion>> {
    let probes = config_f64(records, "probes")? as usize;
    let agg = find_kind(records, "aggregate")?;
    let mut out = vec![cells_ok(records)];
    let mut worst = (0.0f64, 0usize);
    let mut complete = true;
    for i in 0..probes {
        match value(agg, &format!("ratio_maxdev_p{i:02}")) {
            Ok(dev) => {
                if dev > worst.0 {
                    worst = (dev, i);
                }
            }
            Err(_) => complete = false,
        }
    }
    out.push(Assertion::new(
        "difference quotients stay in the distance band",
        complete && worst.0 <= 0.5,
        format!(
            "worst deviation from the per-pair mean ratio: {:.1}% at pair {} (allowed 50%){}",
            worst.0 * 100.0,
            worst.1,
            if complete { "" } else { "; some pairs missing" }
        ),
    ));
    Ok(out)
}
