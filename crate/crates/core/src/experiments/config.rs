//! Flat key=value experiment configuration with per-experiment presets.
//!
//! Precedence is preset < config file < explicit overrides, and the merged
//! result is validated as a whole. Every output record carries the canonical
//! string snapshot of the config that produced it, so a results file is
//! self-describing and a re-run can be checked for byte-identical payloads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{Lattice, ProductMode, TWO_PI};
use crate::noise::Mollifier;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ExperimentKind {
    /// c_X(eps) against the log (2D) and 1/eps (3D) divergence models.
    Divergence,
    /// Besov block-norm slopes for xi_eps, X, and the Wick square.
    Regularity,
    /// lambda_1 drift with and without the c_X subtraction.
    RenormNecessity,
    /// Transformed-side vs direct-side ground eigenvalue.
    TransformEquivalence,
    /// lambda_2 - lambda_1 across noise seeds.
    SpectralGap,
    /// Ground-state sign and heat-flow positivity.
    Positivity,
    /// Form-difference / enhanced-distance ratios on fixed probes.
    FormConvergence,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Divergence,
        ExperimentKind::Regularity,
        ExperimentKind::RenormNecessity,
        ExperimentKind::TransformEquivalence,
        ExperimentKind::SpectralGap,
        ExperimentKind::Positivity,
        ExperimentKind::FormConvergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Divergence => "divergence",
            ExperimentKind::Regularity => "regularity",
            ExperimentKind::RenormNecessity => "renorm-necessity",
            ExperimentKind::TransformEquivalence => "transform-equivalence",
            ExperimentKind::SpectralGap => "spectral-gap",
            ExperimentKind::Positivity => "positivity",
            ExperimentKind::FormConvergence => "form-convergence",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!(
                    "unknown experiment '{s}', expected one of: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Every knob an experiment reads. Fields irrelevant to a given experiment
/// are carried anyway so the provenance snapshot has a fixed schema.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub dimension: usize,
    pub n: usize,
    /// Mollification scales, in the order the ladder is walked.
    pub eps: Vec<f64>,
    pub mollifier: Mollifier,
    pub seeds: Vec<u64>,
    pub dealias: ProductMode,
    /// Eigensolver relative residual target.
    pub tol: f64,
    pub max_iterations: usize,
    /// Monte Carlo samples for the second-order constant (3D).
    pub second_order_samples: usize,
    /// Weight of the second component in the enhanced distance.
    pub kappa: f64,
    /// Probe pairs for form convergence.
    pub probes: usize,
    /// Dyadic block range for regularity fits.
    pub block_lo: usize,
    pub block_hi: usize,
    pub heat_time: f64,
    pub heat_steps: usize,
    /// Also run on the doubled grid and compare mismatches.
    pub refine: bool,
    /// Permit eps below the 4h mollifier resolution floor.
    pub allow_underresolved: bool,
}

impl ExperimentConfig {
    /// Pinned defaults per experiment and dimension.
    pub fn preset(kind: ExperimentKind, dimension: usize) -> Result<Self> {
        if dimension != 2 && dimension != 3 {
            return Err(Error::DimensionUnsupported(dimension));
        }
        let two_d = dimension == 2;
        let mut c = ExperimentConfig {
            experiment: kind,
            dimension,
            n: if two_d { 256 } else { 64 },
            eps: vec![0.25],
            mollifier: Mollifier::Gaussian,
            seeds: (0..8).collect(),
            dealias: ProductMode::Pointwise,
            tol: 1e-6,
            max_iterations: 600,
            second_order_samples: 8,
            kappa: 0.2,
            probes: 10,
            block_lo: if two_d { 3 } else { 2 },
            block_hi: if two_d { 7 } else { 5 },
            heat_time: 0.1,
            heat_steps: 2,
            refine: false,
            allow_underresolved: false,
        };
        match kind {
            ExperimentKind::Divergence => {
                c.n = if two_d { 512 } else { 64 };
                c.eps = if two_d {
                    dyadic_ladder(3, 7)
                } else {
                    dyadic_ladder(2, 5)
                };
                c.seeds = vec![0];
                c.allow_underresolved = true;
            }
            ExperimentKind::Regularity => {
                c.n = if two_d { 512 } else { 64 };
                // sharp cutoff at eps = 1/N leaves every resolved mode
                // untouched: the fields are the raw lattice objects
                c.eps = vec![1.0 / c.n as f64];
                c.mollifier = Mollifier::SharpCutoff;
                c.seeds = (0..20).collect();
                // padded products keep the Wick square's high blocks
                // alias-free
                c.dealias = ProductMode::Padded;
                c.allow_underresolved = true;
            }
            ExperimentKind::RenormNecessity => {
                c.eps = if two_d {
                    vec![1.0, 0.5, 0.25, 0.125]
                } else {
                    vec![1.0, 0.5, 0.25]
                };
                c.seeds = if two_d { (0..20).collect() } else { (0..10).collect() };
                c.tol = 1e-5;
                c.allow_underresolved = !two_d;
            }
            ExperimentKind::TransformEquivalence => {
                c.eps = if two_d { vec![0.0625] } else { vec![0.5] };
                c.seeds = if two_d { vec![0, 1, 2] } else { vec![0] };
                c.refine = two_d;
                c.allow_underresolved = two_d;
            }
            ExperimentKind::SpectralGap | ExperimentKind::Positivity => {
                c.eps = if two_d { vec![0.0625] } else { vec![0.5] };
                c.seeds = if two_d { (0..20).collect() } else { (0..10).collect() };
                c.allow_underresolved = two_d;
            }
            ExperimentKind::FormConvergence => {
                c.eps = if two_d {
                    vec![0.25, 0.125, 0.0625]
                } else {
                    vec![0.5, 0.25]
                };
                c.seeds = vec![0];
                c.allow_underresolved = true;
            }
        }
        Ok(c)
    }

    /// Builds a config from merged key=value pairs. The `experiment` key is
    /// required; `dimension` selects the preset the other keys override.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let kind: ExperimentKind = map
            .get("experiment")
            .ok_or_else(|| Error::Config("missing required key 'experiment'".into()))?
            .parse()?;
        let dimension = match map.get("dimension") {
            Some(v) => parse_usize("dimension", v)?,
            None => 2,
        };
        let mut config = ExperimentConfig::preset(kind, dimension)?;
        for (key, value) in map {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one key=value override; unknown keys are config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = value.parse()?,
            "dimension" => self.dimension = parse_usize(key, value)?,
            "n" => self.n = parse_usize(key, value)?,
            "eps" => self.eps = parse_f64_list(key, value)?,
            "mollifier" => self.mollifier = parse_mollifier(value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "dealias" => self.dealias = parse_dealias(value)?,
            "tol" => self.tol = parse_f64(key, value)?,
            "max_iterations" => self.max_iterations = parse_usize(key, value)?,
            "second_order_samples" => self.second_order_samples = parse_usize(key, value)?,
            "kappa" => self.kappa = parse_f64(key, value)?,
            "probes" => self.probes = parse_usize(key, value)?,
            "block_lo" => self.block_lo = parse_usize(key, value)?,
            "block_hi" => self.block_hi = parse_usize(key, value)?,
            "heat_time" => self.heat_time = parse_f64(key, value)?,
            "heat_steps" => self.heat_steps = parse_usize(key, value)?,
            "refine" => self.refine = parse_bool(key, value)?,
            "allow_underresolved" => self.allow_underresolved = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        Lattice::new(self.dimension, self.n)?;
        if self.eps.is_empty() {
            return Err(Error::Config("eps ladder is empty".into()));
        }
        for &e in &self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidEpsilon(e));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::Config(format!("kappa must lie in (0, 1], got {}", self.kappa)));
        }
        if self.probes == 0 {
            return Err(Error::Config("probes must be at least 1".into()));
        }
        if self.block_hi < self.block_lo + 2 {
            return Err(Error::Config(format!(
                "block range [{}, {}] spans fewer than 3 blocks",
                self.block_lo, self.block_hi
            )));
        }
        if !(self.heat_time > 0.0) || self.heat_steps == 0 {
            return Err(Error::Config("heat flow needs heat_time > 0 and heat_steps >= 1".into()));
        }
        if self.second_order_samples == 0 {
            return Err(Error::Config("second_order_samples must be at least 1".into()));
        }
        // a mollifier narrower than a few grid cells is not resolved; the
        // pinned divergence ladders opt out explicitly
        let floor = 4.0 * TWO_PI / self.n as f64;
        let mut min_eps = self.eps.iter().cloned().fold(f64::INFINITY, f64::min);
        if self.experiment == ExperimentKind::FormConvergence {
            min_eps /= 2.0;
        }
        if min_eps < floor && !self.allow_underresolved {
            return Err(Error::Config(format!(
                "eps = {min_eps} is below the resolution floor 4h = {floor:.6}; \
                 set allow_underresolved=true to override"
            )));
        }
        Ok(())
    }

    /// Canonical provenance snapshot: every field, deterministic formatting.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let join_f64 = |v: &[f64]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let join_u64 = |v: &[u64]| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut m = BTreeMap::new();
        m.insert("experiment".into(), self.experiment.name().into());
        m.insert("dimension".into(), self.dimension.to_string());
        m.insert("n".into(), self.n.to_string());
        m.insert("eps".into(), join_f64(&self.eps));
        m.insert(
            "mollifier".into(),
            match self.mollifier {
                Mollifier::Gaussian => "gaussian".into(),
                Mollifier::SharpCutoff => "sharp".into(),
            },
        );
        m.insert("seeds".into(), join_u64(&self.seeds));
        m.insert(
            "dealias".into(),
            match self.dealias {
                ProductMode::Pointwise => "pointwise".into(),
                ProductMode::Padded => "padded".into(),
            },
        );
        m.insert("tol".into(), self.tol.to_string());
        m.insert("max_iterations".into(), self.max_iterations.to_string());
        m.insert("second_order_samples".into(), self.second_order_samples.to_string());
        m.insert("kappa".into(), self.kappa.to_string());
        m.insert("probes".into(), self.probes.to_string());
        m.insert("block_lo".into(), self.block_lo.to_string());
        m.insert("block_hi".into(), self.block_hi.to_string());
        m.insert("heat_time".into(), self.heat_time.to_string());
        m.insert("heat_steps".into(), self.heat_steps.to_string());
        m.insert("refine".into(), self.refine.to_string());
        m.insert("allow_underresolved".into(), self.allow_underresolved.to_string());
        m
    }

    /// FNV-1a over the canonical snapshot, for quick run identity checks.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (k, v) in self.snapshot() {
            for byte in k.bytes().chain([b'='].into_iter()).chain(v.bytes()).chain([b'\n']) {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}

/// [2^-lo, ..., 2^-hi], descending.
pub fn dyadic_ladder(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|j| (-(j as f64)).exp2()).collect()
}

/// Parses `key = value` lines; blank lines and full-line # comments skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': '{value}' is not a non-negative integer")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': '{value}' is not a number")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("key '{key}': '{value}' is not a boolean"))),
    }
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|p| parse_f64(key, p.trim())).collect()
}

/// Either `a..b` (half-open) or a comma list.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let bad = |v: &str| Error::Config(format!("key 'seeds': '{v}' is not a seed or range"));
    if let Some((a, b)) = value.split_once("..") {
        let lo: u64 = a.trim().parse().map_err(|_| bad(value))?;
        let hi: u64 = b.trim().parse().map_err(|_| bad(value))?;
        if lo >= hi {
            return Err(Error::Config(format!("seed range {lo}..{hi} is empty")));
        }
        return Ok((lo..hi).collect());
    }
    value
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| bad(p)))
        .collect()
}

fn parse_mollifier(value: &str) -> Result<Mollifier> {
    match value {
        "gaussian" => Ok(Mollifier::Gaussian),
        "sharp" => Ok(Mollifier::SharpCutoff),
        _ => Err(Error::Config(format!(
            "key 'mollifier': '{value}' is not one of gaussian, sharp"
        ))),
    }
}

fn parse_dealias(value: &str) -> Result<ProductMode> {
    match value {
        "pointwise" => Ok(ProductMode::Pointwise),
        "padded" => Ok(ProductMode::Padded),
        _ => Err(Error::Config(format!(
            "key 'dealias': '{value}' is not one of pointwise, padded"
        ))),
    }
}
