//! Self-describing result records and their serialized projections.
//!
//! One record per (seed, eps) cell, plus `fit` and `aggregate` records
//! computed from the cells. Numeric results live in `payload`; `meta` holds
//! wall-clock data and is excluded from determinism comparisons. The CSV
//! projection is a long-format view of the payloads only, so two runs of the
//! same config must produce byte-identical CSV files.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    /// "cell", "fit", or "aggregate".
    pub kind: String,
    pub seed: u64,
    pub eps: f64,
    pub payload: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Full config snapshot; makes every line independently interpretable.
    pub config: BTreeMap<String, String>,
    pub meta: RecordMeta,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecordMeta {
    pub wall_ms: f64,
    pub version: String,
}

/// One named check over the records of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Assertion { name: name.to_string(), passed, detail }
    }
}

pub fn write_jsonl(records: &[ResultRecord], out: &mut dyn Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<ResultRecord>> {
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Long-format scalar view: experiment,kind,seed,eps,name,value. Cells that
/// failed contribute a single `error` row so no cell disappears silently.
pub fn csv_projection(records: &[ResultRecord]) -> String {
    let mut out = String::from("experiment,kind,seed,eps,name,value\n");
    for r in records {
        let prefix = format!("{},{},{},{}", r.experiment, r.kind, r.seed, r.eps);
        for (name, value) in &r.payload {
            out.push_str(&format!("{prefix},{name},{value}\n"));
        }
        if r.error.is_some() {
            out.push_str(&format!("{prefix},error,1\n"));
        }
    }
    out
}

/// Machine summary: config, config hash, assertion outcomes, record counts.
pub fn summary_json(records: &[ResultRecord], assertions: &[Assertion], hash: &str) -> serde_json::Value {
    let config = records.first().map(|r| r.config.clone()).unwrap_or_default();
    let errors: Vec<_> = records
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| serde_json::json!({ "seed": r.seed, "eps": r.eps, "error": e }))
        })
        .collect();
    serde_json::json!({
        "experiment": records.first().map(|r| r.experiment.as_str()).unwrap_or(""),
        "config": config,
        "config_hash": hash,
        "records": records.len(),
        "cell_errors": errors,
        "passed": assertions.iter().all(|a| a.passed),
        "assertions": assertions,
    })
}

/// Human summary: one PASS/FAIL line per assertion, then error cells.
pub fn summary_text(records: &[ResultRecord], assertions: &[Assertion], hash: &str) -> String {
    let name = records.first().map(|r| r.experiment.as_str()).unwrap_or("(no records)");
    let mut out = format!("experiment {name}  config {hash}  records {}\n", records.len());
    for a in assertions {
        let tag = if a.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{tag}  {}: {}\n", a.name, a.detail));
    }
    let failed: Vec<_> = records.iter().filter(|r| r.error.is_some()).collect();
    if !failed.is_empty() {
        out.push_str(&format!("{} cell(s) errored:\n", failed.len()));
        for r in failed {
            out.push_str(&format!(
                "  seed {} eps {}: {}\n",
                r.seed,
                r.eps,
                r.error.as_deref().unwrap_or("")
            ));
        }
    }
    out
}

/// Strips wall-clock metadata so two runs can be compared for determinism.
pub fn canonical_payloads(records: &[ResultRecord]) -> Vec<(String, String, u64, String, Vec<(String, f64)>)> {
    records
        .iter()
        .map(|r| {
            (
                r.experiment.clone(),
                r.kind.clone(),
                r.seed,
                r.eps.to_string(),
                r.payload.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            )
        })
        .collect()
}
