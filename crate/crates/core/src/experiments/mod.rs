//! Config-driven verification experiments.
//!
//! An experiment is a pure function of its config: cells keyed by (seed, eps)
//! run in a work pool, every cell lands in the output as a result or a
//! recorded error, and derived fit/aggregate records plus pass/fail
//! assertions are computed from the cells. Identical configs produce
//! byte-identical numeric payloads regardless of pool width.

pub mod config;
pub mod fit;
pub mod record;
pub mod run;

pub use config::{dyadic_ladder, parse_kv, parse_seeds, ExperimentConfig, ExperimentKind};
pub use fit::{fit_divergence, DivergenceModel};
pub use record::{
    canonical_payloads, csv_projection, read_jsonl, summary_json, summary_text, write_jsonl,
    Assertion, RecordMeta, ResultRecord,
};
pub use run::{assess, run_experiment, RunOutput};
