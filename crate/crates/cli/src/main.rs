//! `anderson`: runs verification experiments and re-checks their records.
//!
//! Exit codes: 0 success, 1 a requested assertion failed, 2 bad config or
//! unreadable input. Results land in `--out` (or `$ANDERSON_OUT`, or
//! ./anderson-out) as <experiment>.jsonl plus a CSV projection and both
//! summary flavors.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anderson_core::experiments::{
    assess, csv_projection, parse_kv, read_jsonl, run_experiment, summary_json, summary_text,
    write_jsonl, ExperimentConfig, ExperimentKind,
};
use anderson_core::{Error, Result};

#[derive(Parser)]
#[command(name = "anderson", version, about = "Torus Anderson Hamiltonian experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its records.
    Run(Box<RunArgs>),
    /// Re-derive the pass/fail summary from stored records.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment name (see `anderson run --help` for the list).
    #[arg(long)]
    experiment: Option<String>,
    /// key = value file; explicit flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exit 1 if any assertion fails.
    #[arg(long)]
    assert: bool,
    /// Output directory; defaults to $ANDERSON_OUT, then ./anderson-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the cell pool; results do not depend on this.
    #[arg(long)]
    jobs: Option<usize>,

    #[arg(long)]
    dimension: Option<String>,
    #[arg(long)]
    n: Option<String>,
    /// Comma-separated mollification scales.
    #[arg(long)]
    eps: Option<String>,
    /// gaussian or sharp.
    #[arg(long)]
    mollifier: Option<String>,
    /// Either a..b (half-open) or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// pointwise or padded.
    #[arg(long)]
    dealias: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "max_iterations")]
    max_iterations: Option<String>,
    #[arg(long = "second_order_samples")]
    second_order_samples: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    probes: Option<String>,
    #[arg(long = "block_lo")]
    block_lo: Option<String>,
    #[arg(long = "block_hi")]
    block_hi: Option<String>,
    #[arg(long = "heat_time")]
    heat_time: Option<String>,
    #[arg(long = "heat_steps")]
    heat_steps: Option<String>,
    #[arg(long)]
    refine: Option<String>,
    #[arg(long = "allow_underresolved")]
    allow_underresolved: Option<String>,
}

impl RunArgs {
    /// Flags merged over the config file, highest precedence last.
    fn overrides(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("experiment", &self.experiment),
            ("dimension", &self.dimension),
            ("n", &self.n),
            ("eps", &self.eps),
            ("mollifier", &self.mollifier),
            ("seeds", &self.seeds),
            ("dealias", &self.dealias),
            ("tol", &self.tol),
            ("max_iterations", &self.max_iterations),
            ("second_order_samples", &self.second_order_samples),
            ("kappa", &self.kappa),
            ("probes", &self.probes),
            ("block_lo", &self.block_lo),
            ("block_hi", &self.block_hi),
            ("heat_time", &self.heat_time),
            ("heat_steps", &self.heat_steps),
            ("refine", &self.refine),
            ("allow_underresolved", &self.allow_underresolved),
        ]
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding .jsonl record files from earlier runs.
    #[arg(long = "in")]
    input: PathBuf,
    /// Exit 1 if any re-derived assertion fails.
    #[arg(long)]
    assert: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Report(args) => cmd_report(&args),
    };
    match outcome {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("ANDERSON_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("anderson-out"))
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let mut map = BTreeMap::new();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        map.extend(parse_kv(&text)?);
    }
    for (key, value) in args.overrides() {
        if let Some(v) = value {
            map.insert(key.to_string(), v.clone());
        }
    }
    let config = ExperimentConfig::from_map(&map)?;
    if let Some(jobs) = args.jobs {
        // a failure here means a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }

    let output = run_experiment(&config)?;
    let dir = out_dir(&args.out);
    fs::create_dir_all(&dir)?;
    let stem = config.experiment.name();
    let mut jsonl = BufWriter::new(fs::File::create(dir.join(format!("{stem}.jsonl")))?);
    write_jsonl(&output.records, &mut jsonl)?;
    fs::write(dir.join(format!("{stem}.csv")), csv_projection(&output.records))?;
    let text = summary_text(&output.records, &output.assertions, &config.hash());
    fs::write(dir.join(format!("{stem}.summary.txt")), &text)?;
    let json = summary_json(&output.records, &output.assertions, &config.hash());
    fs::write(
        dir.join(format!("{stem}.summary.json")),
        format!("{}\n", serde_json::to_string_pretty(&json)?),
    )?;
    print!("{text}");
    Ok(!args.assert || output.passed())
}

fn cmd_report(args: &ReportArgs) -> Result<bool> {
    let mut files: Vec<PathBuf> = fs::read_dir(&args.input)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.input.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::NoData(args.input.display().to_string()));
    }
    let mut all_passed = true;
    for path in files {
        let records = read_jsonl(BufReader::new(fs::File::open(&path)?))?;
        let Some(first) = records.first() else {
            continue;
        };
        let kind: ExperimentKind = first.experiment.parse()?;
        // snapshot round-trips, so stored records re-derive their own hash
        let hash = ExperimentConfig::from_map(&first.config)?.hash();
        let assertions = assess(kind, &records);
        all_passed &= assertions.iter().all(|a| a.passed);
        print!("{}", summary_text(&records, &assertions, &hash));
    }
    Ok(!args.assert || all_passed)
}
