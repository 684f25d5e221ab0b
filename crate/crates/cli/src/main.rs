//! `trajid`: generate synthetic catalogs, validate and preprocess recordings,
//! run cross-validated training and print run reports.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 training divergence.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use trajid::autodiff::OptimizerConfig;
use trajid::dsp::{preprocess, write_windowset, FilterMode, FilterSpec, NormStats, StatsSource};
use trajid::harness::{load_summary, run_cross_validation, LeakageMode, RunConfig, SubsetSpec};
use trajid::ingest::{load_catalog, TrialKey};
use trajid::syngen::{synth_catalog, write_dataset, SynthConfig};

use config::{merge, required, GenerateSettings, PreprocessSettings, TrainSettings};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Divergence(m) => m,
        }
    }
}

impl From<trajid::Error> for CliError {
    fn from(e: trajid::Error) -> Self {
        if e.is_divergence() {
            CliError::Divergence(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn data_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "trajid", version, about = "Identify people from hand-movement trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic center-out catalog (CSV trials plus manifest.json).
    Generate(GenerateArgs),
    /// Load and validate a manifest and its trial files.
    Ingest(IngestArgs),
    /// Filter, z-score and window a catalog into a window file.
    Preprocess(PreprocessArgs),
    /// Cross-validated training; writes a run directory.
    Train(TrainArgs),
    /// Print a finished run's summary.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    subjects: Option<u32>,
    #[arg(long)]
    trials_per_target: Option<u32>,
    /// 1 keeps the drawn subject signatures apart, 0 makes all subjects identical.
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling rate in Hz.
    #[arg(long)]
    fs: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with any of the above; explicit flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Only validate; print nothing on success.
    #[arg(long)]
    check: bool,
}

#[derive(Debug, Args, Serialize)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `butter:<order>:<cutoff_hz>`.
    #[arg(long)]
    filter: Option<String>,
    /// `zero-phase` or `causal`.
    #[arg(long)]
    mode: Option<String>,
    /// Window length in samples.
    #[arg(long)]
    window: Option<usize>,
    /// Apply these normalization statistics (a `.stats.json` sidecar) instead
    /// of computing them from the catalog.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `all`, `equidistant:<n>` or `ids:<a>,<b>,...`.
    #[arg(long)]
    subset: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    width_mult: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// Split granularity: `trial` or `window`.
    #[arg(long)]
    leakage: Option<String>,
    /// Folds trained in parallel (ignored in determinism mode).
    #[arg(long)]
    jobs: Option<usize>,
    /// `on` (default) or `off`.
    #[arg(long)]
    determinism: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    /// Print the summed confusion matrix in row percent.
    #[arg(long)]
    confusion: bool,
    /// Print per-target accuracy medians over folds.
    #[arg(long)]
    per_target: bool,
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let s: GenerateSettings = merge(&args, args.config.as_deref())?;
    let out = required(s.out, "out")?;
    let mut cfg = SynthConfig::new(s.subjects, s.trials_per_target, s.separation, s.seed);
    cfg.fs = s.fs;
    let (catalog, sigs) = synth_catalog(&cfg).map_err(data_err)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("creating {}: {e}", out.display())))?;
    let manifest = write_dataset(&out, &catalog, &sigs).map_err(|e| CliError::Data(format!("writing {}: {e}", out.display())))?;
    info!("wrote {} trials, manifest {}", catalog.len(), manifest.display());
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<(), CliError> {
    let catalog = load_catalog(&args.manifest).map_err(data_err)?;
    if !args.check {
        println!(
            "{} trials, {} participants, {} Hz",
            catalog.len(),
            catalog.participants().len(),
            catalog.fs().unwrap_or(f64::NAN)
        );
        for p in catalog.participants() {
            println!("participant {:>3}: {} trials", p.id, p.n_trials);
        }
    }
    Ok(())
}

fn filter_spec(text: &str, mode: &str, fs: f64) -> Result<FilterSpec, CliError> {
    let mode: FilterMode = mode.parse().map_err(CliError::Usage)?;
    FilterSpec::parse(text, fs, mode).map_err(|e| CliError::Usage(e.to_string()))
}

fn run_preprocess(args: PreprocessArgs) -> Result<(), CliError> {
    let s: PreprocessSettings = merge(&args, args.config.as_deref())?;
    let manifest = required(s.manifest, "manifest")?;
    let out = required(s.out, "out")?;
    let catalog = load_catalog(&manifest).map_err(data_err)?;
    let fs = catalog.fs().ok_or_else(|| CliError::Data("catalog is empty".into()))?;
    let spec = filter_spec(&s.filter, &s.mode, fs)?;
    if s.window == 0 {
        return Err(CliError::Usage("--window must be positive".into()));
    }
    let keys: Vec<TrialKey> = catalog.trials().iter().map(|t| t.key()).collect();
    let source = match &s.stats {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
            let stats: NormStats = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            StatsSource::Given(stats)
        }
        None => StatsSource::Training {
            keys: &keys,
            tag: format!("all trials of {}", manifest.display()),
        },
    };
    let set = preprocess(&catalog, &spec, s.window, source).map_err(data_err)?;
    write_windowset(&out, &set).map_err(data_err)?;
    info!("wrote {} windows to {}", set.len(), out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let s: TrainSettings = merge(&args, args.config.as_deref())?;
    let manifest = required(s.manifest, "manifest")?;
    let out = required(s.out, "out")?;
    let catalog = load_catalog(&manifest).map_err(data_err)?;
    let fs = catalog.fs().ok_or_else(|| CliError::Data("catalog is empty".into()))?;
    let deterministic = match s.determinism.as_str() {
        "on" => true,
        "off" => false,
        other => return Err(CliError::Usage(format!("--determinism must be on or off, got {other}"))),
    };
    let leakage: LeakageMode = s.leakage.parse().map_err(|e: trajid::harness::HarnessError| CliError::Usage(e.to_string()))?;
    let defaults = OptimizerConfig::default();
    let OptimizerConfig::Adam { beta1, beta2, eps, .. } = defaults else {
        unreachable!("the default optimizer is Adam")
    };
    let cfg = RunConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        optimizer: OptimizerConfig::Adam {
            lr: s.lr,
            beta1,
            beta2,
            eps,
        },
        seed: s.seed,
        window: s.window,
        filter: filter_spec(&s.filter, &s.mode, fs)?,
        subset: SubsetSpec::parse(&s.subset).map_err(|e| CliError::Usage(e.to_string()))?,
        leakage,
        folds: s.folds,
        width_mult: s.width_mult,
        deterministic,
        jobs: s.jobs,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let summary = run_cross_validation(&catalog, &cfg, &out)?;
    info!(
        "mean window accuracy {:.4} over {} folds; run written to {}",
        summary.window_accuracy.mean,
        summary.n_folds,
        out.display()
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let s = load_summary(&args.run)?;
    print_report(&args.run, &s, args.confusion, args.per_target);
    Ok(())
}

fn print_report(dir: &Path, s: &trajid::harness::RunSummary, confusion: bool, per_target: bool) {
    println!("run {}", dir.display());
    println!("{} folds, participants {:?}", s.n_folds, s.class_ids);
    for (name, sp) in [("window", &s.window_accuracy), ("trial", &s.trial_accuracy)] {
        println!(
            "{name:>6} accuracy: mean {:.4}  median {:.4}  min {:.4}  max {:.4}",
            sp.mean, sp.median, sp.min, sp.max
        );
    }
    println!("fold  best_epoch  window_acc  trial_acc  test_windows");
    for f in &s.folds {
        println!(
            "{:>4}  {:>10}  {:>10.4}  {:>9.4}  {:>12}",
            f.fold_id, f.best_epoch, f.window_accuracy, f.trial_accuracy, f.n_test_windows
        );
    }
    if confusion {
        println!("confusion (row %, true participant by predicted participant)");
        let header: Vec<String> = s.class_ids.iter().map(|id| format!("{id:>4}")).collect();
        println!("      {}", header.join(""));
        for (id, row) in s.class_ids.iter().zip(&s.confusion_percent) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>4}")).collect();
            println!("{id:>4}  {}", cells.join(""));
        }
    }
    if per_target {
        println!("target  median  mean    folds");
        for t in &s.per_target {
            let fmt = |v: Option<f64>| v.map_or("absent".to_string(), |x| format!("{x:.4}"));
            println!("{:>6}  {:<6}  {:<6}  {}", t.target, fmt(t.median), fmt(t.mean), t.values.len());
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Ingest(a) => ingest(a),
        Command::Preprocess(a) => run_preprocess(a),
        Command::Train(a) => train(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
