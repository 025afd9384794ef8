//! `spcot`: dataset generation, training, ablation sweeps, evaluation and
//! numerical verification.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 usage or config
//! error, 3 numerical abort during training.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spcot::data::{self, Dataset};
use spcot::engine::{self, TrainError};
use spcot::verify::{self, Fault, VerifyError};
use thiserror::Error;

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "spcot", version, about = "Self-paced, self-consistent co-training for segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        hw: usize,
        #[arg(long, default_value_t = 0.05)]
        labeled_ratio: f64,
    },
    /// Train an ensemble; writes record.csv and a checkpoint.
    Train {
        /// `key = value` file; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory; generated from the config's n/hw/labeled_ratio when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the {spc} x {consistency} grid over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Vote with the students instead of the teachers.
        #[arg(long)]
        students: bool,
    },
    /// Run the numerical certification checks; writes verify.csv.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, hide = true)]
        inject_wrong_gradient: bool,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    NonFinite(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::NonFinite(_) => 3,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::NonFinite { .. } => CliError::NonFinite(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<data::DataError> for CliError {
    fn from(e: data::DataError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::NoCases | VerifyError::TooFewProbes(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn read_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    config::parse(&text).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })
}

fn dataset(cfg: &RunConfig, dir: Option<&Path>) -> Result<Dataset, CliError> {
    match dir {
        Some(dir) => Ok(Dataset::load(dir)?),
        None => data::generate(cfg.train.seed, cfg.data.n, cfg.data.hw, cfg.data.labeled_ratio).map_err(|e| CliError::Usage(e.to_string())),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn fmt_hd(hd: Option<f64>) -> String {
    hd.map(|v| v.to_string()).unwrap_or_else(|| "undefined".into())
}

fn gen_data(out: &Path, seed: u64, n: usize, hw: usize, labeled_ratio: f64) -> Result<(), CliError> {
    let ds = data::generate(seed, n, hw, labeled_ratio).map_err(|e| CliError::Usage(e.to_string()))?;
    ds.save(out)?;
    println!(
        "labeled={} unlabeled={} test={}",
        ds.split.labeled.len(),
        ds.split.unlabeled.len(),
        ds.split.test.len()
    );
    Ok(())
}

fn train(config: Option<&Path>, data_dir: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let cfg = read_config(config)?;
    cfg.train.validate()?;
    let ds = dataset(&cfg, data_dir)?;
    create_dir(out)?;
    let (ens, record) = engine::train_with(&cfg.train, &ds, |_, row| {
        eprintln!(
            "epoch {} loss_sup={:.5} loss_spc={:.5} loss_reg={:.5} val_dsc={:.4}",
            row.epoch, row.loss_sup, row.loss_spc, row.loss_reg, row.val_dsc
        );
    })?;
    write(&out.join("record.csv"), &record.to_csv_string())?;
    engine::save_checkpoint(&out.join("checkpoint"), &ens, record.rows.len())?;
    let eval = engine::evaluate(&ens, &ds, true)?;
    println!("final_dsc={} final_hd={}", eval.dsc, fmt_hd(eval.hd));
    Ok(())
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let seeds: Vec<u64> = text
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("invalid seed `{}` in --seeds", s.trim()))))
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    Ok(seeds)
}

fn ablate(config: Option<&Path>, data_dir: Option<&Path>, out: &Path, seeds: &str) -> Result<(), CliError> {
    let seeds = parse_seeds(seeds)?;
    let cfg = read_config(config)?;
    let mut probe = cfg.train.clone();
    probe.enable_spc = true;
    probe.validate()?;
    let ds = dataset(&cfg, data_dir)?;
    create_dir(out)?;
    let report = engine::run_ablation(&cfg.train, &ds, &seeds)?;
    write(&out.join("ablation.csv"), &report.to_csv_string())?;
    for c in &report.cells {
        let (m, s) = c.dsc_stats();
        println!("{:<17} dsc={m:.4} +- {s:.4} runs={}", c.cell.name(), c.dsc.len());
    }
    for check in report.checks() {
        println!(
            "{} {} ({:.4} vs {:.4}, min gap {})",
            if check.pass { "PASS" } else { "FAIL" },
            check.description,
            check.better,
            check.worse,
            check.min_gap
        );
    }
    let failures: Vec<String> = report.failures().map(|(c, (seed, msg))| format!("{} seed {seed}: {msg}", c.cell.name())).collect();
    if !failures.is_empty() {
        return Err(CliError::Runtime(format!("{} run(s) failed:\n{}", failures.len(), failures.join("\n"))));
    }
    Ok(())
}

fn evaluate(checkpoint: &Path, data_dir: &Path, students: bool) -> Result<(), CliError> {
    let ds = Dataset::load(data_dir)?;
    let (ens, epoch) = engine::load_checkpoint(checkpoint, ds.classes(), 0)?;
    let eval = engine::evaluate(&ens, &ds, !students)?;
    println!(
        "epoch={epoch} dsc={} hd={} hd_undefined={} images={}",
        eval.dsc,
        fmt_hd(eval.hd),
        eval.hd_undefined,
        eval.images
    );
    Ok(())
}

fn run_verify(seed: u64, cases: usize, out: &Path, inject: bool) -> Result<(), CliError> {
    let fault = inject.then_some(Fault::FlipGradientSign);
    let report = verify::run_all(seed, cases, fault)?;
    create_dir(out)?;
    report.save(&out.join("verify.csv"))?;
    for c in &report.checks {
        println!(
            "{} {:<28} cases={:<5} max_error={:e} tolerance={:e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.cases,
            c.max_error,
            c.tolerance
        );
    }
    if !report.pass() {
        return Err(CliError::Runtime("verification failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData {
            out,
            seed,
            n,
            hw,
            labeled_ratio,
        } => gen_data(out, *seed, *n, *hw, *labeled_ratio),
        Command::Train { config, data, out } => train(config.as_deref(), data.as_deref(), out),
        Command::Ablate { config, data, out, seeds } => ablate(config.as_deref(), data.as_deref(), out, seeds),
        Command::Evaluate {
            checkpoint,
            data,
            students,
        } => evaluate(checkpoint, data, *students),
        Command::Verify {
            seed,
            cases,
            out,
            inject_wrong_gradient,
        } => run_verify(*seed, *cases, out, *inject_wrong_gradient),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
