//! `pla`: generate CSI fingerprint datasets, train and evaluate TDGCN
//! models, run baselines and parameter sweeps.
//!
//! Failures print one JSON object on stderr and exit with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pla_core::baselines::{dt_fit, dt_predict, flatten_dataset, knn_predict, nb_fit, nb_predict};
use pla_core::eval::{
    accuracy, confusion_matrix, emit_results, noisy_dataset, run_sweep, split_mode, EvalError, ExperimentConfig, Method,
};
use pla_core::fingerprint::{read_dataset, split_train_test, write_dataset, LabeledDataset, Standardizer};
use pla_core::tdgcn::{evaluate, train, Tdgcn};

#[derive(Parser)]
#[command(name = "pla", version, about = "IRS-assisted CSI fingerprint authentication workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labelled dataset and write it as CSIF.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Noise level in dB, or `inf` for clean traces.
        #[arg(long = "snr-db")]
        snr_db: Option<f64>,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a TDGCN on the training split of a CSIF file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Output directory for `model.ckpt` and `train_log.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test split of a CSIF file.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Score every sequence instead of the test split.
        #[arg(long)]
        all: bool,
    },
    /// Run the configured sweep and write result files.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Base noise level for sweeps over other axes.
        #[arg(long = "snr-db")]
        snr_db: Option<f64>,
        /// Output directory; falls back to `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fill the seconds column of results.csv (not reproducible).
        #[arg(long)]
        wall_clock: bool,
        /// Run only this method.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Fit a classical baseline on the training split of a CSIF file.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        data: PathBuf,
    },
}

type CliResult = Result<serde_json::Value, Box<dyn std::error::Error>>;

fn load_config(common: &Common) -> Result<ExperimentConfig, EvalError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn split(cfg: &ExperimentConfig, ds: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset), EvalError> {
    Ok(split_train_test(ds, cfg.train_fraction, split_mode(cfg))?)
}

fn metrics(actual: &[usize], predicted: &[usize], k: usize) -> CliResult {
    Ok(json!({
        "samples": actual.len(),
        "accuracy": accuracy(actual, predicted)?,
        "confusion": confusion_matrix(actual, predicted, k)?,
    }))
}

fn generate(common: &Common, snr_db: Option<f64>, out: &Path) -> CliResult {
    let cfg = load_config(common)?;
    let snr = snr_db.unwrap_or(cfg.snr_db);
    let ds = noisy_dataset(&cfg, snr)?;
    write_dataset(&ds, out)?;
    Ok(json!({
        "path": out.display().to_string(),
        "classes": ds.k(),
        "sequences": ds.len(),
        "d": ds.d(),
        "l": ds.l(),
        "snr_db": if snr.is_finite() { json!(snr) } else { json!("inf") },
    }))
}

fn train_cmd(common: &Common, data: &Path, out: &Path) -> CliResult {
    let cfg = load_config(common)?;
    let ds = read_dataset(data)?;
    let (train_ds, test_ds) = split(&cfg, &ds)?;
    let (model, log) = train(&train_ds, Some(&test_ds), &cfg.train_config())?;
    std::fs::create_dir_all(out)?;
    let ckpt = out.join("model.ckpt");
    model.save(&ckpt)?;
    std::fs::write(out.join("train_log.csv"), log.to_csv())?;
    let last = log.last();
    Ok(json!({
        "checkpoint": ckpt.display().to_string(),
        "epochs": log.records.len(),
        "train_loss": last.map(|r| r.train_loss),
        "test_acc": last.and_then(|r| r.test_acc),
    }))
}

fn eval_cmd(common: &Common, checkpoint: &Path, data: &Path, all: bool) -> CliResult {
    let cfg = load_config(common)?;
    let model = Tdgcn::load(checkpoint)?;
    let ds = read_dataset(data)?;
    let target = if all { ds } else { split(&cfg, &ds)?.1 };
    let (predicted, _) = evaluate(&model, &target)?;
    metrics(&target.labels(), &predicted, target.k())
}

fn sweep_cmd(
    common: &Common,
    snr_db: Option<f64>,
    out: Option<&Path>,
    wall_clock: bool,
    method: Option<Method>,
) -> CliResult {
    let mut cfg = load_config(common)?;
    if let Some(snr) = snr_db {
        cfg.snr_db = snr;
    }
    if let Some(m) = method {
        cfg.methods = vec![m];
    }
    let dir = match (out, &cfg.out_dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => return Err("sweep needs --out or out_dir in the config".into()),
    };
    let result = run_sweep(&cfg)?;
    let files = emit_results(&result, &dir, wall_clock)?;
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    Ok(json!({
        "rows": result.rows.len(),
        "failed_rows": failed,
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    }))
}

fn baseline_cmd(common: &Common, method: Method, data: &Path) -> CliResult {
    let cfg = load_config(common)?;
    let ds = read_dataset(data)?;
    let (train_ds, test_ds) = split(&cfg, &ds)?;
    let st = Standardizer::fit(&train_ds);
    let train_flat = flatten_dataset(&st.apply(&train_ds)?);
    let test_flat = flatten_dataset(&st.apply(&test_ds)?);
    let queries = test_flat.iter().map(|s| s.features.as_slice());
    let predicted: Vec<usize> = match method {
        Method::Knn => queries
            .map(|q| knn_predict(&train_flat, q, cfg.knn_k))
            .collect::<Result<_, _>>()?,
        Method::Dt => {
            let tree = dt_fit(&train_flat, cfg.dt_max_depth)?;
            queries.map(|q| dt_predict(&tree, q)).collect()
        }
        Method::Nb => {
            let model = nb_fit(&train_flat)?;
            queries.map(|q| nb_predict(&model, q)).collect()
        }
        Method::Tdgcn => return Err("tdgcn is not a baseline; use `train` and `eval`".into()),
    };
    let actual: Vec<usize> = test_flat.iter().map(|s| s.label).collect();
    let mut m = metrics(&actual, &predicted, ds.k())?;
    m["method"] = json!(method.name());
    Ok(m)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { common, snr_db, out } => generate(common, *snr_db, out),
        Command::Train { common, data, out } => train_cmd(common, data, out),
        Command::Eval {
            common,
            checkpoint,
            data,
            all,
        } => eval_cmd(common, checkpoint, data, *all),
        Command::Sweep {
            common,
            snr_db,
            out,
            wall_clock,
            method,
        } => sweep_cmd(common, *snr_db, out.as_deref(), *wall_clock, *method),
        Command::Baseline { common, method, data } => baseline_cmd(common, *method, data),
    };
    match result {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
