use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::baselines::{dt_fit, dt_predict, flatten_dataset, knn_predict, nb_fit, nb_predict, FlatSample};
use crate::channel::ChannelConfig;
use crate::fingerprint::{generate_dataset, split_train_test, LabeledDataset, SplitMode, Standardizer};
use crate::seed::{derive_seed, rng_for};
use crate::tdgcn::{evaluate, train, TrainLog};

use super::{accuracy, EvalError, ExperimentConfig, Method, SplitKind, SweepAxis};

const TAG_DATA: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_SPLIT: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub sweep: String,
    pub coordinate: f64,
    pub method: Method,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
    pub epochs: usize,
    /// Set when this point failed; the accuracies are then meaningless.
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
    pub epochs: usize,
    pub log: Option<TrainLog>,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub axis: String,
    pub rows: Vec<ResultRow>,
    /// TDGCN training logs keyed by sweep label.
    pub logs: Vec<(String, TrainLog)>,
}

impl SweepOutput {
    pub fn row(&self, sweep: &str, method: Method) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.sweep == sweep && r.method == method)
    }
}

/// Noise-free dataset for the configured scenario and seed.
pub fn clean_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset, EvalError> {
    Ok(generate_dataset(
        &cfg.scenario_channel()?,
        cfg.sequences_per_class,
        cfg.seq_len,
        derive_seed(cfg.seed, &[TAG_DATA]),
    )?)
}

/// The scenario dataset with noise at `snr_db` on every sequence.
pub fn noisy_dataset(cfg: &ExperimentConfig, snr_db: f64) -> Result<LabeledDataset, EvalError> {
    let mut rng = rng_for(cfg.seed, &[TAG_NOISE, 0]);
    Ok(clean_dataset(cfg)?.with_noise(snr_db, &mut rng)?)
}

pub fn split_mode(cfg: &ExperimentConfig) -> SplitMode {
    match cfg.split {
        SplitKind::Temporal => SplitMode::Temporal,
        SplitKind::Random => SplitMode::Random(derive_seed(cfg.seed, &[TAG_SPLIT])),
    }
}

/// Adds noise at `snr_db` and splits; `point` selects the noise stream.
pub fn prepare_split(
    cfg: &ExperimentConfig,
    clean: &LabeledDataset,
    snr_db: f64,
    point: usize,
) -> Result<(LabeledDataset, LabeledDataset), EvalError> {
    let mode = split_mode(cfg);
    let mut rng = rng_for(cfg.seed, &[TAG_NOISE, point as u64]);
    if cfg.noise_test_only {
        let (train, test) = split_train_test(clean, cfg.train_fraction, mode)?;
        Ok((train, test.with_noise(snr_db, &mut rng)?))
    } else {
        let noisy = clean.with_noise(snr_db, &mut rng)?;
        Ok(split_train_test(&noisy, cfg.train_fraction, mode)?)
    }
}

fn flat_pair(train: &LabeledDataset, test: &LabeledDataset) -> Result<(Vec<FlatSample>, Vec<FlatSample>), EvalError> {
    let s = Standardizer::fit(train);
    Ok((flatten_dataset(&s.apply(train)?), flatten_dataset(&s.apply(test)?)))
}

fn score(samples: &[FlatSample], mut predict: impl FnMut(&[f64]) -> Result<usize, EvalError>) -> Result<f64, EvalError> {
    let predicted = samples
        .iter()
        .map(|s| predict(&s.features))
        .collect::<Result<Vec<_>, _>>()?;
    let actual: Vec<usize> = samples.iter().map(|s| s.label).collect();
    accuracy(&actual, &predicted)
}

/// Fits one method on `train` and scores it on both splits.
pub fn run_method(
    method: Method,
    train_ds: &LabeledDataset,
    test_ds: &LabeledDataset,
    cfg: &ExperimentConfig,
) -> Result<MethodOutcome, EvalError> {
    let started = Instant::now();
    let (train_acc, test_acc, epochs, log) = match method {
        Method::Tdgcn => {
            let tc = cfg.train_config();
            let (model, log) = train(train_ds, Some(test_ds), &tc)?;
            let train_acc = evaluate(&model, train_ds)?.1;
            let test_acc = match log.last().and_then(|r| r.test_acc) {
                Some(a) => a,
                None => evaluate(&model, test_ds)?.1,
            };
            (train_acc, test_acc, tc.epochs, Some(log))
        }
        Method::Knn => {
            let (tr, te) = flat_pair(train_ds, test_ds)?;
            let k = cfg.knn_k;
            let a = score(&tr, |q| Ok(knn_predict(&tr, q, k)?))?;
            let b = score(&te, |q| Ok(knn_predict(&tr, q, k)?))?;
            (a, b, 0, None)
        }
        Method::Dt => {
            let (tr, te) = flat_pair(train_ds, test_ds)?;
            let tree = dt_fit(&tr, cfg.dt_max_depth)?;
            let a = score(&tr, |q| Ok(dt_predict(&tree, q)))?;
            let b = score(&te, |q| Ok(dt_predict(&tree, q)))?;
            (a, b, 0, None)
        }
        Method::Nb => {
            let (tr, te) = flat_pair(train_ds, test_ds)?;
            let model = nb_fit(&tr)?;
            let a = score(&tr, |q| Ok(nb_predict(&model, q)))?;
            let b = score(&te, |q| Ok(nb_predict(&model, q)))?;
            (a, b, 0, None)
        }
    };
    Ok(MethodOutcome {
        train_acc,
        test_acc,
        seconds: started.elapsed().as_secs_f64(),
        epochs,
        log,
    })
}

fn point_channel(cfg: &ExperimentConfig, i: usize) -> Result<(ChannelConfig, f64), EvalError> {
    let mut channel = cfg.channel.clone();
    let mut snr = cfg.snr_db;
    match &cfg.sweep {
        SweepAxis::SnrDb(v) => snr = v[i],
        SweepAxis::AliceSpacing(v) => channel = channel.with_alice_spacing(v[i]),
        SweepAxis::Speed(v) => channel.tx_speed_mps = v[i],
        SweepAxis::Irs(v) => channel.irs_enabled = v[i],
    }
    let scoped = ExperimentConfig {
        channel,
        ..cfg.clone()
    };
    Ok((scoped.scenario_channel()?, snr))
}

/// Runs every method at every sweep point, in sweep order.
///
/// Failures are recorded on the affected rows and the sweep carries on.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput, EvalError> {
    cfg.validate()?;
    let data_seed = derive_seed(cfg.seed, &[TAG_DATA]);
    let mut cache: Option<(ChannelConfig, LabeledDataset)> = None;
    let mut out = SweepOutput {
        axis: cfg.sweep.name().to_owned(),
        rows: Vec::new(),
        logs: Vec::new(),
    };
    for i in 0..cfg.sweep.len() {
        let label = cfg.sweep.label(i);
        let coordinate = cfg.sweep.coordinate(i);
        let failed = |method: Method, e: &EvalError| ResultRow {
            sweep: label.clone(),
            coordinate,
            method,
            train_acc: f64::NAN,
            test_acc: f64::NAN,
            seconds: 0.0,
            epochs: 0,
            error: Some(e.to_string()),
        };
        let split = (|| {
            let (channel, snr) = point_channel(cfg, i)?;
            if cache.as_ref().is_none_or(|(c, _)| *c != channel) {
                let ds = generate_dataset(&channel, cfg.sequences_per_class, cfg.seq_len, data_seed)?;
                cache = Some((channel, ds));
            }
            let clean = &cache.as_ref().expect("dataset cached").1;
            prepare_split(cfg, clean, snr, i)
        })();
        let (train_ds, test_ds) = match split {
            Ok(pair) => pair,
            Err(e) => {
                out.rows.extend(cfg.methods.iter().map(|&m| failed(m, &e)));
                continue;
            }
        };
        for &method in &cfg.methods {
            match run_method(method, &train_ds, &test_ds, cfg) {
                Ok(o) => {
                    if let Some(log) = o.log {
                        out.logs.push((label.clone(), log));
                    }
                    out.rows.push(ResultRow {
                        sweep: label.clone(),
                        coordinate,
                        method,
                        train_acc: o.train_acc,
                        test_acc: o.test_acc,
                        seconds: o.seconds,
                        epochs: o.epochs,
                        error: None,
                    });
                }
                Err(e) => out.rows.push(failed(method, &e)),
            }
        }
    }
    Ok(out)
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Writes `results.csv`, `plot_<axis>.dat`, `timing.csv`, one training log
/// per TDGCN point and, if any point failed, `errors.txt`.
///
/// The `seconds` column of `results.csv` stays empty unless `wall_clock` is
/// set, so that reruns produce identical bytes; wall times always go to
/// `timing.csv`.
pub fn emit_results(out: &SweepOutput, dir: &Path, wall_clock: bool) -> Result<Vec<PathBuf>, EvalError> {
    if out.rows.is_empty() {
        return Err(EvalError::Contract("no result rows to write".into()));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<(), EvalError> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };

    let mut csv = String::from("sweep,method,train_acc,test_acc,seconds,epochs\n");
    for r in &out.rows {
        let secs = if wall_clock { format!("{:.6}", r.seconds) } else { String::new() };
        if r.error.is_some() {
            let _ = writeln!(csv, "{},{},,,{secs},", r.sweep, r.method);
        } else {
            let _ = writeln!(
                csv,
                "{},{},{:.6},{:.6},{secs},{}",
                r.sweep, r.method, r.train_acc, r.test_acc, r.epochs
            );
        }
    }
    put("results.csv".into(), csv)?;

    let mut plot = format!("# {} vs test accuracy, one block per method\n", out.axis);
    let mut methods: Vec<Method> = Vec::new();
    for r in &out.rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    for (b, m) in methods.iter().enumerate() {
        if b > 0 {
            plot.push_str("\n\n");
        }
        let _ = writeln!(plot, "# {m}");
        for r in out.rows.iter().filter(|r| r.method == *m && r.error.is_none()) {
            let _ = writeln!(plot, "{} {:.6}", r.coordinate, r.test_acc);
        }
    }
    put(format!("plot_{}.dat", out.axis), plot)?;

    let mut timing = String::from("sweep,method,epoch,seconds\n");
    for r in out.rows.iter().filter(|r| r.error.is_none()) {
        if r.method == Method::Tdgcn {
            if let Some((_, log)) = out.logs.iter().find(|(l, _)| *l == r.sweep) {
                for e in &log.records {
                    let _ = writeln!(timing, "{},{},{},{:.6}", r.sweep, r.method, e.epoch, e.seconds);
                }
                continue;
            }
        }
        let _ = writeln!(timing, "{},{},0,{:.6}", r.sweep, r.method, r.seconds);
    }
    put("timing.csv".into(), timing)?;

    for (label, log) in &out.logs {
        put(format!("train_log_{}_{}.csv", out.axis, file_label(label)), log.to_csv())?;
    }

    let errors: String = out
        .rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{},{}: {e}\n", r.sweep, r.method)))
        .collect();
    if !errors.is_empty() {
        put("errors.txt".into(), errors)?;
    }
    Ok(written)
}
