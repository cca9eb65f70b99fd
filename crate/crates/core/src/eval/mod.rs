//! Metrics, experiment configuration and sweeps over scenario parameters.

mod sweep;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::BaselineError;
use crate::channel::{ChannelConfig, ChannelError};
use crate::fingerprint::FingerprintError;
use crate::tdgcn::{TdgcnError, TrainConfig};

pub use sweep::{
    clean_dataset, emit_results, noisy_dataset, prepare_split, run_method, run_sweep, split_mode, MethodOutcome, ResultRow,
    SweepOutput,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Data(#[from] FingerprintError),
    #[error(transparent)]
    Model(#[from] TdgcnError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Fraction of exactly matched labels.
pub fn accuracy(actual: &[usize], predicted: &[usize]) -> Result<f64, EvalError> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(EvalError::Contract(format!(
            "accuracy needs equal non-empty label lists, got {} and {}",
            actual.len(),
            predicted.len()
        )));
    }
    let hits = actual.iter().zip(predicted).filter(|(a, p)| a == p).count();
    Ok(hits as f64 / actual.len() as f64)
}

/// `K × K` counts; row = actual class, column = predicted class (0-based).
pub fn confusion_matrix(actual: &[usize], predicted: &[usize], k: usize) -> Result<Vec<Vec<usize>>, EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::Contract(format!(
            "label lists differ in length: {} vs {}",
            actual.len(),
            predicted.len()
        )));
    }
    let mut m = vec![vec![0; k]; k];
    for (&a, &p) in actual.iter().zip(predicted) {
        if a >= k || p >= k {
            return Err(EvalError::Contract(format!("label pair ({a}, {p}) outside 0..{k}")));
        }
        m[a][p] += 1;
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tdgcn,
    Knn,
    Dt,
    Nb,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Tdgcn, Method::Knn, Method::Dt, Method::Nb];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tdgcn => "tdgcn",
            Method::Knn => "knn",
            Method::Dt => "dt",
            Method::Nb => "nb",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| EvalError::Config(format!("unknown method {s:?}; expected tdgcn, knn, dt or nb")))
    }
}

/// The single scenario parameter varied by a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    SnrDb(Vec<f64>),
    AliceSpacing(Vec<f64>),
    Speed(Vec<f64>),
    Irs(Vec<bool>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SnrDb(_) => "snr_db",
            SweepAxis::AliceSpacing(_) => "alice_spacing",
            SweepAxis::Speed(_) => "speed",
            SweepAxis::Irs(_) => "irs",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::SnrDb(v) | SweepAxis::AliceSpacing(v) | SweepAxis::Speed(v) => v.len(),
            SweepAxis::Irs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label written to the `sweep` column.
    pub fn label(&self, i: usize) -> String {
        match self {
            SweepAxis::SnrDb(v) | SweepAxis::AliceSpacing(v) | SweepAxis::Speed(v) => format_value(v[i]),
            SweepAxis::Irs(v) => if v[i] { "on" } else { "off" }.to_owned(),
        }
    }

    /// Numeric x coordinate for plot files; IRS on/off maps to 1/0.
    pub fn coordinate(&self, i: usize) -> f64 {
        match self {
            SweepAxis::SnrDb(v) | SweepAxis::AliceSpacing(v) | SweepAxis::Speed(v) => v[i],
            SweepAxis::Irs(v) => f64::from(u8::from(v[i])),
        }
    }
}

fn format_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// Earlier slots of each transmitter train, later slots test.
    Temporal,
    /// Per-class shuffle seeded from the experiment seed.
    Random,
}

/// Everything a sweep needs. The experiment seed also replaces `train.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Noise level when the sweep axis is not SNR; `inf` means no noise.
    pub snr_db: f64,
    pub sequences_per_class: usize,
    pub seq_len: usize,
    pub train_fraction: f64,
    pub split: SplitKind,
    /// Add noise to the test split only.
    pub noise_test_only: bool,
    /// Indices into Alices-then-Eves; all transmitters when absent.
    pub transmitters: Option<Vec<usize>>,
    pub methods: Vec<Method>,
    pub knn_k: usize,
    pub dt_max_depth: usize,
    pub out_dir: Option<String>,
    pub sweep: SweepAxis,
    pub channel: ChannelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            snr_db: 30.0,
            sequences_per_class: 200,
            seq_len: 50,
            train_fraction: 0.8,
            split: SplitKind::Temporal,
            noise_test_only: false,
            transmitters: None,
            methods: Method::ALL.to_vec(),
            knn_k: 5,
            dt_max_depth: 12,
            out_dir: None,
            sweep: SweepAxis::SnrDb(vec![0.0, 10.0, 20.0, 30.0]),
            channel: ChannelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, EvalError> {
        let cfg: Self = toml::from_str(text).map_err(|e| EvalError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let fail = |m: String| Err(EvalError::Config(m));
        if self.sweep.is_empty() {
            return fail("sweep has no values".into());
        }
        if self.methods.is_empty() {
            return fail("no methods selected".into());
        }
        if self.sequences_per_class == 0 || self.seq_len == 0 {
            return fail("sequence count and length must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(format!("train fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.snr_db.is_nan() {
            return fail("snr_db is NaN".into());
        }
        if self.knn_k == 0 {
            return fail("knn_k must be at least 1".into());
        }
        self.scenario_channel()?.validate()?;
        Ok(())
    }

    /// Channel configuration restricted to the selected transmitters.
    pub fn scenario_channel(&self) -> Result<ChannelConfig, EvalError> {
        Ok(match &self.transmitters {
            Some(idx) => self.channel.select_transmitters(idx)?,
            None => self.channel.clone(),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}
