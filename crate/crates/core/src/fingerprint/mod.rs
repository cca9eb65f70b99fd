//! CSI fingerprints as real multivariate time series.
//!
//! A complex `N_R × N_T` cascade channel becomes a real vector of length
//! `d = 2·N_R·N_T` (row-major real parts, then row-major imaginary parts).
//! Consecutive vectors are cut into non-overlapping windows of `l` samples,
//! each stored as a `d × l` matrix.

mod csif;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::channel::{add_awgn, ChannelConfig, ChannelError, ComplexMatrix, TraceGenerator};

pub use csif::{read_dataset, write_dataset, CSIF_MAGIC, CSIF_VERSION};

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("size error: {0}")]
    Size(String),
    #[error("class index {index} out of range for {classes} classes")]
    Index { index: usize, classes: usize },
    #[error("CSIF format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major real parts followed by row-major imaginary parts.
pub fn flatten_csi(x: &ComplexMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * x.data().len());
    out.extend(x.data().iter().map(|v| v.re));
    out.extend(x.data().iter().map(|v| v.im));
    out
}

/// Inverse of [`flatten_csi`].
pub fn unflatten_csi(v: &[f64], rows: usize, cols: usize) -> Result<ComplexMatrix, FingerprintError> {
    let n = rows * cols;
    if v.len() != 2 * n {
        return Err(FingerprintError::Size(format!(
            "{rows}x{cols} CSI needs {} reals, got {}",
            2 * n,
            v.len()
        )));
    }
    let data = (0..n).map(|i| Complex64::new(v[i], v[n + i])).collect();
    Ok(ComplexMatrix::from_vec(rows, cols, data)?)
}

/// One authentication sample: a `d × l` window of fingerprint vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintSequence {
    pub d: usize,
    pub l: usize,
    /// Row-major `d × l`: `data[i * l + t]` is dimension `i` at time `t`.
    pub data: Vec<f64>,
    pub tx_index: usize,
    pub slot_index: usize,
}

impl FingerprintSequence {
    pub fn value(&self, dim: usize, t: usize) -> f64 {
        self.data[dim * self.l + t]
    }

    pub fn dim_series(&self, dim: usize) -> &[f64] {
        &self.data[dim * self.l..(dim + 1) * self.l]
    }

    /// Fingerprint vector at time `t` (a column of the matrix).
    pub fn sample(&self, t: usize) -> Vec<f64> {
        (0..self.d).map(|i| self.value(i, t)).collect()
    }
}

/// Cuts a stream of `d`-vectors into disjoint windows of `l` samples.
pub fn segment_sequences(
    samples: &[Vec<f64>],
    l: usize,
    tx_index: usize,
) -> Result<Vec<FingerprintSequence>, FingerprintError> {
    if l == 0 || samples.is_empty() || samples.len() % l != 0 {
        return Err(FingerprintError::Size(format!(
            "{} samples cannot be split into windows of {l}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(FingerprintError::Size("samples have differing dimensions".into()));
    }
    Ok(samples
        .chunks_exact(l)
        .enumerate()
        .map(|(slot, window)| {
            let mut data = vec![0.0; d * l];
            for (t, s) in window.iter().enumerate() {
                for (i, v) in s.iter().enumerate() {
                    data[i * l + t] = *v;
                }
            }
            FingerprintSequence {
                d,
                l,
                data,
                tx_index,
                slot_index: slot,
            }
        })
        .collect())
}

/// One-hot identity label for a 0-based `class` among `classes`.
pub fn one_hot(class: usize, classes: usize) -> Result<Vec<f64>, FingerprintError> {
    if class >= classes {
        return Err(FingerprintError::Index {
            index: class,
            classes,
        });
    }
    let mut v = vec![0.0; classes];
    v[class] = 1.0;
    Ok(v)
}

/// Sequences of `k` transmitters, grouped by transmitter then slot.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    k: usize,
    d: usize,
    l: usize,
    sequences: Vec<FingerprintSequence>,
}

impl LabeledDataset {
    pub fn new(
        k: usize,
        d: usize,
        l: usize,
        mut sequences: Vec<FingerprintSequence>,
    ) -> Result<Self, FingerprintError> {
        for s in &sequences {
            if s.d != d || s.l != l || s.data.len() != d * l {
                return Err(FingerprintError::Size(format!(
                    "sequence of {}x{} in a {d}x{l} dataset",
                    s.d, s.l
                )));
            }
            if s.tx_index >= k {
                return Err(FingerprintError::Index {
                    index: s.tx_index,
                    classes: k,
                });
            }
            if s.data.iter().any(|v| !v.is_finite()) {
                return Err(FingerprintError::Size("non-finite fingerprint value".into()));
            }
        }
        sequences.sort_by_key(|s| (s.tx_index, s.slot_index));
        Ok(Self { k, d, l, sequences })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[FingerprintSequence] {
        &self.sequences
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.tx_index).collect()
    }

    pub fn one_hot_labels(&self) -> Vec<Vec<f64>> {
        self.sequences
            .iter()
            .map(|s| one_hot(s.tx_index, self.k).expect("validated on construction"))
            .collect()
    }

    /// `N_k` for every class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for s in &self.sequences {
            counts[s.tx_index] += 1;
        }
        counts
    }

    fn class_block(&self, class: usize) -> &[FingerprintSequence] {
        let start = self.sequences.partition_point(|s| s.tx_index < class);
        let end = self.sequences.partition_point(|s| s.tx_index <= class);
        &self.sequences[start..end]
    }

    /// Adds white noise to every sequence at `snr_db`, measured per sequence.
    pub fn with_noise<R: Rng + ?Sized>(&self, snr_db: f64, rng: &mut R) -> Result<Self, FingerprintError> {
        let mut out = self.clone();
        for s in &mut out.sequences {
            s.data = add_awgn(&s.data, snr_db, rng)?;
        }
        Ok(out)
    }

    pub fn map_sequences(&self, mut f: impl FnMut(&mut FingerprintSequence)) -> Self {
        let mut out = self.clone();
        out.sequences.iter_mut().for_each(&mut f);
        out
    }

    /// CSV with one row per `(sequence, dimension)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,slot,dim");
        for t in 0..self.l {
            out.push_str(&format!(",t{t}"));
        }
        out.push('\n');
        for s in &self.sequences {
            for i in 0..self.d {
                out.push_str(&format!("{},{},{}", s.tx_index, s.slot_index, i));
                for v in s.dim_series(i) {
                    out.push_str(&format!(",{v:e}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Simulates `n_per_class` sequences of length `l` for every configured
/// transmitter; class `k` is transmitter `k` and draws from sub-seed `[k]`.
pub fn generate_dataset(
    cfg: &ChannelConfig,
    n_per_class: usize,
    l: usize,
    seed: u64,
) -> Result<LabeledDataset, FingerprintError> {
    let mut sequences = Vec::with_capacity(cfg.n_transmitters() * n_per_class);
    for tx in 0..cfg.n_transmitters() {
        let rng = crate::seed::rng_for(seed, &[tx as u64]);
        let samples = TraceGenerator::new(cfg, tx, n_per_class * l, rng)?
            .map(|r| r.map(|r| flatten_csi(&r.x)))
            .collect::<Result<Vec<_>, _>>()?;
        sequences.extend(segment_sequences(&samples, l, tx)?);
    }
    LabeledDataset::new(cfg.n_transmitters(), cfg.fingerprint_dim(), l, sequences)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Earliest slots train, later slots test.
    Temporal,
    /// Per-class shuffle with the given seed before cutting.
    Random(u64),
}

/// Per-class split; the first `round(train_fraction·N_k)` sequences train.
pub fn split_train_test(
    ds: &LabeledDataset,
    train_fraction: f64,
    mode: SplitMode,
) -> Result<(LabeledDataset, LabeledDataset), FingerprintError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(FingerprintError::Size(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..ds.k {
        let mut block = ds.class_block(class).to_vec();
        let n_train = (train_fraction * block.len() as f64).round() as usize;
        if n_train == 0 || n_train == block.len() {
            return Err(FingerprintError::Size(format!(
                "class {class} with {} sequences leaves an empty split at fraction {train_fraction}",
                block.len()
            )));
        }
        if let SplitMode::Random(seed) = mode {
            let mut rng = crate::seed::rng_for(seed, &[class as u64]);
            block.shuffle(&mut rng);
        }
        let rest = block.split_off(n_train);
        train.extend(block);
        test.extend(rest);
    }
    Ok((
        LabeledDataset::new(ds.k, ds.d, ds.l, train)?,
        LabeledDataset::new(ds.k, ds.d, ds.l, test)?,
    ))
}

/// Per-dimension standardization fitted on one dataset and applied to others.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &LabeledDataset) -> Self {
        let d = ds.d();
        let count = (ds.len() * ds.l()).max(1) as f64;
        let mut mean = vec![0.0; d];
        for s in ds.sequences() {
            for (i, m) in mean.iter_mut().enumerate() {
                *m += s.dim_series(i).iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for s in ds.sequences() {
            for (i, v) in var.iter_mut().enumerate() {
                *v += s.dim_series(i).iter().map(|x| (x - mean[i]).powi(2)).sum::<f64>();
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &LabeledDataset) -> Result<LabeledDataset, FingerprintError> {
        if ds.d() != self.mean.len() {
            return Err(FingerprintError::Size(format!(
                "standardizer fitted on d={} applied to d={}",
                self.mean.len(),
                ds.d()
            )));
        }
        Ok(ds.map_sequences(|s| {
            let l = s.l;
            for (i, chunk) in s.data.chunks_exact_mut(l).enumerate() {
                for v in chunk {
                    *v = (*v - self.mean[i]) / self.std[i];
                }
            }
        }))
    }
}
