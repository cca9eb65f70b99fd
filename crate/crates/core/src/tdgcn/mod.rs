//! Temporal dynamic graph convolutional network.
//!
//! Each fingerprint dimension is a graph node. A causal TCN extracts
//! per-node temporal features, the time axis is cut into slots with their
//! own similarity graphs, and three dynamic GIN layers with cluster pooling
//! feed a softmax classifier.

pub mod graph;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::FingerprintError;
use crate::numerics::{NumericsError, Tensor, LOG_CLAMP};

pub use graph::{
    adjacency, adjacency_values, build_dynamic_graphs, cluster_count, cluster_pool, coarsen, dyn_gin_layer,
    gin_layer_static, similarity_matrix, DynGraphState, GinVars, MlpVars, MlpWeights, SlotGraph,
};
pub use model::{argmax, tcn_forward, Architecture, TapeParams, Tdgcn, GNN_LAYERS, TCN_DILATIONS};
pub use train::{evaluate, train, EpochRecord, TrainLog};

#[derive(Debug, Error)]
pub enum TdgcnError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] FingerprintError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Optimizer and model hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub n_slots: usize,
    pub pooling_ratio: f64,
    pub theta: f64,
    pub seed: u64,
    pub tcn_channels: [usize; 3],
    pub tcn_kernels: [usize; 3],
    pub gin_hidden: usize,
    /// Fit per-dimension standardization on the training set.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 16,
            epochs: 50,
            n_slots: 5,
            pooling_ratio: 0.2,
            theta: 0.01,
            seed: 42,
            tcn_channels: [32, 32, 32],
            tcn_kernels: [9, 5, 3],
            gin_hidden: 32,
            standardize: true,
        }
    }
}

/// `−(1/N)·Σ y·log(max(ŷ, 1e-12))` over `[N, K]` batches.
pub fn cross_entropy(y: &Tensor, y_hat: &Tensor) -> Result<f64, TdgcnError> {
    if y.rank() != 2 || y.shape() != y_hat.shape() {
        return Err(NumericsError::Shape {
            op: "cross_entropy",
            lhs: y.shape().to_vec(),
            rhs: y_hat.shape().to_vec(),
        }
        .into());
    }
    let n = y.shape()[0].max(1) as f64;
    let total: f64 = y
        .data()
        .iter()
        .zip(y_hat.data())
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, p)| t * p.max(LOG_CLAMP).ln())
        .sum();
    Ok(-total / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let y = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&y, &y).unwrap(), 0.0);

        let y6 = Tensor::from_rows(&[vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let uniform = Tensor::filled(&[1, 6], 1.0 / 6.0);
        let l = cross_entropy(&y6, &uniform).unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12);
        assert!((l - 1.79176).abs() < 1e-5);

        let ya = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let yb = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let pa = Tensor::from_rows(&[vec![0.7, 0.3]]).unwrap();
        let pb = Tensor::from_rows(&[vec![0.6, 0.4]]).unwrap();
        let (a, b) = (cross_entropy(&ya, &pa).unwrap(), cross_entropy(&yb, &pb).unwrap());
        let both = cross_entropy(
            &Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            &Tensor::from_rows(&[vec![0.7, 0.3], vec![0.6, 0.4]]).unwrap(),
        )
        .unwrap();
        assert!((both - (a + b) / 2.0).abs() < 1e-12);

        let zero = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!((cross_entropy(&ya, &zero).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(cross_entropy(&ya, &uniform).is_err());
    }

    #[test]
    fn defaults_follow_hyperparameter_table() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.weight_decay, c.batch_size, c.pooling_ratio, c.seed), (1e-4, 1e-4, 16, 0.2, 42));
        assert_eq!(c.tcn_kernels, [9, 5, 3]);
        let t: TrainConfig = toml::from_str("epochs = 3\ntcn_channels = [8, 8, 8]").unwrap();
        assert_eq!((t.epochs, t.tcn_channels, t.lr), (3, [8, 8, 8], 1e-4));
    }
}
