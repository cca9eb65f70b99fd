use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::fingerprint::{one_hot, LabeledDataset, Standardizer};
use crate::numerics::{adamw_step, AdamState, AdamWConfig, ParamStore, Tape, Tensor};
use crate::seed::rng_for;

use super::model::{argmax, Architecture, Tdgcn};
use super::{TdgcnError, TrainConfig};

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss of the forward passes made while training this epoch.
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Wall time since training started, at the end of this epoch.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// `epoch,train_loss,train_acc,test_acc`; the test column is empty
    /// without a test set.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,test_acc\n");
        for r in &self.records {
            let test = r.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.6},{:.6},{test}", r.epoch, r.train_loss, r.train_acc);
        }
        out
    }
}

/// Mini-batch AdamW training with a seeded shuffle each epoch.
///
/// Gradients are averaged over the batch. When `test` is given its accuracy
/// is logged after every epoch.
pub fn train(
    train_ds: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<(Tdgcn, TrainLog), TdgcnError> {
    if train_ds.is_empty() {
        return Err(TdgcnError::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(TdgcnError::Config("batch size must be positive".into()));
    }
    if let Some(t) = test {
        if (t.k(), t.d(), t.l()) != (train_ds.k(), train_ds.d(), train_ds.l()) {
            return Err(TdgcnError::Config("test set shape differs from training set".into()));
        }
    }
    let arch = Architecture::new(train_ds.d(), train_ds.l(), train_ds.k(), cfg)?;
    let mut model = Tdgcn::init(arch, &mut rng_for(cfg.seed, &[TAG_INIT]))?;
    if cfg.standardize {
        model.set_standardizer(Some(Standardizer::fit(train_ds)));
    }
    let opt = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut state = AdamState::new(model.params().tensors());

    let inputs = train_ds
        .sequences()
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<Vec<_>, _>>()?;
    let targets = train_ds
        .sequences()
        .iter()
        .map(|s| Ok(Tensor::new(&[1, train_ds.k()], one_hot(s.tx_index, train_ds.k())?)?))
        .collect::<Result<Vec<_>, TdgcnError>>()?;

    let mut shuffle_rng = rng_for(cfg.seed, &[TAG_SHUFFLE]);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut log = TrainLog::default();
    let started = Instant::now();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads: Vec<Vec<f64>> = model.params().tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let mut tape = Tape::new();
                let p = model.register(&mut tape);
                let probs = model.forward(&mut tape, &p, &inputs[i])?;
                if argmax(tape.value(probs).data()) == train_ds.sequences()[i].tx_index {
                    correct += 1;
                }
                let loss = tape.cross_entropy(probs, targets[i].clone())?;
                batch_loss += tape.value(loss).data()[0];
                tape.backward(loss)?;
                for (acc, &v) in grads.iter_mut().zip(&p.vars) {
                    if let Some(g) = tape.grad(v) {
                        acc.iter_mut().zip(g).for_each(|(a, g)| *a += g);
                    }
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            let finite = grads.iter().flatten().all(|g| g.is_finite());
            if !batch_loss.is_finite() || !finite {
                return Err(TdgcnError::Diverged {
                    epoch,
                    batch: batch + 1,
                    loss: batch_loss * scale,
                });
            }
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            adamw_step(model.params_mut().tensors_mut(), &grads, &mut state, &opt)?;
            loss_sum += batch_loss;
        }
        let test_acc = match test {
            Some(t) => Some(evaluate(&model, t)?.1),
            None => None,
        };
        log.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_ds.len() as f64,
            train_acc: correct as f64 / train_ds.len() as f64,
            test_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok((model, log))
}

/// Predicted labels and accuracy over a dataset.
pub fn evaluate(model: &Tdgcn, ds: &LabeledDataset) -> Result<(Vec<usize>, f64), TdgcnError> {
    let predicted = ds
        .sequences()
        .iter()
        .map(|s| model.predict(s))
        .collect::<Result<Vec<_>, _>>()?;
    let hits = predicted
        .iter()
        .zip(ds.sequences())
        .filter(|(p, s)| **p == s.tx_index)
        .count();
    Ok((predicted, hits as f64 / ds.len().max(1) as f64))
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    arch: Architecture,
    standardizer: Option<Standardizer>,
}

impl Tdgcn {
    /// Named-tensor blob with the architecture and standardizer as JSON metadata.
    pub fn save(&self, path: &Path) -> Result<(), TdgcnError> {
        let meta = CheckpointMeta {
            arch: self.arch().clone(),
            standardizer: self.standardizer().cloned(),
        };
        let json = serde_json::to_string(&meta).map_err(|e| TdgcnError::Checkpoint(e.to_string()))?;
        Ok(self.params().save(path, &json)?)
    }

    pub fn load(path: &Path) -> Result<Self, TdgcnError> {
        let (json, params): (String, ParamStore) = ParamStore::load(path)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&json).map_err(|e| TdgcnError::Checkpoint(format!("metadata: {e}")))?;
        Tdgcn::from_parts(meta.arch, params, meta.standardizer)
    }
}

#[cfg(test)]
mod tests {
    use crate::fingerprint::FingerprintSequence;

    use super::*;

    /// Two classes: a rising and a falling ramp in every dimension, lightly perturbed.
    fn toy(n: usize, d: usize, l: usize) -> LabeledDataset {
        let seqs = (0..2)
            .flat_map(|c| {
                (0..n).map(move |s| FingerprintSequence {
                    d,
                    l,
                    data: (0..d * l)
                        .map(|i| {
                            let t = (i % l) as f64 / l as f64;
                            let ramp = if c == 0 { t } else { 1.0 - t };
                            ramp + 0.05 * ((i * 7 + s * 13) as f64).sin()
                        })
                        .collect(),
                    tx_index: c,
                    slot_index: s,
                })
            })
            .collect();
        LabeledDataset::new(2, d, l, seqs).unwrap()
    }

    fn small() -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            batch_size: 4,
            epochs: 3,
            n_slots: 2,
            tcn_channels: [2, 2, 2],
            tcn_kernels: [5, 3, 3],
            gin_hidden: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let ds = toy(4, 4, 10);
        let cfg = TrainConfig { lr: 0.0, ..small() };
        let (model, log) = train(&ds, None, &cfg).unwrap();
        let arch = Architecture::new(4, 10, 2, &cfg).unwrap();
        let fresh = Tdgcn::init(arch, &mut rng_for(cfg.seed, &[TAG_INIT])).unwrap();
        assert_eq!(model.params(), fresh.params());
        assert_eq!(log.records.len(), 3);
    }

    #[test]
    fn same_seed_same_curve() {
        let ds = toy(4, 4, 10);
        let (_, a) = train(&ds, Some(&ds), &small()).unwrap();
        let (_, b) = train(&ds, Some(&ds), &small()).unwrap();
        assert_eq!(a.losses(), b.losses());
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_csv().lines().count(), 4);
    }

    #[test]
    fn separable_toy_reaches_full_train_accuracy() {
        let ds = toy(8, 4, 20);
        let cfg = TrainConfig {
            epochs: 30,
            ..small()
        };
        let (model, log) = train(&ds, None, &cfg).unwrap();
        assert!(log.last().unwrap().train_loss < log.records[0].train_loss);
        assert_eq!(evaluate(&model, &ds).unwrap().1, 1.0);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = toy(2, 4, 10);
        let cfg = TrainConfig { lr: f64::INFINITY, epochs: 2, ..small() };
        let err = train(&ds, None, &cfg).unwrap_err();
        assert!(matches!(err, TdgcnError::Diverged { epoch: 1 | 2, .. }), "{err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = toy(3, 4, 10);
        let (model, _) = train(&ds, None, &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let back = Tdgcn::load(&path).unwrap();
        for s in ds.sequences() {
            assert_eq!(model.classify(s).unwrap(), back.classify(s).unwrap());
        }
        std::fs::write(&path, b"junk").unwrap();
        assert!(Tdgcn::load(&path).is_err());
    }
}
