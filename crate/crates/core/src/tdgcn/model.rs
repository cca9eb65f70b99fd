use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fingerprint::{FingerprintSequence, Standardizer};
use crate::numerics::{NumericsError, ParamStore, Tape, Tensor, Var};

use super::graph::{build_dynamic_graphs, cluster_count, dyn_gin_layer, pool_state, readout, GinVars, MlpVars};
use super::{TdgcnError, TrainConfig};

pub const GNN_LAYERS: usize = 3;
pub const TCN_DILATIONS: [usize; 3] = [1, 2, 4];

/// Everything that fixes parameter shapes and the forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub d: usize,
    pub l: usize,
    pub classes: usize,
    pub tcn_channels: [usize; 3],
    pub tcn_kernels: [usize; 3],
    pub gin_hidden: usize,
    pub n_slots: usize,
    pub pooling_ratio: f64,
    pub theta: f64,
}

impl Architecture {
    pub fn new(d: usize, l: usize, classes: usize, cfg: &TrainConfig) -> Result<Self, TdgcnError> {
        let arch = Self {
            d,
            l,
            classes,
            tcn_channels: cfg.tcn_channels,
            tcn_kernels: cfg.tcn_kernels,
            gin_hidden: cfg.gin_hidden,
            n_slots: cfg.n_slots,
            pooling_ratio: cfg.pooling_ratio,
            theta: cfg.theta,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), TdgcnError> {
        let fail = |m: String| Err(TdgcnError::Config(m));
        if self.d < 2 || self.classes < 1 {
            return fail(format!("need d ≥ 2 and at least one class, got d={} K={}", self.d, self.classes));
        }
        let widest = self.tcn_kernels.iter().copied().max().unwrap_or(0);
        if self.tcn_kernels.contains(&0) || self.l < widest {
            return fail(format!("sequence length {} is shorter than kernel {widest}", self.l));
        }
        if self.n_slots == 0 || self.l % self.n_slots != 0 {
            return fail(format!("sequence length {} is not divisible into {} slots", self.l, self.n_slots));
        }
        if self.tcn_channels.contains(&0) || self.gin_hidden == 0 {
            return fail("channel widths must be positive".into());
        }
        if !(self.pooling_ratio > 0.0 && self.pooling_ratio <= 1.0) {
            return fail(format!("pooling ratio {} outside (0, 1]", self.pooling_ratio));
        }
        if !(self.theta >= 0.0 && self.theta < 1.0) {
            return fail(format!("threshold {} outside [0, 1)", self.theta));
        }
        Ok(())
    }

    pub fn segment_len(&self) -> usize {
        self.l / self.n_slots
    }

    /// Node counts entering each GIN layer.
    pub fn node_counts(&self) -> [usize; GNN_LAYERS] {
        let mut n = [self.d; GNN_LAYERS];
        for i in 1..GNN_LAYERS {
            n[i] = cluster_count(n[i - 1], self.pooling_ratio);
        }
        n
    }
}

/// Indices of each named tensor in the parameter store.
#[derive(Clone, Copy, Debug)]
struct Layout {
    tcn: [(usize, usize); 3],
    upsilon: usize,
    gin: [(usize, [usize; 4]); GNN_LAYERS],
    pool: [(usize, usize); GNN_LAYERS],
    head: (usize, usize),
}

impl Layout {
    fn resolve(store: &ParamStore, arch: &Architecture) -> Result<Self, TdgcnError> {
        let mut expect = expected_shapes(arch).into_iter();
        let mut next = |name: &str| -> Result<usize, TdgcnError> {
            let (want_name, want_shape) = expect.next().expect("layout and shape list agree");
            debug_assert_eq!(want_name, name);
            let i = store
                .index_of(name)
                .ok_or_else(|| TdgcnError::Checkpoint(format!("missing tensor {name}")))?;
            if store.get(i).shape() != want_shape.as_slice() {
                return Err(TdgcnError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {want_shape:?}",
                    store.get(i).shape()
                )));
            }
            Ok(i)
        };
        let mut tcn = [(0, 0); 3];
        for (i, slot) in tcn.iter_mut().enumerate() {
            *slot = (next(&format!("tcn.{i}.w"))?, next(&format!("tcn.{i}.b"))?);
        }
        let upsilon = next("graph.upsilon")?;
        let mut gin = [(0, [0; 4]); GNN_LAYERS];
        let mut pool = [(0, 0); GNN_LAYERS];
        for i in 0..GNN_LAYERS {
            gin[i] = (
                next(&format!("gin.{i}.eps"))?,
                [
                    next(&format!("gin.{i}.w1"))?,
                    next(&format!("gin.{i}.b1"))?,
                    next(&format!("gin.{i}.w2"))?,
                    next(&format!("gin.{i}.b2"))?,
                ],
            );
            pool[i] = (next(&format!("pool.{i}.w"))?, next(&format!("pool.{i}.b"))?);
        }
        let head = (next("head.w")?, next("head.b")?);
        Ok(Self {
            tcn,
            upsilon,
            gin,
            pool,
            head,
        })
    }
}

fn expected_shapes(arch: &Architecture) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut c_in = 1;
    for i in 0..3 {
        let c = arch.tcn_channels[i];
        out.push((format!("tcn.{i}.w"), vec![c, c_in, arch.tcn_kernels[i]]));
        out.push((format!("tcn.{i}.b"), vec![c]));
        c_in = c;
    }
    out.push(("graph.upsilon".into(), vec![arch.d, arch.d]));
    let hid = arch.gin_hidden;
    let nodes = arch.node_counts();
    let mut f_in = c_in * arch.segment_len();
    for (i, &n) in nodes.iter().enumerate() {
        out.push((format!("gin.{i}.eps"), vec![1]));
        out.push((format!("gin.{i}.w1"), vec![f_in, hid]));
        out.push((format!("gin.{i}.b1"), vec![hid]));
        out.push((format!("gin.{i}.w2"), vec![hid, hid]));
        out.push((format!("gin.{i}.b2"), vec![hid]));
        let clusters = cluster_count(n, arch.pooling_ratio);
        out.push((format!("pool.{i}.w"), vec![hid, clusters]));
        out.push((format!("pool.{i}.b"), vec![clusters]));
        f_in = hid;
    }
    out.push(("head.w".into(), vec![GNN_LAYERS * hid, arch.classes]));
    out.push(("head.b".into(), vec![arch.classes]));
    out
}

/// A TDGCN classifier: architecture, weights and input standardization.
#[derive(Clone, Debug)]
pub struct Tdgcn {
    arch: Architecture,
    params: ParamStore,
    layout: Layout,
    standardizer: Option<Standardizer>,
}

/// Parameter handles registered on one tape.
pub struct TapeParams {
    pub vars: Vec<Var>,
    tcn: [(Var, Var); 3],
    upsilon: Var,
    gin: [GinVars; GNN_LAYERS],
    pool: [(Var, Var); GNN_LAYERS],
    head: (Var, Var),
}

impl Tdgcn {
    /// Fresh weights: uniform fan-in matrices, zero biases, `ε = 0`, `Υ = I`.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self, TdgcnError> {
        arch.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in expected_shapes(&arch) {
            let t = if name == "graph.upsilon" {
                Tensor::identity(arch.d)
            } else if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                // conv kernels are [out, in, k]; dense weights are [in, out]
                let fan_in = if shape.len() == 3 { shape[1] * shape[2] } else { shape[0] };
                Tensor::uniform_fan_in(&shape, fan_in, rng)
            };
            params.push(name, t);
        }
        Self::from_parts(arch, params, None)
    }

    pub fn from_parts(
        arch: Architecture,
        params: ParamStore,
        standardizer: Option<Standardizer>,
    ) -> Result<Self, TdgcnError> {
        arch.validate()?;
        let layout = Layout::resolve(&params, &arch)?;
        if let Some(s) = &standardizer {
            if s.mean.len() != arch.d {
                return Err(TdgcnError::Checkpoint(format!(
                    "standardizer has {} dimensions, model expects {}",
                    s.mean.len(),
                    arch.d
                )));
            }
        }
        Ok(Self {
            arch,
            params,
            layout,
            standardizer,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn set_standardizer(&mut self, s: Option<Standardizer>) {
        self.standardizer = s;
    }

    pub fn register(&self, tape: &mut Tape) -> TapeParams {
        let vars: Vec<Var> = self.params.tensors().iter().map(|t| tape.param(t.clone())).collect();
        let l = &self.layout;
        let v = |i: usize| vars[i];
        TapeParams {
            tcn: l.tcn.map(|(w, b)| (v(w), v(b))),
            upsilon: v(l.upsilon),
            gin: l.gin.map(|(eps, [w1, b1, w2, b2])| GinVars {
                eps: v(eps),
                mlp: MlpVars {
                    w1: v(w1),
                    b1: v(b1),
                    w2: v(w2),
                    b2: v(b2),
                },
            }),
            pool: l.pool.map(|(w, b)| (v(w), v(b))),
            head: (v(l.head.0), v(l.head.1)),
            vars,
        }
    }

    /// The `d × l` model input for a sequence, standardized when configured.
    pub fn prepare(&self, x: &FingerprintSequence) -> Result<Tensor, TdgcnError> {
        if x.d != self.arch.d || x.l != self.arch.l {
            return Err(NumericsError::Shape {
                op: "classify",
                lhs: vec![x.d, x.l],
                rhs: vec![self.arch.d, self.arch.l],
            }
            .into());
        }
        let mut data = x.data.clone();
        if let Some(s) = &self.standardizer {
            for (i, row) in data.chunks_exact_mut(x.l).enumerate() {
                row.iter_mut().for_each(|v| *v = (*v - s.mean[i]) / s.std[i]);
            }
        }
        Ok(Tensor::new(&[x.d, x.l], data)?)
    }

    /// Class probabilities `[1, K]` on the tape.
    pub fn forward(&self, tape: &mut Tape, p: &TapeParams, x: &Tensor) -> Result<Var, TdgcnError> {
        let a = &self.arch;
        let input = tape.constant(x.clone().reshaped(&[a.d, 1, a.l])?);
        let features = tcn_forward(tape, input, &p.tcn)?;
        let mut state = build_dynamic_graphs(tape, x, features, a.n_slots, p.upsilon, a.theta)?;
        let mut summaries = Vec::with_capacity(GNN_LAYERS);
        for i in 0..GNN_LAYERS {
            state = dyn_gin_layer(tape, &state, &p.gin[i])?;
            state = pool_state(tape, &state, p.pool[i].0, p.pool[i].1)?;
            summaries.push(readout(tape, &state)?);
        }
        let z = tape.concat(&summaries, 1)?;
        let logits = tape.matmul(z, p.head.0)?;
        let logits = tape.add_bias(logits, p.head.1)?;
        Ok(tape.softmax(logits, 1)?)
    }

    pub fn classify(&self, x: &FingerprintSequence) -> Result<Vec<f64>, TdgcnError> {
        let input = self.prepare(x)?;
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let probs = self.forward(&mut tape, &p, &input)?;
        Ok(tape.value(probs).data().to_vec())
    }

    pub fn predict(&self, x: &FingerprintSequence) -> Result<usize, TdgcnError> {
        Ok(argmax(&self.classify(x)?))
    }
}

/// Lowest index among the maxima.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Three causal dilated convolutions with ReLU over `[d, 1, l]` input;
/// every dimension is convolved independently with shared kernels.
pub fn tcn_forward(tape: &mut Tape, input: Var, layers: &[(Var, Var)]) -> Result<Var, TdgcnError> {
    let mut z = input;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let dilation = TCN_DILATIONS.get(i).copied().unwrap_or(1 << i);
        let c = tape.causal_conv1d(z, w, b, dilation)?;
        z = tape.relu(c);
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn seq(d: usize, l: usize, salt: f64) -> FingerprintSequence {
        FingerprintSequence {
            d,
            l,
            data: (0..d * l).map(|i| ((i as f64 + salt) * 0.37).sin()).collect(),
            tx_index: 0,
            slot_index: 0,
        }
    }

    fn arch(d: usize, l: usize, k: usize) -> Architecture {
        let cfg = TrainConfig {
            tcn_channels: [4, 4, 4],
            gin_hidden: 8,
            ..TrainConfig::default()
        };
        Architecture::new(d, l, k, &cfg).unwrap()
    }

    #[test]
    fn tcn_single_layer_example() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.param(Tensor::new(&[1, 1, 1], vec![1.0]).unwrap());
        let b = tape.param(Tensor::from_vec(vec![-2.0]));
        let out = tcn_forward(&mut tape, x, &[(w, b)]).unwrap();
        assert_eq!(tape.value(out).data(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn tcn_keeps_length_and_zero_weights_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::uniform_fan_in(&[3, 1, 20], 1, &mut rng));
        let mut layers = Vec::new();
        let mut zero_layers = Vec::new();
        for (i, (k, c_in)) in [(9, 1), (5, 4), (3, 4)].into_iter().enumerate() {
            let w = Tensor::uniform_fan_in(&[4, c_in, k], c_in * k, &mut rng);
            layers.push((tape.param(w), tape.param(Tensor::filled(&[4], 0.1 * i as f64))));
            zero_layers.push((tape.param(Tensor::zeros(&[4, c_in, k])), tape.param(Tensor::zeros(&[4]))));
        }
        let out = tcn_forward(&mut tape, x, &layers).unwrap();
        assert_eq!(tape.shape(out), [3, 4, 20]);
        let zero = tcn_forward(&mut tape, x, &zero_layers).unwrap();
        assert!(tape.value(zero).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tcn_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform_fan_in(&[2, 1, 30], 1, &mut rng);
        let mut cut = x.clone();
        for r in 0..2 {
            cut.data_mut()[r * 30 + 20..(r + 1) * 30].iter_mut().for_each(|v| *v = 0.0);
        }
        let weights: Vec<(Tensor, Tensor)> = [(9, 1), (5, 3), (3, 3)]
            .into_iter()
            .map(|(k, c)| (Tensor::uniform_fan_in(&[3, c, k], c * k, &mut rng), Tensor::filled(&[3], 0.2)))
            .collect();
        let run = |input: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.constant(input.clone());
            let layers: Vec<(Var, Var)> =
                weights.iter().map(|(w, b)| (tape.param(w.clone()), tape.param(b.clone()))).collect();
            let out = tcn_forward(&mut tape, xv, &layers).unwrap();
            tape.value(out).clone()
        };
        let (a, b) = (run(&x), run(&cut));
        for row in 0..6 {
            assert_eq!(a.data()[row * 30..row * 30 + 20], b.data()[row * 30..row * 30 + 20]);
        }
        assert_ne!(a, b);
    }

    #[test]
    fn config_errors() {
        let cfg = TrainConfig::default();
        assert!(matches!(Architecture::new(24, 8, 3, &cfg), Err(TdgcnError::Config(_))));
        assert!(matches!(Architecture::new(24, 52, 3, &cfg), Err(TdgcnError::Config(_))));
        let a = Architecture::new(24, 50, 6, &cfg).unwrap();
        assert_eq!(a.node_counts(), [24, 5, 1]);
        assert_eq!(a.segment_len(), 10);
    }

    #[test]
    fn classify_is_a_distribution_and_deterministic() {
        let a = arch(24, 50, 6);
        let m1 = Tdgcn::init(a.clone(), &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let m2 = Tdgcn::init(a, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        for salt in [0.0, 1.5, 7.0] {
            let p = m1.classify(&seq(24, 50, salt)).unwrap();
            assert_eq!(p.len(), 6);
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(p, m2.classify(&seq(24, 50, salt)).unwrap());
        }
        assert!(matches!(m1.classify(&seq(24, 40, 0.0)), Err(TdgcnError::Numerics(_))));
    }

    #[test]
    fn checkpoint_layout_is_validated() {
        let a = arch(4, 10, 2);
        let m = Tdgcn::init(a.clone(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(m.params().by_name("graph.upsilon").unwrap(), &Tensor::identity(4));
        let mut other = a.clone();
        other.gin_hidden = 5;
        assert!(matches!(
            Tdgcn::from_parts(other, m.params().clone(), None),
            Err(TdgcnError::Checkpoint(_))
        ));
    }
}
