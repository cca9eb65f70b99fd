//! Graph construction, dynamic GIN layers and cluster pooling.

use crate::numerics::{NumericsError, Tape, Tensor, Var};

use super::TdgcnError;

/// Row-softmax of negated pairwise Euclidean distances between the rows of
/// `x` (`d × t`).
pub fn similarity_matrix(x: &Tensor) -> Result<Tensor, TdgcnError> {
    if x.rank() != 2 {
        return Err(TdgcnError::Config(format!(
            "similarity needs a d×t matrix, got shape {:?}",
            x.shape()
        )));
    }
    let d = x.shape()[0];
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        let xi = x.row(i);
        let row = &mut s[i * d..(i + 1) * d];
        for (j, v) in row.iter_mut().enumerate() {
            let dist: f64 = xi
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            *v = -dist.max(0.0);
        }
        // the diagonal holds the largest logit (zero distance)
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - top).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(Tensor::new(&[d, d], s)?)
}

/// `threshold(ReLU(S·Υ), θ)` on the tape.
pub fn adjacency(tape: &mut Tape, s: Var, upsilon: Var, theta: f64) -> Result<Var, TdgcnError> {
    let su = tape.matmul(s, upsilon)?;
    let r = tape.relu(su);
    Ok(tape.threshold(r, theta))
}

/// Plain-value form of [`adjacency`].
pub fn adjacency_values(s: &Tensor, upsilon: &Tensor, theta: f64) -> Result<Tensor, TdgcnError> {
    let mut tape = Tape::new();
    let (s, u) = (tape.constant(s.clone()), tape.constant(upsilon.clone()));
    let a = adjacency(&mut tape, s, u, theta)?;
    Ok(tape.value(a).clone())
}

/// One time slot: node features, adjacency and its row-normalized weights.
#[derive(Clone, Copy, Debug)]
pub struct SlotGraph {
    pub h: Var,
    pub a: Var,
    pub omega: Var,
}

impl SlotGraph {
    pub fn new(tape: &mut Tape, h: Var, a: Var) -> Result<Self, TdgcnError> {
        let (hs, as_) = (tape.shape(h), tape.shape(a));
        if hs.len() != 2 || as_.len() != 2 || as_[0] != as_[1] || as_[0] != hs[0] {
            return Err(NumericsError::Shape {
                op: "slot_graph",
                lhs: hs.to_vec(),
                rhs: as_.to_vec(),
            }
            .into());
        }
        let omega = tape.row_normalize(a)?;
        Ok(Self { h, a, omega })
    }
}

/// Per-slot graphs sharing one node set; slot `n` receives directed edges
/// from the same nodes in slot `n-1`.
#[derive(Clone, Debug)]
pub struct DynGraphState {
    pub slots: Vec<SlotGraph>,
}

impl DynGraphState {
    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn n_nodes(&self, tape: &Tape) -> usize {
        tape.shape(self.slots[0].h)[0]
    }
}

/// Cuts the time axis into `n_slots` equal segments.
///
/// `x` is the `d × l` input used for similarity, `features` the `[d, C, l]`
/// TCN output. Slot node features are the flattened `C × (l/n_slots)` slice.
pub fn build_dynamic_graphs(
    tape: &mut Tape,
    x: &Tensor,
    features: Var,
    n_slots: usize,
    upsilon: Var,
    theta: f64,
) -> Result<DynGraphState, TdgcnError> {
    let fs = tape.shape(features).to_vec();
    let [d, c, l] = fs[..] else {
        return Err(TdgcnError::Config(format!("features must be [d, C, l], got {fs:?}")));
    };
    if x.shape() != [d, l] {
        return Err(TdgcnError::Config(format!(
            "input {:?} does not match features {fs:?}",
            x.shape()
        )));
    }
    if n_slots == 0 || l % n_slots != 0 {
        return Err(TdgcnError::Config(format!(
            "sequence length {l} is not divisible into {n_slots} slots"
        )));
    }
    let seg = l / n_slots;
    let mut slots = Vec::with_capacity(n_slots);
    for n in 0..n_slots {
        let start = n * seg;
        let mut part = Vec::with_capacity(d * seg);
        for i in 0..d {
            part.extend_from_slice(&x.row(i)[start..start + seg]);
        }
        let s = tape.constant(similarity_matrix(&Tensor::new(&[d, seg], part)?)?);
        let a = adjacency(tape, s, upsilon, theta)?;
        let window = tape.slice_pad(features, 2, start as isize, seg)?;
        let h = tape.reshape(window, &[d, c * seg])?;
        slots.push(SlotGraph::new(tape, h, a)?);
    }
    Ok(DynGraphState { slots })
}

/// Two linear maps with a ReLU between them.
#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
        let z = tape.matmul(x, self.w1)?;
        let z = tape.add_bias(z, self.b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, self.w2)?;
        tape.add_bias(z, self.b2)
    }
}

/// Plain-value MLP weights for the static oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl MlpWeights {
    /// Identity on non-negative inputs of width `n`.
    pub fn identity(n: usize) -> Self {
        Self {
            w1: Tensor::identity(n),
            b1: Tensor::zeros(&[n]),
            w2: Tensor::identity(n),
            b2: Tensor::zeros(&[n]),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            w2: tape.param(self.w2.clone()),
            b2: tape.param(self.b2.clone()),
        }
    }
}

fn dense(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        for j in 0..n {
            let mut acc = b.data()[j];
            for i in 0..k {
                acc += x[r * k + i] * w.data()[i * n + j];
            }
            out[r * n + j] = acc;
        }
    }
    out
}

/// `H'_v = MLP((1+ε)·H_v + Σ_u A_vu·H_u)`, computed with plain loops.
pub fn gin_layer_static(a: &Tensor, h: &Tensor, eps: f64, mlp: &MlpWeights) -> Result<Tensor, TdgcnError> {
    let shape_err = |lhs: &Tensor, rhs: &Tensor| -> TdgcnError {
        NumericsError::Shape {
            op: "gin_layer_static",
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        }
        .into()
    };
    if a.rank() != 2 || h.rank() != 2 || a.shape()[0] != a.shape()[1] || a.shape()[1] != h.shape()[0] {
        return Err(shape_err(a, h));
    }
    if mlp.w1.rank() != 2 || mlp.w1.shape()[0] != h.shape()[1] {
        return Err(shape_err(h, &mlp.w1));
    }
    let (n, f) = (h.shape()[0], h.shape()[1]);
    let mut m = vec![0.0; n * f];
    for v in 0..n {
        for c in 0..f {
            let mut acc = (1.0 + eps) * h.at(v, c);
            for u in 0..n {
                acc += a.at(v, u) * h.at(u, c);
            }
            m[v * f + c] = acc;
        }
    }
    let mut z = dense(&m, n, &mlp.w1, &mlp.b1);
    z.iter_mut().for_each(|v| *v = v.max(0.0));
    let out = dense(&z, n, &mlp.w2, &mlp.b2);
    Ok(Tensor::new(&[n, mlp.w2.shape()[1]], out)?)
}

/// Parameters of one dynamic GIN layer. `eps` has shape `[1]`.
#[derive(Clone, Copy, Debug)]
pub struct GinVars {
    pub eps: Var,
    pub mlp: MlpVars,
}

/// Dynamic GIN update, slot by slot.
///
/// Slot `n` aggregates `(1+ε)·H^n + H^(n-1) + Ω̃^n·H^n`; the cross-slot term
/// is absent for the first slot. Adjacencies pass through unchanged.
pub fn dyn_gin_layer(tape: &mut Tape, state: &DynGraphState, layer: &GinVars) -> Result<DynGraphState, TdgcnError> {
    let one = tape.constant(Tensor::from_vec(vec![1.0]));
    let one_plus_eps = tape.add(layer.eps, one)?;
    let mut slots = Vec::with_capacity(state.slots.len());
    for (n, slot) in state.slots.iter().enumerate() {
        let own = tape.mul_scalar(slot.h, one_plus_eps)?;
        let nbr = tape.matmul(slot.omega, slot.h)?;
        let mut m = tape.add(own, nbr)?;
        if n > 0 {
            m = tape.add(m, state.slots[n - 1].h)?;
        }
        let h = layer.mlp.forward(tape, m)?;
        slots.push(SlotGraph { h, ..*slot });
    }
    Ok(DynGraphState { slots })
}

/// Mean over nodes of every slot, then over slots: a `[1, F]` summary.
pub fn readout(tape: &mut Tape, state: &DynGraphState) -> Result<Var, TdgcnError> {
    let per_slot = state
        .slots
        .iter()
        .map(|s| tape.mean(s.h, 0))
        .collect::<Result<Vec<_>, _>>()?;
    let f = tape.shape(per_slot[0])[0];
    let rows = per_slot
        .into_iter()
        .map(|v| tape.reshape(v, &[1, f]))
        .collect::<Result<Vec<_>, _>>()?;
    let stacked = tape.concat(&rows, 0)?;
    let avg = tape.mean(stacked, 0)?;
    Ok(tape.reshape(avg, &[1, f])?)
}

/// `max(1, ⌈ratio·n⌉)`.
pub fn cluster_count(n_nodes: usize, ratio: f64) -> usize {
    ((ratio * n_nodes as f64 - 1e-9).ceil() as usize).clamp(1, n_nodes.max(1))
}

/// Coarsening with a given assignment: `(CᵀH, CᵀAC)`.
pub fn coarsen(tape: &mut Tape, h: Var, a: Var, c: Var) -> Result<(Var, Var), TdgcnError> {
    let ct = tape.transpose(c)?;
    let h2 = tape.matmul(ct, h)?;
    let ac = tape.matmul(a, c)?;
    let a2 = tape.matmul(ct, ac)?;
    Ok((h2, a2))
}

/// Soft cluster assignment `C = softmax(H·W + b)` followed by [`coarsen`].
///
/// Returns the coarsened features, adjacency and `C`.
pub fn cluster_pool(tape: &mut Tape, h: Var, a: Var, w: Var, b: Var) -> Result<(Var, Var, Var), TdgcnError> {
    let logits = tape.matmul(h, w)?;
    let logits = tape.add_bias(logits, b)?;
    let c = tape.softmax(logits, 1)?;
    let (h2, a2) = coarsen(tape, h, a, c)?;
    Ok((h2, a2, c))
}

/// Pools every slot with shared assignment weights.
pub fn pool_state(tape: &mut Tape, state: &DynGraphState, w: Var, b: Var) -> Result<DynGraphState, TdgcnError> {
    let mut slots = Vec::with_capacity(state.slots.len());
    for s in &state.slots {
        let (h, a, _) = cluster_pool(tape, s.h, s.a, w, b)?;
        slots.push(SlotGraph::new(tape, h, a)?);
    }
    Ok(DynGraphState { slots })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_mlp(f: usize, hid: usize, out: usize, rng: &mut ChaCha8Rng) -> MlpWeights {
        MlpWeights {
            w1: random(&[f, hid], rng),
            b1: random(&[hid], rng),
            w2: random(&[hid, out], rng),
            b2: random(&[out], rng),
        }
    }

    #[test]
    fn similarity_examples() {
        let s = similarity_matrix(&t(&[&[1.0, 2.0], &[1.0, 2.0]])).unwrap();
        assert!(s.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        let s = similarity_matrix(&t(&[&[4.0], &[4.0], &[4.0]])).unwrap();
        assert!(s.data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        let s = similarity_matrix(&t(&[&[0.0, 0.0], &[3.0, 4.0]])).unwrap();
        let e = (-5.0f64).exp();
        assert!((s.at(0, 0) - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((s.at(0, 1) - e / (1.0 + e)).abs() < 1e-12);
        assert!((s.at(0, 0) - 0.993307).abs() < 1e-6);
        assert!((s.at(0, 1) - 0.006693).abs() < 1e-6);
    }

    #[test]
    fn similarity_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let d = rng.random_range(2..8);
            let x = random(&[d, rng.random_range(1..12)], &mut rng);
            let s = similarity_matrix(&x).unwrap();
            for i in 0..d {
                assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(s.row(i).iter().all(|&v| v > 0.0 && v <= 1.0));
            }
        }
    }

    #[test]
    fn adjacency_examples() {
        let eye = Tensor::identity(3);
        assert_eq!(adjacency_values(&eye, &eye, 0.0).unwrap(), eye);
        let neg = Tensor::new(&[3, 3], eye.data().iter().map(|v| -v).collect()).unwrap();
        assert_eq!(adjacency_values(&eye, &neg, 0.0).unwrap(), Tensor::zeros(&[3, 3]));
        let a = t(&[&[0.6, 0.4], &[0.3, 0.7]]);
        let out = adjacency_values(&a, &Tensor::identity(2), 0.5).unwrap();
        assert_eq!(out, t(&[&[0.6, 0.0], &[0.0, 0.7]]));
    }

    #[test]
    fn adjacency_is_sparse_and_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s = similarity_matrix(&random(&[5, 4], &mut rng)).unwrap();
            let theta = rng.random_range(0.0..0.5);
            let a = adjacency_values(&s, &random(&[5, 5], &mut rng), theta).unwrap();
            assert!(a.data().iter().all(|&v| v == 0.0 || v >= theta));
        }
    }

    #[test]
    fn dynamic_graph_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[24, 50], &mut rng);
        let mut tape = Tape::new();
        let f = tape.constant(random(&[24, 2, 50], &mut rng));
        let u = tape.param(Tensor::identity(24));
        let st = build_dynamic_graphs(&mut tape, &x, f, 5, u, 0.01).unwrap();
        assert_eq!(st.n_slots(), 5);
        assert_eq!(st.n_nodes(&tape), 24);
        assert_eq!(tape.shape(st.slots[0].h), [24, 20]);
        // slot 2, node 3, channel 1, offset 4 → feature time 24
        let fv = tape.value(f).clone();
        assert_eq!(tape.value(st.slots[2].h).at(3, 10 + 4), fv.data()[(3 * 2 + 1) * 50 + 24]);
        for s in &st.slots {
            let om = tape.value(s.omega);
            for i in 0..24 {
                let r: f64 = om.row(i).iter().sum();
                assert!(r == 0.0 || (r - 1.0).abs() < 1e-9);
            }
        }

        let one = build_dynamic_graphs(&mut tape, &x, f, 1, u, 0.0).unwrap();
        assert_eq!(one.n_slots(), 1);
        assert_eq!(tape.shape(one.slots[0].h), [24, 100]);
        assert!(matches!(
            build_dynamic_graphs(&mut tape, &x, f, 3, u, 0.0),
            Err(TdgcnError::Config(_))
        ));
    }

    #[test]
    fn static_gin_examples() {
        let a = t(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let h = t(&[&[1.0], &[2.0]]);
        let out = gin_layer_static(&a, &h, 0.0, &MlpWeights::identity(1)).unwrap();
        assert_eq!(out, t(&[&[3.0], &[3.0]]));
        let iso = Tensor::zeros(&[1, 1]);
        let h = t(&[&[2.0]]);
        assert_eq!(gin_layer_static(&iso, &h, 0.0, &MlpWeights::identity(1)).unwrap(), h);
        assert_eq!(gin_layer_static(&iso, &h, 1.0, &MlpWeights::identity(1)).unwrap(), t(&[&[4.0]]));
        assert!(gin_layer_static(&Tensor::zeros(&[3, 3]), &h, 0.0, &MlpWeights::identity(1)).is_err());
    }

    fn run_dyn(hs: &[Tensor], a: &Tensor, eps: f64, mlp: &MlpWeights) -> Vec<Tensor> {
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let slots = hs
            .iter()
            .map(|h| {
                let hv = tape.constant(h.clone());
                SlotGraph::new(&mut tape, hv, av).unwrap()
            })
            .collect();
        let layer = GinVars {
            eps: tape.param(Tensor::from_vec(vec![eps])),
            mlp: mlp.register(&mut tape),
        };
        let out = dyn_gin_layer(&mut tape, &DynGraphState { slots }, &layer).unwrap();
        out.slots.iter().map(|s| tape.value(s.h).clone()).collect()
    }

    #[test]
    fn dyn_gin_adds_previous_slot() {
        let iso = Tensor::zeros(&[1, 1]);
        let out = run_dyn(&[t(&[&[2.0]]), t(&[&[5.0]])], &iso, 0.0, &MlpWeights::identity(1));
        assert_eq!(out[0], t(&[&[2.0]]));
        assert_eq!(out[1], t(&[&[7.0]]));
    }

    fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..n * n)
            .map(|_| if rng.random_bool(0.4) { rng.random_range(0.0..1.0) } else { 0.0 })
            .collect();
        Tensor::new(&[n, n], data).unwrap()
    }

    fn row_normalized(a: &Tensor) -> Tensor {
        let n = a.shape()[0];
        let mut out = a.clone();
        for i in 0..n {
            let s: f64 = a.row(i).iter().sum();
            for j in 0..n {
                out.set(i, j, if s == 0.0 { 0.0 } else { a.at(i, j) / s });
            }
        }
        out
    }

    #[test]
    fn single_slot_matches_static_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = rng.random_range(1..9);
            let f = rng.random_range(1..5);
            let a = random_graph(n, &mut rng);
            let h = random(&[n, f], &mut rng);
            let mlp = random_mlp(f, 6, 3, &mut rng);
            let eps = rng.random_range(-0.5..0.5);
            let dynamic = run_dyn(std::slice::from_ref(&h), &a, eps, &mlp);
            let oracle = gin_layer_static(&row_normalized(&a), &h, eps, &mlp).unwrap();
            assert!(dynamic[0].max_abs_diff(&oracle) <= 1e-10);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = 5;
            let a = random_graph(n, &mut rng);
            let hs = [random(&[n, 3], &mut rng), random(&[n, 3], &mut rng)];
            let mlp = random_mlp(3, 4, 2, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let pa = Tensor::new(&[n, n], (0..n * n).map(|k| a.at(perm[k / n], perm[k % n])).collect()).unwrap();
            let permute_rows = |m: &Tensor| {
                let c = m.shape()[1];
                Tensor::new(&[n, c], perm.iter().flat_map(|&p| m.row(p).to_vec()).collect()).unwrap()
            };
            let phs: Vec<Tensor> = hs.iter().map(permute_rows).collect();
            let base = run_dyn(&hs, &a, 0.3, &mlp);
            let moved = run_dyn(&phs, &pa, 0.3, &mlp);
            for (b, m) in base.iter().zip(&moved) {
                assert!(permute_rows(b).max_abs_diff(m) <= 1e-10);
            }
        }
    }

    #[test]
    fn pooling_examples() {
        assert_eq!(cluster_count(24, 0.2), 5);
        assert_eq!(cluster_count(5, 0.2), 1);
        assert_eq!(cluster_count(1, 0.2), 1);
        assert_eq!(cluster_count(7, 1.0), 7);

        let mut tape = Tape::new();
        let h = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let a = tape.constant(t(&[&[0.0, 1.0, 0.5], &[1.0, 0.0, 0.0], &[0.5, 0.0, 0.2]]));
        let eye = tape.constant(Tensor::identity(3));
        let (h2, a2) = coarsen(&mut tape, h, a, eye).unwrap();
        assert_eq!(tape.value(h2), tape.value(h));
        assert_eq!(tape.value(a2), tape.value(a));

        let merge = tape.constant(t(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]));
        let (h2, a2) = coarsen(&mut tape, h, a, merge).unwrap();
        assert_eq!(tape.value(h2), &t(&[&[4.0, 6.0], &[5.0, 6.0]]));
        assert_eq!(tape.value(a2), &t(&[&[2.0, 0.5], &[0.5, 0.2]]));
    }

    #[test]
    fn soft_assignment_rows_are_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::new();
        let h = tape.constant(random(&[24, 4], &mut rng));
        let a = tape.constant(random_graph(24, &mut rng));
        let w = tape.param(random(&[4, cluster_count(24, 0.2)], &mut rng));
        let b = tape.param(Tensor::zeros(&[5]));
        let (h2, a2, c) = cluster_pool(&mut tape, h, a, w, b).unwrap();
        assert_eq!(tape.shape(h2), [5, 4]);
        assert_eq!(tape.shape(a2), [5, 5]);
        for i in 0..24 {
            let row = tape.value(c).row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
