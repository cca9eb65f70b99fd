//! Finite-difference gradient checks shared by the integration targets.
#![allow(dead_code)]

use pla_core::fingerprint::one_hot;
use pla_core::numerics::{Tape, Tensor, Var};
use pla_core::seed::rng_for;
use pla_core::tdgcn::{Architecture, Tdgcn, TrainConfig};
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

pub fn random(shape: &[usize], lo: f64, hi: f64, tag: u64) -> Tensor {
    let mut rng = rng_for(7, &[tag]);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `±[0.1, 1]`, clear of the kinks at zero.
pub fn signed(shape: &[usize], tag: u64) -> Tensor {
    let t = random(shape, 0.1, 1.0, tag);
    let mut rng = rng_for(8, &[tag]);
    let data = t.data().iter().map(|v| if rng.random_bool(0.5) { *v } else { -*v }).collect();
    Tensor::new(shape, data).unwrap()
}

/// Contracts any output with fixed weights down to a scalar.
fn to_scalar(tape: &mut Tape, y: Var) -> Var {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(random(&shape, -1.0, 1.0, 99));
    let mut acc = tape.mul(y, w).unwrap();
    while !tape.shape(acc).is_empty() {
        acc = tape.sum(acc, 0).unwrap();
    }
    acc
}

pub fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between backward and central differences over
/// every entry of `inputs`. `loss` returns the tape, the input handles and
/// a scalar.
fn worst_over(inputs: &[Tensor], loss: impl Fn(&[Tensor]) -> (Tape, Vec<Var>, Var)) -> (f64, usize) {
    let (mut tape, vars, l) = loss(inputs);
    tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] += STEP;
            let (t, _, l) = loss(&xs);
            let up = t.value(l).data()[0];
            xs[i].data_mut()[j] -= 2.0 * STEP;
            let (t, _, l) = loss(&xs);
            let down = t.value(l).data()[0];
            worst = worst.max(relative(analytic[j], (up - down) / (2.0 * STEP)));
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn op_error(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    worst_over(inputs, |xs| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let y = f(&mut tape, &vars);
        let l = to_scalar(&mut tape, y);
        (tape, vars, l)
    })
    .0
}

/// Worst relative error of every differentiable tape operation.
pub fn op_errors() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| out.push((name.to_owned(), err));

    push("matmul", op_error(&[signed(&[3, 4], 1), signed(&[4, 2], 2)], |t, v| t.matmul(v[0], v[1]).unwrap()));
    let pair = [signed(&[2, 3], 3), signed(&[2, 3], 4)];
    push("add", op_error(&pair, |t, v| t.add(v[0], v[1]).unwrap()));
    push("mul", op_error(&pair, |t, v| t.mul(v[0], v[1]).unwrap()));
    push("add_bias", op_error(&[signed(&[3, 4], 5), signed(&[4], 6)], |t, v| t.add_bias(v[0], v[1]).unwrap()));
    push("mul_scalar", op_error(&[signed(&[3, 4], 7), signed(&[1], 8)], |t, v| t.mul_scalar(v[0], v[1]).unwrap()));
    push("scale", op_error(&[signed(&[3, 4], 9)], |t, v| t.scale(v[0], -2.5)));

    let x = signed(&[4, 5], 10);
    push("relu", op_error(std::slice::from_ref(&x), |t, v| t.relu(v[0])));
    // keep every entry at least 0.05 from the cut
    let data = x.data().iter().map(|v| if (v - 0.3).abs() < 0.05 { v + 0.1 } else { *v }).collect();
    push("threshold", op_error(&[Tensor::new(&[4, 5], data).unwrap()], |t, v| t.threshold(v[0], 0.3)));

    for axis in 0..3 {
        let x = [signed(&[2, 3, 4], 11 + axis as u64)];
        push(&format!("softmax/{axis}"), op_error(&x, |t, v| t.softmax(v[0], axis).unwrap()));
        push(&format!("sum/{axis}"), op_error(&x, |t, v| t.sum(v[0], axis).unwrap()));
        push(&format!("mean/{axis}"), op_error(&x, |t, v| t.mean(v[0], axis).unwrap()));
    }
    push(
        "concat/0",
        op_error(&[signed(&[2, 3], 14), signed(&[1, 3], 15)], |t, v| t.concat(&[v[0], v[1]], 0).unwrap()),
    );
    push(
        "concat/1",
        op_error(&[signed(&[2, 3], 16), signed(&[2, 2], 17)], |t, v| t.concat(&[v[0], v[1]], 1).unwrap()),
    );
    push("transpose", op_error(&[signed(&[3, 5], 18)], |t, v| t.transpose(v[0]).unwrap()));
    push("reshape", op_error(&[signed(&[3, 4], 19)], |t, v| t.reshape(v[0], &[2, 6]).unwrap()));
    push("slice_pad/left", op_error(&[signed(&[2, 6, 3], 20)], |t, v| t.slice_pad(v[0], 1, -2, 5).unwrap()));
    push("slice_pad/right", op_error(&[signed(&[2, 6], 21)], |t, v| t.slice_pad(v[0], 1, 3, 5).unwrap()));
    push("row_normalize", op_error(&[random(&[4, 3], 0.2, 1.0, 22)], |t, v| t.row_normalize(v[0]).unwrap()));

    let conv = [signed(&[3, 2, 7], 23), signed(&[4, 2, 3], 24), signed(&[4], 25)];
    for dilation in [1, 2, 4] {
        push(
            &format!("causal_conv1d/d{dilation}"),
            op_error(&conv, |t, v| t.causal_conv1d(v[0], v[1], v[2], dilation).unwrap()),
        );
    }
    let unbatched = [signed(&[2, 6], 26), signed(&[3, 2, 2], 27), signed(&[3], 28)];
    push("causal_conv1d/2d", op_error(&unbatched, |t, v| t.causal_conv1d(v[0], v[1], v[2], 1).unwrap()));

    let target = Tensor::new(&[2, 3], vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    push(
        "cross_entropy",
        op_error(&[random(&[2, 3], 0.2, 1.0, 29)], |t, v| t.cross_entropy(v[0], target.clone()).unwrap()),
    );
    out
}

/// Worst relative error over every parameter of a `d=4, l=8, K=2` model,
/// and the number of parameters checked.
pub fn tiny_tdgcn_error() -> (f64, usize) {
    let cfg = TrainConfig {
        n_slots: 2,
        tcn_channels: [3, 3, 3],
        tcn_kernels: [3, 3, 3],
        gin_hidden: 4,
        ..TrainConfig::default()
    };
    let arch = Architecture::new(4, 8, 2, &cfg).unwrap();
    let mut model = Tdgcn::init(arch, &mut rng_for(cfg.seed, &[1])).unwrap();
    // move every parameter off its structured init so no gradient is trivially zero
    for (i, t) in model.params_mut().tensors_mut().iter_mut().enumerate() {
        let noise = signed(t.shape(), 100 + i as u64);
        t.data_mut().iter_mut().zip(noise.data()).for_each(|(p, n)| *p += 0.3 * n);
    }
    let x = signed(&[4, 8], 30);
    let target = Tensor::new(&[1, 2], one_hot(1, 2).unwrap()).unwrap();
    let params = model.params().tensors().to_vec();
    worst_over(&params, |ps| {
        let mut m = model.clone();
        m.params_mut().tensors_mut().clone_from_slice(ps);
        let mut tape = Tape::new();
        let p = m.register(&mut tape);
        let probs = m.forward(&mut tape, &p, &x).unwrap();
        let loss = tape.cross_entropy(probs, target.clone()).unwrap();
        (tape, p.vars, loss)
    })
}
