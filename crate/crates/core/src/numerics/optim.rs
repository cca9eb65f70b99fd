use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

/// Adam hyperparameters with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update. Weight decay is applied as `θ ← θ − lr·wd·θ` before the
/// bias-corrected Adam step.
pub fn adamw_step(
    params: &mut [Tensor],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamWConfig,
) -> Result<(), NumericsError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NumericsError::Optimizer(format!(
            "{} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;

    for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[idx].len() != g.len() {
            return Err(NumericsError::Optimizer(format!(
                "parameter {idx}: {} values, {} grads",
                p.len(),
                g.len()
            )));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *theta *= decay;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut params = vec![Tensor::from_vec(vec![1.0, -2.0, 0.5])];
        let before = params.clone();
        let mut state = AdamState::new(&params);
        for _ in 0..3 {
            adamw_step(&mut params, &[vec![0.0; 3]], &mut state, &cfg(1e-2, 0.0)).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = vec![Tensor::from_vec(vec![1.0, 1.0])];
        let mut state = AdamState::new(&params);
        let c = cfg(1e-3, 0.0);
        adamw_step(&mut params, &[vec![0.5, -4.0]], &mut state, &c).unwrap();
        let d = params[0].data();
        let expect0 = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        let expect1 = 1.0 + 1e-3 * 4.0 / (4.0 + 1e-8);
        assert!((d[0] - expect0).abs() < 1e-15);
        assert!((d[1] - expect1).abs() < 1e-15);
        assert!(((1.0 - d[0]) - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn decay_shrinks_params() {
        let mut params = vec![Tensor::from_vec(vec![2.0, -3.0])];
        let mut state = AdamState::new(&params);
        let c = cfg(0.1, 0.01);
        adamw_step(&mut params, &[vec![0.0, 0.0]], &mut state, &c).unwrap();
        let f = 1.0 - 0.1 * 0.01;
        assert_eq!(params[0].data(), &[2.0 * f, -3.0 * f]);
    }

    #[test]
    fn zero_lr_freezes_params() {
        let mut params = vec![Tensor::from_vec(vec![2.0, -3.0])];
        let before = params.clone();
        let mut state = AdamState::new(&params);
        adamw_step(&mut params, &[vec![1.0, 7.0]], &mut state, &cfg(0.0, 1e-4)).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut params = vec![Tensor::from_vec(vec![2.0, -3.0])];
        let mut state = AdamState::new(&params);
        assert!(adamw_step(&mut params, &[vec![1.0]], &mut state, &cfg(0.1, 0.0)).is_err());
    }
}
