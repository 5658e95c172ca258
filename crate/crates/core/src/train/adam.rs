use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(params: &ParamStore) -> Self {
        let z: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: z.clone(),
            v: z,
            step: 0,
        }
    }
}

/// One Adam update with L2 weight decay folded into the gradient:
/// `g ← g + wd·θ`, moments, bias correction, `θ ← θ − lr·m̂/(√v̂ + eps)`.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "{} parameters, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (((theta, g), m), v) in params.tensors_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if theta.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: theta.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let (th, gd, md, vd) = (theta.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..th.len() {
            let gi = gd[i] + cfg.weight_decay * th[i];
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            th[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("theta", Tensor::scalar(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut p = scalar_store(1.25);
        let mut st = AdamState::zeros(&p);
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut st, &AdamConfig::new(0.1, 0.0)).unwrap();
        assert_eq!(p.by_index(0).1.data(), &[1.25]);
        assert_eq!(st.m[0].data(), &[0.0]);
        assert_eq!(st.v[0].data(), &[0.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_store(0.0);
        let mut st = AdamState::zeros(&p);
        adam_step(&mut p, &[Tensor::scalar(-3.7)], &mut st, &AdamConfig::new(0.01, 0.0)).unwrap();
        assert!((p.by_index(0).1.data()[0] - 0.01).abs() < 1e-10);
    }

    #[test]
    fn three_steps_match_hand_iteration() {
        let (lr, wd, b1, b2, eps) = (0.05, 0.1, 0.9, 0.999, 1e-8);
        let gs = [0.3, -1.2, 0.7];
        let mut p = scalar_store(2.0);
        let mut st = AdamState::zeros(&p);
        let cfg = AdamConfig::new(lr, wd);
        for g in gs {
            adam_step(&mut p, &[Tensor::scalar(g)], &mut st, &cfg).unwrap();
        }
        // Written out step by step.
        let mut th = 2.0f64;
        let g1 = 0.3 + wd * th;
        let m1 = (1.0 - b1) * g1;
        let v1 = (1.0 - b2) * g1 * g1;
        th -= lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let g2 = -1.2 + wd * th;
        let m2 = b1 * m1 + (1.0 - b1) * g2;
        let v2 = b2 * v1 + (1.0 - b2) * g2 * g2;
        th -= lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        let g3 = 0.7 + wd * th;
        let m3 = b1 * m2 + (1.0 - b1) * g3;
        let v3 = b2 * v2 + (1.0 - b2) * g3 * g3;
        th -= lr * (m3 / (1.0 - b1 * b1 * b1)) / ((v3 / (1.0 - b2 * b2 * b2)).sqrt() + eps);
        assert!((p.by_index(0).1.data()[0] - th).abs() <= 1e-12);
    }
}
