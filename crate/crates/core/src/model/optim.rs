use serde::{Deserialize, Serialize};

use super::params::Params;
use super::{ModelConfig, ModelError, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, laid out like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Params<T>,
    pub v: Params<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: &ModelConfig, vocab_size: usize) -> Self {
        Self {
            m: Params::zeros(config, vocab_size),
            v: Params::zeros(config, vocab_size),
        }
    }
}

/// AdamW with decoupled weight decay on flat slices. `step` is 1-based.
pub fn adamw_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "param {} / grad {} / m {} / v {}",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    if step == 0 {
        return Err(ModelError::InvalidTrainConfig("optimizer step is 1-based".into()));
    }
    let b1 = T::of(hyper.beta1);
    let b2 = T::of(hyper.beta2);
    let one = T::one();
    let c1 = T::of(1.0 - hyper.beta1.powi(step as i32));
    let c2 = T::of(1.0 - hyper.beta2.powi(step as i32));
    let lr = T::of(lr);
    let eps = T::of(hyper.eps);
    let wd = T::of(hyper.weight_decay);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * param[i]);
    }
    Ok(())
}

pub fn adamw_step<T: Scalar>(
    params: &mut Params<T>,
    grads: &Params<T>,
    state: &mut AdamState<T>,
    step: u64,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    let mut m = state.m.tensors_mut();
    let mut v = state.v.tensors_mut();
    if g.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
        return Err(ModelError::ShapeMismatch("tensor count differs".into()));
    }
    for i in 0..p.len() {
        let name = p[i].0.clone();
        if g[i].1.shape() != p[i].1.shape() || m[i].1.shape() != p[i].1.shape() {
            return Err(ModelError::ShapeMismatch(name));
        }
        adamw_update(
            &mut p[i].1.data,
            &g[i].1.data,
            &mut m[i].1.data,
            &mut v[i].1.data,
            step,
            lr,
            hyper,
        )
        .map_err(|e| match e {
            ModelError::ShapeMismatch(_) => ModelError::ShapeMismatch(name.clone()),
            other => other,
        })?;
    }
    Ok(())
}

/// Linear decay from `base_lr` at step 0 to 0 at `total_steps`.
pub fn lr_at(step: u64, total_steps: u64, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(ModelError::ZeroTotalSteps);
    }
    let s = step.min(total_steps) as f64;
    Ok(base_lr * (1.0 - s / total_steps as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_hand_value() {
        let (mut p, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        adamw_update(&mut p, &[0.5], &mut m, &mut v, 1, 1e-3, &AdamHyper::default()).unwrap();
        let expected = 1.0 - 1e-3 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.99899).abs() < 1e-8);
    }

    #[test]
    fn two_steps_follow_recurrence() {
        let h = AdamHyper::default();
        let (mut p, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        adamw_update(&mut p, &[0.5], &mut m, &mut v, 1, 1e-3, &h).unwrap();
        adamw_update(&mut p, &[0.5], &mut m, &mut v, 2, 1e-3, &h).unwrap();

        let mut hp = 1.0f64;
        let (mut hm, mut hv) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            hm = 0.9 * hm + 0.1 * 0.5;
            hv = 0.999 * hv + 0.001 * 0.25;
            let mh = hm / (1.0 - 0.9f64.powi(t));
            let vh = hv / (1.0 - 0.999f64.powi(t));
            hp -= 1e-3 * (mh / (vh.sqrt() + 1e-8) + 0.01 * hp);
        }
        assert!((p[0] - hp).abs() < 1e-15);
        assert!((m[0] - 0.095).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let h = AdamHyper {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = [0.3f64, -2.0, 7.5];
        let before = p;
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        for step in 1..=5 {
            adamw_update(&mut p, &[0.0; 3], &mut m, &mut v, step, 1e-2, &h).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn shapes_are_checked() {
        let (mut p, mut m, mut v) = ([1.0f64; 2], [0.0; 2], [0.0; 2]);
        assert!(adamw_update(&mut p, &[0.5], &mut m, &mut v, 1, 1e-3, &AdamHyper::default()).is_err());
    }

    #[test]
    fn linear_schedule() {
        assert_eq!(lr_at(0, 250, 3e-4).unwrap(), 3e-4);
        assert_eq!(lr_at(250, 250, 3e-4).unwrap(), 0.0);
        assert!((lr_at(125, 250, 3e-4).unwrap() - 1.5e-4).abs() < 1e-18);
        assert!(matches!(lr_at(0, 0, 1.0), Err(ModelError::ZeroTotalSteps)));
    }
}
