use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::adapter::{AdapterConfig, AdapterTensors};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moments per tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: AdapterTensors<T>,
    pub v: AdapterTensors<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: &AdapterConfig) -> Self {
        Self {
            m: AdapterTensors::zeros(config),
            v: AdapterTensors::zeros(config),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay, applied to every tensor.
pub fn adamw_step<T: Real>(
    params: &mut AdapterTensors<T>,
    state: &mut AdamState<T>,
    grads: &AdapterTensors<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(TrainError::ShapeMismatch(
            "gradient or moment tensors do not match the parameters".into(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (lr_t, decay, eps) = (T::lit(lr), T::lit(lr * cfg.weight_decay), T::lit(cfg.eps));
    let mut ms = state.m.named_mut();
    let mut vs = state.v.named_mut();
    let gs = grads.named();
    for (((_, mut p), (_, mut m)), ((_, mut v), (_, g))) in params
        .named_mut()
        .into_iter()
        .zip(ms.drain(..))
        .zip(vs.drain(..).zip(gs))
    {
        ndarray::Zip::from(&mut p)
            .and(&mut m)
            .and(&mut v)
            .and(&g)
            .for_each(|p, m, v, &g| {
                *p -= decay * *p;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_setup(theta: f64, g: f64) -> (AdapterTensors<f64>, AdamState<f64>, AdapterTensors<f64>) {
        let cfg = AdapterConfig {
            heads: 1,
            bottleneck: 1,
            ..AdapterConfig::for_dim(1)
        };
        let mut p = AdapterTensors::zeros(&cfg);
        p.w_o[[0, 0]] = theta;
        let mut grads = AdapterTensors::zeros(&cfg);
        grads.w_o[[0, 0]] = g;
        (p, AdamState::new(&cfg), grads)
    }

    #[test]
    fn one_step_by_hand() {
        let (mut p, mut s, g) = scalar_setup(1.0, 1.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adamw_step(&mut p, &mut s, &g, 0.1, &cfg).unwrap();
        assert!((p.w_o[[0, 0]] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn decoupled_decay_only() {
        let (mut p, mut s, g) = scalar_setup(1.0, 0.0);
        adamw_step(&mut p, &mut s, &g, 0.1, &AdamConfig::default()).unwrap();
        assert!((p.w_o[[0, 0]] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut p, mut s, g) = scalar_setup(0.37, 0.0);
        let before = p.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for _ in 0..3 {
            adamw_step(&mut p, &mut s, &g, 0.1, &cfg).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.t, 3);
    }

    #[test]
    fn shape_mismatch() {
        let (mut p, mut s, _) = scalar_setup(1.0, 0.0);
        let other = AdapterTensors::<f64>::zeros(&AdapterConfig::for_dim(4));
        assert!(matches!(
            adamw_step(&mut p, &mut s, &other, 0.1, &AdamConfig::default()),
            Err(TrainError::ShapeMismatch(_))
        ));
        assert_eq!(s.t, 0);
    }
}
