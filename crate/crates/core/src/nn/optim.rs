//! AdamW with decoupled weight decay, global-norm clipping and a cosine
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::params::{ParamSet, Tensor};
use super::real::Real;
use crate::error::{ensure, Error, Result};

/// Cosine annealing from `base` to `final_lr` over `total_steps`, constant
/// afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base: f64,
    pub final_lr: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    /// Anneal to `base / 100`.
    pub fn to_hundredth(base: f64, total_steps: u64) -> Self {
        Self { base, final_lr: base / 100.0, total_steps }
    }

    pub fn constant(lr: f64) -> Self {
        Self { base: lr, final_lr: lr, total_steps: 1 }
    }

    pub fn lr(&self, step: u64) -> f64 {
        let total = self.total_steps.max(1);
        let frac = step.min(total) as f64 / total as f64;
        self.final_lr + 0.5 * (self.base - self.final_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub schedule: CosineSchedule,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(schedule: CosineSchedule, weight_decay: f64, clip_norm: Option<f64>) -> Self {
        Self { schedule, weight_decay, clip_norm, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Summary of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new(config: AdamWConfig, ps: &ParamSet<T>) -> Result<Self> {
        ensure!(config.schedule.base >= 0.0 && config.schedule.final_lr >= 0.0, "negative learning rate");
        ensure!(config.weight_decay >= 0.0, "negative weight decay");
        ensure!(config.clip_norm.is_none_or(|c| c > 0.0), "clip norm must be positive");
        let zeros = || ps.params.iter().map(|(_, p)| Tensor::zeros(p.raw_dim())).collect();
        Ok(Self { config, step: 0, m: zeros(), v: zeros() })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Clip, then apply one AdamW update using the accumulated gradients.
    /// Gradients are left in their clipped state.
    pub fn step(&mut self, ps: &mut ParamSet<T>) -> Result<StepInfo> {
        for ((name, _), g) in ps.params.iter().zip(ps.grads.iter()) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericalAbort { step: self.step, what: format!("non-finite gradient for {name}") });
            }
        }
        let norm = ps.grads.global_norm().as_f64();
        if let Some(c) = self.config.clip_norm {
            if norm > c {
                ps.grads.scale(T::lit(c / norm));
            }
        }
        let cfg = self.config;
        let lr = cfg.schedule.lr(self.step);
        let t = (self.step + 1) as i32;
        let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
        let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
        let (b1, b2, eps) = (T::lit(cfg.beta1), T::lit(cfg.beta2), T::lit(cfg.eps));
        let (lr_t, decay) = (T::lit(lr), T::lit(1.0 - lr * cfg.weight_decay));
        let one = T::one();
        for (((p, g), m), v) in ps.params.values_mut().zip(ps.grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = *p * decay - lr_t * mhat / (vhat.sqrt() + eps);
            });
        }
        self.step += 1;
        Ok(StepInfo { lr, grad_norm: norm })
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{arr1, IxDyn};

    use super::*;
    use crate::nn::params::Params;

    fn scalar_set(w: f64) -> ParamSet<f64> {
        let mut p = Params::new();
        p.add("w", arr1(&[w]).into_dyn()).unwrap();
        ParamSet::new(p)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = scalar_set(0.7);
        let mut opt = OptimState::new(AdamWConfig::new(CosineSchedule::constant(0.1), 0.0, Some(1.0)), &ps).unwrap();
        for _ in 0..10 {
            opt.step(&mut ps).unwrap();
        }
        assert_eq!(ps.params.iter().next().unwrap().1[[0]], 0.7);
        assert_eq!(opt.step_count(), 10);
    }

    #[test]
    fn quadratic_converges() {
        let mut ps = scalar_set(1.0);
        let mut opt = OptimState::new(AdamWConfig::new(CosineSchedule::to_hundredth(0.1, 200), 0.0, None), &ps).unwrap();
        for _ in 0..200 {
            let w = ps.params.iter().next().unwrap().1[[0]];
            ps.zero_grad();
            ps.grads.iter_mut().next().unwrap()[[0]] = 2.0 * w;
            opt.step(&mut ps).unwrap();
        }
        let w = ps.params.iter().next().unwrap().1[[0]];
        assert!(w.abs() < 1e-3, "w = {w}");
    }

    #[test]
    fn clipping_caps_norm() {
        let mut p = Params::<f64>::new();
        p.add("a", Tensor::zeros(IxDyn(&[2]))).unwrap();
        let mut ps = ParamSet::new(p);
        ps.grads.iter_mut().next().unwrap().assign(&arr1(&[6.0, 8.0]).into_dyn());
        let mut opt = OptimState::new(AdamWConfig::new(CosineSchedule::constant(1e-3), 0.0, Some(1.0)), &ps).unwrap();
        let info = opt.step(&mut ps).unwrap();
        assert!((info.grad_norm - 10.0).abs() < 1e-12);
        assert!((ps.grads.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut ps = scalar_set(1.0);
        ps.grads.iter_mut().next().unwrap()[[0]] = f64::NAN;
        let mut opt = OptimState::new(AdamWConfig::new(CosineSchedule::constant(1e-3), 0.0, None), &ps).unwrap();
        let err = opt.step(&mut ps).unwrap_err().to_string();
        assert!(err.contains("for w"), "{err}");
    }

    #[test]
    fn schedule_endpoints() {
        let s = CosineSchedule::to_hundredth(1e-3, 100);
        assert!((s.lr(0) - 1e-3).abs() < 1e-15);
        assert!((s.lr(100) - 1e-5).abs() < 1e-15);
        assert!((s.lr(500) - 1e-5).abs() < 1e-15);
        assert!(s.lr(30) > s.lr(60));
    }
}
