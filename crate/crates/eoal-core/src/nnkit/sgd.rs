//! SGD with momentum, weight decay, and a stepped learning-rate schedule.

use super::ParamKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig<T> {
    pub learning_rate: T,
    pub momentum: T,
    pub weight_decay: T,
    /// Multiplier applied to the learning rate every `step_decay_every` epochs.
    pub step_decay_factor: T,
    pub step_decay_every: usize,
}

/// Optimizer state: configuration, current epoch, and one velocity buffer per
/// parameter tensor (allocated on the first step).
#[derive(Debug, Clone)]
pub struct SgdState<T> {
    cfg: SgdConfig<T>,
    epoch: usize,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(cfg: SgdConfig<T>) -> Result<Self> {
        if !(cfg.learning_rate > T::zero()) {
            return Err(Error::config(format!(
                "learning rate must be > 0, got {}",
                cfg.learning_rate
            )));
        }
        if cfg.momentum < T::zero() || cfg.weight_decay < T::zero() {
            return Err(Error::config(
                "momentum and weight decay must be non-negative",
            ));
        }
        if cfg.step_decay_every == 0 {
            return Err(Error::config("step_decay_every must be >= 1"));
        }
        Ok(SgdState {
            cfg,
            epoch: 0,
            velocity: Vec::new(),
        })
    }

    /// Sets the current epoch, which determines the effective learning rate.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    /// Effective learning rate: the base rate decayed once per completed
    /// `step_decay_every`-epoch block.
    pub fn learning_rate(&self) -> T {
        let decays = (self.epoch / self.cfg.step_decay_every) as i32;
        self.cfg.learning_rate * self.cfg.step_decay_factor.powi(decays)
    }

    pub fn config(&self) -> &SgdConfig<T> {
        &self.cfg
    }

    /// One update: `v <- momentum*v + grad + weight_decay*param` (decay on
    /// weights only), then `param <- param - lr*v`. `params` and `grads`
    /// must enumerate the same tensors in the same order on every call.
    pub fn step(
        &mut self,
        params: &mut [(&mut [T], ParamKind)],
        grads: &[(&[T], ParamKind)],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors vs {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(p, _)| vec![T::zero(); p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::shape(
                "optimizer state does not match this parameter set",
            ));
        }
        let lr = self.learning_rate();
        for (t, ((param, kind), (grad, gkind))) in params.iter_mut().zip(grads).enumerate() {
            if param.len() != grad.len() || self.velocity[t].len() != param.len() {
                return Err(Error::shape(format!(
                    "tensor {t}: param/grad/velocity length mismatch"
                )));
            }
            if kind != gkind {
                return Err(Error::shape(format!("tensor {t}: weight/bias kind mismatch")));
            }
            let decay = match kind {
                ParamKind::Weight => self.cfg.weight_decay,
                ParamKind::Bias => T::zero(),
            };
            let vel = &mut self.velocity[t];
            for ((p, &g), v) in param.iter_mut().zip(grad.iter()).zip(vel.iter_mut()) {
                *v = self.cfg.momentum * *v + g + decay * *p;
                *p = *p - lr * *v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_cfg(lr: f64, momentum: f64, weight_decay: f64) -> SgdConfig<f64> {
        SgdConfig {
            learning_rate: lr,
            momentum,
            weight_decay,
            step_decay_factor: 0.5,
            step_decay_every: 60,
        }
    }

    #[test]
    fn no_momentum_no_decay_is_plain_gradient_descent() {
        let mut sgd = SgdState::new(plain_cfg(0.1, 0.0, 0.0)).unwrap();
        let mut p = vec![1.0, -2.0];
        let g = vec![0.5, 0.25];
        sgd.step(
            &mut [(&mut p, ParamKind::Weight)],
            &[(&g, ParamKind::Weight)],
        )
        .unwrap();
        assert!((p[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        assert!((p[1] - (-2.0 - 0.1 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates_per_hand_recurrence() {
        // Constant gradient g with momentum 0.9: v1 = g, v2 = 1.9 g.
        let mut sgd = SgdState::new(plain_cfg(1.0, 0.9, 0.0)).unwrap();
        let mut p = vec![0.0];
        let g = vec![2.0];
        sgd.step(
            &mut [(&mut p, ParamKind::Weight)],
            &[(&g, ParamKind::Weight)],
        )
        .unwrap();
        assert!((p[0] - (-2.0)).abs() < 1e-15);
        sgd.step(
            &mut [(&mut p, ParamKind::Weight)],
            &[(&g, ParamKind::Weight)],
        )
        .unwrap();
        // p = -v1 - v2 = -(2.0) - (1.9 * 2.0) = -5.8
        assert!((p[0] - (-5.8)).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_applies_to_weights_only() {
        let mut sgd = SgdState::new(plain_cfg(0.1, 0.0, 0.5)).unwrap();
        let mut w = vec![1.0];
        let mut b = vec![1.0];
        let zero = vec![0.0];
        sgd.step(
            &mut [(&mut w, ParamKind::Weight), (&mut b, ParamKind::Bias)],
            &[(&zero, ParamKind::Weight), (&zero, ParamKind::Bias)],
        )
        .unwrap();
        assert!((w[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
        assert!((b[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn learning_rate_halves_exactly_at_schedule_boundaries() {
        let mut sgd = SgdState::new(SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.005,
            step_decay_factor: 0.5,
            step_decay_every: 60,
        })
        .unwrap();
        for (epoch, expected) in
            [(0usize, 0.01f64), (59, 0.01), (60, 0.005), (119, 0.005), (120, 0.0025)]
        {
            sgd.set_epoch(epoch);
            assert!(
                (sgd.learning_rate() - expected).abs() < 1e-15,
                "epoch {epoch}"
            );
        }
    }

    #[test]
    fn rejects_invalid_config_and_shape_drift() {
        assert!(SgdState::new(plain_cfg(0.0, 0.9, 0.0)).is_err());
        assert!(SgdState::new(SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            step_decay_factor: 0.5,
            step_decay_every: 0,
        })
        .is_err());

        let mut sgd = SgdState::new(plain_cfg(0.1, 0.0, 0.0)).unwrap();
        let mut p = vec![1.0, 2.0];
        let g = vec![0.5, 0.5];
        sgd.step(
            &mut [(&mut p, ParamKind::Weight)],
            &[(&g, ParamKind::Weight)],
        )
        .unwrap();
        let g_short = vec![0.5];
        assert!(sgd
            .step(
                &mut [(&mut p, ParamKind::Weight)],
                &[(&g_short, ParamKind::Weight)],
            )
            .is_err());
    }
}
