use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

use super::backward::Gradients;

/// SGD hyper-parameters. The learning rate is `base_lr` times `lr_decay` for
/// every milestone (in iterations) already reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    #[serde(default = "defaults::base_lr")]
    pub base_lr: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub milestones: Vec<u64>,
}

mod defaults {
    pub fn base_lr() -> f64 {
        0.1
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn weight_decay() -> f64 {
        1e-4
    }
    pub fn lr_decay() -> f64 {
        0.1
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: defaults::base_lr(),
            momentum: defaults::momentum(),
            weight_decay: defaults::weight_decay(),
            lr_decay: defaults::lr_decay(),
            milestones: Vec::new(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }

    /// Learning rate used at iteration `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= step).count();
        (0..passed).fold(self.base_lr, |lr, _| lr * self.lr_decay)
    }
}

/// Momentum buffers aligned with the network parameters, plus the iteration
/// counter that drives the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub config: OptimConfig,
    pub velocity: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(config: OptimConfig, params: &[&[T]]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.step)
    }
}

/// One update `v <- m v + g + wd w`, `w <- w - lr v`, then advances the step
/// counter. Returns the learning rate that was applied.
pub fn sgd_step<T: Scalar>(
    params: Vec<&mut [T]>,
    grads: &Gradients<T>,
    state: &mut OptimState<T>,
) -> Result<f64> {
    if params.len() != grads.tensors.len() || params.len() != state.velocity.len() {
        return Err(Error::shape(
            "sgd_step",
            &[params.len(), grads.tensors.len()],
            &[state.velocity.len()],
        ));
    }
    let lr = state.lr();
    let (m, wd) = (state.config.momentum, state.config.weight_decay);
    for ((w, g), v) in params
        .into_iter()
        .zip(&grads.tensors)
        .zip(&mut state.velocity)
    {
        if w.len() != g.len() || w.len() != v.len() {
            return Err(Error::shape("sgd_step", &[w.len(), g.len()], &[v.len()]));
        }
        for ((wi, gi), vi) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            let vel = m * vi.as_f64() + gi.as_f64() + wd * wi.as_f64();
            *vi = T::from_f64_lossy(vel);
            *wi = T::from_f64_lossy(wi.as_f64() - lr * vel);
        }
    }
    state.step += 1;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(lr: f64, wd: f64) -> OptimState<f64> {
        let config = OptimConfig {
            base_lr: lr,
            weight_decay: wd,
            ..OptimConfig::default()
        };
        OptimState::new(config, &[&[0.0]]).unwrap()
    }

    #[test]
    fn zero_everything_leaves_params() {
        let mut w = vec![1.5f64, -2.0];
        let mut state = OptimState::new(
            OptimConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
            &[&w],
        )
        .unwrap();
        let g = Gradients {
            tensors: vec![vec![0.0, 0.0]],
        };
        sgd_step(vec![&mut w], &g, &mut state).unwrap();
        assert_eq!(w, vec![1.5, -2.0]);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut state = scalar_state(0.1, 0.0);
        let mut w = vec![1.0f64];
        sgd_step(
            vec![&mut w],
            &Gradients {
                tensors: vec![vec![1.0]],
            },
            &mut state,
        )
        .unwrap();
        assert_eq!(state.velocity[0][0], 1.0);
        assert!((w[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn three_step_trajectory() {
        let mut state = scalar_state(0.05, 1e-4);
        let mut w = vec![2.0f64];
        let gs = [0.3, -0.7, 1.1];
        let (mut hw, mut hv) = (2.0f64, 0.0f64);
        for g in gs {
            sgd_step(
                vec![&mut w],
                &Gradients {
                    tensors: vec![vec![g]],
                },
                &mut state,
            )
            .unwrap();
            hv = 0.9 * hv + g + 1e-4 * hw;
            hw -= 0.05 * hv;
        }
        assert!((w[0] - hw).abs() <= 1e-7);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn momentum_keeps_moving_along_negative_gradient() {
        let mut state = scalar_state(0.1, 0.0);
        let mut w = vec![0.0f64];
        let g = Gradients {
            tensors: vec![vec![0.5]],
        };
        sgd_step(vec![&mut w], &g, &mut state).unwrap();
        let after_one = w[0];
        sgd_step(vec![&mut w], &g, &mut state).unwrap();
        assert!(after_one < 0.0 && w[0] < after_one);
    }

    #[test]
    fn milestone_drops_lr_tenfold() {
        let config = OptimConfig {
            milestones: vec![3, 5],
            ..Default::default()
        };
        assert_eq!(config.lr_at(2), 0.1);
        assert_eq!(config.lr_at(3), config.lr_at(2) * 0.1);
        assert_eq!(config.lr_at(5), config.lr_at(4) * 0.1);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = OptimConfig {
            base_lr: 0.0,
            ..Default::default()
        };
        assert!(OptimState::<f32>::new(bad, &[]).is_err());
    }
}
