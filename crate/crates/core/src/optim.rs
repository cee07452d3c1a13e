//! Adam and a stepwise learning-rate decay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::{MscaleNet, NetError, NetGradient};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("gradient entry {index} is not finite ({value})")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("optimizer state has {state} entries but the network has {params}")]
    Shape { state: usize, params: usize },
    #[error("invalid optimizer setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(OptimError::Invalid(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2)));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(OptimError::Invalid(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Moment estimates for one network, stored flat in `MscaleNet::blocks` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            config,
        }
    }

    pub fn for_net(net: &MscaleNet, config: AdamConfig) -> Self {
        Self::new(net.num_params(), config)
    }

    /// One update of `params` in place. Nothing is modified when the gradient
    /// has a non-finite entry.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), OptimError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(OptimError::Shape {
                state: self.m.len(),
                params: params.len().max(grads.len()),
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient { index, value: grads[index] });
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Applies one Adam step to every parameter block of `net`.
pub fn adam_step(state: &mut AdamState, net: &mut MscaleNet, grad: &NetGradient, lr: f64) -> Result<(), OptimError> {
    if grad.len() != state.m.len() {
        return Err(OptimError::Shape {
            state: state.m.len(),
            params: grad.len(),
        });
    }
    let mut params = net.to_flat();
    state.step_slice(&mut params, &grad.to_flat(), lr)?;
    net.set_flat(&params)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, decay_factor: f64, decay_every: u64) -> Result<Self, OptimError> {
        if !(initial_lr.is_finite() && initial_lr > 0.0) {
            return Err(OptimError::Invalid(format!("initial_lr must be positive, got {initial_lr}")));
        }
        if !(decay_factor > 0.0 && decay_factor <= 1.0) {
            return Err(OptimError::Invalid(format!("decay_factor must lie in (0, 1], got {decay_factor}")));
        }
        if decay_every == 0 {
            return Err(OptimError::Invalid("decay_every must be positive".into()));
        }
        Ok(Self {
            initial_lr,
            decay_factor,
            decay_every,
        })
    }

    /// Constant rate, 5% decay every 50 epochs.
    pub fn with_default_decay(initial_lr: f64) -> Result<Self, OptimError> {
        Self::new(initial_lr, 0.95, 50)
    }

    pub fn lr_at(&self, epoch: u64) -> f64 {
        let k = (epoch / self.decay_every).min(i32::MAX as u64) as i32;
        self.initial_lr * self.decay_factor.powi(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_lr_sized() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut theta = [0.0];
        s.step_slice(&mut theta, &[4.0], 0.001).unwrap();
        let expected = -0.001 * 4.0 / (4.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-18);
        assert!((s.m[0] / 0.1 - 4.0).abs() < 1e-12);
        assert!((s.v[0] / (1.0 - 0.999) - 16.0).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut theta = [1.5, -2.0, 0.25];
        for _ in 0..5 {
            s.step_slice(&mut theta, &[0.0; 3], 0.01).unwrap();
        }
        assert_eq!(theta, [1.5, -2.0, 0.25]);
    }

    #[test]
    fn non_finite_gradient_names_the_index() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut theta = [1.0; 3];
        match s.step_slice(&mut theta, &[0.0, 1.0, f64::NAN], 0.01) {
            Err(OptimError::NonFiniteGradient { index: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert_eq!(s.step, 0);
        assert_eq!(theta, [1.0; 3]);
    }

    #[test]
    fn quadratic_descends() {
        for lr in [0.1, 0.01, 0.001] {
            let mut s = AdamState::new(1, AdamConfig::default());
            let mut theta = [1.0];
            let mut prev = 1.0f64;
            let mut crossed = false;
            for _ in 0..1000 {
                let g = theta[0];
                s.step_slice(&mut theta, &[g], lr).unwrap();
                // Strict descent until the first crossing of zero; after
                // that momentum makes Adam ring, but never past the start.
                crossed |= theta[0] <= 0.0;
                if !crossed {
                    assert!(theta[0] < prev);
                }
                assert!(theta[0].abs() <= 1.0);
                prev = theta[0];
            }
            assert!(theta[0].abs() < 0.5, "lr {lr}: {}", theta[0]);
        }
    }

    #[test]
    fn schedule_steps_down() {
        let s = LrSchedule::with_default_decay(4e-3).unwrap();
        assert_eq!(s.lr_at(0), 4e-3);
        assert_eq!(s.lr_at(49), 4e-3);
        assert!((s.lr_at(50) - 3.8e-3).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for e in 0..400 {
            let lr = s.lr_at(e);
            assert!(lr <= prev);
            if e % 50 != 0 {
                assert_eq!(lr, prev);
            }
            prev = lr;
        }
        assert!(LrSchedule::new(0.0, 0.95, 50).is_err());
        assert!(LrSchedule::new(1e-3, 1.5, 50).is_err());
        assert!(LrSchedule::new(1e-3, 0.95, 0).is_err());
    }
}
