//! First-order update rules. All state lives here so a learner's update is
//! `model <- update(model, grad)` with no hidden inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Rmsprop,
}

/// Optimizer state. Accumulator vectors always match the model dimension.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd {
        eta: f64,
        steps: u64,
    },
    Adam {
        eta: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        first: Vec<f64>,
        second: Vec<f64>,
        steps: u64,
    },
    Rmsprop {
        eta: f64,
        decay: f64,
        eps: f64,
        mean_sq: Vec<f64>,
        steps: u64,
    },
}

fn check_eta(eta: f64) -> Result<()> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::config(
            "learner.learning_rate",
            format!("must be a positive finite number, got {eta}"),
        ));
    }
    Ok(())
}

impl Optimizer {
    pub fn sgd(eta: f64) -> Result<Self> {
        check_eta(eta)?;
        Ok(Optimizer::Sgd { eta, steps: 0 })
    }

    pub fn adam(eta: f64, dim: usize) -> Result<Self> {
        check_eta(eta)?;
        Ok(Optimizer::Adam {
            eta,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            first: vec![0.0; dim],
            second: vec![0.0; dim],
            steps: 0,
        })
    }

    pub fn rmsprop(eta: f64, dim: usize) -> Result<Self> {
        check_eta(eta)?;
        Ok(Optimizer::Rmsprop {
            eta,
            decay: RMSPROP_DECAY,
            eps: RMSPROP_EPS,
            mean_sq: vec![0.0; dim],
            steps: 0,
        })
    }

    pub fn new(kind: OptimizerKind, eta: f64, dim: usize) -> Result<Self> {
        match kind {
            OptimizerKind::Sgd => Optimizer::sgd(eta),
            OptimizerKind::Adam => Optimizer::adam(eta, dim),
            OptimizerKind::Rmsprop => Optimizer::rmsprop(eta, dim),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Sgd { .. } => OptimizerKind::Sgd,
            Optimizer::Adam { .. } => OptimizerKind::Adam,
            Optimizer::Rmsprop { .. } => OptimizerKind::Rmsprop,
        }
    }

    pub fn eta(&self) -> f64 {
        match self {
            Optimizer::Sgd { eta, .. }
            | Optimizer::Adam { eta, .. }
            | Optimizer::Rmsprop { eta, .. } => *eta,
        }
    }

    pub fn set_eta(&mut self, new_eta: f64) -> Result<()> {
        check_eta(new_eta)?;
        match self {
            Optimizer::Sgd { eta, .. }
            | Optimizer::Adam { eta, .. }
            | Optimizer::Rmsprop { eta, .. } => *eta = new_eta,
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        match self {
            Optimizer::Sgd { steps, .. }
            | Optimizer::Adam { steps, .. }
            | Optimizer::Rmsprop { steps, .. } => *steps,
        }
    }

    fn check_dims(&self, model_dim: usize, grad_dim: usize) -> Result<()> {
        if model_dim != grad_dim {
            return Err(Error::DimensionMismatch {
                expected: model_dim,
                got: grad_dim,
            });
        }
        let acc_dim = match self {
            Optimizer::Sgd { .. } => return Ok(()),
            Optimizer::Adam { first, .. } => first.len(),
            Optimizer::Rmsprop { mean_sq, .. } => mean_sq.len(),
        };
        if acc_dim != model_dim {
            return Err(Error::DimensionMismatch {
                expected: acc_dim,
                got: model_dim,
            });
        }
        Ok(())
    }

    /// Applies one update in place. The step counter advances by exactly 1.
    pub fn step(&mut self, f: &mut ModelParams, grad: &ModelParams) -> Result<()> {
        self.check_dims(f.dim(), grad.dim())?;
        let g = grad.weights();
        match self {
            Optimizer::Sgd { eta, steps } => {
                for (w, gj) in f.weights_mut().iter_mut().zip(g) {
                    *w -= *eta * gj;
                }
                *steps += 1;
            }
            Optimizer::Adam {
                eta,
                beta1,
                beta2,
                eps,
                first,
                second,
                steps,
            } => {
                *steps += 1;
                let t = *steps as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for ((w, gj), (m, v)) in f
                    .weights_mut()
                    .iter_mut()
                    .zip(g)
                    .zip(first.iter_mut().zip(second.iter_mut()))
                {
                    *m = *beta1 * *m + (1.0 - *beta1) * gj;
                    *v = *beta2 * *v + (1.0 - *beta2) * gj * gj;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= *eta * m_hat / (v_hat.sqrt() + *eps);
                }
            }
            Optimizer::Rmsprop {
                eta,
                decay,
                eps,
                mean_sq,
                steps,
            } => {
                for ((w, gj), e) in f.weights_mut().iter_mut().zip(g).zip(mean_sq.iter_mut()) {
                    *e = *decay * *e + (1.0 - *decay) * gj * gj;
                    *w -= *eta * gj / (*e + *eps).sqrt();
                }
                *steps += 1;
            }
        }
        if let Some(j) = f.weights().iter().position(|w| !w.is_finite()) {
            return Err(Error::Numeric(format!(
                "parameter {j} became non-finite after an optimizer step"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: &[f64]) -> ModelParams {
        ModelParams::new(w.to_vec()).unwrap()
    }

    #[test]
    fn sgd_hand_traced() {
        let mut opt = Optimizer::sgd(0.5).unwrap();
        let mut f = params(&[0.0]);
        opt.step(&mut f, &params(&[-1.0])).unwrap();
        assert_eq!(f.weights(), &[0.5]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn sgd_is_linear_in_the_gradient() {
        // two steps on g/2 equal one step on g
        let g = params(&[2.0, -4.0]);
        let half = params(&[1.0, -2.0]);
        let mut a = params(&[1.0, 1.0]);
        let mut b = params(&[1.0, 1.0]);
        let mut opt_a = Optimizer::sgd(0.25).unwrap();
        let mut opt_b = Optimizer::sgd(0.25).unwrap();
        opt_a.step(&mut a, &g).unwrap();
        opt_b.step(&mut b, &half).unwrap();
        opt_b.step(&mut b, &half).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_grad_is_identity_for_all_kinds() {
        let zero = params(&[0.0, 0.0]);
        for mut opt in [
            Optimizer::sgd(0.1).unwrap(),
            Optimizer::adam(0.1, 2).unwrap(),
            Optimizer::rmsprop(0.1, 2).unwrap(),
        ] {
            let mut f = params(&[1.0, -2.0]);
            opt.step(&mut f, &zero).unwrap();
            assert_eq!(f.weights(), &[1.0, -2.0], "{:?}", opt.kind());
            assert_eq!(opt.steps(), 1);
        }
    }

    #[test]
    fn adam_first_step_is_a_full_rate_step_against_the_sign() {
        // bias correction makes m_hat = g, v_hat = g^2, so the first update
        // is -eta * g / (|g| + eps), i.e. nearly -eta * sign(g)
        let mut opt = Optimizer::adam(0.1, 1).unwrap();
        let mut f = params(&[1.0]);
        opt.step(&mut f, &params(&[2.0])).unwrap();
        assert!((f.weights()[0] - 0.9).abs() < 1e-8);
        let mut f2 = params(&[1.0]);
        let mut opt2 = Optimizer::adam(0.1, 1).unwrap();
        opt2.step(&mut f2, &params(&[-0.001])).unwrap();
        assert!((f2.weights()[0] - 1.1).abs() < 1e-5);
    }

    #[test]
    fn adam_constant_gradient_keeps_unit_rate_steps() {
        // with a constant gradient, bias-corrected moments stay at g and g^2
        let mut opt = Optimizer::adam(0.1, 1).unwrap();
        let mut f = params(&[1.0]);
        for _ in 0..10 {
            opt.step(&mut f, &params(&[2.0])).unwrap();
        }
        assert_eq!(opt.steps(), 10);
        assert!((f.weights()[0] - 0.0).abs() < 1e-6, "{}", f.weights()[0]);
    }

    #[test]
    fn rmsprop_hand_traced_first_step() {
        // E = 0.1 * g^2 = 0.1; step = eta / sqrt(0.1 + eps)
        let mut opt = Optimizer::rmsprop(0.1, 1).unwrap();
        let mut f = params(&[0.0]);
        opt.step(&mut f, &params(&[1.0])).unwrap();
        let expect = -0.1 / (0.1f64 + 1e-8).sqrt();
        assert!((f.weights()[0] - expect).abs() < 1e-12);
        assert!((f.weights()[0] + 0.31622775).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_step_size_converges_to_eta_on_unit_gradient() {
        let mut opt = Optimizer::rmsprop(0.05, 1).unwrap();
        let mut f = params(&[0.0]);
        let g = params(&[1.0]);
        let mut prev = f.weights()[0];
        for _ in 0..200 {
            prev = f.weights()[0];
            opt.step(&mut f, &g).unwrap();
        }
        let last_step = (f.weights()[0] - prev).abs();
        assert!((last_step - 0.05).abs() < 1e-3, "step {last_step}");
    }

    #[test]
    fn rejects_bad_learning_rates_and_dims() {
        assert!(Optimizer::sgd(0.0).is_err());
        assert!(Optimizer::sgd(-1.0).is_err());
        assert!(Optimizer::sgd(f64::NAN).is_err());
        let mut opt = Optimizer::adam(0.1, 3).unwrap();
        let mut f = params(&[0.0, 0.0]);
        assert!(opt.step(&mut f, &params(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn set_eta_preserves_accumulators() {
        let mut opt = Optimizer::adam(0.1, 1).unwrap();
        let mut f = params(&[1.0]);
        opt.step(&mut f, &params(&[2.0])).unwrap();
        opt.set_eta(0.05).unwrap();
        assert_eq!(opt.eta(), 0.05);
        assert_eq!(opt.steps(), 1);
        assert!(opt.set_eta(0.0).is_err());
    }
}
