//! Loss functions over a mini-batch: value plus exact analytic gradient.
//!
//! Batch losses are summed over samples, not averaged; the learning rate
//! absorbs the batch-size convention. The ridge term `lambda/2 * ||f||^2` is
//! added once per batch and contributes `lambda * f` to the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::predictor::{softmax, Output, PredictorSpec};
use crate::params::ModelParams;
use crate::streams::LabeledBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default)]
    pub lambda: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec { kind, lambda: 0.0 }
    }

    pub fn with_lambda(kind: LossKind, lambda: f64) -> Self {
        LossSpec { kind, lambda }
    }

    pub fn validate(&self, output: Output) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::config(
                "loss.lambda",
                format!("must be a nonnegative finite number, got {}", self.lambda),
            ));
        }
        match (self.kind, output) {
            (LossKind::Squared | LossKind::Logistic, Output::Scalar) => Ok(()),
            (LossKind::CrossEntropy, Output::Classes(_)) => Ok(()),
            (LossKind::CrossEntropy, Output::Scalar) => Err(Error::config(
                "loss.kind",
                "cross_entropy requires a class output head",
            )),
            (k, Output::Classes(_)) => Err(Error::config(
                "loss.kind",
                format!("{k:?} requires a scalar output head"),
            )),
        }
    }
}

/// `ln(1 + exp(z))` without overflow for large `|z|`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Loss of one raw head output against a label, and the derivative with
/// respect to each head output.
fn sample_loss(kind: LossKind, out: &[f64], y: f64, d_out: &mut [f64]) -> Result<f64> {
    match kind {
        LossKind::Squared => {
            let p = out[0];
            d_out[0] = p - y;
            Ok(0.5 * (p - y) * (p - y))
        }
        LossKind::Logistic => {
            if y != 1.0 && y != -1.0 {
                return Err(Error::Data(format!(
                    "logistic loss needs labels in {{-1, 1}}, got {y}"
                )));
            }
            let p = out[0];
            // d/dp ln(1 + exp(-y p)) = -y * sigmoid(-y p)
            d_out[0] = -y / (1.0 + (y * p).exp());
            Ok(softplus(-y * p))
        }
        LossKind::CrossEntropy => {
            let k = out.len();
            if y.fract() != 0.0 || y < 0.0 || y >= k as f64 {
                return Err(Error::Data(format!(
                    "cross-entropy label must be an integer in [0, {k}), got {y}"
                )));
            }
            let class = y as usize;
            let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = out.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
            let probs = softmax(out);
            for (d, p) in d_out.iter_mut().zip(&probs) {
                *d = *p;
            }
            d_out[class] -= 1.0;
            Ok(log_sum - out[class])
        }
    }
}

/// Loss summed over the batch plus the ridge term, and its exact gradient.
pub fn loss_and_grad(
    predictor: &PredictorSpec,
    loss: &LossSpec,
    f: &ModelParams,
    batch: &LabeledBatch,
) -> Result<(f64, ModelParams)> {
    loss.validate(predictor.output())?;
    if batch.width() != predictor.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: predictor.input_dim(),
            got: batch.width(),
        });
    }
    let out_dim = predictor.output().dim();
    let mut grad = vec![0.0; f.dim()];
    let mut d_out = vec![0.0; out_dim];
    let mut total = 0.0;
    for i in 0..batch.len() {
        let x = batch.row(i);
        let trace = predictor.forward(f, x)?;
        total += sample_loss(loss.kind, &trace.out, batch.label(i), &mut d_out)?;
        predictor.backward_into(f, x, &trace, &d_out, &mut grad);
    }
    if loss.lambda > 0.0 {
        total += 0.5 * loss.lambda * f.sq_norm();
        for (g, w) in grad.iter_mut().zip(f.weights()) {
            *g += loss.lambda * w;
        }
    }
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite batch loss {total}")));
    }
    Ok((total, ModelParams::new(grad)?))
}
