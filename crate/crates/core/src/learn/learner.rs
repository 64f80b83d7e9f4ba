//! A learner bundles one model with its architecture, loss and optimizer
//! state. The synchronization layer treats it as a black box that exposes its
//! model between rounds.

use crate::error::{Error, Result};
use crate::learn::loss::{loss_and_grad, LossSpec};
use crate::learn::optimizer::Optimizer;
use crate::learn::predictor::PredictorSpec;
use crate::params::ModelParams;
use crate::streams::LabeledBatch;

#[derive(Clone, Debug)]
pub struct Learner {
    id: usize,
    predictor: PredictorSpec,
    loss: LossSpec,
    optimizer: Optimizer,
    model: ModelParams,
}

impl Learner {
    pub fn new(
        id: usize,
        predictor: PredictorSpec,
        loss: LossSpec,
        optimizer: Optimizer,
        model: ModelParams,
    ) -> Result<Self> {
        predictor.validate()?;
        loss.validate(predictor.output())?;
        if model.dim() != predictor.param_count() {
            return Err(Error::DimensionMismatch {
                expected: predictor.param_count(),
                got: model.dim(),
            });
        }
        Ok(Learner {
            id,
            predictor,
            loss,
            optimizer,
            model,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn predictor(&self) -> &PredictorSpec {
        &self.predictor
    }

    pub fn loss_spec(&self) -> &LossSpec {
        &self.loss
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn optimizer_mut(&mut self) -> &mut Optimizer {
        &mut self.optimizer
    }

    /// Replaces the model, e.g. with a synchronized average. Optimizer
    /// accumulators are deliberately kept.
    pub fn set_model(&mut self, model: ModelParams) -> Result<()> {
        if model.dim() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim(),
                got: model.dim(),
            });
        }
        self.model = model;
        Ok(())
    }

    /// One local round: evaluate the batch loss at the current model, then
    /// take one optimizer step on its gradient. Returns the loss measured
    /// before the update.
    pub fn local_round(&mut self, batch: &LabeledBatch) -> Result<f64> {
        let (loss, grad) = loss_and_grad(&self.predictor, &self.loss, &self.model, batch)?;
        self.optimizer.step(&mut self.model, &grad)?;
        Ok(loss)
    }
}
