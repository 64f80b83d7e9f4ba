//! Local learning: predictors, losses, optimizers, and the learner that
//! composes them.

mod learner;
mod loss;
mod optimizer;
mod predictor;

pub use learner::Learner;
pub use loss::{loss_and_grad, LossKind, LossSpec};
pub use optimizer::{Optimizer, OptimizerKind};
pub use predictor::{Activation, Output, Prediction, PredictorSpec};
