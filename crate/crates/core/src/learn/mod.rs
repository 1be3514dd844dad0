//! Imitation learning of potentials from hindsight-optimal decisions, plus a
//! derivative-free baseline.

mod blackbox;
mod dataset;
mod gradcheck;
mod losses;
mod train;

pub use blackbox::{blackbox_optimize, BlackboxConfig, BlackboxResult};
pub use dataset::{build_dataset, ImitationDataset, ImitationExample};
pub use gradcheck::{gradcheck, gradcheck_losses, jitter, GradcheckReport, KINK_EXCLUSION};
pub use losses::{ranking_loss, sigmoid, softplus, LossKind};
pub use train::{
    agreement, batch_loss_grad, dataset_loss, example_loss, example_loss_grad, fit_scaler, train, LossSpec,
    TrainConfig, TrainOutcome,
};
