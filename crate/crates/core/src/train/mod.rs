//! Losses, gradients, optimisation and density control.

pub mod backward;
pub mod loss;
pub mod ssim;

pub use backward::{backward, BackwardOutput, GradientSet};
pub use loss::{loss_weighted, LossWeights};
pub use ssim::{ssim, ssim_map, GaussianWindow};
pub mod adam;
pub mod densify;
pub mod trainer;

pub use adam::{adam_step, AdamState, LearningRates};
pub use densify::{densify_prune, DensifyConfig, DensifyReport, DensifyStats};
pub use trainer::{holdout_split, train, train_views, LossRecord, TrainConfig, TrainResult, TrainingView};
