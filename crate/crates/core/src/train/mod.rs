//! Patch-based training of the noise predictor under the mean squared
//! noise-residual loss, with Adam, flip augmentation and early stopping.

mod config;
pub mod loss;
pub mod optim;
pub mod patches;
mod trainer;

pub use config::TrainConfig;
pub use loss::{loss_eq1, noise_loss};
pub use optim::{optimizer_step, AdamConfig, OptimizerState};
pub use patches::{augment, extract_patches, patch_origins, PatchPair};
pub use trainer::{
    evaluate_loss, loss_csv, split_indices, train_loop, train_network, write_loss_csv, TrainOutcome,
};
