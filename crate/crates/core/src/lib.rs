//! Residual-CNN speckle denoising for OCT-style grayscale B-scans.
//!
//! The network predicts the noise image and the denoised result is the noisy
//! input minus that prediction. Around it sit the data pipeline (ground truth
//! by registering and averaging repeated scans, synthetic speckle phantoms,
//! PGM/TNS1 I/O), patch-based training, classical baselines and PSNR/SSIM
//! evaluation.

pub mod cli;
pub mod dataprep;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;
mod util;

pub use error::{Error, Result};
pub use tensor::{Dims, Real, Tensor};
