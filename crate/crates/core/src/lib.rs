//! Predictive-coding network for next-frame video prediction.
//!
//! - [`tensor`], [`kernels`], [`tape`]: dense NCHW tensors, differentiable kernels and a
//!   recording tape for reverse-mode gradients.
//! - [`model`]: the stacked ConvLSTM / prediction / error-unit state machine and the
//!   encoder-decoder control variants.
//! - [`train`]: the layer/time weighted error loss, Adam, training loops and
//!   extrapolation fine-tuning.
//! - [`data`]: moving-shape sequences with known latents, temporal scrambling and
//!   frame-directory ingestion.
//! - [`metrics`]: MSE, PSNR, SSIM, the copy-last-frame baseline and evaluation tables.
//! - [`readout`]: ridge regression and linear classification on pooled representations.
//! - [`cli`]: the `prednet` command surface.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod readout;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{PredNetConfig, TimeWeighting, Variant};
pub use error::{Error, Result};
pub use model::{build_variant, init_state, Model, NetworkState};
pub use tape::{Gradients, ParamId, Tape, Var};
pub use tensor::{Scalar, Shape, Tensor};
