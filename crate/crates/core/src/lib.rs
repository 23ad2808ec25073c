//! Weakly-supervised semantic segmentation with flexible context aggregation
//! and semantically aligned feature fusion.
//!
//! The crate builds on [`wsfcn_tensor`] and provides the model modules, the
//! training and evaluation pipeline, a synthetic shapes dataset and the
//! experiment harness used by the `wsfcn` binary.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod fca;
pub mod gradcheck;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pamr;
mod par;
pub mod segnet;
pub mod sf2;

pub use error::{Error, Result};
pub use model::{init_params, ModelConfig, Variant};
pub use segnet::{infer_masks, model_forward, train_step, ModelOutput, Phase, StepReport};
pub use wsfcn_tensor as tensor;
