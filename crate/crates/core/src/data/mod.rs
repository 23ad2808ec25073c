//! Synthetic data, image files and augmentation.

pub mod augment;
pub mod dataset;
pub mod pnm;
pub mod synth;

pub use augment::{AugmentConfig, AugmentDraw};
pub use dataset::{image_tensor, label_tensor, load_split, synth_dataset, Sample, Split};
