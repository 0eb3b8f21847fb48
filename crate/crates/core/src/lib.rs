//! Detection training with mixed-strength augmentation and teacher pseudo boxes.
//!
//! The crate implements a small, self-contained object-detection training
//! system on a synthetic colored-shapes benchmark:
//!
//! - [`boxes`]: axis-aligned box arithmetic (IoU, NMS),
//! - [`synth`]: reproducible scene rendering plus annotation-noise injection,
//! - [`augment`]: normal/strong augmentation pipelines with exact box remapping,
//! - [`detector`]: a tiny grid detector with manual backprop and SGD,
//! - [`ema`]: the exponential-moving-average teacher producing pseudo boxes,
//! - [`mixer`]: strategies merging pseudo boxes into human annotations,
//! - [`train`]: the full training loop (mixtraining and sitraining baselines),
//! - [`eval`]: COCO-protocol mean average precision.

pub mod augment;
pub mod boxes;
pub mod detector;
pub mod ema;
pub mod error;
pub mod eval;
pub mod image;
pub mod mixer;
pub mod rng;
pub mod synth;
pub mod train;

pub use boxes::{BBox, ScoredBox};
pub use error::{Error, Result};
pub use image::Image;
pub use synth::{Dataset, LabeledBox, NoiseConfig, Provenance, Sample, SceneConfig};
