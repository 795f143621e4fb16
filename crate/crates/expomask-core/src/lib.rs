//! Well-exposed-region segmentation for multi-exposure LDR stacks.
//!
//! The crate covers the full desk-scale experiment: synthetic exposure
//! stacks and PNG dataset I/O ([`image`]), BT.601 luminance ([`color`]),
//! ground-truth masks by manual ranges or Otsu thresholding ([`gtgen`]),
//! an f64 U-Net with hand-written backprop ([`ops`], [`unet`], [`adam`]),
//! the BCE / focal / Dice-BCE objectives ([`losses`]), confusion-based
//! metrics ([`metrics`]), finite-difference verification ([`gradcheck`])
//! and the training / evaluation / reporting pipeline ([`pipeline`]).

pub mod adam;
pub mod color;
pub mod error;
pub mod gradcheck;
pub mod gtgen;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod pipeline;
pub mod resize;
pub mod tensor;
pub mod unet;

pub use error::{Error, Result};
pub use gtgen::{BinaryMask, ExposureClass, ThresholdRanges};
pub use image::{ExposureStack, ImageU8, SynthSceneParams};
pub use losses::LossKind;
pub use metrics::{ConfusionCounts, MetricRow};
pub use pipeline::{GtMethod, TrainConfig, TrainReport};
pub use tensor::Tensor;
pub use unet::{NetMode, UNetConfig, UNetParams};
