//! Audio-visual frame-level expression recognition.
//!
//! A dual-branch Transformer over per-frame visual and audio features with
//! bidirectional cross-attention that degrades safely when the visual
//! stream is missing, gated fusion, class-balanced focal loss, modality
//! dropout, and overlapping-window soft voting with median smoothing for
//! long videos.

pub mod baseline;
pub mod dataio;
mod error;
pub mod fusion;
pub mod inference;
pub mod metrics;
pub mod numcore;
pub mod objective;
pub mod trainer;
pub mod windowing;

pub use error::{Error, Result};

/// Expression classes, in label order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "neutral", "anger", "disgust", "fear", "happiness", "sadness", "surprise", "other",
];

pub const NUM_CLASSES: usize = 8;

pub use dataio::FeatureSequence;
pub use fusion::{FusionConfig, FusionModel};
pub use numcore::Matrix;
pub use windowing::WindowSample;
