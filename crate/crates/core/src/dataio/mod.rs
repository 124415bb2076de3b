//! Feature-sequence ingestion, temporal alignment, and synthetic data.

pub mod format;
mod manifest;
mod sequence;
mod synth;

pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use sequence::{align_audio, context_pool, context_pool_all, load_sequence, FeatureSequence};
pub use synth::{generate_synthetic, synthesize, GeneratedVideo, LabelRule, SynthDataset, SynthModel, SynthSpec, BLACKOUT_BLOCK};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: byte offset {offset}: {message}", path.display())]
    Format { path: PathBuf, offset: u64, message: String },
    #[error("{}: invalid label {value} at frame {frame} (byte offset {offset})", path.display())]
    Label { path: PathBuf, frame: usize, offset: u64, value: i8 },
    #[error("{}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("frame {frame} out of range for sequence of length {len}")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("{0}")]
    Validation(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, offset: u64, message: impl Into<String>) -> Self {
        Self::Format { path: path.to_path_buf(), offset, message: message.into() }
    }
}
