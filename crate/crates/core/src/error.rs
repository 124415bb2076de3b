use thiserror::Error;

use crate::dataio::DataError;
use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("frame {frame} is not covered by any window")]
    Uncovered { frame: usize },
    #[error("class {class} has zero training frames; drop the class or smooth the counts before weighting")]
    ZeroCount { class: usize },
    #[error("every label is -1; nothing to compute a loss over")]
    AllInvalid,
    #[error("no frame has a valid gold label")]
    NoValidFrames,
    #[error("{left} vs {right}: {what} lengths differ")]
    Length { what: &'static str, left: usize, right: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("training set is empty after windowing and filtering")]
    EmptyTrainingSet,
    #[error("{}: {message}", path.display())]
    Checkpoint { path: std::path::PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
