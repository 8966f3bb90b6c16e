use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth at pixel ({x}, {y})")]
    InvalidDepth { x: u32, y: u32 },

    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("no leaf modes available for any sampled pixel")]
    NoModes,

    #[error("no pose hypothesis survived generation")]
    NoHypotheses,

    #[error("scene has no surfaces")]
    EmptyScene,

    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("frame {index}: {message}")]
    Frame { index: usize, message: String },

    #[error("malformed forest file: {0}")]
    Format(String),

    #[error("sequence directory {0} contains no frames")]
    EmptySequence(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
