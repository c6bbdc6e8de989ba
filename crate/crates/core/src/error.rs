//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the detection pipeline and its support modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter violated its documented constraints.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A 3D point mapped to non-positive camera-frame depth.
    #[error("anchor projects behind the camera (camera-frame depth {depth})")]
    BehindCamera { depth: f64 },

    /// The two anchor projections coincide; no ellipse frame exists.
    #[error("degenerate ellipse frame: anchor projections coincide")]
    DegenerateFrame,

    /// A projected gradient curve carried no signal (all zeros).
    #[error("no signal: projected curve is identically zero")]
    NoSignal,

    /// The least-squares system is rank deficient.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// A synthetic scene specification is not renderable.
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    /// Configuration file problems (missing files, bad schema, failed invariants).
    #[error("config error: {0}")]
    Config(String),

    /// Manifest / corpus bookkeeping problems during evaluation.
    #[error("eval error: {0}")]
    Eval(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
