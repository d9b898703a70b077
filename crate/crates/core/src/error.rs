//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("manifest {path}: empty manifest (no data rows)")]
    EmptyManifest { path: PathBuf },

    #[error("manifest {path} row {row}: {message}")]
    ManifestRow {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("manifest {path}: need at least 2 distinct individuals, found {found}")]
    TooFewIndividuals { path: PathBuf, found: usize },

    #[error("{path}: unsupported audio format: {message}")]
    WavFormat { path: PathBuf, message: String },

    #[error("{path}: sample rate {found} Hz differs from the run's rate {expected} Hz (resampling is not performed)")]
    RateMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("clip `{clip}` has {samples} samples, shorter than one analysis frame ({needed})")]
    ClipTooShort {
        clip: String,
        samples: usize,
        needed: usize,
    },

    #[error("clip `{clip}` has {frames} spectrogram frames, fewer than the patch width {needed}")]
    ClipTooFewFrames {
        clip: String,
        frames: usize,
        needed: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("scenario `{scenario}`: individual(s) with an empty {side} split: {individuals:?}")]
    EmptySplit {
        scenario: String,
        side: String,
        individuals: Vec<String>,
    },

    #[error("feature learning needs at least {needed} patches, got {got}")]
    TooFewPatches { needed: usize, got: usize },

    #[error("codebook size {m} exceeds the number of training vectors {n}")]
    CodebookTooLarge { m: usize, n: usize },

    #[error("individual(s) without any background clip: {individuals:?}")]
    MissingBackgrounds { individuals: Vec<String> },

    #[error("no background clip from a different individual is available for `{individual}`")]
    NoForeignBackground { individual: String },

    #[error("training data contains {found} distinct class(es); at least 2 are required")]
    SingleClass { found: usize },

    #[error("model has no `{label}` class; detection scores are undefined")]
    MissingBackgroundClass { label: String },

    #[error("AUC is undefined: need at least one positive and one negative item")]
    UndefinedAuc,

    #[error("no class has both positive and negative items; macro AUC is undefined")]
    NoComputableClass,

    #[error("matrix shapes differ: {a_rows}x{a_cols} vs {b_rows}x{b_cols}")]
    ShapeMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },

    #[error("empty input: {context}")]
    EmptyInput { context: String },

    #[error("invalid configuration: {message}")]
    Config { message: String },

    #[error("artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Fill in the clip label on a too-short error raised below the point
    /// where the clip identity is known.
    pub(crate) fn with_clip(self, id: &str) -> Self {
        match self {
            Error::ClipTooShort {
                clip,
                samples,
                needed,
            } if clip.is_empty() => Error::ClipTooShort {
                clip: id.to_string(),
                samples,
                needed,
            },
            other => other,
        }
    }
}
