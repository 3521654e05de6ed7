use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite pose component")]
    NonFinite,
    #[error("rotation is not proper orthonormal (|RᵀR − I| = {orthonormality:e}, det = {determinant})")]
    InvalidRotation { orthonormality: f64, determinant: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("bin {bin} out of range 0..{n}")]
    BinOutOfRange { bin: usize, n: usize },
    #[error("depth {depth} m outside [0, {max})")]
    DepthOutOfRange { depth: f64, max: f64 },
    #[error("{tags} tags for {points} points")]
    TagCount { points: usize, tags: usize },
    #[error("profile length mismatch: expected {expected}, got {depth} depths / {confidence} confidences")]
    ProfileLength { expected: usize, depth: usize, confidence: usize },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    MalformedLine { path: PathBuf, line: usize, reason: String },
    #[error("{path}:{line}: rotation deviates from orthonormal by {deviation:e}")]
    NonOrthonormal { path: PathBuf, line: usize, deviation: f64 },
    #[error("grid spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),
    #[error("requested {requested} labeled-train records but only {available} carry labels")]
    InsufficientLabels { requested: usize, available: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io { path: path.into(), source }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        DatasetError::MalformedFile { path: path.into(), reason: reason.into() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("trajectory queried at t = {t} outside [{start}, {end}]")]
    TrajectoryOutOfRange { t: f64, start: f64, end: f64 },
    #[error("could not place {what} after {attempts} attempts")]
    PlacementFailure { what: String, attempts: usize },
    #[error("invalid lidar model: {0}")]
    InvalidLidar(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("ego cell is not traversable")]
    EgoBlocked,
    #[error("no ground points near the origin")]
    NoGroundReference,
    #[error("invalid traversability rules: {0}")]
    InvalidRules(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("need at least {needed} errors, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("sample carries no per-point tags")]
    MissingTags,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
