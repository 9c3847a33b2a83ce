use std::path::PathBuf;

/// Errors produced by the tomography pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid acquisition geometry: {0}")]
    Geometry(String),

    #[error("invalid elevation grid: {0}")]
    Grid(String),

    #[error("sensing matrix {rows}x{cols} exceeds the cap of {cap} entries")]
    Sizing { rows: usize, cols: usize, cap: usize },

    #[error("degenerate aperture: the bistatic baselines span zero meters")]
    DegenerateAperture,

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("scene error: {0}")]
    Scene(String),

    #[error("scene spec error: {0}")]
    SceneSpec(String),

    #[error("normal matrix is ill-conditioned: condition number {condition:.3e} exceeds {threshold:.3e}")]
    IllConditioned { condition: f64, threshold: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("co-registration failed: {0}")]
    Registration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("parse error in {} at offset {offset}: {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("stage '{stage}' requires stage '{required}' to run first: {detail}")]
    MissingDependency {
        stage: String,
        required: String,
        detail: String,
    },

    #[error("artifacts of stage '{stage}' were produced by config {found}, current config is {expected}")]
    ConfigMismatch {
        stage: String,
        expected: String,
        found: String,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
