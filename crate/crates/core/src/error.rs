use crate::servoing::ServoTrajectory;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("invalid depth {0}: backprojection requires a finite Z > 0")]
    InvalidDepth(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point cloud is empty or contains non-finite points")]
    InvalidCloud,

    #[error("requested {requested} points but only {available} are available")]
    NotEnoughPoints { requested: usize, available: usize },

    #[error("mean-shift kernel degenerated (all weights underflowed){}", cluster.map(|c| format!(" in cluster {c}")).unwrap_or_default())]
    DegenerateKernel { cluster: Option<usize> },

    #[error("degenerate point configuration: {0}")]
    DegenerateGeometry(String),

    #[error("no object patches survived classification; the object may be out of frame or TPR too low")]
    EmptyScene,

    #[error("no correspondences left after distance gating")]
    EmptyCorrespondences,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("servo loop diverged after {} steps", trajectory.steps())]
    Divergence { trajectory: Box<ServoTrajectory> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
