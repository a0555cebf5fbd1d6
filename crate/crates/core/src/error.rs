use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlatError>;

#[derive(Debug, Error)]
pub enum FlatError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field value not finite at node ({i}, {j}) = ({x}, {y})")]
    NonFinite { i: usize, j: usize, x: f64, y: f64 },

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("test function support leaves the active grid by {overshoot}")]
    SupportViolation { overshoot: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no node pairs within scale {scale} (grid spacing {spacing})")]
    EmptyPairSet { scale: f64, spacing: f64 },

    #[error("invalid scale ladder: {0}")]
    InvalidLadder(String),

    #[error("erosion by eps = {eps} empties the grid; domain extent must exceed {required}")]
    ErodedEmpty { eps: f64, required: f64 },

    #[error("nonpositive measurement {value} at scale {scale}")]
    NonPositiveMeasurement { scale: f64, value: f64 },

    #[error("invalid surface: {0}")]
    InvalidSurface(String),

    #[error("immersion condition violated: |d1u x d2u| = {value} at ({x}, {y}), required {required}")]
    NotImmersion { value: f64, required: f64, x: f64, y: f64 },

    #[error("metric not positive definite at ({x}, {y}): min eigenvalue {min_eig}")]
    NotPositiveDefinite { x: f64, y: f64, min_eig: f64 },

    #[error("immersion is not isometric: defect {defect} exceeds tolerance {tolerance}")]
    NotIsometric { defect: f64, tolerance: f64 },

    #[error("elliptic solve did not reach tolerance {tolerance}: achieved relative residual {achieved}")]
    NonConvergence { achieved: f64, tolerance: f64 },

    #[error("FLD1 format error: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        completed: Vec<String>,
        #[source]
        source: Box<FlatError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
