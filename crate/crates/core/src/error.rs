use thiserror::Error;

pub type Result<T> = std::result::Result<T, HvsError>;

#[derive(Debug, Error)]
pub enum HvsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("insufficient observations: {rows} rows for {cols} columns")]
    InsufficientObservations { rows: usize, cols: usize },

    #[error("total sum of squares is zero")]
    ZeroTotalVariance,

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("non-positive value {value} at index {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("column `{0}` is not in the hierarchy and is not flagged exogenous")]
    UnknownColumn(String),

    #[error("no rows remain after preprocessing")]
    NoRowsRemain,

    #[error("fold {fold} has {rows} rows, need at least 2")]
    FoldTooSmall { fold: usize, rows: usize },

    #[error("lasso did not converge after {sweeps} sweeps (max coefficient change {achieved:e})")]
    NotConverged { sweeps: usize, achieved: f64 },

    #[error("requested {requested} components but matrix rank is {rank}")]
    RankExceeded { requested: usize, rank: usize },

    #[error("all importance coefficients are zero")]
    AllZeroCoefficients,

    #[error("observation keys differ between evaluation records")]
    KeyMismatch,

    #[error("unsupported schema version `{found}`, expected `{expected}`")]
    SchemaVersion { found: String, expected: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<HvsError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HvsError {
    /// Wraps the error with the label of the stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        HvsError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// by a failure while computing.
    pub fn is_input_error(&self) -> bool {
        match self {
            HvsError::InvalidInput(_)
            | HvsError::UnknownColumn(_)
            | HvsError::SchemaVersion { .. }
            | HvsError::Csv(_)
            | HvsError::Json(_) => true,
            HvsError::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
