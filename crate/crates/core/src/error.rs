use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("unknown feature '{0}'")]
    UnknownFeature(String),

    #[error("row index {index} out of range for table with {n_rows} rows")]
    RowOutOfRange { index: usize, n_rows: usize },

    #[error("kind conflict for feature '{0}': numeric vs categorical")]
    KindConflict(String),

    #[error("table contains missing cells (first at row {row}, feature '{feature}')")]
    MissingCells { row: usize, feature: String },

    #[error("missing value in feature '{feature}' reached a split at row {row}")]
    Routing { row: usize, feature: String },

    #[error("cannot fit: {0}")]
    Fit(String),

    #[error("column '{0}' has no observed values")]
    AllMissing(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
