use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid factor space: {0}")]
    InvalidSpace(String),

    #[error("invalid variant: {0}")]
    InvalidVariant(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("infeasible design request: {0}")]
    Infeasible(String),

    #[error("unsupported Plackett-Burman run count {0} (supported: 4, 8, 12, 20, 24)")]
    UnsupportedRunCount(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("row {row}, column `{column}`: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("duplicate unit_id `{unit_id}` at row {row}")]
    DuplicateUnit { unit_id: String, row: usize },

    #[error("unknown level `{level}` for factor `{factor}` at row {row}")]
    UnknownLevel {
        factor: String,
        level: String,
        row: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("missing covariate `{0}`")]
    MissingCovariate(String),

    #[error("unknown coefficient `{0}`")]
    UnknownCoefficient(String),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("insufficient neighbors: {0}")]
    InsufficientNeighbors(String),

    #[error("invalid propensity {value} for unit `{unit_id}`")]
    InvalidPropensity { unit_id: String, value: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
