use thiserror::Error;

/// Errors raised across the crate.
///
/// `is_validation` separates bad input (exit code 2 at the CLI) from
/// failures that happen while estimating on otherwise valid data (exit code 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("no fitting data")]
    NoFittingData,

    #[error("insufficient data for score estimation: {got} observations, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    #[error("empty cell: stratum {stratum}, arm {arm}")]
    EmptyCell { stratum: usize, arm: u8 },

    #[error("singleton cell: stratum {stratum}, arm {arm} has fewer than two units")]
    SingletonCell { stratum: usize, arm: u8 },

    #[error("degenerate Fisher information ({0})")]
    DegenerateFisher(f64),

    #[error("{0}")]
    NotApplicable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::InvalidData(_) | Error::Parse { .. } | Error::Json(_)
        )
    }

    /// True for failures caused by an unlucky draw of the data (empty or
    /// singleton cells, too few controls to fit a score). The simulation
    /// harness re-draws a replication when it sees one of these.
    pub fn is_data_shortfall(&self) -> bool {
        matches!(
            self,
            Error::EmptyCell { .. }
                | Error::SingletonCell { .. }
                | Error::InsufficientData { .. }
                | Error::NoFittingData
                | Error::DegenerateFisher(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
