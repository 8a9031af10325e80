use crate::simulate::LogLinearModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("covariate `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("point ({x}, {y}) lies outside the covariate grid")]
    OutsideGrid { x: f64, y: f64 },

    #[error("empty quadrature: no cell center lies inside the window")]
    EmptyQuadrature,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("design is rank deficient (rank {rank} of {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no convergence after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        last: Box<LogLinearModel>,
    },

    #[error("non-finite objective after {iterations} iterations")]
    Diverged { iterations: usize },

    #[error("path failed at lambda index {index}: {source}")]
    Path {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular(_)
            | Error::NonFinite(_)
            | Error::NotConverged { .. }
            | Error::Diverged { .. }
            | Error::RankDeficient { .. }
            | Error::DegenerateData(_) => true,
            Error::Path { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
