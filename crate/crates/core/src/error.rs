use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid geometry: {}", .0.join("; "))]
    Geometry(Vec<String>),

    /// Quadrature refinement hit its cap without settling.
    #[error(
        "quadrature did not converge: last estimates {previous:e} and {last:e} \
         (relative change {change:e} > tolerance {tolerance:e})"
    )]
    Convergence {
        previous: f64,
        last: f64,
        change: f64,
        tolerance: f64,
    },

    #[error("linear solver stalled after {iterations} iterations, relative residual {residual:e}")]
    Solver { iterations: usize, residual: f64 },

    #[error("model validation failed: {0}")]
    Model(String),

    #[error("circuit topology error: {0}")]
    Topology(String),

    #[error("cannot invert divider: {0}")]
    Inversion(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
