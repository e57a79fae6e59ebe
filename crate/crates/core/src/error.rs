use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the function.
    #[error("{name} = {value} is outside the domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// A class block has no obligors.
    #[error("degenerate block: {0}")]
    Degenerate(String),

    /// The mixture map is constant (no class has a positive loading).
    #[error("loss map is not invertible: all factor loadings are zero")]
    NonInvertible,

    #[error("the analytic limit requires a common skew mixing parameter (green {green}, brown {brown})")]
    DeltaMismatch { green: f64, brown: f64 },

    #[error("boundary case a = {0} is excluded from the power-law HHI approximation")]
    BoundaryCase(f64),

    /// The power-law fit did not converge; carries the last iterate `(a, b, c)`.
    #[error("power-law fit did not converge after {iterations} iterations (last a={a}, b={b}, c={c}, sse={sse:e})")]
    FitNoConvergence {
        iterations: usize,
        a: f64,
        b: f64,
        c: f64,
        sse: f64,
    },

    #[error("ingestion error at line {line}: {message}")]
    Ingest { line: usize, message: String },

    #[error("empty sample")]
    EmptySample,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("preset parse error: {0}")]
    Preset(String),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, domain: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            domain,
        }
    }
}

pub(crate) fn check_open_unit(name: &'static str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(name, p, "(0, 1)"))
    }
}
