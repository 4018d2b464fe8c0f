use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("kernel evaluated on a wavefront (|c t - r| = {gap:e})")]
    Wavefront { gap: f64 },
    #[error("quadrature did not converge for element pair ({test}, {trial}) at lag {lag}: change {change:e}")]
    Quadrature { test: usize, trial: usize, lag: usize, change: f64 },
    #[error("singular diagonal block: pivot magnitude {pivot:e}")]
    Singular { pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("uzawa did not converge in {iterations} iterations (last update {last:e})")]
    UzawaMaxIter { iterations: usize, last: f64, history: Vec<f64> },
    #[error("uzawa diverged after {iterations} iterations; decrease rho")]
    UzawaDiverged { iterations: usize, history: Vec<f64> },
    #[error("extrapolation: {0}")]
    Extrapolation(String),
    #[error("expression: {0}")]
    Expr(String),
}

impl Error {
    /// Short machine-readable category used for process exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Expr(_) => "config",
            Error::Io(_) => "io",
            Error::Wavefront { .. } | Error::Quadrature { .. } => "quadrature",
            Error::Singular { .. } | Error::Dimension(_) => "linear_algebra",
            Error::UzawaMaxIter { .. } | Error::UzawaDiverged { .. } => "uzawa",
            Error::Extrapolation(_) => "postprocess",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "quadrature" => 4,
            "linear_algebra" => 5,
            "uzawa" => 6,
            _ => 7,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
