use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("unsupported modulation: {0}")]
    UnsupportedModulation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} is ill-conditioned (condition estimate {cond:.3e})")]
    IllConditioned { what: &'static str, cond: f64 },

    #[error("quadratic form is not positive semidefinite (smallest eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("{solver} stopped after {iterations} iterations without reaching tolerance (residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("epigraph solver hit its Newton step cap after {iterations} steps (best t {best_t:.6e}, gap {gap:.3e})")]
    EpigraphIterationCap {
        iterations: usize,
        best_t: f64,
        best_w: Vec<f64>,
        gap: f64,
    },

    #[error("solver failure: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
