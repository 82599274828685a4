//! Options and diagnostics shared by the PSK and QAM waveform designs.

use crate::admm::AdmmConfig;
use crate::channel::DEFAULT_MAX_COND;
use crate::epigraph::EpigraphOptions;
use crate::SolveMethod;

/// Sign constraints on the QAM dual vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignMode {
    /// Nonnegative entries for exploitable (outer-level) components only;
    /// inner-level entries are duals of equalities and stay free.
    #[default]
    ExploitableOnly,
    /// Every entry nonnegative.
    Strict,
}

impl SignMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SignMode::ExploitableOnly => "exploitable-only",
            SignMode::Strict => "strict",
        }
    }
}

impl std::str::FromStr for SignMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "exploitable-only" | "default" => Ok(SignMode::ExploitableOnly),
            "strict" => Ok(SignMode::Strict),
            other => Err(crate::Error::InvalidParameter(format!("unknown sign mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub method: SolveMethod,
    /// `None` picks the modulation default (`ρ = 1` PSK, `ρ = 10` QAM).
    pub admm: Option<AdmmConfig>,
    /// KKT tolerance of the active-set reference solver.
    pub qp_tol: f64,
    pub epigraph: EpigraphOptions,
    pub max_cond: f64,
    pub sign_mode: SignMode,
    /// Order QAM duals outer-level first; `false` keeps the natural order.
    pub locater_order: bool,
}

impl SolveOptions {
    pub fn new(method: SolveMethod) -> Self {
        SolveOptions {
            method,
            admm: None,
            qp_tol: 1e-12,
            epigraph: EpigraphOptions::default(),
            max_cond: DEFAULT_MAX_COND,
            sign_mode: SignMode::default(),
            locater_order: true,
        }
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self::new(SolveMethod::Admm)
    }
}

/// How a waveform was obtained and how well it satisfies its constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub method: SolveMethod,
    pub iterations: usize,
    pub converged: bool,
    /// ADMM `δ`, reference-solver KKT residual, or interior-point gap.
    pub residual: f64,
    /// `sqrt(N·p0·uᵀQu)`; absent on the epigraph path.
    pub dual_value: Option<f64>,
    /// `‖X‖_F²`.
    pub power: f64,
    /// Largest violation of the margin, equality and power constraints at `t_star`.
    pub max_violation: f64,
    /// Constraints met to tolerance and the solver converged.
    pub valid: bool,
}
