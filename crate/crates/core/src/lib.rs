//! Constructive-interference (CI) waveform design for multi-user MISO downlink
//! under a block-level power budget.
//!
//! The crate is organised bottom-up:
//!
//! * [`modulation`] and [`channel`] provide constellations, symbol blocks,
//!   Rayleigh channels, AWGN and receiver-side detection.
//! * [`epigraph`] is a dense interior-point solver for the common
//!   "maximize the minimum margin under one power ball" shape, and
//!   [`simplex_qp`] is an exact active-set solver for simplex-constrained QPs.
//! * [`admm`] implements the ADMM iteration with the sort-based simplex
//!   projection.
//! * [`psk`] and [`qam`] are the block waveform designs: dual data, simplex QP
//!   and closed-form waveform recovery.
//! * [`baselines`] holds ZF, RZF, symbol-level CI and block-level CI
//!   precoders.
//! * [`harness`], [`config`] and [`cli`] run the Monte Carlo experiments.

pub mod admm;
pub mod baselines;
pub mod channel;
pub mod cli;
pub mod config;
pub mod epigraph;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod margins;
pub mod modulation;
pub mod psk;
pub mod qam;
pub mod simplex_qp;
pub mod waveform;

pub use error::{Error, Result};

/// Complex double used throughout.
pub type C64 = num_complex::Complex<f64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense real matrix.
pub type RMatrix = nalgebra::DMatrix<f64>;
/// Dense real vector.
pub type RVector = nalgebra::DVector<f64>;

/// Which route solves a nonlinear waveform problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveMethod {
    /// Interior-point solve of the primal epigraph problem.
    Epigraph,
    /// Active-set solve of the simplex-constrained dual QP.
    QpReference,
    /// ADMM on the dual QP.
    Admm,
}

impl SolveMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveMethod::Epigraph => "epigraph",
            SolveMethod::QpReference => "qp-reference",
            SolveMethod::Admm => "admm",
        }
    }
}

impl std::fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolveMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epigraph" | "cvx" => Ok(SolveMethod::Epigraph),
            "qp-reference" | "qp" => Ok(SolveMethod::QpReference),
            "admm" => Ok(SolveMethod::Admm),
            other => Err(Error::InvalidParameter(format!("unknown solve method `{other}`"))),
        }
    }
}
