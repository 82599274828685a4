//! Monte Carlo experiments: SER against SNR and block length, ADMM
//! convergence traces and solver timing.
//!
//! Every trial draws its channel, symbols and unit noise from seeds derived
//! from `(master_seed, trial)`, so results do not depend on how trials are
//! spread across workers. All methods of a trial see the same channel, block
//! and noise realization; the noise is scaled by `σ` per SNR point.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::admm::{admm_solve, AdmmConfig, TraceRow};
use crate::baselines::{ciblp, cislp_psk, cislp_qam, rzf_precode, zf_precode};
use crate::channel::{add_awgn, derive_seed, noise_variance, rayleigh_channel_with, Channel, SeedPurpose, DEFAULT_MAX_COND};
use crate::epigraph::EpigraphOptions;
use crate::modulation::{draw_block, Constellation, Modulation, SymbolBlock};
use crate::psk::{build_psk_dual, min_margin, scalings_of, solve_psk};
use crate::qam::{build_qam_dual, solve_qam};
use crate::simplex_qp::{solve_simplex_qp_reference, QuadraticForm, SignMask, SimplexQp};
use crate::waveform::{SignMode, SolveOptions};
use crate::{CMatrix, Error, Result, SolveMethod, C64};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "CI_WAVEFORM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Zf,
    Rzf,
    Cislp,
    Ciblp,
    NonlinearEpigraph,
    NonlinearQp,
    NonlinearAdmm,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Zf,
        Method::Rzf,
        Method::Cislp,
        Method::Ciblp,
        Method::NonlinearEpigraph,
        Method::NonlinearQp,
        Method::NonlinearAdmm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Zf => "zf",
            Method::Rzf => "rzf",
            Method::Cislp => "cislp",
            Method::Ciblp => "ciblp",
            Method::NonlinearEpigraph => "nonlinear-epigraph",
            Method::NonlinearQp => "nonlinear-qp",
            Method::NonlinearAdmm => "nonlinear-admm",
        }
    }

    /// Solver route for the nonlinear designs.
    pub fn solve_method(self) -> Option<SolveMethod> {
        match self {
            Method::NonlinearEpigraph => Some(SolveMethod::Epigraph),
            Method::NonlinearQp => Some(SolveMethod::QpReference),
            Method::NonlinearAdmm => Some(SolveMethod::Admm),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_t: usize,
    pub k: usize,
    pub n: usize,
    pub modulation: Modulation,
    pub methods: Vec<Method>,
    /// Method for single-instance `solve` runs.
    pub method: Method,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub p0: f64,
    pub master_seed: u64,
    /// `None` selects the modulation default.
    pub admm_rho: Option<f64>,
    pub admm_t_max: usize,
    pub admm_epsilon: f64,
    pub admm_polish: bool,
    /// Block lengths for block-length and timing sweeps.
    pub n_list: Vec<usize>,
    /// Penalties for convergence traces.
    pub rho_list: Vec<f64>,
    /// Timed repetitions per point.
    pub repeats: usize,
    pub normalize_qam: bool,
    pub sign_mode: SignMode,
    pub max_cond: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_t: 4,
            k: 4,
            n: 8,
            modulation: Modulation::Psk(4),
            methods: vec![Method::Zf, Method::Rzf, Method::Cislp, Method::Ciblp, Method::NonlinearAdmm],
            method: Method::NonlinearAdmm,
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            trials: 2000,
            p0: 1.0,
            master_seed: 1,
            admm_rho: None,
            admm_t_max: 500,
            admm_epsilon: 1e-8,
            admm_polish: true,
            n_list: vec![4, 8, 16, 32],
            rho_list: vec![0.5, 1.0, 5.0],
            repeats: 5,
            normalize_qam: false,
            sign_mode: SignMode::ExploitableOnly,
            max_cond: DEFAULT_MAX_COND,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.k == 0 || self.k > self.n_t {
            return bad(format!("need 1 <= k <= n_t, got k={}, n_t={}", self.k, self.n_t));
        }
        if self.n == 0 || self.n_list.contains(&0) {
            return bad("block lengths must be at least 1".into());
        }
        if !(self.p0 > 0.0) {
            return bad("p0 must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.snr_grid_db.iter().any(|s| s.is_nan()) {
            return bad("snr grid contains NaN".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if !(self.max_cond > 1.0) {
            return bad("max_cond must exceed 1".into());
        }
        self.admm_config().validate()?;
        for &rho in &self.rho_list {
            if !(rho > 0.0) {
                return bad(format!("rho_list entries must be positive, got {rho}"));
            }
        }
        Constellation::new(self.modulation, self.normalize_qam)?;
        Ok(())
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Constellation::new(self.modulation, self.normalize_qam)
    }

    pub fn admm_config(&self) -> AdmmConfig {
        let base = if self.modulation.is_psk() {
            AdmmConfig::psk_default()
        } else {
            AdmmConfig::qam_default()
        };
        AdmmConfig {
            rho: self.admm_rho.unwrap_or(base.rho),
            t_max: self.admm_t_max,
            epsilon: self.admm_epsilon,
            polish: self.admm_polish,
            ..base
        }
    }

    pub fn solve_options(&self, method: SolveMethod) -> SolveOptions {
        SolveOptions {
            admm: Some(self.admm_config()),
            max_cond: self.max_cond,
            sign_mode: self.sign_mode,
            ..SolveOptions::new(method)
        }
    }

    /// Channel and symbol block of one trial.
    pub fn instance(&self, trial: u64) -> Result<(Channel, SymbolBlock)> {
        let c = self.constellation()?;
        let ch = rayleigh_channel_with(self.n_t, self.k, derive_seed(self.master_seed, trial, SeedPurpose::Channel), self.max_cond)?;
        let block = draw_block(&c, self.k, self.n, derive_seed(self.master_seed, trial, SeedPurpose::Symbols))?;
        Ok((ch, block))
    }
}

/// Output of one precoder on one block.
#[derive(Debug, Clone)]
pub struct Precoded {
    pub x: CMatrix,
    /// Per-slot receiver scale for QAM detection.
    pub scales: Vec<f64>,
    /// Reported margin.
    pub t: f64,
}

/// Runs `method` on one instance. `sigma2` only matters for RZF.
pub fn precode(
    cfg: &ExperimentConfig,
    c: &Constellation,
    method: Method,
    ch: &Channel,
    block: &SymbolBlock,
    sigma2: f64,
) -> Result<Precoded> {
    let h = ch.h();
    let n = block.slots();
    let ls_scale = |x: &CMatrix| {
        let rx = h * x;
        let s = block.symbols();
        let num: f64 = s.iter().zip(rx.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        num / s.iter().map(|z| z.norm_sqr()).sum::<f64>()
    };
    let linear = |x: CMatrix| {
        let t = match c.theta_t() {
            Some(theta) => min_margin(&scalings_of(h, block, &x), theta),
            None => ls_scale(&x),
        };
        Precoded {
            scales: vec![ls_scale(&x); n],
            x,
            t,
        }
    };
    let uniform = |x: CMatrix, t: f64| Precoded {
        x,
        scales: vec![t; n],
        t,
    };

    match method {
        Method::Zf => Ok(linear(zf_precode(h, block.symbols(), cfg.p0, cfg.max_cond)?)),
        Method::Rzf => Ok(linear(rzf_precode(h, block.symbols(), cfg.p0, sigma2)?)),
        Method::Cislp => {
            let (x, ts) = match c.theta_t() {
                Some(_) => cislp_psk(h, block, cfg.p0, c, cfg.max_cond)?,
                None => cislp_qam(h, block, cfg.p0, c, &cfg.solve_options(SolveMethod::QpReference))?,
            };
            let t = ts.iter().copied().fold(f64::INFINITY, f64::min);
            Ok(Precoded { x, scales: ts, t })
        }
        Method::Ciblp => {
            let sol = ciblp(h, block, cfg.p0, c, &EpigraphOptions::default(), cfg.max_cond)?;
            Ok(uniform(sol.x, sol.t))
        }
        m => {
            let opts = cfg.solve_options(m.solve_method().expect("nonlinear method"));
            match c.theta_t() {
                Some(theta) => {
                    let sol = solve_psk(h, block, cfg.p0, theta, &opts)?;
                    Ok(uniform(sol.x, sol.t_star))
                }
                None => {
                    let sol = solve_qam(h, block, cfg.p0, c, &opts)?;
                    Ok(uniform(sol.x, sol.t_star))
                }
            }
        }
    }
}

/// One aggregated SER point.
#[derive(Debug, Clone, PartialEq)]
pub struct SerRecord {
    pub method: Method,
    pub snr_db: f64,
    pub n_slots: usize,
    /// Trials that produced a waveform.
    pub trials: usize,
    /// Trials excluded after a solver failure.
    pub failed: usize,
    pub symbol_errors: u64,
    pub symbols_total: u64,
    pub ser: f64,
    pub mean_t_star: f64,
    pub mean_solve_seconds: f64,
}

impl SerRecord {
    /// Binomial standard error of `ser`.
    pub fn std_error(&self) -> f64 {
        if self.symbols_total == 0 {
            return 0.0;
        }
        (self.ser * (1.0 - self.ser) / self.symbols_total as f64).sqrt()
    }
}

pub const SER_CSV_HEADER: [&str; 9] = ["method", "snr_db", "n_slots", "trials", "errors", "symbols", "ser", "mean_t", "mean_seconds"];
pub const TRACE_CSV_HEADER: [&str; 5] = ["method", "rho", "iteration", "objective", "delta"];
pub const TIMING_CSV_HEADER: [&str; 4] = ["method", "n_slots", "repeats", "median_seconds"];

pub fn write_ser_csv<W: Write>(out: W, records: &[SerRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SER_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.method.to_string(),
            r.snr_db.to_string(),
            r.n_slots.to_string(),
            r.trials.to_string(),
            r.symbol_errors.to_string(),
            r.symbols_total.to_string(),
            format!("{:.6e}", r.ser),
            format!("{:.6e}", r.mean_t_star),
            format!("{:.6e}", r.mean_solve_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct MethodOutcome {
    errors: Vec<u64>,
    t: f64,
    seconds: f64,
}

fn thread_count() -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cap.min(available.max(1)),
        _ => available,
    }
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Solver(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn run_trial(cfg: &ExperimentConfig, c: &Constellation, trial: u64, sigma2: &[f64]) -> Vec<Result<MethodOutcome>> {
    let (ch, block) = match cfg.instance(trial) {
        Ok(v) => v,
        Err(e) => return cfg.methods.iter().map(|_| Err(e.clone())).collect(),
    };
    let (k, n) = (cfg.k, block.slots());
    let mut unit = vec![C64::new(0.0, 0.0); k * n];
    add_awgn(&mut unit, 1.0, derive_seed(cfg.master_seed, trial, SeedPurpose::Noise));

    let count_errors = |pre: &Precoded, s2: f64| -> u64 {
        let rx = ch.receive(&pre.x);
        let sigma = s2.sqrt();
        let mut errors = 0;
        for slot in 0..n {
            let scale = pre.scales[slot].max(1e-12);
            for user in 0..k {
                let y = rx[(user, slot)] + unit[slot * k + user] * sigma;
                if c.detect(y, scale) != block.index(user, slot) {
                    errors += 1;
                }
            }
        }
        errors
    };

    cfg.methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            if m == Method::Rzf {
                // the regularizer depends on the noise level
                let mut errors = Vec::with_capacity(sigma2.len());
                let mut t = 0.0;
                for &s2 in sigma2 {
                    let pre = precode(cfg, c, m, &ch, &block, s2)?;
                    errors.push(count_errors(&pre, s2));
                    t += pre.t / sigma2.len() as f64;
                }
                let seconds = start.elapsed().as_secs_f64() / sigma2.len().max(1) as f64;
                return Ok(MethodOutcome { errors, t, seconds });
            }
            let pre = precode(cfg, c, m, &ch, &block, 0.0)?;
            let seconds = start.elapsed().as_secs_f64();
            let errors = sigma2.iter().map(|&s2| count_errors(&pre, s2)).collect();
            Ok(MethodOutcome { errors, t: pre.t, seconds })
        })
        .collect()
}

/// SER against SNR for every configured method.
///
/// Records are ordered by method (configuration order), then SNR.
pub fn run_ser_sweep(cfg: &ExperimentConfig) -> Result<Vec<SerRecord>> {
    cfg.validate()?;
    let c = cfg.constellation()?;
    let sigma2: Vec<f64> = cfg.snr_grid_db.iter().map(|&s| noise_variance(s, cfg.p0)).collect();
    let outcomes: Vec<Vec<Result<MethodOutcome>>> = with_pool(|| {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| run_trial(cfg, &c, t, &sigma2))
            .collect()
    })?;

    let symbols_per_trial = (cfg.k * cfg.n) as u64;
    let mut records = Vec::with_capacity(cfg.methods.len() * sigma2.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let ok: Vec<&MethodOutcome> = outcomes.iter().filter_map(|o| o[mi].as_ref().ok()).collect();
        let failed = cfg.trials - ok.len();
        let mean_t = ok.iter().map(|o| o.t).sum::<f64>() / ok.len().max(1) as f64;
        let mean_s = ok.iter().map(|o| o.seconds).sum::<f64>() / ok.len().max(1) as f64;
        for (si, &snr) in cfg.snr_grid_db.iter().enumerate() {
            let errors: u64 = ok.iter().map(|o| o.errors[si]).sum();
            let total = symbols_per_trial * ok.len() as u64;
            records.push(SerRecord {
                method,
                snr_db: snr,
                n_slots: cfg.n,
                trials: ok.len(),
                failed,
                symbol_errors: errors,
                symbols_total: total,
                ser: if total > 0 { errors as f64 / total as f64 } else { 0.0 },
                mean_t_star: mean_t,
                mean_solve_seconds: mean_s,
            });
        }
    }
    Ok(records)
}

/// SER sweeps over block lengths at the configured SNR grid.
pub fn run_block_length_sweep(cfg: &ExperimentConfig, n_list: &[usize]) -> Result<Vec<SerRecord>> {
    let mut out = Vec::new();
    for &n in n_list {
        let sub = ExperimentConfig { n, ..cfg.clone() };
        out.extend(run_ser_sweep(&sub)?);
    }
    Ok(out)
}

/// ADMM trace for one penalty on one instance.
#[derive(Debug, Clone)]
pub struct ConvergenceTrace {
    pub rho: f64,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: f64,
    pub reference_objective: f64,
}

impl ConvergenceTrace {
    pub fn relative_gap(&self) -> f64 {
        (self.final_objective - self.reference_objective).abs() / self.reference_objective.abs().max(1e-300)
    }

    /// `δ` increases somewhere along the trace.
    pub fn is_non_monotone(&self) -> bool {
        self.trace.windows(2).any(|w| w[1].delta > w[0].delta * (1.0 + 1e-9))
    }
}

/// Simplex QP of trial `trial`'s dual problem.
pub fn dual_qp(cfg: &ExperimentConfig, trial: u64) -> Result<SimplexQp> {
    let c = cfg.constellation()?;
    let (ch, block) = cfg.instance(trial)?;
    match c.theta_t() {
        Some(theta) => {
            let d = build_psk_dual(ch.h(), &block, theta, cfg.max_cond)?;
            SimplexQp::new(QuadraticForm::Dense(d.v), SignMask::all_nonnegative(2 * cfg.k * cfg.n))
        }
        None => {
            let d = build_qam_dual(ch.h(), &block, &c, cfg.max_cond, true)?;
            let mask = d.sign_mask(cfg.sign_mode);
            SimplexQp::new(QuadraticForm::InverseOf(d.vtilde), mask)
        }
    }
}

/// ADMM traces on the first trial's dual problem, one per penalty in `rho_list`.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceTrace>> {
    cfg.validate()?;
    let qp = dual_qp(cfg, 0)?;
    let reference = solve_simplex_qp_reference(&qp, 1e-12)?;
    cfg.rho_list
        .iter()
        .map(|&rho| {
            let admm = AdmmConfig {
                rho,
                record_trace: true,
                polish: false,
                ..cfg.admm_config()
            };
            let out = admm_solve(&qp, &admm)?;
            Ok(ConvergenceTrace {
                rho,
                final_objective: qp.objective(&out.z),
                reference_objective: reference.objective,
                converged: out.converged,
                iterations: out.iterations,
                trace: out.trace,
            })
        })
        .collect()
}

pub fn write_convergence_csv<W: Write>(out: W, traces: &[ConvergenceTrace]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER)?;
    for t in traces {
        crate::admm::write_trace_csv(&mut w, "admm", t.rho, &t.trace)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub method: Method,
    pub n_slots: usize,
    pub repeats: usize,
    pub median_seconds: f64,
}

/// Median wall time per method and block length, after one warm-up solve.
/// Repeat `r` times trial `r`'s instance, so every method sees the same set.
pub fn run_timing(cfg: &ExperimentConfig, n_list: &[usize]) -> Result<Vec<TimingRecord>> {
    cfg.validate()?;
    let c = cfg.constellation()?;
    let mut out = Vec::new();
    for &n in n_list {
        let sub = ExperimentConfig { n, ..cfg.clone() };
        let instances: Vec<_> = (0..cfg.repeats as u64).map(|t| sub.instance(t)).collect::<Result<_>>()?;
        for &m in &cfg.methods {
            let sigma2 = noise_variance(cfg.snr_grid_db.first().copied().unwrap_or(20.0), cfg.p0);
            precode(&sub, &c, m, &instances[0].0, &instances[0].1, sigma2)?;
            let mut times = Vec::with_capacity(instances.len());
            for (ch, block) in &instances {
                let start = Instant::now();
                precode(&sub, &c, m, ch, block, sigma2)?;
                times.push(start.elapsed().as_secs_f64());
            }
            out.push(TimingRecord {
                method: m,
                n_slots: n,
                repeats: times.len(),
                median_seconds: median(&mut times),
            });
        }
    }
    Ok(out)
}

pub fn write_timing_csv<W: Write>(out: W, records: &[TimingRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TIMING_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.method.to_string(),
            r.n_slots.to_string(),
            r.repeats.to_string(),
            format!("{:.6e}", r.median_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
