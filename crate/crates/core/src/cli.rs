//! Command-line front end.
//!
//! Exit codes: `0` success, `2` usage, `3` file I/O, `4` malformed or unknown
//! configuration entry, `5` configuration fails validation, `6` solver or
//! experiment failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::admm::project_simplex;
use crate::config::{self, ConfigError};
use crate::harness::{self, ExperimentConfig, Method};
use crate::linalg::frobenius_sq;
use crate::psk::solve_psk;
use crate::qam::solve_qam;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG_SYNTAX: i32 = 4;
pub const EXIT_CONFIG_INVALID: i32 = 5;
pub const EXIT_RUNTIME: i32 = 6;

#[derive(Parser, Debug)]
#[command(name = "ci-waveform", version, about = "Constructive-interference waveform design and SER simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set snr_grid_db=0:5:30`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory for CSV output.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    emit_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// SER against SNR.
    Ser(Common),
    /// SER against block length (`n_list`).
    Blocksweep(Common),
    /// ADMM convergence traces for each penalty in `rho_list`.
    Convergence(Common),
    /// Median solve time against block length.
    Timing(Common),
    /// Solve one instance with `method`.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Print full diagnostics.
        #[arg(long)]
        dump: bool,
    },
    /// Project a vector onto the probability simplex.
    Project {
        /// Comma-separated entries.
        #[arg(long, allow_hyphen_values = true)]
        vector: String,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match e {
            ConfigError::Invalid(_) => EXIT_CONFIG_INVALID,
            _ => EXIT_CONFIG_SYNTAX,
        };
        Failure::new(code, format!("config error: {e}"))
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::new(EXIT_RUNTIME, format!("run failed: {e}"))
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

/// Parses `argv` (including the program name), runs and returns the exit code.
pub fn run<I, T, W, E>(argv: I, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        cfg = config::parse_onto(cfg, &text)?;
    }
    for s in &common.set {
        let (k, v) = config::split_assignment(s, 0)?;
        config::apply(&mut cfg, k, v)?;
    }
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

fn write_outputs(
    common: &Common,
    cfg: &ExperimentConfig,
    name: &str,
    write: impl FnOnce(fs::File) -> csv::Result<()>,
) -> Result<PathBuf, Failure> {
    fs::create_dir_all(&common.out).map_err(|e| io_failure(&common.out, e))?;
    let path = common.out.join(format!("{name}.csv"));
    let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
    write(file).map_err(|e| io_failure(&path, e))?;
    let side = common.out.join(format!("{name}.provenance"));
    let text = format!(
        "# ci-waveform {}\n# command: {name}\n# master_seed: {}\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.master_seed,
        config::emit_config(cfg)
    );
    fs::write(&side, text).map_err(|e| io_failure(&side, e))?;
    Ok(path)
}

fn dispatch<W: Write>(cmd: Command, out: &mut W) -> Result<(), Failure> {
    let say = |out: &mut W, s: String| writeln!(out, "{s}").map_err(|e| Failure::new(EXIT_IO, format!("stdout: {e}")));

    if let Command::Project { vector } = &cmd {
        let q: Vec<f64> = vector
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::new(EXIT_USAGE, format!("--vector: {e}")))?;
        if q.is_empty() || q.iter().any(|v| !v.is_finite()) {
            return Err(Failure::new(EXIT_USAGE, "--vector needs finite entries"));
        }
        let z = project_simplex(&q);
        return say(out, z.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    }

    let (common, dump) = match &cmd {
        Command::Ser(c) | Command::Blocksweep(c) | Command::Convergence(c) | Command::Timing(c) => (c, false),
        Command::Solve { common, dump } => (common, *dump),
        Command::Project { .. } => unreachable!(),
    };
    let cfg = load(common)?;
    if common.emit_config {
        return say(out, config::emit_config(&cfg).trim_end().to_string());
    }

    match cmd {
        Command::Ser(_) => {
            let records = harness::run_ser_sweep(&cfg)?;
            let path = write_outputs(common, &cfg, "ser", |f| harness::write_ser_csv(f, &records))?;
            summarize_ser(out, "ser", &records, &path)
        }
        Command::Blocksweep(_) => {
            let records = harness::run_block_length_sweep(&cfg, &cfg.n_list)?;
            let path = write_outputs(common, &cfg, "blocksweep", |f| harness::write_ser_csv(f, &records))?;
            summarize_ser(out, "blocksweep", &records, &path)
        }
        Command::Convergence(_) => {
            let traces = harness::run_convergence(&cfg)?;
            let path = write_outputs(common, &cfg, "convergence", |f| harness::write_convergence_csv(f, &traces))?;
            for t in &traces {
                say(
                    out,
                    format!(
                        "convergence: rho={} iterations={} converged={} gap={:.3e}",
                        t.rho,
                        t.iterations,
                        t.converged,
                        t.relative_gap()
                    ),
                )?;
            }
            say(out, format!("convergence: {} traces -> {}", traces.len(), path.display()))
        }
        Command::Timing(_) => {
            let records = harness::run_timing(&cfg, &cfg.n_list)?;
            let path = write_outputs(common, &cfg, "timing", |f| harness::write_timing_csv(f, &records))?;
            say(out, format!("timing: {} records -> {}", records.len(), path.display()))
        }
        Command::Solve { .. } => solve_one(out, &cfg, dump),
        Command::Project { .. } => unreachable!(),
    }
}

fn summarize_ser<W: Write>(out: &mut W, name: &str, records: &[harness::SerRecord], path: &Path) -> Result<(), Failure> {
    let failed: usize = records.iter().map(|r| r.failed).max().unwrap_or(0);
    writeln!(
        out,
        "{name}: {} records, {} failed trials at most per method -> {}",
        records.len(),
        failed,
        path.display()
    )
    .map_err(|e| Failure::new(EXIT_IO, format!("stdout: {e}")))
}

fn solve_one<W: Write>(out: &mut W, cfg: &ExperimentConfig, dump: bool) -> Result<(), Failure> {
    let c = cfg.constellation()?;
    let (ch, block) = cfg.instance(0)?;
    let io = |e: std::io::Error| Failure::new(EXIT_IO, format!("stdout: {e}"));
    let method = cfg.method;

    let diag = match (method.solve_method(), c.theta_t()) {
        (Some(sm), Some(theta)) => Some(solve_psk(ch.h(), &block, cfg.p0, theta, &cfg.solve_options(sm))?.diagnostics_with_t()),
        (Some(sm), None) => Some(solve_qam(ch.h(), &block, cfg.p0, &c, &cfg.solve_options(sm))?.diagnostics_with_t()),
        (None, _) => None,
    };
    match diag {
        Some((t, d)) => {
            writeln!(out, "t_star = {t:.12e}").map_err(io)?;
            if dump {
                writeln!(out, "method = {}", method).map_err(io)?;
                writeln!(out, "power = {:.12e}", d.power).map_err(io)?;
                writeln!(out, "budget = {:.12e}", cfg.n as f64 * cfg.p0).map_err(io)?;
                writeln!(out, "max_violation = {:.3e}", d.max_violation).map_err(io)?;
                writeln!(out, "iterations = {}", d.iterations).map_err(io)?;
                writeln!(out, "converged = {}", d.converged).map_err(io)?;
                writeln!(out, "residual = {:.3e}", d.residual).map_err(io)?;
                if let Some(v) = d.dual_value {
                    writeln!(out, "dual_value = {v:.12e}").map_err(io)?;
                }
                writeln!(out, "valid = {}", d.valid).map_err(io)?;
            }
        }
        None => {
            let sigma2 = crate::channel::noise_variance(cfg.snr_grid_db.first().copied().unwrap_or(20.0), cfg.p0);
            let pre = harness::precode(cfg, &c, method, &ch, &block, sigma2)?;
            writeln!(out, "t_star = {:.12e}", pre.t).map_err(io)?;
            if dump {
                writeln!(out, "method = {}", method).map_err(io)?;
                writeln!(out, "power = {:.12e}", frobenius_sq(&pre.x)).map_err(io)?;
                writeln!(out, "budget = {:.12e}", cfg.n as f64 * cfg.p0).map_err(io)?;
                let per_slot: Vec<String> = pre.scales.iter().map(|s| format!("{s:.6e}")).collect();
                writeln!(out, "receiver_scales = {}", per_slot.join(",")).map_err(io)?;
            }
        }
    }
    if dump && method == Method::Ciblp {
        writeln!(out, "note = block-level precoder, one matrix for all slots").map_err(io)?;
    }
    Ok(())
}

trait WithT {
    fn diagnostics_with_t(self) -> (f64, crate::waveform::Diagnostics);
}

impl WithT for crate::psk::PskSolution {
    fn diagnostics_with_t(self) -> (f64, crate::waveform::Diagnostics) {
        (self.t_star, self.diagnostics)
    }
}

impl WithT for crate::qam::QamSolution {
    fn diagnostics_with_t(self) -> (f64, crate::waveform::Diagnostics) {
        (self.t_star, self.diagnostics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("ci-waveform").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn project_hand_case() {
        let (code, out, _) = run_capture(&["project", "--vector", "2,0"]);
        assert_eq!(code, 0);
        assert_eq!(out.trim(), "1,0");
    }

    #[test]
    fn unknown_key_exit_code() {
        let (code, _, err) = run_capture(&["ser", "--set", "bogus=1", "--emit-config"]);
        assert_eq!(code, EXIT_CONFIG_SYNTAX);
        assert!(err.contains("bogus"));
    }

    #[test]
    fn invariant_exit_code() {
        let (code, _, _) = run_capture(&["ser", "--set", "k=9", "--emit-config"]);
        assert_eq!(code, EXIT_CONFIG_INVALID);
    }

    #[test]
    fn missing_file_exit_code() {
        let (code, _, _) = run_capture(&["ser", "--config", "/nonexistent/base.cfg"]);
        assert_eq!(code, EXIT_IO);
    }

    #[test]
    fn missing_subcommand_is_usage() {
        let (code, _, _) = run_capture(&[]);
        assert_eq!(code, EXIT_USAGE);
    }
}
