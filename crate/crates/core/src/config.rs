//! Flat `key = value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment. Lists are comma separated
//! and numeric grids also accept `start:step:stop` (inclusive). Unknown keys
//! are errors.

use std::fmt::Write as _;

use thiserror::Error;

use crate::harness::{ExperimentConfig, Method};
use crate::modulation::Modulation;
use crate::waveform::SignMode;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },

    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub const KEYS: [&str; 20] = [
    "n_t",
    "k",
    "n",
    "modulation",
    "methods",
    "method",
    "snr_grid_db",
    "trials",
    "p0",
    "master_seed",
    "admm.rho",
    "admm.t_max",
    "admm.epsilon",
    "admm.polish",
    "n_list",
    "rho_list",
    "repeats",
    "normalize_qam",
    "sign_mode",
    "max_cond",
];

/// Parses `start:step:stop` or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let s = s.trim();
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err("ranges are start:step:stop".into());
        }
        let num = |p: &str| p.parse::<f64>().map_err(|e| format!("`{p}`: {e}"));
        let (start, step, stop) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
            return Err("range needs a positive step and start <= stop".into());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        if count > 100_000 {
            return Err("range has too many points".into());
        }
        return Ok((0..count).map(|i| start + step * i as f64).collect());
    }
    parse_list(s, |p| p.parse::<f64>().map_err(|e| e.to_string()))
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if items.is_empty() {
        return Err("empty list".into());
    }
    items.into_iter().map(f).collect()
}

/// Sets one key.
pub fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let value = value.trim();
    let bad = |reason: String| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason,
    };
    fn num<T: std::str::FromStr>(v: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        v.parse::<T>().map_err(|e| e.to_string())
    }
    match key {
        "n_t" => cfg.n_t = num(value).map_err(bad)?,
        "k" => cfg.k = num(value).map_err(bad)?,
        "n" => cfg.n = num(value).map_err(bad)?,
        "modulation" => cfg.modulation = value.parse::<Modulation>().map_err(|e| bad(e.to_string()))?,
        "methods" => cfg.methods = parse_list(value, |p| p.parse::<Method>().map_err(|e| e.to_string())).map_err(bad)?,
        "method" => cfg.method = value.parse::<Method>().map_err(|e| bad(e.to_string()))?,
        "snr_grid_db" => cfg.snr_grid_db = parse_grid(value).map_err(bad)?,
        "trials" => cfg.trials = num(value).map_err(bad)?,
        "p0" => cfg.p0 = num(value).map_err(bad)?,
        "master_seed" => cfg.master_seed = num(value).map_err(bad)?,
        "admm.rho" => {
            cfg.admm_rho = if value == "auto" { None } else { Some(num(value).map_err(bad)?) }
        }
        "admm.t_max" => cfg.admm_t_max = num(value).map_err(bad)?,
        "admm.epsilon" => cfg.admm_epsilon = num(value).map_err(bad)?,
        "admm.polish" => cfg.admm_polish = num(value).map_err(bad)?,
        "n_list" => {
            cfg.n_list = parse_grid(value)
                .map_err(&bad)?
                .into_iter()
                .map(|v| {
                    if v >= 1.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(bad(format!("{v} is not a positive integer")))
                    }
                })
                .collect::<Result<_, _>>()?
        }
        "rho_list" => cfg.rho_list = parse_grid(value).map_err(bad)?,
        "repeats" => cfg.repeats = num(value).map_err(bad)?,
        "normalize_qam" => cfg.normalize_qam = num(value).map_err(bad)?,
        "sign_mode" => cfg.sign_mode = value.parse::<SignMode>().map_err(|e| bad(e.to_string()))?,
        "max_cond" => cfg.max_cond = num(value).map_err(bad)?,
        other => return Err(ConfigError::UnknownKey(other.to_string())),
    }
    Ok(())
}

/// Splits `key=value`.
pub fn split_assignment(text: &str, line: usize) -> Result<(&str, &str), ConfigError> {
    match text.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => Err(ConfigError::Malformed {
            line,
            text: text.to_string(),
        }),
    }
}

/// Applies every assignment in `text` on top of `base`. Does not validate.
pub fn parse_onto(base: ExperimentConfig, text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = base;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = split_assignment(line, i + 1)?;
        apply(&mut cfg, k, v)?;
    }
    Ok(cfg)
}

/// Parses a full configuration over the defaults and validates it.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg = parse_onto(ExperimentConfig::default(), text)?;
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Writes every key; the output parses back to an equal configuration.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    put("n_t", cfg.n_t.to_string());
    put("k", cfg.k.to_string());
    put("n", cfg.n.to_string());
    put("modulation", cfg.modulation.to_string());
    put("methods", join(&cfg.methods));
    put("method", cfg.method.to_string());
    put("snr_grid_db", join(&cfg.snr_grid_db));
    put("trials", cfg.trials.to_string());
    put("p0", cfg.p0.to_string());
    put("master_seed", cfg.master_seed.to_string());
    put("admm.rho", cfg.admm_rho.map_or("auto".to_string(), |r| r.to_string()));
    put("admm.t_max", cfg.admm_t_max.to_string());
    put("admm.epsilon", cfg.admm_epsilon.to_string());
    put("admm.polish", cfg.admm_polish.to_string());
    put("n_list", join(&cfg.n_list));
    put("rho_list", join(&cfg.rho_list));
    put("repeats", cfg.repeats.to_string());
    put("normalize_qam", cfg.normalize_qam.to_string());
    put("sign_mode", cfg.sign_mode.as_str().to_string());
    put("max_cond", cfg.max_cond.to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_expansion() {
        assert_eq!(parse_grid("0:5:30").unwrap(), vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]);
        assert_eq!(parse_grid("1, 2.5").unwrap(), vec![1.0, 2.5]);
        assert_eq!(parse_grid("0:0.1:0.3").unwrap().len(), 4);
        assert!(parse_grid("0:0:3").is_err());
        assert!(parse_grid("3:1:0").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert_eq!(parse_config("snr = 3"), Err(ConfigError::UnknownKey("snr".into())));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(matches!(parse_config("n_t 4"), Err(ConfigError::Malformed { line: 1, .. })));
        assert!(matches!(parse_config("trials = many"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn invariants_are_checked() {
        assert!(matches!(parse_config("n_t = 2\nk = 3"), Err(ConfigError::Invalid(_))));
        assert!(matches!(parse_config("trials = 0"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = parse_config("# base\n\nn = 16  # slots\nmodulation = 16qam\nadmm.rho = 2.5\n").unwrap();
        assert_eq!(cfg.n, 16);
        assert_eq!(cfg.modulation, Modulation::Qam(16));
        assert_eq!(cfg.admm_rho, Some(2.5));
    }

    #[test]
    fn emit_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.snr_grid_db = vec![-3.5, 0.1, 1e-3];
        cfg.methods = vec![Method::Ciblp, Method::NonlinearEpigraph];
        cfg.admm_rho = Some(0.3);
        cfg.sign_mode = SignMode::Strict;
        cfg.modulation = Modulation::Psk(8);
        let again = parse_config(&emit_config(&cfg)).unwrap();
        assert_eq!(again, cfg);
        let default = ExperimentConfig::default();
        assert_eq!(parse_config(&emit_config(&default)).unwrap(), default);
    }

    #[test]
    fn every_key_is_emitted() {
        let text = emit_config(&ExperimentConfig::default());
        for k in KEYS {
            assert!(text.lines().any(|l| l.starts_with(&format!("{k} ="))), "{k}");
        }
    }
}
