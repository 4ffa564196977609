//! JSON run configuration with schema validation. Unknown keys are
//! rejected; missing keys take the documented defaults (the experiment
//! values rho = 6, eta = 2, Q = I and the a9a regularization preset
//! lambda1 = 1e-4, lambda2 = 1.2e-4). Command-line flags overlay file
//! values; the seed is mandatory for solve/bench unless the file has one.

use crate::engine::{QMode, SolverConfig, StepsizeSchedule};
use crate::estimators::EstimatorKind;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error("config key {key}: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("missing required key {0} (pass it as a flag or add it to the config file)")]
    Missing(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The raw file schema; every key optional, unknown keys rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub algorithm: Option<String>,
    pub rho: Option<f64>,
    pub eta: Option<f64>,
    pub q_mode: Option<String>,
    pub m: Option<usize>,
    pub iterations: Option<usize>,
    pub seed: Option<u64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub graph_threshold: Option<f64>,
    pub data_path: Option<String>,
    pub out_path: Option<String>,
    pub diagnostics: Option<bool>,
}

impl ConfigFile {
    /// Overlays `other` (typically CLI flags) on top of `self`; set fields
    /// in `other` win.
    pub fn overlay(mut self, other: ConfigFile) -> ConfigFile {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            algorithm,
            rho,
            eta,
            q_mode,
            m,
            iterations,
            seed,
            lambda1,
            lambda2,
            graph_threshold,
            data_path,
            out_path,
            diagnostics
        );
        self
    }
}

pub fn load_config(path: &Path) -> Result<ConfigFile, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))
}

pub fn parse_algorithm(name: &str) -> Result<EstimatorKind, ConfigError> {
    match name.to_ascii_lowercase().as_str() {
        "s-admm" | "sadmm" | "plain" => Ok(EstimatorKind::Plain),
        "s-admm-f" | "sadmm-f" | "plain-fixed" => Ok(EstimatorKind::PlainFixed),
        "svrg" | "svrg-admm" => Ok(EstimatorKind::Svrg),
        "sag" | "sag-admm" => Ok(EstimatorKind::Sag),
        "saga" | "saga-admm" => Ok(EstimatorKind::Saga),
        other => Err(ConfigError::Invalid {
            key: "algorithm",
            msg: format!(
                "unknown algorithm {other:?}; expected one of s-admm, s-admm-f, svrg, sag, saga"
            ),
        }),
    }
}

fn parse_q_mode(name: &str) -> Result<QMode, ConfigError> {
    match name.to_ascii_lowercase().as_str() {
        "identity" | "i" => Ok(QMode::Identity),
        "linearized" | "uzawa" | "uzawa-linearized" => Ok(QMode::UzawaLinearized),
        other => Err(ConfigError::Invalid {
            key: "q_mode",
            msg: format!("unknown q_mode {other:?}; expected identity or linearized"),
        }),
    }
}

/// A fully resolved run request: solver settings plus the problem and I/O
/// parameters that surround them.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub solver: SolverConfig,
    pub lambda1: f64,
    pub lambda2: f64,
    pub graph_threshold: f64,
    pub data_path: Option<PathBuf>,
    pub out_path: Option<PathBuf>,
}

/// Applies defaults and validates. `require_seed` is set by solve/bench.
pub fn resolve(file: ConfigFile, require_seed: bool) -> Result<RunSettings, ConfigError> {
    let algorithm = parse_algorithm(file.algorithm.as_deref().unwrap_or("saga"))?;
    let seed = match file.seed {
        Some(s) => s,
        None if require_seed => return Err(ConfigError::Missing("seed")),
        None => 0,
    };
    let mut solver = SolverConfig::new(algorithm, seed);
    if let Some(rho) = file.rho {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "rho",
                msg: format!("must be a positive finite number, got {rho}"),
            });
        }
        solver.rho = rho;
    }
    if let Some(eta) = file.eta {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "eta",
                msg: format!("must be a positive finite number, got {eta}"),
            });
        }
        solver.eta = eta;
    }
    if let Some(q) = file.q_mode.as_deref() {
        solver.q_mode = parse_q_mode(q)?;
    }
    solver.epoch_length = file.m;
    if let Some(iters) = file.iterations {
        solver.total_iterations = iters;
    }
    if let Some(d) = file.diagnostics {
        solver.diagnostics = d;
    }
    solver.schedule = match algorithm {
        EstimatorKind::Plain => StepsizeSchedule::SqrtT,
        _ => StepsizeSchedule::Constant,
    };
    let lambda1 = file.lambda1.unwrap_or(1e-4);
    let lambda2 = file.lambda2.unwrap_or(1.2e-4);
    for (key, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ConfigError::Invalid {
                key: if key == "lambda1" {
                    "lambda1"
                } else {
                    "lambda2"
                },
                msg: format!("must be finite and >= 0, got {v}"),
            });
        }
    }
    let graph_threshold = file.graph_threshold.unwrap_or(0.5);
    if !(graph_threshold > 0.0 && graph_threshold <= 1.0) {
        return Err(ConfigError::Invalid {
            key: "graph_threshold",
            msg: format!("must be in (0, 1], got {graph_threshold}"),
        });
    }
    Ok(RunSettings {
        solver,
        lambda1,
        lambda2,
        graph_threshold,
        data_path: file.data_path.map(PathBuf::from),
        out_path: file.out_path.map(PathBuf::from),
    })
}
