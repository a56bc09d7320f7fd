//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::stmatch::StParams;
use crate::voting::{MaxDist, VotingParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid value for `{key}`: {value}")]
    InvalidValue { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Candidate search radius, meters.
    pub alpha: f64,
    /// Candidates kept per ping.
    pub k: usize,
    pub mu: f64,
    pub sigma: f64,
    pub speed_floor_kmh: f64,
    pub beta: f64,
    pub maxdist: MaxDist,
    pub minpings: usize,
    /// Time gap that splits a device's pings into separate trajectories.
    pub split_gap_s: f64,
    /// Positional noise of synthetic pings, meters.
    pub noise_sigma: f64,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub workers: Option<usize>,
    pub asset: Option<PathBuf>,
    pub trajectories: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            alpha: 100.0,
            k: 5,
            mu: 0.0,
            sigma: 20.0,
            speed_floor_kmh: 1.0,
            beta: 2000.0,
            maxdist: MaxDist::Unbounded,
            minpings: 2,
            split_gap_s: 300.0,
            noise_sigma: 10.0,
            seed: 0,
            workers: None,
            asset: None,
            trajectories: None,
            out: None,
        }
    }
}

fn invalid(key: &str, value: &str) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    }
}

fn positive(key: &str, value: &str) -> Result<f64, ConfigError> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(invalid(key, value)),
    }
}

fn count(key: &str, value: &str) -> Result<usize, ConfigError> {
    match value.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(invalid(key, value)),
    }
}

/// Parses `unbounded` or a positive distance in meters.
pub fn parse_maxdist(value: &str) -> Result<MaxDist, ConfigError> {
    if value.eq_ignore_ascii_case("unbounded") {
        Ok(MaxDist::Unbounded)
    } else {
        positive("maxdist", value).map(MaxDist::Bounded)
    }
}

impl Config {
    /// Applies one setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "alpha" => self.alpha = positive(key, value)?,
            "k" => self.k = count(key, value)?,
            "mu" => {
                self.mu = value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| invalid(key, value))?
            }
            "sigma" => self.sigma = positive(key, value)?,
            "speed_floor_kmh" => self.speed_floor_kmh = positive(key, value)?,
            "beta" => self.beta = positive(key, value)?,
            "maxdist" => self.maxdist = parse_maxdist(value)?,
            "minpings" => self.minpings = count(key, value)?,
            "split_gap_s" => self.split_gap_s = positive(key, value)?,
            "noise_sigma" => {
                self.noise_sigma = value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| invalid(key, value))?
            }
            "seed" => self.seed = value.parse().map_err(|_| invalid(key, value))?,
            "workers" => self.workers = Some(count(key, value)?),
            "asset" => self.asset = Some(PathBuf::from(value)),
            "trajectories" => self.trajectories = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: 0,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: n + 1 });
            };
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: n + 1, key },
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn st_params(&self) -> StParams {
        StParams {
            mu: self.mu,
            sigma: self.sigma,
            speed_floor_kmh: self.speed_floor_kmh,
        }
    }

    pub fn voting_params(&self) -> VotingParams {
        VotingParams {
            beta: self.beta,
            maxdist: self.maxdist,
        }
    }
}
