//! `key = value` run configuration.

use std::str::FromStr;

use spcot::engine::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice (first on line {first})")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: invalid value `{value}` for `{key}`: expected {expected}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
}

/// Dataset parameters used when no dataset directory is given.
#[derive(Debug, Clone, PartialEq)]
pub struct DataGen {
    pub n: usize,
    pub hw: usize,
    pub labeled_ratio: f64,
}

impl Default for DataGen {
    fn default() -> Self {
        DataGen {
            n: 200,
            hw: 32,
            labeled_ratio: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataGen,
}

pub const KEYS: [&str; 21] = [
    "views",
    "epochs",
    "iters_per_epoch",
    "batch_labeled",
    "batch_unlabeled",
    "lambda1",
    "lambda2",
    "epsilon_floor",
    "gamma0",
    "pace_epochs",
    "alpha_max",
    "alpha_ramp_epochs",
    "beta",
    "base_lr",
    "seed",
    "enable_spc",
    "enable_consistency",
    "parallel_views",
    "n",
    "hw",
    "labeled_ratio",
];

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            expected: "true or false",
        }),
    }
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<(String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.to_string(),
                first: *first,
            });
        }
        seen.push((key.to_string(), line));

        let t = &mut cfg.train;
        let int = "a non-negative integer";
        let real = "a decimal number";
        match key {
            "views" => t.views = parse_num(line, key, value, int)?,
            "epochs" => t.epochs = parse_num(line, key, value, int)?,
            "iters_per_epoch" => t.iters_per_epoch = parse_num(line, key, value, int)?,
            "batch_labeled" => t.batch_labeled = parse_num(line, key, value, int)?,
            "batch_unlabeled" => t.batch_unlabeled = parse_num(line, key, value, int)?,
            "lambda1" => t.lambda1 = parse_num(line, key, value, real)?,
            "lambda2" => t.lambda2 = parse_num(line, key, value, real)?,
            "epsilon_floor" => t.epsilon_floor = parse_num(line, key, value, real)?,
            "gamma0" => t.gamma0 = parse_num(line, key, value, real)?,
            "pace_epochs" => t.pace_epochs = parse_num(line, key, value, int)?,
            "alpha_max" => t.alpha_max = parse_num(line, key, value, real)?,
            "alpha_ramp_epochs" => t.alpha_ramp_epochs = parse_num(line, key, value, int)?,
            "beta" => t.beta = parse_num(line, key, value, real)?,
            "base_lr" => t.base_lr = parse_num(line, key, value, real)?,
            "seed" => t.seed = parse_num(line, key, value, int)?,
            "enable_spc" => t.enable_spc = parse_bool(line, key, value)?,
            "enable_consistency" => t.enable_consistency = parse_bool(line, key, value)?,
            "parallel_views" => t.parallel_views = parse_bool(line, key, value)?,
            "n" => cfg.data.n = parse_num(line, key, value, int)?,
            "hw" => cfg.data.hw = parse_num(line, key, value, int)?,
            "labeled_ratio" => cfg.data.labeled_ratio = parse_num(line, key, value, real)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }
    Ok(cfg)
}
