//! Flat `key = value` run configuration with per-key defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

/// `(key, default, help)` for every recognised setting.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data", "", "CSV panel with date,symbol,<features>[,target] columns"),
    ("synth", "false", "generate a synthetic market instead of reading --data"),
    ("signal", "Delta(close, 10d)", "planted formula for the synthetic market"),
    ("signal_strength", "0.9", "weight of the planted signal in synthetic targets"),
    ("n_assets", "50", "synthetic assets"),
    ("n_days", "750", "synthetic trading days"),
    ("horizon", "5", "forward-return horizon in days"),
    ("train_frac", "0.6", "fraction of days used for training"),
    ("valid_frac", "0.2", "fraction of days used for validation"),
    ("lookback", "50", "warm-up days kept before validation and test"),
    ("seed", "0", "seed for data generation, sampling and initialization"),
    ("steps", "20000", "training steps"),
    ("batch_size", "16", "sampled programs per step"),
    ("lr", "0.001", "policy learning rate"),
    ("optimizer", "adam", "adam or sgd"),
    ("baseline", "true", "subtract the greedy-rollout reward"),
    ("lambda", "0.02", "IR shaping penalty"),
    ("alpha", "90000", "steps before the IR threshold starts rising"),
    ("eta", "0.00000265", "IR threshold slope per step"),
    ("delta", "0.3", "IR threshold cap"),
    ("reward_floor", "-1", "reward of programs that are missing everywhere"),
    ("patience", "2000", "early-stop patience in steps on validation IC (0 disables)"),
    ("checkpoint_every", "1000", "steps between policy checkpoints (0 disables)"),
    ("pool_capacity", "10", "maximum number of pooled factors"),
    ("pool_lr", "0.005", "step size of the weight fit"),
    ("pool_max_iters", "1000", "iterations of the weight fit"),
    ("pool_tol", "1e-8", "gradient-norm tolerance of the weight fit"),
    ("embed", "32", "token embedding width"),
    ("hidden", "64", "recurrent hidden width"),
    ("max_len", "20", "maximum program length in tokens"),
    ("out", "runs", "directory receiving run directories"),
    ("threads", "1", "worker threads (computation is single-threaded)"),
    ("pool", "", "pool file of weight<TAB>expression lines"),
    ("split", "test", "subset to evaluate: train, valid, test or all"),
    ("k", "50", "assets held by the top-k strategy"),
    ("cost_bps", "0", "transaction cost in basis points of turnover"),
    ("turnover", "one_way", "turnover convention: one_way or two_way"),
    ("samples", "1000000", "Monte-Carlo samples per verification check"),
    ("r1", "1", "reward of the better bandit arm"),
    ("r2", "0.6", "reward of the worse bandit arm"),
    ("p", "", "single probability of the better arm (default: grid 0.05..0.95)"),
    ("noise", "0.1,0.2,0.4", "transition noise levels for the determinism check"),
    ("report", "", "file receiving the verification CSV"),
    ("output", "", "CSV file written by synth"),
];

pub fn is_flag(key: &str) -> bool {
    matches!(key, "synth" | "baseline")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.str(key)
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid value {:?} for `{key}`", self.str(key))))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(CliError::Usage(format!("invalid boolean {v:?} for `{key}`"))),
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.str(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid number {s:?} in `{key}`")))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the effective configuration text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}
