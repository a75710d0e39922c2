//! `key = value` run configuration with command-line overrides.
//!
//! ```text
//! # training
//! epochs = 40
//! lr = 0.0002
//! ```
//!
//! Keys: `epochs`, `batch_size`, `lr`, `seed`, `lambda_l1`, `alpha_ssim`,
//! `train_frac`, `val_frac`, `test_frac`, `split_seed`. Dashes and
//! underscores are interchangeable, and `batch` is accepted for `batch_size`.

use std::path::Path;

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::gan::{LossWeights, TrainConfig};

pub const KEYS: [&str; 10] = [
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "lambda_l1",
    "alpha_ssim",
    "train_frac",
    "val_frac",
    "test_frac",
    "split_seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub split: SplitSpec,
}

fn canonical(key: &str) -> String {
    let k = key.trim().to_ascii_lowercase().replace('-', "_");
    if k == "batch" {
        "batch_size".into()
    } else {
        k
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config {
        line,
        message: format!("`{key}` expects a number, got `{}`", value.trim()),
    })
}

impl RunConfig {
    /// Apply one setting; `line` is 0 for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let key = canonical(key);
        match key.as_str() {
            "epochs" => self.train.epochs = parse_num(&key, value, line)?,
            "batch_size" => self.train.batch_size = parse_num(&key, value, line)?,
            "lr" => self.train.lr = parse_num(&key, value, line)?,
            "seed" => self.train.seed = parse_num(&key, value, line)?,
            "lambda_l1" => self.weights.lambda_l1 = parse_num(&key, value, line)?,
            "alpha_ssim" => self.weights.alpha_ssim = parse_num(&key, value, line)?,
            "train_frac" => self.split.train = parse_num(&key, value, line)?,
            "val_frac" => self.split.val = parse_num(&key, value, line)?,
            "test_frac" => self.split.test = parse_num(&key, value, line)?,
            "split_seed" => self.split.seed = parse_num(&key, value, line)?,
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key `{key}` (known: {})", KEYS.join(", ")),
                })
            }
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k, v, i + 1)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.weights.validate()?;
        self.split.validate()
    }
}

/// File values (or defaults when `path` is `None`), then `overrides` in
/// order; the result is validated.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::parse_str(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => RunConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v, 0)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
