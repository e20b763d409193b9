//! Training configuration and the flat `key = value` file format.
//!
//! Keys are the long CLI flag names without dashes (`batch-size = 4`);
//! underscores are accepted in place of dashes, `#` starts a comment.

use std::fs;
use std::path::Path;

use ebn::{NormKind, StdCenter};

use crate::error::{BenchError, Result};
use crate::model::ModelConfig;

/// Batch size at which `base_lr` applies unscaled.
pub const REFERENCE_BATCH: usize = 128;
pub const MNIST_INPUTS: usize = 784;
pub const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `bn`, `ebn`, `ln`, `in` or `gn`.
    pub norm: String,
    pub groups: usize,
    pub std_center: StdCenter,
    pub batch_size: usize,
    pub base_lr: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub eps: f64,
    pub rho: f64,
    pub test_batch_size: usize,
    /// Train on the first `n` training examples only.
    pub train_limit: Option<usize>,
    /// Evaluate on the first `n` test examples only.
    pub test_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            norm: "ebn".into(),
            groups: ebn::norm::DEFAULT_GROUPS,
            std_center: StdCenter::PerChannel,
            batch_size: REFERENCE_BATCH,
            base_lr: 0.1,
            epochs: 50,
            momentum: 0.5,
            weight_decay: 0.0,
            seed: 0,
            hidden_layers: 4,
            hidden_units: 128,
            eps: ebn::norm::DEFAULT_EPS,
            rho: ebn::norm::DEFAULT_MOMENTUM,
            test_batch_size: 256,
            train_limit: None,
            test_limit: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| BenchError::Config(format!("invalid value {value:?} for {key}")))
}

pub fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").to_ascii_lowercase().replace('_', "-")
}

impl TrainConfig {
    /// Linear scaling rule: `base_lr · batch_size / 128`.
    pub fn effective_lr(&self) -> f64 {
        self.base_lr * self.batch_size as f64 / REFERENCE_BATCH as f64
    }

    pub fn norm_kind(&self) -> Result<NormKind> {
        Ok(NormKind::parse(&self.norm, self.groups, self.std_center)?)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            inputs: MNIST_INPUTS,
            hidden_layers: self.hidden_layers,
            hidden_units: self.hidden_units,
            classes: MNIST_CLASSES,
            norm: self.norm_kind()?,
            eps: self.eps,
            rho: self.rho,
        })
    }

    /// Sets one option by key. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        match key.as_str() {
            "norm" => {
                NormKind::parse(value, 1, StdCenter::PerChannel)?;
                self.norm = value.trim().to_ascii_lowercase();
            }
            "groups" => self.groups = parse(&key, value)?,
            "std-center" => self.std_center = value.parse()?,
            "batch-size" => self.batch_size = parse(&key, value)?,
            "lr" => self.base_lr = parse(&key, value)?,
            "epochs" => self.epochs = parse(&key, value)?,
            "momentum" => self.momentum = parse(&key, value)?,
            "weight-decay" => self.weight_decay = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "hidden-layers" => self.hidden_layers = parse(&key, value)?,
            "hidden-units" => self.hidden_units = parse(&key, value)?,
            "eps" => self.eps = parse(&key, value)?,
            "rho" => self.rho = parse(&key, value)?,
            "test-batch-size" => self.test_batch_size = parse(&key, value)?,
            "train-limit" => self.train_limit = Some(parse(&key, value)?),
            "test-limit" => self.test_limit = Some(parse(&key, value)?),
            _ => return Err(BenchError::Config(format!("unknown option {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.norm_kind()?.validate(self.hidden_units)?;
        if self.batch_size == 0 || self.test_batch_size == 0 {
            return Err(BenchError::Config("batch sizes must be at least 1".into()));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(BenchError::Config(format!("learning rate must be non-negative, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(BenchError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(BenchError::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(BenchError::Config(format!("eps must be non-negative, got {}", self.eps)));
        }
        if self.hidden_layers > 0 && self.hidden_units == 0 {
            return Err(BenchError::Config("hidden-units must be positive".into()));
        }
        Ok(())
    }

    /// One-line description written above the CSV header.
    pub fn describe(&self) -> String {
        let kind = self.norm_kind().map(|k| k.to_string()).unwrap_or_else(|_| self.norm.clone());
        let mut s = format!(
            "norm={kind} batch_size={} base_lr={} effective_lr={} epochs={} momentum={} weight_decay={} \
             rho={} eps={:e} seed={} hidden={}x{} test_batch_size={}",
            self.batch_size,
            self.base_lr,
            self.effective_lr(),
            self.epochs,
            self.momentum,
            self.weight_decay,
            self.rho,
            self.eps,
            self.seed,
            self.hidden_layers,
            self.hidden_units,
            self.test_batch_size,
        );
        if let Some(n) = self.train_limit {
            s.push_str(&format!(" train_limit={n}"));
        }
        if let Some(n) = self.test_limit {
            s.push_str(&format!(" test_limit={n}"));
        }
        s
    }
}

/// `key = value` pairs in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| BenchError::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
        out.push((normalize_key(k), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_key_values(&text)
}
