use std::fmt::Write as _;

use crate::corpus::DEFAULT_MAX_LEN;
use crate::error::{Error, Result};
use crate::nets::{ModelDims, Variant};

/// Every key accepted in a config file, also accepted as `--key value`.
pub const CONFIG_KEYS: &[&str] = &[
    "variant",
    "d",
    "h",
    "layers",
    "g",
    "lr",
    "keep_prob",
    "batch_size",
    "max_epochs",
    "seed",
    "L",
    "ks",
    "positions",
    "init_scale",
    "max_norm",
    "val_fraction",
    "corpus",
    "checkpoint",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Number of past session representations the inter-session GRU sees.
    pub history: usize,
    pub lr: f64,
    pub keep_prob: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub max_len: usize,
    pub ks: Vec<usize>,
    pub positions: Vec<usize>,
    pub init_scale: f64,
    /// Global gradient-norm cap; 0 disables it.
    pub max_norm: f64,
    /// Trailing share of each user's training sessions used for epoch
    /// selection.
    pub val_fraction: f64,
    pub corpus: String,
    pub checkpoint: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::IiLhs,
            embed_dim: 50,
            hidden_dim: 100,
            layers: 1,
            history: 15,
            lr: 0.001,
            keep_prob: 1.0,
            batch_size: 15,
            max_epochs: 20,
            seed: 0,
            max_len: DEFAULT_MAX_LEN,
            ks: vec![5, 10, 20],
            positions: vec![1, 2, 3, 4, 5, DEFAULT_MAX_LEN],
            init_scale: 0.1,
            max_norm: 0.0,
            val_fraction: 0.05,
            corpus: String::new(),
            checkpoint: String::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s.trim()))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "variant" => self.variant = value.parse()?,
            "d" => self.embed_dim = parse_num(key, value)?,
            "h" => self.hidden_dim = parse_num(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "g" => self.history = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "keep_prob" => self.keep_prob = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "max_epochs" => self.max_epochs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "L" => self.max_len = parse_num(key, value)?,
            "ks" => self.ks = parse_list(key, value)?,
            "positions" => self.positions = parse_list(key, value)?,
            "init_scale" => self.init_scale = parse_num(key, value)?,
            "max_norm" => self.max_norm = parse_num(key, value)?,
            "val_fraction" => self.val_fraction = parse_num(key, value)?,
            "corpus" => self.corpus = value.to_string(),
            "checkpoint" => self.checkpoint = value.to_string(),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "variant" => self.variant.to_string(),
            "d" => self.embed_dim.to_string(),
            "h" => self.hidden_dim.to_string(),
            "layers" => self.layers.to_string(),
            "g" => self.history.to_string(),
            "lr" => self.lr.to_string(),
            "keep_prob" => self.keep_prob.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "seed" => self.seed.to_string(),
            "L" => self.max_len.to_string(),
            "ks" => join(&self.ks),
            "positions" => join(&self.positions),
            "init_scale" => self.init_scale.to_string(),
            "max_norm" => self.max_norm.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "corpus" => self.corpus.clone(),
            "checkpoint" => self.checkpoint.clone(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            writeln!(out, "{key} = {}", self.get(key).unwrap()).unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad("keep_prob must lie in (0, 1]");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return bad("d, h and layers must be positive");
        }
        if self.variant.uses_history() && self.history == 0 {
            return bad("history-aware variants need g >= 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if self.max_norm < 0.0 || !(self.init_scale > 0.0) {
            return bad("max_norm must be >= 0 and init_scale > 0");
        }
        if self.max_len < 2 {
            return bad("L must be at least 2");
        }
        Ok(())
    }

    pub fn dims(&self, num_items: usize) -> ModelDims {
        ModelDims {
            num_items,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("variant", "ii-rnn-ap").unwrap();
        cfg.set("ks", "1, 3").unwrap();
        cfg.set("lr", "0.0025").unwrap();
        let back = TrainConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.max_len, c.batch_size, c.embed_dim, c.hidden_dim, c.history), (20, 15, 50, 100, 15));
        assert_eq!(c.lr, 0.001);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::from_text("nope = 1").is_err());
        assert!(TrainConfig::from_text("lr 0.1").is_err());
        assert!(TrainConfig::from_text("batch_size = x").is_err());
        let cfg = TrainConfig::from_text("# comment\nkeep_prob = 0\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn every_key_round_trips_through_get() {
        let cfg = TrainConfig::default();
        for key in CONFIG_KEYS {
            let mut c = TrainConfig::default();
            c.set(key, &cfg.get(key).unwrap()).unwrap();
            assert_eq!(c, cfg, "{key}");
        }
    }
}
