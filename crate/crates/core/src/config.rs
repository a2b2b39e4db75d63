//! Run configuration: every hyperparameter in one validated record.
//!
//! The on-disk form is flat `key = value` text with `#` comments. Unknown
//! keys are rejected so typos never silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub data_seed: u64,
    pub num_classes: usize,
    pub per_class: usize,
    pub side: usize,
    /// External dataset root; `None` generates the synthetic set in memory.
    pub data_dir: Option<PathBuf>,
    pub fold: usize,
    pub shots: usize,
    pub gamma: f64,
    pub num_prototypes: usize,
    pub sigma: f64,
    pub weight_sq_dist: bool,
    pub use_weight_map: bool,
    pub use_comm: bool,
    pub comm_masked_mean: bool,
    pub two_stage: bool,
    pub widths: Vec<usize>,
    pub feature_dim: usize,
    pub aspp_dilations: Vec<usize>,
    pub prior_dropout: f64,
    pub seg_dropout: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub prior_lr: f64,
    pub seg_lr: f64,
    pub prior_epochs: usize,
    pub seg_epochs: usize,
    pub episodes_per_epoch: usize,
    pub flip: bool,
    pub eval_runs: usize,
    pub eval_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_seed: 7,
            num_classes: 12,
            per_class: 40,
            side: 64,
            data_dir: None,
            fold: 0,
            shots: 1,
            gamma: 20.0,
            num_prototypes: 3,
            sigma: 5.0,
            weight_sq_dist: false,
            use_weight_map: true,
            use_comm: true,
            comm_masked_mean: false,
            two_stage: true,
            widths: vec![32, 64, 96, 128],
            feature_dim: 64,
            aspp_dilations: vec![1, 2, 4],
            prior_dropout: 0.1,
            seg_dropout: 0.5,
            momentum: 0.9,
            weight_decay: 0.0005,
            clip_norm: 1.1,
            prior_lr: 0.001,
            seg_lr: 0.0035,
            prior_epochs: 30,
            seg_epochs: 30,
            episodes_per_epoch: 200,
            flip: true,
            eval_runs: 5,
            eval_episodes: 200,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Narrow networks and short schedules sized for a single CPU core: one
    /// fold of the two-stage model trains in under a minute.
    pub fn compact() -> Self {
        Self {
            widths: vec![8, 16, 16, 16],
            feature_dim: 16,
            seg_dropout: 0.1,
            prior_lr: 0.01,
            seg_lr: 0.01,
            prior_epochs: 5,
            seg_epochs: 8,
            episodes_per_epoch: 100,
            eval_runs: 1,
            eval_episodes: 150,
            ..Self::default()
        }
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "num_classes" => self.num_classes = parse(key, v)?,
            "per_class" => self.per_class = parse(key, v)?,
            "side" => self.side = parse(key, v)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "fold" => self.fold = parse(key, v)?,
            "shots" => self.shots = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "num_prototypes" => self.num_prototypes = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "weight_sq_dist" => self.weight_sq_dist = parse_bool(key, v)?,
            "use_weight_map" => self.use_weight_map = parse_bool(key, v)?,
            "use_comm" => self.use_comm = parse_bool(key, v)?,
            "comm_masked_mean" => self.comm_masked_mean = parse_bool(key, v)?,
            "two_stage" => self.two_stage = parse_bool(key, v)?,
            "widths" => self.widths = parse_list(key, v)?,
            "feature_dim" => self.feature_dim = parse(key, v)?,
            "aspp_dilations" => self.aspp_dilations = parse_list(key, v)?,
            "prior_dropout" => self.prior_dropout = parse(key, v)?,
            "seg_dropout" => self.seg_dropout = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "prior_lr" => self.prior_lr = parse(key, v)?,
            "seg_lr" => self.seg_lr = parse(key, v)?,
            "prior_epochs" => self.prior_epochs = parse(key, v)?,
            "seg_epochs" => self.seg_epochs = parse(key, v)?,
            "episodes_per_epoch" => self.episodes_per_epoch = parse(key, v)?,
            "flip" => self.flip = parse_bool(key, v)?,
            "eval_runs" => self.eval_runs = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `KEY=VALUE` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Parses config text on top of the defaults.
    pub fn parse_text(text: &str) -> Result<Self> {
        Self::default().with_text(text)
    }

    /// Applies config text on top of `self`.
    pub fn with_text(self, text: &str) -> Result<Self> {
        let mut cfg = self;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.apply_override(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        let b = |v: bool| v.to_string();
        let f = |v: f64| format!("{v:?}");
        let data_dir = self
            .data_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        [
            ("seed", self.seed.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("per_class", self.per_class.to_string()),
            ("side", self.side.to_string()),
            ("data_dir", data_dir),
            ("fold", self.fold.to_string()),
            ("shots", self.shots.to_string()),
            ("gamma", f(self.gamma)),
            ("num_prototypes", self.num_prototypes.to_string()),
            ("sigma", f(self.sigma)),
            ("weight_sq_dist", b(self.weight_sq_dist)),
            ("use_weight_map", b(self.use_weight_map)),
            ("use_comm", b(self.use_comm)),
            ("comm_masked_mean", b(self.comm_masked_mean)),
            ("two_stage", b(self.two_stage)),
            ("widths", join(&self.widths)),
            ("feature_dim", self.feature_dim.to_string()),
            ("aspp_dilations", join(&self.aspp_dilations)),
            ("prior_dropout", f(self.prior_dropout)),
            ("seg_dropout", f(self.seg_dropout)),
            ("momentum", f(self.momentum)),
            ("weight_decay", f(self.weight_decay)),
            ("clip_norm", f(self.clip_norm)),
            ("prior_lr", f(self.prior_lr)),
            ("seg_lr", f(self.seg_lr)),
            ("prior_epochs", self.prior_epochs.to_string()),
            ("seg_epochs", self.seg_epochs.to_string()),
            ("episodes_per_epoch", self.episodes_per_epoch.to_string()),
            ("flip", b(self.flip)),
            ("eval_runs", self.eval_runs.to_string()),
            ("eval_episodes", self.eval_episodes.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_classes == 0 || !self.num_classes.is_multiple_of(4) {
            return fail(format!(
                "num_classes {} must be a positive multiple of 4",
                self.num_classes
            ));
        }
        if self.fold > 3 {
            return fail(format!("fold {} outside 0..=3", self.fold));
        }
        if self.shots == 0 {
            return fail("shots must be at least 1".into());
        }
        if self.per_class < self.shots + 1 {
            return fail(format!(
                "per_class {} cannot fill a {}-shot episode",
                self.per_class, self.shots
            ));
        }
        if self.num_prototypes == 0 {
            return fail("num_prototypes must be at least 1".into());
        }
        if self.widths.len() != 4 || self.widths.contains(&0) {
            return fail(format!(
                "widths must list 4 positive block widths, got {:?}",
                self.widths
            ));
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if self.aspp_dilations.is_empty() || self.aspp_dilations.contains(&0) {
            return fail(format!(
                "aspp_dilations must be positive, got {:?}",
                self.aspp_dilations
            ));
        }
        for (name, v) in [("prior_dropout", self.prior_dropout), ("seg_dropout", self.seg_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{name} {v} outside [0, 1)"));
            }
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("sigma", self.sigma),
            ("clip_norm", self.clip_norm),
            ("prior_lr", self.prior_lr),
            ("seg_lr", self.seg_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return fail("momentum must lie in [0, 1) and weight_decay be non-negative".into());
        }
        if self.eval_runs == 0 || self.eval_episodes == 0 {
            return fail("eval_runs and eval_episodes must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = RunConfig {
            widths: vec![8, 16, 16, 24],
            sigma: 4.25,
            data_dir: Some("/tmp/x".into()),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_overrides() {
        let cfg = RunConfig::parse_text("# header\nfold = 2 # trailing\n\nnum_prototypes=5\n").unwrap();
        assert_eq!(cfg.fold, 2);
        assert_eq!(cfg.num_prototypes, 5);
        assert!(RunConfig::parse_text("nonsense = 1").is_err());
        assert!(RunConfig::parse_text("fold = 4").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
