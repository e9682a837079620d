//! Experiment configuration.
//!
//! The config file is flat `key = value` text (TOML grammar) whose keys
//! mirror [`ExperimentConfig`] field names exactly. Absent fields take the
//! documented defaults, and a config round-trips through its file form
//! losslessly.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

/// Evenly spaced detection thresholds, both endpoints inclusive.
///
/// The default `0:1:0.05` grid contains 21 candidate thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self { start: 0.0, end: 1.0, step: 0.05 }
    }
}

impl ThresholdGrid {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step).round() as usize + 1;
        (0..n)
            .map(|k| (self.start + k as f64 * self.step).min(self.end))
            .collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let f = "threshold_grid";
        if !self.step.is_finite() || self.step <= 0.0 {
            return Err(invalid(f, format!("step must be positive, got {}", self.step)));
        }
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=1.0).contains(&self.end) {
            return Err(invalid(f, "endpoints must lie in [0, 1]"));
        }
        if self.start > self.end {
            return Err(invalid(f, "start must not exceed end"));
        }
        Ok(())
    }
}

impl fmt::Display for ThresholdGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.step)
    }
}

impl FromStr for ThresholdGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected start:end:step, got `{s}`"));
        }
        let parse = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}"));
        Ok(Self { start: parse(parts[0])?, end: parse(parts[1])?, step: parse(parts[2])? })
    }
}

impl Serialize for ThresholdGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ThresholdGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Strategy for collapsing the backbone's layer stack into one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterfaceKind {
    /// Hierarchical convolution over the layer axis.
    Hconv,
    /// Softmax-normalized learnable weighted sum.
    WeightedSum,
    /// Pass layer `k` through unchanged.
    SingleLayer(usize),
}

impl Default for InterfaceKind {
    fn default() -> Self {
        InterfaceKind::Hconv
    }
}

impl fmt::Display for InterfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InterfaceKind::Hconv => write!(f, "hconv"),
            InterfaceKind::WeightedSum => write!(f, "weighted_sum"),
            InterfaceKind::SingleLayer(k) => write!(f, "layer:{k}"),
        }
    }
}

impl FromStr for InterfaceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hconv" => Ok(InterfaceKind::Hconv),
            "ws" | "weighted_sum" => Ok(InterfaceKind::WeightedSum),
            other => {
                if let Some(k) = other.strip_prefix("layer:") {
                    let k = k.parse::<usize>().map_err(|e| format!("layer index: {e}"))?;
                    Ok(InterfaceKind::SingleLayer(k))
                } else {
                    Err(format!("unknown interface `{other}` (expected hconv, ws, weighted_sum or layer:K)"))
                }
            }
        }
    }
}

impl Serialize for InterfaceKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InterfaceKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rates and ranges for synthetic disfluency sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Per-utterance probability that each edit kind is applied.
    pub edit_prob: f64,
    pub repeat_min: usize,
    pub repeat_max: usize,
    pub max_edits: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { edit_prob: 0.5, repeat_min: 1, repeat_max: 3, max_edits: 3 }
    }
}

fn default_w_ctc() -> f64 {
    0.3
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_margin() -> f64 {
    0.2
}
fn default_data_ratio() -> f64 {
    1.0
}
fn default_backbone_id() -> String {
    "toy://7/4/16".to_owned()
}
fn default_pretrain_steps() -> usize {
    500
}
fn default_finetune_steps() -> usize {
    200
}
fn default_vocab() -> usize {
    40
}

/// All knobs of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Weight of the auxiliary CTC loss in the pretrain objective.
    #[serde(default = "default_w_ctc")]
    pub w_ctc: f64,
    /// Adam learning rate.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub threshold_grid: ThresholdGrid,
    /// Margin added on both sides of ASR word timestamps, in seconds.
    #[serde(default = "default_margin")]
    pub margin_seconds: f64,
    /// Fraction of the finetune set kept by balanced subsampling.
    #[serde(default = "default_data_ratio")]
    pub data_ratio: f64,
    #[serde(default)]
    pub interface_kind: InterfaceKind,
    #[serde(default = "default_backbone_id")]
    pub backbone_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_pretrain_steps")]
    pub pretrain_steps: usize,
    #[serde(default = "default_finetune_steps")]
    pub finetune_steps: usize,
    /// Steps between validation passes; 0 means once per epoch.
    #[serde(default)]
    pub validate_every: usize,
    #[serde(default)]
    pub augment: AugmentPolicy,
    /// Phoneme inventory size including the blank.
    #[serde(default = "default_vocab")]
    pub phoneme_vocab_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // serde defaults and Default must agree; this round-trips "{}".
        toml::from_str("").expect("empty config is valid")
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        validate_config(cfg)
    }

    pub fn to_file(&self, path: &Path) -> Result<(), ConfigError> {
        let text = toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Checks every config invariant, reporting the first violated one by field
/// name, and returns the config unchanged when all hold.
pub fn validate_config(cfg: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    if !cfg.w_ctc.is_finite() || cfg.w_ctc < 0.0 {
        return Err(invalid("w_ctc", format!("must be nonnegative, got {}", cfg.w_ctc)));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate <= 0.0 {
        return Err(invalid("learning_rate", format!("must be positive, got {}", cfg.learning_rate)));
    }
    cfg.threshold_grid.validate()?;
    if !cfg.margin_seconds.is_finite() || !(0.0..=0.2).contains(&cfg.margin_seconds) {
        return Err(invalid(
            "margin_seconds",
            format!("must lie in [0, 0.2], got {}", cfg.margin_seconds),
        ));
    }
    if !cfg.data_ratio.is_finite() || !(0.0..=1.0).contains(&cfg.data_ratio) {
        return Err(invalid("data_ratio", format!("must lie in [0, 1], got {}", cfg.data_ratio)));
    }
    if cfg.backbone_id.is_empty() {
        return Err(invalid("backbone_id", "must not be empty"));
    }
    if cfg.augment.edit_prob < 0.0 || cfg.augment.edit_prob > 1.0 {
        return Err(invalid("augment.edit_prob", "must lie in [0, 1]"));
    }
    if cfg.augment.repeat_min < 1 || cfg.augment.repeat_min > cfg.augment.repeat_max {
        return Err(invalid("augment.repeat_min", "need 1 <= repeat_min <= repeat_max"));
    }
    if cfg.phoneme_vocab_size < 2 {
        return Err(invalid("phoneme_vocab_size", "must be at least 2 (blank + 1)"));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_values_are_accepted_defaults() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.w_ctc, 0.3);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.threshold_grid.step, 0.05);
        assert_eq!(cfg.margin_seconds, 0.2);
        assert!(validate_config(cfg).is_ok());
    }

    #[test]
    fn all_fields_absent_yields_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn out_of_range_ratio_names_field() {
        let cfg = ExperimentConfig { data_ratio: 1.3, ..Default::default() };
        match validate_config(cfg) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "data_ratio"),
            other => panic!("expected data_ratio error, got {other:?}"),
        }
    }

    #[test]
    fn default_grid_has_21_inclusive_values() {
        let grid = ThresholdGrid::default().values();
        assert_eq!(grid.len(), 21);
        assert_eq!(grid[0], 0.0);
        assert_eq!(*grid.last().unwrap(), 1.0);
    }

    #[test]
    fn interface_kind_parses_cli_forms() {
        assert_eq!("hconv".parse::<InterfaceKind>().unwrap(), InterfaceKind::Hconv);
        assert_eq!("ws".parse::<InterfaceKind>().unwrap(), InterfaceKind::WeightedSum);
        assert_eq!("layer:22".parse::<InterfaceKind>().unwrap(), InterfaceKind::SingleLayer(22));
        assert!("attention".parse::<InterfaceKind>().is_err());
    }

    #[test]
    fn config_round_trips_through_file_form() {
        let cfg = ExperimentConfig {
            w_ctc: 0.125,
            learning_rate: 3.5e-3,
            threshold_grid: ThresholdGrid { start: 0.1, end: 0.9, step: 0.1 },
            margin_seconds: 0.15,
            data_ratio: 0.75,
            interface_kind: InterfaceKind::SingleLayer(4),
            backbone_id: "toy://9/2/8".to_owned(),
            seed: 1234,
            pretrain_steps: 7,
            finetune_steps: 9,
            validate_every: 3,
            augment: AugmentPolicy { edit_prob: 0.25, repeat_min: 2, repeat_max: 5, max_edits: 2 },
            phoneme_vocab_size: 6,
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn margin_is_capped_at_paper_bound() {
        let cfg = ExperimentConfig { margin_seconds: 0.25, ..Default::default() };
        match validate_config(cfg) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "margin_seconds"),
            other => panic!("expected margin error, got {other:?}"),
        }
    }
}
