//! Self-describing checkpoint container with bit-stable reload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Model;
use super::TrainError;
use crate::config::ExperimentConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pretrain,
    Finetune,
}

/// One point of a validation history: pretrain records loss, finetune F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub stage: Stage,
    pub backbone_id: String,
    pub model: Model,
    pub config: ExperimentConfig,
    pub validation_history: Vec<EvalPoint>,
    /// The step whose parameters this checkpoint holds.
    pub selected_step: usize,
}

impl Checkpoint {
    pub fn new(
        stage: Stage,
        config: &ExperimentConfig,
        model: Model,
        validation_history: Vec<EvalPoint>,
        selected_step: usize,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            stage,
            backbone_id: config.backbone_id.clone(),
            model,
            config: config.clone(),
            validation_history,
            selected_step,
        }
    }

    /// Errors unless the checkpoint matches the run configuration's
    /// interface kind and backbone.
    pub fn check_compatible(&self, config: &ExperimentConfig) -> Result<(), TrainError> {
        if self.model.interface.kind() != config.interface_kind {
            return Err(TrainError::CheckpointMismatch {
                reason: format!(
                    "checkpoint interface is {}, config wants {}",
                    self.model.interface.kind(),
                    config.interface_kind
                ),
            });
        }
        if self.backbone_id != config.backbone_id {
            return Err(TrainError::CheckpointMismatch {
                reason: format!(
                    "checkpoint was trained on `{}`, config wants `{}`",
                    self.backbone_id, config.backbone_id
                ),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| TrainError::CheckpointFormat(e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(TrainError::CheckpointFormat(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| TrainError::Io { path: path.display().to_string(), reason: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        Self::from_json(&text)
    }
}
