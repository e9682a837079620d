//! Frozen speech SSL backbone adapters.
//!
//! A backbone exposes (a) convolutional frame features, (b) the full stack
//! of transformer-layer activations, and (c) an injection hook between the
//! two, which is where synthetic augmentation enters instead of the input
//! waveform. Backbones are loaded by identifier through [`load_backbone`],
//! so swapping the model under a run is pure configuration.

mod toy;

pub use toy::ToyBackbone;

use ndarray::Array2;
use thiserror::Error;

use crate::audio::Waveform;
use crate::types::{FrameLabelSequence, FrameSequence, TypeError};

#[derive(Debug, Error, PartialEq)]
pub enum BackboneError {
    #[error("waveform sample rate {got} Hz does not match the backbone's expected {expected} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },
    #[error("waveform is empty")]
    EmptyWaveform,
    #[error("frame sequence is empty")]
    EmptyFrames,
    #[error("feature dimension {got} does not match the backbone hidden dim {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("hook returned {labels} labels for {frames} frames")]
    HookLengthMismatch { frames: usize, labels: usize },
    #[error("hook failed: {0}")]
    Hook(String),
    #[error("unknown backbone id `{0}`")]
    UnknownBackbone(String),
    #[error("backbone `{id}` resolves to {uri}, but no local runtime for published SSL checkpoints is bundled; use a toy:// backbone or follow the full-scale recipe in the README")]
    CheckpointUnavailable { id: String, uri: String },
    #[error("bad toy backbone locator `{0}` (expected toy://seed/layers/dim)")]
    BadToyLocator(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Identity and geometry of a backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneDescriptor {
    pub backbone_id: String,
    /// Transformer layer count `L`; the activation stack has `L + 1` entries.
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub frame_rate_hz: f64,
    pub sample_rate_hz: u32,
    pub checkpoint_uri: String,
}

/// The per-layer hidden sequences of one utterance: index 0 is the
/// pre-transformer (post-convolution) representation, indices `1..=L` the
/// transformer layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    stack: Vec<Array2<f64>>,
    frame_rate_hz: f64,
}

impl LayerActivations {
    pub fn new(stack: Vec<Array2<f64>>, frame_rate_hz: f64) -> Result<Self, BackboneError> {
        let first = stack.first().ok_or(BackboneError::EmptyFrames)?;
        let shape = (first.nrows(), first.ncols());
        for layer in &stack {
            if (layer.nrows(), layer.ncols()) != shape {
                return Err(BackboneError::DimensionMismatch {
                    expected: shape.1,
                    got: layer.ncols(),
                });
            }
        }
        Ok(Self { stack, frame_rate_hz })
    }

    /// Number of stack entries, `L + 1`.
    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// Frames `T`.
    pub fn len(&self) -> usize {
        self.stack[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.stack[0].ncols()
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn layer(&self, k: usize) -> &Array2<f64> {
        &self.stack[k]
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.stack
    }
}

/// Hook applied between the convolutional front end and the transformer:
/// maps conv frames to (possibly longer) frames plus aligned labels.
pub type FrameHook<'a> =
    &'a mut dyn FnMut(&FrameSequence) -> Result<(FrameSequence, FrameLabelSequence), BackboneError>;

/// A frozen backbone. Parameters never change after construction; every
/// method is read-only and deterministic.
pub trait Backbone: Send + Sync {
    fn descriptor(&self) -> &BackboneDescriptor;

    /// Convolutional frame features for a waveform at the backbone's
    /// expected sample rate.
    fn extract_conv_features(&self, waveform: &Waveform) -> Result<FrameSequence, BackboneError>;

    /// Runs the frozen transformer stack, returning all `L + 1` layers.
    fn run_transformer(&self, frames: &FrameSequence) -> Result<LayerActivations, BackboneError>;

    /// Checksum over every frozen parameter; constant across the lifetime of
    /// the backbone no matter how much training happens around it.
    fn parameter_checksum(&self) -> u64;

    /// Runs the transformer over the hook's output frames. The returned
    /// labels align 1:1 with the activations' time axis.
    fn run_transformer_with_hook(
        &self,
        frames: &FrameSequence,
        hook: FrameHook<'_>,
    ) -> Result<(LayerActivations, FrameLabelSequence), BackboneError> {
        let (hooked, labels) = hook(frames)?;
        if labels.len() != hooked.len() {
            return Err(BackboneError::HookLengthMismatch {
                frames: hooked.len(),
                labels: labels.len(),
            });
        }
        let acts = self.run_transformer(&hooked)?;
        Ok((acts, labels))
    }

    /// Full forward pass from waveform with the augmentation hook between
    /// the convolution layers and the transformer layers.
    fn forward_with_hook(
        &self,
        waveform: &Waveform,
        hook: FrameHook<'_>,
    ) -> Result<(LayerActivations, FrameLabelSequence), BackboneError> {
        let frames = self.extract_conv_features(waveform)?;
        self.run_transformer_with_hook(&frames, hook)
    }
}

struct KnownBackbone {
    id: &'static str,
    num_layers: usize,
    hidden_dim: usize,
    uri: &'static str,
}

/// Published SSL checkpoints the registry resolves. All share the 16 kHz /
/// 50 Hz conv geometry.
const KNOWN_BACKBONES: [KnownBackbone; 6] = [
    KnownBackbone {
        id: "wavlm-large",
        num_layers: 24,
        hidden_dim: 1024,
        uri: "https://huggingface.co/microsoft/wavlm-large",
    },
    KnownBackbone {
        id: "wavlm-base",
        num_layers: 12,
        hidden_dim: 768,
        uri: "https://huggingface.co/microsoft/wavlm-base",
    },
    KnownBackbone {
        id: "wav2vec2-large",
        num_layers: 24,
        hidden_dim: 1024,
        uri: "https://huggingface.co/facebook/wav2vec2-large",
    },
    KnownBackbone {
        id: "wav2vec2-base",
        num_layers: 12,
        hidden_dim: 768,
        uri: "https://huggingface.co/facebook/wav2vec2-base",
    },
    KnownBackbone {
        id: "data2vec-large",
        num_layers: 24,
        hidden_dim: 1024,
        uri: "https://huggingface.co/facebook/data2vec-audio-large",
    },
    KnownBackbone {
        id: "data2vec-base",
        num_layers: 12,
        hidden_dim: 768,
        uri: "https://huggingface.co/facebook/data2vec-audio-base",
    },
];

fn parse_toy_locator(id: &str) -> Result<(u64, usize, usize), BackboneError> {
    let rest = id.strip_prefix("toy://").ok_or_else(|| BackboneError::BadToyLocator(id.into()))?;
    let parts: Vec<&str> = rest.split('/').collect();
    if parts.len() != 3 {
        return Err(BackboneError::BadToyLocator(id.into()));
    }
    let seed = parts[0].parse().map_err(|_| BackboneError::BadToyLocator(id.into()))?;
    let layers = parts[1].parse().map_err(|_| BackboneError::BadToyLocator(id.into()))?;
    let dim = parts[2].parse().map_err(|_| BackboneError::BadToyLocator(id.into()))?;
    if layers == 0 || dim == 0 {
        return Err(BackboneError::BadToyLocator(id.into()));
    }
    Ok((seed, layers, dim))
}

/// Resolves a backbone id to its descriptor without loading anything.
pub fn descriptor_for(backbone_id: &str) -> Result<BackboneDescriptor, BackboneError> {
    if backbone_id.starts_with("toy://") {
        let (seed, layers, dim) = parse_toy_locator(backbone_id)?;
        return Ok(toy::toy_descriptor(seed, layers, dim));
    }
    for k in &KNOWN_BACKBONES {
        if k.id == backbone_id {
            return Ok(BackboneDescriptor {
                backbone_id: k.id.to_owned(),
                num_layers: k.num_layers,
                hidden_dim: k.hidden_dim,
                frame_rate_hz: 50.0,
                sample_rate_hz: 16_000,
                checkpoint_uri: k.uri.to_owned(),
            });
        }
    }
    Err(BackboneError::UnknownBackbone(backbone_id.to_owned()))
}

/// Loads a backbone by identifier. `toy://seed/layers/dim` constructs an
/// in-memory frozen model; published checkpoint ids resolve to descriptors
/// but need the external full-scale runtime.
pub fn load_backbone(backbone_id: &str) -> Result<Box<dyn Backbone>, BackboneError> {
    if backbone_id.starts_with("toy://") {
        let (seed, layers, dim) = parse_toy_locator(backbone_id)?;
        return Ok(Box::new(ToyBackbone::new(seed, layers, dim)));
    }
    let desc = descriptor_for(backbone_id)?;
    Err(BackboneError::CheckpointUnavailable { id: desc.backbone_id, uri: desc.checkpoint_uri })
}

/// Constructs the deterministic desk-scale test double directly.
pub fn toy_backbone(seed: u64, num_layers: usize, hidden_dim: usize) -> ToyBackbone {
    ToyBackbone::new(seed, num_layers, hidden_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_resolves_known_ids() {
        let d = descriptor_for("wavlm-large").unwrap();
        assert_eq!(d.num_layers, 24);
        assert_eq!(d.hidden_dim, 1024);
        assert_eq!(d.frame_rate_hz, 50.0);
        assert!(descriptor_for("wavlm-tiny").is_err());
    }

    #[test]
    fn toy_locator_round_trip() {
        let d = descriptor_for("toy://7/4/16").unwrap();
        assert_eq!(d.num_layers, 4);
        assert_eq!(d.hidden_dim, 16);
        assert!(descriptor_for("toy://x/4/16").is_err());
        assert!(descriptor_for("toy://7/4").is_err());
    }

    #[test]
    fn published_checkpoints_need_external_runtime() {
        match load_backbone("wavlm-base") {
            Err(BackboneError::CheckpointUnavailable { id, .. }) => assert_eq!(id, "wavlm-base"),
            other => panic!("expected CheckpointUnavailable, got {other:?}"),
        }
    }

    #[test]
    fn activations_must_share_shape() {
        let a = Array2::<f64>::zeros((3, 4));
        let b = Array2::<f64>::zeros((3, 5));
        assert!(LayerActivations::new(vec![a.clone(), b], 50.0).is_err());
        assert!(LayerActivations::new(vec![a.clone(), a], 50.0).is_ok());
    }
}
