//! Word-level stuttered speech detection on top of frozen self-supervised
//! speech backbones.
//!
//! The pipeline has four stages, each with its own module:
//!
//! 1. [`augment`] fabricates synthetic stuttering (prolongations, sound/word
//!    repetitions) inside feature sequences, with exactly aligned frame labels.
//! 2. [`backbone`] wraps frozen speech SSL models and exposes the injection
//!    hook between their convolutional front end and transformer stack that
//!    the augmentation plugs into.
//! 3. [`train`] holds the prediction heads, the frame/CTC/weak-label losses,
//!    and the two-stage pretrain/finetune procedure.
//! 4. [`wordeval`] + [`metrics`] build word-level evaluation sets from
//!    clinical CHAT transcripts aligned to timestamped ASR output, and score
//!    them with threshold-swept F1 and average precision.
//!
//! Everything is deterministic: all randomness flows through [`rng::SeededRng`]
//! and no module touches ambient entropy.

pub mod audio;
pub mod augment;
pub mod backbone;
pub mod config;
pub mod interface;
pub mod metrics;
pub mod rng;
pub mod synthetic;
pub mod train;
pub mod types;
pub mod wordeval;
