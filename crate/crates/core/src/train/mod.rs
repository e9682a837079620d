//! Two-stage training: pretrain on synthetically disfluent fluent speech
//! with frame supervision plus the CTC auxiliary loss, then finetune on
//! utterance-labeled data through the max-over-time weak objective.
//!
//! The backbone stays frozen throughout; only the interface and heads ever
//! reach the optimizer.

mod adam;
mod checkpoint;
mod heads;
mod loss;
mod model;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, EvalPoint, Stage, CHECKPOINT_VERSION};
pub use heads::{DetectionHead, PhonemeHead};
pub use loss::{ctc_loss_and_grad, ctc_phoneme_loss, finetune_loss, frame_disfluency_loss, pretrain_loss};
pub use model::{Model, ModelGrads};

use thiserror::Error;

use crate::augment::{apply_plan, sample_plan, AugmentError};
use crate::backbone::{Backbone, BackboneError};
use crate::config::ExperimentConfig;
use crate::interface::InterfaceError;
use crate::metrics::{sweep_thresholds, MetricsError, ScoredSet};
use crate::rng::SeededRng;
use crate::types::{FrameLabelSequence, FrameSequence, Label, TypeError};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("sequence lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("log probabilities cover {log_probs} symbols but the target vocabulary has {target}")]
    VocabMismatch { log_probs: usize, target: usize },
    #[error("target of length {target_len} needs at least {min_frames} frames, got {frames}")]
    InfeasibleTarget { target_len: usize, min_frames: usize, frames: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("data ratio {0} outside [0, 1]")]
    BadRatio(f64),
    #[error("checkpoint is incompatible: {reason}")]
    CheckpointMismatch { reason: String },
    #[error("cannot decode checkpoint: {0}")]
    CheckpointFormat(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Interface(#[from] InterfaceError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One aligned fluent utterance for the pretraining stage: conv-level
/// frames plus its forced alignment (which carries the phoneme targets).
#[derive(Debug, Clone)]
pub struct PretrainUtterance {
    pub id: String,
    pub frames: FrameSequence,
    pub units: crate::augment::AlignedUnits,
}

/// One utterance-labeled example for the finetuning stage.
#[derive(Debug, Clone)]
pub struct FinetuneUtterance {
    pub id: String,
    pub frames: FrameSequence,
    pub label: Label,
}

/// Optional transform applied to the augmented frames (with their aligned
/// labels) before the transformer. Synthetic tasks use it to stamp a
/// detectable pattern onto inserted frames.
pub type PostAugment<'a> = &'a (dyn Fn(&mut FrameSequence, &FrameLabelSequence) + Sync);

/// Mutable training state: the trainable parameters, optimizer, and the
/// recorded histories.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: Adam,
    pub step: usize,
    /// Validation metric per evaluation (loss for pretrain, F1 for finetune).
    pub validation_history: Vec<EvalPoint>,
    /// Per-step training loss.
    pub train_curve: Vec<EvalPoint>,
}

/// The outcome of a training stage: final state plus the selected best
/// checkpoint.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub state: TrainState,
    pub best: Checkpoint,
}

fn shuffled_order(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order
}

fn augment_and_forward(
    backbone: &dyn Backbone,
    utt: &PretrainUtterance,
    rng: &mut SeededRng,
    cfg: &ExperimentConfig,
    post_augment: Option<PostAugment<'_>>,
) -> Result<(crate::backbone::LayerActivations, FrameLabelSequence, crate::types::PhonemeSequence), TrainError>
{
    let plan = sample_plan(&utt.units, rng, &cfg.augment);
    let mut targets = None;
    let (acts, labels) = backbone.run_transformer_with_hook(&utt.frames, &mut |frames| {
        let base = FrameLabelSequence::all_negative(frames.len());
        let example = apply_plan(frames, &base, &utt.units, &plan)
            .map_err(|e| BackboneError::Hook(e.to_string()))?;
        let mut out = example.frames;
        if let Some(stamp) = post_augment {
            stamp(&mut out, &example.labels);
        }
        targets = Some(example.phoneme_targets);
        Ok((out, example.labels))
    })?;
    Ok((acts, labels, targets.expect("hook ran")))
}

fn pretrain_validation_loss(
    backbone: &dyn Backbone,
    model: &Model,
    val: &[PretrainUtterance],
    cfg: &ExperimentConfig,
    base_rng: &SeededRng,
    post_augment: Option<PostAugment<'_>>,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for utt in val {
        // Fixed per-utterance stream: the same validation augmentation at
        // every evaluation, so the history is comparable across steps.
        let mut rng = base_rng.derive_named("validation").derive_named(&utt.id);
        let (acts, labels, targets) =
            augment_and_forward(backbone, utt, &mut rng, cfg, post_augment)?;
        let (loss, _) = model.pretrain_loss_and_grads(&acts, &labels, &targets, cfg.w_ctc)?;
        total += loss;
    }
    Ok(total / val.len() as f64)
}

/// Pretrains on synthetically augmented fluent utterances: per step, sample
/// a plan, apply it through the backbone hook, aggregate through the
/// interface, and take an Adam step on `L_dis + w_ctc * L_ctc`. Returns the
/// checkpoint with the lowest validation loss.
pub fn run_pretraining(
    cfg: &ExperimentConfig,
    backbone: &dyn Backbone,
    train: &[PretrainUtterance],
    val: &[PretrainUtterance],
    post_augment: Option<PostAugment<'_>>,
) -> Result<TrainRun, TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let desc = backbone.descriptor();
    for utt in train.iter().chain(val) {
        if utt.frames.dim() != desc.hidden_dim {
            return Err(BackboneError::DimensionMismatch {
                expected: desc.hidden_dim,
                got: utt.frames.dim(),
            }
            .into());
        }
        if utt.units.phoneme_vocab_size() != cfg.phoneme_vocab_size {
            return Err(TrainError::VocabMismatch {
                log_probs: cfg.phoneme_vocab_size,
                target: utt.units.phoneme_vocab_size(),
            });
        }
    }

    let base_rng = SeededRng::new(cfg.seed);
    let mut init_rng = base_rng.derive_named("model-init");
    let mut model = Model::build(
        cfg.interface_kind,
        desc.num_layers + 1,
        desc.hidden_dim,
        Some(cfg.phoneme_vocab_size),
        &mut init_rng,
    )?;
    let mut optimizer = Adam::new(cfg.learning_rate);
    let mut order_rng = base_rng.derive_named("epoch-order");

    let validate_every = if cfg.validate_every == 0 { train.len() } else { cfg.validate_every };
    let mut validation_history = Vec::new();
    let mut train_curve = Vec::new();

    let initial = pretrain_validation_loss(backbone, &model, val, cfg, &base_rng, post_augment)?;
    validation_history.push(EvalPoint { step: 0, value: initial });
    let mut best = (0usize, initial, model.clone());

    let mut order = shuffled_order(train.len(), &mut order_rng);
    for step in 0..cfg.pretrain_steps {
        let pos = step % train.len();
        if pos == 0 && step > 0 {
            order = shuffled_order(train.len(), &mut order_rng);
        }
        let utt = &train[order[pos]];
        let mut rng = base_rng.derive_named(&utt.id).derive(step as u64);
        let (acts, labels, targets) =
            augment_and_forward(backbone, utt, &mut rng, cfg, post_augment)?;
        let (loss, grads) = model.pretrain_loss_and_grads(&acts, &labels, &targets, cfg.w_ctc)?;
        train_curve.push(EvalPoint { step: step + 1, value: loss });
        let mut params = model.param_slices_mut(true);
        optimizer.step(&mut params, &grads.slices());

        let done = step + 1;
        if done % validate_every == 0 || done == cfg.pretrain_steps {
            let value =
                pretrain_validation_loss(backbone, &model, val, cfg, &base_rng, post_augment)?;
            if validation_history.last().map(|p| p.step) != Some(done) {
                validation_history.push(EvalPoint { step: done, value });
                if value < best.1 {
                    best = (done, value, model.clone());
                }
            }
        }
    }

    let best_ckpt =
        Checkpoint::new(Stage::Pretrain, cfg, best.2, validation_history.clone(), best.0);
    Ok(TrainRun {
        state: TrainState {
            model,
            optimizer,
            step: cfg.pretrain_steps,
            validation_history,
            train_curve,
        },
        best: best_ckpt,
    })
}

/// Swept validation F1 of a model over a labeled utterance set.
pub fn validation_f1(
    backbone: &dyn Backbone,
    model: &Model,
    val: &[FinetuneUtterance],
    cfg: &ExperimentConfig,
) -> Result<f64, TrainError> {
    let mut scores = Vec::with_capacity(val.len());
    let mut labels = Vec::with_capacity(val.len());
    for utt in val {
        let acts = backbone.run_transformer(&utt.frames)?;
        scores.push(model.utterance_score(&acts)?);
        labels.push(utt.label);
    }
    let set = ScoredSet::from_parallel(&scores, &labels)?;
    Ok(sweep_thresholds(&set, &cfg.threshold_grid)?.best_f1)
}

/// Finetunes a pretrained checkpoint on utterance labels with the weak
/// max-over-time loss; no augmentation, CTC head unused. Returns the
/// checkpoint with the highest swept validation F1.
pub fn run_finetuning(
    cfg: &ExperimentConfig,
    backbone: &dyn Backbone,
    pretrained: &Checkpoint,
    train: &[FinetuneUtterance],
    val: &[FinetuneUtterance],
) -> Result<TrainRun, TrainError> {
    pretrained.check_compatible(cfg)?;
    if val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut model = pretrained.model.clone();
    let mut optimizer = Adam::new(cfg.learning_rate);
    let base_rng = SeededRng::new(cfg.seed);
    let mut order_rng = base_rng.derive_named("finetune-order");

    let mut validation_history = Vec::new();
    let mut train_curve = Vec::new();
    let initial = validation_f1(backbone, &model, val, cfg)?;
    validation_history.push(EvalPoint { step: 0, value: initial });
    let mut best = (0usize, initial, model.clone());

    // An empty train set (data ratio 0) degenerates to the identity: the
    // pretrain-initialized parameters are returned unchanged.
    let steps = if train.is_empty() { 0 } else { cfg.finetune_steps };
    let validate_every = if cfg.validate_every == 0 {
        train.len().max(1)
    } else {
        cfg.validate_every
    };

    let mut order = if train.is_empty() {
        Vec::new()
    } else {
        shuffled_order(train.len(), &mut order_rng)
    };
    for step in 0..steps {
        let pos = step % train.len();
        if pos == 0 && step > 0 {
            order = shuffled_order(train.len(), &mut order_rng);
        }
        let utt = &train[order[pos]];
        let acts = backbone.run_transformer(&utt.frames)?;
        let (loss, grads) = model.finetune_loss_and_grads(&acts, utt.label)?;
        train_curve.push(EvalPoint { step: step + 1, value: loss });
        let mut params = model.param_slices_mut(false);
        optimizer.step(&mut params, &grads.slices());

        let done = step + 1;
        if done % validate_every == 0 || done == steps {
            let value = validation_f1(backbone, &model, val, cfg)?;
            if validation_history.last().map(|p| p.step) != Some(done) {
                validation_history.push(EvalPoint { step: done, value });
                if value > best.1 {
                    best = (done, value, model.clone());
                }
            }
        }
    }

    let best_ckpt =
        Checkpoint::new(Stage::Finetune, cfg, best.2, validation_history.clone(), best.0);
    Ok(TrainRun {
        state: TrainState { model, optimizer, step: steps, validation_history, train_curve },
        best: best_ckpt,
    })
}

/// Balanced subsampling: per-class counts scale by `ratio` (rounded to
/// nearest), keeping the class proportion within rounding. Deterministic
/// under the rng stream; the surviving items keep their original order.
pub fn subsample_balanced(
    dataset: &[FinetuneUtterance],
    ratio: f64,
    rng: &mut SeededRng,
) -> Result<Vec<FinetuneUtterance>, TrainError> {
    if !(0.0..=1.0).contains(&ratio) || ratio.is_nan() {
        return Err(TrainError::BadRatio(ratio));
    }
    let mut keep = vec![false; dataset.len()];
    for class in [Label::Positive, Label::Negative] {
        let members: Vec<usize> = dataset
            .iter()
            .enumerate()
            .filter(|(_, u)| u.label == class)
            .map(|(i, _)| i)
            .collect();
        let target = (members.len() as f64 * ratio).round() as usize;
        for idx in rng.sample_indices(members.len(), target.min(members.len())) {
            keep[members[idx]] = true;
        }
    }
    Ok(dataset
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(u, _)| u.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{AlignedUnit, AlignedUnits, FrameSpan, PhoneSpan};
    use crate::backbone::toy_backbone;
    use crate::config::InterfaceKind;
    use ndarray::Array2;

    fn synth_pretrain(n: usize, dim: usize, seed: u64) -> Vec<PretrainUtterance> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|i| {
                let t = 40;
                let frames = Array2::from_shape_fn((t, dim), |_| rng.normal() * 0.5);
                let words: Vec<AlignedUnit> = (0..4)
                    .map(|w| {
                        let s = w * 10;
                        AlignedUnit::word(
                            FrameSpan::new(s, s + 10),
                            vec![
                                PhoneSpan { span: FrameSpan::new(s, s + 5), phoneme: 1 + (w % 3) },
                                PhoneSpan { span: FrameSpan::new(s + 5, s + 10), phoneme: 1 + ((w + 1) % 3) },
                            ],
                        )
                    })
                    .collect();
                PretrainUtterance {
                    id: format!("utt-{i:03}"),
                    frames: FrameSequence::new(frames, 50.0).unwrap(),
                    units: AlignedUnits::new(words, 4).unwrap(),
                }
            })
            .collect()
    }

    fn tiny_cfg() -> ExperimentConfig {
        ExperimentConfig {
            backbone_id: "toy://5/2/8".into(),
            pretrain_steps: 40,
            finetune_steps: 10,
            learning_rate: 5e-3,
            phoneme_vocab_size: 4,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn pretraining_improves_validation_loss_and_freezes_backbone() {
        let cfg = tiny_cfg();
        let backbone = toy_backbone(5, 2, 8);
        let data = synth_pretrain(12, 8, 21);
        let (train, val) = data.split_at(9);
        let checksum_before = backbone.parameter_checksum();
        let run = run_pretraining(&cfg, &backbone, train, val, None).unwrap();
        assert_eq!(backbone.parameter_checksum(), checksum_before);
        let initial = run.state.validation_history.first().unwrap().value;
        let best = run
            .state
            .validation_history
            .iter()
            .map(|p| p.value)
            .fold(f64::INFINITY, f64::min);
        assert!(best < initial, "best {best} vs initial {initial}");
        assert_eq!(run.best.selected_step, {
            // selection is the argmin of the recorded history
            run.state
                .validation_history
                .iter()
                .fold((0, f64::INFINITY), |acc, p| if p.value < acc.1 { (p.step, p.value) } else { acc })
                .0
        });
    }

    #[test]
    fn pretraining_is_deterministic() {
        let cfg = tiny_cfg();
        let backbone = toy_backbone(5, 2, 8);
        let data = synth_pretrain(8, 8, 22);
        let (train, val) = data.split_at(6);
        let a = run_pretraining(&cfg, &backbone, train, val, None).unwrap();
        let b = run_pretraining(&cfg, &backbone, train, val, None).unwrap();
        assert_eq!(a.state.train_curve, b.state.train_curve);
        assert_eq!(a.state.validation_history, b.state.validation_history);
        assert_eq!(a.best.model, b.best.model);
    }

    #[test]
    fn finetune_zero_steps_is_identity() {
        let cfg = ExperimentConfig { finetune_steps: 0, ..tiny_cfg() };
        let backbone = toy_backbone(5, 2, 8);
        let data = synth_pretrain(8, 8, 23);
        let (ptrain, pval) = data.split_at(6);
        let pre = run_pretraining(&cfg, &backbone, ptrain, pval, None).unwrap();

        let mut rng = SeededRng::new(1);
        let ft: Vec<FinetuneUtterance> = (0..6)
            .map(|i| FinetuneUtterance {
                id: format!("ft-{i}"),
                frames: FrameSequence::new(
                    Array2::from_shape_fn((30, 8), |_| rng.normal() * 0.5),
                    50.0,
                )
                .unwrap(),
                label: if i % 2 == 0 { Label::Positive } else { Label::Negative },
            })
            .collect();
        let run = run_finetuning(&cfg, &backbone, &pre.best, &ft[..3], &ft[3..]).unwrap();
        assert_eq!(run.best.model, pre.best.model);
        assert_eq!(run.state.step, 0);
    }

    #[test]
    fn finetune_selects_argmax_f1() {
        let cfg = ExperimentConfig { finetune_steps: 12, validate_every: 3, ..tiny_cfg() };
        let backbone = toy_backbone(5, 2, 8);
        let data = synth_pretrain(8, 8, 24);
        let (ptrain, pval) = data.split_at(6);
        let pre = run_pretraining(&cfg, &backbone, ptrain, pval, None).unwrap();
        let mut rng = SeededRng::new(2);
        let ft: Vec<FinetuneUtterance> = (0..8)
            .map(|i| FinetuneUtterance {
                id: format!("ft-{i}"),
                frames: FrameSequence::new(
                    Array2::from_shape_fn((30, 8), |_| rng.normal() * 0.5),
                    50.0,
                )
                .unwrap(),
                label: if i % 2 == 0 { Label::Positive } else { Label::Negative },
            })
            .collect();
        let run = run_finetuning(&cfg, &backbone, &pre.best, &ft[..4], &ft[4..]).unwrap();
        let max = run
            .state
            .validation_history
            .iter()
            .map(|p| p.value)
            .fold(f64::NEG_INFINITY, f64::max);
        let selected = run
            .state
            .validation_history
            .iter()
            .find(|p| p.step == run.best.selected_step)
            .unwrap();
        assert_eq!(selected.value, max);
    }

    #[test]
    fn incompatible_checkpoint_is_rejected() {
        let cfg = tiny_cfg();
        let backbone = toy_backbone(5, 2, 8);
        let data = synth_pretrain(8, 8, 25);
        let (ptrain, pval) = data.split_at(6);
        let pre = run_pretraining(&cfg, &backbone, ptrain, pval, None).unwrap();
        let wrong = ExperimentConfig { interface_kind: InterfaceKind::WeightedSum, ..cfg };
        let err = run_finetuning(&wrong, &backbone, &pre.best, &[], &[]).unwrap_err();
        assert!(matches!(err, TrainError::CheckpointMismatch { .. }));
    }

    fn label_set(pos: usize, neg: usize) -> Vec<FinetuneUtterance> {
        let frames =
            FrameSequence::new(Array2::zeros((5, 4)), 50.0).unwrap();
        (0..pos + neg)
            .map(|i| FinetuneUtterance {
                id: format!("u{i}"),
                frames: frames.clone(),
                label: if i < pos { Label::Positive } else { Label::Negative },
            })
            .collect()
    }

    #[test]
    fn subsample_scales_classes() {
        let data = label_set(100, 300);
        let mut rng = SeededRng::new(5);
        let sub = subsample_balanced(&data, 0.25, &mut rng).unwrap();
        let pos = sub.iter().filter(|u| u.label == Label::Positive).count();
        let neg = sub.len() - pos;
        assert_eq!((pos, neg), (25, 75));
    }

    #[test]
    fn subsample_boundary_ratios() {
        let data = label_set(10, 20);
        let mut rng = SeededRng::new(6);
        assert_eq!(subsample_balanced(&data, 1.0, &mut rng).unwrap().len(), 30);
        assert!(subsample_balanced(&data, 0.0, &mut rng).unwrap().is_empty());
        assert!(matches!(
            subsample_balanced(&data, 1.3, &mut rng),
            Err(TrainError::BadRatio(_))
        ));
    }

    #[test]
    fn subsample_is_deterministic_under_seed() {
        let data = label_set(40, 60);
        let pick = |seed: u64| {
            let mut rng = SeededRng::new(seed);
            subsample_balanced(&data, 0.5, &mut rng)
                .unwrap()
                .iter()
                .map(|u| u.id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(pick(7), pick(7));
        assert_ne!(pick(7), pick(8));
    }
}
