//! Desk-scale synthetic detection task.
//!
//! Generates aligned fluent utterances for pretraining and utterance-labeled
//! sets for finetuning, where disfluent regions carry an injected feature
//! pattern that a detection head can actually find. Pretraining marks
//! inserted frames with one pattern; the finetune domain shifts to a rotated
//! pattern and plants the pretrain pattern inside negative utterances, so a
//! model that never finetunes misfires exactly the way a domain gap would
//! make it.

use ndarray::{Array1, Array2};

use crate::augment::{AlignedUnit, AlignedUnits, FrameSpan, PhoneSpan};
use crate::rng::SeededRng;
use crate::train::{FinetuneUtterance, PretrainUtterance};
use crate::types::{FrameLabelSequence, FrameSequence, Label};

pub const FRAME_RATE_HZ: f64 = 50.0;

/// Geometry of the synthetic task.
#[derive(Debug, Clone, Copy)]
pub struct TaskSpec {
    pub dim: usize,
    pub words_per_utterance: usize,
    pub frames_per_word: usize,
    pub phoneme_vocab_size: usize,
    /// Magnitude of the injected patterns.
    pub marker_scale: f64,
    /// Cosine between the pretrain and finetune patterns.
    pub marker_overlap: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            dim: 8,
            words_per_utterance: 8,
            frames_per_word: 10,
            phoneme_vocab_size: 6,
            marker_scale: 3.0,
            marker_overlap: 0.5,
        }
    }
}

/// The two injected patterns: `pretrain` marks synthetic insertions during
/// stage one, `finetune` marks true positives in stage two.
#[derive(Debug, Clone)]
pub struct Markers {
    pub pretrain: Array1<f64>,
    pub finetune: Array1<f64>,
}

impl Markers {
    pub fn generate(spec: &TaskSpec, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed).derive_named("markers");
        let unit = |rng: &mut SeededRng| {
            let v = Array1::from_shape_fn(spec.dim, |_| rng.normal());
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v / norm
        };
        let u = unit(&mut rng);
        let w_raw = unit(&mut rng);
        // Gram-Schmidt, then mix to the requested overlap.
        let proj = u.iter().zip(w_raw.iter()).map(|(a, b)| a * b).sum::<f64>();
        let mut w = &w_raw - &(&u * proj);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        w /= norm;
        let cos = spec.marker_overlap;
        let sin = (1.0 - cos * cos).sqrt();
        let v = &u * cos + &w * sin;
        Markers { pretrain: &u * spec.marker_scale, finetune: &v * spec.marker_scale }
    }

    /// A post-augmentation stamp that adds the pretrain pattern to every
    /// positive-labeled frame.
    pub fn pretrain_stamp(&self) -> impl Fn(&mut FrameSequence, &FrameLabelSequence) + Sync + '_ {
        let marker = self.pretrain.clone();
        move |frames: &mut FrameSequence, labels: &FrameLabelSequence| {
            let mat = frames.frames_mut();
            for (i, label) in labels.iter().enumerate() {
                if label.is_positive() {
                    for (j, m) in marker.iter().enumerate() {
                        mat[[i, j]] += m;
                    }
                }
            }
        }
    }
}

fn smooth_frames(rng: &mut SeededRng, t: usize, dim: usize) -> Array2<f64> {
    let mut mat = Array2::<f64>::zeros((t, dim));
    for j in 0..dim {
        let mut x = rng.normal() * 0.5;
        for i in 0..t {
            x = 0.85 * x + 0.4 * rng.normal();
            mat[[i, j]] = x;
        }
    }
    mat
}

fn word_units(spec: &TaskSpec, rng: &mut SeededRng) -> AlignedUnits {
    let fpw = spec.frames_per_word;
    let words = (0..spec.words_per_utterance)
        .map(|w| {
            let start = w * fpw;
            let split = start + fpw / 2;
            let p1 = 1 + rng.below(spec.phoneme_vocab_size - 1);
            let p2 = 1 + rng.below(spec.phoneme_vocab_size - 1);
            AlignedUnit::word(
                FrameSpan::new(start, start + fpw),
                vec![
                    PhoneSpan { span: FrameSpan::new(start, split), phoneme: p1 },
                    PhoneSpan { span: FrameSpan::new(split, start + fpw), phoneme: p2 },
                ],
            )
        })
        .collect();
    AlignedUnits::new(words, spec.phoneme_vocab_size).expect("generated units are well-formed")
}

/// Aligned fluent utterances for the pretraining stage.
pub fn pretrain_utterances(spec: &TaskSpec, n: usize, seed: u64) -> Vec<PretrainUtterance> {
    let base = SeededRng::new(seed).derive_named("synthetic-pretrain");
    (0..n)
        .map(|i| {
            let id = format!("pre-{i:04}");
            let mut rng = base.derive_named(&id);
            let t = spec.words_per_utterance * spec.frames_per_word;
            let frames =
                FrameSequence::new(smooth_frames(&mut rng, t, spec.dim), FRAME_RATE_HZ).unwrap();
            let units = word_units(spec, &mut rng);
            PretrainUtterance { id, frames, units }
        })
        .collect()
}

/// One word of a finetune utterance with its ground-truth word label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticWord {
    pub span: FrameSpan,
    pub label: Label,
}

/// A finetune/evaluation utterance with word-level ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticUtterance {
    pub utterance: FinetuneUtterance,
    pub words: Vec<SyntheticWord>,
}

/// Utterance-labeled examples for the finetune stage. Positive utterances
/// carry the finetune pattern on one or two words; negative utterances carry
/// the *pretrain* pattern instead (never labeled positive), so the stage-two
/// data genuinely shifts away from the pretraining distribution.
pub fn finetune_utterances(
    spec: &TaskSpec,
    markers: &Markers,
    n: usize,
    seed: u64,
) -> Vec<SyntheticUtterance> {
    let base = SeededRng::new(seed).derive_named("synthetic-finetune");
    (0..n)
        .map(|i| {
            let id = format!("fin-{i:04}");
            let mut rng = base.derive_named(&id);
            let t = spec.words_per_utterance * spec.frames_per_word;
            let mut mat = smooth_frames(&mut rng, t, spec.dim);
            let positive = i % 2 == 0;

            let num_marked = 1 + rng.below(2);
            let marked = rng.sample_indices(spec.words_per_utterance, num_marked);
            let marker = if positive { &markers.finetune } else { &markers.pretrain };
            for &w in &marked {
                let start = w * spec.frames_per_word;
                for t_idx in start..start + spec.frames_per_word {
                    for (j, m) in marker.iter().enumerate() {
                        mat[[t_idx, j]] += m;
                    }
                }
            }

            let words = (0..spec.words_per_utterance)
                .map(|w| SyntheticWord {
                    span: FrameSpan::new(
                        w * spec.frames_per_word,
                        (w + 1) * spec.frames_per_word,
                    ),
                    label: if positive && marked.contains(&w) {
                        Label::Positive
                    } else {
                        Label::Negative
                    },
                })
                .collect();
            SyntheticUtterance {
                utterance: FinetuneUtterance {
                    id,
                    frames: FrameSequence::new(mat, FRAME_RATE_HZ).unwrap(),
                    label: if positive { Label::Positive } else { Label::Negative },
                },
                words,
            }
        })
        .collect()
}
