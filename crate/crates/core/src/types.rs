//! Shared domain types used by every pipeline stage.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for checking that a prediction row is a valid distribution.
pub const PROB_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("frame rate must be positive, got {0}")]
    NonPositiveFrameRate(f64),
    #[error("feature dimension must be at least 1")]
    EmptyFeatureDim,
    #[error("label sequence length {labels} does not match frame count {frames}")]
    LabelLengthMismatch { labels: usize, frames: usize },
    #[error("prediction row {index} is not a probability pair: ({p}, {n})")]
    InvalidProbabilityPair { index: usize, p: f64, n: f64 },
    #[error("phoneme vocabulary must have at least 2 symbols (blank + 1), got {0}")]
    VocabTooSmall(usize),
    #[error("phoneme index {index} out of range for vocab size {vocab_size}")]
    PhonemeOutOfRange { index: usize, vocab_size: usize },
    #[error("phoneme targets must not contain the blank index {0}")]
    BlankInTarget(usize),
}

/// A time-major matrix of feature vectors: `T` frames by `D` dimensions, at
/// the backbone frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Array2<f64>,
    frame_rate_hz: f64,
}

impl FrameSequence {
    pub fn new(frames: Array2<f64>, frame_rate_hz: f64) -> Result<Self, TypeError> {
        if !(frame_rate_hz > 0.0) {
            return Err(TypeError::NonPositiveFrameRate(frame_rate_hz));
        }
        if frames.ncols() == 0 {
            return Err(TypeError::EmptyFeatureDim);
        }
        Ok(Self { frames, frame_rate_hz })
    }

    /// Number of frames `T`.
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature dimension `D`.
    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut Array2<f64> {
        &mut self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }
}

/// Binary stutter label, used both per frame and per utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// One-hot pair `(l_p, l_n)`, in the order the loss formulas use.
    pub fn one_hot(self) -> (f64, f64) {
        match self {
            Label::Positive => (1.0, 0.0),
            Label::Negative => (0.0, 1.0),
        }
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive)
    }
}

/// Per-frame stutter targets, paired 1:1 with a [`FrameSequence`].
///
/// Each entry is one-hot by construction: a frame is either positive or
/// negative, never both and never neither.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabelSequence {
    labels: Vec<Label>,
}

impl FrameLabelSequence {
    pub fn new(labels: Vec<Label>) -> Self {
        Self { labels }
    }

    pub fn all_negative(len: usize) -> Self {
        Self { labels: vec![Label::Negative; len] }
    }

    /// Validates raw one-hot pairs and converts them to labels.
    pub fn from_one_hot_pairs(pairs: &[(f64, f64)]) -> Result<Self, TypeError> {
        let mut labels = Vec::with_capacity(pairs.len());
        for (i, &(p, n)) in pairs.iter().enumerate() {
            let label = match (p, n) {
                (1.0, 0.0) => Label::Positive,
                (0.0, 1.0) => Label::Negative,
                _ => return Err(TypeError::InvalidProbabilityPair { index: i, p, n }),
            };
            labels.push(label);
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = Label> + '_ {
        self.labels.iter().copied()
    }

    /// Errors unless the label sequence is exactly as long as `frames`.
    pub fn check_paired(&self, frames: &FrameSequence) -> Result<(), TypeError> {
        if self.len() != frames.len() {
            return Err(TypeError::LabelLengthMismatch { labels: self.len(), frames: frames.len() });
        }
        Ok(())
    }
}

/// Per-frame positive/negative probabilities `(o_p, o_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePredictionSequence {
    probs: Vec<[f64; 2]>,
}

impl FramePredictionSequence {
    /// Validates that every row is a probability pair summing to 1.
    pub fn new(probs: Vec<[f64; 2]>) -> Result<Self, TypeError> {
        for (i, row) in probs.iter().enumerate() {
            let [p, n] = *row;
            let in_range = (0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&n);
            if !in_range || (p + n - 1.0).abs() > PROB_SUM_TOL {
                return Err(TypeError::InvalidProbabilityPair { index: i, p, n });
            }
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.probs
    }

    /// Positive-class probability of frame `i`.
    pub fn positive(&self, i: usize) -> f64 {
        self.probs[i][0]
    }

    /// Index of the frame with the largest positive probability, ties broken
    /// toward the lowest index. `None` on an empty sequence.
    pub fn argmax_positive(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.probs.iter().enumerate() {
            match best {
                Some((_, b)) if row[0] <= b => {}
                _ => best = Some((i, row[0])),
            }
        }
        best.map(|(i, _)| i)
    }
}

/// A phoneme target sequence over a vocabulary that reserves index
/// [`PhonemeSequence::BLANK`] for the CTC blank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSequence {
    phonemes: Vec<usize>,
    vocab_size: usize,
}

impl PhonemeSequence {
    /// Index reserved for the CTC blank symbol; never present in targets.
    pub const BLANK: usize = 0;

    pub fn new(phonemes: Vec<usize>, vocab_size: usize) -> Result<Self, TypeError> {
        if vocab_size < 2 {
            return Err(TypeError::VocabTooSmall(vocab_size));
        }
        for &p in &phonemes {
            if p >= vocab_size {
                return Err(TypeError::PhonemeOutOfRange { index: p, vocab_size });
            }
            if p == Self::BLANK {
                return Err(TypeError::BlankInTarget(p));
            }
        }
        Ok(Self { phonemes, vocab_size })
    }

    pub fn empty(vocab_size: usize) -> Result<Self, TypeError> {
        Self::new(Vec::new(), vocab_size)
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn symbols(&self) -> &[usize] {
        &self.phonemes
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}
