//! Synthetic stuttering inside feature sequences.
//!
//! Edits operate on conv-output frames rather than the waveform, emitting
//! exactly aligned frame labels: inserted frames are positive, original
//! frames keep their prior labels. Deleting the positive frames of any
//! augmented example reconstructs the original sequence bitwise.

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::AugmentPolicy;
use crate::rng::SeededRng;
use crate::types::{FrameLabelSequence, FrameSequence, Label, PhonemeSequence, TypeError};

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("frame span [{start}, {end}) is invalid for a {frames}-frame sequence")]
    SpanOutOfRange { start: usize, end: usize, frames: usize },
    #[error("cannot repeat an empty span")]
    EmptySpan,
    #[error("repeat count must be at least 1")]
    ZeroRepeat,
    #[error("edit references word {index} but only {words} words are aligned")]
    BadWordIndex { index: usize, words: usize },
    #[error("sound repetition needs a word with at least one aligned phone")]
    NoLeadingPhone,
    #[error("alignment line {line}: {reason}")]
    AlignmentParse { line: usize, reason: String },
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Half-open frame span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpan {
    pub start: usize,
    pub end: usize,
}

impl FrameSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    fn shifted(self, offset: usize) -> Self {
        Self { start: self.start + offset, end: self.end + offset }
    }

    fn check(self, frames: usize) -> Result<Self, AugmentError> {
        if self.is_empty() {
            return Err(AugmentError::EmptySpan);
        }
        if self.end > frames {
            return Err(AugmentError::SpanOutOfRange { start: self.start, end: self.end, frames });
        }
        Ok(self)
    }
}

/// A phone sub-span inside an aligned word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSpan {
    pub span: FrameSpan,
    pub phoneme: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitKind {
    Word,
    Phone,
}

/// A forced-aligner unit: a word or phone span with the phoneme indices it
/// covers. Word units carry their phone sub-spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedUnit {
    pub kind: UnitKind,
    pub span: FrameSpan,
    pub phones: Vec<PhoneSpan>,
}

impl AlignedUnit {
    pub fn word(span: FrameSpan, phones: Vec<PhoneSpan>) -> Self {
        Self { kind: UnitKind::Word, span, phones }
    }

    pub fn phone(span: FrameSpan, phoneme: usize) -> Self {
        Self { kind: UnitKind::Phone, span, phones: vec![PhoneSpan { span, phoneme }] }
    }

    /// Phoneme indices covered, in time order.
    pub fn phonemes(&self) -> Vec<usize> {
        self.phones.iter().map(|p| p.phoneme).collect()
    }

    /// The span a prolongation tiles: the final phone span when phones are
    /// aligned, otherwise the unit's final frame.
    pub fn prolongation_tail(&self) -> FrameSpan {
        match self.phones.last() {
            Some(p) => p.span,
            None => FrameSpan::new(self.span.end.saturating_sub(1), self.span.end),
        }
    }

    /// The span a sound repetition copies: the leading phone span.
    pub fn leading_phone(&self) -> Option<FrameSpan> {
        self.phones.first().map(|p| p.span)
    }
}

/// The aligned words of one utterance, sorted and non-overlapping, plus the
/// phoneme vocabulary their indices live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedUnits {
    words: Vec<AlignedUnit>,
    phoneme_vocab_size: usize,
}

impl AlignedUnits {
    pub fn new(words: Vec<AlignedUnit>, phoneme_vocab_size: usize) -> Result<Self, AugmentError> {
        let mut prev_end = 0usize;
        for w in &words {
            if w.span.is_empty() {
                return Err(AugmentError::EmptySpan);
            }
            if w.span.start < prev_end {
                return Err(AugmentError::SpanOutOfRange {
                    start: w.span.start,
                    end: w.span.end,
                    frames: prev_end,
                });
            }
            prev_end = w.span.end;
            let mut phone_end = w.span.start;
            for p in &w.phones {
                if p.span.is_empty() || p.span.start < phone_end || p.span.end > w.span.end {
                    return Err(AugmentError::SpanOutOfRange {
                        start: p.span.start,
                        end: p.span.end,
                        frames: w.span.end,
                    });
                }
                phone_end = p.span.end;
            }
        }
        Ok(Self { words, phoneme_vocab_size })
    }

    pub fn words(&self) -> &[AlignedUnit] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn phoneme_vocab_size(&self) -> usize {
        self.phoneme_vocab_size
    }

    /// The canonical phoneme targets of the utterance, independent of any
    /// augmentation applied to its frames.
    pub fn phoneme_targets(&self) -> Result<PhonemeSequence, AugmentError> {
        let symbols: Vec<usize> = self.words.iter().flat_map(|w| w.phonemes()).collect();
        Ok(PhonemeSequence::new(symbols, self.phoneme_vocab_size)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditKind {
    Prolongation,
    SoundRepetition,
    WordRepetition,
}

impl EditKind {
    pub const ALL: [EditKind; 3] =
        [EditKind::Prolongation, EditKind::SoundRepetition, EditKind::WordRepetition];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedEdit {
    pub kind: EditKind,
    pub word_index: usize,
    pub repeat_count: usize,
}

/// An ordered list of edits, applied left to right with cumulative index
/// remapping.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub edits: Vec<PlannedEdit>,
}

impl AugmentationPlan {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }
}

/// An augmented utterance: frames and labels grown in lockstep, the original
/// phoneme targets, and the inserted spans in output coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedExample {
    pub frames: FrameSequence,
    pub labels: FrameLabelSequence,
    pub phoneme_targets: PhonemeSequence,
    pub inserted: Vec<FrameSpan>,
}

/// Samples a plan: each edit kind fires independently with its policy
/// probability, targeting a uniformly drawn eligible word with a uniform
/// repeat count. Deterministic under a fixed rng stream.
pub fn sample_plan(units: &AlignedUnits, rng: &mut SeededRng, policy: &AugmentPolicy) -> AugmentationPlan {
    let mut edits = Vec::new();
    if units.is_empty() {
        return AugmentationPlan { edits };
    }
    for kind in EditKind::ALL {
        // Draw order is fixed: one gate per kind, then target and count.
        let gate = rng.uniform();
        if gate >= policy.edit_prob {
            continue;
        }
        let eligible: Vec<usize> = units
            .words()
            .iter()
            .enumerate()
            .filter(|(_, w)| match kind {
                EditKind::SoundRepetition => !w.phones.is_empty(),
                _ => true,
            })
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            continue;
        }
        let word_index = eligible[rng.below(eligible.len())];
        let repeat_count = rng.range_inclusive(policy.repeat_min, policy.repeat_max);
        edits.push(PlannedEdit { kind, word_index, repeat_count });
        if edits.len() >= policy.max_edits {
            break;
        }
    }
    AugmentationPlan { edits }
}

fn splice(
    frames: &FrameSequence,
    labels: &FrameLabelSequence,
    source: FrameSpan,
    insert_at: usize,
    copies: usize,
) -> Result<(FrameSequence, FrameLabelSequence, FrameSpan), AugmentError> {
    labels.check_paired(frames)?;
    let t = frames.len();
    let source = source.check(t)?;
    if copies == 0 {
        return Err(AugmentError::ZeroRepeat);
    }
    debug_assert!(insert_at <= t);

    let mat = frames.frames();
    let tile = mat.slice(ndarray::s![source.start..source.end, ..]);
    let mut parts = Vec::with_capacity(copies + 2);
    parts.push(mat.slice(ndarray::s![..insert_at, ..]));
    for _ in 0..copies {
        parts.push(tile);
    }
    parts.push(mat.slice(ndarray::s![insert_at.., ..]));
    let new_frames = concatenate(Axis(0), &parts).expect("shapes agree along axis 1");

    let inserted_len = source.len() * copies;
    let mut new_labels = Vec::with_capacity(t + inserted_len);
    new_labels.extend_from_slice(&labels.labels()[..insert_at]);
    new_labels.extend(std::iter::repeat(Label::Positive).take(inserted_len));
    new_labels.extend_from_slice(&labels.labels()[insert_at..]);

    Ok((
        FrameSequence::new(new_frames, frames.frame_rate_hz())?,
        FrameLabelSequence::new(new_labels),
        FrameSpan::new(insert_at, insert_at + inserted_len),
    ))
}

/// Prolongation: tiles the unit's final phone span (its final frame when no
/// phones are aligned) `repeat_count` extra times in place. Inserted frames
/// are positive; every original frame keeps its prior label.
pub fn apply_prolongation(
    frames: &FrameSequence,
    labels: &FrameLabelSequence,
    unit: &AlignedUnit,
    repeat_count: usize,
) -> Result<(FrameSequence, FrameLabelSequence, FrameSpan), AugmentError> {
    unit.span.check(frames.len())?;
    let tail = unit.prolongation_tail();
    splice(frames, labels, tail, tail.end, repeat_count)
}

/// Word/sound repetition granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    Word,
    Sound,
}

/// Repetition: inserts `repeat_count` copies of the repeated span
/// immediately before the original, which stays negative. For word
/// granularity the whole word span is copied; for sound granularity the
/// leading phone span.
pub fn apply_repetition(
    frames: &FrameSequence,
    labels: &FrameLabelSequence,
    unit: &AlignedUnit,
    repeat_count: usize,
    granularity: Granularity,
) -> Result<(FrameSequence, FrameLabelSequence, FrameSpan), AugmentError> {
    unit.span.check(frames.len())?;
    let span = match granularity {
        Granularity::Word => unit.span,
        Granularity::Sound => match unit.kind {
            UnitKind::Phone => unit.span,
            UnitKind::Word => unit.leading_phone().ok_or(AugmentError::NoLeadingPhone)?,
        },
    };
    splice(frames, labels, span, span.start, repeat_count)
}

fn insert_position(edit: &PlannedEdit, unit: &AlignedUnit) -> usize {
    match edit.kind {
        EditKind::Prolongation => unit.prolongation_tail().end,
        EditKind::SoundRepetition => unit
            .leading_phone()
            .map(|s| s.start)
            .unwrap_or(unit.span.start),
        EditKind::WordRepetition => unit.span.start,
    }
}

/// Applies a plan's edits left to right with cumulative index remapping. The
/// phoneme targets are the source alignment's, untouched by augmentation.
pub fn apply_plan(
    frames: &FrameSequence,
    labels: &FrameLabelSequence,
    units: &AlignedUnits,
    plan: &AugmentationPlan,
) -> Result<AugmentedExample, AugmentError> {
    labels.check_paired(frames)?;
    for e in &plan.edits {
        if e.word_index >= units.words().len() {
            return Err(AugmentError::BadWordIndex {
                index: e.word_index,
                words: units.words().len(),
            });
        }
        if e.repeat_count == 0 {
            return Err(AugmentError::ZeroRepeat);
        }
    }

    let mut ordered = plan.edits.clone();
    ordered.sort_by_key(|e| {
        let unit = &units.words()[e.word_index];
        (insert_position(e, unit), e.kind as usize)
    });

    let mut cur_frames = frames.clone();
    let mut cur_labels = labels.clone();
    let mut inserted = Vec::with_capacity(ordered.len());
    let mut offset = 0usize;
    for e in &ordered {
        let unit = &units.words()[e.word_index];
        let shifted = AlignedUnit {
            kind: unit.kind,
            span: unit.span.shifted(offset),
            phones: unit
                .phones
                .iter()
                .map(|p| PhoneSpan { span: p.span.shifted(offset), phoneme: p.phoneme })
                .collect(),
        };
        let (f, l, span) = match e.kind {
            EditKind::Prolongation => {
                apply_prolongation(&cur_frames, &cur_labels, &shifted, e.repeat_count)?
            }
            EditKind::SoundRepetition => apply_repetition(
                &cur_frames,
                &cur_labels,
                &shifted,
                e.repeat_count,
                Granularity::Sound,
            )?,
            EditKind::WordRepetition => apply_repetition(
                &cur_frames,
                &cur_labels,
                &shifted,
                e.repeat_count,
                Granularity::Word,
            )?,
        };
        offset += span.len();
        inserted.push(span);
        cur_frames = f;
        cur_labels = l;
    }

    Ok(AugmentedExample {
        frames: cur_frames,
        labels: cur_labels,
        phoneme_targets: units.phoneme_targets()?,
        inserted,
    })
}

/// Removes every positive-labeled frame, recovering the pre-augmentation
/// sequence of an example built from all-negative labels.
pub fn delete_positive_frames(
    frames: &FrameSequence,
    labels: &FrameLabelSequence,
) -> Result<FrameSequence, AugmentError> {
    labels.check_paired(frames)?;
    let keep: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.is_positive())
        .map(|(i, _)| i)
        .collect();
    let mat = frames.frames().select(Axis(0), &keep);
    Ok(FrameSequence::new(mat, frames.frame_rate_hz())?)
}

/// The 39-phone folded ARPABET inventory plus the reserved blank at index 0.
#[derive(Debug, Clone)]
pub struct PhonemeInventory {
    symbols: Vec<&'static str>,
}

impl Default for PhonemeInventory {
    fn default() -> Self {
        Self::arpabet39()
    }
}

impl PhonemeInventory {
    pub fn arpabet39() -> Self {
        const PHONES: [&str; 39] = [
            "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G",
            "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH",
            "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
        ];
        let mut symbols = vec!["<blank>"];
        symbols.extend(PHONES);
        Self { symbols }
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        let upper = symbol.to_ascii_uppercase();
        // Ignore ARPABET stress digits (AH0, AH1, ...).
        let folded = upper.trim_end_matches(|c: char| c.is_ascii_digit());
        self.symbols.iter().position(|&s| s == folded)
    }
}

/// Parses the per-utterance alignment format: one `kind\tstart\tend\tsymbol`
/// line per span, times in seconds, `word` lines followed by their `phone`
/// lines. Times map to frames with floor at span starts and ceil at span
/// ends; boundary collisions resolve in favor of the earlier span.
pub fn parse_alignment(
    text: &str,
    frame_rate_hz: f64,
    inventory: &PhonemeInventory,
) -> Result<AlignedUnits, AugmentError> {
    struct RawWord {
        span: FrameSpan,
        phones: Vec<PhoneSpan>,
    }
    let to_span = |start: f64, end: f64| {
        FrameSpan::new((start * frame_rate_hz).floor() as usize, (end * frame_rate_hz).ceil() as usize)
    };

    let mut words: Vec<RawWord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(AugmentError::AlignmentParse {
                line: line_no,
                reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let parse_time = |s: &str| {
            s.parse::<f64>().map_err(|e| AugmentError::AlignmentParse {
                line: line_no,
                reason: format!("bad time `{s}`: {e}"),
            })
        };
        let start = parse_time(fields[1])?;
        let end = parse_time(fields[2])?;
        if !(start >= 0.0 && start < end) {
            return Err(AugmentError::AlignmentParse {
                line: line_no,
                reason: format!("need 0 <= start < end, got [{start}, {end}]"),
            });
        }
        match fields[0] {
            "word" => words.push(RawWord { span: to_span(start, end), phones: Vec::new() }),
            "phone" => {
                let word = words.last_mut().ok_or(AugmentError::AlignmentParse {
                    line: line_no,
                    reason: "phone line before any word line".into(),
                })?;
                let phoneme =
                    inventory.index_of(fields[3]).ok_or(AugmentError::AlignmentParse {
                        line: line_no,
                        reason: format!("unknown phoneme symbol `{}`", fields[3]),
                    })?;
                word.phones.push(PhoneSpan { span: to_span(start, end), phoneme });
            }
            other => {
                return Err(AugmentError::AlignmentParse {
                    line: line_no,
                    reason: format!("unknown span kind `{other}`"),
                })
            }
        }
    }

    // Resolve frame-grid collisions: clamp each span's start to its
    // predecessor's end, keeping at least one frame.
    let mut prev_end = 0usize;
    let mut out = Vec::with_capacity(words.len());
    for (wi, mut w) in words.into_iter().enumerate() {
        w.span.start = w.span.start.max(prev_end);
        if w.span.is_empty() {
            return Err(AugmentError::AlignmentParse {
                line: 0,
                reason: format!("word {wi} collapsed to an empty frame span"),
            });
        }
        prev_end = w.span.end;
        let mut phone_prev = w.span.start;
        let mut phones = Vec::with_capacity(w.phones.len());
        for mut p in w.phones {
            p.span.start = p.span.start.max(phone_prev);
            p.span.end = p.span.end.min(w.span.end).max(p.span.start);
            if !p.span.is_empty() {
                phone_prev = p.span.end;
                phones.push(p);
            }
        }
        out.push(AlignedUnit::word(w.span, phones));
    }
    AlignedUnits::new(out, inventory.vocab_size())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn frames(t: usize, d: usize) -> FrameSequence {
        let mat = Array2::from_shape_fn((t, d), |(i, j)| (i * d + j) as f64 * 0.1);
        FrameSequence::new(mat, 50.0).unwrap()
    }

    fn word_10_20_tail_2() -> AlignedUnit {
        AlignedUnit::word(
            FrameSpan::new(10, 20),
            vec![
                PhoneSpan { span: FrameSpan::new(10, 18), phoneme: 1 },
                PhoneSpan { span: FrameSpan::new(18, 20), phoneme: 2 },
            ],
        )
    }

    fn units_for(words: Vec<AlignedUnit>) -> AlignedUnits {
        AlignedUnits::new(words, 6).unwrap()
    }

    #[test]
    fn prolongation_minimal_insertion() {
        let f = frames(5, 3);
        let l = FrameLabelSequence::all_negative(5);
        let unit = AlignedUnit::word(FrameSpan::new(2, 4), vec![]);
        let (f2, l2, span) = apply_prolongation(&f, &l, &unit, 1).unwrap();
        assert_eq!(f2.len(), 6);
        assert_eq!(span, FrameSpan::new(4, 5));
        assert_eq!(l2.iter().filter(|l| l.is_positive()).count(), 1);
        // the tile is a copy of the final frame
        assert_eq!(f2.frames().row(4), f.frames().row(3));
    }

    #[test]
    fn prolongation_tail_span_arithmetic() {
        let f = frames(30, 2);
        let l = FrameLabelSequence::all_negative(30);
        let (f2, l2, span) = apply_prolongation(&f, &l, &word_10_20_tail_2(), 3).unwrap();
        assert_eq!(f2.len(), 36);
        assert_eq!(span, FrameSpan::new(20, 26));
        let positives: Vec<usize> = l2
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_positive())
            .map(|(i, _)| i)
            .collect();
        assert_eq!(positives, (20..26).collect::<Vec<_>>());
        // inserted content tiles frames [18, 20)
        for k in 0..3 {
            assert_eq!(f2.frames().row(20 + 2 * k), f.frames().row(18));
            assert_eq!(f2.frames().row(21 + 2 * k), f.frames().row(19));
        }
    }

    #[test]
    fn zero_repeat_is_rejected() {
        let f = frames(5, 2);
        let l = FrameLabelSequence::all_negative(5);
        let unit = AlignedUnit::word(FrameSpan::new(0, 5), vec![]);
        assert_eq!(
            apply_prolongation(&f, &l, &unit, 0),
            Err(AugmentError::ZeroRepeat)
        );
    }

    #[test]
    fn word_repetition_layout() {
        let f = frames(12, 2);
        let l = FrameLabelSequence::all_negative(12);
        let unit = AlignedUnit::word(FrameSpan::new(3, 8), vec![]);
        let (f2, l2, span) = apply_repetition(&f, &l, &unit, 2, Granularity::Word).unwrap();
        assert_eq!(f2.len(), 22);
        assert_eq!(span, FrameSpan::new(3, 13));
        // first 10 frames of the region positive, the original 5 negative
        for i in 3..13 {
            assert!(l2.labels()[i].is_positive());
        }
        for i in 13..18 {
            assert!(!l2.labels()[i].is_positive());
        }
        // copies replicate the original span content
        assert_eq!(f2.frames().row(3), f.frames().row(3));
        assert_eq!(f2.frames().row(13), f.frames().row(3));
    }

    #[test]
    fn sound_repetition_requires_leading_phone() {
        let f = frames(25, 2);
        let l = FrameLabelSequence::all_negative(25);
        let bare = AlignedUnit::word(FrameSpan::new(2, 6), vec![]);
        assert_eq!(
            apply_repetition(&f, &l, &bare, 1, Granularity::Sound),
            Err(AugmentError::NoLeadingPhone)
        );
        let (f2, _, span) =
            apply_repetition(&f, &l, &word_10_20_tail_2(), 2, Granularity::Sound).unwrap();
        // leading phone spans [10, 18): two copies inserted before it
        assert_eq!(span, FrameSpan::new(10, 26));
        assert_eq!(f2.len(), 41);
    }

    #[test]
    fn out_of_range_unit_is_rejected() {
        let f = frames(15, 2);
        let l = FrameLabelSequence::all_negative(15);
        assert!(matches!(
            apply_prolongation(&f, &l, &word_10_20_tail_2(), 1),
            Err(AugmentError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn empty_plan_is_identity() {
        let f = frames(20, 3);
        let l = FrameLabelSequence::all_negative(20);
        let units = units_for(vec![AlignedUnit::word(FrameSpan::new(0, 20), vec![])]);
        let out = apply_plan(&f, &l, &units, &AugmentationPlan::default()).unwrap();
        assert_eq!(out.frames, f);
        assert!(out.labels.iter().all(|l| !l.is_positive()));
        assert!(out.inserted.is_empty());
    }

    #[test]
    fn two_edits_grow_by_sum_of_individual_growths() {
        let f = frames(40, 2);
        let l = FrameLabelSequence::all_negative(40);
        let w0 = AlignedUnit::word(
            FrameSpan::new(0, 10),
            vec![PhoneSpan { span: FrameSpan::new(0, 4), phoneme: 1 }],
        );
        let w1 = word_10_20_tail_2();
        let units = units_for(vec![w0.clone(), w1.clone()]);

        let e0 = PlannedEdit { kind: EditKind::WordRepetition, word_index: 0, repeat_count: 1 };
        let e1 = PlannedEdit { kind: EditKind::Prolongation, word_index: 1, repeat_count: 2 };

        let only0 = apply_plan(&f, &l, &units, &AugmentationPlan { edits: vec![e0] }).unwrap();
        let only1 = apply_plan(&f, &l, &units, &AugmentationPlan { edits: vec![e1] }).unwrap();
        let both = apply_plan(&f, &l, &units, &AugmentationPlan { edits: vec![e0, e1] }).unwrap();

        let g0 = only0.frames.len() - f.len();
        let g1 = only1.frames.len() - f.len();
        assert_eq!(both.frames.len() - f.len(), g0 + g1);
    }

    #[test]
    fn deleting_positives_restores_original_bitwise() {
        let f = frames(35, 4);
        let l = FrameLabelSequence::all_negative(35);
        let units = units_for(vec![
            AlignedUnit::word(
                FrameSpan::new(0, 12),
                vec![PhoneSpan { span: FrameSpan::new(0, 5), phoneme: 3 }],
            ),
            word_10_20_tail_2(),
            AlignedUnit::word(FrameSpan::new(25, 35), vec![]),
        ]);
        let plan = AugmentationPlan {
            edits: vec![
                PlannedEdit { kind: EditKind::SoundRepetition, word_index: 0, repeat_count: 2 },
                PlannedEdit { kind: EditKind::Prolongation, word_index: 1, repeat_count: 3 },
                PlannedEdit { kind: EditKind::WordRepetition, word_index: 2, repeat_count: 1 },
            ],
        };
        let out = apply_plan(&f, &l, &units, &plan).unwrap();
        assert_eq!(out.frames.len(), out.labels.len());
        let restored = delete_positive_frames(&out.frames, &out.labels).unwrap();
        assert_eq!(restored, f);
    }

    #[test]
    fn phoneme_targets_survive_augmentation() {
        let f = frames(30, 2);
        let l = FrameLabelSequence::all_negative(30);
        let units = units_for(vec![word_10_20_tail_2()]);
        let expected = units.phoneme_targets().unwrap();
        let plan = AugmentationPlan {
            edits: vec![PlannedEdit { kind: EditKind::WordRepetition, word_index: 0, repeat_count: 3 }],
        };
        let out = apply_plan(&f, &l, &units, &plan).unwrap();
        assert_eq!(out.phoneme_targets, expected);
    }

    #[test]
    fn zero_rate_policy_gives_empty_plans() {
        let units = units_for(vec![word_10_20_tail_2()]);
        let policy = AugmentPolicy { edit_prob: 0.0, ..Default::default() };
        let mut rng = SeededRng::new(1);
        for _ in 0..50 {
            assert!(sample_plan(&units, &mut rng, &policy).is_empty());
        }
    }

    #[test]
    fn fixed_seed_plans_repeat() {
        let units = units_for(vec![
            word_10_20_tail_2(),
            AlignedUnit::word(FrameSpan::new(22, 30), vec![]),
        ]);
        let policy = AugmentPolicy::default();
        let a = sample_plan(&units, &mut SeededRng::new(42), &policy);
        let b = sample_plan(&units, &mut SeededRng::new(42), &policy);
        assert_eq!(a, b);
    }

    #[test]
    fn word_repetition_rate_matches_binomial_interval() {
        let units = units_for(vec![word_10_20_tail_2()]);
        let policy = AugmentPolicy { edit_prob: 0.5, ..Default::default() };
        let mut rng = SeededRng::new(7);
        let mut hits = 0;
        for _ in 0..1000 {
            let plan = sample_plan(&units, &mut rng, &policy);
            if plan.edits.iter().any(|e| e.kind == EditKind::WordRepetition) {
                hits += 1;
            }
        }
        // binomial(1000, 0.5): +/- 50 is > 3 sigma
        assert!((450..=550).contains(&hits), "word repetitions in {hits}/1000 plans");
    }

    #[test]
    fn positive_fraction_monotone_in_repeat_count() {
        let f = frames(30, 2);
        let l = FrameLabelSequence::all_negative(30);
        let units = units_for(vec![word_10_20_tail_2()]);
        let mut last = 0.0;
        for rc in 1..=5 {
            let plan = AugmentationPlan {
                edits: vec![PlannedEdit { kind: EditKind::WordRepetition, word_index: 0, repeat_count: rc }],
            };
            let out = apply_plan(&f, &l, &units, &plan).unwrap();
            let frac = out.labels.iter().filter(|l| l.is_positive()).count() as f64
                / out.labels.len() as f64;
            assert!(frac >= last);
            last = frac;
        }
    }

    #[test]
    fn alignment_parsing_maps_times_to_frames() {
        let text = "word\t0.00\t0.20\tthe\nphone\t0.00\t0.08\tDH\nphone\t0.08\t0.20\tAH0\nword\t0.20\t0.60\tcat\nphone\t0.20\t0.35\tK\nphone\t0.35\t0.50\tAE\nphone\t0.50\t0.60\tT\n";
        let inv = PhonemeInventory::arpabet39();
        let units = parse_alignment(text, 50.0, &inv).unwrap();
        assert_eq!(units.words().len(), 2);
        assert_eq!(units.words()[0].span, FrameSpan::new(0, 10));
        assert_eq!(units.words()[1].span, FrameSpan::new(10, 30));
        let targets = units.phoneme_targets().unwrap();
        assert_eq!(targets.len(), 5);
        assert_eq!(targets.symbols()[0], inv.index_of("DH").unwrap());

        assert!(parse_alignment("phone\t0\t1\tK\n", 50.0, &inv).is_err());
        assert!(parse_alignment("word\t0.0\t0.1\tx\nphone\t0.0\t0.1\tQQ\n", 50.0, &inv).is_err());
    }
}
