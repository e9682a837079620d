//! Word-level evaluation sets from clinical CHAT transcripts and
//! timestamped ASR output.
//!
//! The flow is: [`chat::parse_chat`] -> [`dtw::dtw_align`] ->
//! [`derive_word_labels`] / [`slice_utterances`], after which
//! [`score_words`] reduces frame predictions to per-word scores.

pub mod chat;
pub mod dtw;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Waveform;
use crate::types::{FramePredictionSequence, Label};
use chat::{ChatTranscript, StutterCode};
use dtw::WordAlignment;

#[derive(Debug, Error, PartialEq)]
pub enum WordEvalError {
    #[error("asr transcript line {line}: {reason}")]
    AsrParse { line: usize, reason: String },
    #[error("asr word {index}: times must satisfy 0 <= start < end, got [{start}, {end}]")]
    BadAsrTimes { index: usize, start: f64, end: f64 },
    #[error("asr words {prev} and {index} overlap in time")]
    OverlappingAsrWords { prev: usize, index: usize },
    #[error("word span [{start:.3}, {end:.3}] lies outside the prediction range ({frames} frames at {rate} Hz)")]
    SpanOutsideRange { start: f64, end: f64, frames: usize, rate: f64 },
    #[error("word manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },
}

/// One ASR word with its Whisper-style timestamps, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrWord {
    pub surface: String,
    pub start: f64,
    pub end: f64,
}

/// A time-ordered, non-overlapping ASR word sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AsrTranscript {
    words: Vec<AsrWord>,
}

impl AsrTranscript {
    pub fn new(words: Vec<AsrWord>) -> Result<Self, WordEvalError> {
        for (index, w) in words.iter().enumerate() {
            if !(w.start >= 0.0 && w.start < w.end) {
                return Err(WordEvalError::BadAsrTimes { index, start: w.start, end: w.end });
            }
            if index > 0 && words[index - 1].end > w.start {
                return Err(WordEvalError::OverlappingAsrWords { prev: index - 1, index });
            }
        }
        Ok(Self { words })
    }

    pub fn words(&self) -> &[AsrWord] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.words.iter().map(|w| w.surface.clone()).collect()
    }

    /// Parses the tab-separated `word\tstart\tend` format, one word per line.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, WordEvalError> {
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 {
                return Err(WordEvalError::AsrParse {
                    line: line_no,
                    reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            }
            let parse_time = |s: &str| {
                s.parse::<f64>().map_err(|e| WordEvalError::AsrParse {
                    line: line_no,
                    reason: format!("bad time `{s}`: {e}"),
                })
            };
            words.push(AsrWord {
                surface: fields[0].to_owned(),
                start: parse_time(fields[1])?,
                end: parse_time(fields[2])?,
            });
        }
        Self::new(words)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(&format!("{}\t{:.6}\t{:.6}\n", w.surface, w.start, w.end));
        }
        out
    }
}

/// An evaluated word: exact-aligned, margin-expanded, labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWord {
    pub surface: String,
    /// Span after margin expansion and overlap clamping, in seconds.
    pub start: f64,
    pub end: f64,
    pub label: Label,
    pub partition: String,
    /// The stutter code names behind a positive label, for reporting.
    pub codes: Vec<String>,
    /// Index of the word in the source ASR transcript.
    pub asr_index: usize,
}

/// Margin-expanded spans for every ASR word: each span grows by `margin` on
/// both sides, then is clamped to `[0, duration]` and to the midpoints
/// between adjacent words so spans never overlap.
pub fn expanded_spans(
    asr: &AsrTranscript,
    margin_seconds: f64,
    audio_duration: Option<f64>,
) -> Vec<(f64, f64)> {
    let words = asr.words();
    let n = words.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo_bound = if i == 0 {
            0.0
        } else {
            (words[i - 1].end + words[i].start) / 2.0
        };
        let hi_bound = if i + 1 == n {
            audio_duration.unwrap_or(f64::INFINITY)
        } else {
            (words[i].end + words[i + 1].start) / 2.0
        };
        let start = (words[i].start - margin_seconds).max(lo_bound).max(0.0);
        let end = (words[i].end + margin_seconds).min(hi_bound);
        // Margins never shrink a word below its spoken extent, and the
        // midpoint bounds cannot cross because raw words do not overlap.
        out.push((start, end.max(start)));
    }
    out
}

/// Labels the exactly-aligned words: a word is a stutter iff its CHAT codes
/// intersect the stutter inventory. Non-exact pairs are excluded entirely.
pub fn derive_word_labels(
    alignment: &WordAlignment,
    chat: &ChatTranscript,
    asr: &AsrTranscript,
    margin_seconds: f64,
    audio_duration: Option<f64>,
    partition: &str,
) -> Vec<LabeledWord> {
    let spans = expanded_spans(asr, margin_seconds, audio_duration);
    let flat = chat.flat_words();
    let mut out = Vec::new();
    for pair in alignment.pairs.iter().filter(|p| p.exact) {
        let (_, _, chat_word) = flat[pair.chat_index];
        let codes: Vec<String> = chat_word
            .stutter_codes()
            .iter()
            .map(|c: &StutterCode| c.name().to_owned())
            .collect();
        let label = if codes.is_empty() { Label::Negative } else { Label::Positive };
        let (start, end) = spans[pair.asr_index];
        out.push(LabeledWord {
            surface: asr.words()[pair.asr_index].surface.clone(),
            start,
            end,
            label,
            partition: partition.to_owned(),
            codes,
            asr_index: pair.asr_index,
        });
    }
    out
}

/// One audio segment cut at a CHAT utterance boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceSegment {
    pub utterance_index: usize,
    pub start: f64,
    pub end: f64,
    pub samples: Vec<f64>,
}

/// A CHAT line that produced no segment, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipRecord {
    pub utterance_index: usize,
    pub reason: String,
}

/// Slices audio into per-utterance segments: each CHAT line with at least
/// one exactly-aligned word yields the span from its first to its last
/// exact word's margin-expanded timestamps. Lines with zero exact words are
/// skipped with a record.
pub fn slice_utterances(
    audio: &Waveform,
    chat: &ChatTranscript,
    alignment: &WordAlignment,
    asr: &AsrTranscript,
    margin_seconds: f64,
) -> (Vec<UtteranceSegment>, Vec<SkipRecord>) {
    let duration = audio.duration_seconds();
    let spans = expanded_spans(asr, margin_seconds, Some(duration));
    let flat = chat.flat_words();

    let mut per_line: Vec<Vec<usize>> = vec![Vec::new(); chat.utterances.len()];
    for pair in alignment.pairs.iter().filter(|p| p.exact) {
        let (line, _, _) = flat[pair.chat_index];
        per_line[line].push(pair.asr_index);
    }

    let mut segments = Vec::new();
    let mut skips = Vec::new();
    for (line, asr_indices) in per_line.iter().enumerate() {
        if asr_indices.is_empty() {
            skips.push(SkipRecord {
                utterance_index: line,
                reason: "no exactly aligned words".into(),
            });
            continue;
        }
        let first = *asr_indices.iter().min().unwrap();
        let last = *asr_indices.iter().max().unwrap();
        let start = spans[first].0;
        let end = spans[last].1.min(duration);
        let rate = audio.sample_rate_hz as f64;
        let lo = (start * rate).floor() as usize;
        let hi = ((end * rate).ceil() as usize).min(audio.samples.len());
        segments.push(UtteranceSegment {
            utterance_index: line,
            start,
            end,
            samples: audio.samples[lo..hi].to_vec(),
        });
    }
    (segments, skips)
}

/// How a word's frame scores collapse to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WordScoreReduction {
    /// Max over frames, mirroring the max-over-time training signal.
    Max,
    Mean,
}

/// Per-word detection scores: each word scores the reduction of the positive
/// probability over the frames inside its span.
pub fn score_words(
    frame_probs: &FramePredictionSequence,
    words: &[LabeledWord],
    frame_rate_hz: f64,
    reduction: WordScoreReduction,
) -> Result<Vec<f64>, WordEvalError> {
    let frames = frame_probs.len();
    let mut out = Vec::with_capacity(words.len());
    for w in words {
        let start_frame = (w.start * frame_rate_hz).floor() as usize;
        let end_frame = ((w.end * frame_rate_hz).ceil() as usize).min(frames);
        if start_frame >= frames || end_frame <= start_frame {
            return Err(WordEvalError::SpanOutsideRange {
                start: w.start,
                end: w.end,
                frames,
                rate: frame_rate_hz,
            });
        }
        let positives = (start_frame..end_frame).map(|i| frame_probs.positive(i));
        let score = match reduction {
            WordScoreReduction::Max => positives.fold(f64::NEG_INFINITY, f64::max),
            WordScoreReduction::Mean => {
                let n = (end_frame - start_frame) as f64;
                positives.sum::<f64>() / n
            }
        };
        out.push(score);
    }
    Ok(out)
}

/// One row of the word-label manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRecord {
    pub audio_id: String,
    pub partition: String,
    pub surface: String,
    pub start: f64,
    pub end: f64,
    pub label: Label,
}

impl WordRecord {
    pub fn from_labeled(audio_id: &str, w: &LabeledWord) -> Self {
        Self {
            audio_id: audio_id.to_owned(),
            partition: w.partition.clone(),
            surface: w.surface.clone(),
            start: w.start,
            end: w.end,
            label: w.label,
        }
    }
}

/// Serializes manifest rows in the stable field order
/// `audio_id partition surface start end label`, tab-separated.
pub fn write_word_manifest(records: &[WordRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let label = match r.label {
            Label::Positive => "stutter",
            Label::Negative => "fluent",
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}\n",
            r.audio_id, r.partition, r.surface, r.start, r.end, label
        ));
    }
    out
}

pub fn read_word_manifest(text: &str) -> Result<Vec<WordRecord>, WordEvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 6 {
            return Err(WordEvalError::ManifestParse {
                line: line_no,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let time = |s: &str| {
            s.parse::<f64>().map_err(|e| WordEvalError::ManifestParse {
                line: line_no,
                reason: format!("bad time `{s}`: {e}"),
            })
        };
        let label = match fields[5] {
            "stutter" => Label::Positive,
            "fluent" => Label::Negative,
            other => {
                return Err(WordEvalError::ManifestParse {
                    line: line_no,
                    reason: format!("unknown label `{other}`"),
                })
            }
        };
        out.push(WordRecord {
            audio_id: fields[0].to_owned(),
            partition: fields[1].to_owned(),
            surface: fields[2].to_owned(),
            start: time(fields[3])?,
            end: time(fields[4])?,
            label,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wordeval::chat::parse_chat;
    use crate::wordeval::dtw::dtw_align;

    fn asr(entries: &[(&str, f64, f64)]) -> AsrTranscript {
        AsrTranscript::new(
            entries
                .iter()
                .map(|&(s, a, b)| AsrWord { surface: s.into(), start: a, end: b })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn asr_validation() {
        assert!(AsrTranscript::new(vec![AsrWord { surface: "x".into(), start: 0.5, end: 0.4 }]).is_err());
        assert!(AsrTranscript::new(vec![
            AsrWord { surface: "a".into(), start: 0.0, end: 0.6 },
            AsrWord { surface: "b".into(), start: 0.5, end: 0.9 },
        ])
        .is_err());
        assert!(asr(&[("a", 0.0, 0.5), ("b", 0.5, 0.9)]).len() == 2);
    }

    #[test]
    fn asr_text_round_trip() {
        let t = asr(&[("the", 0.0, 0.31), ("cat", 0.4, 0.8)]);
        let back = AsrTranscript::parse(&t.to_text()).unwrap();
        assert_eq!(t.words()[1].surface, back.words()[1].surface);
        assert!((t.words()[1].start - back.words()[1].start).abs() < 1e-9);
    }

    #[test]
    fn blocked_word_is_stutter_and_widened() {
        let chat = parse_chat("*PAR:\tthe ≠cat sat .\n").unwrap();
        let a = asr(&[("the", 0.0, 0.3), ("cat", 0.5, 0.9), ("sat", 1.3, 1.7)]);
        let al = dtw_align(&a.surfaces(), &chat.flat_words().iter().map(|w| w.2.surface.clone()).collect::<Vec<_>>()).unwrap();
        let labeled = derive_word_labels(&al, &chat, &a, 0.2, Some(2.0), "fluencybank");
        assert_eq!(labeled.len(), 3);
        let cat = &labeled[1];
        assert_eq!(cat.label, Label::Positive);
        assert_eq!(cat.codes, vec!["block"]);
        // widened by the margin but clamped at midpoints (0.4 and 1.1)
        assert!((cat.start - 0.4).abs() < 1e-9);
        assert!((cat.end - 1.1).abs() < 1e-9);
        assert_eq!(labeled[0].label, Label::Negative);
    }

    #[test]
    fn non_exact_pairs_are_excluded() {
        let chat = parse_chat("*PAR:\tthe dog .\n").unwrap();
        let a = asr(&[("the", 0.0, 0.3), ("fog", 0.4, 0.8)]);
        let al = dtw_align(&a.surfaces(), &chat.flat_words().iter().map(|w| w.2.surface.clone()).collect::<Vec<_>>()).unwrap();
        let labeled = derive_word_labels(&al, &chat, &a, 0.2, None, "p");
        assert_eq!(labeled.len(), 1);
        assert_eq!(labeled[0].surface, "the");
    }

    #[test]
    fn margin_expansion_never_overlaps_or_escapes() {
        let a = asr(&[("a", 0.1, 0.5), ("b", 0.55, 0.9), ("c", 1.5, 1.8)]);
        let spans = expanded_spans(&a, 0.2, Some(2.0));
        for w in spans.windows(2) {
            assert!(w[0].1 <= w[1].0 + 1e-12);
        }
        assert!(spans[0].0 >= 0.0);
        assert!(spans[2].1 <= 2.0);
        // words far apart get the full margin
        assert!((spans[2].0 - 1.3).abs() < 1e-9);
    }

    #[test]
    fn slice_utterances_skip_rule() {
        let chat = parse_chat("*PAR:\tthe cat .\n*PAR:\tzzz qqq .\n").unwrap();
        let a = asr(&[("the", 0.0, 0.3), ("cat", 0.4, 0.8)]);
        let chat_surfaces: Vec<String> =
            chat.flat_words().iter().map(|w| w.2.surface.clone()).collect();
        let al = dtw_align(&a.surfaces(), &chat_surfaces).unwrap();
        let audio = Waveform { samples: vec![0.0; 16_000], sample_rate_hz: 16_000 };
        let (segments, skips) = slice_utterances(&audio, &chat, &al, &a, 0.2);
        assert_eq!(segments.len(), 1);
        assert_eq!(skips.len(), 1);
        assert_eq!(skips[0].utterance_index, 1);
        assert_eq!(segments[0].utterance_index, 0);
        assert!(segments[0].end <= 1.0 + 1e-9);
    }

    #[test]
    fn two_line_segments_are_time_ordered() {
        let chat = parse_chat("*PAR:\tone two .\n*PAR:\tthree four .\n").unwrap();
        let a = asr(&[
            ("one", 0.0, 0.3),
            ("two", 0.35, 0.6),
            ("three", 1.0, 1.3),
            ("four", 1.4, 1.8),
        ]);
        let chat_surfaces: Vec<String> =
            chat.flat_words().iter().map(|w| w.2.surface.clone()).collect();
        let al = dtw_align(&a.surfaces(), &chat_surfaces).unwrap();
        let audio = Waveform { samples: vec![0.0; 32_000], sample_rate_hz: 16_000 };
        let (segments, skips) = slice_utterances(&audio, &chat, &al, &a, 0.2);
        assert!(skips.is_empty());
        assert_eq!(segments.len(), 2);
        assert!(segments[0].end <= segments[1].start + 1e-9);
    }

    #[test]
    fn word_scores_take_span_max() {
        let probs = FramePredictionSequence::new(vec![
            [0.1, 0.9],
            [0.9, 0.1],
            [0.2, 0.8],
            [0.4, 0.6],
        ])
        .unwrap();
        // 1 Hz frame rate: word covers frames 0..3
        let w = LabeledWord {
            surface: "w".into(),
            start: 0.0,
            end: 3.0,
            label: Label::Positive,
            partition: "p".into(),
            codes: vec![],
            asr_index: 0,
        };
        let scores = score_words(&probs, &[w.clone()], 1.0, WordScoreReduction::Max).unwrap();
        assert_eq!(scores, vec![0.9]);
        let single = LabeledWord { start: 3.0, end: 4.0, ..w.clone() };
        let scores = score_words(&probs, &[single], 1.0, WordScoreReduction::Max).unwrap();
        assert_eq!(scores, vec![0.4]);
        let outside = LabeledWord { start: 5.0, end: 6.0, ..w };
        assert!(score_words(&probs, &[outside], 1.0, WordScoreReduction::Max).is_err());
    }

    #[test]
    fn disjoint_word_scores_are_independent() {
        let mut rows = vec![[0.2, 0.8]; 10];
        rows[2] = [0.7, 0.3];
        rows[8] = [0.6, 0.4];
        let probs = FramePredictionSequence::new(rows.clone()).unwrap();
        let mk = |s: f64, e: f64| LabeledWord {
            surface: "w".into(),
            start: s,
            end: e,
            label: Label::Negative,
            partition: "p".into(),
            codes: vec![],
            asr_index: 0,
        };
        let words = [mk(0.0, 4.0), mk(6.0, 10.0)];
        let base = score_words(&probs, &words, 1.0, WordScoreReduction::Max).unwrap();
        // perturb only the second word's frames
        rows[8] = [0.95, 0.05];
        let probs2 = FramePredictionSequence::new(rows).unwrap();
        let changed = score_words(&probs2, &words, 1.0, WordScoreReduction::Max).unwrap();
        assert_eq!(base[0], changed[0]);
        assert!(changed[1] > base[1]);
    }

    #[test]
    fn manifest_round_trip() {
        let rows = vec![
            WordRecord {
                audio_id: "a1".into(),
                partition: "fluencybank".into(),
                surface: "cat".into(),
                start: 0.4,
                end: 1.1,
                label: Label::Positive,
            },
            WordRecord {
                audio_id: "a1".into(),
                partition: "fluencybank".into(),
                surface: "sat".into(),
                start: 1.2,
                end: 1.9,
                label: Label::Negative,
            },
        ];
        let text = write_word_manifest(&rows);
        let back = read_word_manifest(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].label, Label::Positive);
        assert_eq!(back[1].surface, "sat");
    }
}
