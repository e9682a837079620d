//! Threshold-swept detection metrics, average precision, and per-type subset
//! construction for imbalanced stuttering detection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ExperimentConfig, ThresholdGrid};
use crate::types::Label;

/// Utterance-level stutter type tags, following the SEP-28K annotation set.
pub const UTTERANCE_TYPES: [&str; 5] =
    ["block", "interjection", "prolongation", "sound_repetition", "word_repetition"];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at index {index} is {value}, outside [0, 1]")]
    ScoreOutOfRange { index: usize, value: f64 },
    #[error("average precision is undefined on a set with no positive labels")]
    NoPositives,
    #[error("unknown stutter type `{0}`")]
    UnknownType(String),
    #[error("empty input")]
    Empty,
    #[error("threshold grid is empty")]
    EmptyGrid,
}

/// One scored item: a detection probability, its ground-truth label, and
/// optional partition/type tags used for report slicing.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredItem {
    pub score: f64,
    pub label: Label,
    pub partition: Option<String>,
    pub type_tags: Vec<String>,
}

impl ScoredItem {
    pub fn plain(score: f64, label: Label) -> Self {
        Self { score, label, partition: None, type_tags: Vec::new() }
    }
}

/// Parallel scores and binary labels, with the tag inventory the type tags
/// are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    items: Vec<ScoredItem>,
    type_inventory: Vec<String>,
}

impl ScoredSet {
    pub fn new(items: Vec<ScoredItem>) -> Result<Self, MetricsError> {
        Self::with_inventory(items, UTTERANCE_TYPES.iter().map(|s| s.to_string()).collect())
    }

    pub fn with_inventory(
        items: Vec<ScoredItem>,
        type_inventory: Vec<String>,
    ) -> Result<Self, MetricsError> {
        for (index, it) in items.iter().enumerate() {
            if !(0.0..=1.0).contains(&it.score) || it.score.is_nan() {
                return Err(MetricsError::ScoreOutOfRange { index, value: it.score });
            }
        }
        Ok(Self { items, type_inventory })
    }

    /// Builds a set from parallel score/label slices.
    pub fn from_parallel(scores: &[f64], labels: &[Label]) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
        }
        let items = scores
            .iter()
            .zip(labels)
            .map(|(&score, &label)| ScoredItem::plain(score, label))
            .collect();
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ScoredItem] {
        &self.items
    }

    pub fn type_inventory(&self) -> &[String] {
        &self.type_inventory
    }

    /// Distinct partition names present, in first-seen order.
    pub fn partitions(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for it in &self.items {
            if let Some(p) = &it.partition {
                if !seen.contains(p) {
                    seen.push(p.clone());
                }
            }
        }
        seen
    }

    pub fn filter_partition(&self, partition: &str) -> ScoredSet {
        let items = self
            .items
            .iter()
            .filter(|it| it.partition.as_deref() == Some(partition))
            .cloned()
            .collect();
        ScoredSet { items, type_inventory: self.type_inventory.clone() }
    }
}

/// Confusion counts at a single threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Counts predictions at threshold `theta`, predicting positive iff
/// `score >= theta`.
pub fn confusion_at_threshold(set: &ScoredSet, theta: f64) -> Confusion {
    let mut c = Confusion { tp: 0, fp: 0, fn_: 0, tn: 0 };
    for it in set.items() {
        let predicted_positive = it.score >= theta;
        match (predicted_positive, it.label) {
            (true, Label::Positive) => c.tp += 1,
            (true, Label::Negative) => c.fp += 1,
            (false, Label::Positive) => c.fn_ += 1,
            (false, Label::Negative) => c.tn += 1,
        }
    }
    c
}

/// `(F1, precision, recall)` with the degenerate-denominator convention of
/// zero throughout, so sweeping stays total.
pub fn f1_precision_recall(counts: Confusion) -> (f64, f64, f64) {
    let p = if counts.tp + counts.fp == 0 {
        0.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fp) as f64
    };
    let r = if counts.tp + counts.fn_ == 0 {
        0.0
    } else {
        counts.tp as f64 / (counts.tp + counts.fn_) as f64
    };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (f1, p, r)
}

/// One point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Result of sweeping the detection threshold over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_threshold: f64,
    pub best_f1: f64,
    pub best_precision: f64,
    pub best_recall: f64,
    pub curve: Vec<SweepPoint>,
}

/// Evaluates F1 at every grid threshold and returns the argmax (ties go to
/// the smallest threshold) along with the full curve.
pub fn sweep_thresholds(set: &ScoredSet, grid: &ThresholdGrid) -> Result<SweepResult, MetricsError> {
    let thresholds = grid.values();
    if thresholds.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    let curve: Vec<SweepPoint> = thresholds
        .iter()
        .map(|&threshold| {
            let (f1, precision, recall) = f1_precision_recall(confusion_at_threshold(set, threshold));
            SweepPoint { threshold, f1, precision, recall }
        })
        .collect();
    let best = curve
        .iter()
        .fold(curve[0], |acc, &pt| if pt.f1 > acc.f1 { pt } else { acc });
    Ok(SweepResult {
        best_threshold: best.threshold,
        best_f1: best.f1,
        best_precision: best.precision,
        best_recall: best.recall,
        curve,
    })
}

/// Average precision: mean, over positives ranked by descending score (ties
/// kept in input order), of the precision at each positive's rank.
pub fn average_precision(set: &ScoredSet) -> Result<f64, MetricsError> {
    let positives = set.items().iter().filter(|it| it.label.is_positive()).count();
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    // Stable sort keeps equal scores in input order.
    order.sort_by(|&a, &b| {
        set.items()[b]
            .score
            .partial_cmp(&set.items()[a].score)
            .expect("scores validated finite")
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if set.items()[idx].label.is_positive() {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Filters an utterance set down to one stutter type: items tagged with
/// `stutter_type` become the positives and items carrying no stutter tags at
/// all become the negatives; items tagged only with other types are dropped.
///
/// Returns the subset plus a flag that is true when the subset ended up with
/// zero positives.
pub fn type_subset(set: &ScoredSet, stutter_type: &str) -> Result<(ScoredSet, bool), MetricsError> {
    if !set.type_inventory.iter().any(|t| t == stutter_type) {
        return Err(MetricsError::UnknownType(stutter_type.to_owned()));
    }
    let items: Vec<ScoredItem> = set
        .items()
        .iter()
        .filter(|it| {
            it.type_tags.iter().any(|t| t == stutter_type) || it.type_tags.is_empty()
        })
        .cloned()
        .collect();
    let no_positives = !items
        .iter()
        .any(|it| it.type_tags.iter().any(|t| t == stutter_type));
    Ok((
        ScoredSet { items, type_inventory: set.type_inventory.clone() },
        no_positives,
    ))
}

/// One report block: the swept metrics of a named slice of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBlock {
    pub name: String,
    pub items: usize,
    pub positives: usize,
    pub best_threshold: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Threshold-swept metrics per partition and per stutter type, plus average
/// precision over the full set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: ReportBlock,
    pub average_precision: Option<f64>,
    pub partitions: Vec<ReportBlock>,
    pub types: Vec<ReportBlock>,
    pub config: BTreeMap<String, String>,
}

fn block(name: &str, set: &ScoredSet, grid: &ThresholdGrid) -> Result<ReportBlock, MetricsError> {
    let sweep = sweep_thresholds(set, grid)?;
    Ok(ReportBlock {
        name: name.to_owned(),
        items: set.len(),
        positives: set.items().iter().filter(|it| it.label.is_positive()).count(),
        best_threshold: sweep.best_threshold,
        f1: sweep.best_f1,
        precision: sweep.best_precision,
        recall: sweep.best_recall,
    })
}

/// Builds the full report: per-partition sweeps over `word_set`, per-type
/// sweeps over `utterance_set`, and global average precision.
///
/// Either set may be empty-capable `None`, but at least one must be present
/// and non-empty.
pub fn build_report(
    word_set: Option<&ScoredSet>,
    utterance_set: Option<&ScoredSet>,
    config: &ExperimentConfig,
) -> Result<MetricsReport, MetricsError> {
    let primary = word_set.or(utterance_set).ok_or(MetricsError::Empty)?;
    if primary.is_empty() {
        return Err(MetricsError::Empty);
    }
    let grid = &config.threshold_grid;

    let overall = block("all", primary, grid)?;
    let average_precision = match average_precision(primary) {
        Ok(ap) => Some(ap),
        Err(MetricsError::NoPositives) => None,
        Err(e) => return Err(e),
    };

    let mut partitions = Vec::new();
    if let Some(words) = word_set {
        for name in words.partitions() {
            partitions.push(block(&name, &words.filter_partition(&name), grid)?);
        }
    }

    let mut types = Vec::new();
    if let Some(utts) = utterance_set {
        for name in utts.type_inventory().to_vec() {
            let (subset, _no_pos) = type_subset(utts, &name)?;
            if !subset.is_empty() {
                types.push(block(&name, &subset, grid)?);
            }
        }
    }

    let mut cfg_map = BTreeMap::new();
    cfg_map.insert("w_ctc".into(), format!("{}", config.w_ctc));
    cfg_map.insert("learning_rate".into(), format!("{}", config.learning_rate));
    cfg_map.insert("threshold_grid".into(), config.threshold_grid.to_string());
    cfg_map.insert("margin_seconds".into(), format!("{}", config.margin_seconds));
    cfg_map.insert("data_ratio".into(), format!("{}", config.data_ratio));
    cfg_map.insert("interface_kind".into(), config.interface_kind.to_string());
    cfg_map.insert("backbone_id".into(), config.backbone_id.clone());
    cfg_map.insert("seed".into(), format!("{}", config.seed));

    Ok(MetricsReport { overall, average_precision, partitions, types, config: cfg_map })
}

impl MetricsReport {
    /// Renders the report as diffable text with a stable key order.
    pub fn to_text(&self) -> String {
        fn push_block(out: &mut String, b: &ReportBlock) {
            let _ = writeln!(out, "[{}]", b.name);
            let _ = writeln!(out, "items {}", b.items);
            let _ = writeln!(out, "positives {}", b.positives);
            let _ = writeln!(out, "best_threshold {:.6}", b.best_threshold);
            let _ = writeln!(out, "f1 {:.6}", b.f1);
            let _ = writeln!(out, "precision {:.6}", b.precision);
            let _ = writeln!(out, "recall {:.6}", b.recall);
        }
        let mut out = String::new();
        let _ = writeln!(out, "stutterkit metrics report v1");
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k} {v}");
        }
        match self.average_precision {
            Some(ap) => {
                let _ = writeln!(out, "average_precision {ap:.6}");
            }
            None => {
                let _ = writeln!(out, "average_precision undefined");
            }
        }
        push_block(&mut out, &self.overall);
        for b in &self.partitions {
            push_block(&mut out, b);
        }
        for b in &self.types {
            push_block(&mut out, b);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(scores: &[f64], pos: &[bool]) -> ScoredSet {
        let labels: Vec<Label> = pos
            .iter()
            .map(|&p| if p { Label::Positive } else { Label::Negative })
            .collect();
        ScoredSet::from_parallel(scores, &labels).unwrap()
    }

    #[test]
    fn boundary_thresholds() {
        let s = set(&[0.9, 0.4, 0.1], &[true, false, true]);
        let c0 = confusion_at_threshold(&s, 0.0);
        assert_eq!((c0.fn_, c0.tn), (0, 0));
        let chigh = confusion_at_threshold(&s, 0.95);
        assert_eq!((chigh.tp, chigh.fp), (0, 0));
    }

    #[test]
    fn confusion_hand_count() {
        let s = set(&[0.9, 0.4], &[true, false]);
        let c = confusion_at_threshold(&s, 0.5);
        assert_eq!(c, Confusion { tp: 1, fp: 0, fn_: 0, tn: 1 });
    }

    #[test]
    fn confusion_counts_partition_set() {
        let s = set(&[0.9, 0.8, 0.2, 0.1, 0.5], &[true, false, true, false, true]);
        for theta in [0.0, 0.3, 0.5, 0.8, 1.0] {
            assert_eq!(confusion_at_threshold(&s, theta).total(), 5);
        }
    }

    #[test]
    fn f1_perfect_and_degenerate() {
        assert_eq!(
            f1_precision_recall(Confusion { tp: 3, fp: 0, fn_: 0, tn: 2 }),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(
            f1_precision_recall(Confusion { tp: 0, fp: 0, fn_: 4, tn: 2 }),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn f1_hand_arithmetic() {
        let (f1, p, r) = f1_precision_recall(Confusion { tp: 2, fp: 1, fn_: 2, tn: 0 });
        assert_abs_diff_eq!(p, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f1, 4.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn sweep_uses_21_default_thresholds() {
        let s = set(&[0.9, 0.1], &[true, false]);
        let sweep = sweep_thresholds(&s, &ThresholdGrid::default()).unwrap();
        assert_eq!(sweep.curve.len(), 21);
    }

    #[test]
    fn sweep_all_positive_saturates_at_zero() {
        let s = set(&[0.3, 0.6, 0.9], &[true, true, true]);
        let sweep = sweep_thresholds(&s, &ThresholdGrid::default()).unwrap();
        assert_eq!(sweep.best_threshold, 0.0);
        assert_eq!(sweep.best_f1, 1.0);
    }

    #[test]
    fn ap_worked_example() {
        let s = set(&[0.9, 0.8, 0.3], &[true, false, true]);
        let ap = average_precision(&s).unwrap();
        assert_abs_diff_eq!(ap, (1.0 + 2.0 / 3.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ap_perfect_ranking_is_one() {
        let s = set(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]);
        assert_abs_diff_eq!(average_precision(&s).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ap_errors_without_positives() {
        let s = set(&[0.9, 0.8], &[false, false]);
        assert_eq!(average_precision(&s), Err(MetricsError::NoPositives));
    }

    #[test]
    fn type_subset_rule() {
        let items = vec![
            ScoredItem { score: 0.9, label: Label::Positive, partition: None, type_tags: vec!["block".into()] },
            ScoredItem { score: 0.7, label: Label::Positive, partition: None, type_tags: vec!["prolongation".into()] },
            ScoredItem { score: 0.1, label: Label::Negative, partition: None, type_tags: vec![] },
        ];
        let s = ScoredSet::new(items).unwrap();

        let (blocks, no_pos) = type_subset(&s, "block").unwrap();
        assert!(!no_pos);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks.items()[0].score, 0.9);
        assert_eq!(blocks.items()[1].score, 0.1);

        let (pro, _) = type_subset(&s, "prolongation").unwrap();
        assert_eq!(pro.len(), 2);
        assert_eq!(pro.items()[0].score, 0.7);

        let (interj, empty_flag) = type_subset(&s, "interjection").unwrap();
        assert!(empty_flag);
        assert_eq!(interj.len(), 1);

        assert_eq!(
            type_subset(&s, "mumbling").unwrap_err(),
            MetricsError::UnknownType("mumbling".into())
        );
    }

    #[test]
    fn report_minimal_and_three_partition_layout() {
        let cfg = ExperimentConfig::default();
        let one = set(&[0.9, 0.2], &[true, false]);
        let report = build_report(Some(&one), None, &cfg).unwrap();
        assert!(report.average_precision.is_some());
        assert!(report.partitions.is_empty());

        let mut items = Vec::new();
        for (i, part) in ["stuttering_bilinguals", "nonstuttering_bilinguals", "fluencybank"]
            .iter()
            .enumerate()
        {
            items.push(ScoredItem {
                score: 0.8,
                label: Label::Positive,
                partition: Some(part.to_string()),
                type_tags: vec![],
            });
            items.push(ScoredItem {
                score: 0.1 * (i as f64 + 1.0),
                label: Label::Negative,
                partition: Some(part.to_string()),
                type_tags: vec![],
            });
        }
        let words = ScoredSet::new(items).unwrap();
        let report = build_report(Some(&words), None, &cfg).unwrap();
        assert_eq!(report.partitions.len(), 3);
        let text = report.to_text();
        assert!(text.contains("[fluencybank]"));
        assert!(text.contains("average_precision"));
    }

    #[test]
    fn report_rejects_empty_input() {
        let cfg = ExperimentConfig::default();
        let empty = ScoredSet::new(vec![]).unwrap();
        assert_eq!(build_report(Some(&empty), None, &cfg), Err(MetricsError::Empty));
        assert_eq!(build_report(None, None, &cfg), Err(MetricsError::Empty));
    }
}
