//! The three training losses: per-frame cross entropy, the auxiliary CTC
//! phoneme loss, and the weak-label utterance loss that reduces frames by
//! their maximum positive prediction.

use ndarray::Array2;

use super::TrainError;
use crate::types::{FrameLabelSequence, FramePredictionSequence, Label, PhonemeSequence};

/// Mean over frames of the cross entropy between predictions and one-hot
/// labels: `-(1/T) * sum_i log o_i[true class]`.
pub fn frame_disfluency_loss(
    preds: &FramePredictionSequence,
    labels: &FrameLabelSequence,
) -> Result<f64, TrainError> {
    if preds.is_empty() {
        return Err(TrainError::EmptySequence);
    }
    if preds.len() != labels.len() {
        return Err(TrainError::LengthMismatch { left: preds.len(), right: labels.len() });
    }
    let total: f64 = preds
        .rows()
        .iter()
        .zip(labels.iter())
        .map(|(row, label)| {
            let p = match label {
                Label::Positive => row[0],
                Label::Negative => row[1],
            };
            -p.ln()
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Weak-label loss: picks `t' = argmax_i o_p_i` (ties to the lowest index)
/// and scores the cross entropy of frame `t'` against the utterance label.
pub fn finetune_loss(
    preds: &FramePredictionSequence,
    utterance_label: Label,
) -> Result<f64, TrainError> {
    let t = preds.argmax_positive().ok_or(TrainError::EmptySequence)?;
    let row = preds.rows()[t];
    let p = match utterance_label {
        Label::Positive => row[0],
        Label::Negative => row[1],
    };
    Ok(-p.ln())
}

/// `L_pretrain = L_dis + w_ctc * L_ctc`, the exact weighted sum.
pub fn pretrain_loss(
    preds: &FramePredictionSequence,
    labels: &FrameLabelSequence,
    log_probs: &Array2<f64>,
    target: &PhonemeSequence,
    w_ctc: f64,
) -> Result<f64, TrainError> {
    Ok(frame_disfluency_loss(preds, labels)? + w_ctc * ctc_phoneme_loss(log_probs, target)?)
}

/// Blank-interleaved target: `[B, t1, B, t2, ..., B]`.
fn interleave_blanks(target: &[usize]) -> Vec<usize> {
    let mut l = Vec::with_capacity(2 * target.len() + 1);
    l.push(PhonemeSequence::BLANK);
    for &t in target {
        l.push(t);
        l.push(PhonemeSequence::BLANK);
    }
    l
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Frames needed for a target: its length plus one per adjacent repeat.
fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

struct CtcForward {
    log_alpha: Array2<f64>,
    /// Per state: the log-sum of its predecessors, cached for the backward
    /// pass (t = 0 rows hold 0.0 placeholders).
    log_transition: Array2<f64>,
    states: Vec<usize>,
    loss: f64,
}

fn ctc_forward(log_probs: &Array2<f64>, target: &PhonemeSequence) -> Result<CtcForward, TrainError> {
    let t_len = log_probs.nrows();
    if t_len == 0 {
        return Err(TrainError::EmptySequence);
    }
    if log_probs.ncols() != target.vocab_size() {
        return Err(TrainError::VocabMismatch {
            log_probs: log_probs.ncols(),
            target: target.vocab_size(),
        });
    }
    let needed = min_frames(target.symbols());
    if t_len < needed {
        return Err(TrainError::InfeasibleTarget {
            target_len: target.len(),
            min_frames: needed,
            frames: t_len,
        });
    }

    let states = interleave_blanks(target.symbols());
    let s_len = states.len();
    let mut log_alpha = Array2::from_elem((t_len, s_len), f64::NEG_INFINITY);
    let mut log_transition = Array2::from_elem((t_len, s_len), 0.0);

    log_alpha[[0, 0]] = log_probs[[0, states[0]]];
    if s_len > 1 {
        log_alpha[[0, 1]] = log_probs[[0, states[1]]];
    }

    for t in 1..t_len {
        for s in 0..s_len {
            let mut terms = vec![log_alpha[[t - 1, s]]];
            if s >= 1 {
                terms.push(log_alpha[[t - 1, s - 1]]);
            }
            let can_skip =
                s >= 2 && states[s] != PhonemeSequence::BLANK && states[s] != states[s - 2];
            if can_skip {
                terms.push(log_alpha[[t - 1, s - 2]]);
            }
            let m = log_sum_exp(&terms);
            log_transition[[t, s]] = m;
            log_alpha[[t, s]] = log_probs[[t, states[s]]] + m;
        }
    }

    let mut finals = vec![log_alpha[[t_len - 1, s_len - 1]]];
    if s_len > 1 {
        finals.push(log_alpha[[t_len - 1, s_len - 2]]);
    }
    let log_likelihood = log_sum_exp(&finals);
    Ok(CtcForward { log_alpha, log_transition, states, loss: -log_likelihood })
}

/// CTC negative log-likelihood of `target` under per-frame log
/// distributions (`T x vocab`, blank at index 0), via the forward algorithm
/// over blank-interleaved targets.
pub fn ctc_phoneme_loss(
    log_probs: &Array2<f64>,
    target: &PhonemeSequence,
) -> Result<f64, TrainError> {
    Ok(ctc_forward(log_probs, target)?.loss)
}

/// CTC loss plus its gradient w.r.t. the log probabilities, by reverse-mode
/// differentiation of the forward recursion.
pub fn ctc_loss_and_grad(
    log_probs: &Array2<f64>,
    target: &PhonemeSequence,
) -> Result<(f64, Array2<f64>), TrainError> {
    let fwd = ctc_forward(log_probs, target)?;
    let t_len = log_probs.nrows();
    let s_len = fwd.states.len();
    let mut d_alpha = Array2::<f64>::zeros((t_len, s_len));
    let mut d_log_probs = Array2::<f64>::zeros((log_probs.nrows(), log_probs.ncols()));

    // Seed with the derivative of -logsumexp over the two final states.
    let log_likelihood = -fwd.loss;
    if log_likelihood == f64::NEG_INFINITY {
        // Infinite loss: no feasible path mass; gradient is undefined, keep 0.
        return Ok((fwd.loss, d_log_probs));
    }
    d_alpha[[t_len - 1, s_len - 1]] =
        -(fwd.log_alpha[[t_len - 1, s_len - 1]] - log_likelihood).exp();
    if s_len > 1 {
        d_alpha[[t_len - 1, s_len - 2]] =
            -(fwd.log_alpha[[t_len - 1, s_len - 2]] - log_likelihood).exp();
    }

    for t in (1..t_len).rev() {
        for s in 0..s_len {
            let g = d_alpha[[t, s]];
            if g == 0.0 {
                continue;
            }
            d_log_probs[[t, fwd.states[s]]] += g;
            let m = fwd.log_transition[[t, s]];
            if m == f64::NEG_INFINITY {
                continue;
            }
            // Each predecessor contributes softmax weight exp(alpha - m).
            d_alpha[[t - 1, s]] += g * (fwd.log_alpha[[t - 1, s]] - m).exp();
            if s >= 1 {
                d_alpha[[t - 1, s - 1]] += g * (fwd.log_alpha[[t - 1, s - 1]] - m).exp();
            }
            let can_skip = s >= 2
                && fwd.states[s] != PhonemeSequence::BLANK
                && fwd.states[s] != fwd.states[s - 2];
            if can_skip {
                d_alpha[[t - 1, s - 2]] += g * (fwd.log_alpha[[t - 1, s - 2]] - m).exp();
            }
        }
    }
    d_log_probs[[0, fwd.states[0]]] += d_alpha[[0, 0]];
    if s_len > 1 {
        d_log_probs[[0, fwd.states[1]]] += d_alpha[[0, 1]];
    }

    Ok((fwd.loss, d_log_probs))
}
