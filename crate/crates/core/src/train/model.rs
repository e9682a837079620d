//! The trainable part of the pipeline: interface plus heads. The backbone
//! never appears here, so its parameters cannot reach the optimizer.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::heads::{DetHeadGrads, DetectionHead, PhonemeHead, PhonemeHeadGrads};
use super::loss::{ctc_loss_and_grad, finetune_loss, frame_disfluency_loss};
use super::TrainError;
use crate::backbone::LayerActivations;
use crate::config::InterfaceKind;
use crate::interface::{Interface, InterfaceGrads};
use crate::rng::SeededRng;
use crate::types::{FrameLabelSequence, FramePredictionSequence, Label, PhonemeSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub interface: Interface,
    pub detection_head: DetectionHead,
    /// Present only for pretraining runs that use the CTC auxiliary loss.
    pub phoneme_head: Option<PhonemeHead>,
}

/// Gradients in the same parameter order as [`Model::param_slices_mut`].
pub struct ModelGrads {
    pub interface: InterfaceGrads,
    pub detection_head: DetHeadGrads,
    pub phoneme_head: Option<PhonemeHeadGrads>,
}

impl ModelGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.interface.slices();
        out.extend(self.detection_head.slices());
        if let Some(p) = &self.phoneme_head {
            out.extend(p.slices());
        }
        out
    }
}

impl Model {
    pub fn build(
        kind: InterfaceKind,
        stack_size: usize,
        dim: usize,
        phoneme_vocab: Option<usize>,
        rng: &mut SeededRng,
    ) -> Result<Self, TrainError> {
        let interface = Interface::build(kind, stack_size, dim, rng)?;
        let detection_head = DetectionHead::new(dim, rng);
        let phoneme_head = phoneme_vocab.map(|v| PhonemeHead::new(dim, v, rng));
        Ok(Self { interface, detection_head, phoneme_head })
    }

    /// Frame predictions for one utterance's activations.
    pub fn predict(&self, acts: &LayerActivations) -> Result<FramePredictionSequence, TrainError> {
        let x = self.interface.aggregate(acts)?;
        Ok(self.detection_head.predict(x.frames()))
    }

    /// Utterance score: the maximum positive-class probability over frames.
    pub fn utterance_score(&self, acts: &LayerActivations) -> Result<f64, TrainError> {
        let preds = self.predict(acts)?;
        let t = preds.argmax_positive().ok_or(TrainError::EmptySequence)?;
        Ok(preds.positive(t))
    }

    /// Pretrain objective `L_dis + w_ctc * L_ctc` with gradients for every
    /// trainable parameter. The CTC term is skipped when the model carries
    /// no phoneme head or `w_ctc == 0`.
    pub fn pretrain_loss_and_grads(
        &self,
        acts: &LayerActivations,
        labels: &FrameLabelSequence,
        target: &PhonemeSequence,
        w_ctc: f64,
    ) -> Result<(f64, ModelGrads), TrainError> {
        let t_len = acts.len();
        if t_len == 0 {
            return Err(TrainError::EmptySequence);
        }
        if labels.len() != t_len {
            return Err(TrainError::LengthMismatch { left: t_len, right: labels.len() });
        }
        let (x, iface_cache) = self.interface.forward_cached(acts)?;

        let det_cache = self.detection_head.forward(x.frames());
        let preds = frame_preds(&det_cache.probs);
        let dis = frame_disfluency_loss(&preds, labels)?;
        // d L_dis / d logits = (probs - one_hot) / T
        let mut d_logits = det_cache.probs.clone();
        for (mut row, label) in d_logits.rows_mut().into_iter().zip(labels.iter()) {
            let (p, n) = label.one_hot();
            row[0] -= p;
            row[1] -= n;
            row[0] /= t_len as f64;
            row[1] /= t_len as f64;
        }
        let (det_grads, mut d_x) = self.detection_head.backward(&det_cache, &d_logits);

        let mut total = dis;
        let mut phoneme_grads = None;
        if w_ctc > 0.0 {
            if let Some(head) = &self.phoneme_head {
                let (log_probs, cache) = head.forward(x.frames());
                let (ctc, mut d_log_probs) = ctc_loss_and_grad(&log_probs, target)?;
                total += w_ctc * ctc;
                d_log_probs.mapv_inplace(|g| g * w_ctc);
                let (grads, d_x_ctc) = head.backward(&cache, &d_log_probs);
                d_x += &d_x_ctc;
                phoneme_grads = Some(grads);
            }
        }

        let iface_grads = self.interface.backward(acts, &iface_cache, &d_x);
        Ok((
            total,
            ModelGrads {
                interface: iface_grads,
                detection_head: det_grads,
                phoneme_head: phoneme_grads,
            },
        ))
    }

    /// Weak-label finetune objective: cross entropy at the frame with the
    /// largest positive prediction. The phoneme head is untouched.
    pub fn finetune_loss_and_grads(
        &self,
        acts: &LayerActivations,
        utterance_label: Label,
    ) -> Result<(f64, ModelGrads), TrainError> {
        let (x, iface_cache) = self.interface.forward_cached(acts)?;
        let det_cache = self.detection_head.forward(x.frames());
        let preds = frame_preds(&det_cache.probs);
        let loss = finetune_loss(&preds, utterance_label)?;
        let t_star = preds.argmax_positive().expect("non-empty checked by finetune_loss");

        let mut d_logits = Array2::<f64>::zeros((preds.len(), 2));
        let (p, n) = utterance_label.one_hot();
        d_logits[[t_star, 0]] = det_cache.probs[[t_star, 0]] - p;
        d_logits[[t_star, 1]] = det_cache.probs[[t_star, 1]] - n;

        let (det_grads, d_x) = self.detection_head.backward(&det_cache, &d_logits);
        let iface_grads = self.interface.backward(acts, &iface_cache, &d_x);
        Ok((
            loss,
            ModelGrads {
                interface: iface_grads,
                detection_head: det_grads,
                phoneme_head: None,
            },
        ))
    }

    /// Trainable parameters in the stable order the optimizer and the
    /// gradient structs share: interface, detection head, phoneme head.
    ///
    /// When `with_phoneme` is false the phoneme head is excluded (finetuning
    /// leaves it frozen in place).
    pub fn param_slices_mut(&mut self, with_phoneme: bool) -> Vec<&mut [f64]> {
        let mut out = self.interface.param_slices_mut();
        out.extend(self.detection_head.param_slices_mut());
        if with_phoneme {
            if let Some(p) = &mut self.phoneme_head {
                out.extend(p.param_slices_mut());
            }
        }
        out
    }

    pub fn param_slices(&self, with_phoneme: bool) -> Vec<&[f64]> {
        let mut out = self.interface.param_slices();
        out.extend(self.detection_head.param_slices());
        if with_phoneme {
            if let Some(p) = &self.phoneme_head {
                out.extend(p.param_slices());
            }
        }
        out
    }

    pub fn param_count(&self, with_phoneme: bool) -> usize {
        self.param_slices(with_phoneme).iter().map(|s| s.len()).sum()
    }
}

fn frame_preds(probs: &Array2<f64>) -> FramePredictionSequence {
    let rows: Vec<[f64; 2]> = probs.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    FramePredictionSequence::new(rows).expect("softmax rows are valid")
}
