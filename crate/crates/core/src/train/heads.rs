//! Prediction heads on top of the aggregated interface output.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::types::FramePredictionSequence;

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize) -> Array2<f64> {
    let scale = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.normal() * scale)
}

fn add_bias_tanh(x: &mut Array2<f64>, bias: &Array1<f64>) {
    for mut row in x.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v + bias[j]).tanh();
        }
    }
}

fn add_bias(x: &mut Array2<f64>, bias: &Array1<f64>) {
    for mut row in x.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += bias[j];
        }
    }
}

/// Stuttering detection head: two tanh layers and a 2-way softmax output,
/// classifying every frame as stuttered or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionHead {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    w3: Array2<f64>,
    b3: Array1<f64>,
}

/// Forward state for [`DetectionHead::backward`].
pub struct DetCache {
    x: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    /// Softmax probabilities, `T x 2`.
    pub probs: Array2<f64>,
}

impl DetectionHead {
    pub fn new(dim: usize, rng: &mut SeededRng) -> Self {
        Self {
            w1: random_matrix(rng, dim, dim),
            b1: Array1::zeros(dim),
            w2: random_matrix(rng, dim, dim),
            b2: Array1::zeros(dim),
            w3: random_matrix(rng, dim, 2),
            b3: Array1::zeros(2),
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> DetCache {
        let mut h1 = x.dot(&self.w1);
        add_bias_tanh(&mut h1, &self.b1);
        let mut h2 = h1.dot(&self.w2);
        add_bias_tanh(&mut h2, &self.b2);
        let mut z = h2.dot(&self.w3);
        add_bias(&mut z, &self.b3);
        // rows of z -> softmax
        let mut probs = z;
        for mut row in probs.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        DetCache { x: x.clone(), h1, h2, probs }
    }

    /// Per-frame positive/negative probabilities.
    pub fn predict(&self, x: &Array2<f64>) -> FramePredictionSequence {
        let cache = self.forward(x);
        let rows: Vec<[f64; 2]> =
            cache.probs.rows().into_iter().map(|r| [r[0], r[1]]).collect();
        FramePredictionSequence::new(rows).expect("softmax rows are valid probability pairs")
    }

    /// Backprop from the gradient at the pre-softmax logits. Returns the
    /// parameter gradients and the gradient at the input.
    pub fn backward(&self, cache: &DetCache, d_logits: &Array2<f64>) -> (DetHeadGrads, Array2<f64>) {
        let dw3 = cache.h2.t().dot(d_logits);
        let db3 = d_logits.sum_axis(Axis(0));
        let mut da2 = d_logits.dot(&self.w3.t());
        da2.zip_mut_with(&cache.h2, |g, &h| *g *= 1.0 - h * h);
        let dw2 = cache.h1.t().dot(&da2);
        let db2 = da2.sum_axis(Axis(0));
        let mut da1 = da2.dot(&self.w2.t());
        da1.zip_mut_with(&cache.h1, |g, &h| *g *= 1.0 - h * h);
        let dw1 = cache.x.t().dot(&da1);
        let db1 = da1.sum_axis(Axis(0));
        let dx = da1.dot(&self.w1.t());
        (DetHeadGrads { dw1, db1, dw2, db2, dw3, db3 }, dx)
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.w3.as_slice().unwrap(),
            self.b3.as_slice().unwrap(),
        ]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.w3.as_slice_mut().unwrap(),
            self.b3.as_slice_mut().unwrap(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct DetHeadGrads {
    dw1: Array2<f64>,
    db1: Array1<f64>,
    dw2: Array2<f64>,
    db2: Array1<f64>,
    dw3: Array2<f64>,
    db3: Array1<f64>,
}

impl DetHeadGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![
            self.dw1.as_slice().unwrap(),
            self.db1.as_slice().unwrap(),
            self.dw2.as_slice().unwrap(),
            self.db2.as_slice().unwrap(),
            self.dw3.as_slice().unwrap(),
            self.db3.as_slice().unwrap(),
        ]
    }
}

/// Phoneme prediction head: a linear projection to the phoneme vocabulary
/// (blank included) with per-frame log-softmax output. Used only while
/// pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeHead {
    w: Array2<f64>,
    b: Array1<f64>,
}

pub struct PhonemeCache {
    x: Array2<f64>,
    softmax: Array2<f64>,
}

impl PhonemeHead {
    pub fn new(dim: usize, vocab_size: usize, rng: &mut SeededRng) -> Self {
        Self { w: random_matrix(rng, dim, vocab_size), b: Array1::zeros(vocab_size) }
    }

    pub fn vocab_size(&self) -> usize {
        self.w.ncols()
    }

    /// Per-frame log distributions (`T x vocab`).
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, PhonemeCache) {
        let mut z = x.dot(&self.w);
        add_bias(&mut z, &self.b);
        let mut log_probs = z;
        let mut softmax = Array2::zeros((log_probs.nrows(), log_probs.ncols()));
        for (mut row, mut soft) in log_probs.rows_mut().into_iter().zip(softmax.rows_mut()) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (v, s) in row.iter_mut().zip(soft.iter_mut()) {
                *v -= lse;
                *s = v.exp();
            }
        }
        (log_probs, PhonemeCache { x: x.clone(), softmax })
    }

    /// Backprop from the gradient at the log probabilities.
    pub fn backward(
        &self,
        cache: &PhonemeCache,
        d_log_probs: &Array2<f64>,
    ) -> (PhonemeHeadGrads, Array2<f64>) {
        // d z = d logp - softmax * rowsum(d logp)
        let rowsum = d_log_probs.sum_axis(Axis(1));
        let mut dz = d_log_probs.clone();
        for ((mut row, soft), &rs) in
            dz.rows_mut().into_iter().zip(cache.softmax.rows()).zip(rowsum.iter())
        {
            for (v, s) in row.iter_mut().zip(soft.iter()) {
                *v -= s * rs;
            }
        }
        let dw = cache.x.t().dot(&dz);
        let db = dz.sum_axis(Axis(0));
        let dx = dz.dot(&self.w.t());
        (PhonemeHeadGrads { dw, db }, dx)
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice().unwrap(), self.b.as_slice().unwrap()]
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

#[derive(Debug, Clone)]
pub struct PhonemeHeadGrads {
    dw: Array2<f64>,
    db: Array1<f64>,
}

impl PhonemeHeadGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![self.dw.as_slice().unwrap(), self.db.as_slice().unwrap()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_head_outputs_valid_distributions() {
        let mut rng = SeededRng::new(1);
        let head = DetectionHead::new(6, &mut rng);
        let x = Array2::from_shape_fn((10, 6), |_| rng.normal());
        let preds = head.predict(&x);
        assert_eq!(preds.len(), 10);
        for row in preds.rows() {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phoneme_head_outputs_log_distributions() {
        let mut rng = SeededRng::new(2);
        let head = PhonemeHead::new(6, 5, &mut rng);
        let x = Array2::from_shape_fn((7, 6), |_| rng.normal());
        let (logp, _) = head.forward(&x);
        for row in logp.rows() {
            let sum: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }
}
