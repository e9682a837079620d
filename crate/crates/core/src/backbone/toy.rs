//! A deterministic, randomly initialized, frozen backbone with the same
//! interface as real checkpoints, small enough that the full pipeline runs
//! without multi-gigabyte downloads.
//!
//! Geometry mirrors the WavLM front end: 16 kHz input, a strided window
//! featurizer with a 400-sample receptive field and 320-sample hop (50 Hz
//! frame rate), then a stack of pre-LN transformer layers.

use ndarray::{concatenate, Array1, Array2, Axis};

use super::{Backbone, BackboneDescriptor, BackboneError, LayerActivations};
use crate::audio::Waveform;
use crate::rng::{fnv1a64, SeededRng};
use crate::types::FrameSequence;

const SAMPLE_RATE: u32 = 16_000;
const WINDOW: usize = 400;
const HOP: usize = 320;
const LN_EPS: f64 = 1e-5;

pub(super) fn toy_descriptor(seed: u64, num_layers: usize, hidden_dim: usize) -> BackboneDescriptor {
    BackboneDescriptor {
        backbone_id: format!("toy://{seed}/{num_layers}/{hidden_dim}"),
        num_layers,
        hidden_dim,
        frame_rate_hz: SAMPLE_RATE as f64 / HOP as f64,
        sample_rate_hz: SAMPLE_RATE,
        checkpoint_uri: format!("toy://{seed}/{num_layers}/{hidden_dim}"),
    }
}

fn random_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.normal() * scale)
}

struct ToyLayer {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    ln1_gain: Array1<f64>,
    ln1_bias: Array1<f64>,
    ff1: Array2<f64>,
    ff1_bias: Array1<f64>,
    ff2: Array2<f64>,
    ff2_bias: Array1<f64>,
    ln2_gain: Array1<f64>,
    ln2_bias: Array1<f64>,
}

pub struct ToyBackbone {
    descriptor: BackboneDescriptor,
    conv_weight: Array2<f64>,
    conv_bias: Array1<f64>,
    layers: Vec<ToyLayer>,
    num_heads: usize,
}

impl ToyBackbone {
    pub fn new(seed: u64, num_layers: usize, hidden_dim: usize) -> Self {
        assert!(num_layers >= 1 && hidden_dim >= 1);
        let mut rng = SeededRng::new(seed).derive_named("toy-backbone");
        let d = hidden_dim;
        let scale = 1.0 / (d as f64).sqrt();

        let conv_weight = random_matrix(&mut rng, d, WINDOW, 1.0 / (WINDOW as f64).sqrt());
        let conv_bias = Array1::from_shape_fn(d, |_| rng.normal() * 0.1);

        let ff_dim = 2 * d;
        let layers = (0..num_layers)
            .map(|_| ToyLayer {
                wq: random_matrix(&mut rng, d, d, scale),
                wk: random_matrix(&mut rng, d, d, scale),
                wv: random_matrix(&mut rng, d, d, scale),
                wo: random_matrix(&mut rng, d, d, scale * 0.5),
                ln1_gain: Array1::from_shape_fn(d, |_| 1.0 + rng.normal() * 0.02),
                ln1_bias: Array1::from_shape_fn(d, |_| rng.normal() * 0.02),
                ff1: random_matrix(&mut rng, d, ff_dim, scale),
                ff1_bias: Array1::from_shape_fn(ff_dim, |_| rng.normal() * 0.02),
                ff2: random_matrix(&mut rng, ff_dim, d, 0.5 / (ff_dim as f64).sqrt()),
                ff2_bias: Array1::from_shape_fn(d, |_| rng.normal() * 0.02),
                ln2_gain: Array1::from_shape_fn(d, |_| 1.0 + rng.normal() * 0.02),
                ln2_bias: Array1::from_shape_fn(d, |_| rng.normal() * 0.02),
            })
            .collect();

        let num_heads = if d % 4 == 0 {
            4
        } else if d % 2 == 0 {
            2
        } else {
            1
        };
        Self {
            descriptor: toy_descriptor(seed, num_layers, hidden_dim),
            conv_weight,
            conv_bias,
            layers,
            num_heads,
        }
    }

    fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> Array2<f64> {
        let d = x.ncols() as f64;
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * gain[j] + bias[j];
            }
        }
        out
    }

    fn attention(&self, layer: &ToyLayer, x: &Array2<f64>) -> Array2<f64> {
        let t = x.nrows();
        let d = x.ncols();
        let dh = d / self.num_heads;
        let q = x.dot(&layer.wq);
        let k = x.dot(&layer.wk);
        let v = x.dot(&layer.wv);

        let mut heads = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(ndarray::s![.., cols.clone()]);
            let kh = k.slice(ndarray::s![.., cols.clone()]);
            let vh = v.slice(ndarray::s![.., cols]);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|s| s / (dh as f64).sqrt());
            // Row-wise softmax.
            for mut row in scores.rows_mut() {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in row.iter_mut() {
                    *s /= sum;
                }
            }
            heads.push(scores.dot(&vh));
        }
        let views: Vec<_> = heads.iter().map(|h| h.view()).collect();
        let cat = concatenate(Axis(1), &views).expect("head dims sum to D");
        debug_assert_eq!(cat.nrows(), t);
        cat.dot(&layer.wo)
    }

    fn feed_forward(layer: &ToyLayer, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.dot(&layer.ff1);
        for mut row in h.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v + layer.ff1_bias[j]).tanh();
            }
        }
        let mut out = h.dot(&layer.ff2);
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += layer.ff2_bias[j];
            }
        }
        out
    }
}

impl Backbone for ToyBackbone {
    fn descriptor(&self) -> &BackboneDescriptor {
        &self.descriptor
    }

    fn extract_conv_features(&self, waveform: &Waveform) -> Result<FrameSequence, BackboneError> {
        if waveform.samples.is_empty() {
            return Err(BackboneError::EmptyWaveform);
        }
        if waveform.sample_rate_hz != self.descriptor.sample_rate_hz {
            return Err(BackboneError::SampleRateMismatch {
                expected: self.descriptor.sample_rate_hz,
                got: waveform.sample_rate_hz,
            });
        }
        let n = waveform.samples.len();
        let t = if n < WINDOW { 0 } else { (n - WINDOW) / HOP + 1 };
        let d = self.descriptor.hidden_dim;
        let mut frames = Array2::<f64>::zeros((t, d));
        for i in 0..t {
            let window = &waveform.samples[i * HOP..i * HOP + WINDOW];
            for (row, weights) in self.conv_weight.rows().into_iter().enumerate() {
                let mut acc = self.conv_bias[row];
                for (w, s) in weights.iter().zip(window) {
                    acc += w * s;
                }
                frames[[i, row]] = acc.tanh();
            }
        }
        Ok(FrameSequence::new(frames, self.descriptor.frame_rate_hz)?)
    }

    fn run_transformer(&self, frames: &FrameSequence) -> Result<LayerActivations, BackboneError> {
        if frames.is_empty() {
            return Err(BackboneError::EmptyFrames);
        }
        if frames.dim() != self.descriptor.hidden_dim {
            return Err(BackboneError::DimensionMismatch {
                expected: self.descriptor.hidden_dim,
                got: frames.dim(),
            });
        }
        let mut stack = Vec::with_capacity(self.layers.len() + 1);
        let mut x = frames.frames().clone();
        stack.push(x.clone());
        for layer in &self.layers {
            let normed = Self::layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias);
            x = &x + &self.attention(layer, &normed);
            let normed = Self::layer_norm(&x, &layer.ln2_gain, &layer.ln2_bias);
            x = &x + &Self::feed_forward(layer, &normed);
            stack.push(x.clone());
        }
        LayerActivations::new(stack, frames.frame_rate_hz())
    }

    fn parameter_checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        let mut push = |m: &[f64]| {
            for v in m {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        };
        push(self.conv_weight.as_slice().unwrap());
        push(self.conv_bias.as_slice().unwrap());
        for l in &self.layers {
            for m in [&l.wq, &l.wk, &l.wv, &l.wo, &l.ff1, &l.ff2] {
                push(m.as_slice().unwrap());
            }
            for v in [&l.ln1_gain, &l.ln1_bias, &l.ff1_bias, &l.ff2_bias, &l.ln2_gain, &l.ln2_bias]
            {
                push(v.as_slice().unwrap());
            }
        }
        fnv1a64(&bytes)
    }
}
