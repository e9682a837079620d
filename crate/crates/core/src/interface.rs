//! Aggregation of backbone layer activations into a single frame sequence.
//!
//! Three strategies: hierarchical convolution over the layer axis, a
//! softmax-normalized learnable weighted sum, and single-layer selection.
//! All three preserve the time axis exactly. The hierarchical convolution
//! reduces the stack as a binary tree: each level merges adjacent layer
//! pairs with a shared learned kernel (width 2 over the layer axis) and a
//! pointwise tanh, duplicating the last layer on odd counts.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::LayerActivations;
use crate::config::InterfaceKind;
use crate::rng::SeededRng;
use crate::types::{FrameSequence, TypeError};

#[derive(Debug, Error, PartialEq)]
pub enum InterfaceError {
    #[error("expected {expected} layer weights, got {got}")]
    WeightCountMismatch { expected: usize, got: usize },
    #[error("layer index {index} out of range; the stack has layers 0..={max}")]
    LayerOutOfRange { index: usize, max: usize },
    #[error("interface was built for dim {expected}, activations have dim {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Type(#[from] TypeError),
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&w| (w - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Learnable per-layer weights, stored raw and softmax-normalized at use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSumParams {
    raw: Vec<f64>,
}

impl WeightedSumParams {
    /// Uniform initialization: every layer starts with equal weight.
    pub fn new(num_layers_plus_one: usize) -> Self {
        Self { raw: vec![0.0; num_layers_plus_one] }
    }

    pub fn from_raw(raw: Vec<f64>) -> Self {
        Self { raw }
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> Vec<f64> {
        softmax(&self.raw)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// `output[t] = sum_k softmax(w)_k * acts[k][t]`.
pub fn weighted_sum_aggregate(
    acts: &LayerActivations,
    params: &WeightedSumParams,
) -> Result<FrameSequence, InterfaceError> {
    if params.len() != acts.depth() {
        return Err(InterfaceError::WeightCountMismatch {
            expected: acts.depth(),
            got: params.len(),
        });
    }
    let weights = params.normalized();
    let mut out = Array2::<f64>::zeros((acts.len(), acts.dim()));
    for (k, layer) in acts.layers().iter().enumerate() {
        out.scaled_add(weights[k], layer);
    }
    Ok(FrameSequence::new(out, acts.frame_rate_hz())?)
}

/// Gradient of a scalar loss w.r.t. the raw weighted-sum weights, given the
/// loss gradient at the aggregated output.
pub fn weighted_sum_backward(
    acts: &LayerActivations,
    params: &WeightedSumParams,
    d_out: &Array2<f64>,
) -> Vec<f64> {
    let s = params.normalized();
    let d_s: Vec<f64> = acts
        .layers()
        .iter()
        .map(|layer| (layer * d_out).sum())
        .collect();
    let dot: f64 = s.iter().zip(&d_s).map(|(a, b)| a * b).sum();
    s.iter().zip(&d_s).map(|(&sk, &dk)| sk * (dk - dot)).collect()
}

/// The softmax-normalized weight vector, e.g. for plotting the learned
/// layer-weight distribution.
pub fn export_learned_weights(params: &WeightedSumParams) -> Vec<f64> {
    params.normalized()
}

/// Renders normalized weights as a plain text column, one value per line.
pub fn weights_text_column(params: &WeightedSumParams) -> String {
    params
        .normalized()
        .iter()
        .map(|w| format!("{w:.17e}\n"))
        .collect()
}

/// One merge level: a shared kernel of width 2 over the layer axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeLevel {
    /// `(2D, D)` kernel applied to the concatenated layer pair.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub dim: usize,
}

impl MergeLevel {
    fn weight_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((2 * self.dim, self.dim), self.weight.clone())
            .expect("stored shape is consistent")
    }
}

/// Hierarchical convolution parameters: `ceil(log2(stack))` merge levels
/// (one level for the degenerate single-layer stack).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HConvParams {
    pub levels: Vec<MergeLevel>,
    pub dim: usize,
    pub stack_size: usize,
}

/// Number of merge levels the ceil-halving recurrence needs for a stack.
pub fn hconv_depth(stack_size: usize) -> usize {
    if stack_size <= 1 {
        return 1;
    }
    let mut n = stack_size;
    let mut depth = 0;
    while n > 1 {
        n = n.div_ceil(2);
        depth += 1;
    }
    depth
}

impl HConvParams {
    pub fn new(stack_size: usize, dim: usize, rng: &mut SeededRng) -> Self {
        let scale = 1.0 / (2.0 * dim as f64).sqrt();
        let levels = (0..hconv_depth(stack_size))
            .map(|_| MergeLevel {
                weight: (0..2 * dim * dim).map(|_| rng.normal() * scale).collect(),
                bias: vec![0.0; dim],
                dim,
            })
            .collect();
        Self { levels, dim, stack_size }
    }
}

/// Per-level forward state needed for the backward pass.
pub struct HConvCache {
    /// The layer stacks entering each level.
    inputs: Vec<Vec<Array2<f64>>>,
    /// Post-tanh outputs of each level's pairs.
    outputs: Vec<Vec<Array2<f64>>>,
}

fn hconv_forward(
    acts_stack: &[Array2<f64>],
    params: &HConvParams,
) -> Result<(Array2<f64>, HConvCache), InterfaceError> {
    let mut current: Vec<Array2<f64>> = acts_stack.to_vec();
    let mut cache = HConvCache { inputs: Vec::new(), outputs: Vec::new() };
    for level in &params.levels {
        let w = level.weight_matrix();
        let pairs = current.len().div_ceil(2);
        let mut next = Vec::with_capacity(pairs);
        for j in 0..pairs {
            let a = &current[2 * j];
            let b = &current[(2 * j + 1).min(current.len() - 1)];
            let mut z = a.dot(&w.slice(ndarray::s![..params.dim, ..]));
            z += &b.dot(&w.slice(ndarray::s![params.dim.., ..]));
            for mut row in z.rows_mut() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = (*v + level.bias[c]).tanh();
                }
            }
            next.push(z);
        }
        cache.inputs.push(current);
        cache.outputs.push(next.clone());
        current = next;
    }
    debug_assert_eq!(current.len(), 1, "the merge tree terminates in one sequence");
    let out = current.pop().expect("non-empty");
    Ok((out, cache))
}

/// Binary-tree reduction over the layer axis down to a single `T x D`
/// sequence.
pub fn hconv_aggregate(
    acts: &LayerActivations,
    params: &HConvParams,
) -> Result<FrameSequence, InterfaceError> {
    check_hconv(acts, params)?;
    let (out, _) = hconv_forward(acts.layers(), params)?;
    Ok(FrameSequence::new(out, acts.frame_rate_hz())?)
}

fn check_hconv(acts: &LayerActivations, params: &HConvParams) -> Result<(), InterfaceError> {
    if acts.dim() != params.dim {
        return Err(InterfaceError::DimMismatch { expected: params.dim, got: acts.dim() });
    }
    if acts.depth() != params.stack_size {
        return Err(InterfaceError::WeightCountMismatch {
            expected: params.stack_size,
            got: acts.depth(),
        });
    }
    Ok(())
}

/// Per-level gradients mirroring [`HConvParams::levels`].
#[derive(Debug, Clone)]
pub struct HConvGrads {
    pub levels: Vec<(Vec<f64>, Vec<f64>)>,
}

fn hconv_backward(params: &HConvParams, cache: &HConvCache, d_out: &Array2<f64>) -> HConvGrads {
    let d = params.dim;
    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = params
        .levels
        .iter()
        .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
        .collect();

    let mut d_next: Vec<Array2<f64>> = vec![d_out.clone()];
    for (li, level) in params.levels.iter().enumerate().rev() {
        let w = level.weight_matrix();
        let inputs = &cache.inputs[li];
        let outputs = &cache.outputs[li];
        let mut d_inputs: Vec<Array2<f64>> =
            inputs.iter().map(|m| Array2::zeros((m.nrows(), m.ncols()))).collect();
        let mut dw = Array2::<f64>::zeros((2 * d, d));
        let mut db = Array1::<f64>::zeros(d);
        for (j, out) in outputs.iter().enumerate() {
            // d z = d o * (1 - tanh^2)
            let mut dz = d_next[j].clone();
            dz.zip_mut_with(out, |g, &o| *g *= 1.0 - o * o);
            db += &dz.sum_axis(Axis(0));
            let ai = 2 * j;
            let bi = (2 * j + 1).min(inputs.len() - 1);
            dw.slice_mut(ndarray::s![..d, ..])
                .scaled_add(1.0, &inputs[ai].t().dot(&dz));
            dw.slice_mut(ndarray::s![d.., ..])
                .scaled_add(1.0, &inputs[bi].t().dot(&dz));
            let d_ab = dz.dot(&w.t());
            d_inputs[ai] += &d_ab.slice(ndarray::s![.., ..d]);
            d_inputs[bi] += &d_ab.slice(ndarray::s![.., d..]);
        }
        grads[li].0.copy_from_slice(dw.as_slice().expect("standard layout"));
        grads[li].1.copy_from_slice(db.as_slice().expect("standard layout"));
        d_next = d_inputs;
    }
    HConvGrads { levels: grads }
}

/// Returns `acts[k]` unchanged.
pub fn select_layer(acts: &LayerActivations, k: usize) -> Result<FrameSequence, InterfaceError> {
    if k >= acts.depth() {
        return Err(InterfaceError::LayerOutOfRange { index: k, max: acts.depth() - 1 });
    }
    Ok(FrameSequence::new(acts.layer(k).clone(), acts.frame_rate_hz())?)
}

/// A configured aggregation strategy plus its trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Interface {
    Hconv(HConvParams),
    WeightedSum(WeightedSumParams),
    SingleLayer(usize),
}

/// Opaque forward state handed back to [`Interface::backward`].
pub enum InterfaceCache {
    Hconv(HConvCache),
    Other,
}

/// Gradients mirroring an [`Interface`]'s parameters.
#[derive(Debug, Clone)]
pub enum InterfaceGrads {
    Hconv(HConvGrads),
    WeightedSum(Vec<f64>),
    SingleLayer,
}

impl Interface {
    /// Builds an interface of the configured kind for a backbone with the
    /// given stack size and hidden dim.
    pub fn build(
        kind: InterfaceKind,
        stack_size: usize,
        dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self, InterfaceError> {
        Ok(match kind {
            InterfaceKind::Hconv => Interface::Hconv(HConvParams::new(stack_size, dim, rng)),
            InterfaceKind::WeightedSum => Interface::WeightedSum(WeightedSumParams::new(stack_size)),
            InterfaceKind::SingleLayer(k) => {
                if k >= stack_size {
                    return Err(InterfaceError::LayerOutOfRange { index: k, max: stack_size - 1 });
                }
                Interface::SingleLayer(k)
            }
        })
    }

    pub fn kind(&self) -> InterfaceKind {
        match self {
            Interface::Hconv(_) => InterfaceKind::Hconv,
            Interface::WeightedSum(_) => InterfaceKind::WeightedSum,
            Interface::SingleLayer(k) => InterfaceKind::SingleLayer(*k),
        }
    }

    pub fn aggregate(&self, acts: &LayerActivations) -> Result<FrameSequence, InterfaceError> {
        match self {
            Interface::Hconv(p) => hconv_aggregate(acts, p),
            Interface::WeightedSum(p) => weighted_sum_aggregate(acts, p),
            Interface::SingleLayer(k) => select_layer(acts, *k),
        }
    }

    pub fn forward_cached(
        &self,
        acts: &LayerActivations,
    ) -> Result<(FrameSequence, InterfaceCache), InterfaceError> {
        match self {
            Interface::Hconv(p) => {
                check_hconv(acts, p)?;
                let (out, cache) = hconv_forward(acts.layers(), p)?;
                Ok((
                    FrameSequence::new(out, acts.frame_rate_hz())?,
                    InterfaceCache::Hconv(cache),
                ))
            }
            _ => Ok((self.aggregate(acts)?, InterfaceCache::Other)),
        }
    }

    pub fn backward(
        &self,
        acts: &LayerActivations,
        cache: &InterfaceCache,
        d_out: &Array2<f64>,
    ) -> InterfaceGrads {
        match (self, cache) {
            (Interface::Hconv(p), InterfaceCache::Hconv(c)) => {
                InterfaceGrads::Hconv(hconv_backward(p, c, d_out))
            }
            (Interface::WeightedSum(p), _) => {
                InterfaceGrads::WeightedSum(weighted_sum_backward(acts, p, d_out))
            }
            (Interface::SingleLayer(_), _) => InterfaceGrads::SingleLayer,
            (Interface::Hconv(_), _) => unreachable!("hconv backward needs its forward cache"),
        }
    }

    /// Mutable views of every trainable parameter, in a stable order that
    /// [`InterfaceGrads::slices`] mirrors.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Interface::Hconv(p) => p
                .levels
                .iter_mut()
                .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
                .collect(),
            Interface::WeightedSum(p) => vec![p.raw.as_mut_slice()],
            Interface::SingleLayer(_) => Vec::new(),
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Interface::Hconv(p) => p
                .levels
                .iter()
                .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
                .collect(),
            Interface::WeightedSum(p) => vec![p.raw.as_slice()],
            Interface::SingleLayer(_) => Vec::new(),
        }
    }
}

impl InterfaceGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        match self {
            InterfaceGrads::Hconv(g) => g
                .levels
                .iter()
                .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
                .collect(),
            InterfaceGrads::WeightedSum(g) => vec![g.as_slice()],
            InterfaceGrads::SingleLayer => Vec::new(),
        }
    }
}
