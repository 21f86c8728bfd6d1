//! Dense feedforward network engine.
//!
//! Hidden layers use ReLU, the output layer is linear and trained with a
//! softmax cross-entropy loss. Every forward pass records an
//! [`ActivationTrace`] which the Hebbian channel and the usage counters
//! consume. Weights may be restricted to the non-negative orthant; the
//! restriction is enforced by projection after each update.
//!
//! Layer `l` maps `layer_sizes[l]` inputs to `layer_sizes[l + 1]` outputs and
//! stores its weights as a row-major `(out x in)` matrix, so the synapse from
//! input `j` to unit `i` lives at flat index `i * in + j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Architecture of a network. Hidden activations are ReLU, output is identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    /// Input dimension first, output dimension last.
    pub layer_sizes: Vec<usize>,
    /// Keep every weight `>= 0` after every update.
    pub nonneg_weights: bool,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, nonneg_weights: bool) -> Self {
        Self {
            layer_sizes,
            nonneg_weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "network needs at least 2 layer sizes, got {}",
                self.layer_sizes.len()
            )));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("layer size {pos} is zero")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    /// Number of weight matrices.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn weight_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1]).sum()
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Weights, biases and the per-network inference counter.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub spec: NetworkSpec,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub step_counter: u64,
}

/// A labelled input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: usize,
}

impl Sample {
    pub fn new(input: Vec<f64>, target: usize) -> Self {
        Self { input, target }
    }
}

/// Pre- and post-activations of one layer boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

/// Activations recorded during a forward pass, one entry per layer size.
/// Entry 0 holds the input (pre == post).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layers: Vec<LayerTrace>,
}

impl ActivationTrace {
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("non-empty trace").post
    }

    /// Presynaptic activations feeding weight matrix `layer`.
    pub fn presynaptic(&self, layer: usize) -> &[f64] {
        &self.layers[layer].post
    }

    /// Postsynaptic activations produced by weight matrix `layer`.
    pub fn postsynaptic(&self, layer: usize) -> &[f64] {
        &self.layers[layer + 1].post
    }
}

/// Read-only view of which synapses take part in computation.
pub trait ActiveMask {
    /// Flat per-weight mask for weight matrix `layer`, or `None` when the
    /// whole layer is active.
    fn layer_mask(&self, layer: usize) -> Option<&[bool]>;
}

/// Every synapse active.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unmasked;

impl ActiveMask for Unmasked {
    fn layer_mask(&self, _layer: usize) -> Option<&[bool]> {
        None
    }
}

impl ActiveMask for [Vec<bool>] {
    fn layer_mask(&self, layer: usize) -> Option<&[bool]> {
        self.get(layer).map(Vec::as_slice)
    }
}

impl ActiveMask for Vec<Vec<bool>> {
    fn layer_mask(&self, layer: usize) -> Option<&[bool]> {
        self.as_slice().layer_mask(layer)
    }
}

/// Per-layer gradients of the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(state: &NetworkState) -> Self {
        Self {
            weights: state
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: state.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += scale * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Euclidean norm over weights and biases.
    pub fn norm(&self) -> f64 {
        let w: f64 = self
            .weights
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|g| g * g)
            .sum();
        let b: f64 = self.biases.iter().flatten().map(|g| g * g).sum();
        (w + b).sqrt()
    }

    fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .flat_map(|m| m.as_slice())
            .chain(self.biases.iter().flatten())
            .all(|g| g.is_finite())
    }
}

/// Builds a network with seeded weights.
///
/// Weights are drawn uniformly from `[-s, s]` with `s = 1/sqrt(fan_in)`; under
/// the non-negative regime their absolute value is taken. Biases start at 0.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(spec.depth());
    let mut biases = Vec::with_capacity(spec.depth());
    for pair in spec.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| {
                let w = rng.random_range(-scale..=scale);
                if spec.nonneg_weights {
                    w.abs()
                } else {
                    w
                }
            })
            .collect();
        weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(NetworkState {
        spec: spec.clone(),
        weights,
        biases,
        step_counter: 0,
    })
}

impl NetworkState {
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    fn check_mask(&self, mask: &(impl ActiveMask + ?Sized)) -> Result<()> {
        for (l, w) in self.weights.iter().enumerate() {
            if let Some(m) = mask.layer_mask(l) {
                if m.len() != w.len() {
                    return Err(Error::shape("mask layer", w.len(), m.len()));
                }
            }
        }
        Ok(())
    }

    /// Masked forward pass. Masked-off weights contribute exactly zero.
    pub fn forward(
        &self,
        input: &[f64],
        mask: &(impl ActiveMask + ?Sized),
    ) -> Result<(Vec<f64>, ActivationTrace)> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::shape("input", self.spec.input_dim(), input.len()));
        }
        self.check_mask(mask)?;
        let depth = self.depth();
        let mut layers = Vec::with_capacity(depth + 1);
        layers.push(LayerTrace {
            pre: input.to_vec(),
            post: input.to_vec(),
        });
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let x = &layers[l].post;
            let m = mask.layer_mask(l);
            let cols = w.cols();
            let pre: Vec<f64> = (0..w.rows())
                .map(|i| {
                    let row = &w.as_slice()[i * cols..(i + 1) * cols];
                    let mut acc = 0.0;
                    match m {
                        None => {
                            for (wij, xj) in row.iter().zip(x) {
                                acc += wij * xj;
                            }
                        }
                        Some(m) => {
                            let mrow = &m[i * cols..(i + 1) * cols];
                            for ((wij, xj), &on) in row.iter().zip(x).zip(mrow) {
                                if on {
                                    acc += wij * xj;
                                }
                            }
                        }
                    }
                    acc + b[i]
                })
                .collect();
            let post = if l + 1 == depth {
                pre.clone()
            } else {
                pre.iter().map(|&z| z.max(0.0)).collect()
            };
            layers.push(LayerTrace { pre, post });
        }
        let trace = ActivationTrace { layers };
        Ok((trace.output().to_vec(), trace))
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        if trace.layers.len() != self.spec.layer_sizes.len() {
            return Err(Error::Consistency(format!(
                "trace has {} layers, network has {}",
                trace.layers.len(),
                self.spec.layer_sizes.len()
            )));
        }
        for (l, (lt, &size)) in trace.layers.iter().zip(&self.spec.layer_sizes).enumerate() {
            if lt.pre.len() != size || lt.post.len() != size {
                return Err(Error::Consistency(format!(
                    "trace layer {l} has width {}, network expects {size}",
                    lt.post.len()
                )));
            }
        }
        Ok(())
    }

    /// Exact gradients of softmax cross-entropy with respect to every
    /// unmasked weight and every bias. Masked weights get exactly 0 and do
    /// not carry error signal backwards.
    pub fn backward(
        &self,
        trace: &ActivationTrace,
        target: usize,
        mask: &(impl ActiveMask + ?Sized),
    ) -> Result<Gradients> {
        self.check_trace(trace)?;
        self.check_mask(mask)?;
        let out_dim = self.spec.output_dim();
        if target >= out_dim {
            return Err(Error::Argument(format!(
                "target class {target} out of range for {out_dim} outputs"
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = softmax(trace.output());
        delta[target] -= 1.0;

        for l in (0..self.depth()).rev() {
            let w = &self.weights[l];
            let m = mask.layer_mask(l);
            let x = trace.presynaptic(l);
            let cols = w.cols();
            let gw = grads.weights[l].as_mut_slice();
            for (i, &d) in delta.iter().enumerate() {
                for (j, &xj) in x.iter().enumerate() {
                    let k = i * cols + j;
                    if m.is_none_or(|m| m[k]) {
                        gw[k] = d * xj;
                    }
                }
            }
            grads.biases[l].copy_from_slice(&delta);
            if l == 0 {
                break;
            }
            let below = &trace.layers[l].pre;
            let mut next = vec![0.0; cols];
            for (j, nj) in next.iter_mut().enumerate() {
                if below[j] <= 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for (i, &d) in delta.iter().enumerate() {
                    let k = i * cols + j;
                    if m.is_none_or(|m| m[k]) {
                        acc += w.as_slice()[k] * d;
                    }
                }
                *nj = acc;
            }
            delta = next;
        }
        Ok(grads)
    }

    /// Softmax cross-entropy of one sample.
    pub fn loss(
        &self,
        input: &[f64],
        target: usize,
        mask: &(impl ActiveMask + ?Sized),
    ) -> Result<f64> {
        let (out, _) = self.forward(input, mask)?;
        if target >= out.len() {
            return Err(Error::Argument(format!("target class {target} out of range")));
        }
        Ok(cross_entropy(&out, target))
    }

    /// `w <- w - lr * g`, then clamp at zero when `nonneg`. Biases are never
    /// clamped. Either every element is written or none is.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64, nonneg: bool) -> Result<()> {
        if grads.weights.len() != self.depth() || grads.biases.len() != self.depth() {
            return Err(Error::shape("gradient layers", self.depth(), grads.weights.len()));
        }
        for (l, (g, w)) in grads.weights.iter().zip(&self.weights).enumerate() {
            if g.rows() != w.rows() || g.cols() != w.cols() {
                return Err(Error::Consistency(format!("gradient shape mismatch at layer {l}")));
            }
            if grads.biases[l].len() != self.biases[l].len() {
                return Err(Error::Consistency(format!("bias gradient mismatch at layer {l}")));
            }
        }
        if !lr.is_finite() || !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient element".into()));
        }
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (wi, gi) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *wi -= lr * gi;
                if nonneg && *wi < 0.0 {
                    *wi = 0.0;
                }
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (bi, gi) in b.iter_mut().zip(g) {
                *bi -= lr * gi;
            }
        }
        Ok(())
    }

    pub fn min_weight(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|m| m.as_slice())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// FNV-1a over the bit patterns of all weights, biases and the counter.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        for w in &self.weights {
            w.as_slice().iter().for_each(|v| h.write_u64(v.to_bits()));
        }
        self.biases.iter().flatten().for_each(|v| h.write_u64(v.to_bits()));
        h.write_u64(self.step_counter);
        h.finish()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[target]`, computed stably.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let top = argmax(logits);
    let max = logits[top];
    // ln_1p keeps precision when the top logit dominates
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, z)| (z - max).exp())
        .sum();
    (max - logits[target]) + rest.ln_1p()
}

/// Index of the largest output; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// 64-bit FNV-1a, used for state checksums.
#[derive(Debug, Clone)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for &byte in bytes {
            self.0 ^= u64::from(byte);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}
