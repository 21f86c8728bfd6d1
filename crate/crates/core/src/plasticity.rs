//! Hebbian and error-driven learning channels.
//!
//! The Hebbian channel runs after every inference and adds `eta * x * y` to
//! each plastic connection. The error-driven channel runs gradient descent on
//! softmax cross-entropy, either as a one-pass micro-correction restricted to
//! STM synapses or as a multi-epoch pass over STM and LTM synapses. PM
//! synapses are never written by either channel.

use crate::error::{Error, Result};
use crate::memory::{MetaStore, Tier};
use crate::net::{ActivationTrace, Gradients, NetworkState, Sample};
use crate::sleep::ImportanceMap;

#[derive(Debug, Clone, PartialEq)]
pub struct HebbianConfig {
    pub eta: f64,
    pub per_inference: bool,
    /// Optional hard ceiling on weights touched by the Hebbian channel.
    pub weight_cap: Option<f64>,
}

impl Default for HebbianConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            per_inference: true,
            weight_cap: None,
        }
    }
}

impl HebbianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("hebbian eta must be a non-negative finite number".into()));
        }
        if let Some(cap) = self.weight_cap {
            if !(cap > 0.0) {
                return Err(Error::Config("hebbian weight_cap must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub microstep_batch: usize,
    pub nightly_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            microstep_batch: 4,
            nightly_epochs: 2,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("sgd lr must be positive".into()));
        }
        if self.microstep_batch == 0 || self.nightly_epochs == 0 {
            return Err(Error::Config("sgd batch and epoch counts must be positive".into()));
        }
        Ok(())
    }
}

/// Which synapses an error-driven update may write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateScope {
    /// One pass, STM synapses only.
    MicrosleepMinor,
    /// `nightly_epochs` passes, STM and LTM synapses.
    NightlyFull,
}

impl UpdateScope {
    pub fn allows(self, tier: Tier) -> bool {
        match self {
            UpdateScope::MicrosleepMinor => tier == Tier::Stm,
            UpdateScope::NightlyFull => tier != Tier::Pm,
        }
    }

    pub fn passes(self, cfg: &SgdConfig) -> usize {
        match self {
            UpdateScope::MicrosleepMinor => 1,
            UpdateScope::NightlyFull => cfg.nightly_epochs,
        }
    }
}

/// Quadratic anchor added to the loss: `(lambda / 2) * sum F * (w - anchor)^2`.
#[derive(Debug, Clone, Copy)]
pub struct EwcTerm<'a> {
    pub map: &'a ImportanceMap,
    pub lambda: f64,
}

/// `w += eta * x * y` on every active non-PM synapse, with `x` the
/// presynaptic and `y` the (rectified) postsynaptic post-activation.
pub fn hebbian_step(
    state: &mut NetworkState,
    meta: &MetaStore,
    trace: &ActivationTrace,
    cfg: &HebbianConfig,
) -> Result<()> {
    meta.check_aligned(state)?;
    if trace.layers.len() != state.depth() + 1 {
        return Err(Error::Consistency("trace depth does not match network".into()));
    }
    let mut updated = state.weights.clone();
    for (l, (w, m)) in updated.iter_mut().zip(&meta.layers).enumerate() {
        let x = trace.presynaptic(l);
        let y = trace.postsynaptic(l);
        if x.len() != m.cols || y.len() != m.rows {
            return Err(Error::Consistency(format!("trace layer {l} width mismatch")));
        }
        let cols = m.cols;
        let data = w.as_mut_slice();
        for (i, &yi) in y.iter().enumerate() {
            let yi = yi.max(0.0);
            for (j, &xj) in x.iter().enumerate() {
                let k = i * cols + j;
                if !m.is_plastic(k) {
                    continue;
                }
                let mut v = data[k] + cfg.eta * xj * yi;
                if state.spec.nonneg_weights && v < 0.0 {
                    v = 0.0;
                }
                if let Some(cap) = cfg.weight_cap {
                    v = v.min(cap);
                }
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "hebbian update produced a non-finite weight at layer {l}"
                    )));
                }
                data[k] = v;
            }
        }
    }
    state.weights = updated;
    Ok(())
}

/// Mean gradient of the batch loss under the meta mask, plus the anchor
/// term when given.
pub fn batch_gradient(
    state: &NetworkState,
    meta: &MetaStore,
    batch: &[Sample],
    ewc: Option<EwcTerm<'_>>,
) -> Result<Gradients> {
    let mut total = Gradients::zeros_like(state);
    for s in batch {
        let (_, trace) = state.forward(&s.input, meta)?;
        let g = state.backward(&trace, s.target, meta)?;
        total.add_scaled(&g, 1.0);
    }
    total.scale(1.0 / batch.len() as f64);
    if let Some(term) = ewc {
        term.map.check_aligned(state)?;
        for (l, g) in total.weights.iter_mut().enumerate() {
            let w = state.weights[l].as_slice();
            let f = &term.map.importance[l];
            let a = &term.map.anchor[l];
            for (k, gk) in g.as_mut_slice().iter_mut().enumerate() {
                if f[k] != 0.0 {
                    *gk += term.lambda * f[k] * (w[k] - a[k]);
                }
            }
        }
    }
    Ok(total)
}

/// Mean loss of a batch, including the anchor penalty when given.
pub fn batch_loss(
    state: &NetworkState,
    meta: &MetaStore,
    batch: &[Sample],
    ewc: Option<EwcTerm<'_>>,
) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        total += state.loss(&s.input, s.target, meta)?;
    }
    let mut loss = total / batch.len().max(1) as f64;
    if let Some(term) = ewc {
        loss += crate::sleep::ewc_penalty(state, term.map, term.lambda)?;
    }
    Ok(loss)
}

/// Gradient descent over `batch` restricted to the synapses `scope` allows.
/// Biases carry no tier and are updated in every scope.
pub fn error_step(
    state: &mut NetworkState,
    meta: &MetaStore,
    batch: &[Sample],
    cfg: &SgdConfig,
    scope: UpdateScope,
    ewc: Option<EwcTerm<'_>>,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("error_step needs a non-empty batch".into()));
    }
    meta.check_aligned(state)?;
    let nonneg = state.spec.nonneg_weights;
    for _ in 0..scope.passes(cfg) {
        let mut g = batch_gradient(state, meta, batch, ewc)?;
        for (gw, m) in g.weights.iter_mut().zip(&meta.layers) {
            for (k, gk) in gw.as_mut_slice().iter_mut().enumerate() {
                if !(m.active[k] && scope.allows(m.tier[k])) {
                    *gk = 0.0;
                }
            }
        }
        state.apply_gradients(&g, cfg.lr, nonneg)?;
    }
    Ok(())
}
