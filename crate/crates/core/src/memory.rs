//! Per-synapse Tri-Memory bookkeeping.
//!
//! Every weight carries a [`Tier`] (STM, LTM or PM), an active flag, an
//! exponentially decayed usage counter, the number of nights it has survived
//! and a running average of user sentiment. Tiers only ever move upwards.
//! PM synapses are never masked, decayed, pruned or updated.
//!
//! The store is laid out column-wise (one vector per field per layer) so the
//! active flags double as the forward-pass mask.

use crate::error::{Error, Result};
use crate::net::{ActivationTrace, ActiveMask, Fnv, NetworkState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Stm = 0,
    Ltm = 1,
    Pm = 2,
}

impl Tier {
    pub fn from_u8(v: u8) -> Option<Tier> {
        match v {
            0 => Some(Tier::Stm),
            1 => Some(Tier::Ltm),
            2 => Some(Tier::Pm),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Stm => "stm",
            Tier::Ltm => "ltm",
            Tier::Pm => "pm",
        }
    }
}

pub const SENTIMENT_MIN: f64 = 1.0;
pub const SENTIMENT_MAX: f64 = 5.0;
pub const SENTIMENT_NEUTRAL: f64 = 3.0;

/// Snapshot of one synapse's metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynapseMeta {
    pub tier: Tier,
    pub active: bool,
    /// Removed by nightly pruning; implies `!active`.
    pub pruned: bool,
    pub usage: f64,
    pub nights_survived: u32,
    pub sentiment_ema: f64,
    /// Consecutive nights an LTM synapse spent below the sentiment floor.
    pub low_sentiment_nights: u32,
}

impl Default for SynapseMeta {
    fn default() -> Self {
        Self {
            tier: Tier::Stm,
            active: true,
            pruned: false,
            usage: 0.0,
            nights_survived: 0,
            sentiment_ema: SENTIMENT_NEUTRAL,
            low_sentiment_nights: 0,
        }
    }
}

/// Sentiment multiplier: maps `[1, 5]` linearly onto `[0.5, 1.5]`.
pub fn sentiment_gain(sentiment: f64) -> f64 {
    0.5 + (sentiment - SENTIMENT_MIN) / (SENTIMENT_MAX - SENTIMENT_MIN)
}

/// Usage scaled by the sentiment multiplier.
pub fn effective_usage(meta: &SynapseMeta) -> f64 {
    meta.usage * sentiment_gain(meta.sentiment_ema)
}

/// Thresholds driving usage attribution and tier transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct TierPolicy {
    /// Minimum `x * w` for a connection to count as contributing.
    pub use_eps: f64,
    pub promote_usage: f64,
    pub promote_nights: u32,
    pub graduate_usage: f64,
    pub graduate_nights: u32,
    /// Nightly multiplicative usage decay, in `(0, 1]`.
    pub usage_decay: f64,
    /// LTM synapses whose sentiment stays below this floor...
    pub sentiment_floor: f64,
    /// ...for this many consecutive nights lose their usage.
    pub sentiment_floor_nights: u32,
}

impl Default for TierPolicy {
    fn default() -> Self {
        Self {
            use_eps: 1e-6,
            promote_usage: 20.0,
            promote_nights: 2,
            graduate_usage: 100.0,
            graduate_nights: 7,
            usage_decay: 0.9,
            sentiment_floor: 1.5,
            sentiment_floor_nights: 3,
        }
    }
}

impl TierPolicy {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("tier policy: {m}")));
        if !(self.use_eps > 0.0) {
            return bad("use_eps must be positive");
        }
        if !(self.promote_usage > 0.0) || self.promote_nights == 0 {
            return bad("promotion thresholds must be positive");
        }
        if !(self.graduate_usage > 0.0) || self.graduate_nights == 0 {
            return bad("graduation thresholds must be positive");
        }
        if self.graduate_usage < self.promote_usage || self.graduate_nights < self.promote_nights {
            return bad("graduation thresholds must be >= promotion thresholds");
        }
        if !(self.usage_decay > 0.0 && self.usage_decay <= 1.0) {
            return bad("usage_decay must be in (0, 1]");
        }
        if !(SENTIMENT_MIN..=SENTIMENT_MAX).contains(&self.sentiment_floor) {
            return bad("sentiment_floor must be in [1, 5]");
        }
        Ok(())
    }
}

/// Metadata for every synapse of one weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMeta {
    pub rows: usize,
    pub cols: usize,
    pub tier: Vec<Tier>,
    pub active: Vec<bool>,
    pub pruned: Vec<bool>,
    pub usage: Vec<f64>,
    pub nights_survived: Vec<u32>,
    pub sentiment_ema: Vec<f64>,
    pub low_sentiment_nights: Vec<u32>,
}

impl LayerMeta {
    pub fn new(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            tier: vec![Tier::Stm; n],
            active: vec![true; n],
            pruned: vec![false; n],
            usage: vec![0.0; n],
            nights_survived: vec![0; n],
            sentiment_ema: vec![SENTIMENT_NEUTRAL; n],
            low_sentiment_nights: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.tier.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tier.is_empty()
    }

    pub fn get(&self, idx: usize) -> SynapseMeta {
        SynapseMeta {
            tier: self.tier[idx],
            active: self.active[idx],
            pruned: self.pruned[idx],
            usage: self.usage[idx],
            nights_survived: self.nights_survived[idx],
            sentiment_ema: self.sentiment_ema[idx],
            low_sentiment_nights: self.low_sentiment_nights[idx],
        }
    }

    pub fn set(&mut self, idx: usize, meta: SynapseMeta) {
        self.tier[idx] = meta.tier;
        self.active[idx] = meta.active;
        self.pruned[idx] = meta.pruned;
        self.usage[idx] = meta.usage;
        self.nights_survived[idx] = meta.nights_survived;
        self.sentiment_ema[idx] = meta.sentiment_ema;
        self.low_sentiment_nights[idx] = meta.low_sentiment_nights;
    }

    /// Active and not permanent: the synapses decay, pruning and the
    /// plastic channels are allowed to touch.
    #[inline]
    pub fn is_plastic(&self, idx: usize) -> bool {
        self.active[idx] && self.tier[idx] != Tier::Pm
    }
}

/// Metadata grids aligned one-to-one with a network's weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaStore {
    pub layers: Vec<LayerMeta>,
}

impl ActiveMask for MetaStore {
    fn layer_mask(&self, layer: usize) -> Option<&[bool]> {
        self.layers.get(layer).map(|m| m.active.as_slice())
    }
}

impl MetaStore {
    /// Fresh store: every synapse STM, active, unused, neutral sentiment.
    pub fn for_network(state: &NetworkState) -> Self {
        Self {
            layers: state
                .weights
                .iter()
                .map(|w| LayerMeta::new(w.rows(), w.cols()))
                .collect(),
        }
    }

    pub fn get(&self, layer: usize, idx: usize) -> SynapseMeta {
        self.layers[layer].get(idx)
    }

    pub fn set(&mut self, layer: usize, idx: usize, meta: SynapseMeta) {
        self.layers[layer].set(idx, meta)
    }

    pub fn check_aligned(&self, state: &NetworkState) -> Result<()> {
        if self.layers.len() != state.weights.len() {
            return Err(Error::Consistency(format!(
                "meta has {} layers, network has {}",
                self.layers.len(),
                state.weights.len()
            )));
        }
        for (l, (m, w)) in self.layers.iter().zip(&state.weights).enumerate() {
            if m.rows != w.rows() || m.cols != w.cols() || m.len() != w.len() {
                return Err(Error::Consistency(format!("meta layer {l} not aligned with weights")));
            }
        }
        Ok(())
    }

    fn check_trace(&self, trace: &ActivationTrace) -> Result<()> {
        if trace.layers.len() != self.layers.len() + 1 {
            return Err(Error::Consistency("trace does not match meta store depth".into()));
        }
        for (l, m) in self.layers.iter().enumerate() {
            if trace.presynaptic(l).len() != m.cols || trace.postsynaptic(l).len() != m.rows {
                return Err(Error::Consistency(format!("trace layer {l} width mismatch")));
            }
        }
        Ok(())
    }

    /// Calls `f(layer, idx)` for every active synapse whose presynaptic
    /// contribution `x * w` exceeds `use_eps`.
    fn for_each_contributing(
        &self,
        trace: &ActivationTrace,
        state: &NetworkState,
        use_eps: f64,
        mut f: impl FnMut(usize, usize),
    ) {
        for (l, m) in self.layers.iter().enumerate() {
            let x = trace.presynaptic(l);
            let w = state.weights[l].as_slice();
            for i in 0..m.rows {
                for (j, &xj) in x.iter().enumerate() {
                    let k = i * m.cols + j;
                    if m.active[k] && xj * w[k] > use_eps {
                        f(l, k);
                    }
                }
            }
        }
    }

    /// On a successful inference, every active synapse with `x * w > use_eps`
    /// gains one unit of usage. Failed inferences change nothing.
    pub fn record_usage(
        &mut self,
        trace: &ActivationTrace,
        state: &NetworkState,
        success: bool,
        policy: &TierPolicy,
    ) -> Result<()> {
        self.check_aligned(state)?;
        self.check_trace(trace)?;
        if !success {
            return Ok(());
        }
        let mut hits = Vec::new();
        self.for_each_contributing(trace, state, policy.use_eps, |l, k| hits.push((l, k)));
        for (l, k) in hits {
            self.layers[l].usage[k] += 1.0;
        }
        Ok(())
    }

    /// Folds a 1-5 rating into the sentiment average of every synapse that
    /// contributed to the rated inference.
    pub fn apply_sentiment(
        &mut self,
        trace: &ActivationTrace,
        state: &NetworkState,
        rating: f64,
        alpha: f64,
        policy: &TierPolicy,
    ) -> Result<()> {
        if !(SENTIMENT_MIN..=SENTIMENT_MAX).contains(&rating) {
            return Err(Error::Argument(format!("sentiment rating {rating} outside [1, 5]")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Argument(format!("sentiment coefficient {alpha} outside [0, 1]")));
        }
        self.check_aligned(state)?;
        self.check_trace(trace)?;
        let mut hits = Vec::new();
        self.for_each_contributing(trace, state, policy.use_eps, |l, k| hits.push((l, k)));
        for (l, k) in hits {
            let s = &mut self.layers[l].sentiment_ema[k];
            *s = ((1.0 - alpha) * *s + alpha * rating).clamp(SENTIMENT_MIN, SENTIMENT_MAX);
        }
        Ok(())
    }

    /// STM synapses with enough usage and nights move to LTM.
    pub fn promote(&mut self, policy: &TierPolicy) -> usize {
        let mut count = 0;
        for m in &mut self.layers {
            for k in 0..m.len() {
                if m.tier[k] == Tier::Stm
                    && m.active[k]
                    && m.usage[k] >= policy.promote_usage
                    && m.nights_survived[k] >= policy.promote_nights
                {
                    m.tier[k] = Tier::Ltm;
                    count += 1;
                }
            }
        }
        count
    }

    /// LTM synapses with high usage, many nights and non-negative sentiment
    /// become permanent.
    pub fn graduate(&mut self, policy: &TierPolicy) -> usize {
        let mut count = 0;
        for m in &mut self.layers {
            for k in 0..m.len() {
                if m.tier[k] == Tier::Ltm
                    && m.active[k]
                    && m.usage[k] >= policy.graduate_usage
                    && m.nights_survived[k] >= policy.graduate_nights
                    && m.sentiment_ema[k] >= SENTIMENT_NEUTRAL
                {
                    m.tier[k] = Tier::Pm;
                    count += 1;
                }
            }
        }
        count
    }

    /// `usage *= usage_decay` everywhere; active synapses count one more night.
    pub fn nightly_decay_usage(&mut self, policy: &TierPolicy) {
        for m in &mut self.layers {
            for k in 0..m.len() {
                m.usage[k] *= policy.usage_decay;
                if m.active[k] {
                    m.nights_survived[k] += 1;
                }
            }
        }
    }

    /// Tracks persistently negative sentiment on LTM synapses. Once the
    /// streak reaches `sentiment_floor_nights`, usage is forced to zero so
    /// the synapse becomes prune-eligible. Returns the number of synapses
    /// tagged this night.
    pub fn sentiment_nightly(&mut self, policy: &TierPolicy) -> usize {
        let mut tagged = 0;
        for m in &mut self.layers {
            for k in 0..m.len() {
                if m.tier[k] == Tier::Ltm && m.active[k] && m.sentiment_ema[k] < policy.sentiment_floor {
                    m.low_sentiment_nights[k] += 1;
                    if m.low_sentiment_nights[k] >= policy.sentiment_floor_nights {
                        m.usage[k] = 0.0;
                        tagged += 1;
                    }
                } else {
                    m.low_sentiment_nights[k] = 0;
                }
            }
        }
        tagged
    }

    pub fn active_count(&self) -> usize {
        self.layers
            .iter()
            .map(|m| m.active.iter().filter(|&&a| a).count())
            .sum()
    }

    pub fn pruned_count(&self) -> usize {
        self.layers
            .iter()
            .map(|m| m.pruned.iter().filter(|&&p| p).count())
            .sum()
    }

    /// Active synapses per tier, `[stm, ltm, pm]`.
    pub fn tier_histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for m in &self.layers {
            for (t, &a) in m.tier.iter().zip(&m.active) {
                if a {
                    h[*t as usize] += 1;
                }
            }
        }
        h
    }

    /// Usage values of active synapses, in storage order.
    pub fn active_usage(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|m| m.usage.iter().zip(&m.active).filter(|(_, &a)| a).map(|(u, _)| *u))
            .collect()
    }

    /// `(layer, idx)` of every PM synapse.
    pub fn pm_coordinates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (l, m) in self.layers.iter().enumerate() {
            for (k, t) in m.tier.iter().enumerate() {
                if *t == Tier::Pm {
                    out.push((l, k));
                }
            }
        }
        out
    }

    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        for m in &self.layers {
            for k in 0..m.len() {
                h.write_u64(m.tier[k] as u64);
                h.write_u64(u64::from(m.active[k]) | (u64::from(m.pruned[k]) << 1));
                h.write_u64(m.usage[k].to_bits());
                h.write_u64(u64::from(m.nights_survived[k]));
                h.write_u64(m.sentiment_ema[k].to_bits());
                h.write_u64(u64::from(m.low_sentiment_nights[k]));
            }
        }
        h.finish()
    }
}
