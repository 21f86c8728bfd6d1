//! Microsleep decay and nightly consolidation.
//!
//! A microsleep subtracts a small uniform offset from every plastic weight
//! and masks the ones that reach zero; nothing is removed. The nightly pass
//! runs, in order: novelty scoring, adaptive-quantile pruning (skipped on
//! quiet days), importance estimation, anchored replay rehearsal, and tier
//! transitions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::memory::{effective_usage, MetaStore, Tier, TierPolicy};
use crate::net::{NetworkState, Sample};
use crate::plasticity::{batch_loss, error_step, EwcTerm, SgdConfig, UpdateScope};
use crate::replay::ReplayBuffer;

#[derive(Debug, Clone, PartialEq)]
pub struct MicrosleepConfig {
    /// Inferences between microsleeps.
    pub interval: u64,
    /// Uniform offset subtracted from each plastic weight.
    pub offset: f64,
    /// Run a one-pass STM-only correction on the latest inputs.
    pub minor_step: bool,
}

impl Default for MicrosleepConfig {
    fn default() -> Self {
        Self {
            interval: 50,
            offset: 1e-4,
            minor_step: false,
        }
    }
}

impl MicrosleepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::Config("microsleep interval must be >= 1".into()));
        }
        if !(self.offset > 0.0 && self.offset.is_finite()) {
            return Err(Error::Config("microsleep offset must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NightlyConfig {
    /// Below this novelty the night skips pruning.
    pub skip_novelty: f64,
    /// Distance beyond which a day input counts as novel.
    pub novelty_tau: f64,
    /// Maximum active weights per expert.
    pub capacity_budget: usize,
    pub target_utilization: f64,
    pub quantile_alpha: f64,
    pub quantile_beta: f64,
    pub quantile_max: f64,
    pub ewc_lambda: f64,
    /// Fraction of each rehearsal batch drawn from the recent partition.
    pub rehearsal_mix: f64,
    pub rehearsal_batch: usize,
    /// Independent rehearsal batches per night.
    pub rehearsal_rounds: usize,
}

impl Default for NightlyConfig {
    fn default() -> Self {
        Self {
            skip_novelty: 0.05,
            novelty_tau: 1.0,
            capacity_budget: 4096,
            target_utilization: 0.8,
            quantile_alpha: 0.5,
            quantile_beta: 0.5,
            quantile_max: 0.3,
            ewc_lambda: 1.0,
            rehearsal_mix: 0.5,
            rehearsal_batch: 16,
            rehearsal_rounds: 1,
        }
    }
}

impl NightlyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("nightly: {m}")));
        if !(0.0..=1.0).contains(&self.skip_novelty) {
            return bad("skip_novelty must be in [0, 1]");
        }
        if !(self.novelty_tau > 0.0) {
            return bad("novelty_tau must be positive");
        }
        if self.capacity_budget == 0 {
            return bad("capacity_budget must be positive");
        }
        if !(self.target_utilization > 0.0 && self.target_utilization <= 1.0) {
            return bad("target_utilization must be in (0, 1]");
        }
        if !(self.quantile_alpha >= 0.0 && self.quantile_beta >= 0.0) {
            return bad("quantile_alpha and quantile_beta must be non-negative");
        }
        if !(self.quantile_max > 0.0 && self.quantile_max < 1.0) {
            return bad("quantile_max must be in (0, 1)");
        }
        if !(self.ewc_lambda >= 0.0 && self.ewc_lambda.is_finite()) {
            return bad("ewc_lambda must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.rehearsal_mix) {
            return bad("rehearsal_mix must be in [0, 1]");
        }
        if self.rehearsal_batch == 0 || self.rehearsal_rounds == 0 {
            return bad("rehearsal_batch and rehearsal_rounds must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DayStats {
    pub inference_count: u64,
    pub success_count: u64,
    pub day_index: u64,
}

impl DayStats {
    pub fn for_day(day_index: u64) -> Self {
        Self {
            day_index,
            ..Default::default()
        }
    }
}

/// Diagonal importance estimates and the weights they anchor to.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    pub importance: Vec<Vec<f64>>,
    pub anchor: Vec<Vec<f64>>,
}

impl ImportanceMap {
    pub fn zeros_like(state: &NetworkState) -> Self {
        Self {
            importance: state.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            anchor: state.weights.iter().map(|w| w.as_slice().to_vec()).collect(),
        }
    }

    /// Mean squared per-sample gradient over `samples`, kept only for active
    /// synapses whose tier passes `keep`. The anchor is the current weights.
    pub fn estimate(
        state: &NetworkState,
        meta: &MetaStore,
        samples: &[Sample],
        keep: impl Fn(Tier) -> bool,
    ) -> Result<Self> {
        meta.check_aligned(state)?;
        let mut map = Self::zeros_like(state);
        if samples.is_empty() {
            return Ok(map);
        }
        for s in samples {
            let (_, trace) = state.forward(&s.input, meta)?;
            let g = state.backward(&trace, s.target, meta)?;
            for (acc, gw) in map.importance.iter_mut().zip(&g.weights) {
                for (a, v) in acc.iter_mut().zip(gw.as_slice()) {
                    *a += v * v;
                }
            }
        }
        let inv = 1.0 / samples.len() as f64;
        for (acc, m) in map.importance.iter_mut().zip(&meta.layers) {
            for (k, a) in acc.iter_mut().enumerate() {
                *a = if m.active[k] && keep(m.tier[k]) { *a * inv } else { 0.0 };
            }
        }
        Ok(map)
    }

    /// Adds `other`'s importance and takes its anchor.
    pub fn accumulate(&mut self, other: ImportanceMap) {
        for (a, b) in self.importance.iter_mut().zip(&other.importance) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.anchor = other.anchor;
    }

    pub fn check_aligned(&self, state: &NetworkState) -> Result<()> {
        let ok = self.importance.len() == state.weights.len()
            && self.anchor.len() == state.weights.len()
            && state
                .weights
                .iter()
                .zip(self.importance.iter().zip(&self.anchor))
                .all(|(w, (f, a))| f.len() == w.len() && a.len() == w.len());
        if ok {
            Ok(())
        } else {
            Err(Error::Consistency("importance map not aligned with weights".into()))
        }
    }
}

/// `(lambda / 2) * sum importance * (w - anchor)^2`
pub fn ewc_penalty(state: &NetworkState, map: &ImportanceMap, lambda: f64) -> Result<f64> {
    map.check_aligned(state)?;
    let mut sum = 0.0;
    for (l, w) in state.weights.iter().enumerate() {
        for ((wk, fk), ak) in w.as_slice().iter().zip(&map.importance[l]).zip(&map.anchor[l]) {
            let d = wk - ak;
            sum += fk * d * d;
        }
    }
    Ok(0.5 * lambda * sum)
}

pub fn maybe_microsleep(step_counter: u64, cfg: &MicrosleepConfig) -> bool {
    step_counter > 0 && step_counter.is_multiple_of(cfg.interval)
}

/// Applies the global offset `w <- max(w - offset, 0)` to every plastic
/// synapse and masks those that hit zero. Returns how many were masked.
pub fn apply_global_offset(state: &mut NetworkState, meta: &mut MetaStore, offset: f64) -> Result<usize> {
    meta.check_aligned(state)?;
    let mut deactivated = 0;
    for (w, m) in state.weights.iter_mut().zip(&mut meta.layers) {
        for (k, wk) in w.as_mut_slice().iter_mut().enumerate() {
            if !m.is_plastic(k) {
                continue;
            }
            *wk = (*wk - offset).max(0.0);
            if *wk == 0.0 {
                m.active[k] = false;
                deactivated += 1;
            }
        }
    }
    Ok(deactivated)
}

/// Global offset, then (when enabled) one STM-only correction on the last
/// `microstep_batch` of `recent`. Returns the number of masked synapses.
pub fn microsleep(
    state: &mut NetworkState,
    meta: &mut MetaStore,
    cfg: &MicrosleepConfig,
    recent: &[Sample],
    sgd: &SgdConfig,
) -> Result<usize> {
    let deactivated = apply_global_offset(state, meta, cfg.offset)?;
    if cfg.minor_step && !recent.is_empty() {
        let start = recent.len().saturating_sub(sgd.microstep_batch);
        error_step(state, meta, &recent[start..], sgd, UpdateScope::MicrosleepMinor, None)?;
    }
    Ok(deactivated)
}

/// Fraction of `day_inputs` farther than `tau` (Euclidean) from every
/// reference point. No inputs gives 0; no reference points gives 1.
pub fn novelty_score(day_inputs: &[&[f64]], reference: &[&[f64]], tau: f64) -> f64 {
    if day_inputs.is_empty() {
        return 0.0;
    }
    if reference.is_empty() {
        return 1.0;
    }
    let tau2 = tau * tau;
    let novel = day_inputs
        .iter()
        .filter(|x| {
            reference.iter().all(|r| {
                let d2: f64 = x.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 > tau2
            })
        })
        .count();
    novel as f64 / day_inputs.len() as f64
}

/// Prune quantile `q = clamp(alpha * novelty + beta * (utilization - target), 0, q_max)`.
pub fn adaptive_threshold(meta: &MetaStore, novelty: f64, cfg: &NightlyConfig) -> Result<f64> {
    if cfg.capacity_budget == 0 {
        return Err(Error::Config("capacity_budget must be positive".into()));
    }
    let utilization = meta.active_count() as f64 / cfg.capacity_budget as f64;
    let raw = cfg.quantile_alpha * novelty + cfg.quantile_beta * (utilization - cfg.target_utilization);
    Ok(raw.max(0.0).min(cfg.quantile_max))
}

/// Lower `q`-quantile (nearest rank, `floor(q * n)`) of effective usage over
/// active STM and LTM synapses. Returns 0 when there are none.
pub fn prune_threshold(meta: &MetaStore, q: f64) -> f64 {
    let mut values = plastic_effective_usage(meta);
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let rank = ((q * values.len() as f64).floor() as usize).min(values.len() - 1);
    values[rank]
}

fn plastic_effective_usage(meta: &MetaStore) -> Vec<f64> {
    let mut out = Vec::new();
    for m in &meta.layers {
        for k in 0..m.len() {
            if m.is_plastic(k) {
                out.push(effective_usage(&m.get(k)));
            }
        }
    }
    out
}

fn remove(state: &mut NetworkState, meta: &mut MetaStore, l: usize, k: usize) {
    let m = &mut meta.layers[l];
    m.active[k] = false;
    m.pruned[k] = true;
    state.weights[l].as_mut_slice()[k] = 0.0;
}

/// Permanently removes every non-PM synapse that is already inactive or whose
/// effective usage is below `theta`. Returns the number newly removed.
pub fn prune(state: &mut NetworkState, meta: &mut MetaStore, theta: f64) -> Result<usize> {
    meta.check_aligned(state)?;
    let mut count = 0;
    for l in 0..meta.layers.len() {
        for k in 0..meta.layers[l].len() {
            let s = meta.layers[l].get(k);
            if s.tier == Tier::Pm || s.pruned {
                continue;
            }
            if !s.active || effective_usage(&s) < theta {
                remove(state, meta, l, k);
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Removes the lowest effective-usage plastic synapses until at most
/// `budget` synapses are active. Ties go to the earliest coordinate.
pub fn enforce_capacity(state: &mut NetworkState, meta: &mut MetaStore, budget: usize) -> usize {
    let active = meta.active_count();
    if active <= budget {
        return 0;
    }
    let mut candidates = Vec::new();
    for (l, m) in meta.layers.iter().enumerate() {
        for k in 0..m.len() {
            if m.is_plastic(k) {
                candidates.push((effective_usage(&m.get(k)), l, k));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let excess = active - budget;
    let mut removed = 0;
    for &(_, l, k) in candidates.iter().take(excess) {
        remove(state, meta, l, k);
        removed += 1;
    }
    removed
}

/// Which parts of the nightly pass run. Baselines switch parts off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Consolidation {
    pub prune: bool,
    pub rehearse: bool,
    /// Anchor LTM weights with the importance penalty during rehearsal.
    pub anchor_rehearsal: bool,
    pub tier_transitions: bool,
}

impl Consolidation {
    pub const FULL: Consolidation = Consolidation {
        prune: true,
        rehearse: true,
        anchor_rehearsal: true,
        tier_transitions: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct NightReport {
    pub expert: usize,
    pub day_index: u64,
    pub novelty: f64,
    pub quantile: f64,
    pub theta: f64,
    pub prune_skipped: bool,
    pub pruned_count: usize,
    pub promoted: usize,
    pub graduated: usize,
    pub sentiment_tagged: usize,
    /// Active synapses when the night began.
    pub active_before: usize,
    pub post_prune_active_count: usize,
    pub rehearsal_skipped: bool,
    /// Unanchored loss on the first rehearsal batch, before and after.
    pub rehearsal_loss_before: Option<f64>,
    pub rehearsal_loss_after: Option<f64>,
}

/// Everything the nightly pass reads besides the expert itself.
pub struct NightInputs<'a> {
    pub day_inputs: &'a [Sample],
    pub stats: &'a DayStats,
    pub cfg: &'a NightlyConfig,
    pub policy: &'a TierPolicy,
    pub sgd: &'a SgdConfig,
    pub plan: Consolidation,
    pub expert: usize,
}

/// Nightly consolidation of one expert.
pub fn nightly<R: Rng + ?Sized>(
    state: &mut NetworkState,
    meta: &mut MetaStore,
    buffer: &ReplayBuffer,
    inputs: &NightInputs<'_>,
    rng: &mut R,
) -> Result<NightReport> {
    meta.check_aligned(state)?;
    let cfg = inputs.cfg;
    let day = inputs.stats.day_index;

    // (1) novelty against what the buffer held before today
    let today: Vec<&[f64]> = inputs.day_inputs.iter().map(|s| s.input.as_slice()).collect();
    let reference = buffer.inputs_before(day);
    let novelty = novelty_score(&today, &reference, cfg.novelty_tau);
    let prune_skipped = novelty < cfg.skip_novelty;

    let mut report = NightReport {
        expert: inputs.expert,
        day_index: day,
        novelty,
        quantile: 0.0,
        theta: 0.0,
        prune_skipped,
        pruned_count: 0,
        promoted: 0,
        graduated: 0,
        sentiment_tagged: 0,
        active_before: meta.active_count(),
        post_prune_active_count: 0,
        rehearsal_skipped: false,
        rehearsal_loss_before: None,
        rehearsal_loss_after: None,
    };

    // (2) adaptive pruning
    if inputs.plan.prune && !prune_skipped {
        report.quantile = adaptive_threshold(meta, novelty, cfg)?;
        report.theta = prune_threshold(meta, report.quantile);
        report.pruned_count = prune(state, meta, report.theta)?;
        report.pruned_count += enforce_capacity(state, meta, cfg.capacity_budget);
    }
    report.post_prune_active_count = meta.active_count();

    // (3) + (4) importance and rehearsal
    if inputs.plan.rehearse {
        if buffer.is_empty() {
            report.rehearsal_skipped = true;
        } else {
            let anchor = if inputs.plan.anchor_rehearsal && cfg.ewc_lambda > 0.0 {
                let all: Vec<Sample> = buffer.entries().map(|e| e.sample()).collect();
                Some(ImportanceMap::estimate(state, meta, &all, |t| t == Tier::Ltm)?)
            } else {
                None
            };
            let ewc = anchor.as_ref().map(|map| EwcTerm {
                map,
                lambda: cfg.ewc_lambda,
            });
            for round in 0..cfg.rehearsal_rounds {
                let batch: Vec<Sample> = buffer
                    .sample(cfg.rehearsal_batch, cfg.rehearsal_mix, rng)?
                    .into_iter()
                    .map(|e| e.sample())
                    .collect();
                let before = (round == 0).then(|| batch_loss(state, meta, &batch, None)).transpose()?;
                error_step(state, meta, &batch, inputs.sgd, UpdateScope::NightlyFull, ewc)?;
                if let Some(before) = before {
                    report.rehearsal_loss_before = Some(before);
                    report.rehearsal_loss_after = Some(batch_loss(state, meta, &batch, None)?);
                }
            }
        }
    }

    // (5) tier bookkeeping
    if inputs.plan.tier_transitions {
        report.sentiment_tagged = meta.sentiment_nightly(inputs.policy);
        report.promoted = meta.promote(inputs.policy);
        report.graduated = meta.graduate(inputs.policy);
    }
    meta.nightly_decay_usage(inputs.policy);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::LayerMeta;
    use crate::net::{init_network, Matrix, NetworkSpec};
    use rand::SeedableRng;

    fn single_row(weights: &[f64]) -> (NetworkState, MetaStore) {
        let mut n = init_network(&NetworkSpec::new(vec![weights.len(), 1], true), 0).unwrap();
        n.weights[0] = Matrix::from_vec(1, weights.len(), weights.to_vec()).unwrap();
        let meta = MetaStore::for_network(&n);
        (n, meta)
    }

    #[test]
    fn scheduler() {
        let cfg = MicrosleepConfig::default();
        assert!(!maybe_microsleep(0, &cfg));
        assert!(maybe_microsleep(100, &cfg));
        assert!(!maybe_microsleep(101, &cfg));
    }

    #[test]
    fn offset_rules() {
        let (mut n, mut meta) = single_row(&[0.5, 0.05, 0.5]);
        meta.layers[0].tier[2] = Tier::Pm;
        let cfg = MicrosleepConfig {
            offset: 0.1,
            ..Default::default()
        };
        let masked = microsleep(&mut n, &mut meta, &cfg, &[], &SgdConfig::default()).unwrap();
        assert_eq!(masked, 1);
        assert!((n.weights[0].get(0, 0) - 0.4).abs() < 1e-15);
        assert!(meta.layers[0].active[0]);
        assert_eq!(n.weights[0].get(0, 1), 0.0);
        assert!(!meta.layers[0].active[1]);
        assert_eq!(n.weights[0].get(0, 2), 0.5);
        assert!(meta.layers[0].active[2]);
    }

    #[test]
    fn novelty_cases() {
        let origin = [0.0, 0.0];
        assert_eq!(novelty_score(&[], &[&origin], 1.0), 0.0);
        let same: [&[f64]; 2] = [&origin, &origin];
        assert_eq!(novelty_score(&same, &[&origin], 1.0), 0.0);
        let day: [&[f64]; 3] = [&[0.5, 0.0], &[0.0, 2.0], &[3.0, 0.0]];
        assert!((novelty_score(&day, &[&origin], 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(novelty_score(&day, &[], 1.0), 1.0);
    }

    #[test]
    fn threshold_formula() {
        let meta = MetaStore {
            layers: vec![LayerMeta::new(1, 8)],
        };
        let at_target = NightlyConfig {
            capacity_budget: 10,
            ..Default::default()
        };
        assert_eq!(adaptive_threshold(&meta, 0.0, &at_target).unwrap(), 0.0);
        let full = NightlyConfig {
            capacity_budget: 8,
            ..Default::default()
        };
        assert_eq!(adaptive_threshold(&meta, 1.0, &full).unwrap(), 0.3);
        let roomy = NightlyConfig {
            capacity_budget: 1000,
            ..Default::default()
        };
        assert_eq!(adaptive_threshold(&meta, 0.0, &roomy).unwrap(), 0.0);
        let zero = NightlyConfig {
            capacity_budget: 0,
            ..Default::default()
        };
        assert!(matches!(adaptive_threshold(&meta, 0.0, &zero), Err(Error::Config(_))));
    }

    #[test]
    fn quantile_prunes_two_of_four() {
        let (mut n, mut meta) = single_row(&[0.1, 0.2, 0.3, 0.4]);
        meta.layers[0].usage = vec![0.0, 1.0, 10.0, 50.0];
        let theta = prune_threshold(&meta, 0.5);
        assert!(theta > 1.0 && theta <= 10.0);
        assert_eq!(prune(&mut n, &mut meta, theta).unwrap(), 2);
        assert_eq!(meta.layers[0].pruned, vec![true, true, false, false]);
        assert_eq!(n.weights[0].as_slice(), &[0.0, 0.0, 0.3, 0.4]);
    }

    #[test]
    fn zero_quantile_only_removes_masked() {
        let (mut n, mut meta) = single_row(&[0.1, 0.2, 0.3]);
        meta.layers[0].usage = vec![3.0, 1.0, 2.0];
        meta.layers[0].active[2] = false;
        let theta = prune_threshold(&meta, 0.0);
        assert_eq!(prune(&mut n, &mut meta, theta).unwrap(), 1);
        assert!(meta.layers[0].pruned[2]);
    }

    #[test]
    fn capacity_clamp() {
        let (mut n, mut meta) = single_row(&[0.1, 0.2, 0.3, 0.4]);
        meta.layers[0].usage = vec![5.0, 1.0, 3.0, 0.5];
        meta.layers[0].tier[3] = Tier::Pm;
        assert_eq!(enforce_capacity(&mut n, &mut meta, 2), 2);
        assert_eq!(meta.layers[0].active, vec![true, false, false, true]);
    }

    #[test]
    fn ewc_penalty_values() {
        let (n, _) = single_row(&[0.6]);
        let mut map = ImportanceMap::zeros_like(&n);
        assert_eq!(ewc_penalty(&n, &map, 2.0).unwrap(), 0.0);
        map.importance[0][0] = 1.0;
        assert_eq!(ewc_penalty(&n, &map, 2.0).unwrap(), 0.0);
        map.anchor[0][0] = 0.5;
        assert!((ewc_penalty(&n, &map, 2.0).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(ewc_penalty(&n, &map, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn all_pm_never_pruned() {
        let (mut n, mut meta) = single_row(&[0.1, 0.2]);
        meta.layers[0].tier.fill(Tier::Pm);
        let buffer = ReplayBuffer::new(2, Default::default());
        let day = vec![Sample::new(vec![9.0, 9.0], 0)];
        let stats = DayStats::for_day(0);
        let cfg = NightlyConfig {
            capacity_budget: 1,
            ..Default::default()
        };
        let inputs = NightInputs {
            day_inputs: &day,
            stats: &stats,
            cfg: &cfg,
            policy: &TierPolicy::default(),
            sgd: &SgdConfig::default(),
            plan: Consolidation::FULL,
            expert: 0,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let r = nightly(&mut n, &mut meta, &buffer, &inputs, &mut rng).unwrap();
        assert_eq!(r.novelty, 1.0);
        assert_eq!(r.pruned_count, 0);
        assert!(r.rehearsal_skipped);
    }
}
