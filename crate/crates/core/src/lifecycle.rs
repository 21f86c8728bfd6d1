//! The operational cycle binding everything together.
//!
//! Each [`System::tick`] routes one sample to its expert, predicts, records
//! usage, applies the Hebbian increment, files the sample in the replay
//! buffer and, when due, runs a microsleep on that expert. When the day's
//! inference budget is spent a nightly consolidation runs over every expert.
//!
//! A tick is transactional: all expert mutations happen on a staged copy
//! that is committed only once every fallible step has succeeded.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::experts::{Expert, ExpertPool, Gate};
use crate::memory::TierPolicy;
use crate::net::{argmax, NetworkSpec, Sample};
use crate::plasticity::{error_step, hebbian_step, EwcTerm, HebbianConfig, SgdConfig, UpdateScope};
use crate::replay::{ReplayBuffer, ReplayConfig};
use crate::sleep::{
    maybe_microsleep, microsleep, nightly, Consolidation, DayStats, ImportanceMap, MicrosleepConfig,
    NightInputs, NightReport, NightlyConfig,
};

/// Context key every sample maps to under shared routing.
pub const SHARED_CONTEXT: &str = "shared";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// One expert per context key, created on first sight.
    PerContext,
    /// A single expert serves every context.
    Shared,
}

/// Which mechanisms are switched on. The full system and each baseline are
/// particular settings of these flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Regime {
    pub routing: Routing,
    pub hebbian: bool,
    pub microsleep: bool,
    /// One gradient step on every sample as it arrives.
    pub online_sgd: bool,
    /// Accumulate an importance anchor at each day's end and apply it to
    /// online gradient steps.
    pub daily_anchor: bool,
    pub consolidation: Consolidation,
}

impl Regime {
    pub fn full() -> Self {
        Self {
            routing: Routing::PerContext,
            hebbian: true,
            microsleep: true,
            online_sgd: false,
            daily_anchor: false,
            consolidation: Consolidation::FULL,
        }
    }

    pub fn naive() -> Self {
        Self {
            routing: Routing::Shared,
            hebbian: false,
            microsleep: false,
            online_sgd: true,
            daily_anchor: false,
            consolidation: Consolidation {
                prune: false,
                rehearse: false,
                anchor_rehearsal: false,
                tier_transitions: false,
            },
        }
    }

    pub fn replay_only() -> Self {
        let mut r = Self::naive();
        r.consolidation.rehearse = true;
        r
    }

    pub fn ewc_only() -> Self {
        let mut r = Self::naive();
        r.daily_anchor = true;
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub network: NetworkSpec,
    pub tiers: TierPolicy,
    pub hebbian: HebbianConfig,
    pub sgd: SgdConfig,
    pub microsleep: MicrosleepConfig,
    pub nightly: NightlyConfig,
    pub replay: ReplayConfig,
    pub max_experts: usize,
    /// Inferences per simulated day.
    pub day_length: u64,
    /// EMA coefficient for sentiment ratings.
    pub sentiment_alpha: f64,
    pub regime: Regime,
    pub seed: u64,
}

impl SystemConfig {
    pub fn new(network: NetworkSpec) -> Self {
        Self {
            network,
            tiers: TierPolicy::default(),
            hebbian: HebbianConfig::default(),
            sgd: SgdConfig::default(),
            microsleep: MicrosleepConfig::default(),
            nightly: NightlyConfig::default(),
            replay: ReplayConfig::default(),
            max_experts: 8,
            day_length: 1000,
            sentiment_alpha: 0.2,
            regime: Regime::full(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.tiers.validate()?;
        self.hebbian.validate()?;
        self.sgd.validate()?;
        self.microsleep.validate()?;
        self.nightly.validate()?;
        self.replay.validate()?;
        if self.max_experts == 0 {
            return Err(Error::Config("max_experts must be positive".into()));
        }
        if self.day_length == 0 {
            return Err(Error::Config("day_length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sentiment_alpha) {
            return Err(Error::Config("sentiment_alpha must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Inference,
    Microsleep,
    Nightly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifecycleState {
    pub phase: Phase,
    /// Total ticks processed.
    pub step_counter: u64,
    pub day_index: u64,
    pub stats: DayStats,
}

/// One incoming inference request.
#[derive(Debug, Clone, PartialEq)]
pub struct TickInput {
    pub context: String,
    pub input: Vec<f64>,
    pub target: usize,
    /// Optional 1-5 rating of this interaction.
    pub feedback: Option<f64>,
}

impl TickInput {
    pub fn new(context: impl Into<String>, sample: Sample) -> Self {
        Self {
            context: context.into(),
            input: sample.input,
            target: sample.target,
            feedback: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub prediction: usize,
    pub expert: usize,
    pub success: bool,
    /// Synapses masked by a microsleep run during this tick.
    pub microsleep: Option<usize>,
    /// Reports of a nightly pass triggered by this tick.
    pub night: Option<Vec<NightReport>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayReport {
    pub day_index: u64,
    pub inferences: u64,
    pub successes: u64,
    pub accuracy: f64,
    /// Novelty over all experts, weighted by how many inputs each saw.
    pub novelty: f64,
    /// Inputs that were novel against the replay buffers.
    pub novel_count: u64,
    pub nights: Vec<NightReport>,
    /// Active synapses per tier over all experts, `[stm, ltm, pm]`.
    pub tier_histogram: [usize; 3],
    pub active_count: usize,
    pub microsleeps: usize,
    pub deactivated: usize,
}

impl DayReport {
    pub fn pruned(&self) -> usize {
        self.nights.iter().map(|n| n.pruned_count).sum()
    }
}

/// A complete continual learner: expert pool, replay buffers, RNG and the
/// lifecycle phase machine.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub config: SystemConfig,
    pub lifecycle: LifecycleState,
    pub pool: ExpertPool,
    /// One replay buffer per expert.
    pub buffers: Vec<ReplayBuffer>,
    /// Accumulated per-expert anchors for the daily-anchor regime.
    pub anchors: Vec<Option<ImportanceMap>>,
    pub rng: ChaCha8Rng,
    day_samples: Vec<Vec<Sample>>,
    recent: Vec<Vec<Sample>>,
}

/// Seed of the expert created at position `index`.
pub fn expert_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl System {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let pool = ExpertPool::new(config.network.clone(), config.max_experts)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed.rotate_left(7) ^ 0x5EED);
        let mut system = Self {
            lifecycle: LifecycleState {
                phase: Phase::Inference,
                step_counter: 0,
                day_index: 0,
                stats: DayStats::for_day(0),
            },
            pool,
            buffers: Vec::new(),
            anchors: Vec::new(),
            rng,
            day_samples: Vec::new(),
            recent: Vec::new(),
            config,
        };
        if system.config.regime.routing == Routing::Shared {
            let expert = Expert::new(&system.config.network, expert_seed(system.config.seed, 0))?;
            system.register(SHARED_CONTEXT, expert);
        }
        Ok(system)
    }

    /// Rebuilds a system from persisted parts (used by checkpoint loading).
    pub(crate) fn from_parts(
        config: SystemConfig,
        lifecycle: LifecycleState,
        pool: ExpertPool,
        buffers: Vec<ReplayBuffer>,
        anchors: Vec<Option<ImportanceMap>>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let n = pool.len();
        if buffers.len() != n || anchors.len() != n {
            return Err(Error::Consistency("per-expert stores disagree on expert count".into()));
        }
        for e in &pool.experts {
            e.meta.check_aligned(&e.state)?;
            if e.state.spec != config.network {
                return Err(Error::Consistency("expert shape differs from configured network".into()));
            }
        }
        Ok(Self {
            config,
            lifecycle,
            pool,
            buffers,
            anchors,
            rng,
            day_samples: vec![Vec::new(); n],
            recent: vec![Vec::new(); n],
        })
    }

    fn register(&mut self, context: &str, expert: Expert) -> usize {
        let idx = self.pool.push_expert(context, expert);
        self.buffers
            .push(ReplayBuffer::new(self.config.network.input_dim(), self.config.replay.clone()));
        self.anchors.push(None);
        self.day_samples.push(Vec::new());
        self.recent.push(Vec::new());
        idx
    }

    /// True when no inference has happened since the last nightly pass.
    pub fn at_day_boundary(&self) -> bool {
        self.lifecycle.phase == Phase::Inference && self.day_samples.iter().all(Vec::is_empty)
    }

    fn pool_key<'a>(&self, context: &'a str) -> &'a str {
        match self.config.regime.routing {
            Routing::PerContext => context,
            Routing::Shared => SHARED_CONTEXT,
        }
    }

    /// Expert index that would serve `context`, without creating anything.
    /// Unknown contexts fall back to expert 0.
    pub fn route(&self, context: &str) -> Option<usize> {
        match self.pool.gate(self.pool_key(context)) {
            Ok(Gate::Registered(i)) => Some(i),
            _ if self.pool.is_empty() => None,
            _ => Some(0),
        }
    }

    /// Pure prediction: no usage, no plasticity, no buffer writes.
    pub fn predict(&self, context: &str, input: &[f64]) -> Result<Vec<f64>> {
        match self.route(context) {
            Some(i) => {
                let e = &self.pool.experts[i];
                Ok(e.state.forward(input, &e.meta)?.0)
            }
            None => {
                let fresh = Expert::new(&self.config.network, expert_seed(self.config.seed, 0))?;
                Ok(fresh.state.forward(input, &fresh.meta)?.0)
            }
        }
    }

    /// Fraction of `samples` classified correctly when routed by `context`.
    pub fn evaluate(&self, context: &str, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for s in samples {
            if argmax(&self.predict(context, &s.input)?) == s.target {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }

    fn validate_input(&self, input: &TickInput) -> Result<()> {
        let spec = &self.config.network;
        if input.input.len() != spec.input_dim() {
            return Err(Error::shape("input", spec.input_dim(), input.input.len()));
        }
        if input.input.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("input contains a non-finite value".into()));
        }
        if input.target >= spec.output_dim() {
            return Err(Error::Argument(format!(
                "target class {} out of range for {} outputs",
                input.target,
                spec.output_dim()
            )));
        }
        if let Some(f) = input.feedback {
            if !(1.0..=5.0).contains(&f) {
                return Err(Error::Argument(format!("feedback {f} outside [1, 5]")));
            }
        }
        Ok(())
    }

    /// Processes one inference. On error nothing observable changes.
    pub fn tick(&mut self, input: TickInput) -> Result<TickOutcome> {
        if self.lifecycle.phase != Phase::Inference {
            return Err(Error::Phase(format!("tick during {:?}", self.lifecycle.phase)));
        }
        self.validate_input(&input)?;
        let key = self.pool_key(&input.context).to_string();

        let (index, fresh) = match self.pool.gate(&key) {
            Ok(Gate::Registered(i)) => (i, false),
            Ok(Gate::Vacancy(i)) => (i, true),
            Err(Error::Capacity { .. }) => (0, false),
            Err(e) => return Err(e),
        };
        let mut staged = if fresh {
            Expert::new(&self.config.network, expert_seed(self.config.seed, index))?
        } else {
            self.pool.experts[index].clone()
        };

        let cfg = &self.config;
        let sample = Sample::new(input.input.clone(), input.target);
        let (output, trace) = staged.state.forward(&sample.input, &staged.meta)?;
        let prediction = argmax(&output);
        let success = prediction == sample.target;

        staged.meta.record_usage(&trace, &staged.state, success, &cfg.tiers)?;
        if let Some(rating) = input.feedback {
            staged
                .meta
                .apply_sentiment(&trace, &staged.state, rating, cfg.sentiment_alpha, &cfg.tiers)?;
        }
        if cfg.regime.hebbian && cfg.hebbian.per_inference {
            hebbian_step(&mut staged.state, &staged.meta, &trace, &cfg.hebbian)?;
        }
        if cfg.regime.online_sgd {
            let anchor = if fresh { None } else { self.anchors[index].as_ref() };
            let ewc = anchor.map(|map| EwcTerm {
                map,
                lambda: cfg.nightly.ewc_lambda,
            });
            error_step(
                &mut staged.state,
                &staged.meta,
                std::slice::from_ref(&sample),
                &cfg.sgd,
                UpdateScope::MicrosleepMinor,
                ewc,
            )?;
        }
        staged.state.step_counter += 1;

        let mut window = if fresh { Vec::new() } else { self.recent[index].clone() };
        window.push(sample.clone());
        let keep = cfg.sgd.microstep_batch;
        if window.len() > keep {
            window.drain(..window.len() - keep);
        }

        let mut slept = None;
        if cfg.regime.microsleep && maybe_microsleep(staged.state.step_counter, &cfg.microsleep) {
            self.lifecycle.phase = Phase::Microsleep;
            let r = microsleep(&mut staged.state, &mut staged.meta, &cfg.microsleep, &window, &cfg.sgd);
            self.lifecycle.phase = Phase::Inference;
            slept = Some(r?);
        }

        // Everything below is infallible except the nightly pass, which is
        // guarded by a snapshot.
        let boundary = self.lifecycle.stats.inference_count + 1 >= self.config.day_length;
        let snapshot = boundary.then(|| self.clone());

        if fresh {
            self.register(&key, staged);
        } else {
            self.pool.experts[index] = staged;
        }
        let day = self.lifecycle.day_index;
        self.buffers[index]
            .observe(&sample.input, sample.target, &input.context, day, &mut self.rng)
            .expect("input dimension validated");
        self.day_samples[index].push(sample);
        self.recent[index] = window;
        self.lifecycle.step_counter += 1;
        self.lifecycle.stats.inference_count += 1;
        if success {
            self.lifecycle.stats.success_count += 1;
        }

        let mut night = None;
        if boundary {
            match self.run_nightly() {
                Ok(r) => night = Some(r),
                Err(e) => {
                    *self = *Box::new(snapshot.expect("snapshot taken at boundary"));
                    return Err(e);
                }
            }
        }
        Ok(TickOutcome {
            prediction,
            expert: index,
            success,
            microsleep: slept,
            night,
        })
    }

    /// Nightly consolidation over every expert, then the day rolls over.
    /// Either every expert is consolidated or nothing changes.
    pub fn run_nightly(&mut self) -> Result<Vec<NightReport>> {
        if self.lifecycle.phase != Phase::Inference {
            return Err(Error::Phase(format!("nightly during {:?}", self.lifecycle.phase)));
        }
        self.lifecycle.phase = Phase::Nightly;
        let result = self.consolidate_all();
        self.lifecycle.phase = Phase::Inference;
        let (experts, anchors, rng, reports) = result?;

        for (slot, e) in self.pool.experts.iter_mut().zip(experts) {
            *slot = e;
        }
        self.anchors = anchors;
        self.rng = rng;
        self.day_samples.iter_mut().for_each(Vec::clear);
        self.recent.iter_mut().for_each(Vec::clear);
        self.lifecycle.day_index += 1;
        self.lifecycle.stats = DayStats::for_day(self.lifecycle.day_index);
        Ok(reports)
    }

    #[allow(clippy::type_complexity)]
    fn consolidate_all(
        &self,
    ) -> Result<(Vec<Expert>, Vec<Option<ImportanceMap>>, ChaCha8Rng, Vec<NightReport>)> {
        let cfg = &self.config;
        let mut rng = self.rng.clone();
        let mut experts = self.pool.experts.clone();
        let mut anchors = self.anchors.clone();
        let mut reports = Vec::with_capacity(experts.len());
        for (i, e) in experts.iter_mut().enumerate() {
            let inputs = NightInputs {
                day_inputs: &self.day_samples[i],
                stats: &self.lifecycle.stats,
                cfg: &cfg.nightly,
                policy: &cfg.tiers,
                sgd: &cfg.sgd,
                plan: cfg.regime.consolidation,
                expert: i,
            };
            reports.push(nightly(&mut e.state, &mut e.meta, &self.buffers[i], &inputs, &mut rng)?);
            if cfg.regime.daily_anchor && !self.day_samples[i].is_empty() {
                let today = ImportanceMap::estimate(&e.state, &e.meta, &self.day_samples[i], |_| true)?;
                match &mut anchors[i] {
                    Some(acc) => acc.accumulate(today),
                    slot @ None => *slot = Some(today),
                }
            }
        }
        Ok((experts, anchors, rng, reports))
    }

    /// Runs every sample through [`tick`](Self::tick), then closes the day
    /// with a nightly pass unless the last tick already did.
    pub fn run_day<I>(&mut self, samples: I) -> Result<DayReport>
    where
        I: IntoIterator<Item = TickInput>,
    {
        let day_index = self.lifecycle.day_index;
        let mut report = DayReport {
            day_index,
            inferences: 0,
            successes: 0,
            accuracy: 0.0,
            novelty: 0.0,
            novel_count: 0,
            nights: Vec::new(),
            tier_histogram: [0; 3],
            active_count: 0,
            microsleeps: 0,
            deactivated: 0,
        };
        let mut closed = false;
        let mut weighted_novelty = 0.0;
        let mut novelty_weight = 0usize;
        let mut day_sizes = self.day_samples.iter().map(Vec::len).collect::<Vec<_>>();
        let mut account = |nights: &[NightReport], sizes: &[usize]| {
            for n in nights {
                let w = sizes.get(n.expert).copied().unwrap_or(0);
                weighted_novelty += n.novelty * w as f64;
                novelty_weight += w;
            }
        };
        for input in samples {
            let out = self.tick(input)?;
            report.inferences += 1;
            if out.success {
                report.successes += 1;
            }
            if let Some(d) = out.microsleep {
                report.microsleeps += 1;
                report.deactivated += d;
            }
            day_sizes.resize(self.pool.len(), 0);
            if let Some(n) = &out.night {
                account(n, &day_sizes);
                report.nights.extend(n.iter().cloned());
                day_sizes.iter_mut().for_each(|s| *s = 0);
                closed = true;
            } else {
                day_sizes[out.expert] += 1;
                closed = false;
            }
        }
        if !closed {
            let sizes: Vec<usize> = self.day_samples.iter().map(Vec::len).collect();
            let n = self.run_nightly()?;
            account(&n, &sizes);
            report.nights.extend(n);
        }
        report.accuracy = if report.inferences > 0 {
            report.successes as f64 / report.inferences as f64
        } else {
            0.0
        };
        report.novel_count = weighted_novelty.round() as u64;
        report.novelty = if novelty_weight > 0 {
            weighted_novelty / novelty_weight as f64
        } else {
            0.0
        };
        for e in &self.pool.experts {
            let h = e.meta.tier_histogram();
            for (total, n) in report.tier_histogram.iter_mut().zip(h) {
                *total += n;
            }
        }
        report.active_count = self.pool.active_count();
        Ok(report)
    }

    /// Checksum over experts, buffers and RNG position.
    pub fn checksum(&self) -> u64 {
        let mut h = crate::net::Fnv::new();
        h.write_u64(self.pool.checksum());
        for b in &self.buffers {
            h.write_u64(b.seen_count);
            for e in b.entries() {
                e.input.iter().for_each(|v| h.write_u64(v.to_bits()));
                h.write_u64(e.target as u64);
                h.write_u64(e.day_seen);
                h.write_bytes(e.context.as_bytes());
            }
        }
        h.write_u64(self.rng.get_word_pos() as u64);
        h.write_u64(self.lifecycle.step_counter);
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(regime: Regime) -> SystemConfig {
        let mut c = SystemConfig::new(NetworkSpec::new(vec![4, 6, 3], true));
        c.regime = regime;
        c.seed = 3;
        c.hebbian.weight_cap = Some(1.0);
        c
    }

    fn input(ctx: &str, i: usize) -> TickInput {
        let x = (0..4).map(|k| ((i * 7 + k * 3) % 5) as f64 * 0.2).collect();
        TickInput::new(ctx, Sample::new(x, i % 3))
    }

    #[test]
    fn first_tick_touches_one_expert() {
        let mut s = System::new(config(Regime::full())).unwrap();
        s.tick(input("A", 0)).unwrap();
        s.tick(input("B", 1)).unwrap();
        let before: Vec<u64> = s.pool.experts.iter().map(Expert::checksum).collect();
        let out = s.tick(input("A", 2)).unwrap();
        assert_eq!(out.expert, 0);
        let after: Vec<u64> = s.pool.experts.iter().map(Expert::checksum).collect();
        assert_ne!(before[0], after[0]);
        assert_eq!(before[1], after[1]);
        assert_eq!(s.lifecycle.step_counter, 3);
    }

    #[test]
    fn microsleep_on_interval() {
        let mut c = config(Regime::full());
        c.microsleep.interval = 5;
        let mut s = System::new(c).unwrap();
        let mut count = 0;
        for i in 0..10 {
            let out = s.tick(input("A", i)).unwrap();
            if out.microsleep.is_some() {
                count += 1;
                assert!(i == 4 || i == 9);
            }
        }
        assert_eq!(count, 2);
    }

    #[test]
    fn day_boundary_emits_one_night() {
        let mut s = System::new(config(Regime::full())).unwrap();
        let mut nights = 0;
        for i in 0..1000 {
            if let Some(r) = s.tick(input("A", i)).unwrap().night {
                assert_eq!(r.len(), 1);
                nights += 1;
            }
        }
        assert_eq!(nights, 1);
        assert_eq!(s.lifecycle.day_index, 1);
    }

    #[test]
    fn empty_day() {
        let mut s = System::new(config(Regime::full())).unwrap();
        let r = s.run_day(Vec::new()).unwrap();
        assert_eq!(r.inferences, 0);
        assert_eq!(r.novelty, 0.0);
        assert!(r.nights.iter().all(|n| n.prune_skipped && n.pruned_count == 0));
    }

    #[test]
    fn invalid_tick_changes_nothing() {
        let mut s = System::new(config(Regime::full())).unwrap();
        s.tick(input("A", 0)).unwrap();
        let before = s.clone();
        let mut bad = input("A", 1);
        bad.input.pop();
        assert!(s.tick(bad).is_err());
        let mut bad = input("A", 1);
        bad.feedback = Some(9.0);
        assert!(s.tick(bad).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn full_pool_falls_back_to_first_expert() {
        let mut c = config(Regime::full());
        c.max_experts = 1;
        let mut s = System::new(c).unwrap();
        s.tick(input("A", 0)).unwrap();
        let out = s.tick(input("B", 1)).unwrap();
        assert_eq!(out.expert, 0);
        assert_eq!(s.pool.len(), 1);
    }
}
