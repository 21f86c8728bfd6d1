//! Property tests for the invariants of each module.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trimem::harness::metrics::{forgetting, MetricsMatrix};
use trimem::lifecycle::{Regime, System, SystemConfig, TickInput};
use trimem::memory::{MetaStore, Tier, SENTIMENT_MAX, SENTIMENT_MIN};
use trimem::net::{init_network, NetworkSpec, NetworkState, Sample};
use trimem::plasticity::{error_step, hebbian_step, HebbianConfig, SgdConfig, UpdateScope};
use trimem::replay::{Admission, EntryTag, ReplayBuffer, ReplayConfig};

fn spec_strategy() -> impl Strategy<Value = NetworkSpec> {
    (prop::collection::vec(1usize..12, 2..=4), any::<bool>()).prop_map(|(s, nn)| NetworkSpec::new(s, nn))
}

fn net_with_meta(spec: &NetworkSpec, seed: u64) -> (NetworkState, MetaStore) {
    let state = init_network(spec, seed).unwrap();
    let mut meta = MetaStore::for_network(&state);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for l in &mut meta.layers {
        for k in 0..l.len() {
            l.tier[k] = match rng.random_range(0..6) {
                0 => Tier::Pm,
                1 => Tier::Ltm,
                _ => Tier::Stm,
            };
            l.active[k] = l.tier[k] == Tier::Pm || rng.random_bool(0.8);
        }
    }
    (state, meta)
}

fn input_for(spec: &NetworkSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect()
}

fn small_system(seed: u64, day_length: u64) -> System {
    let mut c = SystemConfig::new(NetworkSpec::new(vec![4, 6, 3], true));
    c.seed = seed;
    c.day_length = day_length;
    c.max_experts = 3;
    c.microsleep.interval = 5;
    c.microsleep.offset = 1e-3;
    c.microsleep.minor_step = true;
    c.hebbian.weight_cap = Some(2.0);
    c.tiers.promote_usage = 2.0;
    c.tiers.promote_nights = 1;
    c.tiers.graduate_usage = 4.0;
    c.tiers.graduate_nights = 2;
    c.replay.recent_capacity = 8;
    c.replay.foundational_capacity = 4;
    c.replay.per_context_foundational = 2;
    c.nightly.rehearsal_batch = 4;
    c.regime = Regime::full();
    System::new(c).unwrap()
}

#[derive(Debug, Clone)]
struct Step {
    ctx: u8,
    input: Vec<f64>,
    target: usize,
    feedback: Option<f64>,
}

fn step_strategy() -> impl Strategy<Value = Step> {
    (
        0u8..4,
        prop::collection::vec(-1.0f64..1.0, 4),
        0usize..3,
        prop::option::of(1.0f64..=5.0),
    )
        .prop_map(|(ctx, input, target, feedback)| Step {
            ctx,
            input,
            target,
            feedback,
        })
}

fn tick_input(s: &Step) -> TickInput {
    let mut t = TickInput::new(format!("c{}", s.ctx), Sample::new(s.input.clone(), s.target));
    t.feedback = s.feedback;
    t
}

fn tier_rank(t: Tier) -> u8 {
    match t {
        Tier::Stm => 0,
        Tier::Ltm => 1,
        Tier::Pm => 2,
    }
}

proptest! {
    #[test]
    fn masked_weights_are_absent(spec in spec_strategy(), seed in any::<u64>()) {
        let (state, meta) = net_with_meta(&spec, seed);
        let x = input_for(&spec, seed);
        let (out, _) = state.forward(&x, &meta).unwrap();
        let mut zeroed = state.clone();
        for (w, m) in zeroed.weights.iter_mut().zip(&meta.layers) {
            for (k, v) in w.as_mut_slice().iter_mut().enumerate() {
                if !m.active[k] {
                    *v = 0.0;
                }
            }
        }
        let (out2, _) = zeroed.forward(&x, &meta).unwrap();
        prop_assert_eq!(out, out2);
    }

    #[test]
    fn init_and_forward_are_deterministic(spec in spec_strategy(), seed in any::<u64>()) {
        let a = init_network(&spec, seed).unwrap();
        let b = init_network(&spec, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let meta = MetaStore::for_network(&a);
        let x = input_for(&spec, seed);
        let (oa, ta) = a.forward(&x, &meta).unwrap();
        let (ob, tb) = b.forward(&x, &meta).unwrap();
        prop_assert_eq!(oa, ob);
        prop_assert_eq!(ta, tb);
        if spec.nonneg_weights {
            prop_assert!(a.min_weight() >= 0.0);
        }
    }

    #[test]
    fn hidden_activations_are_rectified(spec in spec_strategy(), seed in any::<u64>()) {
        let (state, meta) = net_with_meta(&spec, seed);
        let (_, trace) = state.forward(&input_for(&spec, seed), &meta).unwrap();
        prop_assert_eq!(trace.layers.len(), spec.layer_sizes.len());
        for lt in &trace.layers[1..spec.depth()] {
            prop_assert!(lt.post.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn hebbian_never_decreases_a_weight(spec in spec_strategy(), seed in any::<u64>(), eta in 0.0f64..0.5) {
        let (mut state, meta) = net_with_meta(&spec, seed);
        let before = state.clone();
        // every trace entry rectified, the input included
        let x: Vec<f64> = input_for(&spec, seed).iter().map(|v| v.abs()).collect();
        let (_, trace) = state.forward(&x, &meta).unwrap();
        let cfg = HebbianConfig { eta, ..Default::default() };
        hebbian_step(&mut state, &meta, &trace, &cfg).unwrap();
        for (w, w0) in state.weights.iter().zip(&before.weights) {
            for (a, b) in w.as_slice().iter().zip(w0.as_slice()) {
                prop_assert!(a >= b);
            }
        }
    }

    #[test]
    fn hebbian_with_zero_eta_is_identity(spec in spec_strategy(), seed in any::<u64>()) {
        let (mut state, meta) = net_with_meta(&spec, seed);
        let before = state.clone();
        let (_, trace) = state.forward(&input_for(&spec, seed), &meta).unwrap();
        let cfg = HebbianConfig { eta: 0.0, ..Default::default() };
        hebbian_step(&mut state, &meta, &trace, &cfg).unwrap();
        prop_assert_eq!(state, before);
    }

    #[test]
    fn pm_weights_survive_any_learning(
        spec in spec_strategy(),
        seed in any::<u64>(),
        ops in prop::collection::vec((any::<bool>(), 0usize..3, any::<u64>()), 1..12),
    ) {
        let (mut state, meta) = net_with_meta(&spec, seed);
        let pm: Vec<(usize, usize, u64)> = meta
            .layers
            .iter()
            .enumerate()
            .flat_map(|(l, m)| (0..m.len()).filter(|&k| m.tier[k] == Tier::Pm).map(move |k| (l, k)))
            .map(|(l, k)| (l, k, state.weights[l].as_slice()[k].to_bits()))
            .collect();
        let sgd = SgdConfig { lr: 0.2, ..Default::default() };
        for (hebb, scope, s) in ops {
            let x = input_for(&spec, s);
            if hebb {
                let (_, trace) = state.forward(&x, &meta).unwrap();
                hebbian_step(&mut state, &meta, &trace, &HebbianConfig::default()).unwrap();
            } else {
                let scope = [UpdateScope::MicrosleepMinor, UpdateScope::NightlyFull][scope % 2];
                let target = (s as usize) % spec.output_dim();
                error_step(&mut state, &meta, &[Sample::new(x, target)], &sgd, scope, None).unwrap();
            }
            if spec.nonneg_weights {
                prop_assert!(state.min_weight() >= 0.0);
            }
        }
        for (l, k, bits) in pm {
            prop_assert_eq!(state.weights[l].as_slice()[k].to_bits(), bits);
        }
    }

    #[test]
    fn replay_capacity_and_foundational_stability(
        cap in 0usize..12,
        fcap in 0usize..6,
        k in 0usize..4,
        stream in prop::collection::vec((0u8..4, -1.0f64..1.0), 0..200),
        seed in any::<u64>(),
    ) {
        let cfg = ReplayConfig { recent_capacity: cap, foundational_capacity: fcap, per_context_foundational: k };
        let mut buf = ReplayBuffer::new(1, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, (ctx, v)) in stream.iter().enumerate() {
            let before = buf.foundational.clone();
            let a = buf.observe(&[*v], 0, &format!("c{ctx}"), i as u64, &mut rng).unwrap();
            prop_assert!(buf.recent.len() <= cap);
            prop_assert!(buf.foundational.len() <= fcap);
            prop_assert_eq!(&buf.foundational[..before.len()], &before[..]);
            if a == Admission::Foundational {
                prop_assert_eq!(buf.foundational.last().unwrap().tag, EntryTag::Foundational);
            }
        }
        for (ctx, n) in &buf.foundational_per_context {
            prop_assert!(*n <= k);
            prop_assert_eq!(buf.foundational.iter().filter(|e| &e.context == ctx).count(), *n);
        }
        if !buf.is_empty() {
            let a: Vec<_> = buf.sample(7, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b: Vec<_> = buf.sample(7, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn forgetting_is_bounded(rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 10), 1..10)) {
        let mut m = MetricsMatrix::new();
        for (i, r) in rows.iter().enumerate() {
            m.push_row(r[..=i].to_vec()).unwrap();
        }
        let f = forgetting(&m);
        prop_assert!((-1.0..=1.0).contains(&f.mean));
        prop_assert!(f.per_task.iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!((0.0..=1.0).contains(&m.final_average_accuracy()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    /// Tier order, PM immutability, usage and sentiment ranges, buffer
    /// capacity and inference bookkeeping over random tick streams.
    #[test]
    fn lifecycle_invariants(seed in any::<u64>(), steps in prop::collection::vec(step_strategy(), 1..160)) {
        let day_length = 12;
        let mut sys = small_system(seed, day_length);
        let mut tiers: Vec<Vec<Vec<Tier>>> = Vec::new();
        let mut pm_bits: Vec<Vec<(usize, usize, u64)>> = Vec::new();
        let mut days = 0u64;
        let mut inferences = 0u64;
        for (i, s) in steps.iter().enumerate() {
            let out = sys.tick(tick_input(s)).unwrap();
            if out.night.is_some() {
                days += 1;
            }
            inferences += 1;
            for (e_idx, e) in sys.pool.experts.iter().enumerate() {
                if tiers.len() <= e_idx {
                    tiers.push(e.meta.layers.iter().map(|l| l.tier.clone()).collect());
                    pm_bits.push(Vec::new());
                }
                for (l, m) in e.meta.layers.iter().enumerate() {
                    for k in 0..m.len() {
                        prop_assert!(tier_rank(tiers[e_idx][l][k]) <= tier_rank(m.tier[k]), "tier demoted at step {}", i);
                        tiers[e_idx][l][k] = m.tier[k];
                        if m.tier[k] == Tier::Pm {
                            prop_assert!(m.active[k] && !m.pruned[k]);
                        }
                        prop_assert!(m.usage[k] >= 0.0);
                        prop_assert!(m.usage[k] <= 10.0 * day_length as f64);
                        prop_assert!((SENTIMENT_MIN..=SENTIMENT_MAX).contains(&m.sentiment_ema[k]));
                        if m.pruned[k] {
                            prop_assert!(!m.active[k]);
                            prop_assert_eq!(e.state.weights[l].as_slice()[k], 0.0);
                        }
                    }
                }
                for &(l, k, bits) in &pm_bits[e_idx] {
                    prop_assert_eq!(e.state.weights[l].as_slice()[k].to_bits(), bits);
                }
                pm_bits[e_idx] = e
                    .meta
                    .layers
                    .iter()
                    .enumerate()
                    .flat_map(|(l, m)| (0..m.len()).filter(move |&k| m.tier[k] == Tier::Pm).map(move |k| (l, k)))
                    .map(|(l, k)| (l, k, e.state.weights[l].as_slice()[k].to_bits()))
                    .collect();
                prop_assert!(e.state.min_weight() >= 0.0);
            }
            for b in &sys.buffers {
                prop_assert!(b.recent.len() <= b.config.recent_capacity);
                prop_assert!(b.foundational.len() <= b.config.foundational_capacity);
            }
            let stats = &sys.lifecycle.stats;
            prop_assert!(stats.success_count <= stats.inference_count);
        }
        prop_assert_eq!(sys.lifecycle.day_index, days);
        prop_assert_eq!(sys.lifecycle.step_counter, inferences);
        prop_assert_eq!(sys.lifecycle.stats.inference_count, inferences - days * day_length);
    }

    /// Work routed to one context never touches another context's expert.
    #[test]
    fn expert_isolation(seed in any::<u64>(), steps in prop::collection::vec(step_strategy(), 1..120)) {
        let mut sys = small_system(seed, 1_000_000);
        for ctx in 0..3u8 {
            let s = Step { ctx, input: vec![0.5; 4], target: 0, feedback: None };
            sys.tick(tick_input(&s)).unwrap();
        }
        for s in steps {
            let before: Vec<u64> = sys.pool.experts.iter().map(|e| e.checksum()).collect();
            let buffers = sys.buffers.clone();
            let out = sys.tick(tick_input(&s)).unwrap();
            for (j, e) in sys.pool.experts.iter().enumerate().take(before.len()) {
                if j != out.expert {
                    prop_assert_eq!(e.checksum(), before[j]);
                    prop_assert_eq!(&sys.buffers[j], &buffers[j]);
                }
            }
        }
    }

    /// The gate is a pure function of pool contents and context.
    #[test]
    fn gate_is_pure(seed in any::<u64>(), steps in prop::collection::vec(step_strategy(), 1..40)) {
        let mut sys = small_system(seed, 1_000_000);
        for s in &steps {
            sys.tick(tick_input(s)).unwrap();
        }
        for c in 0..6u8 {
            let key = format!("c{c}");
            prop_assert_eq!(sys.pool.gate(&key).ok(), sys.pool.gate(&key).ok());
            prop_assert_eq!(sys.route(&key), sys.clone().route(&key));
        }
        let dims: Vec<(usize, usize)> = sys
            .pool
            .experts
            .iter()
            .map(|e| (e.state.spec.input_dim(), e.state.spec.output_dim()))
            .collect();
        prop_assert!(dims.windows(2).all(|w| w[0] == w[1]));
    }
}

/// Reservoir admission is uniform over stream positions: 100 seeded streams
/// of 10,000 entries into capacity 256, survivors binned into 50 position
/// bins, Pearson chi-square against the uniform expectation.
#[test]
fn reservoir_admission_is_uniform() {
    const STREAM: usize = 10_000;
    const CAP: usize = 256;
    const BINS: usize = 50;
    // upper 0.1% point of chi-square with 49 degrees of freedom
    const CRITICAL: f64 = 85.35;
    let mut counts = [0u64; BINS];
    for s in 0..100u64 {
        let cfg = ReplayConfig { recent_capacity: CAP, foundational_capacity: 0, per_context_foundational: 0 };
        let mut buf = ReplayBuffer::new(1, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        for i in 0..STREAM {
            buf.observe(&[i as f64], 0, "a", 0, &mut rng).unwrap();
        }
        assert_eq!(buf.recent.len(), CAP);
        for e in &buf.recent {
            counts[e.input[0] as usize * BINS / STREAM] += 1;
        }
    }
    let expected = 100.0 * CAP as f64 / BINS as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < CRITICAL, "chi-square {chi2} over {counts:?}");
    // each position's admission frequency is close to CAP / STREAM
    let total: u64 = counts.iter().sum();
    assert_eq!(total, 100 * CAP as u64);
}
