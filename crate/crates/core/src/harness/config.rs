//! Run configuration in a flat `[section]` / `key = value` text format.
//!
//! Lines starting with `#` or `;` are comments. Every key is optional and
//! falls back to its default; unknown sections and keys are rejected before
//! anything runs. `render` writes every key, so its output doubles as the
//! reference listing of defaults.

use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::stream::{StreamKind, TaskStreamSpec};
use crate::lifecycle::{Regime, Routing, SystemConfig};
use crate::net::NetworkSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Full,
    Naive,
    ReplayOnly,
    EwcOnly,
}

impl Baseline {
    pub const ALL: [Baseline; 4] = [Baseline::Naive, Baseline::ReplayOnly, Baseline::EwcOnly, Baseline::Full];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Full => "full",
            Baseline::Naive => "naive",
            Baseline::ReplayOnly => "replay-only",
            Baseline::EwcOnly => "ewc-only",
        }
    }

    pub fn regime(self) -> Regime {
        match self {
            Baseline::Full => Regime::full(),
            Baseline::Naive => Regime::naive(),
            Baseline::ReplayOnly => Regime::replay_only(),
            Baseline::EwcOnly => Regime::ewc_only(),
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Baseline::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Module settings. `regime` and `seed` are overwritten per run from
    /// `baseline` and `seeds`.
    pub system: SystemConfig,
    pub stream: TaskStreamSpec,
    pub baseline: Baseline,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub name: String,
    /// Simulated days spent on each task's training split.
    pub days_per_task: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::new(NetworkSpec::new(vec![16, 32, 3], true)),
            stream: TaskStreamSpec::default(),
            baseline: Baseline::Full,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
            name: "run".to_string(),
            days_per_task: 1,
        }
    }
}

impl RunConfig {
    /// Parses and validates a full run configuration.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::parse_fields(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses keys without the cross-field checks tying the network to the
    /// benchmark stream. Unknown keys and bad values are still rejected.
    pub fn parse_fields(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (section, key, value) in entries(text)? {
            let known = set_module_field(&mut cfg.system, &section, &key, &value)?
                || set_stream_field(&mut cfg.stream, &section, &key, &value)?
                || cfg.set_run_field(&section, &key, &value)?;
            if !known {
                return Err(Error::Config(format!("unknown key [{section}] {key}")));
            }
        }
        Ok(cfg)
    }

    fn set_run_field(&mut self, section: &str, key: &str, v: &str) -> Result<bool> {
        if section != "run" {
            return Ok(false);
        }
        match key {
            "baseline" => self.baseline = v.parse()?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "name" => self.name = v.to_string(),
            "days_per_task" => self.days_per_task = num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        let mut sys = self.system.clone();
        sys.regime = self.baseline.regime();
        sys.validate()?;
        if sys.network.input_dim() != self.stream.input_dim {
            return Err(Error::Config(format!(
                "network input {} does not match stream input_dim {}",
                sys.network.input_dim(),
                self.stream.input_dim
            )));
        }
        if sys.network.output_dim() < self.stream.n_classes {
            return Err(Error::Config("network has fewer outputs than stream classes".into()));
        }
        if sys.network.depth() > 3 || sys.network.layer_sizes.iter().any(|&n| n > 128) {
            return Err(Error::Config("networks are limited to 3 layers of at most 128 units".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.days_per_task == 0 {
            return Err(Error::Config("days_per_task must be positive".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config("name must be a plain file stem".into()));
        }
        Ok(())
    }

    /// System configuration for one seed.
    pub fn system_for(&self, baseline: Baseline, seed: u64) -> SystemConfig {
        let mut s = self.system.clone();
        s.regime = baseline.regime();
        s.seed = seed;
        s
    }

    /// Stream settings for one seed.
    pub fn stream_for(&self, seed: u64) -> TaskStreamSpec {
        let mut s = self.stream.clone();
        s.seed = s.seed.wrapping_add(seed);
        s
    }

    pub fn render(&self) -> String {
        let mut out = render_modules(&self.system);
        let st = &self.stream;
        out.push_str("\n[stream]\n");
        push(&mut out, "kind", st.kind.name());
        push(&mut out, "input_dim", st.input_dim);
        push(&mut out, "n_classes", st.n_classes);
        push(&mut out, "n_tasks", st.n_tasks);
        push(&mut out, "samples_per_task", st.samples_per_task);
        push(&mut out, "seed", st.seed);
        out.push_str("\n[run]\n");
        push(&mut out, "baseline", self.baseline.name());
        push(&mut out, "seeds", join(&self.seeds));
        push(&mut out, "output_dir", self.output_dir.display());
        push(&mut out, "name", &self.name);
        push(&mut out, "days_per_task", self.days_per_task);
        out
    }
}

/// Full text form of a [`SystemConfig`], including regime flags and seed.
pub fn render_system(cfg: &SystemConfig) -> String {
    let mut out = render_modules(cfg);
    let r = &cfg.regime;
    out.push_str("\n[regime]\n");
    push(
        &mut out,
        "routing",
        match r.routing {
            Routing::PerContext => "per-context",
            Routing::Shared => "shared",
        },
    );
    push(&mut out, "hebbian", r.hebbian);
    push(&mut out, "microsleep", r.microsleep);
    push(&mut out, "online_sgd", r.online_sgd);
    push(&mut out, "daily_anchor", r.daily_anchor);
    push(&mut out, "prune", r.consolidation.prune);
    push(&mut out, "rehearse", r.consolidation.rehearse);
    push(&mut out, "anchor_rehearsal", r.consolidation.anchor_rehearsal);
    push(&mut out, "tier_transitions", r.consolidation.tier_transitions);
    out.push_str("\n[system]\n");
    push(&mut out, "seed", cfg.seed);
    out
}

/// Inverse of [`render_system`]. Missing keys take their defaults.
pub fn parse_system(text: &str) -> Result<SystemConfig> {
    let mut cfg = RunConfig::default().system;
    for (section, key, v) in entries(text)? {
        let known = set_module_field(&mut cfg, &section, &key, &v)?
            || set_regime_field(&mut cfg, &section, &key, &v)?;
        if !known {
            return Err(Error::Config(format!("unknown key [{section}] {key}")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn render_modules(c: &SystemConfig) -> String {
    let mut out = String::new();
    out.push_str("[network]\n");
    push(&mut out, "layer_sizes", join(&c.network.layer_sizes));
    push(&mut out, "nonneg_weights", c.network.nonneg_weights);
    let t = &c.tiers;
    out.push_str("\n[tiers]\n");
    push(&mut out, "use_eps", fl(t.use_eps));
    push(&mut out, "promote_usage", fl(t.promote_usage));
    push(&mut out, "promote_nights", t.promote_nights);
    push(&mut out, "graduate_usage", fl(t.graduate_usage));
    push(&mut out, "graduate_nights", t.graduate_nights);
    push(&mut out, "usage_decay", fl(t.usage_decay));
    push(&mut out, "sentiment_floor", fl(t.sentiment_floor));
    push(&mut out, "sentiment_floor_nights", t.sentiment_floor_nights);
    out.push_str("\n[hebbian]\n");
    push(&mut out, "eta", fl(c.hebbian.eta));
    push(&mut out, "per_inference", c.hebbian.per_inference);
    push(
        &mut out,
        "weight_cap",
        c.hebbian.weight_cap.map(fl).unwrap_or_else(|| "none".into()),
    );
    out.push_str("\n[sgd]\n");
    push(&mut out, "lr", fl(c.sgd.lr));
    push(&mut out, "microstep_batch", c.sgd.microstep_batch);
    push(&mut out, "nightly_epochs", c.sgd.nightly_epochs);
    out.push_str("\n[microsleep]\n");
    push(&mut out, "interval", c.microsleep.interval);
    push(&mut out, "offset", fl(c.microsleep.offset));
    push(&mut out, "minor_step", c.microsleep.minor_step);
    let n = &c.nightly;
    out.push_str("\n[nightly]\n");
    push(&mut out, "skip_novelty", fl(n.skip_novelty));
    push(&mut out, "novelty_tau", fl(n.novelty_tau));
    push(&mut out, "capacity_budget", n.capacity_budget);
    push(&mut out, "target_utilization", fl(n.target_utilization));
    push(&mut out, "quantile_alpha", fl(n.quantile_alpha));
    push(&mut out, "quantile_beta", fl(n.quantile_beta));
    push(&mut out, "quantile_max", fl(n.quantile_max));
    push(&mut out, "ewc_lambda", fl(n.ewc_lambda));
    push(&mut out, "rehearsal_mix", fl(n.rehearsal_mix));
    push(&mut out, "rehearsal_batch", n.rehearsal_batch);
    push(&mut out, "rehearsal_rounds", n.rehearsal_rounds);
    out.push_str("\n[replay]\n");
    push(&mut out, "recent_capacity", c.replay.recent_capacity);
    push(&mut out, "foundational_capacity", c.replay.foundational_capacity);
    push(&mut out, "per_context_foundational", c.replay.per_context_foundational);
    out.push_str("\n[experts]\n");
    push(&mut out, "max_experts", c.max_experts);
    out.push_str("\n[lifecycle]\n");
    push(&mut out, "day_length", c.day_length);
    push(&mut out, "sentiment_alpha", fl(c.sentiment_alpha));
    out
}

fn set_module_field(c: &mut SystemConfig, section: &str, key: &str, v: &str) -> Result<bool> {
    match (section, key) {
        ("network", "layer_sizes") => c.network.layer_sizes = parse_list(key, v)?,
        ("network", "nonneg_weights") => c.network.nonneg_weights = boolean(key, v)?,
        ("tiers", "use_eps") => c.tiers.use_eps = num(key, v)?,
        ("tiers", "promote_usage") => c.tiers.promote_usage = num(key, v)?,
        ("tiers", "promote_nights") => c.tiers.promote_nights = num(key, v)?,
        ("tiers", "graduate_usage") => c.tiers.graduate_usage = num(key, v)?,
        ("tiers", "graduate_nights") => c.tiers.graduate_nights = num(key, v)?,
        ("tiers", "usage_decay") => c.tiers.usage_decay = num(key, v)?,
        ("tiers", "sentiment_floor") => c.tiers.sentiment_floor = num(key, v)?,
        ("tiers", "sentiment_floor_nights") => c.tiers.sentiment_floor_nights = num(key, v)?,
        ("hebbian", "eta") => c.hebbian.eta = num(key, v)?,
        ("hebbian", "per_inference") => c.hebbian.per_inference = boolean(key, v)?,
        ("hebbian", "weight_cap") => {
            c.hebbian.weight_cap = if v == "none" { None } else { Some(num(key, v)?) }
        }
        ("sgd", "lr") => c.sgd.lr = num(key, v)?,
        ("sgd", "microstep_batch") => c.sgd.microstep_batch = num(key, v)?,
        ("sgd", "nightly_epochs") => c.sgd.nightly_epochs = num(key, v)?,
        ("microsleep", "interval") => c.microsleep.interval = num(key, v)?,
        ("microsleep", "offset") => c.microsleep.offset = num(key, v)?,
        ("microsleep", "minor_step") => c.microsleep.minor_step = boolean(key, v)?,
        ("nightly", "skip_novelty") => c.nightly.skip_novelty = num(key, v)?,
        ("nightly", "novelty_tau") => c.nightly.novelty_tau = num(key, v)?,
        ("nightly", "capacity_budget") => c.nightly.capacity_budget = num(key, v)?,
        ("nightly", "target_utilization") => c.nightly.target_utilization = num(key, v)?,
        ("nightly", "quantile_alpha") => c.nightly.quantile_alpha = num(key, v)?,
        ("nightly", "quantile_beta") => c.nightly.quantile_beta = num(key, v)?,
        ("nightly", "quantile_max") => c.nightly.quantile_max = num(key, v)?,
        ("nightly", "ewc_lambda") => c.nightly.ewc_lambda = num(key, v)?,
        ("nightly", "rehearsal_mix") => c.nightly.rehearsal_mix = num(key, v)?,
        ("nightly", "rehearsal_batch") => c.nightly.rehearsal_batch = num(key, v)?,
        ("nightly", "rehearsal_rounds") => c.nightly.rehearsal_rounds = num(key, v)?,
        ("replay", "recent_capacity") => c.replay.recent_capacity = num(key, v)?,
        ("replay", "foundational_capacity") => c.replay.foundational_capacity = num(key, v)?,
        ("replay", "per_context_foundational") => c.replay.per_context_foundational = num(key, v)?,
        ("experts", "max_experts") => c.max_experts = num(key, v)?,
        ("lifecycle", "day_length") => c.day_length = num(key, v)?,
        ("lifecycle", "sentiment_alpha") => c.sentiment_alpha = num(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_regime_field(c: &mut SystemConfig, section: &str, key: &str, v: &str) -> Result<bool> {
    let r = &mut c.regime;
    match (section, key) {
        ("regime", "routing") => {
            r.routing = match v {
                "per-context" => Routing::PerContext,
                "shared" => Routing::Shared,
                _ => return Err(Error::Config(format!("unknown routing {v:?}"))),
            }
        }
        ("regime", "hebbian") => r.hebbian = boolean(key, v)?,
        ("regime", "microsleep") => r.microsleep = boolean(key, v)?,
        ("regime", "online_sgd") => r.online_sgd = boolean(key, v)?,
        ("regime", "daily_anchor") => r.daily_anchor = boolean(key, v)?,
        ("regime", "prune") => r.consolidation.prune = boolean(key, v)?,
        ("regime", "rehearse") => r.consolidation.rehearse = boolean(key, v)?,
        ("regime", "anchor_rehearsal") => r.consolidation.anchor_rehearsal = boolean(key, v)?,
        ("regime", "tier_transitions") => r.consolidation.tier_transitions = boolean(key, v)?,
        ("system", "seed") => c.seed = num(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_stream_field(s: &mut TaskStreamSpec, section: &str, key: &str, v: &str) -> Result<bool> {
    if section != "stream" {
        return Ok(false);
    }
    match key {
        "kind" => s.kind = StreamKind::parse(v)?,
        "input_dim" => s.input_dim = num(key, v)?,
        "n_classes" => s.n_classes = num(key, v)?,
        "n_tasks" => s.n_tasks = num(key, v)?,
        "samples_per_task" => s.samples_per_task = num(key, v)?,
        "seed" => s.seed = num(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Splits text into `(section, key, value)` triples, rejecting duplicates.
fn entries(text: &str) -> Result<Vec<(String, String, String)>> {
    let mut out: Vec<(String, String, String)> = Vec::new();
    let mut section: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: malformed section header", n + 1)))?;
            section = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let sec = section
            .clone()
            .ok_or_else(|| Error::Config(format!("line {}: key outside any section", n + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if out.iter().any(|(s, key, _)| *s == sec && *key == k) {
            return Err(Error::Config(format!("duplicate key [{sec}] {k}")));
        }
        out.push((sec, k, v));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| num(key, p.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn fl(v: f64) -> String {
    format!("{v:?}")
}

fn push(out: &mut String, key: &str, value: impl std::fmt::Display) {
    out.push_str(&format!("{key} = {value}\n"));
}
