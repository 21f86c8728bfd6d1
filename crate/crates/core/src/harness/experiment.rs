//! Drives a [`System`] through a task stream and collects metrics.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::error::Result;
use crate::harness::checkpoint;
use crate::harness::config::{Baseline, RunConfig};
use crate::harness::metrics::{forgetting, Forgetting, MetricsMatrix, Record};
use crate::harness::stream::{generate_stream, Task};
use crate::lifecycle::{DayReport, System, TickInput};

/// One seed's progress through its stream.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub baseline: Baseline,
    pub days_per_task: usize,
    pub tasks: Vec<Task>,
    pub system: System,
    pub matrix: MetricsMatrix,
    /// Metrics lines emitted so far.
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub matrix: MetricsMatrix,
    pub forgetting: Forgetting,
    pub final_accuracy: f64,
    pub lines: Vec<String>,
}

/// Accuracy on the test split of every task in `tasks`.
pub fn evaluate(system: &System, tasks: &[Task]) -> Result<Vec<f64>> {
    tasks.iter().map(|t| system.evaluate(&t.context, &t.test)).collect()
}

impl SeedRun {
    pub fn new(config: &RunConfig, baseline: Baseline, seed: u64) -> Result<Self> {
        let system = System::new(config.system_for(baseline, seed))?;
        Self::resume(config, baseline, seed, system, MetricsMatrix::new())
    }

    /// Continues from a restored system and the rows already measured.
    pub fn resume(
        config: &RunConfig,
        baseline: Baseline,
        seed: u64,
        system: System,
        matrix: MetricsMatrix,
    ) -> Result<Self> {
        Ok(Self {
            seed,
            baseline,
            days_per_task: config.days_per_task,
            tasks: generate_stream(&config.stream_for(seed))?,
            system,
            matrix,
            lines: Vec::new(),
        })
    }

    pub fn next_task(&self) -> usize {
        self.matrix.tasks()
    }

    pub fn is_done(&self) -> bool {
        self.next_task() >= self.tasks.len()
    }

    /// Trains on the next task for `days_per_task` days, then evaluates.
    pub fn step_task(&mut self) -> Result<Vec<DayReport>> {
        let t = self.next_task();
        let task = self.tasks[t].clone();
        let per_day = task.train.len().div_ceil(self.days_per_task);
        let mut reports = Vec::with_capacity(self.days_per_task);
        for d in 0..self.days_per_task {
            let lo = (d * per_day).min(task.train.len());
            let hi = ((d + 1) * per_day).min(task.train.len());
            let day = task.train[lo..hi]
                .iter()
                .map(|s| TickInput::new(task.context.clone(), s.clone()));
            let report = self.system.run_day(day)?;
            self.record_day(t, &report);
            reports.push(report);
        }
        let row = evaluate(&self.system, &self.tasks[..=t])?;
        self.lines.push(
            Record::new("eval")
                .int("seed", self.seed)
                .int("after_task", t as u64)
                .floats("accuracy", &row)
                .finish(),
        );
        self.matrix.push_row(row)?;
        Ok(reports)
    }

    fn record_day(&mut self, task: usize, r: &DayReport) {
        let mut usage: Vec<f64> = self
            .system
            .pool
            .experts
            .iter()
            .flat_map(|e| e.meta.active_usage())
            .collect();
        usage.sort_by(f64::total_cmp);
        let pick = |q: f64| -> f64 {
            if usage.is_empty() {
                0.0
            } else {
                usage[((usage.len() - 1) as f64 * q).round() as usize]
            }
        };
        let mean = if usage.is_empty() {
            0.0
        } else {
            usage.iter().sum::<f64>() / usage.len() as f64
        };
        self.lines.push(
            Record::new("day")
                .int("seed", self.seed)
                .int("task", task as u64)
                .int("day", r.day_index)
                .int("inferences", r.inferences)
                .float("accuracy", r.accuracy)
                .float("novelty", r.novelty)
                .int("novel", r.novel_count)
                .int("active", r.active_count as u64)
                .int("stm", r.tier_histogram[0] as u64)
                .int("ltm", r.tier_histogram[1] as u64)
                .int("pm", r.tier_histogram[2] as u64)
                .int("microsleeps", r.microsleeps as u64)
                .int("deactivated", r.deactivated as u64)
                .int("pruned", r.pruned() as u64)
                .float("usage_mean", mean)
                .float("usage_p50", pick(0.5))
                .float("usage_p90", pick(0.9))
                .float("usage_max", pick(1.0))
                .finish(),
        );
        for n in &r.nights {
            self.lines.push(
                Record::new("night")
                    .int("seed", self.seed)
                    .int("day", n.day_index)
                    .int("expert", n.expert as u64)
                    .float("novelty", n.novelty)
                    .float("quantile", n.quantile)
                    .float("theta", n.theta)
                    .bool("prune_skipped", n.prune_skipped)
                    .int("pruned", n.pruned_count as u64)
                    .int("promoted", n.promoted as u64)
                    .int("graduated", n.graduated as u64)
                    .int("sentiment_tagged", n.sentiment_tagged as u64)
                    .int("active_before", n.active_before as u64)
                    .int("active_after", n.post_prune_active_count as u64)
                    .bool("rehearsal_skipped", n.rehearsal_skipped)
                    .opt_float("rehearsal_loss_before", n.rehearsal_loss_before)
                    .opt_float("rehearsal_loss_after", n.rehearsal_loss_after)
                    .finish(),
            );
        }
    }

    pub fn finish(mut self) -> SeedResult {
        let f = forgetting(&self.matrix);
        let final_accuracy = self.matrix.final_average_accuracy();
        self.lines.push(
            Record::new("summary")
                .int("seed", self.seed)
                .str("baseline", self.baseline.name())
                .float("final_accuracy", final_accuracy)
                .float("mean_forgetting", f.mean)
                .floats("forgetting", &f.per_task)
                .finish(),
        );
        SeedResult {
            seed: self.seed,
            matrix: self.matrix,
            forgetting: f,
            final_accuracy,
            lines: self.lines,
        }
    }
}

/// Runs every task for one seed and returns the final system as well.
pub fn run_seed(config: &RunConfig, baseline: Baseline, seed: u64) -> Result<(SeedResult, System)> {
    let mut run = SeedRun::new(config, baseline, seed)?;
    while !run.is_done() {
        run.step_task()?;
    }
    let system = run.system.clone();
    Ok((run.finish(), system))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSummary {
    pub baseline: Baseline,
    pub seeds: Vec<SeedResult>,
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

impl BaselineSummary {
    pub fn mean_forgetting(&self) -> f64 {
        self.seeds.iter().map(|s| s.forgetting.mean).sum::<f64>() / self.seeds.len() as f64
    }

    pub fn mean_final_accuracy(&self) -> f64 {
        self.seeds.iter().map(|s| s.final_accuracy).sum::<f64>() / self.seeds.len() as f64
    }
}

pub fn metrics_path(config: &RunConfig, baseline: Baseline) -> PathBuf {
    config.output_dir.join(format!("{}-{}.jsonl", config.name, baseline.name()))
}

pub fn checkpoint_path(config: &RunConfig, baseline: Baseline, seed: u64) -> PathBuf {
    config
        .output_dir
        .join(format!("{}-{}-seed{}.ckpt", config.name, baseline.name(), seed))
}

/// Runs all seeds of one baseline in parallel and writes the metrics file
/// (records in seed order) plus one final checkpoint per seed.
pub fn run_baseline(config: &RunConfig, baseline: Baseline) -> Result<BaselineSummary> {
    config.validate()?;
    let results: Vec<(SeedResult, System)> = config
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, baseline, s))
        .collect::<Result<_>>()?;
    fs::create_dir_all(&config.output_dir)?;
    let path = metrics_path(config, baseline);
    let mut file = std::io::BufWriter::new(fs::File::create(&path)?);
    let mut checkpoints = Vec::new();
    let mut seeds = Vec::new();
    for (r, system) in results {
        for l in &r.lines {
            writeln!(file, "{l}")?;
        }
        let ck = checkpoint_path(config, baseline, r.seed);
        checkpoint::save(&system, &ck)?;
        checkpoints.push(ck);
        seeds.push(r);
    }
    file.flush()?;
    Ok(BaselineSummary {
        baseline,
        seeds,
        metrics_path: path,
        checkpoints,
    })
}
