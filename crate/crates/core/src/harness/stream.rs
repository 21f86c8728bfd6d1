//! Synthetic task streams built on a Gaussian-cluster classification problem.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::net::Sample;

pub const MAX_INPUT_DIM: usize = 64;
pub const MAX_TASKS: usize = 10;
pub const MAX_SAMPLES_PER_TASK: usize = 2000;
/// Per-coordinate noise of every cluster.
pub const CLUSTER_SIGMA: f64 = 0.3;
/// Fraction of each task's samples held out for evaluation.
pub const TEST_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Every task permutes the input coordinates of one base problem.
    Permuted,
    /// Task t owns a disjoint subset of the classes.
    ClassIncremental,
    /// Cluster centres rotate by a fixed angle from one task to the next.
    Drift,
}

impl StreamKind {
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Permuted => "permuted",
            StreamKind::ClassIncremental => "class-incremental",
            StreamKind::Drift => "drift",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "permuted" => Ok(StreamKind::Permuted),
            "class-incremental" => Ok(StreamKind::ClassIncremental),
            "drift" => Ok(StreamKind::Drift),
            _ => Err(Error::Config(format!("unknown stream kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStreamSpec {
    pub kind: StreamKind,
    pub input_dim: usize,
    pub n_classes: usize,
    pub n_tasks: usize,
    pub samples_per_task: usize,
    pub seed: u64,
}

impl Default for TaskStreamSpec {
    fn default() -> Self {
        Self {
            kind: StreamKind::Permuted,
            input_dim: 16,
            n_classes: 3,
            n_tasks: 5,
            samples_per_task: 200,
            seed: 0,
        }
    }
}

impl TaskStreamSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.input_dim > MAX_INPUT_DIM {
            return bad(format!("input_dim must be in 1..={MAX_INPUT_DIM}"));
        }
        if self.n_tasks == 0 || self.n_tasks > MAX_TASKS {
            return bad(format!("n_tasks must be in 1..={MAX_TASKS}"));
        }
        if self.samples_per_task == 0 || self.samples_per_task > MAX_SAMPLES_PER_TASK {
            return bad(format!("samples_per_task must be in 1..={MAX_SAMPLES_PER_TASK}"));
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2".into());
        }
        if self.n_classes > self.samples_per_task {
            return bad("n_classes exceeds samples_per_task".into());
        }
        if self.kind == StreamKind::ClassIncremental && self.n_classes < self.n_tasks {
            return bad("class-incremental streams need at least one class per task".into());
        }
        if self.kind == StreamKind::Drift && self.input_dim < 2 {
            return bad("drift streams need input_dim >= 2".into());
        }
        Ok(())
    }

    pub fn test_count(&self) -> usize {
        ((self.samples_per_task as f64 * TEST_FRACTION).round() as usize).min(self.samples_per_task - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub index: usize,
    pub context: String,
    /// Classes this task draws from.
    pub classes: Vec<usize>,
    /// Cluster centre of every class as seen in this task.
    pub centers: Vec<Vec<f64>>,
    /// Coordinate permutation applied to base inputs (identity unless permuted).
    pub permutation: Vec<usize>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn task_context(index: usize) -> String {
    format!("t{index}")
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Rotates `v` by `angle` in the plane spanned by orthonormal `a` and `b`.
fn rotate(v: &[f64], a: &[f64], b: &[f64], angle: f64) -> Vec<f64> {
    let pa: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
    let pb: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
    let (s, c) = angle.sin_cos();
    let na = c * pa - s * pb;
    let nb = s * pa + c * pb;
    v.iter()
        .zip(a.iter().zip(b))
        .map(|(x, (ai, bi))| x - pa * ai - pb * bi + na * ai + nb * bi)
        .collect()
}

fn random_plane(dim: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let a = unit_vector(dim, rng);
    loop {
        let mut b = unit_vector(dim, rng);
        let d: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        b.iter_mut().zip(&a).for_each(|(x, y)| *x -= d * y);
        let n = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            b.iter_mut().for_each(|x| *x /= n);
            return (a, b);
        }
    }
}

/// Class labels balanced round-robin over `classes`, then shuffled.
fn balanced_labels(classes: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| classes[i % classes.len()]).collect();
    labels.shuffle(rng);
    labels
}

fn draw(center: &[f64], perm: &[usize], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base: Vec<f64> = center.iter().map(|c| c + noise.sample(rng)).collect();
    perm.iter().map(|&p| base[p]).collect()
}

/// Builds every task of the stream. Deterministic in `spec.seed`.
pub fn generate_stream(spec: &TaskStreamSpec) -> Result<Vec<Task>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.input_dim;
    let noise = Normal::new(0.0, CLUSTER_SIGMA).expect("positive sigma");
    let base: Vec<Vec<f64>> = (0..spec.n_classes).map(|_| unit_vector(dim, &mut rng)).collect();
    let identity: Vec<usize> = (0..dim).collect();
    let plane = random_plane(dim, &mut rng);
    let drift_angle = rng.random_range(0.3..0.8);

    let n_test = spec.test_count();
    let n_train = spec.samples_per_task - n_test;
    let mut permutations: Vec<Vec<usize>> = Vec::new();
    let mut tasks = Vec::with_capacity(spec.n_tasks);
    for t in 0..spec.n_tasks {
        let (classes, centers, perm) = match spec.kind {
            StreamKind::Permuted => {
                let perm = loop {
                    let mut p = identity.clone();
                    p.shuffle(&mut rng);
                    if dim < 3 || !permutations.contains(&p) {
                        break p;
                    }
                };
                permutations.push(perm.clone());
                ((0..spec.n_classes).collect::<Vec<_>>(), base.clone(), perm)
            }
            StreamKind::ClassIncremental => {
                let lo = t * spec.n_classes / spec.n_tasks;
                let hi = (t + 1) * spec.n_classes / spec.n_tasks;
                ((lo..hi).collect(), base.clone(), identity.clone())
            }
            StreamKind::Drift => {
                let angle = drift_angle * t as f64;
                let centers = base.iter().map(|c| rotate(c, &plane.0, &plane.1, angle)).collect();
                ((0..spec.n_classes).collect(), centers, identity.clone())
            }
        };
        let make = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Sample> {
            balanced_labels(&classes, n, rng)
                .into_iter()
                .map(|y| Sample::new(draw(&centers[y], &perm, &noise, rng), y))
                .collect()
        };
        let train = make(n_train, &mut rng);
        let test = make(n_test, &mut rng);
        let centers = centers.iter().map(|c| perm.iter().map(|&p| c[p]).collect()).collect();
        tasks.push(Task {
            index: t,
            context: task_context(t),
            classes: classes.clone(),
            centers,
            permutation: perm,
            train,
            test,
        });
    }
    Ok(tasks)
}

/// Accuracy of assigning each sample to the closest of `centers`.
pub fn nearest_centroid_accuracy(centers: &[Vec<f64>], classes: &[usize], samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples
        .iter()
        .filter(|s| {
            let best = classes
                .iter()
                .map(|&c| {
                    let d: f64 = centers[c].iter().zip(&s.input).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, c)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, c)| c);
            best == Some(s.target)
        })
        .count();
    hits as f64 / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let tasks = generate_stream(&TaskStreamSpec::default()).unwrap();
        assert_eq!(tasks.len(), 5);
        assert!(tasks.iter().all(|t| t.train.len() == 150 && t.test.len() == 50));
    }

    #[test]
    fn rejects_bad_specs() {
        let s = TaskStreamSpec { n_classes: 300, ..Default::default() };
        assert!(matches!(generate_stream(&s), Err(Error::Config(_))));
        let s = TaskStreamSpec { kind: StreamKind::ClassIncremental, ..Default::default() };
        assert!(generate_stream(&s).is_err());
        let s = TaskStreamSpec { input_dim: 65, ..Default::default() };
        assert!(generate_stream(&s).is_err());
    }

    #[test]
    fn class_incremental_is_disjoint() {
        let s = TaskStreamSpec {
            kind: StreamKind::ClassIncremental,
            n_classes: 6,
            n_tasks: 3,
            ..TaskStreamSpec::default()
        };
        let tasks = generate_stream(&s).unwrap();
        assert_eq!(tasks[0].classes, vec![0, 1]);
        assert_eq!(tasks[2].classes, vec![4, 5]);
        assert!(tasks[1].train.iter().all(|x| x.target == 2 || x.target == 3));
    }

    #[test]
    fn rotation_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = random_plane(8, &mut rng);
        let v = unit_vector(8, &mut rng);
        let r = rotate(&v, &a, &b, 0.7);
        let n: f64 = r.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(rotate(&v, &a, &b, 0.0).iter().zip(&v).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}
