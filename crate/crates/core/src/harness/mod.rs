//! Benchmark harness: task streams, metrics, configuration, checkpoints and
//! the experiment driver used by the `trimem` binary.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod stream;

pub use config::{Baseline, RunConfig};
pub use experiment::{run_baseline, run_seed, BaselineSummary, SeedResult, SeedRun};
pub use metrics::{forgetting, Forgetting, MetricsMatrix};
pub use stream::{generate_stream, StreamKind, Task, TaskStreamSpec};
