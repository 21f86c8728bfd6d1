// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experts;
pub mod harness;
pub mod lifecycle;
pub mod memory;
pub mod net;
pub mod plasticity;
pub mod replay;
pub mod sleep;

pub use error::{Error, Result};
pub use experts::{Expert, ExpertPool, Gate};
pub use lifecycle::{DayReport, Phase, Regime, Routing, System, SystemConfig, TickInput, TickOutcome};
pub use memory::{MetaStore, SynapseMeta, Tier, TierPolicy};
pub use net::{init_network, ActivationTrace, NetworkSpec, NetworkState, Sample};
pub use replay::{ReplayBuffer, ReplayConfig, ReplayEntry};
pub use sleep::{MicrosleepConfig, NightReport, NightlyConfig};
