//! Deterministic simulator of cache-enabled decentralized federated learning
//! on mobile agents.
//!
//! Vehicles move on a Manhattan grid ([`mobility`]). When two come within
//! radio range they swap their freshest models together with a cache of
//! models relayed from earlier encounters ([`cache`]). Each epoch every agent
//! trains locally ([`learning`]), exchanges on contact and then averages its
//! own model with its cache ([`protocol`]). Results are measured and written
//! by [`metrics`]; [`cli`] is the command-line front end.

pub mod cache;
pub mod cli;
pub mod error;
pub mod learning;
pub mod metrics;
pub mod mobility;
pub mod protocol;
pub mod rng;

pub use cache::{cache_stats, CacheStats, CachedModel, ModelCache};
pub use error::{Error, Result};
pub use metrics::EpochMetrics;
pub use protocol::{run, ExperimentConfig, Policy, RunResult, Simulation};
