//! Datasets, partitioners, desk-scale models and the proximal local learner.

pub mod data;
pub mod model;
pub mod optim;
pub mod partition;

pub use data::{Dataset, SyntheticSpec};
pub use model::{grad, proximal_loss, Arch, ModelParams, SharedParams};
pub use optim::{evaluate, local_update, EarlyStopping, LocalLearnerConfig, PlateauScheduler};
pub use partition::{Partition, PartitionKind};
