//! The epoch loop: local update, contact-driven model exchange, and
//! cache-weighted aggregation, plus the centralized and cache-free baselines.
//!
//! One epoch runs in three phases:
//!
//! 1. every agent trains its current model for `K` proximal SGD steps;
//! 2. vehicles move for `epoch_seconds`; whenever a pair comes into range the
//!    two agents exchange their fresh models and caches (pairs entering range
//!    on the same tick are handled in lexicographic order, against live
//!    caches);
//! 3. stale entries are evicted and each agent replaces its model by the
//!    sample-weighted average of its own fresh model and its cache.

pub mod config;
pub mod stats;

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index;

use crate::cache::{cache_stats, CachedModel, Epoch, ModelCache};
use crate::error::{Error, Result};
use crate::learning::data::load_idx;
use crate::learning::partition::{
    partition_dirichlet, partition_iid, partition_overlap, partition_shards, Partition,
    SHARD_TIERS,
};
use crate::learning::{
    evaluate, local_update, Dataset, EarlyStopping, LocalLearnerConfig, ModelParams,
    PartitionKind, PlateauScheduler, SharedParams,
};
use crate::metrics::EpochMetrics;
use crate::mobility::{build_grid, Fleet};
use crate::rng::{self, Domain};

pub use config::{
    speedup_config, ContactModel, DatasetSource, ExperimentConfig, ModelKind, Policy, UNLIMITED,
};

/// How a cache absorbs a peer's model and cache.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateRule {
    Lru,
    Gb { group_of: Vec<usize>, quotas: Vec<usize> },
}

impl UpdateRule {
    pub fn apply<P: Clone>(
        &self,
        cache: &mut ModelCache<P>,
        incoming: CachedModel<P>,
        peer: &ModelCache<P>,
        t: Epoch,
    ) -> Result<()> {
        match self {
            UpdateRule::Lru => {
                cache.lru_update(incoming, peer, t);
                Ok(())
            }
            UpdateRule::Gb { group_of, quotas } => cache.gb_update(incoming, peer, t, group_of, quotas),
        }
    }
}

/// Mutual exchange between two caches. Each side receives the other's own
/// model and a snapshot of the other's cache taken before the exchange, so
/// the result does not depend on which side is updated first.
pub fn exchange_caches<P: Clone>(
    a: &mut ModelCache<P>,
    own_a: CachedModel<P>,
    b: &mut ModelCache<P>,
    own_b: CachedModel<P>,
    t: Epoch,
    rule: &UpdateRule,
) -> Result<()> {
    let before_a = a.clone();
    rule.apply(a, own_b, b, t)?;
    rule.apply(b, own_a, &before_a, t)
}

/// Per-agent state of a running simulation.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub id: usize,
    /// Model at the start of the current epoch.
    pub model: SharedParams,
    /// Result of this epoch's local update (equal to `model` before the
    /// first update).
    pub trained: SharedParams,
    pub cache: ModelCache,
    pub data: Dataset,
    pub group: usize,
}

impl AgentRuntime {
    /// The agent's fresh model as a cache entry stamped with epoch `t`.
    pub fn own_entry(&self, t: Epoch) -> CachedModel {
        CachedModel {
            owner: self.id,
            params: self.trained.clone(),
            train_epoch: t,
            sample_count: self.data.len(),
            group: self.group,
        }
    }
}

/// Both agents send their fresh model and a pre-exchange cache snapshot to
/// each other.
pub fn exchange(a: &mut AgentRuntime, b: &mut AgentRuntime, t: Epoch, rule: &UpdateRule) -> Result<()> {
    if a.id == b.id {
        return Err(Error::argument(format!("agent {} cannot meet itself", a.id)));
    }
    let own_a = a.own_entry(t);
    let own_b = b.own_entry(t);
    exchange_caches(&mut a.cache, own_a, &mut b.cache, own_b, t, rule)
}

/// `Σ_j (w_j / Σ_k w_k) · params_j`, accumulated in the order given.
pub fn weighted_average(models: &[(usize, &ModelParams)]) -> Result<ModelParams> {
    let (_, first) = models
        .first()
        .ok_or_else(|| Error::argument("weighted average of no models"))?;
    let arch = first.arch();
    let total: usize = models.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return Err(Error::argument("weighted average with zero total weight"));
    }
    let mut out = vec![0.0; first.weights().len()];
    for (n, p) in models {
        if p.arch() != arch {
            return Err(Error::argument(format!(
                "architecture mismatch: {arch:?} vs {:?}",
                p.arch()
            )));
        }
        let alpha = *n as f64 / total as f64;
        for (o, w) in out.iter_mut().zip(p.weights()) {
            *o += alpha * w;
        }
    }
    ModelParams::from_weights(arch, out)
}

/// Sample-weighted average over the agent's own fresh model and every cache
/// entry, summed in ascending owner order.
pub fn aggregate(own: &CachedModel, cache: &ModelCache) -> Result<ModelParams> {
    if own.sample_count == 0 {
        return Err(Error::argument("own model has no samples"));
    }
    let mut parts: Vec<(usize, usize, &ModelParams)> = cache
        .iter()
        .filter(|e| e.owner != own.owner)
        .map(|e| (e.owner, e.sample_count, e.params.as_ref()))
        .collect();
    parts.push((own.owner, own.sample_count, own.params.as_ref()));
    parts.sort_by_key(|p| p.0);
    let models: Vec<(usize, &ModelParams)> = parts.into_iter().map(|(_, n, p)| (n, p)).collect();
    weighted_average(&models)
}

/// Elementwise `0.5 * (a + b)`.
pub fn pairwise_mean(a: &ModelParams, b: &ModelParams) -> Result<ModelParams> {
    if a.arch() != b.arch() {
        return Err(Error::argument(format!(
            "architecture mismatch: {:?} vs {:?}",
            a.arch(),
            b.arch()
        )));
    }
    let w = a.weights().iter().zip(b.weights()).map(|(x, y)| 0.5 * (x + y)).collect();
    ModelParams::from_weights(a.arch(), w)
}

/// Produces the pairs that meet during an epoch.
#[derive(Debug, Clone)]
pub(crate) enum ContactSource {
    Mobility {
        fleet: Box<Fleet>,
        ticks: usize,
        dt: f64,
        range: f64,
    },
    FullMesh {
        n: usize,
    },
    Off,
}

impl ContactSource {
    pub(crate) fn from_config(cfg: &ExperimentConfig) -> Result<ContactSource> {
        if cfg.policy == Policy::Cfl {
            return Ok(ContactSource::Off);
        }
        Ok(match cfg.contact_model {
            ContactModel::FullMesh => ContactSource::FullMesh { n: cfg.agents },
            ContactModel::Mobility => {
                let mut map = build_grid(cfg.grid_rows, cfg.grid_cols, cfg.block_length)?;
                if cfg.area_spec().is_some() {
                    map = map.with_areas(cfg.areas)?;
                }
                let fleet = Fleet::new(
                    map,
                    cfg.agents,
                    cfg.speed,
                    cfg.area_spec(),
                    cfg.seed,
                    cfg.allow_u_turn,
                )?;
                ContactSource::Mobility {
                    fleet: Box::new(fleet),
                    ticks: cfg.ticks_per_epoch(),
                    dt: cfg.dt,
                    range: cfg.range,
                }
            }
        })
    }

    /// Runs one epoch of contacts, calling `meet(a, b)` for every pair that
    /// comes into range (every pair counts as out of range at epoch start).
    /// Returns the number of meetings.
    pub(crate) fn run_epoch(&mut self, mut meet: impl FnMut(usize, usize) -> Result<()>) -> Result<usize> {
        let mut count = 0;
        match self {
            ContactSource::Off => {}
            ContactSource::FullMesh { n } => {
                for a in 0..*n {
                    for b in a + 1..*n {
                        meet(a, b)?;
                        count += 1;
                    }
                }
            }
            ContactSource::Mobility {
                fleet,
                ticks,
                dt,
                range,
            } => {
                let mut previous: Vec<(usize, usize)> = Vec::new();
                for _ in 0..*ticks {
                    fleet.advance(*dt);
                    let current = fleet.contacts(*range);
                    for &pair in &current {
                        if previous.binary_search(&pair).is_err() {
                            meet(pair.0, pair.1)?;
                            count += 1;
                        }
                    }
                    previous = current;
                }
            }
        }
        Ok(count)
    }
}

/// Loads or generates the train and test sets named by the config.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetSource::Synthetic => cfg.synthetic.generate(cfg.seed),
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let classes = cfg.synthetic.classes;
            Ok((
                load_idx(train_images, train_labels, classes)?,
                load_idx(test_images, test_labels, classes)?,
            ))
        }
    }
}

/// Splits the training rows over agents. When the shard tiers do not give a
/// whole number of agents per tier, every agent gets two shards instead.
pub fn partition_for(cfg: &ExperimentConfig, train: &Dataset) -> Result<Partition> {
    let mut rng = rng::stream(cfg.seed, Domain::Partition, &[]);
    let n = cfg.agents;
    let parts = match cfg.partition {
        PartitionKind::Shards => {
            let tiers_fit = SHARD_TIERS.iter().all(|&(_, r)| {
                let k = r * n as f64;
                (k - k.round()).abs() < 1e-9
            });
            if tiers_fit {
                let shards = SHARD_TIERS.iter().map(|&(s, r)| s * (r * n as f64).round() as usize).sum();
                partition_shards(train, n, shards, &SHARD_TIERS, &mut rng)?
            } else {
                partition_shards(train, n, 2 * n, &[(2, 1.0)], &mut rng)?
            }
        }
        PartitionKind::Iid => partition_iid(train, n, &mut rng)?,
        PartitionKind::Dirichlet => partition_dirichlet(train, n, cfg.dirichlet_pi, &mut rng)?,
        PartitionKind::Overlap(k) => partition_overlap(train, k, &cfg.agent_areas(), &mut rng)?,
    };
    if let Some(a) = parts.iter().position(|p| p.is_empty()) {
        return Err(Error::config(format!(
            "agent {a} received no training samples ({} rows over {n} agents)",
            train.len()
        )));
    }
    Ok(parts)
}

/// Rows of the test set each agent is evaluated on; `None` means all rows.
pub fn eval_rows(cfg: &ExperimentConfig, test_len: usize) -> Vec<Option<Vec<usize>>> {
    (0..cfg.agents)
        .map(|id| match cfg.eval_subsample {
            Some(k) if k < test_len => {
                let mut r = rng::stream(cfg.seed, Domain::EvalSubsample, &[id as u64]);
                let mut rows = index::sample(&mut r, test_len, k).into_vec();
                rows.sort_unstable();
                Some(rows)
            }
            _ => None,
        })
        .collect()
}

/// A running experiment. [`Simulation::step_epoch`] advances one epoch.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ExperimentConfig,
    agents: Vec<AgentRuntime>,
    test: Dataset,
    contacts: ContactSource,
    rule: UpdateRule,
    learner: LocalLearnerConfig,
    eval_rows: Vec<Option<Vec<usize>>>,
    t: Epoch,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Simulation> {
        cfg.validate()?;
        let (train, test) = load_datasets(cfg)?;
        let parts = partition_for(cfg, &train)?;
        let datasets = parts.iter().map(|rows| train.subset(rows)).collect();
        Simulation::from_parts(cfg, datasets, test)
    }

    /// Builds a simulation over explicit per-agent training sets.
    pub fn from_parts(cfg: &ExperimentConfig, datasets: Vec<Dataset>, test: Dataset) -> Result<Simulation> {
        cfg.validate()?;
        if datasets.len() != cfg.agents {
            return Err(Error::config(format!(
                "{} datasets for {} agents",
                datasets.len(),
                cfg.agents
            )));
        }
        if datasets.iter().any(Dataset::is_empty) {
            return Err(Error::config("every agent needs at least one training sample"));
        }
        let arch = cfg.arch(test.input_dim(), test.classes());
        let init: SharedParams = Arc::new(ModelParams::init(
            arch,
            &mut rng::stream(cfg.seed, Domain::ModelInit, &[]),
        ));
        let groups = cfg.agent_areas();
        let capacity = if cfg.policy == Policy::None { 0 } else { cfg.cache_size };
        let mut agents = Vec::with_capacity(cfg.agents);
        for (id, data) in datasets.into_iter().enumerate() {
            agents.push(AgentRuntime {
                id,
                model: init.clone(),
                trained: init.clone(),
                cache: ModelCache::new(id, capacity, cfg.tau_max)?,
                data,
                group: groups[id],
            });
        }
        let rule = match (&cfg.policy, &cfg.gb_quotas) {
            (Policy::Gb, Some(quotas)) => UpdateRule::Gb {
                group_of: groups.clone(),
                quotas: quotas.clone(),
            },
            _ => UpdateRule::Lru,
        };
        Ok(Simulation {
            eval_rows: eval_rows(cfg, test.len()),
            contacts: ContactSource::from_config(cfg)?,
            learner: cfg.learner(),
            cfg: cfg.clone(),
            agents,
            test,
            rule,
            t: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn agents(&self) -> &[AgentRuntime] {
        &self.agents
    }

    /// Index of the next epoch to run.
    pub fn epoch(&self) -> Epoch {
        self.t
    }

    pub fn lr(&self) -> f64 {
        self.learner.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.learner.lr = lr;
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    /// Runs one epoch and returns the number of meetings.
    pub fn step_epoch(&mut self) -> Result<usize> {
        let t = self.t;
        for a in self.agents.iter_mut() {
            let mut r = rng::stream(self.cfg.seed, Domain::LocalUpdate, &[a.id as u64, t]);
            a.trained = Arc::new(local_update(&a.model, &a.data, &self.learner, &mut r)?);
        }

        if self.cfg.policy == Policy::Cfl {
            let parts: Vec<(usize, &ModelParams)> =
                self.agents.iter().map(|a| (a.data.len(), a.trained.as_ref())).collect();
            let global = Arc::new(weighted_average(&parts)?);
            for a in self.agents.iter_mut() {
                a.model = global.clone();
            }
            self.t += 1;
            return Ok(0);
        }

        let agents = &mut self.agents;
        let rule = &self.rule;
        let policy = self.cfg.policy;
        let meetings = self.contacts.run_epoch(|i, j| {
            let (left, right) = agents.split_at_mut(j);
            let (a, b) = (&mut left[i], &mut right[0]);
            if policy == Policy::None {
                let mean = Arc::new(pairwise_mean(&a.trained, &b.trained)?);
                a.trained = mean.clone();
                b.trained = mean;
                Ok(())
            } else {
                exchange(a, b, t, rule)
            }
        })?;

        for a in self.agents.iter_mut() {
            a.cache.evict_stale(t);
            assert!(
                a.cache.iter().all(|e| e.staleness(t) < self.cfg.tau_max),
                "stale model reached aggregation"
            );
            a.model = if a.cache.is_empty() {
                a.trained.clone()
            } else {
                Arc::new(aggregate(&a.own_entry(t), &a.cache)?)
            };
        }
        self.t += 1;
        Ok(meetings)
    }

    /// Accuracy and cache statistics of the current models.
    pub fn measure(&self, contacts: usize) -> EpochMetrics {
        let mut seen: HashMap<*const ModelParams, f64> = HashMap::new();
        let accs: Vec<f64> = self
            .agents
            .iter()
            .zip(&self.eval_rows)
            .map(|(a, rows)| match rows {
                Some(rows) => evaluate(&a.model, &self.test, Some(rows)),
                None => *seen
                    .entry(Arc::as_ptr(&a.model))
                    .or_insert_with(|| evaluate(&a.model, &self.test, None)),
            })
            .collect();
        let stats = cache_stats(self.agents.iter().map(|a| &a.cache), self.t.saturating_sub(1));
        EpochMetrics::from_parts(self.t as usize, &accs, stats, self.learner.lr, contacts)
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub series: Vec<EpochMetrics>,
    /// Epoch (1-based) and value of the best mean accuracy.
    pub best: Option<(usize, f64)>,
    pub stopped_early: bool,
}

impl RunResult {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.series.last().map(|m| m.mean_acc)
    }

    /// First epoch whose mean accuracy reaches `target`.
    pub fn epochs_to(&self, target: f64) -> Option<usize> {
        self.series.iter().find(|m| m.mean_acc >= target).map(|m| m.epoch)
    }
}

/// Runs up to `epochs` epochs with plateau learning-rate reduction and early
/// stopping on the mean accuracy.
pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    let sim = Simulation::new(cfg)?;
    run_simulation(sim)
}

pub fn run_simulation(mut sim: Simulation) -> Result<RunResult> {
    let cfg = sim.config().clone();
    let mut scheduler = PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut series = Vec::with_capacity(cfg.epochs);
    let mut stopped_early = false;
    for _ in 0..cfg.epochs {
        let contacts = sim.step_epoch()?;
        let m = sim.measure(contacts);
        let next_lr = scheduler.observe(m.mean_acc);
        sim.set_lr(next_lr);
        let stop = stopper.observe(m.epoch, m.mean_acc);
        series.push(m);
        if stop {
            stopped_early = true;
            break;
        }
    }
    Ok(RunResult {
        series,
        best: stopper.best(),
        stopped_early,
    })
}

/// Centralized FedAvg on the same data, seed and learner settings.
pub fn baseline_cfl(cfg: &ExperimentConfig) -> Result<RunResult> {
    let mut c = cfg.clone();
    c.policy = Policy::Cfl;
    c.gb_quotas = None;
    run(&c)
}
