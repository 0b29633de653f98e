//! Experiment configuration: defaults, `key = value` assignment, validation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::data::SyntheticSpec;
use crate::learning::{Arch, LocalLearnerConfig, PartitionKind};
use crate::mobility::AreaSpec;

/// Cache maintenance strategy, or one of the two baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Policy {
    /// Freshest-version cache with global capacity pruning.
    Lru,
    /// Freshest-version cache with per-group quotas.
    Gb,
    /// No cache; meeting agents average their two models.
    None,
    /// Centralized FedAvg with a server; no mobility.
    Cfl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelKind {
    Softmax,
    Mlp,
}

/// How contacts arise inside an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ContactModel {
    /// Range-based contacts from the grid mobility simulation.
    Mobility,
    /// Every pair meets exactly once per epoch, in lexicographic order.
    FullMesh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DatasetSource {
    Synthetic,
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

macro_rules! string_enum {
    ($ty:ident, $what:literal, { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($text); })+
                unreachable!()
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    _ => Err(Error::config(format!(concat!("unknown ", $what, " `{}`"), s))),
                }
            }
        }

        impl From<$ty> for String {
            fn from(v: $ty) -> String {
                v.to_string()
            }
        }

        impl TryFrom<String> for $ty {
            type Error = Error;

            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }
    };
}

string_enum!(Policy, "policy", { "lru" => Policy::Lru, "gb" => Policy::Gb, "none" => Policy::None, "cfl" => Policy::Cfl });
string_enum!(ModelKind, "model", { "softmax" => ModelKind::Softmax, "mlp" => ModelKind::Mlp });
string_enum!(ContactModel, "contact model", { "mobility" => ContactModel::Mobility, "full-mesh" => ContactModel::FullMesh });

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Synthetic => f.write_str("synthetic"),
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => write!(
                f,
                "idx:{},{},{},{}",
                train_images.display(),
                train_labels.display(),
                test_images.display(),
                test_labels.display()
            ),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            return Ok(DatasetSource::Synthetic);
        }
        let files: Vec<&str> = s
            .strip_prefix("idx:")
            .map(|rest| rest.split(',').collect())
            .unwrap_or_default();
        match files.as_slice() {
            [a, b, c, d] if files.iter().all(|f| !f.is_empty()) => Ok(DatasetSource::Idx {
                train_images: a.into(),
                train_labels: b.into(),
                test_images: c.into(),
                test_labels: d.into(),
            }),
            _ => Err(Error::config(format!(
                "unknown dataset `{s}` (expected synthetic or idx:<img>,<lbl>,<timg>,<tlbl>)"
            ))),
        }
    }
}

impl From<DatasetSource> for String {
    fn from(v: DatasetSource) -> String {
        v.to_string()
    }
}

impl TryFrom<String> for DatasetSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Sentinel stored in `cache_size` for an unbounded cache.
pub const UNLIMITED: usize = usize::MAX;

/// Default vehicle speed in m/s.
pub const DEFAULT_SPEED: f64 = 13.89;

/// Environment variable consulted for the seed when none is given.
pub const SEED_ENV: &str = "CACHED_DFL_SEED";

/// Full description of one run. Every field has a default; the resolved
/// value of every field is echoed into the JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub agents: usize,
    pub epochs: usize,
    pub local_steps: usize,
    pub lr: f64,
    pub rho: f64,
    pub batch_size: usize,
    pub cache_size: usize,
    pub tau_max: u64,
    pub policy: Policy,
    pub gb_quotas: Option<Vec<usize>>,
    pub partition: PartitionKind,
    pub dirichlet_pi: f64,
    pub model: ModelKind,
    pub hidden: usize,
    pub dataset: DatasetSource,
    pub synthetic: SyntheticSpec,
    pub eval_subsample: Option<usize>,
    pub speed: f64,
    pub epoch_seconds: f64,
    pub dt: f64,
    pub range: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub block_length: f64,
    pub areas: usize,
    pub restricted_per_area: usize,
    pub allow_u_turn: bool,
    pub contact_model: ContactModel,
    pub seed: u64,
    /// Early-stopping window in epochs; 0 disables.
    pub patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub target_acc: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            agents: 100,
            epochs: 1000,
            local_steps: 10,
            lr: 0.1,
            rho: 0.01,
            batch_size: 64,
            cache_size: 10,
            tau_max: 10,
            policy: Policy::Lru,
            gb_quotas: None,
            partition: PartitionKind::Shards,
            dirichlet_pi: 0.5,
            model: ModelKind::Softmax,
            hidden: 64,
            dataset: DatasetSource::Synthetic,
            synthetic: SyntheticSpec::default(),
            eval_subsample: None,
            speed: DEFAULT_SPEED,
            epoch_seconds: 120.0,
            dt: 1.0,
            range: 100.0,
            grid_rows: 10,
            grid_cols: 10,
            block_length: 200.0,
            areas: 3,
            restricted_per_area: 0,
            allow_u_turn: false,
            contact_model: ContactModel::Mobility,
            seed: 0,
            patience: 20,
            plateau_factor: 0.1,
            plateau_patience: 10,
            min_lr: 1e-4,
            target_acc: None,
        }
    }
}

/// Keys accepted by [`ExperimentConfig::set`], in flag spelling.
pub const CONFIG_KEYS: &[&str] = &[
    "agents",
    "epochs",
    "local-steps",
    "lr",
    "rho",
    "batch-size",
    "cache-size",
    "tau-max",
    "policy",
    "gb-quotas",
    "partition",
    "dirichlet-pi",
    "model",
    "hidden",
    "dataset",
    "train-size",
    "test-size",
    "dim",
    "classes",
    "separation",
    "noise",
    "eval-subsample",
    "speed",
    "epoch-seconds",
    "dt",
    "range",
    "grid-rows",
    "grid-cols",
    "block-length",
    "areas",
    "restricted-per-area",
    "allow-u-turn",
    "contact-model",
    "seed",
    "patience",
    "plateau-factor",
    "plateau-patience",
    "min-lr",
    "target-acc",
];

/// Keys that only matter when vehicles move.
pub const MOBILITY_KEYS: &[&str] = &[
    "speed",
    "epoch-seconds",
    "dt",
    "range",
    "grid-rows",
    "grid-cols",
    "block-length",
    "restricted-per-area",
    "allow-u-turn",
    "contact-model",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse::<usize>(key, v))
        .collect()
}

/// Parses a cache size; `unlimited` maps to [`UNLIMITED`].
pub fn parse_cache_size(value: &str) -> Result<usize> {
    if value.trim() == "unlimited" {
        Ok(UNLIMITED)
    } else {
        parse("cache-size", value)
    }
}

impl ExperimentConfig {
    /// Defaults, with the seed taken from `CACHED_DFL_SEED` when set.
    pub fn from_env() -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.set("seed", &seed)?;
        }
        Ok(cfg)
    }

    /// Assigns one field by its flag name (underscores are accepted in place
    /// of dashes). Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        let v = value.trim();
        match k {
            "agents" => self.agents = parse(k, v)?,
            "epochs" => self.epochs = parse(k, v)?,
            "local-steps" => self.local_steps = parse(k, v)?,
            "lr" => self.lr = parse(k, v)?,
            "rho" => self.rho = parse(k, v)?,
            "batch-size" => self.batch_size = parse(k, v)?,
            "cache-size" => self.cache_size = parse_cache_size(v)?,
            "tau-max" => self.tau_max = parse(k, v)?,
            "policy" => self.policy = v.parse()?,
            "gb-quotas" => self.gb_quotas = Some(parse_list(k, v)?),
            "partition" => self.partition = v.parse()?,
            "dirichlet-pi" => self.dirichlet_pi = parse(k, v)?,
            "model" => self.model = v.parse()?,
            "hidden" => self.hidden = parse(k, v)?,
            "dataset" => self.dataset = v.parse()?,
            "train-size" => self.synthetic.train_size = parse(k, v)?,
            "test-size" => self.synthetic.test_size = parse(k, v)?,
            "dim" => self.synthetic.dim = parse(k, v)?,
            "classes" => self.synthetic.classes = parse(k, v)?,
            "separation" => self.synthetic.separation = parse(k, v)?,
            "noise" => self.synthetic.noise = parse(k, v)?,
            "eval-subsample" => self.eval_subsample = Some(parse(k, v)?),
            "speed" => self.speed = parse(k, v)?,
            "epoch-seconds" => self.epoch_seconds = parse(k, v)?,
            "dt" => self.dt = parse(k, v)?,
            "range" => self.range = parse(k, v)?,
            "grid-rows" => self.grid_rows = parse(k, v)?,
            "grid-cols" => self.grid_cols = parse(k, v)?,
            "block-length" => self.block_length = parse(k, v)?,
            "areas" => self.areas = parse(k, v)?,
            "restricted-per-area" => self.restricted_per_area = parse(k, v)?,
            "allow-u-turn" => self.allow_u_turn = parse(k, v)?,
            "contact-model" => self.contact_model = v.parse()?,
            "seed" => self.seed = parse(k, v)?,
            "patience" => self.patience = parse(k, v)?,
            "plateau-factor" => self.plateau_factor = parse(k, v)?,
            "plateau-patience" => self.plateau_patience = parse(k, v)?,
            "min-lr" => self.min_lr = parse(k, v)?,
            "target-acc" => self.target_acc = Some(parse(k, v)?),
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn learner(&self) -> LocalLearnerConfig {
        LocalLearnerConfig {
            local_steps: self.local_steps,
            lr: self.lr,
            rho: self.rho,
            batch_size: self.batch_size,
        }
    }

    pub fn arch(&self, input_dim: usize, classes: usize) -> Arch {
        match self.model {
            ModelKind::Softmax => Arch::Softmax { input_dim, classes },
            ModelKind::Mlp => Arch::Mlp {
                input_dim,
                hidden: self.hidden,
                classes,
            },
        }
    }

    /// Area confinement for the fleet, when any vehicle is restricted.
    pub fn area_spec(&self) -> Option<AreaSpec> {
        (self.restricted_per_area > 0).then_some(AreaSpec {
            num_areas: self.areas,
            restricted_per_area: self.restricted_per_area,
        })
    }

    /// Home area of every agent. With confinement this follows the fleet's
    /// assignment; otherwise agents are split into contiguous id blocks.
    pub fn agent_areas(&self) -> Vec<usize> {
        match self.area_spec() {
            Some(spec) => (0..self.agents).map(|i| spec.assignment(i).0).collect(),
            None => (0..self.agents).map(|i| i * self.areas / self.agents).collect(),
        }
    }

    /// Number of mobility ticks per epoch.
    pub fn ticks_per_epoch(&self) -> usize {
        (self.epoch_seconds / self.dt).round() as usize
    }

    pub fn uses_mobility(&self) -> bool {
        self.policy != Policy::Cfl && self.contact_model == ContactModel::Mobility
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.agents == 0 {
            return Err(Error::config("agents must be at least 1"));
        }
        self.learner().validate()?;
        if self.cache_size == 0 {
            return Err(Error::config("cache-size must be at least 1"));
        }
        if self.tau_max == 0 {
            return Err(Error::config("tau-max must be at least 1"));
        }
        if self.model == ModelKind::Mlp && self.hidden == 0 {
            return Err(Error::config("hidden must be at least 1"));
        }
        if self.dataset == DatasetSource::Synthetic {
            self.synthetic.validate()?;
        }
        positive("dirichlet-pi", self.dirichlet_pi)?;
        if self.areas == 0 {
            return Err(Error::config("areas must be at least 1"));
        }
        if self.restricted_per_area * self.areas > self.agents {
            return Err(Error::config(format!(
                "{} restricted vehicles exceed {} agents",
                self.restricted_per_area * self.areas,
                self.agents
            )));
        }
        if let PartitionKind::Overlap(_) = self.partition {
            if self.areas != 3 {
                return Err(Error::config("overlap partitions need exactly 3 areas"));
            }
        }
        if self.policy == Policy::Gb {
            let quotas = self
                .gb_quotas
                .as_ref()
                .ok_or_else(|| Error::config("policy gb needs gb-quotas"))?;
            if quotas.len() != self.areas {
                return Err(Error::config(format!(
                    "{} gb-quotas given for {} areas",
                    quotas.len(),
                    self.areas
                )));
            }
            let total: usize = quotas.iter().sum();
            if total != self.cache_size {
                return Err(Error::config(format!(
                    "gb-quotas sum to {total} but cache-size is {}",
                    self.cache_size
                )));
            }
        }
        positive("speed", self.speed)?;
        positive("epoch-seconds", self.epoch_seconds)?;
        positive("dt", self.dt)?;
        positive("range", self.range)?;
        positive("block-length", self.block_length)?;
        let ticks = self.epoch_seconds / self.dt;
        if (ticks - ticks.round()).abs() > 1e-9 || ticks.round() < 1.0 {
            return Err(Error::config(format!(
                "epoch-seconds {} is not a whole number of dt {} ticks",
                self.epoch_seconds, self.dt
            )));
        }
        if self.grid_rows < 2 || self.grid_cols < 2 {
            return Err(Error::config("grid needs at least 2 rows and 2 cols"));
        }
        if self.area_spec().is_some() && self.areas > self.grid_rows {
            return Err(Error::config(format!(
                "{} areas on a grid with {} rows",
                self.areas, self.grid_rows
            )));
        }
        if self.eval_subsample == Some(0) {
            return Err(Error::config("eval-subsample must be at least 1"));
        }
        if let Some(t) = self.target_acc {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("target-acc must lie in [0, 1], got {t}")));
            }
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(Error::config("plateau-factor must lie in (0, 1]"));
        }
        if !(self.min_lr >= 0.0) {
            return Err(Error::config("min-lr must be nonnegative"));
        }
        Ok(())
    }
}

/// Trades local computation for mobility: speed is multiplied by `factor`
/// and the number of local steps divided by it, leaving wall-clock time per
/// epoch unchanged.
pub fn speedup_config(base: &ExperimentConfig, factor: usize) -> Result<ExperimentConfig> {
    if factor == 0 {
        return Err(Error::config("speedup factor must be at least 1"));
    }
    if base.local_steps % factor != 0 {
        return Err(Error::config(format!(
            "local steps {} not divisible by speedup {factor}",
            base.local_steps
        )));
    }
    let mut cfg = base.clone();
    cfg.speed = base.speed * factor as f64;
    cfg.local_steps = base.local_steps / factor;
    Ok(cfg)
}
