//! Training-free cache dynamics: vehicles move and exchange zero-size model
//! tokens so cache occupancy and age can be studied in isolation.

use serde::{Deserialize, Serialize};

use super::{exchange_caches, ContactSource, ExperimentConfig, Policy, UpdateRule};
use crate::cache::{cache_stats, CacheStats, CachedModel, Epoch, ModelCache};
use crate::error::{Error, Result};

/// Default staleness bounds of the table.
pub const DEFAULT_TAUS: [u64; 7] = [1, 2, 3, 4, 5, 10, 20];

/// Default epoch lengths of the table, in seconds.
pub const DEFAULT_EPOCH_SECONDS: [f64; 3] = [30.0, 60.0, 120.0];

/// One cell of the cache table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsCell {
    pub tau_max: u64,
    pub epoch_seconds: f64,
    pub stats: CacheStats,
}

/// Number of epochs discarded before averaging.
pub fn warmup_epochs(tau_max: u64) -> u64 {
    2 * tau_max
}

/// Simulates `warmup + cfg.epochs` epochs of mobility and token exchange and
/// returns the per-epoch cache statistics averaged over the last
/// `cfg.epochs` epochs. Statistics are taken after the end-of-epoch eviction.
pub fn simulate_cache_stats(cfg: &ExperimentConfig) -> Result<CacheStats> {
    let mut cfg = cfg.clone();
    if cfg.policy == Policy::Cfl || cfg.policy == Policy::None {
        cfg.policy = Policy::Lru;
    }
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::config("cache statistics need at least one measured epoch"));
    }
    let groups = cfg.agent_areas();
    let rule = match (&cfg.policy, &cfg.gb_quotas) {
        (Policy::Gb, Some(quotas)) => UpdateRule::Gb {
            group_of: groups.clone(),
            quotas: quotas.clone(),
        },
        _ => UpdateRule::Lru,
    };
    let mut caches: Vec<ModelCache<()>> = (0..cfg.agents)
        .map(|id| ModelCache::new(id, cfg.cache_size, cfg.tau_max))
        .collect::<Result<_>>()?;
    let token = |owner: usize, t: Epoch| CachedModel {
        owner,
        params: (),
        train_epoch: t,
        sample_count: 1,
        group: groups[owner],
    };
    let mut contacts = ContactSource::from_config(&cfg)?;
    let warmup = warmup_epochs(cfg.tau_max);
    let mut sum = CacheStats::default();
    for t in 0..warmup + cfg.epochs as u64 {
        contacts.run_epoch(|i, j| {
            let (left, right) = caches.split_at_mut(j);
            exchange_caches(&mut left[i], token(i, t), &mut right[0], token(j, t), t, &rule)
        })?;
        for c in caches.iter_mut() {
            c.evict_stale(t);
        }
        if t >= warmup {
            let s = cache_stats(&caches, t);
            sum.count_mean += s.count_mean;
            sum.count_var += s.count_var;
            sum.age_mean += s.age_mean;
            sum.age_var += s.age_var;
        }
    }
    let n = cfg.epochs as f64;
    Ok(CacheStats {
        count_mean: sum.count_mean / n,
        count_var: sum.count_var / n,
        age_mean: sum.age_mean / n,
        age_var: sum.age_var / n,
    })
}

/// Cache statistics for every `(tau_max, epoch_seconds)` pair, rows ordered
/// by epoch length and then staleness bound.
pub fn cache_table(base: &ExperimentConfig, taus: &[u64], epoch_seconds: &[f64]) -> Result<Vec<StatsCell>> {
    if taus.is_empty() || epoch_seconds.is_empty() {
        return Err(Error::config("cache table needs at least one tau-max and one epoch length"));
    }
    let mut out = Vec::with_capacity(taus.len() * epoch_seconds.len());
    for &secs in epoch_seconds {
        for &tau in taus {
            let mut cfg = base.clone();
            cfg.tau_max = tau;
            cfg.epoch_seconds = secs;
            out.push(StatsCell {
                tau_max: tau,
                epoch_seconds: secs,
                stats: simulate_cache_stats(&cfg)?,
            });
        }
    }
    Ok(out)
}
