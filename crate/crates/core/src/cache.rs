//! Per-agent store of foreign model snapshots.
//!
//! A cache holds at most one snapshot per owner. Before every merge, entries
//! whose staleness `t - train_epoch` reached the bound are dropped. Merging
//! keeps the newest copy of each owner, then prunes either globally (keep
//! the `capacity` freshest entries) or per group (keep the `r_k` freshest of
//! group `k`). Freshness ties are broken by the smaller owner id.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::learning::SharedParams;

/// Global epoch index.
pub type Epoch = u64;

/// A foreign model as produced by its owner's local update at `train_epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedModel<P = SharedParams> {
    pub owner: usize,
    pub params: P,
    pub train_epoch: Epoch,
    pub sample_count: usize,
    pub group: usize,
}

impl<P> CachedModel<P> {
    /// `t - train_epoch`, zero for timestamps not in the past.
    pub fn staleness(&self, t: Epoch) -> Epoch {
        t.saturating_sub(self.train_epoch)
    }

    fn rank_key(&self) -> (Reverse<Epoch>, usize) {
        (Reverse(self.train_epoch), self.owner)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCache<P = SharedParams> {
    holder: usize,
    entries: BTreeMap<usize, CachedModel<P>>,
    capacity: usize,
    staleness_bound: Epoch,
}

impl<P: Clone> ModelCache<P> {
    /// Empty cache for agent `holder`. `usize::MAX` capacity means unlimited.
    pub fn new(holder: usize, capacity: usize, staleness_bound: Epoch) -> Result<Self> {
        if staleness_bound == 0 {
            return Err(Error::config("staleness bound must be at least 1"));
        }
        Ok(ModelCache {
            holder,
            entries: BTreeMap::new(),
            capacity,
            staleness_bound,
        })
    }

    pub fn holder(&self) -> usize {
        self.holder
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn staleness_bound(&self) -> Epoch {
        self.staleness_bound
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, owner: usize) -> Option<&CachedModel<P>> {
        self.entries.get(&owner)
    }

    /// Entries in ascending owner order.
    pub fn iter(&self) -> impl Iterator<Item = &CachedModel<P>> {
        self.entries.values()
    }

    fn is_stale(&self, e: &CachedModel<P>, t: Epoch) -> bool {
        e.staleness(t) >= self.staleness_bound
    }

    /// Drops every entry with `t - train_epoch >= staleness_bound`.
    pub fn evict_stale(&mut self, t: Epoch) {
        let bound = self.staleness_bound;
        self.entries.retain(|_, e| e.staleness(t) < bound);
    }

    /// Inserts `incoming` unconditionally and every non-stale peer entry
    /// that is absent here or strictly newer than the resident copy.
    fn merge(&mut self, incoming: CachedModel<P>, peer: &ModelCache<P>, t: Epoch) {
        self.evict_stale(t);
        if incoming.owner != self.holder {
            self.entries.insert(incoming.owner, incoming);
        }
        for e in peer.entries.values() {
            if e.owner == self.holder || self.is_stale(e, t) {
                continue;
            }
            match self.entries.get(&e.owner) {
                Some(resident) if e.train_epoch <= resident.train_epoch => {}
                _ => {
                    self.entries.insert(e.owner, e.clone());
                }
            }
        }
    }

    fn retain_owners(&mut self, keep: Vec<usize>) {
        let mut kept = BTreeMap::new();
        for owner in keep {
            if let Some(e) = self.entries.remove(&owner) {
                kept.insert(owner, e);
            }
        }
        self.entries = kept;
    }

    /// Freshest-version merge followed by global pruning to `capacity`.
    pub fn lru_update(&mut self, incoming: CachedModel<P>, peer: &ModelCache<P>, t: Epoch) {
        self.merge(incoming, peer, t);
        if self.entries.len() > self.capacity {
            let mut ranked: Vec<_> = self.entries.values().map(|e| (e.rank_key(), e.owner)).collect();
            ranked.sort_unstable();
            let keep = ranked.into_iter().take(self.capacity).map(|(_, o)| o).collect();
            self.retain_owners(keep);
        }
    }

    /// Same merge as [`lru_update`](Self::lru_update), then keeps the
    /// `quotas[k]` freshest entries of every group `k`, where
    /// `group_of[owner]` gives an owner's group.
    pub fn gb_update(
        &mut self,
        incoming: CachedModel<P>,
        peer: &ModelCache<P>,
        t: Epoch,
        group_of: &[usize],
        quotas: &[usize],
    ) -> Result<()> {
        check_groups(group_of, quotas, self.capacity)?;
        let out_of_map = std::iter::once(incoming.owner)
            .chain(peer.entries.keys().copied())
            .find(|&o| o >= group_of.len());
        if let Some(o) = out_of_map {
            return Err(Error::config(format!("agent {o} has no group")));
        }
        self.merge(incoming, peer, t);
        let mut per_group: Vec<Vec<((Reverse<Epoch>, usize), usize)>> = vec![Vec::new(); quotas.len()];
        for e in self.entries.values() {
            per_group[group_of[e.owner]].push((e.rank_key(), e.owner));
        }
        let mut keep = Vec::new();
        for (group, mut members) in per_group.into_iter().enumerate() {
            members.sort_unstable();
            keep.extend(members.into_iter().take(quotas[group]).map(|(_, o)| o));
        }
        self.retain_owners(keep);
        Ok(())
    }
}

/// Validates a group map against a quota list: the number of quotas equals
/// the number of groups and the quotas add up to the cache capacity.
pub fn check_groups(group_of: &[usize], quotas: &[usize], capacity: usize) -> Result<()> {
    let groups = group_of.iter().max().map_or(0, |m| m + 1);
    if quotas.len() != groups {
        return Err(Error::config(format!(
            "{} group quotas given for {groups} groups",
            quotas.len()
        )));
    }
    let total: usize = quotas.iter().sum();
    if total != capacity {
        return Err(Error::config(format!(
            "group quotas sum to {total} but cache capacity is {capacity}"
        )));
    }
    Ok(())
}

/// Count and age statistics over a population of caches.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct CacheStats {
    pub count_mean: f64,
    pub count_var: f64,
    pub age_mean: f64,
    pub age_var: f64,
}

/// Mean/population variance of the per-agent entry count, and of the
/// staleness `t - train_epoch` over all entries of all caches.
pub fn cache_stats<'a, P: Clone + 'a>(
    caches: impl IntoIterator<Item = &'a ModelCache<P>>,
    t: Epoch,
) -> CacheStats {
    let caches: Vec<&ModelCache<P>> = caches.into_iter().collect();
    let counts: Vec<f64> = caches.iter().map(|c| c.len() as f64).collect();
    let ages: Vec<f64> = caches
        .iter()
        .flat_map(|c| c.iter().map(move |e| e.staleness(t) as f64))
        .collect();
    let (count_mean, count_var) = mean_var(&counts);
    let (age_mean, age_var) = mean_var(&ages);
    CacheStats {
        count_mean,
        count_var,
        age_mean,
        age_var,
    }
}

/// Mean and population variance; `(0, 0)` for an empty slice.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}
