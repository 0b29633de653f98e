//! Shared helpers for the integration tests: a brute-force cache oracle and
//! a randomized exchange driver.

#![allow(dead_code)]

pub mod gradcheck;

use cached_dfl::cache::{CachedModel, Epoch, ModelCache};
use cached_dfl::protocol::{exchange_caches, UpdateRule};
use cached_dfl::rng::StreamRng;
use rand::Rng;

/// `(owner, train_epoch)` pairs in ascending owner order.
pub type View = Vec<(usize, Epoch)>;

pub fn view<P: Clone>(c: &ModelCache<P>) -> View {
    c.iter().map(|e| (e.owner, e.train_epoch)).collect()
}

/// Every candidate of the merge, computed from scratch: survivors of the
/// cache, the incoming model, and fresher peer entries.
fn candidates(mine: &View, holder: usize, incoming: (usize, Epoch), peer: &View, t: Epoch, tau_max: Epoch) -> View {
    let fresh = |tau: Epoch| t - tau < tau_max;
    let mut all: View = mine.iter().copied().filter(|&(_, tau)| fresh(tau)).collect();
    let put = |all: &mut View, (o, tau): (usize, Epoch), force: bool| {
        if o == holder {
            return;
        }
        match all.iter_mut().find(|(x, _)| *x == o) {
            Some(slot) => {
                if force || tau > slot.1 {
                    *slot = (o, tau);
                }
            }
            None => all.push((o, tau)),
        }
    };
    put(&mut all, incoming, true);
    for &(o, tau) in peer {
        if fresh(tau) {
            put(&mut all, (o, tau), false);
        }
    }
    all
}

fn by_freshness(v: &mut View) {
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
}

fn by_owner(mut v: View) -> View {
    v.sort();
    v
}

pub fn oracle_lru(
    mine: &View,
    holder: usize,
    incoming: (usize, Epoch),
    peer: &View,
    t: Epoch,
    tau_max: Epoch,
    capacity: usize,
) -> View {
    let mut all = candidates(mine, holder, incoming, peer, t, tau_max);
    by_freshness(&mut all);
    all.truncate(capacity);
    by_owner(all)
}

#[allow(clippy::too_many_arguments)]
pub fn oracle_gb(
    mine: &View,
    holder: usize,
    incoming: (usize, Epoch),
    peer: &View,
    t: Epoch,
    tau_max: Epoch,
    group_of: &[usize],
    quotas: &[usize],
) -> View {
    let all = candidates(mine, holder, incoming, peer, t, tau_max);
    let mut kept = Vec::new();
    for (g, &quota) in quotas.iter().enumerate() {
        let mut members: View = all.iter().copied().filter(|&(o, _)| group_of[o] == g).collect();
        by_freshness(&mut members);
        members.truncate(quota);
        kept.extend(members);
    }
    by_owner(kept)
}

pub fn token(owner: usize, t: Epoch, group_of: &[usize]) -> CachedModel<()> {
    CachedModel {
        owner,
        params: (),
        train_epoch: t,
        sample_count: 1,
        group: group_of[owner],
    }
}

/// Outcome of one randomized exchange sequence.
#[derive(Debug, Default, Clone, Copy)]
pub struct SequenceReport {
    pub operations: usize,
    pub mismatches: usize,
    pub staleness_violations: usize,
}

/// Runs a random sequence of pairwise exchanges over a small population and
/// compares every resulting cache with the oracle.
pub fn random_sequence(rng: &mut StreamRng, grouped: bool) -> SequenceReport {
    let n = rng.random_range(2..9);
    let tau_max = rng.random_range(1..6);
    let groups = rng.random_range(1..4).min(n);
    // every group has at least one member
    let group_of: Vec<usize> = (0..n)
        .map(|i| if i < groups { i } else { rng.random_range(0..groups) })
        .collect();
    let (rule, capacity) = if grouped {
        let quotas: Vec<usize> = (0..groups).map(|_| rng.random_range(0..4)).collect();
        let cap = quotas.iter().sum();
        (
            UpdateRule::Gb {
                group_of: group_of.clone(),
                quotas,
            },
            cap,
        )
    } else {
        (UpdateRule::Lru, rng.random_range(1..7))
    };
    let mut caches: Vec<ModelCache<()>> = (0..n).map(|i| ModelCache::new(i, capacity, tau_max).unwrap()).collect();
    let mut t: Epoch = 0;
    let mut report = SequenceReport::default();
    for _ in 0..rng.random_range(1..40) {
        t += rng.random_range(0..3);
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        let (va, vb) = (view(&caches[a]), view(&caches[b]));
        let expect = |mine: &View, holder: usize, other: usize, peer: &View| match &rule {
            UpdateRule::Lru => oracle_lru(mine, holder, (other, t), peer, t, tau_max, capacity),
            UpdateRule::Gb { group_of, quotas } => {
                oracle_gb(mine, holder, (other, t), peer, t, tau_max, group_of, quotas)
            }
        };
        let want_a = expect(&va, a, b, &vb);
        let want_b = expect(&vb, b, a, &va);
        let (lo, hi) = (a.min(b), a.max(b));
        let (left, right) = caches.split_at_mut(hi);
        let (ca, cb) = if a < b {
            (&mut left[lo], &mut right[0])
        } else {
            (&mut right[0], &mut left[lo])
        };
        exchange_caches(ca, token(a, t, &group_of), cb, token(b, t, &group_of), t, &rule).unwrap();
        report.operations += 1;
        if view(&caches[a]) != want_a || view(&caches[b]) != want_b {
            report.mismatches += 1;
        }
        for c in [&caches[a], &caches[b]] {
            if c.iter().any(|e| t - e.train_epoch >= tau_max) {
                report.staleness_violations += 1;
            }
        }
    }
    report
}

/// A configuration small enough to run in well under a second.
pub fn small_config(policy: cached_dfl::Policy) -> cached_dfl::ExperimentConfig {
    let mut cfg = cached_dfl::ExperimentConfig::default();
    cfg.policy = policy;
    cfg.agents = 10;
    cfg.epochs = 8;
    cfg.synthetic.train_size = 1_000;
    cfg.synthetic.test_size = 200;
    cfg.grid_rows = 4;
    cfg.grid_cols = 4;
    cfg.block_length = 100.0;
    cfg.epoch_seconds = 30.0;
    cfg.seed = 11;
    cfg
}
