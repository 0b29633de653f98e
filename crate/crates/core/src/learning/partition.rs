//! Assignment of training samples to agents.
//!
//! Every partitioner returns one index list per agent; together the lists
//! cover each training row exactly once.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::data::Dataset;

/// Row indices assigned to each agent.
pub type Partition = Vec<Vec<usize>>;

/// Which partitioner distributes the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PartitionKind {
    /// Label-sorted shards dealt unevenly (4/3/2/1 shards to 10/20/30/40 %).
    Shards,
    Iid,
    Dirichlet,
    /// Area label sets with `n` labels shared between neighbouring areas.
    Overlap(usize),
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionKind::Shards => write!(f, "shards"),
            PartitionKind::Iid => write!(f, "iid"),
            PartitionKind::Dirichlet => write!(f, "dirichlet"),
            PartitionKind::Overlap(n) => write!(f, "overlap-{n}"),
        }
    }
}

impl FromStr for PartitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shards" => Ok(PartitionKind::Shards),
            "iid" => Ok(PartitionKind::Iid),
            "dirichlet" => Ok(PartitionKind::Dirichlet),
            _ => match s.strip_prefix("overlap-").and_then(|n| n.parse::<usize>().ok()) {
                Some(n) if n <= 3 => Ok(PartitionKind::Overlap(n)),
                _ => Err(Error::config(format!(
                    "unknown partition `{s}` (expected shards, iid, dirichlet or overlap-0..3)"
                ))),
            },
        }
    }
}

impl From<PartitionKind> for String {
    fn from(p: PartitionKind) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for PartitionKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// `(shards per agent, fraction of agents)` tiers of the extreme
/// non-i.i.d. allocation.
pub const SHARD_TIERS: [(usize, f64); 4] = [(4, 0.1), (3, 0.2), (2, 0.3), (1, 0.4)];

pub const DEFAULT_SHARDS: usize = 200;

/// Sorts by label, cuts into `n_shards` near-equal shards, shuffles them and
/// deals them out according to `tiers`.
pub fn partition_shards(
    data: &Dataset,
    n_agents: usize,
    n_shards: usize,
    tiers: &[(usize, f64)],
    rng: &mut impl Rng,
) -> Result<Partition> {
    if n_agents == 0 {
        return Err(Error::config("shards partition needs at least one agent"));
    }
    let ratio_sum: f64 = tiers.iter().map(|t| t.1).sum();
    if (ratio_sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("shard tier ratios sum to {ratio_sum}, not 1")));
    }
    let mut per_agent = Vec::with_capacity(n_agents);
    for &(shards, ratio) in tiers {
        let agents = ratio * n_agents as f64;
        let rounded = agents.round();
        if (agents - rounded).abs() > 1e-9 {
            return Err(Error::config(format!(
                "{ratio} of {n_agents} agents is not a whole number"
            )));
        }
        per_agent.extend(std::iter::repeat_n(shards, rounded as usize));
    }
    let total: usize = per_agent.iter().sum();
    if total != n_shards {
        return Err(Error::config(format!(
            "tiers deal {total} shards but {n_shards} were requested"
        )));
    }
    if n_shards > data.len() {
        return Err(Error::config(format!(
            "{n_shards} shards need at least as many samples, got {}",
            data.len()
        )));
    }
    per_agent.shuffle(rng);
    let sorted = sorted_by_label(data, (0..data.len()).collect());
    Ok(deal_shards(&sorted, &per_agent, rng))
}

fn sorted_by_label(data: &Dataset, mut idx: Vec<usize>) -> Vec<usize> {
    idx.sort_by_key(|&i| (data.label(i), i));
    idx
}

/// Cuts `sorted` into `Σ shards_per_agent` contiguous near-equal shards and
/// hands them out in shuffled order.
fn deal_shards(sorted: &[usize], shards_per_agent: &[usize], rng: &mut impl Rng) -> Partition {
    let n_shards: usize = shards_per_agent.iter().sum();
    let bounds: Vec<usize> = (0..=n_shards).map(|k| k * sorted.len() / n_shards).collect();
    let mut order: Vec<usize> = (0..n_shards).collect();
    order.shuffle(rng);
    let mut next = order.into_iter();
    shards_per_agent
        .iter()
        .map(|&k| {
            let mut mine: Vec<usize> = Vec::new();
            for s in next.by_ref().take(k) {
                mine.extend_from_slice(&sorted[bounds[s]..bounds[s + 1]]);
            }
            mine.sort_unstable();
            mine
        })
        .collect()
}

/// Label span of each of the `n_shards` shards `partition_shards` cuts.
pub fn shard_label_sets(data: &Dataset, n_shards: usize) -> Vec<Vec<usize>> {
    let sorted = sorted_by_label(data, (0..data.len()).collect());
    (0..n_shards)
        .map(|k| {
            let lo = k * sorted.len() / n_shards;
            let hi = (k + 1) * sorted.len() / n_shards;
            let mut labels: Vec<usize> = sorted[lo..hi].iter().map(|&i| data.label(i)).collect();
            labels.dedup();
            labels
        })
        .collect()
}

/// Uniform random permutation split into near-equal parts (sizes differ by
/// at most one; earlier agents get the extra rows).
pub fn partition_iid(data: &Dataset, n_agents: usize, rng: &mut impl Rng) -> Result<Partition> {
    if n_agents == 0 {
        return Err(Error::config("iid partition needs at least one agent"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    let base = data.len() / n_agents;
    let extra = data.len() % n_agents;
    let mut out = Vec::with_capacity(n_agents);
    let mut at = 0;
    for a in 0..n_agents {
        let size = base + usize::from(a < extra);
        let mut part = idx[at..at + size].to_vec();
        part.sort_unstable();
        out.push(part);
        at += size;
    }
    Ok(out)
}

/// For every class, draws agent proportions from Dirichlet(pi) and cuts the
/// shuffled class rows at the rounded cumulative proportions. Agents left
/// with no rows take one row from the currently largest agent.
pub fn partition_dirichlet(
    data: &Dataset,
    n_agents: usize,
    pi: f64,
    rng: &mut impl Rng,
) -> Result<Partition> {
    if n_agents == 0 {
        return Err(Error::config("dirichlet partition needs at least one agent"));
    }
    if !(pi > 0.0 && pi.is_finite()) {
        return Err(Error::config(format!("dirichlet concentration must be positive, got {pi}")));
    }
    if data.len() < n_agents {
        return Err(Error::config(format!(
            "{} samples cannot give each of {n_agents} agents a row",
            data.len()
        )));
    }
    let gamma = Gamma::new(pi, 1.0).map_err(|e| Error::config(e.to_string()))?;
    let mut out: Partition = vec![Vec::new(); n_agents];
    for class in 0..data.classes() {
        let mut rows: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        if rows.is_empty() {
            continue;
        }
        rows.shuffle(rng);
        let props = dirichlet_sample(&gamma, n_agents, rng);
        let mut cum = 0.0;
        let mut lo = 0;
        for (a, p) in props.iter().enumerate() {
            cum += p;
            let hi = if a + 1 == n_agents {
                rows.len()
            } else {
                ((cum * rows.len() as f64).round() as usize).clamp(lo, rows.len())
            };
            out[a].extend_from_slice(&rows[lo..hi]);
            lo = hi;
        }
    }
    for a in 0..n_agents {
        if out[a].is_empty() {
            let donor = (0..n_agents)
                .max_by_key(|&d| (out[d].len(), std::cmp::Reverse(d)))
                .expect("at least one agent");
            let row = out[donor].pop().expect("donor has rows");
            out[a].push(row);
        }
    }
    for part in &mut out {
        part.sort_unstable();
    }
    Ok(out)
}

/// One Dirichlet draw via normalized Gamma variates.
pub fn dirichlet_sample(gamma: &Gamma<f64>, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            return g.into_iter().map(|x| x / s).collect();
        }
    }
}

/// Label sets of the three areas for `n` shared labels between neighbours.
pub fn overlap_label_sets(n: usize) -> Result<[Vec<usize>; 3]> {
    Ok(match n {
        0 => [vec![0, 1, 2, 3], vec![4, 5, 6], vec![7, 8, 9]],
        1 => [vec![9, 0, 1, 2, 3], vec![3, 4, 5, 6], vec![6, 7, 8, 9]],
        2 => [vec![8, 9, 0, 1, 2, 3], vec![2, 3, 4, 5, 6], vec![5, 6, 7, 8, 9]],
        3 => [vec![7, 8, 9, 0, 1, 2, 3], vec![1, 2, 3, 4, 5, 6], vec![4, 5, 6, 7, 8, 9]],
        _ => return Err(Error::config(format!("overlap must be 0..=3, got {n}"))),
    })
}

/// Grouped allocation over three areas. `area_of_agent[a]` is agent `a`'s
/// area. Rows of a label shared by several areas are split evenly between
/// them; inside an area, rows are sorted by label and dealt as two shards
/// per agent.
pub fn partition_overlap(
    data: &Dataset,
    n_overlap: usize,
    area_of_agent: &[usize],
    rng: &mut impl Rng,
) -> Result<Partition> {
    if data.classes() != 10 {
        return Err(Error::config(format!(
            "overlap partition needs a 10-class dataset, got {} classes",
            data.classes()
        )));
    }
    let sets = overlap_label_sets(n_overlap)?;
    if let Some(&bad) = area_of_agent.iter().find(|&&a| a >= 3) {
        return Err(Error::config(format!("agent area {bad} outside 0..3")));
    }
    let mut area_rows: [Vec<usize>; 3] = Default::default();
    for label in 0..10 {
        let owners: Vec<usize> = (0..3).filter(|&a| sets[a].contains(&label)).collect();
        let rows: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == label).collect();
        for (k, &area) in owners.iter().enumerate() {
            let lo = k * rows.len() / owners.len();
            let hi = (k + 1) * rows.len() / owners.len();
            area_rows[area].extend_from_slice(&rows[lo..hi]);
        }
    }
    let mut out: Partition = vec![Vec::new(); area_of_agent.len()];
    for (area, rows) in area_rows.into_iter().enumerate() {
        let members: Vec<usize> = (0..area_of_agent.len())
            .filter(|&a| area_of_agent[a] == area)
            .collect();
        if members.is_empty() {
            continue;
        }
        if rows.len() < 2 * members.len() {
            return Err(Error::config(format!(
                "area {area} has {} rows for {} agents",
                rows.len(),
                members.len()
            )));
        }
        let sorted = sorted_by_label(data, rows);
        let parts = deal_shards(&sorted, &vec![2; members.len()], rng);
        for (agent, part) in members.into_iter().zip(parts) {
            out[agent] = part;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Domain};

    fn labelled(n: usize, classes: usize) -> Dataset {
        Dataset::new(1, classes, vec![0.0; n], (0..n).map(|i| i % classes).collect()).unwrap()
    }

    fn assert_partition(parts: &Partition, n: usize) {
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn shards_tiers_and_label_span() {
        let data = labelled(20_000, 10);
        let mut r = rng::stream(1, Domain::Partition, &[]);
        let parts = partition_shards(&data, 100, 200, &SHARD_TIERS, &mut r).unwrap();
        assert_partition(&parts, 20_000);
        let mut sizes: Vec<usize> = parts.iter().map(|p| p.len() / 100).collect();
        sizes.sort_unstable();
        let count = |k| sizes.iter().filter(|&&s| s == k).count();
        assert_eq!((count(4), count(3), count(2), count(1)), (10, 20, 30, 40));
        assert!(shard_label_sets(&data, 200).iter().all(|s| !s.is_empty() && s.len() <= 2));
    }

    #[test]
    fn shards_reject_fractional_tiers() {
        let data = labelled(1000, 10);
        let mut r = rng::stream(1, Domain::Partition, &[]);
        assert!(matches!(
            partition_shards(&data, 33, 200, &SHARD_TIERS, &mut r),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn iid_sizes() {
        let mut r = rng::stream(1, Domain::Partition, &[]);
        let parts = partition_iid(&labelled(10, 2), 3, &mut r).unwrap();
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 3, 3]);
        let parts = partition_iid(&labelled(60_000, 10), 100, &mut r).unwrap();
        assert!(parts.iter().all(|p| p.len() == 600));
        assert_partition(&parts, 60_000);
    }

    #[test]
    fn dirichlet_reproducible_and_nonempty() {
        let data = labelled(1000, 10);
        let run = |seed| {
            let mut r = rng::stream(seed, Domain::Partition, &[]);
            partition_dirichlet(&data, 100, 0.5, &mut r).unwrap()
        };
        let a = run(3);
        assert_eq!(a, run(3));
        assert_partition(&a, 1000);
        assert!(a.iter().all(|p| !p.is_empty()));
        let small = labelled(40, 2);
        let mut r = rng::stream(9, Domain::Partition, &[]);
        let b = partition_dirichlet(&small, 2, 0.5, &mut r).unwrap();
        let mut r = rng::stream(9, Domain::Partition, &[]);
        assert_eq!(b, partition_dirichlet(&small, 2, 0.5, &mut r).unwrap());
    }

    #[test]
    fn dirichlet_proportions_sum_to_one() {
        let gamma = Gamma::new(0.5, 1.0).unwrap();
        let mut r = rng::stream(4, Domain::Partition, &[]);
        for _ in 0..50 {
            let p = dirichlet_sample(&gamma, 100, &mut r);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn large_concentration_approaches_uniform_split() {
        let data = labelled(10_000, 10);
        let mut r = rng::stream(5, Domain::Partition, &[]);
        let parts = partition_dirichlet(&data, 10, 1e6, &mut r).unwrap();
        for p in &parts {
            assert!((p.len() as f64 - 1000.0).abs() < 30.0, "{}", p.len());
        }
    }

    #[test]
    fn overlap_label_sets_match_tables() {
        assert_eq!(overlap_label_sets(0).unwrap()[0], vec![0, 1, 2, 3]);
        assert_eq!(overlap_label_sets(0).unwrap()[1], vec![4, 5, 6]);
        assert_eq!(overlap_label_sets(0).unwrap()[2], vec![7, 8, 9]);
        assert_eq!(overlap_label_sets(3).unwrap()[0], vec![7, 8, 9, 0, 1, 2, 3]);
        assert!(overlap_label_sets(4).is_err());
    }

    #[test]
    fn overlap_partition_respects_area_labels() {
        let data = labelled(6000, 10);
        let areas: Vec<usize> = (0..99).map(|a| if a < 90 { a / 30 } else { (a - 90) % 3 }).collect();
        for n in 0..=3 {
            let sets = overlap_label_sets(n).unwrap();
            let mut r = rng::stream(2, Domain::Partition, &[]);
            let parts = partition_overlap(&data, n, &areas, &mut r).unwrap();
            assert_partition(&parts, 6000);
            for (a, p) in parts.iter().enumerate() {
                assert!(!p.is_empty());
                assert!(p.iter().all(|&i| sets[areas[a]].contains(&data.label(i))));
            }
        }
        // label 3 under 1-overlap is shared by areas 0 and 1: split evenly
        let mut r = rng::stream(2, Domain::Partition, &[]);
        let parts = partition_overlap(&data, 1, &areas, &mut r).unwrap();
        let in_area = |area: usize| {
            parts
                .iter()
                .enumerate()
                .filter(|(a, _)| areas[*a] == area)
                .flat_map(|(_, p)| p.iter())
                .filter(|&&i| data.label(i) == 3)
                .count()
        };
        assert_eq!((in_area(0), in_area(1)), (300, 300));
        assert!(partition_overlap(&labelled(100, 5), 0, &areas, &mut r).is_err());
    }
}
