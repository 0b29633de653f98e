//! Manhattan-grid mobility.
//!
//! Vehicles drive along the streets of a rectangular grid. At every
//! intersection a vehicle keeps going straight with probability 0.5 and
//! otherwise picks uniformly among the remaining roads. Vehicles can be
//! confined to a horizontal band of the map ("area"); confined vehicles see
//! roads leaving their band as nonexistent. Two vehicles are in contact when
//! their Euclidean distance is at most the communication range.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain, StreamRng};

pub type NodeId = usize;

/// Probability of continuing on the same street at an intersection.
pub const STRAIGHT_PROBABILITY: f64 = 0.5;

/// Rectangular street grid. Intersection `(row, col)` sits at
/// `(col * block_length, row * block_length)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    block_length: f64,
    areas: usize,
}

/// A directed road segment between two adjacent intersections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub from: NodeId,
    pub to: NodeId,
}

impl Segment {
    pub fn reversed(self) -> Segment {
        Segment {
            from: self.to,
            to: self.from,
        }
    }
}

pub fn build_grid(rows: usize, cols: usize, block_length: f64) -> Result<GridMap> {
    if rows < 2 || cols < 2 {
        return Err(Error::config(format!(
            "grid needs at least 2x2 intersections, got {rows}x{cols}"
        )));
    }
    if !(block_length > 0.0 && block_length.is_finite()) {
        return Err(Error::config(format!(
            "block length must be positive, got {block_length}"
        )));
    }
    Ok(GridMap {
        rows,
        cols,
        block_length,
        areas: 1,
    })
}

impl GridMap {
    /// Splits the map into `areas` horizontal bands. Each band must contain
    /// at least one row of intersections.
    pub fn with_areas(mut self, areas: usize) -> Result<GridMap> {
        if areas == 0 {
            return Err(Error::config("number of areas must be at least 1"));
        }
        let mut seen = vec![false; areas];
        for r in 0..self.rows {
            seen[area_of_y(r as f64 * self.block_length, self.height(), areas)] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::config(format!(
                "{} intersection rows cannot be split into {areas} areas (area {empty} has no street)",
                self.rows
            )));
        }
        self.areas = areas;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_length(&self) -> f64 {
        self.block_length
    }

    pub fn areas(&self) -> usize {
        self.areas
    }

    pub fn width(&self) -> f64 {
        (self.cols - 1) as f64 * self.block_length
    }

    pub fn height(&self) -> f64 {
        (self.rows - 1) as f64 * self.block_length
    }

    pub fn intersection_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Number of undirected streets between adjacent intersections.
    pub fn street_count(&self) -> usize {
        self.rows * (self.cols - 1) + self.cols * (self.rows - 1)
    }

    pub fn node(&self, row: usize, col: usize) -> NodeId {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    pub fn row_col(&self, node: NodeId) -> (usize, usize) {
        (node / self.cols, node % self.cols)
    }

    pub fn coords(&self, node: NodeId) -> (f64, f64) {
        let (r, c) = self.row_col(node);
        (c as f64 * self.block_length, r as f64 * self.block_length)
    }

    /// Adjacent intersections in a fixed order: east, north, west, south.
    pub fn neighbors(&self, node: NodeId) -> Vec<NodeId> {
        let (r, c) = self.row_col(node);
        let mut out = Vec::with_capacity(4);
        if c + 1 < self.cols {
            out.push(self.node(r, c + 1));
        }
        if r + 1 < self.rows {
            out.push(self.node(r + 1, c));
        }
        if c > 0 {
            out.push(self.node(r, c - 1));
        }
        if r > 0 {
            out.push(self.node(r - 1, c));
        }
        out
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.neighbors(node).len()
    }

    pub fn segment_length(&self, _segment: Segment) -> f64 {
        self.block_length
    }

    /// All directed segments, ordered by source then neighbor order.
    pub fn segments(&self) -> Vec<Segment> {
        (0..self.intersection_count())
            .flat_map(|from| {
                self.neighbors(from)
                    .into_iter()
                    .map(move |to| Segment { from, to })
            })
            .collect()
    }

    /// Area of an intersection under this map's band split.
    pub fn node_area(&self, node: NodeId) -> usize {
        area_of_y(self.coords(node).1, self.height(), self.areas)
    }

    /// The intersection reached by continuing straight through `at` when
    /// arriving from `from`, if the grid extends that far.
    fn straight_from(&self, from: NodeId, at: NodeId) -> Option<NodeId> {
        let (fr, fc) = self.row_col(from);
        let (ar, ac) = self.row_col(at);
        let nr = 2 * ar as isize - fr as isize;
        let nc = 2 * ac as isize - fc as isize;
        if nr < 0 || nc < 0 || nr >= self.rows as isize || nc >= self.cols as isize {
            None
        } else {
            Some(self.node(nr as usize, nc as usize))
        }
    }

    fn segment_allowed(&self, seg: Segment, confined_to: Option<usize>) -> bool {
        match confined_to {
            None => true,
            Some(area) => self.node_area(seg.from) == area && self.node_area(seg.to) == area,
        }
    }
}

/// Horizontal band containing `y`. Bands have equal height; a point lying
/// exactly on a boundary belongs to the lower band.
pub fn area_of_y(y: f64, height: f64, num_areas: usize) -> usize {
    if num_areas <= 1 || y <= 0.0 {
        return 0;
    }
    let band = height / num_areas as f64;
    let idx = (y / band).ceil() as usize;
    idx.saturating_sub(1).min(num_areas - 1)
}

/// Area assignment for grouped mobility: the first
/// `num_areas * restricted_per_area` vehicles are confined to area
/// `id / restricted_per_area`; the remaining vehicles roam freely and get a
/// home area round-robin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaSpec {
    pub num_areas: usize,
    pub restricted_per_area: usize,
}

impl AreaSpec {
    pub fn restricted_total(&self) -> usize {
        self.num_areas * self.restricted_per_area
    }

    /// `(home_area, free_roam)` for vehicle `id`.
    pub fn assignment(&self, id: usize) -> (usize, bool) {
        let restricted = self.restricted_total();
        if id < restricted {
            (id / self.restricted_per_area, false)
        } else {
            ((id - restricted) % self.num_areas, true)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub segment: Segment,
    /// Meters traveled along `segment`, in `[0, segment length]`.
    pub offset: f64,
    pub speed: f64,
    pub home_area: Option<usize>,
    pub free_roam: bool,
}

impl VehicleState {
    pub fn position(&self, map: &GridMap) -> (f64, f64) {
        let (x0, y0) = map.coords(self.segment.from);
        let (x1, y1) = map.coords(self.segment.to);
        let f = self.offset / map.segment_length(self.segment);
        (x0 + (x1 - x0) * f, y0 + (y1 - y0) * f)
    }

    fn confined_to(&self) -> Option<usize> {
        if self.free_roam {
            None
        } else {
            self.home_area
        }
    }
}

pub fn area_of(v: &VehicleState, map: &GridMap, num_areas: usize) -> usize {
    area_of_y(v.position(map).1, map.height(), num_areas)
}

/// Places `n` vehicles uniformly on road segments. Vehicle `i` draws from
/// its own placement stream so the result only depends on `seed`.
pub fn init_vehicles(
    map: &GridMap,
    n: usize,
    speed: f64,
    area_spec: Option<AreaSpec>,
    seed: u64,
) -> Result<Vec<VehicleState>> {
    if n == 0 {
        return Err(Error::config("number of vehicles must be at least 1"));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::config(format!("speed must be positive, got {speed}")));
    }
    if let Some(spec) = area_spec {
        if spec.num_areas != map.areas() {
            return Err(Error::config(format!(
                "area spec has {} areas but the map is split into {}",
                spec.num_areas,
                map.areas()
            )));
        }
        if spec.restricted_total() > n {
            return Err(Error::config(format!(
                "{} restricted vehicles requested but only {n} vehicles",
                spec.restricted_total()
            )));
        }
    }
    let all = map.segments();
    let per_area: Vec<Vec<Segment>> = (0..map.areas())
        .map(|a| {
            all.iter()
                .copied()
                .filter(|s| map.segment_allowed(*s, Some(a)))
                .collect()
        })
        .collect();
    (0..n)
        .map(|id| {
            let (home_area, free_roam) = match area_spec {
                Some(spec) => {
                    let (a, free) = spec.assignment(id);
                    (Some(a), free)
                }
                None => (None, true),
            };
            let pool = if free_roam {
                &all
            } else {
                &per_area[home_area.unwrap_or(0)]
            };
            if pool.is_empty() {
                return Err(Error::config(format!(
                    "area {home_area:?} contains no road segment"
                )));
            }
            let mut rng = rng::stream(seed, Domain::Placement, &[id as u64]);
            let segment = pool[rng.random_range(0..pool.len())];
            let offset = rng.random::<f64>() * map.segment_length(segment);
            Ok(VehicleState {
                id,
                segment,
                offset,
                speed,
                home_area,
                free_roam,
            })
        })
        .collect()
}

/// Outgoing choices at the end of `arrival` with their probabilities.
///
/// The reverse road is only offered when `allow_reverse` is set or when it is
/// the only road available.
pub fn turn_distribution(
    map: &GridMap,
    arrival: Segment,
    confined_to: Option<usize>,
    allow_reverse: bool,
) -> Vec<(NodeId, f64)> {
    let at = arrival.to;
    let back = arrival.from;
    let options: Vec<NodeId> = map
        .neighbors(at)
        .into_iter()
        .filter(|&n| map.segment_allowed(Segment { from: at, to: n }, confined_to))
        .filter(|&n| allow_reverse || n != back)
        .collect();
    if options.is_empty() {
        return vec![(back, 1.0)];
    }
    let straight = map
        .straight_from(back, at)
        .filter(|s| options.contains(s));
    match straight {
        Some(s) if options.len() > 1 => {
            let share = (1.0 - STRAIGHT_PROBABILITY) / (options.len() - 1) as f64;
            options
                .into_iter()
                .map(|n| (n, if n == s { STRAIGHT_PROBABILITY } else { share }))
                .collect()
        }
        _ => {
            let share = 1.0 / options.len() as f64;
            options.into_iter().map(|n| (n, share)).collect()
        }
    }
}

fn sample_turn(choices: &[(NodeId, f64)], rng: &mut impl Rng) -> NodeId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(n, p) in choices {
        acc += p;
        if u < acc {
            return n;
        }
    }
    choices.last().expect("turn distribution is never empty").0
}

/// Advances a vehicle by `speed * dt` meters, turning at every intersection
/// it reaches. Distance left over at an intersection carries into the next
/// segment.
pub fn step(
    v: &VehicleState,
    map: &GridMap,
    dt: f64,
    allow_reverse: bool,
    rng: &mut impl Rng,
) -> VehicleState {
    debug_assert!(dt > 0.0);
    let mut next = v.clone();
    let mut remaining = v.speed * dt;
    loop {
        let room = map.segment_length(next.segment) - next.offset;
        if remaining < room {
            next.offset += remaining;
            return next;
        }
        remaining -= room;
        let choices = turn_distribution(map, next.segment, next.confined_to(), allow_reverse);
        let to = sample_turn(&choices, rng);
        next.segment = Segment {
            from: next.segment.to,
            to,
        };
        next.offset = 0.0;
        if remaining <= 0.0 {
            return next;
        }
    }
}

/// All unordered pairs `(a, b)`, `a < b`, within `range` of each other,
/// sorted lexicographically. Uses a uniform bucket grid with cells slightly
/// larger than `range`, so only the 3x3 neighborhood of a cell is scanned.
pub fn contacts_among(positions: &[(f64, f64)], range: f64) -> Vec<(usize, usize)> {
    debug_assert!(range > 0.0);
    let cell = range * (1.0 + 1e-9);
    let key = |p: (f64, f64)| ((p.0 / cell).floor() as i64, (p.1 / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in positions.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(i);
    }
    let r2 = range * range;
    let mut out = Vec::new();
    for (i, &p) in positions.iter().enumerate() {
        let (cx, cy) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = buckets.get(&(cx + dx, cy + dy)) {
                    for &j in bucket {
                        if j > i {
                            let q = positions[j];
                            let d2 = (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2);
                            if d2 <= r2 {
                                out.push((i, j));
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

pub fn detect_contacts(states: &[VehicleState], map: &GridMap, range: f64) -> Vec<(usize, usize)> {
    let positions: Vec<_> = states.iter().map(|v| v.position(map)).collect();
    contacts_among(&positions, range)
}

/// A set of vehicles on one map, each with a private random stream.
#[derive(Debug, Clone)]
pub struct Fleet {
    map: GridMap,
    vehicles: Vec<VehicleState>,
    rngs: Vec<StreamRng>,
    allow_reverse: bool,
}

impl Fleet {
    pub fn new(
        map: GridMap,
        n: usize,
        speed: f64,
        area_spec: Option<AreaSpec>,
        seed: u64,
        allow_reverse: bool,
    ) -> Result<Fleet> {
        let vehicles = init_vehicles(&map, n, speed, area_spec, seed)?;
        let rngs = (0..n)
            .map(|id| rng::stream(seed, Domain::Vehicle, &[id as u64]))
            .collect();
        Ok(Fleet {
            map,
            vehicles,
            rngs,
            allow_reverse,
        })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn advance(&mut self, dt: f64) {
        for (v, rng) in self.vehicles.iter_mut().zip(self.rngs.iter_mut()) {
            *v = step(v, &self.map, dt, self.allow_reverse, rng);
        }
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.vehicles.iter().map(|v| v.position(&self.map)).collect()
    }

    pub fn contacts(&self, range: f64) -> Vec<(usize, usize)> {
        contacts_among(&self.positions(), range)
    }
}
