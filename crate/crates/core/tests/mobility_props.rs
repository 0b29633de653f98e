use cached_dfl::mobility::{
    area_of, build_grid, contacts_among, detect_contacts, init_vehicles, step, AreaSpec, Fleet, GridMap, Segment,
    VehicleState,
};
use cached_dfl::rng::{stream, Domain};
use proptest::prelude::*;

/// Drives a vehicle through the center of a 3x3 grid `crossings` times and
/// returns how often each exit (E, N, W, S of the center) was taken, having
/// arrived from the west.
fn exit_frequencies(crossings: usize, allow_reverse: bool) -> [f64; 4] {
    let map = build_grid(3, 3, 100.0).unwrap();
    let center = map.node(1, 1);
    let west = map.node(1, 0);
    let exits = [map.node(1, 2), map.node(2, 1), map.node(1, 0), map.node(0, 1)];
    let mut rng = stream(77, Domain::Vehicle, &[]);
    let mut counts = [0usize; 4];
    for _ in 0..crossings {
        let v = VehicleState {
            id: 0,
            segment: Segment { from: west, to: center },
            offset: 95.0,
            speed: 10.0,
            home_area: None,
            free_roam: true,
        };
        let next = step(&v, &map, 1.0, allow_reverse, &mut rng);
        assert_eq!(next.segment.from, center);
        assert!((next.offset - 5.0).abs() < 1e-12, "residual distance carries over");
        let k = exits.iter().position(|&e| e == next.segment.to).unwrap();
        counts[k] += 1;
    }
    counts.map(|c| c as f64 / crossings as f64)
}

#[test]
fn turn_law_with_reverse_road() {
    let f = exit_frequencies(120_000, true);
    assert!((f[0] - 0.5).abs() < 0.01, "straight {}", f[0]);
    for turn in &f[1..] {
        assert!((turn - 1.0 / 6.0).abs() < 0.01, "turn {turn}");
    }
}

#[test]
fn turn_law_without_reverse_road() {
    let f = exit_frequencies(120_000, false);
    assert!((f[0] - 0.5).abs() < 0.01);
    assert!((f[1] - 0.25).abs() < 0.01);
    assert_eq!(f[2], 0.0);
    assert!((f[3] - 0.25).abs() < 0.01);
}

fn brute_force(positions: &[(f64, f64)], range: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let (dx, dy) = (positions[i].0 - positions[j].0, positions[i].1 - positions[j].1);
            if dx * dx + dy * dy <= range * range {
                out.push((i, j));
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn contacts_equal_brute_force(
        pts in prop::collection::vec((0.0f64..600.0, 0.0f64..600.0), 0..60),
        range in 1.0f64..200.0,
    ) {
        prop_assert_eq!(contacts_among(&pts, range), brute_force(&pts, range));
    }

    #[test]
    fn contacts_on_lattice_points(
        pts in prop::collection::vec((0u32..8, 0u32..8), 0..40),
    ) {
        // many pairs at exactly the range distance
        let pts: Vec<(f64, f64)> = pts.into_iter().map(|(x, y)| (x as f64 * 50.0, y as f64 * 50.0)).collect();
        prop_assert_eq!(contacts_among(&pts, 100.0), brute_force(&pts, 100.0));
    }

    #[test]
    fn positions_stay_legal(seed in 0u64..1_000, speed in 1.0f64..60.0, reverse in any::<bool>()) {
        let map = build_grid(4, 5, 150.0).unwrap();
        let mut fleet = Fleet::new(map, 12, speed, None, seed, reverse).unwrap();
        for _ in 0..200 {
            fleet.advance(1.0);
            for v in fleet.vehicles() {
                prop_assert!(v.offset >= 0.0 && v.offset <= fleet.map().segment_length(v.segment));
                prop_assert!(fleet.map().neighbors(v.segment.from).contains(&v.segment.to));
            }
        }
    }
}

#[test]
fn confined_vehicles_never_leave_their_band() {
    let map = build_grid(10, 10, 200.0).unwrap().with_areas(3).unwrap();
    let spec = AreaSpec {
        num_areas: 3,
        restricted_per_area: 30,
    };
    let mut fleet = Fleet::new(map.clone(), 99, 13.89, Some(spec), 7, false).unwrap();
    let mut left_band = 0;
    let mut free_bands = vec![std::collections::BTreeSet::new(); 9];
    for _ in 0..3_000 {
        fleet.advance(1.0);
        for v in &fleet.vehicles()[..90] {
            if area_of(v, &map, 3) != v.home_area.unwrap() {
                left_band += 1;
            }
        }
        for (seen, v) in free_bands.iter_mut().zip(&fleet.vehicles()[90..]) {
            seen.insert(area_of(v, &map, 3));
        }
    }
    assert_eq!(left_band, 0);
    assert!(free_bands.iter().any(|s| s.len() > 1), "free vehicles cross bands");
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let run = |seed| {
        let map = build_grid(10, 10, 200.0).unwrap();
        let mut fleet = Fleet::new(map, 50, 13.89, None, seed, false).unwrap();
        let mut log = Vec::new();
        for _ in 0..300 {
            fleet.advance(1.0);
            log.push((fleet.positions(), fleet.contacts(100.0)));
        }
        log
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3), run(4));
}

#[test]
fn detect_contacts_uses_map_positions() {
    let map: GridMap = build_grid(10, 10, 200.0).unwrap();
    let states = init_vehicles(&map, 100, 13.89, None, 7).unwrap();
    let positions: Vec<_> = states.iter().map(|v| v.position(&map)).collect();
    assert_eq!(detect_contacts(&states, &map, 100.0), brute_force(&positions, 100.0));
}
