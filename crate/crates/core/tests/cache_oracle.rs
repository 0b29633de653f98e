mod common;

use cached_dfl::cache::ModelCache;
use cached_dfl::rng::{stream, Domain};
use common::{oracle_gb, oracle_lru, random_sequence, token, view};

#[test]
fn oracle_reproduces_worked_examples() {
    // {A@3} + B@7 with peer {A@5}
    assert_eq!(oracle_lru(&vec![(1, 3)], 0, (2, 7), &vec![(1, 5)], 7, 10, 10), vec![(1, 5), (2, 7)]);
    // capacity 2 drops the oldest
    assert_eq!(oracle_lru(&vec![(3, 4)], 0, (2, 7), &vec![(1, 5)], 7, 10, 2), vec![(1, 5), (2, 7)]);
    let group_of = [0, 0, 0, 1, 2];
    assert_eq!(
        oracle_gb(&vec![(1, 9)], 0, (2, 8), &vec![(3, 7)], 9, 20, &group_of, &[1, 1, 1]),
        vec![(1, 9), (3, 7)]
    );
}

#[test]
fn lru_matches_brute_force() {
    let mut rng = stream(101, Domain::Partition, &[]);
    for _ in 0..2_000 {
        let r = random_sequence(&mut rng, false);
        assert_eq!((r.mismatches, r.staleness_violations), (0, 0));
    }
}

#[test]
fn gb_matches_brute_force() {
    let mut rng = stream(102, Domain::Partition, &[]);
    for _ in 0..2_000 {
        let r = random_sequence(&mut rng, true);
        assert_eq!((r.mismatches, r.staleness_violations), (0, 0));
    }
}

#[test]
fn exchange_is_order_symmetric() {
    use cached_dfl::protocol::{exchange_caches, UpdateRule};
    let groups = [0; 6];
    let mut a = ModelCache::<()>::new(0, 3, 4).unwrap();
    let mut b = ModelCache::<()>::new(1, 3, 4).unwrap();
    let mut c = ModelCache::<()>::new(2, 3, 4).unwrap();
    exchange_caches(&mut a, token(0, 1, &groups), &mut c, token(2, 1, &groups), 1, &UpdateRule::Lru).unwrap();
    exchange_caches(&mut b, token(1, 2, &groups), &mut c, token(2, 2, &groups), 2, &UpdateRule::Lru).unwrap();
    let (mut a1, mut b1) = (a.clone(), b.clone());
    let (mut a2, mut b2) = (a.clone(), b.clone());
    exchange_caches(&mut a1, token(0, 3, &groups), &mut b1, token(1, 3, &groups), 3, &UpdateRule::Lru).unwrap();
    exchange_caches(&mut b2, token(1, 3, &groups), &mut a2, token(0, 3, &groups), 3, &UpdateRule::Lru).unwrap();
    assert_eq!(view(&a1), view(&a2));
    assert_eq!(view(&b1), view(&b2));
}
