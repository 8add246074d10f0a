mod common;

use common::random_system;
use hyperq::model::{layer_states, StateIndex};
use hyperq::transitions::cache::{read_cache, write_cache};
use hyperq::transitions::{generate_for_states, generate_full, upward_rate, Triple};
use hyperq::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn key(t: &Triple) -> (u32, u32, u64) {
    (t.from.0, t.to.0, t.rate.to_bits())
}

fn sorted(ts: &[Triple]) -> Vec<(u32, u32, u64)> {
    let mut v: Vec<_> = ts.iter().map(key).collect();
    v.sort_unstable();
    v
}

#[test]
fn batches_reproduce_the_full_set() {
    let sys = random_system(3, 7, 4, 0, false);
    let full = generate_full(&sys).unwrap();
    let all: Vec<StateIndex> = (0..1u32 << 7).map(StateIndex).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let mut states = all.clone();
        states.shuffle(&mut rng);
        let (mut up, mut down) = (Vec::new(), Vec::new());
        let mut rest = states.as_slice();
        while !rest.is_empty() {
            let k = rng.random_range(1..=rest.len());
            let b = generate_for_states(&sys, &rest[..k]);
            up.extend(b.upward);
            down.extend(b.downward);
            rest = &rest[k..];
        }
        assert_eq!(sorted(&up), sorted(&full.upward));
        assert_eq!(sorted(&down), sorted(&full.downward));
    }
}

#[test]
fn full_set_is_sorted_by_destination() {
    let sys = random_system(4, 6, 3, 0, false);
    let full = generate_full(&sys).unwrap();
    for ts in [&full.upward, &full.downward] {
        for w in ts.windows(2) {
            let a = (w[0].to.weight(), w[0].to.0, w[0].from.0);
            let b = (w[1].to.weight(), w[1].to.0, w[1].from.0);
            assert!(a < b);
        }
    }
    // every edge of the hypercube appears once downward
    assert_eq!(full.downward.len(), 6 << 5);
}

#[test]
fn layer_batch_matches_layer_slice() {
    let sys = random_system(6, 8, 5, 0, false);
    let full = generate_full(&sys).unwrap();
    let layer = layer_states(8, 3).unwrap().states;
    let batch = generate_for_states(&sys, &layer);
    let expected: Vec<_> = full
        .upward
        .iter()
        .filter(|t| t.to.weight() == 3)
        .copied()
        .collect();
    assert_eq!(batch.upward, expected);
    let expected: Vec<_> = full
        .downward
        .iter()
        .filter(|t| t.to.weight() == 3)
        .copied()
        .collect();
    assert_eq!(batch.downward, expected);
}

#[test]
fn upward_rates_sum_to_arrival_rate() {
    let sys = random_system(2, 6, 4, 0, false);
    for v in 0..(1u32 << 6) - 1 {
        let l = StateIndex(v);
        let total: f64 = (1..=6)
            .filter(|&u| !l.is_busy(u))
            .map(|u| upward_rate(&sys, l, l.toggled(u)).unwrap())
            .sum();
        assert!((total - sys.arrival_rate()).abs() < 1e-12);
    }
    assert!(matches!(
        upward_rate(&sys, StateIndex(0b11), StateIndex(0b01)),
        Err(Error::NotUpwardNeighbor { .. })
    ));
}

#[test]
fn cache_round_trip_and_mismatch() {
    let sys = random_system(5, 5, 3, 0, false);
    let full = generate_full(&sys).unwrap();
    let mut file = tempfile::tempfile().unwrap();
    write_cache(&mut file, &sys, &full).unwrap();
    use std::io::{Seek, SeekFrom};
    file.seek(SeekFrom::Start(0)).unwrap();
    assert_eq!(read_cache(&file, &sys).unwrap(), full);

    let mut buf = Vec::new();
    write_cache(&mut buf, &sys, &full).unwrap();
    let other = random_system(6, 5, 3, 0, false);
    assert!(matches!(
        read_cache(buf.as_slice(), &other),
        Err(Error::Cache(_))
    ));
    buf[0] = b'X';
    assert!(matches!(
        read_cache(buf.as_slice(), &sys),
        Err(Error::Cache(_))
    ));
    assert!(read_cache(&buf[..10], &sys).is_err());
}
