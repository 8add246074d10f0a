#![allow(dead_code)]

use hyperq::{validate, RawSystem, ServiceSystem};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random instance with arbitrary preference permutations.
pub fn random_system(
    seed: u64,
    n: usize,
    j: usize,
    buffer: usize,
    homogeneous: bool,
) -> ServiceSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..j).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let nu: Vec<f64> = (0..n)
        .map(|_| {
            if homogeneous {
                1.0
            } else {
                rng.random_range(0.5..1.5)
            }
        })
        .collect();
    let preferences = (0..j)
        .map(|_| {
            let mut p: Vec<usize> = (1..=n).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let rho = rng.random_range(0.1..0.9);
    let arrival_rate = rho * nu.iter().sum::<f64>();
    validate(RawSystem {
        n_units: n,
        n_nodes: j,
        arrival_rate,
        demand_fractions: weights.iter().map(|w| w / total).collect(),
        service_rates: nu,
        preferences,
        buffer_capacity: buffer,
        travel_times: None,
        metadata: None,
    })
    .expect("valid random instance")
}

/// Single node, every unit preferred in index order.
pub fn simple(n: usize, lambda: f64, nu: Vec<f64>, buffer: usize) -> ServiceSystem {
    validate(RawSystem {
        n_units: n,
        n_nodes: 1,
        arrival_rate: lambda,
        demand_fractions: vec![1.0],
        service_rates: nu,
        preferences: vec![(1..=n).collect()],
        buffer_capacity: buffer,
        travel_times: None,
        metadata: None,
    })
    .expect("valid instance")
}

/// Erlang loss law `p(n) ∝ a^n / n!` for `n = 0..=servers`.
pub fn erlang_loss_law(a: f64, servers: usize) -> Vec<f64> {
    let mut terms = vec![1.0];
    for n in 1..=servers {
        let prev = terms[n - 1];
        terms.push(prev * a / n as f64);
    }
    let z: f64 = terms.iter().sum();
    terms.iter().map(|t| t / z).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
