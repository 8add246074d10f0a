mod common;

use common::{random_system, simple};
use hyperq::metrics::{mpre, utilization};
use hyperq::simulator::{simulate, ServiceDistribution, SimConfig};
use hyperq::{solve, validate, Error, SolverConfig};

fn cfg(arrivals: u64, replications: usize, seed: u64) -> SimConfig {
    SimConfig {
        arrivals,
        replications,
        seed,
        ..Default::default()
    }
}

#[test]
fn single_unit_loss_system() {
    let sys = simple(1, 1.0, vec![1.0], 0);
    let est = simulate(&sys, &cfg(1_000_000, 1, 3)).unwrap();
    let busy = est.replications[0].utilization[0];
    // binomial-style bound on a time average with correlated samples
    let sigma = (0.25f64 / 1e6).sqrt();
    assert!((busy - 0.5).abs() < 3.0 * sigma * 4.0, "{busy}");
    assert!((est.lost_fraction.mean - 0.5).abs() < 0.01);
}

#[test]
fn two_unit_occupancy_within_interval() {
    let sys = simple(2, 1.0, vec![1.0, 1.0], 0);
    let est = simulate(&sys, &cfg(100_000, 20, 11)).unwrap();
    let exact = [0.4, 0.3, 0.1, 0.2];
    for (iv, p) in est.state_probabilities.iter().zip(exact) {
        let hw = iv.half_width.unwrap();
        assert!((iv.mean - p).abs() <= 2.0 * hw, "{iv:?} vs {p}");
    }
    let rho = est.mean_utilization();
    assert!((rho[0] - 0.5).abs() < 0.01 && (rho[1] - 0.3).abs() < 0.01);
}

#[test]
fn finite_buffer_matches_solver() {
    let sys = random_system(21, 4, 3, 2, false);
    let exact = solve(&sys, &SolverConfig::default()).unwrap().distribution;
    let est = simulate(&sys, &cfg(200_000, 10, 5)).unwrap();
    let sim = est.mean_state_probabilities();
    assert_eq!(sim.len(), 16 + 2);
    let total: f64 = sim.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
    for (p, s) in exact.full_vector().iter().zip(&sim) {
        assert!((p - s).abs() < 0.01, "{p} vs {s}");
    }
}

#[test]
fn utilization_agrees_with_dispatch_counts() {
    let sys = random_system(2, 5, 4, 0, false);
    let est = simulate(&sys, &cfg(100_000, 8, 1)).unwrap();
    for i in 0..5 {
        let nu = sys.service_rates()[i];
        let counts: Vec<f64> = est
            .replications
            .iter()
            .map(|r| r.dispatches[i] as f64 / nu / r.horizon)
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let iv = est.utilization[i];
        let tol = 3.0 * iv.half_width.unwrap() + 1e-3;
        assert!((mean - iv.mean).abs() < tol, "unit {i}: {mean} vs {iv:?}");
    }
}

#[test]
fn heterogeneous_utilization_close_to_solver() {
    let sys = random_system(9, 6, 4, 0, false);
    let s = solve(&sys, &SolverConfig::default()).unwrap();
    let exact = utilization(&s.distribution, &sys);
    let est = simulate(&sys, &cfg(200_000, 10, 2)).unwrap();
    assert!(mpre(&exact, &est.mean_utilization()).unwrap() < 3.0);
}

#[test]
fn non_exponential_needs_zero_buffer() {
    let sys = random_system(1, 3, 2, 1, false);
    let mut c = cfg(1000, 2, 0);
    c.distribution = ServiceDistribution::LogNormal;
    assert!(matches!(simulate(&sys, &c), Err(Error::InvalidSpec(_))));
}

#[test]
fn response_time_needs_travel_times() {
    let sys = simple(2, 1.0, vec![1.0, 1.0], 0);
    let mut c = cfg(1000, 2, 0);
    c.response_time = true;
    assert!(matches!(simulate(&sys, &c), Err(Error::MissingTravelTimes)));

    let mut raw = sys.raw().clone();
    raw.travel_times = Some(vec![vec![1.0], vec![2.0]]);
    let sys = validate(raw).unwrap();
    let mut c = cfg(200_000, 4, 0);
    c.response_time = true;
    let est = simulate(&sys, &c).unwrap();
    let mrt = est.mean_response_time.unwrap().mean;
    assert!((mrt - 1.375).abs() < 0.02, "{mrt}");
}

#[test]
fn same_seed_same_estimate() {
    let sys = random_system(4, 4, 2, 0, false);
    let mut c = cfg(20_000, 3, 42);
    c.distribution = ServiceDistribution::Gamma { shape: 0.5 };
    let a = simulate(&sys, &c).unwrap();
    let b = simulate(&sys, &c).unwrap();
    assert_eq!(a, b);
    c.seed = 43;
    assert_ne!(a, simulate(&sys, &c).unwrap());
}
