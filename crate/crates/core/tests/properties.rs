mod common;

use common::{erlang_loss_law, random_system};
use hyperq::birthdeath::{stationary_finite_buffer, stationary_zero_queue};
use hyperq::model::{binomial, down_neighbors, layer_states, up_neighbors, StateIndex};
use hyperq::solver::InnerMode;
use hyperq::{solve, SolverConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layers_partition_the_cube(n_units in 1usize..=12) {
        let mut seen = vec![false; 1 << n_units];
        for n in 0..=n_units {
            let layer = layer_states(n_units, n).unwrap();
            prop_assert_eq!(layer.len() as u64, binomial(n_units, n));
            for (rank, m) in layer.states.iter().enumerate() {
                prop_assert_eq!(m.weight(), n);
                prop_assert_eq!(m.layer_rank(), rank);
                prop_assert!(!seen[m.as_usize()]);
                seen[m.as_usize()] = true;
            }
            prop_assert!(layer.states.windows(2).all(|w| w[0] < w[1]));
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn neighbors_toggle_one_unit(n_units in 1usize..=16, raw in any::<u32>()) {
        let m = StateIndex(raw & ((1u32 << n_units) - 1));
        let up = up_neighbors(m, n_units);
        let down = down_neighbors(m);
        prop_assert_eq!(up.len(), n_units - m.weight());
        prop_assert_eq!(down.len(), m.weight());
        for &(s, u) in &up {
            prop_assert_eq!(s.weight(), m.weight() + 1);
            prop_assert!(s.is_busy(u) && !m.is_busy(u));
            prop_assert!(down_neighbors(s).contains(&(m, u)));
        }
        for &(s, u) in &down {
            prop_assert_eq!(s.weight() + 1, m.weight());
            prop_assert!(up_neighbors(s, n_units).contains(&(m, u)));
        }
    }

    #[test]
    fn bit_encoding_round_trips(n_units in 1usize..=20, raw in any::<u32>()) {
        let m = StateIndex(raw & ((1u32 << n_units) - 1));
        let bits = m.to_bits(n_units);
        prop_assert_eq!(StateIndex::from_bits(&bits), m);
        for u in 1..=n_units {
            prop_assert_eq!(bits[n_units - u], m.is_busy(u));
        }
    }

    #[test]
    fn birth_death_law_balances(
        rates in prop::collection::vec((0.01f64..10.0, 0.01f64..10.0), 1..12),
        capacity in 0usize..4,
    ) {
        let n = rates.len();
        let mut lambda: Vec<f64> = rates.iter().map(|r| r.0).collect();
        lambda.push(0.5);
        let mut mu = vec![0.0];
        mu.extend(rates.iter().map(|r| r.1));
        let p = stationary_zero_queue(&lambda, &mu).unwrap();
        prop_assert_eq!(p.len(), n + 1);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 1..=n {
            let flow = p[k - 1] * lambda[k - 1];
            prop_assert!((flow - p[k] * mu[k]).abs() <= 1e-12 * flow.max(1e-300));
        }
        let prof = stationary_finite_buffer(&lambda, &mu, capacity).unwrap();
        prop_assert_eq!(prof.p_n.len(), n + 1 + capacity);
        prop_assert!((prof.p_n.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(prof.detailed_balance_residual() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solution_is_a_distribution(seed in any::<u64>(), n in 1usize..=8, j in 1usize..=4, c in 0usize..3) {
        let sys = random_system(seed, n, j, c, false);
        let mut cfg = SolverConfig::with_tolerance(1e-10);
        let iterative = solve(&sys, &cfg).unwrap();
        // iterative inner passes stop short of the exact fixed point
        prop_assert!((iterative.distribution.total() - 1.0).abs() < 1e-6);
        cfg.inner_mode = InnerMode::ClosedForm;
        let s = solve(&sys, &cfg).unwrap();
        prop_assert!(s.trace.converged);
        let d = &s.distribution;
        prop_assert!(d.full_vector().iter().all(|&p| p >= 0.0));
        prop_assert!((d.total() - 1.0).abs() < 1e-12);
        for t in &s.trace.normalization {
            prop_assert!((t - 1.0).abs() < 1e-12);
        }
        prop_assert!((d.layer_marginals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for layer in &s.conditionals.layers {
            prop_assert!((layer.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
        prop_assert!(s.profile.detailed_balance_residual() < 1e-12);
    }

    #[test]
    fn homogeneous_marginals_follow_erlang_loss(seed in any::<u64>(), n in 1usize..=8, j in 1usize..=5) {
        let sys = random_system(seed, n, j, 0, true);
        let s = solve(&sys, &SolverConfig::with_tolerance(1e-12)).unwrap();
        let law = erlang_loss_law(sys.arrival_rate() / sys.service_rates()[0], n);
        for (a, b) in s.distribution.layer_marginals.iter().zip(&law) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
