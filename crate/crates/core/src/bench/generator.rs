use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate, RawSystem, ServiceSystem};

/// Mean service time of 34.15 minutes, as a rate per minute.
pub const DEFAULT_BASE_RATE: f64 = 1.0 / 34.15;
/// Calls per minute.
pub const DEFAULT_ARRIVAL_RATE: f64 = 3.53 / 60.0;
/// Travel time across the unit square, in minutes.
const SQUARE_CROSSING_MINUTES: f64 = 20.0;

/// Random instances with a prescribed system utilization.
///
/// Demand fractions are Dirichlet(1, ..., 1); units and nodes are placed
/// uniformly in the unit square and travel times are Euclidean distances;
/// each node prefers units by ascending travel time. Service rates are
/// `base_rate * (1 + u_i)` with `u_i ~ U[-h, h]`, then rescaled so that
/// `λ / Σ ν_i = rho` with `λ` held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceGenerator {
    pub n_units: usize,
    pub n_nodes: usize,
    pub rho: f64,
    #[serde(default = "default_h")]
    pub heterogeneity: f64,
    #[serde(default = "default_base")]
    pub base_rate: f64,
    #[serde(default = "default_arrival")]
    pub arrival_rate: f64,
    #[serde(default)]
    pub buffer_capacity: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_h() -> f64 {
    0.2
}
fn default_base() -> f64 {
    DEFAULT_BASE_RATE
}
fn default_arrival() -> f64 {
    DEFAULT_ARRIVAL_RATE
}

impl InstanceGenerator {
    pub fn new(n_units: usize, n_nodes: usize, rho: f64, seed: u64) -> Self {
        InstanceGenerator {
            n_units,
            n_nodes,
            rho,
            heterogeneity: default_h(),
            base_rate: DEFAULT_BASE_RATE,
            arrival_rate: DEFAULT_ARRIVAL_RATE,
            buffer_capacity: 0,
            seed,
        }
    }

    pub fn with_heterogeneity(mut self, h: f64) -> Self {
        self.heterogeneity = h;
        self
    }

    pub fn with_buffer(mut self, c: usize) -> Self {
        self.buffer_capacity = c;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::NonPositiveRate {
                what: "target utilization".into(),
                value: self.rho,
            });
        }
        if !(0.0..1.0).contains(&self.heterogeneity) {
            return Err(Error::InvalidSpec(format!(
                "heterogeneity must lie in [0, 1), got {}",
                self.heterogeneity
            )));
        }
        Ok(())
    }

    pub fn raw(&self) -> Result<RawSystem> {
        self.check()?;
        let (n, j) = (self.n_units, self.n_nodes);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let weights: Vec<f64> = (0..j).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        let demand_fractions: Vec<f64> = weights.iter().map(|w| w / total).collect();

        let mut point = || (rng.random::<f64>(), rng.random::<f64>());
        let units: Vec<_> = (0..n).map(|_| point()).collect();
        let nodes: Vec<_> = (0..j).map(|_| point()).collect();
        let travel_times: Vec<Vec<f64>> = units
            .iter()
            .map(|u| {
                nodes
                    .iter()
                    .map(|v| {
                        SQUARE_CROSSING_MINUTES * ((u.0 - v.0).powi(2) + (u.1 - v.1).powi(2)).sqrt()
                    })
                    .collect()
            })
            .collect();
        let preferences = (0..j)
            .map(|node| {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| {
                    travel_times[a][node]
                        .total_cmp(&travel_times[b][node])
                        .then(a.cmp(&b))
                });
                order.into_iter().map(|u| u + 1).collect()
            })
            .collect();

        let h = self.heterogeneity;
        let nu: Vec<f64> = (0..n)
            .map(|_| {
                let u = if h > 0.0 {
                    rng.random_range(-h..=h)
                } else {
                    0.0
                };
                self.base_rate * (1.0 + u)
            })
            .collect();
        let scale = self.arrival_rate / (self.rho * nu.iter().sum::<f64>());
        let service_rates = nu.iter().map(|v| v * scale).collect();

        Ok(RawSystem {
            n_units: n,
            n_nodes: j,
            arrival_rate: self.arrival_rate,
            demand_fractions,
            service_rates,
            preferences,
            buffer_capacity: self.buffer_capacity,
            travel_times: Some(travel_times),
            metadata: Some(serde_json::json!({
                "generator": {
                    "rho": self.rho,
                    "heterogeneity": self.heterogeneity,
                    "base_rate": self.base_rate,
                    "seed": self.seed,
                }
            })),
        })
    }

    pub fn generate(&self) -> Result<ServiceSystem> {
        validate(self.raw()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hits_target_utilization() {
        for seed in 0..20 {
            for rho in [0.1, 0.5, 0.9] {
                let sys = InstanceGenerator::new(7, 5, rho, seed).generate().unwrap();
                assert!((sys.utilization() - rho).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_and_homogeneous_without_spread() {
        let g = InstanceGenerator::new(5, 4, 0.5, 42);
        assert_eq!(g.raw().unwrap(), g.raw().unwrap());
        let sys = g.with_heterogeneity(0.0).generate().unwrap();
        assert!(sys.is_homogeneous());
    }

    #[test]
    fn preferences_follow_travel_time() {
        let sys = InstanceGenerator::new(6, 3, 0.4, 7).generate().unwrap();
        let tau = sys.travel_times().unwrap();
        for (node, row) in sys.preferences().iter().enumerate() {
            for w in row.windows(2) {
                assert!(tau[w[0] - 1][node] <= tau[w[1] - 1][node]);
            }
        }
    }
}
