//! Layer-aggregated birth-death chain.
//!
//! Grouping hypercube states by their number of busy units gives a
//! birth-death process with rates `λ(n) = Σ p_n(B_m) λ_m` and
//! `μ(n) = Σ p_n(B_m) μ_m`. With a waiting room of `C` calls, the chain
//! continues past `N` with arrival rate `λ` and service rate `μ(N) = Σ ν_i`.

use crate::error::{Error, Result};
use crate::model::{layer_states, ServiceSystem};
use crate::transitions::total_rates;

/// Above this many units the products are accumulated in log space.
const LOG_SPACE_UNITS: usize = 20;

/// Rates and stationary law of the layer chain, indexed by the number of
/// calls in system `n = 0..=N+C`.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthDeathProfile {
    /// `λ(n)`; zero at the top state.
    pub lambda_n: Vec<f64>,
    /// `μ(n)`; `mu_n[0]` is unused and zero.
    pub mu_n: Vec<f64>,
    /// Stationary probabilities `p(n)`.
    pub p_n: Vec<f64>,
    /// `G(n) = p(n) / p(0)`.
    pub g_n: Vec<f64>,
    /// Waiting capacity `C`.
    pub buffer: usize,
}

impl BirthDeathProfile {
    pub fn n_units(&self) -> usize {
        self.lambda_n.len() - 1 - self.buffer
    }

    /// Probability that an arrival finds the system full.
    pub fn loss_probability(&self) -> f64 {
        *self.p_n.last().expect("non-empty profile")
    }

    /// Largest `|p(n-1) λ(n-1) - p(n) μ(n)|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        (1..self.p_n.len())
            .map(|n| (self.p_n[n - 1] * self.lambda_n[n - 1] - self.p_n[n] * self.mu_n[n]).abs())
            .fold(0.0, f64::max)
    }
}

/// Layer rates from conditional probabilities, `n = 0..=N`.
///
/// `cond[n]` lists `p_n(B_m)` over layer `n` in ascending state order.
/// `λ(N)` is zero for a loss system and `λ` when calls can wait.
pub fn layer_rates(cond: &[Vec<f64>], sys: &ServiceSystem) -> (Vec<f64>, Vec<f64>) {
    let n_units = sys.n_units();
    let mut lambda_n = vec![0.0; n_units + 1];
    let mut mu_n = vec![0.0; n_units + 1];
    for n in 0..=n_units {
        let layer = layer_states(n_units, n).expect("validated size");
        let (mut l, mut m) = (0.0, 0.0);
        for (&s, &p) in layer.states.iter().zip(&cond[n]) {
            let (lm, mm) = total_rates(sys, s);
            l += p * lm;
            m += p * mm;
        }
        lambda_n[n] = l;
        mu_n[n] = m;
    }
    if sys.buffer_capacity() > 0 {
        lambda_n[n_units] = sys.arrival_rate();
    }
    (lambda_n, mu_n)
}

fn check_rates(lambda: &[f64], mu: &[f64]) -> Result<usize> {
    if lambda.len() != mu.len() || lambda.is_empty() {
        return Err(Error::DegenerateRates(format!(
            "rate vectors have lengths {} and {}",
            lambda.len(),
            mu.len()
        )));
    }
    let n = lambda.len() - 1;
    if let Some(s) = (1..=n).find(|&s| !(mu[s] > 0.0 && mu[s].is_finite())) {
        return Err(Error::DegenerateRates(format!("μ({s}) = {}", mu[s])));
    }
    if let Some(s) = (0..n).find(|&s| !(lambda[s] >= 0.0 && lambda[s].is_finite())) {
        return Err(Error::DegenerateRates(format!("λ({s}) = {}", lambda[s])));
    }
    Ok(n)
}

/// `G(n) = Π_{s=1..n} λ(s-1)/μ(s)` with `G(0) = 1`, plus the normalized law.
///
/// Long chains are accumulated as log-sums and rescaled by their maximum
/// before exponentiating.
fn products_and_law(lambda: &[f64], mu: &[f64], log_space: bool) -> (Vec<f64>, Vec<f64>) {
    let len = lambda.len();
    if !log_space {
        let mut g = Vec::with_capacity(len);
        g.push(1.0);
        for s in 1..len {
            let prev = g[s - 1];
            g.push(prev * lambda[s - 1] / mu[s]);
        }
        let total: f64 = g.iter().sum();
        let p = g.iter().map(|x| x / total).collect();
        (g, p)
    } else {
        let mut log_g = Vec::with_capacity(len);
        log_g.push(0.0f64);
        for s in 1..len {
            let prev = log_g[s - 1];
            log_g.push(prev + lambda[s - 1].ln() - mu[s].ln());
        }
        let max = log_g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = log_g.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = scaled.iter().sum();
        let p = scaled.iter().map(|x| x / total).collect();
        let g = log_g.iter().map(|x| x.exp()).collect();
        (g, p)
    }
}

/// Stationary law of the zero-queue layer chain.
///
/// `lambda[n]` is `λ(n)` for `n = 0..=N` (the last entry is ignored) and
/// `mu[n]` is `μ(n)` (`mu[0]` ignored).
pub fn stationary_zero_queue(lambda: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    let n = check_rates(lambda, mu)?;
    Ok(products_and_law(lambda, mu, n > LOG_SPACE_UNITS).1)
}

/// Stationary law with a waiting room of `capacity` calls.
///
/// The tail uses arrival rate `λ(N)` (pass the system arrival rate there) and
/// service rate `μ(N)`, so that
/// `G(n) = λ(0)…λ(n-1) / (μ(1)…μ(N-1) μ(N)^{n-N+1})` for `n > N`.
pub fn stationary_finite_buffer(
    lambda: &[f64],
    mu: &[f64],
    capacity: usize,
) -> Result<BirthDeathProfile> {
    let n = check_rates(lambda, mu)?;
    let tail_arrival = lambda[n];
    let tail_service = mu[n];
    let mut lambda_n = lambda.to_vec();
    let mut mu_n = mu.to_vec();
    mu_n[0] = 0.0;
    for _ in 0..capacity {
        lambda_n.push(tail_arrival);
        mu_n.push(tail_service);
    }
    *lambda_n.last_mut().expect("non-empty") = 0.0;
    let (g_n, p_n) = products_and_law(&lambda_n, &mu_n, n > LOG_SPACE_UNITS);
    Ok(BirthDeathProfile {
        lambda_n,
        mu_n,
        p_n,
        g_n,
        buffer: capacity,
    })
}

/// Head of the stationary law for an unlimited waiting room.
#[derive(Debug, Clone, PartialEq)]
pub struct InfiniteProfile {
    /// `p(n)` for `n = 0..=N`.
    pub p_head: Vec<f64>,
    /// `p(n+1)/p(n)` for every `n >= N`.
    pub tail_ratio: f64,
}

impl InfiniteProfile {
    pub fn p0(&self) -> f64 {
        self.p_head[0]
    }

    /// `p(n)` for any `n`.
    pub fn p(&self, n: usize) -> f64 {
        let top = self.p_head.len() - 1;
        if n <= top {
            self.p_head[n]
        } else {
            self.p_head[top] * self.tail_ratio.powi((n - top) as i32)
        }
    }

    /// Probability that at least one call waits.
    pub fn waiting_probability(&self) -> f64 {
        let top = *self.p_head.last().expect("non-empty");
        top * self.tail_ratio / (1.0 - self.tail_ratio)
    }
}

/// Unlimited waiting room: geometric tail with ratio `λ(N)/μ(N)`, stable only
/// when that ratio is below one.
pub fn stationary_infinite(lambda: &[f64], mu: &[f64]) -> Result<InfiniteProfile> {
    let n = check_rates(lambda, mu)?;
    let arrival = lambda[n];
    let ratio = arrival / mu[n];
    if !(ratio < 1.0) {
        return Err(Error::UnstableSystem {
            arrival,
            service: mu[n],
        });
    }
    let (g, _) = products_and_law(lambda, mu, false);
    let head: f64 = g[..n].iter().sum();
    let p0 = 1.0 / (head + g[n] / (1.0 - ratio));
    let p_head = g.iter().map(|x| x * p0).collect();
    Ok(InfiniteProfile {
        p_head,
        tail_ratio: ratio,
    })
}
