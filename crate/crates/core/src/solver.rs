//! Sequential conditional-probability update.
//!
//! States are grouped into layers by the number of busy units. Each outer
//! iteration sweeps layers `1..N-1`, recomputing the conditional probabilities
//! of a layer from the fresh layer below and the previous iterate of the
//! layer above, with an inner fixed point on the layer service rate `μ(n)`.
//! The stationary law then follows from the aggregated birth-death chain.

pub mod kernel;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::birthdeath::{layer_rates, stationary_finite_buffer, BirthDeathProfile};
use crate::error::{Error, Result};
use crate::model::{binomial, layer_states, ServiceSystem, StateIndex};
use crate::transitions::{generate_full, TransitionSet, Triple};

pub use kernel::{inner_layer_pass, LayerEdges, LayerInputs, LayerPass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMode {
    /// Repeated substitution until successive iterates agree within `tol_inner`.
    #[default]
    Iterative,
    /// Jump to the fixed point of the affine recurrence on `μ(n)`.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol_outer: f64,
    pub tol_inner: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub inner_mode: InnerMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_outer: 1e-9,
            tol_inner: 1e-10,
            max_outer_iters: 10_000,
            max_inner_iters: 10_000,
            inner_mode: InnerMode::Iterative,
        }
    }
}

impl SolverConfig {
    /// Outer tolerance `eps` with the inner tolerance a tenth of it.
    pub fn with_tolerance(eps: f64) -> Self {
        SolverConfig {
            tol_outer: eps,
            tol_inner: eps / 10.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol_outer > 0.0 && self.tol_inner > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.tol_inner > self.tol_outer {
            return Err(Error::InvalidConfig(format!(
                "inner tolerance {} exceeds outer tolerance {}",
                self.tol_inner, self.tol_outer
            )));
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::InvalidConfig(
                "iteration limits must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `p_n(B_m)` for every layer, each listed in ascending state order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDistribution {
    pub layers: Vec<Vec<f64>>,
}

impl ConditionalDistribution {
    /// `1 / C(N, n)` on every state.
    pub fn uniform(n_units: usize) -> Self {
        let layers = (0..=n_units)
            .map(|n| {
                let size = binomial(n_units, n) as usize;
                vec![1.0 / size as f64; size]
            })
            .collect();
        ConditionalDistribution { layers }
    }

    pub fn n_units(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, n: usize) -> &[f64] {
        &self.layers[n]
    }

    pub fn layer_sums(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.iter().sum()).collect()
    }
}

/// Result of the layer-wise contraction check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    /// `Φ_1 ..= Φ_N`; the last entry is the contraction factor of the sweep.
    pub phi: Vec<f64>,
    /// Every `Φ_n` for `n = 1..N-1` is below one.
    pub ok: bool,
}

impl AssumptionCheck {
    /// `Φ_N`.
    pub fn phi_top(&self) -> f64 {
        *self.phi.last().expect("at least one unit")
    }

    /// Largest `Φ_n` over `n = 1..N-1`, or `Φ_N` when `N = 1`.
    pub fn phi_max(&self) -> f64 {
        let inner = &self.phi[..self.phi.len().saturating_sub(1)];
        if inner.is_empty() {
            self.phi_top()
        } else {
            inner.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// Evaluates the contraction bounds built from the extreme layer service
/// rates: `μ̄_n` (`μ̲_n`) is the sum of the `n` largest (smallest) `ν_i` and
/// `γ_n = μ̄_n / μ̲_n`, with `γ_{N+1} = 1`.
pub fn check_assumption(sys: &ServiceSystem) -> AssumptionCheck {
    let n_units = sys.n_units();
    let lambda = sys.arrival_rate();
    let mut nu = sys.service_rates().to_vec();
    nu.sort_by(f64::total_cmp);
    let mut mu_min = vec![0.0; n_units + 1];
    let mut mu_max = vec![0.0; n_units + 1];
    for n in 1..=n_units {
        mu_min[n] = mu_min[n - 1] + nu[n - 1];
        mu_max[n] = mu_max[n - 1] + nu[n_units - n];
    }
    let gamma = |n: usize| {
        if n > n_units {
            1.0
        } else {
            mu_max[n] / mu_min[n]
        }
    };
    let mut phi = Vec::with_capacity(n_units);
    for n in 1..=n_units {
        let lead = lambda / (lambda + mu_min[n]);
        let mut sum = gamma(n + 1);
        for q in 2..=n {
            let mut prod = 1.0;
            for j in q..=n {
                prod *= mu_max[j] / (lambda + mu_min[j - 1]);
            }
            sum += gamma(q) * prod;
        }
        phi.push(lead * sum);
    }
    let ok = phi[..n_units - 1].iter().all(|&x| x < 1.0);
    AssumptionCheck { phi, ok }
}

/// Per-sweep record of the outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Number of outer sweeps performed.
    pub iterations: usize,
    /// `M_k`: largest per-layer L1 change in each sweep.
    pub m_k: Vec<f64>,
    /// Largest absolute change of any conditional probability in each sweep.
    pub max_abs_diff: Vec<f64>,
    /// Inner iterations per sweep, for layers `1..N-1`.
    pub inner_iterations: Vec<Vec<usize>>,
    /// `Σ_m P^k{B_m}` after each sweep, assembled without renormalizing.
    pub normalization: Vec<f64>,
    /// Largest `|λ^k(n) - λ|` over `n < N` after the last sweep.
    pub lambda_consistency: f64,
    /// Layer passes where the closed form was singular and iteration was used.
    pub closed_form_fallbacks: usize,
    pub assumption: AssumptionCheck,
    pub converged: bool,
}

impl ConvergenceTrace {
    /// `M_{k+1} / M_k` for consecutive sweeps.
    pub fn ratios(&self) -> Vec<f64> {
        self.m_k.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn final_residual(&self) -> f64 {
        self.max_abs_diff.last().copied().unwrap_or(0.0)
    }
}

/// Stationary probabilities of the hypercube states and the waiting room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateDistribution {
    pub n_units: usize,
    /// `P{B_m}` indexed by state value.
    pub probabilities: Vec<f64>,
    /// `P̃{c}` for `c = 1..=C`.
    pub queue_tail: Vec<f64>,
    /// Probability of `n` calls in system, `n = 0..=N+C`.
    pub layer_marginals: Vec<f64>,
}

impl SteadyStateDistribution {
    pub fn probability(&self, m: StateIndex) -> f64 {
        self.probabilities[m.as_usize()]
    }

    /// `Π`: all units busy, with or without waiting calls.
    pub fn saturation(&self) -> f64 {
        self.probabilities[self.probabilities.len() - 1] + self.queue_tail.iter().sum::<f64>()
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum::<f64>() + self.queue_tail.iter().sum::<f64>()
    }

    /// State probabilities followed by the queue tail.
    pub fn full_vector(&self) -> Vec<f64> {
        let mut v = self.probabilities.clone();
        v.extend_from_slice(&self.queue_tail);
        v
    }

    /// Combines conditional probabilities with the layer law.
    pub fn assemble(cond: &ConditionalDistribution, profile: &BirthDeathProfile) -> Self {
        let n_units = cond.n_units();
        let mut probabilities = vec![0.0; 1usize << n_units];
        for n in 0..=n_units {
            let layer = layer_states(n_units, n).expect("validated size");
            for (&m, &p) in layer.states.iter().zip(&cond.layers[n]) {
                probabilities[m.as_usize()] = profile.p_n[n] * p;
            }
        }
        SteadyStateDistribution {
            n_units,
            probabilities,
            queue_tail: profile.p_n[n_units + 1..].to_vec(),
            layer_marginals: profile.p_n.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub distribution: SteadyStateDistribution,
    pub trace: ConvergenceTrace,
    pub conditionals: ConditionalDistribution,
    pub profile: BirthDeathProfile,
}

impl Solution {
    /// Turns a non-converged run into [`Error::NotConverged`].
    pub fn require_converged(self) -> Result<Solution> {
        if self.trace.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.trace.iterations,
                residual: self.trace.final_residual(),
            })
        }
    }
}

/// What a layer updater sees for one layer at outer iteration `k`.
pub(crate) struct LayerRequest<'a> {
    pub layer: usize,
    pub below: &'a Arc<Vec<f64>>,
    pub above: &'a Arc<Vec<f64>>,
    pub current: &'a Arc<Vec<f64>>,
    pub lambda_below: f64,
    pub lambda_prev: f64,
    pub mu_above_prev: f64,
    pub mu_prev: f64,
}

impl LayerRequest<'_> {
    pub fn inputs(&self) -> LayerInputs<'_> {
        LayerInputs {
            below: self.below,
            above: self.above,
            current: self.current,
            lambda_below: self.lambda_below,
            lambda_prev: self.lambda_prev,
            mu_above_prev: self.mu_above_prev,
            mu_prev: self.mu_prev,
        }
    }
}

fn normalization(
    sys: &ServiceSystem,
    layers: &[Arc<Vec<f64>>],
    lambda: &[f64],
    mu: &[f64],
) -> Result<f64> {
    let profile = stationary_finite_buffer(lambda, mu, sys.buffer_capacity())?;
    let n_units = sys.n_units();
    let head: f64 = (0..=n_units)
        .map(|n| profile.p_n[n] * layers[n].iter().sum::<f64>())
        .sum();
    Ok(head + profile.p_n[n_units + 1..].iter().sum::<f64>())
}

/// The outer iteration, parameterised over how a single layer is updated.
/// `on_sweep` is called after every sweep with the sweep count.
pub(crate) fn run_outer(
    sys: &ServiceSystem,
    cfg: &SolverConfig,
    mut update: impl FnMut(&LayerRequest<'_>) -> Result<LayerPass>,
    mut on_sweep: impl FnMut(usize),
) -> Result<Solution> {
    cfg.validate()?;
    let n_units = sys.n_units();
    let initial = ConditionalDistribution::uniform(n_units);
    let (mut lambda_prev, mut mu_prev) = layer_rates(&initial.layers, sys);
    let mut layers: Vec<Arc<Vec<f64>>> = initial.layers.into_iter().map(Arc::new).collect();

    let mut trace = ConvergenceTrace {
        iterations: 0,
        m_k: Vec::new(),
        max_abs_diff: Vec::new(),
        inner_iterations: Vec::new(),
        normalization: Vec::new(),
        lambda_consistency: 0.0,
        closed_form_fallbacks: 0,
        assumption: check_assumption(sys),
        converged: false,
    };

    loop {
        let mut lambda_cur = lambda_prev.clone();
        let mut mu_cur = mu_prev.clone();
        let mut sweep_max = 0.0f64;
        let mut sweep_m = 0.0f64;
        let mut inner = Vec::with_capacity(n_units.saturating_sub(1));
        for n in 1..n_units {
            let req = LayerRequest {
                layer: n,
                below: &layers[n - 1],
                above: &layers[n + 1],
                current: &layers[n],
                lambda_below: lambda_cur[n - 1],
                lambda_prev: lambda_prev[n],
                mu_above_prev: mu_prev[n + 1],
                mu_prev: mu_prev[n],
            };
            let pass = update(&req)?;
            sweep_max = sweep_max.max(pass.max_abs_diff);
            sweep_m = sweep_m.max(pass.l1_diff);
            inner.push(pass.inner_iterations);
            trace.closed_form_fallbacks += pass.fallback as usize;
            lambda_cur[n] = pass.lambda;
            mu_cur[n] = pass.mu;
            layers[n] = Arc::new(pass.p);
        }
        lambda_prev = lambda_cur;
        mu_prev = mu_cur;
        trace.iterations += 1;
        trace.m_k.push(sweep_m);
        trace.max_abs_diff.push(sweep_max);
        trace.inner_iterations.push(inner);
        trace
            .normalization
            .push(normalization(sys, &layers, &lambda_prev, &mu_prev)?);
        on_sweep(trace.iterations);

        if sweep_max <= cfg.tol_outer {
            trace.converged = true;
            break;
        }
        if trace.iterations >= cfg.max_outer_iters {
            break;
        }
    }

    let lambda = sys.arrival_rate();
    trace.lambda_consistency = lambda_prev[..n_units]
        .iter()
        .map(|l| (l - lambda).abs())
        .fold(0.0, f64::max);

    let conditionals = ConditionalDistribution {
        layers: layers
            .into_iter()
            .map(|l| Arc::try_unwrap(l).unwrap_or_else(|shared| (*shared).clone()))
            .collect(),
    };
    let (lambda_n, mu_n) = layer_rates(&conditionals.layers, sys);
    let profile = stationary_finite_buffer(&lambda_n, &mu_n, sys.buffer_capacity())?;
    let distribution = SteadyStateDistribution::assemble(&conditionals, &profile);
    Ok(Solution {
        distribution,
        trace,
        conditionals,
        profile,
    })
}

/// Triples of `triples` whose destination lies in layer `n`.
fn layer_slice(triples: &[Triple], n: usize) -> &[Triple] {
    let lo = triples.partition_point(|t| t.to.weight() < n);
    let hi = triples.partition_point(|t| t.to.weight() <= n);
    &triples[lo..hi]
}

/// Edge lists for every layer, built from a full transition set.
pub fn layer_edges(sys: &ServiceSystem, set: &TransitionSet) -> Result<Vec<LayerEdges>> {
    (0..=sys.n_units())
        .map(|n| {
            let view = layer_states(sys.n_units(), n)?;
            LayerEdges::build(
                sys,
                n,
                0,
                &view.states,
                layer_slice(&set.upward, n),
                layer_slice(&set.downward, n),
            )
        })
        .collect()
}

/// Runs the sequential solver.
///
/// Hitting `max_outer_iters` is not an error: the last iterate is returned with
/// `trace.converged == false` (see [`Solution::require_converged`]).
pub fn solve(sys: &ServiceSystem, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let set = generate_full(sys)?;
    let edges = layer_edges(sys, &set)?;
    drop(set);
    run_outer(
        sys,
        cfg,
        |req| inner_layer_pass(&edges[req.layer], &req.inputs(), cfg),
        |_| {},
    )
}
