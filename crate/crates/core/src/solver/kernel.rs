//! Per-layer arithmetic shared by the sequential and parallel solvers.
//!
//! One inner update of layer `n` is affine in the layer service rate:
//! `p(m) = a_m μ + b_m`. A layer pass therefore splits into three steps:
//! [`coefficients`] per batch of states, [`inner_fixed_point`] on the scalar
//! `μ(n)` once per layer, and [`finalize`] per batch. The sequential solver
//! runs them with a single batch spanning the layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ServiceSystem, StateIndex};
use crate::transitions::{total_rates, Triple};

use super::{InnerMode, SolverConfig};

/// Incoming transitions for a contiguous run of states inside one layer,
/// stored in compressed rows. Sources are addressed by their rank inside the
/// neighbouring layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEdges {
    pub layer: usize,
    pub n_units: usize,
    /// Rank of `states[0]` inside the layer.
    pub offset: usize,
    pub states: Vec<StateIndex>,
    pub lambda_m: Vec<f64>,
    pub mu_m: Vec<f64>,
    up_start: Vec<usize>,
    up_src: Vec<u32>,
    up_rate: Vec<f64>,
    down_start: Vec<usize>,
    down_src: Vec<u32>,
    down_rate: Vec<f64>,
}

fn compress(states: &[StateIndex], triples: &[Triple]) -> Result<(Vec<usize>, Vec<u32>, Vec<f64>)> {
    let mut start = Vec::with_capacity(states.len() + 1);
    let mut src = Vec::with_capacity(triples.len());
    let mut rate = Vec::with_capacity(triples.len());
    let mut pos = 0;
    start.push(0);
    for &m in states {
        while pos < triples.len() && triples[pos].to == m {
            src.push(triples[pos].from.layer_rank() as u32);
            rate.push(triples[pos].rate);
            pos += 1;
        }
        start.push(src.len());
    }
    if pos != triples.len() {
        return Err(Error::DimensionMismatch(format!(
            "transition into state {} does not belong to the batch",
            triples[pos].to.0
        )));
    }
    Ok((start, src, rate))
}

impl LayerEdges {
    /// Builds the edge lists for `states`, which must be consecutive states of
    /// layer `layer` starting at rank `offset`. The triples must be grouped by
    /// destination in the same order as `states`.
    pub fn build(
        sys: &ServiceSystem,
        layer: usize,
        offset: usize,
        states: &[StateIndex],
        upward: &[Triple],
        downward: &[Triple],
    ) -> Result<LayerEdges> {
        let (up_start, up_src, up_rate) = compress(states, upward)?;
        let (down_start, down_src, down_rate) = compress(states, downward)?;
        let (lambda_m, mu_m) = states.iter().map(|&m| total_rates(sys, m)).unzip();
        Ok(LayerEdges {
            layer,
            n_units: sys.n_units(),
            offset,
            states: states.to_vec(),
            lambda_m,
            mu_m,
            up_start,
            up_src,
            up_rate,
            down_start,
            down_src,
            down_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Approximate heap size in bytes.
    pub fn footprint(&self) -> usize {
        let edges = self.up_src.len() + self.down_src.len();
        edges * 12 + self.states.len() * (4 + 8 + 8 + 16)
    }

    fn is_boundary(&self) -> bool {
        self.layer == 0 || self.layer == self.n_units
    }
}

/// Neighbour layers and aggregate rates feeding one layer pass at outer
/// iteration `k`.
#[derive(Debug, Clone, Copy)]
pub struct LayerInputs<'a> {
    /// `p_{n-1}^k` over the whole layer below.
    pub below: &'a [f64],
    /// `p_{n+1}^{k-1}` over the whole layer above.
    pub above: &'a [f64],
    /// `p_n^{k-1}` over the whole layer.
    pub current: &'a [f64],
    /// `λ^k(n-1)`.
    pub lambda_below: f64,
    /// `λ^{k-1}(n)`.
    pub lambda_prev: f64,
    /// `μ^{k-1}(n+1)`.
    pub mu_above_prev: f64,
    /// `μ^{k-1}(n)`, the starting point of the inner iteration.
    pub mu_prev: f64,
}

/// Affine coefficients for one batch plus its contribution to the layer
/// reductions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sum_mu_a: f64,
    pub sum_mu_b: f64,
    pub a_max: f64,
    /// `max |p^{k,1} - p^{k-1}|` over the batch.
    pub first_diff: f64,
}

pub fn coefficients(edges: &LayerEdges, inputs: &LayerInputs<'_>) -> BatchCoefficients {
    let len = edges.len();
    let mut out = BatchCoefficients {
        a: Vec::with_capacity(len),
        b: Vec::with_capacity(len),
        sum_mu_a: 0.0,
        sum_mu_b: 0.0,
        a_max: 0.0,
        first_diff: 0.0,
    };
    let down_scale = inputs.lambda_prev / inputs.mu_above_prev;
    for i in 0..len {
        let mut up = 0.0;
        for e in edges.up_start[i]..edges.up_start[i + 1] {
            up += inputs.below[edges.up_src[e] as usize] * edges.up_rate[e];
        }
        let mut down = 0.0;
        for e in edges.down_start[i]..edges.down_start[i + 1] {
            down += inputs.above[edges.down_src[e] as usize] * edges.down_rate[e];
        }
        let denom = edges.lambda_m[i] + edges.mu_m[i];
        let a = up / (inputs.lambda_below * denom);
        let b = down_scale * down / denom;
        let mu = edges.mu_m[i];
        out.sum_mu_a += mu * a;
        out.sum_mu_b += mu * b;
        out.a_max = out.a_max.max(a);
        let first = a * inputs.mu_prev + b;
        out.first_diff = out
            .first_diff
            .max((first - inputs.current[edges.offset + i]).abs());
        out.a.push(a);
        out.b.push(b);
    }
    out
}

/// Layer-level reduction of the batch coefficients, accumulated in batch order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LayerAggregate {
    pub sum_mu_a: f64,
    pub sum_mu_b: f64,
    pub a_max: f64,
    pub first_diff: f64,
}

impl LayerAggregate {
    pub fn push(&mut self, c: &BatchCoefficients) {
        self.sum_mu_a += c.sum_mu_a;
        self.sum_mu_b += c.sum_mu_b;
        self.a_max = self.a_max.max(c.a_max);
        self.first_diff = self.first_diff.max(c.first_diff);
    }
}

/// Outcome of the scalar inner iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    /// The `μ` that produced the final layer probabilities.
    pub mu_used: f64,
    /// `μ^k(n)`, evaluated on the final layer probabilities.
    pub mu_next: f64,
    pub iterations: usize,
    /// Closed-form mode fell back to iteration.
    pub fallback: bool,
}

/// Closed-form fixed point `μ* = B / (1 - A)`.
pub fn closed_form(layer: usize, agg: &LayerAggregate) -> Result<f64> {
    let denominator = 1.0 - agg.sum_mu_a;
    if !(denominator > 0.0) {
        return Err(Error::FixedPointSingular { layer, denominator });
    }
    Ok(agg.sum_mu_b / denominator)
}

/// Runs the inner loop on `μ(n)`. Since every probability is affine in `μ`,
/// the difference between successive inner iterates is
/// `a_m |μ_{r-1} - μ_{r-2}|`, and the recurrence is
/// `μ_r = A μ_{r-1} + B` with `A = Σ μ_m a_m`, `B = Σ μ_m b_m`.
pub fn inner_fixed_point(
    layer: usize,
    agg: &LayerAggregate,
    mu_prev: f64,
    cfg: &SolverConfig,
) -> Result<InnerSolution> {
    if cfg.inner_mode == InnerMode::ClosedForm {
        if let Ok(mu) = closed_form(layer, agg) {
            return Ok(InnerSolution {
                mu_used: mu,
                mu_next: agg.sum_mu_a * mu + agg.sum_mu_b,
                iterations: 1,
                fallback: false,
            });
        }
    }
    let fallback = cfg.inner_mode == InnerMode::ClosedForm;
    let step = |mu: f64| agg.sum_mu_a * mu + agg.sum_mu_b;

    let mut before = mu_prev;
    let mut current = step(before);
    if agg.first_diff <= cfg.tol_inner {
        return Ok(InnerSolution {
            mu_used: before,
            mu_next: current,
            iterations: 1,
            fallback,
        });
    }
    for r in 2..=cfg.max_inner_iters {
        let diff = agg.a_max * (current - before).abs();
        before = current;
        current = step(before);
        if diff <= cfg.tol_inner {
            return Ok(InnerSolution {
                mu_used: before,
                mu_next: current,
                iterations: r,
                fallback,
            });
        }
    }
    Err(Error::InnerDiverged {
        layer,
        iterations: cfg.max_inner_iters,
    })
}

/// Final probabilities of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub p: Vec<f64>,
    pub max_abs_diff: f64,
    pub l1_diff: f64,
    /// `Σ p(m) λ_m` over the batch.
    pub lambda_sum: f64,
}

pub fn finalize(
    edges: &LayerEdges,
    coeffs: &BatchCoefficients,
    mu: f64,
    current: &[f64],
) -> BatchResult {
    let mut out = BatchResult {
        p: Vec::with_capacity(edges.len()),
        max_abs_diff: 0.0,
        l1_diff: 0.0,
        lambda_sum: 0.0,
    };
    for i in 0..edges.len() {
        let p = coeffs.a[i] * mu + coeffs.b[i];
        let d = (p - current[edges.offset + i]).abs();
        out.max_abs_diff = out.max_abs_diff.max(d);
        out.l1_diff += d;
        out.lambda_sum += p * edges.lambda_m[i];
        out.p.push(p);
    }
    out
}

/// Result of updating one whole layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPass {
    pub p: Vec<f64>,
    /// `μ^k(n)`.
    pub mu: f64,
    /// `λ^k(n)`.
    pub lambda: f64,
    pub inner_iterations: usize,
    pub max_abs_diff: f64,
    pub l1_diff: f64,
    pub fallback: bool,
}

/// Combines per-batch results (in batch order) into a layer pass.
pub fn assemble_pass(
    results: Vec<BatchResult>,
    inner: &InnerSolution,
    layer_len: usize,
) -> LayerPass {
    let mut pass = LayerPass {
        p: Vec::with_capacity(layer_len),
        mu: inner.mu_next,
        lambda: 0.0,
        inner_iterations: inner.iterations,
        max_abs_diff: 0.0,
        l1_diff: 0.0,
        fallback: inner.fallback,
    };
    for r in results {
        pass.p.extend_from_slice(&r.p);
        pass.lambda += r.lambda_sum;
        pass.l1_diff += r.l1_diff;
        pass.max_abs_diff = pass.max_abs_diff.max(r.max_abs_diff);
    }
    pass
}

/// Updates a whole layer given `edges` covering every state of it.
///
/// The boundary layers `0` and `N` hold a single state with probability one
/// and are returned unchanged.
pub fn inner_layer_pass(
    edges: &LayerEdges,
    inputs: &LayerInputs<'_>,
    cfg: &SolverConfig,
) -> Result<LayerPass> {
    if edges.offset != 0 || edges.len() != inputs.current.len() {
        return Err(Error::DimensionMismatch(format!(
            "layer pass needs all {} states of layer {}, got {} from rank {}",
            inputs.current.len(),
            edges.layer,
            edges.len(),
            edges.offset
        )));
    }
    if edges.is_boundary() {
        let p = inputs.current.to_vec();
        let mu = p.iter().zip(&edges.mu_m).map(|(p, m)| p * m).sum();
        let lambda = p.iter().zip(&edges.lambda_m).map(|(p, l)| p * l).sum();
        return Ok(LayerPass {
            p,
            mu,
            lambda,
            inner_iterations: 0,
            max_abs_diff: 0.0,
            l1_diff: 0.0,
            fallback: false,
        });
    }
    let coeffs = coefficients(edges, inputs);
    let mut agg = LayerAggregate::default();
    agg.push(&coeffs);
    let inner = inner_fixed_point(edges.layer, &agg, inputs.mu_prev, cfg)?;
    let result = finalize(edges, &coeffs, inner.mu_used, inputs.current);
    Ok(assemble_pass(vec![result], &inner, edges.len()))
}
