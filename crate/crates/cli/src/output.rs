//! Result documents and the CSV distribution dump.

use std::io::Write;

use hyperq::metrics::PerformanceReport;
use hyperq::model::StateIndex;
use hyperq::parallel::TimingReport;
use hyperq::simulator::{Interval, SimConfig, SimEstimate};
use hyperq::solver::{AssumptionCheck, Solution};
use hyperq::{ServiceSystem, SteadyStateDistribution};
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::error::Result;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PRINT_THRESHOLD: f64 = 1e-12;

#[derive(Serialize)]
pub struct Stamp {
    pub schema: u32,
    pub hyperq: &'static str,
}

impl Stamp {
    fn new() -> Self {
        Stamp {
            schema: SCHEMA_VERSION,
            hyperq: env!("CARGO_PKG_VERSION"),
        }
    }
}

/// `index -> value` in ascending index order.
pub struct Sparse<T>(pub Vec<(usize, T)>);

impl<T: Serialize> Serialize for Sparse<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(&k.to_string(), v)?;
        }
        map.end()
    }
}

#[derive(Serialize)]
pub struct InstanceSummary {
    pub n_units: usize,
    pub n_nodes: usize,
    pub arrival_rate: f64,
    pub buffer_capacity: usize,
    pub offered_utilization: f64,
}

impl InstanceSummary {
    fn new(sys: &ServiceSystem) -> Self {
        InstanceSummary {
            n_units: sys.n_units(),
            n_nodes: sys.n_nodes(),
            arrival_rate: sys.arrival_rate(),
            buffer_capacity: sys.buffer_capacity(),
            offered_utilization: sys.utilization(),
        }
    }
}

#[derive(Serialize)]
pub struct ConvergenceDoc {
    pub converged: bool,
    pub iterations: usize,
    pub m_k: Vec<f64>,
    pub final_max_abs_diff: f64,
    pub final_normalization: Option<f64>,
    pub lambda_consistency: f64,
    pub closed_form_fallbacks: usize,
    pub phi: Vec<f64>,
    pub phi_max: f64,
    pub assumption_ok: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleDoc {
    pub mpre_pct: f64,
    pub tolerance_pct: f64,
}

#[derive(Serialize)]
pub struct SolveDoc {
    pub version: Stamp,
    pub instance: InstanceSummary,
    /// `None` when every state is listed.
    pub print_threshold: Option<f64>,
    pub state_probabilities: Sparse<f64>,
    pub queue_tail: Vec<f64>,
    pub layer_marginals: Vec<f64>,
    pub metrics: PerformanceReport,
    pub convergence: ConvergenceDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleDoc>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingReport>,
}

fn sparse(values: impl Iterator<Item = f64>, threshold: Option<f64>) -> Sparse<f64> {
    Sparse(
        values
            .enumerate()
            .filter(|(_, p)| threshold.is_none_or(|t| p.abs() > t))
            .collect(),
    )
}

impl SolveDoc {
    pub fn new(
        sys: &ServiceSystem,
        solution: &Solution,
        metrics: PerformanceReport,
        oracle: Option<OracleDoc>,
        timing: Option<TimingReport>,
        threshold: Option<f64>,
    ) -> Self {
        let dist = &solution.distribution;
        let trace = &solution.trace;
        SolveDoc {
            version: Stamp::new(),
            instance: InstanceSummary::new(sys),
            print_threshold: threshold,
            state_probabilities: sparse(dist.probabilities.iter().copied(), threshold),
            queue_tail: dist.queue_tail.clone(),
            layer_marginals: dist.layer_marginals.clone(),
            metrics,
            convergence: ConvergenceDoc {
                converged: trace.converged,
                iterations: trace.iterations,
                m_k: trace.m_k.clone(),
                final_max_abs_diff: trace.final_residual(),
                final_normalization: trace.normalization.last().copied(),
                lambda_consistency: trace.lambda_consistency,
                closed_form_fallbacks: trace.closed_form_fallbacks,
                phi: trace.assumption.phi.clone(),
                phi_max: trace.assumption.phi_max(),
                assumption_ok: trace.assumption.ok,
            },
            oracle,
            timing,
        }
    }

    pub fn to_text(&self) -> String {
        let c = &self.convergence;
        let mut out = format!(
            "N={} J={} C={} lambda={} offered utilization {:.4}\n",
            self.instance.n_units,
            self.instance.n_nodes,
            self.instance.buffer_capacity,
            self.instance.arrival_rate,
            self.instance.offered_utilization
        );
        out += &format!(
            "{} after {} sweeps (last difference {:.3e}); phi_max {:.4}, assumption {}\n",
            if c.converged {
                "converged"
            } else {
                "NOT converged"
            },
            c.iterations,
            c.final_max_abs_diff,
            c.phi_max,
            if c.assumption_ok { "holds" } else { "fails" }
        );
        out += &format!("saturation probability {:.6e}\n", self.metrics.saturation);
        for (i, u) in self.metrics.utilization.iter().enumerate() {
            out += &format!("unit {:>3} utilization {u:.6}\n", i + 1);
        }
        if let Some(mrt) = self.metrics.mean_response_time {
            out += &format!("mean response time {mrt:.6}\n");
        }
        for (t, f) in &self.metrics.coverage {
            out += &format!("coverage within {t}: {f:.6}\n");
        }
        if let Some(o) = self.oracle {
            out += &format!("direct solve MPRE {:.3e}%\n", o.mpre_pct);
        }
        out
    }
}

/// Rows `index,state,calls,probability`; hypercube states first, then one
/// row per waiting-room level.
pub fn write_distribution_csv<W: Write>(w: W, dist: &SteadyStateDistribution) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["index", "state", "calls", "probability"])?;
    let n = dist.n_units;
    for (v, p) in dist.probabilities.iter().enumerate() {
        let m = StateIndex(v as u32);
        let bits: String = m
            .to_bits(n)
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        wr.write_record([v.to_string(), bits, m.weight().to_string(), p.to_string()])?;
    }
    for (c, p) in dist.queue_tail.iter().enumerate() {
        let idx = dist.probabilities.len() + c;
        wr.write_record([
            idx.to_string(),
            format!("queue:{}", c + 1),
            (n + c + 1).to_string(),
            p.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize)]
pub struct SimulationDoc {
    pub version: Stamp,
    pub instance: InstanceSummary,
    pub distribution: String,
    pub arrivals: u64,
    pub replications: usize,
    pub seed: u64,
    pub warmup_fraction: f64,
    pub utilization: Vec<Interval>,
    /// Utilization MPRE (percent) against the exponential analytic solution.
    pub utilization_mpre_pct: f64,
    pub lost_fraction: Interval,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_response_time: Option<Interval>,
    pub print_threshold: f64,
    pub state_probabilities: Sparse<Interval>,
}

impl SimulationDoc {
    pub fn new(
        sys: &ServiceSystem,
        cfg: &SimConfig,
        dist_name: &str,
        est: &SimEstimate,
        utilization_mpre_pct: f64,
        threshold: f64,
    ) -> Self {
        SimulationDoc {
            version: Stamp::new(),
            instance: InstanceSummary::new(sys),
            distribution: dist_name.to_string(),
            arrivals: cfg.arrivals,
            replications: cfg.replications,
            seed: cfg.seed,
            warmup_fraction: cfg.warmup_fraction,
            utilization: est.utilization.clone(),
            utilization_mpre_pct,
            lost_fraction: est.lost_fraction,
            mean_response_time: est.mean_response_time,
            print_threshold: threshold,
            state_probabilities: Sparse(
                est.state_probabilities
                    .iter()
                    .copied()
                    .enumerate()
                    .filter(|(_, iv)| iv.mean > threshold)
                    .collect(),
            ),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} service, {} replications x {} arrivals, seed {}\n",
            self.distribution, self.replications, self.arrivals, self.seed
        );
        for (i, u) in self.utilization.iter().enumerate() {
            out += &format!(
                "unit {:>3} utilization {:.6}{}\n",
                i + 1,
                u.mean,
                half_width(u)
            );
        }
        out += &format!(
            "lost fraction {:.6}{}\n",
            self.lost_fraction.mean,
            half_width(&self.lost_fraction)
        );
        if let Some(m) = &self.mean_response_time {
            out += &format!("mean response time {:.6}{}\n", m.mean, half_width(m));
        }
        out += &format!(
            "utilization MPRE vs analytic {:.4}%\n",
            self.utilization_mpre_pct
        );
        out
    }
}

fn half_width(iv: &Interval) -> String {
    iv.half_width
        .map(|h| format!(" +/- {h:.6}"))
        .unwrap_or_default()
}

#[derive(Serialize)]
pub struct AssumptionDoc {
    pub version: Stamp,
    /// `Φ_1 ..= Φ_N`.
    pub phi: Vec<f64>,
    pub phi_max: f64,
    pub phi_top: f64,
    pub ok: bool,
}

impl AssumptionDoc {
    pub fn new(check: &AssumptionCheck) -> Self {
        AssumptionDoc {
            version: Stamp::new(),
            phi: check.phi.clone(),
            phi_max: check.phi_max(),
            phi_top: check.phi_top(),
            ok: check.ok,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (n, p) in self.phi.iter().enumerate() {
            out += &format!("phi_{} = {p:.6}\n", n + 1);
        }
        out += &format!("assumption {}\n", if self.ok { "holds" } else { "fails" });
        out
    }
}
