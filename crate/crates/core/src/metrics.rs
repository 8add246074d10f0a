//! Performance measures derived from a stationary distribution.
//!
//! A call from node `j` arriving in state `m` is dispatched to the first free
//! unit in `ζ_j`; the states where that unit is `i` form the dispatch set
//! `S_ij`. Dispatch fractions, mean response time and coverage are averages
//! over served calls, i.e. conditioned on the system not being saturated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ServiceSystem, StateIndex};
use crate::solver::SteadyStateDistribution;

/// Reference entries smaller than this are left out of the MPRE.
pub const MPRE_ZERO_THRESHOLD: f64 = 1e-300;

/// `1 - Π` below this is treated as a saturated system.
const SATURATION_TOL: f64 = 1e-15;

/// `ρ_i`: probability that unit `i` is busy.
pub fn utilization(dist: &SteadyStateDistribution, sys: &ServiceSystem) -> Vec<f64> {
    let tail: f64 = dist.queue_tail.iter().sum();
    let mut rho = vec![tail; sys.n_units()];
    for (v, &p) in dist.probabilities.iter().enumerate() {
        for u in StateIndex(v as u32).busy_units() {
            rho[u - 1] += p;
        }
    }
    rho
}

/// `ρ_ij` (indexed `[unit][node]`) and the saturation probability `Π`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchFractions {
    pub rho: Vec<Vec<f64>>,
    pub saturation: f64,
}

impl DispatchFractions {
    pub fn total(&self) -> f64 {
        self.rho.iter().flatten().sum()
    }
}

pub fn dispatch_fractions(
    dist: &SteadyStateDistribution,
    sys: &ServiceSystem,
) -> Result<DispatchFractions> {
    let saturation = dist.saturation();
    let served = 1.0 - saturation;
    if served < SATURATION_TOL {
        return Err(Error::SaturatedSystem(saturation));
    }
    let mut rho = vec![vec![0.0; sys.n_nodes()]; sys.n_units()];
    for (v, &p) in dist.probabilities.iter().enumerate() {
        let m = StateIndex(v as u32);
        for (node0, &f) in sys.demand_fractions().iter().enumerate() {
            if let Some(u) = sys.first_free0(node0, m) {
                rho[u][node0] += f * p;
            }
        }
    }
    rho.iter_mut().flatten().for_each(|x| *x /= served);
    Ok(DispatchFractions { rho, saturation })
}

fn travel_times(sys: &ServiceSystem) -> Result<&[Vec<f64>]> {
    sys.travel_times().ok_or(Error::MissingTravelTimes)
}

/// `Σ_ij ρ_ij τ_ij`.
pub fn mean_response_time(fractions: &DispatchFractions, tau: &[Vec<f64>]) -> f64 {
    fractions
        .rho
        .iter()
        .zip(tau)
        .flat_map(|(r, t)| r.iter().zip(t).map(|(r, t)| r * t))
        .sum()
}

/// Fraction of served calls whose dispatched unit has `τ_ij < threshold`.
pub fn coverage(
    dist: &SteadyStateDistribution,
    sys: &ServiceSystem,
    threshold: f64,
) -> Result<f64> {
    let tau = travel_times(sys)?;
    let fractions = dispatch_fractions(dist, sys)?;
    Ok(coverage_from(&fractions, tau, threshold))
}

fn coverage_from(fractions: &DispatchFractions, tau: &[Vec<f64>], threshold: f64) -> f64 {
    fractions
        .rho
        .iter()
        .zip(tau)
        .flat_map(|(r, t)| {
            r.iter()
                .zip(t)
                .filter(|(_, &t)| t < threshold)
                .map(|(r, _)| r)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub utilization: Vec<f64>,
    pub dispatch_fractions: Vec<Vec<f64>>,
    pub saturation: f64,
    pub system_utilization: f64,
    pub mean_response_time: Option<f64>,
    /// `(threshold, F(threshold))` pairs.
    pub coverage: Vec<(f64, f64)>,
}

/// Every measure at once. Travel-time measures are omitted when the instance
/// has no travel times and no thresholds are requested.
pub fn report(
    dist: &SteadyStateDistribution,
    sys: &ServiceSystem,
    thresholds: &[f64],
) -> Result<PerformanceReport> {
    let fractions = dispatch_fractions(dist, sys)?;
    let tau = sys.travel_times();
    if tau.is_none() && !thresholds.is_empty() {
        return Err(Error::MissingTravelTimes);
    }
    Ok(PerformanceReport {
        utilization: utilization(dist, sys),
        mean_response_time: tau.map(|t| mean_response_time(&fractions, t)),
        coverage: match tau {
            Some(t) => thresholds
                .iter()
                .map(|&th| (th, coverage_from(&fractions, t, th)))
                .collect(),
            None => Vec::new(),
        },
        saturation: fractions.saturation,
        system_utilization: sys.utilization(),
        dispatch_fractions: fractions.rho,
    })
}

/// Maximum percentage relative error with the number of skipped entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mpre {
    pub percent: f64,
    /// Reference entries below [`MPRE_ZERO_THRESHOLD`] that were skipped.
    pub excluded: usize,
}

pub fn mpre_detailed(reference: &[f64], candidate: &[f64]) -> Result<Mpre> {
    if reference.len() != candidate.len() {
        return Err(Error::LengthMismatch(reference.len(), candidate.len()));
    }
    let mut worst = 0.0f64;
    let mut excluded = 0;
    for (r, c) in reference.iter().zip(candidate) {
        if r.abs() < MPRE_ZERO_THRESHOLD {
            excluded += 1;
            continue;
        }
        worst = worst.max(((r - c) / r).abs());
    }
    if excluded == reference.len() {
        return Err(Error::AllReferenceZero);
    }
    Ok(Mpre {
        percent: worst * 100.0,
        excluded,
    })
}

/// `max |(M - M̂) / M| × 100`.
pub fn mpre(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    mpre_detailed(reference, candidate).map(|m| m.percent)
}
