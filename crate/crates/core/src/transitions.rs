//! Upward (dispatch) and downward (service completion) transition rates in
//! coordinate (COO) form.
//!
//! Two generators produce the same triples:
//! * [`generate_full`] scans every *source* state once and records, per demand
//!   node, the first free unit in its preference list;
//! * [`generate_for_states`] works backwards from a batch of *destination*
//!   states, accumulating per-node contributions under a `(from, to)` key. This
//!   is the on-demand path used by the parallel solver.

pub mod cache;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ServiceSystem, StateIndex, MAX_UNITS};

/// Default memory ceiling for [`generate_full`].
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

/// One nonzero transition rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub from: StateIndex,
    pub to: StateIndex,
    pub rate: f64,
}

impl Triple {
    fn sort_key(&self) -> (usize, u32, u32) {
        (self.to.weight(), self.to.0, self.from.0)
    }
}

/// Every transition of a zero-buffer hypercube, grouped by destination layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSet {
    pub n_units: usize,
    pub upward: Vec<Triple>,
    pub downward: Vec<Triple>,
    /// `λ_m`, indexed by state value.
    pub lambda_total: Vec<f64>,
    /// `μ_m`, indexed by state value.
    pub mu_total: Vec<f64>,
}

/// Triples whose destination lies in one batch of states.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchTransitions {
    pub upward: Vec<Triple>,
    pub downward: Vec<Triple>,
}

/// Rough size in bytes of the full transition set for `n_units`.
pub fn estimated_footprint(n_units: usize) -> usize {
    let states = 1usize << n_units;
    // every hypercube edge appears once upward (at most) and once downward
    states * n_units * std::mem::size_of::<Triple>() + 2 * states * std::mem::size_of::<f64>()
}

/// Arrival rate carried by the dispatch `l -> m`: the demand of every node
/// whose highest-ranked free unit in `l` is the unit that differs.
pub fn upward_rate(sys: &ServiceSystem, l: StateIndex, m: StateIndex) -> Result<f64> {
    let diff = l.0 ^ m.0;
    if diff.count_ones() != 1 || l.0 & diff != 0 || m.0 as u64 >= sys.n_states() as u64 {
        return Err(Error::NotUpwardNeighbor { from: l.0, to: m.0 });
    }
    let unit0 = diff.trailing_zeros() as usize;
    let lambda = sys.arrival_rate();
    let mut rate = 0.0;
    for (node0, &f) in sys.demand_fractions().iter().enumerate() {
        let rank = sys.rank_of0(node0, unit0);
        let order = sys.pref_order0(node0);
        if order[..rank].iter().all(|&u| l.bit(u as usize)) {
            rate += lambda * f;
        }
    }
    Ok(rate)
}

/// `(λ_m, μ_m)` for the zero-buffer chain.
pub fn total_rates(sys: &ServiceSystem, m: StateIndex) -> (f64, f64) {
    let lambda = if m.weight() < sys.n_units() {
        sys.arrival_rate()
    } else {
        0.0
    };
    (lambda, sys.service_out_rate(m))
}

/// Generates every transition with the default memory budget.
pub fn generate_full(sys: &ServiceSystem) -> Result<TransitionSet> {
    generate_full_with_budget(sys, DEFAULT_MEMORY_BUDGET)
}

pub fn generate_full_with_budget(sys: &ServiceSystem, budget: usize) -> Result<TransitionSet> {
    let n = sys.n_units();
    if n > MAX_UNITS {
        return Err(Error::StateSpaceTooLarge(format!("{n} units")));
    }
    let need = estimated_footprint(n);
    if need > budget {
        return Err(Error::StateSpaceTooLarge(format!(
            "full transition set for {n} units needs ~{need} bytes, budget is {budget}"
        )));
    }
    let states = sys.n_states();
    let lambda = sys.arrival_rate();
    let nu = sys.service_rates();

    let mut upward = Vec::with_capacity(states / 2 * n);
    let mut downward = Vec::with_capacity(states / 2 * n);
    let mut lambda_total = Vec::with_capacity(states);
    let mut mu_total = Vec::with_capacity(states);
    let mut acc: Vec<Option<f64>> = vec![None; n];

    for v in 0..states as u32 {
        let l = StateIndex(v);
        let (lt, mt) = total_rates(sys, l);
        lambda_total.push(lt);
        mu_total.push(mt);

        for (node0, &f) in sys.demand_fractions().iter().enumerate() {
            if let Some(u) = sys.first_free0(node0, l) {
                let slot = &mut acc[u];
                *slot = Some(match *slot {
                    None => lambda * f,
                    Some(r) => r + lambda * f,
                });
            }
        }
        for (u, slot) in acc.iter_mut().enumerate() {
            if let Some(rate) = slot.take() {
                upward.push(Triple {
                    from: l,
                    to: StateIndex(v | 1 << u),
                    rate,
                });
            }
        }
        for (u, &rate) in nu.iter().enumerate() {
            if l.bit(u) {
                downward.push(Triple {
                    from: l,
                    to: StateIndex(v & !(1 << u)),
                    rate,
                });
            }
        }
    }
    upward.sort_unstable_by_key(Triple::sort_key);
    downward.sort_unstable_by_key(Triple::sort_key);

    Ok(TransitionSet {
        n_units: n,
        upward,
        downward,
        lambda_total,
        mu_total,
    })
}

/// On-demand generation of every triple whose destination is in `batch`.
///
/// For each destination `m`, downward inflow comes from toggling each free
/// unit of `m` to busy; upward inflow walks each node's preference list while
/// the listed unit is busy in `m`, crediting `f_j λ` to the source with that
/// unit cleared. Contributions to an existing `(from, to)` key accumulate.
/// Within one destination, triples are ordered by ascending source.
pub fn generate_for_states(sys: &ServiceSystem, batch: &[StateIndex]) -> BatchTransitions {
    let n = sys.n_units();
    let lambda = sys.arrival_rate();
    let nu = sys.service_rates();
    let mut out = BatchTransitions::default();
    // keyed by the toggled unit: the source is `m` with that bit cleared
    let mut acc: Vec<Option<f64>> = vec![None; n];

    for &m in batch {
        for (u, &rate) in nu.iter().enumerate() {
            if !m.bit(u) {
                out.downward.push(Triple {
                    from: StateIndex(m.0 | 1 << u),
                    to: m,
                    rate,
                });
            }
        }
        for (node0, &f) in sys.demand_fractions().iter().enumerate() {
            for &u in sys.pref_order0(node0) {
                let u = u as usize;
                if !m.bit(u) {
                    break;
                }
                let slot = &mut acc[u];
                *slot = Some(match *slot {
                    None => lambda * f,
                    Some(r) => r + lambda * f,
                });
            }
        }
        // descending unit = ascending source
        for u in (0..n).rev() {
            if let Some(rate) = acc[u].take() {
                out.upward.push(Triple {
                    from: StateIndex(m.0 & !(1 << u)),
                    to: m,
                    rate,
                });
            }
        }
    }
    out
}
