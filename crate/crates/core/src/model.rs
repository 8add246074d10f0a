//! Problem instances and the bitmask state space.
//!
//! A state of an `N`-unit system is an `N`-bit integer: bit `i - 1` is set when
//! unit `i` is busy. Units are numbered from 1 at every public boundary
//! (preference lists, neighbor reports); bit positions are 0-based internally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of units. `2^N` and all binomials fit in `u64`.
pub const MAX_UNITS: usize = 30;

const FRACTION_TOL: f64 = 1e-12;

/// Binomial coefficients `C(n, k)` for `0 <= k <= n <= MAX_UNITS`.
static BINOMIAL: [[u64; MAX_UNITS + 1]; MAX_UNITS + 1] = binomial_table();

const fn binomial_table() -> [[u64; MAX_UNITS + 1]; MAX_UNITS + 1] {
    let mut t = [[0u64; MAX_UNITS + 1]; MAX_UNITS + 1];
    let mut n = 0;
    while n <= MAX_UNITS {
        t[n][0] = 1;
        let mut k = 1;
        while k <= n {
            t[n][k] = t[n - 1][k - 1] + if k < n { t[n - 1][k] } else { 0 };
            k += 1;
        }
        n += 1;
    }
    t
}

/// `C(n, k)`; zero when `k > n`.
///
/// # Panics
/// If `n > MAX_UNITS`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        0
    } else {
        BINOMIAL[n][k]
    }
}

/// A hypercube vertex: bit `i - 1` holds the busy flag of unit `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateIndex(pub u32);

impl StateIndex {
    pub const EMPTY: StateIndex = StateIndex(0);

    pub fn all_busy(n_units: usize) -> StateIndex {
        StateIndex(((1u64 << n_units) - 1) as u32)
    }

    #[inline]
    pub fn value(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn as_usize(self) -> usize {
        self.0 as usize
    }

    /// Number of busy units.
    #[inline]
    pub fn weight(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Whether 1-based `unit` is busy.
    #[inline]
    pub fn is_busy(self, unit: usize) -> bool {
        debug_assert!(unit >= 1);
        self.0 >> (unit - 1) & 1 == 1
    }

    #[inline]
    pub(crate) fn bit(self, unit0: usize) -> bool {
        self.0 >> unit0 & 1 == 1
    }

    /// The state with the busy flag of 1-based `unit` negated.
    #[inline]
    pub fn toggled(self, unit: usize) -> StateIndex {
        StateIndex(self.0 ^ (1 << (unit - 1)))
    }

    /// Builds a state from the bit vector `[b_N, ..., b_1]` (most significant first).
    pub fn from_bits(bits: &[bool]) -> StateIndex {
        let mut v = 0u32;
        for &b in bits {
            v = (v << 1) | b as u32;
        }
        StateIndex(v)
    }

    /// The bit vector `[b_N, ..., b_1]`.
    pub fn to_bits(self, n_units: usize) -> Vec<bool> {
        (0..n_units).rev().map(|i| self.bit(i)).collect()
    }

    /// 1-based indices of busy units, ascending.
    pub fn busy_units(self) -> impl Iterator<Item = usize> {
        let v = self.0;
        (0..32).filter(move |i| v >> i & 1 == 1).map(|i| i + 1)
    }

    /// Position of this state inside its layer when the layer is listed in
    /// ascending integer order (colexicographic rank).
    pub fn layer_rank(self) -> usize {
        let mut v = self.0;
        let mut rank = 0u64;
        let mut k = 1;
        while v != 0 {
            let pos = v.trailing_zeros() as usize;
            rank += binomial(pos, k);
            k += 1;
            v &= v - 1;
        }
        rank as usize
    }
}

/// All states of one layer, ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerView {
    pub layer: usize,
    pub states: Vec<StateIndex>,
}

impl LayerView {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Enumerates every state with exactly `n` busy units out of `n_units`, in
/// ascending order, by stepping to the next integer with the same popcount.
pub fn layer_states(n_units: usize, n: usize) -> Result<LayerView> {
    if n_units > MAX_UNITS || n > n_units {
        return Err(Error::LayerOutOfRange {
            n_units,
            layer: n,
            cap: MAX_UNITS,
        });
    }
    let count = binomial(n_units, n) as usize;
    let mut states = Vec::with_capacity(count);
    if n == 0 {
        states.push(StateIndex::EMPTY);
    } else {
        let mut v: u64 = (1u64 << n) - 1;
        for _ in 0..count {
            states.push(StateIndex(v as u32));
            // Gosper's hack
            let c = v & v.wrapping_neg();
            let r = v + c;
            v = (((r ^ v) >> 2) / c) | r;
        }
    }
    Ok(LayerView { layer: n, states })
}

/// States reachable by one service completion, paired with the 1-based unit
/// that completes. Ordered by ascending resulting state.
pub fn down_neighbors(m: StateIndex) -> Vec<(StateIndex, usize)> {
    let mut out: Vec<_> = m.busy_units().map(|u| (m.toggled(u), u)).collect();
    out.reverse();
    out
}

/// States reachable by one dispatch, paired with the 1-based unit that becomes busy.
/// Ordered by ascending resulting state.
pub fn up_neighbors(m: StateIndex, n_units: usize) -> Vec<(StateIndex, usize)> {
    (1..=n_units)
        .filter(|&u| !m.is_busy(u))
        .map(|u| (m.toggled(u), u))
        .collect()
}

/// An unvalidated problem instance, as read from an instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    pub n_units: usize,
    pub n_nodes: usize,
    pub arrival_rate: f64,
    pub demand_fractions: Vec<f64>,
    pub service_rates: Vec<f64>,
    /// One row per node; entries are 1-based unit ids in preference order.
    pub preferences: Vec<Vec<usize>>,
    #[serde(default)]
    pub buffer_capacity: usize,
    /// `travel_times[i][j]`: time for unit `i + 1` to reach node `j + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub travel_times: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

/// A validated instance. Immutable; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSystem {
    raw: RawSystem,
    /// 0-based unit ids, per node, in preference order.
    pref0: Vec<Vec<u8>>,
    /// `rank0[j][i]`: 0-based preference position of 0-based unit `i` at node `j`.
    rank0: Vec<Vec<u8>>,
}

/// Checks an instance and builds the inverse-preference lookup.
pub fn validate(raw: RawSystem) -> Result<ServiceSystem> {
    let n = raw.n_units;
    let j = raw.n_nodes;
    if n == 0 || j == 0 {
        return Err(Error::DimensionMismatch(format!(
            "need at least one unit and one node (got N={n}, J={j})"
        )));
    }
    if n > MAX_UNITS {
        return Err(Error::StateSpaceTooLarge(format!(
            "{n} units exceeds the cap of {MAX_UNITS}"
        )));
    }
    if raw.demand_fractions.len() != j {
        return Err(Error::DimensionMismatch(format!(
            "{} demand fractions for {j} nodes",
            raw.demand_fractions.len()
        )));
    }
    if raw.service_rates.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} service rates for {n} units",
            raw.service_rates.len()
        )));
    }
    if raw.preferences.len() != j {
        return Err(Error::DimensionMismatch(format!(
            "{} preference rows for {j} nodes",
            raw.preferences.len()
        )));
    }
    if !(raw.arrival_rate.is_finite() && raw.arrival_rate > 0.0) {
        return Err(Error::NonPositiveRate {
            what: "arrival rate".into(),
            value: raw.arrival_rate,
        });
    }
    for (i, &nu) in raw.service_rates.iter().enumerate() {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::NonPositiveRate {
                what: format!("service rate of unit {}", i + 1),
                value: nu,
            });
        }
    }
    let sum: f64 = raw.demand_fractions.iter().sum();
    if raw
        .demand_fractions
        .iter()
        .any(|f| !f.is_finite() || *f < 0.0)
        || (sum - 1.0).abs() > FRACTION_TOL
    {
        return Err(Error::FractionsNotNormalized { sum });
    }

    let mut pref0 = Vec::with_capacity(j);
    let mut rank0 = Vec::with_capacity(j);
    for (node, row) in raw.preferences.iter().enumerate() {
        let bad = |detail: String| Error::NonPermutationPreference {
            node: node + 1,
            n_units: n,
            detail,
        };
        if row.len() != n {
            return Err(bad(format!("row has {} entries", row.len())));
        }
        let mut rank = vec![u8::MAX; n];
        let mut order = Vec::with_capacity(n);
        for (pos, &unit) in row.iter().enumerate() {
            if unit == 0 || unit > n {
                return Err(bad(format!("unit id {unit} out of range")));
            }
            if rank[unit - 1] != u8::MAX {
                return Err(bad(format!("unit {unit} repeated")));
            }
            rank[unit - 1] = pos as u8;
            order.push((unit - 1) as u8);
        }
        pref0.push(order);
        rank0.push(rank);
    }

    if let Some(tt) = &raw.travel_times {
        if tt.len() != n || tt.iter().any(|row| row.len() != j) {
            return Err(Error::DimensionMismatch(format!(
                "travel times must be {n}x{j}"
            )));
        }
        if tt.iter().flatten().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::DimensionMismatch(
                "travel times must be finite and non-negative".into(),
            ));
        }
    }

    Ok(ServiceSystem { raw, pref0, rank0 })
}

impl TryFrom<RawSystem> for ServiceSystem {
    type Error = Error;

    fn try_from(raw: RawSystem) -> Result<Self> {
        validate(raw)
    }
}

impl ServiceSystem {
    pub fn n_units(&self) -> usize {
        self.raw.n_units
    }

    pub fn n_nodes(&self) -> usize {
        self.raw.n_nodes
    }

    pub fn n_states(&self) -> usize {
        1usize << self.raw.n_units
    }

    pub fn arrival_rate(&self) -> f64 {
        self.raw.arrival_rate
    }

    pub fn demand_fractions(&self) -> &[f64] {
        &self.raw.demand_fractions
    }

    pub fn service_rates(&self) -> &[f64] {
        &self.raw.service_rates
    }

    /// Service rate of 1-based `unit`.
    pub fn service_rate(&self, unit: usize) -> f64 {
        self.raw.service_rates[unit - 1]
    }

    /// 1-based preference rows as supplied.
    pub fn preferences(&self) -> &[Vec<usize>] {
        &self.raw.preferences
    }

    pub fn buffer_capacity(&self) -> usize {
        self.raw.buffer_capacity
    }

    pub fn travel_times(&self) -> Option<&[Vec<f64>]> {
        self.raw.travel_times.as_deref()
    }

    /// Preference ranking (1-based) of 1-based `unit` at 1-based `node`.
    pub fn preference_rank(&self, node: usize, unit: usize) -> usize {
        self.rank0[node - 1][unit - 1] as usize + 1
    }

    pub(crate) fn pref_order0(&self, node0: usize) -> &[u8] {
        &self.pref0[node0]
    }

    pub(crate) fn rank_of0(&self, node0: usize, unit0: usize) -> usize {
        self.rank0[node0][unit0] as usize
    }

    pub fn total_service_rate(&self) -> f64 {
        self.raw.service_rates.iter().sum()
    }

    /// System utilization `λ / Σ ν_i`.
    pub fn utilization(&self) -> f64 {
        self.arrival_rate() / self.total_service_rate()
    }

    /// Total service-completion rate out of `m`: `Σ ν_i` over busy units.
    pub fn service_out_rate(&self, m: StateIndex) -> f64 {
        let mut total = 0.0;
        for (i, &nu) in self.raw.service_rates.iter().enumerate() {
            if m.bit(i) {
                total += nu;
            }
        }
        total
    }

    /// First free unit (0-based) in node `node0`'s preference order, if any.
    pub(crate) fn first_free0(&self, node0: usize, m: StateIndex) -> Option<usize> {
        self.pref0[node0]
            .iter()
            .map(|&u| u as usize)
            .find(|&u| !m.bit(u))
    }

    /// Whether every service rate is identical.
    pub fn is_homogeneous(&self) -> bool {
        let first = self.raw.service_rates[0];
        self.raw.service_rates.iter().all(|&nu| nu == first)
    }

    pub fn raw(&self) -> &RawSystem {
        &self.raw
    }

    pub fn into_raw(self) -> RawSystem {
        self.raw
    }

    /// Same instance with a different waiting capacity.
    pub fn with_buffer(&self, capacity: usize) -> ServiceSystem {
        let mut out = self.clone();
        out.raw.buffer_capacity = capacity;
        out
    }
}
