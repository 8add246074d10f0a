//! Direct solution of the full balance equations, used as a reference.
//!
//! Unknowns are the `2^N` hypercube states (indexed by state value) followed
//! by the `C` waiting-room states. The balance row of the all-idle state is
//! replaced by the normalization constraint and the system is solved with a
//! sparse LU factorization.

use std::collections::BTreeMap;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};
use crate::model::{ServiceSystem, StateIndex};
use crate::solver::SteadyStateDistribution;
use crate::transitions::generate_full;

/// Largest number of units the oracle accepts by default.
pub const DEFAULT_ORACLE_CAP: usize = 14;

const RESIDUAL_TOL: f64 = 1e-10;

/// Balance equations in coordinate form.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceSystem {
    pub n_units: usize,
    pub buffer: usize,
    pub dim: usize,
    /// Generator entries `(row, col, value)`: row `t` collects inflow into
    /// `t` from column `s`, and the diagonal holds minus the total outflow.
    pub generator: Vec<(usize, usize, f64)>,
}

impl BalanceSystem {
    /// Row sums of the generator's transpose; every entry is zero.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.dim];
        for &(_, c, v) in &self.generator {
            sums[c] += v;
        }
        sums
    }

    /// The coefficient matrix with row 0 replaced by ones, and its right-hand side.
    pub fn normalized(&self) -> (Vec<(usize, usize, f64)>, Vec<f64>) {
        let mut entries: Vec<_> = self
            .generator
            .iter()
            .copied()
            .filter(|e| e.0 != 0)
            .collect();
        entries.extend((0..self.dim).map(|c| (0, c, 1.0)));
        let mut rhs = vec![0.0; self.dim];
        rhs[0] = 1.0;
        (entries, rhs)
    }

    /// `‖A x - b‖∞` for the normalized system.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let (entries, rhs) = self.normalized();
        let mut r: Vec<f64> = rhs.iter().map(|b| -b).collect();
        for (row, col, v) in entries {
            r[row] += v * x[col];
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn assemble(sys: &ServiceSystem) -> Result<BalanceSystem> {
    assemble_with_cap(sys, DEFAULT_ORACLE_CAP)
}

pub fn assemble_with_cap(sys: &ServiceSystem, cap: usize) -> Result<BalanceSystem> {
    let n = sys.n_units();
    if n > cap {
        return Err(Error::OracleTooLarge { n_units: n, cap });
    }
    let c = sys.buffer_capacity();
    let states = sys.n_states();
    let dim = states + c;
    let lambda = sys.arrival_rate();
    let full = states - 1;
    let total_nu = sys.total_service_rate();
    let set = generate_full(sys)?;

    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut add = |row: usize, col: usize, v: f64| *acc.entry((row, col)).or_insert(0.0) += v;

    for t in set.upward.iter().chain(&set.downward) {
        add(t.to.as_usize(), t.from.as_usize(), t.rate);
    }
    for s in 0..states {
        let mut out = set.lambda_total[s] + set.mu_total[s];
        if s == full && c > 0 {
            out += lambda;
        }
        add(s, s, -out);
    }
    // waiting room: index states + k - 1 holds k queued calls
    for k in 1..=c {
        let idx = states + k - 1;
        let below = if k == 1 { full } else { idx - 1 };
        add(idx, below, lambda);
        add(below, idx, total_nu);
        let out = total_nu + if k < c { lambda } else { 0.0 };
        add(idx, idx, -out);
    }

    Ok(BalanceSystem {
        n_units: n,
        buffer: c,
        dim,
        generator: acc.into_iter().map(|((r, c), v)| (r, c, v)).collect(),
    })
}

/// Solves the balance equations and checks the residual.
pub fn solve_direct(sys: &ServiceSystem) -> Result<SteadyStateDistribution> {
    let balance = assemble(sys)?;
    let x = solve_balance(&balance)?;
    Ok(distribution_from_vector(sys, &x))
}

pub fn solve_balance(balance: &BalanceSystem) -> Result<Vec<f64>> {
    let (entries, rhs) = balance.normalized();
    let triplets: Vec<_> = entries
        .iter()
        .map(|&(row, col, val)| Triplet { row, col, val })
        .collect();
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(balance.dim, balance.dim, &triplets)
        .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
    let lu = a
        .sp_lu()
        .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
    let mut b = Mat::<f64>::from_fn(balance.dim, 1, |i, _| rhs[i]);
    lu.solve_in_place(b.as_mut());
    let x: Vec<f64> = (0..balance.dim).map(|i| b[(i, 0)]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }
    let residual = balance.residual(&x);
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::SingularSystem(format!("residual {residual:e}")));
    }
    Ok(x)
}

/// Splits a solution vector into state and waiting-room probabilities.
pub fn distribution_from_vector(sys: &ServiceSystem, x: &[f64]) -> SteadyStateDistribution {
    let n = sys.n_units();
    let states = sys.n_states();
    let mut layer_marginals = vec![0.0; n + 1];
    for (v, &p) in x[..states].iter().enumerate() {
        layer_marginals[StateIndex(v as u32).weight()] += p;
    }
    layer_marginals.extend_from_slice(&x[states..]);
    SteadyStateDistribution {
        n_units: n,
        probabilities: x[..states].to_vec(),
        queue_tail: x[states..].to_vec(),
        layer_marginals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tests::raw, validate};

    fn close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-13, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn single_unit_loss_and_buffer() {
        let sys = validate(raw(1, vec![1.0], vec![1.0], vec![vec![1]])).unwrap();
        let b = assemble(&sys).unwrap();
        assert_eq!(b.dim, 2);
        close(&solve_direct(&sys).unwrap().probabilities, &[0.5, 0.5]);
        let d = solve_direct(&sys.with_buffer(1)).unwrap();
        close(&d.full_vector(), &[1.0 / 3.0; 3]);
        close(&d.queue_tail, &[1.0 / 3.0]);
    }

    #[test]
    fn two_unit_homogeneous() {
        let sys = validate(raw(2, vec![1.0], vec![1.0, 1.0], vec![vec![1, 2]])).unwrap();
        close(
            &solve_direct(&sys).unwrap().probabilities,
            &[0.4, 0.3, 0.1, 0.2],
        );
    }

    #[test]
    fn generator_columns_sum_to_zero() {
        let sys = validate(raw(
            3,
            vec![0.2, 0.8],
            vec![1.0, 2.0, 3.0],
            vec![vec![1, 2, 3], vec![2, 3, 1]],
        ))
        .unwrap()
        .with_buffer(2);
        let b = assemble(&sys).unwrap();
        assert!(b.column_sums().iter().all(|s| s.abs() < 1e-14));
        for row in 0..8 {
            let off = b
                .generator
                .iter()
                .filter(|e| e.0 == row && e.1 != row)
                .count();
            assert!(off <= 3 + 1);
        }
    }

    #[test]
    fn cap_enforced() {
        let n = 15;
        let sys = validate(raw(n, vec![1.0], vec![1.0; n], vec![(1..=n).collect()])).unwrap();
        assert!(matches!(assemble(&sys), Err(Error::OracleTooLarge { .. })));
    }
}
