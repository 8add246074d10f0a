//! Exact stationary analysis of hypercube queueing models.
//!
//! A system of `N` service units and `J` demand nodes is a continuous-time
//! Markov chain on the `2^N` busy/free vectors. Grouping states by the number
//! of busy units turns it into a birth-death chain whose per-layer conditional
//! probabilities are found by a geometrically convergent fixed-point sweep
//! ([`solver::solve`], [`parallel::solve_parallel`]). A direct sparse solve
//! ([`baseline`]) and a discrete-event simulator ([`simulator`]) serve as
//! references.

pub mod baseline;
pub mod bench;
pub mod birthdeath;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod simulator;
pub mod solver;
pub mod transitions;

pub use error::{Error, Result};
pub use model::{validate, RawSystem, ServiceSystem, StateIndex};
pub use parallel::{solve_parallel, ParallelConfig, DEFAULT_BATCH_SIZE};
pub use solver::{solve, ConvergenceTrace, SolverConfig, SteadyStateDistribution};
