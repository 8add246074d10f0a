//! Master/worker version of the conditional-probability update.
//!
//! Each layer is cut into contiguous batches. For every layer the master
//! enqueues one coefficient task per batch, reduces the returned partial sums
//! in batch order, solves the scalar fixed point on `μ(n)` itself, and then
//! enqueues one finalize task per batch. Workers only ever see read-only
//! snapshots of the two neighbouring layers.

use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use crossbeam_channel::{unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{binomial, layer_states, ServiceSystem, StateIndex};
use crate::solver::kernel::{
    assemble_pass, coefficients, finalize, inner_fixed_point, BatchCoefficients, BatchResult,
    LayerAggregate, LayerEdges, LayerInputs, LayerPass,
};
use crate::solver::{run_outer, LayerRequest, Solution, SolverConfig};
use crate::transitions::{generate_for_states, DEFAULT_MEMORY_BUDGET};

/// States per task when none is requested.
pub const DEFAULT_BATCH_SIZE: usize = 4096;

/// What to do with per-batch transition lists after the first sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    /// Regenerate every batch on every sweep.
    Regenerate,
    /// Keep every batch after it is first generated.
    CacheAfterFirst,
    /// Cache while the estimated footprint stays under `budget` bytes.
    Auto { budget: usize },
}

impl Default for CachePolicy {
    fn default() -> Self {
        CachePolicy::Auto {
            budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub workers: usize,
    pub batch_size: usize,
    pub solver: SolverConfig,
    pub cache: CachePolicy,
    /// Makes the coefficient task of `(layer, batch)` panic.
    #[doc(hidden)]
    #[serde(skip)]
    pub inject_fault: Option<(usize, usize)>,
    /// Dispatches the tasks of each phase in reverse batch order.
    #[doc(hidden)]
    #[serde(skip)]
    pub reverse_dispatch: bool,
}

impl ParallelConfig {
    pub fn new(workers: usize, batch_size: usize, solver: SolverConfig) -> Self {
        ParallelConfig {
            workers,
            batch_size,
            solver,
            cache: CachePolicy::default(),
            inject_fault: None,
            reverse_dispatch: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "worker count and batch size must be positive".into(),
            ));
        }
        self.solver.validate()
    }
}

/// Wall-clock summary of one parallel solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub workers: usize,
    pub batch_size: usize,
    pub first_iteration_secs: f64,
    pub total_secs: f64,
    pub outer_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelSolution {
    pub solution: Solution,
    pub timing: TimingReport,
}

/// Splits layer `n` of an `N`-unit system into `ceil(C(N,n)/s)` contiguous
/// rank ranges, all of length `s` except possibly the last.
pub fn partition_layer(n: usize, n_units: usize, s: usize) -> Vec<Range<usize>> {
    assert!(s > 0, "batch size must be positive");
    let size = binomial(n_units, n) as usize;
    (0..size.div_ceil(s))
        .map(|b| b * s..((b + 1) * s).min(size))
        .collect()
}

/// Neighbour layers and rates shared by every task of one layer pass.
struct Snapshot {
    layer: usize,
    below: Arc<Vec<f64>>,
    above: Arc<Vec<f64>>,
    current: Arc<Vec<f64>>,
    lambda_below: f64,
    lambda_prev: f64,
    mu_above_prev: f64,
    mu_prev: f64,
}

impl Snapshot {
    fn inputs(&self) -> LayerInputs<'_> {
        LayerInputs {
            below: &self.below,
            above: &self.above,
            current: &self.current,
            lambda_below: self.lambda_below,
            lambda_prev: self.lambda_prev,
            mu_above_prev: self.mu_above_prev,
            mu_prev: self.mu_prev,
        }
    }
}

enum Task {
    Coefficients {
        batch: usize,
        range: Range<usize>,
        states: Arc<Vec<StateIndex>>,
        edges: Option<Arc<LayerEdges>>,
        snapshot: Arc<Snapshot>,
        fault: bool,
    },
    Finalize {
        batch: usize,
        edges: Arc<LayerEdges>,
        coeffs: BatchCoefficients,
        mu: f64,
        snapshot: Arc<Snapshot>,
    },
}

enum Output {
    Coefficients(Arc<LayerEdges>, BatchCoefficients),
    Finalized(BatchResult),
}

type Reply = (usize, std::result::Result<Output, Error>);

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}

fn run_task(sys: &ServiceSystem, task: Task) -> Reply {
    match task {
        Task::Coefficients {
            batch,
            range,
            states,
            edges,
            snapshot,
            fault,
        } => {
            let layer = snapshot.layer;
            let work = || -> Result<Output> {
                if fault {
                    panic!("injected fault");
                }
                let edges = match edges {
                    Some(e) => e,
                    None => {
                        let batch_states = &states[range.clone()];
                        let t = generate_for_states(sys, batch_states);
                        Arc::new(LayerEdges::build(
                            sys,
                            layer,
                            range.start,
                            batch_states,
                            &t.upward,
                            &t.downward,
                        )?)
                    }
                };
                let c = coefficients(&edges, &snapshot.inputs());
                Ok(Output::Coefficients(edges, c))
            };
            let out = match catch_unwind(AssertUnwindSafe(work)) {
                Ok(r) => r,
                Err(p) => Err(Error::WorkerFailure {
                    layer,
                    batch,
                    message: panic_message(p),
                }),
            };
            (batch, out)
        }
        Task::Finalize {
            batch,
            edges,
            coeffs,
            mu,
            snapshot,
        } => {
            let layer = snapshot.layer;
            let out = catch_unwind(AssertUnwindSafe(|| {
                Output::Finalized(finalize(&edges, &coeffs, mu, &snapshot.current))
            }))
            .map_err(|p| Error::WorkerFailure {
                layer,
                batch,
                message: panic_message(p),
            });
            (batch, out)
        }
    }
}

fn worker(sys: &ServiceSystem, tasks: Receiver<(Task, Sender<Reply>)>) {
    while let Ok((task, reply)) = tasks.recv() {
        if reply.send(run_task(sys, task)).is_err() {
            return;
        }
    }
}

struct Master<'a> {
    cfg: &'a ParallelConfig,
    tasks: Sender<(Task, Sender<Reply>)>,
    states: Vec<Arc<Vec<StateIndex>>>,
    partitions: Vec<Vec<Range<usize>>>,
    cache: Vec<Vec<Option<Arc<LayerEdges>>>>,
    cache_enabled: bool,
    cached_bytes: usize,
}

impl Master<'_> {
    /// Sends one task per batch and collects replies into batch order.
    fn round(&self, layer: usize, tasks: Vec<Task>) -> Result<Vec<Output>> {
        let count = tasks.len();
        let (reply_tx, reply_rx) = unbounded();
        let mut tasks: Vec<(usize, Task)> = tasks.into_iter().enumerate().collect();
        if self.cfg.reverse_dispatch {
            tasks.reverse();
        }
        for (b, task) in tasks {
            self.tasks
                .send((task, reply_tx.clone()))
                .map_err(|_| Error::WorkerFailure {
                    layer,
                    batch: b,
                    message: "worker pool shut down".into(),
                })?;
        }
        drop(reply_tx);
        let mut slots: Vec<Option<Output>> = (0..count).map(|_| None).collect();
        let mut first_error = None;
        for _ in 0..count {
            let (b, out) = reply_rx.recv().map_err(|_| Error::WorkerFailure {
                layer,
                batch: usize::MAX,
                message: "worker exited without replying".into(),
            })?;
            match out {
                Ok(o) => slots[b] = Some(o),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_error {
            return Err(e);
        }
        Ok(slots
            .into_iter()
            .map(|s| s.expect("every batch replied"))
            .collect())
    }

    fn pass(&mut self, req: &LayerRequest<'_>) -> Result<LayerPass> {
        let n = req.layer;
        let snapshot = Arc::new(Snapshot {
            layer: n,
            below: Arc::clone(req.below),
            above: Arc::clone(req.above),
            current: Arc::clone(req.current),
            lambda_below: req.lambda_below,
            lambda_prev: req.lambda_prev,
            mu_above_prev: req.mu_above_prev,
            mu_prev: req.mu_prev,
        });
        let ranges = &self.partitions[n];
        let count = ranges.len();

        let tasks = (0..count)
            .map(|b| Task::Coefficients {
                batch: b,
                range: ranges[b].clone(),
                states: Arc::clone(&self.states[n]),
                edges: self.cache[n][b].clone(),
                snapshot: Arc::clone(&snapshot),
                fault: self.cfg.inject_fault == Some((n, b)),
            })
            .collect();
        let outputs = self.round(n, tasks)?;

        let mut agg = LayerAggregate::default();
        let mut parts = Vec::with_capacity(count);
        for (b, out) in outputs.into_iter().enumerate() {
            let Output::Coefficients(edges, coeffs) = out else {
                unreachable!("coefficient round returns coefficients")
            };
            agg.push(&coeffs);
            if self.cache_enabled && self.cache[n][b].is_none() {
                self.cached_bytes += edges.footprint();
                if let CachePolicy::Auto { budget } = self.cfg.cache {
                    if self.cached_bytes > budget {
                        self.cache_enabled = false;
                        self.cache.iter_mut().flatten().for_each(|c| *c = None);
                    }
                }
                if self.cache_enabled {
                    self.cache[n][b] = Some(Arc::clone(&edges));
                }
            }
            parts.push((edges, coeffs));
        }

        let inner = inner_fixed_point(n, &agg, req.mu_prev, &self.cfg.solver)?;
        let tasks = parts
            .into_iter()
            .enumerate()
            .map(|(b, (edges, coeffs))| Task::Finalize {
                batch: b,
                edges,
                coeffs,
                mu: inner.mu_used,
                snapshot: Arc::clone(&snapshot),
            })
            .collect();
        let results = self.round(n, tasks)?;
        let results = results
            .into_iter()
            .map(|o| match o {
                Output::Finalized(r) => r,
                Output::Coefficients(..) => unreachable!("finalize round returns results"),
            })
            .collect();
        Ok(assemble_pass(results, &inner, snapshot.current.len()))
    }
}

/// Runs the master/worker solver with `cfg.workers` threads.
pub fn solve_parallel(sys: &ServiceSystem, cfg: &ParallelConfig) -> Result<ParallelSolution> {
    cfg.validate()?;
    let n_units = sys.n_units();
    let start = Instant::now();
    let mut first_iteration_secs = 0.0;

    let states = (0..=n_units)
        .map(|n| layer_states(n_units, n).map(|v| Arc::new(v.states)))
        .collect::<Result<Vec<_>>>()?;
    let partitions: Vec<_> = (0..=n_units)
        .map(|n| partition_layer(n, n_units, cfg.batch_size))
        .collect();
    let cache = partitions.iter().map(|p| vec![None; p.len()]).collect();
    let cache_enabled = cfg.cache != CachePolicy::Regenerate;

    let (task_tx, task_rx) = unbounded::<(Task, Sender<Reply>)>();
    let solution = std::thread::scope(|scope| {
        for _ in 0..cfg.workers {
            let rx = task_rx.clone();
            scope.spawn(move || worker(sys, rx));
        }
        drop(task_rx);
        let mut master = Master {
            cfg,
            tasks: task_tx,
            states,
            partitions,
            cache,
            cache_enabled,
            cached_bytes: 0,
        };
        let result = run_outer(
            sys,
            &cfg.solver,
            |req| master.pass(req),
            |k| {
                if k == 1 {
                    first_iteration_secs = start.elapsed().as_secs_f64();
                }
            },
        );
        drop(master);
        result
    })?;

    let timing = TimingReport {
        workers: cfg.workers,
        batch_size: cfg.batch_size,
        first_iteration_secs,
        total_secs: start.elapsed().as_secs_f64(),
        outer_iterations: solution.trace.iterations,
    };
    Ok(ParallelSolution { solution, timing })
}

/// Least-squares fit of `T = c0 + c1 / q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmdahlFit {
    /// Parallelizable fraction `1 / (1 + c0/c1)`.
    pub parallel_fraction: f64,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

impl AmdahlFit {
    /// Predicted speedup over one worker.
    pub fn speedup(&self, q: usize) -> f64 {
        let p = self.parallel_fraction;
        1.0 / (1.0 - p + p / q as f64)
    }
}

pub fn amdahl_fit(samples: &[(usize, f64)]) -> Result<AmdahlFit> {
    let mut distinct: Vec<usize> = samples.iter().map(|s| s.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 || distinct[0] == 0 {
        return Err(Error::InsufficientSamples(distinct.len()));
    }
    let k = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| 1.0 / s.0 as f64).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !(slope > 0.0) {
        return Err(Error::NegativeSlope { slope });
    }
    let r_squared = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(AmdahlFit {
        parallel_fraction: 1.0 / (1.0 + intercept / slope),
        intercept,
        slope,
        r_squared,
    })
}
