//! Experiment harness: instance generation, timed runs, CSV records.
//!
//! A suite is a JSON list of experiments. Every run becomes one
//! [`BenchRecord`]; failures are recorded in the `notes` column instead of
//! aborting the suite. Accuracy figures are kept as the compared vectors so
//! that the MPRE column can always be recomputed.

mod generator;

use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{solve_direct, DEFAULT_ORACLE_CAP};
use crate::error::{Error, Result};
use crate::metrics::{mpre, utilization};
use crate::model::ServiceSystem;
use crate::parallel::{amdahl_fit, solve_parallel, ParallelConfig};
use crate::simulator::{simulate, ServiceDistribution, SimConfig};
use crate::solver::{solve, SolverConfig, SteadyStateDistribution};

pub use generator::{InstanceGenerator, DEFAULT_ARRIVAL_RATE, DEFAULT_BASE_RATE};

pub const CSV_HEADER: &str =
    "experiment,instance_seed,N,J,rho,C,method,workers,batch,wall_ms,iters,mpre_pct,notes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub experiment: String,
    pub instance_seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub rho: f64,
    #[serde(rename = "C")]
    pub c: usize,
    pub method: String,
    pub workers: Option<usize>,
    pub batch: Option<usize>,
    pub wall_ms: Option<f64>,
    pub iters: Option<usize>,
    pub mpre_pct: Option<f64>,
    pub notes: String,
}

fn default_nodes() -> usize {
    10
}
fn default_repeats() -> usize {
    3
}
fn default_h() -> f64 {
    0.2
}
fn default_tol() -> f64 {
    1e-10
}

/// Instances shared by every experiment kind: the cartesian product of
/// `n_units`, `rho` and `seeds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceGrid {
    pub n_units: Vec<usize>,
    pub rho: Vec<f64>,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub buffer: usize,
    #[serde(default = "default_h")]
    pub heterogeneity: f64,
}

impl InstanceGrid {
    fn generators(&self) -> Vec<InstanceGenerator> {
        let seeds = if self.seeds.is_empty() {
            vec![0]
        } else {
            self.seeds.clone()
        };
        let mut out = Vec::new();
        for &n in &self.n_units {
            for &rho in &self.rho {
                for &seed in &seeds {
                    out.push(
                        InstanceGenerator::new(n, self.n_nodes, rho, seed)
                            .with_heterogeneity(self.heterogeneity)
                            .with_buffer(self.buffer),
                    );
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cpu,
    Parallel,
    Oracle,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Cpu => "cpu",
            Method::Parallel => "parallel",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Experiment {
    /// Solver methods against each other; MPRE is taken against the oracle
    /// when it ran, else against the CPU solver.
    Accuracy {
        id: String,
        #[serde(flatten)]
        grid: InstanceGrid,
        methods: Vec<Method>,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_repeats")]
        repeats: usize,
        #[serde(default)]
        workers: Option<usize>,
        #[serde(default)]
        batch_size: Option<usize>,
    },
    /// Simulated per-unit utilization against the analytic solution.
    Simulation {
        id: String,
        #[serde(flatten)]
        grid: InstanceGrid,
        distributions: Vec<String>,
        arrivals: u64,
        replications: usize,
        #[serde(default)]
        sim_seed: u64,
    },
    /// Parallel solver timings over worker counts, with an Amdahl fit.
    Scaling {
        id: String,
        #[serde(flatten)]
        grid: InstanceGrid,
        workers: Vec<usize>,
        batch_size: usize,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_repeats")]
        repeats: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub experiments: Vec<Experiment>,
}

#[derive(Debug, Clone, PartialEq)]
struct Comparison {
    reference: Arc<Vec<f64>>,
    candidate: Vec<f64>,
}

/// Records plus the vectors behind their MPRE column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SuiteResult {
    pub records: Vec<BenchRecord>,
    comparisons: Vec<Option<Comparison>>,
}

impl SuiteResult {
    fn push(&mut self, record: BenchRecord, comparison: Option<Comparison>) {
        self.records.push(record);
        self.comparisons.push(comparison);
    }

    /// Fills every `mpre_pct` from the stored vectors.
    pub fn recompute_mpre(&mut self) {
        for (r, c) in self.records.iter_mut().zip(&self.comparisons) {
            r.mpre_pct = c
                .as_ref()
                .and_then(|c| mpre(&c.reference, &c.candidate).ok());
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_csv(&self.records, w)
    }
}

pub fn write_csv<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(CSV_HEADER.split(','))?;
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<BenchRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::InvalidSpec(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        (xs[k / 2 - 1] + xs[k / 2]) / 2.0
    }
}

/// Runs `f` `repeats` times (at least once) and returns the last result with
/// the median wall time in milliseconds.
fn timed<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut times = Vec::new();
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = f()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        last = Some(out);
    }
    Ok((last.expect("ran at least once"), median(times)))
}

fn base_record(id: &str, g: &InstanceGenerator, method: &str) -> BenchRecord {
    BenchRecord {
        experiment: id.to_string(),
        instance_seed: g.seed,
        n: g.n_units,
        j: g.n_nodes,
        rho: g.rho,
        c: g.buffer_capacity,
        method: method.to_string(),
        workers: None,
        batch: None,
        wall_ms: None,
        iters: None,
        mpre_pct: None,
        notes: String::new(),
    }
}

fn default_workers() -> usize {
    std::env::var("HYPERQ_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&q| q > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

struct Run {
    record: BenchRecord,
    vector: Option<Vec<f64>>,
}

fn run_method(
    id: &str,
    g: &InstanceGenerator,
    sys: &ServiceSystem,
    method: Method,
    cfg: &SolverConfig,
    repeats: usize,
    workers: usize,
    batch: usize,
) -> Run {
    let mut record = base_record(id, g, method.name());
    let outcome: Result<(SteadyStateDistribution, Option<usize>, f64)> = match method {
        Method::Cpu => timed(repeats, || solve(sys, cfg)).map(|(s, t)| {
            let it = s.trace.iterations;
            (s.distribution, Some(it), t)
        }),
        Method::Parallel => {
            record.workers = Some(workers);
            record.batch = Some(batch);
            let pcfg = ParallelConfig::new(workers, batch, *cfg);
            timed(repeats, || solve_parallel(sys, &pcfg)).map(|(s, t)| {
                let it = s.solution.trace.iterations;
                (s.solution.distribution, Some(it), t)
            })
        }
        Method::Oracle => {
            if sys.n_units() > DEFAULT_ORACLE_CAP {
                Err(Error::OracleTooLarge {
                    n_units: sys.n_units(),
                    cap: DEFAULT_ORACLE_CAP,
                })
            } else {
                timed(repeats, || solve_direct(sys)).map(|(d, t)| (d, None, t))
            }
        }
    };
    match outcome {
        Ok((dist, iters, ms)) => {
            record.wall_ms = Some(ms);
            record.iters = iters;
            Run {
                record,
                vector: Some(dist.full_vector()),
            }
        }
        Err(e) => {
            record.notes = format!("error: {e}");
            Run {
                record,
                vector: None,
            }
        }
    }
}

fn savings(slow: f64, fast: f64) -> f64 {
    (slow - fast) / slow * 100.0
}

fn run_accuracy(
    out: &mut SuiteResult,
    id: &str,
    grid: &InstanceGrid,
    methods: &[Method],
    tol: f64,
    repeats: usize,
    workers: Option<usize>,
    batch_size: Option<usize>,
) {
    let cfg = SolverConfig::with_tolerance(tol);
    let workers = workers.unwrap_or_else(default_workers);
    for g in grid.generators() {
        let sys = match g.generate() {
            Ok(s) => s,
            Err(e) => {
                let mut r = base_record(id, &g, "generate");
                r.notes = format!("error: {e}");
                out.push(r, None);
                continue;
            }
        };
        let batch = batch_size.unwrap_or(crate::parallel::DEFAULT_BATCH_SIZE);
        let mut runs: Vec<(Method, Run)> = methods
            .iter()
            .map(|&m| {
                (
                    m,
                    run_method(id, &g, &sys, m, &cfg, repeats, workers, batch),
                )
            })
            .collect();
        let reference = [Method::Oracle, Method::Cpu].iter().find_map(|want| {
            runs.iter()
                .find(|(m, r)| m == want && r.vector.is_some())
                .map(|(m, r)| {
                    (
                        *m,
                        Arc::new(r.vector.clone().expect("checked")),
                        r.record.wall_ms,
                    )
                })
        });
        let time_of = |runs: &[(Method, Run)], m: Method| {
            runs.iter()
                .find(|(k, _)| *k == m)
                .and_then(|(_, r)| r.record.wall_ms)
        };
        let oracle_ms = time_of(&runs, Method::Oracle);
        let cpu_ms = time_of(&runs, Method::Cpu);
        for (m, run) in runs.iter_mut() {
            let mut notes = Vec::new();
            if !run.record.notes.is_empty() {
                notes.push(run.record.notes.clone());
            }
            if let (Method::Cpu, Some(o), Some(c)) = (*m, oracle_ms, run.record.wall_ms) {
                notes.push(format!("savings_vs_oracle_pct={:.3}", savings(o, c)));
            }
            if let (Method::Parallel, Some(c), Some(p)) = (*m, cpu_ms, run.record.wall_ms) {
                notes.push(format!("savings_vs_cpu_pct={:.3}", savings(c, p)));
            }
            run.record.notes = notes.join(";");
        }
        for (m, run) in runs {
            let comparison = match (&reference, run.vector) {
                (Some((rm, rv, _)), Some(v)) if *rm != m => Some(Comparison {
                    reference: Arc::clone(rv),
                    candidate: v,
                }),
                _ => None,
            };
            out.push(run.record, comparison);
        }
    }
}

fn run_simulation(
    out: &mut SuiteResult,
    id: &str,
    grid: &InstanceGrid,
    distributions: &[String],
    arrivals: u64,
    replications: usize,
    sim_seed: u64,
) {
    for g in grid.generators() {
        let analytic = g.generate().and_then(|sys| {
            let s = solve(&sys, &SolverConfig::with_tolerance(1e-10))?;
            Ok((utilization(&s.distribution, &sys), sys))
        });
        let (reference, sys) = match analytic {
            Ok((u, sys)) => (Arc::new(u), sys),
            Err(e) => {
                let mut r = base_record(id, &g, "cpu");
                r.notes = format!("error: {e}");
                out.push(r, None);
                continue;
            }
        };
        for name in distributions {
            let mut r = base_record(id, &g, &format!("sim-{name}"));
            let result = ServiceDistribution::parse(name).and_then(|distribution| {
                let cfg = SimConfig {
                    distribution,
                    arrivals,
                    replications,
                    seed: sim_seed,
                    ..Default::default()
                };
                timed(1, || simulate(&sys, &cfg))
            });
            match result {
                Ok((est, ms)) => {
                    r.wall_ms = Some(ms);
                    r.notes = format!(
                        "metric=utilization;replications={replications};arrivals={arrivals}"
                    );
                    let comparison = Comparison {
                        reference: Arc::clone(&reference),
                        candidate: est.mean_utilization(),
                    };
                    out.push(r, Some(comparison));
                }
                Err(e) => {
                    r.notes = format!("error: {e}");
                    out.push(r, None);
                }
            }
        }
    }
}

fn run_scaling(
    out: &mut SuiteResult,
    id: &str,
    grid: &InstanceGrid,
    workers: &[usize],
    batch_size: usize,
    tol: f64,
    repeats: usize,
) {
    let cfg = SolverConfig::with_tolerance(tol);
    for g in grid.generators() {
        let sys = match g.generate() {
            Ok(s) => s,
            Err(e) => {
                let mut r = base_record(id, &g, "generate");
                r.notes = format!("error: {e}");
                out.push(r, None);
                continue;
            }
        };
        let cpu = run_method(id, &g, &sys, Method::Cpu, &cfg, repeats, 1, batch_size);
        let reference = cpu.vector.clone().map(Arc::new);
        out.push(cpu.record, None);
        let mut samples = Vec::new();
        for &q in workers {
            let run = run_method(id, &g, &sys, Method::Parallel, &cfg, repeats, q, batch_size);
            if let Some(ms) = run.record.wall_ms {
                samples.push((q, ms));
            }
            let comparison = match (&reference, run.vector) {
                (Some(rv), Some(v)) => Some(Comparison {
                    reference: Arc::clone(rv),
                    candidate: v,
                }),
                _ => None,
            };
            out.push(run.record, comparison);
        }
        let mut r = base_record(id, &g, "amdahl");
        r.batch = Some(batch_size);
        r.notes = match amdahl_fit(&samples) {
            Ok(fit) => format!(
                "P={:.4};R2={:.4};c0_ms={:.4};c1_ms={:.4}",
                fit.parallel_fraction, fit.r_squared, fit.intercept, fit.slope
            ),
            Err(e) => format!("error: {e}"),
        };
        out.push(r, None);
    }
}

pub fn run_suite(spec: &SuiteSpec) -> SuiteResult {
    let mut out = SuiteResult::default();
    for e in &spec.experiments {
        match e {
            Experiment::Accuracy {
                id,
                grid,
                methods,
                tol,
                repeats,
                workers,
                batch_size,
            } => run_accuracy(
                &mut out,
                id,
                grid,
                methods,
                *tol,
                *repeats,
                *workers,
                *batch_size,
            ),
            Experiment::Simulation {
                id,
                grid,
                distributions,
                arrivals,
                replications,
                sim_seed,
            } => run_simulation(
                &mut out,
                id,
                grid,
                distributions,
                *arrivals,
                *replications,
                *sim_seed,
            ),
            Experiment::Scaling {
                id,
                grid,
                workers,
                batch_size,
                tol,
                repeats,
            } => run_scaling(&mut out, id, grid, workers, *batch_size, *tol, *repeats),
        }
    }
    out.recompute_mpre();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_suite() {
        let r = run_suite(&SuiteSpec {
            experiments: vec![],
        });
        assert!(r.records.is_empty());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), CSV_HEADER);
    }

    #[test]
    fn csv_round_trip() {
        let rec = BenchRecord {
            experiment: "a,b".into(),
            instance_seed: 7,
            n: 3,
            j: 2,
            rho: 0.1 + 0.2,
            c: 0,
            method: "cpu".into(),
            workers: None,
            batch: Some(4),
            wall_ms: Some(1.0 / 3.0),
            iters: Some(12),
            mpre_pct: Some(1.234e-9),
            notes: "x=\"1\"".into(),
        };
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&rec), &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), vec![rec]);
    }

    #[test]
    fn small_accuracy_suite() {
        let spec: SuiteSpec = serde_json::from_str(
            r#"{"experiments": [{"kind": "accuracy", "id": "acc", "n_units": [4, 5],
                "rho": [0.5], "methods": ["cpu", "parallel", "oracle"], "repeats": 1,
                "workers": 2, "batch_size": 3}]}"#,
        )
        .unwrap();
        let r = run_suite(&spec);
        assert_eq!(r.records.len(), 6);
        for rec in &r.records {
            assert!(rec.wall_ms.is_some(), "{rec:?}");
            if rec.method != "oracle" {
                assert!(rec.mpre_pct.unwrap() < 1e-4, "{rec:?}");
            }
        }
        assert!(r.records[0].notes.contains("savings_vs_oracle_pct"));
    }
}
