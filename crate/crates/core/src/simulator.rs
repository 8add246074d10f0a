//! Discrete-event simulation of the dispatch system.
//!
//! Calls arrive as a Poisson process, pick a node from the demand fractions
//! and take the first free unit in that node's preference list. With no free
//! unit the call is lost, or waits FCFS when the waiting room has space.
//! Occupancy is accumulated per hypercube state (plus one slot per queue
//! length) weighted by time.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{ServiceSystem, StateIndex};

/// Service-time family; parameters follow from each unit's rate `ν_i` so that
/// the mean is always `1/ν_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ServiceDistribution {
    /// Rate `ν_i`.
    Exponential,
    /// Uniform on `[0.75/ν_i, 1.25/ν_i]`.
    Uniform,
    /// `σ = 1`, `μ = -ln ν_i - 1/2`.
    LogNormal,
    /// Shape `α`, scale `1/(α ν_i)`.
    Gamma { shape: f64 },
}

impl ServiceDistribution {
    /// Parses `exp`, `uniform`, `lognormal` or `gamma:<shape>`.
    pub fn parse(s: &str) -> Result<Self> {
        let d = match s {
            "exp" | "exponential" => ServiceDistribution::Exponential,
            "uniform" => ServiceDistribution::Uniform,
            "lognormal" => ServiceDistribution::LogNormal,
            _ => match s.strip_prefix("gamma:") {
                Some(a) => ServiceDistribution::Gamma {
                    shape: a
                        .parse()
                        .map_err(|_| Error::InvalidSpec(format!("bad gamma shape {a:?}")))?,
                },
                None => return Err(Error::InvalidSpec(format!("unknown distribution {s:?}"))),
            },
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if let ServiceDistribution::Gamma { shape } = *self {
            if !(shape > 0.0 && shape.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "gamma shape must be positive, got {shape}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_exponential(&self) -> bool {
        matches!(self, ServiceDistribution::Exponential)
    }

    /// Analytical mean for rate `nu`.
    pub fn mean(&self, nu: f64) -> f64 {
        match *self {
            ServiceDistribution::Exponential => 1.0 / nu,
            ServiceDistribution::Uniform => (0.75 / nu + 1.25 / nu) / 2.0,
            ServiceDistribution::LogNormal => (-nu.ln() - 0.5 + 0.5).exp(),
            ServiceDistribution::Gamma { shape } => shape / (shape * nu),
        }
    }

    fn sampler(&self, nu: f64) -> Sampler {
        match *self {
            ServiceDistribution::Exponential => Sampler::Exp(Exp::new(nu).expect("positive rate")),
            ServiceDistribution::Uniform => Sampler::Uniform(
                Uniform::new_inclusive(0.75 / nu, 1.25 / nu).expect("finite bounds"),
            ),
            ServiceDistribution::LogNormal => {
                Sampler::LogNormal(LogNormal::new(-nu.ln() - 0.5, 1.0).expect("positive sigma"))
            }
            ServiceDistribution::Gamma { shape } => {
                Sampler::Gamma(Gamma::new(shape, 1.0 / (shape * nu)).expect("validated shape"))
            }
        }
    }
}

enum Sampler {
    Exp(Exp<f64>),
    Uniform(Uniform<f64>),
    LogNormal(LogNormal<f64>),
    Gamma(Gamma<f64>),
}

impl Sampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Exp(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::LogNormal(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
        }
    }
}

/// One service duration for a unit with rate `nu`.
pub fn sample_service<R: Rng>(dist: &ServiceDistribution, nu: f64, rng: &mut R) -> f64 {
    dist.sampler(nu).sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub distribution: ServiceDistribution,
    /// Arrivals per replication, warm-up included.
    pub arrivals: u64,
    pub replications: usize,
    pub seed: u64,
    /// Leading share of the expected horizon excluded from statistics.
    pub warmup_fraction: f64,
    /// Report mean response time; fails without travel times.
    pub response_time: bool,
    /// Threads for running replications; 0 uses the available parallelism.
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            distribution: ServiceDistribution::Exponential,
            arrivals: 100_000,
            replications: 20,
            seed: 0,
            warmup_fraction: 0.01,
            response_time: false,
            threads: 0,
        }
    }
}

/// Statistics of a single replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationEstimate {
    /// Time share per state: `2^N` hypercube states then `C` queue lengths.
    pub state_probabilities: Vec<f64>,
    pub utilization: Vec<f64>,
    pub mean_response_time: Option<f64>,
    pub lost_fraction: f64,
    /// Dispatches per unit after warm-up.
    pub dispatches: Vec<u64>,
    /// Observed time after warm-up.
    pub horizon: f64,
}

/// Across-replication mean and 95% half-width (absent with one replication).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: Option<f64>,
}

impl Interval {
    fn from_samples(xs: &[f64]) -> Interval {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let half_width = (xs.len() > 1).then(|| {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
            let t = StudentsT::new(0.0, 1.0, k - 1.0)
                .expect("positive degrees of freedom")
                .inverse_cdf(0.975);
            t * (var / k).sqrt()
        });
        Interval { mean, half_width }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.half_width.is_some_and(|h| (x - self.mean).abs() <= h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub replications: Vec<ReplicationEstimate>,
    pub state_probabilities: Vec<Interval>,
    pub utilization: Vec<Interval>,
    pub mean_response_time: Option<Interval>,
    pub lost_fraction: Interval,
}

impl SimEstimate {
    pub fn mean_state_probabilities(&self) -> Vec<f64> {
        self.state_probabilities.iter().map(|i| i.mean).collect()
    }

    pub fn mean_utilization(&self) -> Vec<f64> {
        self.utilization.iter().map(|i| i.mean).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival,
    Completion(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed so that BinaryHeap pops the earliest event, then the earliest inserted
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl EventQueue {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
        self.seq += 1;
    }
}

/// Stream ids: `rep << 8` for arrivals, `rep << 8 | (unit + 1)` for services.
fn stream_rng(seed: u64, rep: usize, lane: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((rep as u64) << 8) | lane as u64);
    rng
}

fn replicate(sys: &ServiceSystem, cfg: &SimConfig, rep: usize) -> ReplicationEstimate {
    let n = sys.n_units();
    let c = sys.buffer_capacity();
    let lambda = sys.arrival_rate();
    let states = sys.n_states();
    let tau = sys.travel_times();

    let mut arrival_rng = stream_rng(cfg.seed, rep, 0);
    let mut unit_rngs: Vec<_> = (0..n).map(|u| stream_rng(cfg.seed, rep, u + 1)).collect();
    let samplers: Vec<_> = sys
        .service_rates()
        .iter()
        .map(|&nu| cfg.distribution.sampler(nu))
        .collect();
    let interarrival = Exp::new(lambda).expect("positive arrival rate");
    let node_choice = WeightedIndex::new(sys.demand_fractions()).expect("normalized fractions");

    let warmup = cfg.warmup_fraction * cfg.arrivals as f64 / lambda;
    let mut occupancy = vec![0.0; states + c];
    let mut dispatches = vec![0u64; n];
    let mut response_sum = 0.0;
    let (mut offered, mut lost) = (0u64, 0u64);

    let mut events = EventQueue::default();
    let mut busy: u32 = 0;
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut now = 0.0f64;
    let mut arrived = 0u64;

    events.push(interarrival.sample(&mut arrival_rng), EventKind::Arrival);

    let mut dispatch =
        |unit: usize, node: usize, at: f64, events: &mut EventQueue, counted: bool| {
            let d = samplers[unit].sample(&mut unit_rngs[unit]);
            events.push(at + d, EventKind::Completion(unit));
            if counted {
                dispatches[unit] += 1;
                if let Some(t) = tau {
                    response_sum += t[unit][node];
                }
            }
        };

    while let Some(ev) = events.heap.pop() {
        let state = if queue.is_empty() {
            busy as usize
        } else {
            states + queue.len() - 1
        };
        let from = now.max(warmup);
        if ev.time > from {
            occupancy[state] += ev.time - from;
        }
        now = ev.time;
        let counted = now >= warmup;
        match ev.kind {
            EventKind::Arrival => {
                arrived += 1;
                let node = node_choice.sample(&mut arrival_rng);
                if counted {
                    offered += 1;
                }
                match sys.first_free0(node, StateIndex(busy)) {
                    Some(u) => {
                        busy |= 1 << u;
                        dispatch(u, node, now, &mut events, counted);
                    }
                    None if queue.len() < c => queue.push_back(node),
                    None => lost += counted as u64,
                }
                if arrived < cfg.arrivals {
                    events.push(
                        now + interarrival.sample(&mut arrival_rng),
                        EventKind::Arrival,
                    );
                }
            }
            EventKind::Completion(u) => match queue.pop_front() {
                Some(node) => dispatch(u, node, now, &mut events, counted),
                None => busy &= !(1 << u),
            },
        }
        if arrived >= cfg.arrivals && matches!(ev.kind, EventKind::Arrival) {
            break;
        }
    }

    let horizon: f64 = occupancy.iter().sum();
    let state_probabilities: Vec<f64> = occupancy.iter().map(|t| t / horizon).collect();
    let tail: f64 = state_probabilities[states..].iter().sum();
    let mut utilization = vec![tail; n];
    for (v, &p) in state_probabilities[..states].iter().enumerate() {
        for (u, rho) in utilization.iter_mut().enumerate() {
            if v >> u & 1 == 1 {
                *rho += p;
            }
        }
    }
    let served: u64 = dispatches.iter().sum();
    ReplicationEstimate {
        state_probabilities,
        utilization,
        mean_response_time: (cfg.response_time && served > 0).then(|| response_sum / served as f64),
        lost_fraction: if offered > 0 {
            lost as f64 / offered as f64
        } else {
            0.0
        },
        dispatches,
        horizon,
    }
}

/// Runs `cfg.replications` independent replications and aggregates them.
pub fn simulate(sys: &ServiceSystem, cfg: &SimConfig) -> Result<SimEstimate> {
    cfg.distribution.validate()?;
    if !cfg.distribution.is_exponential() && sys.buffer_capacity() > 0 {
        return Err(Error::InvalidSpec(
            "non-exponential service times require a zero-capacity waiting room".into(),
        ));
    }
    if cfg.response_time && sys.travel_times().is_none() {
        return Err(Error::MissingTravelTimes);
    }
    if cfg.replications == 0 || cfg.arrivals == 0 {
        return Err(Error::InvalidSpec(
            "need at least one replication and one arrival".into(),
        ));
    }
    if !(0.0..1.0).contains(&cfg.warmup_fraction) {
        return Err(Error::InvalidSpec(format!(
            "warm-up fraction must lie in [0, 1), got {}",
            cfg.warmup_fraction
        )));
    }

    let threads = if cfg.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        cfg.threads
    }
    .min(cfg.replications);

    let mut reps: Vec<Option<ReplicationEstimate>> = vec![None; cfg.replications];
    std::thread::scope(|scope| {
        for (t, chunk) in reps
            .chunks_mut(cfg.replications.div_ceil(threads))
            .enumerate()
        {
            let base = t * cfg.replications.div_ceil(threads);
            scope.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(replicate(sys, cfg, base + i));
                }
            });
        }
    });
    let replications: Vec<ReplicationEstimate> =
        reps.into_iter().map(|r| r.expect("filled")).collect();

    let column = |f: &dyn Fn(&ReplicationEstimate) -> f64| {
        Interval::from_samples(&replications.iter().map(f).collect::<Vec<_>>())
    };
    let dim = replications[0].state_probabilities.len();
    let state_probabilities = (0..dim)
        .map(|s| column(&|r| r.state_probabilities[s]))
        .collect();
    let utilization = (0..sys.n_units())
        .map(|u| column(&|r| r.utilization[u]))
        .collect();
    let mean_response_time = cfg
        .response_time
        .then(|| column(&|r| r.mean_response_time.unwrap_or(f64::NAN)));
    let lost_fraction = column(&|r| r.lost_fraction);
    Ok(SimEstimate {
        replications,
        state_probabilities,
        utilization,
        mean_response_time,
        lost_fraction,
    })
}
