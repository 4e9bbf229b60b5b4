//! Event-driven Monte Carlo of the controlled storage process.
//!
//! Between shocks the store recharges at rate `r` up to capacity, so the
//! state at each arrival is exact. Each replication draws from its own
//! ChaCha8 stream selected by the replication index, which keeps results
//! independent of thread scheduling.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::dp::PolicyTable;
use crate::error::{invalid, precondition, Result};
use crate::model::{ShockDistribution, StageCost, SystemParams};

/// Withdrawal rule used during simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum SimPolicy {
    Myopic,
    Zero,
    /// Bilinear lookup, then clamped to `[0, min{s, w}]`.
    Table(PolicyTable),
}

impl SimPolicy {
    /// Feasible withdrawal and whether it had to be clamped.
    #[inline]
    fn decide(&self, s: f64, w: f64) -> (f64, bool) {
        match self {
            SimPolicy::Myopic => (s.min(w), false),
            SimPolicy::Zero => (0.0, false),
            SimPolicy::Table(t) => {
                let (u, outside) = t.interpolate(s, w);
                let c = u.clamp(0.0, s.min(w));
                (c, outside || (c - u).abs() > 1e-12)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Fixed simulated time.
    Time(f64),
    /// Long enough that the discounted cost beyond it is at most `epsilon`.
    Tail { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: SystemParams,
    pub cost: StageCost,
    pub policy: SimPolicy,
    pub initial_s: f64,
    pub horizon: Horizon,
    pub seed: u64,
    /// Shocks before this time are left out of the blackout statistics.
    pub burn_in: f64,
    pub replications: usize,
    pub bins: usize,
    /// Thresholds listed in the summary's tail table.
    pub tail_thresholds: Vec<f64>,
}

impl SimConfig {
    /// Defaults: tail target `1e-6`, burn-in `20/θ`, `10⁴` replications,
    /// 20 histogram bins, tail thresholds at 10/25/50/75/90 % of `B`.
    pub fn new(params: SystemParams, cost: StageCost, policy: SimPolicy, initial_s: f64, seed: u64) -> Self {
        let b = params.b();
        let burn_in = 20.0 / params.theta;
        SimConfig {
            params,
            cost,
            policy,
            initial_s,
            horizon: Horizon::Tail { epsilon: 1e-6 },
            seed,
            burn_in,
            replications: 10_000,
            bins: 20,
            tail_thresholds: [0.1, 0.25, 0.5, 0.75, 0.9].iter().map(|f| f * b).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.cost.validate()?;
        let s_bar = self.params.s_bar;
        if !(self.initial_s >= 0.0 && self.initial_s <= s_bar) {
            return Err(invalid(format!("initial storage {} outside [0, {s_bar}]", self.initial_s)));
        }
        match self.horizon {
            Horizon::Time(t) if !(t >= 0.0 && t.is_finite()) => {
                return Err(invalid(format!("horizon must be finite and >= 0, got {t}")));
            }
            Horizon::Tail { epsilon } if !(epsilon > 0.0) => {
                return Err(invalid(format!("tail target must be positive, got {epsilon}")));
            }
            _ => {}
        }
        if !(self.burn_in >= 0.0) {
            return Err(invalid(format!("burn-in must be >= 0, got {}", self.burn_in)));
        }
        if self.replications == 0 {
            return Err(invalid("at least one replication is required"));
        }
        if self.bins == 0 {
            return Err(invalid("at least one histogram bin is required"));
        }
        if let SimPolicy::Table(t) = &self.policy {
            if t.u_values.len() != t.grid.n_s() * t.grid.n_w() {
                return Err(invalid("policy table size does not match its grid"));
            }
        }
        Ok(())
    }

    /// Simulated time span of one replication.
    pub fn horizon_time(&self) -> f64 {
        match self.horizon {
            Horizon::Time(t) => t,
            Horizon::Tail { epsilon } => tail_horizon(&self.params, &self.cost, epsilon),
        }
    }
}

/// `T = ln(Q·g(B)/(θ·ε)) / θ`: the discounted cost after `T` is at most `ε`.
pub fn tail_horizon(params: &SystemParams, cost: &StageCost, epsilon: f64) -> f64 {
    let ratio = params.q_rate * cost.value(params.b()) / (params.theta * epsilon);
    if ratio > 1.0 {
        ratio.ln() / params.theta
    } else {
        0.0
    }
}

/// Everything recorded by one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub discounted_cost: f64,
    pub n_events: usize,
    /// Blackout sizes of the shocks after burn-in, in arrival order.
    pub blackouts: Vec<f64>,
    /// Sum of pre-shock storage levels over the same shocks.
    pub storage_sum: f64,
    pub clamp_count: usize,
}

impl ReplicationOutcome {
    /// Fraction of recorded shocks whose blackout satisfies `pred`; zero when
    /// nothing was recorded.
    pub fn fraction(&self, pred: impl Fn(f64) -> bool) -> f64 {
        if self.blackouts.is_empty() {
            return 0.0;
        }
        self.blackouts.iter().filter(|&&x| pred(x)).count() as f64 / self.blackouts.len() as f64
    }
}

#[inline]
fn draw_shock<R: Rng>(dist: &ShockDistribution, rng: &mut R) -> f64 {
    match dist {
        ShockDistribution::Deterministic { value } => *value,
        ShockDistribution::Uniform { a, b } => a + (b - a) * rng.random::<f64>(),
        ShockDistribution::Discrete { points } => {
            let x: f64 = rng.random();
            let mut acc = 0.0;
            for &(v, p) in points {
                acc += p;
                if x < acc {
                    return v;
                }
            }
            points.iter().rev().find(|(_, p)| *p > 0.0).map_or(0.0, |(v, _)| *v)
        }
    }
}

/// Runs replication `rep` of `config`.
pub fn simulate_replication(config: &SimConfig, rep: u64) -> ReplicationOutcome {
    simulate_replication_until(config, rep, config.horizon_time())
}

fn simulate_replication_until(config: &SimConfig, rep: u64, horizon: f64) -> ReplicationOutcome {
    let params = &config.params;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(rep);
    let inter_arrival = Exp::new(params.q_rate).expect("arrival rate validated positive");
    let theta = params.theta;
    let mut t = 0.0;
    let mut s = config.initial_s;
    let mut out = ReplicationOutcome {
        discounted_cost: 0.0,
        n_events: 0,
        blackouts: Vec::new(),
        storage_sum: 0.0,
        clamp_count: 0,
    };
    loop {
        let dt: f64 = inter_arrival.sample(&mut rng);
        t += dt;
        if t > horizon {
            break;
        }
        s = (s + params.r * dt).min(params.s_bar);
        let w = draw_shock(&params.shock, &mut rng);
        let (u, clamped) = config.policy.decide(s, w);
        out.clamp_count += clamped as usize;
        let size = w - u;
        out.discounted_cost += (-theta * t).exp() * config.cost.value(size);
        out.n_events += 1;
        if t >= config.burn_in {
            out.blackouts.push(size);
            out.storage_sum += s;
        }
        s -= u;
    }
    out
}

/// Per-shock blackout statistics pooled over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlackoutStats {
    pub n_shocks: usize,
    pub zero_blackout_fraction: f64,
    /// `bins + 1` equally spaced edges over `[0, B]`.
    pub bin_edges: Vec<f64>,
    /// Fraction of all shocks whose positive blackout falls in
    /// `(edge_k, edge_{k+1}]`. Together with the zero fraction these sum to 1.
    pub masses: Vec<f64>,
    pub discounted_cost_estimate: f64,
    pub stderr: f64,
    pub mean_storage_level: f64,
    pub clamp_count: usize,
    pub tail_thresholds: Vec<f64>,
    #[serde(skip)]
    sorted_sizes: Vec<f64>,
}

/// Blackouts smaller than this (relative to `max(B, 1)`) count as fully
/// covered, so interpolation round-off in table policies does not register.
pub const ZERO_BLACKOUT_TOL: f64 = 1e-9;

impl BlackoutStats {
    /// Fraction of shocks whose blackout is at least `x`.
    pub fn tail_probability(&self, x: f64) -> f64 {
        if self.n_shocks == 0 {
            return 0.0;
        }
        let below = self.sorted_sizes.partition_point(|&v| v < x);
        (self.n_shocks - below) as f64 / self.n_shocks as f64
    }

    /// Fraction of shocks with blackout in `(lo, hi]`.
    pub fn fraction_between(&self, lo: f64, hi: f64) -> f64 {
        if self.n_shocks == 0 {
            return 0.0;
        }
        let a = self.sorted_sizes.partition_point(|&v| v <= lo);
        let b = self.sorted_sizes.partition_point(|&v| v <= hi);
        b.saturating_sub(a) as f64 / self.n_shocks as f64
    }

    pub fn write_histogram_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_low,bin_high,mass")?;
        for (k, m) in self.masses.iter().enumerate() {
            writeln!(out, "{},{},{m}", self.bin_edges[k], self.bin_edges[k + 1])?;
        }
        Ok(())
    }

    pub fn summary(&self) -> BlackoutSummary {
        BlackoutSummary {
            n_shocks: self.n_shocks,
            zero_blackout_fraction: self.zero_blackout_fraction,
            tail: self
                .tail_thresholds
                .iter()
                .map(|&threshold| TailPoint { threshold, prob: self.tail_probability(threshold) })
                .collect(),
            discounted_cost: self.discounted_cost_estimate,
            stderr: self.stderr,
            clamp_count: self.clamp_count,
            mean_storage_level: self.mean_storage_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailPoint {
    pub threshold: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlackoutSummary {
    pub n_shocks: usize,
    pub zero_blackout_fraction: f64,
    pub tail: Vec<TailPoint>,
    pub discounted_cost: f64,
    pub stderr: f64,
    pub clamp_count: usize,
    pub mean_storage_level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub discounted_cost: f64,
    pub stderr: f64,
    pub horizon: f64,
    pub clamp_count: usize,
    pub stats: BlackoutStats,
    /// Ordered by replication index.
    pub replications: Vec<ReplicationOutcome>,
}

/// Sample mean and its standard error.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Mean and standard error of `a[k] − b[k]`.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(precondition("paired samples differ in length"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(mean_and_stderr(&d))
}

fn pool(config: &SimConfig, reps: &[ReplicationOutcome]) -> BlackoutStats {
    let b = config.params.b();
    let zero_tol = ZERO_BLACKOUT_TOL * b.max(1.0);
    let mut sizes: Vec<f64> = reps.iter().flat_map(|r| r.blackouts.iter().copied()).collect();
    sizes.sort_by(f64::total_cmp);
    let n = sizes.len();
    let costs: Vec<f64> = reps.iter().map(|r| r.discounted_cost).collect();
    let (mean, se) = mean_and_stderr(&costs);
    let bin_edges: Vec<f64> = (0..=config.bins).map(|k| b * k as f64 / config.bins as f64).collect();
    let mut counts = vec![0usize; config.bins];
    let mut zeros = 0usize;
    for &x in &sizes {
        if x <= zero_tol {
            zeros += 1;
            continue;
        }
        let k = if b > 0.0 { ((x / b * config.bins as f64).ceil() as usize).clamp(1, config.bins) - 1 } else { 0 };
        counts[k] += 1;
    }
    let denom = n.max(1) as f64;
    let storage: f64 = reps.iter().map(|r| r.storage_sum).sum();
    BlackoutStats {
        n_shocks: n,
        zero_blackout_fraction: if n == 0 { 0.0 } else { zeros as f64 / denom },
        bin_edges,
        masses: counts.iter().map(|&c| c as f64 / denom).collect(),
        discounted_cost_estimate: mean,
        stderr: se,
        mean_storage_level: if n == 0 { 0.0 } else { storage / denom },
        clamp_count: reps.iter().map(|r| r.clamp_count).sum(),
        tail_thresholds: config.tail_thresholds.clone(),
        sorted_sizes: sizes,
    }
}

/// Runs `config.replications` independent replications in parallel and
/// aggregates them in replication order.
pub fn simulate(config: &SimConfig) -> Result<SimulationResult> {
    config.validate()?;
    let horizon = config.horizon_time();
    let replications: Vec<ReplicationOutcome> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| simulate_replication_until(config, rep, horizon))
        .collect();
    let stats = pool(config, &replications);
    Ok(SimulationResult {
        discounted_cost: stats.discounted_cost_estimate,
        stderr: stats.stderr,
        horizon,
        clamp_count: stats.clamp_count,
        stats,
        replications,
    })
}

/// Stationary blackout statistics from `n_replications` runs of `config`.
pub fn blackout_distribution(config: &SimConfig, n_replications: usize) -> Result<BlackoutStats> {
    if config.burn_in >= config.horizon_time() {
        return Err(precondition("burn-in must end before the horizon"));
    }
    let cfg = SimConfig { replications: n_replications, ..config.clone() };
    Ok(simulate(&cfg)?.stats)
}
