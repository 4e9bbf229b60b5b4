//! Experiment runners behind the subcommands. Each returns its results in
//! memory and, when given an output directory, writes the artifacts.

use std::time::Instant;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;
use storage_reliability::sim::mean_and_stderr;
use storage_reliability::{
    compute_kernel, kernel_to_policy, simulate, solve, verify_collapse, verify_theorems, CollapseReport, Horizon,
    KernelPolicy, Problem, ShockDistribution, SimConfig, SimPolicy, SimulationResult, Solution, SolveStatus,
    StageCost, SystemParams, VerificationReport,
};

use crate::config::{Config, PolicyChoice, SweepConfig, SweepKind};
use crate::output::OutputDir;

#[derive(Debug, Clone, Serialize)]
struct Timing {
    wall_seconds: f64,
}

fn write_timing(out: Option<&OutputDir>, started: Instant) -> anyhow::Result<()> {
    if let Some(out) = out {
        out.json("timing.json", &Timing { wall_seconds: started.elapsed().as_secs_f64() })?;
    }
    Ok(())
}

pub struct SolveOutcome {
    pub problem: Problem,
    pub solution: Solution,
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        self.solution.value.converged()
    }
}

#[derive(Debug, Serialize)]
struct SolveMeta<'a> {
    status: SolveStatus,
    iterations: usize,
    sup_norm_residual: f64,
    error_bound: f64,
    n_s: usize,
    n_w: usize,
    tol: f64,
    max_iter: usize,
    expected_stage_cost: f64,
    scenario: Option<&'a str>,
}

fn solve_problem(cfg: &Config, problem: Problem) -> anyhow::Result<SolveOutcome> {
    let solution = solve(&problem, cfg.solver.into())?;
    Ok(SolveOutcome { problem, solution })
}

/// Value iteration on the configured instance; writes `value.csv`,
/// `cost.csv`, `policy.csv` and `solve.json`.
pub fn run_solve(cfg: &Config, out: Option<&OutputDir>) -> anyhow::Result<SolveOutcome> {
    let started = Instant::now();
    let outcome = solve_problem(cfg, cfg.problem()?)?;
    if let Some(out) = out {
        let v = &outcome.solution.value;
        out.csv("value.csv", |w| v.write_value_csv(w))?;
        out.csv("cost.csv", |w| v.write_cost_csv(w))?;
        out.csv("policy.csv", |w| outcome.solution.policy.write_csv(w))?;
        out.json(
            "solve.json",
            &SolveMeta {
                status: v.status,
                iterations: v.iteration_count,
                sup_norm_residual: v.sup_norm_residual,
                error_bound: v.error_bound,
                n_s: outcome.problem.grid.n_s(),
                n_w: outcome.problem.grid.n_w(),
                tol: cfg.solver.tol,
                max_iter: cfg.solver.max_iter,
                expected_stage_cost: outcome.problem.expected_stage_cost(),
                scenario: cfg.scenario.as_deref(),
            },
        )?;
    }
    write_timing(out, started)?;
    Ok(outcome)
}

pub struct KernelOutcome {
    pub solve: SolveOutcome,
    pub kernel: KernelPolicy,
    pub collapse: CollapseReport,
}

#[derive(Debug, Serialize)]
struct KernelMeta {
    b0: f64,
    b1: f64,
    b0_lower_bound: f64,
    assumption4: bool,
}

/// Solves, then computes the kernel and compares the reconstructed policy
/// with the solver's; writes `kernel.csv`, `kernel.json` and
/// `collapse.json`.
pub fn run_kernel(cfg: &Config, out: Option<&OutputDir>) -> anyhow::Result<KernelOutcome> {
    let started = Instant::now();
    let solve = solve_problem(cfg, cfg.problem()?)?;
    let kernel = compute_kernel(&solve.solution.value.c_values, &solve.problem)?;
    let kp = kernel_to_policy(&kernel, &solve.problem.grid);
    let collapse = verify_collapse(&solve.solution.policy, &kp, &solve.problem)?;
    if let Some(out) = out {
        out.csv("kernel.csv", |w| kernel.write_csv(w))?;
        out.json(
            "kernel.json",
            &KernelMeta {
                b0: kernel.b0,
                b1: kernel.b1,
                b0_lower_bound: kernel.b0_lower_bound,
                assumption4: kernel.assumption4,
            },
        )?;
        out.json("collapse.json", &collapse)?;
    }
    write_timing(out, started)?;
    Ok(KernelOutcome { solve, kernel, collapse })
}

/// Simulation policy for `choice` on `system`. Optimal policies are solved on
/// the configured grid; the flag is false when that solve did not converge.
pub fn build_policy(cfg: &Config, system: &SystemParams, choice: &PolicyChoice) -> anyhow::Result<(SimPolicy, bool)> {
    Ok(match choice {
        PolicyChoice::Myopic => (SimPolicy::Myopic, true),
        PolicyChoice::Zero => (SimPolicy::Zero, true),
        PolicyChoice::Optimal { cost } => {
            let cost = cost.clone().unwrap_or_else(|| cfg.cost.clone());
            let o = solve_problem(cfg, cfg.problem_for(system.clone(), cost)?)?;
            let ok = o.converged();
            (SimPolicy::Table(o.solution.policy), ok)
        }
    })
}

fn sim_config(cfg: &Config, system: &SystemParams, policy: SimPolicy) -> SimConfig {
    let sc = &cfg.simulation;
    let mut c = SimConfig::new(system.clone(), cfg.cost.clone(), policy, sc.initial_s.unwrap_or(system.s_bar), sc.seed);
    c.horizon = match sc.horizon {
        Some(t) => Horizon::Time(t),
        None => Horizon::Tail { epsilon: sc.epsilon },
    };
    match sc.burn_in {
        Some(b) => c.burn_in = b,
        // The default burn-in can exceed a tail-derived horizon; pool every
        // shock rather than none.
        None if c.burn_in >= c.horizon_time() => c.burn_in = 0.0,
        None => {}
    }
    c.replications = sc.replications;
    c.bins = sc.bins;
    if let Some(t) = &sc.tail_thresholds {
        c.tail_thresholds = t.clone();
    }
    c
}

/// Monte Carlo under the configured policy; writes `histogram.csv` and
/// `summary.json`.
pub fn run_simulate(cfg: &Config, out: Option<&OutputDir>) -> anyhow::Result<SimulationResult> {
    let started = Instant::now();
    let (policy, converged) = build_policy(cfg, &cfg.system, &cfg.simulation.policy)?;
    if !converged {
        bail!("value iteration for the simulated policy did not converge");
    }
    let sc = sim_config(cfg, &cfg.system, policy);
    let res = simulate(&sc)?;
    if let Some(out) = out {
        out.csv("histogram.csv", |w| res.stats.write_histogram_csv(w))?;
        out.json("summary.json", &res.stats.summary())?;
    }
    write_timing(out, started)?;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageValueRow {
    pub q_rate: f64,
    pub s_bar: f64,
    /// `1 − C_{s̄}(s̄) / C_0(0)`.
    pub value: f64,
    pub cost_full: f64,
    pub cost_no_storage: f64,
    pub converged: bool,
}

fn sweep_section(cfg: &Config, kind: SweepKind) -> anyhow::Result<&SweepConfig> {
    match &cfg.sweep {
        Some(s) if s.kind == kind => Ok(s),
        _ => bail!("configuration has no [sweep] section of kind {kind:?}"),
    }
}

/// Normalized value of storage over the `(q_rate, s_bar)` grid; writes
/// `value_of_storage.csv` in axis order.
pub fn run_value_of_storage_sweep(cfg: &Config, out: Option<&OutputDir>) -> anyhow::Result<Vec<StorageValueRow>> {
    let started = Instant::now();
    let sweep = sweep_section(cfg, SweepKind::ValueOfStorage)?;
    if sweep.s_bar.is_empty() {
        bail!("value-of-storage sweep needs a non-empty s_bar list");
    }
    let rates = if sweep.q_rate.is_empty() { vec![cfg.system.q_rate] } else { sweep.q_rate.clone() };
    let cells: Vec<(f64, f64)> = rates.iter().flat_map(|&q| sweep.s_bar.iter().map(move |&s| (q, s))).collect();
    let zero_costs: Vec<(f64, bool)> = rates
        .par_iter()
        .map(|&q| -> anyhow::Result<(f64, bool)> {
            let system = SystemParams { q_rate: q, s_bar: 0.0, ..cfg.system.clone() };
            let o = solve_problem(cfg, cfg.problem_for(system, cfg.cost.clone())?)?;
            Ok((o.solution.value.c_values[0], o.converged()))
        })
        .collect::<anyhow::Result<_>>()?;
    let rows: Vec<StorageValueRow> = cells
        .par_iter()
        .map(|&(q, s)| -> anyhow::Result<StorageValueRow> {
            let k = rates.iter().position(|&r| r == q).expect("rate from the list");
            let (c0, ok0) = zero_costs[k];
            let system = SystemParams { q_rate: q, s_bar: s, ..cfg.system.clone() };
            let o = solve_problem(cfg, cfg.problem_for(system, cfg.cost.clone())?)?;
            let c = *o.solution.value.c_values.last().expect("non-empty grid");
            Ok(StorageValueRow {
                q_rate: q,
                s_bar: s,
                value: if c0 > 0.0 { 1.0 - c / c0 } else { 0.0 },
                cost_full: c,
                cost_no_storage: c0,
                converged: ok0 && o.converged(),
            })
        })
        .collect::<anyhow::Result<_>>()?;
    if let Some(out) = out {
        out.csv("value_of_storage.csv", |w| {
            writeln!(w, "q_rate,s_bar,value,cost_full,cost_no_storage,status")?;
            for r in &rows {
                let status = if r.converged { "converged" } else { "not_converged" };
                writeln!(w, "{},{},{},{},{},{status}", r.q_rate, r.s_bar, r.value, r.cost_full, r.cost_no_storage)?;
            }
            Ok(())
        })?;
    }
    write_timing(out, started)?;
    Ok(rows)
}

/// One point of a tail curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailPoint {
    pub policy: String,
    /// Capacity, or uniform width on the volatility axis.
    pub axis_value: f64,
    pub volatility: f64,
    pub tail: f64,
    pub stderr: f64,
    pub converged: bool,
    /// Per-replication tail fractions in replication order, for paired
    /// comparisons across cells that share seeds.
    #[serde(skip)]
    pub per_replication: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetCrossing {
    pub policy: String,
    /// Smallest capacity on the axis whose tail is at or below the target.
    pub s_bar: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlackoutReport {
    pub threshold: f64,
    pub tail_target: Option<f64>,
    pub histograms: Vec<(String, Vec<f64>, f64)>,
    pub tail_vs_s_bar: Vec<TailPoint>,
    pub tail_vs_volatility: Vec<TailPoint>,
    pub crossings: Vec<TargetCrossing>,
    /// Per-replication results of the base-configuration runs, by policy.
    #[serde(skip)]
    pub base_runs: Vec<(String, SimulationResult)>,
}

fn stationary(cfg: &Config, sweep: &SweepConfig, system: &SystemParams, policy: SimPolicy) -> SimConfig {
    let mut c = sim_config(cfg, system, policy);
    c.burn_in = cfg.simulation.burn_in.unwrap_or(20.0 / system.theta);
    c.horizon = Horizon::Time(c.burn_in + sweep.window);
    c.replications = sweep.replications;
    c
}

fn tail_point(
    cfg: &Config,
    sweep: &SweepConfig,
    system: &SystemParams,
    choice: &PolicyChoice,
    axis_value: f64,
) -> anyhow::Result<TailPoint> {
    let (policy, converged) = build_policy(cfg, system, choice)?;
    let res = simulate(&stationary(cfg, sweep, system, policy))?;
    let thr = sweep.tail_threshold;
    let per_replication: Vec<f64> = res.replications.iter().map(|o| o.fraction(|x| x >= thr)).collect();
    let (_, stderr) = mean_and_stderr(&per_replication);
    Ok(TailPoint {
        policy: choice.label(),
        axis_value,
        volatility: system.volatility(),
        tail: res.stats.tail_probability(thr),
        stderr,
        converged,
        per_replication,
    })
}

fn write_tail_csv(out: &OutputDir, name: &str, axis: &str, rows: &[TailPoint]) -> anyhow::Result<()> {
    out.csv(name, |w| {
        writeln!(w, "policy,{axis},volatility,tail,stderr,status")?;
        for r in rows {
            let status = if r.converged { "converged" } else { "not_converged" };
            writeln!(w, "{},{},{},{},{},{status}", r.policy, r.axis_value, r.volatility, r.tail, r.stderr)?;
        }
        Ok(())
    })
}

/// Stationary blackout histograms at the base configuration plus tail curves
/// along the capacity and volatility axes. All cells share the simulation
/// seed, so curves are paired across policies and axis values.
pub fn run_blackout_experiments(cfg: &Config, out: Option<&OutputDir>) -> anyhow::Result<BlackoutReport> {
    let started = Instant::now();
    let sweep = sweep_section(cfg, SweepKind::Blackout)?;

    let base_runs: Vec<(String, SimulationResult)> = sweep
        .policies
        .par_iter()
        .map(|choice| -> anyhow::Result<_> {
            let (policy, _) = build_policy(cfg, &cfg.system, choice)?;
            Ok((choice.label(), simulate(&stationary(cfg, sweep, &cfg.system, policy))?))
        })
        .collect::<anyhow::Result<_>>()?;

    let s_cells: Vec<(&PolicyChoice, f64)> =
        sweep.policies.iter().flat_map(|p| sweep.s_bar.iter().map(move |&s| (p, s))).collect();
    let tail_vs_s_bar: Vec<TailPoint> = s_cells
        .par_iter()
        .map(|&(p, s)| tail_point(cfg, sweep, &SystemParams { s_bar: s, ..cfg.system.clone() }, p, s))
        .collect::<anyhow::Result<_>>()?;

    let mean = sweep.mean.unwrap_or_else(|| cfg.system.shock.mean());
    let vol_s_bar = sweep.volatility_s_bar.unwrap_or(cfg.system.s_bar);
    let v_cells: Vec<(&PolicyChoice, f64)> =
        sweep.policies.iter().flat_map(|p| sweep.widths.iter().map(move |&wd| (p, wd))).collect();
    let tail_vs_volatility: Vec<TailPoint> = v_cells
        .par_iter()
        .map(|&(p, width)| -> anyhow::Result<TailPoint> {
            let shock = ShockDistribution::uniform(mean - 0.5 * width, mean + 0.5 * width)
                .with_context(|| format!("width {width} around mean {mean}"))?;
            let system = SystemParams { s_bar: vol_s_bar, shock, ..cfg.system.clone() };
            tail_point(cfg, sweep, &system, p, width)
        })
        .collect::<anyhow::Result<_>>()?;

    let crossings = sweep
        .policies
        .iter()
        .map(|p| {
            let label = p.label();
            let s_bar = sweep.tail_target.and_then(|target| {
                tail_vs_s_bar.iter().find(|r| r.policy == label && r.tail <= target).map(|r| r.axis_value)
            });
            TargetCrossing { policy: label, s_bar }
        })
        .collect();

    let report = BlackoutReport {
        threshold: sweep.tail_threshold,
        tail_target: sweep.tail_target,
        histograms: base_runs
            .iter()
            .map(|(l, r)| (l.clone(), r.stats.masses.clone(), r.stats.zero_blackout_fraction))
            .collect(),
        tail_vs_s_bar,
        tail_vs_volatility,
        crossings,
        base_runs,
    };

    if let Some(out) = out {
        for (label, res) in &report.base_runs {
            out.csv(&format!("histogram_{label}.csv"), |w| res.stats.write_histogram_csv(w))?;
        }
        if !sweep.s_bar.is_empty() {
            write_tail_csv(out, "tail_vs_s_bar.csv", "s_bar", &report.tail_vs_s_bar)?;
        }
        if !sweep.widths.is_empty() {
            write_tail_csv(out, "tail_vs_volatility.csv", "width", &report.tail_vs_volatility)?;
        }
        out.json("blackout.json", &report)?;
    }
    write_timing(out, started)?;
    Ok(report)
}

pub struct VerifyOutcome {
    pub solve: SolveOutcome,
    pub report: VerificationReport,
}

/// Theorem checks on a solved instance. The kernel checks run only for
/// strictly convex stage costs.
pub fn verify_solution(problem: &Problem, solution: &Solution) -> anyhow::Result<VerificationReport> {
    let kernel = if problem.cost.is_strictly_convex() {
        Some(compute_kernel(&solution.value.c_values, problem)?)
    } else {
        None
    };
    Ok(verify_theorems(&solution.value, &solution.policy, kernel.as_ref(), problem)?)
}

/// Solves and verifies; writes `verify.json`.
pub fn run_verify(cfg: &Config, out: Option<&OutputDir>) -> anyhow::Result<VerifyOutcome> {
    let started = Instant::now();
    let solve = solve_problem(cfg, cfg.problem()?)?;
    let report = verify_solution(&solve.problem, &solve.solution)?;
    if let Some(out) = out {
        out.json("verify.json", &report)?;
    }
    write_timing(out, started)?;
    Ok(VerifyOutcome { solve, report })
}

/// Whether a stage cost is usable for the kernel subcommand.
pub fn kernel_supported(cost: &StageCost) -> bool {
    cost.is_strictly_convex()
}
