//! Bellman operator on the `(s, w)` grid, value iteration, recovery of the
//! storage cost `C(s)` and extraction of the tabulated optimal policy.
//!
//! `J` is stored at the grid nodes and interpolated linearly in `s`. The
//! exponential-time expectation `E[e^{-θ t₀} J̄(min{x + r t₀, s̄})]` of the
//! shock-averaged table `J̄` is then exact: on each linear segment the
//! integrand is `e^{-(Q+θ)t}(a + bt)`, which integrates in closed form, and
//! the time spent pinned at capacity contributes the tail term
//! `(Q/(Q+θ))·e^{-(Q+θ)τ̄}·J̄(s̄)`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, precondition, Result};
use crate::model::{Grid, Problem, StageCost, SystemParams};
use crate::numeric::{golden_section, segment_index};

/// Smoothed continuation value `H(x) = E[e^{-θ t₀} J̄(min{x + r t₀, s̄})]`
/// for a piecewise-linear `J̄`, with `t₀ ~ Exp(Q)`.
#[derive(Debug, Clone)]
pub struct Continuation {
    s: Vec<f64>,
    jbar: Vec<f64>,
    nodes: Vec<f64>,
    inv_ds: f64,
    kappa: f64,
    q_over_a: f64,
    /// `Q·r/(Q+θ)²`, the weight of the slope term.
    slope_weight: f64,
}

impl Continuation {
    /// Builds `H` from a full `(s, w)` table by averaging over the shock nodes.
    pub fn from_table(j_values: &[f64], grid: &Grid, params: &SystemParams) -> Self {
        let n_w = grid.n_w();
        let jbar = j_values
            .chunks_exact(n_w)
            .map(|row| row.iter().zip(&grid.w_weights).map(|(j, p)| j * p).sum())
            .collect();
        Self::from_expected(jbar, grid, params)
    }

    /// Builds `H` from the already shock-averaged samples `J̄(s_i)`.
    pub fn from_expected(jbar: Vec<f64>, grid: &Grid, params: &SystemParams) -> Self {
        let a = params.q_rate + params.theta;
        let kappa = params.kappa();
        let q_over_a = params.q_rate / a;
        let slope_weight = params.q_rate * params.r / (a * a);
        let s = grid.s_points.clone();
        let n = s.len();
        let mut nodes = vec![0.0; n];
        nodes[n - 1] = q_over_a * jbar[n - 1];
        let inv_ds = if n > 1 { 1.0 / grid.ds() } else { 0.0 };
        let mut c = Continuation { s, jbar, nodes, inv_ds, kappa, q_over_a, slope_weight };
        for i in (0..n.saturating_sub(1)).rev() {
            let v = c.segment_value(i, c.s[i]);
            c.nodes[i] = v;
        }
        c
    }

    #[inline]
    fn segment_value(&self, i: usize, x: f64) -> f64 {
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let m = (self.jbar[i + 1] - self.jbar[i]) / (s1 - s0);
        let jx = self.jbar[i] + m * (x - s0);
        let kd = self.kappa * (s1 - x);
        let e = (-kd).exp();
        let one_minus_e = -(-kd).exp_m1();
        let second = one_minus_e - kd * e;
        e * self.nodes[i + 1] + self.q_over_a * jx * one_minus_e + self.slope_weight * m * second
    }

    /// `H` at grid node `i`.
    #[inline]
    pub fn at_node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn node_values(&self) -> &[f64] {
        &self.nodes
    }

    /// `H(x)` for `x` in `[0, s̄]` (clamped).
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.s.len();
        if n == 1 {
            return self.nodes[0];
        }
        let x = x.clamp(0.0, self.s[n - 1]);
        // Uniform grid: locate the cell directly, then fix rounding at the edges.
        let mut i = ((x * self.inv_ds) as usize).min(n - 2);
        if x < self.s[i] {
            i -= 1;
        } else if i + 2 < n && x > self.s[i + 1] {
            i += 1;
        }
        self.segment_value(i, x)
    }

    /// Shock-averaged samples `J̄(s_i)` this curve was built from.
    pub fn expected_table(&self) -> &[f64] {
        &self.jbar
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

/// Grid samples of `J(s, w)` and the derived storage cost `C(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub grid: Grid,
    /// s-major: entry `i * n_w + j` is `J(s_i, w_j)`.
    pub j_values: Vec<f64>,
    pub c_values: Vec<f64>,
    pub iteration_count: usize,
    pub sup_norm_residual: f64,
    /// `residual · Q/θ`, a bound on the sup-norm distance to the fixed point.
    pub error_bound: f64,
    pub status: SolveStatus,
}

impl ValueTable {
    pub fn zeros(grid: &Grid) -> Self {
        ValueTable {
            grid: grid.clone(),
            j_values: vec![0.0; grid.n_s() * grid.n_w()],
            c_values: vec![0.0; grid.n_s()],
            iteration_count: 0,
            sup_norm_residual: f64::INFINITY,
            error_bound: f64::INFINITY,
            status: SolveStatus::NotConverged,
        }
    }

    #[inline]
    pub fn j(&self, i: usize, j: usize) -> f64 {
        self.j_values[i * self.grid.n_w() + j]
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn write_value_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "s,w,value")?;
        for (i, s) in self.grid.s_points.iter().enumerate() {
            for (j, w) in self.grid.w_points.iter().enumerate() {
                writeln!(out, "{s},{w},{}", self.j(i, j))?;
            }
        }
        Ok(())
    }

    pub fn write_cost_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "s,cost")?;
        for (s, c) in self.grid.s_points.iter().zip(&self.c_values) {
            writeln!(out, "{s},{c}")?;
        }
        Ok(())
    }
}

/// Tabulated withdrawal `μ(s, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub grid: Grid,
    /// s-major like [`ValueTable::j_values`].
    pub u_values: Vec<f64>,
}

impl PolicyTable {
    /// The myopic policy `min{s, w}` sampled on `grid`.
    pub fn myopic(grid: &Grid) -> Self {
        let u_values = grid
            .s_points
            .iter()
            .flat_map(|&s| grid.w_points.iter().map(move |&w| s.min(w)))
            .collect();
        PolicyTable { grid: grid.clone(), u_values }
    }

    #[inline]
    pub fn u(&self, i: usize, j: usize) -> f64 {
        self.u_values[i * self.grid.n_w() + j]
    }

    /// Linear interpolation in `s` along shock node `j`.
    #[inline]
    pub fn at_shock_node(&self, s: f64, j: usize) -> f64 {
        let n_s = self.grid.n_s();
        if n_s == 1 {
            return self.u(0, j);
        }
        let s = s.clamp(0.0, self.grid.s_bar());
        let i = self.grid.s_cell(s);
        let (s0, s1) = (self.grid.s_points[i], self.grid.s_points[i + 1]);
        let t = (s - s0) / (s1 - s0);
        self.u(i, j) * (1.0 - t) + self.u(i + 1, j) * t
    }

    /// Bilinear interpolation. The flag reports whether `(s, w)` lay outside
    /// the grid and was clamped to its edge.
    pub fn interpolate(&self, s: f64, w: f64) -> (f64, bool) {
        let g = &self.grid;
        let eps = 1e-9 * (1.0 + g.s_bar() + g.w_points[g.n_w() - 1]);
        let outside = s < -eps
            || s > g.s_bar() + eps
            || w < g.w_points[0] - eps
            || w > g.w_points[g.n_w() - 1] + eps;
        let n_w = g.n_w();
        if n_w == 1 {
            return (self.at_shock_node(s, 0), outside);
        }
        let w = w.clamp(g.w_points[0], g.w_points[n_w - 1]);
        let j = segment_index(&g.w_points, w);
        let t = (w - g.w_points[j]) / (g.w_points[j + 1] - g.w_points[j]);
        let u = self.at_shock_node(s, j) * (1.0 - t) + self.at_shock_node(s, j + 1) * t;
        (u, outside)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "s,w,u")?;
        for (i, s) in self.grid.s_points.iter().enumerate() {
            for (j, w) in self.grid.w_points.iter().enumerate() {
                writeln!(out, "{s},{w},{}", self.u(i, j))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-9, max_iter: 100_000 }
    }
}

/// `E[e^{-θ t₀} J(min{s − u + r t₀, s̄}, W)]` for the table `j`.
pub fn discounted_transition_expectation(j: &ValueTable, s: f64, u: f64, problem: &Problem) -> Result<f64> {
    let eps = 1e-12 * (1.0 + problem.grid.s_bar());
    let b = problem.params.b();
    if !(u >= -eps && u <= s.min(b) + eps && s - u >= -eps && s <= problem.grid.s_bar() + eps) {
        return Err(precondition(format!(
            "withdrawal u = {u} infeasible at s = {s} (needs 0 <= u <= min(s, B = {b}))"
        )));
    }
    let cont = Continuation::from_table(&j.j_values, &j.grid, &problem.params);
    Ok(cont.eval((s - u).max(0.0)))
}

/// Minimizes `g(w − u) + H(s_i − u)` over `u ∈ [0, min{s_i, w}]`.
///
/// Scans the grid-aligned withdrawals `s_i − s_k` plus `min{s_i, w}` in
/// increasing order (strict improvement only, so ties keep the smallest `u`),
/// then refines on the bracketing pair of candidates with golden-section
/// search when `g` is strictly convex.
#[inline]
fn minimize_node(i: usize, w: f64, cost: &StageCost, cont: &Continuation, grid: &Grid, refine: bool) -> (f64, f64) {
    let s_pts = &grid.s_points;
    let s = s_pts[i];
    let umax = s.min(w);
    if umax <= 0.0 {
        return (0.0, cost.value(w) + cont.at_node(i));
    }
    let eps = 1e-12 * (1.0 + grid.s_bar());
    // Grid candidates u_m = s_i − s_{i−m} for m < n_grid; the last candidate is umax.
    let mut n_grid = 0;
    while n_grid <= i && s - s_pts[i - n_grid] < umax - eps {
        n_grid += 1;
    }
    let cand = |m: usize| if m < n_grid { s - s_pts[i - m] } else { umax };

    let mut best_m = 0;
    let mut best_v = f64::INFINITY;
    for m in 0..n_grid {
        let v = cost.value(w - (s - s_pts[i - m])) + cont.at_node(i - m);
        if v < best_v {
            best_v = v;
            best_m = m;
        }
    }
    let v_end = cost.value(w - umax) + cont.eval(s - umax);
    if v_end < best_v {
        best_v = v_end;
        best_m = n_grid;
    }
    let mut best_u = cand(best_m);

    if refine && n_grid > 0 {
        let lo = cand(best_m.saturating_sub(1));
        let hi = cand((best_m + 1).min(n_grid));
        if hi > lo {
            let tol = 1e-8 * grid.s_bar();
            let (u, v) = golden_section(|u| cost.value(w - u) + cont.eval(s - u), lo, hi, tol);
            if v < best_v {
                best_v = v;
                best_u = u;
            }
        }
    }
    (best_u, best_v)
}

fn apply_operator(j_values: &[f64], problem: &Problem) -> Vec<f64> {
    let grid = &problem.grid;
    let cont = Continuation::from_table(j_values, grid, &problem.params);
    let refine = problem.cost.is_strictly_convex();
    let mut out = vec![0.0; j_values.len()];
    out.par_chunks_mut(grid.n_w()).enumerate().for_each(|(i, row)| {
        for (slot, &w) in row.iter_mut().zip(&grid.w_points) {
            *slot = minimize_node(i, w, &problem.cost, &cont, grid, refine).1;
        }
    });
    out
}

fn check_table(j: &ValueTable, problem: &Problem) -> Result<()> {
    if !j.grid.same_shape(&problem.grid) || j.j_values.len() != problem.grid.n_s() * problem.grid.n_w() {
        return Err(precondition("value table does not match the problem grid"));
    }
    if j.j_values.iter().any(|v| !v.is_finite()) {
        return Err(precondition("value table has non-finite entries"));
    }
    Ok(())
}

/// One application of the Bellman operator `T`.
pub fn bellman_apply(j: &ValueTable, problem: &Problem) -> Result<ValueTable> {
    check_table(j, problem)?;
    let j_values = apply_operator(&j.j_values, problem);
    let residual = sup_distance(&j_values, &j.j_values);
    let c_values = Continuation::from_table(&j_values, &problem.grid, &problem.params).node_values().to_vec();
    Ok(ValueTable {
        grid: problem.grid.clone(),
        j_values,
        c_values,
        iteration_count: j.iteration_count + 1,
        sup_norm_residual: residual,
        error_bound: residual * problem.params.q_rate / problem.params.theta,
        status: SolveStatus::NotConverged,
    })
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Value iteration `J_{k+1} = T J_k` from `J_0 = 0`. Stops once the sup-norm
/// step is at most `tol`; running out of iterations is reported through
/// [`ValueTable::status`] with the partial table.
pub fn value_iterate(problem: &Problem, opts: SolverOptions) -> Result<ValueTable> {
    if !(opts.tol > 0.0) {
        return Err(invalid(format!("solver tolerance must be positive, got {}", opts.tol)));
    }
    let mut j = vec![0.0; problem.grid.n_s() * problem.grid.n_w()];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut status = SolveStatus::NotConverged;
    while iterations < opts.max_iter {
        let next = apply_operator(&j, problem);
        residual = sup_distance(&next, &j);
        j = next;
        iterations += 1;
        if residual <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }
    }
    let c_values = Continuation::from_table(&j, &problem.grid, &problem.params).node_values().to_vec();
    Ok(ValueTable {
        grid: problem.grid.clone(),
        j_values: j,
        c_values,
        iteration_count: iterations,
        sup_norm_residual: residual,
        error_bound: residual * problem.params.q_rate / problem.params.theta,
        status,
    })
}

/// `C(s) = E[e^{-θ t₀} J(min{s + r t₀, s̄}, W)]` at the storage nodes.
pub fn cost_from_value(j: &ValueTable, problem: &Problem) -> Result<Vec<f64>> {
    check_table(j, problem)?;
    Ok(Continuation::from_table(&j.j_values, &problem.grid, &problem.params).node_values().to_vec())
}

/// Per-node minimizer of the Bellman objective for `j`.
pub fn extract_policy(j: &ValueTable, problem: &Problem) -> Result<PolicyTable> {
    check_table(j, problem)?;
    let grid = &problem.grid;
    let cont = Continuation::from_table(&j.j_values, grid, &problem.params);
    let refine = problem.cost.is_strictly_convex();
    let mut u_values = vec![0.0; j.j_values.len()];
    u_values.par_chunks_mut(grid.n_w()).enumerate().for_each(|(i, row)| {
        for (slot, &w) in row.iter_mut().zip(&grid.w_points) {
            *slot = minimize_node(i, w, &problem.cost, &cont, grid, refine).0;
        }
    });
    Ok(PolicyTable { grid: grid.clone(), u_values })
}

/// Converged values, cost curve and optimal policy for one configuration.
#[derive(Debug, Clone)]
pub struct Solution {
    pub value: ValueTable,
    pub policy: PolicyTable,
}

pub fn solve(problem: &Problem, opts: SolverOptions) -> Result<Solution> {
    let value = value_iterate(problem, opts)?;
    let policy = extract_policy(&value, problem)?;
    Ok(Solution { value, policy })
}
