//! Policy evaluation through the delay-differential equation
//!
//! ```text
//! C'(s) = κ C(s) − (Q/r) E[ g(W − μ(s, W)) + C(s − μ(s, W)) ],   C'(s̄) = 0,
//! ```
//!
//! and the HJB residual of a sampled cost curve.
//!
//! The equation is integrated from `s = 0` with classical RK4. The unknown
//! initial value enters affinely, so two trial integrations fix it exactly
//! through the terminal condition.

use serde::Serialize;

use crate::dp::PolicyTable;
use crate::error::{precondition, Result};
use crate::model::Problem;
use crate::numeric::{golden_section, gradient, lerp};

/// Stationary policy to evaluate.
#[derive(Debug, Clone, Copy)]
pub enum PolicyRef<'a> {
    Myopic,
    /// Never use storage.
    Zero,
    Table(&'a PolicyTable),
}

impl PolicyRef<'_> {
    #[inline]
    fn amount(&self, s: f64, j: usize, w: f64) -> f64 {
        let u = match self {
            PolicyRef::Myopic => s.min(w),
            PolicyRef::Zero => 0.0,
            PolicyRef::Table(t) => t.at_shock_node(s, j),
        };
        u.clamp(0.0, s.min(w).max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DdeSolution {
    pub s_points: Vec<f64>,
    pub c_values: Vec<f64>,
    /// `C'(s̄)` of the final integration.
    pub boundary_residual: f64,
    /// Trial integrations used to fix `C(0)`.
    pub shooting_iterations: usize,
}

struct History<'a> {
    s: &'a [f64],
    c: &'a [f64],
    dc: &'a [f64],
}

impl History<'_> {
    /// Hermite interpolation over the settled nodes `0..=n`; linear between
    /// the last settled node and the current stage point beyond it.
    #[inline]
    fn lookup(&self, z: f64, n: usize, x: f64, y: f64) -> f64 {
        let s = self.s;
        if z > s[n] {
            if x <= s[n] {
                return self.c[n];
            }
            return self.c[n] + (y - self.c[n]) * (z - s[n]) / (x - s[n]);
        }
        if n == 0 {
            return self.c[0];
        }
        let h = s[1] - s[0];
        let i = (((z - s[0]) / h).floor().max(0.0) as usize).min(n - 1);
        let t = (z - s[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.c[i]
            + (t3 - 2.0 * t2 + t) * h * self.dc[i]
            + (-2.0 * t3 + 3.0 * t2) * self.c[i + 1]
            + (t3 - t2) * h * self.dc[i + 1]
    }
}

struct Rhs<'a> {
    problem: &'a Problem,
    policy: PolicyRef<'a>,
    kappa: f64,
    q_over_r: f64,
}

impl Rhs<'_> {
    fn eval(&self, hist: &History<'_>, n: usize, x: f64, y: f64) -> f64 {
        let grid = &self.problem.grid;
        let mut acc = 0.0;
        for (j, (&w, &wt)) in grid.w_points.iter().zip(&grid.w_weights).enumerate() {
            let u = self.policy.amount(x, j, w);
            acc += wt * (self.problem.cost.value(w - u) + hist.lookup(x - u, n, x, y));
        }
        self.kappa * y - self.q_over_r * acc
    }
}

fn integrate(rhs: &Rhs<'_>, s: &[f64], c0: f64) -> (Vec<f64>, Vec<f64>) {
    let n_s = s.len();
    let mut c = vec![0.0; n_s];
    let mut dc = vec![0.0; n_s];
    c[0] = c0;
    dc[0] = rhs.eval(&History { s, c: &c, dc: &dc }, 0, s[0], c0);
    for n in 0..n_s - 1 {
        let h = s[n + 1] - s[n];
        let x = s[n];
        let y = c[n];
        let (k1, k2, k3, k4) = {
            let hist = History { s, c: &c, dc: &dc };
            let k1 = dc[n];
            let k2 = rhs.eval(&hist, n, x + 0.5 * h, y + 0.5 * h * k1);
            let k3 = rhs.eval(&hist, n, x + 0.5 * h, y + 0.5 * h * k2);
            let k4 = rhs.eval(&hist, n, x + h, y + h * k3);
            (k1, k2, k3, k4)
        };
        let y_next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        c[n + 1] = y_next;
        dc[n + 1] = rhs.eval(&History { s, c: &c, dc: &dc }, n, s[n + 1], y_next);
    }
    (c, dc)
}

/// Cost-to-go of a stationary policy from the delay-differential equation.
pub fn solve_policy_dde(policy: PolicyRef<'_>, problem: &Problem) -> Result<DdeSolution> {
    if let PolicyRef::Table(t) = policy {
        if !t.grid.same_shape(&problem.grid) || t.grid.w_points != problem.grid.w_points {
            return Err(precondition("policy table is not on the problem grid"));
        }
    }
    let params = &problem.params;
    let rhs = Rhs {
        problem,
        policy,
        kappa: params.kappa(),
        q_over_r: params.q_rate / params.r,
    };
    let s = &problem.grid.s_points;
    let last = s.len() - 1;

    let (_, d0) = integrate(&rhs, s, 0.0);
    let (_, d1) = integrate(&rhs, s, 1.0);
    let slope = d1[last] - d0[last];
    if slope == 0.0 || !slope.is_finite() {
        return Err(precondition("terminal condition does not determine the initial cost"));
    }
    let c0 = -d0[last] / slope;
    let (c_values, dc) = integrate(&rhs, s, c0);
    Ok(DdeSolution { s_points: s.clone(), c_values, boundary_residual: dc[last], shooting_iterations: 2 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbResidual {
    /// Nodes at which the residual is reported (interior nodes, or the single
    /// node of a zero-capacity grid).
    pub s_points: Vec<f64>,
    pub residual: Vec<f64>,
    pub sup_norm: f64,
    /// One-sided second-order estimate of `C'(s̄)`.
    pub boundary_slope: f64,
}

/// Residual of the HJB equation for the sampled cost `c_values`:
/// `C'(s) − κC(s) + (Q/r) E[min_u { g(W − u) + C(s − u) }]`, with `C'` from
/// central differences and `C` interpolated linearly inside the minimum.
pub fn hjb_residual(c_values: &[f64], problem: &Problem) -> Result<HjbResidual> {
    let grid = &problem.grid;
    if c_values.len() != grid.n_s() {
        return Err(precondition("cost vector does not match the storage grid"));
    }
    let params = &problem.params;
    let kappa = params.kappa();
    let q_over_r = params.q_rate / params.r;
    let s = &grid.s_points;
    let n = s.len();
    let tol = 1e-10 * grid.s_bar().max(1.0);

    let bracket = |si: f64| -> f64 {
        grid.w_points
            .iter()
            .zip(&grid.w_weights)
            .map(|(&w, &wt)| {
                let umax = si.min(w).max(0.0);
                let f = |u: f64| problem.cost.value(w - u) + lerp(s, c_values, si - u);
                let mut best = f(0.0).min(f(umax));
                if umax > tol {
                    best = best.min(golden_section(f, 0.0, umax, tol).1);
                }
                wt * best
            })
            .sum()
    };

    let (nodes, residual): (Vec<f64>, Vec<f64>) = if n == 1 {
        vec![(s[0], -(kappa * c_values[0] - q_over_r * bracket(s[0])))].into_iter().unzip()
    } else {
        let h = s[1] - s[0];
        (1..n - 1)
            .map(|i| {
                let d = (c_values[i + 1] - c_values[i - 1]) / (2.0 * h);
                (s[i], d - (kappa * c_values[i] - q_over_r * bracket(s[i])))
            })
            .unzip()
    };
    let sup_norm = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let boundary_slope = if n == 1 { 0.0 } else { gradient(c_values, s[1] - s[0])[n - 1] };
    Ok(HjbResidual { s_points: nodes, residual, sup_norm, boundary_slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{solve, SolverOptions};
    use crate::model::{ShockDistribution, StageCost, SystemParams};

    fn problem(cost: StageCost, s_bar: f64, n_s: usize, n_w: usize) -> Problem {
        let params = SystemParams::new(0.1, 1.0, 0.8, s_bar, ShockDistribution::uniform(0.0, 1.0).unwrap()).unwrap();
        Problem::new(params, cost, n_s, n_w).unwrap()
    }

    #[test]
    fn zero_policy_gives_constant_cost() {
        let p = problem(StageCost::quadratic(), 2.0, 41, 41);
        let sol = solve_policy_dde(PolicyRef::Zero, &p).unwrap();
        let expected = 0.8 / 0.1 * p.expected_stage_cost();
        for c in &sol.c_values {
            assert!((c - expected).abs() < 1e-10 * expected, "{c} vs {expected}");
        }
        assert!(sol.boundary_residual.abs() < 1e-10);
    }

    #[test]
    fn zero_capacity_hjb_vanishes_on_closed_form() {
        let p = problem(StageCost::quadratic(), 0.0, 1, 101);
        let c = 0.8 / 0.1 * p.expected_stage_cost();
        let res = hjb_residual(&[c], &p).unwrap();
        assert!(res.sup_norm < 1e-12);
        let dde = solve_policy_dde(PolicyRef::Myopic, &p).unwrap();
        assert!((dde.c_values[0] - c).abs() < 1e-12);
    }

    #[test]
    fn myopic_linear_matches_value_iteration() {
        let p = problem(StageCost::linear(1.0).unwrap(), 2.0, 101, 101);
        let vi = solve(&p, SolverOptions { tol: 1e-11, ..Default::default() }).unwrap();
        let dde = solve_policy_dde(PolicyRef::Myopic, &p).unwrap();
        let scale = vi.value.c_values[0];
        for (a, b) in vi.value.c_values.iter().zip(&dde.c_values) {
            assert!((a - b).abs() < 1e-3 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn table_policy_matches_myopic() {
        let p = problem(StageCost::linear(1.0).unwrap(), 1.0, 51, 51);
        let t = PolicyTable::myopic(&p.grid);
        let a = solve_policy_dde(PolicyRef::Myopic, &p).unwrap();
        let b = solve_policy_dde(PolicyRef::Table(&t), &p).unwrap();
        for (x, y) in a.c_values.iter().zip(&b.c_values) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn optimal_cost_nearly_solves_hjb() {
        let p = problem(StageCost::quadratic(), 2.0, 81, 81);
        let vi = solve(&p, SolverOptions { tol: 1e-11, ..Default::default() }).unwrap();
        let res = hjb_residual(&vi.value.c_values, &p).unwrap();
        let scale = 0.8 * p.expected_stage_cost();
        assert!(res.sup_norm < 0.05 * scale, "{} vs {}", res.sup_norm, scale);
        assert!(res.boundary_slope.abs() < 1e-3);
    }

    #[test]
    fn mismatched_table_is_rejected() {
        let p = problem(StageCost::quadratic(), 2.0, 21, 21);
        let q = problem(StageCost::quadratic(), 2.0, 11, 21);
        let t = PolicyTable::myopic(&q.grid);
        assert!(solve_policy_dde(PolicyRef::Table(&t), &p).is_err());
    }
}
