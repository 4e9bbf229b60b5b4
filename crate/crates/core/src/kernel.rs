//! Kernel representation of the optimal policy for strictly convex stage
//! costs: `μ*(s, w) = [w − φ(s − w)]⁺` with
//! `φ(p) = argmin { g(x) + C(x + p) : max{0, −p} ≤ x ≤ min{B, s̄ − p} }`.

use std::io::{self, Write};

use serde::Serialize;

use crate::dp::PolicyTable;
use crate::error::{precondition, Result};
use crate::model::{Grid, Problem};
use crate::numeric::{golden_section, gradient, hermite_eval, hermite_slope, invert_monotone, lerp};

/// Cover as much of the shock as storage allows.
#[inline]
pub fn myopic_policy(s: f64, w: f64) -> f64 {
    s.min(w)
}

/// Storage cost samples with finite-difference slopes; evaluates `C` by cubic
/// Hermite interpolation and `C'` by its derivative.
#[derive(Debug, Clone)]
pub struct CostCurve {
    pub s_points: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl CostCurve {
    pub fn new(s_points: &[f64], values: &[f64]) -> Self {
        let h = if s_points.len() > 1 { s_points[1] - s_points[0] } else { 1.0 };
        CostCurve { s_points: s_points.to_vec(), values: values.to_vec(), slopes: gradient(values, h) }
    }

    pub fn value(&self, s: f64) -> f64 {
        hermite_eval(&self.s_points, &self.values, &self.slopes, s)
    }

    pub fn slope(&self, s: f64) -> f64 {
        hermite_slope(&self.s_points, &self.values, &self.slopes, s)
    }

    /// Leftmost `s` where the sampled slope reaches `y`.
    pub fn inverse_slope(&self, y: f64) -> f64 {
        invert_monotone(&self.s_points, &self.slopes, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelPolicy {
    pub p_points: Vec<f64>,
    pub phi_values: Vec<f64>,
    pub b0: f64,
    pub b1: f64,
    /// `−(g')⁻¹((Q/r)·E[g(W)])`, the lower bound on `b0`.
    pub b0_lower_bound: f64,
    /// Positive drift `Q·E[W] ≤ r`; the three-piece form is only guaranteed then.
    pub assumption4: bool,
    /// Tolerance used for the inner minimizations.
    pub tolerance: f64,
}

impl KernelPolicy {
    /// `φ(p)` by linear interpolation on the p-grid.
    pub fn phi(&self, p: f64) -> f64 {
        lerp(&self.p_points, &self.phi_values, p)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "p,phi")?;
        for (p, phi) in self.p_points.iter().zip(&self.phi_values) {
            writeln!(out, "{p},{phi}")?;
        }
        Ok(())
    }

    /// Spacing of the p-grid.
    pub fn dp(&self) -> f64 {
        if self.p_points.len() > 1 {
            self.p_points[1] - self.p_points[0]
        } else {
            0.0
        }
    }
}

/// Feasible interval of the kernel program at `p`.
pub fn kernel_bounds(p: f64, b: f64, s_bar: f64) -> (f64, f64) {
    ((-p).max(0.0), b.min(s_bar - p))
}

/// Solves the kernel program on a p-grid over `[−B, s̄]` for the storage cost
/// samples `c_values` (on `problem.grid`).
pub fn compute_kernel(c_values: &[f64], problem: &Problem) -> Result<KernelPolicy> {
    let cost = &problem.cost;
    if !cost.is_strictly_convex() {
        return Err(precondition("kernel representation needs a strictly convex stage cost"));
    }
    if c_values.len() != problem.grid.n_s() {
        return Err(precondition("cost vector does not match the storage grid"));
    }
    let params = &problem.params;
    let b = params.b();
    let s_bar = problem.grid.s_bar();
    let curve = CostCurve::new(&problem.grid.s_points, c_values);

    let spacing = [problem.grid.ds(), problem.grid.dw()]
        .into_iter()
        .filter(|h| *h > 0.0)
        .fold(f64::INFINITY, f64::min);
    let span = b + s_bar;
    let n_p = if span <= 0.0 {
        1
    } else if spacing.is_finite() {
        ((span / spacing).ceil() as usize + 1).min(20_001)
    } else {
        201
    };
    let p_points: Vec<f64> = if n_p == 1 {
        vec![-b]
    } else {
        (0..n_p).map(|k| -b + span * k as f64 / (n_p - 1) as f64).collect()
    };

    let tol = 1e-8 * span.max(f64::MIN_POSITIVE);
    let phi_values = p_points
        .iter()
        .map(|&p| {
            let (lo, hi) = kernel_bounds(p, b, s_bar);
            if hi - lo <= tol {
                return lo;
            }
            let slope = |x: f64| cost.derivative(x) + curve.slope(x + p);
            if slope(lo) >= 0.0 {
                lo
            } else if slope(hi) <= 0.0 {
                hi
            } else {
                golden_section(|x| cost.value(x) + curve.value(x + p), lo, hi, tol).0
            }
        })
        .collect();

    let g_inv = |y: f64| cost.inverse_derivative(y).unwrap_or(0.0).min(b);
    let b0 = -g_inv(-curve.slopes[0]);
    let b1 = curve.inverse_slope(-cost.derivative(0.0));
    let eg = problem.expected_stage_cost();
    let b0_lower_bound = -g_inv(params.q_rate / params.r * eg);

    Ok(KernelPolicy {
        p_points,
        phi_values,
        b0,
        b1,
        b0_lower_bound,
        assumption4: params.positive_drift(),
        tolerance: tol,
    })
}

/// Tabulates `[w − φ(s − w)]⁺` on `grid`, clamped to `[0, min{s, w}]`.
pub fn kernel_to_policy(kernel: &KernelPolicy, grid: &Grid) -> PolicyTable {
    let u_values = grid
        .s_points
        .iter()
        .flat_map(|&s| {
            grid.w_points
                .iter()
                .map(move |&w| (w - kernel.phi(s - w)).max(0.0).min(s.min(w)))
        })
        .collect();
    PolicyTable { grid: grid.clone(), u_values }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseReport {
    /// False when the stage cost is not strictly convex.
    pub applicable: bool,
    pub sup_deviation: f64,
    pub mean_abs_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the value-iteration policy against the kernel reconstruction.
/// Passes when the sup deviation is within two grid cells.
pub fn verify_collapse(dp_policy: &PolicyTable, kernel_policy: &PolicyTable, problem: &Problem) -> Result<CollapseReport> {
    if !dp_policy.grid.same_shape(&kernel_policy.grid) || dp_policy.u_values.len() != kernel_policy.u_values.len() {
        return Err(precondition("policy tables are on different grids"));
    }
    let tolerance = 2.0 * dp_policy.grid.ds().max(dp_policy.grid.dw());
    let n = dp_policy.u_values.len().max(1) as f64;
    let (sup, sum) = dp_policy
        .u_values
        .iter()
        .zip(&kernel_policy.u_values)
        .map(|(a, b)| (a - b).abs())
        .fold((0.0f64, 0.0), |(m, s), d| (m.max(d), s + d));
    let applicable = problem.cost.is_strictly_convex();
    Ok(CollapseReport {
        applicable,
        sup_deviation: sup,
        mean_abs_deviation: sum / n,
        tolerance,
        pass: applicable && sup <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{solve, SolverOptions};
    use crate::model::{ShockDistribution, StageCost, SystemParams};

    fn fig3(cost: StageCost, n: usize) -> Problem {
        let params = SystemParams::new(0.1, 1.0, 0.8, 2.0, ShockDistribution::uniform(0.0, 1.0).unwrap()).unwrap();
        Problem::new(params, cost, n, n).unwrap()
    }

    #[test]
    fn myopic_examples() {
        assert_eq!(myopic_policy(2.0, 1.0), 1.0);
        assert_eq!(myopic_policy(0.5, 1.0), 0.5);
        assert_eq!(myopic_policy(0.0, 0.7), 0.0);
    }

    #[test]
    fn linear_cost_is_rejected() {
        let p = fig3(StageCost::linear(1.0).unwrap(), 11);
        let c = vec![1.0; 11];
        assert!(matches!(compute_kernel(&c, &p), Err(crate::Error::Precondition(_))));
    }

    #[test]
    fn kernel_branches_and_collapse() {
        let p = fig3(StageCost::quadratic(), 61);
        let sol = solve(&p, SolverOptions::default()).unwrap();
        let k = compute_kernel(&sol.value.c_values, &p).unwrap();
        assert!(k.assumption4);
        assert!(-1.0 <= k.b0_lower_bound && k.b0_lower_bound <= k.b0 + 1e-12);
        assert!(k.b0 < 0.0 && k.b1 <= 2.0);
        for (&pp, &phi) in k.p_points.iter().zip(&k.phi_values) {
            if pp <= k.b0 - 2.0 * k.dp() {
                assert!((phi + pp).abs() <= 1e-12, "p = {pp}, phi = {phi}");
            }
            if pp >= k.b1 + 2.0 * k.dp() {
                assert!(phi.abs() <= 1e-12);
            }
            let (lo, hi) = kernel_bounds(pp, 1.0, 2.0);
            assert!(phi >= lo - 1e-12 && phi <= hi + 1e-12);
        }
        let kp = kernel_to_policy(&k, &p.grid);
        let rep = verify_collapse(&sol.policy, &kp, &p).unwrap();
        assert!(rep.applicable && rep.pass, "{rep:?}");
    }

    #[test]
    fn collapse_of_identical_tables() {
        let p = fig3(StageCost::quadratic(), 11);
        let t = PolicyTable::myopic(&p.grid);
        let rep = verify_collapse(&t, &t, &p).unwrap();
        assert_eq!(rep.sup_deviation, 0.0);
        assert!(rep.pass);
        let lin = fig3(StageCost::linear(1.0).unwrap(), 11);
        let rep = verify_collapse(&t, &t, &lin).unwrap();
        assert!(!rep.applicable && !rep.pass);
    }

    #[test]
    fn policy_partitions_follow_breakpoints() {
        let p = fig3(StageCost::quadratic(), 61);
        let sol = solve(&p, SolverOptions::default()).unwrap();
        let k = compute_kernel(&sol.value.c_values, &p).unwrap();
        let kp = kernel_to_policy(&k, &p.grid);
        for (i, &s) in p.grid.s_points.iter().enumerate() {
            for (j, &w) in p.grid.w_points.iter().enumerate() {
                let u = kp.u(i, j);
                if w >= -k.b0 && s <= w + k.b0 - 2.0 * k.dp() {
                    assert!((u - s).abs() <= 1e-12, "drain-all region at ({s},{w}): u = {u}");
                }
                if w <= -k.b0 && s <= w {
                    // p = s - w <= 0 with phi(p) >= -p gives u <= s; below q0 nothing is used.
                    assert!(u <= s + 1e-12);
                }
                if s >= w + k.b1 + 2.0 * k.dp() {
                    assert!((u - w).abs() <= 1e-12);
                }
            }
        }
        // Small shocks with empty-ish storage are not covered at all.
        let w_small = k.b0.abs() * 0.5;
        let j = p.grid.w_points.iter().position(|&w| w >= w_small).unwrap();
        assert_eq!(kp.u(0, j), 0.0);
    }

    #[test]
    fn zero_capacity_kernel_is_drain_all() {
        let params = SystemParams::new(0.1, 1.0, 0.8, 0.0, ShockDistribution::uniform(0.0, 1.0).unwrap()).unwrap();
        let p = Problem::new(params, StageCost::quadratic(), 1, 21).unwrap();
        let k = compute_kernel(&[2.0], &p).unwrap();
        for (&pp, &phi) in k.p_points.iter().zip(&k.phi_values) {
            assert!((phi + pp).abs() < 1e-12);
        }
    }
}
