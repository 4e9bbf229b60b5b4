//! Acceptance criteria. Prints one `AC-xx PASS|FAIL` line per criterion and
//! exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use storage_reliability::dde::{hjb_residual, solve_policy_dde, PolicyRef};
use storage_reliability::sim::paired_difference;
use storage_reliability::{
    compute_kernel, kernel_to_policy, simulate, solve, verify_collapse, Problem, SimConfig, SimPolicy, Solution,
    SolverOptions,
};
use storage_reliability_cli::experiments::{run_blackout_experiments, BlackoutReport};
use storage_reliability_cli::{Config, Overrides};

fn config(name: &str) -> Result<Config> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    Config::load(&path)
}

const TIGHT: SolverOptions = SolverOptions { tol: 1e-11, max_iter: 100_000 };

struct Fig3 {
    coarse: (Problem, Solution),
    fine: (Problem, Solution),
}

fn fig3_with(n_s: usize) -> Result<(Problem, Solution)> {
    let mut cfg = config("fig3_quadratic.toml")?;
    cfg.grid.n_s = n_s;
    let p = cfg.problem()?;
    let s = solve(&p, TIGHT)?;
    ensure!(s.value.converged(), "value iteration did not converge at n_s = {n_s}");
    Ok((p, s))
}

fn cell(p: &Problem) -> f64 {
    p.grid.ds().max(p.grid.dw())
}

fn ac01() -> Result<String> {
    let p = config("linear.toml")?.problem()?;
    ensure!(p.grid.n_s() == 200 && p.grid.n_w() == 200);
    let t = Instant::now();
    let sol = solve(&p, SolverOptions::default())?;
    let secs = t.elapsed().as_secs_f64();
    let mut worst = 0.0f64;
    for (i, &s) in p.grid.s_points.iter().enumerate() {
        for (j, &w) in p.grid.w_points.iter().enumerate() {
            worst = worst.max((sol.policy.u(i, j) - s.min(w)).abs());
        }
    }
    ensure!(worst <= cell(&p), "max deviation {worst:e} exceeds one cell {:e}", cell(&p));
    ensure!(secs <= 60.0, "solve took {secs:.1} s");
    Ok(format!("max |u - min(s,w)| = {worst:.3e} <= {:.3e}, solve {secs:.1} s", cell(&p)))
}

fn ac02() -> Result<String> {
    let cfg = config("zero_capacity.toml")?;
    let p = cfg.problem()?;
    let sol = solve(&p, SolverOptions::default())?;
    let oracle = cfg.system.q_rate / cfg.system.theta * cfg.system.shock.mean();
    ensure!(oracle == 8.0);
    let c0 = sol.value.c_values[0];
    let rel = (c0 - oracle).abs() / oracle;
    ensure!(rel <= 1e-6, "solver C(0) = {c0}, relative error {rel:e}");
    let mut sc = SimConfig::new(cfg.system.clone(), cfg.cost.clone(), SimPolicy::Myopic, 0.0, cfg.simulation.seed);
    sc.replications = 10_000;
    let mc = simulate(&sc)?;
    let z = (mc.discounted_cost - oracle) / mc.stderr;
    ensure!(z.abs() <= 3.0, "Monte Carlo {} ± {} is {z:.2} SE from 8", mc.discounted_cost, mc.stderr);
    Ok(format!("solver C(0) = {c0:.9} (rel {rel:.1e}); MC {:.4} ± {:.4} (z = {z:.2})", mc.discounted_cost, mc.stderr))
}

fn ac03(f: &Fig3) -> Result<String> {
    let c = &f.coarse.1.value.c_values;
    let max_fwd = c.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min_second = c.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).fold(f64::INFINITY, f64::min);
    ensure!(max_fwd < 0.0, "largest forward difference {max_fwd:e} is not negative");
    ensure!(min_second >= -1e-8 * scale, "second difference {min_second:e} below -1e-8 max|C|");
    Ok(format!("max forward diff {max_fwd:.3e} < 0, min second diff {min_second:.3e} >= {:.3e}", -1e-8 * scale))
}

fn boundary_slope(p: &Problem, s: &Solution) -> Result<f64> {
    Ok(hjb_residual(&s.value.c_values, p)?.boundary_slope)
}

fn ac04(f: &Fig3) -> Result<String> {
    let (pc, sc) = &f.coarse;
    let (pf, sf) = &f.fine;
    ensure!((pf.grid.ds() * 2.0 - pc.grid.ds()).abs() < 1e-15, "fine grid does not halve the spacing");
    let dc = boundary_slope(pc, sc)?.abs();
    let df = boundary_slope(pf, sf)?.abs();
    let q_over_r = pc.params.q_rate / pc.params.r;
    let bound_c = 5.0 * pc.grid.ds() * q_over_r * pc.expected_stage_cost();
    let bound_f = 5.0 * pf.grid.ds() * q_over_r * pf.expected_stage_cost();
    ensure!(dc <= bound_c && df <= bound_f, "|C'(s̄)| = {dc:e}, {df:e} vs bounds {bound_c:e}, {bound_f:e}");
    ensure!(df <= 0.5 * dc, "halving Δs took |C'(s̄)| from {dc:e} to {df:e}");
    Ok(format!("|C'(s̄)| = {dc:.3e} -> {df:.3e} (ratio {:.3}), bound {bound_c:.3e}", df / dc))
}

fn ac05(f: &Fig3) -> Result<String> {
    let (p, s) = &f.coarse;
    let k = compute_kernel(&s.value.c_values, p)?;
    let kp = kernel_to_policy(&k, &p.grid);
    let rep = verify_collapse(&s.policy, &kp, p)?;
    ensure!(rep.applicable && rep.pass, "collapse deviation {:e} > {:e}", rep.sup_deviation, rep.tolerance);
    let b = p.params.b();
    ensure!(-b <= k.b0 && k.b0 < k.b1 && k.b1 <= p.grid.s_bar(), "break-points b0 = {}, b1 = {}", k.b0, k.b1);
    let margin = 2.0 * k.dp();
    let tol = 10.0 * k.tolerance;
    let (mut lower, mut middle, mut upper) = (0, 0, 0);
    for (&pp, &phi) in k.p_points.iter().zip(&k.phi_values) {
        if pp <= k.b0 - margin {
            ensure!((phi + pp).abs() <= tol, "phi({pp}) = {phi} off the -p branch");
            lower += 1;
        } else if pp >= (k.b1 + margin).min(p.grid.s_bar()) {
            ensure!(phi.abs() <= tol, "phi({pp}) = {phi} off the zero branch");
            upper += 1;
        } else if pp >= k.b0 + margin && pp <= k.b1 - margin {
            ensure!(phi > (-pp).max(0.0) + tol, "phi({pp}) = {phi} not interior");
            middle += 1;
        }
    }
    // With g'(0) = 0 the zero branch is the single point p = s̄.
    ensure!(k.phi(p.grid.s_bar()) == 0.0, "phi(s̄) = {}", k.phi(p.grid.s_bar()));
    ensure!(lower > 0 && middle > 0 && upper > 0, "missing a branch ({lower}, {middle}, {upper})");
    Ok(format!(
        "collapse {:.3e} <= {:.3e}; b0 = {:.4}, b1 = {:.4}; branch points {lower}/{middle}/{upper}",
        rep.sup_deviation, rep.tolerance, k.b0, k.b1
    ))
}

fn ac06(f: &Fig3) -> Result<String> {
    let (p, s) = &f.coarse;
    ensure!(p.params.positive_drift(), "Fig-3 configuration should have positive drift");
    let (n_s, n_w) = (p.grid.n_s(), p.grid.n_w());
    let u = |i, j| s.policy.u(i, j);
    let mut ws = 0.0f64;
    let mut ww = 0.0f64;
    for i in 0..n_s {
        for j in 0..n_w {
            if i > 0 {
                ws = ws.max(u(i - 1, j) - u(i, j));
            }
            if j > 0 {
                ww = ww.max(u(i, j - 1) - u(i, j));
            }
        }
    }
    ensure!(ws <= cell(p) && ww <= cell(p), "monotonicity violations {ws:e} (s), {ww:e} (w)");
    let k = compute_kernel(&s.value.c_values, p)?;
    let tol = 10.0 * k.tolerance;
    let mut worst = 0.0f64;
    for i in 0..k.p_points.len() {
        for j in i + 1..k.p_points.len() {
            let dp = k.p_points[j] - k.p_points[i];
            let d = k.phi_values[j] - k.phi_values[i];
            worst = worst.max(d).max(-dp - d);
        }
    }
    ensure!(worst <= tol, "kernel sandwich violated by {worst:e}");
    Ok(format!("policy violations s: {ws:.2e}, w: {ww:.2e} (cell {:.3e}); sandwich worst {worst:.2e}", cell(p)))
}

fn ac07(f: &Fig3) -> Result<String> {
    let mut out = Vec::new();
    for (p, s) in [&f.coarse, &f.fine] {
        let c = &s.value.c_values;
        let ds = p.grid.ds();
        let q_over_r = p.params.q_rate / p.params.r;
        let bound = -q_over_r * p.expected_stage_cost();
        let slack = 2.0 * ds * p.params.kappa() * q_over_r * p.expected_stage_cost();
        let min = c.windows(2).map(|w| (w[1] - w[0]) / ds).fold(f64::INFINITY, f64::min);
        ensure!(min >= bound - slack, "one-sided difference {min} below {bound} - {slack}");
        out.push(format!("n_s={}: min {min:.4} >= {bound:.4} - {slack:.2e}", p.grid.n_s()));
    }
    Ok(out.join("; "))
}

fn ac08(f: &Fig3) -> Result<String> {
    let rc = hjb_residual(&f.coarse.1.value.c_values, &f.coarse.0)?.sup_norm;
    let rf = hjb_residual(&f.fine.1.value.c_values, &f.fine.0)?.sup_norm;
    ensure!(rc / rf >= 1.8, "HJB residual only fell by {:.3} ({rc:e} -> {rf:e})", rc / rf);

    let mut cfg = config("linear.toml")?;
    cfg.grid.n_s = 400;
    let p = cfg.problem()?;
    let vi = solve(&p, TIGHT)?;
    let dde = solve_policy_dde(PolicyRef::Myopic, &p)?;
    let scale = vi.value.c_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = vi.value.c_values.iter().zip(&dde.c_values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    ensure!(err <= 1e-2, "myopic DDE differs from value iteration by {err:e} (relative)");
    Ok(format!("HJB sup residual {rc:.3e} -> {rf:.3e} (factor {:.2}); DDE vs VI rel {err:.2e}", rc / rf))
}

fn ac09(f: &Fig3) -> Result<String> {
    let cfg = config("fig3_quadratic.toml")?;
    let (p, s) = &f.coarse;
    let mut parts = Vec::new();
    for target in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let i = (target / p.grid.ds()).round() as usize;
        let s0 = p.grid.s_points[i];
        let mut sc = SimConfig::new(
            p.params.clone(),
            p.cost.clone(),
            SimPolicy::Table(s.policy.clone()),
            s0,
            cfg.simulation.seed,
        );
        sc.replications = 10_000;
        let mc = simulate(&sc)?;
        let c = s.value.c_values[i];
        let z = (mc.discounted_cost - c) / mc.stderr;
        ensure!(z.abs() <= 3.0, "s = {s0}: MC {} ± {} vs C = {c} (z = {z:.2})", mc.discounted_cost, mc.stderr);
        parts.push(format!("s={s0:.3}: z={z:+.2}"));
    }
    Ok(parts.join(", "))
}

fn per_rep(report: &BlackoutReport, label: &str, pred: impl Fn(f64) -> bool + Copy) -> Result<Vec<f64>> {
    let (_, run) = report.base_runs.iter().find(|(l, _)| l == label).context("missing policy run")?;
    Ok(run.replications.iter().map(|o| o.fraction(pred)).collect())
}

fn ac10() -> Result<String> {
    let cfg = config("blackout_shift.toml")?;
    let rep = run_blackout_experiments(&cfg, None)?;
    let big = |x: f64| x >= 0.9;
    let small = |x: f64| x > 1e-9 && x <= 0.5;
    let (d_big, se_big) = paired_difference(&per_rep(&rep, "optimal", big)?, &per_rep(&rep, "myopic", big)?)?;
    let (d_small, se_small) = paired_difference(&per_rep(&rep, "optimal", small)?, &per_rep(&rep, "myopic", small)?)?;
    ensure!(d_big < -3.0 * se_big, "large-blackout difference {d_big:e} not below -3 SE ({se_big:e})");
    ensure!(d_small > 3.0 * se_small, "small-blackout difference {d_small:e} not above 3 SE ({se_small:e})");
    Ok(format!(
        "cubic - myopic: P(>=0.9) {d_big:+.4} (SE {se_big:.1e}), P((0,0.5]) {d_small:+.4} (SE {se_small:.1e})"
    ))
}

fn ac11() -> Result<String> {
    let mut cfg = config("tail_curves.toml")?;
    cfg.apply(&Overrides::default())?;
    let rep = run_blackout_experiments(&cfg, None)?;
    let labels: Vec<String> = cfg.sweep.as_ref().unwrap().policies.iter().map(|p| p.label()).collect();
    ensure!(labels == ["myopic", "optimal_pow2", "optimal_pow3"], "unexpected policy set {labels:?}");
    for label in &labels {
        let curve: Vec<_> = rep.tail_vs_s_bar.iter().filter(|r| &r.policy == label).collect();
        for w in curve.windows(2) {
            let (d, se) = paired_difference(&w[1].per_replication, &w[0].per_replication)?;
            ensure!(d <= 3.0 * se, "{label}: tail rises from s̄ = {} to {} by {d:e} (SE {se:e})", w[0].axis_value, w[1].axis_value);
        }
        let curve: Vec<_> = rep.tail_vs_volatility.iter().filter(|r| &r.policy == label).collect();
        ensure!(curve.len() == 5, "volatility sweep must have five points");
        for w in curve.windows(2) {
            ensure!(w[1].volatility > w[0].volatility);
            let (d, se) = paired_difference(&w[1].per_replication, &w[0].per_replication)?;
            ensure!(d >= -3.0 * se, "{label}: tail falls from width {} to {} by {d:e}", w[0].axis_value, w[1].axis_value);
        }
    }
    let crossing = |l: &str| rep.crossings.iter().find(|c| c.policy == l).and_then(|c| c.s_bar);
    let (my, cubic) = (crossing("myopic"), crossing("optimal_pow3"));
    let (my, cubic) = (my.context("myopic never reaches the tail target")?, cubic.context("cubic never reaches the tail target")?);
    ensure!(cubic < my, "cubic reaches the target at s̄ = {cubic}, myopic at {my}");
    Ok(format!(
        "monotone in s̄ and volatility for {} policies; target {} reached at s̄ = {cubic} (cubic) vs {my} (myopic)",
        labels.len(),
        rep.tail_target.unwrap_or(f64::NAN)
    ))
}

fn report(id: u32, result: Result<String>) -> bool {
    match result {
        Ok(detail) => {
            println!("AC-{id:02} PASS {detail}");
            true
        }
        Err(e) => {
            println!("AC-{id:02} FAIL {e:#}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report(1, ac01());
    ok &= report(2, ac02());
    match fig3_with(200).and_then(|coarse| Ok(Fig3 { coarse, fine: fig3_with(399)? })) {
        Ok(f) => {
            ok &= report(3, ac03(&f));
            ok &= report(4, ac04(&f));
            ok &= report(5, ac05(&f));
            ok &= report(6, ac06(&f));
            ok &= report(7, ac07(&f));
            ok &= report(8, ac08(&f));
            ok &= report(9, ac09(&f));
        }
        Err(e) => {
            for id in 3..=9 {
                ok &= report(id, Err(anyhow::anyhow!("quadratic reference solve failed: {e:#}")));
            }
        }
    }
    ok &= report(10, ac10());
    ok &= report(11, ac11());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
