//! Domain types: system parameters, shock distributions, stage costs and the
//! discretization grid shared by the solver, the structural checks and the
//! simulator.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numeric::{hermite_eval, hermite_slope, invert_monotone, segment_index};

/// Converts a power imbalance into the normalized energy imbalance `P²/(2ζ)`,
/// where `zeta` is the ramp limit of the controllable generation.
pub fn power_to_energy_imbalance(p_imbalance: f64, zeta: f64) -> Result<f64> {
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(invalid(format!("generator ramp must be positive, got {zeta}")));
    }
    Ok(p_imbalance * p_imbalance / (2.0 * zeta))
}

/// Jump-size law of the compound Poisson deficit process. Support is always a
/// subset of `[0, B]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ShockDistribution {
    Deterministic { value: f64 },
    Uniform { a: f64, b: f64 },
    /// `(value, probability)` pairs.
    Discrete { points: Vec<(f64, f64)> },
}

const SIMPSON_INTERVALS: usize = 1024;

impl ShockDistribution {
    pub fn deterministic(value: f64) -> Result<Self> {
        let d = ShockDistribution::Deterministic { value };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        let d = ShockDistribution::Uniform { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn discrete(points: Vec<(f64, f64)>) -> Result<Self> {
        let d = ShockDistribution::Discrete { points };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ShockDistribution::Deterministic { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(invalid(format!("deterministic shock must be finite and >= 0, got {value}")));
                }
            }
            ShockDistribution::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && *a >= 0.0 && b >= a) {
                    return Err(invalid(format!("uniform shock needs 0 <= a <= b < inf, got [{a}, {b}]")));
                }
            }
            ShockDistribution::Discrete { points } => {
                if points.is_empty() {
                    return Err(invalid("discrete shock distribution has no points"));
                }
                let mut total = 0.0;
                for &(v, p) in points {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(invalid(format!("discrete shock value {v} outside [0, inf)")));
                    }
                    if !(p.is_finite() && p >= 0.0) {
                        return Err(invalid(format!("discrete shock probability {p} is negative")));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(invalid(format!("discrete probabilities sum to {total}, expected 1")));
                }
            }
        }
        Ok(())
    }

    /// Supremum `B` of the support.
    pub fn upper_bound(&self) -> f64 {
        match self {
            ShockDistribution::Deterministic { value } => *value,
            ShockDistribution::Uniform { b, .. } => *b,
            ShockDistribution::Discrete { points } => points
                .iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(v, _)| *v)
                .fold(0.0, f64::max),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ShockDistribution::Deterministic { value } => *value,
            ShockDistribution::Uniform { a, b } => 0.5 * (a + b),
            ShockDistribution::Discrete { points } => points.iter().map(|(v, p)| v * p).sum(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            ShockDistribution::Deterministic { value } => value * value,
            ShockDistribution::Uniform { a, b } => (a * a + a * b + b * b) / 3.0,
            ShockDistribution::Discrete { points } => points.iter().map(|(v, p)| v * v * p).sum(),
        }
    }

    /// `E[f(W)]`. Exact for atomic laws; composite Simpson with
    /// 1024 intervals for the uniform law.
    pub fn expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.expectation_with(f, SIMPSON_INTERVALS)
    }

    /// Same as [`expectation`](Self::expectation) with at least `nodes`
    /// quadrature nodes for continuous laws.
    pub fn expectation_with<F: Fn(f64) -> f64>(&self, f: F, nodes: usize) -> f64 {
        match self {
            ShockDistribution::Deterministic { value } => f(*value),
            ShockDistribution::Discrete { points } => points.iter().map(|&(v, p)| p * f(v)).sum(),
            ShockDistribution::Uniform { a, b } => {
                if b == a {
                    return f(*a);
                }
                // Simpson needs an even interval count.
                let n = nodes.max(2).div_ceil(2) * 2;
                let h = (b - a) / n as f64;
                let mut acc = f(*a) + f(*b);
                for k in 1..n {
                    let x = a + k as f64 * h;
                    acc += if k % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
                }
                acc * h / 3.0 / (b - a)
            }
        }
    }
}

/// Free-function form of [`ShockDistribution::expectation`].
pub fn shock_expectation<F: Fn(f64) -> f64>(dist: &ShockDistribution, f: F) -> f64 {
    dist.expectation(f)
}

/// Blackout penalty `g` on blackout size. Bounded, strictly increasing,
/// `g(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum StageCost {
    Linear {
        beta: f64,
    },
    /// `scale · x^exponent`
    Power {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Monotone samples of `g` with explicit derivative samples, interpolated
    /// by cubic Hermite segments.
    Table { x: Vec<f64>, g: Vec<f64>, dg: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl StageCost {
    pub fn linear(beta: f64) -> Result<Self> {
        let c = StageCost::Linear { beta };
        c.validate()?;
        Ok(c)
    }

    pub fn power(exponent: f64, scale: f64) -> Result<Self> {
        let c = StageCost::Power { exponent, scale };
        c.validate()?;
        Ok(c)
    }

    pub fn quadratic() -> Self {
        StageCost::Power { exponent: 2.0, scale: 1.0 }
    }

    pub fn cubic() -> Self {
        StageCost::Power { exponent: 3.0, scale: 1.0 }
    }

    pub fn table(x: Vec<f64>, g: Vec<f64>, dg: Vec<f64>) -> Result<Self> {
        let c = StageCost::Table { x, g, dg };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StageCost::Linear { beta } => {
                if !(*beta > 0.0 && beta.is_finite()) {
                    return Err(invalid(format!("linear cost slope must be positive, got {beta}")));
                }
            }
            StageCost::Power { exponent, scale } => {
                if !(*exponent >= 1.0 && exponent.is_finite()) {
                    return Err(invalid(format!("power cost exponent must be >= 1, got {exponent}")));
                }
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(invalid(format!("power cost scale must be positive, got {scale}")));
                }
            }
            StageCost::Table { x, g, dg } => {
                if x.len() < 2 || x.len() != g.len() || x.len() != dg.len() {
                    return Err(invalid("table cost needs >= 2 samples with matching x, g, dg lengths"));
                }
                if x[0] != 0.0 || g[0] != 0.0 {
                    return Err(invalid("table cost must start at x = 0 with g(0) = 0"));
                }
                if x.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("table cost abscissae must be strictly increasing"));
                }
                if g.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("table cost must be strictly increasing"));
                }
                if dg.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                    return Err(invalid("table cost derivative samples must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            StageCost::Linear { beta } => beta * x,
            StageCost::Power { exponent, scale } => scale * pow(x, *exponent),
            StageCost::Table { x: xs, g, dg } => hermite_eval(xs, g, dg, x.clamp(xs[0], xs[xs.len() - 1])),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            StageCost::Linear { beta } => *beta,
            StageCost::Power { exponent, scale } => {
                if *exponent == 1.0 {
                    *scale
                } else {
                    scale * exponent * pow(x, exponent - 1.0)
                }
            }
            StageCost::Table { x: xs, g, dg } => hermite_slope(xs, g, dg, x.clamp(xs[0], xs[xs.len() - 1])),
        }
    }

    /// Smallest `x >= 0` with `g'(x) = y`; `None` when `g'` is constant.
    /// Values of `y` below `g'(0)` map to 0; table costs clamp to the last
    /// sample above the range.
    pub fn inverse_derivative(&self, y: f64) -> Option<f64> {
        match self {
            StageCost::Linear { .. } => None,
            StageCost::Power { exponent, scale } => {
                if *exponent == 1.0 {
                    None
                } else if y <= 0.0 {
                    Some(0.0)
                } else {
                    Some((y / (scale * exponent)).powf(1.0 / (exponent - 1.0)))
                }
            }
            StageCost::Table { x, dg, .. } => {
                if dg.windows(2).all(|w| w[1] == w[0]) {
                    None
                } else {
                    Some(invert_monotone(x, dg, y))
                }
            }
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            StageCost::Linear { .. } | StageCost::Power { .. } => true,
            StageCost::Table { dg, .. } => dg.windows(2).all(|w| w[1] >= w[0]),
        }
    }

    pub fn is_strictly_convex(&self) -> bool {
        match self {
            StageCost::Linear { .. } => false,
            StageCost::Power { exponent, .. } => *exponent > 1.0,
            StageCost::Table { dg, .. } => dg.windows(2).all(|w| w[1] > w[0]),
        }
    }
}

#[inline]
fn pow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else if e == 3.0 {
        x * x * x
    } else {
        x.max(0.0).powf(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSign {
    PositiveOrZero,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Discount rate.
    pub theta: f64,
    /// Storage charging ramp.
    pub r: f64,
    /// Poisson arrival rate of deficit shocks.
    pub q_rate: f64,
    /// Storage capacity.
    pub s_bar: f64,
    pub shock: ShockDistribution,
}

impl SystemParams {
    pub fn new(theta: f64, r: f64, q_rate: f64, s_bar: f64, shock: ShockDistribution) -> Result<Self> {
        let p = SystemParams { theta, r, q_rate, s_bar, shock };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("theta", self.theta)?;
        positive("r", self.r)?;
        positive("q_rate", self.q_rate)?;
        if !(self.s_bar >= 0.0 && self.s_bar.is_finite()) {
            return Err(invalid(format!("s_bar must be >= 0, got {}", self.s_bar)));
        }
        self.shock.validate()
    }

    pub fn b(&self) -> f64 {
        self.shock.upper_bound()
    }

    /// `Q·E[W²]`
    pub fn volatility(&self) -> f64 {
        self.q_rate * self.shock.second_moment()
    }

    pub fn drift_sign(&self) -> DriftSign {
        if self.q_rate * self.shock.mean() <= self.r {
            DriftSign::PositiveOrZero
        } else {
            DriftSign::Negative
        }
    }

    pub fn positive_drift(&self) -> bool {
        self.drift_sign() == DriftSign::PositiveOrZero
    }

    /// Contraction modulus `Q/(Q+θ)` of the Bellman operator.
    pub fn modulus(&self) -> f64 {
        self.q_rate / (self.q_rate + self.theta)
    }

    /// `(Q+θ)/r`, the exponential rate of the charging-time smoothing in `s`.
    pub fn kappa(&self) -> f64 {
        (self.q_rate + self.theta) / self.r
    }
}

pub fn volatility(params: &SystemParams) -> f64 {
    params.volatility()
}

pub fn drift_sign(params: &SystemParams) -> DriftSign {
    params.drift_sign()
}

/// Uniform storage grid on `[0, s̄]` and quadrature nodes for the shock law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub s_points: Vec<f64>,
    pub w_points: Vec<f64>,
    pub w_weights: Vec<f64>,
}

impl Grid {
    /// `n_s` storage samples (forced to 1 when `s̄ = 0`) and `n_w` trapezoid
    /// nodes for uniform shocks. Atomic laws use their atoms directly.
    pub fn new(s_bar: f64, shock: &ShockDistribution, n_s: usize, n_w: usize) -> Result<Self> {
        shock.validate()?;
        let s_points = if s_bar == 0.0 {
            vec![0.0]
        } else {
            if n_s < 2 {
                return Err(invalid(format!("need n_s >= 2 for positive capacity, got {n_s}")));
            }
            let ds = s_bar / (n_s - 1) as f64;
            let mut pts: Vec<f64> = (0..n_s).map(|i| i as f64 * ds).collect();
            pts[n_s - 1] = s_bar;
            pts
        };

        let (w_points, w_weights) = match shock {
            ShockDistribution::Deterministic { value } => (vec![*value], vec![1.0]),
            ShockDistribution::Discrete { points } => {
                let mut atoms: Vec<(f64, f64)> = points.iter().copied().filter(|(_, p)| *p > 0.0).collect();
                atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
                for (v, p) in atoms {
                    match merged.last_mut() {
                        Some(last) if last.0 == v => last.1 += p,
                        _ => merged.push((v, p)),
                    }
                }
                merged.into_iter().unzip()
            }
            ShockDistribution::Uniform { a, b } => {
                if a == b {
                    (vec![*a], vec![1.0])
                } else {
                    if n_w < 2 {
                        return Err(invalid(format!("need n_w >= 2 for a uniform shock, got {n_w}")));
                    }
                    let h = (b - a) / (n_w - 1) as f64;
                    let mut pts: Vec<f64> = (0..n_w).map(|k| a + k as f64 * h).collect();
                    pts[n_w - 1] = *b;
                    let inner = h / (b - a);
                    let mut wts = vec![inner; n_w];
                    wts[0] = 0.5 * inner;
                    wts[n_w - 1] = 0.5 * inner;
                    (pts, wts)
                }
            }
        };
        Ok(Grid { s_points, w_points, w_weights })
    }

    pub fn for_params(params: &SystemParams, n_s: usize, n_w: usize) -> Result<Self> {
        Grid::new(params.s_bar, &params.shock, n_s, n_w)
    }

    pub fn n_s(&self) -> usize {
        self.s_points.len()
    }

    pub fn n_w(&self) -> usize {
        self.w_points.len()
    }

    pub fn s_bar(&self) -> f64 {
        *self.s_points.last().unwrap()
    }

    /// Storage spacing; 0 for the single-node grid.
    pub fn ds(&self) -> f64 {
        if self.n_s() < 2 {
            0.0
        } else {
            self.s_points[1] - self.s_points[0]
        }
    }

    /// Largest gap between shock nodes; 0 with a single node.
    pub fn dw(&self) -> f64 {
        self.w_points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Quadrature estimate of `E[f(W)]` on the shock nodes.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.w_points.iter().zip(&self.w_weights).map(|(&w, &p)| p * f(w)).sum()
    }

    /// Index `i` of the storage cell `[s_i, s_{i+1}]` containing `s`.
    pub fn s_cell(&self, s: f64) -> usize {
        segment_index(&self.s_points, s)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.n_s() == other.n_s() && self.n_w() == other.n_w()
    }
}

/// A fully specified instance: system, stage cost and discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub params: SystemParams,
    pub cost: StageCost,
    pub grid: Grid,
}

impl Problem {
    pub fn new(params: SystemParams, cost: StageCost, n_s: usize, n_w: usize) -> Result<Self> {
        params.validate()?;
        cost.validate()?;
        let grid = Grid::for_params(&params, n_s, n_w)?;
        Ok(Problem { params, cost, grid })
    }

    /// Quadrature value of `E[g(W)]` on the shock nodes.
    pub fn expected_stage_cost(&self) -> f64 {
        self.grid.expect(|w| self.cost.value(w))
    }

    /// `(Q/θ)·E[g(W)]`, the cost of having no storage at all.
    pub fn no_storage_cost(&self) -> f64 {
        self.params.q_rate / self.params.theta * self.expected_stage_cost()
    }
}
