//! TOML experiment configuration.

use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use storage_reliability::{Problem, SolverOptions, StageCost, SystemParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub scenario: Option<String>,
    pub system: SystemParams,
    pub cost: StageCost,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_s: usize,
    pub n_w: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_s: 200, n_w: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig { tol: d.tol, max_iter: d.max_iter }
    }
}

impl From<SolverConfig> for SolverOptions {
    fn from(c: SolverConfig) -> Self {
        SolverOptions { tol: c.tol, max_iter: c.max_iter }
    }
}

/// Which withdrawal rule to simulate or compare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyChoice {
    Myopic,
    Zero,
    /// Optimal policy for `cost`, or for the configuration's stage cost.
    Optimal {
        #[serde(default)]
        cost: Option<StageCost>,
    },
}

impl PolicyChoice {
    pub fn label(&self) -> String {
        match self {
            PolicyChoice::Myopic => "myopic".into(),
            PolicyChoice::Zero => "zero".into(),
            PolicyChoice::Optimal { cost: None } => "optimal".into(),
            PolicyChoice::Optimal { cost: Some(c) } => match c {
                StageCost::Linear { .. } => "optimal_linear".into(),
                StageCost::Power { exponent, .. } => format!("optimal_pow{exponent}"),
                StageCost::Table { .. } => "optimal_table".into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub policy: PolicyChoice,
    /// Defaults to full storage.
    pub initial_s: Option<f64>,
    pub replications: usize,
    pub seed: u64,
    /// Fixed horizon; when absent it follows from `epsilon`.
    pub horizon: Option<f64>,
    pub epsilon: f64,
    /// Defaults to `20/θ`.
    pub burn_in: Option<f64>,
    pub bins: usize,
    pub tail_thresholds: Option<Vec<f64>>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            policy: PolicyChoice::Optimal { cost: None },
            initial_s: None,
            replications: 10_000,
            seed: 0,
            horizon: None,
            epsilon: 1e-6,
            burn_in: None,
            bins: 20,
            tail_thresholds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    ValueOfStorage,
    Blackout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    /// Capacity axis.
    #[serde(default)]
    pub s_bar: Vec<f64>,
    /// Arrival-rate axis of the value-of-storage sweep; defaults to the
    /// configured rate.
    #[serde(default)]
    pub q_rate: Vec<f64>,
    /// Volatility axis: widths of uniform shock laws centred on `mean`.
    #[serde(default)]
    pub widths: Vec<f64>,
    #[serde(default)]
    pub mean: Option<f64>,
    /// Capacity used for the volatility axis; defaults to the configured one.
    #[serde(default)]
    pub volatility_s_bar: Option<f64>,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyChoice>,
    #[serde(default = "default_threshold")]
    pub tail_threshold: f64,
    /// Tail level whose first crossing along the capacity axis is reported.
    #[serde(default)]
    pub tail_target: Option<f64>,
    #[serde(default = "default_sweep_reps")]
    pub replications: usize,
    /// Observation window after burn-in for stationary statistics.
    #[serde(default = "default_window")]
    pub window: f64,
}

fn default_policies() -> Vec<PolicyChoice> {
    vec![PolicyChoice::Myopic, PolicyChoice::Optimal { cost: None }]
}

fn default_threshold() -> f64 {
    0.9
}

fn default_sweep_reps() -> usize {
    200
}

fn default_window() -> f64 {
    1000.0
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub s_bar: Option<f64>,
    pub q_rate: Option<f64>,
    pub seed: Option<u64>,
}

fn strictly_increasing(name: &str, xs: &[f64]) -> anyhow::Result<()> {
    if xs.windows(2).any(|p| !(p[1] > p[0])) {
        bail!("sweep list `{name}` must be strictly increasing");
    }
    Ok(())
}

impl Config {
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let cfg: Config = toml::from_str(text).context("parsing configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) -> anyhow::Result<()> {
        if let Some(v) = o.s_bar {
            self.system.s_bar = v;
        }
        if let Some(v) = o.q_rate {
            self.system.q_rate = v;
        }
        if let Some(v) = o.seed {
            self.simulation.seed = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.system.validate()?;
        self.cost.validate()?;
        if !(self.solver.tol > 0.0) {
            bail!("solver tolerance must be positive");
        }
        if let Some(s) = &self.sweep {
            strictly_increasing("s_bar", &s.s_bar)?;
            strictly_increasing("q_rate", &s.q_rate)?;
            strictly_increasing("widths", &s.widths)?;
            for p in &s.policies {
                if let PolicyChoice::Optimal { cost: Some(c) } = p {
                    c.validate()?;
                }
            }
            if s.policies.is_empty() && s.kind == SweepKind::Blackout {
                bail!("blackout experiments need at least one policy");
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> anyhow::Result<Problem> {
        self.problem_for(self.system.clone(), self.cost.clone())
    }

    pub fn problem_for(&self, system: SystemParams, cost: StageCost) -> anyhow::Result<Problem> {
        Ok(Problem::new(system, cost, self.grid.n_s, self.grid.n_w)?)
    }

    /// Stable canonical form: JSON with sorted keys.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("configuration serializes");
        serde_json::to_string(&value).expect("JSON value serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG3: &str = r#"
        [system]
        theta = 0.1
        r = 1.0
        q_rate = 0.8
        s_bar = 2.0
        shock = { kind = "uniform", params = { a = 0.0, b = 1.0 } }

        [cost]
        kind = "power"
        params = { exponent = 2.0 }
    "#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let c = Config::from_toml_str(FIG3).unwrap();
        assert_eq!(c.grid, GridConfig { n_s: 200, n_w: 200 });
        assert_eq!(c.cost, StageCost::quadratic());
        assert_eq!(c.simulation.replications, 10_000);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_sweeps() {
        assert!(Config::from_toml_str(&format!("{FIG3}\n[grid]\nn_x = 3\n")).is_err());
        let bad = format!("{FIG3}\n[sweep]\nkind = \"value_of_storage\"\ns_bar = [0.0, 2.0, 1.0]\n");
        assert!(Config::from_toml_str(&bad).is_err());
    }

    #[test]
    fn overrides_change_the_canonical_form() {
        let mut c = Config::from_toml_str(FIG3).unwrap();
        let before = c.canonical_json();
        c.apply(&Overrides { s_bar: Some(1.0), ..Default::default() }).unwrap();
        assert_ne!(before, c.canonical_json());
        assert!(c.apply(&Overrides { q_rate: Some(-1.0), ..Default::default() }).is_err());
    }

    #[test]
    fn policy_labels() {
        assert_eq!(PolicyChoice::Optimal { cost: Some(StageCost::cubic()) }.label(), "optimal_pow3");
        assert_eq!(PolicyChoice::Myopic.label(), "myopic");
    }
}
