//! Optimal storage withdrawal under compound-Poisson energy-deficit shocks
//! with a charging ramp constraint.
//!
//! The crate is organised around the storage-withdrawal control problem:
//!
//! * [`model`]: system parameters, shock laws, stage costs and grids.
//! * [`dp`]: Bellman operator, value iteration, `C(s)` and the optimal policy.
//! * [`kernel`]: the one-dimensional kernel representation of the optimal
//!   policy for strictly convex stage costs.
//! * [`dde`]: per-policy delay differential equation and HJB residuals.
//! * [`verify`]: executable checks of the structural properties of `C`,
//!   the optimal policy and the kernel.
//! * [`sim`]: exact event-driven simulation and blackout statistics.

pub mod dde;
pub mod dp;
pub mod error;
pub mod kernel;
pub mod model;
pub mod numeric;
pub mod sim;
pub mod verify;

pub use dp::{
    bellman_apply, cost_from_value, discounted_transition_expectation, extract_policy, solve, value_iterate,
    Continuation, PolicyTable, Solution, SolveStatus, SolverOptions, ValueTable,
};
pub use error::{Error, Result};
pub use model::{
    drift_sign, power_to_energy_imbalance, shock_expectation, volatility, DriftSign, Grid, Problem,
    ShockDistribution, StageCost, SystemParams,
};
pub use dde::{hjb_residual, solve_policy_dde, DdeSolution, HjbResidual, PolicyRef};
pub use kernel::{compute_kernel, kernel_to_policy, myopic_policy, verify_collapse, CollapseReport, KernelPolicy};
pub use sim::{
    blackout_distribution, paired_difference, simulate, simulate_replication, BlackoutStats, Horizon, SimConfig,
    SimPolicy, SimulationResult,
};
pub use verify::{verify_theorems, ClaimResult, ClaimStatus, VerificationReport};
