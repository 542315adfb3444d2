//! Monte Carlo studies on synthetic panels: parameter recovery on the
//! empirical grid, and the direction of the bias from imposing
//! separability on the toy model.

use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerConfig;
use super::params::{ParamName, StructuralParams};
use super::{fit, EstimateResult, EstimationConfig, Specification};
use crate::ccp::simulate_panel;
use crate::error::Result;
use crate::estimation::panel::PanelDataset;
use crate::model::{make_toy_model, BusModel, PayoffParams, ShockDistribution, ShockSpec, StateGrid, TransitionModel};
use crate::preferences::PreferenceSpec;
use crate::solver::{solve, SolveConfig};

/// Increment law used for synthetic panels on the empirical grid.
pub const RECOVERY_DELTA_PROBS: [f64; 3] = [0.30, 0.55, 0.15];

pub const RECOVERY_TRUTH: StructuralParams = StructuralParams {
    theta_d: 0.05,
    theta_x: 0.10,
    sigma: 1.6,
    alpha: 0.10,
    rho: 0.55,
};

/// Solver settings used to generate data, deliberately finer than the
/// ones used inside the likelihood.
pub fn data_solve_config(seed: u64) -> SolveConfig {
    SolveConfig {
        n_sim_eps: 2500,
        tol_sup_norm: 1e-8,
        seed,
        ..SolveConfig::default()
    }
}

pub fn recovery_model(theta: &StructuralParams) -> Result<BusModel> {
    let grid = StateGrid::empirical();
    let model = BusModel {
        grid,
        payoff: PayoffParams {
            theta_d: theta.theta_d,
            theta_x: theta.theta_x,
            rc: 8.0,
            sigma: theta.sigma,
            constant_revenue: None,
        },
        transition: TransitionModel::homogeneous(grid.n_bins, &RECOVERY_DELTA_PROBS),
        shocks: ShockSpec {
            distribution: ShockDistribution::StandardNormal,
        },
        preferences: PreferenceSpec::cara(theta.alpha, theta.rho, 0.9)?,
    };
    model.validate()?;
    Ok(model)
}

/// Draw a panel from `model`, solving it first.
pub fn simulate_from(model: &BusModel, n_buses: usize, n_months: usize, seed: u64) -> Result<PanelDataset> {
    let report = solve(model, &data_solve_config(seed))?;
    simulate_panel(model, report.values(), n_buses, n_months, seed)
}

/// Nonseparable fit settings for the recovery study. The search starts at
/// the truth; the question is whether the reported intervals cover it.
pub fn recovery_config(seed: u64) -> EstimationConfig {
    let mut cfg = EstimationConfig::default();
    Specification::Nonseparable.apply(&mut cfg);
    cfg.initial = RECOVERY_TRUTH;
    cfg.solver = SolveConfig {
        n_sim_eps: 200,
        tol_sup_norm: 1e-7,
        seed: seed ^ 0x5eed,
        ..SolveConfig::default()
    };
    cfg.ccp_draws = 5000;
    cfg.optimizer = OptimizerConfig {
        max_evals: 250,
        initial_simplex_scale: 0.1,
        f_tol: 1e-2,
        restart: true,
    };
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub seed: u64,
    pub estimate: EstimateResult,
    /// Per free parameter: does its 95% interval contain the truth?
    pub covered: Vec<bool>,
    /// Per free parameter: interval width is strictly positive.
    pub nonzero_width: Vec<bool>,
}

pub fn recovery_replication(seed: u64, n_buses: usize, n_months: usize) -> Result<RecoveryOutcome> {
    let truth = recovery_model(&RECOVERY_TRUTH)?;
    let data = simulate_from(&truth, n_buses, n_months, seed)?;
    let estimate = fit(&data, &recovery_config(seed))?;
    let mut covered = Vec::new();
    let mut nonzero_width = Vec::new();
    for p in &estimate.free_params {
        match estimate.confidence_interval(*p) {
            Some((lo, hi)) => {
                let t = RECOVERY_TRUTH.get(*p);
                covered.push(lo <= t && t <= hi);
                nonzero_width.push(hi > lo);
            }
            None => {
                covered.push(false);
                nonzero_width.push(false);
            }
        }
    }
    Ok(RecoveryOutcome {
        seed,
        estimate,
        covered,
        nonzero_width,
    })
}

/// Toy-model truth for the bias study: the agent prefers late resolution.
pub const BIAS_ALPHA: f64 = 0.3;
pub const BIAS_RHO: f64 = 0.5;

/// Simulate from the toy model at `(α, ρ) = (0.3, 0.5)` and fit with `ρ`
/// tied to `α`, everything else held at the truth. Returns `α̂`.
pub fn bias_replication(seed: u64, n_buses: usize, n_months: usize) -> Result<f64> {
    let truth = make_toy_model(PreferenceSpec::cara(BIAS_ALPHA, BIAS_RHO, 0.9)?);
    let data = simulate_from(&truth, n_buses, n_months, seed)?;
    let p = truth.payoff;
    let mut cfg = EstimationConfig {
        grid: truth.grid,
        beta_fixed: truth.preferences.beta,
        rc_fixed: p.rc,
        free_params: vec![ParamName::Alpha],
        separable_constraint: true,
        initial: StructuralParams {
            theta_d: p.theta_d,
            theta_x: p.theta_x,
            sigma: p.sigma,
            alpha: BIAS_ALPHA,
            rho: BIAS_ALPHA,
        },
        ccp_draws: 40_000,
        ..EstimationConfig::default()
    };
    cfg.solver = SolveConfig {
        n_sim_eps: 1000,
        tol_sup_norm: 1e-9,
        seed: seed ^ 0xb1a5,
        ..SolveConfig::default()
    };
    cfg.optimizer = OptimizerConfig {
        max_evals: 200,
        initial_simplex_scale: 0.3,
        f_tol: 1e-6,
        restart: true,
    };
    Ok(fit(&data, &cfg)?.theta_hat.alpha)
}
