//! Dynamic discrete choice models with Epstein-Zin preferences.
//!
//! The crate solves, simulates and estimates a bus-engine replacement model
//! in which the agent's risk attitude and intertemporal substitution are
//! governed by separate parameters. Under equal parameters the model nests
//! the familiar time-separable specification.

// `!(x >= 0.0)` is used on purpose so that NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ccp;
pub mod closed_form;
pub mod counterfactual;
pub mod draws;
pub mod error;
pub mod estimation;
pub mod model;
pub mod preferences;
pub mod solver;

/// Library version recorded in every output manifest.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use draws::DrawBlock;
pub use error::{Error, Result};
pub use model::{Action, BusModel, PayoffParams, ShockDistribution, ShockSpec, StateGrid, TransitionModel};
pub use preferences::{Family, PreferenceSpec, Resolution, Timing, TwoPeriodLottery};
pub use solver::{Bounds, SolveConfig, SolveReport, Solver, StartPoint, ValueFunction};
pub use ccp::{ccp, simulate_panel, CcpTable};
pub use counterfactual::{ce_comparison, certainty_equivalent, CeComparison, CePoint};
pub use estimation::{
    fit, lr_test, EstimateResult, EstimationConfig, Likelihood, LrTest, Observation, PanelDataset, ParamName,
    Specification, StructuralParams,
};
