//! Certainty-equivalent revenue.
//!
//! The stochastic mileage revenue `θ_d Δ` is swapped for a constant
//! payment `C` in both actions, and `C` is chosen so that a new bus is
//! worth exactly as much as under the original revenue stream.

use serde::{Deserialize, Serialize};

use crate::draws::DrawBlock;
use crate::error::{Error, Result};
use crate::model::BusModel;
use crate::solver::{SolveConfig, Solver, StartPoint};

pub const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CePoint {
    /// Constant per-period payment in payoff units.
    pub c_payment: f64,
    pub baseline_value: f64,
    pub counterfactual_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_to_dollars: Option<f64>,
    pub bisections: usize,
}

impl CePoint {
    pub fn dollars(&self) -> Option<f64> {
        self.scale_to_dollars.map(|s| s * self.c_payment)
    }

    pub fn gap(&self) -> f64 {
        self.counterfactual_value - self.baseline_value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeComparison {
    pub ce_a: CePoint,
    pub ce_b: CePoint,
    /// `ce_b / ce_a`.
    pub ratio: f64,
}

impl CeComparison {
    pub fn new(ce_a: CePoint, ce_b: CePoint) -> Self {
        Self {
            ce_a,
            ce_b,
            ratio: ce_b.c_payment / ce_a.c_payment,
        }
    }
}

fn value_at_new_bus(model: &BusModel, draws: &DrawBlock, config: &SolveConfig) -> Result<f64> {
    let solver = Solver::new(model, draws)?;
    let report = solver.iterate(&StartPoint::UpperBound, config.tol_sup_norm, config.max_iters)?;
    if !report.converged {
        return Err(Error::NotConverged {
            start: "upper",
            iterations: report.iterations,
            residual: report.final_residual(),
        });
    }
    Ok(report.values()[0])
}

/// Revenue range over increments that occur with positive probability.
fn revenue_bracket(model: &BusModel) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in &model.transition.rows {
        for (delta, p) in row.iter().enumerate() {
            if *p > 0.0 {
                let r = model.payoff.theta_d * delta as f64;
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
    }
    (lo, hi)
}

/// Bisect on the constant payment until `|V_C(0) − V(0)| ≤ tol`.
///
/// Every solve shares one draw block so that the comparison is not
/// contaminated by simulation noise.
pub fn certainty_equivalent_with(model: &BusModel, config: &SolveConfig, tol: f64) -> Result<CePoint> {
    model.validate()?;
    config.validate()?;
    let draws = DrawBlock::for_solve(model.shocks.distribution, config.n_sim_eps, config.seed);
    let mut base = model.clone();
    base.payoff.constant_revenue = None;
    let baseline = value_at_new_bus(&base, &draws, config)?;

    let at = |c: f64| -> Result<f64> {
        let mut m = base.clone();
        m.payoff.constant_revenue = Some(c);
        value_at_new_bus(&m, &draws, config)
    };
    let point = |c: f64, v: f64, n: usize| CePoint {
        c_payment: c,
        baseline_value: baseline,
        counterfactual_value: v,
        scale_to_dollars: None,
        bisections: n,
    };

    let (mut lo, mut hi) = revenue_bracket(&base);
    let v_lo = at(lo)?;
    if (v_lo - baseline).abs() <= tol || lo == hi {
        return Ok(point(lo, v_lo, 0));
    }
    let v_hi = at(hi)?;
    if (v_hi - baseline).abs() <= tol {
        return Ok(point(hi, v_hi, 0));
    }
    if v_hi < v_lo {
        return Err(Error::NotMonotone);
    }
    if !(v_lo < baseline && baseline < v_hi) {
        return Err(Error::Bracket {
            lo,
            hi,
            value_lo: v_lo,
            value_hi: v_hi,
            target: baseline,
        });
    }

    let mut best = (lo, v_lo);
    for n in 1..=MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let v = at(mid)?;
        if (v - baseline).abs() < (best.1 - baseline).abs() {
            best = (mid, v);
        }
        if (v - baseline).abs() <= tol || mid <= lo || mid >= hi {
            return Ok(point(mid, v, n));
        }
        if v < baseline {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(point(best.0, best.1, MAX_BISECTIONS))
}

pub fn certainty_equivalent(model: &BusModel, tol: f64) -> Result<CePoint> {
    certainty_equivalent_with(model, &ce_solve_config(tol), tol)
}

/// Solver settings tight enough for a value match at `tol`.
pub fn ce_solve_config(tol: f64) -> SolveConfig {
    SolveConfig {
        tol_sup_norm: (tol * 1e-2).max(1e-12),
        ..SolveConfig::default()
    }
}

pub fn ce_comparison_with(a: &BusModel, b: &BusModel, config: &SolveConfig, tol: f64) -> Result<CeComparison> {
    if a.grid != b.grid || a.transition != b.transition {
        return Err(crate::error::invalid(
            "model_b",
            "both models must share the grid and the transition law",
        ));
    }
    let ce_a = certainty_equivalent_with(a, config, tol)?;
    let ce_b = certainty_equivalent_with(b, config, tol)?;
    Ok(CeComparison::new(ce_a, ce_b))
}

pub fn ce_comparison(a: &BusModel, b: &BusModel, tol: f64) -> Result<CeComparison> {
    ce_comparison_with(a, b, &ce_solve_config(tol), tol)
}
