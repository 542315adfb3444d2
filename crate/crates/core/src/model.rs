//! The bus-engine replacement problem.
//!
//! Each month the manager sees accumulated mileage `x` (in bins) and a pair
//! of taste shocks, then keeps (`d = 0`) or replaces (`d = 1`) the engine.
//! Mileage then grows by a random increment `Δ`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::preferences::PreferenceSpec;

/// Row sums of transition probabilities must be within this of one.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Keep,
    Replace,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Keep, Action::Replace];

    pub fn index(self) -> usize {
        match self {
            Action::Keep => 0,
            Action::Replace => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Action::Keep),
            1 => Some(Action::Replace),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateGrid {
    pub n_bins: usize,
    pub bin_width_miles: f64,
}

impl StateGrid {
    /// 130 bins of 3000 miles.
    pub fn empirical() -> Self {
        Self {
            n_bins: 130,
            bin_width_miles: 3000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffParams {
    /// Revenue per bin of mileage driven.
    pub theta_d: f64,
    /// Maintenance cost per bin of accumulated mileage.
    pub theta_x: f64,
    /// Replacement cost.
    pub rc: f64,
    /// Scale of the taste shock.
    pub sigma: f64,
    /// When set, the mileage revenue `θ_d Δ` is replaced by this constant
    /// for both actions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_revenue: Option<f64>,
}

impl PayoffParams {
    pub fn revenue(&self, delta: usize) -> f64 {
        match self.constant_revenue {
            Some(c) => c,
            None => self.theta_d * delta as f64,
        }
    }
}

/// Increment law `Pr(Δ | x)`, one row per mileage bin. A replaced engine
/// starts from zero mileage, so its increment is drawn from row 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionModel {
    pub rows: Vec<Vec<f64>>,
}

impl TransitionModel {
    /// The same increment distribution at every state.
    pub fn homogeneous(n_bins: usize, probs: &[f64]) -> Self {
        Self {
            rows: vec![probs.to_vec(); n_bins],
        }
    }

    pub fn n_delta(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, d: Action, x: usize) -> &[f64] {
        match d {
            Action::Keep => &self.rows[x],
            Action::Replace => &self.rows[0],
        }
    }

    pub fn validate(&self, n_bins: usize) -> Result<()> {
        if self.rows.len() < n_bins {
            return Err(invalid(
                format!("transition.rows[{}]", self.rows.len()),
                format!("missing row for state {}", self.rows.len()),
            ));
        }
        if self.rows.len() > n_bins {
            return Err(invalid(
                "transition.rows",
                format!("{} rows given for {} states", self.rows.len(), n_bins),
            ));
        }
        let width = self.n_delta();
        if width == 0 {
            return Err(invalid("transition.rows[0]", "empty increment distribution"));
        }
        for (x, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                return Err(invalid(
                    format!("transition.rows[{x}]"),
                    format!("state {x} has {} entries, expected {width}", row.len()),
                ));
            }
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(invalid(
                    format!("transition.rows[{x}]"),
                    format!("state {x} has a negative or non-finite probability"),
                ));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid(
                    format!("transition.rows[{x}]"),
                    format!("state {x} probabilities sum to {s}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockDistribution {
    StandardNormal,
    /// Type-I extreme value, recentred and rescaled to mean 0 and variance 1.
    GumbelStandardized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockSpec {
    pub distribution: ShockDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusModel {
    pub grid: StateGrid,
    pub payoff: PayoffParams,
    pub transition: TransitionModel,
    pub shocks: ShockSpec,
    pub preferences: PreferenceSpec,
}

impl BusModel {
    pub fn validate(&self) -> Result<()> {
        if self.grid.n_bins == 0 {
            return Err(invalid("grid.n_bins", "must be positive"));
        }
        if !(self.grid.bin_width_miles > 0.0) {
            return Err(invalid("grid.bin_width_miles", "must be positive"));
        }
        let p = &self.payoff;
        for (name, v) in [
            ("theta_d", p.theta_d),
            ("theta_x", p.theta_x),
            ("rc", p.rc),
            ("sigma", p.sigma),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("payoff.{name}"), "must be finite"));
            }
        }
        if p.sigma < 0.0 {
            return Err(invalid("payoff.sigma", "must be nonnegative"));
        }
        if p.rc < 0.0 {
            return Err(invalid("payoff.rc", "must be nonnegative"));
        }
        if let Some(c) = p.constant_revenue {
            if !c.is_finite() {
                return Err(invalid("payoff.constant_revenue", "must be finite"));
            }
        }
        self.transition.validate(self.grid.n_bins)?;
        self.preferences.validate()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let m: BusModel = serde_json::from_str(s).map_err(|e| invalid("model config", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json_str(&s)
    }

    pub fn n_states(&self) -> usize {
        self.grid.n_bins
    }

    pub fn payoff(&self, d: Action, x: usize, delta: usize) -> f64 {
        payoff(&self.payoff, d, x, delta)
    }

    pub fn next_state(&self, d: Action, x: usize, delta: usize) -> usize {
        next_state(&self.grid, d, x, delta)
    }

    /// Smallest and largest payoff over every reachable `(d, x, Δ)` with
    /// positive probability.
    pub fn payoff_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for d in Action::ALL {
            for x in 0..self.n_states() {
                for (k, &p) in self.transition.row(d, x).iter().enumerate() {
                    if p > 0.0 {
                        let v = self.payoff(d, x, k);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
        }
        (lo, hi)
    }

    pub fn with_preferences(&self, preferences: PreferenceSpec) -> Self {
        Self {
            preferences,
            ..self.clone()
        }
    }
}

/// Flow payoff before the taste shock.
pub fn payoff(p: &PayoffParams, d: Action, x: usize, delta: usize) -> f64 {
    match d {
        Action::Replace => p.revenue(delta) - p.rc,
        Action::Keep => p.revenue(delta) - p.theta_x * x as f64,
    }
}

pub fn consumption(p: &PayoffParams, d: Action, x: usize, delta: usize, eps_d: f64) -> f64 {
    payoff(p, d, x, delta) + p.sigma * eps_d
}

/// Mileage after the decision; the top bin absorbs any overflow.
pub fn next_state(grid: &StateGrid, d: Action, x: usize, delta: usize) -> usize {
    let raw = match d {
        Action::Replace => delta,
        Action::Keep => x + delta,
    };
    raw.min(grid.n_bins - 1)
}

/// Three-state model: mileage and increments in {0, 1, 2}.
pub fn make_toy_model(preferences: PreferenceSpec) -> BusModel {
    BusModel {
        grid: StateGrid {
            n_bins: 3,
            bin_width_miles: 3000.0,
        },
        payoff: PayoffParams {
            theta_d: 3.0,
            theta_x: 0.5,
            rc: 3.0,
            sigma: 2.0,
            constant_revenue: None,
        },
        transition: TransitionModel {
            rows: vec![vec![0.0, 0.5, 0.5], vec![0.2, 0.6, 0.2], vec![0.6, 0.4, 0.0]],
        },
        shocks: ShockSpec {
            distribution: ShockDistribution::StandardNormal,
        },
        preferences,
    }
}

/// Toy model under CARA preferences with `β = 0.9`.
pub fn toy_cara(alpha: f64, rho: f64) -> Result<BusModel> {
    Ok(make_toy_model(PreferenceSpec::cara(alpha, rho, 0.9)?))
}

impl std::str::FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0" | "keep" => Ok(Action::Keep),
            "1" | "replace" => Ok(Action::Replace),
            _ => Err(invalid("decision", format!("unknown action {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> BusModel {
        toy_cara(0.3, 0.5).unwrap()
    }

    #[test]
    fn payoff_examples() {
        let p = toy().payoff;
        assert_eq!(payoff(&p, Action::Replace, 2, 1), 0.0);
        assert_eq!(payoff(&p, Action::Keep, 2, 0), -1.0);
        assert_eq!(payoff(&p, Action::Keep, 0, 0), 0.0);
    }

    #[test]
    fn consumption_examples() {
        let mut p = toy().payoff;
        assert_eq!(consumption(&p, Action::Keep, 2, 0, 0.0), -1.0);
        p.theta_d = 0.0;
        assert_eq!(consumption(&p, Action::Keep, 0, 0, 1.0), 2.0);
        p.sigma = 1.607;
        p.theta_d = 1.0;
        assert!((consumption(&p, Action::Keep, 0, 1, -0.5) - 0.1965).abs() < 1e-12);
    }

    #[test]
    fn next_state_examples() {
        let g = StateGrid::empirical();
        assert_eq!(next_state(&g, Action::Replace, 77, 2), 2);
        assert_eq!(next_state(&g, Action::Keep, 5, 0), 5);
        assert_eq!(next_state(&g, Action::Keep, 129, 3), 129);
    }

    #[test]
    fn toy_model_rows() {
        let m = toy();
        m.validate().unwrap();
        assert_eq!(m.transition.rows[1][1], 0.6);
        assert_eq!(m.transition.rows[2][2], 0.0);
        assert!((m.transition.rows[2].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.payoff_range(), (-1.0, 6.0));
    }

    #[test]
    fn missing_row_names_state() {
        let mut m = toy();
        m.transition.rows.pop();
        let msg = m.validate().unwrap_err().to_string();
        assert!(msg.contains("state 2"), "{msg}");
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let m = toy();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(BusModel::from_json_str(&s).unwrap(), m);
        let bad = s.replacen("\"rc\"", "\"bogus\":1,\"rc\"", 1);
        assert!(BusModel::from_json_str(&bad).is_err());
    }

    #[test]
    fn constant_revenue_replaces_mileage_term() {
        let mut p = toy().payoff;
        p.constant_revenue = Some(1.25);
        assert_eq!(payoff(&p, Action::Keep, 0, 2), 1.25);
        assert_eq!(payoff(&p, Action::Replace, 0, 0), 1.25 - 3.0);
    }
}
