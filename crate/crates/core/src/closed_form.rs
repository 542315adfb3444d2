//! Exact solution of the risk-neutral separable model with Gumbel shocks.
//!
//! With linear utility, a linear aggregator and standardized Gumbel taste
//! shocks, the expectation over shocks has the log-sum-exp form
//!
//! ```text
//! V(x) = s · log Σ_d exp(w_d(x) / s),    s = (1-β) σ √6 / π
//! w_d(x) = E_Δ[(1-β) π(d, x, Δ) + β V(x')]
//! ```
//!
//! and choice probabilities are binary logit in `w`. No simulation is
//! involved, which makes this an independent check on the solver.

use crate::error::{invalid, Result};
use crate::model::{Action, BusModel, ShockDistribution};
use crate::preferences::Family;

fn scale(model: &BusModel) -> f64 {
    (1.0 - model.preferences.beta) * model.payoff.sigma * 6f64.sqrt() / std::f64::consts::PI
}

fn check(model: &BusModel) -> Result<()> {
    let p = model.preferences;
    if p.family != Family::CaraEz || p.alpha != 0.0 || p.rho != 0.0 {
        return Err(invalid("preferences", "closed form needs CARA with alpha = rho = 0"));
    }
    if model.shocks.distribution != ShockDistribution::GumbelStandardized {
        return Err(invalid("shocks.distribution", "closed form needs Gumbel shocks"));
    }
    if !(model.payoff.sigma > 0.0) {
        return Err(invalid("payoff.sigma", "closed form needs sigma > 0"));
    }
    Ok(())
}

/// `w_d(x)` for both actions at every state.
pub fn logit_choice_values(model: &BusModel, v: &[f64]) -> Vec<[f64; 2]> {
    let beta = model.preferences.beta;
    (0..model.n_states())
        .map(|x| {
            Action::ALL.map(|d| {
                model
                    .transition
                    .row(d, x)
                    .iter()
                    .enumerate()
                    .map(|(delta, p)| {
                        p * ((1.0 - beta) * model.payoff(d, x, delta) + beta * v[model.next_state(d, x, delta)])
                    })
                    .sum()
            })
        })
        .collect()
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Fixed point by plain iteration, stopped at sup-norm change `tol`.
pub fn logit_value_function(model: &BusModel, tol: f64) -> Result<Vec<f64>> {
    model.validate()?;
    check(model)?;
    let s = scale(model);
    let mut v = vec![0.0; model.n_states()];
    for _ in 0..100_000 {
        let next: Vec<f64> = logit_choice_values(model, &v)
            .iter()
            .map(|w| s * log_sum_exp(w[0] / s, w[1] / s))
            .collect();
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if change <= tol {
            return Ok(v);
        }
    }
    Err(crate::error::Error::NotConverged {
        start: "zero",
        iterations: 100_000,
        residual: f64::NAN,
    })
}

/// Logit probability of replacement at every state.
pub fn logit_replace_probs(model: &BusModel, v: &[f64]) -> Result<Vec<f64>> {
    check(model)?;
    let s = scale(model);
    Ok(logit_choice_values(model, v)
        .iter()
        .map(|w| 1.0 / (1.0 + ((w[0] - w[1]) / s).exp()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_toy_model;
    use crate::preferences::PreferenceSpec;

    #[test]
    fn rejects_other_models() {
        let m = make_toy_model(PreferenceSpec::cara(0.3, 0.5, 0.9).unwrap());
        assert!(logit_value_function(&m, 1e-12).is_err());
    }

    #[test]
    fn satisfies_its_own_equation() {
        let mut m = make_toy_model(PreferenceSpec::cara(0.0, 0.0, 0.9).unwrap());
        m.shocks.distribution = ShockDistribution::GumbelStandardized;
        let v = logit_value_function(&m, 1e-14).unwrap();
        let s = scale(&m);
        for (x, w) in logit_choice_values(&m, &v).iter().enumerate() {
            assert!((s * log_sum_exp(w[0] / s, w[1] / s) - v[x]).abs() < 1e-12);
            assert!(v[x] > w[0].max(w[1]));
        }
    }
}
