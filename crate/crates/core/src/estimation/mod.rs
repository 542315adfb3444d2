//! Nested fixed-point simulated maximum likelihood.
//!
//! For each trial parameter vector the value function is solved on a fixed
//! block of draws, choice probabilities are simulated on a second fixed
//! block, and the panel's log-likelihood is
//!
//! ```text
//! LL(θ) = Σ_{x,d} n_{x,d} log p(d | x; θ) + Σ_obs log Pr(Δ | x)
//! ```
//!
//! where the second term does not depend on `θ` and is computed once.

pub mod optimizer;
pub mod panel;
pub mod params;
pub mod recovery;
pub mod transition;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::draws::{DrawBlock, Purpose};
use crate::error::{invalid, Error, Result};
use crate::model::{Action, BusModel, PayoffParams, ShockDistribution, ShockSpec, StateGrid, TransitionModel};
use crate::preferences::{Family, PreferenceSpec};
use crate::solver::{SolveConfig, Solver, StartPoint};

pub use optimizer::{nelder_mead, Minimum, OptimizerConfig};
pub use panel::{Observation, PanelDataset};
pub use params::{ParamName, StructuralParams, Transform};
pub use transition::estimate_transition;

/// Finite-difference step for scores, in transformed coordinates.
pub const SCORE_STEP: f64 = 1e-4;

/// Smoothing used for scores when the likelihood itself is unsmoothed.
pub const DEFAULT_SMOOTHING: f64 = 0.05;

/// The four specifications compared in the empirical application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Specification {
    /// All of `θ_d, θ_x, σ, α, ρ` free.
    Nonseparable,
    /// `ρ` tied to `α`.
    Separable,
    /// Risk-neutral separable model (`α = ρ = 0`) with mileage revenue.
    RustRev,
    /// Risk-neutral separable model without mileage revenue (`θ_d = 0`).
    RustOrig,
}

impl Specification {
    pub fn name(self) -> &'static str {
        match self {
            Specification::Nonseparable => "nonseparable",
            Specification::Separable => "separable",
            Specification::RustRev => "rust-rev",
            Specification::RustOrig => "rust-orig",
        }
    }

    /// Set the free parameters and restrictions of this specification.
    pub fn apply(self, cfg: &mut EstimationConfig) {
        use ParamName::*;
        cfg.specification = Some(self);
        match self {
            Specification::Nonseparable => {
                cfg.free_params = vec![ThetaD, ThetaX, Sigma, Alpha, Rho];
                cfg.separable_constraint = false;
            }
            Specification::Separable => {
                cfg.free_params = vec![ThetaD, ThetaX, Sigma, Alpha];
                cfg.separable_constraint = true;
            }
            Specification::RustRev => {
                cfg.free_params = vec![ThetaD, ThetaX, Sigma];
                cfg.separable_constraint = true;
                cfg.family = Family::CaraEz;
                cfg.initial.alpha = 0.0;
                cfg.initial.rho = 0.0;
            }
            Specification::RustOrig => {
                cfg.free_params = vec![ThetaX, Sigma];
                cfg.separable_constraint = true;
                cfg.family = Family::CaraEz;
                cfg.initial.alpha = 0.0;
                cfg.initial.rho = 0.0;
                cfg.initial.theta_d = 0.0;
            }
        }
    }
}

impl std::str::FromStr for Specification {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonseparable" => Ok(Specification::Nonseparable),
            "separable" => Ok(Specification::Separable),
            "rust-rev" => Ok(Specification::RustRev),
            "rust-orig" => Ok(Specification::RustOrig),
            _ => Err(invalid(
                "spec",
                format!("unknown specification {s:?}; expected nonseparable, separable, rust-rev or rust-orig"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub family: Family,
    pub beta_fixed: f64,
    pub rc_fixed: f64,
    pub grid: StateGrid,
    pub shocks: ShockDistribution,
    pub specification: Option<Specification>,
    pub free_params: Vec<ParamName>,
    /// Ties `ρ` to `α`.
    pub separable_constraint: bool,
    /// Starting values for free parameters and values of fixed ones.
    pub initial: StructuralParams,
    pub optimizer: OptimizerConfig,
    pub solver: SolveConfig,
    /// Draws per state for simulated choice probabilities; zero reuses the
    /// solver's draw block.
    pub ccp_draws: usize,
    /// Logistic smoothing temperature as a multiple of `σ`; zero gives the
    /// raw argmax frequency.
    pub ccp_smoothing_temperature: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            family: Family::CaraEz,
            beta_fixed: 0.9,
            rc_fixed: 8.0,
            grid: StateGrid::empirical(),
            shocks: ShockDistribution::StandardNormal,
            specification: None,
            free_params: vec![
                ParamName::ThetaD,
                ParamName::ThetaX,
                ParamName::Sigma,
                ParamName::Alpha,
                ParamName::Rho,
            ],
            separable_constraint: false,
            initial: StructuralParams::default(),
            optimizer: OptimizerConfig::default(),
            solver: SolveConfig::default(),
            ccp_draws: 0,
            ccp_smoothing_temperature: DEFAULT_SMOOTHING,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_fixed > 0.0 && self.beta_fixed < 1.0) {
            return Err(invalid("beta_fixed", "must lie strictly between 0 and 1"));
        }
        if !(self.rc_fixed > 0.0) || !self.rc_fixed.is_finite() {
            return Err(invalid("rc_fixed", "must be positive"));
        }
        if !(self.ccp_smoothing_temperature >= 0.0) {
            return Err(invalid("ccp_smoothing_temperature", "must be nonnegative"));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.free_params {
            if !seen.insert(*p) {
                return Err(invalid("free_params", format!("{p} listed twice")));
            }
        }
        if self.separable_constraint && self.free_params.contains(&ParamName::Rho) {
            return Err(invalid("free_params", "rho cannot be free when tied to alpha"));
        }
        self.solver.validate()?;
        let theta = self.tied(self.initial);
        for p in &self.free_params {
            if self.transform(*p).to_unconstrained(theta.get(*p)).is_none() {
                return Err(invalid(
                    format!("initial.{p}"),
                    "starting value outside the admissible region",
                ));
            }
        }
        Ok(())
    }

    fn transform(&self, p: ParamName) -> Transform {
        Transform::for_param(p, self.family)
    }

    /// Apply the separability restriction.
    pub fn tied(&self, mut theta: StructuralParams) -> StructuralParams {
        if self.separable_constraint {
            theta.rho = theta.alpha;
        }
        theta
    }

    pub fn to_eta(&self, theta: &StructuralParams) -> Option<Vec<f64>> {
        self.free_params
            .iter()
            .map(|p| self.transform(*p).to_unconstrained(theta.get(*p)))
            .collect()
    }

    pub fn from_eta(&self, eta: &[f64]) -> StructuralParams {
        let mut theta = self.initial;
        for (p, e) in self.free_params.iter().zip(eta) {
            theta.set(*p, self.transform(*p).to_natural(*e));
        }
        self.tied(theta)
    }

    pub fn build_model(&self, theta: &StructuralParams, transition: &TransitionModel) -> Result<BusModel> {
        let theta = self.tied(*theta);
        let model = BusModel {
            grid: self.grid,
            payoff: PayoffParams {
                theta_d: theta.theta_d,
                theta_x: theta.theta_x,
                rc: self.rc_fixed,
                sigma: theta.sigma,
                constant_revenue: None,
            },
            transition: transition.clone(),
            shocks: ShockSpec {
                distribution: self.shocks,
            },
            preferences: PreferenceSpec {
                family: self.family,
                alpha: theta.alpha,
                rho: theta.rho,
                beta: self.beta_fixed,
            },
        };
        model.validate()?;
        Ok(model)
    }
}

/// A panel prepared for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct Likelihood {
    config: EstimationConfig,
    transition: TransitionModel,
    counts: Vec<[u64; 2]>,
    delta_term: f64,
    n_obs: usize,
    solve_draws: DrawBlock,
    ccp_draws: Option<DrawBlock>,
}

impl Likelihood {
    pub fn new(data: &PanelDataset, config: &EstimationConfig) -> Result<Self> {
        config.validate()?;
        data.validate(Some(config.grid.n_bins))?;
        let n = config.grid.n_bins;
        let transition = estimate_transition(data, n)?;
        let delta_term = data
            .rows
            .iter()
            .map(|r| transition.row(r.action(), r.x_bin)[r.delta_bin].ln())
            .sum();
        let solve_draws = DrawBlock::for_solve(config.shocks, config.solver.n_sim_eps, config.solver.seed);
        let ccp_draws = (config.ccp_draws > 0).then(|| {
            DrawBlock::generate(config.shocks, config.ccp_draws, config.solver.seed, Purpose::LikelihoodCcp)
        });
        Ok(Self {
            config: config.clone(),
            transition,
            counts: data.cell_counts(n),
            delta_term,
            n_obs: data.len(),
            solve_draws,
            ccp_draws,
        })
    }

    pub fn config(&self) -> &EstimationConfig {
        &self.config
    }

    pub fn transition(&self) -> &TransitionModel {
        &self.transition
    }

    /// `Σ log Pr(Δ | x)` over the panel.
    pub fn delta_term(&self) -> f64 {
        self.delta_term
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn draws_fingerprint(&self) -> String {
        match &self.ccp_draws {
            Some(c) => format!("{}+{}", self.solve_draws.fingerprint(), c.fingerprint()),
            None => self.solve_draws.fingerprint(),
        }
    }

    pub fn model_at(&self, theta: &StructuralParams) -> Result<BusModel> {
        self.config.build_model(theta, &self.transition)
    }

    /// `log p(d | x)` at every visited state, `None` when the model cannot
    /// be solved at `theta`. Unvisited states are left at zero.
    pub fn choice_log_probs(&self, theta: &StructuralParams, temperature: f64) -> Option<Vec<[f64; 2]>> {
        let model = self.model_at(theta).ok()?;
        let solver = Solver::new(&model, &self.solve_draws).ok()?;
        let report = solver
            .iterate(&StartPoint::UpperBound, self.config.solver.tol_sup_norm, self.config.solver.max_iters)
            .ok()?;
        if !report.converged {
            return None;
        }
        let cont = solver.continuation(report.values()).ok()?;
        let prefs = model.preferences;
        let scale = 1.0 / (1.0 - prefs.beta);
        let tau = temperature * model.payoff.sigma;
        let j = self.ccp_draws.as_ref().map_or(self.solve_draws.len(), DrawBlock::len);
        let mut out = vec![[0.0; 2]; self.counts.len()];
        for (x, c) in self.counts.iter().enumerate() {
            if c[0] + c[1] == 0 {
                continue;
            }
            let mut p_rep = 0.0;
            for s in 0..j {
                let (k, r) = match &self.ccp_draws {
                    None => (
                        solver.choice_value_at(Action::Keep, x, s, &cont),
                        solver.choice_value_at(Action::Replace, x, s, &cont),
                    ),
                    Some(b) => (
                        solver.choice_value(Action::Keep, x, b.eps[s], &cont),
                        solver.choice_value(Action::Replace, x, b.eps[s], &cont),
                    ),
                };
                p_rep += if tau > 0.0 {
                    let gap = (prefs.aggregator_inverse(r).ok()? - prefs.aggregator_inverse(k).ok()?) * scale;
                    logistic(gap / tau)
                } else if r > k {
                    1.0
                } else {
                    0.0
                };
            }
            p_rep /= j as f64;
            out[x] = [(1.0 - p_rep).ln(), p_rep.ln()];
        }
        Some(out)
    }

    fn weighted(&self, lp: &[[f64; 2]]) -> f64 {
        let mut ll = 0.0;
        for (c, l) in self.counts.iter().zip(lp) {
            for d in 0..2 {
                if c[d] > 0 {
                    ll += c[d] as f64 * l[d];
                }
            }
        }
        ll
    }

    /// Log-likelihood, or `-∞` when `theta` is inadmissible, the inner
    /// solve fails, or a needed choice probability is zero.
    pub fn log_likelihood(&self, theta: &StructuralParams) -> f64 {
        match self.choice_log_probs(theta, self.config.ccp_smoothing_temperature) {
            Some(lp) => {
                let ll = self.weighted(&lp) + self.delta_term;
                if ll.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    ll
                }
            }
            None => f64::NEG_INFINITY,
        }
    }

    /// Choice part only, without the increment term.
    pub fn choice_log_likelihood(&self, theta: &StructuralParams) -> f64 {
        self.log_likelihood(theta) - self.delta_term
    }
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// One-shot evaluation of the log-likelihood.
pub fn log_likelihood(theta: &StructuralParams, data: &PanelDataset, config: &EstimationConfig) -> Result<f64> {
    Ok(Likelihood::new(data, config)?.log_likelihood(theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub specification: Option<Specification>,
    pub family: Family,
    pub free_params: Vec<ParamName>,
    /// Full parameter vector at the optimum, including fixed values.
    pub theta_hat: StructuralParams,
    /// Free-parameter estimates in `free_params` order.
    pub estimates: Vec<f64>,
    /// `None` where the information matrix does not identify a parameter.
    pub std_errors: Vec<Option<f64>>,
    pub transformed_estimates: Vec<f64>,
    pub transformed_std_errors: Vec<Option<f64>>,
    pub loglik: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub eval_count: usize,
    pub seed: u64,
    pub draws_fingerprint: String,
    pub config: EstimationConfig,
}

impl EstimateResult {
    /// 95% interval built in transformed coordinates and mapped back.
    pub fn confidence_interval(&self, p: ParamName) -> Option<(f64, f64)> {
        let i = self.free_params.iter().position(|q| *q == p)?;
        let se = self.transformed_std_errors[i]?;
        let t = Transform::for_param(p, self.family);
        let eta = self.transformed_estimates[i];
        let a = t.to_natural(eta - 1.96 * se);
        let b = t.to_natural(eta + 1.96 * se);
        Some((a.min(b), a.max(b)))
    }

    pub fn estimate(&self, p: ParamName) -> Option<f64> {
        let i = self.free_params.iter().position(|q| *q == p)?;
        Some(self.estimates[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardErrors {
    pub natural: Vec<Option<f64>>,
    pub transformed: Vec<Option<f64>>,
}

/// Outer-product-of-gradients standard errors. Scores are central
/// differences of `log p(d | x)` in transformed coordinates.
pub fn standard_errors_with(lik: &Likelihood, theta_hat: &StructuralParams) -> Result<StandardErrors> {
    let cfg = lik.config();
    let k = cfg.free_params.len();
    if k == 0 {
        return Ok(StandardErrors {
            natural: vec![],
            transformed: vec![],
        });
    }
    let temperature = if cfg.ccp_smoothing_temperature > 0.0 {
        cfg.ccp_smoothing_temperature
    } else {
        DEFAULT_SMOOTHING
    };
    let eta = cfg
        .to_eta(&cfg.tied(*theta_hat))
        .ok_or_else(|| invalid("theta_hat", "outside the admissible region"))?;
    let n = lik.counts.len();
    let mut scores = vec![vec![[0.0; 2]; n]; k];
    for i in 0..k {
        let mut up = eta.clone();
        let mut dn = eta.clone();
        up[i] += SCORE_STEP;
        dn[i] -= SCORE_STEP;
        let lp_up = lik.choice_log_probs(&cfg.from_eta(&up), temperature);
        let lp_dn = lik.choice_log_probs(&cfg.from_eta(&dn), temperature);
        let (Some(a), Some(b)) = (lp_up, lp_dn) else {
            return Err(Error::NonFinite(format!(
                "score for {} could not be evaluated",
                cfg.free_params[i]
            )));
        };
        for x in 0..n {
            for d in 0..2 {
                scores[i][x][d] = (a[x][d] - b[x][d]) / (2.0 * SCORE_STEP);
            }
        }
    }
    let mut info = DMatrix::<f64>::zeros(k, k);
    for (x, c) in lik.counts.iter().enumerate() {
        for d in 0..2 {
            if c[d] == 0 {
                continue;
            }
            for i in 0..k {
                for j in 0..k {
                    info[(i, j)] += c[d] as f64 * scores[i][x][d] * scores[j][x][d];
                }
            }
        }
    }
    let transformed = invert_partial(&info);
    let natural = transformed
        .iter()
        .enumerate()
        .map(|(i, se)| se.map(|s| s * Transform::for_param(cfg.free_params[i], cfg.family).jacobian(eta[i])))
        .collect();
    Ok(StandardErrors { natural, transformed })
}

/// Square roots of the diagonal of the inverse, dropping parameters with
/// no information. Remaining failures yield `None` throughout.
fn invert_partial(info: &DMatrix<f64>) -> Vec<Option<f64>> {
    let k = info.nrows();
    let scale = (0..k).map(|i| info[(i, i)]).fold(0.0, f64::max);
    let keep: Vec<usize> = (0..k)
        .filter(|&i| info[(i, i)].is_finite() && info[(i, i)] > 1e-12 * scale.max(f64::MIN_POSITIVE))
        .collect();
    let mut out = vec![None; k];
    if keep.is_empty() {
        return out;
    }
    let sub = DMatrix::from_fn(keep.len(), keep.len(), |a, b| info[(keep[a], keep[b])]);
    if let Some(inv) = sub.try_inverse() {
        for (a, &i) in keep.iter().enumerate() {
            let v = inv[(a, a)];
            if v.is_finite() && v >= 0.0 {
                out[i] = Some(v.sqrt());
            }
        }
    }
    out
}

pub fn standard_errors(theta_hat: &StructuralParams, data: &PanelDataset, config: &EstimationConfig) -> Result<Vec<Option<f64>>> {
    let lik = Likelihood::new(data, config)?;
    Ok(standard_errors_with(&lik, theta_hat)?.natural)
}

/// Maximize the likelihood over the free parameters.
pub fn fit(data: &PanelDataset, config: &EstimationConfig) -> Result<EstimateResult> {
    let lik = Likelihood::new(data, config)?;
    fit_with(&lik)
}

pub fn fit_with(lik: &Likelihood) -> Result<EstimateResult> {
    let cfg = lik.config();
    let eta0 = cfg
        .to_eta(&cfg.tied(cfg.initial))
        .ok_or_else(|| invalid("initial", "outside the admissible region"))?;
    let min = nelder_mead(
        |eta| -lik.log_likelihood(&cfg.from_eta(eta)),
        &eta0,
        &cfg.optimizer,
    );
    let theta_hat = cfg.from_eta(&min.x);
    let loglik = -min.f;
    if !loglik.is_finite() {
        return Err(Error::NonFinite(
            "log-likelihood is -inf everywhere the optimizer looked; consider a positive ccp_smoothing_temperature".into(),
        ));
    }
    let se = standard_errors_with(lik, &theta_hat).unwrap_or_else(|_| StandardErrors {
        natural: vec![None; cfg.free_params.len()],
        transformed: vec![None; cfg.free_params.len()],
    });
    Ok(EstimateResult {
        specification: cfg.specification,
        family: cfg.family,
        free_params: cfg.free_params.clone(),
        theta_hat,
        estimates: cfg.free_params.iter().map(|p| theta_hat.get(*p)).collect(),
        std_errors: se.natural,
        transformed_estimates: min.x.clone(),
        transformed_std_errors: se.transformed,
        loglik,
        n_obs: lik.n_obs(),
        converged: min.converged,
        eval_count: min.evals,
        seed: cfg.solver.seed,
        draws_fingerprint: lik.draws_fingerprint(),
        config: cfg.clone(),
    })
}

/// Fit the separable model first, then start the unrestricted fit at the
/// separable optimum with `ρ = α`.
pub fn fit_warm_started(data: &PanelDataset, config: &EstimationConfig) -> Result<EstimateResult> {
    let mut sep = config.clone();
    sep.separable_constraint = true;
    sep.free_params.retain(|p| *p != ParamName::Rho);
    if !sep.free_params.contains(&ParamName::Alpha) {
        return fit(data, config);
    }
    let first = fit(data, &sep)?;
    let mut full = config.clone();
    full.initial = first.theta_hat;
    full.initial.rho = first.theta_hat.alpha;
    let mut second = fit(data, &full)?;
    second.eval_count += first.eval_count;
    Ok(second)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Slack allowed for a restricted fit to beat the unrestricted one.
pub const LR_SLACK: f64 = 1e-6;

pub fn lr_test(loglik_unrestricted: f64, loglik_restricted: f64, df: usize) -> Result<LrTest> {
    let raw = 2.0 * (loglik_unrestricted - loglik_restricted);
    if !raw.is_finite() {
        return Err(Error::NonFinite("likelihood ratio statistic".into()));
    }
    if raw < -2.0 * LR_SLACK {
        return Err(Error::InconsistentFits { statistic: raw });
    }
    let statistic = raw.max(0.0);
    let p_value = if df == 0 || statistic == 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(df as f64).map_err(|e| Error::NonFinite(e.to_string()))?;
        chi.sf(statistic)
    };
    Ok(LrTest {
        statistic,
        df,
        p_value,
    })
}
