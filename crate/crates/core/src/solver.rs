//! Fixed-point solution of the recursive value function.
//!
//! The operator is
//!
//! ```text
//! T(V)(x) = (1/S) Σ_s max_d Σ_Δ Pr(Δ|d,x) φ((1-β) u(π(d,x,Δ) + σ ε_s(d)) + β φ⁻¹(V(x')))
//! ```
//!
//! with the increment expectation computed exactly and the shock expectation
//! averaged over a fixed block of draws. `T` is monotone, maps the interval
//! `[v_lower, v_star]` into itself, and iterating from either end converges
//! to the smallest and largest fixed points.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draws::{DrawBlock, Purpose};
use crate::error::{Error, Result};
use crate::model::{Action, BusModel};
use crate::preferences::{cara_u, cara_u_inv, saturated_exp, Family, PreferenceSpec, Timing};

/// Work (states × draws) below which states are evaluated serially.
const PARALLEL_THRESHOLD: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    UpperBound,
    LowerBound,
    Custom(Vec<f64>),
}

impl StartPoint {
    fn label(&self) -> &'static str {
        match self {
            StartPoint::UpperBound => "upper",
            StartPoint::LowerBound => "lower",
            StartPoint::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    /// Stopping tolerance on the sup-norm change of `φ⁻¹(V)`.
    pub tol_sup_norm: f64,
    pub max_iters: usize,
    /// Number of shock draws `S`.
    pub n_sim_eps: usize,
    pub seed: u64,
    pub start: StartPoint,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol_sup_norm: 1e-9,
            max_iters: 5000,
            n_sim_eps: 2500,
            seed: 0,
            start: StartPoint::UpperBound,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_sup_norm > 0.0) {
            return Err(crate::error::invalid("solver.tol_sup_norm", "must be positive"));
        }
        if self.n_sim_eps == 0 {
            return Err(crate::error::invalid("solver.n_sim_eps", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(crate::error::invalid("solver.max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub v_star: f64,
    pub v_lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub prefs_fingerprint: String,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub fixed_point: ValueFunction,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub empirical_lipschitz: f64,
    pub start: String,
    pub tol_sup_norm: f64,
    pub draws_fingerprint: String,
}

impl SolveReport {
    pub fn values(&self) -> &[f64] {
        &self.fixed_point.values
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uniqueness {
    pub unique: bool,
    pub gap: f64,
    pub upper: SolveReport,
    pub lower: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionMargin {
    pub m_numeric: f64,
    pub m_analytic: Option<f64>,
    pub timing: Timing,
    pub grid_points: usize,
}

/// How a branch value is computed; chosen once per preference spec.
#[derive(Debug, Clone, Copy)]
enum Mode {
    /// `φ` is the identity.
    Linear { family: Family, rho: f64 },
    /// CARA with `ρ > 0`: `1 - ρ a = (1-β) e^{-ρπ} e^{-ρσε} + K`.
    CaraCurved { alpha: f64, rho: f64 },
    /// CARA with `ρ = 0 < α`: linear utility, `φ = u_α`.
    CaraLinearU { alpha: f64 },
    /// CRRA, `φ(z) = z^k`, or `ln z` when `α = 1`.
    Crra { k: f64, log: bool, one_minus_rho: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Branch {
    prob: f64,
    /// Payoff, or `(1-β) e^{-ρπ}` in the curved CARA mode.
    pay: f64,
    next: usize,
}

/// A model prepared for repeated operator evaluations on one draw block.
#[derive(Debug, Clone)]
pub struct Solver {
    model: BusModel,
    mode: Mode,
    beta: f64,
    keep: Vec<Vec<Branch>>,
    replace: Vec<Branch>,
    /// Per draw and action: `σε`, or `e^{-ρσε}` in the curved CARA mode.
    shocks: Vec<[f64; 2]>,
    draws: DrawBlock,
    bounds: Bounds,
    fingerprint: String,
}

impl Solver {
    pub fn new(model: &BusModel, draws: &DrawBlock) -> Result<Self> {
        Self::build(model, draws, true)
    }

    fn build(model: &BusModel, draws: &DrawBlock, with_bounds: bool) -> Result<Self> {
        model.validate()?;
        if draws.is_empty() {
            return Err(crate::error::invalid("solver.n_sim_eps", "must be at least 1"));
        }
        let prefs = model.preferences;
        let beta = prefs.beta;
        let mode = if prefs.is_separable() {
            Mode::Linear {
                family: prefs.family,
                rho: prefs.rho,
            }
        } else {
            match prefs.family {
                Family::CaraEz if prefs.rho > 0.0 => Mode::CaraCurved {
                    alpha: prefs.alpha,
                    rho: prefs.rho,
                },
                Family::CaraEz => Mode::CaraLinearU { alpha: prefs.alpha },
                Family::CrraEz => Mode::Crra {
                    k: (1.0 - prefs.alpha) / (1.0 - prefs.rho),
                    log: prefs.alpha == 1.0,
                    one_minus_rho: 1.0 - prefs.rho,
                },
            }
        };
        let pay_of = |pi: f64| match mode {
            Mode::CaraCurved { rho, .. } => (1.0 - beta) * saturated_exp(-rho * pi),
            _ => pi,
        };
        let branches = |d: Action, x: usize| -> Vec<Branch> {
            model
                .transition
                .row(d, x)
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(k, &p)| Branch {
                    prob: p,
                    pay: pay_of(model.payoff(d, x, k)),
                    next: model.next_state(d, x, k),
                })
                .collect()
        };
        let n = model.n_states();
        let keep = (0..n).map(|x| branches(Action::Keep, x)).collect();
        let replace = branches(Action::Replace, 0);
        let sigma = model.payoff.sigma;
        let shocks = draws
            .eps
            .iter()
            .map(|e| match mode {
                Mode::CaraCurved { rho, .. } => [saturated_exp(-rho * sigma * e[0]), saturated_exp(-rho * sigma * e[1])],
                _ => [sigma * e[0], sigma * e[1]],
            })
            .collect();
        let bounds = if with_bounds {
            compute_bounds_with(model, draws)?
        } else {
            Bounds {
                v_star: f64::INFINITY,
                v_lower: f64::NEG_INFINITY,
            }
        };
        Ok(Self {
            model: model.clone(),
            mode,
            beta,
            keep,
            replace,
            shocks,
            draws: draws.clone(),
            bounds,
            fingerprint: prefs.fingerprint(),
        })
    }

    /// A solver for evaluating choice values only: it holds no draws and
    /// its bounds are the whole real line, so it cannot be iterated.
    pub fn evaluator(model: &BusModel) -> Result<Self> {
        let one = DrawBlock {
            distribution: model.shocks.distribution,
            seed: 0,
            eps: vec![[0.0, 0.0]],
        };
        Self::build(model, &one, false)
    }

    pub fn model(&self) -> &BusModel {
        &self.model
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn draws(&self) -> &DrawBlock {
        &self.draws
    }

    pub fn n_states(&self) -> usize {
        self.keep.len()
    }

    fn prefs(&self) -> &PreferenceSpec {
        &self.model.preferences
    }

    /// Per-state continuation term entering every branch that lands there.
    ///
    /// Curved CARA stores `K = β(1 - ρφ⁻¹(V))`; the other modes store
    /// `β φ⁻¹(V)`.
    pub fn continuation(&self, v: &[f64]) -> Result<Vec<f64>> {
        let prefs = self.prefs();
        v.iter()
            .enumerate()
            .map(|(x, &vx)| {
                let wrap = |e: Error| Error::StateDomain {
                    state: x,
                    message: e.to_string(),
                };
                if !vx.is_finite() {
                    return Err(Error::StateDomain {
                        state: x,
                        message: format!("value {vx} is not finite"),
                    });
                }
                match self.mode {
                    Mode::CaraCurved { alpha, rho } => {
                        let c = cara_u_inv(alpha, vx).map_err(wrap)?;
                        Ok(self.beta * saturated_exp(-rho * c))
                    }
                    _ => Ok(self.beta * prefs.aggregator_inverse(vx).map_err(wrap)?),
                }
            })
            .collect()
    }

    #[inline]
    fn branch_value(&self, b: &Branch, shock: f64, cont: &[f64]) -> f64 {
        let w = cont[b.next];
        let omb = 1.0 - self.beta;
        match self.mode {
            Mode::Linear { family, rho } => {
                let c = b.pay + shock;
                let u = match family {
                    Family::CaraEz => cara_u(rho, c),
                    Family::CrraEz => {
                        if c < 0.0 {
                            return f64::NAN;
                        }
                        c.powf(1.0 - rho)
                    }
                };
                omb * u + w
            }
            Mode::CaraCurved { alpha, rho } => {
                let m = (b.pay * shock).min(f64::MAX) + w;
                if alpha > 0.0 {
                    -((alpha / rho) * m.ln()).exp_m1() / alpha
                } else {
                    -m.ln() / rho
                }
            }
            Mode::CaraLinearU { alpha } => cara_u(alpha, omb * (b.pay + shock) + w),
            Mode::Crra { k, log, one_minus_rho } => {
                let c = b.pay + shock;
                if c < 0.0 {
                    return f64::NAN;
                }
                let a = omb * c.powf(one_minus_rho) + w;
                if log {
                    a.ln()
                } else {
                    a.powf(k)
                }
            }
        }
    }

    #[inline]
    fn branches(&self, d: Action, x: usize) -> &[Branch] {
        match d {
            Action::Keep => &self.keep[x],
            Action::Replace => &self.replace,
        }
    }

    #[inline]
    fn value_prepared(&self, d: Action, x: usize, shock: f64, cont: &[f64]) -> f64 {
        self.branches(d, x)
            .iter()
            .map(|b| b.prob * self.branch_value(b, shock, cont))
            .sum()
    }

    /// Choice-specific value at draw `s` of the block.
    pub fn choice_value_at(&self, d: Action, x: usize, s: usize, cont: &[f64]) -> f64 {
        self.value_prepared(d, x, self.shocks[s][d.index()], cont)
    }

    /// Choice-specific value for an arbitrary shock pair.
    pub fn choice_value(&self, d: Action, x: usize, eps: [f64; 2], cont: &[f64]) -> f64 {
        let sigma = self.model.payoff.sigma;
        let e = eps[d.index()];
        let shock = match self.mode {
            Mode::CaraCurved { rho, .. } => saturated_exp(-rho * sigma * e),
            _ => sigma * e,
        };
        self.value_prepared(d, x, shock, cont)
    }

    /// Replacement values at every draw; they do not depend on the state.
    pub fn replace_values(&self, cont: &[f64]) -> Vec<f64> {
        self.shocks
            .iter()
            .map(|sh| self.value_prepared(Action::Replace, 0, sh[1], cont))
            .collect()
    }

    /// One application of the operator.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let cont = self.continuation(v)?;
        self.apply_cont(&cont)
    }

    fn apply_cont(&self, cont: &[f64]) -> Result<Vec<f64>> {
        let rep = self.replace_values(cont);
        let s_inv = 1.0 / self.shocks.len() as f64;
        let state = |x: usize| -> f64 {
            let mut acc = 0.0;
            for (sh, r) in self.shocks.iter().zip(&rep) {
                let k = self.value_prepared(Action::Keep, x, sh[0], cont);
                acc += if k >= *r { k } else { *r };
            }
            acc * s_inv
        };
        let n = self.n_states();
        let out: Vec<f64> = if n * self.shocks.len() >= PARALLEL_THRESHOLD {
            (0..n).into_par_iter().map(state).collect()
        } else {
            (0..n).map(state).collect()
        };
        if let Some(x) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::StateDomain {
                state: x,
                message: "operator produced a non-finite value; the continuation or consumption left the aggregator's domain".into(),
            });
        }
        Ok(out)
    }

    /// `φ⁻¹` applied elementwise; used for the stopping metric.
    fn utils(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|&x| self.prefs().aggregator_inverse(x).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn start_vector(&self, start: &StartPoint) -> Result<Vec<f64>> {
        let n = self.n_states();
        match start {
            StartPoint::UpperBound => Ok(vec![self.bounds.v_star; n]),
            StartPoint::LowerBound => Ok(vec![self.bounds.v_lower; n]),
            StartPoint::Custom(v) => {
                if v.len() != n {
                    return Err(crate::error::invalid(
                        "solver.start",
                        format!("custom start has {} entries for {} states", v.len(), n),
                    ));
                }
                Ok(v.clone())
            }
        }
    }

    /// Iterate the operator from `start`.
    ///
    /// Stops once the sup-norm change of `φ⁻¹(V)` is at most `tol` and the
    /// geometric tail estimate `r q / (1 - q)`, with `q` the observed ratio of
    /// successive changes, is also at most `tol`.
    pub fn iterate(&self, start: &StartPoint, tol: f64, max_iters: usize) -> Result<SolveReport> {
        let mut v = self.start_vector(start)?;
        let mut z = self.utils(&v);
        let mut history = Vec::new();
        let mut lipschitz: f64 = 0.0;
        let mut prev_step: Option<f64> = None;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iters {
            iterations += 1;
            let tv = self.apply(&v)?;
            let tz = self.utils(&tv);
            let residual = sup_dist(&tz, &z);
            let step = sup_dist(&tv, &v);
            // ratios of steps at rounding level carry no information
            let floor = 1e-8 * (1.0 + v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
            if let Some(p) = prev_step {
                if p > floor && step.is_finite() {
                    lipschitz = lipschitz.max(step / p);
                }
            }
            prev_step = Some(step);
            let prev_residual = history.last().copied();
            history.push(residual);
            v = tv;
            z = tz;
            if residual <= tol {
                if residual <= tol * 1e-3 {
                    converged = true;
                    break;
                }
                if let Some(pr) = prev_residual {
                    let q = residual / pr;
                    if q < 1.0 && residual * q / (1.0 - q) <= tol {
                        converged = true;
                        break;
                    }
                }
            }
        }
        Ok(SolveReport {
            fixed_point: ValueFunction {
                values: v,
                prefs_fingerprint: self.fingerprint.clone(),
                bounds: self.bounds,
            },
            iterations,
            residual_history: history,
            converged,
            empirical_lipschitz: lipschitz,
            start: start.label().into(),
            tol_sup_norm: tol,
            draws_fingerprint: self.draws.fingerprint(),
        })
    }

    pub fn solve(&self, config: &SolveConfig) -> Result<SolveReport> {
        config.validate()?;
        self.iterate(&config.start, config.tol_sup_norm, config.max_iters)
    }

    /// Sup-norm distance between two value functions in `φ⁻¹` units.
    pub fn utils_gap(&self, a: &[f64], b: &[f64]) -> f64 {
        sup_dist(&self.utils(a), &self.utils(b))
    }

    /// Monte Carlo standard error of each entry of the simulated fixed point.
    ///
    /// Linearizes `V = mean_s m_s(V)` around `v`: with `J` the Jacobian of
    /// the operator and `C` the covariance of the per-draw terms,
    /// `Var(V) ≈ (I-J)⁻¹ C (I-J)⁻ᵀ / S`.
    pub fn fixed_point_standard_errors(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.n_states();
        let s_count = self.shocks.len();
        let cont = self.continuation(v)?;
        let rep = self.replace_values(&cont);
        let prefs = *self.prefs();
        let sigma = self.model.payoff.sigma;
        let mut terms = DMatrix::<f64>::zeros(s_count, n);
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            for s in 0..s_count {
                let k = self.choice_value_at(Action::Keep, x, s, &cont);
                let (d, val) = if k >= rep[s] {
                    (Action::Keep, k)
                } else {
                    (Action::Replace, rep[s])
                };
                terms[(s, x)] = val;
                let eps = self.draws.eps[s][d.index()];
                let row = self.model.transition.row(d, x);
                for (delta, &p) in row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let c = self.model.payoff(d, x, delta) + sigma * eps;
                    let nx = self.model.next_state(d, x, delta);
                    let y = prefs.utility(c)?;
                    let dpsi = prefs.psi_prime(y, v[nx])?;
                    jac[(x, nx)] += p * dpsi;
                }
            }
        }
        jac /= s_count as f64;
        let means: Vec<f64> = (0..n).map(|x| terms.column(x).mean()).collect();
        for x in 0..n {
            for s in 0..s_count {
                terms[(s, x)] -= means[x];
            }
        }
        let denom = (s_count.max(2) - 1) as f64 * s_count as f64;
        let cov = terms.transpose() * &terms / denom;
        let a = (DMatrix::<f64>::identity(n, n) - jac)
            .try_inverse()
            .ok_or_else(|| Error::NonFinite("I - J is singular".into()))?;
        let var = &a * cov * a.transpose();
        Ok((0..n).map(|x| var[(x, x)].max(0.0).sqrt()).collect())
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d.is_nan() {
                if x == y {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Bounds for a model evaluated on a given draw block.
///
/// The upper bound uses `ε̂ = max(ε(0), ε(1))` at the highest payoff and the
/// lower bound uses `ε(0)` at the lowest payoff, each inflated outward by
/// three Monte Carlo standard errors. Under CARA with `α, ρ > 0` the upper
/// bound is the supremum `1/α` of the aggregator.
pub fn compute_bounds_with(model: &BusModel, draws: &DrawBlock) -> Result<Bounds> {
    let prefs = model.preferences;
    let (pi_lo, pi_hi) = model.payoff_range();
    let sigma = model.payoff.sigma;
    let (u_min, u_max) = utility_range(&prefs);
    let (v_min, v_max) = value_range(&prefs);

    let expectations = |pi: f64, shock: &dyn Fn(&[f64; 2]) -> f64, upper: bool| -> Result<f64> {
        let mut phis = Vec::with_capacity(draws.len());
        let mut us = Vec::with_capacity(draws.len());
        for e in &draws.eps {
            let u = prefs.utility(pi + sigma * shock(e))?;
            us.push(u);
            phis.push(prefs.aggregator(u)?);
        }
        let (mphi, sphi) = mean_se(&phis);
        let (mu, su) = mean_se(&us);
        let t = if upper { 3.0 } else { -3.0 };
        let a = (mphi + t * sphi).clamp(v_min, v_max);
        let b = prefs.aggregator((mu + t * su).clamp(u_min, u_max))?;
        Ok(if upper { a.max(b) } else { a.min(b) })
    };

    let analytic_upper = prefs.family == Family::CaraEz && prefs.alpha > 0.0 && prefs.rho > 0.0;
    let v_star = if analytic_upper {
        1.0 / prefs.alpha
    } else {
        expectations(pi_hi, &|e| e[0].max(e[1]), true)?
    };
    let v_lower = expectations(pi_lo, &|e| e[0], false)?;
    if !v_star.is_finite() || !v_lower.is_finite() {
        return Err(Error::NonFinite(format!(
            "value bounds [{v_lower}, {v_star}]: a required expectation diverges"
        )));
    }
    Ok(Bounds { v_star, v_lower })
}

/// Bounds using a fresh block of `n_mc` draws.
pub fn compute_bounds(model: &BusModel, n_mc: usize, seed: u64) -> Result<Bounds> {
    let draws = DrawBlock::generate(model.shocks.distribution, n_mc.max(1), seed, Purpose::Bounds);
    compute_bounds_with(model, &draws)
}

/// Closure of the range of `u`.
fn utility_range(p: &PreferenceSpec) -> (f64, f64) {
    match p.family {
        Family::CaraEz if p.rho > 0.0 => (f64::NEG_INFINITY, 1.0 / p.rho),
        Family::CaraEz => (f64::NEG_INFINITY, f64::INFINITY),
        Family::CrraEz => (0.0, f64::INFINITY),
    }
}

/// Closure of the range of `φ ∘ u`, where values live.
fn value_range(p: &PreferenceSpec) -> (f64, f64) {
    match p.family {
        Family::CaraEz if p.alpha > 0.0 => (f64::NEG_INFINITY, 1.0 / p.alpha),
        Family::CaraEz => (f64::NEG_INFINITY, f64::INFINITY),
        Family::CrraEz if p.alpha == 1.0 => (f64::NEG_INFINITY, f64::INFINITY),
        Family::CrraEz => (0.0, f64::INFINITY),
    }
}

/// Operator applied once with the draw block implied by `config`.
pub fn bellman_apply(model: &BusModel, v: &ValueFunction, draws: &DrawBlock) -> Result<ValueFunction> {
    let solver = Solver::new(model, draws)?;
    Ok(ValueFunction {
        values: solver.apply(&v.values)?,
        prefs_fingerprint: model.preferences.fingerprint(),
        bounds: solver.bounds(),
    })
}

pub fn solve(model: &BusModel, config: &SolveConfig) -> Result<SolveReport> {
    config.validate()?;
    let draws = DrawBlock::for_solve(model.shocks.distribution, config.n_sim_eps, config.seed);
    Solver::new(model, &draws)?.solve(config)
}

/// Solve from both bounds with the same draws and compare the limits.
pub fn check_uniqueness(model: &BusModel, config: &SolveConfig) -> Result<Uniqueness> {
    config.validate()?;
    let draws = DrawBlock::for_solve(model.shocks.distribution, config.n_sim_eps, config.seed);
    let solver = Solver::new(model, &draws)?;
    check_uniqueness_with(&solver, config.tol_sup_norm, config.max_iters)
}

pub fn check_uniqueness_with(solver: &Solver, tol: f64, max_iters: usize) -> Result<Uniqueness> {
    let upper = solver.iterate(&StartPoint::UpperBound, tol, max_iters)?;
    let lower = solver.iterate(&StartPoint::LowerBound, tol, max_iters)?;
    for r in [&upper, &lower] {
        if !r.converged {
            return Err(Error::NotConverged {
                start: if r.start == "upper" { "upper" } else { "lower" },
                iterations: r.iterations,
                residual: r.final_residual(),
            });
        }
    }
    let gap = solver.utils_gap(upper.values(), lower.values());
    Ok(Uniqueness {
        unique: gap <= 10.0 * tol,
        gap,
        upper,
        lower,
    })
}

/// Analytic contraction modulus when a sufficient condition applies.
pub fn analytic_margin(p: &PreferenceSpec) -> Option<f64> {
    let m = if p.is_separable() {
        p.beta
    } else {
        match p.family {
            Family::CrraEz if p.rho <= p.alpha => p.beta.powf((1.0 - p.alpha) / (1.0 - p.rho)),
            Family::CaraEz if p.rho >= p.alpha && p.rho > 0.0 => p.beta.powf(p.alpha / p.rho),
            _ => return None,
        }
    };
    (m < 1.0).then_some(m)
}

/// Monte Carlo estimate of `E[max_d sup_{π,z} ψ'_{u(π+σε_d)}(z)]`.
///
/// `ψ'` is monotone in `z`, so only the two value bounds are evaluated; the
/// payoff interval is searched on a grid of 64 points, doubled until the
/// estimate moves by less than `1e-4`. Under CRRA, consumption below zero
/// is truncated at zero.
pub fn contraction_margin(model: &BusModel, n_mc: usize, seed: u64) -> Result<ContractionMargin> {
    model.validate()?;
    let prefs = model.preferences;
    let draws = DrawBlock::generate(model.shocks.distribution, n_mc.max(1), seed, Purpose::Margin);
    let bounds = compute_bounds_with(model, &draws)?;
    let (pi_lo, pi_hi) = model.payoff_range();
    let sigma = model.payoff.sigma;
    let zs = [bounds.v_lower, bounds.v_star];

    let estimate = |points: usize| -> f64 {
        let grid: Vec<f64> = (0..points)
            .map(|j| {
                if points == 1 {
                    pi_lo
                } else {
                    pi_lo + (pi_hi - pi_lo) * j as f64 / (points - 1) as f64
                }
            })
            .collect();
        let total: f64 = draws
            .eps
            .iter()
            .map(|e| {
                let mut best: f64 = 0.0;
                for eps in e {
                    for &pi in &grid {
                        let mut c = pi + sigma * eps;
                        if prefs.family == Family::CrraEz {
                            c = c.max(0.0);
                        }
                        let Ok(y) = prefs.utility(c) else { continue };
                        for &z in &zs {
                            if let Ok(d) = prefs.psi_prime(y, z) {
                                best = best.max(d);
                            }
                        }
                    }
                }
                best
            })
            .sum();
        total / draws.len() as f64
    };

    let mut points = 64;
    let mut m = estimate(points);
    while points < 4096 {
        let m2 = estimate(points * 2);
        points *= 2;
        let change = (m2 - m).abs();
        m = m2;
        if change < 1e-4 || !m.is_finite() {
            break;
        }
    }
    Ok(ContractionMargin {
        m_numeric: m,
        m_analytic: analytic_margin(&prefs),
        timing: prefs.timing_preference(),
        grid_points: points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_toy_model, toy_cara, ShockDistribution};

    fn toy_solver(alpha: f64, rho: f64, s: usize) -> Solver {
        let m = toy_cara(alpha, rho).unwrap();
        let d = DrawBlock::for_solve(ShockDistribution::StandardNormal, s, 11);
        Solver::new(&m, &d).unwrap()
    }

    #[test]
    fn fast_kernel_matches_generic_formula() {
        for (a, r) in [(0.3, 0.5), (0.5, 0.5), (0.6, 0.1), (0.4, 0.0), (0.0, 0.4), (0.0, 0.0)] {
            let sol = toy_solver(a, r, 40);
            let prefs = sol.model().preferences;
            let v = vec![0.5, 0.2, -0.1];
            let cont = sol.continuation(&v).unwrap();
            for s in 0..40 {
                for d in Action::ALL {
                    for x in 0..3 {
                        let fast = sol.choice_value_at(d, x, s, &cont);
                        let e = sol.draws().eps[s][d.index()];
                        let mut slow = 0.0;
                        for (k, &p) in sol.model().transition.row(d, x).iter().enumerate() {
                            let c = sol.model().payoff(d, x, k) + 2.0 * e;
                            let nx = sol.model().next_state(d, x, k);
                            slow += p * prefs.psi(prefs.utility(c).unwrap(), v[nx]).unwrap();
                        }
                        assert!((fast - slow).abs() < 1e-12 * (1.0 + slow.abs()), "{a} {r}: {fast} vs {slow}");
                    }
                }
            }
        }
    }

    #[test]
    fn constant_model_one_step() {
        let mut m = toy_cara(0.3, 0.5).unwrap();
        m.payoff = crate::model::PayoffParams {
            theta_d: 0.0,
            theta_x: 0.0,
            rc: 0.0,
            sigma: 0.0,
            constant_revenue: Some(1.5),
        };
        let d = DrawBlock::for_solve(ShockDistribution::StandardNormal, 5, 1);
        let sol = Solver::new(&m, &d).unwrap();
        let p = m.preferences;
        let c = 1.0;
        let tv = sol.apply(&[c; 3]).unwrap();
        let want = p
            .aggregator(0.1 * p.utility(1.5).unwrap() + 0.9 * p.aggregator_inverse(c).unwrap())
            .unwrap();
        for t in tv {
            assert!((t - want).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_iteration_start() {
        let sol = toy_solver(0.3, 0.5, 300);
        let rep = sol.iterate(&StartPoint::UpperBound, 1e-10, 5000).unwrap();
        assert!(rep.converged);
        let again = sol
            .iterate(&StartPoint::Custom(rep.values().to_vec()), 1e-10, 5000)
            .unwrap();
        assert!(again.converged);
        assert!(again.iterations <= 2, "{}", again.iterations);
    }

    #[test]
    fn dual_start_agrees_under_contraction() {
        let m = toy_cara(0.5, 0.5).unwrap();
        let cfg = SolveConfig {
            n_sim_eps: 500,
            ..Default::default()
        };
        let u = check_uniqueness(&m, &cfg).unwrap();
        assert!(u.unique, "gap {}", u.gap);
    }

    #[test]
    fn degenerate_model_has_tight_bounds() {
        let mut m = make_toy_model(PreferenceSpec::cara(0.0, 0.0, 0.9).unwrap());
        m.payoff = crate::model::PayoffParams {
            theta_d: 0.0,
            theta_x: 0.0,
            rc: 0.0,
            sigma: 0.0,
            constant_revenue: None,
        };
        let b = compute_bounds(&m, 100, 4).unwrap();
        assert_eq!(b.v_star, b.v_lower);
        assert_eq!(b.v_star, 0.0);
        let u = check_uniqueness(&m, &SolveConfig::default()).unwrap();
        assert!(u.unique);
        assert_eq!(u.gap, 0.0);
    }

    #[test]
    fn cara_upper_bound_is_inverse_alpha() {
        let m = toy_cara(0.1457, 0.5).unwrap();
        let b = compute_bounds(&m, 500, 1).unwrap();
        assert!((b.v_star - 6.863).abs() < 1e-3);
        assert!(b.v_lower < b.v_star);
    }

    #[test]
    fn analytic_margins() {
        let sep = PreferenceSpec::cara(0.2, 0.2, 0.9).unwrap();
        assert_eq!(analytic_margin(&sep), Some(0.9));
        let cara = PreferenceSpec::cara(0.1023, 0.5555, 0.9).unwrap();
        assert!((analytic_margin(&cara).unwrap() - 0.9808).abs() < 1e-4);
        let crra = PreferenceSpec::crra(0.8, 0.5, 0.9).unwrap();
        assert!((analytic_margin(&crra).unwrap() - 0.9f64.powf(0.4)).abs() < 1e-15);
        let early = PreferenceSpec::cara(0.6, 0.1, 0.9).unwrap();
        assert_eq!(analytic_margin(&early), None);
    }

    #[test]
    fn numeric_margin_below_analytic_bound() {
        let m = toy_cara(0.1023, 0.5555).unwrap();
        let cm = contraction_margin(&m, 500, 2).unwrap();
        let a = cm.m_analytic.unwrap();
        assert!(cm.m_numeric <= a + 1e-9, "{} > {}", cm.m_numeric, a);
        assert!(cm.m_numeric > 0.5);
    }

    #[test]
    fn crra_negative_consumption_reports_state() {
        let m = make_toy_model(PreferenceSpec::crra(0.5, 0.2, 0.9).unwrap());
        let d = DrawBlock::for_solve(ShockDistribution::StandardNormal, 10, 1);
        assert!(Solver::new(&m, &d).is_err());
    }
}
