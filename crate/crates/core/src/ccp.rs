//! Choice-specific values, simulated choice probabilities and panel
//! simulation from a solved model.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draws::{draw_shock, stream_rng, DrawBlock, Purpose};
use crate::error::{invalid, Result};
use crate::estimation::panel::{Observation, PanelDataset};
use crate::model::{make_toy_model, Action, BusModel};
use crate::preferences::PreferenceSpec;
use crate::solver::{SolveConfig, Solver};

/// Simulated choice probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpTable {
    /// `[Pr(keep | x), Pr(replace | x)]` for each state.
    pub probs: Vec<[f64; 2]>,
    pub n_draws: usize,
    pub seed: u64,
}

impl CcpTable {
    pub fn replace_prob(&self, x: usize) -> f64 {
        self.probs[x][1]
    }

    /// Binomial standard error of `Pr(replace | x)`.
    pub fn standard_error(&self, x: usize) -> f64 {
        let p = self.replace_prob(x);
        (p * (1.0 - p) / self.n_draws as f64).sqrt()
    }
}

/// `E_Δ[φ((1-β)u(π + σε(d)) + βφ⁻¹(V(x')))]`.
pub fn choice_value(model: &BusModel, v: &[f64], d: Action, x: usize, eps: [f64; 2]) -> Result<f64> {
    let solver = Solver::evaluator(model)?;
    let cont = solver.continuation(v)?;
    Ok(solver.choice_value(d, x, eps, &cont))
}

/// Keep wins ties.
#[inline]
fn choose(keep: f64, replace: f64) -> Action {
    if replace > keep {
        Action::Replace
    } else {
        Action::Keep
    }
}

/// Frequency of the optimal action over `j` shock pairs per state. State
/// `x` uses its own random stream, so tables are reproducible and states
/// can be evaluated in any order.
pub fn ccp(model: &BusModel, v: &[f64], j: usize, seed: u64) -> Result<CcpTable> {
    if j == 0 {
        return Err(invalid("ccp.n_draws", "must be at least 1"));
    }
    let solver = Solver::evaluator(model)?;
    let cont = solver.continuation(v)?;
    let dist = model.shocks.distribution;
    let state = |x: usize| -> [f64; 2] {
        let mut rng = stream_rng(seed, Purpose::Ccp, x as u64);
        let mut replaced = 0usize;
        for _ in 0..j {
            let eps = [draw_shock(dist, &mut rng), draw_shock(dist, &mut rng)];
            let k = solver.choice_value(Action::Keep, x, eps, &cont);
            let r = solver.choice_value(Action::Replace, x, eps, &cont);
            if choose(k, r) == Action::Replace {
                replaced += 1;
            }
        }
        let p = replaced as f64 / j as f64;
        [1.0 - p, p]
    };
    let n = model.n_states();
    let probs = if n * j >= 20_000 {
        (0..n).into_par_iter().map(state).collect()
    } else {
        (0..n).map(state).collect()
    };
    Ok(CcpTable {
        probs,
        n_draws: j,
        seed,
    })
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = k;
        acc += p;
        if u < acc {
            return k;
        }
    }
    last
}

/// Simulate buses that start new at `x = 0`. Bus `i` draws from its own
/// stream; ids and months are 1-based.
pub fn simulate_panel(model: &BusModel, v: &[f64], n_buses: usize, n_months: usize, seed: u64) -> Result<PanelDataset> {
    let solver = Solver::evaluator(model)?;
    let cont = solver.continuation(v)?;
    let dist = model.shocks.distribution;
    let bus = |i: usize| -> Vec<Observation> {
        let mut rng = stream_rng(seed, Purpose::Panel, i as u64);
        let mut x = 0usize;
        let mut rows = Vec::with_capacity(n_months);
        for t in 0..n_months {
            let eps = [draw_shock(dist, &mut rng), draw_shock(dist, &mut rng)];
            let k = solver.choice_value(Action::Keep, x, eps, &cont);
            let r = solver.choice_value(Action::Replace, x, eps, &cont);
            let d = choose(k, r);
            let delta = sample_index(model.transition.row(d, x), &mut rng);
            rows.push(Observation {
                bus_id: i as u64 + 1,
                month: t as u64 + 1,
                x_bin: x,
                decision: d.index() as u8,
                delta_bin: delta,
            });
            x = model.next_state(d, x, delta);
        }
        rows
    };
    let per_bus: Vec<Vec<Observation>> = if n_buses * n_months >= 20_000 {
        (0..n_buses).into_par_iter().map(bus).collect()
    } else {
        (0..n_buses).map(bus).collect()
    };
    Ok(PanelDataset {
        rows: per_bus.into_iter().flatten().collect(),
    })
}

/// One `(α, state)` point of the misspecification sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub alpha: f64,
    pub state: usize,
    pub ccp_separable: f64,
    pub ccp_nonseparable: f64,
    pub se_separable: f64,
    pub se_nonseparable: f64,
}

impl BiasRow {
    pub fn gap(&self) -> f64 {
        self.ccp_nonseparable - self.ccp_separable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSweep {
    pub rho: f64,
    pub rows: Vec<BiasRow>,
}

impl BiasRow {
    /// Three combined binomial standard errors of the gap.
    pub fn noise_band(&self) -> f64 {
        3.0 * (self.se_separable.powi(2) + self.se_nonseparable.powi(2)).sqrt()
    }

    /// Sign of the gap, or zero when it is within the noise band.
    pub fn significant_sign(&self) -> i8 {
        let g = self.gap();
        if g.abs() <= self.noise_band() {
            0
        } else if g > 0.0 {
            1
        } else {
            -1
        }
    }
}

impl BiasSweep {
    /// Checks the crossing pattern and returns a list of violations.
    ///
    /// At `α = ρ` the two curves must agree within three standard errors at
    /// every state. Away from `ρ`, gaps inside the noise band carry no sign.
    /// Every significant gap below `ρ` must share one sign, every
    /// significant gap above `ρ` the opposite one, and at least one state
    /// must show significant gaps on both sides. States where the
    /// preference parameters do not move the choice at all (the new-bus
    /// state of the toy model, where both actions face the same increment
    /// lottery) simply show no significant gaps.
    pub fn crossing_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut crossings = 0;
        let states: std::collections::BTreeSet<usize> = self.rows.iter().map(|r| r.state).collect();
        for x in states {
            let mut below = std::collections::BTreeSet::new();
            let mut above = std::collections::BTreeSet::new();
            for r in self.rows.iter().filter(|r| r.state == x) {
                if (r.alpha - self.rho).abs() < 1e-9 {
                    if r.gap().abs() > r.noise_band() {
                        out.push(format!("state {x}: curves differ by {} at alpha = rho", r.gap()));
                    }
                    continue;
                }
                let s = r.significant_sign();
                if s != 0 {
                    if r.alpha < self.rho {
                        below.insert(s);
                    } else {
                        above.insert(s);
                    }
                }
            }
            if below.len() > 1 || above.len() > 1 {
                out.push(format!("state {x}: gap changes sign away from alpha = rho"));
            } else if let (Some(b), Some(a)) = (below.first(), above.first()) {
                if a == b {
                    out.push(format!("state {x}: gap has the same sign on both sides of rho"));
                } else {
                    crossings += 1;
                }
            }
        }
        if crossings == 0 {
            out.push("no state shows a significant crossing at alpha = rho".to_string());
        }
        out
    }
}

/// Sweep the risk parameter on the toy model. The nonseparable curve fixes
/// `ρ`; the separable curve sets `ρ = α`. Both share the same solve and
/// choice draws.
pub fn bias_sweep(alphas: &[f64], rho: f64, solve: &SolveConfig, j: usize, ccp_seed: u64) -> Result<BiasSweep> {
    let base = make_toy_model(PreferenceSpec::cara(rho, rho, 0.9)?);
    let draws = DrawBlock::for_solve(base.shocks.distribution, solve.n_sim_eps, solve.seed);
    let table = |prefs: PreferenceSpec| -> Result<CcpTable> {
        let model = base.with_preferences(prefs);
        let rep = Solver::new(&model, &draws)?.solve(solve)?;
        if !rep.converged {
            return Err(crate::error::Error::NotConverged {
                start: "upper",
                iterations: rep.iterations,
                residual: rep.final_residual(),
            });
        }
        ccp(&model, rep.values(), j, ccp_seed)
    };
    let mut rows = Vec::new();
    for &a in alphas {
        let sep = table(PreferenceSpec::cara(a, a, 0.9)?)?;
        let non = table(PreferenceSpec::cara(a, rho, 0.9)?)?;
        for x in 0..base.n_states() {
            rows.push(BiasRow {
                alpha: a,
                state: x,
                ccp_separable: sep.replace_prob(x),
                ccp_nonseparable: non.replace_prob(x),
                se_separable: sep.standard_error(x),
                se_nonseparable: non.standard_error(x),
            });
        }
    }
    Ok(BiasSweep { rho, rows })
}
