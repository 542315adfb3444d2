use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use ezddc::ccp::bias_sweep;
use ezddc::counterfactual::{ce_comparison_with, ce_solve_config, certainty_equivalent_with};
use ezddc::estimation::{self, estimate_transition, fit, fit_warm_started, EstimateResult, EstimationConfig};
use ezddc::solver::{analytic_margin, check_uniqueness_with, contraction_margin};
use ezddc::{simulate_panel, BusModel, DrawBlock, PanelDataset, SolveConfig, Solver, Specification, StartPoint};

use crate::output::{to_json, value_csv, Outputs};

/// A numerical or convergence problem, reported with exit code 2.
#[derive(Debug)]
pub struct Alarm(pub String);

impl std::fmt::Display for Alarm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Alarm {}

#[derive(Debug, Clone, Default)]
pub struct SolverFlags {
    pub solver: Option<PathBuf>,
    pub seed: Option<u64>,
    pub start: Option<String>,
    pub draws: Option<usize>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
}

impl SolverFlags {
    pub fn resolve(&self, base: SolveConfig) -> Result<SolveConfig> {
        let mut cfg = match &self.solver {
            Some(p) => read_json::<SolveConfig>(p)?,
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = &self.start {
            cfg.start = match s.as_str() {
                "upper" => StartPoint::UpperBound,
                "lower" => StartPoint::LowerBound,
                other => bail!(ezddc::Error::InvalidConfig {
                    field: "start".into(),
                    message: format!("expected upper or lower, got {other:?}"),
                }),
            };
        }
        if let Some(n) = self.draws {
            cfg.n_sim_eps = n;
        }
        if let Some(t) = self.tol {
            cfg.tol_sup_norm = t;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        anyhow!(ezddc::Error::InvalidConfig {
            field: path.display().to_string(),
            message: e.to_string(),
        })
    })
}

fn read_model(path: &Path) -> Result<BusModel> {
    Ok(BusModel::from_json_file(path)?)
}

fn hash_inputs<A: Serialize, B: Serialize>(a: &A, b: &B) -> Result<Vec<u8>> {
    Ok(format!("{}{}", to_json(a)?, to_json(b)?).into_bytes())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    print!("{}", to_json(value)?);
    Ok(())
}

pub fn solve(config: &Path, flags: &SolverFlags, out: &Path) -> Result<()> {
    let model = read_model(config)?;
    let cfg = flags.resolve(SolveConfig::default())?;
    let mut outputs = Outputs::new(out, "solve", &hash_inputs(&model, &cfg)?, Some(cfg.seed))?;
    let draws = DrawBlock::for_solve(model.shocks.distribution, cfg.n_sim_eps, cfg.seed);
    let report = Solver::new(&model, &draws)?.solve(&cfg)?;
    outputs.write_bytes("value_function.csv", value_csv(report.values()).as_bytes())?;
    outputs.write_json("solve_report.json", &report)?;
    outputs.finish()?;
    println!(
        "{} after {} iterations (residual {:e}, start {})",
        if report.converged { "converged" } else { "NOT converged" },
        report.iterations,
        report.final_residual(),
        report.start
    );
    if !report.converged {
        return Err(Alarm(format!("value iteration did not converge within {} iterations", cfg.max_iters)).into());
    }
    Ok(())
}

pub fn simulate(config: &Path, flags: &SolverFlags, buses: usize, months: usize, out: &Path) -> Result<()> {
    let model = read_model(config)?;
    let cfg = flags.resolve(SolveConfig::default())?;
    let mut outputs = Outputs::new(out, "simulate", &hash_inputs(&model, &(&cfg, buses, months))?, Some(cfg.seed))?;
    let draws = DrawBlock::for_solve(model.shocks.distribution, cfg.n_sim_eps, cfg.seed);
    let report = Solver::new(&model, &draws)?.solve(&cfg)?;
    if !report.converged {
        return Err(Alarm("value iteration did not converge; no panel written".into()).into());
    }
    let panel = simulate_panel(&model, report.values(), buses, months, cfg.seed)?;
    let path = outputs.path("panel.csv");
    panel.write_csv(&path)?;
    outputs.record("panel.csv");
    outputs.finish()?;
    println!("wrote {} observations to {}", panel.len(), path.display());
    Ok(())
}

pub struct EstimateArgs<'a> {
    pub data: &'a Path,
    pub config: Option<&'a Path>,
    pub specs: &'a [Specification],
    pub seed: Option<u64>,
    pub warm_start: bool,
    pub out: &'a Path,
}

pub fn estimate(args: EstimateArgs<'_>) -> Result<()> {
    let base = match args.config {
        Some(p) => read_json::<EstimationConfig>(p)?,
        None => EstimationConfig::default(),
    };
    let data = PanelDataset::read_csv(args.data)?;
    data.validate(Some(base.grid.n_bins))?;
    let seed = args.seed.unwrap_or(base.solver.seed);
    let mut outputs = Outputs::new(args.out, "estimate", &hash_inputs(&base, &(args.specs, seed, &data.rows))?, Some(seed))?;
    let mut unconverged = Vec::new();
    for spec in args.specs {
        let mut cfg = base.clone();
        cfg.solver.seed = seed;
        spec.apply(&mut cfg);
        let result = if args.warm_start && *spec == Specification::Nonseparable {
            fit_warm_started(&data, &cfg)?
        } else {
            fit(&data, &cfg)?
        };
        outputs.write_json(&format!("estimate_{}.json", spec.name()), &result)?;
        println!("{:<13} loglik {:.4}  evals {}  converged {}", spec.name(), result.loglik, result.eval_count, result.converged);
        for (i, p) in result.free_params.iter().enumerate() {
            let se = result.std_errors[i].map_or_else(|| "n/a".to_string(), |s| format!("{s:.4}"));
            println!("  {:<8} {:>12.6}  ({se})", p.as_str(), result.estimates[i]);
        }
        if !result.converged {
            unconverged.push(spec.name());
        }
    }
    outputs.finish()?;
    if !unconverged.is_empty() {
        return Err(Alarm(format!("optimizer budget exhausted for: {}", unconverged.join(", "))).into());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct LrReport {
    unrestricted: String,
    restricted: String,
    statistic: f64,
    df: usize,
    p_value: f64,
}

pub fn lr_test(a: &Path, b: &Path, out: Option<&Path>) -> Result<()> {
    let ra: EstimateResult = read_json(a)?;
    let rb: EstimateResult = read_json(b)?;
    let ((u, up), (r, rp)) = if ra.free_params.len() >= rb.free_params.len() {
        ((ra, a), (rb, b))
    } else {
        ((rb, b), (ra, a))
    };
    if !r.free_params.iter().all(|p| u.free_params.contains(p)) || u.family != r.family {
        bail!(ezddc::Error::InvalidConfig {
            field: "lr-test".into(),
            message: format!(
                "specifications are not nested: {} is not a restriction of {}",
                rp.display(),
                up.display()
            ),
        });
    }
    let df = u.free_params.len() - r.free_params.len();
    let t = estimation::lr_test(u.loglik, r.loglik, df)?;
    let report = LrReport {
        unrestricted: up.display().to_string(),
        restricted: rp.display().to_string(),
        statistic: t.statistic,
        df: t.df,
        p_value: t.p_value,
    };
    println!("statistic {:.4}  df {}  p-value {:.4}", t.statistic, t.df, t.p_value);
    if let Some(dir) = out {
        let bytes = [fs::read(a)?, fs::read(b)?].concat();
        let mut o = Outputs::new(dir, "lr-test", &bytes, None)?;
        o.write_json("lr_test.json", &report)?;
        o.finish()?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ContractionReport {
    timing: ezddc::Timing,
    analytic_bound: Option<f64>,
    analytic_note: String,
    /// `null` when the sup over the value box diverges.
    m_numeric: Option<f64>,
    m_numeric_bounded: bool,
    grid_points: usize,
    unique: bool,
    dual_start_gap: f64,
    iterations_upper: usize,
    iterations_lower: usize,
}

pub fn check_contraction(config: &Path, flags: &SolverFlags, out: Option<&Path>) -> Result<()> {
    let model = read_model(config)?;
    let cfg = flags.resolve(SolveConfig::default())?;
    let margin = contraction_margin(&model, cfg.n_sim_eps, cfg.seed)?;
    let analytic = analytic_margin(&model.preferences);
    let note = match analytic {
        Some(m) => format!("analytic bound {m}"),
        None if margin.m_numeric.is_finite() => "no analytic bound applies; numeric margin reported".to_string(),
        None => "no analytic bound applies; numeric margin is unbounded on the value box".to_string(),
    };
    let draws = DrawBlock::for_solve(model.shocks.distribution, cfg.n_sim_eps, cfg.seed);
    let uniq = check_uniqueness_with(&Solver::new(&model, &draws)?, cfg.tol_sup_norm, cfg.max_iters)?;
    let report = ContractionReport {
        timing: model.preferences.timing_preference(),
        analytic_bound: analytic,
        analytic_note: note,
        m_numeric: margin.m_numeric.is_finite().then_some(margin.m_numeric),
        m_numeric_bounded: margin.m_numeric.is_finite(),
        grid_points: margin.grid_points,
        unique: uniq.unique,
        dual_start_gap: uniq.gap,
        iterations_upper: uniq.upper.iterations,
        iterations_lower: uniq.lower.iterations,
    };
    print_json(&report)?;
    if let Some(dir) = out {
        let mut o = Outputs::new(dir, "check-contraction", &hash_inputs(&model, &cfg)?, Some(cfg.seed))?;
        o.write_json("contraction.json", &report)?;
        o.finish()?;
    }
    if !uniq.unique {
        return Err(Alarm(format!("upper and lower starts disagree by {}", uniq.gap)).into());
    }
    Ok(())
}

/// Accept either a model file or an estimate file; the latter needs the
/// panel to rebuild the transition law.
fn model_from(path: &Path, data: Option<&Path>) -> Result<BusModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(m) = BusModel::from_json_str(&text) {
        return Ok(m);
    }
    let est: EstimateResult = serde_json::from_str(&text).map_err(|e| {
        anyhow!(ezddc::Error::InvalidConfig {
            field: path.display().to_string(),
            message: format!("neither a model nor an estimate file: {e}"),
        })
    })?;
    let data = data.ok_or_else(|| {
        anyhow!(ezddc::Error::InvalidConfig {
            field: "data".into(),
            message: "an estimate file needs --data to rebuild the transition law".into(),
        })
    })?;
    let panel = PanelDataset::read_csv(data)?;
    let transition = estimate_transition(&panel, est.config.grid.n_bins)?;
    Ok(est.config.build_model(&est.theta_hat, &transition)?)
}

pub struct CounterfactualArgs<'a> {
    pub config: &'a Path,
    pub compare: Option<&'a Path>,
    pub data: Option<&'a Path>,
    pub tol: f64,
    pub scale_dollars: Option<f64>,
    pub flags: &'a SolverFlags,
    pub out: Option<&'a Path>,
}

pub fn counterfactual(args: CounterfactualArgs<'_>) -> Result<()> {
    let model = model_from(args.config, args.data)?;
    let cfg = args.flags.resolve(ce_solve_config(args.tol))?;
    let value = match args.compare {
        None => {
            let mut ce = certainty_equivalent_with(&model, &cfg, args.tol)?;
            ce.scale_to_dollars = args.scale_dollars;
            serde_json::to_value(ce)?
        }
        Some(other) => {
            let b = model_from(other, args.data)?;
            let mut c = ce_comparison_with(&model, &b, &cfg, args.tol)?;
            c.ce_a.scale_to_dollars = args.scale_dollars;
            c.ce_b.scale_to_dollars = args.scale_dollars;
            serde_json::to_value(c)?
        }
    };
    print_json(&value)?;
    if let Some(dir) = args.out {
        let mut o = Outputs::new(dir, "counterfactual", &hash_inputs(&model, &cfg)?, Some(cfg.seed))?;
        o.write_json("counterfactual.json", &value)?;
        o.finish()?;
    }
    Ok(())
}

pub struct BiasArgs<'a> {
    pub step: f64,
    pub rho: f64,
    pub ccp_draws: usize,
    pub flags: &'a SolverFlags,
    pub out: &'a Path,
}

/// `α` grid from 0.2 to 0.8, always containing `ρ` exactly.
pub fn alpha_grid(step: f64, rho: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.6) {
        bail!(ezddc::Error::InvalidConfig {
            field: "step".into(),
            message: "must lie in (0, 0.6]".into(),
        });
    }
    let n = ((0.6 / step) + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| ((0.2 + k as f64 * step) * 1e9).round() / 1e9).collect();
    if !grid.iter().any(|a| (a - rho).abs() < 1e-12) {
        grid.push(rho);
        grid.sort_by(f64::total_cmp);
    }
    Ok(grid)
}

pub fn replicate_bias_figure(args: BiasArgs<'_>) -> Result<()> {
    let cfg = args.flags.resolve(SolveConfig::default())?;
    let alphas = alpha_grid(args.step, args.rho)?;
    let mut o = Outputs::new(args.out, "replicate-bias-figure", &hash_inputs(&cfg, &(&alphas, args.rho, args.ccp_draws))?, Some(cfg.seed))?;
    let sweep = bias_sweep(&alphas, args.rho, &cfg, args.ccp_draws, cfg.seed)?;
    let mut csv = String::from("alpha,state,ccp_separable,ccp_nonseparable\n");
    for r in &sweep.rows {
        csv.push_str(&format!("{},{},{},{}\n", r.alpha, r.state, r.ccp_separable, r.ccp_nonseparable));
    }
    o.write_bytes("bias_figure.csv", csv.as_bytes())?;
    o.finish()?;
    let violations = sweep.crossing_violations();
    if !violations.is_empty() {
        return Err(Alarm(format!("crossing property violated: {}", violations.join("; "))).into());
    }
    println!("{} rows; curves cross at alpha = {}", sweep.rows.len(), args.rho);
    Ok(())
}
