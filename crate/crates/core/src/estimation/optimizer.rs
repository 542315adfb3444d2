//! Nelder-Mead simplex minimization.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_evals: usize,
    /// Edge length of the starting simplex in transformed coordinates.
    pub initial_simplex_scale: f64,
    /// Converged once the spread of objective values over the simplex is at
    /// most this.
    pub f_tol: f64,
    /// Restart once from the optimum with a fresh simplex.
    pub restart: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            initial_simplex_scale: 0.2,
            f_tol: 1e-4,
            restart: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` from `x0`. Non-finite objective values are treated as `+∞`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], cfg: &OptimizerConfig) -> Minimum {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let v = eval(x0, &mut evals);
        return Minimum {
            x: vec![],
            f: v,
            evals,
            converged: v.is_finite(),
        };
    }

    let mut run = |start: &[f64], budget: usize, evals: &mut usize| -> Minimum {
        let used0 = *evals;
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(start.to_vec());
        for i in 0..n {
            let mut p = start.to_vec();
            p[i] += cfg.initial_simplex_scale;
            simplex.push(p);
        }
        let mut fv: Vec<f64> = simplex.iter().map(|p| eval(p, evals)).collect();
        let mut converged = false;
        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            fv = order.iter().map(|&i| fv[i]).collect();

            if fv[0].is_finite() && fv[n] - fv[0] <= cfg.f_tol {
                converged = true;
                break;
            }
            if *evals - used0 >= budget {
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
                .collect();
            let toward = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };

            let xr = toward(-1.0);
            let fr = eval(&xr, evals);
            if fr < fv[0] {
                let xe = toward(-2.0);
                let fe = eval(&xe, evals);
                if fe < fr {
                    simplex[n] = xe;
                    fv[n] = fe;
                } else {
                    simplex[n] = xr;
                    fv[n] = fr;
                }
                continue;
            }
            if fr < fv[n - 1] {
                simplex[n] = xr;
                fv[n] = fr;
                continue;
            }
            let (xc, fc) = if fr < fv[n] {
                let xc = toward(-0.5);
                let fc = eval(&xc, evals);
                (xc, fc)
            } else {
                let xc = toward(0.5);
                let fc = eval(&xc, evals);
                (xc, fc)
            };
            if fc < fv[n].min(fr) {
                simplex[n] = xc;
                fv[n] = fc;
                continue;
            }
            for i in 1..=n {
                let p: Vec<f64> = simplex[0]
                    .iter()
                    .zip(&simplex[i])
                    .map(|(b, x)| b + 0.5 * (x - b))
                    .collect();
                fv[i] = eval(&p, evals);
                simplex[i] = p;
            }
        }
        Minimum {
            x: simplex[0].clone(),
            f: fv[0],
            evals: *evals - used0,
            converged,
        }
    };

    let first = run(x0, cfg.max_evals, &mut evals);
    if !cfg.restart || evals >= cfg.max_evals {
        return Minimum { evals, ..first };
    }
    let second = run(&first.x, cfg.max_evals - evals, &mut evals);
    let best = if second.f <= first.f { second.clone() } else { first.clone() };
    Minimum {
        x: best.x,
        f: best.f,
        evals,
        converged: first.converged && second.converged,
    }
}
