//! `ezddc`: solve, simulate and estimate bus-replacement models with
//! recursive preferences.
//!
//! Exit status is 0 on success, 1 for bad input and 2 when a numerical
//! check fails (non-convergence, failed bracketing, crossing alarm).

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Alarm, BiasArgs, CounterfactualArgs, EstimateArgs, SolverFlags};
use ezddc::Specification;

#[derive(Parser)]
#[command(name = "ezddc", version, about = "Dynamic discrete choice with Epstein-Zin preferences")]
struct Cli {
    /// Worker threads for the numerical kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolveOpts {
    /// Solver settings as JSON; individual flags override it.
    #[arg(long)]
    solver: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Starting point for value iteration.
    #[arg(long, value_parser = ["upper", "lower"])]
    start: Option<String>,
    /// Number of shock draws used by the solver.
    #[arg(long)]
    draws: Option<usize>,
    /// Sup-norm stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
}

impl From<SolveOpts> for SolverFlags {
    fn from(o: SolveOpts) -> Self {
        SolverFlags {
            solver: o.solver,
            seed: o.seed,
            start: o.start,
            draws: o.draws,
            tol: o.tol,
            max_iters: o.max_iters,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model and write its value function.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        solve: SolveOpts,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Simulate a panel of buses from a solved model.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        buses: usize,
        #[arg(long, default_value_t = 100)]
        months: usize,
        #[command(flatten)]
        solve: SolveOpts,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Maximum likelihood estimation on a panel CSV.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// Estimation settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// nonseparable, separable, rust-rev, rust-orig (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "nonseparable")]
        spec: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fit the separable model first and start the nonseparable fit there.
        #[arg(long)]
        warm_start: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Likelihood-ratio test between two nested estimate files.
    LrTest {
        first: PathBuf,
        second: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report contraction bounds and check uniqueness of the fixed point.
    CheckContraction {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        solve: SolveOpts,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certainty-equivalent constant revenue.
    Counterfactual {
        /// Model file, or estimate file together with --data.
        #[arg(long)]
        config: PathBuf,
        /// Second model or estimate file to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        ce_tol: f64,
        /// Multiply payments by this factor to report dollars.
        #[arg(long)]
        scale_dollars: Option<f64>,
        #[command(flatten)]
        solve: SolveOpts,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choice probabilities of separable and nonseparable agents on the toy model.
    ReplicateBiasFigure {
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        /// Draws per state for the choice probabilities.
        #[arg(long, default_value_t = 25_000)]
        ccp_draws: usize,
        #[command(flatten)]
        solve: SolveOpts,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Solve { config, solve, out } => commands::solve(&config, &solve.into(), &out),
        Command::Simulate {
            config,
            buses,
            months,
            solve,
            out,
        } => commands::simulate(&config, &solve.into(), buses, months, &out),
        Command::Estimate {
            data,
            config,
            spec,
            seed,
            warm_start,
            out,
        } => {
            let specs = spec
                .iter()
                .map(|s| s.parse::<Specification>())
                .collect::<Result<Vec<_>, _>>()?;
            commands::estimate(EstimateArgs {
                data: &data,
                config: config.as_deref(),
                specs: &specs,
                seed,
                warm_start,
                out: &out,
            })
        }
        Command::LrTest { first, second, out } => commands::lr_test(&first, &second, out.as_deref()),
        Command::CheckContraction { config, solve, out } => {
            commands::check_contraction(&config, &solve.into(), out.as_deref())
        }
        Command::Counterfactual {
            config,
            compare,
            data,
            ce_tol,
            scale_dollars,
            solve,
            out,
        } => commands::counterfactual(CounterfactualArgs {
            config: &config,
            compare: compare.as_deref(),
            data: data.as_deref(),
            tol: ce_tol,
            scale_dollars,
            flags: &solve.into(),
            out: out.as_deref(),
        }),
        Command::ReplicateBiasFigure {
            step,
            rho,
            ccp_draws,
            solve,
            out,
        } => commands::replicate_bias_figure(BiasArgs {
            step,
            rho,
            ccp_draws,
            flags: &solve.into(),
            out: &out,
        }),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Alarm>().is_some() {
        return 2;
    }
    match err.downcast_ref::<ezddc::Error>() {
        Some(
            ezddc::Error::NotConverged { .. }
            | ezddc::Error::NonFinite(_)
            | ezddc::Error::Bracket { .. }
            | ezddc::Error::NotMonotone,
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if let Some(ezddc::Error::InvalidPanel(problems)) = err.downcast_ref::<ezddc::Error>() {
                for p in problems.iter().take(10) {
                    eprintln!("  {p}");
                }
                if problems.len() > 10 {
                    eprintln!("  ... and {} more", problems.len() - 10);
                }
            }
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
