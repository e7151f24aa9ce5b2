use clap::{Args, Parser, Subcommand};
use covsteer_cli::commands::{configure_threads, EvalOptions, Perturbation, StudyOptions};
use covsteer_cli::spec::{Averaging, Convention};
use covsteer_cli::{cmd_eval, cmd_solve, cmd_study, Exit, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

/// Chance-constrained covariance steering.
///
/// Exit codes: 0 solved, 2 infeasible (or a law that does not fit the
/// scenario), 3 numerical failure, 4 bad input.
#[derive(Parser)]
#[command(name = "covsteer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write report.json, trajectory.csv, residuals.csv.
    Solve(SolveArgs),
    /// Same as `solve --baseline`.
    Baseline(Common),
    /// Monte-Carlo evaluation of a solved control law.
    Eval(EvalArgs),
    /// Solve and evaluate a set of perturbed environments.
    Study(StudyArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario document (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    inner_iters: Option<usize>,
    #[arg(long)]
    outer_iters: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_enum)]
    averaging: Option<Averaging>,
    /// Reads the scenario's risk value as joint δ or per-constraint δ′.
    #[arg(long, value_enum)]
    delta_convention: Option<Convention>,
    /// Warn about unknown scenario keys instead of rejecting them.
    #[arg(long)]
    lax: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            inner_iters: self.inner_iters,
            outer_iters: self.outer_iters,
            rho: self.rho,
            averaging: self.averaging,
            delta_convention: self.delta_convention,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Solve each local problem as one conic program instead of splitting it.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// trajectory.csv written by `solve`.
    #[arg(long)]
    law: PathBuf,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Sample paths written to samples.csv.
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 10)]
    n_envs: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Standard deviation of obstacle center (and halfspace offset) shifts.
    #[arg(long, default_value_t = 0.0)]
    center_std: f64,
    /// Standard deviation of obstacle radius changes.
    #[arg(long, default_value_t = 0.0)]
    radius_std: f64,
}

fn run() -> Exit {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::BadInput } else { Exit::Success };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit();
    }
    match cli.command {
        Command::Solve(a) => cmd_solve(
            &a.common.scenario,
            &a.common.overrides(),
            &a.common.out,
            a.baseline,
            a.common.lax,
        ),
        Command::Baseline(c) => cmd_solve(&c.scenario, &c.overrides(), &c.out, true, c.lax),
        Command::Eval(a) => cmd_eval(
            &a.common.scenario,
            &a.law,
            &EvalOptions {
                trials: a.trials,
                samples: a.samples,
            },
            &a.common.overrides(),
            &a.common.out,
            a.common.lax,
        ),
        Command::Study(a) => cmd_study(
            &a.common.scenario,
            &StudyOptions {
                n_envs: a.n_envs,
                trials: a.trials,
                perturbation: Perturbation {
                    center_std: a.center_std,
                    radius_std: a.radius_std,
                },
            },
            &a.common.overrides(),
            &a.common.out,
            a.common.lax,
        ),
    }
}

fn main() -> ExitCode {
    ExitCode::from(run().code() as u8)
}
