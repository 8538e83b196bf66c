use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use perturbix::pipeline::{self, resolve};
use serde::{de::DeserializeOwned, Serialize};

#[derive(Parser)]
#[command(name = "perturbix", version, about = "Optimal perturbations of Markov chains estimated from dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct With<T: Args> {
    #[command(flatten)]
    flags: T,
    /// JSON file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset system and write a trajectory.
    Simulate(With<pipeline::SimulateConfig>),
    /// Estimate a transition matrix from a trajectory.
    Ulam(With<pipeline::UlamRunConfig>),
    /// Compute an optimal perturbation.
    Optimize(With<pipeline::OptimizeConfig>),
    /// Tabulate linear and exact responses to a perturbation.
    Respond(With<pipeline::RespondConfig>),
    /// Drift field of a chain's generator or of a perturbation.
    Reconstruct(With<pipeline::ReconstructConfig>),
    /// Weighted-observable calculus on a reduced orbit model.
    Upo(With<pipeline::UpoConfig>),
    /// Compare the two constrained optimizers on random chains.
    EnsembleCompare(With<pipeline::EnsembleRunConfig>),
}

fn cfg<T: Args + Serialize + DeserializeOwned>(w: With<T>) -> perturbix::Result<T> {
    resolve(w.flags, w.config.as_deref())
}

fn run(cli: Cli) -> perturbix::Result<String> {
    pipeline::init_threads()?;
    Ok(match cli.command {
        Command::Simulate(w) => format!("wrote {}", pipeline::cmd_simulate(&cfg(w)?)?.display()),
        Command::Ulam(w) => {
            let meta = pipeline::cmd_ulam(&cfg(w)?)?;
            format!("{} states, lag {} samples", meta.n_states, meta.lag)
        }
        Command::Optimize(w) => {
            let meta = pipeline::cmd_optimize(&cfg(w)?)?;
            format!("objective {:.6e}, feasible eps up to {:.3e}", meta.objective_value, meta.max_feasible_eps)
        }
        Command::Respond(w) => {
            let s = pipeline::cmd_respond(&cfg(w)?)?;
            format!("linear prediction L1 error {:.3e} against correction {:.3e}", s.linear_l1_error, s.correction_l1)
        }
        Command::Reconstruct(w) => format!("{} field rows", pipeline::cmd_reconstruct(&cfg(w)?)?),
        Command::Upo(w) => {
            let s = pipeline::cmd_upo(&cfg(w)?)?;
            format!("<{}> = {:.6}, unit-norm response {:.6e}", s.observable, s.average, s.average_response)
        }
        Command::EnsembleCompare(w) => {
            let r = pipeline::cmd_ensemble_compare(&cfg(w)?)?;
            format!("spectral gap {:.3} ± {:.3}", r.spectral_gap_mean, r.spectral_gap_std)
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
