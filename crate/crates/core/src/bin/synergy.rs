use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use synergy::dynamics::FitConfig;
use synergy::envs::EnvConfig;
use synergy::error::{Error, Result};
use synergy::harness::{self, ExperimentSpec};
use synergy::policy::Policy;

#[derive(Parser)]
#[command(name = "synergy", version, about = "Synergistic intrinsic motivation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct EnvArgs {
    /// Environment name (bar-lift, bottle-twist, block-push, soccer, reach, ball-pickup, corkscrew).
    #[arg(long)]
    env: String,
    #[arg(long, default_value_t = 2)]
    agents: usize,
    #[arg(long, default_value_t = 10)]
    horizon: usize,
}

impl EnvArgs {
    fn config(&self) -> EnvConfig {
        EnvConfig {
            horizon: self.horizon,
            ..EnvConfig::new(&self.env, self.agents)
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit one agent's single-agent forward model from random play.
    Pretrain {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long)]
        agent: usize,
        /// Number of transitions.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Run seed the model is meant for.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every (method, λ, seed) of an experiment spec.
    Train { spec: PathBuf },
    /// Run a spec and tabulate final success per λ.
    SweepLambda { spec: PathBuf },
    /// Success rate of a policy checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sample actions instead of acting at the mean.
        #[arg(long)]
        stochastic: bool,
    },
    /// Learning curves with ±1 std bands for every run below a directory.
    Plot {
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the hand-wired bar-lift policy as a checkpoint.
    Scripted {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain {
            env,
            agent,
            samples,
            seed,
            epochs,
            out,
        } => {
            let fit = FitConfig {
                epochs,
                ..FitConfig::default()
            };
            let (_, s) = harness::pretrain_to(&env.config(), agent, samples, seed, &fit, &out)?;
            println!(
                "{}: train mse {:.3e}, validation mse {:.3e} (target variance {:.3e})",
                out.display(),
                s.train_mse,
                s.validation_mse,
                s.target_variance
            );
        }
        Command::Train { spec } => {
            let spec = ExperimentSpec::load(spec)?;
            for r in harness::train_all(&spec)? {
                let last = harness::read_metrics(spec.run_dir(r.method, r.lambda, r.seed).join(&r.metrics))?;
                let final_success = last.last().map_or(0.0, |m| m.success_rate);
                println!(
                    "{} λ={} seed={}: {} updates, final success {final_success:.3}",
                    r.method.name(),
                    r.lambda,
                    r.seed,
                    r.updates
                );
            }
        }
        Command::SweepLambda { spec } => {
            let spec = ExperimentSpec::load(spec)?;
            println!("| method | λ | final success | std | seeds |\n|---|---|---|---|---|");
            for r in harness::sweep_lambda(&spec)? {
                println!(
                    "| {} | {} | {:.3} | {:.3} | {} |",
                    r.method.name(),
                    r.lambda,
                    r.mean_final_success,
                    r.std_final_success,
                    r.seeds
                );
            }
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            stochastic,
        } => {
            let policy = Policy::load(&checkpoint)?;
            println!(
                "{}",
                harness::evaluate(&policy, &env.config(), episodes, seed, stochastic)?
            );
        }
        Command::Plot { runs, out } => {
            for f in harness::plot(&runs, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Scripted { out } => {
            harness::scripted_bar_lift(&EnvConfig::new("bar-lift", 2))?.save(&out)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::Format(_) => 2,
                Error::Numeric(_) => 3,
                Error::Io(_) => 1,
            })
        }
    }
}
