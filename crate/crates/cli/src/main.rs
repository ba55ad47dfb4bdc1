use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentdrive::eval::MetricsReport;
use latentdrive::run::{self, Overrides, RunConfig, ScenarioChoice};
use latentdrive::sim::builtin;
use latentdrive::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "latentdrive", version, about = "Latent world-model driving agent with a safety budget")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a world model and agent, then evaluate the result.
    Train {
        /// TOML run configuration. Flags given alongside it win.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioFlags,
        #[arg(long)]
        seed: Option<u64>,
        /// Total environment steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Allowed expected discounted cost per episode.
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint with the intervention oracle active.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the scenarios the checkpoint was trained on.
        #[command(flatten)]
        scenario: ScenarioFlags,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank metric reports (report.json files or comparison CSV tables).
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Built-in scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCommand),
}

#[derive(Args)]
struct ScenarioFlags {
    /// Curriculum stage (1, 2 or 3).
    #[arg(long, conflicts_with = "spec")]
    stage: Option<u32>,
    /// Scenario TOML file.
    #[arg(long)]
    spec: Option<PathBuf>,
}

impl ScenarioFlags {
    fn choice(&self) -> Option<ScenarioChoice> {
        match (&self.stage, &self.spec) {
            (Some(s), _) => Some(ScenarioChoice::Stage(*s)),
            (None, Some(p)) => Some(ScenarioChoice::Spec(p.clone())),
            (None, None) => None,
        }
    }
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// List built-in scenarios.
    List,
    /// Print a built-in scenario as TOML, ready for `--spec`.
    Show { name: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if e.is_numeric() {
                ExitCode::from(EXIT_NUMERIC)
            } else if e.is_config() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(command: Command) -> latentdrive::Result<()> {
    match command {
        Command::Train {
            config,
            scenario,
            seed,
            steps,
            budget,
            out,
        } => {
            let (mut cfg, file_keys) = match &config {
                Some(p) => RunConfig::load_with_keys(p)?,
                None => (RunConfig::default(), Default::default()),
            };
            let overrides = Overrides {
                seed,
                stage: scenario.stage,
                spec: scenario.spec.clone(),
                steps,
                budget,
                out,
            };
            for w in cfg.apply(&overrides, &file_keys) {
                log::warn!("{w}");
            }
            log::info!("training {} steps, seed {}, output {}", cfg.steps, cfg.seed, cfg.out.display());
            let outcome = run::train(&cfg)?;
            println!("fingerprint {}", outcome.fingerprint);
            println!(
                "env steps {}  updates {}  episodes {}  multiplier {:.4}",
                outcome.env_steps,
                outcome.updates,
                outcome.episodes.len(),
                outcome.budget.multiplier
            );
            if let Some(ev) = &outcome.evaluation {
                print_report(&ev.report);
                println!("mean discounted cost {:.4}", ev.mean_discounted_cost());
            }
            println!("checkpoint {}", outcome.checkpoint.display());
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            scenario,
            episodes,
            seed,
            out,
        } => {
            let ev = run::evaluate(&checkpoint, scenario.choice().as_ref(), episodes, seed, out.as_deref())?;
            print_report(&ev.report);
            println!("mean discounted cost {:.4}", ev.mean_discounted_cost());
            Ok(())
        }
        Command::Compare { reports, out } => {
            print!("{}", run::compare(&reports, &out)?);
            Ok(())
        }
        Command::Scenario(ScenarioCommand::List) => {
            println!("{:<10} {:<12} {:>8} {:>7} {:>9} {:>6}", "group", "name", "length", "curved", "obstacles", "agents");
            for (group, s) in builtin() {
                println!(
                    "{:<10} {:<12} {:>8.1} {:>7} {:>9} {:>6}",
                    group,
                    s.name,
                    s.track().length(),
                    if s.has_curves() { "yes" } else { "no" },
                    s.obstacles.len(),
                    s.agents.len()
                );
            }
            Ok(())
        }
        Command::Scenario(ScenarioCommand::Show { name }) => {
            let spec = builtin()
                .into_iter()
                .map(|(_, s)| s)
                .find(|s| s.name == name)
                .ok_or_else(|| Error::Config(format!("no built-in scenario named `{name}`")))?;
            print!("{}", spec.to_toml()?);
            Ok(())
        }
    }
}

fn print_report(r: &MetricsReport) {
    let bound = if r.mpi_lower_bound { " (lower bound, no interventions)" } else { "" };
    println!("MPI {:.2} m{bound}", r.mpi);
    match r.tt {
        Some(t) => println!("TT {t:.2} s ({} DNF)", r.dnf),
        None => println!("TT DNF ({} of {} episodes)", r.dnf, r.episodes),
    }
    println!("SR {:.1} %", r.sr);
    println!("Std[v] {:.4} m/s", r.std_v);
}
