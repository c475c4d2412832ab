use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dualsys::harness::{self, BackendKind, ExperimentConfig, GsbTally};

#[derive(Parser)]
#[command(name = "dualsys", version, about = "Planner agents and a toy audio-driven video renderer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment into its own directory.
    Run {
        /// One of the names printed by `dualsys list`.
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        backend: Option<Backend>,
        /// Defaults to runs/<experiment>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        reflect: Option<Switch>,
    },
    /// Repeat a run from its manifest.json.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the GSB score of a pairwise study.
    Gsb { wins: u64, loses: u64, ties: u64 },
    /// List experiment names.
    List,
    /// Print the default configuration as TOML.
    Config,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { experiment, config, seed, backend, out, reflect } => {
            if !harness::EXPERIMENTS.contains(&experiment.as_str()) {
                bail!("unknown experiment {experiment:?}; expected one of {}", harness::EXPERIMENTS.join(", "));
            }
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(b) = backend {
                cfg.agents.backend = match b {
                    Backend::Mock => BackendKind::Mock,
                    Backend::Http => BackendKind::Http,
                };
            }
            if let Some(r) = reflect {
                cfg.generate.reflect = matches!(r, Switch::On);
            }
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(&experiment));
            log::info!("running {experiment} into {}", out.display());
            let dir = harness::run_experiment(&experiment, &cfg, &out)?;
            println!("{}", dir.display());
        }
        Command::Rerun { manifest, out } => {
            let dir = harness::rerun_manifest(&manifest, &out)?;
            println!("{}", dir.display());
        }
        Command::Gsb { wins, loses, ties } => {
            let s = harness::gsb(GsbTally::new(wins, loses, ties))?;
            let r = s.reduced();
            println!("{s} ({}/{})", r.numerator, r.denominator);
        }
        Command::List => {
            for name in harness::EXPERIMENTS {
                println!("{name}");
            }
        }
        Command::Config => print!("{}", ExperimentConfig::default().to_toml()),
    }
    Ok(())
}
