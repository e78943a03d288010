//! `learnhmm`: ingest, simulate, fit, compare and decode learning HMMs.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::config_help;

#[derive(Debug, Parser)]
#[command(name = "learnhmm", version, about = "Hidden Markov models of analyst learning", after_help = config_help())]
struct Cli {
    /// Run configuration (TOML path, or `small` / `paper-scale`).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a panel file from query and view event logs.
    Ingest {
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        views: Option<PathBuf>,
    },
    /// Simulate a panel and its ground truth.
    Simulate {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the hidden Markov model by MCMC.
    Fit {
        #[command(flatten)]
        panel: PanelArg,
        #[command(flatten)]
        mcmc: McmcFlags,
    },
    /// Fit the one-state negative-binomial baseline by maximum likelihood.
    Baseline {
        #[command(flatten)]
        panel: PanelArg,
    },
    /// Rank fitted models by information criteria.
    Compare {
        /// summary.json or baseline.json files.
        files: Vec<PathBuf>,
    },
    /// Decode state probabilities and most likely paths.
    Decode {
        #[command(flatten)]
        panel: PanelArg,
        /// summary.json from `fit`.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Average marginals over this many final draws from each trace.
        #[arg(long, requires = "traces")]
        per_draw: Option<usize>,
        /// Trace files for per-draw decoding.
        #[arg(long, num_args = 1..)]
        traces: Vec<PathBuf>,
    },
    /// Convergence and acceptance report for trace files.
    Diagnose {
        /// trace/1 files, one per chain.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct PanelArg {
    /// Panel file (default: <out>/panel.json).
    #[arg(long)]
    panel: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct McmcFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    if let Some(dir) = cli.out_dir {
        cfg.output.dir = dir;
    }
    match cli.command {
        Command::Ingest { queries, views } => {
            if queries.is_some() {
                cfg.ingest.queries = queries;
            }
            if views.is_some() {
                cfg.ingest.views = views;
            }
            commands::ingest(&cfg)
        }
        Command::Simulate { seed } => {
            if let Some(s) = seed {
                cfg.sim.seed = s;
            }
            commands::simulate(&cfg)
        }
        Command::Fit { panel, mcmc } => {
            let m = &mut cfg.mcmc;
            if let Some(v) = mcmc.seed {
                m.seed = v;
            }
            if let Some(v) = mcmc.iterations {
                m.n_iterations = v;
            }
            if let Some(v) = mcmc.burn_in {
                m.burn_in = v;
            }
            if let Some(v) = mcmc.chains {
                m.n_chains = v;
            }
            if let Some(v) = mcmc.workers {
                m.workers = v;
            }
            m.validate()?;
            commands::fit(&cfg, panel.panel)
        }
        Command::Baseline { panel } => commands::baseline(&cfg, panel.panel),
        Command::Compare { files } => commands::compare(&cfg, &files),
        Command::Decode {
            panel,
            summary,
            per_draw,
            traces,
        } => commands::decode(&cfg, panel.panel, summary, per_draw, &traces),
        Command::Diagnose { traces } => commands::diagnose(&cfg, &traces),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
