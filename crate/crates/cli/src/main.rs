//! Command-line front end for the delay-consensus toolkit: build delay
//! augmentations, inspect spectra and convergence bounds, and reproduce the
//! two headline experiments (the inverse-gap sweep and the side-by-side
//! time-varying consensus runs). Every command is deterministic given its
//! configuration including the seed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Settings};

#[derive(Parser)]
#[command(
    name = "delay-consensus",
    version,
    about = "Distributed averaging under fixed and random communication delays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a fixed-delay augmented protocol (matrix CSV + index map)
    Augment(CommonArgs),
    /// Second eigenvalues, stationary distribution and the TV bound table
    Spectrum(CommonArgs),
    /// Inverse-spectral-gap sweep over the maximum delay (50-trial maxima)
    Fig2(CommonArgs),
    /// Row-stochastic random-delay run vs Push-Sum on the same protocol
    Fig3(CommonArgs),
    /// Row-stochastic consensus under random delays, with runtime audits
    Simulate(CommonArgs),
    /// Push-Sum averaging under no, fixed, or random delays
    Pushsum(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config; flags given on the command line win over its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every randomized component
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default ./out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Graph file in edge-list format ("n m" header, then "sender receiver")
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Graph generator: cycle | complete | random-connected | random-digraph
    #[arg(long = "gen")]
    generator: Option<String>,
    /// Node count for generators
    #[arg(long)]
    n: Option<usize>,
    /// Edge probability for the random generators
    #[arg(long)]
    edge_prob: Option<f64>,
    /// Protocol: maxweight | random-row-stochastic | random-column-stochastic | random-doubly-stochastic
    #[arg(long)]
    protocol: Option<String>,
    /// Protocol matrix as row-major CSV (overrides --protocol)
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Tag for --matrix: row | column | doubly
    #[arg(long)]
    matrix_kind: Option<String>,
    /// Delay model: none | fixed | random
    #[arg(long)]
    delay_model: Option<String>,
    /// Fixed delay assignment file ("sender receiver delay" lines)
    #[arg(long)]
    delays: Option<PathBuf>,
    /// Maximum delay B for the random model (also fig3's default delay bound)
    #[arg(long = "B")]
    max_delay: Option<u32>,
    /// Delay pmf over 0..=B, comma separated (default uniform)
    #[arg(long, value_delimiter = ',')]
    pmf: Option<Vec<f64>>,
    /// Algorithm for augment: row-consensus | push-sum
    #[arg(long)]
    algorithm: Option<String>,
    /// Iteration cap
    #[arg(long)]
    max_steps: Option<usize>,
    /// Convergence tolerance on the consensus spread
    #[arg(long)]
    tol: Option<f64>,
    /// B values for the fig2 sweep, comma separated (default 1..=10)
    #[arg(long, value_delimiter = ',')]
    b_values: Option<Vec<u32>>,
    /// Trials per B value (default 50)
    #[arg(long)]
    trials: Option<usize>,
    /// Initial values, comma separated (default node ids 1..=n)
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    /// Rows of the TV-bound table (default 200)
    #[arg(long)]
    tv_steps: Option<u32>,
}

/// Per-command defaults applied after config merging.
struct Defaults {
    n: usize,
    protocol: &'static str,
    tol: f64,
}

fn merge(args: &CommonArgs, defaults: Defaults) -> Result<Settings> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    Ok(Settings {
        graph: args.graph.clone().or(file.graph),
        generator: args.generator.clone().or(file.generator),
        n: args.n.or(file.n).or(Some(defaults.n)),
        edge_prob: args.edge_prob.or(file.edge_prob).unwrap_or(0.3),
        protocol: args
            .protocol
            .clone()
            .or(file.protocol)
            .or(Some(defaults.protocol.to_string())),
        matrix: args.matrix.clone().or(file.matrix),
        matrix_kind: args.matrix_kind.clone().or(file.matrix_kind),
        delay_model: args.delay_model.clone().or(file.delay_model),
        delays: args.delays.clone().or(file.delays),
        max_delay: args.max_delay.or(file.max_delay),
        pmf: args.pmf.clone().or(file.pmf),
        algorithm: args.algorithm.clone().or(file.algorithm),
        max_steps: args
            .max_steps
            .or(file.max_steps)
            .unwrap_or(delay_consensus::random_delay::DEFAULT_MAX_STEPS),
        tol: args.tol.or(file.tol).unwrap_or(defaults.tol),
        seed: args.seed.or(file.seed),
        out: args
            .out
            .clone()
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("out")),
        b_values: args.b_values.clone().or(file.b_values),
        trials: args.trials.or(file.trials),
        x0: args.x0.clone().or(file.x0),
        tv_steps: args.tv_steps.or(file.tv_steps).unwrap_or(200),
    })
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Augment(a) => commands::cmd_augment(&merge(
            a,
            Defaults {
                n: 5,
                protocol: "maxweight",
                tol: 1e-10,
            },
        )?),
        Command::Spectrum(a) => commands::cmd_spectrum(&merge(
            a,
            Defaults {
                n: 5,
                protocol: "maxweight",
                tol: 1e-10,
            },
        )?),
        Command::Fig2(a) => commands::cmd_fig2(&merge(
            a,
            Defaults {
                n: 15,
                protocol: "maxweight",
                tol: 1e-10,
            },
        )?),
        Command::Fig3(a) => commands::cmd_fig3(&merge(
            a,
            Defaults {
                n: 5,
                protocol: "random-row-stochastic",
                tol: 1e-8,
            },
        )?),
        Command::Simulate(a) => commands::cmd_simulate(&merge(
            a,
            Defaults {
                n: 5,
                protocol: "random-row-stochastic",
                tol: 1e-10,
            },
        )?),
        Command::Pushsum(a) => commands::cmd_pushsum(&merge(
            a,
            Defaults {
                n: 5,
                protocol: "random-column-stochastic",
                tol: 1e-8,
            },
        )?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
