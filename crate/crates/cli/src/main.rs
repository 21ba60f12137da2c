use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser, Debug)]
#[command(name = "lpnd", version, about = "Littlewood-Paley constructions and T(1) diagnostics for discrete measures")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for reports and CSV tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// RNG seed for random test functions and sampled checks.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

/// How to obtain the measure.
#[derive(Args, Debug, Clone, Default)]
pub struct MeasureArgs {
    /// Measure file (JSON, or CSV with columns x1..xd,w).
    #[arg(long)]
    pub measure: Option<PathBuf>,
    /// Built-in example instead of a file.
    #[arg(long, conflicts_with = "measure")]
    pub example: Option<String>,
    /// Atom budget for --example.
    #[arg(long, default_value_t = 256)]
    pub atoms: usize,
    /// Growth exponent for CSV input.
    #[arg(long)]
    pub n: Option<f64>,
    /// Resolution for CSV input; defaults to the smallest atom spacing.
    #[arg(long)]
    pub resolution: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a reference measure to a JSON file.
    GenMeasure {
        /// uniform-interval, uniform-square, cantor, comb or lipschitz-graph.
        kind: String,
        #[arg(long)]
        atoms: Option<usize>,
        /// Comb segments.
        #[arg(long)]
        levels: Option<u32>,
        /// Cantor construction depth.
        #[arg(long)]
        level: Option<u32>,
        /// Destination file; defaults to OUT/KIND.json.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Measure the growth constant and the worst doubling ratio.
    CheckGrowth(MeasureArgs),
    /// Tune constants and write the generation lattice.
    BuildLattice(MeasureArgs),
    /// Build the approximation of identity and check its identities.
    BuildAoi(MeasureArgs),
    /// Run verification suites; exit code 0 iff every report passes.
    Verify {
        #[command(flatten)]
        measure: MeasureArgs,
        /// delta, lattice, aoi, lp, carleson, t1, paraproduct or all.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Kernel for the t1 suite.
        #[arg(long)]
        kernel: Option<String>,
        /// JSON kernel description, used with `--kernel file`.
        #[arg(long)]
        kernel_file: Option<PathBuf>,
    },
    /// Decompose a test function and tabulate its energies.
    LpAnalyze {
        #[command(flatten)]
        measure: MeasureArgs,
        /// constant, random:SEED, indicator:ATOM:SIDE or log-distance.
        #[arg(long, default_value = "random:7")]
        f: String,
    },
    /// Run the T(1) battery for one kernel.
    TOne {
        #[command(flatten)]
        measure: MeasureArgs,
        /// cauchy-re, cauchy-im, riesz, riesz-1, singular, test-bounded or file.
        #[arg(long, default_value = "cauchy-re")]
        kernel: String,
        #[arg(long)]
        kernel_file: Option<PathBuf>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Exponents for the indicator test; repeatable.
        #[arg(long)]
        p: Vec<f64>,
        /// Comma-separated truncation radii.
        #[arg(long, value_delimiter = ',')]
        eps_grid: Vec<f64>,
        /// Write the battery report here instead of OUT/t1_battery.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
