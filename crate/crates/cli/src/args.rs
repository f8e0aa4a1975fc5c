use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gamma-model", version, about = "Tabular gamma-model experiments")]
pub struct Cli {
    /// RNG seed; overrides the `seed` config key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// `key=value` configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    pub out: PathBuf,

    /// Extra configuration entry; applied after the config file.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact occupancy, successor representation and value tables.
    Oracle,
    /// Train a gamma-model by expected or sampled TD.
    Train {
        /// Transition CSV (`s,a,r,s_next`); collected from the env when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Rollout steps needed to cover a fraction of the target occupancy mass.
    SweepHorizon,
    /// Value map from a model file next to the policy-evaluation oracle.
    ValueMap {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Actor-critic learning curves for each estimator and seed.
    Control,
    /// Collect a transition dataset.
    Collect,
    /// Repeat the run recorded in a manifest.
    Rerun { manifest: PathBuf },
}
