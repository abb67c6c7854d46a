//! Command parameters merged from an optional JSON file and the command line.
//! Flags win over the file; the file wins over the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;

/// Keys accepted in a `--config` file. Every key is optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub cells: Option<usize>,
    pub bandwidth: Option<f64>,
    pub lambda: Option<f64>,
    pub r0: Option<usize>,
    pub var_explained: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub m_list: Option<Vec<usize>>,
    pub bandwidths: Option<Vec<f64>>,
    pub groups: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// JSON file with default parameter values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Grid flags for commands reading continuous observations.
#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Lower end of the support; defaults to the smallest observation.
    #[arg(long, allow_negative_numbers = true)]
    pub lower: Option<f64>,
    /// Upper end of the support; defaults to the largest observation.
    #[arg(long, allow_negative_numbers = true)]
    pub upper: Option<f64>,
    /// Number of grid cells [default: 200].
    #[arg(long)]
    pub cells: Option<usize>,
}

/// Monte Carlo EM flags.
#[derive(Debug, Clone, Args)]
pub struct McemArgs {
    /// Proposal variance scale.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Draws per group are r0 times the iteration number.
    #[arg(long)]
    pub r0: Option<usize>,
    /// Fraction of variance kept when truncating the covariance.
    #[arg(long)]
    pub var_explained: Option<f64>,
    /// Convergence threshold on the change of mean and covariance.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Seed used when neither a flag nor the config file sets one.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Defaults differing between commands.
pub struct McemDefaults {
    pub r0: usize,
    pub var_explained: f64,
}

impl McemArgs {
    pub fn resolve(&self, file: &FileConfig, defaults: McemDefaults) -> ldpca_core::McemConfig {
        let base = ldpca_core::McemConfig::default();
        ldpca_core::McemConfig {
            epsilon: self.epsilon.or(file.epsilon).unwrap_or(base.epsilon),
            lambda: self.lambda.or(file.lambda).unwrap_or(base.lambda),
            mc_growth: self.r0.or(file.r0).unwrap_or(defaults.r0),
            var_explained: self
                .var_explained
                .or(file.var_explained)
                .unwrap_or(defaults.var_explained),
            max_iterations: self.max_iter.or(file.max_iter).unwrap_or(base.max_iterations),
            seed: self.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            ..base
        }
    }
}
