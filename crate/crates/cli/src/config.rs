//! Run configuration from command-line flags and an optional JSON file.
//!
//! A flag given on the command line overrides the same key in the file; keys
//! missing from both take the library defaults.

use std::path::{Path, PathBuf};

use camforge_core::{ClsProfile, FslParams, GatingInput, PosteriorKind, RefineConfig};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    Raw,
    Binomial,
    Maxnorm,
}

impl From<Gating> for GatingInput {
    fn from(g: Gating) -> Self {
        match g {
            Gating::Raw => GatingInput::RawScores,
            Gating::Binomial => GatingInput::Binomial,
            Gating::Maxnorm => GatingInput::MaxNorm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Posterior {
    Binomial,
    Multinomial,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON file with any of the keys below (underscores for dashes).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Weight of the importance sampling term in the classification loss.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Samples drawn per class.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Dissimilarity threshold of the feature similarity loss.
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    /// Spatial scale of the feature similarity loss, in pixels.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Pair window radius in pixels.
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub gating: Option<Gating>,
    #[arg(long = "bg-threshold", global = true)]
    pub bg_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    /// Gradient descent step size.
    #[arg(long, global = true)]
    pub step: Option<f64>,
    /// Enumerate every pixel pair.
    #[arg(long = "exact-pairs", global = true)]
    pub exact_pairs: bool,
    /// Multiplier of the feature similarity term in the reported gradient.
    #[arg(long = "fsl-weight", global = true)]
    pub fsl_weight: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub posterior: Option<Posterior>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    lambda: Option<f64>,
    samples: Option<usize>,
    mu: Option<f64>,
    sigma: Option<f64>,
    window: Option<usize>,
    gating: Option<Gating>,
    bg_threshold: Option<f64>,
    seed: Option<u64>,
    iterations: Option<usize>,
    step: Option<f64>,
    exact_pairs: Option<bool>,
    fsl_weight: Option<f64>,
    posterior: Option<Posterior>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub lambda: f64,
    pub samples: usize,
    pub seed: u64,
    pub bg_threshold: f64,
    pub fsl_weight: f64,
    pub posterior: PosteriorKind,
    pub refine: RefineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let profile = ClsProfile::default();
        RunConfig {
            lambda: profile.lambda,
            samples: profile.num_samples,
            seed: 0,
            bg_threshold: 0.3,
            fsl_weight: 1.0,
            posterior: profile.kind,
            refine: RefineConfig::default(),
        }
    }
}

fn read_config_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| {
        // serde_json reports line and column; convert to a byte offset
        let offset = text
            .split_inclusive(|&b| b == b'\n')
            .take(e.line().saturating_sub(1))
            .map(<[u8]>::len)
            .sum::<usize>()
            + e.column().saturating_sub(1);
        CliError::Format {
            path: path.to_path_buf(),
            offset,
            message: e.to_string(),
        }
    })
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => read_config_file(p)?,
            None => ConfigFile::default(),
        };
        let d = RunConfig::default();
        let fd = FslParams::default();
        let posterior = match args.posterior.or(file.posterior) {
            None => d.posterior,
            Some(Posterior::Binomial) => PosteriorKind::Binomial,
            Some(Posterior::Multinomial) => PosteriorKind::Multinomial,
        };
        let cfg = RunConfig {
            lambda: args.lambda.or(file.lambda).unwrap_or(d.lambda),
            samples: args.samples.or(file.samples).unwrap_or(d.samples),
            seed: args.seed.or(file.seed).unwrap_or(d.seed),
            bg_threshold: args.bg_threshold.or(file.bg_threshold).unwrap_or(d.bg_threshold),
            fsl_weight: args.fsl_weight.or(file.fsl_weight).unwrap_or(d.fsl_weight),
            posterior,
            refine: RefineConfig {
                step_size: args.step.or(file.step).unwrap_or(d.refine.step_size),
                iterations: args.iterations.or(file.iterations).unwrap_or(d.refine.iterations),
                params: FslParams {
                    mu: args.mu.or(file.mu).unwrap_or(fd.mu),
                    sigma: args.sigma.or(file.sigma).unwrap_or(fd.sigma),
                    window_radius: args.window.or(file.window),
                    exact_pairs: args.exact_pairs || file.exact_pairs.unwrap_or(false),
                    gating_input: args.gating.or(file.gating).map_or(fd.gating_input, Into::into),
                    class_mask: None,
                },
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CliError::Usage(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.samples < 1 {
            return Err(CliError::Usage("samples must be at least 1".into()));
        }
        if !(self.bg_threshold > 0.0 && self.bg_threshold < 1.0) {
            return Err(CliError::Usage(format!(
                "bg-threshold must lie in (0, 1), got {}",
                self.bg_threshold
            )));
        }
        if !self.fsl_weight.is_finite() {
            return Err(CliError::Usage("fsl-weight must be finite".into()));
        }
        self.refine
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}
