//! JSON run configuration. Unknown keys anywhere are rejected.
//!
//! ```json
//! {
//!   "paths": {
//!     "dpm": "dpm.asc",
//!     "prior_ls": "prior_ls.asc",
//!     "prior_lf": "prior_lf.asc",
//!     "footprint": "footprint.asc",
//!     "truth_csv": ["truth_ls.csv", "truth_lf.csv"],
//!     "out_dir": "out"
//!   },
//!   "hyper": { "rho": 0.0001, "batch_size": 512 },
//!   "weights": { "w_ls_y": 1.0 },
//!   "flags": { "prune": true }
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use groundfail_core::{HyperParams, WeightSet};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub hyper: HyperParams,
    /// Initial weights for `infer`, true weights for `simulate`.
    #[serde(default)]
    pub weights: Option<WeightSet>,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub evaluate: EvalOptions,
    #[serde(default)]
    pub output: OutputOptions,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Required by `infer`; `simulate` writes its own.
    #[serde(default)]
    pub dpm: Option<PathBuf>,
    pub prior_ls: PathBuf,
    pub prior_lf: PathBuf,
    #[serde(default)]
    pub footprint: Option<PathBuf>,
    #[serde(default)]
    pub truth_csv: Option<TruthPaths>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TruthPaths {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl TruthPaths {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            TruthPaths::One(p) => vec![p.as_path()],
            TruthPaths::Many(ps) => ps.iter().map(PathBuf::as_path).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flags {
    /// Skip min-max rescaling of the DPM; only clamp to `[delta, 1]`.
    pub assume_normalized: bool,
    pub prune: bool,
    /// Overrides `hyper.deterministic`.
    pub deterministic: bool,
    /// Use the truncated DPM density in the reported log-likelihood.
    pub truncated_density: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            assume_normalized: false,
            prune: false,
            deterministic: true,
            truncated_density: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Applied to normalized scores.
    pub threshold: f64,
    /// Evenly spaced ROC thresholds; 0 uses every distinct score.
    pub roc_thresholds: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            roc_thresholds: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputOptions {
    /// Digits after the point in written rasters.
    pub decimals: usize,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions { decimals: 10 }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.hyper.deterministic = cfg.flags.deterministic;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate().map_err(|e| CliError::Config(format!("hyper: {e}")))?;
        if let Some(w) = &self.weights {
            w.validate().map_err(|e| CliError::Config(format!("weights: {e}")))?;
        }
        let t = self.evaluate.threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Config(format!("evaluate.threshold must lie in [0, 1], got {t}")));
        }
        if self.output.decimals > 17 {
            return Err(CliError::Config("output.decimals must be at most 17".into()));
        }
        Ok(())
    }

    pub fn weights_or_default(&self) -> WeightSet {
        self.weights.unwrap_or_default()
    }

    pub fn dpm_path(&self) -> Result<&Path> {
        self.paths
            .dpm
            .as_deref()
            .ok_or_else(|| CliError::Config("missing field `paths.dpm`".into()))
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.prior_ls, &mut self.prior_lf, &mut self.out_dir] {
            join(p);
        }
        for p in [&mut self.dpm, &mut self.footprint].into_iter().flatten() {
            join(p);
        }
        match &mut self.truth_csv {
            Some(TruthPaths::One(p)) => join(p),
            Some(TruthPaths::Many(ps)) => ps.iter_mut().for_each(join),
            None => {}
        }
    }
}
