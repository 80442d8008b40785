//! JSON run configurations. Relative paths are resolved against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::optimizer::OptimizerConfig;
use crate::surface::UvGrid;
use crate::synth::{Perturbation, Std40};

/// Inputs and tunables of `reconstruct`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Image manifest.
    pub stack: PathBuf,
    pub template: PathBuf,
    pub features: PathBuf,
    /// Ground truth to score the result against, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Sampling density of the evaluation point clouds.
    #[serde(default = "default_eval_density")]
    pub eval_density: UvGrid,
}

fn default_eval_density() -> UvGrid {
    UvGrid::new(200, 200)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Loads, resolves and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: RunConfig = io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.stack = resolve(base, &cfg.stack);
        cfg.template = resolve(base, &cfg.template);
        cfg.features = resolve(base, &cfg.features);
        cfg.truth = cfg.truth.map(|t| resolve(base, &t));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let files = [Some(&self.stack), Some(&self.template), Some(&self.features), self.truth.as_ref()];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::usage(format!("no such file: {}", p.display())));
            }
        }
        if self.eval_density.nu < 2 || self.eval_density.nv < 2 {
            return Err(Error::usage("eval_density must be at least 2x2"));
        }
        self.optimizer.validate()
    }
}

/// Named synthetic scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneKind {
    #[serde(rename = "std-40")]
    Std40,
}

/// Inputs of `synth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene: SceneKind,
    pub width: usize,
    pub height: usize,
    /// Control points per side of the ground-truth surface.
    pub grid: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Template written alongside the scene; omitted when `None`.
    pub perturbation: Option<Perturbation>,
    pub bit_depth: u8,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = Std40::default();
        Self {
            scene: SceneKind::Std40,
            width: s.width,
            height: s.height,
            grid: s.grid,
            noise_sigma: s.noise_sigma,
            seed: s.seed,
            perturbation: Some(Perturbation::default()),
            bit_depth: 16,
        }
    }
}

impl SynthConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: SynthConfig = io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::usage("scene resolution must be at least 8x8"));
        }
        if self.grid < 4 {
            return Err(Error::usage("grid must be at least 4"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::usage("noise_sigma must be non-negative"));
        }
        if !matches!(self.bit_depth, 8 | 16) {
            return Err(Error::usage(format!("bit_depth must be 8 or 16, got {}", self.bit_depth)));
        }
        if let Some(p) = self.perturbation {
            if !(p.amplitude >= 0.0) {
                return Err(Error::usage("perturbation amplitude must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn std40(&self) -> Std40 {
        Std40 {
            width: self.width,
            height: self.height,
            grid: self.grid,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}
