//! Run configuration, read from JSON. Relative input paths resolve against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethylationInputs {
    pub healthy: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
}

fn default_a() -> f64 {
    methnet_core::ebayes::DEFAULT_LAPLACE_SCALE
}
fn default_c() -> f64 {
    methnet_core::community::DEFAULT_BANDWIDTH_MULTIPLIER
}
fn default_chunk() -> usize {
    1_000_000
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_knn() -> usize {
    methnet_core::data::DEFAULT_KNN_K
}
fn default_coverage() -> f64 {
    methnet_core::data::DEFAULT_MIN_COVERAGE
}
fn default_detection() -> f64 {
    methnet_core::data::DEFAULT_MAX_DETECTION_P
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub methylation: MethylationInputs,
    pub clinical: PathBuf,
    #[serde(default)]
    pub expression: Option<PathBuf>,
    #[serde(default)]
    pub detection_p: Option<PathBuf>,
    #[serde(default = "default_a")]
    pub laplace_scale: f64,
    #[serde(default = "default_c")]
    pub bandwidth_multiplier: f64,
    #[serde(default)]
    pub k_override: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_knn")]
    pub knn_k: usize,
    #[serde(default = "default_coverage")]
    pub min_coverage: f64,
    #[serde(default = "default_detection")]
    pub max_detection_p: f64,
    /// Adjust each per-pair Cox fit for age, residual disease and stage.
    #[serde(default = "default_true")]
    pub adjust_covariates: bool,
}

impl RunConfig {
    /// Config with default parameters over the given inputs.
    pub fn new(methylation: MethylationInputs, clinical: PathBuf, output_dir: PathBuf) -> Self {
        RunConfig {
            methylation,
            clinical,
            expression: None,
            detection_p: None,
            laplace_scale: default_a(),
            bandwidth_multiplier: default_c(),
            k_override: None,
            seed: 0,
            workers: None,
            chunk_size: default_chunk(),
            output_dir,
            knn_k: default_knn(),
            min_coverage: default_coverage(),
            max_detection_p: default_detection(),
            adjust_covariates: true,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.methylation.healthy);
        fix(&mut self.methylation.train);
        fix(&mut self.methylation.test);
        fix(&mut self.clinical);
        if let Some(p) = self.expression.as_mut() {
            fix(p);
        }
        if let Some(p) = self.detection_p.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.laplace_scale.is_finite() && self.laplace_scale > 0.0) {
            return bad("laplace_scale must be positive");
        }
        if !(self.bandwidth_multiplier.is_finite() && self.bandwidth_multiplier > 0.0) {
            return bad("bandwidth_multiplier must be positive");
        }
        if self.k_override == Some(0) {
            return bad("k_override must be at least 1");
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be at least 1");
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1");
        }
        if !(self.min_coverage > 0.0 && self.min_coverage <= 1.0) {
            return bad("min_coverage must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.max_detection_p) {
            return bad("max_detection_p must lie in [0, 1]");
        }
        Ok(())
    }

    /// Inputs by role, for hashing and existence checks.
    pub fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut v: Vec<(&'static str, &Path)> = vec![
            ("methylation_healthy", &self.methylation.healthy),
            ("methylation_train", &self.methylation.train),
            ("methylation_test", &self.methylation.test),
            ("clinical", &self.clinical),
        ];
        if let Some(p) = &self.expression {
            v.push(("expression", p));
        }
        if let Some(p) = &self.detection_p {
            v.push(("detection_p", p));
        }
        v
    }
}
