//! Writes a synthetic cohort as pipeline-ready input files.

use std::path::{Path, PathBuf};

use methnet_core::data::Cohort;
use methnet_core::synth::{generate, SynthSpec};

use crate::config::{MethylationInputs, RunConfig};
use crate::error::{Error, Result};
use crate::io::{write_clinical, write_expression, write_json, write_methylation};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn load_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

/// Generates the cohort into `dir` and returns the path of a run config
/// pointing at it (relative paths, output under `dir/out`).
pub fn simulate(spec: &SynthSpec, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cohort = generate(spec)?;
    let d = &cohort.methylation;
    for (cohort_kind, file) in [
        (Cohort::Healthy, "methylation_healthy.csv"),
        (Cohort::TumourTrain, "methylation_train.csv"),
        (Cohort::TumourTest, "methylation_test.csv"),
    ] {
        write_methylation(&dir.join(file), d, Some(&d.samples_in(cohort_kind)))?;
    }
    write_clinical(&dir.join("clinical.csv"), cohort.clinical.records())?;
    let mut cfg = RunConfig::new(
        MethylationInputs {
            healthy: "methylation_healthy.csv".into(),
            train: "methylation_train.csv".into(),
            test: "methylation_test.csv".into(),
        },
        "clinical.csv".into(),
        "out".into(),
    );
    if let Some(e) = &cohort.expression {
        write_expression(&dir.join("expression.csv"), e)?;
        cfg.expression = Some("expression.csv".into());
    }
    cfg.seed = spec.seed;
    write_json(&dir.join(GROUND_TRUTH_FILE), &cohort.truth)?;
    let path = dir.join(CONFIG_FILE);
    write_json(&path, &cfg)?;
    Ok(path)
}
