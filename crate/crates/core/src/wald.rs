//! Per-pair Cox fits: each pair's interaction series is the predictor of
//! interest, adjusted for the clinical covariates shared by every pair.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::ClinicalRecord;
use crate::ebayes::WaldField;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pairs::pair_count;
use crate::survival::{cox_fit, SurvivalData};

/// Clinical covariate names in design-matrix order.
pub const COVARIATE_NAMES: [&str; 3] = ["age", "residual_disease", "stage"];

/// Fixed part of the per-pair design: complete-case rows, their survival
/// outcome and the non-constant clinical covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDesign {
    /// Cohort positions retained (complete covariates).
    pub rows: Vec<usize>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    /// `rows.len() × covariate_names.len()`.
    pub covariates: Matrix,
    pub covariate_names: Vec<String>,
}

fn covariate_value(r: &ClinicalRecord, name: &str) -> Option<f64> {
    match name {
        "age" => r.age,
        "residual_disease" => r.residual_disease,
        "stage" => r.stage,
        _ => None,
    }
}

impl PairDesign {
    /// Builds the design over a cohort's clinical records. With `adjust`
    /// false the covariates are omitted and every sample is kept.
    /// Covariates constant over the retained rows are dropped since they are
    /// not estimable.
    pub fn new(records: &[&ClinicalRecord], adjust: bool) -> Result<Self> {
        let rows: Vec<usize> = (0..records.len())
            .filter(|&k| !adjust || records[k].has_complete_covariates())
            .collect();
        if rows.len() < 2 {
            return Err(Error::InvalidInput("fewer than two samples with complete covariates".into()));
        }
        let mut names = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        if adjust {
            for name in COVARIATE_NAMES {
                let col: Vec<f64> = rows
                    .iter()
                    .map(|&k| covariate_value(records[k], name).expect("complete case"))
                    .collect();
                if col.iter().any(|&v| v != col[0]) {
                    names.push(String::from(name));
                    columns.push(col);
                }
            }
        }
        let covariates = Matrix::from_fn(rows.len(), columns.len(), |i, c| columns[c][i]);
        Ok(PairDesign {
            times: rows.iter().map(|&k| records[k].time_days).collect(),
            events: rows.iter().map(|&k| records[k].event).collect(),
            rows,
            covariates,
            covariate_names: names,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Survival data with `predictor` (indexed by cohort position) in the
    /// first column.
    pub fn with_predictor(&self, name: &str, predictor: &[f64]) -> Result<SurvivalData> {
        let p = self.covariate_names.len() + 1;
        let x = Matrix::from_fn(self.rows.len(), p, |i, c| {
            if c == 0 {
                predictor[self.rows[i]]
            } else {
                self.covariates[(i, c - 1)]
            }
        });
        let mut names = Vec::with_capacity(p);
        names.push(String::from(name));
        names.extend(self.covariate_names.iter().cloned());
        SurvivalData::new(self.times.clone(), self.events.clone(), x, names)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairWald {
    pub z: f64,
    pub theta: f64,
    pub converged: bool,
}

impl PairWald {
    const FLAGGED: PairWald = PairWald { z: 0.0, theta: 0.0, converged: false };
}

/// Wald statistic and log hazard ratio of one interaction series. Constant
/// series, separation and failed fits come back flagged with `z = theta = 0`.
pub fn pair_wald(design: &PairDesign, series: &[f64]) -> PairWald {
    let first = series[design.rows[0]];
    if design.rows.iter().all(|&k| series[k] == first) {
        return PairWald::FLAGGED;
    }
    let Ok(data) = design.with_predictor("rho", series) else {
        return PairWald::FLAGGED;
    };
    match cox_fit(&data) {
        Ok(fit) if fit.converged && fit.z[0].is_finite() => {
            PairWald { z: fit.z[0], theta: fit.beta[0], converged: true }
        }
        _ => PairWald::FLAGGED,
    }
}

/// Assembles a field from per-pair results in pair-index order.
pub fn field_from_pairs(m: usize, pairs: &[PairWald]) -> Result<WaldField> {
    if pairs.len() != pair_count(m) {
        return Err(Error::Dimension(alloc::format!(
            "{} pair results for {m} genes",
            pairs.len()
        )));
    }
    WaldField::new(
        m,
        pairs.iter().map(|p| p.z).collect(),
        pairs.iter().map(|p| p.theta).collect(),
        pairs.iter().map(|p| p.converged).collect(),
    )
}
