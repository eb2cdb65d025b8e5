//! Community oncomarkers: per-sample prognostic scores, training-median
//! split, survival validation and methylation/expression concordance.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::community::CommunityAssignment;
use crate::data::ClinicalRecord;
use crate::ebayes::PrognosticNetwork;
use crate::error::{Error, Result};
use crate::interaction::Interaction;
use crate::linalg::Matrix;
use crate::special::student_t_two_sided_p;
use crate::survival::{cox_fit, km_estimate, logrank_test, CoxFit, KmCurve, SurvivalData};

pub const MIN_CONCORDANCE_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerEdge {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerModel {
    /// Zero-based community id.
    pub community: usize,
    pub genes: Vec<usize>,
    pub edges: Vec<MarkerEdge>,
    pub threshold: Option<f64>,
    pub n_train: usize,
}

/// One model per community holding the network edges inside it.
pub fn marker_models(assignment: &CommunityAssignment, network: &PrognosticNetwork) -> Vec<MarkerModel> {
    let mut block_of = vec![usize::MAX; network.m];
    for (&node, &l) in assignment.nodes.iter().zip(&assignment.labels) {
        block_of[node] = l;
    }
    let mut models: Vec<MarkerModel> = assignment
        .blocks()
        .into_iter()
        .enumerate()
        .map(|(community, genes)| MarkerModel { community, genes, edges: Vec::new(), threshold: None, n_train: 0 })
        .collect();
    for e in &network.edges {
        let b = block_of[e.i];
        if b != usize::MAX && b == block_of[e.j] {
            models[b].edges.push(MarkerEdge { i: e.i, j: e.j, theta: e.theta });
        }
    }
    models
}

/// `Σ θ_ij ρ_ij(k)` over the model's edges; `rho(i, j)` supplies the
/// sample's interaction values.
pub fn prognostic_score(model: &MarkerModel, mut rho: impl FnMut(usize, usize) -> Option<f64>) -> Result<f64> {
    let mut s = 0.0;
    for e in &model.edges {
        let r = rho(e.i, e.j).ok_or(Error::MissingEdge(e.i, e.j))?;
        s += e.theta * r;
    }
    Ok(s)
}

/// Median; the mean of the central pair for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Stores the median of the training scores as the model threshold.
pub fn train_threshold(model: &mut MarkerModel, training_scores: &[f64]) -> Result<f64> {
    if training_scores.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "community {}: threshold needs at least two training scores",
            model.community
        )));
    }
    let t = median(training_scores).expect("non-empty");
    model.threshold = Some(t);
    model.n_train = training_scores.len();
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrognosticGroup {
    Better,
    Worse,
}

impl PrognosticGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            PrognosticGroup::Better => "better",
            PrognosticGroup::Worse => "worse",
        }
    }
}

/// Worse iff the score exceeds the training threshold; ties go to better.
pub fn classify(model: &MarkerModel, score: f64) -> Result<PrognosticGroup> {
    let t = model
        .threshold
        .ok_or_else(|| Error::InvalidInput(format!("community {} has no trained threshold", model.community)))?;
    Ok(if score > t { PrognosticGroup::Worse } else { PrognosticGroup::Better })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardSummary {
    #[serde(with = "nonfinite")]
    pub hr: f64,
    #[serde(with = "nonfinite")]
    pub ci_lo: f64,
    #[serde(with = "nonfinite")]
    pub ci_hi: f64,
    #[serde(with = "nonfinite")]
    pub p: f64,
}

impl HazardSummary {
    fn from_fit(fit: &CoxFit, i: usize) -> Self {
        let (ci_lo, ci_hi) = fit.hazard_ratio_ci(i);
        HazardSummary { hr: fit.hazard_ratio(i), ci_lo, ci_hi, p: fit.p_value(i) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSummary {
    pub term: String,
    #[serde(with = "nonfinite")]
    pub hr: f64,
    #[serde(with = "nonfinite")]
    pub ci_lo: f64,
    #[serde(with = "nonfinite")]
    pub ci_hi: f64,
    #[serde(with = "nonfinite")]
    pub p: f64,
}

/// Separated fits give infinite ratios; JSON has no literal for them, so
/// they travel as the strings `"inf"`, `"-inf"` and `"nan"`.
mod nonfinite {
    use core::fmt;

    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_str("nan")
        } else if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    struct F64Visitor;

    impl Visitor<'_> for F64Visitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(F64Visitor)
    }
}

/// Validation of one marker on one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerValidation {
    pub community: usize,
    pub n: usize,
    pub n_worse: usize,
    pub evaluable: bool,
    pub univariate: Option<HazardSummary>,
    pub univariate_converged: bool,
    pub multivariate: Vec<TermSummary>,
    pub n_multivariate: usize,
    pub logrank_p: Option<f64>,
    pub km_better: KmCurve,
    pub km_worse: KmCurve,
}

const MULTIVARIATE_TERMS: [&str; 3] = ["age", "residual_disease", "stage"];

fn clinical_term(r: &ClinicalRecord, term: &str) -> Option<f64> {
    match term {
        "age" => r.age,
        "residual_disease" => r.residual_disease,
        "stage" => r.stage,
        _ => None,
    }
}

/// Univariate Cox on the binary group, multivariate Cox on the continuous
/// score plus age, residual disease and stage over complete cases, and
/// Kaplan-Meier curves with a log-rank test for the two groups.
pub fn validate_marker(model: &MarkerModel, scores: &[f64], records: &[&ClinicalRecord]) -> Result<MarkerValidation> {
    if scores.len() != records.len() {
        return Err(Error::Dimension(format!("{} scores for {} clinical records", scores.len(), records.len())));
    }
    let n = scores.len();
    let groups: Vec<bool> =
        scores.iter().map(|&s| classify(model, s).map(|g| g == PrognosticGroup::Worse)).collect::<Result<_>>()?;
    let times: Vec<f64> = records.iter().map(|r| r.time_days).collect();
    let events: Vec<bool> = records.iter().map(|r| r.event).collect();
    let n_worse = groups.iter().filter(|&&g| g).count();
    let better_mask: Vec<bool> = groups.iter().map(|g| !g).collect();
    let km_better = km_estimate(&times, &events, &better_mask);
    let km_worse = km_estimate(&times, &events, &groups);

    let mut out = MarkerValidation {
        community: model.community,
        n,
        n_worse,
        evaluable: false,
        univariate: None,
        univariate_converged: false,
        multivariate: Vec::new(),
        n_multivariate: 0,
        logrank_p: None,
        km_better,
        km_worse,
    };
    if n_worse == 0 || n_worse == n || !events.iter().any(|&e| e) {
        return Ok(out);
    }
    out.evaluable = true;

    let x: Vec<f64> = groups.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    let uni = cox_fit(&SurvivalData::univariate(times.clone(), events.clone(), x)?)?;
    out.univariate = Some(HazardSummary::from_fit(&uni, 0));
    out.univariate_converged = uni.converged;
    out.logrank_p = Some(logrank_test(&times, &events, &groups)?.p_value);

    let complete: Vec<usize> = (0..n).filter(|&k| records[k].has_complete_covariates()).collect();
    out.n_multivariate = complete.len();
    if complete.len() >= 2 && complete.iter().any(|&k| events[k]) {
        let mut names = vec![String::from("score")];
        let mut cols = vec![complete.iter().map(|&k| scores[k]).collect::<Vec<f64>>()];
        for term in MULTIVARIATE_TERMS {
            let col: Vec<f64> =
                complete.iter().map(|&k| clinical_term(records[k], term).expect("complete case")).collect();
            if col.iter().any(|&v| v != col[0]) {
                names.push(String::from(term));
                cols.push(col);
            }
        }
        if cols[0].iter().any(|&v| v != cols[0][0]) {
            let m = Matrix::from_fn(complete.len(), cols.len(), |i, c| cols[c][i]);
            let data = SurvivalData::new(
                complete.iter().map(|&k| times[k]).collect(),
                complete.iter().map(|&k| events[k]).collect(),
                m,
                names.clone(),
            )?;
            let fit = cox_fit(&data)?;
            out.multivariate = names
                .into_iter()
                .enumerate()
                .map(|(i, term)| {
                    let h = HazardSummary::from_fit(&fit, i);
                    TermSummary { term, hr: h.hr, ci_lo: h.ci_lo, ci_hi: h.ci_hi, p: h.p }
                })
                .collect();
        }
    }
    Ok(out)
}

/// Healthy mean and standard deviation (1/n normalizer) of one gene's
/// expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpressionStats {
    pub mean: f64,
    pub sd: f64,
}

impl ExpressionStats {
    pub fn from_healthy(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InsufficientReference(format!(
                "{} healthy expression values",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(ExpressionStats { mean, sd: sqrt(var) })
    }
}

/// Product of the two healthy-standardized expression deviations.
pub fn expression_interaction(xe: f64, ye: f64, sx: &ExpressionStats, sy: &ExpressionStats) -> Interaction {
    if !(sx.sd > 0.0 && sy.sd > 0.0) {
        return Interaction { rho: 0.0, degenerate: true };
    }
    Interaction { rho: (xe - sx.mean) / sx.sd * ((ye - sy.mean) / sy.sd), degenerate: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceEntry {
    pub gene_i: usize,
    pub gene_j: usize,
    pub n: usize,
    pub evaluable: bool,
    pub pearson_r: f64,
    pub pearson_p: f64,
    pub spearman_r: f64,
    pub spearman_p: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Mid-ranks (ties share their average rank), starting at 1.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut pos = 0;
    while pos < idx.len() {
        let mut end = pos + 1;
        while end < idx.len() && x[idx[end]] == x[idx[pos]] {
            end += 1;
        }
        let avg = 0.5 * ((pos + 1) + end) as f64;
        for &i in &idx[pos..end] {
            r[i] = avg;
        }
        pos = end;
    }
    r
}

fn correlation_p(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * sqrt(df / (1.0 - r * r));
    student_t_two_sided_p(t, df)
}

/// Pearson (t-test, `n - 2` df) and Spearman correlation between the
/// methylation and expression interaction series of one edge.
pub fn concordance_test(gene_i: usize, gene_j: usize, rho: &[f64], rho_expr: &[f64]) -> Result<ConcordanceEntry> {
    if rho.len() != rho_expr.len() {
        return Err(Error::Dimension(format!("series of length {} and {}", rho.len(), rho_expr.len())));
    }
    let n = rho.len();
    let mut entry = ConcordanceEntry {
        gene_i,
        gene_j,
        n,
        evaluable: false,
        pearson_r: f64::NAN,
        pearson_p: f64::NAN,
        spearman_r: f64::NAN,
        spearman_p: f64::NAN,
    };
    if n < MIN_CONCORDANCE_SAMPLES {
        return Ok(entry);
    }
    let Some(r) = pearson(rho, rho_expr) else {
        return Ok(entry);
    };
    let rs = pearson(&ranks(rho), &ranks(rho_expr)).unwrap_or(0.0);
    entry.evaluable = true;
    entry.pearson_r = r;
    entry.pearson_p = correlation_p(r, n);
    entry.spearman_r = rs;
    entry.spearman_p = correlation_p(rs, n);
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(edges: Vec<MarkerEdge>) -> MarkerModel {
        MarkerModel { community: 0, genes: vec![0, 1, 2], edges, threshold: None, n_train: 0 }
    }

    #[test]
    fn score_arithmetic() {
        let m = model(vec![]);
        assert_eq!(prognostic_score(&m, |_, _| Some(1.0)).unwrap(), 0.0);
        let m = model(vec![MarkerEdge { i: 0, j: 1, theta: 2.0 }]);
        assert_eq!(prognostic_score(&m, |_, _| Some(0.5)).unwrap(), 1.0);
        assert_eq!(prognostic_score(&m, |_, _| None), Err(Error::MissingEdge(0, 1)));
    }

    #[test]
    fn median_threshold_and_boundary() {
        let mut m = model(vec![]);
        assert_eq!(train_threshold(&mut m, &[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(train_threshold(&mut m, &[1.0, 4.0, 2.0, 3.0]).unwrap(), 2.5);
        assert_eq!(classify(&m, 2.5).unwrap(), PrognosticGroup::Better);
        assert_eq!(classify(&m, 2.5 + 1e-12).unwrap(), PrognosticGroup::Worse);
        assert!(train_threshold(&mut m, &[1.0]).is_err());
        assert!(classify(&model(vec![]), 0.0).is_err());
    }

    #[test]
    fn expression_interaction_cases() {
        let s = ExpressionStats { mean: 2.0, sd: 0.5 };
        assert_eq!(expression_interaction(2.0, 7.0, &s, &s).rho, 0.0);
        assert_eq!(expression_interaction(2.5, 2.5, &s, &s).rho, 1.0);
        let flat = ExpressionStats { mean: 1.0, sd: 0.0 };
        assert!(expression_interaction(2.5, 2.5, &s, &flat).degenerate);
        let st = ExpressionStats::from_healthy(&[1.0, 3.0]).unwrap();
        assert_eq!((st.mean, st.sd), (2.0, 1.0));
    }

    #[test]
    fn concordance_perfect_and_degenerate() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let c = concordance_test(0, 1, &x, &y).unwrap();
        assert!((c.pearson_r - 1.0).abs() < 1e-12 && c.pearson_p < 1e-12);
        assert!((c.spearman_r - 1.0).abs() < 1e-12);
        assert!(!concordance_test(0, 1, &x, &[1.0; 12]).unwrap().evaluable);
        assert!(!concordance_test(0, 1, &x[..5], &y[..5]).unwrap().evaluable);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
