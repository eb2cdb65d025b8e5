//! Methylation, clinical and expression tables: validation, probe
//! filtering, KNN imputation and cohort alignment.
//!
//! Missing beta values are stored as `NaN`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default imputation neighbourhood size.
pub const DEFAULT_KNN_K: usize = 5;
pub const DEFAULT_MIN_COVERAGE: f64 = 0.95;
pub const DEFAULT_MAX_DETECTION_P: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Healthy,
    TumourTrain,
    TumourTest,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Healthy => "healthy",
            Cohort::TumourTrain => "tumour_train",
            Cohort::TumourTest => "tumour_test",
        }
    }

    pub fn parse(s: &str) -> Option<Cohort> {
        match s {
            "healthy" => Some(Cohort::Healthy),
            "tumour_train" => Some(Cohort::TumourTrain),
            "tumour_test" => Some(Cohort::TumourTest),
            _ => None,
        }
    }

    pub fn is_tumour(self) -> bool {
        !matches!(self, Cohort::Healthy)
    }
}

/// One probe (locus) row as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub probe_id: String,
    pub gene: String,
    pub values: Vec<f64>,
}

/// All loci of one gene; `values` is `probes.len() × n_samples`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneBlock {
    pub gene: String,
    pub probes: Vec<String>,
    pub values: Vec<f64>,
}

impl GeneBlock {
    pub fn n_loci(&self) -> usize {
        self.probes.len()
    }

    pub fn locus(&self, l: usize, n_samples: usize) -> &[f64] {
        &self.values[l * n_samples..(l + 1) * n_samples]
    }

    /// Profile of one sample across the gene's loci.
    pub fn profile(&self, sample: usize, n_samples: usize) -> Vec<f64> {
        (0..self.n_loci()).map(|l| self.values[l * n_samples + sample]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethylationDataset {
    genes: Vec<GeneBlock>,
    sample_ids: Vec<String>,
    cohorts: Vec<Cohort>,
}

fn check_beta(v: f64, probe: &str, sample: &str) -> Result<()> {
    if v.is_nan() || (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "beta value {v} outside [0,1] at probe {probe}, sample {sample}"
        )))
    }
}

impl MethylationDataset {
    pub fn new(genes: Vec<GeneBlock>, sample_ids: Vec<String>, cohorts: Vec<Cohort>) -> Result<Self> {
        if cohorts.len() != sample_ids.len() {
            return Err(Error::Dimension(format!(
                "{} cohort labels for {} samples",
                cohorts.len(),
                sample_ids.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for s in &sample_ids {
            if !seen.insert(s.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id {s}")));
            }
        }
        let n = sample_ids.len();
        let mut gene_names = BTreeSet::new();
        for g in &genes {
            if !gene_names.insert(g.gene.as_str()) {
                return Err(Error::Validation(format!("gene {} appears in two blocks", g.gene)));
            }
            if g.probes.is_empty() {
                return Err(Error::Validation(format!("gene {} has no loci", g.gene)));
            }
            if g.values.len() != g.probes.len() * n {
                return Err(Error::Dimension(format!("gene {} value block has wrong size", g.gene)));
            }
            for (l, probe) in g.probes.iter().enumerate() {
                for (s, &v) in g.locus(l, n).iter().enumerate() {
                    check_beta(v, probe, &sample_ids[s])?;
                }
            }
        }
        Ok(MethylationDataset { genes, sample_ids, cohorts })
    }

    /// Groups probe rows by gene, keeping genes in first-appearance order and
    /// loci in row order.
    pub fn from_probe_rows(rows: Vec<ProbeRow>, sample_ids: Vec<String>, cohorts: Vec<Cohort>) -> Result<Self> {
        let n = sample_ids.len();
        let mut order: Vec<String> = Vec::new();
        let mut blocks: BTreeMap<String, GeneBlock> = BTreeMap::new();
        let mut probe_ids = BTreeSet::new();
        for row in rows {
            if row.values.len() != n {
                return Err(Error::Dimension(format!(
                    "probe {} has {} values for {} samples",
                    row.probe_id,
                    row.values.len(),
                    n
                )));
            }
            if !probe_ids.insert(row.probe_id.clone()) {
                return Err(Error::Validation(format!("duplicate probe id {}", row.probe_id)));
            }
            let block = blocks.entry(row.gene.clone()).or_insert_with(|| {
                order.push(row.gene.clone());
                GeneBlock { gene: row.gene.clone(), probes: Vec::new(), values: Vec::new() }
            });
            block.probes.push(row.probe_id);
            block.values.extend_from_slice(&row.values);
        }
        let genes = order.into_iter().map(|g| blocks.remove(&g).expect("block exists")).collect();
        Self::new(genes, sample_ids, cohorts)
    }

    pub fn empty() -> Self {
        MethylationDataset { genes: Vec::new(), sample_ids: Vec::new(), cohorts: Vec::new() }
    }

    pub fn genes(&self) -> &[GeneBlock] {
        &self.genes
    }

    pub fn gene_names(&self) -> Vec<&str> {
        self.genes.iter().map(|g| g.gene.as_str()).collect()
    }

    pub fn gene_index(&self, gene: &str) -> Option<usize> {
        self.genes.iter().position(|g| g.gene == gene)
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn cohorts(&self) -> &[Cohort] {
        &self.cohorts
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn n_probes(&self) -> usize {
        self.genes.iter().map(|g| g.n_loci()).sum()
    }

    pub fn samples_in(&self, cohort: Cohort) -> Vec<usize> {
        (0..self.n_samples()).filter(|&s| self.cohorts[s] == cohort).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.genes.iter().any(|g| g.values.iter().any(|v| v.is_nan()))
    }

    /// Probe rows in dataset order.
    pub fn probe_rows(&self) -> Vec<ProbeRow> {
        let n = self.n_samples();
        let mut out = Vec::with_capacity(self.n_probes());
        for g in &self.genes {
            for (l, p) in g.probes.iter().enumerate() {
                out.push(ProbeRow { probe_id: p.clone(), gene: g.gene.clone(), values: g.locus(l, n).to_vec() });
            }
        }
        out
    }

    /// Restriction to the given samples, in the given order.
    pub fn select_samples(&self, samples: &[usize]) -> MethylationDataset {
        let n = self.n_samples();
        let genes = self
            .genes
            .iter()
            .map(|g| {
                let mut values = Vec::with_capacity(g.n_loci() * samples.len());
                for l in 0..g.n_loci() {
                    let row = g.locus(l, n);
                    values.extend(samples.iter().map(|&s| row[s]));
                }
                GeneBlock { gene: g.gene.clone(), probes: g.probes.clone(), values }
            })
            .collect();
        MethylationDataset {
            genes,
            sample_ids: samples.iter().map(|&s| self.sample_ids[s].clone()).collect(),
            cohorts: samples.iter().map(|&s| self.cohorts[s]).collect(),
        }
    }

    /// Sample-wise union of two datasets. Probes are matched by id; a probe
    /// absent from one side is missing for that side's samples.
    pub fn concat(&self, other: &MethylationDataset) -> Result<MethylationDataset> {
        let mine: BTreeSet<&str> = self.sample_ids.iter().map(|s| s.as_str()).collect();
        if let Some(dup) = other.sample_ids.iter().find(|s| mine.contains(s.as_str())) {
            return Err(Error::Validation(format!("sample {dup} present in both datasets")));
        }
        let (na, nb) = (self.n_samples(), other.n_samples());
        let mut rows = self.probe_rows();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for (i, r) in rows.iter_mut().enumerate() {
            index.insert(r.probe_id.clone(), i);
            r.values.resize(na + nb, f64::NAN);
        }
        for r in other.probe_rows() {
            match index.get(&r.probe_id) {
                Some(&i) => {
                    if rows[i].gene != r.gene {
                        return Err(Error::Validation(format!(
                            "probe {} annotated to {} and {}",
                            r.probe_id, rows[i].gene, r.gene
                        )));
                    }
                    rows[i].values[na..].copy_from_slice(&r.values);
                }
                None => {
                    let mut values = vec![f64::NAN; na];
                    values.extend_from_slice(&r.values);
                    index.insert(r.probe_id.clone(), rows.len());
                    rows.push(ProbeRow { probe_id: r.probe_id, gene: r.gene, values });
                }
            }
        }
        let mut ids = self.sample_ids.clone();
        ids.extend(other.sample_ids.iter().cloned());
        let mut cohorts = self.cohorts.clone();
        cohorts.extend(other.cohorts.iter().copied());
        Self::from_probe_rows(rows, ids, cohorts)
    }
}

/// Detection p-values keyed by probe id and sample id.
#[derive(Debug, Clone, Default)]
pub struct DetectionPValues {
    samples: BTreeMap<String, usize>,
    probes: BTreeMap<String, Vec<f64>>,
}

impl DetectionPValues {
    pub fn new(sample_ids: &[String], rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let samples = sample_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut probes = BTreeMap::new();
        for (probe, values) in rows {
            if values.len() != sample_ids.len() {
                return Err(Error::Dimension(format!("detection p row {probe} has wrong length")));
            }
            probes.insert(probe, values);
        }
        Ok(DetectionPValues { samples, probes })
    }

    pub fn get(&self, probe: &str, sample: &str) -> Option<f64> {
        let s = *self.samples.get(sample)?;
        self.probes.get(probe).map(|row| row[s])
    }
}

/// Masks cells whose detection p-value exceeds `max_detection_p`, then drops
/// probes observed in fewer than `min_coverage` of samples, then drops genes
/// left without loci.
pub fn filter_probes(
    d: &MethylationDataset,
    min_coverage: f64,
    max_detection_p: f64,
    detection_p: Option<&DetectionPValues>,
) -> Result<MethylationDataset> {
    if !(min_coverage > 0.0 && min_coverage <= 1.0) {
        return Err(Error::InvalidInput(format!("min_coverage {min_coverage} not in (0,1]")));
    }
    let n = d.n_samples();
    let mut genes = Vec::new();
    for g in d.genes() {
        let mut probes = Vec::new();
        let mut values = Vec::new();
        for (l, probe) in g.probes.iter().enumerate() {
            let mut row = g.locus(l, n).to_vec();
            if let Some(det) = detection_p {
                for (s, v) in row.iter_mut().enumerate() {
                    if let Some(p) = det.get(probe, &d.sample_ids()[s]) {
                        if p > max_detection_p {
                            *v = f64::NAN;
                        }
                    }
                }
            }
            let observed = row.iter().filter(|v| !v.is_nan()).count();
            let coverage = if n == 0 { 1.0 } else { observed as f64 / n as f64 };
            if coverage >= min_coverage {
                probes.push(probe.clone());
                values.extend_from_slice(&row);
            }
        }
        if !probes.is_empty() {
            genes.push(GeneBlock { gene: g.gene.clone(), probes, values });
        }
    }
    MethylationDataset::new(genes, d.sample_ids().to_vec(), d.cohorts().to_vec())
}

/// Rescaled Euclidean distance between two probe rows over samples where both
/// are observed; `None` if they share no observed sample.
pub fn probe_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut both = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if !x.is_nan() && !y.is_nan() {
            sum += (x - y) * (x - y);
            both += 1;
        }
    }
    if both == 0 {
        None
    } else {
        Some(sqrt(sum * a.len() as f64 / both as f64))
    }
}

/// Replaces each missing cell by the mean, in the same sample, of the `k`
/// nearest probes observed there. Neighbours come from the original
/// (unimputed) values; ties in distance go to the earlier probe.
pub fn knn_impute(d: &MethylationDataset, k: usize) -> Result<MethylationDataset> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".to_string()));
    }
    let n = d.n_samples();
    let rows = d.probe_rows();
    for r in &rows {
        if n > 0 && r.values.iter().all(|v| v.is_nan()) {
            return Err(Error::Imputation(format!("probe {} has no observed values", r.probe_id)));
        }
    }
    let mut imputed: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    for (ri, r) in rows.iter().enumerate() {
        let missing: Vec<usize> = (0..n).filter(|&s| r.values[s].is_nan()).collect();
        if missing.is_empty() {
            continue;
        }
        let mut neighbours: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .filter(|&(oi, _)| oi != ri)
            .filter_map(|(oi, o)| probe_distance(&r.values, &o.values).map(|dist| (dist, oi)))
            .collect();
        neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let row_mean = {
            let obs: Vec<f64> = r.values.iter().copied().filter(|v| !v.is_nan()).collect();
            obs.iter().sum::<f64>() / obs.len() as f64
        };
        for s in missing {
            let picked: Vec<f64> = neighbours
                .iter()
                .map(|&(_, oi)| rows[oi].values[s])
                .filter(|v| !v.is_nan())
                .take(k)
                .collect();
            imputed[ri][s] = if picked.is_empty() {
                row_mean
            } else {
                picked.iter().sum::<f64>() / picked.len() as f64
            };
        }
    }
    let rows = rows
        .into_iter()
        .zip(imputed)
        .map(|(r, values)| ProbeRow { values, ..r })
        .collect();
    MethylationDataset::from_probe_rows(rows, d.sample_ids().to_vec(), d.cohorts().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub sample_id: String,
    pub time_days: f64,
    pub event: bool,
    pub age: Option<f64>,
    pub stage: Option<f64>,
    pub residual_disease: Option<f64>,
}

impl ClinicalRecord {
    pub fn has_complete_covariates(&self) -> bool {
        self.age.is_some() && self.stage.is_some() && self.residual_disease.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClinicalTable {
    records: Vec<ClinicalRecord>,
}

impl ClinicalTable {
    pub fn new(records: Vec<ClinicalRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::Validation(format!("duplicate clinical row for {}", r.sample_id)));
            }
            if !(r.time_days.is_finite() && r.time_days > 0.0) {
                return Err(Error::Validation(format!(
                    "follow-up time {} for {} must be positive",
                    r.time_days, r.sample_id
                )));
            }
        }
        Ok(ClinicalTable { records })
    }

    pub fn records(&self) -> &[ClinicalRecord] {
        &self.records
    }

    pub fn get(&self, sample_id: &str) -> Option<&ClinicalRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }
}

/// Gene × sample expression values, row-major, `NaN` for missing.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub genes: Vec<String>,
    pub sample_ids: Vec<String>,
    pub values: Vec<f64>,
}

impl ExpressionMatrix {
    pub fn new(genes: Vec<String>, sample_ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if values.len() != genes.len() * sample_ids.len() {
            return Err(Error::Dimension("expression matrix has wrong size".to_string()));
        }
        Ok(ExpressionMatrix { genes, sample_ids, values })
    }

    pub fn gene_row(&self, g: usize) -> &[f64] {
        let n = self.sample_ids.len();
        &self.values[g * n..(g + 1) * n]
    }

    pub fn gene_index(&self, gene: &str) -> Option<usize> {
        self.genes.iter().position(|g| g == gene)
    }

    pub fn sample_index(&self, sample: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == sample)
    }
}

/// Methylation, clinical and expression data on a common sample roster.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedStudy {
    pub methylation: MethylationDataset,
    /// Clinical row per methylation sample; `None` for healthy samples.
    pub clinical: Vec<Option<ClinicalRecord>>,
    /// Tumour samples lacking one or more covariates.
    pub incomplete_covariates: Vec<bool>,
    pub expression: Option<ExpressionMatrix>,
}

impl AlignedStudy {
    pub fn tumour_samples(&self, cohort: Cohort) -> Vec<usize> {
        self.methylation.samples_in(cohort)
    }
}

/// Aligns the three tables on sample id. Every tumour methylation sample must
/// have a clinical row; expression is restricted to shared samples and genes.
pub fn align_cohorts(
    m: &MethylationDataset,
    c: &ClinicalTable,
    e: Option<&ExpressionMatrix>,
) -> Result<AlignedStudy> {
    let mut clinical = Vec::with_capacity(m.n_samples());
    let mut incomplete = Vec::with_capacity(m.n_samples());
    for (s, id) in m.sample_ids().iter().enumerate() {
        if m.cohorts()[s].is_tumour() {
            let rec = c
                .get(id)
                .ok_or_else(|| Error::Alignment(format!("tumour sample {id} has no clinical row")))?;
            incomplete.push(!rec.has_complete_covariates());
            clinical.push(Some(rec.clone()));
        } else {
            incomplete.push(false);
            clinical.push(None);
        }
    }
    let expression = e.map(|e| {
        let sample_cols: Vec<usize> = (0..e.sample_ids.len())
            .filter(|&j| m.sample_ids().iter().any(|s| *s == e.sample_ids[j]))
            .collect();
        let gene_rows: Vec<usize> =
            (0..e.genes.len()).filter(|&g| m.gene_index(&e.genes[g]).is_some()).collect();
        let mut values = Vec::with_capacity(sample_cols.len() * gene_rows.len());
        for &g in &gene_rows {
            let row = e.gene_row(g);
            values.extend(sample_cols.iter().map(|&j| row[j]));
        }
        ExpressionMatrix {
            genes: gene_rows.iter().map(|&g| e.genes[g].clone()).collect(),
            sample_ids: sample_cols.iter().map(|&j| e.sample_ids[j].clone()).collect(),
            values,
        }
    });
    Ok(AlignedStudy { methylation: m.clone(), clinical, incomplete_covariates: incomplete, expression })
}
