//! Readers and writers for the tabular and JSON pipeline artifacts.

use std::path::Path;

use methnet_core::ebayes::{NetworkEdge, NodeWeight, PrognosticNetwork, WaldField};
use methnet_core::oncomarker::{ConcordanceEntry, HazardSummary, MarkerValidation, TermSummary};
use methnet_core::pairs::{pair_count, pair_index};
use methnet_core::survival::KmCurve;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_writer, finish_csv, fmt_f64, parse_f64, parse_usize, read_rows, write_row};

pub const WALD_HEADER: [&str; 5] = ["gene_i", "gene_j", "z", "theta", "converged"];
pub const WEIGHTS_HEADER: [&str; 3] = ["gene", "weight", "loglik"];
pub const EDGES_HEADER: [&str; 6] = ["gene_i", "gene_j", "z", "theta", "mu_ij", "mu_ji"];
pub const ASSIGNMENT_HEADER: [&str; 2] = ["gene", "block"];
pub const SCORES_HEADER: [&str; 4] = ["sample_id", "community", "score", "group"];
pub const KM_HEADER: [&str; 5] = ["time", "survival", "at_risk", "events", "group"];
pub const CONCORDANCE_HEADER: [&str; 6] = ["gene_i", "gene_j", "pearson_r", "pearson_p", "spearman_r", "spearman_p"];

/// Gene-name lookup used to turn names in artifacts back into indices.
pub struct GeneIndex {
    names: Vec<String>,
    map: std::collections::HashMap<String, usize>,
}

impl GeneIndex {
    pub fn new(names: Vec<String>) -> Self {
        let map = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        GeneIndex { names, map }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn index(&self, path: &Path, line: u64, name: &str) -> Result<usize> {
        self.map
            .get(name.trim())
            .copied()
            .ok_or_else(|| Error::parse(path, line, format!("unknown gene {name:?}")))
    }
}

pub fn write_wald_field(path: &Path, genes: &GeneIndex, f: &WaldField) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, WALD_HEADER)?;
    let m = f.n_genes();
    for i in 0..m {
        for j in i + 1..m {
            let row = [
                genes.name(i).to_string(),
                genes.name(j).to_string(),
                fmt_f64(f.z(i, j)),
                fmt_f64(f.theta(i, j)),
                if f.converged(i, j) { "1" } else { "0" }.to_string(),
            ];
            write_row(path, &mut w, row)?;
        }
    }
    finish_csv(path, w)
}

pub fn read_wald_field(path: &Path, genes: &GeneIndex) -> Result<WaldField> {
    let m = genes.len();
    let n = pair_count(m);
    let (mut z, mut theta, mut conv) = (vec![f64::NAN; n], vec![0.0; n], vec![false; n]);
    let mut seen = vec![false; n];
    for (line, r) in read_rows(path, &WALD_HEADER)? {
        let (i, j) = (genes.index(path, line, &r[0])?, genes.index(path, line, &r[1])?);
        if i == j {
            return Err(Error::parse(path, line, "pair of a gene with itself"));
        }
        let k = pair_index(m, i, j);
        seen[k] = true;
        z[k] = parse_f64(path, line, &r[2])?;
        theta[k] = parse_f64(path, line, &r[3])?;
        conv[k] = r[4].trim() == "1";
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        let (i, j) = methnet_core::pairs::pair_from_index(m, k);
        return Err(Error::format(path, format!("missing pair {},{}", genes.name(i), genes.name(j))));
    }
    Ok(WaldField::new(m, z, theta, conv)?)
}

pub fn write_node_weights(path: &Path, genes: &GeneIndex, weights: &[NodeWeight]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, WEIGHTS_HEADER)?;
    for nw in weights {
        write_row(path, &mut w, [genes.name(nw.gene).to_string(), fmt_f64(nw.weight), fmt_f64(nw.loglik)])?;
    }
    finish_csv(path, w)
}

/// Reads node weights; the gene column also fixes the gene order.
pub fn read_node_weights(path: &Path) -> Result<(GeneIndex, Vec<NodeWeight>)> {
    let rows = read_rows(path, &WEIGHTS_HEADER)?;
    let mut names = Vec::with_capacity(rows.len());
    let mut weights = Vec::with_capacity(rows.len());
    for (gene, (line, r)) in rows.into_iter().enumerate() {
        names.push(r[0].trim().to_string());
        weights.push(NodeWeight {
            gene,
            weight: parse_f64(path, line, &r[1])?,
            loglik: parse_f64(path, line, &r[2])?,
        });
    }
    Ok((GeneIndex::new(names), weights))
}

pub fn write_edges(path: &Path, genes: &GeneIndex, net: &PrognosticNetwork) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, EDGES_HEADER)?;
    for e in &net.edges {
        let row = [
            genes.name(e.i).to_string(),
            genes.name(e.j).to_string(),
            fmt_f64(e.z),
            fmt_f64(e.theta),
            fmt_f64(e.mu_ij),
            fmt_f64(e.mu_ji),
        ];
        write_row(path, &mut w, row)?;
    }
    finish_csv(path, w)
}

pub fn read_edges(path: &Path, genes: &GeneIndex) -> Result<PrognosticNetwork> {
    let mut edges = Vec::new();
    for (line, r) in read_rows(path, &EDGES_HEADER)? {
        let (a, b) = (genes.index(path, line, &r[0])?, genes.index(path, line, &r[1])?);
        if a == b {
            return Err(Error::parse(path, line, "self-loop"));
        }
        edges.push(NetworkEdge {
            i: a.min(b),
            j: a.max(b),
            z: parse_f64(path, line, &r[2])?,
            theta: parse_f64(path, line, &r[3])?,
            mu_ij: parse_f64(path, line, &r[4])?,
            mu_ji: parse_f64(path, line, &r[5])?,
        });
    }
    edges.sort_by_key(|e| (e.i, e.j));
    Ok(PrognosticNetwork { m: genes.len(), edges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub m: usize,
    pub edges: usize,
    pub density: f64,
    pub laplace_scale: f64,
}

pub fn write_gene_list(path: &Path, genes: &GeneIndex, nodes: &[usize]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, ["gene"])?;
    for &n in nodes {
        write_row(path, &mut w, [genes.name(n)])?;
    }
    finish_csv(path, w)
}

pub fn read_gene_list(path: &Path, genes: &GeneIndex) -> Result<Vec<usize>> {
    read_rows(path, &["gene"])?.into_iter().map(|(line, r)| genes.index(path, line, &r[0])).collect()
}

/// `gene,block` with one-based blocks.
pub fn write_assignment(path: &Path, genes: &GeneIndex, nodes: &[usize], labels: &[usize]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, ASSIGNMENT_HEADER)?;
    for (&n, &l) in nodes.iter().zip(labels) {
        write_row(path, &mut w, [genes.name(n).to_string(), (l + 1).to_string()])?;
    }
    finish_csv(path, w)
}

/// Node ids and zero-based labels.
pub fn read_assignment(path: &Path, genes: &GeneIndex) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut nodes = Vec::new();
    let mut labels = Vec::new();
    for (line, r) in read_rows(path, &ASSIGNMENT_HEADER)? {
        nodes.push(genes.index(path, line, &r[0])?);
        let b = parse_usize(path, line, &r[1])?;
        if b == 0 {
            return Err(Error::parse(path, line, "blocks are numbered from 1"));
        }
        labels.push(b - 1);
    }
    Ok((nodes, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerEdgeRecord {
    pub gene_i: String,
    pub gene_j: String,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerRecord {
    /// One-based community id, matching the assignment file.
    pub community: usize,
    pub genes: Vec<String>,
    pub edges: Vec<MarkerEdgeRecord>,
    pub threshold: f64,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub community: usize,
    pub score: f64,
    pub worse: bool,
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, SCORES_HEADER)?;
    for r in rows {
        let group = if r.worse { "worse" } else { "better" };
        write_row(path, &mut w, [r.sample_id.clone(), r.community.to_string(), fmt_f64(r.score), group.to_string()])?;
    }
    finish_csv(path, w)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    read_rows(path, &SCORES_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let worse = match r[3].trim() {
                "worse" => true,
                "better" => false,
                g => return Err(Error::parse(path, line, format!("unknown group {g:?}"))),
            };
            Ok(ScoreRow {
                sample_id: r[0].trim().to_string(),
                community: parse_usize(path, line, &r[1])?,
                score: parse_f64(path, line, &r[2])?,
                worse,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub community: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Samples in this cohort's fits.
    pub n: usize,
    pub n_worse: usize,
    pub n_multivariate: usize,
    pub evaluable: bool,
    pub univariate: Option<HazardSummary>,
    pub univariate_converged: bool,
    pub multivariate: Vec<TermSummary>,
    pub logrank_p: Option<f64>,
}

impl ReportEntry {
    pub fn new(v: &MarkerValidation, community: usize, n_train: usize, n_test: usize) -> Self {
        ReportEntry {
            community,
            n_train,
            n_test,
            n: v.n,
            n_worse: v.n_worse,
            n_multivariate: v.n_multivariate,
            evaluable: v.evaluable,
            univariate: v.univariate,
            univariate_converged: v.univariate_converged,
            multivariate: v.multivariate.clone(),
            logrank_p: v.logrank_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cohort: String,
    /// Community ids by ascending univariate p, non-evaluable last.
    pub ranking: Vec<usize>,
    pub markers: Vec<ReportEntry>,
}

pub fn write_km(path: &Path, curves: &[(&str, &KmCurve)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, KM_HEADER)?;
    for (group, c) in curves {
        for k in 0..c.times.len() {
            let row = [
                fmt_f64(c.times[k]),
                fmt_f64(c.survival[k]),
                c.at_risk[k].to_string(),
                c.events[k].to_string(),
                group.to_string(),
            ];
            write_row(path, &mut w, row)?;
        }
    }
    finish_csv(path, w)
}

pub fn write_concordance(path: &Path, genes: &GeneIndex, entries: &[ConcordanceEntry]) -> Result<()> {
    let mut w = csv_writer(path)?;
    write_row(path, &mut w, CONCORDANCE_HEADER)?;
    for e in entries {
        let row = [
            genes.name(e.gene_i).to_string(),
            genes.name(e.gene_j).to_string(),
            fmt_f64(e.pearson_r),
            fmt_f64(e.pearson_p),
            fmt_f64(e.spearman_r),
            fmt_f64(e.spearman_p),
        ];
        write_row(path, &mut w, row)?;
    }
    finish_csv(path, w)
}
