//! Synthetic cohorts with planted prognostic gene pairs, and planted-partition
//! graphs, for end-to-end ground truth.
//!
//! Genes joined by planted edges form groups. In healthy samples every gene
//! of a group loads on one shared latent factor, so the healthy
//! cross-covariance between group members is nonzero. In tumour `k` each
//! group member deviates along its loading by `c_k + e_gk`, where `c_k` is a
//! per-tumour group coherence; the interaction measure of a planted pair
//! therefore varies across tumours with the sign agreement of the two
//! deviations. Survival is exponential with log-hazard
//! `Σ effect · ρ_ij(k)` over planted edges.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{exp, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::community::SparseGraph;
use crate::data::{ClinicalRecord, ClinicalTable, Cohort, ExpressionMatrix, GeneBlock, MethylationDataset};
use crate::error::{Error, Result};
use crate::interaction::{estimate_moments, interaction_measure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub i: usize,
    pub j: usize,
    /// Log hazard ratio per unit of interaction.
    pub effect: f64,
}

/// A set of genes whose every pair is a planted edge with the same effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCommunity {
    pub genes: Vec<usize>,
    pub effect: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub n: usize,
    pub k: usize,
    pub p_within: f64,
    pub p_between: f64,
}

fn default_loci_min() -> usize {
    3
}
fn default_loci_max() -> usize {
    6
}
fn default_healthy() -> usize {
    60
}
fn default_baseline() -> f64 {
    1.0 / 1500.0
}
fn default_censoring() -> f64 {
    0.3
}
fn default_missing() -> f64 {
    0.02
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_genes: usize,
    #[serde(default = "default_loci_min")]
    pub loci_min: usize,
    #[serde(default = "default_loci_max")]
    pub loci_max: usize,
    #[serde(default = "default_healthy")]
    pub n_healthy: usize,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default)]
    pub planted_edges: Vec<PlantedEdge>,
    #[serde(default)]
    pub planted_communities: Vec<PlantedCommunity>,
    /// Optional planted-partition graph emitted with the ground truth.
    #[serde(default)]
    pub blocks: Option<BlockSpec>,
    /// Baseline hazard per day.
    #[serde(default = "default_baseline")]
    pub baseline_hazard: f64,
    /// Expected fraction of censored tumour samples.
    #[serde(default = "default_censoring")]
    pub censoring_fraction: f64,
    /// Per-covariate probability of a missing clinical value.
    #[serde(default = "default_missing")]
    pub covariate_missing_rate: f64,
    #[serde(default = "default_true")]
    pub expression: bool,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InfeasibleSpec(msg));
        if self.n_genes == 0 || self.n_train == 0 || self.n_test == 0 {
            return bad("gene and tumour counts must be positive".into());
        }
        if self.n_healthy < 2 {
            return bad("at least two healthy samples are needed".into());
        }
        if self.loci_min == 0 || self.loci_min > self.loci_max {
            return bad(format!("loci range {}..={} is empty", self.loci_min, self.loci_max));
        }
        for e in &self.planted_edges {
            if e.i >= self.n_genes || e.j >= self.n_genes || e.i == e.j {
                return bad(format!("planted edge ({}, {}) is not a pair of genes below {}", e.i, e.j, self.n_genes));
            }
        }
        for c in &self.planted_communities {
            if let Some(g) = c.genes.iter().find(|&&g| g >= self.n_genes) {
                return bad(format!("planted community gene {g} does not exist"));
            }
        }
        let probs = [self.censoring_fraction, self.covariate_missing_rate];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.censoring_fraction >= 1.0 {
            return bad("censoring fraction must lie in [0, 1) and missing rate in [0, 1]".into());
        }
        if !(self.baseline_hazard.is_finite() && self.baseline_hazard > 0.0) {
            return bad("baseline hazard must be positive".into());
        }
        if let Some(b) = self.blocks {
            if b.n == 0 || b.k == 0 || b.k > b.n || ![b.p_within, b.p_between].iter().all(|p| (0.0..=1.0).contains(p)) {
                return bad("invalid block specification".into());
            }
        }
        Ok(())
    }

    /// Planted edges plus community pairs, merged by pair (effects add).
    pub fn expanded_edges(&self) -> Vec<PlantedEdge> {
        let mut all: Vec<PlantedEdge> = self
            .planted_edges
            .iter()
            .map(|e| PlantedEdge { i: e.i.min(e.j), j: e.i.max(e.j), effect: e.effect })
            .collect();
        for c in &self.planted_communities {
            let mut genes = c.genes.clone();
            genes.sort_unstable();
            genes.dedup();
            for a in 0..genes.len() {
                for b in a + 1..genes.len() {
                    all.push(PlantedEdge { i: genes[a], j: genes[b], effect: c.effect });
                }
            }
        }
        all.sort_by_key(|e| (e.i, e.j));
        let mut merged: Vec<PlantedEdge> = Vec::new();
        for e in all {
            match merged.last_mut() {
                Some(last) if (last.i, last.j) == (e.i, e.j) => last.effect += e.effect,
                _ => merged.push(e),
            }
        }
        merged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub planted_edges: Vec<PlantedEdge>,
    /// Latent group per gene; `None` for genes outside every planted edge.
    pub gene_groups: Vec<Option<usize>>,
    pub realized_censoring: f64,
    pub censoring_rate: f64,
    pub block_labels: Option<Vec<usize>>,
    pub block_edges: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub methylation: MethylationDataset,
    pub clinical: ClinicalTable,
    pub expression: Option<ExpressionMatrix>,
    pub truth: GroundTruth,
}

// methylation is mean + SCALE * latent signal, clamped into [0, 1]
const SCALE: f64 = 0.05;
const NOISE: f64 = 0.3;
const COHERENCE_SD: f64 = 1.5;
const MEMBER_SD: f64 = 0.5;
const PRIVATE_SD: f64 = 0.7;

fn groups_of(m: usize, edges: &[PlantedEdge]) -> Vec<Option<usize>> {
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let n = p[y];
            p[y] = r;
            y = n;
        }
        r
    }
    let mut touched = vec![false; m];
    for e in edges {
        touched[e.i] = true;
        touched[e.j] = true;
        let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut label = vec![usize::MAX; m];
    let mut next = 0;
    (0..m)
        .map(|g| {
            if !touched[g] {
                return None;
            }
            let r = find(&mut parent, g);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            Some(label[r])
        })
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Censoring rate giving the target expected censored fraction
/// `mean_k λc / (λc + λ_k)`.
fn censoring_rate(hazards: &[f64], target: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    let frac = |lc: f64| hazards.iter().map(|&h| lc / (lc + h)).sum::<f64>() / hazards.len() as f64;
    let (mut lo, mut hi) = (0.0f64, hazards.iter().copied().fold(0.0, f64::max).max(1e-300));
    while frac(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws a cohort from the spec; bit-identical for a fixed seed.
pub fn generate(spec: &SynthSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.n_genes;
    let edges = spec.expanded_edges();
    let groups = groups_of(m, &edges);
    let n_groups = groups.iter().flatten().max().map_or(0, |g| g + 1);
    let n_tumour = spec.n_train + spec.n_test;
    let n_total = spec.n_healthy + n_tumour;

    let loci: Vec<usize> = (0..m).map(|_| rng.random_range(spec.loci_min..=spec.loci_max)).collect();
    let means: Vec<f64> = (0..m).map(|_| rng.random_range(0.3..0.7)).collect();
    let shared_load: Vec<Vec<f64>> = loci.iter().map(|&p| (0..p).map(|_| normal(&mut rng)).collect()).collect();
    let private_load: Vec<Vec<f64>> = loci.iter().map(|&p| (0..p).map(|_| normal(&mut rng)).collect()).collect();

    // latent scores: shared factor per group and sample, private factor per gene and sample
    let healthy_shared: Vec<Vec<f64>> =
        (0..n_groups).map(|_| (0..spec.n_healthy).map(|_| normal(&mut rng)).collect()).collect();
    let coherence: Vec<Vec<f64>> =
        (0..n_groups).map(|_| (0..n_tumour).map(|_| COHERENCE_SD * normal(&mut rng)).collect()).collect();
    let mut shared = vec![vec![0.0; n_total]; m];
    let mut private = vec![vec![0.0; n_total]; m];
    for g in 0..m {
        for s in 0..n_total {
            private[g][s] = PRIVATE_SD * normal(&mut rng);
            if let Some(grp) = groups[g] {
                shared[g][s] = if s < spec.n_healthy {
                    healthy_shared[grp][s]
                } else {
                    coherence[grp][s - spec.n_healthy] + MEMBER_SD * normal(&mut rng)
                };
            }
        }
    }

    let mut blocks = Vec::with_capacity(m);
    for g in 0..m {
        let p = loci[g];
        let mut values = vec![0.0; p * n_total];
        for l in 0..p {
            for s in 0..n_total {
                let signal = shared_load[g][l] * shared[g][s] + private_load[g][l] * private[g][s] + NOISE * normal(&mut rng);
                values[l * n_total + s] = (means[g] + SCALE * signal).clamp(0.0, 1.0);
            }
        }
        blocks.push(GeneBlock {
            gene: format!("G{:04}", g + 1),
            probes: (0..p).map(|l| format!("cg{:04}_{}", g + 1, l + 1)).collect(),
            values,
        });
    }
    let mut sample_ids = Vec::with_capacity(n_total);
    let mut cohorts = Vec::with_capacity(n_total);
    for h in 0..spec.n_healthy {
        sample_ids.push(format!("H{:04}", h + 1));
        cohorts.push(Cohort::Healthy);
    }
    for t in 0..spec.n_train {
        sample_ids.push(format!("TR{:04}", t + 1));
        cohorts.push(Cohort::TumourTrain);
    }
    for t in 0..spec.n_test {
        sample_ids.push(format!("TE{:04}", t + 1));
        cohorts.push(Cohort::TumourTest);
    }
    let methylation = MethylationDataset::new(blocks, sample_ids.clone(), cohorts)?;

    // log-hazard from the realized interaction values of planted pairs
    let reference = estimate_moments(&methylation)?;
    let mut log_hazard = vec![0.0; n_tumour];
    for e in &edges {
        if e.effect == 0.0 {
            continue;
        }
        let (gx, gy) = (&methylation.genes()[e.i], &methylation.genes()[e.j]);
        for (t, lh) in log_hazard.iter_mut().enumerate() {
            let s = spec.n_healthy + t;
            let rho = interaction_measure(
                &reference.genes()[e.i],
                &reference.genes()[e.j],
                &gx.profile(s, n_total),
                &gy.profile(s, n_total),
            )?
            .rho;
            *lh += e.effect * rho;
        }
    }
    let hazards: Vec<f64> = log_hazard.iter().map(|&lh| spec.baseline_hazard * exp(lh)).collect();
    let lc = censoring_rate(&hazards, spec.censoring_fraction);
    let age_dist = Normal::new(58.0f64, 12.0).expect("valid normal");
    let mut records = Vec::with_capacity(n_tumour);
    let mut censored = 0usize;
    for t in 0..n_tumour {
        let death = Exp::new(hazards[t]).expect("positive rate").sample(&mut rng);
        let cens = if lc > 0.0 { Exp::new(lc).expect("positive rate").sample(&mut rng) } else { f64::INFINITY };
        let event = death <= cens;
        let time = death.min(cens).max(1e-3);
        censored += usize::from(!event);
        let age = age_dist.sample(&mut rng).clamp(20.0, 90.0);
        let stage = [1.0, 2.0, 3.0, 3.0, 3.0, 4.0][rng.random_range(0..6)];
        let residual = if rng.random_bool(0.4) { 1.0 } else { 0.0 };
        let mut miss = || rng.random_bool(spec.covariate_missing_rate);
        let (ma, ms, mr) = (miss(), miss(), miss());
        records.push(ClinicalRecord {
            sample_id: sample_ids[spec.n_healthy + t].clone(),
            time_days: time,
            event,
            age: (!ma).then_some(libm::round(age * 10.0) / 10.0),
            stage: (!ms).then_some(stage),
            residual_disease: (!mr).then_some(residual),
        });
    }
    let clinical = ClinicalTable::new(records)?;

    let expression = if spec.expression {
        let mut values = Vec::with_capacity(m * n_total);
        for g in 0..m {
            let base = 5.0 + 0.5 * g as f64 % 3.0;
            for s in 0..n_total {
                let latent = if groups[g].is_some() { shared[g][s] } else { private[g][s] };
                values.push(base + 0.8 * latent + 0.6 * normal(&mut rng));
            }
        }
        Some(ExpressionMatrix::new(methylation.gene_names().iter().map(|s| String::from(*s)).collect(), sample_ids, values)?)
    } else {
        None
    };

    let (block_labels, block_edges) = match spec.blocks {
        Some(b) => {
            let (g, labels) = generate_sbm(b.n, b.k, b.p_within, b.p_between, spec.seed)?;
            (Some(labels), Some(g.edges().to_vec()))
        }
        None => (None, None),
    };
    let truth = GroundTruth {
        planted_edges: edges,
        gene_groups: groups,
        realized_censoring: censored as f64 / n_tumour as f64,
        censoring_rate: lc,
        block_labels,
        block_edges,
    };
    Ok(SyntheticCohort { methylation, clinical, expression, truth })
}

/// Planted-partition graph on `n` nodes; node `i` belongs to block `i·k/n`.
pub fn generate_sbm(n: usize, k: usize, p_within: f64, p_between: f64, seed: u64) -> Result<(SparseGraph, Vec<usize>)> {
    if k == 0 || k > n.max(1) {
        return Err(Error::InvalidInput(format!("{k} blocks for {n} nodes")));
    }
    if ![p_within, p_between].iter().all(|p| (0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput("edge probabilities must lie in [0, 1]".into()));
    }
    let labels: Vec<usize> = (0..n).map(|i| i * k / n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { p_within } else { p_between };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok((SparseGraph::with_nodes(n, edges)?, labels))
}

/// Standard deviation of a binomial proportion, for density checks.
pub fn binomial_sd(p: f64, trials: usize) -> f64 {
    sqrt(p * (1.0 - p) / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            n_genes: 6,
            loci_min: 2,
            loci_max: 4,
            n_healthy: 20,
            n_train: 30,
            n_test: 20,
            planted_edges: vec![PlantedEdge { i: 0, j: 1, effect: 1.0 }],
            planted_communities: vec![],
            blocks: None,
            baseline_hazard: 1e-3,
            censoring_fraction: 0.3,
            covariate_missing_rate: 0.02,
            expression: true,
            seed,
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = generate(&small_spec(5)).unwrap();
        let b = generate(&small_spec(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.methylation.genes().iter().all(|g| g.values.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_ne!(a, generate(&small_spec(6)).unwrap());
    }

    #[test]
    fn rejects_edge_outside_genes() {
        let mut s = small_spec(1);
        s.planted_edges.push(PlantedEdge { i: 2, j: 9, effect: 1.0 });
        assert!(matches!(generate(&s), Err(Error::InfeasibleSpec(_))));
    }

    #[test]
    fn community_expansion_and_groups() {
        let mut s = small_spec(1);
        s.planted_communities.push(PlantedCommunity { genes: vec![3, 2, 4], effect: 0.5 });
        let e = s.expanded_edges();
        assert_eq!(e.len(), 4);
        let g = groups_of(6, &e);
        assert_eq!(g, vec![Some(0), Some(0), Some(1), Some(1), Some(1), None]);
    }

    #[test]
    fn sbm_extremes() {
        let (g, labels) = generate_sbm(12, 3, 1.0, 0.0, 4).unwrap();
        assert_eq!(g.n_edges(), 3 * 6);
        assert!(g.edges().iter().all(|&(a, b)| labels[a] == labels[b]));
    }
}
