//! Healthy-reference moments and the per-sample gene-pair interaction
//! measure
//!
//! ```text
//! rho_XY(k) = xc' S_XY yc / ( sqrt(xc' S_XX xc) * sqrt(yc' S_YY yc) )
//! ```
//!
//! where `xc = x(k) - mu_X` and all covariance blocks are estimated from the
//! healthy cohort with a `1/n_h` normalizer. Cross-covariances are never
//! stored: with the centered healthy block `Xc` (`p × n_h`), every quadratic
//! form factors through the projection `u = Xc' xc`, so that
//! `xc' S_XY yc = u·v / n_h` and `xc' S_XX xc = |u|² / n_h`. The measure is
//! therefore the cosine between the two projections, which also makes the
//! bound `|rho| <= 1` structural.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use crate::data::{Cohort, MethylationDataset};
use crate::error::{Error, Result};
use crate::linalg::{
    backward_sub_transposed, cholesky, dot, forward_sub, symmetric_eigen, Matrix,
};
use crate::pairs::pair_range;

/// Quadratic forms at or below this value make the measure degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneMoments {
    pub gene: String,
    pub mean: Vec<f64>,
    /// `p × p`, `1/n_h` normalized.
    pub cov: Matrix,
    pub n_healthy: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CenteredHealthyBlock {
    pub gene: String,
    /// `p × n_h`; column `k` is `x(k) - mu`.
    pub centered: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneReference {
    pub moments: GeneMoments,
    pub block: CenteredHealthyBlock,
}

/// Tumour profile projected onto the healthy sample space of its gene.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coords: Vec<f64>,
    /// `xc' S_XX xc`.
    pub quad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub rho: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionValue {
    pub pair: (usize, usize),
    pub sample: usize,
    pub rho: f64,
    pub degenerate: bool,
}

impl GeneReference {
    pub fn from_healthy_block(gene: &str, loci_by_sample: &Matrix) -> Result<Self> {
        let (p, n_h) = (loci_by_sample.rows(), loci_by_sample.cols());
        if n_h < 2 {
            return Err(Error::InsufficientReference(format!(
                "gene {gene}: {n_h} healthy samples, need at least 2"
            )));
        }
        let inv_n = 1.0 / n_h as f64;
        let mean: Vec<f64> = (0..p).map(|l| loci_by_sample.row(l).iter().sum::<f64>() * inv_n).collect();
        let centered = Matrix::from_fn(p, n_h, |l, k| loci_by_sample[(l, k)] - mean[l]);
        let mut cov = Matrix::zeros(p, p);
        for a in 0..p {
            for b in 0..=a {
                let v = dot(centered.row(a), centered.row(b)) * inv_n;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        Ok(GeneReference {
            moments: GeneMoments { gene: String::from(gene), mean, cov, n_healthy: n_h },
            block: CenteredHealthyBlock { gene: String::from(gene), centered },
        })
    }

    pub fn gene(&self) -> &str {
        &self.moments.gene
    }

    pub fn n_loci(&self) -> usize {
        self.moments.mean.len()
    }

    pub fn n_healthy(&self) -> usize {
        self.moments.n_healthy
    }

    /// `S_XY = (1/n_h) Xc Ycᵀ`, reconstructed on demand.
    pub fn cross_covariance(&self, other: &GeneReference) -> Matrix {
        let inv_n = 1.0 / self.n_healthy() as f64;
        Matrix::from_fn(self.n_loci(), other.n_loci(), |a, b| {
            dot(self.block.centered.row(a), other.block.centered.row(b)) * inv_n
        })
    }

    pub fn project(&self, profile: &[f64]) -> Result<Projection> {
        let p = self.n_loci();
        if profile.len() != p {
            return Err(Error::Dimension(format!(
                "gene {}: profile has {} loci, reference has {p}",
                self.gene(),
                profile.len()
            )));
        }
        if profile.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidInput(format!("gene {}: profile has missing values", self.gene())));
        }
        let n_h = self.n_healthy();
        let mut coords = vec![0.0; n_h];
        for (l, &x) in profile.iter().enumerate() {
            let c = x - self.moments.mean[l];
            for (u, &h) in coords.iter_mut().zip(self.block.centered.row(l)) {
                *u += h * c;
            }
        }
        let quad = dot(&coords, &coords) / n_h as f64;
        Ok(Projection { coords, quad })
    }
}

/// Interaction measure from two projections of the same tumour sample.
pub fn interaction_from_projections(px: &Projection, py: &Projection, n_healthy: usize) -> Interaction {
    if px.quad <= DEGENERATE_EPS || py.quad <= DEGENERATE_EPS {
        return Interaction { rho: 0.0, degenerate: true };
    }
    let num = dot(&px.coords, &py.coords) / n_healthy as f64;
    let rho = num / (sqrt(px.quad) * sqrt(py.quad));
    Interaction { rho: rho.clamp(-1.0, 1.0), degenerate: false }
}

/// Interaction measure of genes `x`, `y` for one tumour sample with the
/// given locus profiles.
pub fn interaction_measure(x: &GeneReference, y: &GeneReference, xk: &[f64], yk: &[f64]) -> Result<Interaction> {
    if x.n_healthy() != y.n_healthy() {
        return Err(Error::Dimension("references built from different healthy cohorts".into()));
    }
    let px = x.project(xk)?;
    let py = y.project(yk)?;
    Ok(interaction_from_projections(&px, &py, x.n_healthy()))
}

/// Per-gene healthy references for a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct HealthyReference {
    genes: Vec<GeneReference>,
    n_healthy: usize,
}

impl HealthyReference {
    pub fn from_genes(genes: Vec<GeneReference>) -> Result<Self> {
        let n_healthy = genes.first().map(|g| g.n_healthy()).unwrap_or(0);
        if genes.iter().any(|g| g.n_healthy() != n_healthy) {
            return Err(Error::Dimension("genes disagree on healthy sample count".into()));
        }
        Ok(HealthyReference { genes, n_healthy })
    }

    pub fn genes(&self) -> &[GeneReference] {
        &self.genes
    }

    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn n_healthy(&self) -> usize {
        self.n_healthy
    }

    pub fn gene_index(&self, gene: &str) -> Option<usize> {
        self.genes.iter().position(|g| g.gene() == gene)
    }

    pub fn resolve_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<(usize, usize)>> {
        pairs
            .iter()
            .map(|(a, b)| {
                let i = self.gene_index(a).ok_or_else(|| Error::UnknownGene(a.clone()))?;
                let j = self.gene_index(b).ok_or_else(|| Error::UnknownGene(b.clone()))?;
                Ok((i, j))
            })
            .collect()
    }

    /// Projects the given samples of `d` for every gene.
    pub fn project_samples(&self, d: &MethylationDataset, samples: &[usize]) -> Result<CohortProjections> {
        let genes = (0..self.n_genes()).map(|g| self.project_gene(d, g, samples)).collect::<Result<_>>()?;
        Ok(CohortProjections { genes, n_samples: samples.len(), n_healthy: self.n_healthy })
    }

    /// Projections of one gene for the given samples.
    pub fn project_gene(&self, d: &MethylationDataset, g: usize, samples: &[usize]) -> Result<Vec<Projection>> {
        let reference = &self.genes[g];
        let block = d
            .genes()
            .get(g)
            .filter(|b| b.gene == reference.gene())
            .ok_or_else(|| Error::UnknownGene(String::from(reference.gene())))?;
        let n = d.n_samples();
        samples.iter().map(|&s| reference.project(&block.profile(s, n))).collect()
    }
}

/// Moments and centered blocks from the healthy samples of `d`.
pub fn estimate_moments(d: &MethylationDataset) -> Result<HealthyReference> {
    let healthy = d.samples_in(Cohort::Healthy);
    if healthy.len() < 2 {
        return Err(Error::InsufficientReference(format!(
            "{} healthy samples, need at least 2",
            healthy.len()
        )));
    }
    let n = d.n_samples();
    let genes = d
        .genes()
        .iter()
        .map(|g| {
            let m = Matrix::from_fn(g.n_loci(), healthy.len(), |l, k| g.values[l * n + healthy[k]]);
            if m.as_slice().iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidInput(format!("gene {} has missing healthy values", g.gene)));
            }
            GeneReference::from_healthy_block(&g.gene, &m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HealthyReference { genes, n_healthy: healthy.len() })
}

/// Projections of one cohort: `genes[g][k]` for gene `g`, cohort sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortProjections {
    pub genes: Vec<Vec<Projection>>,
    pub n_samples: usize,
    pub n_healthy: usize,
}

impl CohortProjections {
    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn interaction(&self, i: usize, j: usize, k: usize) -> Interaction {
        interaction_from_projections(&self.genes[i][k], &self.genes[j][k], self.n_healthy)
    }

    /// Interaction series of one pair over all cohort samples.
    pub fn pair_series(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.n_samples).map(|k| self.interaction(i, j, k).rho).collect()
    }

    /// Pair-major, sample-minor stream over an explicit pair list.
    pub fn interaction_table<'a>(
        &'a self,
        pairs: &'a [(usize, usize)],
    ) -> Result<impl Iterator<Item = InteractionValue> + 'a> {
        let m = self.n_genes();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= m || j >= m) {
            return Err(Error::UnknownGene(format!("pair ({i}, {j}) outside {m} genes")));
        }
        Ok(pairs.iter().flat_map(move |&(i, j)| self.pair_values(i, j)))
    }

    /// Stream over the flat pair-index range `start..end` of all pairs.
    pub fn interaction_chunk(&self, start: usize, end: usize) -> impl Iterator<Item = InteractionValue> + '_ {
        pair_range(self.n_genes(), start, end).flat_map(move |(i, j)| self.pair_values(i, j))
    }

    fn pair_values(&self, i: usize, j: usize) -> impl Iterator<Item = InteractionValue> + '_ {
        (0..self.n_samples).map(move |k| {
            let it = self.interaction(i, j, k);
            InteractionValue { pair: (i, j), sample: k, rho: it.rho, degenerate: it.degenerate }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalCorrelation {
    pub correlation: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

fn ridge(cov: &Matrix) -> Matrix {
    let p = cov.rows();
    let eps = (1e-8 * cov.trace() / p as f64).max(1e-300);
    let mut r = cov.clone();
    for i in 0..p {
        r[(i, i)] += eps;
    }
    r
}

/// Leading canonical correlation of two genes over the healthy cohort, with
/// its direction vectors. Diagnostic only.
pub fn cca_directions(x: &GeneReference, y: &GeneReference) -> Result<CanonicalCorrelation> {
    if x.n_healthy() != y.n_healthy() {
        return Err(Error::Dimension("references built from different healthy cohorts".into()));
    }
    let (p, q) = (x.n_loci(), y.n_loci());
    let lx = cholesky(&ridge(&x.moments.cov))?;
    let ly = cholesky(&ridge(&y.moments.cov))?;
    let sxy = x.cross_covariance(y);
    // whitened M = Lx^-1 S_XY Ly^-T, built from rows of S_XY
    let mut z = Matrix::zeros(p, q);
    for a in 0..p {
        let row = forward_sub(&ly, sxy.row(a));
        z.row_mut(a).copy_from_slice(&row);
    }
    let mut m = Matrix::zeros(p, q);
    for b in 0..q {
        let col: Vec<f64> = (0..p).map(|a| z[(a, b)]).collect();
        let w = forward_sub(&lx, &col);
        for a in 0..p {
            m[(a, b)] = w[a];
        }
    }
    let mmt = m.matmul(&m.transpose())?;
    let eig = symmetric_eigen(&mmt)?;
    let s = sqrt(eig.values[0].max(0.0));
    let u: Vec<f64> = (0..p).map(|r| eig.vectors[(r, 0)]).collect();
    let v: Vec<f64> = if s > 0.0 {
        (0..q).map(|b| (0..p).map(|a| m[(a, b)] * u[a]).sum::<f64>() / s).collect()
    } else {
        let mut e = vec![0.0; q];
        e[0] = 1.0;
        e
    };
    Ok(CanonicalCorrelation {
        correlation: s.clamp(0.0, 1.0),
        a: backward_sub_transposed(&lx, &u),
        b: backward_sub_transposed(&ly, &v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(gene: &str, rows: &[&[f64]]) -> GeneReference {
        let p = rows.len();
        let n = rows[0].len();
        let m = Matrix::from_fn(p, n, |l, k| rows[l][k]);
        GeneReference::from_healthy_block(gene, &m).unwrap()
    }

    #[test]
    fn identical_samples_give_zero_covariance() {
        let r = reference("g", &[&[0.3, 0.3], &[0.7, 0.7]]);
        assert!(r.moments.cov.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_probe_mean() {
        let r = reference("g", &[&[0.5, 0.5, 0.5], &[0.1, 0.2, 0.6]]);
        assert_eq!(r.moments.mean[0], 0.5);
    }

    #[test]
    fn covariance_matches_double_loop() {
        // integers chosen by hand: 2 loci, 3 samples
        let rows: [&[f64]; 2] = [&[1.0, 2.0, 6.0], &[4.0, 0.0, 2.0]];
        let r = reference("g", &rows);
        let mean = [3.0, 2.0];
        for a in 0..2 {
            for b in 0..2 {
                let s: f64 = rows[a].iter().zip(rows[b]).map(|(x, y)| (x - mean[a]) * (y - mean[b])).sum();
                assert!((r.moments.cov[(a, b)] - s / 3.0).abs() < 1e-15);
            }
        }
        // centered rows have zero mean
        for l in 0..2 {
            assert!(r.block.centered.row(l).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn same_gene_same_profile_is_one() {
        let r = reference("g", &[&[0.1, 0.4, 0.3, 0.9], &[0.2, 0.1, 0.5, 0.4]]);
        let xk = [0.8, 0.1];
        let it = interaction_measure(&r, &r, &xk, &xk).unwrap();
        assert!(!it.degenerate);
        assert!((it.rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_profile_is_degenerate() {
        let r = reference("g", &[&[0.1, 0.4, 0.3, 0.9], &[0.2, 0.1, 0.5, 0.4]]);
        let it = interaction_measure(&r, &r, &r.moments.mean.clone(), &[0.3, 0.3]).unwrap();
        assert_eq!(it, Interaction { rho: 0.0, degenerate: true });
    }

    #[test]
    fn dimension_mismatch_errors() {
        let r = reference("g", &[&[0.1, 0.4, 0.3], &[0.2, 0.1, 0.5]]);
        assert!(matches!(interaction_measure(&r, &r, &[0.1], &[0.1, 0.2]), Err(Error::Dimension(_))));
    }

    #[test]
    fn cca_of_identical_genes_is_one() {
        let r = reference("g", &[&[0.1, 0.4, 0.3, 0.9, 0.5], &[0.2, 0.1, 0.5, 0.4, 0.45]]);
        let c = cca_directions(&r, &r).unwrap();
        assert!((c.correlation - 1.0).abs() < 1e-6);
        let cos = dot(&c.a, &c.b) / (sqrt(dot(&c.a, &c.a)) * sqrt(dot(&c.b, &c.b)));
        assert!((cos.abs() - 1.0).abs() < 1e-6);
    }
}
