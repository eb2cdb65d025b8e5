//! Empirical-Bayes edge inference on the field of per-pair Wald statistics.
//!
//! Each statistic is modelled as `z ~ N(mu, 1)` with the spike-and-Laplace
//! prior `(1 - w) δ(mu) + w γ(mu | a)`, `γ(mu | a) = (a/2) exp(-a|mu|)`.
//! A weight `w_i` is fitted per gene by marginal maximum likelihood over its
//! row of statistics, and the pair `(i, j)` becomes an edge when the two
//! posterior medians (one under `w_i`, one under `w_j`) agree in sign.
//!
//! Everything is evaluated through `log(g/φ)` so that no intermediate
//! overflows for `|z|` up to several hundred.

use alloc::format;
use alloc::vec::Vec;

use libm::{exp, log, sqrt};

use crate::error::{Error, Result};
use crate::pairs::{pair_count, pair_index};
use crate::special::{log_add_exp, log_mills, log_norm_cdf, log_norm_pdf, norm_cdf, norm_quantile};

/// Default Laplace scale.
pub const DEFAULT_LAPLACE_SCALE: f64 = 0.5;
const WEIGHT_TOL: f64 = 1e-7;

/// `ln(g(z)/φ(z))`.
pub fn log_marginal_ratio(z: f64, a: f64) -> f64 {
    log(0.5 * a) + log_add_exp(log_mills(z - a), log_mills(-z - a))
}

/// `g(z)/φ(z) - 1`.
pub fn beta_laplace(z: f64, a: f64) -> f64 {
    libm::expm1(log_marginal_ratio(z, a))
}

/// Convolution of the Laplace(a) density with the standard normal density:
/// `g(z) = (a/2) e^{a²/2} [e^{-az} Φ(z-a) + e^{az} Φ(-z-a)]`.
pub fn laplace_gauss_marginal(z: f64, a: f64) -> f64 {
    exp(log_norm_pdf(z) + log_marginal_ratio(z, a))
}

/// Derivative contribution `β/(1 + wβ)` of one statistic to the marginal
/// log-likelihood in `w`.
fn score_term(lr: f64, w: f64) -> f64 {
    if lr > 30.0 {
        1.0 / (w + crate::special::inv_expm1(lr))
    } else {
        let b = libm::expm1(lr);
        b / (1.0 + w * b)
    }
}

/// Sum over a row of `log((1-w)φ(z) + w g(z))`.
pub fn marginal_loglik(z_row: &[f64], w: f64, a: f64) -> f64 {
    z_row
        .iter()
        .map(|&z| {
            let lr = log_marginal_ratio(z, a);
            let mix = if w >= 1.0 {
                lr
            } else {
                log_add_exp(log(1.0 - w), log(w) + lr)
            };
            log_norm_pdf(z) + mix
        })
        .sum()
}

/// Prior weight whose posterior-median threshold equals `t`.
pub fn weight_from_threshold(t: f64, a: f64) -> f64 {
    let ratio = a * exp(log_mills(t - a));
    let denom = ratio - beta_laplace(t, a);
    if denom <= 1.0 {
        1.0
    } else {
        1.0 / denom
    }
}

/// Posterior-median threshold: the largest `|z|` mapped to exactly zero.
pub fn threshold_from_weight(w: f64, a: f64) -> f64 {
    if w >= 1.0 {
        return 0.0;
    }
    // weight_from_threshold is decreasing in t
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while weight_from_threshold(hi, a) > w {
        hi *= 2.0;
        if hi > 1e3 {
            return hi;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if weight_from_threshold(mid, a) > w {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Lower bound on the per-gene weight: the weight whose threshold is the
/// universal threshold `sqrt(2 ln n)` for a row of length `n`.
pub fn weight_lower_bound(n: usize, a: f64) -> f64 {
    let t = sqrt(2.0 * log(n.max(1) as f64));
    weight_from_threshold(t, a)
}

/// Median of the posterior of `mu` given `z` under weight `w`.
pub fn posterior_median(z: f64, w: f64, a: f64) -> f64 {
    if z == 0.0 || w <= 0.0 {
        return 0.0;
    }
    let sign = z.signum();
    let x = z.abs();
    let xma = x - a;
    // P(mu > m | z) = 1/2 reduces to Φ(x - a - m) = zz with
    // zz = (1-w)φ(x-a)/(a w) + Φ(x-a)/2 + e^{2ax} Φ(-x-a)/2.
    let zz = if w >= 1.0 {
        0.5 * norm_cdf(xma) + 0.5 * exp(2.0 * a * x + log_norm_cdf(-x - a))
    } else {
        exp(log(1.0 - w) - log(a * w) + log_norm_pdf(xma))
            + 0.5 * norm_cdf(xma)
            + 0.5 * exp(2.0 * a * x + log_norm_cdf(-x - a))
    };
    if zz >= 1.0 {
        return 0.0;
    }
    let m = xma - norm_quantile(zz);
    sign * m.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeWeight {
    pub gene: usize,
    pub weight: f64,
    pub loglik: f64,
}

/// Marginal maximum-likelihood weight for one gene's row of statistics,
/// restricted to `[weight_lower_bound(n), 1]`.
pub fn estimate_node_weight(gene: usize, z_row: &[f64], a: f64) -> Result<NodeWeight> {
    if z_row.is_empty() {
        return Err(Error::InvalidInput(format!("gene {gene}: empty row of statistics")));
    }
    let lo_bound = weight_lower_bound(z_row.len(), a);
    let ratios: Vec<f64> = z_row.iter().map(|&z| log_marginal_ratio(z, a)).collect();
    let derivative = |w: f64| ratios.iter().map(|&lr| score_term(lr, w)).sum::<f64>();
    // the objective is concave in w; bisect on its derivative
    let weight = if derivative(lo_bound) <= 0.0 {
        lo_bound
    } else if derivative(1.0) >= 0.0 {
        1.0
    } else {
        let (mut lo, mut hi) = (lo_bound, 1.0);
        while hi - lo >= WEIGHT_TOL {
            let mid = 0.5 * (lo + hi);
            if derivative(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(NodeWeight { gene, weight, loglik: marginal_loglik(z_row, weight, a) })
}

/// Per-pair Wald statistics over `m` genes, flat pair-indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldField {
    m: usize,
    z: Vec<f64>,
    theta: Vec<f64>,
    converged: Vec<bool>,
}

impl WaldField {
    /// Nonconverged pairs are stored with `z = theta = 0`.
    pub fn new(m: usize, z: Vec<f64>, theta: Vec<f64>, converged: Vec<bool>) -> Result<Self> {
        let n = pair_count(m);
        if z.len() != n || theta.len() != n || converged.len() != n {
            return Err(Error::Dimension(format!("wald field over {m} genes needs {n} pairs")));
        }
        let mut f = WaldField { m, z, theta, converged };
        for k in 0..n {
            if !f.converged[k] || !f.z[k].is_finite() {
                f.converged[k] = false;
                f.z[k] = 0.0;
                f.theta[k] = 0.0;
            }
        }
        Ok(f)
    }

    pub fn n_genes(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z(&self, i: usize, j: usize) -> f64 {
        self.z[pair_index(self.m, i, j)]
    }

    pub fn theta(&self, i: usize, j: usize) -> f64 {
        self.theta[pair_index(self.m, i, j)]
    }

    pub fn converged(&self, i: usize, j: usize) -> bool {
        self.converged[pair_index(self.m, i, j)]
    }

    pub fn z_values(&self) -> &[f64] {
        &self.z
    }

    pub fn theta_values(&self) -> &[f64] {
        &self.theta
    }

    pub fn converged_flags(&self) -> &[bool] {
        &self.converged
    }

    /// All `z_ij`, `j != i`, in gene order.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.m).filter(|&j| j != i).map(|j| self.z(i, j)).collect()
    }
}

/// Weights for every gene of the field.
pub fn estimate_node_weights(field: &WaldField, a: f64) -> Result<Vec<NodeWeight>> {
    (0..field.n_genes()).map(|i| estimate_node_weight(i, &field.row(i), a)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkEdge {
    pub i: usize,
    pub j: usize,
    pub z: f64,
    pub theta: f64,
    pub mu_ij: f64,
    pub mu_ji: f64,
}

/// Symmetric binary prognostic network, stored as an ordered edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct PrognosticNetwork {
    pub m: usize,
    pub edges: Vec<NetworkEdge>,
}

impl PrognosticNetwork {
    pub fn density(&self) -> f64 {
        let pairs = pair_count(self.m);
        if pairs == 0 {
            0.0
        } else {
            self.edges.len() as f64 / pairs as f64
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search_by(|e| (e.i, e.j).cmp(&(i, j))).is_ok()
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<&NetworkEdge> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search_by(|e| (e.i, e.j).cmp(&(i, j))).ok().map(|k| &self.edges[k])
    }
}

/// Edge decision for one pair given both endpoint weights.
pub fn pair_edge(i: usize, j: usize, z: f64, theta: f64, w_i: f64, w_j: f64, a: f64) -> Option<NetworkEdge> {
    let mu_ij = posterior_median(z, w_i, a);
    let mu_ji = posterior_median(z, w_j, a);
    let agree = (mu_ij > 0.0 && mu_ji > 0.0) || (mu_ij < 0.0 && mu_ji < 0.0);
    agree.then_some(NetworkEdge { i, j, z, theta, mu_ij, mu_ji })
}

/// Sign-agreement adjacency over the whole field.
pub fn build_adjacency(field: &WaldField, weights: &[NodeWeight], a: f64) -> Result<PrognosticNetwork> {
    let m = field.n_genes();
    if weights.len() != m || weights.iter().enumerate().any(|(k, w)| w.gene != k) {
        return Err(Error::Dimension(format!("need one weight per gene for {m} genes")));
    }
    let mut edges = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            if !field.converged(i, j) {
                continue;
            }
            if let Some(e) =
                pair_edge(i, j, field.z(i, j), field.theta(i, j), weights[i].weight, weights[j].weight, a)
            {
                edges.push(e);
            }
        }
    }
    Ok(PrognosticNetwork { m, edges })
}
