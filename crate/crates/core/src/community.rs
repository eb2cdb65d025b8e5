//! Community detection on the prognostic network: largest connected
//! component, a bandwidth rule for the block count, and regularized spectral
//! clustering (orthogonal iteration plus k-means++).

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{round, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ebayes::PrognosticNetwork;
use crate::error::{Error, Result};
use crate::linalg::{dot, symmetric_eigen, Matrix};

pub const DEFAULT_BANDWIDTH_MULTIPLIER: f64 = 2.0;
pub const EIGEN_TOL: f64 = 1e-8;
pub const EIGEN_MAX_ITERATIONS: usize = 5000;
pub const KMEANS_RESTARTS: usize = 25;
const KMEANS_MAX_ITERATIONS: usize = 300;

/// Undirected simple graph. `nodes[i]` is the external id (gene index) of
/// local node `i`; edges are local index pairs `(i, j)` with `i < j`, sorted
/// and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
    degree: Vec<usize>,
}

impl SparseGraph {
    /// Builds a graph over `nodes` from local edges in any order. Self-loops
    /// are rejected; duplicates and orientation are normalized away.
    pub fn new(nodes: Vec<usize>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = nodes.len();
        let mut list = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            list.push(if a < b { (a, b) } else { (b, a) });
        }
        list.sort_unstable();
        list.dedup();
        let mut degree = vec![0; n];
        for &(a, b) in &list {
            degree[a] += 1;
            degree[b] += 1;
        }
        Ok(SparseGraph { nodes, edges: list, degree })
    }

    /// Graph over nodes `0..m` with ids equal to local indices.
    pub fn with_nodes(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new((0..m).collect(), edges)
    }

    pub fn from_network(net: &PrognosticNetwork) -> Result<Self> {
        Self::with_nodes(net.m, net.edges.iter().map(|e| (e.i, e.j)))
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self) -> &[usize] {
        &self.degree
    }

    pub fn mean_degree(&self) -> f64 {
        if self.nodes.is_empty() {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.nodes.len() as f64
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let e = if a < b { (a, b) } else { (b, a) };
        self.edges.binary_search(&e).is_ok()
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Subgraph induced by the given local nodes (ascending order kept).
    pub fn induced(&self, keep: &[usize]) -> SparseGraph {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut map = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let nodes = keep.iter().map(|&i| self.nodes[i]).collect();
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| map[a] != usize::MAX && map[b] != usize::MAX)
            .map(|&(a, b)| (map[a], map[b]));
        SparseGraph::new(nodes, edges).expect("induced subgraph of a valid graph")
    }

    /// Connected components as sorted local node lists, ordered by their
    /// smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.neighbours();
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }
}

/// Induced subgraph on the largest connected component. Among equally large
/// components the one holding the smallest node index wins.
pub fn largest_component(g: &SparseGraph) -> SparseGraph {
    let comps = g.components();
    // components come ordered by smallest member, so the first maximum wins
    let mut best: Option<&Vec<usize>> = None;
    for c in &comps {
        if best.is_none_or(|b| c.len() > b.len()) {
            best = Some(c);
        }
    }
    match best {
        Some(c) => g.induced(c),
        None => g.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockCount {
    pub n: usize,
    pub bandwidth: usize,
    pub k: usize,
    pub multiplier: f64,
    pub overridden: bool,
}

/// Bandwidth `h = max(2, round(c·√n))` and block count `K = max(1, ⌊n/h⌋)`.
pub fn select_block_count(n: usize, multiplier: f64) -> BlockCount {
    let h = round(multiplier * sqrt(n as f64)).max(2.0) as usize;
    BlockCount { n, bandwidth: h, k: (n / h).max(1), multiplier, overridden: false }
}

/// As [`select_block_count`], with an optional direct override of `K`.
pub fn block_count_with_override(n: usize, multiplier: f64, k_override: Option<usize>) -> BlockCount {
    let mut bc = select_block_count(n, multiplier);
    if let Some(k) = k_override {
        bc.k = k;
        bc.overridden = true;
    }
    bc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityAssignment {
    /// External node ids in the order of the partitioned graph.
    pub nodes: Vec<usize>,
    /// Zero-based block per node; written one-based in files.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Bandwidth that produced `k`, when it came from the bandwidth rule.
    pub bandwidth: Option<usize>,
    pub tau: f64,
    pub seed: u64,
}

impl CommunityAssignment {
    /// External ids per block.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (&node, &l) in self.nodes.iter().zip(&self.labels) {
            out[l].push(node);
        }
        out
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn label_of(&self, node: usize) -> Option<usize> {
        self.nodes.iter().position(|&x| x == node).map(|i| self.labels[i])
    }
}

/// Sparse symmetric operator `D_τ^{-1/2} A D_τ^{-1/2}`.
struct RegularizedLaplacian {
    adj: Vec<Vec<usize>>,
    scale: Vec<f64>,
}

impl RegularizedLaplacian {
    fn new(g: &SparseGraph, tau: f64) -> Self {
        let scale = g.degree().iter().map(|&d| 1.0 / sqrt(d as f64 + tau)).collect();
        RegularizedLaplacian { adj: g.neighbours(), scale }
    }

    /// `out = L v` for a column-major block of `cols` vectors of length n.
    fn apply(&self, v: &[f64], cols: usize, out: &mut [f64]) {
        let n = self.adj.len();
        out.iter_mut().for_each(|x| *x = 0.0);
        for c in 0..cols {
            let vc = &v[c * n..(c + 1) * n];
            let oc = &mut out[c * n..(c + 1) * n];
            for (i, o) in oc.iter_mut().enumerate() {
                let s: f64 = self.adj[i].iter().map(|&j| self.scale[j] * vc[j]).sum();
                *o = self.scale[i] * s;
            }
        }
    }
}

fn orthonormalize(v: &mut [f64], n: usize, cols: usize) {
    for c in 0..cols {
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for prev in 0..c {
                let (head, tail) = v.split_at_mut(c * n);
                let p = &head[prev * n..(prev + 1) * n];
                let cur = &mut tail[..n];
                let d = dot(p, cur);
                for (x, &y) in cur.iter_mut().zip(p) {
                    *x -= d * y;
                }
            }
        }
        let col = &mut v[c * n..(c + 1) * n];
        let norm = sqrt(dot(col, col));
        if norm > 1e-300 {
            col.iter_mut().for_each(|x| *x /= norm);
        } else {
            // collapsed direction: restart from a unit vector orthogonal enough
            col.iter_mut().for_each(|x| *x = 0.0);
            col[c % n] = 1.0;
        }
    }
}

/// Leading eigenpairs of the regularized Laplacian (largest algebraic
/// eigenvalues), by orthogonal iteration on `L + I` with Rayleigh-Ritz
/// extraction and a few guard vectors. Returns `(values, n×k vectors)`.
fn leading_eigenvectors(
    op: &RegularizedLaplacian,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Matrix)> {
    let n = op.adj.len();
    let s = (k + k.max(8)).min(n);
    let mut v: Vec<f64> = (0..n * s).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    orthonormalize(&mut v, n, s);
    let mut lv = vec![0.0; n * s];
    let mut residual = f64::INFINITY;
    for _iter in 0..EIGEN_MAX_ITERATIONS {
        op.apply(&v, s, &mut lv);
        // Rayleigh-Ritz on the current basis
        let h = Matrix::from_fn(s, s, |a, b| dot(&v[a * n..(a + 1) * n], &lv[b * n..(b + 1) * n]));
        let h = Matrix::from_fn(s, s, |a, b| 0.5 * (h[(a, b)] + h[(b, a)]));
        let eig = symmetric_eigen(&h)?;
        let mut ritz = vec![0.0; n * s];
        let mut lritz = vec![0.0; n * s];
        for c in 0..s {
            for r in 0..s {
                let w = eig.vectors[(r, c)];
                if w == 0.0 {
                    continue;
                }
                for i in 0..n {
                    ritz[c * n + i] += w * v[r * n + i];
                    lritz[c * n + i] += w * lv[r * n + i];
                }
            }
        }
        let mut res2 = 0.0;
        for c in 0..k {
            for i in 0..n {
                let d = lritz[c * n + i] - eig.values[c] * ritz[c * n + i];
                res2 += d * d;
            }
        }
        residual = sqrt(res2);
        if residual < EIGEN_TOL || s == n {
            let vectors = Matrix::from_fn(n, k, |i, c| ritz[c * n + i]);
            return Ok((eig.values[..k].to_vec(), vectors));
        }
        // next basis: (L + I) applied to the Ritz vectors
        for idx in 0..n * s {
            v[idx] = lritz[idx] + ritz[idx];
        }
        orthonormalize(&mut v, n, s);
    }
    Err(Error::EigenNotConverged { iterations: EIGEN_MAX_ITERATIONS, residual })
}

/// Scales every nonzero row to unit Euclidean length.
pub fn row_normalize(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let norm = sqrt(dot(row, row));
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    pub wcss: f64,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centroids
}

#[allow(clippy::needless_range_loop)]
fn lloyd(x: &Matrix, mut centroids: Matrix) -> (Vec<usize>, Matrix, f64) {
    let (n, dim, k) = (x.rows(), x.cols(), centroids.rows());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(x.row(i), &centroids);
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, &v) in sums.row_mut(labels[i]).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| {
                        sq_dist(x.row(a), centroids.row(labels[a]))
                            .total_cmp(&sq_dist(x.row(b), centroids.row(labels[b])))
                            .then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    for (s, &v) in sums.row_mut(labels[i]).iter_mut().zip(x.row(i)) {
                        *s -= v;
                    }
                    labels[i] = c;
                    counts[c] = 1;
                    sums.row_mut(c).copy_from_slice(x.row(i));
                    changed = true;
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let wcss = (0..n).map(|i| sq_dist(x.row(i), centroids.row(labels[i]))).sum();
    (labels, centroids, wcss)
}

/// Relabels clusters in order of first appearance.
fn canonical_labels(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect()
}

/// k-means with k-means++ seeding; restart `r` draws from ChaCha8 stream
/// `r + 1` of `seed`. The best restart is chosen by (wcss, restart index).
pub fn kmeans(x: &Matrix, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k-means with k = {k} on {n} points")));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64 + 1);
        let init = kmeans_pp_init(x, k, &mut rng);
        let (labels, centroids, wcss) = lloyd(x, init);
        if best.as_ref().is_none_or(|b| wcss < b.wcss) {
            best = Some(KMeansResult { labels, centroids, wcss, restart: r });
        }
    }
    let mut best = best.expect("at least one restart");
    let relabel = canonical_labels(&best.labels, k);
    let mut order = vec![0; k];
    for (&old, &new) in best.labels.iter().zip(&relabel) {
        order[new] = old;
    }
    best.centroids = Matrix::from_fn(k, x.cols(), |c, d| best.centroids[(order[c], d)]);
    best.labels = relabel;
    Ok(best)
}

/// Row-normalized spectral embedding (n×K) of the regularized Laplacian.
pub fn spectral_embedding(g: &SparseGraph, k: usize, seed: u64) -> Result<Matrix> {
    let n = g.n_nodes();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("{k} blocks requested for {n} nodes")));
    }
    let op = RegularizedLaplacian::new(g, g.mean_degree());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, mut vectors) = leading_eigenvectors(&op, k, &mut rng)?;
    row_normalize(&mut vectors);
    Ok(vectors)
}

/// Regularized spectral clustering into `k` blocks.
pub fn spectral_partition(g: &SparseGraph, k: usize, seed: u64) -> Result<CommunityAssignment> {
    let n = g.n_nodes();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("{k} blocks requested for {n} nodes")));
    }
    let tau = g.mean_degree();
    let labels = if k == 1 {
        vec![0; n]
    } else {
        let emb = spectral_embedding(g, k, seed)?;
        kmeans(&emb, k, KMEANS_RESTARTS, seed)?.labels
    };
    // k-means can legally end with fewer occupied blocks than requested
    let k_used = labels.iter().copied().max().map_or(0, |l| l + 1);
    Ok(CommunityAssignment { nodes: g.nodes().to_vec(), labels, k: k_used, bandwidth: None, tau, seed })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&v| c2(v)).sum();
    let rows: f64 = (0..ka).map(|i| c2((0..kb).map(|j| table[i * kb + j]).sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques(size: usize) -> SparseGraph {
        let mut edges = Vec::new();
        for base in [0, size] {
            for i in 0..size {
                for j in i + 1..size {
                    edges.push((base + i, base + j));
                }
            }
        }
        edges.push((size - 1, size));
        SparseGraph::with_nodes(2 * size, edges).unwrap()
    }

    #[test]
    fn component_tie_prefers_smallest_index() {
        let g = SparseGraph::with_nodes(7, [(4, 5), (5, 6), (4, 6), (0, 1), (1, 2), (0, 2)]).unwrap();
        let c = largest_component(&g);
        assert_eq!(c.nodes(), &[0, 1, 2]);
        assert_eq!(c.n_edges(), 3);
        let empty = SparseGraph::with_nodes(0, []).unwrap();
        assert_eq!(largest_component(&empty).n_nodes(), 0);
    }

    #[test]
    fn rejects_self_loop() {
        assert!(SparseGraph::with_nodes(3, [(1, 1)]).is_err());
    }

    #[test]
    fn block_count_rule() {
        let bc = select_block_count(5668, 2.0);
        assert_eq!((bc.bandwidth, bc.k), (151, 37));
        let bc = select_block_count(4, 2.0);
        assert_eq!((bc.bandwidth, bc.k), (4, 1));
        assert_eq!(block_count_with_override(4, 2.0, Some(7)).k, 7);
    }

    #[test]
    fn splits_two_cliques() {
        let g = two_cliques(10);
        let a = spectral_partition(&g, 2, 3).unwrap();
        let truth: Vec<usize> = (0..20).map(|i| i / 10).collect();
        assert_eq!(a.labels, truth);
        assert_eq!(a.block_sizes(), vec![10, 10]);
    }

    #[test]
    fn single_block() {
        let g = two_cliques(4);
        let a = spectral_partition(&g, 1, 0).unwrap();
        assert!(a.labels.iter().all(|&l| l == 0));
        assert!(spectral_partition(&g, 9, 0).is_err());
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(ari < 0.0);
    }

    #[test]
    fn embedding_rows_unit_norm() {
        let g = two_cliques(6);
        let e = spectral_embedding(&g, 2, 1).unwrap();
        for i in 0..e.rows() {
            let norm = sqrt(dot(e.row(i), e.row(i)));
            assert!((norm - 1.0).abs() < 1e-10);
        }
    }
}
