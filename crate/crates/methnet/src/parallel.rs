//! Worker-pool execution of the pair stage. Every parallel map collects in
//! input order, so results do not depend on the worker count.

use methnet_core::data::MethylationDataset;
use methnet_core::ebayes::{estimate_node_weight, NodeWeight, WaldField};
use methnet_core::interaction::{CohortProjections, HealthyReference};
use methnet_core::pairs::pair_range;
use methnet_core::wald::{pair_wald, PairDesign, PairWald};
use rayon::prelude::*;

use crate::error::{Error, Result};

// pairs per parallel work item inside a chunk
const SUB_CHUNK: usize = 512;

/// Runs `f` on a pool of `workers` threads (rayon's default when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    let pool = b.build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn project_samples(
    reference: &HealthyReference,
    d: &MethylationDataset,
    samples: &[usize],
) -> Result<CohortProjections> {
    let genes = (0..reference.n_genes())
        .into_par_iter()
        .map(|g| reference.project_gene(d, g, samples))
        .collect::<methnet_core::Result<Vec<_>>>()?;
    Ok(CohortProjections { genes, n_samples: samples.len(), n_healthy: reference.n_healthy() })
}

fn sub_ranges(start: usize, end: usize) -> Vec<(usize, usize)> {
    (start..end).step_by(SUB_CHUNK).map(|s| (s, (s + SUB_CHUNK).min(end))).collect()
}

/// Interaction series of pairs `start..end`, concatenated pair-major.
pub fn interaction_series(proj: &CohortProjections, start: usize, end: usize) -> Vec<f64> {
    let m = proj.n_genes();
    sub_ranges(start, end)
        .into_par_iter()
        .map(|(s, e)| {
            let mut out = Vec::with_capacity((e - s) * proj.n_samples);
            for (i, j) in pair_range(m, s, e) {
                out.extend(proj.pair_series(i, j));
            }
            out
        })
        .collect::<Vec<_>>()
        .concat()
}

/// Cox fit per pair over concatenated series of `design`'s cohort length.
pub fn wald_chunk(design: &PairDesign, series: &[f64], n_samples: usize) -> Vec<PairWald> {
    series.par_chunks(n_samples.max(1)).map(|s| pair_wald(design, s)).collect()
}

pub fn node_weights(field: &WaldField, a: f64) -> Result<Vec<NodeWeight>> {
    Ok((0..field.n_genes())
        .into_par_iter()
        .map(|i| estimate_node_weight(i, &field.row(i), a))
        .collect::<methnet_core::Result<Vec<_>>>()?)
}
