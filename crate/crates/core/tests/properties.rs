use methnet_core::community::{adjusted_rand_index, spectral_partition, SparseGraph};
use methnet_core::data::{filter_probes, knn_impute, Cohort, MethylationDataset, ProbeRow};
use methnet_core::ebayes::{posterior_median, threshold_from_weight, weight_from_threshold};
use methnet_core::interaction::{interaction_measure, GeneReference};
use methnet_core::linalg::Matrix;
use methnet_core::oncomarker::{classify, median, MarkerModel};
use methnet_core::survival::{cox_fit, SurvivalData};
use proptest::prelude::*;

fn gene(p: usize, n_h: usize, vals: &[f64]) -> GeneReference {
    GeneReference::from_healthy_block("g", &Matrix::from_vec(p, n_h, vals[..p * n_h].to_vec()).unwrap()).unwrap()
}

/// Loci counts `p, q`, healthy size `n`, healthy blocks and one tumour profile per gene.
type PairCase = (usize, usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

fn pair_case() -> impl Strategy<Value = PairCase> {
    (1usize..=6, 1usize..=6, 3usize..=10).prop_flat_map(|(p, q, n)| {
        (
            Just(p),
            Just(q),
            Just(n),
            prop::collection::vec(0.0f64..1.0, p * n),
            prop::collection::vec(0.0f64..1.0, q * n),
            prop::collection::vec(0.0f64..1.0, p),
            prop::collection::vec(0.0f64..1.0, q),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn interaction_symmetric_and_bounded((p, q, n, hx, hy, xk, yk) in pair_case()) {
        let (x, y) = (gene(p, n, &hx), gene(q, n, &hy));
        let a = interaction_measure(&x, &y, &xk, &yk).unwrap();
        let b = interaction_measure(&y, &x, &yk, &xk).unwrap();
        prop_assert!(a.rho.abs() <= 1.0);
        prop_assert!((a.rho - b.rho).abs() <= 1e-12);
        prop_assert_eq!(a.degenerate, b.degenerate);
    }

    #[test]
    fn interaction_invariant_to_gene_scale((p, q, n, hx, hy, xk, yk) in pair_case(), c in 0.1f64..10.0) {
        let (x, y) = (gene(p, n, &hx), gene(q, n, &hy));
        let hx2: Vec<f64> = hx.iter().map(|v| v * c).collect();
        let xk2: Vec<f64> = xk.iter().map(|v| v * c).collect();
        let a = interaction_measure(&x, &y, &xk, &yk).unwrap();
        let b = interaction_measure(&gene(p, n, &hx2), &y, &xk2, &yk).unwrap();
        if !a.degenerate && !b.degenerate {
            prop_assert!((a.rho - b.rho).abs() <= 1e-9);
        }
    }

    #[test]
    fn interaction_invariant_to_locus_order((p, q, n, hx, hy, xk, yk) in pair_case()) {
        // reverse the locus order of gene x
        let rev: Vec<f64> = (0..p).rev().flat_map(|l| hx[l * n..(l + 1) * n].to_vec()).collect();
        let xk_rev: Vec<f64> = xk.iter().rev().copied().collect();
        let (x, y) = (gene(p, n, &hx), gene(q, n, &hy));
        let a = interaction_measure(&x, &y, &xk, &yk).unwrap();
        let b = interaction_measure(&gene(p, n, &rev), &y, &xk_rev, &yk).unwrap();
        prop_assert!((a.rho - b.rho).abs() <= 1e-10);
    }

    #[test]
    fn posterior_median_shrinks_and_is_odd(z in -40.0f64..40.0, w in 0.001f64..1.0) {
        let m = posterior_median(z, w, 0.5);
        prop_assert!(m.abs() <= z.abs());
        prop_assert!(m == 0.0 || m.signum() == z.signum());
        prop_assert_eq!(posterior_median(-z, w, 0.5), -m);
    }

    #[test]
    fn posterior_median_monotone_in_z(z in -20.0f64..20.0, dz in 0.0f64..3.0, w in 0.001f64..1.0) {
        prop_assert!(posterior_median(z + dz, w, 0.5) >= posterior_median(z, w, 0.5) - 1e-12);
    }

    #[test]
    fn posterior_median_zero_inside_threshold(w in 0.001f64..0.99, frac in 0.0f64..0.98) {
        let t = threshold_from_weight(w, 0.5);
        prop_assert_eq!(posterior_median(frac * t, w, 0.5), 0.0);
    }

    #[test]
    fn threshold_decreasing_in_weight(w in 0.001f64..0.9, dw in 0.001f64..0.09) {
        prop_assert!(threshold_from_weight(w + dw, 0.5) <= threshold_from_weight(w, 0.5) + 1e-10);
    }

    #[test]
    fn threshold_inverts_weight(t in 0.5f64..6.0) {
        let w = weight_from_threshold(t, 0.5);
        if w < 1.0 {
            prop_assert!((threshold_from_weight(w, 0.5) - t).abs() < 1e-8);
        }
    }

    #[test]
    fn classification_order_preserving(scores in prop::collection::vec(-5.0f64..5.0, 2..30), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let t = median(&scores).unwrap();
        let model = |t| MarkerModel { community: 0, genes: vec![], edges: vec![], threshold: Some(t), n_train: 2 };
        let (m1, m2) = (model(t), model(a * t + b));
        for &s in &scores {
            prop_assert_eq!(classify(&m1, s).unwrap(), classify(&m2, a * s + b).unwrap());
        }
    }

    #[test]
    fn median_matches_sort(values in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let mut v = values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let expected = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        prop_assert_eq!(median(&values).unwrap(), expected);
    }
}

fn cox_case() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>)> {
    (8usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec((1u32..20).prop_map(f64::from), n),
            prop::collection::vec(prop::bool::weighted(0.7), n),
            prop::collection::vec(-2.0f64..2.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cox_scaling_equivariant((t, e, x) in cox_case(), c in 0.2f64..5.0) {
        prop_assume!(e.iter().any(|&v| v));
        let fit = cox_fit(&SurvivalData::univariate(t.clone(), e.clone(), x.clone()).unwrap()).unwrap();
        prop_assume!(fit.converged && fit.beta[0].abs() < 5.0);
        let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
        let fs = cox_fit(&SurvivalData::univariate(t, e, xs).unwrap()).unwrap();
        prop_assert!(fs.converged);
        prop_assert!((fs.beta[0] * c - fit.beta[0]).abs() < 1e-6 * (1.0 + fit.beta[0].abs()));
        prop_assert!((fs.z[0] - fit.z[0]).abs() < 1e-6 * (1.0 + fit.z[0].abs()));
        prop_assert!((fs.loglik - fit.loglik).abs() < 1e-8 * (1.0 + fit.loglik.abs()));
    }

    #[test]
    fn cox_invariant_to_row_order((t, e, x) in cox_case()) {
        prop_assume!(e.iter().any(|&v| v));
        let fit = cox_fit(&SurvivalData::univariate(t.clone(), e.clone(), x.clone()).unwrap()).unwrap();
        prop_assume!(fit.converged);
        let rev = |v: &Vec<f64>| v.iter().rev().copied().collect::<Vec<_>>();
        let er: Vec<bool> = e.iter().rev().copied().collect();
        let fr = cox_fit(&SurvivalData::univariate(rev(&t), er, rev(&x)).unwrap()).unwrap();
        prop_assert!((fr.beta[0] - fit.beta[0]).abs() < 1e-8 * (1.0 + fit.beta[0].abs()));
    }
}

fn dataset(rows: Vec<Vec<f64>>) -> MethylationDataset {
    let n = rows[0].len();
    let probes = rows
        .into_iter()
        .enumerate()
        .map(|(i, values)| ProbeRow { probe_id: format!("p{i}"), gene: format!("g{}", i / 2), values })
        .collect();
    MethylationDataset::from_probe_rows(probes, (0..n).map(|s| format!("s{s}")).collect(), vec![Cohort::Healthy; n])
        .unwrap()
}

fn sparse_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8, 4usize..12).prop_flat_map(|(p, n)| {
        prop::collection::vec(
            prop::collection::vec(prop_oneof![4 => 0.0f64..1.0, 1 => Just(f64::NAN)], n),
            p,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_idempotent(rows in sparse_rows(), cov in 0.5f64..1.0) {
        let d = dataset(rows);
        let once = filter_probes(&d, cov, 0.05, None).unwrap();
        let twice = filter_probes(&once, cov, 0.05, None).unwrap();
        prop_assert_eq!(once.probe_rows().len(), twice.probe_rows().len());
        for (a, b) in once.probe_rows().iter().zip(twice.probe_rows()) {
            prop_assert_eq!(&a.probe_id, &b.probe_id);
        }
    }

    #[test]
    fn knn_keeps_observed_bits(rows in sparse_rows(), k in 1usize..6) {
        prop_assume!(rows.iter().all(|r| r.iter().any(|v| !v.is_nan())));
        let d = dataset(rows);
        let imp = knn_impute(&d, k).unwrap();
        prop_assert!(!imp.has_missing());
        for (a, b) in d.probe_rows().iter().zip(imp.probe_rows()) {
            for (x, y) in a.values.iter().zip(&b.values) {
                if !x.is_nan() {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}

fn two_communities(perm_seed: u64) -> (SparseGraph, Vec<usize>) {
    // two dense 12-node groups with a few bridges, nodes listed in a permuted order
    let n = 24;
    let mut order: Vec<usize> = (0..n).collect();
    let mut s = perm_seed;
    for i in (1..n).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        order.swap(i, (s >> 33) as usize % (i + 1));
    }
    let truth: Vec<usize> = order.iter().map(|&v| v / 12).collect();
    let mut pos = vec![0; n];
    for (i, &v) in order.iter().enumerate() {
        pos[v] = i;
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let same = a / 12 == b / 12;
            if (same && (a + b) % 4 != 0) || (!same && (a, b) == (0, 12)) || (!same && (a, b) == (5, 20)) {
                edges.push((pos[a].min(pos[b]), pos[a].max(pos[b])));
            }
        }
    }
    (SparseGraph::with_nodes(n, edges).unwrap(), truth)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn partition_independent_of_node_order(perm in any::<u64>(), seed in 0u64..1000) {
        let (g, truth) = two_communities(perm);
        let a = spectral_partition(&g, 2, seed).unwrap();
        prop_assert_eq!(adjusted_rand_index(&a.labels, &truth), 1.0);
    }
}
