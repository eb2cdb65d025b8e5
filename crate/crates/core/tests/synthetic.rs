use methnet_core::data::{ClinicalRecord, Cohort};
use methnet_core::interaction::estimate_moments;
use methnet_core::oncomarker::{median, validate_marker, MarkerModel};
use methnet_core::synth::{generate, generate_sbm, PlantedCommunity, PlantedEdge, SynthSpec};
use methnet_core::wald::{pair_wald, PairDesign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(seed: u64) -> SynthSpec {
    serde_json::from_value(serde_json::json!({
        "n_genes": 30,
        "n_train": 200,
        "n_test": 50,
        "seed": seed,
        "planted_communities": [{"genes": [1, 4, 7, 9], "effect": 1.0}],
    }))
    .unwrap()
}

#[test]
fn realized_censoring_near_target() {
    for seed in 0..5 {
        let mut s = spec(seed);
        s.censoring_fraction = 0.4;
        let c = generate(&s).unwrap();
        let events = c.clinical.records().iter().filter(|r| !r.event).count();
        let frac = events as f64 / c.clinical.records().len() as f64;
        assert!((frac - 0.4).abs() <= 0.05, "seed {seed}: censored fraction {frac}");
        assert!((c.truth.realized_censoring - frac).abs() < 1e-12);
    }
}

#[test]
fn cohort_layout_and_ranges() {
    let c = generate(&spec(3)).unwrap();
    let d = &c.methylation;
    assert_eq!(d.n_genes(), 30);
    assert_eq!(d.samples_in(Cohort::Healthy).len(), 60);
    assert_eq!(d.samples_in(Cohort::TumourTrain).len(), 200);
    assert_eq!(d.samples_in(Cohort::TumourTest).len(), 50);
    assert!(!d.has_missing());
    assert!(d.probe_rows().iter().flat_map(|r| r.values.clone()).all(|v| (0.0..=1.0).contains(&v)));
    assert_eq!(c.truth.planted_edges.len(), 6);
    assert!(estimate_moments(d).is_ok());
    let e = c.expression.as_ref().unwrap();
    assert_eq!(e.genes.len(), 30);
    assert_eq!(e.sample_ids.len(), d.n_samples());
}

#[test]
fn generation_is_reproducible() {
    let a = generate(&spec(11)).unwrap();
    let b = generate(&spec(11)).unwrap();
    assert_eq!(a, b);
    let c = generate(&spec(12)).unwrap();
    assert_ne!(a.methylation, c.methylation);
}

#[test]
fn community_spec_rejects_unknown_gene() {
    let mut s = spec(0);
    s.planted_communities.push(PlantedCommunity { genes: vec![2, 30], effect: 1.0 });
    assert!(generate(&s).is_err());
}

#[test]
fn sbm_density_matches_probabilities() {
    let (g, labels) = generate_sbm(200, 2, 0.3, 0.02, 5).unwrap();
    let (mut within, mut between) = (0usize, 0usize);
    for &(a, b) in g.edges() {
        if labels[a] == labels[b] {
            within += 1;
        } else {
            between += 1;
        }
    }
    let pw = within as f64 / (2.0 * 100.0 * 99.0 / 2.0);
    let pb = between as f64 / (100.0 * 100.0);
    assert!((pw - 0.3).abs() < 4.0 * methnet_core::synth::binomial_sd(0.3, 9900));
    assert!((pb - 0.02).abs() < 4.0 * methnet_core::synth::binomial_sd(0.02, 10000));
}

fn exp_draw(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    -(1.0 - rng.random::<f64>()).ln() / rate
}

fn cohort(rng: &mut ChaCha8Rng, n: usize, log_hr: f64) -> (Vec<f64>, Vec<ClinicalRecord>) {
    let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let t = median(&scores).unwrap();
    let records = scores
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let rate = 0.001 * if s > t { log_hr.exp() } else { 1.0 };
            let time = exp_draw(rng, rate);
            let cens = exp_draw(rng, 0.0004);
            ClinicalRecord {
                sample_id: format!("s{k}"),
                time_days: time.min(cens),
                event: time <= cens,
                age: Some(40.0 + 30.0 * rng.random::<f64>()),
                stage: Some(f64::from(rng.random_range(1..=4u8))),
                residual_disease: Some(f64::from(rng.random_range(0..=1u8))),
            }
        })
        .collect();
    (scores, records)
}

fn model(threshold: f64) -> MarkerModel {
    MarkerModel { community: 0, genes: vec![], edges: vec![], threshold: Some(threshold), n_train: 2 }
}

#[test]
fn doubled_hazard_recovers_hazard_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (scores, records) = cohort(&mut rng, 500, 2f64.ln());
    let refs: Vec<&ClinicalRecord> = records.iter().collect();
    let v = validate_marker(&model(median(&scores).unwrap()), &scores, &refs).unwrap();
    let hr = v.univariate.unwrap().hr;
    assert!((1.6..=2.5).contains(&hr), "hr {hr}");
    assert!(v.logrank_p.unwrap() < 1e-4);
    assert_eq!(v.multivariate.len(), 4);
}

#[test]
fn null_score_multivariate_p_roughly_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ps: Vec<f64> = (0..200)
        .map(|_| {
            let (scores, records) = cohort(&mut rng, 120, 0.0);
            let refs: Vec<&ClinicalRecord> = records.iter().collect();
            let v = validate_marker(&model(median(&scores).unwrap()), &scores, &refs).unwrap();
            v.multivariate[0].p
        })
        .collect();
    let below = |c: f64| ps.iter().filter(|&&p| p < c).count() as f64 / ps.len() as f64;
    // binomial sd at n = 200 is about 0.035 near the middle
    assert!((below(0.5) - 0.5).abs() < 0.12, "{}", below(0.5));
    assert!(below(0.05) < 0.12, "{}", below(0.05));
}

#[test]
fn planted_training_p_beats_null() {
    let mut wins = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..40 {
        let (s1, r1) = cohort(&mut rng, 200, 1.0);
        let (s0, r0) = cohort(&mut rng, 200, 0.0);
        let p = |s: &[f64], r: &[ClinicalRecord]| {
            let refs: Vec<&ClinicalRecord> = r.iter().collect();
            validate_marker(&model(median(s).unwrap()), s, &refs).unwrap().univariate.unwrap().p
        };
        if p(&s1, &r1) < p(&s0, &r0) {
            wins += 1;
        }
    }
    assert!(wins >= 38, "{wins}/40");
}

/// Wald statistics of every training pair of a generated cohort.
fn training_z(spec: &SynthSpec) -> Vec<((usize, usize), f64)> {
    let c = generate(spec).unwrap();
    let d = &c.methylation;
    let reference = estimate_moments(d).unwrap();
    let train = d.samples_in(Cohort::TumourTrain);
    let proj = reference.project_samples(d, &train).unwrap();
    let records: Vec<&ClinicalRecord> =
        train.iter().map(|&k| c.clinical.get(&d.sample_ids()[k]).unwrap()).collect();
    let design = PairDesign::new(&records, true).unwrap();
    let m = d.n_genes();
    let mut out = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            out.push(((i, j), pair_wald(&design, &proj.pair_series(i, j)).z));
        }
    }
    out
}

#[test]
fn single_planted_pair_is_strongly_prognostic() {
    let mut hits = 0;
    for seed in 0..50 {
        let s: SynthSpec = serde_json::from_value(serde_json::json!({
            "n_genes": 4,
            "n_train": 300,
            "n_test": 10,
            "seed": 1000 + seed,
            "planted_edges": [PlantedEdge { i: 0, j: 1, effect: 1.0 }],
        }))
        .unwrap();
        let z = training_z(&s).into_iter().find(|(p, _)| *p == (0, 1)).unwrap().1;
        if z.abs() > 4.0 {
            hits += 1;
        }
    }
    assert!(hits >= 45, "{hits}/50 seeds with |z| > 4");
}

#[test]
fn zero_effects_give_null_wald_statistics() {
    let mut zs = Vec::new();
    for seed in 0..3 {
        let s: SynthSpec = serde_json::from_value(serde_json::json!({
            "n_genes": 20,
            "n_train": 150,
            "n_test": 10,
            "seed": 2000 + seed,
            "planted_communities": [{"genes": [0, 3, 6, 9], "effect": 0.0}],
        }))
        .unwrap();
        zs.extend(training_z(&s).into_iter().map(|(_, z)| z));
    }
    let frac = zs.iter().filter(|z| z.abs() > 1.96).count() as f64 / zs.len() as f64;
    // 570 correlated pairs; the nominal rate is 0.05
    assert!(frac < 0.10, "fraction beyond 1.96: {frac}");
    let mean_sq = zs.iter().map(|z| z * z).sum::<f64>() / zs.len() as f64;
    assert!((0.6..1.5).contains(&mean_sq), "mean z^2 {mean_sq}");
}
