//! The staged pipeline. Each stage reads its inputs from artifacts on disk,
//! writes its outputs and records their hashes in the manifest. A stage is
//! reused when its input hash is unchanged, its outputs still verify and no
//! upstream stage was recomputed in this run.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use methnet_core::community::{
    block_count_with_override, largest_component, spectral_partition, BlockCount, CommunityAssignment, SparseGraph,
};
use methnet_core::data::{
    align_cohorts, filter_probes, knn_impute, ClinicalRecord, ClinicalTable, Cohort, MethylationDataset,
};
use methnet_core::ebayes::build_adjacency;
use methnet_core::interaction::{estimate_moments, interaction_from_projections, HealthyReference, Projection};
use methnet_core::oncomarker::{
    concordance_test, expression_interaction, marker_models, prognostic_score, train_threshold, validate_marker,
    ExpressionStats, MarkerEdge, MarkerModel,
};
use methnet_core::pairs::{pair_count, pair_index};
use methnet_core::wald::{field_from_pairs, PairDesign};
use serde_json::{json, Value};

use crate::artifacts::*;
use crate::binfmt::{
    file_sha256, healthy_key, read_moments, write_moments, InteractionTableReader, InteractionTableWriter,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{
    read_clinical, read_detection_p, read_expression, read_json, read_methylation, read_rows, read_samples,
    write_clinical, write_expression, write_json, write_methylation, write_samples,
};
use crate::manifest::{input_hash, outputs_verify, Failure, InputRecord, Manifest, OutputFile, StageRecord};
use crate::parallel;

pub const STAGES: [&str; 13] = [
    "ingest",
    "moments",
    "interaction",
    "wald",
    "weights",
    "adjacency",
    "component",
    "block_count",
    "partition",
    "train_scores",
    "test_scores",
    "validation",
    "concordance",
];

const METHYLATION: &str = "ingest/methylation.csv";
const SAMPLES: &str = "ingest/samples.csv";
const CLINICAL: &str = "ingest/clinical.csv";
const EXPRESSION: &str = "ingest/expression.csv";
const MOMENTS: &str = "moments.bin";
const GENES: &str = "genes.csv";
const INTERACTION: &str = "interaction_train.bin";
const WALD: &str = "wald_field.csv";
const WEIGHTS: &str = "node_weights.csv";
const EDGES: &str = "edges.csv";
const NETWORK_SUMMARY: &str = "network_summary.json";
const COMPONENT: &str = "component.csv";
const BLOCK_COUNT: &str = "block_count.json";
const ASSIGNMENT: &str = "assignment.csv";
const MARKERS: &str = "markers.json";
const SCORES_TRAIN: &str = "scores_train.csv";
const SCORES_TEST: &str = "scores_test.csv";
const REPORT_TRAIN: &str = "report_train.json";
const REPORT_TEST: &str = "report_test.json";
const CONCORDANCE: &str = "concordance.csv";

/// Stages a stage reads from, in the order their presence is checked.
fn dependencies(stage: &str) -> &'static [&'static str] {
    match stage {
        "ingest" => &[],
        "moments" => &["ingest"],
        "interaction" => &["moments", "ingest"],
        "wald" => &["interaction", "moments", "ingest"],
        "weights" => &["wald", "moments"],
        "adjacency" => &["weights", "wald", "moments"],
        "component" => &["adjacency", "moments"],
        "block_count" => &["component"],
        "partition" => &["block_count", "component", "adjacency", "moments"],
        "train_scores" => &["partition", "adjacency", "interaction", "moments", "ingest"],
        "test_scores" => &["train_scores", "moments", "ingest"],
        "validation" => &["train_scores", "test_scores", "ingest"],
        "concordance" => &["train_scores", "moments", "ingest"],
        _ => unreachable!("unknown stage {stage}"),
    }
}

/// Parameters feeding a stage's hash. Worker count and chunk size are
/// excluded: they do not change any output.
fn stage_params(cfg: &RunConfig, stage: &str) -> Value {
    match stage {
        "ingest" => json!({
            "knn_k": cfg.knn_k,
            "min_coverage": cfg.min_coverage,
            "max_detection_p": cfg.max_detection_p,
        }),
        "wald" => json!({ "adjust_covariates": cfg.adjust_covariates }),
        "weights" | "adjacency" => json!({ "laplace_scale": cfg.laplace_scale }),
        "block_count" => json!({ "bandwidth_multiplier": cfg.bandwidth_multiplier, "k_override": cfg.k_override }),
        "partition" => json!({ "seed": cfg.seed }),
        _ => json!({}),
    }
}

fn run_parameters(cfg: &RunConfig) -> Value {
    json!({
        "laplace_scale": cfg.laplace_scale,
        "bandwidth_multiplier": cfg.bandwidth_multiplier,
        "k_override": cfg.k_override,
        "seed": cfg.seed,
        "knn_k": cfg.knn_k,
        "min_coverage": cfg.min_coverage,
        "max_detection_p": cfg.max_detection_p,
        "adjust_covariates": cfg.adjust_covariates,
    })
}

/// Named groups of stages run by the subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slice {
    Ingest,
    Network,
    Communities,
    Score,
    Validate,
    Concordance,
    All,
}

impl Slice {
    pub fn stages(self) -> &'static [&'static str] {
        match self {
            Slice::Ingest => &STAGES[0..2],
            Slice::Network => &STAGES[2..6],
            Slice::Communities => &STAGES[6..9],
            Slice::Score => &STAGES[9..11],
            Slice::Validate => &STAGES[11..12],
            Slice::Concordance => &STAGES[12..13],
            Slice::All => &STAGES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Computed,
    Cached,
    /// Ran but had nothing to do, e.g. concordance without expression data.
    Skipped,
}

impl StageStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StageStatus::Computed => "computed",
            StageStatus::Cached => "cached",
            StageStatus::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub stage: &'static str,
    pub status: StageStatus,
}

struct StageOutput {
    files: Vec<String>,
    summary: Value,
    skipped: bool,
}

impl StageOutput {
    fn new(files: &[&str], summary: Value) -> Self {
        StageOutput { files: files.iter().map(|f| f.to_string()).collect(), summary, skipped: false }
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    out: PathBuf,
    manifest: Manifest,
    recomputed: HashSet<&'static str>,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let mut manifest = Manifest::load(&out)?.unwrap_or_else(|| Manifest::new(cfg.seed, Value::Null));
        manifest.seed = cfg.seed;
        manifest.parameters = run_parameters(&cfg);
        Ok(Pipeline { cfg, out, manifest, recomputed: HashSet::new() })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    /// Runs the stages of `slice` in order on the configured worker pool.
    pub fn run(&mut self, slice: Slice) -> Result<Vec<StageReport>> {
        let workers = self.cfg.workers;
        parallel::with_workers(workers, || self.run_stages(slice.stages()))?
    }

    fn run_stages(&mut self, stages: &[&'static str]) -> Result<Vec<StageReport>> {
        if stages.contains(&"ingest") {
            self.manifest.inputs = self.hash_inputs()?;
        }
        let mut reports = Vec::with_capacity(stages.len());
        for &stage in stages {
            let status = self.run_stage(stage)?;
            reports.push(StageReport { stage, status });
        }
        Ok(reports)
    }

    fn hash_inputs(&self) -> Result<Vec<InputRecord>> {
        self.cfg
            .inputs()
            .into_iter()
            .map(|(role, path)| {
                if !path.is_file() {
                    return Err(Error::Config(format!("input {role} not found: {}", path.display())));
                }
                Ok(InputRecord { role: role.to_string(), sha256: file_sha256(path)? })
            })
            .collect()
    }

    fn run_stage(&mut self, stage: &'static str) -> Result<StageStatus> {
        let deps = dependencies(stage);
        let mut upstream = Vec::with_capacity(deps.len());
        for &d in deps {
            match self.manifest.stage(d) {
                Some(r) if outputs_verify(&self.out, r) => upstream.push(r.clone()),
                _ => return Err(Error::RequiresStage(d.to_string())),
            }
        }
        let params = stage_params(&self.cfg, stage);
        let inputs: &[InputRecord] = if stage == "ingest" { &self.manifest.inputs } else { &[] };
        let refs: Vec<&StageRecord> = upstream.iter().collect();
        let hash = input_hash(stage, &params, &refs, inputs);
        let upstream_dirty = deps.iter().any(|d| self.recomputed.contains(d));
        if let Some(prev) = self.manifest.stage(stage) {
            if prev.input_hash == hash && !upstream_dirty && outputs_verify(&self.out, prev) {
                return Ok(StageStatus::Cached);
            }
        }

        if let Some(prev) = self.manifest.stage(stage).cloned() {
            for o in &prev.outputs {
                let _ = std::fs::remove_file(self.out.join(&o.file));
            }
            self.manifest.stages.retain(|s| s.name != stage);
        }
        let result = match self.compute(stage) {
            Ok(r) => r,
            Err(e) => {
                self.manifest.failure = Some(Failure { stage: stage.to_string(), error: e.to_string() });
                self.manifest.save(&self.out)?;
                return Err(Error::Stage { stage: stage.to_string(), source: Box::new(e) });
            }
        };
        let outputs = result
            .files
            .iter()
            .map(|f| Ok(OutputFile { file: f.clone(), sha256: file_sha256(&self.out.join(f))? }))
            .collect::<Result<Vec<_>>>()?;
        let record = StageRecord {
            name: stage.to_string(),
            input_hash: hash,
            completed: true,
            skipped: result.skipped,
            outputs,
            summary: result.summary,
        };
        self.manifest.upsert(record, &STAGES);
        self.manifest.failure = None;
        self.manifest.save(&self.out)?;
        self.recomputed.insert(stage);
        Ok(if result.skipped { StageStatus::Skipped } else { StageStatus::Computed })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn compute(&self, stage: &str) -> Result<StageOutput> {
        match stage {
            "ingest" => self.ingest(),
            "moments" => self.moments(),
            "interaction" => self.interaction(),
            "wald" => self.wald(),
            "weights" => self.weights(),
            "adjacency" => self.adjacency(),
            "component" => self.component(),
            "block_count" => self.block_count(),
            "partition" => self.partition(),
            "train_scores" => self.train_scores(),
            "test_scores" => self.test_scores(),
            "validation" => self.validation(),
            "concordance" => self.concordance(),
            _ => unreachable!("unknown stage {stage}"),
        }
    }

    fn ingest(&self) -> Result<StageOutput> {
        let m = &self.cfg.methylation;
        let healthy = read_methylation(&m.healthy, Cohort::Healthy)?;
        let train = read_methylation(&m.train, Cohort::TumourTrain)?;
        let test = read_methylation(&m.test, Cohort::TumourTest)?;
        let combined = healthy.concat(&train)?.concat(&test)?;
        let detection = self.cfg.detection_p.as_deref().map(read_detection_p).transpose()?;
        let filtered = filter_probes(&combined, self.cfg.min_coverage, self.cfg.max_detection_p, detection.as_ref())?;
        let imputed = knn_impute(&filtered, self.cfg.knn_k)?;
        let clinical = read_clinical(&self.cfg.clinical)?;
        let expression = self.cfg.expression.as_deref().map(read_expression).transpose()?;
        let study = align_cohorts(&imputed, &clinical, expression.as_ref())?;

        write_methylation(&self.path(METHYLATION), &study.methylation, None)?;
        write_samples(&self.path(SAMPLES), &study.methylation)?;
        let records: Vec<ClinicalRecord> = study.clinical.iter().flatten().cloned().collect();
        write_clinical(&self.path(CLINICAL), &records)?;
        let mut files = vec![METHYLATION, SAMPLES, CLINICAL];
        if let Some(e) = &study.expression {
            write_expression(&self.path(EXPRESSION), e)?;
            files.push(EXPRESSION);
        }
        let d = &study.methylation;
        let summary = json!({
            "n_genes": d.n_genes(),
            "n_probes": d.n_probes(),
            "probes_read": combined.n_probes(),
            "n_healthy": d.samples_in(Cohort::Healthy).len(),
            "n_train": d.samples_in(Cohort::TumourTrain).len(),
            "n_test": d.samples_in(Cohort::TumourTest).len(),
            "incomplete_covariates": study.incomplete_covariates.iter().filter(|&&b| b).count(),
        });
        Ok(StageOutput::new(&files, summary))
    }

    fn load_methylation(&self) -> Result<MethylationDataset> {
        let path = self.path(METHYLATION);
        let d = read_methylation(&path, Cohort::Healthy)?;
        let roster = read_samples(&self.path(SAMPLES))?;
        if roster.len() != d.n_samples() || roster.iter().zip(d.sample_ids()).any(|((a, _), b)| a != b) {
            return Err(Error::format(&path, "samples do not match the sample roster"));
        }
        let cohorts = roster.into_iter().map(|(_, c)| c).collect();
        Ok(MethylationDataset::new(d.genes().to_vec(), d.sample_ids().to_vec(), cohorts)?)
    }

    fn load_clinical(&self) -> Result<ClinicalTable> {
        read_clinical(&self.path(CLINICAL))
    }

    fn load_reference(&self, d: &MethylationDataset) -> Result<HealthyReference> {
        read_moments(&self.path(MOMENTS), Some(&healthy_key(d)))
    }

    fn load_genes(&self) -> Result<GeneIndex> {
        let path = self.path(GENES);
        Ok(GeneIndex::new(read_rows(&path, &["gene"])?.into_iter().map(|(_, r)| r[0].trim().to_string()).collect()))
    }

    fn records<'a>(&self, table: &'a ClinicalTable, d: &MethylationDataset, samples: &[usize]) -> Result<Vec<&'a ClinicalRecord>> {
        let index: BTreeMap<&str, &ClinicalRecord> =
            table.records().iter().map(|r| (r.sample_id.as_str(), r)).collect();
        samples
            .iter()
            .map(|&s| {
                let id = &d.sample_ids()[s];
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::format(self.path(CLINICAL), format!("no clinical row for {id}")))
            })
            .collect()
    }

    fn moments(&self) -> Result<StageOutput> {
        let d = self.load_methylation()?;
        let reference = estimate_moments(&d)?;
        write_moments(&self.path(MOMENTS), &reference, &healthy_key(&d))?;
        let genes = GeneIndex::new(reference.genes().iter().map(|g| g.gene().to_string()).collect());
        let path = self.path(GENES);
        let mut w = crate::io::csv_writer(&path)?;
        crate::io::write_row(&path, &mut w, ["gene"])?;
        for g in genes.names() {
            crate::io::write_row(&path, &mut w, [g])?;
        }
        crate::io::finish_csv(&path, w)?;
        let summary = json!({ "n_genes": reference.n_genes(), "n_healthy": reference.n_healthy() });
        Ok(StageOutput::new(&[MOMENTS, GENES], summary))
    }

    fn interaction(&self) -> Result<StageOutput> {
        let d = self.load_methylation()?;
        let reference = self.load_reference(&d)?;
        let train = d.samples_in(Cohort::TumourTrain);
        let proj = parallel::project_samples(&reference, &d, &train)?;
        let m = reference.n_genes();
        let pairs = pair_count(m);
        let mut w = InteractionTableWriter::create(&self.path(INTERACTION), m, train.len())?;
        let mut start = 0;
        while start < pairs {
            let end = (start + self.cfg.chunk_size).min(pairs);
            w.append(&parallel::interaction_series(&proj, start, end))?;
            start = end;
        }
        w.finish()?;
        Ok(StageOutput::new(&[INTERACTION], json!({ "pairs": pairs, "n_samples": train.len() })))
    }

    fn wald(&self) -> Result<StageOutput> {
        let d = self.load_methylation()?;
        let table = self.load_clinical()?;
        let train = d.samples_in(Cohort::TumourTrain);
        let records = self.records(&table, &d, &train)?;
        let design = PairDesign::new(&records, self.cfg.adjust_covariates)?;
        let genes = self.load_genes()?;
        let mut reader = InteractionTableReader::open(&self.path(INTERACTION))?;
        if reader.m != genes.len() || reader.n_samples != train.len() {
            return Err(Error::format(self.path(INTERACTION), "table does not match the ingested cohort"));
        }
        let pairs = reader.n_pairs();
        let mut results = Vec::with_capacity(pairs);
        let mut start = 0;
        while start < pairs {
            let end = (start + self.cfg.chunk_size).min(pairs);
            let series = reader.read_range(start, end)?;
            results.extend(parallel::wald_chunk(&design, &series, train.len()));
            start = end;
        }
        let field = field_from_pairs(genes.len(), &results)?;
        write_wald_field(&self.path(WALD), &genes, &field)?;
        let flagged = results.iter().filter(|r| !r.converged).count();
        let summary = json!({
            "pairs": pairs,
            "flagged": flagged,
            "n_fit": design.n(),
            "covariates": design.covariate_names,
        });
        Ok(StageOutput::new(&[WALD], summary))
    }

    fn weights(&self) -> Result<StageOutput> {
        let genes = self.load_genes()?;
        let field = read_wald_field(&self.path(WALD), &genes)?;
        let weights = parallel::node_weights(&field, self.cfg.laplace_scale)?;
        write_node_weights(&self.path(WEIGHTS), &genes, &weights)?;
        let mean = weights.iter().map(|w| w.weight).sum::<f64>() / weights.len().max(1) as f64;
        Ok(StageOutput::new(&[WEIGHTS], json!({ "genes": weights.len(), "mean_weight": mean })))
    }

    fn adjacency(&self) -> Result<StageOutput> {
        let genes = self.load_genes()?;
        let field = read_wald_field(&self.path(WALD), &genes)?;
        let (wgenes, weights) = read_node_weights(&self.path(WEIGHTS))?;
        if wgenes.names() != genes.names() {
            return Err(Error::format(self.path(WEIGHTS), "gene order differs from the reference"));
        }
        let net = build_adjacency(&field, &weights, self.cfg.laplace_scale)?;
        write_edges(&self.path(EDGES), &genes, &net)?;
        let summary = NetworkSummary {
            m: net.m,
            edges: net.edges.len(),
            density: net.density(),
            laplace_scale: self.cfg.laplace_scale,
        };
        write_json(&self.path(NETWORK_SUMMARY), &summary)?;
        let s = serde_json::to_value(&summary).expect("summary serializes");
        Ok(StageOutput::new(&[EDGES, NETWORK_SUMMARY], s))
    }

    fn graph(&self, genes: &GeneIndex) -> Result<SparseGraph> {
        let net = read_edges(&self.path(EDGES), genes)?;
        Ok(SparseGraph::from_network(&net)?)
    }

    fn component(&self) -> Result<StageOutput> {
        let genes = self.load_genes()?;
        let g = self.graph(&genes)?;
        // isolated genes are not part of the network
        let connected: Vec<usize> = (0..g.n_nodes()).filter(|&v| g.degree()[v] > 0).collect();
        let lcc = largest_component(&g.induced(&connected));
        write_gene_list(&self.path(COMPONENT), &genes, lcc.nodes())?;
        let summary = json!({ "nodes": lcc.n_nodes(), "edges": lcc.n_edges() });
        Ok(StageOutput::new(&[COMPONENT], summary))
    }

    fn block_count(&self) -> Result<StageOutput> {
        let n = read_rows(&self.path(COMPONENT), &["gene"])?.len();
        let mut bc = block_count_with_override(n, self.cfg.bandwidth_multiplier, self.cfg.k_override);
        if n < 2 {
            bc.k = n;
        }
        bc.k = bc.k.min(n);
        write_json(&self.path(BLOCK_COUNT), &bc)?;
        let s = serde_json::to_value(bc).expect("block count serializes");
        Ok(StageOutput::new(&[BLOCK_COUNT], s))
    }

    fn partition(&self) -> Result<StageOutput> {
        let genes = self.load_genes()?;
        let bc: BlockCount = read_json(&self.path(BLOCK_COUNT))?;
        let nodes = read_gene_list(&self.path(COMPONENT), &genes)?;
        let sub = self.graph(&genes)?.induced(&nodes);
        let mut assignment = if sub.n_nodes() == 0 {
            CommunityAssignment { nodes: Vec::new(), labels: Vec::new(), k: 0, bandwidth: None, tau: 0.0, seed: self.cfg.seed }
        } else {
            spectral_partition(&sub, bc.k, self.cfg.seed)?
        };
        if !bc.overridden {
            assignment.bandwidth = Some(bc.bandwidth);
        }
        write_assignment(&self.path(ASSIGNMENT), &genes, &assignment.nodes, &assignment.labels)?;
        let summary = json!({
            "bandwidth": assignment.bandwidth,
            "k_requested": bc.k,
            "k": assignment.k,
            "tau": assignment.tau,
            "seed": assignment.seed,
            "block_sizes": assignment.block_sizes(),
        });
        Ok(StageOutput::new(&[ASSIGNMENT], summary))
    }

    fn load_models(&self, genes: &GeneIndex) -> Result<Vec<MarkerModel>> {
        let path = self.path(MARKERS);
        let records: Vec<MarkerRecord> = read_json(&path)?;
        records
            .into_iter()
            .map(|r| {
                let genes_idx = r.genes.iter().map(|g| genes.index(&path, 0, g)).collect::<Result<Vec<_>>>()?;
                let edges = r
                    .edges
                    .iter()
                    .map(|e| {
                        let (a, b) = (genes.index(&path, 0, &e.gene_i)?, genes.index(&path, 0, &e.gene_j)?);
                        Ok(MarkerEdge { i: a.min(b), j: a.max(b), theta: e.theta })
                    })
                    .collect::<Result<Vec<_>>>()?;
                if r.community == 0 {
                    return Err(Error::format(&path, "communities are numbered from 1"));
                }
                Ok(MarkerModel {
                    community: r.community - 1,
                    genes: genes_idx,
                    edges,
                    threshold: Some(r.threshold),
                    n_train: r.n_train,
                })
            })
            .collect()
    }

    fn train_scores(&self) -> Result<StageOutput> {
        let genes = self.load_genes()?;
        let net = read_edges(&self.path(EDGES), &genes)?;
        let (nodes, labels) = read_assignment(&self.path(ASSIGNMENT), &genes)?;
        let k = labels.iter().copied().max().map_or(0, |l| l + 1);
        let assignment = CommunityAssignment { nodes, labels, k, bandwidth: None, tau: 0.0, seed: self.cfg.seed };
        let mut models = marker_models(&assignment, &net);
        let d = self.load_methylation()?;
        let train = d.samples_in(Cohort::TumourTrain);
        let mut reader = InteractionTableReader::open(&self.path(INTERACTION))?;
        let m = genes.len();

        let mut rows = Vec::new();
        let mut markers = Vec::with_capacity(models.len());
        for model in &mut models {
            let mut series = BTreeMap::new();
            for e in &model.edges {
                let p = pair_index(m, e.i, e.j);
                series.insert((e.i, e.j), reader.read_range(p, p + 1)?);
            }
            let scores = (0..train.len())
                .map(|s| prognostic_score(model, |i, j| series.get(&(i, j)).map(|v| v[s])))
                .collect::<methnet_core::Result<Vec<f64>>>()?;
            let threshold = train_threshold(model, &scores)?;
            for (s, &score) in scores.iter().enumerate() {
                rows.push(ScoreRow {
                    sample_id: d.sample_ids()[train[s]].clone(),
                    community: model.community + 1,
                    score,
                    worse: score > threshold,
                });
            }
            markers.push(MarkerRecord {
                community: model.community + 1,
                genes: model.genes.iter().map(|&g| genes.name(g).to_string()).collect(),
                edges: model
                    .edges
                    .iter()
                    .map(|e| MarkerEdgeRecord {
                        gene_i: genes.name(e.i).to_string(),
                        gene_j: genes.name(e.j).to_string(),
                        theta: e.theta,
                    })
                    .collect(),
                threshold,
                n_train: model.n_train,
            });
        }
        write_json(&self.path(MARKERS), &markers)?;
        write_scores(&self.path(SCORES_TRAIN), &rows)?;
        let summary = json!({ "communities": markers.len(), "n_train": train.len() });
        Ok(StageOutput::new(&[MARKERS, SCORES_TRAIN], summary))
    }

    /// Projections of the genes used by `models` for the given samples.
    fn marker_projections(
        &self,
        models: &[MarkerModel],
        reference: &HealthyReference,
        d: &MethylationDataset,
        samples: &[usize],
    ) -> Result<BTreeMap<usize, Vec<Projection>>> {
        let mut out = BTreeMap::new();
        for e in models.iter().flat_map(|m| &m.edges) {
            for g in [e.i, e.j] {
                if let Entry::Vacant(slot) = out.entry(g) {
                    slot.insert(reference.project_gene(d, g, samples)?);
                }
            }
        }
        Ok(out)
    }

    fn test_scores(&self) -> Result<StageOutput> {
        let genes = self.load_genes()?;
        let models = self.load_models(&genes)?;
        let d = self.load_methylation()?;
        let reference = self.load_reference(&d)?;
        let test = d.samples_in(Cohort::TumourTest);
        let proj = self.marker_projections(&models, &reference, &d, &test)?;
        let n_h = reference.n_healthy();
        let mut rows = Vec::new();
        for model in &models {
            for (s, &sample) in test.iter().enumerate() {
                let score = prognostic_score(model, |i, j| {
                    Some(interaction_from_projections(&proj[&i][s], &proj[&j][s], n_h).rho)
                })?;
                let worse = methnet_core::oncomarker::classify(model, score)?
                    == methnet_core::oncomarker::PrognosticGroup::Worse;
                rows.push(ScoreRow { sample_id: d.sample_ids()[sample].clone(), community: model.community + 1, score, worse });
            }
        }
        write_scores(&self.path(SCORES_TEST), &rows)?;
        Ok(StageOutput::new(&[SCORES_TEST], json!({ "communities": models.len(), "n_test": test.len() })))
    }

    fn validation(&self) -> Result<StageOutput> {
        let markers: Vec<MarkerRecord> = read_json(&self.path(MARKERS))?;
        let table = self.load_clinical()?;
        let index: BTreeMap<&str, &ClinicalRecord> =
            table.records().iter().map(|r| (r.sample_id.as_str(), r)).collect();
        let train_rows = read_scores(&self.path(SCORES_TRAIN))?;
        let test_rows = read_scores(&self.path(SCORES_TEST))?;
        let by_community = |rows: &[ScoreRow], c: usize| -> Vec<ScoreRow> {
            rows.iter().filter(|r| r.community == c).cloned().collect()
        };
        let mut files: Vec<String> = vec![REPORT_TRAIN.into(), REPORT_TEST.into()];
        let mut reports: Vec<Vec<ReportEntry>> = vec![Vec::new(), Vec::new()];
        for mk in &markers {
            let model = MarkerModel {
                community: mk.community - 1,
                genes: Vec::new(),
                edges: Vec::new(),
                threshold: Some(mk.threshold),
                n_train: mk.n_train,
            };
            let train = by_community(&train_rows, mk.community);
            let test = by_community(&test_rows, mk.community);
            for (c, (cohort, rows)) in [("train", &train), ("test", &test)].into_iter().enumerate() {
                let records = rows
                    .iter()
                    .map(|r| {
                        index.get(r.sample_id.as_str()).copied().ok_or_else(|| {
                            Error::format(self.path(CLINICAL), format!("no clinical row for {}", r.sample_id))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
                let v = validate_marker(&model, &scores, &records)?;
                let km = format!("km/km_{cohort}_c{}.csv", mk.community);
                write_km(&self.path(&km), &[("better", &v.km_better), ("worse", &v.km_worse)])?;
                files.push(km);
                reports[c].push(ReportEntry::new(&v, mk.community, train.len(), test.len()));
            }
        }
        let mut rankings = Vec::new();
        for (entries, (cohort, file)) in reports.into_iter().zip([("train", REPORT_TRAIN), ("test", REPORT_TEST)]) {
            let ranking = rank_by_p(&entries);
            rankings.push(ranking.clone());
            write_json(&self.path(file), &Report { cohort: cohort.to_string(), ranking, markers: entries })?;
        }
        let mut km_files: Vec<String> = files.split_off(2);
        km_files.sort();
        files.extend(km_files);
        let file_refs: Vec<&str> = files.iter().map(String::as_str).collect();
        let summary = json!({ "communities": markers.len(), "ranking_test": rankings[1] });
        Ok(StageOutput::new(&file_refs, summary))
    }

    fn concordance(&self) -> Result<StageOutput> {
        let path = self.path(EXPRESSION);
        if !path.is_file() {
            return Ok(StageOutput { files: Vec::new(), summary: json!({ "reason": "no expression data" }), skipped: true });
        }
        let expr = read_expression(&path)?;
        let genes = self.load_genes()?;
        let models = self.load_models(&genes)?;
        let d = self.load_methylation()?;
        let reference = self.load_reference(&d)?;
        let col = |s: usize| expr.sample_index(&d.sample_ids()[s]);
        let healthy_cols: Vec<usize> = d.samples_in(Cohort::Healthy).into_iter().filter_map(col).collect();
        let tumours: Vec<usize> = (0..d.n_samples())
            .filter(|&s| d.cohorts()[s].is_tumour() && col(s).is_some())
            .collect();
        let tumour_cols: Vec<usize> = tumours.iter().map(|&s| col(s).expect("filtered")).collect();
        let proj = self.marker_projections(&models, &reference, &d, &tumours)?;
        let n_h = reference.n_healthy();

        let mut stats: BTreeMap<usize, Option<ExpressionStats>> = BTreeMap::new();
        let mut entries = Vec::new();
        for e in models.iter().flat_map(|m| &m.edges) {
            let mut get = |g: usize| -> Result<Option<ExpressionStats>> {
                if let Some(s) = stats.get(&g) {
                    return Ok(*s);
                }
                let s = match expr.gene_index(genes.name(g)) {
                    Some(r) => {
                        let row = expr.gene_row(r);
                        let h: Vec<f64> = healthy_cols.iter().map(|&c| row[c]).collect();
                        ExpressionStats::from_healthy(&h).ok()
                    }
                    None => None,
                };
                stats.insert(g, s);
                Ok(s)
            };
            let (Some(sx), Some(sy)) = (get(e.i)?, get(e.j)?) else {
                continue;
            };
            let (rx, ry) = (
                expr.gene_row(expr.gene_index(genes.name(e.i)).expect("has stats")),
                expr.gene_row(expr.gene_index(genes.name(e.j)).expect("has stats")),
            );
            let rho: Vec<f64> =
                (0..tumours.len()).map(|s| interaction_from_projections(&proj[&e.i][s], &proj[&e.j][s], n_h).rho).collect();
            let rho_expr: Vec<f64> = tumour_cols
                .iter()
                .map(|&c| expression_interaction(rx[c], ry[c], &sx, &sy).rho)
                .collect();
            entries.push(concordance_test(e.i, e.j, &rho, &rho_expr)?);
        }
        write_concordance(&self.path(CONCORDANCE), &genes, &entries)?;
        let summary = json!({
            "edges": entries.len(),
            "evaluable": entries.iter().filter(|e| e.evaluable).count(),
            "n_samples": tumours.len(),
        });
        Ok(StageOutput::new(&[CONCORDANCE], summary))
    }
}

/// Community ids by ascending univariate p; non-evaluable markers last.
fn rank_by_p(entries: &[ReportEntry]) -> Vec<usize> {
    let mut v: Vec<(f64, usize)> = entries
        .iter()
        .map(|e| (e.univariate.map_or(f64::INFINITY, |u| if u.p.is_nan() { f64::INFINITY } else { u.p }), e.community))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v.into_iter().map(|(_, c)| c).collect()
}

/// Runs every stage of `cfg`.
pub fn run_pipeline(cfg: RunConfig) -> Result<(Manifest, Vec<StageReport>)> {
    let mut p = Pipeline::new(cfg)?;
    let reports = p.run(Slice::All)?;
    Ok((p.manifest.clone(), reports))
}
