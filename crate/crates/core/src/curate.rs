//! The end-to-end curation pipeline.
//!
//! `select_top_labels -> cluster_predicates -> apply_mapping` gives the
//! clustered dataset; a per-image split then feeds the discriminator, and
//! every predicate whose held-out accuracy exceeds `alpha` is removed along
//! with its triplets. Instances no longer in any triplet, and images left
//! without triplets, go too.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::labelspace::{
    apply_mapping, cluster_predicates, select_top_labels, ClusterMapping, Linkage,
};
use crate::sgdata::{save_dataset, split_dataset, Dataset, LabelId, Vocab};
use crate::util::seeded_rng;
use crate::vdnet::{
    build_samples, evaluate, init_vdnet, train, AccuracyReport, VdNetConfig, VdNetParams,
};

pub const REPORT_FILE: &str = "curation_report.json";
pub const CURVE_FILE: &str = "predictability_curve.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurateConfig {
    pub n_objects: usize,
    pub n_predicates: usize,
    pub linkage: Linkage,
    pub cluster_threshold: f64,
    pub alpha: f64,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Predicates with fewer held-out samples are kept without judgement.
    pub min_support: usize,
    pub vdnet: VdNetConfig,
}

impl Default for CurateConfig {
    fn default() -> Self {
        CurateConfig {
            n_objects: 1600,
            n_predicates: 500,
            linkage: Linkage::Average,
            cluster_threshold: crate::labelspace::DEFAULT_DISTANCE_THRESHOLD,
            alpha: 0.5,
            train_fraction: 0.7,
            split_seed: 0,
            min_support: 20,
            vdnet: VdNetConfig::default(),
        }
    }
}

impl CurateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        self.vdnet.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage: String,
    pub n_images: usize,
    pub n_instances: usize,
    pub n_triplets: usize,
    pub n_predicates: usize,
}

impl StageCounts {
    fn of(stage: &str, d: &Dataset) -> Self {
        let c = StageCounts {
            stage: stage.to_string(),
            n_images: d.n_images(),
            n_instances: d.n_instances(),
            n_triplets: d.n_triplets(),
            n_predicates: d.predicate_vocab.len(),
        };
        info!(
            "{stage}: {} images, {} instances, {} triplets, {} predicates",
            c.n_images, c.n_instances, c.n_triplets, c.n_predicates
        );
        c
    }
}

/// Keep/drop verdicts, all ids in the clustered vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub kept: Vec<LabelId>,
    pub dropped: Vec<LabelId>,
    /// Subset of `kept` whose held-out support was below the floor.
    pub insufficient_evidence: Vec<LabelId>,
}

/// Drops predicates with accuracy strictly above `alpha`; ties are kept.
pub fn decide(
    report: &AccuracyReport,
    n_predicates: usize,
    alpha: f64,
    min_support: usize,
) -> Decision {
    let mut d = Decision {
        kept: Vec::new(),
        dropped: Vec::new(),
        insufficient_evidence: Vec::new(),
    };
    for p in 0..n_predicates as LabelId {
        match report.per_predicate.get(&p) {
            Some(a) if a.support >= min_support => {
                if a.accuracy > alpha {
                    d.dropped.push(p);
                } else {
                    d.kept.push(p);
                }
            }
            _ => {
                d.kept.push(p);
                d.insufficient_evidence.push(p);
            }
        }
    }
    d
}

/// Restricts a dataset to the given predicates (relabelled densely in their
/// original order), then removes unreferenced instances and empty images.
pub fn prune_predicates(dataset: &Dataset, kept: &[LabelId]) -> Result<Dataset> {
    let mut vocab = Vocab::default();
    let mut remap: HashMap<LabelId, LabelId> = HashMap::new();
    let mut sorted = kept.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for p in sorted {
        let label = dataset
            .predicate_vocab
            .label(p)
            .ok_or_else(|| Error::invalid(format!("kept predicate {p} not in vocabulary")))?;
        remap.insert(p, vocab.push(label.to_string())?);
    }
    let mut images = Vec::new();
    for img in &dataset.images {
        let triplets: Vec<_> = img
            .triplets
            .iter()
            .filter_map(|t| {
                remap
                    .get(&t.predicate)
                    .map(|&p| crate::sgdata::Triplet { predicate: p, ..*t })
            })
            .collect();
        if triplets.is_empty() {
            continue;
        }
        let used: HashSet<u64> = triplets
            .iter()
            .flat_map(|t| [t.subject_id, t.object_id])
            .collect();
        let mut img = img.clone();
        img.instances.retain(|i| used.contains(&i.instance_id));
        img.triplets = triplets;
        images.push(img);
    }
    let split_tags = dataset.split_tags.as_ref().map(|tags| {
        images
            .iter()
            .filter_map(|i| tags.get(&i.image_id).map(|&s| (i.image_id, s)))
            .collect()
    });
    let mut out = Dataset {
        images,
        object_vocab: dataset.object_vocab.clone(),
        predicate_vocab: vocab,
        attribute_vocab: dataset.attribute_vocab.clone(),
        split_tags,
    };
    out.recount();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CurationResult {
    /// Dataset after selection and clustering.
    pub rvg: Dataset,
    /// Dataset after filtering.
    pub vrr: Dataset,
    /// Held-out accuracy per clustered predicate.
    pub report: AccuracyReport,
    pub kept: Vec<LabelId>,
    pub dropped: Vec<LabelId>,
    pub insufficient_evidence: Vec<LabelId>,
    /// Maps the selected predicate vocabulary onto the clustered one.
    pub mapping: ClusterMapping,
    pub selected_predicates: Vocab,
    pub stages: Vec<StageCounts>,
    pub loss_history: Vec<f64>,
    pub params: VdNetParams,
    pub alpha: f64,
}

pub fn curate(
    dataset: &Dataset,
    table: &EmbeddingTable,
    config: &CurateConfig,
) -> Result<CurationResult> {
    config.validate()?;
    if dataset.images.is_empty() {
        return Err(Error::invalid("cannot curate an empty dataset"));
    }
    let mut stages = vec![StageCounts::of("input", dataset)];

    let top = select_top_labels(dataset, config.n_objects, config.n_predicates)
        .map_err(|e| e.in_stage("select"))?;
    stages.push(StageCounts::of("select", &top));

    let mapping = cluster_predicates(
        &top.predicate_vocab,
        table,
        config.linkage,
        config.cluster_threshold,
    )
    .map_err(|e| e.in_stage("cluster"))?;
    let rvg = apply_mapping(&top, &mapping).map_err(|e| e.in_stage("cluster"))?;
    stages.push(StageCounts::of("cluster", &rvg));

    let (train_set, test_set) = split_dataset(&rvg, config.train_fraction, config.split_seed)
        .map_err(|e| e.in_stage("split"))?;
    stages.push(StageCounts::of("split_train", &train_set));
    stages.push(StageCounts::of("split_test", &test_set));

    let (train_samples, report_train) =
        build_samples(&train_set, table).map_err(|e| e.in_stage("samples"))?;
    let (test_samples, _) = build_samples(&test_set, table).map_err(|e| e.in_stage("samples"))?;
    if !report_train.oov_object_labels.is_empty() {
        info!(
            "{} object labels have no embedding",
            report_train.oov_object_labels.len()
        );
    }

    let embed_dim = table
        .dim()
        .ok_or_else(|| Error::invalid("embedding table is empty").in_stage("train"))?;
    let params = init_vdnet(&config.vdnet, embed_dim, rvg.predicate_vocab.len())
        .map_err(|e| e.in_stage("train"))?;
    let mut rng = seeded_rng(config.vdnet.seed);
    let (params, loss_history) =
        train(params, &train_samples, &config.vdnet, &mut rng).map_err(|e| e.in_stage("train"))?;
    if let (Some(first), Some(last)) = (loss_history.first(), loss_history.last()) {
        info!(
            "train: loss {first:.4} -> {last:.4} over {} epochs",
            loss_history.len()
        );
    }

    let report = evaluate(&params, &test_samples).map_err(|e| e.in_stage("evaluate"))?;
    let decision = decide(
        &report,
        rvg.predicate_vocab.len(),
        config.alpha,
        config.min_support,
    );
    let vrr = prune_predicates(&rvg, &decision.kept).map_err(|e| e.in_stage("filter"))?;
    stages.push(StageCounts::of("filter", &vrr));

    Ok(CurationResult {
        rvg,
        vrr,
        report,
        kept: decision.kept,
        dropped: decision.dropped,
        insufficient_evidence: decision.insufficient_evidence,
        mapping,
        selected_predicates: top.predicate_vocab,
        stages,
        loss_history,
        params,
        alpha: config.alpha,
    })
}

/// `n` evenly spaced thresholds from 0 to 1 inclusive.
pub fn accuracy_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// For each threshold `t`, the fraction of reported predicates with accuracy >= t.
pub fn predictability_curve(report: &AccuracyReport, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if report.per_predicate.is_empty() {
        return Err(Error::invalid("accuracy report is empty"));
    }
    let n = report.per_predicate.len() as f64;
    Ok(grid
        .iter()
        .map(|&t| {
            let hits = report
                .per_predicate
                .values()
                .filter(|a| a.accuracy >= t)
                .count();
            (t, hits as f64 / n)
        })
        .collect())
}

pub fn write_curve_csv(curve: &[(f64, f64)], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "threshold,fraction")?;
    for (t, f) in curve {
        writeln!(out, "{t},{f}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateVerdict {
    pub label: String,
    pub accuracy: Option<f64>,
    pub support: usize,
    pub dropped: bool,
    pub insufficient_evidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub alpha: f64,
    pub stages: Vec<StageCounts>,
    pub n_clusters: usize,
    pub overall_accuracy: f64,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    pub predicates: Vec<PredicateVerdict>,
    pub loss_history: Vec<f64>,
}

impl CurationResult {
    pub fn summary(&self) -> CurationReport {
        let vocab = &self.rvg.predicate_vocab;
        let name = |p: LabelId| vocab.label(p).unwrap_or("?").to_string();
        let dropped: HashSet<LabelId> = self.dropped.iter().copied().collect();
        let insufficient: HashSet<LabelId> = self.insufficient_evidence.iter().copied().collect();
        CurationReport {
            alpha: self.alpha,
            stages: self.stages.clone(),
            n_clusters: self.mapping.n_clusters(),
            overall_accuracy: self.report.overall_accuracy,
            kept: self.kept.iter().map(|&p| name(p)).collect(),
            dropped: self.dropped.iter().map(|&p| name(p)).collect(),
            predicates: (0..vocab.len() as LabelId)
                .map(|p| {
                    let acc = self.report.per_predicate.get(&p);
                    PredicateVerdict {
                        label: name(p),
                        accuracy: acc.map(|a| a.accuracy),
                        support: acc.map_or(0, |a| a.support),
                        dropped: dropped.contains(&p),
                        insufficient_evidence: insufficient.contains(&p),
                    }
                })
                .collect(),
            loss_history: self.loss_history.clone(),
        }
    }

    /// Labels of the dropped predicates.
    pub fn dropped_labels(&self) -> Vec<String> {
        self.summary().dropped
    }

    /// Writes the report, the curve, both datasets and the cluster audit into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report_path = dir.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(&self.summary()).expect("report serializes");
        fs::write(&report_path, text + "\n").map_err(|e| Error::io(&report_path, e))?;

        let curve = predictability_curve(&self.report, &accuracy_grid(101))?;
        let curve_path = dir.join(CURVE_FILE);
        let file = File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
        let mut w = BufWriter::new(file);
        write_curve_csv(&curve, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&curve_path, e))?;

        save_dataset(&self.vrr, &dir.join("vrr.jsonl"))?;
        save_dataset(&self.rvg, &dir.join("rvg.jsonl"))?;
        let audit_path = dir.join("cluster_mapping.json");
        let audit: BTreeMap<&str, serde_json::Value> = BTreeMap::from([
            (
                "clusters",
                self.mapping.to_audit_json(&self.selected_predicates),
            ),
            ("linkage", serde_json::json!(self.mapping.linkage)),
            (
                "distance_threshold",
                serde_json::json!(self.mapping.distance_threshold),
            ),
        ]);
        let text = serde_json::to_string_pretty(&audit).expect("audit serializes");
        fs::write(&audit_path, text + "\n").map_err(|e| Error::io(&audit_path, e))
    }
}
