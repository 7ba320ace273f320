use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PredicateScorer;
use crate::error::{Error, Result};
use crate::sgdata::{Dataset, ImageId, ImageRecord, InstanceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Candidates are the gold-connected pairs only.
    PredDet,
    /// Candidates are all ordered instance pairs.
    PredCls,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preddet" => Ok(EvalMode::PredDet),
            "predcls" => Ok(EvalMode::PredCls),
            other => Err(Error::invalid(format!("unknown eval mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Recall of each image, averaged over images with gold triplets.
    #[default]
    PerImage,
    /// Matched gold triplets over all gold triplets, pooled across images.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub recall: BTreeMap<usize, f64>,
    pub n_gold: usize,
    /// Images that carried at least one gold triplet.
    pub n_images: usize,
}

impl RecallResult {
    /// `{"K": recall}` object.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            self.recall
                .iter()
                .map(|(k, r)| (k.to_string(), serde_json::json!(r)))
                .collect(),
        )
    }
}

pub fn eval_preddet(
    scorer: &dyn PredicateScorer,
    test: &Dataset,
    ks: &[usize],
) -> Result<RecallResult> {
    eval_recall(scorer, test, ks, EvalMode::PredDet, Aggregation::PerImage)
}

pub fn eval_predcls(
    scorer: &dyn PredicateScorer,
    test: &Dataset,
    ks: &[usize],
) -> Result<RecallResult> {
    eval_recall(scorer, test, ks, EvalMode::PredCls, Aggregation::PerImage)
}

/// Recall@K for every K in `ks`. Within an image, candidates `(pair, predicate)`
/// are ranked by score, ties going to the lower pair index and then the lower
/// predicate id; a gold triplet counts as recalled when its candidate is among
/// the first K.
pub fn eval_recall(
    scorer: &dyn PredicateScorer,
    test: &Dataset,
    ks: &[usize],
    mode: EvalMode,
    aggregation: Aggregation,
) -> Result<RecallResult> {
    if ks.is_empty() {
        return Err(Error::invalid("no K values given"));
    }
    if ks.contains(&0) {
        return Err(Error::invalid("K must be >= 1"));
    }
    let n_predicates = test.predicate_vocab.len();
    let per_image: Vec<Option<(usize, Vec<usize>)>> = test
        .images
        .par_iter()
        .map(|img| image_hits(scorer, img, ks, mode, n_predicates))
        .collect::<Result<_>>()?;

    let mut n_gold = 0;
    let mut n_images = 0;
    let mut sums = vec![0.0; ks.len()];
    let mut pooled = vec![0usize; ks.len()];
    for (gold, hits) in per_image.into_iter().flatten() {
        n_gold += gold;
        n_images += 1;
        for (i, &h) in hits.iter().enumerate() {
            sums[i] += h as f64 / gold as f64;
            pooled[i] += h;
        }
    }
    let recall = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let r = match (aggregation, n_images) {
                (_, 0) => 0.0,
                (Aggregation::PerImage, n) => sums[i] / n as f64,
                (Aggregation::Micro, _) => pooled[i] as f64 / n_gold as f64,
            };
            (k, r)
        })
        .collect();
    Ok(RecallResult {
        recall,
        n_gold,
        n_images,
    })
}

/// `(gold count, hits per K)`, or `None` for an image without gold triplets.
fn image_hits(
    scorer: &dyn PredicateScorer,
    img: &ImageRecord,
    ks: &[usize],
    mode: EvalMode,
    n_predicates: usize,
) -> Result<Option<(usize, Vec<usize>)>> {
    if img.triplets.is_empty() {
        return Ok(None);
    }
    let pos = img.instance_positions();
    let pairs: Vec<(usize, usize)> = match mode {
        EvalMode::PredDet => {
            let mut seen = HashSet::new();
            img.triplets
                .iter()
                .map(|t| (pos[&t.subject_id], pos[&t.object_id]))
                .filter(|p| seen.insert(*p))
                .collect()
        }
        EvalMode::PredCls => {
            let n = img.instances.len();
            (0..n)
                .flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o)))
                .collect()
        }
    };
    let scores = scorer.score_pairs(img, &pairs)?;
    if scores.len() != pairs.len() {
        return Err(Error::Shape(format!(
            "scorer returned {} rows for {} pairs",
            scores.len(),
            pairs.len()
        )));
    }
    let mut candidates = Vec::with_capacity(pairs.len() * n_predicates);
    for (pi, row) in scores.iter().enumerate() {
        if row.len() != n_predicates {
            return Err(Error::Shape(format!(
                "scorer returned {} scores, expected {n_predicates}",
                row.len()
            )));
        }
        candidates.extend(row.iter().enumerate().map(|(p, &s)| (s, pi, p)));
    }
    candidates.sort_by(|a, b| match b.0.total_cmp(&a.0) {
        Ordering::Equal => (a.1, a.2).cmp(&(b.1, b.2)),
        other => other,
    });
    let rank: HashMap<(usize, usize), usize> = candidates
        .iter()
        .enumerate()
        .map(|(r, &(_, pi, p))| ((pi, p), r))
        .collect();
    let pair_index: HashMap<(usize, usize), usize> =
        pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let gold_ranks: Vec<usize> = img
        .triplets
        .iter()
        .map(|t| {
            let pi = pair_index[&(pos[&t.subject_id], pos[&t.object_id])];
            rank[&(pi, t.predicate as usize)]
        })
        .collect();
    let hits = ks
        .iter()
        .map(|&k| gold_ranks.iter().filter(|&&r| r < k).count())
        .collect();
    Ok(Some((img.triplets.len(), hits)))
}

/// Scores read from a prediction file, keyed by image and instance ids.
/// Pairs absent from the table score zero for every predicate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedScores {
    pub n_predicates: usize,
    pub scores: HashMap<(ImageId, InstanceId, InstanceId), Vec<f64>>,
}

#[derive(Deserialize)]
struct PredictionLine {
    image_id: ImageId,
    subject_id: InstanceId,
    object_id: InstanceId,
    scores: Vec<f64>,
}

impl PrecomputedScores {
    /// Parses JSONL lines `{"image_id", "subject_id", "object_id", "scores": [...]}`.
    pub fn from_jsonl(text: &str, source_name: &str, n_predicates: usize) -> Result<Self> {
        let mut out = PrecomputedScores {
            n_predicates,
            scores: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| Error::Line {
                path: source_name.to_string(),
                line: i + 1,
                message,
            };
            let p: PredictionLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            if p.scores.len() != n_predicates {
                return Err(err(format!(
                    "{} scores, expected {n_predicates}",
                    p.scores.len()
                )));
            }
            if out
                .scores
                .insert((p.image_id, p.subject_id, p.object_id), p.scores)
                .is_some()
            {
                return Err(err("duplicate pair".into()));
            }
        }
        Ok(out)
    }
}

impl PredicateScorer for PrecomputedScores {
    fn score_pairs(&self, image: &ImageRecord, pairs: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
        Ok(pairs
            .iter()
            .map(|&(s, o)| {
                let key = (
                    image.image_id,
                    image.instances[s].instance_id,
                    image.instances[o].instance_id,
                );
                self.scores
                    .get(&key)
                    .cloned()
                    .unwrap_or_else(|| vec![0.0; self.n_predicates])
            })
            .collect())
    }
}
