//! Label-space reduction: frequency pre-selection and predicate deduplication
//! by agglomerative clustering of phrase vectors under cosine distance.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{phrase_vector, EmbeddingTable};
use crate::error::{Error, Result};
use crate::sgdata::{Dataset, LabelId, Triplet, Vocab};

pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(Error::invalid(format!("unknown linkage {other:?}"))),
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        })
    }
}

/// Keeps the `n_objects` most frequent object labels and the `n_predicates`
/// most frequent predicates (ties broken lexicographically). Instances with a
/// cut label, and triplets touching them or carrying a cut predicate, are
/// removed. Surviving labels keep their relative id order.
pub fn select_top_labels(
    dataset: &Dataset,
    n_objects: usize,
    n_predicates: usize,
) -> Result<Dataset> {
    if n_objects == 0 || n_predicates == 0 {
        return Err(Error::invalid("label budgets must be at least 1"));
    }
    let (object_vocab, object_map) = top_n(&dataset.object_vocab, n_objects);
    let (predicate_vocab, predicate_map) = top_n(&dataset.predicate_vocab, n_predicates);

    let mut out = Dataset {
        images: Vec::with_capacity(dataset.images.len()),
        object_vocab,
        predicate_vocab,
        attribute_vocab: dataset.attribute_vocab.clone(),
        split_tags: dataset.split_tags.clone(),
    };
    for img in &dataset.images {
        let mut img = img.clone();
        img.instances
            .retain_mut(|inst| match object_map[inst.object_label as usize] {
                Some(new) => {
                    inst.object_label = new;
                    true
                }
                None => false,
            });
        let alive: HashSet<u64> = img.instances.iter().map(|i| i.instance_id).collect();
        img.triplets
            .retain_mut(|t| match predicate_map[t.predicate as usize] {
                Some(new) if alive.contains(&t.subject_id) && alive.contains(&t.object_id) => {
                    t.predicate = new;
                    true
                }
                _ => false,
            });
        out.images.push(img);
    }
    out.recount();
    Ok(out)
}

fn top_n(vocab: &Vocab, n: usize) -> (Vocab, Vec<Option<LabelId>>) {
    let mut ranked: Vec<LabelId> = (0..vocab.len() as LabelId).collect();
    ranked.sort_by(|&a, &b| {
        vocab
            .count(b)
            .cmp(&vocab.count(a))
            .then_with(|| vocab.label(a).cmp(&vocab.label(b)))
    });
    let mut keep: Vec<LabelId> = ranked.into_iter().take(n).collect();
    keep.sort_unstable();
    let mut map = vec![None; vocab.len()];
    let mut out = Vocab::default();
    for old in keep {
        let new = out
            .push(vocab.label(old).expect("id in range").to_string())
            .expect("labels unique");
        map[old as usize] = Some(new);
    }
    (out, map)
}

/// Result of predicate clustering: every original id maps to the canonical
/// id of its cluster (itself a member).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMapping {
    pub mapping: Vec<LabelId>,
    pub clusters: BTreeMap<LabelId, Vec<LabelId>>,
    pub linkage: Linkage,
    pub distance_threshold: f64,
}

impl ClusterMapping {
    pub fn identity(n: usize) -> Self {
        Self::from_mapping((0..n as LabelId).collect()).expect("identity is valid")
    }

    /// Builds a mapping from `original id -> canonical id`. Canonical ids must map to themselves.
    pub fn from_mapping(mapping: Vec<LabelId>) -> Result<Self> {
        let mut clusters: BTreeMap<LabelId, Vec<LabelId>> = BTreeMap::new();
        for (id, &canon) in mapping.iter().enumerate() {
            if mapping.get(canon as usize) != Some(&canon) {
                return Err(Error::invalid(format!(
                    "canonical id {canon} (for {id}) is not its own canonical"
                )));
            }
            clusters.entry(canon).or_default().push(id as LabelId);
        }
        Ok(ClusterMapping {
            mapping,
            clusters,
            linkage: Linkage::default(),
            distance_threshold: 0.0,
        })
    }

    pub fn canonical(&self, id: LabelId) -> Option<LabelId> {
        self.mapping.get(id as usize).copied()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// `{canonical label: [member labels...]}` for audit files.
    pub fn to_audit_json(&self, vocab: &Vocab) -> serde_json::Value {
        let map: BTreeMap<String, Vec<String>> = self
            .clusters
            .iter()
            .map(|(&canon, members)| {
                let name = |id: LabelId| vocab.label(id).unwrap_or("?").to_string();
                (name(canon), members.iter().map(|&m| name(m)).collect())
            })
            .collect();
        serde_json::to_value(map).expect("string map serializes")
    }
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Agglomerative clustering of the predicate phrase vectors.
///
/// Clusters merge while the closest pair is within `distance_threshold`.
/// Equal distances resolve to the pair with the lowest ids. Predicates whose
/// phrase vector is zero (all tokens out of vocabulary) never merge.
pub fn cluster_predicates(
    predicate_vocab: &Vocab,
    table: &EmbeddingTable,
    linkage: Linkage,
    distance_threshold: f64,
) -> Result<ClusterMapping> {
    let n = predicate_vocab.len();
    if n == 0 {
        return Err(Error::invalid(
            "cannot cluster an empty predicate vocabulary",
        ));
    }
    if !(0.0..=2.0).contains(&distance_threshold) {
        return Err(Error::invalid(format!(
            "distance threshold {distance_threshold} outside [0, 2]"
        )));
    }
    let vectors: Vec<Option<Vec<f64>>> = predicate_vocab
        .labels()
        .iter()
        .map(|label| {
            let pv = phrase_vector(table, label)?;
            let zero = pv.values.iter().all(|&v| v == 0.0);
            Ok((!pv.oov && !zero).then_some(pv.values))
        })
        .collect::<Result<_>>()?;

    let mut dist: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let vectors = &vectors;
            (0..n).map(move |j| match (&vectors[i], &vectors[j]) {
                _ if i == j => 0.0,
                (Some(a), Some(b)) => cosine_distance(a, b),
                _ => f64::INFINITY,
            })
        })
        .collect();

    // Cluster slots are indexed by their lowest member id; merging j into i (i < j)
    // keeps that property.
    let mut members: Vec<Option<Vec<LabelId>>> = (0..n).map(|i| Some(vec![i as LabelId])).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if members[i].is_none() {
                continue;
            }
            for j in (i + 1)..n {
                if members[j].is_none() {
                    continue;
                }
                let d = dist[i * n + j];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, d)) = best else { break };
        if !(d <= distance_threshold) {
            break;
        }
        let size_i = members[i].as_ref().map_or(0, Vec::len) as f64;
        let size_j = members[j].as_ref().map_or(0, Vec::len) as f64;
        for k in 0..n {
            if k == i || k == j || members[k].is_none() {
                continue;
            }
            let (dik, djk) = (dist[i * n + k], dist[j * n + k]);
            let merged = match linkage {
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
                Linkage::Average => (size_i * dik + size_j * djk) / (size_i + size_j),
            };
            dist[i * n + k] = merged;
            dist[k * n + i] = merged;
        }
        let absorbed = members[j].take().expect("active slot");
        let target = members[i].as_mut().expect("active slot");
        target.extend(absorbed);
        target.sort_unstable();
    }

    let mut mapping = vec![0 as LabelId; n];
    let mut clusters = BTreeMap::new();
    for group in members.into_iter().flatten() {
        let canon = *group
            .iter()
            .min_by(|&&a, &&b| {
                predicate_vocab
                    .count(b)
                    .cmp(&predicate_vocab.count(a))
                    .then_with(|| predicate_vocab.label(a).cmp(&predicate_vocab.label(b)))
            })
            .expect("non-empty cluster");
        for &m in &group {
            mapping[m as usize] = canon;
        }
        clusters.insert(canon, group);
    }
    Ok(ClusterMapping {
        mapping,
        clusters,
        linkage,
        distance_threshold,
    })
}

/// Rewrites every predicate to its canonical id and shrinks the predicate
/// vocabulary to the canonical set. When merging makes two triplets on the
/// same pair identical, only those carrying the first-seen original predicate
/// survive; duplicates already present in the input are left alone.
pub fn apply_mapping(dataset: &Dataset, mapping: &ClusterMapping) -> Result<Dataset> {
    let vocab = &dataset.predicate_vocab;
    if let Some(missing) = (mapping.mapping.len()..vocab.len()).next() {
        return Err(Error::invalid(format!(
            "predicate {:?} missing from mapping",
            vocab.label(missing as LabelId).unwrap_or("?")
        )));
    }
    let mut new_vocab = Vocab::default();
    let mut new_id: HashMap<LabelId, LabelId> = HashMap::new();
    for &canon in mapping.clusters.keys() {
        let label = vocab.label(canon).ok_or_else(|| {
            Error::invalid(format!("canonical id {canon} outside predicate vocabulary"))
        })?;
        new_id.insert(canon, new_vocab.push(label.to_string())?);
    }

    let mut out = Dataset {
        images: Vec::with_capacity(dataset.images.len()),
        object_vocab: dataset.object_vocab.clone(),
        predicate_vocab: new_vocab,
        attribute_vocab: dataset.attribute_vocab.clone(),
        split_tags: dataset.split_tags.clone(),
    };
    for img in &dataset.images {
        let mut img = img.clone();
        let mut first_original: HashMap<Triplet, LabelId> = HashMap::new();
        let mut triplets = Vec::with_capacity(img.triplets.len());
        for t in &img.triplets {
            let canon = mapping.mapping[t.predicate as usize];
            let mapped = Triplet {
                predicate: new_id[&canon],
                ..*t
            };
            let first = *first_original.entry(mapped).or_insert(t.predicate);
            if first == t.predicate {
                triplets.push(mapped);
            }
        }
        img.triplets = triplets;
        out.images.push(img);
    }
    out.recount();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgdata::{BBox, ImageRecord, Instance};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    /// One image with objects man(×2), hat and predicates a×3, b×2, c×1.
    fn counted_dataset() -> Dataset {
        let object_vocab = Vocab::from_labels(["hat", "man"]).unwrap();
        let predicate_vocab = Vocab::from_labels(["a", "b", "c"]).unwrap();
        let inst = |id, label| Instance {
            instance_id: id,
            image_id: 1,
            bbox: BBox::new(0.0, 0.0, 2.0, 2.0).unwrap(),
            object_label: label,
            attribute_labels: BTreeSet::new(),
        };
        let t = |s, p, o| Triplet {
            subject_id: s,
            predicate: p,
            object_id: o,
        };
        let mut d = Dataset {
            images: vec![ImageRecord {
                image_id: 1,
                width: 10,
                height: 10,
                instances: vec![inst(1, 1), inst(2, 1), inst(3, 0)],
                triplets: vec![
                    t(1, 0, 3),
                    t(2, 0, 3),
                    t(1, 0, 2),
                    t(1, 1, 2),
                    t(2, 1, 1),
                    t(3, 2, 1),
                ],
            }],
            object_vocab,
            predicate_vocab,
            attribute_vocab: Vocab::default(),
            split_tags: None,
        };
        d.recount();
        d
    }

    #[test]
    fn top_predicates_keep_a_and_b() {
        let d = select_top_labels(&counted_dataset(), 10, 2).unwrap();
        assert_eq!(d.predicate_vocab.labels(), ["a", "b"]);
        assert_eq!(d.predicate_vocab.counts(), [3, 2]);
        assert_eq!(d.n_triplets(), 5);
        assert!(d.validate().is_ok());
    }

    #[test]
    fn top_objects_drop_instances_and_their_triplets() {
        let d = select_top_labels(&counted_dataset(), 1, 10).unwrap();
        assert_eq!(d.object_vocab.labels(), ["man"]);
        assert_eq!(d.n_instances(), 2);
        // only the man-man triplets survive
        assert_eq!(d.n_triplets(), 3);
        assert!(d.validate().is_ok());
    }

    #[test]
    fn oversized_budgets_leave_dataset_unchanged() {
        let d = counted_dataset();
        assert_eq!(select_top_labels(&d, 100, 100).unwrap(), d);
        assert!(select_top_labels(&d, 0, 1).is_err());
    }

    #[test]
    fn selection_is_idempotent() {
        let once = select_top_labels(&counted_dataset(), 1, 2).unwrap();
        assert_eq!(select_top_labels(&once, 1, 2).unwrap(), once);
    }

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(entries[0].1.len());
        for (tok, v) in entries {
            t.insert(*tok, v.to_vec()).unwrap();
        }
        t
    }

    #[test]
    fn single_predicate_is_its_own_cluster() {
        let vocab = Vocab::from_labels(["on"]).unwrap();
        let t = table(&[("on", &[1.0, 0.0])]);
        let m = cluster_predicates(&vocab, &t, Linkage::Average, 0.35).unwrap();
        assert_eq!(m.mapping, vec![0]);
        assert_eq!(m.n_clusters(), 1);
        assert!(cluster_predicates(&Vocab::default(), &t, Linkage::Average, 0.35).is_err());
    }

    #[test]
    fn three_vectors_give_two_clusters() {
        // d(p,q) = 0.01; r is at 0.9 from both.
        let theta = (0.99f64).acos();
        let p = [1.0, 0.0, 0.0];
        let q = [theta.cos(), theta.sin(), 0.0];
        // r.p = r.q = 0.1 with r orthogonal-ish; solve r = (a, b, c)
        let a = 0.1;
        let b = (0.1 - a * theta.cos()) / theta.sin();
        let c = (1.0 - a * a - b * b).sqrt();
        let r = [a, b, c];
        assert!((cosine_distance(&p, &q) - 0.01).abs() < 1e-12);
        assert!((cosine_distance(&p, &r) - 0.9).abs() < 1e-12);
        assert!((cosine_distance(&q, &r) - 0.9).abs() < 1e-12);
        let vocab = Vocab::from_labels(["p", "q", "r"]).unwrap();
        let t = table(&[("p", &p), ("q", &q), ("r", &r)]);
        for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
            let m = cluster_predicates(&vocab, &t, linkage, 0.3).unwrap();
            assert_eq!(m.n_clusters(), 2, "{linkage}");
            assert_eq!(m.mapping[0], m.mapping[1]);
            assert_ne!(m.mapping[0], m.mapping[2]);
        }
    }

    #[test]
    fn wears_absorbs_is_wearing_a() {
        let t = table(&[
            ("wears", &[0.9, 0.1, 0.0, 0.0]),
            ("wearing", &[1.0, 0.0, 0.05, 0.0]),
            ("is", &[0.1, 0.0, 0.0, 0.05]),
            ("a", &[0.05, 0.0, 0.0, 0.05]),
            ("under", &[0.0, 0.0, 0.0, 1.0]),
        ]);
        let mut vocab = Vocab::from_labels(["is wearing a", "under", "wears"]).unwrap();
        vocab.set_counts(vec![4, 50, 90]);
        let m =
            cluster_predicates(&vocab, &t, Linkage::Average, DEFAULT_DISTANCE_THRESHOLD).unwrap();
        assert_eq!(m.mapping, vec![2, 1, 2]);
        let audit = m.to_audit_json(&vocab);
        assert_eq!(audit["wears"], serde_json::json!(["is wearing a", "wears"]));
    }

    #[test]
    fn oov_predicates_never_merge() {
        let t = table(&[("x", &[1.0, 0.0])]);
        let vocab = Vocab::from_labels(["qq", "x", "zz"]).unwrap();
        let m = cluster_predicates(&vocab, &t, Linkage::Single, 2.0).unwrap();
        assert_eq!(m.n_clusters(), 3);
    }

    #[test]
    fn canonical_is_most_frequent_then_lexicographic() {
        let t = table(&[
            ("aa", &[1.0, 0.0]),
            ("bb", &[1.0, 0.01]),
            ("cc", &[1.0, 0.02]),
        ]);
        let mut vocab = Vocab::from_labels(["aa", "bb", "cc"]).unwrap();
        vocab.set_counts(vec![1, 5, 5]);
        let m = cluster_predicates(&vocab, &t, Linkage::Average, 0.1).unwrap();
        assert_eq!(m.mapping, vec![1, 1, 1]);
    }

    #[test]
    fn identity_mapping_is_a_no_op() {
        let d = counted_dataset();
        assert_eq!(apply_mapping(&d, &ClusterMapping::identity(3)).unwrap(), d);
    }

    #[test]
    fn merged_counts_are_summed_and_duplicates_collapsed() {
        let d = counted_dataset();
        // b -> a; triplets (1,a,2) and (1,b,2) collapse into one.
        let m = ClusterMapping::from_mapping(vec![0, 0, 2]).unwrap();
        let out = apply_mapping(&d, &m).unwrap();
        assert_eq!(out.predicate_vocab.labels(), ["a", "c"]);
        assert_eq!(out.predicate_vocab.counts(), [4, 1]);
        assert_eq!(out.n_triplets(), 5);
        assert!(out.validate().is_ok());
    }

    #[test]
    fn mapping_without_collision_sums_counts() {
        let mut d = counted_dataset();
        d.images[0]
            .triplets
            .retain(|t| !(t.subject_id == 1 && t.object_id == 2));
        d.recount();
        assert_eq!(d.predicate_vocab.counts(), [2, 1, 1]);
        let m = ClusterMapping::from_mapping(vec![0, 0, 2]).unwrap();
        let out = apply_mapping(&d, &m).unwrap();
        assert_eq!(out.predicate_vocab.counts(), [3, 1]);
    }

    #[test]
    fn short_mapping_names_the_missing_label() {
        let m = ClusterMapping::from_mapping(vec![0, 1]).unwrap();
        let err = apply_mapping(&counted_dataset(), &m).unwrap_err();
        assert!(err.to_string().contains("\"c\""), "{err}");
    }

    proptest! {
        #[test]
        fn cluster_count_non_increasing_in_threshold(
            vectors in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..9),
            t1 in 0.0f64..2.0,
            t2 in 0.0f64..2.0,
        ) {
            let labels: Vec<String> = (0..vectors.len()).map(|i| format!("p{i}")).collect();
            let vocab = Vocab::from_labels(labels.clone()).unwrap();
            let mut t = EmbeddingTable::new(3);
            for (l, v) in labels.iter().zip(&vectors) {
                t.insert(l.clone(), v.clone()).unwrap();
            }
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            for linkage in [Linkage::Single, Linkage::Complete, Linkage::Average] {
                let a = cluster_predicates(&vocab, &t, linkage, lo).unwrap();
                let b = cluster_predicates(&vocab, &t, linkage, hi).unwrap();
                prop_assert!(b.n_clusters() <= a.n_clusters());
                let again = cluster_predicates(&vocab, &t, linkage, lo).unwrap();
                prop_assert_eq!(&a, &again);
                // clusters partition the ids
                let mut all: Vec<u32> = a.clusters.values().flatten().copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..vectors.len() as u32).collect::<Vec<_>>());
            }
        }
    }
}
