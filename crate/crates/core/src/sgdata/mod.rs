//! Scene-graph data model.
//!
//! A [`Dataset`] is a list of [`ImageRecord`]s plus three vocabularies
//! (objects, predicates, attributes). Records refer to labels by dense
//! integer id; the vocabularies carry the strings and occurrence counts.
//! Every transformation in the crate goes through [`Dataset::recount`] so that
//! vocabulary counts always equal what a fresh tally over the records gives.

mod ingest;
mod io;
mod vocab;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use ingest::{ingest_vg, ingest_vg_files, IngestReport, VgSources};
pub use io::{load_dataset, save_dataset, vocab_sidecar_path, FORMAT_NAME, FORMAT_VERSION};
pub use vocab::{normalize_label, Vocab};

use crate::error::{Error, Result};
use crate::util::seeded_rng;

pub type ImageId = u64;
pub type InstanceId = u64;
pub type LabelId = u32;

/// Axis-aligned box in pixels, top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::invalid(format!("invalid box {b:?}")))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// True when `other` lies entirely inside `self` (edges may touch).
    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.w <= self.x + self.w
            && other.y + other.h <= self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: InstanceId,
    pub image_id: ImageId,
    pub bbox: BBox,
    pub object_label: LabelId,
    #[serde(default)]
    pub attribute_labels: BTreeSet<LabelId>,
}

/// A `<subject, predicate, object>` edge between two instances of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject_id: InstanceId,
    pub predicate: LabelId,
    pub object_id: InstanceId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<Instance>,
    pub triplets: Vec<Triplet>,
}

impl ImageRecord {
    pub fn instance(&self, id: InstanceId) -> Option<&Instance> {
        self.instances.iter().find(|i| i.instance_id == id)
    }

    /// Position of each instance id within `instances`.
    pub fn instance_positions(&self) -> HashMap<InstanceId, usize> {
        self.instances
            .iter()
            .enumerate()
            .map(|(pos, inst)| (inst.instance_id, pos))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub object_vocab: Vocab,
    pub predicate_vocab: Vocab,
    pub attribute_vocab: Vocab,
    pub split_tags: Option<BTreeMap<ImageId, Split>>,
}

impl Dataset {
    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn n_instances(&self) -> usize {
        self.images.iter().map(|i| i.instances.len()).sum()
    }

    pub fn n_triplets(&self) -> usize {
        self.images.iter().map(|i| i.triplets.len()).sum()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (&ImageRecord, &Triplet)> {
        self.images
            .iter()
            .flat_map(|img| img.triplets.iter().map(move |t| (img, t)))
    }

    /// Recomputes every vocabulary count from the records.
    pub fn recount(&mut self) {
        let mut objects = vec![0u64; self.object_vocab.len()];
        let mut predicates = vec![0u64; self.predicate_vocab.len()];
        let mut attributes = vec![0u64; self.attribute_vocab.len()];
        for img in &self.images {
            for inst in &img.instances {
                objects[inst.object_label as usize] += 1;
                for &a in &inst.attribute_labels {
                    attributes[a as usize] += 1;
                }
            }
            for t in &img.triplets {
                predicates[t.predicate as usize] += 1;
            }
        }
        self.object_vocab.set_counts(objects);
        self.predicate_vocab.set_counts(predicates);
        self.attribute_vocab.set_counts(attributes);
    }

    /// Checks every structural invariant of the data model.
    pub fn validate(&self) -> Result<()> {
        let mut seen_instances = HashSet::new();
        let mut prev_image: Option<ImageId> = None;
        for img in &self.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::invalid(format!(
                    "image {} has zero extent",
                    img.image_id
                )));
            }
            if let Some(prev) = prev_image {
                if img.image_id <= prev {
                    return Err(Error::invalid(format!(
                        "images not sorted by id at {}",
                        img.image_id
                    )));
                }
            }
            prev_image = Some(img.image_id);
            let mut local = HashSet::new();
            for inst in &img.instances {
                if !seen_instances.insert(inst.instance_id) {
                    return Err(Error::invalid(format!(
                        "duplicate instance id {}",
                        inst.instance_id
                    )));
                }
                local.insert(inst.instance_id);
                if inst.image_id != img.image_id {
                    return Err(Error::invalid(format!(
                        "instance {} claims image {} but lives in {}",
                        inst.instance_id, inst.image_id, img.image_id
                    )));
                }
                if !inst.bbox.is_valid()
                    || inst.bbox.x + inst.bbox.w > img.width as f64
                    || inst.bbox.y + inst.bbox.h > img.height as f64
                {
                    return Err(Error::invalid(format!(
                        "instance {} box {:?} does not fit image {}",
                        inst.instance_id, inst.bbox, img.image_id
                    )));
                }
                if inst.object_label as usize >= self.object_vocab.len() {
                    return Err(Error::invalid(format!(
                        "instance {} has unknown object label {}",
                        inst.instance_id, inst.object_label
                    )));
                }
                if let Some(&a) = inst
                    .attribute_labels
                    .iter()
                    .find(|&&a| a as usize >= self.attribute_vocab.len())
                {
                    return Err(Error::invalid(format!(
                        "instance {} has unknown attribute {a}",
                        inst.instance_id
                    )));
                }
            }
            for t in &img.triplets {
                if t.subject_id == t.object_id {
                    return Err(Error::invalid(format!(
                        "self relation on instance {}",
                        t.subject_id
                    )));
                }
                if !local.contains(&t.subject_id) || !local.contains(&t.object_id) {
                    return Err(Error::invalid(format!(
                        "triplet {t:?} references an instance outside image {}",
                        img.image_id
                    )));
                }
                if t.predicate as usize >= self.predicate_vocab.len() {
                    return Err(Error::invalid(format!(
                        "triplet {t:?} has unknown predicate"
                    )));
                }
            }
        }
        let mut recounted = self.clone();
        recounted.recount();
        for (name, ours, fresh) in [
            ("object", &self.object_vocab, &recounted.object_vocab),
            (
                "predicate",
                &self.predicate_vocab,
                &recounted.predicate_vocab,
            ),
            (
                "attribute",
                &self.attribute_vocab,
                &recounted.attribute_vocab,
            ),
        ] {
            if ours.counts() != fresh.counts() {
                return Err(Error::invalid(format!(
                    "{name} vocabulary counts disagree with the records"
                )));
            }
        }
        Ok(())
    }

    /// Keeps images for which `keep` holds, preserving order; vocab ids are untouched.
    pub(crate) fn filter_images(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Dataset {
        let images: Vec<ImageRecord> = self.images.iter().filter(|i| keep(i)).cloned().collect();
        let split_tags = self.split_tags.as_ref().map(|tags| {
            images
                .iter()
                .filter_map(|i| tags.get(&i.image_id).map(|&s| (i.image_id, s)))
                .collect()
        });
        let mut out = Dataset {
            images,
            object_vocab: self.object_vocab.clone(),
            predicate_vocab: self.predicate_vocab.clone(),
            attribute_vocab: self.attribute_vocab.clone(),
            split_tags,
        };
        out.recount();
        out
    }
}

/// Per-image split. The first `round(train_fraction * n)` images of a seeded
/// shuffle of the sorted image ids go to train; both halves keep the original
/// record order and share the vocabulary id space.
pub fn split_dataset(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::invalid(format!(
            "train_fraction {train_fraction} outside [0, 1]"
        )));
    }
    let mut ids: Vec<ImageId> = dataset.images.iter().map(|i| i.image_id).collect();
    ids.sort_unstable();
    ids.shuffle(&mut seeded_rng(seed));
    let n_train = (train_fraction * ids.len() as f64).round() as usize;
    let train_ids: HashSet<ImageId> = ids[..n_train].iter().copied().collect();

    let tag = |split: Split| {
        move |d: &mut Dataset| {
            d.split_tags = Some(d.images.iter().map(|i| (i.image_id, split)).collect());
        }
    };
    let mut train = dataset.filter_images(|i| train_ids.contains(&i.image_id));
    let mut test = dataset.filter_images(|i| !train_ids.contains(&i.image_id));
    tag(Split::Train)(&mut train);
    tag(Split::Test)(&mut test);
    Ok((train, test))
}

/// The dataset-level counts, plus the duplicate-box flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_object_categories: usize,
    pub n_instances: usize,
    pub n_predicate_categories: usize,
    pub n_triplet_types: usize,
    pub n_images: usize,
    pub n_triplets: usize,
    pub n_attribute_categories: usize,
    /// Instances sharing image, label and exact box with an earlier instance.
    pub duplicate_boxes: usize,
}

pub fn dataset_stats(dataset: &Dataset) -> StatsReport {
    let mut objects = BTreeSet::new();
    let mut predicates = BTreeSet::new();
    let mut attributes = BTreeSet::new();
    let mut triplet_types = BTreeSet::new();
    let mut duplicate_boxes = 0;
    for img in &dataset.images {
        let mut boxes = HashSet::new();
        for inst in &img.instances {
            objects.insert(inst.object_label);
            attributes.extend(inst.attribute_labels.iter().copied());
            let b = inst.bbox;
            let key = (
                inst.object_label,
                b.x.to_bits(),
                b.y.to_bits(),
                b.w.to_bits(),
                b.h.to_bits(),
            );
            if !boxes.insert(key) {
                duplicate_boxes += 1;
            }
        }
        let labels: HashMap<InstanceId, LabelId> = img
            .instances
            .iter()
            .map(|i| (i.instance_id, i.object_label))
            .collect();
        for t in &img.triplets {
            predicates.insert(t.predicate);
            if let (Some(&s), Some(&o)) = (labels.get(&t.subject_id), labels.get(&t.object_id)) {
                triplet_types.insert((s, t.predicate, o));
            }
        }
    }
    StatsReport {
        n_object_categories: objects.len(),
        n_instances: dataset.n_instances(),
        n_predicate_categories: predicates.len(),
        n_triplet_types: triplet_types.len(),
        n_images: dataset.n_images(),
        n_triplets: dataset.n_triplets(),
        n_attribute_categories: attributes.len(),
        duplicate_boxes,
    }
}
