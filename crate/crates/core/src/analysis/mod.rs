//! Evaluation and reporting: the class-pair frequency baseline, recall@K in
//! the PredDet and PredCls settings, label histograms, and the synthetic
//! generator whose construction makes expected outcomes known in advance.

mod dist;
mod freq;
mod recall;
mod synth;

pub use dist::{
    conditional_distribution, cumulative_share, label_distribution, write_histogram_csv,
    HistogramEntry,
};
pub use freq::{fit_freq_baseline, freq_predict, FreqModel};
pub use recall::{
    eval_predcls, eval_preddet, eval_recall, Aggregation, EvalMode, PrecomputedScores, RecallResult,
};
pub use synth::{
    gen_synthetic, geometric_rule_holds, synthetic_embeddings, GeoRule, PredicateRule, RuleKind,
    SynthSpec,
};

use crate::error::Result;
use crate::sgdata::ImageRecord;

/// Anything that scores every predicate for ordered instance pairs of one image.
///
/// `pairs` holds positions into `image.instances` as `(subject, object)`.
/// The result has one score vector per pair, each as long as the predicate
/// vocabulary of the dataset under evaluation.
pub trait PredicateScorer: Sync {
    fn score_pairs(&self, image: &ImageRecord, pairs: &[(usize, usize)]) -> Result<Vec<Vec<f64>>>;
}

#[cfg(test)]
pub(crate) mod testutil {
    use std::collections::BTreeSet;

    use crate::sgdata::{BBox, Dataset, ImageRecord, Instance, Triplet, Vocab};

    /// Builds a dataset from per-image `(classes, triplets)` where triplets use
    /// local instance positions. Boxes are all distinct unit squares.
    pub fn build(
        objects: &[&str],
        predicates: &[&str],
        images: &[(Vec<u32>, Vec<(usize, u32, usize)>)],
    ) -> Dataset {
        let mut next_id = 0u64;
        let images = images
            .iter()
            .enumerate()
            .map(|(img_idx, (classes, triplets))| {
                let image_id = img_idx as u64 + 1;
                let base = next_id;
                let instances: Vec<Instance> = classes
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| Instance {
                        instance_id: base + k as u64,
                        image_id,
                        bbox: BBox::new(k as f64, 0.0, 1.0, 1.0).unwrap(),
                        object_label: c,
                        attribute_labels: BTreeSet::new(),
                    })
                    .collect();
                next_id += classes.len() as u64;
                ImageRecord {
                    image_id,
                    width: 10,
                    height: 10,
                    instances,
                    triplets: triplets
                        .iter()
                        .map(|&(s, p, o)| Triplet {
                            subject_id: base + s as u64,
                            predicate: p,
                            object_id: base + o as u64,
                        })
                        .collect(),
                }
            })
            .collect();
        let mut d = Dataset {
            images,
            object_vocab: Vocab::from_labels(objects.iter().copied()).unwrap(),
            predicate_vocab: Vocab::from_labels(predicates.iter().copied()).unwrap(),
            attribute_vocab: Vocab::default(),
            split_tags: None,
        };
        d.recount();
        d.validate().unwrap();
        d
    }
}
