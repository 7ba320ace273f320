use std::collections::BTreeMap;

use super::PredicateScorer;
use crate::error::{Error, Result};
use crate::sgdata::{Dataset, ImageRecord, LabelId};

/// Predicate counts conditioned on the (subject class, object class) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqModel {
    pub counts: BTreeMap<(LabelId, LabelId), Vec<u64>>,
    pub smoothing_k: f64,
    pub n_predicates: usize,
}

impl FreqModel {
    /// Non-zero counts for one class pair, keyed by predicate id.
    pub fn pair_counts(
        &self,
        subject_class: LabelId,
        object_class: LabelId,
    ) -> BTreeMap<LabelId, u64> {
        self.counts
            .get(&(subject_class, object_class))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(p, &c)| (p as LabelId, c))
                    .collect()
            })
            .unwrap_or_default()
    }
}

pub fn fit_freq_baseline(train: &Dataset, smoothing_k: f64) -> Result<FreqModel> {
    if !(smoothing_k >= 0.0 && smoothing_k.is_finite()) {
        return Err(Error::invalid(format!(
            "smoothing_k {smoothing_k} must be finite and >= 0"
        )));
    }
    if train.images.is_empty() {
        return Err(Error::invalid(
            "cannot fit a frequency baseline on an empty dataset",
        ));
    }
    let n_predicates = train.predicate_vocab.len();
    if n_predicates == 0 {
        return Err(Error::invalid("predicate vocabulary is empty"));
    }
    let mut counts: BTreeMap<(LabelId, LabelId), Vec<u64>> = BTreeMap::new();
    for img in &train.images {
        let pos = img.instance_positions();
        for t in &img.triplets {
            let class = |id| img.instances[pos[&id]].object_label;
            counts
                .entry((class(t.subject_id), class(t.object_id)))
                .or_insert_with(|| vec![0; n_predicates])[t.predicate as usize] += 1;
        }
    }
    Ok(FreqModel {
        counts,
        smoothing_k,
        n_predicates,
    })
}

/// Add-k smoothed `P(r | s, o)`; uniform when the pair was never seen and k = 0.
pub fn freq_predict(model: &FreqModel, subject_class: LabelId, object_class: LabelId) -> Vec<f64> {
    let c = model.n_predicates;
    let k = model.smoothing_k;
    match model.counts.get(&(subject_class, object_class)) {
        Some(row) => {
            let denom: f64 = row.iter().map(|&n| n as f64 + k).sum();
            row.iter().map(|&n| (n as f64 + k) / denom).collect()
        }
        None => vec![1.0 / c as f64; c],
    }
}

impl PredicateScorer for FreqModel {
    fn score_pairs(&self, image: &ImageRecord, pairs: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
        Ok(pairs
            .iter()
            .map(|&(s, o)| {
                freq_predict(
                    self,
                    image.instances[s].object_label,
                    image.instances[o].object_label,
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::build;
    use super::*;
    use proptest::prelude::*;

    // classes: man=0, nose=1; predicates: has=0, on=1
    fn man_nose() -> Dataset {
        build(
            &["man", "nose"],
            &["has", "on"],
            &[
                (vec![0, 1], vec![(0, 0, 1), (0, 1, 1)]),
                (vec![0, 1, 1], vec![(0, 0, 1), (0, 0, 2)]),
                (vec![1, 0], vec![(0, 1, 1)]),
            ],
        )
    }

    #[test]
    fn counts_are_tallied_by_class_pair() {
        let m = fit_freq_baseline(&man_nose(), 0.0).unwrap();
        assert_eq!(m.pair_counts(0, 1), BTreeMap::from([(0, 3), (1, 1)]));
        assert_eq!(m.pair_counts(1, 0), BTreeMap::from([(1, 1)]));
        assert!(m.pair_counts(0, 0).is_empty());
    }

    #[test]
    fn prediction_normalizes_counts() {
        let m = fit_freq_baseline(&man_nose(), 0.0).unwrap();
        assert_eq!(freq_predict(&m, 0, 1), vec![0.75, 0.25]);
        assert_eq!(freq_predict(&m, 1, 1), vec![0.5, 0.5]);
        let smoothed = FreqModel {
            smoothing_k: 1.0,
            ..m
        };
        let p = freq_predict(&smoothed, 0, 1);
        assert!((p[0] - 4.0 / 6.0).abs() < 1e-15 && (p[1] - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn preconditions() {
        assert!(fit_freq_baseline(&man_nose(), -1.0).is_err());
        assert!(fit_freq_baseline(&Dataset::default(), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn predictions_sum_to_one_and_match_recount(
            imgs in prop::collection::vec(
                (prop::collection::vec(0u32..3, 2..4), prop::collection::vec((0usize..4, 0u32..3, 0usize..4), 0..5)),
                1..5),
            k in 0.0f64..3.0,
        ) {
            let images: Vec<_> = imgs.into_iter().map(|(classes, ts)| {
                let n = classes.len();
                let ts = ts.into_iter()
                    .map(|(s, p, o)| (s % n, p, o % n))
                    .filter(|(s, _, o)| s != o)
                    .collect();
                (classes, ts)
            }).collect();
            let d = build(&["a", "b", "c"], &["p", "q", "r"], &images);
            let m = fit_freq_baseline(&d, k).unwrap();
            let m0 = fit_freq_baseline(&d, 0.0).unwrap();
            for s in 0..3 {
                for o in 0..3 {
                    let p = freq_predict(&m, s, o);
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                    // brute-force recount of the same class pair
                    let mut tally = [0u64; 3];
                    for img in &d.images {
                        for t in &img.triplets {
                            let cls = |id| img.instance(id).unwrap().object_label;
                            if cls(t.subject_id) == s && cls(t.object_id) == o {
                                tally[t.predicate as usize] += 1;
                            }
                        }
                    }
                    let total: u64 = tally.iter().sum();
                    let expected: Vec<f64> = if total == 0 {
                        vec![1.0 / 3.0; 3]
                    } else {
                        tally.iter().map(|&c| c as f64 / total as f64).collect()
                    };
                    prop_assert_eq!(freq_predict(&m0, s, o), expected);
                }
            }
        }
    }
}
