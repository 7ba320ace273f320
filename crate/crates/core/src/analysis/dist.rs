use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::sgdata::{Dataset, LabelId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramEntry {
    pub label: String,
    pub count: u64,
    pub share: f64,
}

/// Shares of every occurring predicate, largest first (ties by label).
pub fn label_distribution(dataset: &Dataset) -> Vec<HistogramEntry> {
    histogram(dataset, dataset.triplets().map(|(_, t)| t.predicate))
}

/// Predicate shares among triplets whose subject and object have the given classes.
pub fn conditional_distribution(
    dataset: &Dataset,
    subject_class: LabelId,
    object_class: LabelId,
) -> Vec<HistogramEntry> {
    let matching = dataset.images.iter().flat_map(|img| {
        let pos = img.instance_positions();
        img.triplets
            .iter()
            .filter(move |t| {
                img.instances[pos[&t.subject_id]].object_label == subject_class
                    && img.instances[pos[&t.object_id]].object_label == object_class
            })
            .map(|t| t.predicate)
            .collect::<Vec<_>>()
    });
    histogram(dataset, matching)
}

fn histogram(dataset: &Dataset, predicates: impl Iterator<Item = LabelId>) -> Vec<HistogramEntry> {
    let mut counts = vec![0u64; dataset.predicate_vocab.len()];
    for p in predicates {
        counts[p as usize] += 1;
    }
    let total: u64 = counts.iter().sum();
    let mut entries: Vec<HistogramEntry> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(p, &c)| HistogramEntry {
            label: dataset
                .predicate_vocab
                .label(p as LabelId)
                .unwrap_or_default()
                .to_string(),
            count: c,
            share: c as f64 / total as f64,
        })
        .collect();
    entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
    entries
}

/// Combined share of the first `k` entries.
pub fn cumulative_share(entries: &[HistogramEntry], k: usize) -> f64 {
    entries.iter().take(k).map(|e| e.share).sum()
}

/// CSV with header `label,count,share`.
pub fn write_histogram_csv(entries: &[HistogramEntry], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "label,count,share")?;
    for e in entries {
        writeln!(out, "{},{},{}", e.label, e.count, e.share)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::testutil::build;
    use super::*;
    use crate::sgdata::fixtures::two_image_dataset;

    #[test]
    fn shares_are_sorted_and_normalized() {
        let d = build(
            &["x"],
            &["a", "b", "c"],
            &[(
                vec![0, 0, 0],
                vec![(0, 0, 1), (1, 0, 2), (2, 1, 0), (0, 0, 2)],
            )],
        );
        let h = label_distribution(&d);
        let pairs: Vec<_> = h.iter().map(|e| (e.label.as_str(), e.share)).collect();
        assert_eq!(pairs, vec![("a", 0.75), ("b", 0.25)]);
        assert_eq!(cumulative_share(&h, 1), 0.75);
        assert!(label_distribution(&Dataset::default()).is_empty());
    }

    #[test]
    fn conditional_matches_recount() {
        let d = two_image_dataset();
        let man = d.object_vocab.id("man").unwrap();
        let nose = d.object_vocab.id("nose").unwrap();
        let h = conditional_distribution(&d, man, nose);
        assert_eq!(h.len(), 1);
        assert_eq!(
            (h[0].label.as_str(), h[0].count, h[0].share),
            ("has", 1, 1.0)
        );
        assert!(conditional_distribution(&d, nose, man).is_empty());
        // brute-force: every class pair's histogram totals equal the triplet count
        let mut total = 0;
        for s in 0..d.object_vocab.len() as LabelId {
            for o in 0..d.object_vocab.len() as LabelId {
                total += conditional_distribution(&d, s, o)
                    .iter()
                    .map(|e| e.count)
                    .sum::<u64>();
            }
        }
        assert_eq!(total as usize, d.n_triplets());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        let entries = [HistogramEntry {
            label: "on".into(),
            count: 2,
            share: 0.5,
        }];
        write_histogram_csv(&entries, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "label,count,share\non,2,0.5\n"
        );
    }
}
