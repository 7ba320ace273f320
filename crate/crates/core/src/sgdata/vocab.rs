use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::sgdata::LabelId;

/// Lowercases, trims and collapses internal whitespace.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Bidirectional label string <-> dense id map with per-id counts.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, LabelId>,
    counts: Vec<u64>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.counts == other.counts
    }
}

impl Vocab {
    /// Builds a vocabulary from already-normalized, unique labels; counts start at zero.
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab::default();
        for l in labels {
            v.push(l.into())?;
        }
        Ok(v)
    }

    pub fn push(&mut self, label: String) -> Result<LabelId> {
        if label.is_empty() || normalize_label(&label) != label {
            return Err(Error::invalid(format!("label {label:?} is not normalized")));
        }
        if self.index.contains_key(&label) {
            return Err(Error::invalid(format!("duplicate label {label:?}")));
        }
        let id = self.labels.len() as LabelId;
        self.index.insert(label.clone(), id);
        self.labels.push(label);
        self.counts.push(0);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: LabelId) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, label: &str) -> Option<LabelId> {
        self.index.get(label).copied()
    }

    pub fn count(&self, id: LabelId) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub(crate) fn set_counts(&mut self, counts: Vec<u64>) {
        assert_eq!(counts.len(), self.labels.len());
        self.counts = counts;
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    label: String,
    count: u64,
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = self
            .labels
            .iter()
            .zip(&self.counts)
            .map(|(label, &count)| Entry {
                label: label.clone(),
                count,
            })
            .collect();
        entries.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries = Vec::<Entry>::deserialize(deserializer)?;
        let mut v = Vocab::default();
        let mut counts = Vec::with_capacity(entries.len());
        for e in entries {
            v.push(e.label).map_err(serde::de::Error::custom)?;
            counts.push(e.count);
        }
        v.counts = counts;
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_collapses_whitespace() {
        assert_eq!(normalize_label("  Is  Wearing\tA "), "is wearing a");
        assert_eq!(normalize_label("   "), "");
    }

    #[test]
    fn push_rejects_duplicates_and_raw_labels() {
        let mut v = Vocab::default();
        assert_eq!(v.push("on".into()).unwrap(), 0);
        assert!(v.push("on".into()).is_err());
        assert!(v.push("On ".into()).is_err());
        assert_eq!(v.id("on"), Some(0));
        assert_eq!(v.label(0), Some("on"));
    }
}
