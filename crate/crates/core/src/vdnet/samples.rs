use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{PairSample, VdNetParams};
use crate::analysis::PredicateScorer;
use crate::embed::{phrase_vector, EmbeddingTable};
use crate::error::{Error, Result};
use crate::pairgeom::{normalize_box, pair_embedding};
use crate::sgdata::{Dataset, ImageRecord, Instance, LabelId, Vocab};
use crate::util::softmax;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub samples: usize,
    /// Object labels with no token in the embedding table (fed as zero vectors).
    pub oov_object_labels: Vec<String>,
}

/// Phrase vector of every object label, shared across samples.
fn class_vectors(vocab: &Vocab, table: &EmbeddingTable) -> Result<(Vec<Arc<[f64]>>, Vec<String>)> {
    let mut oov = Vec::new();
    let vectors = vocab
        .labels()
        .iter()
        .map(|label| {
            let pv = phrase_vector(table, label)?;
            if pv.oov {
                oov.push(label.clone());
            }
            Ok(Arc::from(pv.values))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((vectors, oov))
}

fn make_sample(
    image: &ImageRecord,
    subject: &Instance,
    object: &Instance,
    vectors: &[Arc<[f64]>],
    target: LabelId,
) -> Result<PairSample> {
    let (w, h) = (image.width as f64, image.height as f64);
    let p_s = normalize_box(&subject.bbox, w, h)?;
    let p_o = normalize_box(&object.bbox, w, h)?;
    Ok(PairSample {
        v_s: vectors[subject.object_label as usize].clone(),
        v_o: vectors[object.object_label as usize].clone(),
        p_s,
        p_o,
        p_j: pair_embedding(&p_s, &p_o)?,
        target,
    })
}

/// One sample per triplet, in dataset order.
pub fn build_samples(
    dataset: &Dataset,
    table: &EmbeddingTable,
) -> Result<(Vec<PairSample>, SampleReport)> {
    let (vectors, oov_object_labels) = class_vectors(&dataset.object_vocab, table)?;
    let mut samples = Vec::with_capacity(dataset.n_triplets());
    for img in &dataset.images {
        let pos = img.instance_positions();
        for t in &img.triplets {
            let lookup = |id| {
                pos.get(&id).map(|&p| &img.instances[p]).ok_or_else(|| {
                    Error::invalid(format!("triplet references missing instance {id}"))
                })
            };
            samples.push(make_sample(
                img,
                lookup(t.subject_id)?,
                lookup(t.object_id)?,
                &vectors,
                t.predicate,
            )?);
        }
    }
    let report = SampleReport {
        samples: samples.len(),
        oov_object_labels,
    };
    Ok((samples, report))
}

/// Trained network wrapped as a pair scorer (softmax probabilities).
pub struct VdNetPredictor {
    params: VdNetParams,
    vectors: Vec<Arc<[f64]>>,
}

impl VdNetPredictor {
    pub fn new(params: VdNetParams, object_vocab: &Vocab, table: &EmbeddingTable) -> Result<Self> {
        let (vectors, _) = class_vectors(object_vocab, table)?;
        if let Some(v) = vectors.first() {
            if v.len() != params.embed_dim() {
                return Err(Error::Shape(format!(
                    "table dim {} does not match network input {}",
                    v.len(),
                    params.embed_dim()
                )));
            }
        }
        Ok(VdNetPredictor { params, vectors })
    }
}

impl PredicateScorer for VdNetPredictor {
    fn score_pairs(&self, image: &ImageRecord, pairs: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let samples = pairs
            .iter()
            .map(|&(s, o)| {
                make_sample(
                    image,
                    &image.instances[s],
                    &image.instances[o],
                    &self.vectors,
                    0,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let logits = self.params.predict(&samples)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| softmax(r.as_slice().expect("row-major")))
            .collect())
    }
}
