use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BatchInputs, PairSample, VdNetConfig, VdNetGrads, VdNetParams};
use crate::error::{Error, Result};
use crate::sgdata::LabelId;
use crate::util::{argmax, seeded_rng, GRAD_CHECK_FLOOR};

const EVAL_CHUNK: usize = 1024;
const GRAD_CHECK_MAX_PARAMS: usize = 10_000;

/// Mini-batch SGD with momentum. Batches come from a per-epoch shuffle drawn
/// from `rng`; a trailing batch of one sample is skipped. Returns the mean
/// training loss of every epoch.
pub fn train(
    mut params: VdNetParams,
    train_set: &[PairSample],
    config: &VdNetConfig,
    rng: &mut impl Rng,
) -> Result<(VdNetParams, Vec<f64>)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if config.epochs == 0 {
        return Ok((params, Vec::new()));
    }
    if train_set.len() < 2 {
        return Err(Error::invalid("training needs at least 2 samples"));
    }
    let embed_dim = params.embed_dim();
    let mut velocity = VdNetGrads::zeros_like(&params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<&PairSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let inputs = BatchInputs::new(&batch, embed_dim)?;
            let (loss, grads, acts) = params.loss_and_grads_inputs(&inputs)?;
            params.update_running_stats(&acts, config.bn_momentum, chunk.len());
            for ((v, g), (_, p)) in velocity
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(params.tensors_mut())
            {
                for ((vi, gi), pi) in v.iter_mut().zip(g.1).zip(p.iter_mut()) {
                    *vi = config.momentum * *vi + gi;
                    *pi -= config.learning_rate * *vi;
                }
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        history.push(loss_sum / seen as f64);
    }
    Ok((params, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredicateAccuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub support: usize,
}

/// Held-out accuracy per gold predicate; predicates without test samples are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub per_predicate: BTreeMap<LabelId, PredicateAccuracy>,
    pub overall_accuracy: f64,
}

impl AccuracyReport {
    /// Builds a report from `(gold, predicted)` pairs.
    pub fn from_predictions(pairs: impl IntoIterator<Item = (LabelId, LabelId)>) -> Self {
        let mut tally: BTreeMap<LabelId, (usize, usize)> = BTreeMap::new();
        for (gold, pred) in pairs {
            let e = tally.entry(gold).or_default();
            e.1 += 1;
            if gold == pred {
                e.0 += 1;
            }
        }
        let (correct, total) = tally
            .values()
            .fold((0, 0), |(c, t), &(ci, ti)| (c + ci, t + ti));
        AccuracyReport {
            per_predicate: tally
                .into_iter()
                .map(|(p, (c, t))| {
                    (
                        p,
                        PredicateAccuracy {
                            accuracy: c as f64 / t as f64,
                            correct: c,
                            support: t,
                        },
                    )
                })
                .collect(),
            overall_accuracy: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
        }
    }

    pub fn accuracy(&self, predicate: LabelId) -> Option<f64> {
        self.per_predicate.get(&predicate).map(|a| a.accuracy)
    }
}

/// Eval-mode accuracy of the argmax prediction, per gold predicate.
pub fn evaluate(params: &VdNetParams, test_set: &[PairSample]) -> Result<AccuracyReport> {
    if test_set.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut pairs = Vec::with_capacity(test_set.len());
    for chunk in test_set.chunks(EVAL_CHUNK) {
        let logits = params.predict(chunk)?;
        for (row, smp) in logits.rows().into_iter().zip(chunk) {
            let pred = argmax(row.as_slice().expect("row-major logits"));
            pairs.push((smp.target, pred as LabelId));
        }
    }
    Ok(AccuracyReport::from_predictions(pairs))
}

/// Largest relative disagreement between analytic gradients and central
/// differences `(L(p + eps) - L(p - eps)) / 2 eps` of the train-mode loss.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; above 10^4 parameters a
/// seeded subsample of 10^4 coordinates is checked.
pub fn grad_check(params: &VdNetParams, batch: &[PairSample], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("grad_check epsilon must be positive"));
    }
    let refs: Vec<&PairSample> = batch.iter().collect();
    let inputs = BatchInputs::new(&refs, params.embed_dim())?;
    let (_, grads, _) = params.loss_and_grads_inputs(&inputs)?;
    let analytic: Vec<f64> = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter().copied())
        .collect();
    let total = analytic.len();
    let mut coords: Vec<usize> = (0..total).collect();
    if total > GRAD_CHECK_MAX_PARAMS {
        coords.shuffle(&mut seeded_rng(0x9c4a_11e5));
        coords.truncate(GRAD_CHECK_MAX_PARAMS);
        coords.sort_unstable();
    }
    // Word projections are affine in their parameters, so a perturbation
    // there shifts one projection column instead of redoing the product.
    let (subject_pre, object_pre) = params.projections(&inputs);
    let out_dim = params.word_proj_dim();
    let name_of = |mut idx: usize| {
        for (name, t) in params.tensors() {
            if idx < t.len() {
                return (name, idx);
            }
            idx -= t.len();
        }
        unreachable!("flat index in range")
    };
    let errors = coords
        .par_iter()
        .map_init(
            || params.clone(),
            |probe, &idx| -> Result<f64> {
                let (name, local) = name_of(idx);
                let mut loss_at = |delta: f64| -> Result<f64> {
                    let (layer, part) = name.split_once('.').expect("dotted tensor name");
                    if layer == "subject_proj" || layer == "object_proj" {
                        let (x, base) = if layer == "subject_proj" {
                            (&inputs.subject, &subject_pre)
                        } else {
                            (&inputs.object, &object_pre)
                        };
                        let mut pre = base.clone();
                        if part == "weight" {
                            let (i, j) = (local / out_dim, local % out_dim);
                            pre.column_mut(j).scaled_add(delta, &x.column(i));
                        } else {
                            pre.column_mut(local).mapv_inplace(|v| v + delta);
                        }
                        return if layer == "subject_proj" {
                            probe.loss_from_projections(&inputs, pre, object_pre.clone())
                        } else {
                            probe.loss_from_projections(&inputs, subject_pre.clone(), pre)
                        };
                    }
                    let original = get_flat(probe, idx);
                    set_flat(probe, idx, original + delta);
                    let loss = probe.loss_from_projections(
                        &inputs,
                        subject_pre.clone(),
                        object_pre.clone(),
                    );
                    set_flat(probe, idx, original);
                    loss
                };
                let numeric = (loss_at(epsilon)? - loss_at(-epsilon)?) / (2.0 * epsilon);
                let a = analytic[idx];
                Ok((a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR))
            },
        )
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

fn get_flat(params: &VdNetParams, mut idx: usize) -> f64 {
    for (_, t) in params.tensors() {
        if idx < t.len() {
            return t[idx];
        }
        idx -= t.len();
    }
    panic!("flat index out of range")
}

fn set_flat(params: &mut VdNetParams, mut idx: usize, value: f64) {
    for (_, t) in params.tensors_mut() {
        if idx < t.len() {
            t[idx] = value;
            return;
        }
        idx -= t.len();
    }
    panic!("flat index out of range")
}
