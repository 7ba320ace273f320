use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{BatchNorm, Dense, VdNetParams};
use crate::error::{Error, Result};

const FORMAT: &str = "vdnet";
const VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub embed_dim: usize,
    pub word_proj_dim: usize,
    pub hidden_dim: usize,
    pub n_predicates: usize,
}

/// Serialized network: every tensor by name, including running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u64,
    pub dims: Dims,
    pub bn_epsilon: f64,
    pub batch_norm: bool,
    pub tensors: BTreeMap<String, Vec<f64>>,
    pub predicate_labels: Vec<String>,
}

impl Checkpoint {
    pub fn from_params(params: &VdNetParams, predicate_labels: &[String]) -> Result<Self> {
        if predicate_labels.len() != params.n_predicates() {
            return Err(Error::Shape(format!(
                "{} labels for {} predicate outputs",
                predicate_labels.len(),
                params.n_predicates()
            )));
        }
        let mut tensors: BTreeMap<String, Vec<f64>> = params
            .tensors()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect();
        for (name, bn) in [
            ("bn_hidden", &params.bn_hidden),
            ("bn_output", &params.bn_output),
        ] {
            tensors.insert(format!("{name}.running_mean"), bn.running_mean.to_vec());
            tensors.insert(format!("{name}.running_var"), bn.running_var.to_vec());
        }
        Ok(Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            dims: Dims {
                embed_dim: params.embed_dim(),
                word_proj_dim: params.word_proj_dim(),
                hidden_dim: params.hidden_dim(),
                n_predicates: params.n_predicates(),
            },
            bn_epsilon: params.bn_epsilon,
            batch_norm: params.batch_norm,
            tensors,
            predicate_labels: predicate_labels.to_vec(),
        })
    }

    pub fn to_params(&self) -> Result<VdNetParams> {
        if self.format != FORMAT {
            return Err(Error::Schema {
                source_name: "checkpoint".into(),
                message: format!("format {:?} is not {FORMAT:?}", self.format),
            });
        }
        if self.version != VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: VERSION,
            });
        }
        let d = self.dims;
        let concat = 2 * d.word_proj_dim + super::GEOMETRY_DIM;
        let vec1 = |name: &str, len: usize| -> Result<Array1<f64>> {
            let t = self.tensor(name)?;
            if t.len() != len {
                return Err(Error::Shape(format!(
                    "{name} has {} values, expected {len}",
                    t.len()
                )));
            }
            Ok(Array1::from(t.to_vec()))
        };
        let mat = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
            let t = self.tensor(name)?;
            Array2::from_shape_vec((rows, cols), t.to_vec()).map_err(|_| {
                Error::Shape(format!(
                    "{name} has {} values, expected {rows}x{cols}",
                    t.len()
                ))
            })
        };
        let dense = |name: &str, rows: usize, cols: usize| -> Result<Dense> {
            Ok(Dense {
                weight: mat(&format!("{name}.weight"), rows, cols)?,
                bias: vec1(&format!("{name}.bias"), cols)?,
            })
        };
        let bn = |name: &str, dim: usize| -> Result<BatchNorm> {
            Ok(BatchNorm {
                gamma: vec1(&format!("{name}.gamma"), dim)?,
                beta: vec1(&format!("{name}.beta"), dim)?,
                running_mean: vec1(&format!("{name}.running_mean"), dim)?,
                running_var: vec1(&format!("{name}.running_var"), dim)?,
            })
        };
        if self.predicate_labels.len() != d.n_predicates {
            return Err(Error::Shape(format!(
                "{} labels for {} predicate outputs",
                self.predicate_labels.len(),
                d.n_predicates
            )));
        }
        Ok(VdNetParams {
            subject_proj: dense("subject_proj", d.embed_dim, d.word_proj_dim)?,
            object_proj: dense("object_proj", d.embed_dim, d.word_proj_dim)?,
            hidden: dense("hidden", concat, d.hidden_dim)?,
            bn_hidden: bn("bn_hidden", d.hidden_dim)?,
            output: dense("output", d.hidden_dim, d.n_predicates)?,
            bn_output: bn("bn_output", d.n_predicates)?,
            bn_epsilon: self.bn_epsilon,
            batch_norm: self.batch_norm,
        })
    }

    fn tensor(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .get(name)
            .map(|v| &v[..])
            .ok_or_else(|| Error::Schema {
                source_name: "checkpoint".into(),
                message: format!("missing tensor {name}"),
            })
    }
}

pub fn save_checkpoint(
    params: &VdNetParams,
    predicate_labels: &[String],
    path: &Path,
) -> Result<()> {
    let ckpt = Checkpoint::from_params(params, predicate_labels)?;
    let text = serde_json::to_string(&ckpt).expect("checkpoint serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and returns the network with its predicate labels.
pub fn load_checkpoint(path: &Path) -> Result<(VdNetParams, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Schema {
        source_name: path.display().to_string(),
        message: e.to_string(),
    })?;
    let params = ckpt.to_params()?;
    Ok((params, ckpt.predicate_labels))
}

/// CSV with columns `epoch,mean_loss`, epochs counted from 1.
pub fn write_loss_history(history: &[f64], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,mean_loss")?;
    for (i, loss) in history.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, loss)?;
    }
    Ok(())
}
