//! Visual discriminator: predicts a predicate from the subject and object
//! label vectors and their boxes, with no image input.
//!
//! ```text
//! v_s ─ FC ─ ReLU ─┐
//! p_s ─────────────┤
//! v_o ─ FC ─ ReLU ─┼─ concat ─ FC ─ BN ─ ReLU ─ FC ─ BN ─ logits
//! p_o ─────────────┤
//! p_j ─────────────┘
//! ```
//!
//! Subject and object projections have separate weights. All math is `f64`
//! and single-threaded so that a fixed seed reproduces training bit for bit.

mod checkpoint;
mod samples;
mod train;

use std::sync::Arc;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, write_loss_history, Checkpoint};
pub use samples::{build_samples, SampleReport, VdNetPredictor};
pub use train::{evaluate, grad_check, train, AccuracyReport, PredicateAccuracy};

use crate::error::{Error, Result};
use crate::pairgeom::{NormBox, PairGeometry, PAIR_DIM};
use crate::sgdata::LabelId;
use crate::util::seeded_rng;

/// Geometry features appended to the two projections: p_s, p_o and p_j.
const GEOMETRY_DIM: usize = 4 + 4 + PAIR_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VdNetConfig {
    pub word_proj_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    /// When false both normalization layers are the identity.
    pub batch_norm: bool,
}

impl Default for VdNetConfig {
    fn default() -> Self {
        VdNetConfig {
            word_proj_dim: 64,
            hidden_dim: 128,
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 20,
            batch_size: 256,
            seed: 0,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
            batch_norm: true,
        }
    }
}

impl VdNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_proj_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "network dimensions and batch size must be >= 1",
            ));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::invalid(format!(
                "bn_momentum {} outside (0, 1)",
                self.bn_momentum
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::invalid("bn_epsilon must be positive"));
        }
        Ok(())
    }
}

/// Fully-connected layer `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        // U(-a, a) has variance a^2 / 3 = 2 / (fan_in + fan_out)
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-a..a));
        Dense {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Dense {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Parameter gradients and input gradient for upstream gradient `dy`.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Dense, Array2<f64>) {
        let grad = Dense {
            weight: x.t().dot(dy),
            bias: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.weight.t()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrad {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Learnable weights plus normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct VdNetParams {
    pub subject_proj: Dense,
    pub object_proj: Dense,
    pub hidden: Dense,
    pub bn_hidden: BatchNorm,
    pub output: Dense,
    pub bn_output: BatchNorm,
    pub bn_epsilon: f64,
    pub batch_norm: bool,
}

/// Gradients of the learnable parameters, same layout as [`VdNetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct VdNetGrads {
    pub subject_proj: Dense,
    pub object_proj: Dense,
    pub hidden: Dense,
    pub bn_hidden: BnGrad,
    pub output: Dense,
    pub bn_output: BnGrad,
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub v_s: Arc<[f64]>,
    pub v_o: Arc<[f64]>,
    pub p_s: NormBox,
    pub p_o: NormBox,
    pub p_j: PairGeometry,
    pub target: LabelId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn init_vdnet(
    config: &VdNetConfig,
    embed_dim: usize,
    n_predicates: usize,
) -> Result<VdNetParams> {
    config.validate()?;
    if n_predicates < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 predicates, got {n_predicates}"
        )));
    }
    if embed_dim == 0 {
        return Err(Error::invalid("embedding dimension must be >= 1"));
    }
    let mut rng = seeded_rng(config.seed);
    let p = config.word_proj_dim;
    let concat = 2 * p + GEOMETRY_DIM;
    Ok(VdNetParams {
        subject_proj: Dense::glorot(embed_dim, p, &mut rng),
        object_proj: Dense::glorot(embed_dim, p, &mut rng),
        hidden: Dense::glorot(concat, config.hidden_dim, &mut rng),
        bn_hidden: BatchNorm::new(config.hidden_dim),
        output: Dense::glorot(config.hidden_dim, n_predicates, &mut rng),
        bn_output: BatchNorm::new(n_predicates),
        bn_epsilon: config.bn_epsilon,
        batch_norm: config.batch_norm,
    })
}

/// Matrices assembled from a batch of samples.
pub(crate) struct BatchInputs {
    subject: Array2<f64>,
    object: Array2<f64>,
    geom_s: Array2<f64>,
    geom_o: Array2<f64>,
    geom_j: Array2<f64>,
    targets: Vec<usize>,
}

impl BatchInputs {
    pub(crate) fn new(batch: &[&PairSample], embed_dim: usize) -> Result<Self> {
        let n = batch.len();
        let mut subject = Array2::zeros((n, embed_dim));
        let mut object = Array2::zeros((n, embed_dim));
        let mut geom_s = Array2::zeros((n, 4));
        let mut geom_o = Array2::zeros((n, 4));
        let mut geom_j = Array2::zeros((n, PAIR_DIM));
        for (r, smp) in batch.iter().enumerate() {
            if smp.v_s.len() != embed_dim || smp.v_o.len() != embed_dim {
                return Err(Error::Shape(format!(
                    "sample embedding length {} / {} != {embed_dim}",
                    smp.v_s.len(),
                    smp.v_o.len()
                )));
            }
            subject
                .row_mut(r)
                .assign(&ndarray::ArrayView1::from(&smp.v_s[..]));
            object
                .row_mut(r)
                .assign(&ndarray::ArrayView1::from(&smp.v_o[..]));
            geom_s
                .row_mut(r)
                .assign(&Array1::from(smp.p_s.to_array().to_vec()));
            geom_o
                .row_mut(r)
                .assign(&Array1::from(smp.p_o.to_array().to_vec()));
            geom_j
                .row_mut(r)
                .assign(&ndarray::ArrayView1::from(smp.p_j.as_slice()));
        }
        Ok(BatchInputs {
            subject,
            object,
            geom_s,
            geom_o,
            geom_j,
            targets: batch.iter().map(|s| s.target as usize).collect(),
        })
    }

    fn len(&self) -> usize {
        self.targets.len()
    }
}

struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct Activations {
    subject_pre: Array2<f64>,
    object_pre: Array2<f64>,
    concat: Array2<f64>,
    hidden_norm: Array2<f64>,
    hidden_act: Array2<f64>,
    bn_hidden: Option<BnCache>,
    bn_output: Option<BnCache>,
}

impl Activations {
    /// Per-feature batch mean of the hidden pre-normalization activations (train mode only).
    pub fn hidden_batch_mean(&self) -> Option<&Array1<f64>> {
        self.bn_hidden.as_ref().map(|c| &c.mean)
    }

    pub fn output_batch_mean(&self) -> Option<&Array1<f64>> {
        self.bn_output.as_ref().map(|c| &c.mean)
    }
}

pub struct ForwardPass {
    pub logits: Array2<f64>,
    pub activations: Activations,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu_backward(pre: &Array2<f64>, dy: Array2<f64>) -> Array2<f64> {
    let mut dx = dy;
    ndarray::Zip::from(&mut dx).and(pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

fn bn_train(x: &Array2<f64>, bn: &BatchNorm, eps: f64) -> (Array2<f64>, BnCache) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
    let centered = x - &mean;
    let var = centered
        .mapv(|v| v * v)
        .mean_axis(Axis(0))
        .expect("non-empty batch");
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let xhat = &centered * &inv_std;
    let y = &xhat * &bn.gamma + &bn.beta;
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[t];
        for (k, &v) in row.iter().enumerate() {
            d_logits[[r, k]] = (v - log_sum).exp() / n;
        }
        d_logits[[r, t]] -= 1.0 / n;
    }
    (loss / n, d_logits)
}

fn bn_eval(x: &Array2<f64>, bn: &BatchNorm, eps: f64) -> Array2<f64> {
    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + eps).sqrt());
    (x - &bn.running_mean) * &inv_std * &bn.gamma + &bn.beta
}

/// Full batch-statistics backward pass of batch normalization.
fn bn_backward(dy: &Array2<f64>, cache: &BnCache, gamma: &Array1<f64>) -> (BnGrad, Array2<f64>) {
    let n = dy.nrows() as f64;
    let grad = BnGrad {
        gamma: (dy * &cache.xhat).sum_axis(Axis(0)),
        beta: dy.sum_axis(Axis(0)),
    };
    let dxhat = dy * gamma;
    let sum_dxhat = dxhat.sum_axis(Axis(0));
    let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
    let dx = (&dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat) * &cache.inv_std / n;
    (grad, dx)
}

fn update_running(bn: &mut BatchNorm, cache: &BnCache, momentum: f64, batch: usize) {
    let unbiased = batch as f64 / (batch as f64 - 1.0);
    bn.running_mean = &bn.running_mean * momentum + &cache.mean * (1.0 - momentum);
    bn.running_var = &bn.running_var * momentum + &cache.var * (unbiased * (1.0 - momentum));
}

impl VdNetParams {
    pub fn embed_dim(&self) -> usize {
        self.subject_proj.weight.nrows()
    }

    pub fn n_predicates(&self) -> usize {
        self.output.weight.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.weight.ncols()
    }

    pub fn word_proj_dim(&self) -> usize {
        self.subject_proj.weight.ncols()
    }

    pub(crate) fn forward_inputs(&self, inputs: &BatchInputs, mode: Mode) -> Result<ForwardPass> {
        if inputs.len() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if mode == Mode::Train && inputs.len() < 2 {
            return Err(Error::invalid(
                "train-mode batch needs at least 2 samples for batch statistics",
            ));
        }
        let (subject_pre, object_pre) = self.projections(inputs);
        self.forward_head(inputs, subject_pre, object_pre, mode)
    }

    /// Pre-activation word projections of subject and object.
    pub(crate) fn projections(&self, inputs: &BatchInputs) -> (Array2<f64>, Array2<f64>) {
        (
            self.subject_proj.apply(&inputs.subject),
            self.object_proj.apply(&inputs.object),
        )
    }

    /// Everything after the word projections.
    fn forward_head(
        &self,
        inputs: &BatchInputs,
        subject_pre: Array2<f64>,
        object_pre: Array2<f64>,
        mode: Mode,
    ) -> Result<ForwardPass> {
        let concat = concatenate(
            Axis(1),
            &[
                relu(&subject_pre).view(),
                inputs.geom_s.view(),
                relu(&object_pre).view(),
                inputs.geom_o.view(),
                inputs.geom_j.view(),
            ],
        )
        .expect("row counts agree");
        let hidden_pre = self.hidden.apply(&concat);
        let (hidden_norm, bn_hidden) = self.normalize(&hidden_pre, &self.bn_hidden, mode);
        let hidden_act = relu(&hidden_norm);
        let out_pre = self.output.apply(&hidden_act);
        let (logits, bn_output) = self.normalize(&out_pre, &self.bn_output, mode);
        Ok(ForwardPass {
            logits,
            activations: Activations {
                subject_pre,
                object_pre,
                concat,
                hidden_norm,
                hidden_act,
                bn_hidden,
                bn_output,
            },
        })
    }

    fn normalize(
        &self,
        x: &Array2<f64>,
        bn: &BatchNorm,
        mode: Mode,
    ) -> (Array2<f64>, Option<BnCache>) {
        if !self.batch_norm {
            return (x.clone(), None);
        }
        match mode {
            Mode::Train => {
                let (y, cache) = bn_train(x, bn, self.bn_epsilon);
                (y, Some(cache))
            }
            Mode::Eval => (bn_eval(x, bn, self.bn_epsilon), None),
        }
    }

    /// Forward pass. Train mode normalizes with batch statistics and folds
    /// them into the running estimates; eval mode changes nothing.
    pub fn forward(
        &mut self,
        batch: &[PairSample],
        mode: Mode,
        bn_momentum: f64,
    ) -> Result<ForwardPass> {
        let refs: Vec<&PairSample> = batch.iter().collect();
        let inputs = BatchInputs::new(&refs, self.embed_dim())?;
        let pass = self.forward_inputs(&inputs, mode)?;
        if mode == Mode::Train {
            self.update_running_stats(&pass.activations, bn_momentum, inputs.len());
        }
        Ok(pass)
    }

    /// Eval-mode logits; a pure function of each sample.
    pub fn predict(&self, batch: &[PairSample]) -> Result<Array2<f64>> {
        let refs: Vec<&PairSample> = batch.iter().collect();
        let inputs = BatchInputs::new(&refs, self.embed_dim())?;
        Ok(self.forward_inputs(&inputs, Mode::Eval)?.logits)
    }

    pub(crate) fn update_running_stats(&mut self, acts: &Activations, momentum: f64, batch: usize) {
        if let Some(c) = &acts.bn_hidden {
            update_running(&mut self.bn_hidden, c, momentum, batch);
        }
        if let Some(c) = &acts.bn_output {
            update_running(&mut self.bn_output, c, momentum, batch);
        }
    }

    /// Mean softmax cross-entropy of a train-mode pass and its exact gradients.
    /// Running statistics are not touched.
    pub fn loss_and_grads(&self, batch: &[PairSample]) -> Result<(f64, VdNetGrads)> {
        let refs: Vec<&PairSample> = batch.iter().collect();
        let inputs = BatchInputs::new(&refs, self.embed_dim())?;
        let (loss, grads, _) = self.loss_and_grads_inputs(&inputs)?;
        Ok((loss, grads))
    }

    fn check_targets(&self, inputs: &BatchInputs) -> Result<()> {
        let c = self.n_predicates();
        match inputs.targets.iter().find(|&&t| t >= c) {
            Some(&bad) => Err(Error::invalid(format!(
                "target {bad} out of range for {c} predicates"
            ))),
            None => Ok(()),
        }
    }

    /// Train-mode loss from given word projections, for finite differences.
    pub(crate) fn loss_from_projections(
        &self,
        inputs: &BatchInputs,
        subject_pre: Array2<f64>,
        object_pre: Array2<f64>,
    ) -> Result<f64> {
        self.check_targets(inputs)?;
        if inputs.len() < 2 {
            return Err(Error::invalid(
                "train-mode batch needs at least 2 samples for batch statistics",
            ));
        }
        let pass = self.forward_head(inputs, subject_pre, object_pre, Mode::Train)?;
        Ok(cross_entropy(&pass.logits, &inputs.targets).0)
    }

    pub(crate) fn loss_and_grads_inputs(
        &self,
        inputs: &BatchInputs,
    ) -> Result<(f64, VdNetGrads, Activations)> {
        self.check_targets(inputs)?;
        let pass = self.forward_inputs(inputs, Mode::Train)?;
        let (loss, d_logits) = cross_entropy(&pass.logits, &inputs.targets);
        let grads = self.backward(inputs, &pass.activations, d_logits);
        Ok((loss, grads, pass.activations))
    }

    fn backward(
        &self,
        inputs: &BatchInputs,
        acts: &Activations,
        d_logits: Array2<f64>,
    ) -> VdNetGrads {
        let zero_bn = |dim: usize| BnGrad {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        };
        let (bn_output, d_out_pre) = match &acts.bn_output {
            Some(cache) => bn_backward(&d_logits, cache, &self.bn_output.gamma),
            None => (zero_bn(self.n_predicates()), d_logits),
        };
        let (output, d_hidden_act) = self.output.backward(&acts.hidden_act, &d_out_pre);
        let d_hidden_norm = relu_backward(&acts.hidden_norm, d_hidden_act);
        let (bn_hidden, d_hidden_pre) = match &acts.bn_hidden {
            Some(cache) => bn_backward(&d_hidden_norm, cache, &self.bn_hidden.gamma),
            None => (zero_bn(self.hidden_dim()), d_hidden_norm),
        };
        let (hidden, d_concat) = self.hidden.backward(&acts.concat, &d_hidden_pre);
        let p = self.word_proj_dim();
        let d_subject = relu_backward(&acts.subject_pre, d_concat.slice(s![.., 0..p]).to_owned());
        let d_object = relu_backward(
            &acts.object_pre,
            d_concat.slice(s![.., p + 4..2 * p + 4]).to_owned(),
        );
        let (subject_proj, _) = self.subject_proj.backward(&inputs.subject, &d_subject);
        let (object_proj, _) = self.object_proj.backward(&inputs.object, &d_object);
        VdNetGrads {
            subject_proj,
            object_proj,
            hidden,
            bn_hidden,
            output,
            bn_output,
        }
    }

    /// Learnable tensors in a fixed order, matching [`VdNetGrads::tensors`].
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("subject_proj.weight", slice2(&self.subject_proj.weight)),
            ("subject_proj.bias", slice1(&self.subject_proj.bias)),
            ("object_proj.weight", slice2(&self.object_proj.weight)),
            ("object_proj.bias", slice1(&self.object_proj.bias)),
            ("hidden.weight", slice2(&self.hidden.weight)),
            ("hidden.bias", slice1(&self.hidden.bias)),
            ("bn_hidden.gamma", slice1(&self.bn_hidden.gamma)),
            ("bn_hidden.beta", slice1(&self.bn_hidden.beta)),
            ("output.weight", slice2(&self.output.weight)),
            ("output.bias", slice1(&self.output.bias)),
            ("bn_output.gamma", slice1(&self.bn_output.gamma)),
            ("bn_output.beta", slice1(&self.bn_output.beta)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            (
                "subject_proj.weight",
                mslice2(&mut self.subject_proj.weight),
            ),
            ("subject_proj.bias", mslice1(&mut self.subject_proj.bias)),
            ("object_proj.weight", mslice2(&mut self.object_proj.weight)),
            ("object_proj.bias", mslice1(&mut self.object_proj.bias)),
            ("hidden.weight", mslice2(&mut self.hidden.weight)),
            ("hidden.bias", mslice1(&mut self.hidden.bias)),
            ("bn_hidden.gamma", mslice1(&mut self.bn_hidden.gamma)),
            ("bn_hidden.beta", mslice1(&mut self.bn_hidden.beta)),
            ("output.weight", mslice2(&mut self.output.weight)),
            ("output.bias", mslice1(&mut self.output.bias)),
            ("bn_output.gamma", mslice1(&mut self.bn_output.gamma)),
            ("bn_output.beta", mslice1(&mut self.bn_output.beta)),
        ]
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

impl VdNetGrads {
    pub(crate) fn zeros_like(params: &VdNetParams) -> Self {
        let bn = |b: &BatchNorm| BnGrad {
            gamma: Array1::zeros(b.gamma.raw_dim()),
            beta: Array1::zeros(b.beta.raw_dim()),
        };
        VdNetGrads {
            subject_proj: params.subject_proj.zeros_like(),
            object_proj: params.object_proj.zeros_like(),
            hidden: params.hidden.zeros_like(),
            bn_hidden: bn(&params.bn_hidden),
            output: params.output.zeros_like(),
            bn_output: bn(&params.bn_output),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("subject_proj.weight", slice2(&self.subject_proj.weight)),
            ("subject_proj.bias", slice1(&self.subject_proj.bias)),
            ("object_proj.weight", slice2(&self.object_proj.weight)),
            ("object_proj.bias", slice1(&self.object_proj.bias)),
            ("hidden.weight", slice2(&self.hidden.weight)),
            ("hidden.bias", slice1(&self.hidden.bias)),
            ("bn_hidden.gamma", slice1(&self.bn_hidden.gamma)),
            ("bn_hidden.beta", slice1(&self.bn_hidden.beta)),
            ("output.weight", slice2(&self.output.weight)),
            ("output.bias", slice1(&self.output.bias)),
            ("bn_output.gamma", slice1(&self.bn_output.gamma)),
            ("bn_output.beta", slice1(&self.bn_output.beta)),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            mslice2(&mut self.subject_proj.weight),
            mslice1(&mut self.subject_proj.bias),
            mslice2(&mut self.object_proj.weight),
            mslice1(&mut self.object_proj.bias),
            mslice2(&mut self.hidden.weight),
            mslice1(&mut self.hidden.bias),
            mslice1(&mut self.bn_hidden.gamma),
            mslice1(&mut self.bn_hidden.beta),
            mslice2(&mut self.output.weight),
            mslice1(&mut self.output.bias),
            mslice1(&mut self.bn_output.gamma),
            mslice1(&mut self.bn_output.beta),
        ]
    }
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}
fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}
fn mslice2(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}
fn mslice1(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

#[cfg(test)]
pub(crate) mod tests;
