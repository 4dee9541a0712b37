//! Feed-forward fake news classifier trained with the (optionally re-weighted)
//! cross-entropy loss.
//!
//! Architecture:
//!
//! ```text
//! h_un  = relu(W_un · un_row + b_un)                      (p  -> h_u)
//! h     = relu(W_f · [h_un ⊕ z_news ⊕ z_comments] + b_f)  (h_u + 2D -> h_f)
//! ŷ     = sigmoid(w_o · h + b_o)                          (h_f -> 1)
//! ```
//!
//! The `linear` variant drops both hidden layers and is plain logistic
//! regression over `[un_row ⊕ z_news ⊕ z_comments]`.
//!
//! Weights are stored input-major (`w[k * outputs + o]`) because every input
//! vector is sparse; a sample only touches the weight rows of its nonzero
//! inputs, and the optimizer only visits those rows.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::encode::EmbeddingVector;
use crate::error::{Error, Result};
use crate::eval::stratified_partition;
use crate::weighting::{self, clamp_probability, NormKind, CLAMP_EPS};

/// One classifier input: text encoding, comment encoding and the news's matrix row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub z_news: EmbeddingVector,
    pub z_comments: EmbeddingVector,
    pub un_row: EmbeddingVector,
}

/// Which interaction evidence and loss a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Binary matrix rows, plain mean cross-entropy.
    #[default]
    BinaryUn,
    /// Edge re-weighted rows, plain mean cross-entropy.
    EdgeReweight,
    /// Binary rows, batch-wise re-weighted cross-entropy.
    SampleReweight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub mode: TrainMode,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub h_u: usize,
    pub h_f: usize,
    /// Drop the hidden layers (logistic regression).
    pub linear: bool,
    /// Share of the training set held out for early stopping.
    pub validation_fraction: f64,
    /// Norm used for the batch-wise sample factors.
    pub norm_kind: NormKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 0.05,
            alpha: 1.0,
            mode: TrainMode::BinaryUn,
            early_stop_patience: 10,
            seed: 0,
            h_u: 32,
            h_f: 64,
            linear: false,
            validation_fraction: 0.15,
            norm_kind: NormKind::L2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        weighting::validate_alpha(self.alpha)?;
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be positive".into());
        }
        if !self.linear && (self.h_u == 0 || self.h_f == 0) {
            return bad("h_u and h_f must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}

/// Input dimensions and hidden sizes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    /// Number of matrix columns `p`.
    pub un_dim: usize,
    /// Text encoding dimension `D`.
    pub text_dim: usize,
    pub h_u: usize,
    pub h_f: usize,
    pub linear: bool,
}

impl ModelShape {
    pub fn for_config(un_dim: usize, text_dim: usize, cfg: &TrainConfig) -> Self {
        ModelShape {
            un_dim,
            text_dim,
            h_u: cfg.h_u,
            h_f: cfg.h_f,
            linear: cfg.linear,
        }
    }

    pub fn check_row(&self, row: &FeatureRow) -> Result<()> {
        if row.un_row.dim() != self.un_dim
            || row.z_news.dim() != self.text_dim
            || row.z_comments.dim() != self.text_dim
        {
            return Err(Error::Contract(format!(
                "feature row dims ({}, {}, {}) do not match model (D={}, p={})",
                row.z_news.dim(),
                row.z_comments.dim(),
                row.un_row.dim(),
                self.text_dim,
                self.un_dim
            )));
        }
        Ok(())
    }
}

/// Fully connected layer with input-major weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]` for weights and biases.
    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut d = Dense::zeros(inputs, outputs);
        for w in d.weight.iter_mut().chain(d.bias.iter_mut()) {
            *w = rng.gen_range(-bound..=bound);
        }
        d
    }

    #[inline]
    fn row(&self, k: usize) -> &[f64] {
        &self.weight[k * self.outputs..(k + 1) * self.outputs]
    }

    /// `out = b + Σ_k x_k · W[k]` over the given nonzero inputs.
    fn forward(&self, x: impl Iterator<Item = (usize, f64)>, out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (k, v) in x {
            for (o, w) in out.iter_mut().zip(self.row(k)) {
                *o += v * w;
            }
        }
    }

    /// Add `delta ⊗ x` to this layer, interpreted as a gradient buffer.
    fn accumulate(
        &mut self,
        x: impl Iterator<Item = (usize, f64)>,
        delta: &[f64],
        touched: &mut Touched,
    ) {
        for (b, d) in self.bias.iter_mut().zip(delta) {
            *b += d;
        }
        let n = self.outputs;
        for (k, v) in x {
            touched.mark(k);
            for (g, d) in self.weight[k * n..(k + 1) * n].iter_mut().zip(delta) {
                *g += v * d;
            }
        }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Input rows of a layer that received gradient since the last step.
#[derive(Debug, Clone)]
struct Touched {
    flag: Vec<bool>,
    list: Vec<usize>,
}

impl Touched {
    fn new(inputs: usize) -> Self {
        Touched {
            flag: vec![false; inputs],
            list: Vec::new(),
        }
    }

    #[inline]
    fn mark(&mut self, k: usize) {
        if !self.flag[k] {
            self.flag[k] = true;
            self.list.push(k);
        }
    }

    fn clear(&mut self) {
        for &k in &self.list {
            self.flag[k] = false;
        }
        self.list.clear();
    }
}

/// Classifier parameters. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    /// Absent in the linear variant.
    pub un_proj: Option<Dense>,
    /// Absent in the linear variant.
    pub fusion: Option<Dense>,
    pub output: Dense,
}

pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        let text = 2 * shape.text_dim;
        if shape.linear {
            ModelParams {
                shape,
                un_proj: None,
                fusion: None,
                output: Dense::zeros(shape.un_dim + text, 1),
            }
        } else {
            ModelParams {
                shape,
                un_proj: Some(Dense::zeros(shape.un_dim, shape.h_u)),
                fusion: Some(Dense::zeros(shape.h_u + text, shape.h_f)),
                output: Dense::zeros(shape.h_f, 1),
            }
        }
    }

    /// Seeded initialization, layers drawn in declaration order.
    pub fn init(shape: ModelShape, rng: &mut impl Rng) -> Self {
        let text = 2 * shape.text_dim;
        if shape.linear {
            ModelParams {
                shape,
                un_proj: None,
                fusion: None,
                output: Dense::init(shape.un_dim + text, 1, rng),
            }
        } else {
            let un_proj = Dense::init(shape.un_dim, shape.h_u, rng);
            let fusion = Dense::init(shape.h_u + text, shape.h_f, rng);
            let output = Dense::init(shape.h_f, 1, rng);
            ModelParams {
                shape,
                un_proj: Some(un_proj),
                fusion: Some(fusion),
                output,
            }
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.un_proj.iter().chain(self.fusion.iter()).chain(std::iter::once(&self.output))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.un_proj
            .iter_mut()
            .chain(self.fusion.iter_mut())
            .chain(std::iter::once(&mut self.output))
    }

    /// Named parameter tensors in declaration order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let names = self.layer_names();
        self.layers()
            .zip(names)
            .flat_map(|(l, n)| {
                [
                    (format!("{n}.weight"), l.weight.as_slice()),
                    (format!("{n}.bias"), l.bias.as_slice()),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let names = self.layer_names();
        self.layers_mut()
            .zip(names)
            .flat_map(|(l, n)| {
                [
                    (format!("{n}.weight"), l.weight.as_mut_slice()),
                    (format!("{n}.bias"), l.bias.as_mut_slice()),
                ]
            })
            .collect()
    }

    fn layer_names(&self) -> Vec<&'static str> {
        if self.shape.linear {
            vec!["output"]
        } else {
            vec!["un_proj", "fusion", "output"]
        }
    }

    pub fn len(&self) -> usize {
        self.layers().map(Dense::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn from_flat(shape: ModelShape, flat: &[f64]) -> Result<Self> {
        let mut p = ModelParams::zeros(shape);
        if flat.len() != p.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                p.len(),
                flat.len()
            )));
        }
        let mut at = 0;
        for (_, t) in p.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(p)
    }

    pub fn l2_norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
struct Activations {
    /// Post-ReLU UN projection (empty for the linear variant).
    un_hidden: Vec<f64>,
    /// Post-ReLU fusion output (empty for the linear variant).
    fused: Vec<f64>,
    /// Unclamped sigmoid output.
    raw: f64,
}

fn text_inputs(row: &FeatureRow, offset: usize, text_dim: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
    row.z_news
        .iter()
        .map(move |(i, v)| (offset + i, v))
        .chain(row.z_comments.iter().map(move |(i, v)| (offset + text_dim + i, v)))
}

fn forward_pass(row: &FeatureRow, params: &ModelParams) -> Activations {
    let shape = &params.shape;
    let mut logit = [0.0];
    match (&params.un_proj, &params.fusion) {
        (Some(un_proj), Some(fusion)) => {
            let mut un_hidden = vec![0.0; shape.h_u];
            un_proj.forward(row.un_row.iter(), &mut un_hidden);
            relu(&mut un_hidden);
            let mut fused = vec![0.0; shape.h_f];
            let head = un_hidden.iter().copied().enumerate().filter(|&(_, v)| v != 0.0);
            fusion.forward(head.chain(text_inputs(row, shape.h_u, shape.text_dim)), &mut fused);
            relu(&mut fused);
            let hidden = fused.iter().copied().enumerate().filter(|&(_, v)| v != 0.0);
            params.output.forward(hidden, &mut logit);
            Activations {
                un_hidden,
                fused,
                raw: sigmoid(logit[0]),
            }
        }
        _ => {
            let x = row.un_row.iter().chain(text_inputs(row, shape.un_dim, shape.text_dim));
            params.output.forward(x, &mut logit);
            Activations {
                un_hidden: Vec::new(),
                fused: Vec::new(),
                raw: sigmoid(logit[0]),
            }
        }
    }
}

/// Predicted probability of the fake class, clamped to `[ε, 1 − ε]`.
pub fn forward(row: &FeatureRow, params: &ModelParams) -> Result<f64> {
    params.shape.check_row(row)?;
    Ok(clamp_probability(forward_pass(row, params).raw))
}

/// Gradient buffer that remembers which weight rows it has touched.
#[derive(Debug, Clone)]
struct GradAccumulator {
    grads: Gradients,
    touched: Vec<Touched>,
}

impl GradAccumulator {
    fn new(shape: ModelShape) -> Self {
        let grads = ModelParams::zeros(shape);
        let touched = grads.layers().map(|l| Touched::new(l.inputs)).collect();
        GradAccumulator { grads, touched }
    }

    /// Accumulate one sample's gradient; `dlogit` is ∂loss/∂(pre-sigmoid output).
    fn add_sample(&mut self, row: &FeatureRow, params: &ModelParams, act: &Activations, dlogit: f64) {
        if dlogit == 0.0 {
            return;
        }
        let shape = params.shape;
        let delta_out = [dlogit];
        match (&params.fusion, &mut self.grads.fusion, &mut self.grads.un_proj) {
            (Some(fusion), Some(g_fusion), Some(g_un)) => {
                let hidden = act.fused.iter().copied().enumerate().filter(|&(_, v)| v != 0.0);
                self.grads.output.accumulate(hidden, &delta_out, &mut self.touched[2]);

                let w_out = &params.output.weight;
                let d_fused: Vec<f64> = (0..shape.h_f)
                    .map(|o| if act.fused[o] > 0.0 { dlogit * w_out[o] } else { 0.0 })
                    .collect();
                let head = act.un_hidden.iter().copied().enumerate().filter(|&(_, v)| v != 0.0);
                g_fusion.accumulate(
                    head.chain(text_inputs(row, shape.h_u, shape.text_dim)),
                    &d_fused,
                    &mut self.touched[1],
                );

                let d_un: Vec<f64> = (0..shape.h_u)
                    .map(|k| {
                        if act.un_hidden[k] > 0.0 {
                            fusion.row(k).iter().zip(&d_fused).map(|(w, d)| w * d).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                g_un.accumulate(row.un_row.iter(), &d_un, &mut self.touched[0]);
            }
            _ => {
                let x = row.un_row.iter().chain(text_inputs(row, shape.un_dim, shape.text_dim));
                self.grads.output.accumulate(x, &delta_out, &mut self.touched[0]);
            }
        }
    }

    /// `params -= lr · grads` over touched rows and all biases, then reset.
    fn step_and_reset(&mut self, params: &mut ModelParams, lr: f64) {
        for ((layer, grad), touched) in params
            .layers_mut()
            .zip(self.grads.layers_mut())
            .zip(self.touched.iter_mut())
        {
            for (p, g) in layer.bias.iter_mut().zip(grad.bias.iter_mut()) {
                *p -= lr * *g;
                *g = 0.0;
            }
            let n = layer.outputs;
            for &k in &touched.list {
                let span = k * n..(k + 1) * n;
                for (p, g) in layer.weight[span.clone()].iter_mut().zip(&mut grad.weight[span]) {
                    *p -= lr * *g;
                    *g = 0.0;
                }
            }
            touched.clear();
        }
    }
}

/// ∂(−f/M · CE)/∂logit; zero where the clamp is active.
#[inline]
fn logit_gradient(y: f64, raw: f64, factor: f64, m: f64) -> f64 {
    if !(CLAMP_EPS..=1.0 - CLAMP_EPS).contains(&raw) {
        return 0.0;
    }
    factor / m * (raw - y)
}

/// Accumulate a batch into `acc`; returns the batch's balanced loss.
fn accumulate_batch(
    acc: &mut GradAccumulator,
    rows: &[&FeatureRow],
    labels: &[f64],
    params: &ModelParams,
    factors: &[f64],
) -> Result<f64> {
    if rows.len() != labels.len() || rows.len() != factors.len() {
        return Err(Error::Contract(format!(
            "batch has {} rows, {} labels, {} factors",
            rows.len(),
            labels.len(),
            factors.len()
        )));
    }
    let m = rows.len() as f64;
    let mut preds = Vec::with_capacity(rows.len());
    for ((row, &y), &f) in rows.iter().zip(labels).zip(factors) {
        let act = forward_pass(row, params);
        acc.add_sample(row, params, &act, logit_gradient(y, act.raw, f, m));
        preds.push(act.raw);
    }
    weighting::balanced_loss(labels, &preds, factors)
}

/// Exact gradient of the balanced loss of a batch with respect to every parameter.
pub fn gradients(
    rows: &[&FeatureRow],
    labels: &[f64],
    params: &ModelParams,
    factors: &[f64],
) -> Result<Gradients> {
    for r in rows {
        params.shape.check_row(r)?;
    }
    let mut acc = GradAccumulator::new(params.shape);
    accumulate_batch(&mut acc, rows, labels, params, factors)?;
    Ok(acc.grads)
}

/// Balanced loss of a batch under `params`.
pub fn batch_loss(
    rows: &[&FeatureRow],
    labels: &[f64],
    params: &ModelParams,
    factors: &[f64],
) -> Result<f64> {
    let preds: Vec<f64> = rows
        .iter()
        .map(|r| forward(r, params))
        .collect::<Result<_>>()?;
    weighting::balanced_loss(labels, &preds, factors)
}

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` per
/// tensor, with the numeric gradient from central differences of
/// [`batch_loss`] at the given step.
pub fn finite_difference_check(
    rows: &[&FeatureRow],
    labels: &[f64],
    params: &ModelParams,
    factors: &[f64],
    step: f64,
) -> Result<Vec<(String, f64)>> {
    let analytic = gradients(rows, labels, params, factors)?;
    let flat = params.flatten();
    let mut numeric = vec![0.0; flat.len()];
    let mut probe = flat.clone();
    for k in 0..flat.len() {
        probe[k] = flat[k] + step;
        let up = batch_loss(rows, labels, &ModelParams::from_flat(params.shape, &probe)?, factors)?;
        probe[k] = flat[k] - step;
        let down = batch_loss(rows, labels, &ModelParams::from_flat(params.shape, &probe)?, factors)?;
        probe[k] = flat[k];
        numeric[k] = (up - down) / (2.0 * step);
    }
    let numeric = ModelParams::from_flat(params.shape, &numeric)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(analytic
        .tensors()
        .into_iter()
        .zip(numeric.tensors())
        .map(|((name, a), (_, n))| {
            let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
            let scale = norm(a).max(norm(n));
            let err = if scale < 1e-12 { norm(&diff) } else { norm(&diff) / scale };
            (name, err)
        })
        .collect())
}

/// Plain SGD: `params -= lr · grads`.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
    if params.shape != grads.shape {
        return Err(Error::Contract("gradient shape does not match parameters".into()));
    }
    for ((_, p), (_, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        for (p, g) in p.iter_mut().zip(g) {
            *p -= lr * g;
        }
    }
    Ok(())
}

/// Fraction of rows where `ŷ ≥ 0.5` agrees with the label (0.5 predicts fake).
pub fn evaluate(params: &ModelParams, rows: &[FeatureRow], labels: &[Label]) -> Result<f64> {
    if rows.len() != labels.len() {
        return Err(Error::Contract("rows and labels differ in length".into()));
    }
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (r, l) in rows.iter().zip(labels) {
        if (forward(r, params)? >= 0.5) == l.is_fake() {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

fn evaluate_subset(params: &ModelParams, rows: &[FeatureRow], labels: &[Label], idx: &[usize]) -> f64 {
    let correct = idx
        .iter()
        .filter(|&&i| (clamp_probability(forward_pass(&rows[i], params).raw) >= 0.5) == labels[i].is_fake())
        .count();
    correct as f64 / idx.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub mean_batch_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

impl TrainLog {
    /// `epoch,train_loss,val_accuracy,mean_batch_factor`
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_accuracy,mean_batch_factor")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{}",
                e.epoch, e.train_loss, e.val_accuracy, e.mean_batch_factor
            )?;
        }
        Ok(())
    }
}

/// Training inputs. `omega[i]` is the silence score of sample `i` (used by sample re-weighting).
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub rows: &'a [FeatureRow],
    pub labels: &'a [Label],
    pub omega: &'a [f64],
}

/// Minibatch SGD with early stopping on a seeded, stratified validation split.
///
/// Per epoch the training indices are reshuffled and consumed in order; per
/// batch the sample factors are computed from the batch's silence scores
/// (sample re-weighting) or fixed at 1 (other modes). Returns the parameters
/// of the epoch with the best validation accuracy.
pub fn train(data: &TrainSet<'_>, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    let n = data.rows.len();
    if n == 0 {
        return Err(Error::Training("empty training set".into()));
    }
    if data.labels.len() != n || data.omega.len() != n {
        return Err(Error::Contract(format!(
            "{} rows, {} labels, {} omega values",
            n,
            data.labels.len(),
            data.omega.len()
        )));
    }
    let first = &data.rows[0];
    let shape = ModelShape::for_config(first.un_row.dim(), first.z_news.dim(), cfg);
    for r in data.rows {
        shape.check_row(r)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(shape, &mut rng);

    let fit_size = n - (cfg.validation_fraction * n as f64).floor() as usize;
    let (mut fit_idx, mut val_idx) = stratified_partition(data.labels, fit_size, &mut rng);
    if val_idx.is_empty() {
        val_idx = fit_idx.clone();
    }
    fit_idx.sort_unstable();
    val_idx.sort_unstable();

    let labels_f: Vec<f64> = data.labels.iter().map(|l| l.as_f64()).collect();
    let mut acc = GradAccumulator::new(shape);
    let mut log = TrainLog::default();
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut since_best = 0usize;

    let mut batch_rows: Vec<&FeatureRow> = Vec::with_capacity(cfg.batch_size);
    let mut batch_y: Vec<f64> = Vec::with_capacity(cfg.batch_size);
    let mut batch_omega: Vec<f64> = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        fit_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut factor_sum = 0.0;
        for batch in fit_idx.chunks(cfg.batch_size) {
            batch_rows.clear();
            batch_y.clear();
            batch_omega.clear();
            for &i in batch {
                batch_rows.push(&data.rows[i]);
                batch_y.push(labels_f[i]);
                batch_omega.push(data.omega[i]);
            }
            let factors = match cfg.mode {
                TrainMode::SampleReweight => {
                    weighting::sample_factors(&batch_omega, cfg.alpha, cfg.norm_kind)
                }
                TrainMode::BinaryUn | TrainMode::EdgeReweight => vec![1.0; batch.len()],
            };
            factor_sum += factors.iter().sum::<f64>();
            let loss = accumulate_batch(&mut acc, &batch_rows, &batch_y, &params, &factors)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {batches}"
                )));
            }
            acc.step_and_reset(&mut params, cfg.learning_rate);
            loss_sum += loss;
            batches += 1;
        }
        if !params.is_finite() {
            return Err(Error::Training(format!("parameters diverged at epoch {epoch}")));
        }

        let val_accuracy = evaluate_subset(&params, data.rows, data.labels, &val_idx);
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_accuracy,
            mean_batch_factor: factor_sum / fit_idx.len() as f64,
        });
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best.clone_from(&params);
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_val_accuracy = best_acc;
    Ok((best, log))
}

/// Header line of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: TrainConfig,
    pub seed: u64,
    pub mode: TrainMode,
    pub shape: ModelShape,
    /// `(name, length)` of each tensor in storage order.
    pub tensors: Vec<(String, usize)>,
}

const CHECKPOINT_FORMAT: &str = "echoweight-checkpoint-v1";

/// One JSON header line, then every parameter as little-endian f64 in tensor order.
pub fn write_checkpoint(mut w: impl Write, params: &ModelParams, cfg: &TrainConfig) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config: *cfg,
        seed: cfg.seed,
        mode: cfg.mode,
        shape: params.shape,
        tensors: params.tensors().into_iter().map(|(n, t)| (n, t.len())).collect(),
    };
    let io = |e| Error::io("writing checkpoint", e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for v in params.flatten() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(CheckpointHeader, ModelParams)> {
    let io = |e| Error::io("reading checkpoint", e);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Validation("checkpoint has no header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Validation(format!("unknown checkpoint format `{}`", header.format)));
    }
    let body = &bytes[nl + 1..];
    if body.len() % 8 != 0 {
        return Err(Error::Validation("checkpoint body is not a whole number of f64s".into()));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let params = ModelParams::from_flat(header.shape, &flat)?;
    Ok((header, params))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, cfg: &TrainConfig) -> Result<()> {
    let f = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    write_checkpoint(std::io::BufWriter::new(f), params, cfg)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams)> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_of(dim: usize, pairs: &[(u32, f64)]) -> EmbeddingVector {
        EmbeddingVector::from_pairs(dim, pairs.iter().copied()).unwrap()
    }

    fn toy_shape() -> ModelShape {
        ModelShape {
            un_dim: 2,
            text_dim: 2,
            h_u: 1,
            h_f: 1,
            linear: false,
        }
    }

    #[test]
    fn zero_params_predict_one_half() {
        let p = ModelParams::zeros(toy_shape());
        let row = FeatureRow {
            z_news: vec_of(2, &[(0, 1.0)]),
            z_comments: vec_of(2, &[(1, 1.0)]),
            un_row: vec_of(2, &[(0, 1.0), (1, 1.0)]),
        };
        assert_eq!(forward(&row, &p).unwrap(), 0.5);
    }

    #[test]
    fn hand_evaluated_three_layer_composition() {
        // un_proj: h_un = relu(0.5·u0 − 1.0·u1 + 0.25)
        // fusion:  h    = relu(2·h_un + 1·zn0 − 1·zn1 + 0.5·zc0 + 0·zc1 − 0.1)
        // output:  ŷ    = σ(1.5·h − 0.2)
        let mut p = ModelParams::zeros(toy_shape());
        let un = p.un_proj.as_mut().unwrap();
        un.weight = vec![0.5, -1.0];
        un.bias = vec![0.25];
        let f = p.fusion.as_mut().unwrap();
        f.weight = vec![2.0, 1.0, -1.0, 0.5, 0.0];
        f.bias = vec![-0.1];
        p.output.weight = vec![1.5];
        p.output.bias = vec![-0.2];

        let row = FeatureRow {
            z_news: vec_of(2, &[(0, 0.6), (1, 0.8)]),
            z_comments: vec_of(2, &[(0, 1.0)]),
            un_row: vec_of(2, &[(0, 2.0), (1, 0.5)]),
        };
        // h_un = relu(1.0 − 0.5 + 0.25) = 0.75
        // h    = relu(1.5 + 0.6 − 0.8 + 0.5 − 0.1) = 1.7
        // z    = 2.55 − 0.2 = 2.35
        let expected = 1.0 / (1.0 + (-2.35f64).exp());
        let got = forward(&row, &p).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let p = ModelParams::zeros(toy_shape());
        let row = FeatureRow {
            z_news: EmbeddingVector::zeros(3),
            z_comments: EmbeddingVector::zeros(2),
            un_row: EmbeddingVector::zeros(2),
        };
        assert!(matches!(forward(&row, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn flat_roundtrip_and_checkpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = ModelShape {
            un_dim: 5,
            text_dim: 4,
            h_u: 3,
            h_f: 2,
            linear: false,
        };
        let p = ModelParams::init(shape, &mut rng);
        assert_eq!(ModelParams::from_flat(shape, &p.flatten()).unwrap(), p);
        assert_eq!(p.len(), 5 * 3 + 3 + (3 + 8) * 2 + 2 + 2 + 1);

        let cfg = TrainConfig::default();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, &cfg).unwrap();
        let (header, back) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        assert_eq!(header.tensors[0], ("un_proj.weight".to_string(), 15));
        assert_eq!(header.mode, TrainMode::BinaryUn);
        let header_len = buf.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(buf.len() - header_len, 8 * p.len());
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = ModelShape {
            un_dim: 16,
            text_dim: 8,
            h_u: 4,
            h_f: 4,
            linear: false,
        };
        let p = ModelParams::init(shape, &mut rng);
        let un = p.un_proj.as_ref().unwrap();
        assert!(un.weight.iter().chain(&un.bias).all(|w| w.abs() <= 0.25));
        let fu = p.fusion.as_ref().unwrap();
        let b = 1.0 / 20f64.sqrt();
        assert!(fu.weight.iter().all(|w| w.abs() <= b));
    }

    #[test]
    fn sparse_step_matches_dense_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = ModelShape {
            un_dim: 6,
            text_dim: 5,
            h_u: 3,
            h_f: 4,
            linear: false,
        };
        let params = ModelParams::init(shape, &mut rng);
        let rows = [
            FeatureRow {
                z_news: vec_of(5, &[(1, 0.6), (4, 0.8)]),
                z_comments: vec_of(5, &[(2, 1.0)]),
                un_row: vec_of(6, &[(0, 1.0), (3, 1.0)]),
            },
            FeatureRow {
                z_news: vec_of(5, &[(0, 1.0)]),
                z_comments: EmbeddingVector::zeros(5),
                un_row: vec_of(6, &[(5, 1.5)]),
            },
        ];
        let refs: Vec<&FeatureRow> = rows.iter().collect();
        let y = [1.0, 0.0];
        let f = [1.2, 1.7];

        let mut dense = params.clone();
        let g = gradients(&refs, &y, &params, &f).unwrap();
        sgd_step(&mut dense, &g, 0.1).unwrap();

        let mut sparse = params.clone();
        let mut acc = GradAccumulator::new(shape);
        accumulate_batch(&mut acc, &refs, &y, &params, &f).unwrap();
        acc.step_and_reset(&mut sparse, 0.1);
        assert_eq!(dense, sparse);
        assert!(acc.grads.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { alpha: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn train_rejects_empty_and_mismatched_sets() {
        let cfg = TrainConfig::default();
        let empty = TrainSet { rows: &[], labels: &[], omega: &[] };
        assert!(matches!(train(&empty, &cfg), Err(Error::Training(_))));
        let rows = vec![FeatureRow {
            z_news: EmbeddingVector::zeros(2),
            z_comments: EmbeddingVector::zeros(2),
            un_row: EmbeddingVector::zeros(2),
        }];
        let bad = TrainSet { rows: &rows, labels: &[Label::Fake], omega: &[] };
        assert!(matches!(train(&bad, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn training_log_csv() {
        let log = TrainLog {
            epochs: vec![EpochRecord {
                epoch: 0,
                train_loss: 0.5,
                val_accuracy: 0.75,
                mean_batch_factor: 1.0,
            }],
            ..Default::default()
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_accuracy,mean_batch_factor\n0,0.5,0.75,1\n"
        );
    }
}
