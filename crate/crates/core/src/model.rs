//! The concept bottleneck layer and label scoring through the fixed
//! intervention matrix.
//!
//! `c = σ(W x + b)` gives one probability per concept; class `j` scores
//! `l_j = Σ_i c_i · I(i, j)`. Only `W` and `b` are trained, against
//!
//! ```text
//! α · meanBCE(c, gt_c) + (1 − α) · CE(softmax(l), y)
//! ```
//!
//! with BCE taken over all concepts (non-selected ones are negatives).

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::AnnotationSet;
use crate::error::{Error, Result};
use crate::optim::{fit, EpochMetrics, Parameters, TrainConfig};
use crate::store::LabeledDataset;
use crate::vocab::InterventionMatrix;

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Single trainable layer mapping a `d`-dimensional embedding to `M`
/// concept logits. `weights` is row-major `M × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CBLayer {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl CBLayer {
    pub fn zeros(num_concepts: usize, dim: usize) -> Self {
        Self {
            dim,
            weights: vec![0.0; num_concepts * dim],
            bias: vec![0.0; num_concepts],
        }
    }

    /// Uniform `±1/√d` initialization.
    pub fn init(num_concepts: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound);
        let weights = (0..num_concepts * dim).map(|_| u.sample(rng)).collect();
        let bias = (0..num_concepts).map(|_| u.sample(rng)).collect();
        Self { dim, weights, bias }
    }

    pub fn num_concepts(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (w, v)| acc + w * v))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

impl Parameters for CBLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// Concept probabilities `c_i = σ(W_i·x + b_i)`.
pub fn forward(layer: &CBLayer, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layer.dim {
        return Err(Error::shape(format!("embedding of dimension {}", layer.dim), x.len()));
    }
    Ok(layer.logits(x).into_iter().map(sigmoid).collect())
}

/// `l_j = Σ_i c_i · I(i, j)`, summed over `i` in ascending order.
pub fn label_scores(c: &[f64], matrix: &InterventionMatrix) -> Vec<f64> {
    debug_assert_eq!(c.len(), matrix.num_concepts());
    let mut l = vec![0.0; matrix.num_classes()];
    for (i, &ci) in c.iter().enumerate() {
        for &j in matrix.classes_of(i) {
            l[j] += ci;
        }
    }
    l
}

/// Index of the largest score (lowest index on ties) and every class whose
/// score equals it exactly.
pub fn argmax_with_ties(l: &[f64]) -> (usize, Vec<usize>) {
    let best = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..l.len()).filter(|&j| l[j] == best).collect();
    (ties.first().copied().unwrap_or(0), ties)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub c: Vec<f64>,
    pub l: Vec<f64>,
    pub predicted: usize,
    /// Classes sharing the top score. More than one entry means the
    /// concepts alone cannot separate them.
    pub ties: Vec<usize>,
}

impl PredictionRecord {
    pub fn from_scores(c: Vec<f64>, l: Vec<f64>) -> Self {
        let (predicted, ties) = argmax_with_ties(&l);
        Self {
            c,
            l,
            predicted,
            ties,
        }
    }

    pub fn is_ambiguous(&self) -> bool {
        self.ties.len() > 1
    }
}

fn ln_floor(v: f64) -> f64 {
    v.max(LOG_FLOOR).ln()
}

/// Mean binary cross-entropy over all concepts.
pub fn bce(c: &[f64], gt_c: &[f64]) -> f64 {
    let sum: f64 = c
        .iter()
        .zip(gt_c)
        .map(|(&ci, &gi)| gi * ln_floor(ci) + (1.0 - gi) * ln_floor(1.0 - ci))
        .sum();
    -sum / c.len() as f64
}

fn log_softmax_at(l: &[f64], label: usize) -> f64 {
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    l[label] - max - lse
}

fn softmax(l: &[f64]) -> Vec<f64> {
    let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of `softmax(l)` against `label`, with the log floored.
pub fn cross_entropy(l: &[f64], label: usize) -> f64 {
    -log_softmax_at(l, label).max(LOG_FLOOR.ln())
}

/// Combined objective for one sample.
pub fn loss(c: &[f64], gt_c: &[f64], l: &[f64], label: usize, alpha: f64) -> f64 {
    alpha * bce(c, gt_c) + (1.0 - alpha) * cross_entropy(l, label)
}

/// Gradient of [`cross_entropy`] with respect to the scores, scaled by `weight`.
pub(crate) fn cross_entropy_grad(l: &[f64], label: usize, weight: f64) -> Vec<f64> {
    if log_softmax_at(l, label) < LOG_FLOOR.ln() {
        return vec![0.0; l.len()];
    }
    let mut p = softmax(l);
    p[label] -= 1.0;
    p.iter_mut().for_each(|v| *v *= weight);
    p
}

/// Gradient of `weight · meanBCE` with respect to the concept logits,
/// honouring the log floor.
pub(crate) fn bce_logit_grad(c: &[f64], gt_c: &[f64], weight: f64) -> Vec<f64> {
    let scale = weight / c.len() as f64;
    c.iter()
        .zip(gt_c)
        .map(|(&ci, &gi)| {
            let one_minus = 1.0 - ci;
            let pos = if ci > LOG_FLOOR { -gi * one_minus } else { 0.0 };
            let neg = if one_minus > LOG_FLOOR { (1.0 - gi) * ci } else { 0.0 };
            scale * (pos + neg)
        })
        .collect()
}

/// Adds one sample's gradient into `(dW, db)` and returns its loss.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_grad(
    layer: &CBLayer,
    x: &[f64],
    gt_c: &[f64],
    label: usize,
    matrix: &InterventionMatrix,
    alpha: f64,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> f64 {
    let c: Vec<f64> = layer.logits(x).into_iter().map(sigmoid).collect();
    let l = label_scores(&c, matrix);
    let value = loss(&c, gt_c, &l, label, alpha);

    let dl = cross_entropy_grad(&l, label, 1.0 - alpha);
    let mut dz = bce_logit_grad(&c, gt_c, alpha);
    for (i, dzi) in dz.iter_mut().enumerate() {
        let dc: f64 = matrix.classes_of(i).iter().map(|&j| dl[j]).sum();
        *dzi += dc * c[i] * (1.0 - c[i]);
    }
    for (i, &g) in dz.iter().enumerate() {
        d_bias[i] += g;
        let row = &mut d_weights[i * layer.dim..(i + 1) * layer.dim];
        for (w, &v) in row.iter_mut().zip(x) {
            *w += g * v;
        }
    }
    value
}

/// Analytic gradient of the combined objective with respect to `(W, b)`.
pub fn grad(
    layer: &CBLayer,
    x: &[f64],
    gt_c: &[f64],
    label: usize,
    matrix: &InterventionMatrix,
    alpha: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_sample(layer, x, gt_c, label, matrix)?;
    let mut dw = vec![0.0; layer.weights.len()];
    let mut db = vec![0.0; layer.bias.len()];
    accumulate_grad(layer, x, gt_c, label, matrix, alpha, &mut dw, &mut db);
    Ok((dw, db))
}

fn check_sample(
    layer: &CBLayer,
    x: &[f64],
    gt_c: &[f64],
    label: usize,
    matrix: &InterventionMatrix,
) -> Result<()> {
    if x.len() != layer.dim {
        return Err(Error::shape(layer.dim, x.len()));
    }
    if gt_c.len() != layer.num_concepts() || matrix.num_concepts() != layer.num_concepts() {
        return Err(Error::shape(
            format!("{} concepts", layer.num_concepts()),
            format!("targets {} / matrix {}", gt_c.len(), matrix.num_concepts()),
        ));
    }
    if label >= matrix.num_classes() {
        return Err(Error::Validation(format!("label {label} out of range")));
    }
    Ok(())
}

/// A trained bottleneck paired with the matrix it scores through.
#[derive(Debug, Clone, PartialEq)]
pub struct SupCbm {
    pub layer: CBLayer,
    pub matrix: InterventionMatrix,
}

impl SupCbm {
    pub fn new(layer: CBLayer, matrix: InterventionMatrix) -> Result<Self> {
        if layer.num_concepts() != matrix.num_concepts() {
            return Err(Error::shape(
                format!("{} concept rows", matrix.num_concepts()),
                layer.num_concepts(),
            ));
        }
        Ok(Self { layer, matrix })
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionRecord> {
        let c = forward(&self.layer, x)?;
        let l = label_scores(&c, &self.matrix);
        Ok(PredictionRecord::from_scores(c, l))
    }
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub history: Vec<EpochMetrics>,
}

/// Widened copy of every row of a dataset.
pub(crate) fn rows_f64(data: &LabeledDataset) -> Vec<Vec<f64>> {
    (0..data.len()).map(|i| data.embeddings.row_f64(i)).collect()
}

pub(crate) fn dev_accuracy_of<M: ConceptModel>(
    dev: Option<&[Vec<f64>]>,
    labels: Option<&[usize]>,
    model: &M,
) -> Option<f64> {
    let (dev, labels) = (dev?, labels?);
    let hits = dev
        .iter()
        .zip(labels)
        .filter(|(x, &y)| model.predict_class(x) == y)
        .count();
    Some(hits as f64 / dev.len().max(1) as f64)
}

/// Trains the bottleneck with the intervention matrix held fixed.
pub fn train(
    data: &LabeledDataset,
    annotations: &AnnotationSet,
    matrix: &InterventionMatrix,
    config: &TrainConfig,
    dev: Option<&LabeledDataset>,
) -> Result<Trained<SupCbm>> {
    config.validate()?;
    annotations.check_consistent(data, matrix)?;
    let xs = rows_f64(data);
    let targets: Vec<Vec<f64>> = (0..annotations.len()).map(|i| annotations.dense(i)).collect();
    let dev_xs = dev.map(rows_f64);

    let mut rng = config.rng();
    let layer = CBLayer::init(matrix.num_concepts(), data.dim(), &mut rng);
    let mut model = SupCbm::new(layer, matrix.clone())?;
    let history = fit(
        &mut model,
        data.len(),
        config,
        &mut rng,
        |m, i, g| {
            let (dw, db) = g.split_at_mut(1);
            accumulate_grad(
                &m.layer,
                &xs[i],
                &targets[i],
                data.labels[i],
                &m.matrix,
                config.alpha,
                &mut dw[0],
                &mut db[0],
            )
        },
        |m| dev_accuracy_of(dev_xs.as_deref(), dev.map(|d| d.labels.as_slice()), m),
    )?;
    if !model.layer.is_finite() {
        return Err(Error::Divergence {
            epoch: config.epochs,
            batch: 0,
            loss: f64::NAN,
        });
    }
    Ok(Trained { model, history })
}

impl Parameters for SupCbm {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layer.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layer.tensors_mut()
    }
}

// ---------------------------------------------------------------------------
// Common interface for the evaluator

/// Any model with a bottleneck of "units" feeding a class-scoring head.
///
/// For the concept bottleneck the units are concept probabilities; for the
/// baselines they are whatever sits right before the final head (concept
/// probabilities, similarities, or raw input coordinates).
pub trait ConceptModel: Send + Sync {
    fn tag(&self) -> &str;
    fn input_dim(&self) -> usize;
    fn num_units(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn activations(&self, x: &[f64]) -> Vec<f64>;
    fn head(&self, activations: &[f64]) -> Vec<f64>;
    /// How much unit `unit` adds to class `class`'s score.
    fn contribution(&self, activations: &[f64], unit: usize, class: usize) -> f64;

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.head(&self.activations(x))
    }

    fn predict_class(&self, x: &[f64]) -> usize {
        argmax_with_ties(&self.scores(x)).0
    }
}

impl ConceptModel for SupCbm {
    fn tag(&self) -> &str {
        "supcbm"
    }

    fn input_dim(&self) -> usize {
        self.layer.dim
    }

    fn num_units(&self) -> usize {
        self.layer.num_concepts()
    }

    fn num_classes(&self) -> usize {
        self.matrix.num_classes()
    }

    fn activations(&self, x: &[f64]) -> Vec<f64> {
        self.layer.logits(x).into_iter().map(sigmoid).collect()
    }

    fn head(&self, activations: &[f64]) -> Vec<f64> {
        label_scores(activations, &self.matrix)
    }

    fn contribution(&self, activations: &[f64], unit: usize, class: usize) -> f64 {
        if self.matrix.get(unit, class) {
            activations[unit]
        } else {
            0.0
        }
    }
}
