//! Reference models for the leakage benchmark: the bottleneck with a learned
//! dense head instead of the fixed matrix, a plain linear classifier, and a
//! linear head over raw image–concept similarities.

use serde::{Deserialize, Serialize};

use crate::annotate::AnnotationSet;
use crate::error::{Error, Result};
use crate::model::{
    bce_logit_grad, cross_entropy, cross_entropy_grad, bce, dev_accuracy_of, rows_f64, sigmoid,
    CBLayer, ConceptModel, Trained,
};
use crate::optim::{fit, Parameters, TrainConfig};
use crate::store::{norm, unit_rows, EmbeddingMatrix, LabeledDataset};

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Supcbm,
    SupcbmFc,
    Dummy,
    CbmProj,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Supcbm => "supcbm",
            ModelKind::SupcbmFc => "supcbm_fc",
            ModelKind::Dummy => "dummy",
            ModelKind::CbmProj => "cbm_proj",
        }
    }
}

/// Softmax-regression head, `weights` row-major `classes × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub inputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn init(inputs: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound);
        Self {
            inputs,
            weights: (0..inputs * classes).map(|_| u.sample(rng)).collect(),
            bias: (0..classes).map(|_| u.sample(rng)).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(features).fold(b, |acc, (w, f)| acc + w * f))
            .collect()
    }

    fn weight(&self, input: usize, class: usize) -> f64 {
        self.weights[class * self.inputs + input]
    }

    /// Adds the CE gradient for one sample into `(dW, db)`; returns the loss.
    pub(crate) fn accumulate_ce(
        &self,
        features: &[f64],
        label: usize,
        dw: &mut [f64],
        db: &mut [f64],
    ) -> f64 {
        let l = self.apply(features);
        let dl = cross_entropy_grad(&l, label, 1.0);
        for (j, &g) in dl.iter().enumerate() {
            db[j] += g;
            for (w, &f) in dw[j * self.inputs..(j + 1) * self.inputs].iter_mut().zip(features) {
                *w += g * f;
            }
        }
        cross_entropy(&l, label)
    }
}

impl Parameters for LinearHead {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weights, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights, &mut self.bias]
    }
}

fn check_labels(data: &LabeledDataset, num_classes: usize) -> Result<()> {
    if num_classes == 0 {
        return Err(Error::Config("need at least one class".into()));
    }
    data.check_labels(num_classes)
}

// ---------------------------------------------------------------------------
// Bottleneck + learned dense head

#[derive(Debug, Clone, PartialEq)]
pub struct FcModel {
    pub layer: CBLayer,
    /// Row-major `M × L` concept-to-class weights.
    pub head: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl FcModel {
    fn classes(&self) -> usize {
        self.head_bias.len()
    }

    fn label_scores(&self, c: &[f64]) -> Vec<f64> {
        let big_l = self.classes();
        let mut l = self.head_bias.clone();
        for (i, &ci) in c.iter().enumerate() {
            for (lj, &v) in l.iter_mut().zip(&self.head[i * big_l..(i + 1) * big_l]) {
                *lj += ci * v;
            }
        }
        l
    }

    pub(crate) fn accumulate(
        &self,
        x: &[f64],
        gt_c: &[f64],
        label: usize,
        alpha: f64,
        g: &mut [Vec<f64>],
    ) -> f64 {
        let big_l = self.classes();
        let c = self.activations(x);
        let l = self.label_scores(&c);
        let value = alpha * bce(&c, gt_c) + (1.0 - alpha) * cross_entropy(&l, label);
        let dl = cross_entropy_grad(&l, label, 1.0 - alpha);
        let mut dz = bce_logit_grad(&c, gt_c, alpha);
        for (i, dzi) in dz.iter_mut().enumerate() {
            let row = &self.head[i * big_l..(i + 1) * big_l];
            let dc: f64 = row.iter().zip(&dl).map(|(v, d)| v * d).sum();
            *dzi += dc * c[i] * (1.0 - c[i]);
            for (dv, &d) in g[2][i * big_l..(i + 1) * big_l].iter_mut().zip(&dl) {
                *dv += c[i] * d;
            }
        }
        for (de, &d) in g[3].iter_mut().zip(&dl) {
            *de += d;
        }
        let dim = self.layer.dim;
        for (i, &gz) in dz.iter().enumerate() {
            g[1][i] += gz;
            for (w, &v) in g[0][i * dim..(i + 1) * dim].iter_mut().zip(x) {
                *w += gz * v;
            }
        }
        value
    }
}

impl Parameters for FcModel {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.layer.weights, &self.layer.bias, &self.head, &self.head_bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.layer.weights,
            &mut self.layer.bias,
            &mut self.head,
            &mut self.head_bias,
        ]
    }
}

impl ConceptModel for FcModel {
    fn tag(&self) -> &str {
        ModelKind::SupcbmFc.tag()
    }

    fn input_dim(&self) -> usize {
        self.layer.dim
    }

    fn num_units(&self) -> usize {
        self.layer.num_concepts()
    }

    fn num_classes(&self) -> usize {
        self.classes()
    }

    fn activations(&self, x: &[f64]) -> Vec<f64> {
        self.layer.logits(x).into_iter().map(sigmoid).collect()
    }

    fn head(&self, activations: &[f64]) -> Vec<f64> {
        self.label_scores(activations)
    }

    fn contribution(&self, activations: &[f64], unit: usize, class: usize) -> f64 {
        (activations[unit] * self.head[unit * self.classes() + class]).abs()
    }
}

/// Same supervision as the bottleneck model, but class scores come from a
/// trainable dense `M × L` head instead of the fixed matrix.
pub fn train_fc_ablation(
    data: &LabeledDataset,
    annotations: &AnnotationSet,
    num_classes: usize,
    config: &TrainConfig,
    dev: Option<&LabeledDataset>,
) -> Result<Trained<FcModel>> {
    config.validate()?;
    check_labels(data, num_classes)?;
    if annotations.len() != data.len() {
        return Err(Error::SizeMismatch(format!(
            "{} annotations for {} images",
            annotations.len(),
            data.len()
        )));
    }
    let m = annotations.num_concepts();
    let xs = rows_f64(data);
    let targets: Vec<Vec<f64>> = (0..annotations.len()).map(|i| annotations.dense(i)).collect();
    let dev_xs = dev.map(rows_f64);

    let mut rng = config.rng();
    let layer = CBLayer::init(m, data.dim(), &mut rng);
    let head = LinearHead::init(m, num_classes, &mut rng);
    // LinearHead stores classes × inputs; the FC head is inputs × classes.
    let mut dense = vec![0.0; m * num_classes];
    for j in 0..num_classes {
        for i in 0..m {
            dense[i * num_classes + j] = head.weight(i, j);
        }
    }
    let mut model = FcModel {
        layer,
        head: dense,
        head_bias: head.bias,
    };
    let history = fit(
        &mut model,
        data.len(),
        config,
        &mut rng,
        |mdl, i, g| mdl.accumulate(&xs[i], &targets[i], data.labels[i], config.alpha, g),
        |mdl| dev_accuracy_of(dev_xs.as_deref(), dev.map(|d| d.labels.as_slice()), mdl),
    )?;
    Ok(Trained { model, history })
}

// ---------------------------------------------------------------------------
// Plain linear classifier

/// Softmax regression on the raw embedding; its input coordinates play the
/// role of (meaningless) concepts.
#[derive(Debug, Clone, PartialEq)]
pub struct DummyModel {
    pub head: LinearHead,
}

impl Parameters for DummyModel {
    fn tensors(&self) -> Vec<&[f64]> {
        self.head.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.head.tensors_mut()
    }
}

impl ConceptModel for DummyModel {
    fn tag(&self) -> &str {
        ModelKind::Dummy.tag()
    }

    fn input_dim(&self) -> usize {
        self.head.inputs
    }

    fn num_units(&self) -> usize {
        self.head.inputs
    }

    fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    fn activations(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn head(&self, activations: &[f64]) -> Vec<f64> {
        self.head.apply(activations)
    }

    fn contribution(&self, activations: &[f64], unit: usize, class: usize) -> f64 {
        (activations[unit] * self.head.weight(unit, class)).abs()
    }
}

pub fn train_dummy(
    data: &LabeledDataset,
    num_classes: usize,
    config: &TrainConfig,
    dev: Option<&LabeledDataset>,
) -> Result<Trained<DummyModel>> {
    config.validate()?;
    check_labels(data, num_classes)?;
    let xs = rows_f64(data);
    let dev_xs = dev.map(rows_f64);
    let mut rng = config.rng();
    let mut model = DummyModel {
        head: LinearHead::init(data.dim(), num_classes, &mut rng),
    };
    let history = fit(
        &mut model,
        data.len(),
        config,
        &mut rng,
        |mdl, i, g| {
            let (dw, db) = g.split_at_mut(1);
            mdl.head.accumulate_ce(&xs[i], data.labels[i], &mut dw[0], &mut db[0])
        },
        |mdl| dev_accuracy_of(dev_xs.as_deref(), dev.map(|d| d.labels.as_slice()), mdl),
    )?;
    Ok(Trained { model, history })
}

// ---------------------------------------------------------------------------
// Similarity projection

/// Linear head over the cosine similarities between an image and every
/// concept text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjModel {
    pub dim: usize,
    /// Unit-norm concept embeddings, row-major `M × d`.
    pub concepts: Vec<f64>,
    pub head: LinearHead,
}

impl ProjModel {
    pub fn similarities(&self, x: &[f64]) -> Vec<f64> {
        let n = norm(x);
        if n == 0.0 {
            return vec![0.0; self.head.inputs];
        }
        self.concepts
            .chunks_exact(self.dim)
            .map(|t| t.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect()
    }
}

impl Parameters for ProjModel {
    fn tensors(&self) -> Vec<&[f64]> {
        self.head.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.head.tensors_mut()
    }
}

impl ConceptModel for ProjModel {
    fn tag(&self) -> &str {
        ModelKind::CbmProj.tag()
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn num_units(&self) -> usize {
        self.head.inputs
    }

    fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    fn activations(&self, x: &[f64]) -> Vec<f64> {
        self.similarities(x)
    }

    fn head(&self, activations: &[f64]) -> Vec<f64> {
        self.head.apply(activations)
    }

    fn contribution(&self, activations: &[f64], unit: usize, class: usize) -> f64 {
        (activations[unit] * self.head.weight(unit, class)).abs()
    }
}

pub fn cbm_proj(
    data: &LabeledDataset,
    concepts: &EmbeddingMatrix,
    num_classes: usize,
    config: &TrainConfig,
    dev: Option<&LabeledDataset>,
) -> Result<Trained<ProjModel>> {
    config.validate()?;
    check_labels(data, num_classes)?;
    if concepts.dim() != data.dim() {
        return Err(Error::shape(data.dim(), concepts.dim()));
    }
    let unit: Vec<f64> = unit_rows(concepts)?.into_iter().flatten().collect();
    let mut rng = config.rng();
    let mut model = ProjModel {
        dim: data.dim(),
        concepts: unit,
        head: LinearHead::init(concepts.len(), num_classes, &mut rng),
    };
    let feats: Vec<Vec<f64>> = rows_f64(data).iter().map(|x| model.similarities(x)).collect();
    let dev_xs = dev.map(rows_f64);
    let history = fit(
        &mut model,
        data.len(),
        config,
        &mut rng,
        |mdl, i, g| {
            let (dw, db) = g.split_at_mut(1);
            mdl.head.accumulate_ce(&feats[i], data.labels[i], &mut dw[0], &mut db[0])
        },
        |mdl| dev_accuracy_of(dev_xs.as_deref(), dev.map(|d| d.labels.as_slice()), mdl),
    )?;
    Ok(Trained { model, history })
}
