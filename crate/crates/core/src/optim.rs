//! Adam and the shared minibatch loop used by every trainable model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default trade-off between concept BCE and label CE.
pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_accuracy: Option<f64>,
}

/// A model whose parameters are a fixed list of flat `f64` tensors.
pub(crate) trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors().iter().map(|t| vec![0.0; t.len()]).collect()
    }
}

pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub(crate) fn new(config: &TrainConfig, shapes: &[Vec<f64>]) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            step: 0,
            m: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub(crate) fn update(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Minibatch Adam over `n` samples.
///
/// `sample` adds one sample's gradient into the accumulator and returns its
/// loss. Samples within a batch are visited in shuffled order, one at a
/// time, so the reduction order is fixed by the seed. `dev_accuracy` is
/// called after each epoch.
pub(crate) fn fit<M: Parameters>(
    model: &mut M,
    n: usize,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut sample: impl FnMut(&M, usize, &mut [Vec<f64>]) -> f64,
    mut dev_accuracy: impl FnMut(&M) -> Option<f64>,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if config.epochs > 0 && n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut grads = model.zeros_like();
    let mut adam = Adam::new(config, &grads);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += sample(model, i, &mut grads);
            }
            let scale = 1.0 / batch.len() as f64;
            let finite_grads = grads.iter_mut().all(|g| {
                g.iter_mut().for_each(|v| *v *= scale);
                g.iter().all(|v| v.is_finite())
            });
            if !batch_loss.is_finite() || !finite_grads {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    loss: batch_loss * scale,
                });
            }
            epoch_loss += batch_loss;
            adam.update(model.tensors_mut(), &grads);
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: epoch_loss / n as f64,
            dev_accuracy: dev_accuracy(model),
        };
        log::debug!("epoch {epoch}: {metrics:?}");
        history.push(metrics);
    }
    Ok(history)
}

/// Outcome of a learning-rate sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrSweep {
    pub chosen: f64,
    /// `(learning rate, dev accuracy)` per grid point.
    pub results: Vec<(f64, f64)>,
}

/// Runs `train` for each learning rate in `grid` and keeps the model with
/// the best dev accuracy. Earlier grid points win ties.
pub fn sweep_learning_rate<T>(
    grid: &[f64],
    mut train: impl FnMut(f64) -> Result<(T, f64)>,
) -> Result<(T, LrSweep)> {
    let mut best: Option<(T, f64, f64)> = None;
    let mut results = Vec::with_capacity(grid.len());
    for &lr in grid {
        let (model, acc) = train(lr)?;
        results.push((lr, acc));
        if !matches!(&best, Some((_, _, b)) if acc <= *b) {
            best = Some((model, lr, acc));
        }
    }
    let (model, chosen, _) =
        best.ok_or_else(|| Error::Config("empty learning-rate grid".into()))?;
    Ok((model, LrSweep { chosen, results }))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic(Vec<f64>);

    impl Parameters for Quadratic {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn adam_minimizes_a_bowl() {
        let mut q = Quadratic(vec![3.0, -2.0]);
        let config = TrainConfig {
            learning_rate: 0.1,
            epochs: 300,
            batch_size: 1,
            ..Default::default()
        };
        let mut rng = config.rng();
        let hist = fit(
            &mut q,
            1,
            &config,
            &mut rng,
            |m, _, g| {
                g[0][0] += 2.0 * m.0[0];
                g[0][1] += 2.0 * m.0[1];
                m.0[0] * m.0[0] + m.0[1] * m.0[1]
            },
            |_| None,
        )
        .unwrap();
        assert!(q.0.iter().all(|v| v.abs() < 1e-2), "{:?}", q.0);
        assert!(hist.last().unwrap().train_loss < 1e-3);
    }

    #[test]
    fn first_adam_step_has_lr_magnitude() {
        let mut q = Quadratic(vec![1.0]);
        let config = TrainConfig {
            learning_rate: 0.05,
            ..Default::default()
        };
        let mut adam = Adam::new(&config, &q.zeros_like());
        adam.update(q.tensors_mut(), &[vec![123.0]]);
        assert!((q.0[0] - 0.95).abs() < 1e-9);
    }

    #[test]
    fn config_bounds() {
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.alpha = 1.01));
        assert!(bad(|c| c.alpha = -0.1));
        assert!(bad(|c| c.batch_size = 0));
        assert!(bad(|c| c.learning_rate = 0.0));
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut q = Quadratic(vec![1.0]);
        let config = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let mut rng = config.rng();
        let err = fit(&mut q, 4, &config, &mut rng, |_, _, _| f64::NAN, |_| None).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0, batch: 0, .. }));
    }

    #[test]
    fn sweep_prefers_best_then_earliest() {
        let (m, s) = sweep_learning_rate(&[0.1, 0.01, 0.001], |lr| {
            Ok((lr, if lr < 0.05 { 0.9 } else { 0.5 }))
        })
        .unwrap();
        assert_eq!(m, 0.01);
        assert_eq!(s.chosen, 0.01);
        assert_eq!(s.results.len(), 3);
    }
}
