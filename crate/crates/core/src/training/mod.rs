//! Mini-batch training with early stopping, split plans and experiment sweeps.

pub mod audit;
pub mod ensemble;
pub mod experiment;
pub mod splits;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};
use crate::losses::{loss_gradient, IntermediateTruth, LossConfig};
use crate::model::{BinnModel, ForwardCache, LatentTrace};
use crate::optim::{Adam, AdamConfig};
use crate::seed;

/// A network trainable by first-order optimization over a flat parameter vector.
pub trait Trainable {
    type Cache;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn forward_train(&self, x: ArrayView2<f64>) -> (LatentTrace, Self::Cache);
    fn backward_train(
        &self,
        cache: &Self::Cache,
        d_prediction: ArrayView1<f64>,
        d_latents: Option<&[Array2<f64>]>,
    ) -> Vec<f64>;

    fn predict_batch(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.forward_train(x).0.prediction
    }
}

impl Trainable for BinnModel {
    type Cache = ForwardCache;

    fn params(&self) -> &[f64] {
        BinnModel::params(self)
    }

    fn params_mut(&mut self) -> &mut [f64] {
        BinnModel::params_mut(self)
    }

    fn forward_train(&self, x: ArrayView2<f64>) -> (LatentTrace, ForwardCache) {
        self.forward_cached(x, None)
    }

    fn backward_train(
        &self,
        cache: &ForwardCache,
        d_prediction: ArrayView1<f64>,
        d_latents: Option<&[Array2<f64>]>,
    ) -> Vec<f64> {
        self.backward_cached(cache, d_prediction, d_latents).values
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 500,
            patience: 25,
            loss: LossConfig::mse(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(BinnError::InvalidConfig("patience must be at least 1".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(BinnError::InvalidConfig("step size must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(BinnError::InvalidConfig("batch size must be positive".into()));
        }
        self.loss.validate()
    }
}

/// Inputs, targets and optional measured intermediates for one set of lines.
#[derive(Clone, Debug)]
pub struct TrainingData<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView1<'a, f64>,
    pub truth: Option<&'a IntermediateTruth>,
}

impl<'a> TrainingData<'a> {
    pub fn new(x: ArrayView2<'a, f64>, y: ArrayView1<'a, f64>, truth: Option<&'a IntermediateTruth>) -> Self {
        Self { x, y, truth }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_mse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub best_validation_mse: Option<f64>,
    pub stopped_early: bool,
    /// Degenerate-variance skips accumulated over all mini-batches.
    pub degenerate_events: usize,
}

fn param_summary(params: &[f64]) -> String {
    let bad = params.iter().filter(|v| !v.is_finite()).count();
    let norm = params.iter().filter(|v| v.is_finite()).map(|v| v * v).sum::<f64>().sqrt();
    format!("{} parameters, {bad} non-finite, finite-part norm {norm:.6e}", params.len())
}

/// Optimizes `net` in place. With a validation set, stops once validation
/// MSE has not improved for `patience` epochs and restores the best
/// snapshot; without one, runs to `max_epochs` and keeps the final state.
pub fn train<N: Trainable>(
    net: &mut N,
    data: &TrainingData,
    validation: Option<&TrainingData>,
    config: &TrainConfig,
) -> Result<TrainingHistory> {
    config.validate()?;
    let n = data.x.nrows();
    if data.y.len() != n {
        return Err(BinnError::LengthMismatch { expected: n, got: data.y.len() });
    }
    let mut history = TrainingHistory::default();
    if config.max_epochs == 0 {
        return Ok(history);
    }
    if n == 0 {
        return Err(BinnError::InsufficientLines("no training lines".into()));
    }
    let empty_truth = IntermediateTruth::default();
    let mut opt = Adam::new(config.optimizer, net.params().len());
    let mut rng = seed::rng(config.seed, "minibatch-order", &[]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut since_best = 0;
    let mut step = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let x = data.x.select(Axis(0), batch);
            let y = data.y.select(Axis(0), batch);
            let truth = data.truth.map(|t| t.select_rows(batch));
            let (trace, cache) = net.forward_train(x.view());
            let (value, grad) = loss_gradient(
                y.view(),
                &trace,
                truth.as_ref().unwrap_or(&empty_truth),
                &config.loss,
            )?;
            if !value.total.is_finite() {
                return Err(BinnError::NonFiniteLoss {
                    epoch,
                    step,
                    state: format!("loss {} (mse {}); {}", value.total, value.mse, param_summary(net.params())),
                });
            }
            history.degenerate_events += value.degenerate;
            loss_sum += value.total * batch.len() as f64;
            let grads = net.backward_train(&cache, grad.d_prediction.view(), Some(&grad.d_latents));
            opt.step(net.params_mut(), &grads);
            if net.params().iter().any(|v| !v.is_finite()) {
                return Err(BinnError::NonFiniteLoss {
                    epoch,
                    step,
                    state: format!("parameters diverged after update; {}", param_summary(net.params())),
                });
            }
        }
        let val_mse = validation.map(|v| {
            let pred = net.predict_batch(v.x);
            (&pred - &v.y).mapv(|d| d * d).mean().unwrap_or(f64::NAN)
        });
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            validation_mse: val_mse,
        });
        let Some(vm) = val_mse else { continue };
        if !vm.is_finite() {
            return Err(BinnError::NonFiniteLoss {
                epoch,
                step,
                state: format!("validation mse {vm}; {}", param_summary(net.params())),
            });
        }
        if best.as_ref().is_none_or(|(b, _, _)| vm < *b) {
            best = Some((vm, net.params().to_vec(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    match best {
        Some((vm, params, epoch)) => {
            net.params_mut().copy_from_slice(&params);
            history.best_epoch = Some(epoch);
            history.best_validation_mse = Some(vm);
        }
        None => history.best_epoch = history.epochs.last().map(|e| e.epoch),
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    /// `y_hat = w * x`, one parameter.
    struct Scalar {
        w: Vec<f64>,
    }

    impl Trainable for Scalar {
        type Cache = Array1<f64>;

        fn params(&self) -> &[f64] {
            &self.w
        }

        fn params_mut(&mut self) -> &mut [f64] {
            &mut self.w
        }

        fn forward_train(&self, x: ArrayView2<f64>) -> (LatentTrace, Array1<f64>) {
            let input = x.column(0).to_owned();
            let trace = LatentTrace {
                per_layer_latents: vec![],
                residual_output: Array2::zeros((x.nrows(), 0)),
                prediction: &input * self.w[0],
            };
            (trace, input)
        }

        fn backward_train(&self, cache: &Array1<f64>, d: ArrayView1<f64>, _: Option<&[Array2<f64>]>) -> Vec<f64> {
            vec![cache.dot(&d)]
        }
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            optimizer: AdamConfig {
                learning_rate: 0.01,
                ..Default::default()
            },
            batch_size: 4,
            max_epochs: epochs,
            ..Default::default()
        }
    }

    #[test]
    fn converges_to_least_squares_minimizer() {
        let x = array![[1.0], [2.0], [-1.0], [0.5], [3.0], [-2.0]];
        let y = array![2.1, 3.9, -2.2, 1.1, 6.3, -3.8];
        let closed = x.column(0).dot(&y) / x.column(0).dot(&x.column(0));
        let mut net = Scalar { w: vec![0.0] };
        let data = TrainingData::new(x.view(), y.view(), None);
        let mut cfg = config(3000);
        cfg.batch_size = x.nrows();
        train(&mut net, &data, None, &cfg).unwrap();
        assert!((net.w[0] - closed).abs() < 1e-3, "{} vs {closed}", net.w[0]);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let x = array![[1.0], [2.0]];
        let y = array![1.0, 2.0];
        let mut net = Scalar { w: vec![0.3] };
        let hist = train(&mut net, &TrainingData::new(x.view(), y.view(), None), None, &config(0)).unwrap();
        assert_eq!(net.w, vec![0.3]);
        assert!(hist.epochs.is_empty());
    }

    #[test]
    fn early_stopping_restores_best_snapshot() {
        // Validation prefers w = 0 while training pulls w towards 2.
        let x = array![[1.0], [1.0], [1.0], [1.0]];
        let y = array![2.0, 2.0, 2.0, 2.0];
        let vy = array![0.0, 0.0, 0.0, 0.0];
        let mut net = Scalar { w: vec![0.5] };
        let mut cfg = config(200);
        cfg.patience = 3;
        let hist = train(
            &mut net,
            &TrainingData::new(x.view(), y.view(), None),
            Some(&TrainingData::new(x.view(), vy.view(), None)),
            &cfg,
        )
        .unwrap();
        assert!(hist.stopped_early);
        assert_eq!(hist.best_epoch, Some(1));
        let best = hist.epochs.iter().filter_map(|e| e.validation_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(hist.best_validation_mse, Some(best));
        assert!((net.w[0] * net.w[0] - best).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let x = array![[1.0], [2.0]];
        let y = array![f64::NAN, 2.0];
        let mut net = Scalar { w: vec![0.3] };
        let err = train(&mut net, &TrainingData::new(x.view(), y.view(), None), None, &config(2)).unwrap_err();
        assert!(matches!(err, BinnError::NonFiniteLoss { epoch: 1, .. }));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = config(1);
        cfg.patience = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = config(1);
        cfg.optimizer.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
    }
}
