//! Training objectives: phenotype MSE, optionally augmented with a
//! per-entity correlation penalty (soft constraint) or a squared-error
//! penalty (hard constraint) tying latents to measured intermediates.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};
use crate::model::LatentTrace;

/// Variance below which a column is treated as constant.
const DEGENERATE_VARIANCE: f64 = 1e-20;

/// Measured intermediates for one omics layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthLayer {
    /// `n x k_l`; entries on unlabeled lines are never read.
    pub values: Array2<f64>,
    /// Lines carrying measurements.
    pub labeled: Vec<bool>,
    /// Entities with measurements.
    pub available: Vec<bool>,
}

impl TruthLayer {
    pub fn new(values: Array2<f64>, labeled: Vec<bool>, available: Vec<bool>) -> Result<Self> {
        let (n, k) = values.dim();
        if labeled.len() != n {
            return Err(BinnError::LengthMismatch {
                expected: n,
                got: labeled.len(),
            });
        }
        if available.len() != k {
            return Err(BinnError::LengthMismatch {
                expected: k,
                got: available.len(),
            });
        }
        for (i, &lab) in labeled.iter().enumerate() {
            for (j, &avail) in available.iter().enumerate() {
                if lab && avail && !values[[i, j]].is_finite() {
                    return Err(BinnError::SchemaError(format!(
                        "labeled intermediate ({i}, {j}) is not finite"
                    )));
                }
            }
        }
        Ok(Self {
            values,
            labeled,
            available,
        })
    }

    /// Every line labeled, every entity available.
    pub fn fully_labeled(values: Array2<f64>) -> Self {
        let (n, k) = values.dim();
        Self {
            values,
            labeled: vec![true; n],
            available: vec![true; k],
        }
    }

    pub fn labeled_fraction(&self) -> f64 {
        if self.labeled.is_empty() {
            return 0.0;
        }
        self.labeled.iter().filter(|&&b| b).count() as f64 / self.labeled.len() as f64
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), rows),
            labeled: rows.iter().map(|&r| self.labeled[r]).collect(),
            available: self.available.clone(),
        }
    }
}

/// Per-layer measured intermediates; `None` layers carry no constraint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntermediateTruth {
    pub layers: Vec<Option<TruthLayer>>,
}

impl IntermediateTruth {
    pub fn empty(n_layers: usize) -> Self {
        Self {
            layers: vec![None; n_layers],
        }
    }

    pub fn single(layer: TruthLayer) -> Self {
        Self {
            layers: vec![Some(layer)],
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| l.as_ref().map(|t| t.select_rows(rows)))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Mse,
    SoftConstraint,
    HardConstraint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::Mse,
            lambda: 0.1,
        }
    }
}

impl LossConfig {
    pub fn mse() -> Self {
        Self {
            mode: LossMode::Mse,
            lambda: 0.0,
        }
    }

    pub fn soft(lambda: f64) -> Self {
        Self {
            mode: LossMode::SoftConstraint,
            lambda,
        }
    }

    pub fn hard(lambda: f64) -> Self {
        Self {
            mode: LossMode::HardConstraint,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(BinnError::InvalidConfig(format!(
                "lambda must be a nonnegative number, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    fn uses_truth(&self) -> bool {
        self.mode != LossMode::Mse && self.lambda != 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub mse: f64,
    /// Unweighted constraint term (multiply by lambda for its contribution).
    pub penalty: f64,
    /// Correlation per entity for soft-constraint layers; `None` where no
    /// correlation was computed.
    pub correlations: Vec<Vec<Option<f64>>>,
    /// Entities skipped because a labeled column was constant.
    pub degenerate: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub d_prediction: Array1<f64>,
    /// Same shapes as the trace's per-layer latents.
    pub d_latents: Vec<Array2<f64>>,
}

pub fn bio_loss(
    y: ArrayView1<f64>,
    trace: &LatentTrace,
    truth: &IntermediateTruth,
    config: &LossConfig,
) -> Result<LossValue> {
    evaluate(y, trace, truth, config, false).map(|(v, _)| v)
}

pub fn loss_gradient(
    y: ArrayView1<f64>,
    trace: &LatentTrace,
    truth: &IntermediateTruth,
    config: &LossConfig,
) -> Result<(LossValue, LossGradient)> {
    evaluate(y, trace, truth, config, true).map(|(v, g)| (v, g.expect("requested")))
}

fn evaluate(
    y: ArrayView1<f64>,
    trace: &LatentTrace,
    truth: &IntermediateTruth,
    config: &LossConfig,
    want_grad: bool,
) -> Result<(LossValue, Option<LossGradient>)> {
    config.validate()?;
    let y_hat = &trace.prediction;
    let n = y.len();
    if y_hat.len() != n {
        return Err(BinnError::LengthMismatch {
            expected: n,
            got: y_hat.len(),
        });
    }
    if n == 0 {
        return Err(BinnError::InsufficientLines("loss over zero samples".into()));
    }
    let mse = crate::stats::mse(y.as_slice().unwrap_or(&y.to_vec()), y_hat.as_slice().unwrap())?;
    let mut value = LossValue {
        total: mse,
        mse,
        penalty: 0.0,
        correlations: trace
            .per_layer_latents
            .iter()
            .map(|l| vec![None; l.ncols()])
            .collect(),
        degenerate: 0,
    };
    let mut grad = want_grad.then(|| LossGradient {
        d_prediction: (y_hat - &y) * (2.0 / n as f64),
        d_latents: trace
            .per_layer_latents
            .iter()
            .map(|l| Array2::zeros(l.dim()))
            .collect(),
    });
    if !config.uses_truth() {
        return Ok((value, grad));
    }
    for (l, layer_truth) in truth.layers.iter().enumerate() {
        let Some(tl) = layer_truth else { continue };
        let latents = trace.per_layer_latents.get(l).ok_or_else(|| {
            BinnError::ShapeMismatch(format!("truth for layer {} but model has none", l + 1))
        })?;
        if tl.values.dim() != latents.dim() {
            return Err(BinnError::ShapeMismatch(format!(
                "layer {} truth is {:?}, latents are {:?}",
                l + 1,
                tl.values.dim(),
                latents.dim()
            )));
        }
        let rows: Vec<usize> = (0..n).filter(|&i| tl.labeled[i]).collect();
        if rows.is_empty() {
            continue;
        }
        for j in (0..latents.ncols()).filter(|&j| tl.available[j]) {
            let t: Vec<f64> = rows.iter().map(|&i| latents[[i, j]]).collect();
            let z: Vec<f64> = rows.iter().map(|&i| tl.values[[i, j]]).collect();
            match config.mode {
                LossMode::SoftConstraint => {
                    if rows.len() < 2 {
                        continue;
                    }
                    match soft_term(&t, &z) {
                        Some((rho, d_rho)) => {
                            value.penalty += 1.0 - rho;
                            value.correlations[l][j] = Some(rho);
                            if let Some(g) = grad.as_mut() {
                                for (&i, d) in rows.iter().zip(&d_rho) {
                                    g.d_latents[l][[i, j]] -= config.lambda * d;
                                }
                            }
                        }
                        None => {
                            value.penalty += 1.0;
                            value.degenerate += 1;
                        }
                    }
                }
                LossMode::HardConstraint => {
                    for (k, &i) in rows.iter().enumerate() {
                        let diff = t[k] - z[k];
                        value.penalty += diff * diff;
                        if let Some(g) = grad.as_mut() {
                            g.d_latents[l][[i, j]] += 2.0 * config.lambda * diff;
                        }
                    }
                }
                LossMode::Mse => unreachable!(),
            }
        }
    }
    value.total = mse + config.lambda * value.penalty;
    Ok((value, grad))
}

/// Pearson correlation and its gradient w.r.t. `t`, or `None` when either
/// series is constant.
fn soft_term(t: &[f64], z: &[f64]) -> Option<(f64, Vec<f64>)> {
    let m = t.len() as f64;
    let mt = t.iter().sum::<f64>() / m;
    let mz = z.iter().sum::<f64>() / m;
    let tc: Vec<f64> = t.iter().map(|v| v - mt).collect();
    let zc: Vec<f64> = z.iter().map(|v| v - mz).collect();
    let stt: f64 = tc.iter().map(|v| v * v).sum();
    let szz: f64 = zc.iter().map(|v| v * v).sum();
    if stt / m <= DEGENERATE_VARIANCE || szz / m <= DEGENERATE_VARIANCE {
        return None;
    }
    let (nt, nz) = (stt.sqrt(), szz.sqrt());
    let stz: f64 = tc.iter().zip(&zc).map(|(a, b)| a * b).sum();
    let rho = stz / (nt * nz);
    let grad = tc
        .iter()
        .zip(&zc)
        .map(|(a, b)| b / (nt * nz) - rho * a / stt)
        .collect();
    Some((rho, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn trace(pred: Array1<f64>, latents: Array2<f64>) -> LatentTrace {
        let n = pred.len();
        LatentTrace {
            per_layer_latents: vec![latents],
            residual_output: Array2::zeros((n, 0)),
            prediction: pred,
        }
    }

    #[test]
    fn zero_lambda_is_plain_mse() {
        let y = array![1.0, 2.0, 3.0];
        let tr = trace(array![2.0, 2.0, 2.0], array![[0.1], [0.5], [0.2]]);
        let truth = IntermediateTruth::single(TruthLayer::fully_labeled(array![[1.0], [2.0], [3.0]]));
        let v = bio_loss(y.view(), &tr, &truth, &LossConfig::soft(0.0)).unwrap();
        let m = crate::stats::mse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(v.total.to_bits(), m.to_bits());
    }

    #[test]
    fn perfect_latents_add_no_penalty() {
        let y = array![1.0, 2.0, 3.0];
        let z = array![[1.0], [2.0], [4.0]];
        let tr = trace(array![1.0, 2.0, 2.0], z.clone());
        let truth = IntermediateTruth::single(TruthLayer::fully_labeled(z));
        let v = bio_loss(y.view(), &tr, &truth, &LossConfig::soft(1.0)).unwrap();
        assert!(v.penalty.abs() < 1e-15);
        assert!((v.total - v.mse).abs() < 1e-15);
    }

    #[test]
    fn two_entity_penalty() {
        // column 0: rho = 1; column 1: t = (1,2,3), z = (1,3,2) -> rho = 0.5
        let y = array![0.0, 0.0, 0.0];
        let tr = trace(array![0.0, 0.0, 0.0], array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let truth = IntermediateTruth::single(TruthLayer::fully_labeled(array![
            [2.0, 1.0],
            [4.0, 3.0],
            [6.0, 2.0]
        ]));
        let v = bio_loss(y.view(), &tr, &truth, &LossConfig::soft(2.0)).unwrap();
        assert!((v.penalty - 0.5).abs() < 1e-12);
        assert!((v.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_gradient_closed_form() {
        let y = array![1.0, -1.0];
        let tr = trace(array![0.5, 0.0], array![[0.0], [1.0]]);
        let (_, g) = loss_gradient(y.view(), &tr, &IntermediateTruth::empty(1), &LossConfig::mse()).unwrap();
        assert_eq!(g.d_prediction, array![2.0 * (0.5 - 1.0) / 2.0, 2.0 * (0.0 + 1.0) / 2.0]);
        assert!(g.d_latents[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_latent_is_neutral_not_nan() {
        let y = array![0.0, 1.0, 2.0];
        let tr = trace(array![0.0, 1.0, 2.0], array![[0.3], [0.3], [0.3]]);
        let truth = IntermediateTruth::single(TruthLayer::fully_labeled(array![[1.0], [2.0], [3.0]]));
        let (v, g) = loss_gradient(y.view(), &tr, &truth, &LossConfig::soft(1.0)).unwrap();
        assert_eq!(v.penalty, 1.0);
        assert_eq!(v.degenerate, 1);
        assert!(g.d_latents[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unlabeled_placeholders_are_ignored() {
        let y = array![0.0, 1.0, 2.0, 3.0];
        let tr = trace(array![0.0, 1.0, 2.5, 3.0], array![[0.1], [0.4], [0.2], [0.9]]);
        let labeled = vec![true, false, true, true];
        let a = TruthLayer::new(array![[1.0], [7.0], [2.0], [3.0]], labeled.clone(), vec![true]).unwrap();
        let b = TruthLayer::new(array![[1.0], [f64::NAN], [2.0], [3.0]], labeled, vec![true]).unwrap();
        for cfg in [LossConfig::soft(0.5), LossConfig::hard(0.5)] {
            let va = bio_loss(y.view(), &tr, &IntermediateTruth::single(a.clone()), &cfg).unwrap();
            let vb = bio_loss(y.view(), &tr, &IntermediateTruth::single(b.clone()), &cfg).unwrap();
            assert_eq!(va.total, vb.total);
        }
    }

    #[test]
    fn hard_constraint_sums_squared_gaps() {
        let y = array![0.0, 0.0];
        let tr = trace(array![0.0, 0.0], array![[1.0], [3.0]]);
        let truth = IntermediateTruth::single(TruthLayer::fully_labeled(array![[0.0], [1.0]]));
        let v = bio_loss(y.view(), &tr, &truth, &LossConfig::hard(0.5)).unwrap();
        assert_eq!(v.penalty, 5.0);
        assert_eq!(v.total, 2.5);
    }

    #[test]
    fn shape_mismatch_reported() {
        let y = array![0.0, 0.0];
        let tr = trace(array![0.0, 0.0], array![[1.0], [3.0]]);
        let truth = IntermediateTruth::single(TruthLayer::fully_labeled(array![[0.0, 1.0], [1.0, 1.0]]));
        assert!(matches!(
            bio_loss(y.view(), &tr, &truth, &LossConfig::soft(1.0)),
            Err(BinnError::ShapeMismatch(_))
        ));
    }
}
