//! Elastic net by cyclic coordinate descent.
//!
//! Objective, with an unpenalized intercept:
//!
//! ```text
//! (1 / 2n) ||y - b - X beta||^2 + penalty * (l1_ratio ||beta||_1 + (1 - l1_ratio) / 2 ||beta||^2)
//! ```

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};
use crate::seed;
use crate::training::splits::fold_partition;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub penalty: f64,
    pub l1_ratio: f64,
    /// False when the iteration cap was hit; coefficients are the last iterate.
    pub converged: bool,
    pub iterations: usize,
}

impl ElasticNetModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array1<f64> {
        x.dot(&ArrayView1::from(&self.coefficients)) + self.intercept
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.coefficients.len())
            .filter(|&j| self.coefficients[j] != 0.0)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordinateDescent {
    pub max_iterations: usize,
    /// Convergence when the largest coefficient update in a sweep is below this.
    pub tolerance: f64,
}

impl Default for CoordinateDescent {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-9,
        }
    }
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Column-major centered copy of the design for fast coordinate sweeps.
struct Centered {
    cols: Array2<f64>,
    x_mean: Array1<f64>,
    y_mean: f64,
    yc: Array1<f64>,
    col_sq: Vec<f64>,
}

impl Centered {
    fn new(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Self> {
        let (n, _) = x.dim();
        if y.len() != n {
            return Err(BinnError::LengthMismatch { expected: n, got: y.len() });
        }
        if n == 0 {
            return Err(BinnError::InsufficientLines("elastic net needs data".into()));
        }
        let x_mean = x.mean_axis(Axis(0)).unwrap();
        let y_mean = y.mean().unwrap();
        let cols = (&x - &x_mean).reversed_axes().as_standard_layout().to_owned();
        let col_sq = cols.rows().into_iter().map(|c| c.dot(&c) / n as f64).collect();
        Ok(Self {
            cols,
            x_mean,
            y_mean,
            yc: &y - y_mean,
            col_sq,
        })
    }

    fn n(&self) -> usize {
        self.yc.len()
    }

    /// `max_j |x_j^T y| / n`, the smallest lasso penalty giving an all-zero fit.
    fn critical_penalty(&self) -> f64 {
        let n = self.n() as f64;
        self.cols
            .rows()
            .into_iter()
            .map(|c| (c.dot(&self.yc) / n).abs())
            .fold(0.0, f64::max)
    }

    fn solve(
        &self,
        penalty: f64,
        l1_ratio: f64,
        warm: Option<&[f64]>,
        cd: CoordinateDescent,
    ) -> ElasticNetModel {
        let n = self.n() as f64;
        let p = self.cols.nrows();
        let mut beta = warm.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
        let mut resid = self.yc.clone();
        if warm.is_some() {
            for (j, &b) in beta.iter().enumerate() {
                if b != 0.0 {
                    resid.scaled_add(-b, &self.cols.row(j));
                }
            }
        }
        let l1 = penalty * l1_ratio;
        let l2 = penalty * (1.0 - l1_ratio);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cd.max_iterations {
            iterations += 1;
            let mut max_delta: f64 = 0.0;
            for j in 0..p {
                let cj = self.col_sq[j];
                if cj == 0.0 {
                    beta[j] = 0.0;
                    continue;
                }
                let col = self.cols.row(j);
                let rho = col.dot(&resid) / n + cj * beta[j];
                let new = soft_threshold(rho, l1) / (cj + l2);
                let delta = new - beta[j];
                if delta != 0.0 {
                    resid.scaled_add(-delta, &col);
                    beta[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if max_delta <= cd.tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("elastic net hit {} sweeps without converging", cd.max_iterations);
        }
        let intercept = self.y_mean - self.x_mean.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
        ElasticNetModel {
            coefficients: beta,
            intercept,
            penalty,
            l1_ratio,
            converged,
            iterations,
        }
    }
}

fn check_args(penalty: f64, l1_ratio: f64) -> Result<()> {
    if !(penalty >= 0.0) {
        return Err(BinnError::InvalidConfig(format!("penalty must be >= 0, got {penalty}")));
    }
    if !(0.0..=1.0).contains(&l1_ratio) {
        return Err(BinnError::InvalidConfig(format!("l1_ratio must lie in [0, 1], got {l1_ratio}")));
    }
    Ok(())
}

pub fn elastic_net_fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    penalty: f64,
    l1_ratio: f64,
) -> Result<ElasticNetModel> {
    elastic_net_fit_with(x, y, penalty, l1_ratio, CoordinateDescent::default())
}

pub fn elastic_net_fit_with(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    penalty: f64,
    l1_ratio: f64,
    cd: CoordinateDescent,
) -> Result<ElasticNetModel> {
    check_args(penalty, l1_ratio)?;
    Ok(Centered::new(x, y)?.solve(penalty, l1_ratio, None, cd))
}

/// Smallest penalty at which every coefficient is zero for this l1 ratio.
pub fn critical_penalty(x: ArrayView2<f64>, y: ArrayView1<f64>, l1_ratio: f64) -> Result<f64> {
    check_args(0.0, l1_ratio)?;
    let c = Centered::new(x, y)?;
    Ok(c.critical_penalty() / l1_ratio.max(1e-3))
}

/// Largest violation of the stationarity conditions over all coordinates.
pub fn kkt_violation(model: &ElasticNetModel, x: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
    let n = x.nrows() as f64;
    let resid = &y - &model.predict(x);
    let l1 = model.penalty * model.l1_ratio;
    let l2 = model.penalty * (1.0 - model.l1_ratio);
    let mut worst: f64 = 0.0;
    for (j, &b) in model.coefficients.iter().enumerate() {
        let g = x.column(j).dot(&resid) / n - l2 * b;
        let v = if b != 0.0 {
            (g - l1 * b.signum()).abs()
        } else {
            (g.abs() - l1).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Result of choosing the penalty by K-fold cross-validation.
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticNetCv {
    pub penalties: Vec<f64>,
    pub mean_validation_mse: Vec<f64>,
    pub best_penalty: f64,
    pub model: ElasticNetModel,
}

/// Fits a descending, log-spaced penalty path from the critical value down
/// to `critical * min_ratio`, scores each by fold MSE, and refits at the best
/// penalty on all rows.
pub fn elastic_net_cv(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    l1_ratio: f64,
    n_penalties: usize,
    min_ratio: f64,
    folds: usize,
    seed_value: u64,
) -> Result<ElasticNetCv> {
    check_args(0.0, l1_ratio)?;
    if n_penalties == 0 {
        return Err(BinnError::InvalidConfig("empty penalty path".into()));
    }
    let top = critical_penalty(x, y, l1_ratio)?.max(f64::MIN_POSITIVE);
    let penalties: Vec<f64> = (0..n_penalties)
        .map(|i| {
            let t = if n_penalties == 1 { 0.0 } else { i as f64 / (n_penalties - 1) as f64 };
            top * min_ratio.powf(t)
        })
        .collect();
    let n = x.nrows();
    let mut rng = seed::rng(seed_value, "elastic-net-cv", &[]);
    let order: Vec<usize> = (0..n).collect();
    let parts = fold_partition(&order, folds, &mut rng)?;
    let cd = CoordinateDescent {
        max_iterations: 2_000,
        tolerance: 1e-6,
    };
    let mut total = vec![0.0; penalties.len()];
    for val in &parts {
        let mut is_val = vec![false; n];
        for &i in val {
            is_val[i] = true;
        }
        let tr: Vec<usize> = (0..n).filter(|&i| !is_val[i]).collect();
        let c = Centered::new(x.select(Axis(0), &tr).view(), y.select(Axis(0), &tr).view())?;
        let xv = x.select(Axis(0), val);
        let yv = y.select(Axis(0), val);
        let mut warm: Option<Vec<f64>> = None;
        for (k, &pen) in penalties.iter().enumerate() {
            let m = c.solve(pen, l1_ratio, warm.as_deref(), cd);
            let mse = (&yv - &m.predict(xv.view())).mapv(|v| v * v).mean().unwrap();
            total[k] += mse / parts.len() as f64;
            warm = Some(m.coefficients);
        }
    }
    let best = total
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let model = elastic_net_fit(x, y, penalties[best], l1_ratio)?;
    Ok(ElasticNetCv {
        best_penalty: penalties[best],
        penalties,
        mean_validation_mse: total,
        model,
    })
}
