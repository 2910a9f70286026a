//! Ridge regression on markers (equivalent to rrBLUP/GBLUP with a fixed
//! variance ratio), with an unpenalized intercept.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};
use crate::linalg::solve_spd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
}

impl RidgeModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(BinnError::DimensionMismatch(format!(
                "ridge model has {} coefficients, input has {} columns",
                self.coefficients.len(),
                x.ncols()
            )));
        }
        Ok(x.dot(&ArrayView1::from(&self.coefficients)) + self.intercept)
    }
}

/// Which normal-equation system to solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RidgeForm {
    /// `p x p` when `n > p`, otherwise `n x n`.
    Auto,
    /// `(X^T X + alpha I) beta = X^T y`
    Feature,
    /// `beta = X^T (X X^T + alpha I)^{-1} y`
    Gram,
}

/// Centered design and cross-products reused across a grid of penalties.
pub struct RidgeSystem {
    x_mean: Array1<f64>,
    y_mean: f64,
    xc: Array2<f64>,
    form: RidgeForm,
    gram: Array2<f64>,
    rhs: Array1<f64>,
}

impl RidgeSystem {
    pub fn new(x: ArrayView2<f64>, y: ArrayView1<f64>, form: RidgeForm) -> Result<Self> {
        let (n, p) = x.dim();
        if y.len() != n {
            return Err(BinnError::LengthMismatch { expected: n, got: y.len() });
        }
        if n == 0 {
            return Err(BinnError::InsufficientLines("ridge needs at least one line".into()));
        }
        let x_mean = x.mean_axis(Axis(0)).expect("n > 0");
        let y_mean = y.mean().expect("n > 0");
        let xc = &x - &x_mean;
        let yc = &y - y_mean;
        let form = match form {
            RidgeForm::Auto if n > p => RidgeForm::Feature,
            RidgeForm::Auto => RidgeForm::Gram,
            f => f,
        };
        let (gram, rhs) = match form {
            RidgeForm::Feature => (xc.t().dot(&xc), xc.t().dot(&yc)),
            _ => {
                let mut k = xc.dot(&xc.t());
                // Centering puts the ones vector in the kernel of X X^T. Adding a
                // multiple of 11^T removes that null direction without changing
                // the solution, because the centered response is orthogonal to 1.
                let shift = (k.diag().sum() / n as f64).max(1.0) / n as f64;
                k += shift;
                (k, yc)
            }
        };
        Ok(Self {
            x_mean,
            y_mean,
            xc,
            form,
            gram,
            rhs,
        })
    }

    pub fn solve(&self, alpha: f64) -> Result<RidgeModel> {
        if !(alpha >= 0.0) {
            return Err(BinnError::InvalidConfig(format!("ridge alpha must be >= 0, got {alpha}")));
        }
        let mut a = self.gram.clone();
        a.diag_mut().mapv_inplace(|v| v + alpha);
        let beta = match self.form {
            RidgeForm::Feature => solve_spd(a, &self.rhs)?,
            _ => self.xc.t().dot(&solve_spd(a, &self.rhs)?),
        };
        let intercept = self.y_mean - self.x_mean.dot(&beta);
        Ok(RidgeModel {
            coefficients: beta.to_vec(),
            intercept,
            alpha,
        })
    }
}

/// Minimizes `||y - X beta - b||^2 + alpha ||beta||^2`.
pub fn ridge_fit(x: ArrayView2<f64>, y: ArrayView1<f64>, alpha: f64) -> Result<RidgeModel> {
    ridge_fit_with(x, y, alpha, RidgeForm::Auto)
}

pub fn ridge_fit_with(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    alpha: f64,
    form: RidgeForm,
) -> Result<RidgeModel> {
    RidgeSystem::new(x, y, form)?.solve(alpha)
}

/// 13 log-spaced penalties from 1e-3 to 1e3.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..13).map(|i| 10f64.powf(-3.0 + 0.5 * i as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_solved_single_feature() {
        let m = ridge_fit(array![[1.0], [-1.0]].view(), array![1.0, -1.0].view(), 1.0).unwrap();
        assert!((m.coefficients[0] - 2.0 / 3.0).abs() < 1e-14);
        let p = m.predict(array![[1.0], [-1.0]].view()).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-14 && (p[1] + 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn unpenalized_square_design_interpolates() {
        let x = array![[1.0, 0.0, 2.0], [0.5, 1.0, 0.0], [2.0, 1.5, 1.0]];
        let y = array![1.0, -2.0, 0.5];
        let m = ridge_fit(x.view(), y.view(), 0.0).unwrap();
        let p = m.predict(x.view()).unwrap();
        for (a, b) in p.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn infinite_shrinkage_predicts_the_mean() {
        let x = array![[1.0, 0.0], [0.0, 2.0], [2.0, 1.0], [1.0, 1.0]];
        let y = array![1.0, 3.0, 2.0, 6.0];
        let m = ridge_fit(x.view(), y.view(), 1e9).unwrap();
        for v in m.predict(x.view()).unwrap() {
            assert!((v - 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn rank_deficient_without_penalty_is_singular() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]];
        let y = array![1.0, 2.0, 3.0, 5.0];
        assert!(matches!(
            ridge_fit_with(x.view(), y.view(), 0.0, RidgeForm::Feature),
            Err(BinnError::SingularSystem)
        ));
    }

    #[test]
    fn grid_endpoints() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 13);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[12] - 1e3).abs() < 1e-9);
    }
}
