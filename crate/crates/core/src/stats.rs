//! Correlation and summary statistics shared by losses, metrics and reports.

use serde::{Deserialize, Serialize};

use crate::error::{BinnError, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation (divisor `n`).
pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(BinnError::LengthMismatch {
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(BinnError::InsufficientLines("mse needs at least one value".into()));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Sample Pearson correlation.
pub fn pearson(t: &[f64], z: &[f64]) -> Result<f64> {
    if t.len() != z.len() {
        return Err(BinnError::LengthMismatch {
            expected: t.len(),
            got: z.len(),
        });
    }
    if t.len() < 2 {
        return Err(BinnError::InsufficientLines("correlation needs two values".into()));
    }
    let (mt, mz) = (mean(t), mean(z));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in t.iter().zip(z) {
        let (da, db) = (a - mt, b - mz);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(BinnError::DegenerateVariance("constant input to correlation".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// One-based fractional ranks; tied values share the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman's rho as the Pearson correlation of average-tie ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(BinnError::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// `(new - base) / |base| * 100`; undefined when `base == 0`.
pub fn percent_change(new: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| (new - base) / base.abs() * 100.0)
}

/// Linear-interpolation quantile (the "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Prediction accuracy of one model on one evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mse: f64,
    pub pearson_r: f64,
    pub spearman_rho: f64,
    pub percent_change_vs_baseline: Option<f64>,
}

impl MetricSet {
    /// Correlations fall back to NaN when predictions are constant.
    pub fn compute(y: &[f64], y_hat: &[f64]) -> Result<Self> {
        Ok(Self {
            mse: mse(y, y_hat)?,
            pearson_r: pearson(y, y_hat).unwrap_or(f64::NAN),
            spearman_rho: spearman(y, y_hat).unwrap_or(f64::NAN),
            percent_change_vs_baseline: None,
        })
    }

    pub fn with_baseline(mut self, baseline_mse: f64) -> Self {
        self.percent_change_vs_baseline = percent_change(self.mse, baseline_mse);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(BinnError::LengthMismatch { .. })));
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(BinnError::DegenerateVariance(_))
        ));
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4), centred:
        // a = (-1.5, 0, 0, 1.5), b = (-1.5, -0.5, 0.5, 1.5)
        // sum ab = 4.5, |a| = sqrt(4.5), |b| = sqrt(5) -> sqrt(4.5/5)
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - (0.9f64).sqrt()).abs() < 1e-15);
        assert!(matches!(
            spearman(&[2.0, 2.0], &[1.0, 2.0]),
            Err(BinnError::DegenerateVariance(_))
        ));
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn percent_change_matches_formula() {
        assert_eq!(percent_change(1.5, 1.0), Some(50.0));
        assert_eq!(percent_change(-1.5, -1.0), Some(-50.0));
        assert_eq!(percent_change(1.0, 0.0), None);
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
    }

    proptest! {
        #[test]
        fn pearson_bounded_and_affine_invariant(
            t in proptest::collection::vec(-10.0f64..10.0, 3..40),
            scale in 0.1f64..5.0,
            shift in -5.0f64..5.0,
        ) {
            let z: Vec<f64> = t.iter().enumerate().map(|(i, v)| v.sin() + i as f64 * 0.1).collect();
            if let Ok(r) = pearson(&t, &z) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let t2: Vec<f64> = t.iter().map(|v| scale * v + shift).collect();
                let r2 = pearson(&t2, &z).unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
            }
        }

        #[test]
        fn spearman_in_unit_interval(
            x in proptest::collection::vec(0u8..5, 2..30),
            y in proptest::collection::vec(0u8..5, 2..30),
        ) {
            let n = x.len().min(y.len());
            let xs: Vec<f64> = x[..n].iter().map(|&v| v as f64).collect();
            let ys: Vec<f64> = y[..n].iter().map(|&v| v as f64).collect();
            if let Ok(r) = spearman(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
