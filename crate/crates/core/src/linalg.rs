//! Dense symmetric positive-definite solves.

use ndarray::{Array1, Array2};

use crate::error::{BinnError, Result};

/// In-place Cholesky factorization `A = L L^T` (lower triangle overwritten).
/// Fails when a pivot is not safely positive.
pub fn cholesky_in_place(a: &mut Array2<f64>) -> Result<()> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let data = a.as_slice_mut().expect("standard layout");
    for i in 0..n {
        for j in 0..=i {
            let s = {
                let row_i = &data[i * n..i * n + j];
                let row_j = &data[j * n..j * n + j];
                data[i * n + j] - row_i.iter().zip(row_j).map(|(a, b)| a * b).sum::<f64>()
            };
            if i == j {
                if !(s > scale * 1e-13) {
                    return Err(BinnError::SingularSystem);
                }
                data[i * n + i] = s.sqrt();
            } else {
                data[i * n + j] = s / data[j * n + j];
            }
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` given the factor from [`cholesky_in_place`].
pub fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.to_vec();
    for i in 0..n {
        let row = l.row(i);
        let mut s = y[i];
        for k in 0..i {
            s -= row[k] * y[k];
        }
        y[i] = s / row[i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    Array1::from(y)
}

pub fn solve_spd(mut a: Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    if !a.is_standard_layout() {
        a = a.as_standard_layout().to_owned();
    }
    cholesky_in_place(&mut a)?;
    Ok(cholesky_solve(&a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_system() {
        let a = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let b = array![1.0, -2.0, 0.5];
        let x = solve_spd(a.clone(), &b).unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn singular_detected() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(solve_spd(a, &array![1.0, 1.0]), Err(BinnError::SingularSystem)));
    }
}
