//! Small dense helpers for least-squares fits of a handful of parameters.

use alloc::vec;
use alloc::vec::Vec;

/// Solve `A x = b` for square row-major `a` (n×n) by Gaussian elimination
/// with partial pivoting. Returns `None` when `A` is numerically singular.
pub(crate) fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Ordinary least squares `min ‖X β − y‖²` via the normal equations with a
/// tiny ridge for conditioning. `rows` are the regressor vectors.
pub(crate) fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    if k == 0 {
        return Some(Vec::new());
    }
    let mut xtx = vec![0.0; k * k];
    let mut xty = vec![0.0; k];
    for (r, &t) in rows.iter().zip(y) {
        for i in 0..k {
            xty[i] += r[i] * t;
            for j in 0..k {
                xtx[i * k + j] += r[i] * r[j];
            }
        }
    }
    let scale = (0..k).map(|i| xtx[i * k + i]).fold(0.0, f64::max).max(1e-12);
    for i in 0..k {
        xtx[i * k + i] += 1e-10 * scale;
    }
    solve(xtx, xty, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let x = solve(vec![2.0, 1.0, 1.0, 3.0], vec![3.0, 5.0], 2).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
        assert!(solve(vec![1.0, 2.0, 2.0, 4.0], vec![1.0, 2.0], 2).is_none());
    }

    #[test]
    fn recovers_linear_fit() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| 3.0 - 0.5 * i as f64).collect();
        let b = least_squares(&rows, &y).unwrap();
        assert!((b[0] - 3.0).abs() < 1e-6 && (b[1] + 0.5).abs() < 1e-6);
    }
}
