//! Small dense complex solvers for per-bin `M x M` systems.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Solves `A X = B` for row-major `A` (`n x n`) and `B` (`n x k`).
///
/// Hermitian matrices try a Cholesky factorization first; everything else,
/// and Hermitian matrices that are not numerically positive definite, use LU
/// with partial pivoting.
pub fn solve(a: &[Complex64], n: usize, b: &[Complex64], k: usize) -> Result<Vec<Complex64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n * k);
    if is_hermitian(a, n) {
        if let Some(l) = cholesky(a, n) {
            return Ok(cholesky_solve(&l, n, b, k));
        }
    }
    lu_solve(a, n, b, k)
}

/// Exact up to a relative rounding tolerance.
pub fn is_hermitian(a: &[Complex64], n: usize) -> bool {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = 1e-13 * scale;
    (0..n).all(|i| {
        a[i * n + i].im.abs() <= tol
            && (0..i).all(|j| (a[i * n + j] - a[j * n + i].conj()).norm() <= tol)
    })
}

/// Lower Cholesky factor of a Hermitian positive definite matrix, or `None`
/// when a pivot is not strictly positive.
pub fn cholesky(a: &[Complex64], n: usize) -> Option<Vec<Complex64>> {
    let mut l = vec![Complex64::default(); n * n];
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for p in 0..j {
            d -= l[j * n + p].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[j * n + j] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p].conj();
            }
            l[i * n + j] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[Complex64], n: usize, b: &[Complex64], k: usize) -> Vec<Complex64> {
    let mut y = b.to_vec();
    // L y = b
    for i in 0..n {
        for p in 0..i {
            let lip = l[i * n + p];
            for c in 0..k {
                let v = y[p * k + c];
                y[i * k + c] -= lip * v;
            }
        }
        let d = l[i * n + i].re;
        for c in 0..k {
            y[i * k + c] /= d;
        }
    }
    // Lᴴ x = y
    for i in (0..n).rev() {
        for p in i + 1..n {
            let lpi = l[p * n + i].conj();
            for c in 0..k {
                let v = y[p * k + c];
                y[i * k + c] -= lpi * v;
            }
        }
        let d = l[i * n + i].re;
        for c in 0..k {
            y[i * k + c] /= d;
        }
    }
    y
}

fn lu_solve(a: &[Complex64], n: usize, b: &[Complex64], k: usize) -> Result<Vec<Complex64>> {
    let mut a = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].norm().total_cmp(&a[j * n + col].norm()))
            .unwrap_or(col);
        if a[pivot * n + col].norm() == 0.0 {
            return Err(Error::Numerical("singular matrix in solve".into()));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            for c in 0..k {
                x.swap(col * k + c, pivot * k + c);
            }
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == Complex64::default() {
                continue;
            }
            for j in col..n {
                let v = a[col * n + j];
                a[row * n + j] -= f * v;
            }
            for c in 0..k {
                let v = x[col * k + c];
                x[row * k + c] -= f * v;
            }
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let aij = a[i * n + j];
            for c in 0..k {
                let v = x[j * k + c];
                x[i * k + c] -= aij * v;
            }
        }
        let d = a[i * n + i];
        for c in 0..k {
            x[i * k + c] /= d;
        }
    }
    Ok(x)
}
