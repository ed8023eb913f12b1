//! Dense kernels shared by the op implementations.

/// Row-major view of a matrix stored in a slice, possibly transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = beta * c + a * b` with `c` row-major `a.rows x b.cols`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension mismatch");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    if m * k * n <= SMALL_GEMM {
        small_gemm(a, b, c, beta);
        return;
    }
    // SAFETY: the strides describe matrices lying entirely inside the
    // borrowed slices (checked by the debug asserts above and by the
    // callers, which derive dimensions from the slice lengths).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Below this many multiply-adds the packing overhead of the blocked kernel
/// dominates; batched per-bin products are far smaller.
const SMALL_GEMM: usize = 4096;

fn small_gemm(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], beta: f64) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let at = |r: usize, q: usize| {
        a.data[(r as isize * a.row_stride + q as isize * a.col_stride) as usize]
    };
    let bt = |q: usize, j: usize| {
        b.data[(q as isize * b.row_stride + j as isize * b.col_stride) as usize]
    };
    for r in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for q in 0..k {
                acc += at(r, q) * bt(q, j);
            }
            let out = &mut c[r * n + j];
            *out = if beta == 0.0 { acc } else { beta * *out + acc };
        }
    }
}

/// In-place LU factorization with partial pivoting of a row-major `n x n`
/// matrix. Returns the row permutation.
pub(crate) fn lu_factor(a: &mut [f64], n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            perm.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            a[row * n + col] = f;
            if f != 0.0 {
                for j in col + 1..n {
                    a[row * n + j] -= f * a[col * n + j];
                }
            }
        }
    }
    perm
}

/// Solves `A x = b` for `k` right-hand sides (row-major `n x k`) in place.
pub(crate) fn lu_solve(lu: &[f64], perm: &[usize], n: usize, b: &mut [f64], k: usize) {
    let mut tmp = vec![0.0; n * k];
    for (i, &p) in perm.iter().enumerate() {
        tmp[i * k..(i + 1) * k].copy_from_slice(&b[p * k..(p + 1) * k]);
    }
    for i in 0..n {
        for j in 0..i {
            let l = lu[i * n + j];
            if l != 0.0 {
                for c in 0..k {
                    tmp[i * k + c] -= l * tmp[j * k + c];
                }
            }
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let u = lu[i * n + j];
            if u != 0.0 {
                for c in 0..k {
                    tmp[i * k + c] -= u * tmp[j * k + c];
                }
            }
        }
        let d = lu[i * n + i];
        for c in 0..k {
            tmp[i * k + c] /= d;
        }
    }
    b[..n * k].copy_from_slice(&tmp);
}

/// Solves `Aᵀ x = b` given the factorization of `A`.
pub(crate) fn lu_solve_transposed(lu: &[f64], perm: &[usize], n: usize, b: &mut [f64], k: usize) {
    // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = b, Lᵀ w = z, x = Pᵀ w.
    let mut tmp = b[..n * k].to_vec();
    for i in 0..n {
        for j in 0..i {
            let u = lu[j * n + i];
            if u != 0.0 {
                for c in 0..k {
                    tmp[i * k + c] -= u * tmp[j * k + c];
                }
            }
        }
        let d = lu[i * n + i];
        for c in 0..k {
            tmp[i * k + c] /= d;
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            let l = lu[j * n + i];
            if l != 0.0 {
                for c in 0..k {
                    tmp[i * k + c] -= l * tmp[j * k + c];
                }
            }
        }
    }
    for (i, &p) in perm.iter().enumerate() {
        b[p * k..(p + 1) * k].copy_from_slice(&tmp[i * k..(i + 1) * k]);
    }
}
