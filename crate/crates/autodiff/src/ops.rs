//! Primitive differentiable operations.
//!
//! Binary element-wise ops broadcast only over leading dimensions: the
//! smaller operand's shape must be a suffix of the larger one's.

use std::rc::Rc;

use crate::kernels::{gemm, lu_factor, lu_solve, lu_solve_transposed, MatRef};
use crate::tape::{BackwardArgs, Var};
use crate::{numel, Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if is_suffix(a, b) {
        Ok(a.to_vec())
    } else if is_suffix(b, a) {
        Ok(b.to_vec())
    } else {
        Err(Error::InvalidInput(format!(
            "shapes {a:?} and {b:?} do not broadcast (only leading dimensions may differ)"
        )))
    }
}

/// Sums `g` (length `n`) into a vector of length `r`, `r` dividing `n`.
fn reduce_to(g: &[f64], r: usize) -> Vec<f64> {
    if g.len() == r {
        return g.to_vec();
    }
    let mut out = vec![0.0; r];
    for chunk in g.chunks_exact(r) {
        out.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
    }
    out
}

fn normalize_axis(axis: usize, ndim: usize) -> Result<usize> {
    if axis < ndim {
        Ok(axis)
    } else {
        Err(Error::InvalidInput(format!(
            "axis {axis} out of range for rank {ndim}"
        )))
    }
}

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands live on different tapes"
        );
    }

    fn binary(&self, other: &Var<'t>, kind: Binary) -> Result<Var<'t>> {
        self.same_tape(other);
        let (sa, sb) = (self.shape(), other.shape());
        let shape = broadcast_shape(&sa, &sb)?;
        let (a, b) = (self.value(), other.value());
        let (na, nb) = (a.len(), b.len());
        let n = numel(&shape);
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
            Binary::Div => |x: f64, y: f64| x / y,
        };
        let value: Vec<f64> = (0..n).map(|i| f(a[i % na], b[i % nb])).collect();
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            let (a, b) = (&args.inputs[0], &args.inputs[1]);
            let g = args.grad;
            let n = g.len();
            let mut ga = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for i in 0..n {
                let (x, y) = (a[i % na], b[i % nb]);
                let (dx, dy) = match kind {
                    Binary::Add => (1.0, 1.0),
                    Binary::Sub => (1.0, -1.0),
                    Binary::Mul => (y, x),
                    Binary::Div => (1.0 / y, -x / (y * y)),
                };
                ga[i] = g[i] * dx;
                gb[i] = g[i] * dy;
            }
            vec![Some(reduce_to(&ga, na)), Some(reduce_to(&gb, nb))]
        });
        Ok(self.tape.custom(&[*self, *other], value, &shape, backward))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Div)
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'t> {
        let x = self.value();
        let value: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            let x = &args.inputs[0];
            let g: Vec<f64> = args
                .grad
                .iter()
                .zip(x.iter().zip(args.value))
                .map(|(g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(g)]
        });
        self.tape.custom(&[*self], value, &self.shape(), backward)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(|x| -x, |_, _| -1.0)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Var<'t> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn powf(&self, p: f64) -> Var<'t> {
        self.unary(move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn reciprocal(&self) -> Var<'t> {
        self.unary(|x| 1.0 / x, |_, y| -y * y)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Batched matrix product.
    ///
    /// `self` is `[..., n, k]`; `other` is either a shared `[k, m]` matrix or
    /// `[..., k, m]` with identical leading dimensions.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "matmul needs rank >= 2 operands, got {sa:?} x {sb:?}"
            )));
        }
        let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, m) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead = &sa[..sa.len() - 2];
        let shared = sb.len() == 2;
        if kb != k || (!shared && sb[..sb.len() - 2] != *lead) {
            return Err(Error::InvalidInput(format!(
                "matmul shape mismatch {sa:?} x {sb:?}"
            )));
        }
        let batch = numel(lead);
        let (a, b) = (self.value(), other.value());
        let mut value = vec![0.0; batch * n * m];
        if shared {
            gemm(
                MatRef::row_major(&a, batch * n, k),
                MatRef::row_major(&b, k, m),
                &mut value,
                0.0,
            );
        } else {
            for i in 0..batch {
                gemm(
                    MatRef::row_major(&a[i * n * k..], n, k),
                    MatRef::row_major(&b[i * k * m..], k, m),
                    &mut value[i * n * m..],
                    0.0,
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([n, m]);
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            let (a, b, g) = (&args.inputs[0], &args.inputs[1], args.grad);
            let mut ga = vec![0.0; batch * n * k];
            let mut gb = vec![0.0; b.len()];
            if shared {
                gemm(
                    MatRef::row_major(g, batch * n, m),
                    MatRef::row_major(b, k, m).t(),
                    &mut ga,
                    0.0,
                );
                gemm(
                    MatRef::row_major(a, batch * n, k).t(),
                    MatRef::row_major(g, batch * n, m),
                    &mut gb,
                    0.0,
                );
            } else {
                for i in 0..batch {
                    let gi = &g[i * n * m..];
                    gemm(
                        MatRef::row_major(gi, n, m),
                        MatRef::row_major(&b[i * k * m..], k, m).t(),
                        &mut ga[i * n * k..],
                        0.0,
                    );
                    gemm(
                        MatRef::row_major(&a[i * n * k..], n, k).t(),
                        MatRef::row_major(gi, n, m),
                        &mut gb[i * k * m..],
                        0.0,
                    );
                }
            }
            vec![Some(ga), Some(gb)]
        });
        Ok(self.tape.custom(&[*self, *other], value, &shape, backward))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "transpose needs rank >= 2, got {shape:?}"
            )));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch = numel(&shape[..shape.len() - 2]);
        let swap = move |x: &[f64]| {
            let mut out = vec![0.0; x.len()];
            for b in 0..batch {
                let (src, dst) = (&x[b * r * c..(b + 1) * r * c], &mut out[b * r * c..]);
                for i in 0..r {
                    for j in 0..c {
                        dst[j * r + i] = src[i * c + j];
                    }
                }
            }
            out
        };
        let value = swap(&self.value());
        let mut out_shape = shape.clone();
        let len = out_shape.len();
        out_shape.swap(len - 2, len - 1);
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            // the gradient has the transposed shape [.., c, r]
            let mut out = vec![0.0; args.grad.len()];
            for b in 0..batch {
                let src = &args.grad[b * r * c..(b + 1) * r * c];
                let dst = &mut out[b * r * c..];
                for j in 0..c {
                    for i in 0..r {
                        dst[i * c + j] = src[j * r + i];
                    }
                }
            }
            vec![Some(out)]
        });
        Ok(self.tape.custom(&[*self], value, &out_shape, backward))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value();
        if numel(shape) != value.len() {
            return Err(Error::InvalidInput(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        let backward = Box::new(|args: &BackwardArgs<'_>| vec![Some(args.grad.to_vec())]);
        Ok(self.tape.custom(&[*self], value.to_vec(), shape, backward))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of zero tensors".into()))?;
        let base = first.shape();
        let axis = normalize_axis(axis, base.len())?;
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            first.same_tape(p);
            let s = p.shape();
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(Error::InvalidInput(format!(
                    "concat along {axis}: {s:?} incompatible with {base:?}"
                )));
            }
            lens.push(s[axis]);
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let total: usize = lens.iter().sum();
        let mut value = Vec::with_capacity(outer * total * inner);
        let values: Vec<_> = parts.iter().map(Var::value).collect();
        for o in 0..outer {
            for (v, &len) in values.iter().zip(&lens) {
                value.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            let mut grads: Vec<Vec<f64>> = lens
                .iter()
                .map(|&l| Vec::with_capacity(outer * l * inner))
                .collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (g, &len) in grads.iter_mut().zip(&lens) {
                    g.extend_from_slice(&args.grad[offset..offset + len * inner]);
                    offset += len * inner;
                }
            }
            grads.into_iter().map(Some).collect()
        });
        Ok(first.tape.custom(parts, value, &shape, backward))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        let axis = normalize_axis(axis, shape.len())?;
        if start > end || end > shape[axis] {
            return Err(Error::InvalidInput(format!(
                "slice {start}..{end} out of range for axis {axis} of {shape:?}"
            )));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let len = shape[axis];
        let width = end - start;
        let x = self.value();
        let mut value = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            value.extend_from_slice(&x[base..base + width * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = width;
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            let mut g = vec![0.0; outer * len * inner];
            for o in 0..outer {
                let base = (o * len + start) * inner;
                g[base..base + width * inner]
                    .copy_from_slice(&args.grad[o * width * inner..(o + 1) * width * inner]);
            }
            vec![Some(g)]
        });
        Ok(self.tape.custom(&[*self], value, &out_shape, backward))
    }

    /// Sum of all elements (scalar).
    pub fn sum(&self) -> Var<'t> {
        let value = vec![self.value().iter().sum()];
        let n = self.numel();
        let backward = Box::new(move |args: &BackwardArgs<'_>| vec![Some(vec![args.grad[0]; n])]);
        self.tape.custom(&[*self], value, &[], backward)
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        let axis = normalize_axis(axis, shape.len())?;
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let len = shape[axis];
        let x = self.value();
        let mut value = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                value[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(v, s)| *v += s);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            let mut g = vec![0.0; outer * len * inner];
            for o in 0..outer {
                let src = &args.grad[o * inner..(o + 1) * inner];
                for l in 0..len {
                    g[(o * len + l) * inner..(o * len + l + 1) * inner].copy_from_slice(src);
                }
            }
            vec![Some(g)]
        });
        Ok(self.tape.custom(&[*self], value, &out_shape, backward))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Var<'t> {
        let shape = self.shape();
        let d = *shape.last().unwrap_or(&1);
        let x = self.value();
        let mut value = vec![0.0; x.len()];
        for (row, out) in x.chunks_exact(d).zip(value.chunks_exact_mut(d)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            let mut g = vec![0.0; args.grad.len()];
            for ((y, gy), gx) in args
                .value
                .chunks_exact(d)
                .zip(args.grad.chunks_exact(d))
                .zip(g.chunks_exact_mut(d))
            {
                let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                for i in 0..d {
                    gx[i] = y[i] * (gy[i] - dot);
                }
            }
            vec![Some(g)]
        });
        self.tape.custom(&[*self], value, &shape, backward)
    }

    /// Softmax over the last axis after adding a constant additive mask
    /// whose shape is a suffix of `self`'s (use [`crate::MASKED_LOGIT`]).
    pub fn masked_softmax(&self, mask: &Var<'t>) -> Result<Var<'t>> {
        Ok(self.add(mask)?.softmax())
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, eps: f64) -> Var<'t> {
        let shape = self.shape();
        let d = *shape.last().unwrap_or(&1);
        let x = self.value();
        let mut value = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(x.len() / d.max(1));
        for (row, out) in x.chunks_exact(d).zip(value.chunks_exact_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std.push(s);
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            let mut g = vec![0.0; args.grad.len()];
            for (r, ((xh, gy), gx)) in args
                .value
                .chunks_exact(d)
                .zip(args.grad.chunks_exact(d))
                .zip(g.chunks_exact_mut(d))
                .enumerate()
            {
                let mean_g = gy.iter().sum::<f64>() / d as f64;
                let mean_gx = gy.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for i in 0..d {
                    gx[i] = inv_std[r] * (gy[i] - mean_g - xh[i] * mean_gx);
                }
            }
            vec![Some(g)]
        });
        self.tape.custom(&[*self], value, &shape, backward)
    }

    /// Batched linear solve `self · X = rhs` via LU with partial pivoting.
    ///
    /// `self` is `[..., n, n]` and `rhs` is `[..., n, k]` with identical
    /// leading dimensions.
    pub fn solve(&self, rhs: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(rhs);
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() < 2 || sb.len() != sa.len() {
            return Err(Error::InvalidInput(format!(
                "solve shape mismatch {sa:?} \\ {sb:?}"
            )));
        }
        let n = sa[sa.len() - 1];
        let k = sb[sb.len() - 1];
        if sa[sa.len() - 2] != n
            || sb[sb.len() - 2] != n
            || sa[..sa.len() - 2] != sb[..sb.len() - 2]
        {
            return Err(Error::InvalidInput(format!(
                "solve shape mismatch {sa:?} \\ {sb:?}"
            )));
        }
        let batch = numel(&sa[..sa.len() - 2]);
        let (a, b) = (self.value(), rhs.value());
        let mut value = b.to_vec();
        let mut factors = Vec::with_capacity(batch);
        for i in 0..batch {
            let mut lu = a[i * n * n..(i + 1) * n * n].to_vec();
            let perm = lu_factor(&mut lu, n);
            lu_solve(&lu, &perm, n, &mut value[i * n * k..(i + 1) * n * k], k);
            factors.push((lu, perm));
        }
        let factors = Rc::new(factors);
        let backward = Box::new(move |args: &BackwardArgs<'_>| {
            let x = args.value;
            let mut gb = args.grad.to_vec();
            let mut ga = vec![0.0; batch * n * n];
            for (i, (lu, perm)) in factors.iter().enumerate() {
                let gbi = &mut gb[i * n * k..(i + 1) * n * k];
                lu_solve_transposed(lu, perm, n, gbi, k);
                // dA = -dB Xᵀ
                let xi = &x[i * n * k..(i + 1) * n * k];
                let gai = &mut ga[i * n * n..(i + 1) * n * n];
                for r in 0..n {
                    for c in 0..n {
                        let mut acc = 0.0;
                        for j in 0..k {
                            acc += gbi[r * k + j] * xi[c * k + j];
                        }
                        gai[r * n + c] = -acc;
                    }
                }
            }
            vec![Some(ga), Some(gb)]
        });
        Ok(self.tape.custom(&[*self, *rhs], value, &sb, backward))
    }
}
