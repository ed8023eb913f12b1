//! Spatial covariance matrices: instantaneous outer products, causal
//! averaging estimators and real-valued vectorization.

use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

/// Absolute asymmetry tolerated by [`compact_hermitian`], scaled by the
/// largest entry magnitude when that exceeds one.
pub const HERMITIAN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScmKind {
    Speech,
    Noise,
    Mixture,
}

/// Per-bin `M x M` matrices indexed `(frequency, frame, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSequence {
    pub data: Array4<Complex64>,
    pub kind: ScmKind,
}

impl ScmSequence {
    pub fn new(data: Array4<Complex64>, kind: ScmKind) -> Result<Self> {
        let (_, _, m, m2) = data.dim();
        if m != m2 || m == 0 {
            return Err(Error::InvalidInput(format!(
                "SCM blocks must be square and non-empty, got {m}x{m2}"
            )));
        }
        Ok(Self { data, kind })
    }

    pub fn num_bins(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn matrix(&self, f: usize, t: usize) -> ArrayView2<'_, Complex64> {
        self.data.slice(s![f, t, .., ..])
    }

    /// Instantaneous SCMs `y yᴴ` of every time-frequency bin.
    pub fn instantaneous(spec: &Spectrogram, kind: ScmKind) -> Self {
        let (m, bins, frames) = spec.data.dim();
        let mut data = Array4::zeros((bins, frames, m, m));
        for f in 0..bins {
            for t in 0..frames {
                for i in 0..m {
                    let a = spec.data[[i, f, t]];
                    for j in 0..m {
                        data[[f, t, i, j]] = a * spec.data[[j, f, t]].conj();
                    }
                }
            }
        }
        Self { data, kind }
    }

    /// Largest `|A - Aᴴ|` entry over all blocks.
    pub fn max_asymmetry(&self) -> f64 {
        let (bins, frames, m, _) = self.data.dim();
        let mut worst: f64 = 0.0;
        for f in 0..bins {
            for t in 0..frames {
                for i in 0..m {
                    for j in 0..=i {
                        let d = self.data[[f, t, i, j]] - self.data[[f, t, j, i]].conj();
                        worst = worst.max(d.norm());
                    }
                }
            }
        }
        worst
    }

    /// Keeps frames `..frames`.
    pub fn truncate_frames(&self, frames: usize) -> Self {
        Self {
            data: self.data.slice(s![.., ..frames, .., ..]).to_owned(),
            kind: self.kind,
        }
    }
}

/// Outer product `v vᴴ`.
pub fn iscm(v: &[Complex64]) -> Array2<Complex64> {
    let m = v.len();
    Array2::from_shape_fn((m, m), |(i, j)| v[i] * v[j].conj())
}

/// Causal running mean over all past frames.
pub fn cum_avg(iscms: &ScmSequence) -> ScmSequence {
    let mut out = iscms.clone();
    let (bins, _, m, _) = iscms.data.dim();
    let mut acc = Array3::<Complex64>::zeros((bins, m, m));
    for t in 0..iscms.num_frames() {
        acc += &iscms.data.index_axis(Axis(1), t);
        let scaled = &acc / Complex64::new((t + 1) as f64, 0.0);
        out.data.index_axis_mut(Axis(1), t).assign(&scaled);
    }
    out
}

/// Unnormalized recursion `Φ(t) = α Φ(t-1) + Ψ(t)` with `Φ(-1) = 0`.
pub fn rec_avg(iscms: &ScmSequence, alpha: f64) -> Result<ScmSequence> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "forgetting factor {alpha} outside (0, 1)"
        )));
    }
    let mut out = iscms.clone();
    let a = Complex64::new(alpha, 0.0);
    for t in 1..iscms.num_frames() {
        let prev = out.data.index_axis(Axis(1), t - 1).to_owned();
        out.data
            .index_axis_mut(Axis(1), t)
            .zip_mut_with(&prev, |cur, p| *cur += a * p);
    }
    Ok(out)
}

/// Mean over the latest `window` frames, shrinking the window to the frames
/// available at the start of the sequence.
pub fn block_avg(iscms: &ScmSequence, window: usize) -> Result<ScmSequence> {
    if window == 0 {
        return Err(Error::Config(
            "block window must be at least one frame".into(),
        ));
    }
    let mut out = iscms.clone();
    let (bins, _, m, _) = iscms.data.dim();
    let mut acc = Array3::<Complex64>::zeros((bins, m, m));
    for t in 0..iscms.num_frames() {
        acc += &iscms.data.index_axis(Axis(1), t);
        if t >= window {
            acc -= &iscms.data.index_axis(Axis(1), t - window);
        }
        let count = (t + 1).min(window) as f64;
        out.data
            .index_axis_mut(Axis(1), t)
            .assign(&(&acc / Complex64::new(count, 0.0)));
    }
    Ok(out)
}

/// Layout of a vectorized Hermitian matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorizeMode {
    /// Real diagonal followed by row-major `(re, im)` pairs of the strictly
    /// lower triangle: `M²` values.
    #[default]
    Compact,
    /// Row-major real parts followed by row-major imaginary parts: `2 M²`
    /// values.
    Full,
}

impl VectorizeMode {
    pub fn dim(self, m: usize) -> usize {
        match self {
            VectorizeMode::Compact => m + m * (m - 1),
            VectorizeMode::Full => 2 * m * m,
        }
    }
}

fn check_hermitian(mat: ArrayView2<'_, Complex64>) -> Result<()> {
    let (m, n) = mat.dim();
    if m != n {
        return Err(Error::InvalidInput(format!(
            "matrix is {m}x{n}, not square"
        )));
    }
    let scale = mat.iter().map(|z| z.norm()).fold(1.0, f64::max);
    for i in 0..m {
        for j in 0..=i {
            if (mat[[i, j]] - mat[[j, i]].conj()).norm() > HERMITIAN_TOL * scale {
                return Err(Error::InvalidInput(format!(
                    "matrix is not Hermitian at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Compact real representation of a Hermitian matrix.
pub fn compact_hermitian(mat: ArrayView2<'_, Complex64>) -> Result<Vec<f64>> {
    check_hermitian(mat)?;
    let m = mat.nrows();
    let mut out = Vec::with_capacity(VectorizeMode::Compact.dim(m));
    compact_into(mat, &mut out);
    Ok(out)
}

fn compact_into(mat: ArrayView2<'_, Complex64>, out: &mut Vec<f64>) {
    let m = mat.nrows();
    out.extend((0..m).map(|i| mat[[i, i]].re));
    for i in 0..m {
        for j in 0..i {
            out.push(mat[[i, j]].re);
            out.push(mat[[i, j]].im);
        }
    }
}

fn full_into(mat: ArrayView2<'_, Complex64>, out: &mut Vec<f64>) {
    out.extend(mat.iter().map(|z| z.re));
    out.extend(mat.iter().map(|z| z.im));
}

/// Inverse of [`compact_hermitian`].
pub fn expand_hermitian(vec: &[f64], m: usize) -> Result<Array2<Complex64>> {
    let d = VectorizeMode::Compact.dim(m);
    if m == 0 || vec.len() != d {
        return Err(Error::InvalidInput(format!(
            "compact vector of length {} does not describe a {m}x{m} matrix ({d} expected)",
            vec.len()
        )));
    }
    let mut out = Array2::zeros((m, m));
    for i in 0..m {
        out[[i, i]] = Complex64::new(vec[i], 0.0);
    }
    let mut p = m;
    for i in 0..m {
        for j in 0..i {
            let z = Complex64::new(vec[p], vec[p + 1]);
            out[[i, j]] = z;
            out[[j, i]] = z.conj();
            p += 2;
        }
    }
    Ok(out)
}

/// Concatenates the vectorized matrices of all frequencies at frame `t`.
///
/// Compact mode validates Hermitian symmetry; full mode accepts any matrix.
pub fn vectorize_scm(scms: &ScmSequence, t: usize, mode: VectorizeMode) -> Result<Vec<f64>> {
    let m = scms.num_channels();
    let mut out = Vec::with_capacity(scms.num_bins() * mode.dim(m));
    for f in 0..scms.num_bins() {
        let mat = scms.matrix(f, t);
        match mode {
            VectorizeMode::Compact => {
                check_hermitian(mat)?;
                compact_into(mat, &mut out);
            }
            VectorizeMode::Full => full_into(mat, &mut out),
        }
    }
    Ok(out)
}

/// Vectorizes every frame into a `[T, F * D]` matrix.
pub fn vectorize_sequence(scms: &ScmSequence, mode: VectorizeMode) -> Result<Array2<f64>> {
    let width = scms.num_bins() * mode.dim(scms.num_channels());
    let mut out = Array2::zeros((scms.num_frames(), width));
    for t in 0..scms.num_frames() {
        let v = vectorize_scm(scms, t, mode)?;
        out.row_mut(t).assign(&ndarray::ArrayView1::from(&v));
    }
    Ok(out)
}

/// Inverse of [`vectorize_scm`]: `[F, M, M]` matrices.
pub fn devectorize_scm(
    vec: &[f64],
    m: usize,
    bins: usize,
    mode: VectorizeMode,
) -> Result<Array3<Complex64>> {
    let d = mode.dim(m);
    if vec.len() != bins * d {
        return Err(Error::InvalidInput(format!(
            "vector of length {} does not hold {bins} blocks of {d}",
            vec.len()
        )));
    }
    let mut out = Array3::zeros((bins, m, m));
    for f in 0..bins {
        let chunk = &vec[f * d..(f + 1) * d];
        let mat = match mode {
            VectorizeMode::Compact => expand_hermitian(chunk, m)?,
            VectorizeMode::Full => Array2::from_shape_fn((m, m), |(i, j)| {
                Complex64::new(chunk[i * m + j], chunk[m * m + i * m + j])
            }),
        };
        out.slice_mut(s![f, .., ..]).assign(&mat);
    }
    Ok(out)
}

/// Constant matrices `E_re, E_im` of shape `[D, M²]` with
/// `re(A) = v E_re` and `im(A) = v E_im` for a vectorized block `v`.
pub fn expansion_matrices(m: usize, mode: VectorizeMode) -> (Vec<f64>, Vec<f64>) {
    let d = mode.dim(m);
    let mm = m * m;
    let mut e_re = vec![0.0; d * mm];
    let mut e_im = vec![0.0; d * mm];
    match mode {
        VectorizeMode::Compact => {
            for i in 0..m {
                e_re[i * mm + i * m + i] = 1.0;
            }
            let mut p = m;
            for i in 0..m {
                for j in 0..i {
                    e_re[p * mm + i * m + j] = 1.0;
                    e_re[p * mm + j * m + i] = 1.0;
                    e_im[(p + 1) * mm + i * m + j] = 1.0;
                    e_im[(p + 1) * mm + j * m + i] = -1.0;
                    p += 2;
                }
            }
        }
        VectorizeMode::Full => {
            for k in 0..mm {
                e_re[k * mm + k] = 1.0;
                e_im[(mm + k) * mm + k] = 1.0;
            }
        }
    }
    (e_re, e_im)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar_seq(values: &[f64]) -> ScmSequence {
        let data = Array4::from_shape_fn((1, values.len(), 1, 1), |(_, t, _, _)| c(values[t], 0.0));
        ScmSequence::new(data, ScmKind::Speech).unwrap()
    }

    fn scalars(seq: &ScmSequence) -> Vec<f64> {
        seq.data.iter().map(|z| z.re).collect()
    }

    #[test]
    fn iscm_outer_product() {
        let a = iscm(&[c(1.0, 0.0), c(0.0, 1.0)]);
        assert_eq!(a[[0, 1]], c(0.0, -1.0));
        assert_eq!(a[[1, 0]], c(0.0, 1.0));
        assert_eq!(a[[1, 1]], c(1.0, 0.0));
    }

    #[test]
    fn estimator_examples() {
        assert_eq!(
            scalars(&cum_avg(&scalar_seq(&[1.0, 2.0, 3.0]))),
            [1.0, 1.5, 2.0]
        );
        assert_eq!(
            scalars(&block_avg(&scalar_seq(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap()),
            [1.0, 1.5, 2.5, 3.5]
        );
        assert_eq!(
            scalars(&rec_avg(&scalar_seq(&[1.0, 1.0, 1.0]), 0.5).unwrap()),
            [1.0, 1.5, 1.75]
        );
        assert!(matches!(
            rec_avg(&scalar_seq(&[1.0]), 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            block_avg(&scalar_seq(&[1.0]), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn compact_examples() {
        let id = Array2::from_diag(&ndarray::arr1(&[c(1.0, 0.0), c(1.0, 0.0)]));
        assert_eq!(compact_hermitian(id.view()).unwrap(), [1.0, 1.0, 0.0, 0.0]);
        let a = iscm(&[c(1.0, 0.0), c(0.0, 1.0)]);
        assert_eq!(compact_hermitian(a.view()).unwrap(), [1.0, 1.0, 0.0, 1.0]);
        let e = expand_hermitian(&[0.0, 0.0, 3.0, -4.0], 2).unwrap();
        assert_eq!(e[[0, 1]], c(3.0, 4.0));
        assert_eq!(e[[1, 0]], c(3.0, -4.0));
        let mut bad = a.clone();
        bad[[0, 1]] = c(5.0, 0.0);
        assert!(matches!(
            compact_hermitian(bad.view()),
            Err(Error::InvalidInput(_))
        ));
        assert!(expand_hermitian(&[1.0; 5], 2).is_err());
    }

    #[test]
    fn expansion_matrices_reproduce_devectorize() {
        for mode in [VectorizeMode::Compact, VectorizeMode::Full] {
            let m = 3;
            let d = mode.dim(m);
            let v: Vec<f64> = (0..d).map(|i| (i as f64 * 0.7).sin()).collect();
            let mat = devectorize_scm(&v, m, 1, mode).unwrap();
            let (er, ei) = expansion_matrices(m, mode);
            for k in 0..m * m {
                let re: f64 = (0..d).map(|p| v[p] * er[p * m * m + k]).sum();
                let im: f64 = (0..d).map(|p| v[p] * ei[p * m * m + k]).sum();
                let z = mat[[0, k / m, k % m]];
                assert!((z.re - re).abs() < 1e-15 && (z.im - im).abs() < 1e-15);
            }
        }
    }
}
