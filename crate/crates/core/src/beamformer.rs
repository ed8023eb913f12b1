//! Spatial filters and their application to multichannel spectrograms.

use ndarray::{s, Array3, Array4, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::covariance::{ScmSequence, HERMITIAN_TOL};
use crate::error::{Error, Result};
use crate::linalg;
use crate::stft::Spectrogram;

/// Relative diagonal loading applied to noise SCMs before inversion.
pub const DEFAULT_LOADING: f64 = 1e-6;
/// Absolute floor added to `tr(Φ_nn) / M` when computing the loading.
pub const LOADING_FLOOR: f64 = 1e-10;
/// Traces below this magnitude yield the pass-through filter.
pub const TRACE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceSelector {
    pub index: usize,
    pub num_channels: usize,
}

impl ReferenceSelector {
    pub fn new(index: usize, num_channels: usize) -> Result<Self> {
        if index >= num_channels {
            return Err(Error::InvalidInput(format!(
                "reference channel {index} out of range for {num_channels} channels"
            )));
        }
        Ok(Self {
            index,
            num_channels,
        })
    }

    pub fn first(num_channels: usize) -> Self {
        Self {
            index: 0,
            num_channels,
        }
    }

    pub fn one_hot(&self) -> Vec<Complex64> {
        (0..self.num_channels)
            .map(|m| Complex64::new(if m == self.index { 1.0 } else { 0.0 }, 0.0))
            .collect()
    }
}

/// Filter weights indexed `(frequency, frame, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterField {
    pub h: Array3<Complex64>,
}

impl FilterField {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.h.dim()
    }

    /// `u_ref` at every bin.
    pub fn pass_through(bins: usize, frames: usize, reference: ReferenceSelector) -> Self {
        let mut h = Array3::zeros((bins, frames, reference.num_channels));
        h.slice_mut(s![.., .., reference.index])
            .fill(Complex64::new(1.0, 0.0));
        Self { h }
    }
}

/// Diagonal loading for a noise SCM with trace `trace` and `m` channels.
pub fn loading_amount(trace: f64, m: usize, epsilon: f64) -> f64 {
    epsilon * (trace / m as f64 + LOADING_FLOOR)
}

/// MVDR weights for one bin: `(Φ_nn + δI)⁻¹ Φ_xx u_ref / tr(...)`.
pub fn mvdr_bin(
    phi_xx: &[Complex64],
    phi_nn: &[Complex64],
    m: usize,
    reference: usize,
    epsilon: f64,
) -> Result<Vec<Complex64>> {
    let trace_nn: f64 = (0..m).map(|i| phi_nn[i * m + i].re).sum();
    let delta = loading_amount(trace_nn, m, epsilon);
    let mut loaded = phi_nn.to_vec();
    for i in 0..m {
        loaded[i * m + i] += delta;
    }
    let num = linalg::solve(&loaded, m, phi_xx, m)?;
    let trace: Complex64 = (0..m).map(|i| num[i * m + i]).sum();
    if trace.norm() < TRACE_EPS || !trace.is_finite() {
        let mut h = vec![Complex64::default(); m];
        h[reference] = Complex64::new(1.0, 0.0);
        return Ok(h);
    }
    Ok((0..m).map(|i| num[i * m + reference] / trace).collect())
}

fn check_pair(a: &ScmSequence, b: &ScmSequence) -> Result<()> {
    if a.data.dim() != b.data.dim() {
        return Err(Error::InvalidInput(format!(
            "SCM sequences differ in shape: {:?} vs {:?}",
            a.data.dim(),
            b.data.dim()
        )));
    }
    Ok(())
}

/// MVDR filter at every bin with relative diagonal loading `epsilon`.
pub fn mvdr(
    phi_xx: &ScmSequence,
    phi_nn: &ScmSequence,
    reference: ReferenceSelector,
    epsilon: f64,
) -> Result<FilterField> {
    check_pair(phi_xx, phi_nn)?;
    let (bins, frames, m, _) = phi_xx.data.dim();
    if reference.num_channels != m {
        return Err(Error::InvalidInput(format!(
            "reference selector has {} channels, SCMs have {m}",
            reference.num_channels
        )));
    }
    let scale = phi_nn.data.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if phi_nn.max_asymmetry() > HERMITIAN_TOL * scale {
        return Err(Error::InvalidInput("noise SCM is not Hermitian".into()));
    }
    let rows: Vec<Vec<Vec<Complex64>>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            (0..frames)
                .map(|t| {
                    let xx: Vec<Complex64> = phi_xx.matrix(f, t).iter().copied().collect();
                    let nn: Vec<Complex64> = phi_nn.matrix(f, t).iter().copied().collect();
                    mvdr_bin(&xx, &nn, m, reference.index, epsilon)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut h = Array3::zeros((bins, frames, m));
    for (f, row) in rows.into_iter().enumerate() {
        for (t, w) in row.into_iter().enumerate() {
            for (i, v) in w.into_iter().enumerate() {
                h[[f, t, i]] = v;
            }
        }
    }
    Ok(FilterField { h })
}

/// `h = A_xx · A_nn · u_ref` at every bin, without normalization.
pub fn ic_mvdr(
    a_xx: &Array4<Complex64>,
    a_nn: &Array4<Complex64>,
    reference: ReferenceSelector,
) -> Result<FilterField> {
    if a_xx.dim() != a_nn.dim() {
        return Err(Error::InvalidInput(format!(
            "factor shapes differ: {:?} vs {:?}",
            a_xx.dim(),
            a_nn.dim()
        )));
    }
    let (bins, frames, m, _) = a_xx.dim();
    let r = reference.index;
    let mut h = Array3::zeros((bins, frames, m));
    for f in 0..bins {
        for t in 0..frames {
            for i in 0..m {
                h[[f, t, i]] = (0..m)
                    .map(|p| a_xx[[f, t, i, p]] * a_nn[[f, t, p, r]])
                    .sum();
            }
        }
    }
    Ok(FilterField { h })
}

/// `Z(f, t) = hᴴ(f, t) y(f, t)` as a one-channel spectrogram.
pub fn apply_filter(mixture: &Spectrogram, filter: &FilterField) -> Result<Spectrogram> {
    let (m, bins, frames) = mixture.data.dim();
    if filter.dim() != (bins, frames, m) {
        return Err(Error::InvalidInput(format!(
            "filter {:?} does not match mixture ({bins}, {frames}, {m})",
            filter.dim()
        )));
    }
    let mut data = Array3::zeros((1, bins, frames));
    for f in 0..bins {
        for t in 0..frames {
            data[[0, f, t]] = (0..m)
                .map(|c| filter.h[[f, t, c]].conj() * mixture.data[[c, f, t]])
                .sum();
        }
    }
    Ok(Spectrogram {
        data,
        config: mixture.config,
        num_samples: mixture.num_samples,
    })
}

/// Channel `m` of a filter field as an `(F, T)` view, for inspection dumps.
pub fn filter_channel(filter: &FilterField, m: usize) -> ndarray::Array2<Complex64> {
    filter.h.index_axis(Axis(2), m).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::ScmKind;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn seq(mat: &[Complex64], m: usize, kind: ScmKind) -> ScmSequence {
        let data = Array4::from_shape_vec((1, 1, m, m), mat.to_vec()).unwrap();
        ScmSequence::new(data, kind).unwrap()
    }

    #[test]
    fn single_channel_is_identity() {
        let h = mvdr(
            &seq(&[c(3.0, 0.0)], 1, ScmKind::Speech),
            &seq(&[c(0.2, 0.0)], 1, ScmKind::Noise),
            ReferenceSelector::first(1),
            DEFAULT_LOADING,
        )
        .unwrap();
        assert!((h.h[[0, 0, 0]] - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn white_noise_rank_one_speech() {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        let h = mvdr(
            &seq(&[one, one, one, one], 2, ScmKind::Speech),
            &seq(&[one, zero, zero, one], 2, ScmKind::Noise),
            ReferenceSelector::first(2),
            DEFAULT_LOADING,
        )
        .unwrap();
        assert!((h.h[[0, 0, 0]] - c(0.5, 0.0)).norm() < 1e-9);
        assert!((h.h[[0, 0, 1]] - c(0.5, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn silent_bins_pass_through() {
        let z = c(0.0, 0.0);
        let h = mvdr(
            &seq(&[z; 4], 2, ScmKind::Speech),
            &seq(&[z; 4], 2, ScmKind::Noise),
            ReferenceSelector::new(1, 2).unwrap(),
            DEFAULT_LOADING,
        )
        .unwrap();
        assert_eq!(h.h[[0, 0, 0]], z);
        assert_eq!(h.h[[0, 0, 1]], c(1.0, 0.0));
    }

    #[test]
    fn non_hermitian_noise_rejected() {
        let one = c(1.0, 0.0);
        let z = c(0.0, 0.0);
        let r = mvdr(
            &seq(&[one, z, z, one], 2, ScmKind::Speech),
            &seq(&[one, c(2.0, 0.0), z, one], 2, ScmKind::Noise),
            ReferenceSelector::first(2),
            DEFAULT_LOADING,
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn ic_mvdr_examples() {
        let id = Array4::from_shape_fn((1, 2, 3, 3), |(_, _, i, j)| {
            c(if i == j { 1.0 } else { 0.0 }, 0.0)
        });
        let r = ReferenceSelector::new(2, 3).unwrap();
        let h = ic_mvdr(&id, &id, r).unwrap();
        assert_eq!(h, FilterField::pass_through(1, 2, r));
        let scaled = id.mapv(|z| z * 2.5);
        let h2 = ic_mvdr(&scaled, &id, r).unwrap();
        assert_eq!(h2.h[[0, 1, 2]], c(2.5, 0.0));
    }
}
