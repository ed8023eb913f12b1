//! Time-frequency masks and their application to every channel.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

/// Floor on the mixture magnitude in the oracle mask denominator.
pub const MASK_EPS: f64 = 1e-12;

/// Real gains in `[0, 1]` indexed `(frequency, frame)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    values: Array2<f64>,
}

impl Mask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("mask values must lie in [0, 1]".into()));
        }
        Ok(Self { values })
    }

    pub fn constant(bins: usize, frames: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((bins, frames), value))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// `1 - mask`.
    pub fn complement(&self) -> Mask {
        Mask {
            values: self.values.mapv(|v| 1.0 - v),
        }
    }
}

/// Ideal amplitude mask `clamp(|X| / max(|Y|, eps), 0, 1)` between channel 0
/// of `clean` and channel `reference` of `mixture`.
pub fn oracle_mask(clean: &Spectrogram, mixture: &Spectrogram, reference: usize) -> Result<Mask> {
    if reference >= mixture.num_channels() {
        return Err(Error::InvalidInput(format!(
            "reference channel {reference} out of range"
        )));
    }
    if !clean.same_grid(mixture) {
        return Err(Error::InvalidInput(format!(
            "clean {:?} and mixture {:?} spectrograms differ in shape",
            clean.data.dim(),
            mixture.data.dim()
        )));
    }
    let (_, bins, frames) = clean.data.dim();
    let values = Array2::from_shape_fn((bins, frames), |(f, t)| {
        let x = clean.data[[0, f, t]].norm();
        let y = mixture.data[[reference, f, t]].norm().max(MASK_EPS);
        (x / y).clamp(0.0, 1.0)
    });
    Ok(Mask { values })
}

pub fn complementary_mask(mask: &Mask) -> Mask {
    mask.complement()
}

/// Scales every channel of `mixture` by `mask`.
pub fn apply_mask(mixture: &Spectrogram, mask: &Mask) -> Result<Spectrogram> {
    let (_, bins, frames) = mixture.data.dim();
    if mask.dim() != (bins, frames) {
        return Err(Error::InvalidInput(format!(
            "mask {:?} does not match spectrogram grid ({bins}, {frames})",
            mask.dim()
        )));
    }
    let mut out = mixture.clone();
    for mut channel in out.data.outer_iter_mut() {
        Zip::from(&mut channel)
            .and(&mask.values)
            .for_each(|z, &g| *z *= g);
    }
    Ok(out)
}

/// Speech and noise estimates obtained from one mask and its complement.
#[derive(Debug, Clone)]
pub struct MaskedPair {
    pub speech_est: Spectrogram,
    pub noise_est: Spectrogram,
}

impl MaskedPair {
    pub fn from_mask(mixture: &Spectrogram, mask: &Mask) -> Result<Self> {
        Ok(Self {
            speech_est: apply_mask(mixture, mask)?,
            noise_est: apply_mask(mixture, &mask.complement())?,
        })
    }
}

/// Source of single-channel speech masks for a mixture.
///
/// The oracle implementation needs the clean reference; a learned
/// estimator would ignore it.
pub trait MaskProvider: Send + Sync {
    /// Speech mask for the mixture. `clean` holds the clean speech at the
    /// reference channel when it is known.
    fn speech_mask(
        &self,
        mixture: &Spectrogram,
        reference: usize,
        clean: Option<&Spectrogram>,
    ) -> Result<Mask>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleMaskProvider;

impl MaskProvider for OracleMaskProvider {
    fn speech_mask(
        &self,
        mixture: &Spectrogram,
        reference: usize,
        clean: Option<&Spectrogram>,
    ) -> Result<Mask> {
        let clean = clean.ok_or_else(|| {
            Error::InvalidInput("oracle masks require the clean reference".into())
        })?;
        oracle_mask(clean, mixture, reference)
    }
}

/// A precomputed mask, e.g. from an external mask estimator.
#[derive(Debug, Clone)]
pub struct FixedMaskProvider(pub Mask);

impl MaskProvider for FixedMaskProvider {
    fn speech_mask(
        &self,
        mixture: &Spectrogram,
        _reference: usize,
        _clean: Option<&Spectrogram>,
    ) -> Result<Mask> {
        let want = (mixture.num_bins(), mixture.num_frames());
        if self.0.dim() != want {
            return Err(Error::InvalidInput(format!(
                "mask is {:?}, mixture grid is {want:?}",
                self.0.dim()
            )));
        }
        Ok(self.0.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use ndarray::Array3;
    use num_complex::Complex64;

    fn spec(values: Vec<Complex64>, m: usize, f: usize, t: usize) -> Spectrogram {
        Spectrogram {
            data: Array3::from_shape_vec((m, f, t), values).unwrap(),
            config: StftConfig::default(),
            num_samples: t * 256,
        }
    }

    #[test]
    fn oracle_mask_ratio_and_bounds() {
        let y = spec(
            vec![
                Complex64::new(0.6, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.1, 0.0),
            ],
            1,
            1,
            3,
        );
        let x = spec(
            vec![
                Complex64::new(0.0, 0.3),
                Complex64::new(0.2, 0.0),
                Complex64::new(0.5, 0.0),
            ],
            1,
            1,
            3,
        );
        let m = oracle_mask(&x, &y, 0).unwrap();
        assert!((m.values()[[0, 0]] - 0.5).abs() < 1e-15);
        assert_eq!(m.values()[[0, 1]], 1.0);
        assert_eq!(m.values()[[0, 2]], 1.0);
    }

    #[test]
    fn masks_are_complementary_and_validated() {
        assert!(Mask::constant(2, 2, 1.5).is_err());
        let m = Mask::constant(2, 3, 0.25).unwrap();
        assert_eq!(complementary_mask(&m), Mask::constant(2, 3, 0.75).unwrap());
        assert_eq!(m.complement().complement(), m);
    }

    #[test]
    fn apply_mask_checks_shape() {
        let y = spec(vec![Complex64::new(1.0, 1.0); 12], 2, 2, 3);
        let bad = Mask::constant(3, 3, 1.0).unwrap();
        assert!(matches!(apply_mask(&y, &bad), Err(Error::InvalidInput(_))));
        let half = Mask::constant(2, 3, 0.5).unwrap();
        let out = apply_mask(&y, &half).unwrap();
        assert!(out.data.iter().all(|z| *z == Complex64::new(0.5, 0.5)));
    }
}
