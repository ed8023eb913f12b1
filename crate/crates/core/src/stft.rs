//! Multichannel STFT analysis and weighted overlap-add synthesis.
//!
//! Signals are zero-padded with `window_len - hop` samples at the front so
//! that frame `t` ends at sample `(t + 1) * hop`; frame `t` therefore only
//! sees samples that have arrived by then. `T = ceil(num_samples / hop)`.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use adsf_autodiff::{BackwardArgs, CVar, Var};
use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub window_kind: WindowKind,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len: 1024,
            hop: 256,
            window_kind: WindowKind::Hann,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn new(window_len: usize, hop: usize, sample_rate: u32) -> Result<Self> {
        let cfg = Self {
            window_len,
            hop,
            window_kind: WindowKind::Hann,
            sample_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.window_len;
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "window length {n} is not a power of two"
            )));
        }
        if self.hop == 0 || !n.is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "hop {} does not divide window length {n}",
                self.hop
            )));
        }
        if self.hop > n / 2 {
            return Err(Error::Config(format!(
                "hop {} exceeds half the window ({n}); overlap-add would not be constant",
                self.hop
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.hop)
    }

    /// Zero padding prepended before framing.
    pub fn pad(&self) -> usize {
        self.window_len - self.hop
    }

    /// Sample range covered by the full `window_len / hop` frames.
    pub fn interior(&self, num_samples: usize) -> Range<usize> {
        let frames = self.num_frames(num_samples);
        let overlap = self.window_len / self.hop;
        let end = (frames + 1).saturating_sub(overlap) * self.hop;
        0..end.min(num_samples)
    }

    /// Periodic window of length `window_len`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_len;
        match self.window_kind {
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    /// Center frequency of bin `f` in Hz.
    pub fn bin_frequency(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate as f64 / self.window_len as f64
    }
}

/// Complex STFT coefficients indexed `(channel, frequency, frame)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    /// Length of the time signal this spectrogram was computed from.
    pub num_samples: usize,
}

impl Spectrogram {
    pub fn zeros(channels: usize, num_samples: usize, config: StftConfig) -> Self {
        let shape = (channels, config.num_bins(), config.num_frames(num_samples));
        Self {
            data: Array3::zeros(shape),
            config,
            num_samples,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn num_bins(&self) -> usize {
        self.data.dim().1
    }

    pub fn num_frames(&self) -> usize {
        self.data.dim().2
    }

    /// Single-channel spectrogram holding channel `m`.
    pub fn channel(&self, m: usize) -> Spectrogram {
        let slice = self.data.slice(ndarray::s![m..m + 1, .., ..]).to_owned();
        Spectrogram {
            data: slice,
            config: self.config,
            num_samples: self.num_samples,
        }
    }

    /// Keeps the first `frames` frames, as if the signal had stopped at
    /// sample `frames * hop`.
    pub fn truncate_frames(&self, frames: usize) -> Spectrogram {
        let frames = frames.min(self.num_frames());
        Spectrogram {
            data: self.data.slice(ndarray::s![.., .., ..frames]).to_owned(),
            config: self.config,
            num_samples: (frames * self.config.hop).min(self.num_samples),
        }
    }

    pub(crate) fn same_grid(&self, other: &Spectrogram) -> bool {
        self.num_bins() == other.num_bins() && self.num_frames() == other.num_frames()
    }
}

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plan(n: usize) -> FftPair {
    let mut planner = FftPlanner::new();
    FftPair {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

/// One-sided STFT of every channel of `signal` (`channels x samples`).
pub fn analyze(signal: ArrayView2<'_, f64>, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let (channels, num_samples) = signal.dim();
    if channels == 0 || num_samples == 0 {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "signal contains non-finite samples".into(),
        ));
    }
    let n = cfg.window_len;
    let pad = cfg.pad();
    let bins = cfg.num_bins();
    let frames = cfg.num_frames(num_samples);
    let window = cfg.window();
    let fft = plan(n);
    let mut data = Array3::zeros((channels, bins, frames));
    let mut buf = vec![Complex64::default(); n];
    for m in 0..channels {
        let x = signal.row(m);
        for t in 0..frames {
            for (i, b) in buf.iter_mut().enumerate() {
                let pos = (t * cfg.hop + i) as isize - pad as isize;
                let v = if pos >= 0 && (pos as usize) < num_samples {
                    x[pos as usize]
                } else {
                    0.0
                };
                *b = Complex64::new(v * window[i], 0.0);
            }
            fft.forward.process(&mut buf);
            for f in 0..bins {
                data[[m, f, t]] = buf[f];
            }
        }
    }
    Ok(Spectrogram {
        data,
        config: *cfg,
        num_samples,
    })
}

/// Sum of squared synthesis windows at each padded sample position.
fn overlap_norm(cfg: &StftConfig, frames: usize, window: &[f64]) -> Vec<f64> {
    let len = (frames.max(1) - 1) * cfg.hop + cfg.window_len;
    let mut den = vec![0.0; len];
    for t in 0..frames {
        for (i, w) in window.iter().enumerate() {
            den[t * cfg.hop + i] += w * w;
        }
    }
    den
}

const NORM_FLOOR: f64 = 1e-10;

/// Inverse of one one-sided frame; imaginary parts at DC and Nyquist are
/// ignored.
fn irfft_frame(fft: &FftPair, half: impl Fn(usize) -> Complex64, n: usize, buf: &mut [Complex64]) {
    let bins = n / 2 + 1;
    for k in 0..bins {
        let mut z = half(k);
        if k == 0 || k == n / 2 {
            z.im = 0.0;
        }
        buf[k] = z;
        if k != 0 && k != n / 2 {
            buf[n - k] = z.conj();
        }
    }
    fft.inverse.process(buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|z| *z *= scale);
}

/// Weighted overlap-add resynthesis of every channel.
pub fn synthesize(spec: &Spectrogram) -> Result<Array2<f64>> {
    let cfg = spec.config;
    cfg.validate()?;
    let (channels, bins, frames) = spec.data.dim();
    if bins != cfg.num_bins() {
        return Err(Error::InvalidInput(format!(
            "spectrogram has {bins} bins, config implies {}",
            cfg.num_bins()
        )));
    }
    let n = cfg.window_len;
    let pad = cfg.pad();
    let window = cfg.window();
    let den = overlap_norm(&cfg, frames, &window);
    let fft = plan(n);
    let mut out = Array2::zeros((channels, spec.num_samples));
    let mut buf = vec![Complex64::default(); n];
    let mut acc = vec![0.0; den.len()];
    for m in 0..channels {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..frames {
            irfft_frame(&fft, |k| spec.data[[m, k, t]], n, &mut buf);
            for i in 0..n {
                acc[t * cfg.hop + i] += buf[i].re * window[i];
            }
        }
        for s in 0..spec.num_samples {
            let j = s + pad;
            if j < acc.len() && den[j] > NORM_FLOOR {
                out[[m, s]] = acc[j] / den[j];
            }
        }
    }
    Ok(out)
}

/// Differentiable single-channel resynthesis.
///
/// `z` holds frame-major coefficients of shape `[T, F]`; the result is the
/// `[num_samples]` time signal produced by [`synthesize`].
pub fn synthesize_var<'t>(z: &CVar<'t>, cfg: &StftConfig, num_samples: usize) -> Result<Var<'t>> {
    cfg.validate()?;
    let shape = z.shape();
    if shape.len() != 2 || shape[1] != cfg.num_bins() {
        return Err(Error::InvalidInput(format!(
            "expected [frames, {}] coefficients, got {shape:?}",
            cfg.num_bins()
        )));
    }
    let frames = shape[0];
    let bins = shape[1];
    let n = cfg.window_len;
    let hop = cfg.hop;
    let pad = cfg.pad();
    let window = cfg.window();
    let den = overlap_norm(cfg, frames, &window);
    let fft = plan(n);

    let (re, im) = (z.re.value(), z.im.value());
    let mut acc = vec![0.0; den.len()];
    let mut buf = vec![Complex64::default(); n];
    for t in 0..frames {
        irfft_frame(
            &fft,
            |k| Complex64::new(re[t * bins + k], im[t * bins + k]),
            n,
            &mut buf,
        );
        for i in 0..n {
            acc[t * hop + i] += buf[i].re * window[i];
        }
    }
    let value: Vec<f64> = (0..num_samples)
        .map(|s| {
            let j = s + pad;
            if j < acc.len() && den[j] > NORM_FLOOR {
                acc[j] / den[j]
            } else {
                0.0
            }
        })
        .collect();

    let backward = Box::new(move |args: &BackwardArgs<'_>| {
        let mut padded = vec![0.0; den.len()];
        for (s, g) in args.grad.iter().enumerate() {
            let j = s + pad;
            if j < den.len() && den[j] > NORM_FLOOR {
                padded[j] = g / den[j];
            }
        }
        let mut g_re = vec![0.0; frames * bins];
        let mut g_im = vec![0.0; frames * bins];
        let mut buf = vec![Complex64::default(); n];
        for t in 0..frames {
            for i in 0..n {
                buf[i] = Complex64::new(padded[t * hop + i] * window[i], 0.0);
            }
            fft.forward.process(&mut buf);
            for k in 0..bins {
                let edge = k == 0 || k == n / 2;
                let c = if edge { 1.0 } else { 2.0 } / n as f64;
                g_re[t * bins + k] = c * buf[k].re;
                g_im[t * bins + k] = if edge { 0.0 } else { c * buf[k].im };
            }
        }
        vec![Some(g_re), Some(g_im)]
    });
    Ok(z.re
        .tape()
        .custom(&[z.re, z.im], value, &[num_samples], backward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn cfg(n: usize, hop: usize) -> StftConfig {
        StftConfig::new(n, hop, 16_000).unwrap()
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            StftConfig::new(1000, 250, 16_000),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            StftConfig::new(1024, 300, 16_000),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            StftConfig::new(1024, 1024, 16_000),
            Err(Error::Config(_))
        ));
        assert!(StftConfig::new(1024, 512, 16_000).is_ok());
    }

    #[test]
    fn frame_count_and_interior() {
        let c = StftConfig::default();
        assert_eq!(c.num_frames(16_000), 63);
        assert_eq!(c.num_frames(1024), 4);
        assert_eq!(c.num_bins(), 513);
        // 63 frames, 4 overlapping per sample: full coverage up to frame 60's end
        assert_eq!(c.interior(16_000), 0..15_360);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        let c = StftConfig::default();
        let empty = Array2::<f64>::zeros((1, 0));
        assert!(matches!(
            analyze(empty.view(), &c),
            Err(Error::InvalidInput(_))
        ));
        let mut x = Array2::<f64>::zeros((2, 2048));
        x[[1, 7]] = f64::NAN;
        assert!(matches!(analyze(x.view(), &c), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn zero_in_zero_out() {
        let c = cfg(64, 16);
        let x = Array2::<f64>::zeros((3, 500));
        let s = analyze(x.view(), &c).unwrap();
        assert!(s.data.iter().all(|z| z.norm() == 0.0));
        let y = synthesize(&s).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        assert_eq!(y.dim(), (3, 500));
    }

    #[test]
    fn hop_half_window_also_reconstructs() {
        let c = cfg(64, 32);
        let x = Array2::from_shape_fn((1, 700), |(_, i)| ((i * 37 % 101) as f64 / 50.0) - 1.0);
        let y = synthesize(&analyze(x.view(), &c).unwrap()).unwrap();
        let r = c.interior(700);
        for i in r {
            assert!((x[[0, i]] - y[[0, i]]).abs() < 1e-12);
        }
    }
}
