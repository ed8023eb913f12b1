//! Spherically isotropic noise fields.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use super::ism::SPEED_OF_SOUND;
use super::scene::Point;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffuseOptions {
    pub num_waves: usize,
    /// Level of independent per-channel noise relative to the diffuse field.
    pub sensor_db: f64,
    pub sample_rate: u32,
}

impl Default for DiffuseOptions {
    fn default() -> Self {
        Self {
            num_waves: 256,
            sensor_db: -30.0,
            sample_rate: 16_000,
        }
    }
}

/// Superposition of far-field plane waves with independent white Gaussian
/// sources from uniformly random directions, plus sensor noise. The output
/// is scaled to unit diffuse power per channel before the sensor noise is
/// added.
pub fn diffuse_noise(
    num_samples: usize,
    mics: &[Point],
    seed: u64,
    opts: &DiffuseOptions,
) -> Result<Array2<f64>> {
    if opts.num_waves == 0 || mics.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one wave and one microphone".into(),
        ));
    }
    let mut out = plane_wave_field(num_samples, mics, seed, opts.num_waves, opts.sample_rate);
    if num_samples == 0 {
        return Ok(out);
    }
    let power = out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64;
    let scale = 1.0 / power.sqrt().max(f64::MIN_POSITIVE);
    out.mapv_inplace(|v| v * scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SENSOR_SALT);
    let sensor = 10f64.powf(opts.sensor_db / 20.0);
    for v in out.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += sensor * e;
    }
    Ok(out)
}

const SENSOR_SALT: u64 = 0x5e45_0a11;

/// Diffuse field of `num_waves` white plane waves observed at `mics`, with
/// expected unit variance per channel.
///
/// Waves are synthesized in the frequency domain: each gets a random
/// complex Gaussian spectrum, delayed per microphone by its projection on
/// the wave direction. Random draws do not depend on the microphones, so
/// the field seen at one position is the same whatever other positions are
/// requested with it.
pub fn plane_wave_field(
    num_samples: usize,
    mics: &[Point],
    seed: u64,
    num_waves: usize,
    sample_rate: u32,
) -> Array2<f64> {
    let n = num_samples;
    let m = mics.len();
    let mut out = Array2::zeros((m, n));
    if n == 0 || m == 0 || num_waves == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = n / 2 + 1;
    let fs = sample_rate as f64;
    let mut spectra = vec![vec![Complex64::default(); bins]; m];
    let mut source = vec![Complex64::default(); bins];
    for _ in 0..num_waves {
        let z: f64 = rng.random_range(-1.0..=1.0);
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let r = (1.0 - z * z).sqrt();
        let dir = [r * phi.cos(), r * phi.sin(), z];
        for s in source.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s = Complex64::new(re, im);
        }
        for (mic, spec) in mics.iter().zip(spectra.iter_mut()) {
            let tau = -(dir[0] * mic[0] + dir[1] * mic[1] + dir[2] * mic[2]) / SPEED_OF_SOUND;
            let step = Complex64::from_polar(1.0, -2.0 * PI * fs / n as f64 * tau);
            let mut phasor = Complex64::new(1.0, 0.0);
            for (acc, s) in spec.iter_mut().zip(&source) {
                *acc += s * phasor;
                phasor *= step;
            }
        }
    }
    let mut planner = FftPlanner::new();
    let inv = planner.plan_fft_inverse(n);
    let mut buf = vec![Complex64::default(); n];
    // each wave contributes variance 2 / n after the unnormalized inverse
    let scale = (n as f64 / (2.0 * num_waves as f64)).sqrt() / n as f64;
    for (c, spec) in spectra.iter().enumerate() {
        buf.iter_mut().for_each(|b| *b = Complex64::default());
        for k in 0..bins {
            let mut z = spec[k];
            if k == 0 || 2 * k == n {
                z.im = 0.0;
            }
            buf[k] = z;
            if k != 0 && 2 * k != n {
                buf[n - k] = z.conj();
            }
        }
        inv.process(&mut buf);
        for i in 0..n {
            out[[c, i]] = buf[i].re * scale;
        }
    }
    out
}

/// Magnitude-squared coherence of two signals by Welch averaging with
/// Hann-windowed, half-overlapping segments of `nfft` samples.
pub fn coherence(a: &[f64], b: &[f64], nfft: usize) -> Vec<f64> {
    let hop = nfft / 2;
    let window: Vec<f64> = (0..nfft)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / nfft as f64).cos())
        .collect();
    let bins = nfft / 2 + 1;
    let mut saa = vec![0.0; bins];
    let mut sbb = vec![0.0; bins];
    let mut sab = vec![Complex64::default(); bins];
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let mut fa = vec![Complex64::default(); nfft];
    let mut fb = vec![Complex64::default(); nfft];
    let mut start = 0;
    while start + nfft <= a.len().min(b.len()) {
        for i in 0..nfft {
            fa[i] = Complex64::new(a[start + i] * window[i], 0.0);
            fb[i] = Complex64::new(b[start + i] * window[i], 0.0);
        }
        fwd.process(&mut fa);
        fwd.process(&mut fb);
        for k in 0..bins {
            saa[k] += fa[k].norm_sqr();
            sbb[k] += fb[k].norm_sqr();
            sab[k] += fa[k] * fb[k].conj();
        }
        start += hop;
    }
    (0..bins)
        .map(|k| sab[k].norm_sqr() / (saa[k] * sbb[k]).max(f64::MIN_POSITIVE))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let mics = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        let opts = DiffuseOptions {
            num_waves: 32,
            ..DiffuseOptions::default()
        };
        let a = diffuse_noise(4000, &mics, 9, &opts).unwrap();
        let b = diffuse_noise(4000, &mics, 9, &opts).unwrap();
        assert_eq!(a, b);
        let p = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        assert!((p - 1.001).abs() < 0.01);
    }

    #[test]
    fn field_at_a_mic_ignores_other_mics() {
        let a = plane_wave_field(1000, &[[0.0, 0.0, 1.0]], 4, 16, 16_000);
        let b = plane_wave_field(1000, &[[0.3, 0.0, 1.0], [0.0, 0.0, 1.0]], 4, 16, 16_000);
        assert_eq!(a.row(0), b.row(1));
        let big = plane_wave_field(20_000, &[[0.0, 0.0, 0.0]], 1, 64, 16_000);
        let var = big.iter().map(|v| v * v).sum::<f64>() / 20_000.0;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn coincident_mics_are_coherent() {
        let x: Vec<f64> = (0..8192)
            .map(|i| ((i * 7919) % 101) as f64 - 50.0)
            .collect();
        let c = coherence(&x, &x, 256);
        assert!(c.iter().skip(1).all(|v| (v - 1.0).abs() < 1e-9));
    }
}
