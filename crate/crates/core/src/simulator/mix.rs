//! Mixing reverberant speech with noise at a target SNR.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::wav::read_wav;

/// Noise gain `g` such that the reference-channel SNR equals `snr_db`.
pub fn snr_gain(
    speech: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    snr_db: f64,
    ref_ch: usize,
) -> Result<f64> {
    if speech.dim() != noise.dim() {
        return Err(Error::InvalidInput(format!(
            "speech {:?} and noise {:?} shapes differ",
            speech.dim(),
            noise.dim()
        )));
    }
    if ref_ch >= speech.nrows() {
        return Err(Error::InvalidInput(format!(
            "reference channel {ref_ch} out of range"
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidInput("snr_db must be finite".into()));
    }
    let ps: f64 = speech.row(ref_ch).iter().map(|v| v * v).sum();
    let pn: f64 = noise.row(ref_ch).iter().map(|v| v * v).sum();
    if !(ps > 0.0) || !(pn > 0.0) {
        return Err(Error::InvalidInput(
            "speech and noise need nonzero reference energy".into(),
        ));
    }
    Ok((ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `speech + g * noise` with `g` from [`snr_gain`], and the scaled noise.
pub fn mix_at_snr(
    speech: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    snr_db: f64,
    ref_ch: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let g = snr_gain(speech, noise, snr_db, ref_ch)?;
    let scaled = noise.mapv(|v| g * v);
    Ok((&speech + &scaled, scaled))
}

/// Reference-channel SNR in dB.
pub fn measured_snr(speech: ArrayView2<f64>, noise: ArrayView2<f64>, ref_ch: usize) -> f64 {
    let ps: f64 = speech.row(ref_ch).iter().map(|v| v * v).sum();
    let pn: f64 = noise.row(ref_ch).iter().map(|v| v * v).sum();
    10.0 * (ps / pn).log10()
}

/// Multichannel noise from a WAV file, looped to `num_samples` from a
/// seeded offset. The file needs at least `channels` channels.
pub fn noise_from_wav(
    path: &Path,
    channels: usize,
    num_samples: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<Array2<f64>> {
    let audio = read_wav(path)?;
    if audio.sample_rate != sample_rate {
        return Err(Error::InvalidInput(format!(
            "{}: sample rate {} differs from {sample_rate}",
            path.display(),
            audio.sample_rate
        )));
    }
    let (c, n) = audio.samples.dim();
    if c < channels || n == 0 {
        return Err(Error::InvalidInput(format!(
            "{}: need {channels} non-empty channels, found {c}",
            path.display()
        )));
    }
    let offset = (seed % n as u64) as usize;
    let src = audio.samples.slice(s![..channels, ..]);
    Ok(Array2::from_shape_fn((channels, num_samples), |(ch, i)| {
        src[[ch, (offset + i) % n]]
    }))
}
