//! Speech-like dry source signals.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::wav::read_wav;

/// Formant centres (Hz) of a few vowel-like spectral envelopes.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
];

fn formant_gain(freq: f64, formants: &[f64; 3]) -> f64 {
    formants
        .iter()
        .map(|&fc| {
            let bw = 80.0 + 0.08 * fc;
            1.0 / (1.0 + ((freq - fc) / bw).powi(2))
        })
        .sum::<f64>()
        + 0.02
}

/// Speech-like test signal: syllables made of amplitude-modulated harmonic
/// complexes with a gliding pitch and vowel-like envelope, occasional
/// noise bursts, and silent pauses. Peak normalized to 0.5.
pub fn synthetic_speech(num_samples: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;
    let mut out = vec![0.0; num_samples];
    let base_f0: f64 = rng.random_range(100.0..220.0);
    let mut pos = (rng.random_range(0.0..0.15) * fs) as usize;
    while pos < num_samples {
        let len = ((rng.random_range(0.12..0.35) * fs) as usize).min(num_samples - pos);
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let f0_start = base_f0 * rng.random_range(0.85..1.2);
        let f0_end = f0_start * rng.random_range(0.8..1.2);
        let level: f64 = rng.random_range(0.4..1.0);
        let am_rate: f64 = rng.random_range(3.0..6.0);
        let fricative = rng.random_bool(0.25);
        let mut phase = 0.0;
        for i in 0..len {
            let u = i as f64 / len as f64;
            let env =
                (PI * u).sin().powi(2) * (1.0 + 0.3 * (2.0 * PI * am_rate * i as f64 / fs).sin());
            let f0 = f0_start + (f0_end - f0_start) * u;
            phase += 2.0 * PI * f0 / fs;
            let mut v = 0.0;
            let mut k = 1;
            while k as f64 * f0 < nyquist * 0.95 && k <= 40 {
                v += formant_gain(k as f64 * f0, &vowel) * (k as f64 * phase).sin()
                    / (k as f64).sqrt();
                k += 1;
            }
            if fricative && u < 0.3 {
                let e: f64 = rng.sample(StandardNormal);
                v += 0.5 * e * (1.0 - u / 0.3);
            }
            out[pos + i] += level * env * v;
        }
        pos += len + (rng.random_range(0.03..0.3) * fs) as usize;
    }
    let peak = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// First channel of a mono or multichannel WAV, looped or cropped to
/// `num_samples`, starting at a seeded offset.
pub fn speech_from_wav(
    path: &Path,
    num_samples: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<f64>> {
    let audio = read_wav(path)?;
    if audio.sample_rate != sample_rate {
        return Err(Error::InvalidInput(format!(
            "{}: sample rate {} differs from {sample_rate}",
            path.display(),
            audio.sample_rate
        )));
    }
    let src = audio.samples.row(0);
    if src.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: empty file",
            path.display()
        )));
    }
    let offset = if src.len() > num_samples {
        (seed % (src.len() - num_samples + 1) as u64) as usize
    } else {
        0
    };
    Ok((0..num_samples)
        .map(|i| src[(offset + i) % src.len()])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_bounded_and_with_pauses() {
        let a = synthetic_speech(32_000, 16_000, 3);
        assert_eq!(a, synthetic_speech(32_000, 16_000, 3));
        assert_ne!(a, synthetic_speech(32_000, 16_000, 4));
        let peak = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5).abs() < 1e-12);
        let silent = a
            .chunks(160)
            .filter(|c| c.iter().all(|v| v.abs() < 1e-3))
            .count();
        assert!(silent > 0);
    }
}
