//! Multichannel WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Decoded audio, `channels x samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Array2<f64>,
    pub sample_rate: u32,
}

/// Reads a WAV file; PCM16 is scaled by 1/32768 into [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    let frames = interleaved.len() / channels;
    let samples = Array2::from_shape_fn((channels, frames), |(c, i)| interleaved[i * channels + c]);
    Ok(Audio {
        samples,
        sample_rate: spec.sample_rate,
    })
}

pub fn write_wav(
    path: impl AsRef<Path>,
    samples: ArrayView2<'_, f64>,
    sample_rate: u32,
    format: WavFormat,
) -> Result<()> {
    let (channels, frames) = samples.dim();
    if channels == 0 || channels > u16::MAX as usize {
        return Err(Error::InvalidInput(format!(
            "cannot write {channels} channels"
        )));
    }
    let spec = WavSpec {
        channels: channels as u16,
        sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for i in 0..frames {
        for c in 0..channels {
            let v = samples[[c, i]];
            match format {
                WavFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                WavFormat::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float32_round_trip_preserves_channel_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let x = Array2::from_shape_fn((3, 10), |(c, i)| c as f64 * 0.25 - i as f64 * 0.01);
        write_wav(&path, x.view(), 16_000, WavFormat::Float32).unwrap();
        let a = read_wav(&path).unwrap();
        assert_eq!(a.sample_rate, 16_000);
        for (p, q) in a.samples.iter().zip(x.iter()) {
            assert!((p - q).abs() < 1e-7);
        }
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let x = Array2::from_shape_vec((1, 3), vec![-1.0, 0.5, 1.0]).unwrap();
        write_wav(&path, x.view(), 16_000, WavFormat::Pcm16).unwrap();
        let a = read_wav(&path).unwrap();
        assert_eq!(a.samples[[0, 0]], -1.0);
        assert_eq!(a.samples[[0, 1]], 0.5);
        assert_eq!(a.samples[[0, 2]], 32767.0 / 32768.0);
    }
}
