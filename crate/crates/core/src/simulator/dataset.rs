//! Utterance rendering and on-disk datasets with a JSON-lines manifest.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ism::IsmOptions;
use super::mix::{mix_at_snr, noise_from_wav};
use super::noise::{diffuse_noise, DiffuseOptions};
use super::render::render_moving_source;
use super::scene::{sample_scenario, Scenario, SceneRanges};
use super::speech::{speech_from_wav, synthetic_speech};
use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav, WavFormat};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

const SPEECH_SALT: u64 = 0x7370_6565_6368;
const NOISE_SALT: u64 = 0x6e6f_6973_65;

/// Everything that shapes a rendered utterance besides its seed.
#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct SimConfig {
    pub ranges: SceneRanges,
    pub ism: IsmOptions,
    pub noise: DiffuseOptions,
    /// Multichannel noise recording used instead of the synthetic field.
    pub noise_file: Option<PathBuf>,
    /// Dry speech recordings, chosen per utterance by seed; empty selects
    /// synthetic speech.
    pub speech_files: Vec<PathBuf>,
    pub reference: usize,
}


/// A rendered scene: `mixture = speech + noise` on every channel, with
/// `speech` the reverberant image and `noise` already scaled to the SNR.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub scenario: Scenario,
    pub mixture: Array2<f64>,
    pub speech: Array2<f64>,
    pub noise: Array2<f64>,
}

pub fn dry_signal(seed: u64, num_samples: usize, cfg: &SimConfig) -> Result<Vec<f64>> {
    let fs = cfg.ism.sample_rate;
    let s = seed ^ SPEECH_SALT;
    if cfg.speech_files.is_empty() {
        Ok(synthetic_speech(num_samples, fs, s))
    } else {
        let path = &cfg.speech_files[(seed % cfg.speech_files.len() as u64) as usize];
        speech_from_wav(path, num_samples, fs, s)
    }
}

/// Renders the utterance of `seed`. Static and dynamic renderings of one
/// seed share room, array, dry signal and noise.
pub fn render_utterance(seed: u64, dynamic: bool, cfg: &SimConfig) -> Result<Utterance> {
    let scenario = sample_scenario(seed, dynamic, &cfg.ranges)?;
    let fs = cfg.ism.sample_rate;
    let n = (scenario.duration_s * fs as f64).round() as usize;
    let dry = dry_signal(seed, n, cfg)?;
    let speech = render_moving_source(&dry, &scenario, &cfg.ism)?;
    let mics = scenario.array.mic_positions();
    let noise = match &cfg.noise_file {
        Some(path) => noise_from_wav(path, mics.len(), n, fs, seed ^ NOISE_SALT)?,
        None => {
            let opts = DiffuseOptions {
                sample_rate: fs,
                ..cfg.noise
            };
            diffuse_noise(n, &mics, seed ^ NOISE_SALT, &opts)?
        }
    };
    let (mixture, noise) = mix_at_snr(speech.view(), noise.view(), scenario.snr_db, cfg.reference)?;
    Ok(Utterance {
        scenario,
        mixture,
        speech,
        noise,
    })
}

/// One line of the manifest. Paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub mixture: String,
    pub speech: String,
    pub noise: String,
    pub seed: u64,
    pub snr_db: f64,
    pub dynamic: bool,
    pub num_samples: usize,
    pub sample_rate: u32,
    pub scenario: Scenario,
}

/// A manifest loaded from disk.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

/// Loaded signals of one record.
#[derive(Debug, Clone)]
pub struct LoadedUtterance {
    pub mixture: Array2<f64>,
    /// Reverberant speech on all channels.
    pub speech: Array2<f64>,
    pub sample_rate: u32,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, records })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn load(&self, index: usize) -> Result<LoadedUtterance> {
        let rec = self
            .records
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("no record {index}")))?;
        let mix = read_wav(self.resolve(&rec.mixture))?;
        let speech = read_wav(self.resolve(&rec.speech))?;
        if mix.samples.dim() != speech.samples.dim() || mix.sample_rate != speech.sample_rate {
            return Err(Error::InvalidInput(format!(
                "record {}: mixture and speech files disagree in shape or rate",
                rec.id
            )));
        }
        Ok(LoadedUtterance {
            mixture: mix.samples,
            speech: speech.samples,
            sample_rate: mix.sample_rate,
        })
    }
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Renders `count` utterances with seeds `master_seed ^ i` into `out_dir`,
/// writing float32 WAVs under `wav/` and the manifest. Records keep index
/// order regardless of scheduling.
pub fn generate_dataset(
    out_dir: impl AsRef<Path>,
    count: usize,
    dynamic: bool,
    master_seed: u64,
    cfg: &SimConfig,
) -> Result<Vec<ManifestRecord>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("wav"))?;
    let fs_rate = cfg.ism.sample_rate;
    let records = (0..count)
        .into_par_iter()
        .map(|i| -> Result<ManifestRecord> {
            let seed = master_seed ^ i as u64;
            let utt = render_utterance(seed, dynamic, cfg)?;
            let id = format!("utt{i:05}");
            let rel = |kind: &str| format!("wav/{id}_{kind}.wav");
            let write = |kind: &str, x: &Array2<f64>| {
                write_wav(
                    out_dir.join(rel(kind)),
                    x.view(),
                    fs_rate,
                    WavFormat::Float32,
                )
            };
            write("mix", &utt.mixture)?;
            write("speech", &utt.speech)?;
            write("noise", &utt.noise)?;
            Ok(ManifestRecord {
                mixture: rel("mix"),
                speech: rel("speech"),
                noise: rel("noise"),
                id,
                seed,
                snr_db: utt.scenario.snr_db,
                dynamic,
                num_samples: utt.mixture.len_of(Axis(1)),
                sample_rate: fs_rate,
                scenario: utt.scenario,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(out_dir.join(MANIFEST_NAME), &records)?;
    Ok(records)
}
