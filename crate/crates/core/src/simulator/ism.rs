//! Shoebox image-source room impulse responses.

use std::f64::consts::PI;

use super::noise::plane_wave_field;
use super::scene::{Point, RoomSpec};
use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Cap on the number of reflections along each axis.
pub const MAX_ORDER_CAP: usize = 20;
/// Expected decay (dB) at which the image set hands over to the diffuse tail.
pub const DEFAULT_TAIL_DB: f64 = 15.0;
/// Plane waves making up the late diffuse field.
pub const TAIL_WAVES: usize = 128;
/// Taps of the windowed-sinc fractional delay used for early images.
pub const SINC_TAPS: usize = 32;
/// Images arriving later than this many seconds after the direct path are
/// rendered with linear interpolation instead of the full sinc kernel.
pub const EARLY_WINDOW_S: f64 = 0.05;

/// How wall reflection coefficients are derived from the target RT60.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsorptionModel {
    #[default]
    Sabine,
    Eyring,
}

/// Pressure reflection coefficient shared by all six surfaces.
pub fn reflection_coefficient(room: &RoomSpec, rt60: f64, model: AbsorptionModel) -> Result<f64> {
    if !(rt60 > 0.0) {
        return Err(Error::Config(format!("rt60 must be positive, got {rt60}")));
    }
    let k = 24.0 * 10f64.ln() / SPEED_OF_SOUND * room.volume() / (room.surface() * rt60);
    let alpha = match model {
        AbsorptionModel::Sabine => k,
        AbsorptionModel::Eyring => 1.0 - (-k).exp(),
    };
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "rt60 {rt60} s is not achievable in a {:.2}x{:.2}x{:.2} m room (absorption {alpha:.3})",
            room.length, room.width, room.height
        )));
    }
    Ok((1.0 - alpha).sqrt())
}

/// Options of [`ism_rir`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsmOptions {
    pub sample_rate: u32,
    /// Maximum number of reflections along each axis; `None` derives it
    /// from the RIR length. `Some(0)` keeps only the direct path.
    pub max_order: Option<usize>,
    /// RIR length in seconds; `None` uses `1.25 * rt60`.
    pub length_s: Option<f64>,
    pub absorption: AbsorptionModel,
    /// Replace images arriving after the expected decay reaches this many dB
    /// by a diffuse plane-wave field decaying at the target RT60.
    /// `None` keeps the pure image set. Ignored when `max_order` is
    /// `Some(0)`.
    pub diffuse_tail_db: Option<f64>,
}

impl Default for IsmOptions {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            max_order: None,
            length_s: None,
            absorption: AbsorptionModel::default(),
            diffuse_tail_db: Some(DEFAULT_TAIL_DB),
        }
    }
}

fn hann_sinc(x: f64, half: f64) -> f64 {
    if x.abs() >= half {
        return 0.0;
    }
    let w = 0.5 + 0.5 * (PI * x / half).cos();
    let s = if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    };
    w * s
}

/// Seed of the late diffuse field: a function of the room only, so every
/// microphone and source position in a room sees one coherent field.
fn tail_seed(room: &RoomSpec) -> u64 {
    [room.length, room.width, room.height, room.rt60]
        .iter()
        .fold(0x9e37_79b9_7f4a_7c15u64, |h, v| {
            (h ^ v.to_bits())
                .wrapping_mul(0x0100_0000_01b3)
                .rotate_left(29)
        })
}

/// Image-source RIR from `src` to `mic`.
///
/// Images in a shoebox with uniform absorption decay more slowly than a
/// diffuse field once grazing paths dominate, so by default the late part
/// is a diffuse plane-wave field under the exact target decay, level-matched
/// to the image energy just before the handover. The field is shared by all
/// positions in the room, which keeps late reverberation spatially coherent
/// across microphones.
pub fn ism_rir(
    room: &RoomSpec,
    src: Point,
    mic: Point,
    rt60: f64,
    opts: &IsmOptions,
) -> Result<Vec<f64>> {
    Ok(ism_rirs(room, src, &[mic], rt60, opts)?.remove(0))
}

/// [`ism_rir`] for several microphones, drawing the late field once.
pub fn ism_rirs(
    room: &RoomSpec,
    src: Point,
    mics: &[Point],
    rt60: f64,
    opts: &IsmOptions,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(mics.len());
    let mut starts = Vec::with_capacity(mics.len());
    for &mic in mics {
        let (rir, start) = image_rir(room, src, mic, rt60, opts)?;
        out.push(rir);
        starts.push(start);
    }
    if starts.iter().any(Option::is_some) {
        let len = out[0].len();
        let field = plane_wave_field(len, mics, tail_seed(room), TAIL_WAVES, opts.sample_rate);
        for ((rir, start), row) in out.iter_mut().zip(&starts).zip(field.rows()) {
            if let Some(start) = *start {
                add_diffuse_tail(rir, start, rt60, opts.sample_rate as f64, &row.to_vec());
            }
        }
    }
    Ok(out)
}

/// Image part of the RIR and the sample where the diffuse tail takes over.
fn image_rir(
    room: &RoomSpec,
    src: Point,
    mic: Point,
    rt60: f64,
    opts: &IsmOptions,
) -> Result<(Vec<f64>, Option<usize>)> {
    if !room.contains(src) || !room.contains(mic) {
        return Err(Error::Geometry(
            "source and microphone must lie inside the room".into(),
        ));
    }
    let beta = reflection_coefficient(room, rt60, opts.absorption)?;
    let fs = opts.sample_rate as f64;
    let length_s = opts.length_s.unwrap_or(1.25 * rt60);
    let len = ((length_s * fs).ceil() as usize).max(1);
    let half = SINC_TAPS as f64 / 2.0;
    let dims = room.dims();
    let direct = {
        let d: f64 = (0..3)
            .map(|k| (src[k] - mic[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        d / SPEED_OF_SOUND * fs
    };
    let early_limit = direct + EARLY_WINDOW_S * fs;
    let tail_start = match opts.diffuse_tail_db {
        Some(db) if opts.max_order != Some(0) => {
            Some(((direct + db / 60.0 * rt60 * fs).ceil() as usize).min(len))
        }
        _ => None,
    };
    // images beyond the handover are not needed
    let image_len = tail_start.unwrap_or(len);
    let max_dist = image_len as f64 / fs * SPEED_OF_SOUND;
    let orders: [i64; 3] = std::array::from_fn(|k| {
        let natural = (max_dist / dims[k]).ceil() as usize + 1;
        opts.max_order.unwrap_or(natural).min(MAX_ORDER_CAP) as i64
    });

    let mut rir = vec![0.0; len];
    // Image coordinate along one axis is (1 - 2q) s + 2 n L after
    // |n - q| + |n| reflections.
    let axis = |k: usize| -> Vec<(f64, usize)> {
        let limit = orders[k];
        let n_max = limit / 2 + 1;
        let mut v = Vec::new();
        for n in -n_max..=n_max {
            for q in 0..2i64 {
                let reflections = ((n - q).abs() + n.abs()) as usize;
                if reflections as i64 > limit {
                    continue;
                }
                let pos = (1 - 2 * q) as f64 * src[k] + 2.0 * n as f64 * dims[k];
                v.push((pos - mic[k], reflections));
            }
        }
        v
    };
    let max_total = orders.iter().sum::<i64>() as usize;
    let beta_pow: Vec<f64> = (0..=max_total).map(|r| beta.powi(r as i32)).collect();
    let (ax, ay, az) = (axis(0), axis(1), axis(2));
    for &(dx, rx) in &ax {
        for &(dy, ry) in &ay {
            let dxy = dx * dx + dy * dy;
            if dxy.sqrt() > max_dist + half / fs * SPEED_OF_SOUND {
                continue;
            }
            for &(dz, rz) in &az {
                let d = (dxy + dz * dz).sqrt();
                let delay = d / SPEED_OF_SOUND * fs;
                if delay >= image_len as f64 + half {
                    continue;
                }
                let gain = beta_pow[rx + ry + rz] / (4.0 * PI * d);
                if delay <= early_limit {
                    let lo = (delay - half).ceil().max(0.0) as usize;
                    let hi = ((delay + half).floor() as usize).min(image_len.max(1) - 1);
                    for (n, tap) in rir.iter_mut().enumerate().take(hi + 1).skip(lo) {
                        *tap += gain * hann_sinc(n as f64 - delay, half);
                    }
                } else {
                    let n = delay.floor() as usize;
                    let frac = delay - n as f64;
                    if n < image_len {
                        rir[n] += gain * (1.0 - frac);
                    }
                    if n + 1 < image_len {
                        rir[n + 1] += gain * frac;
                    }
                }
            }
        }
    }
    Ok((rir, tail_start))
}

/// Fills `rir[start..]` with the unit-variance `field` under a 60 dB per
/// `rt60` envelope whose level matches the energy of the preceding 20 ms.
fn add_diffuse_tail(rir: &mut [f64], start: usize, rt60: f64, fs: f64, field: &[f64]) {
    let len = rir.len();
    if start == 0 || start >= len {
        return;
    }
    let decay = |k: f64| 10f64.powf(-3.0 * k / (rt60 * fs));
    let w = ((0.02 * fs) as usize).clamp(1, start);
    let window_energy: f64 = rir[start - w..start].iter().map(|v| v * v).sum();
    let envelope_energy: f64 = (1..=w).map(|k| decay(-(k as f64)).powi(2)).sum();
    let level = (window_energy / envelope_energy).sqrt();
    for (k, (tap, e)) in rir[start..].iter_mut().zip(&field[start..]).enumerate() {
        *tap = level * decay(k as f64) * e;
    }
}

/// Schroeder energy decay curve in dB, normalized to 0 dB at the start.
pub fn energy_decay_db(rir: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc = vec![0.0; rir.len()];
    for (i, v) in rir.iter().enumerate().rev() {
        acc += v * v;
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    edc.iter()
        .map(|e| 10.0 * (e.max(f64::MIN_POSITIVE) / total).log10())
        .collect()
}

/// Reverberation time from a least-squares line through the decay between
/// -5 dB and -35 dB, extrapolated to -60 dB.
pub fn measure_rt60(rir: &[f64], sample_rate: u32) -> Option<f64> {
    let edc = energy_decay_db(rir);
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &db) in edc.iter().enumerate() {
        if (-35.0..=-5.0).contains(&db) {
            let x = i as f64 / sample_rate as f64;
            n += 1.0;
            sx += x;
            sy += db;
            sxx += x * x;
            sxy += x * db;
        }
    }
    if n < 2.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope < 0.0).then(|| -60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room() -> RoomSpec {
        RoomSpec {
            length: 6.0,
            width: 5.0,
            height: 3.0,
            rt60: 0.4,
        }
    }

    #[test]
    fn direct_path_only() {
        let opts = IsmOptions {
            max_order: Some(0),
            ..IsmOptions::default()
        };
        // 343 m/s * 0.01 s = 3.43 m: an integer delay of 160 samples
        let src = [1.0, 1.0, 1.5];
        let mic = [4.43, 1.0, 1.5];
        let rir = ism_rir(&room(), src, mic, 0.4, &opts).unwrap();
        let peak = rir
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        assert_eq!(peak.0, 160);
        assert!((peak.1 - 1.0 / (4.0 * PI * 3.43)).abs() < 1e-12);
    }

    #[test]
    fn unachievable_rt60() {
        let r = room();
        assert!(matches!(
            reflection_coefficient(&r, 0.01, AbsorptionModel::Sabine),
            Err(Error::Config(_))
        ));
        assert!(ism_rir(
            &r,
            [7.0, 1.0, 1.0],
            [1.0, 1.0, 1.0],
            0.4,
            &IsmOptions::default()
        )
        .is_err());
    }

    #[test]
    fn image_reflection_counts() {
        // First-order image across x = 0 arrives after 2 * x_src extra path.
        let opts = IsmOptions {
            max_order: Some(1),
            length_s: Some(0.05),
            ..IsmOptions::default()
        };
        let r = RoomSpec {
            length: 40.0,
            width: 40.0,
            height: 40.0,
            rt60: 5.0,
        };
        let rir = ism_rir(&r, [1.0, 20.0, 20.0], [4.43, 20.0, 20.0], 5.0, &opts).unwrap();
        // mirror source at x = -1: distance 5.43 m -> 253.3 samples
        let d = 5.43;
        let beta = reflection_coefficient(&r, 5.0, AbsorptionModel::default()).unwrap();
        let n = (d / SPEED_OF_SOUND * 16_000.0).round() as usize;
        let around: f64 = rir[n - 16..n + 16].iter().sum();
        assert!((around - beta / (4.0 * PI * d)).abs() < 0.05 * beta / (4.0 * PI * d));
    }
}
