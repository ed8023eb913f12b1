//! Rendering of static and moving sources through per-position RIRs.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::ism::{ism_rirs, IsmOptions};
use super::scene::Scenario;
use crate::error::Result;

/// Linear convolution truncated to `out_len` samples.
pub fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let full = a.len() + b.len() - 1;
    let n = full.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(n, Complex64::default());
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(n, Complex64::default());
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    let mut out: Vec<f64> = fa
        .iter()
        .take(full.min(out_len))
        .map(|z| z.re * scale)
        .collect();
    out.resize(out_len, 0.0);
    out
}

/// Crossfade control points: times and triangular weights covering
/// `num_samples` samples, one per trajectory waypoint.
pub fn crossfade_weights(
    timestamps: &[f64],
    num_samples: usize,
    sample_rate: u32,
) -> Vec<Vec<f64>> {
    let k = timestamps.len();
    if k <= 1 {
        return vec![vec![1.0; num_samples]];
    }
    let fs = sample_rate as f64;
    let mut w = vec![vec![0.0; num_samples]; k];
    for i in 0..num_samples {
        let t = i as f64 / fs;
        let j = timestamps.partition_point(|&s| s <= t);
        if j == 0 {
            w[0][i] = 1.0;
        } else if j >= k {
            w[k - 1][i] = 1.0;
        } else {
            let (t0, t1) = (timestamps[j - 1], timestamps[j]);
            let a = (t - t0) / (t1 - t0);
            w[j - 1][i] = 1.0 - a;
            w[j][i] = a;
        }
    }
    w
}

/// RIRs `[waypoint][mic]` for every trajectory waypoint.
pub fn scenario_rirs(scenario: &Scenario, opts: &IsmOptions) -> Result<Vec<Vec<Vec<f64>>>> {
    let mics = scenario.array.mic_positions();
    scenario
        .trajectory
        .waypoints
        .par_iter()
        .map(|&src| ism_rirs(&scenario.room, src, &mics, scenario.room.rt60, opts))
        .collect()
}

/// Reverberant multichannel image of `dry` for the scenario's trajectory.
///
/// The signal is split by triangular crossfade weights centred on the
/// waypoints; each part is convolved with its waypoint's RIRs and the
/// results are summed. A single waypoint is one plain convolution.
pub fn render_moving_source(
    dry: &[f64],
    scenario: &Scenario,
    opts: &IsmOptions,
) -> Result<Array2<f64>> {
    let rirs = scenario_rirs(scenario, opts)?;
    Ok(render_with_rirs(
        dry,
        &scenario.trajectory.timestamps,
        &rirs,
        opts.sample_rate,
    ))
}

pub fn render_with_rirs(
    dry: &[f64],
    timestamps: &[f64],
    rirs: &[Vec<Vec<f64>>],
    sample_rate: u32,
) -> Array2<f64> {
    let n = dry.len();
    let mics = rirs.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((mics, n));
    let weights = crossfade_weights(timestamps, n, sample_rate);
    for (w, rir_set) in weights.iter().zip(rirs) {
        let support: Vec<usize> = (0..n).filter(|&i| w[i] != 0.0).collect();
        let (Some(&lo), Some(&hi)) = (support.first(), support.last()) else {
            continue;
        };
        let segment: Vec<f64> = (lo..=hi).map(|i| dry[i] * w[i]).collect();
        let parts: Vec<Vec<f64>> = rir_set
            .par_iter()
            .map(|rir| fft_convolve(&segment, rir, n - lo))
            .collect();
        for (m, part) in parts.iter().enumerate() {
            for (i, v) in part.iter().enumerate() {
                out[[m, lo + i]] += v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct_sum() {
        let a = [1.0, 2.0, -1.0, 0.5];
        let b = [0.5, 0.0, 3.0];
        let c = fft_convolve(&a, &b, 6);
        let mut direct = vec![0.0; 6];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                direct[i + j] += x * y;
            }
        }
        for (p, q) in c.iter().zip(&direct) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(fft_convolve(&a, &b, 2).len(), 2);
    }

    #[test]
    fn crossfade_is_partition_of_unity() {
        let ts = [0.0, 0.25, 0.5, 0.75, 1.0];
        let w = crossfade_weights(&ts, 16_000, 16_000);
        for i in 0..16_000 {
            let total: f64 = w.iter().map(|row| row[i]).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|row| row[i] >= 0.0));
        }
    }
}
