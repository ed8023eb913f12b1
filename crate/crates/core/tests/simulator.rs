//! Room simulator: rendering, scene sampling, diffuse noise and mixing.

use adsf_core::simulator::dataset::dry_signal;
use adsf_core::simulator::ism::{ism_rir, ism_rirs, IsmOptions};
use adsf_core::simulator::mix::measured_snr;
use adsf_core::simulator::noise::{coherence, plane_wave_field};
use adsf_core::simulator::render::crossfade_weights;
use adsf_core::simulator::scene::Range;
use adsf_core::simulator::{
    diffuse_noise, render_moving_source, render_utterance, sample_scenario, DiffuseOptions,
    SceneRanges, SimConfig,
};
use proptest::prelude::*;
use std::f64::consts::PI;

/// Direct time-domain convolution truncated to `n` samples.
fn direct_convolve(x: &[f64], h: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            (0..h.len().min(i + 1))
                .map(|k| h[k] * x[i - k])
                .sum()
        })
        .collect()
}

#[test]
fn static_render_is_plain_convolution() {
    let mut ranges = SceneRanges::default();
    ranges.duration_s = Range::new(0.25, 0.25);
    let scenario = sample_scenario(4, false, &ranges).unwrap();
    assert!(scenario.trajectory.is_static());
    let opts = IsmOptions::default();
    let cfg = SimConfig::default();
    let dry = dry_signal(4, 4000, &cfg).unwrap();
    let out = render_moving_source(&dry, &scenario, &opts).unwrap();
    let rirs = ism_rirs(
        &scenario.room,
        scenario.trajectory.waypoints[0],
        &scenario.array.mic_positions(),
        scenario.room.rt60,
        &opts,
    )
    .unwrap();
    for (m, rir) in rirs.iter().enumerate() {
        let want = direct_convolve(&dry, rir, 4000);
        let scale = want.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in out.row(m).iter().zip(&want) {
            assert!((a - b).abs() < 1e-9 * scale);
        }
    }
}

#[test]
fn crossfade_weights_partition_unity() {
    let w = crossfade_weights(&[0.0, 0.25, 0.5, 0.75], 16000, 16000);
    assert_eq!(w.len(), 4);
    for i in 0..16000 {
        let total: f64 = w.iter().map(|row| row[i]).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|row| row[i] >= 0.0));
    }
}

#[test]
fn static_and_dynamic_scenes_share_everything_but_motion() {
    let ranges = SceneRanges::default();
    for seed in 0..10 {
        let d = sample_scenario(seed, true, &ranges).unwrap();
        let s = sample_scenario(seed, false, &ranges).unwrap();
        assert_eq!(d.room, s.room);
        assert_eq!(d.array, s.array);
        assert_eq!(d.snr_db, s.snr_db);
        assert_eq!(s.trajectory.waypoints, vec![d.trajectory.waypoints[0]]);
        assert!(!d.trajectory.is_static());
    }
}

#[test]
fn sampled_scenes_respect_ranges_and_speed() {
    let ranges = SceneRanges::default();
    for seed in 0..40 {
        let sc = sample_scenario(seed, true, &ranges).unwrap();
        let room = sc.room;
        assert!(ranges.room_length.contains(room.length));
        assert!(ranges.room_width.contains(room.width));
        assert!(ranges.room_height.contains(room.height));
        assert!(ranges.rt60.contains(room.rt60));
        assert!(ranges.snr_db.contains(sc.snr_db));
        assert!(ranges.duration_s.contains(sc.duration_s));
        assert_eq!(sc.array.num_mics(), 5);
        for p in sc.array.mic_positions().iter().chain(&sc.trajectory.waypoints) {
            assert!(room.contains(*p));
            assert!(room.clearance(*p) >= ranges.wall_clearance - 1e-9);
        }
        let path: f64 = sc
            .trajectory
            .waypoints
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2) + (w[1][2] - w[0][2]).powi(2)).sqrt())
            .sum();
        let span = sc.trajectory.timestamps.last().unwrap() - sc.trajectory.timestamps[0];
        // Waypoints are chords of a path walked at the sampled speed.
        assert!(ranges.speed.contains(sc.trajectory.speed));
        assert!(path <= sc.trajectory.speed * span * (1.0 + 1e-9));
    }
}

#[test]
fn rendering_is_deterministic_per_seed() {
    let mut cfg = SimConfig::default();
    cfg.ranges.duration_s = Range::new(0.5, 0.5);
    let a = render_utterance(21, true, &cfg).unwrap();
    let b = render_utterance(21, true, &cfg).unwrap();
    assert_eq!(a.mixture, b.mixture);
    let c = render_utterance(22, true, &cfg).unwrap();
    assert_ne!(a.mixture, c.mixture);
    assert_eq!(a.mixture, &a.speech + &a.noise);
    assert!((measured_snr(a.speech.view(), a.noise.view(), 0) - a.scenario.snr_db).abs() < 1e-9);
}

#[test]
fn diffuse_field_coherence_follows_sinc() {
    let d = 0.1;
    let mics = [[1.0, 1.0, 1.0], [1.0 + d, 1.0, 1.0]];
    let field = plane_wave_field(16000 * 8, &mics, 5, 512, 16000);
    let nfft = 256;
    let msc = coherence(field.row(0).as_slice().unwrap(), field.row(1).as_slice().unwrap(), nfft);
    let mut worst: f64 = 0.0;
    for (k, c) in msc.iter().enumerate().skip(1).take(nfft / 2 - 1) {
        let x = 2.0 * PI * k as f64 * 16000.0 / nfft as f64 * d / 343.0;
        let want = (x.sin() / x).powi(2);
        worst = worst.max((c - want).abs());
    }
    assert!(worst < 0.1, "coherence deviates from sinc² by {worst}");
}

#[test]
fn diffuse_noise_has_unit_power_and_rejects_bad_input() {
    let mics = [[1.0, 1.0, 1.0], [1.1, 1.0, 1.0], [1.0, 1.1, 1.0]];
    let n = diffuse_noise(32000, &mics, 3, &DiffuseOptions::default()).unwrap();
    let power = n.iter().map(|v| v * v).sum::<f64>() / n.len() as f64;
    assert!((power - 1.001).abs() < 0.01);
    let opts = DiffuseOptions {
        num_waves: 0,
        ..DiffuseOptions::default()
    };
    assert!(diffuse_noise(100, &mics, 3, &opts).is_err());
}

#[test]
fn far_microphone_hears_later_and_weaker_direct_path() {
    let room = sample_scenario(0, false, &SceneRanges::default()).unwrap().room;
    let opts = IsmOptions {
        max_order: Some(0),
        diffuse_tail_db: None,
        ..IsmOptions::default()
    };
    let src = [room.length / 2.0, room.width / 2.0, 1.5];
    let near = ism_rir(&room, src, [src[0] + 0.5, src[1], src[2]], room.rt60, &opts).unwrap();
    let far = ism_rir(&room, src, [src[0] + 1.0, src[1], src[2]], room.rt60, &opts).unwrap();
    let argmax = |r: &[f64]| -> (usize, f64) {
        r.iter()
            .enumerate()
            .map(|(i, v)| (i, *v))
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
    };
    let (ti, vi) = argmax(&near);
    let (tj, vj) = argmax(&far);
    assert!(tj > ti);
    assert!(vj.abs() < vi.abs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Reflections only add energy after the direct path and the direct path
    /// is the earliest arrival.
    #[test]
    fn nothing_arrives_before_direct_path(seed in 0u64..1000) {
        let sc = sample_scenario(seed, false, &SceneRanges::default()).unwrap();
        let mic = sc.array.mic_positions()[0];
        let src = sc.trajectory.waypoints[0];
        let rir = ism_rir(&sc.room, src, mic, sc.room.rt60, &IsmOptions::default()).unwrap();
        let dist = ((src[0] - mic[0]).powi(2) + (src[1] - mic[1]).powi(2) + (src[2] - mic[2]).powi(2)).sqrt();
        let delay = dist / 343.0 * 16000.0;
        // Sinc interpolation spreads the direct path over 16 samples each side.
        let first = (delay - 17.0).max(0.0) as usize;
        prop_assert!(rir[..first].iter().all(|v| *v == 0.0));
        prop_assert!(rir.iter().all(|v| v.is_finite()));
    }
}
