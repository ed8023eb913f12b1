//! Loss/metric identities, evaluation reports and training-loop behaviour
//! (determinism, resume, scheduling).

use adsf_core::attention::AttentionConfig;
use adsf_core::eval::{evaluate, EvalReport};
use adsf_core::masking::{oracle_mask, OracleMaskProvider};
use adsf_core::metrics::{sdr, si_sdr, snr_loss, CLAMP_DB};
use adsf_core::model::{ModelConfig, SpatialModel, Variant};
use adsf_core::pipeline::{BaselineConfig, Enhancer, Method};
use adsf_core::simulator::scene::Range;
use adsf_core::simulator::{render_utterance, SimConfig};
use adsf_core::stft::StftConfig;
use adsf_core::train::{mean_loss, Example, StopReason, TrainConfig, TrainItem, Trainer, LOSS_CSV};
use proptest::prelude::*;

fn stft() -> StftConfig {
    StftConfig::new(256, 64, 16000).unwrap()
}

fn examples(count: u64) -> Vec<Example> {
    let mut cfg = SimConfig::default();
    cfg.ranges.duration_s = Range::new(0.3, 0.3);
    (0..count)
        .map(|i| {
            let u = render_utterance(500 + i, true, &cfg).unwrap();
            Example::new(format!("u{i}"), u.mixture.view(), u.speech.view(), 0, &stft()).unwrap()
        })
        .collect()
}

fn model(variant: Variant) -> SpatialModel {
    let attention = AttentionConfig {
        num_blocks: 1,
        num_heads: 2,
        model_dim: 8,
        ff_dim: 16,
        seed: 3,
        ..AttentionConfig::default()
    };
    SpatialModel::new(ModelConfig::new(variant, attention), stft(), 5).unwrap()
}

fn train_config(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        lr: 1e-3,
        max_steps: Some(steps),
        checkpoint_every: 2,
        ..TrainConfig::default()
    }
}

fn items(m: &SpatialModel, ex: &[Example]) -> Vec<TrainItem> {
    ex.iter()
        .map(|e| TrainItem::new(m, e, &OracleMaskProvider).unwrap())
        .collect()
}

#[test]
fn training_is_bit_deterministic() {
    let ex = examples(4);
    let run = || {
        let mut t = Trainer::new(model(Variant::Ic), train_config(4)).unwrap();
        let it = items(&t.model, &ex);
        assert_eq!(t.run(&it, &[], None, |_| {}).unwrap(), StopReason::MaxSteps);
        let params: Vec<Vec<f64>> = t.model.store.iter().map(|p| p.data.clone()).collect();
        (t.state.history, params)
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1.len(), 4);
    assert_eq!(h1, h2);
    let bits = |p: &[Vec<f64>]| -> Vec<u64> { p.iter().flatten().map(|v| v.to_bits()).collect() };
    assert_eq!(bits(&p1), bits(&p2));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let ex = examples(4);
    let dir = tempfile::tempdir().unwrap();

    let mut full = Trainer::new(model(Variant::La), train_config(6)).unwrap();
    let it = items(&full.model, &ex);
    full.run(&it, &[], None, |_| {}).unwrap();

    let mut first = Trainer::new(model(Variant::La), train_config(3)).unwrap();
    first.run(&it, &[], Some(dir.path()), |_| {}).unwrap();
    assert!(Trainer::can_resume(dir.path()));
    let mut resumed = Trainer::resume(dir.path(), train_config(6)).unwrap();
    resumed.run(&it, &[], Some(dir.path()), |_| {}).unwrap();

    assert_eq!(resumed.state.history, full.state.history);
    for (a, b) in resumed.model.store.iter().zip(full.model.store.iter()) {
        assert_eq!(a.data, b.data, "{}", a.name);
    }
    let rows = csv::Reader::from_path(dir.path().join(LOSS_CSV))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows, 6);
}

#[test]
fn zero_patience_stops_after_first_epoch() {
    let ex = examples(4);
    let config = TrainConfig {
        batch_size: 2,
        early_stop_patience: 0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(model(Variant::Flsf), config).unwrap();
    let it = items(&t.model, &ex);
    assert_eq!(t.run(&it, &[], None, |_| {}).unwrap(), StopReason::EarlyStop);
    assert_eq!(t.state.epoch, 1);
    assert_eq!(t.state.history.len(), 2);
    assert!(t.state.history[0].val_loss.is_none());
    assert!(t.state.history[1].val_loss.is_some());
}

#[test]
fn evaluation_report_means_match_rows() {
    let ex = examples(3);
    let e = Enhancer::baseline(Method::Cum, BaselineConfig::default()).unwrap();
    let report = evaluate(&e, &ex, &OracleMaskProvider, "unit").unwrap();
    assert_eq!(report.rows.len(), 3);
    let mean = report.rows.iter().map(|r| r.sdr).sum::<f64>() / 3.0;
    assert!((report.mean_sdr - mean).abs() < 1e-12);
    assert!(report.rows.iter().all(|r| (r.sdr + r.loss).abs() < 1e-12));
    assert!(EvalReport::new("x", "y", vec![]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    report.write_csv(&path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(&headers[0], "utt_id");
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 4);
    assert_eq!(&records[3][0], "mean");
}

#[test]
fn oracle_mask_is_unit_bounded_and_learned_loss_is_finite() {
    let ex = examples(2);
    for e in &ex {
        let mask = oracle_mask(&e.clean, &e.mixture, 0).unwrap();
        assert!(mask.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    for v in Variant::ALL {
        let m = model(v);
        let loss = mean_loss(&m, &items(&m, &ex)).unwrap();
        assert!(loss.is_finite(), "{v}: {loss}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn negative_loss_is_sdr(s in prop::collection::vec(-1.0f64..1.0, 16), e in prop::collection::vec(-1.0f64..1.0, 16)) {
        prop_assume!(s.iter().any(|v| v.abs() > 1e-3));
        prop_assert_eq!(-snr_loss(&s, &e).unwrap(), sdr(&s, &e).unwrap());
        prop_assert!(snr_loss(&s, &e).unwrap() >= -CLAMP_DB);
    }

    #[test]
    fn si_sdr_ignores_estimate_scale(
        s in prop::collection::vec(-1.0f64..1.0, 16),
        e in prop::collection::vec(-1.0f64..1.0, 16),
        c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
    ) {
        prop_assume!(s.iter().any(|v| v.abs() > 1e-3));
        let scaled: Vec<f64> = e.iter().map(|v| c * v).collect();
        let a = si_sdr(&s, &e).unwrap();
        let b = si_sdr(&s, &scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
    }
}
