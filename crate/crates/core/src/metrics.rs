//! Utterance-level signal-to-noise losses and SDR metrics.

use adsf_autodiff::Var;

use crate::error::{Error, Result};

/// Relative error-energy floor; bounds every ratio at 120 dB.
pub const RATIO_FLOOR: f64 = 1e-12;
/// Decibel value of the floor.
pub const CLAMP_DB: f64 = 120.0;

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn check(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    if s.len() != s_hat.len() {
        return Err(Error::InvalidInput(format!(
            "reference has {} samples, estimate {}",
            s.len(),
            s_hat.len()
        )));
    }
    let es = energy(s);
    if es == 0.0 {
        return Err(Error::InvalidInput(
            "reference signal has zero energy".into(),
        ));
    }
    Ok(es)
}

/// Negative SNR in dB, `-10 log10(‖s‖² / max(‖s - ŝ‖², ε ‖s‖²))`.
pub fn snr_loss(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    let es = check(s, s_hat)?;
    let err: f64 = s.iter().zip(s_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-10.0 * (es / err.max(RATIO_FLOOR * es)).log10())
}

/// Energy-ratio SDR, `-snr_loss`.
pub fn sdr(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    Ok(-snr_loss(s, s_hat)?)
}

/// Scale-invariant SDR: `ŝ` is projected onto `s` before the ratio.
pub fn si_sdr(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    let es = check(s, s_hat)?;
    let alpha = s.iter().zip(s_hat).map(|(a, b)| a * b).sum::<f64>() / es;
    let target: Vec<f64> = s.iter().map(|v| alpha * v).collect();
    let et = energy(&target);
    let err: f64 = target
        .iter()
        .zip(s_hat)
        .map(|(t, e)| (e - t) * (e - t))
        .sum();
    if et == 0.0 {
        return Ok(-CLAMP_DB);
    }
    Ok(10.0 * (et / err.max(RATIO_FLOOR * et)).log10())
}

/// Differentiable [`snr_loss`] with a constant reference.
///
/// The clamp is a hard switch: once it is active the loss is a constant.
pub fn snr_loss_var<'t>(s: &[f64], s_hat: &Var<'t>) -> Result<Var<'t>> {
    let es = check(s, &vec![0.0; s_hat.numel()])?;
    let tape = s_hat.tape();
    let target = tape.constant(s.to_vec(), &s_hat.shape());
    let err = target.sub(s_hat)?.square().sum();
    if err.item() <= RATIO_FLOOR * es {
        return Ok(tape.scalar(-CLAMP_DB));
    }
    let db = 10.0 / std::f64::consts::LN_10;
    Ok(err.log().scale(db).add_scalar(-10.0 * es.log10()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let s = [1.0, -2.0, 0.5, 3.0];
        assert!(snr_loss(&s, &[0.0; 4]).unwrap().abs() < 1e-12);
        assert!((snr_loss(&s, &s).unwrap() + 120.0).abs() < 1e-9);
        let es: f64 = energy(&s);
        let e = (es / 100.0 / 4.0).sqrt();
        let noisy: Vec<f64> = s.iter().map(|v| v + e).collect();
        assert!((snr_loss(&s, &noisy).unwrap() + 20.0).abs() < 1e-9);
        assert!(snr_loss(&[0.0; 4], &s).is_err());
        assert!(snr_loss(&s, &[0.0; 3]).is_err());
    }

    #[test]
    fn si_sdr_removes_scale() {
        let s = [1.0, -2.0, 0.5, 3.0];
        let twice: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert!(sdr(&s, &twice).unwrap().abs() < 1e-12);
        assert!((si_sdr(&s, &twice).unwrap() - 120.0).abs() < 1e-9);
        assert!((si_sdr(&s, &s).unwrap() - 120.0).abs() < 1e-9);
    }

    #[test]
    fn differentiable_loss_matches_plain() {
        let tape = adsf_autodiff::Tape::new();
        let s = [1.0, -2.0, 0.5, 3.0];
        let est = tape.leaf(vec![0.9, -1.5, 0.0, 2.0], &[4]);
        let l = snr_loss_var(&s, &est).unwrap();
        let plain = snr_loss(&s, &est.value()).unwrap();
        assert!((l.item() - plain).abs() < 1e-12);
        let exact = tape.leaf(s.to_vec(), &[4]);
        assert_eq!(snr_loss_var(&s, &exact).unwrap().item(), -120.0);
    }
}
