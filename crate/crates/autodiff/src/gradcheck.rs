//! Central finite-difference gradient checking.

use crate::tape::{Tape, Var};
use crate::Result;

/// Gradient norms below this multiple of the difference round-off
/// `ε·max(|f|, 1)/h·√n` are treated as zero.
pub const NOISE_MARGIN: f64 = 1e4;

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Norm-wise relative error `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖, floor)`
    /// per input. The floor is `NOISE_MARGIN` times the round-off of the
    /// central difference, so identically-zero gradients do not read as a
    /// total mismatch.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with step `h`.
///
/// When `max_coords` is set only that many evenly spaced coordinates of each
/// input are perturbed, and the comparison is restricted to them.
pub fn check_gradients<F>(
    inputs: &[(Vec<f64>, Vec<usize>)],
    h: f64,
    max_coords: Option<usize>,
    f: F,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values
            .iter()
            .zip(inputs)
            .map(|(v, (_, s))| tape.constant(v.clone(), s))
            .collect();
        Ok(f(&tape, &vars)?.item())
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs
        .iter()
        .map(|(v, s)| tape.leaf(v.clone(), s))
        .collect();
    let out = f(&tape, &vars)?;
    let round_off = f64::EPSILON * out.item().abs().max(1.0) / h;
    let grads = tape.backward(&out)?;
    let full: Vec<Vec<f64>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(v, _)| v.clone()).collect();
    let mut rel_errors = Vec::new();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for i in 0..inputs.len() {
        let n = values[i].len();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut num = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = values[i][c];
            values[i][c] = orig + h;
            let plus = eval(&values)?;
            values[i][c] = orig - h;
            let minus = eval(&values)?;
            values[i][c] = orig;
            num.push((plus - minus) / (2.0 * h));
        }
        let ana: Vec<f64> = coords.iter().map(|&c| full[i][c]).collect();
        let diff = ana
            .iter()
            .zip(&num)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let floor = NOISE_MARGIN * round_off * (coords.len() as f64).sqrt();
        let scale = norm(&ana).max(norm(&num)).max(floor);
        rel_errors.push(diff / scale);
        analytic.push(ana);
        numeric.push(num);
    }
    Ok(GradCheck {
        rel_errors,
        analytic,
        numeric,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
