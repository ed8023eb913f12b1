//! Scoring enhancement methods on a set of utterances.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::masking::MaskProvider;
use crate::metrics::{sdr, si_sdr, snr_loss};
use crate::pipeline::Enhancer;
use crate::stft::synthesize;
use crate::train::Example;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub id: String,
    pub sdr: f64,
    pub si_sdr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub rows: Vec<EvalRow>,
    pub mean_sdr: f64,
    pub mean_si_sdr: f64,
    pub mean_loss: f64,
}

impl EvalReport {
    pub fn new(
        method: impl Into<String>,
        dataset: impl Into<String>,
        rows: Vec<EvalRow>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("no utterances to report".into()));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            method: method.into(),
            dataset: dataset.into(),
            mean_sdr: mean(|r| r.sdr),
            mean_si_sdr: mean(|r| r.si_sdr),
            mean_loss: mean(|r| r.loss),
            rows,
        })
    }

    /// Per-utterance rows followed by a `mean` row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["utt_id", "method", "dataset", "sdr", "si_sdr", "loss"])?;
        let rows = self
            .rows
            .iter()
            .map(|r| (r.id.as_str(), r.sdr, r.si_sdr, r.loss))
            .chain(std::iter::once((
                "mean",
                self.mean_sdr,
                self.mean_si_sdr,
                self.mean_loss,
            )));
        for (id, a, b, c) in rows {
            w.write_record([
                id,
                &self.method,
                &self.dataset,
                &a.to_string(),
                &b.to_string(),
                &c.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Enhanced reference-channel signal of `example`, full length.
pub fn enhance_example(
    enhancer: &Enhancer,
    example: &Example,
    masks: &dyn MaskProvider,
) -> Result<Vec<f64>> {
    let z = enhancer.enhance(&example.mixture, Some(&example.clean), masks)?;
    Ok(synthesize(&z)?.row(0).to_vec())
}

/// Scores over the STFT interior of an enhanced signal.
pub fn score(example: &Example, enhanced: &[f64]) -> Result<EvalRow> {
    let r = example.interior();
    let s = &example.target[r.clone()];
    let s_hat = &enhanced[r];
    Ok(EvalRow {
        id: example.id.clone(),
        sdr: sdr(s, s_hat)?,
        si_sdr: si_sdr(s, s_hat)?,
        loss: snr_loss(s, s_hat)?,
    })
}

/// Runs `enhancer` on every example in parallel; rows keep input order.
pub fn evaluate(
    enhancer: &Enhancer,
    examples: &[Example],
    masks: &dyn MaskProvider,
    dataset: &str,
) -> Result<EvalReport> {
    let rows = examples
        .par_iter()
        .map(|ex| score(ex, &enhance_example(enhancer, ex, masks)?))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::new(enhancer.method().name(), dataset, rows)
}
