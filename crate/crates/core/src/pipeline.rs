//! End-to-end enhancement: mask, SCM estimation, filtering.

use std::fmt;
use std::str::FromStr;

use crate::beamformer::{apply_filter, mvdr, FilterField, ReferenceSelector, DEFAULT_LOADING};
use crate::covariance::{block_avg, cum_avg, rec_avg, ScmKind, ScmSequence};
use crate::error::{Error, Result};
use crate::masking::{MaskProvider, MaskedPair};
use crate::model::{SpatialModel, Variant};
use crate::stft::Spectrogram;

pub const DEFAULT_ALPHA: f64 = 0.95;
pub const DEFAULT_BLOCK: usize = 25;

/// Conventional causal SCM estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Cumulative,
    Recursive { alpha: f64 },
    Block { window: usize },
}

impl Estimator {
    pub fn estimate(&self, iscms: &ScmSequence) -> Result<ScmSequence> {
        match *self {
            Estimator::Cumulative => Ok(cum_avg(iscms)),
            Estimator::Recursive { alpha } => rec_avg(iscms, alpha),
            Estimator::Block { window } => block_avg(iscms, window),
        }
    }
}

/// Method names accepted on the command line and in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Unprocessed reference channel.
    Identity,
    Cum,
    Rec,
    Block,
    Learned(Variant),
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Identity,
        Method::Cum,
        Method::Rec,
        Method::Block,
        Method::Learned(Variant::La),
        Method::Learned(Variant::Nla),
        Method::Learned(Variant::Ic),
        Method::Learned(Variant::Flsf),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::Cum => "cum",
            Method::Rec => "rec",
            Method::Block => "block",
            Method::Learned(v) => v.name(),
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Method::Learned(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Knobs of the conventional MVDR pipelines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub alpha: f64,
    pub window: usize,
    pub loading: f64,
    pub reference: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            window: DEFAULT_BLOCK,
            loading: DEFAULT_LOADING,
            reference: 0,
        }
    }
}

/// Mask-based MVDR filter with a conventional SCM estimator.
pub fn baseline_filter(
    mixture: &Spectrogram,
    pair: &MaskedPair,
    estimator: Estimator,
    cfg: &BaselineConfig,
) -> Result<FilterField> {
    let psi_x = ScmSequence::instantaneous(&pair.speech_est, ScmKind::Speech);
    let psi_n = ScmSequence::instantaneous(&pair.noise_est, ScmKind::Noise);
    let phi_x = estimator.estimate(&psi_x)?;
    let phi_n = estimator.estimate(&psi_n)?;
    let reference = ReferenceSelector::new(cfg.reference, mixture.num_channels())?;
    mvdr(&phi_x, &phi_n, reference, cfg.loading)
}

/// A ready-to-run enhancement method.
pub enum Enhancer {
    Identity {
        reference: usize,
    },
    Baseline {
        estimator: Estimator,
        config: BaselineConfig,
    },
    Learned(Box<SpatialModel>),
}

impl Enhancer {
    /// Builds a conventional method; learned methods need a model.
    pub fn baseline(method: Method, config: BaselineConfig) -> Result<Self> {
        let estimator = match method {
            Method::Identity => {
                return Ok(Enhancer::Identity {
                    reference: config.reference,
                })
            }
            Method::Cum => Estimator::Cumulative,
            Method::Rec => Estimator::Recursive {
                alpha: config.alpha,
            },
            Method::Block => Estimator::Block {
                window: config.window,
            },
            Method::Learned(v) => {
                return Err(Error::Config(format!(
                    "method {v} requires a trained model"
                )))
            }
        };
        Ok(Enhancer::Baseline { estimator, config })
    }

    pub fn method(&self) -> Method {
        match self {
            Enhancer::Identity { .. } => Method::Identity,
            Enhancer::Baseline { estimator, .. } => match estimator {
                Estimator::Cumulative => Method::Cum,
                Estimator::Recursive { .. } => Method::Rec,
                Estimator::Block { .. } => Method::Block,
            },
            Enhancer::Learned(model) => Method::Learned(model.variant()),
        }
    }

    /// Enhanced one-channel spectrogram of `mixture`.
    ///
    /// `clean` is the reference-channel clean speech; mask providers that
    /// need it (the oracle) fail without it.
    pub fn enhance(
        &self,
        mixture: &Spectrogram,
        clean: Option<&Spectrogram>,
        masks: &dyn MaskProvider,
    ) -> Result<Spectrogram> {
        match self {
            Enhancer::Identity { reference } => {
                if *reference >= mixture.num_channels() {
                    return Err(Error::InvalidInput(format!(
                        "reference channel {reference} out of range"
                    )));
                }
                Ok(mixture.channel(*reference))
            }
            Enhancer::Baseline { estimator, config } => {
                let mask = masks.speech_mask(mixture, config.reference, clean)?;
                let pair = MaskedPair::from_mask(mixture, &mask)?;
                let filter = baseline_filter(mixture, &pair, *estimator, config)?;
                apply_filter(mixture, &filter)
            }
            Enhancer::Learned(model) => {
                let mask = if model.variant().uses_mask() {
                    Some(masks.speech_mask(mixture, model.config.reference, clean)?)
                } else {
                    None
                };
                model.enhance(mixture, mask.as_ref())
            }
        }
    }
}
