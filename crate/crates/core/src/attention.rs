//! Causal transformer encoders used to estimate time-varying spatial
//! statistics.
//!
//! Two heads sit on a shared backbone (optional input projection,
//! sinusoidal positions, post-norm encoder blocks):
//!
//! * [`LaNetwork`] emits causal attention weights `w(t, τ)` used to mix
//!   instantaneous SCMs;
//! * [`NlaNetwork`] maps each frame to a free output vector (SCMs, inverse
//!   SCM factors or filter weights, depending on the pipeline).

use adsf_autodiff::{ParamId, ParamStore, Tape, Var, MASKED_LOGIT};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::ScmSequence;
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub num_blocks: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub input_dim: usize,
    pub use_input_linear: bool,
    /// Output projection of the NLA head; ignored by LA.
    pub use_output_linear: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            num_blocks: 2,
            num_heads: 4,
            model_dim: 256,
            ff_dim: 2048,
            input_dim: 256,
            use_input_linear: true,
            use_output_linear: true,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.num_heads
            )));
        }
        if self.ff_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "ff_dim and input_dim must be positive".into(),
            ));
        }
        if !self.use_input_linear && self.input_dim != self.model_dim {
            return Err(Error::Config(format!(
                "input_dim {} must equal model_dim {} without an input projection",
                self.input_dim, self.model_dim
            )));
        }
        if self.dropout != 0.0 {
            return Err(Error::Config(
                "dropout is not supported; training is deterministic".into(),
            ));
        }
        Ok(())
    }
}

/// Sinusoidal positions, `[T, d]` row-major.
pub fn positional_encoding(frames: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; frames * dim];
    for t in 0..frames {
        for k in 0..dim {
            let i = (k / 2) as f64;
            let angle = t as f64 / 10_000f64.powf(2.0 * i / dim as f64);
            pe[t * dim + k] = if k % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Additive mask: 0 where `τ ≤ t`, [`MASKED_LOGIT`] above the diagonal.
pub fn causal_mask(frames: usize) -> Vec<f64> {
    let mut m = vec![0.0; frames * frames];
    for t in 0..frames {
        for tau in t + 1..frames {
            m[t * frames + tau] = MASKED_LOGIT;
        }
    }
    m
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.insert_uniform(&format!("{name}.weight"), &[fan_in, fan_out], bound, rng)?;
        let b = if bias {
            Some(store.insert_uniform(&format!("{name}.bias"), &[fan_out], bound, rng)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    fn forward<'t>(&self, p: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        let y = x.matmul(&p[self.w.0])?;
        match self.b {
            Some(b) => Ok(y.add(&p[b.0])?),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.insert(&format!("{name}.gain"), &[dim], vec![1.0; dim])?,
            bias: store.insert(&format!("{name}.bias"), &[dim], vec![0.0; dim])?,
        })
    }

    fn forward<'t>(&self, p: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        Ok(x.layer_norm(LAYER_NORM_EPS)
            .mul(&p[self.gain.0])?
            .add(&p[self.bias.0])?)
    }
}

/// Post-norm encoder layer: multi-head self-attention and a ReLU
/// feed-forward network, each followed by residual addition and layer norm.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    heads: usize,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &AttentionConfig,
    ) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(Self {
            heads: cfg.num_heads,
            query: Linear::new(store, rng, &format!("{name}.attn.query"), d, d, true)?,
            key: Linear::new(store, rng, &format!("{name}.attn.key"), d, d, true)?,
            value: Linear::new(store, rng, &format!("{name}.attn.value"), d, d, true)?,
            out: Linear::new(store, rng, &format!("{name}.attn.out"), d, d, true)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            ff1: Linear::new(store, rng, &format!("{name}.ff1"), d, cfg.ff_dim, true)?,
            ff2: Linear::new(store, rng, &format!("{name}.ff2"), cfg.ff_dim, d, true)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
        })
    }

    /// `x` is `[T, d]`; `mask` is an additive `[T, T]` logit mask.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: &Var<'t>, mask: &Var<'t>) -> Result<Var<'t>> {
        let d = x.shape()[1];
        let dk = d / self.heads;
        let q = self.query.forward(p, x)?;
        let k = self.key.forward(p, x)?;
        let v = self.value.forward(p, x)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dk, (h + 1) * dk);
            let qh = q.slice(1, lo, hi)?;
            let kh = k.slice(1, lo, hi)?;
            let vh = v.slice(1, lo, hi)?;
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale);
            heads.push(scores.masked_softmax(mask)?.matmul(&vh)?);
        }
        let attn = self.out.forward(p, &Var::concat(&heads, 1)?)?;
        let x = self.norm1.forward(p, &x.add(&attn)?)?;
        let ff = self.ff2.forward(p, &self.ff1.forward(p, &x)?.relu())?;
        self.norm2.forward(p, &x.add(&ff)?)
    }
}

fn frame_mask<'t>(tape: &'t Tape, frames: usize, causal: bool) -> Var<'t> {
    let values = if causal {
        causal_mask(frames)
    } else {
        vec![0.0; frames * frames]
    };
    tape.constant(values, &[frames, frames])
}

#[derive(Debug, Clone)]
struct Backbone {
    cfg: AttentionConfig,
    input: Option<Linear>,
    blocks: Vec<EncoderBlock>,
}

impl Backbone {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &AttentionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let input = if cfg.use_input_linear {
            Some(Linear::new(
                store,
                rng,
                &format!("{name}.input"),
                cfg.input_dim,
                cfg.model_dim,
                true,
            )?)
        } else {
            None
        };
        let blocks = (0..cfg.num_blocks)
            .map(|i| EncoderBlock::new(store, rng, &format!("{name}.block{i}"), cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            input,
            blocks,
        })
    }

    fn forward<'t>(&self, p: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.cfg.input_dim || shape[0] == 0 {
            return Err(Error::InvalidInput(format!(
                "expected [frames, {}] input, got {shape:?}",
                self.cfg.input_dim
            )));
        }
        let frames = shape[0];
        let d = self.cfg.model_dim;
        let tape = x.tape();
        let mut h = match &self.input {
            Some(lin) => lin.forward(p, x)?,
            None => *x,
        };
        h = h.add(&tape.constant(positional_encoding(frames, d), &[frames, d]))?;
        let mask = frame_mask(tape, frames, true);
        for block in &self.blocks {
            h = block.forward(p, &h, &mask)?;
        }
        Ok(h)
    }
}

/// Causal attention-weight estimator.
#[derive(Debug, Clone)]
pub struct LaNetwork {
    backbone: Backbone,
    query: Linear,
    key: Linear,
}

impl LaNetwork {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &AttentionConfig,
    ) -> Result<Self> {
        let backbone = Backbone::new(store, rng, name, cfg)?;
        let d = cfg.model_dim;
        Ok(Self {
            backbone,
            query: Linear::new(store, rng, &format!("{name}.head.query"), d, d, false)?,
            key: Linear::new(store, rng, &format!("{name}.head.key"), d, d, false)?,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.backbone.cfg
    }

    /// Row-stochastic lower-triangular `[T, T]` weights for `[T, L]` input.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        let h = self.backbone.forward(p, x)?;
        let frames = h.shape()[0];
        let d = self.backbone.cfg.model_dim;
        let q = self.query.forward(p, &h)?;
        let k = self.key.forward(p, &h)?;
        let scores = q.matmul(&k.transpose()?)?.scale(1.0 / (d as f64).sqrt());
        Ok(scores.masked_softmax(&frame_mask(x.tape(), frames, true))?)
    }
}

/// Causal sequence-to-sequence estimator.
#[derive(Debug, Clone)]
pub struct NlaNetwork {
    backbone: Backbone,
    output: Option<Linear>,
    output_dim: usize,
}

impl NlaNetwork {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &AttentionConfig,
        output_dim: usize,
    ) -> Result<Self> {
        let backbone = Backbone::new(store, rng, name, cfg)?;
        if !cfg.use_output_linear && output_dim != cfg.model_dim {
            return Err(Error::Config(format!(
                "output_dim {output_dim} differs from model_dim {}; an output projection is required",
                cfg.model_dim
            )));
        }
        let output = if cfg.use_output_linear || output_dim != cfg.model_dim {
            Some(Linear::new(
                store,
                rng,
                &format!("{name}.output"),
                cfg.model_dim,
                output_dim,
                true,
            )?)
        } else {
            None
        };
        Ok(Self {
            backbone,
            output,
            output_dim,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.backbone.cfg
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Re-initializes the output projection around a fixed operating point:
    /// the bias becomes `bias` and the weights are multiplied by
    /// `weight_scale`, so initial outputs stay close to `bias`. No-op
    /// without an output projection.
    pub fn anchor_output(
        &self,
        store: &mut ParamStore,
        bias: &[f64],
        weight_scale: f64,
    ) -> Result<()> {
        let Some(Linear { w, b: Some(b) }) = self.output.as_ref() else {
            return Ok(());
        };
        if bias.len() != self.output_dim {
            return Err(Error::InvalidInput(format!(
                "anchor of length {} for output dim {}",
                bias.len(),
                self.output_dim
            )));
        }
        store.get_mut(*b).data.copy_from_slice(bias);
        store
            .get_mut(*w)
            .data
            .iter_mut()
            .for_each(|w| *w *= weight_scale);
        Ok(())
    }

    /// `[T, L_in]` to `[T, L_out]`.
    pub fn forward<'t>(&self, p: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        let h = self.backbone.forward(p, x)?;
        match &self.output {
            Some(lin) => lin.forward(p, &h),
            None => Ok(h),
        }
    }
}

/// Causal mixing weights `w(t, τ)`, rows indexed by target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub w: Array2<f64>,
}

impl AttentionWeights {
    /// Checks non-negativity, unit row sums over `τ ≤ t` and zeros above the
    /// diagonal, to `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let (rows, cols) = self.w.dim();
        if rows != cols {
            return Err(Error::InvalidInput(format!("weights are {rows}x{cols}")));
        }
        for t in 0..rows {
            let mut total = 0.0;
            for tau in 0..cols {
                let v = self.w[[t, tau]];
                if v < 0.0 || !v.is_finite() || (tau > t && v.abs() > tol) {
                    return Err(Error::Numerical(format!(
                        "invalid weight {v} at ({t}, {tau})"
                    )));
                }
                total += v;
            }
            if (total - 1.0).abs() > tol {
                return Err(Error::Numerical(format!("row {t} sums to {total}")));
            }
        }
        Ok(())
    }

    /// Uniform weights `1 / (t + 1)` over the past.
    pub fn uniform(frames: usize) -> Self {
        Self {
            w: Array2::from_shape_fn((frames, frames), |(t, tau)| {
                if tau <= t {
                    1.0 / (t + 1) as f64
                } else {
                    0.0
                }
            }),
        }
    }

    /// Normalized geometric weights `∝ α^(t-τ)`.
    pub fn geometric(frames: usize, alpha: f64) -> Self {
        let mut w = Array2::zeros((frames, frames));
        for t in 0..frames {
            let norm: f64 = (0..=t).map(|k| alpha.powi(k as i32)).sum();
            for tau in 0..=t {
                w[[t, tau]] = alpha.powi((t - tau) as i32) / norm;
            }
        }
        Self { w }
    }
}

/// Runs the LA network on a frozen copy of `store`.
pub fn la_forward(
    net: &LaNetwork,
    store: &ParamStore,
    input: &Array2<f64>,
) -> Result<AttentionWeights> {
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let (frames, dim) = input.dim();
    let x = tape.constant(input.iter().copied().collect(), &[frames, dim]);
    let w = net.forward(&p, &x)?;
    let w = Array2::from_shape_vec((frames, frames), w.value().to_vec())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(AttentionWeights { w })
}

/// Runs the NLA network on a frozen copy of `store`.
pub fn nla_forward(
    net: &NlaNetwork,
    store: &ParamStore,
    input: &Array2<f64>,
) -> Result<Array2<f64>> {
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let (frames, dim) = input.dim();
    let x = tape.constant(input.iter().copied().collect(), &[frames, dim]);
    let y = net.forward(&p, &x)?;
    Array2::from_shape_vec((frames, net.output_dim), y.value().to_vec())
        .map_err(|e| Error::InvalidInput(e.to_string()))
}

/// `Φ(f, t) = Σ_τ w(t, τ) Ψ(f, τ)` with the same weights at every frequency.
pub fn la_combine(weights: &AttentionWeights, iscms: &ScmSequence) -> Result<ScmSequence> {
    let frames = iscms.num_frames();
    if weights.w.dim() != (frames, frames) {
        return Err(Error::InvalidInput(format!(
            "weights {:?} do not match {frames} frames",
            weights.w.dim()
        )));
    }
    let mut out = iscms.clone();
    out.data.fill(num_complex::Complex64::default());
    let (bins, _, m, _) = iscms.data.dim();
    for t in 0..frames {
        for tau in 0..=t {
            let w = weights.w[[t, tau]];
            if w == 0.0 {
                continue;
            }
            for f in 0..bins {
                for i in 0..m {
                    for j in 0..m {
                        out.data[[f, t, i, j]] += iscms.data[[f, tau, i, j]] * w;
                    }
                }
            }
        }
    }
    Ok(out)
}
