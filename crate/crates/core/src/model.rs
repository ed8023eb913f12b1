//! Learned spatial-filter pipelines.
//!
//! Every pipeline maps a multichannel mixture spectrogram (plus, for the
//! MVDR-shaped variants, a speech mask) to per-bin filter weights, applies
//! them, and resynthesizes the reference-channel estimate. Graphs are built
//! on an [`adsf_autodiff::Tape`] so the same code serves training and
//! inference.
//!
//! Bins are flattened frame-major: `b = t * F + f`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use adsf_autodiff::{read_checkpoint, write_checkpoint, BackwardArgs, CVar, ParamStore, Tape, Var};
use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, LaNetwork, NlaNetwork};
use crate::beamformer::{loading_amount, FilterField, DEFAULT_LOADING, TRACE_EPS};
use crate::covariance::{
    expansion_matrices, vectorize_sequence, ScmKind, ScmSequence, VectorizeMode,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::masking::{Mask, MaskedPair};
use crate::stft::{synthesize_var, Spectrogram, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Attention weights mix instantaneous SCMs, then MVDR.
    La,
    /// Network outputs SCMs directly, then MVDR.
    Nla,
    /// Network outputs inverse-SCM factors; no matrix inversion.
    Ic,
    /// Network outputs the filter weights from the mixture.
    Flsf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::La, Variant::Nla, Variant::Ic, Variant::Flsf];

    pub fn name(self) -> &'static str {
        match self {
            Variant::La => "la",
            Variant::Nla => "nla",
            Variant::Ic => "ic",
            Variant::Flsf => "flsf",
        }
    }

    /// Whether the pipeline consumes a speech mask.
    pub fn uses_mask(self) -> bool {
        self != Variant::Flsf
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected la, nla, ic or flsf)"
                ))
            })
    }
}

/// How NLA-MVDR turns a devectorized network output `B` into an SCM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScmForm {
    /// `Φ = B Bᴴ`: Hermitian positive semidefinite, so `tr(Φn⁻¹Φx)` cannot
    /// cross zero during training.
    #[default]
    Gram,
    /// `Φ = B` as emitted.
    Free,
}

impl ScmForm {
    pub fn name(self) -> &'static str {
        match self {
            ScmForm::Gram => "gram",
            ScmForm::Free => "free",
        }
    }
}

impl FromStr for ScmForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gram" => Ok(ScmForm::Gram),
            "free" => Ok(ScmForm::Free),
            _ => Err(Error::Config(format!(
                "unknown SCM form {s:?} (expected gram or free)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// `input_dim` is derived from the STFT size and channel count.
    pub attention: AttentionConfig,
    pub vectorize: VectorizeMode,
    /// One network for the speech and noise branches.
    pub shared: bool,
    /// NLA-MVDR only.
    #[serde(default)]
    pub scm_form: ScmForm,
    pub loading: f64,
    pub reference: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, attention: AttentionConfig) -> Self {
        Self {
            variant,
            attention,
            vectorize: VectorizeMode::Compact,
            shared: true,
            scm_form: ScmForm::default(),
            loading: DEFAULT_LOADING,
            reference: 0,
        }
    }
}

/// Initial scale of NLA output weights relative to the default fan-in init.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

/// Initial NLA output: identity matrices at every frequency for the
/// matrix-valued pipelines (NLA-MVDR then starts well conditioned and
/// IC-MVDR at the reference pass-through) and the pass-through filter for
/// FL-SF.
fn output_anchor(config: &ModelConfig, bins: usize, m: usize) -> Option<Vec<f64>> {
    let r = config.reference;
    match config.variant {
        Variant::La => None,
        Variant::Nla | Variant::Ic => {
            let d = config.vectorize.dim(m);
            let mut block = vec![0.0; d];
            for i in 0..m {
                // Compact stores the diagonal first; full stores re(A) row-major.
                let at = match config.vectorize {
                    VectorizeMode::Compact => i,
                    VectorizeMode::Full => i * m + i,
                };
                block[at] = 1.0;
            }
            Some(block.repeat(bins))
        }
        Variant::Flsf => {
            let mut out = vec![0.0; 2 * bins * m];
            for f in 0..bins {
                out[f * m + r] = 1.0;
            }
            Some(out)
        }
    }
}

/// Pointwise signed log compression of network inputs.
pub fn compress(v: f64) -> f64 {
    v.signum() * v.abs().ln_1p()
}

#[derive(Debug, Clone)]
enum Net {
    La(LaNetwork),
    Nla(NlaNetwork),
}

impl Net {
    fn forward<'t>(&self, p: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        match self {
            Net::La(n) => n.forward(p, x),
            Net::Nla(n) => n.forward(p, x),
        }
    }
}

/// Per-utterance constants consumed by the graph.
#[derive(Debug, Clone)]
pub struct Features {
    pub frames: usize,
    pub bins: usize,
    pub channels: usize,
    pub num_samples: usize,
    input_dim: usize,
    /// Mixture, `[M, T * F]`.
    y_re: Vec<f64>,
    y_im: Vec<f64>,
    /// Network inputs, `[T, L]`. FL-SF uses only `speech_in`.
    speech_in: Vec<f64>,
    noise_in: Vec<f64>,
    /// Instantaneous SCMs `[T, F * M * M]` for the LA combination.
    psi_x: Option<(Vec<f64>, Vec<f64>)>,
    psi_n: Option<(Vec<f64>, Vec<f64>)>,
}

fn flat_scm(seq: &ScmSequence) -> (Vec<f64>, Vec<f64>) {
    let (bins, frames, m, _) = seq.data.dim();
    let mut re = Vec::with_capacity(bins * frames * m * m);
    let mut im = Vec::with_capacity(bins * frames * m * m);
    for t in 0..frames {
        for f in 0..bins {
            for z in seq.matrix(f, t).iter() {
                re.push(z.re);
                im.push(z.im);
            }
        }
    }
    (re, im)
}

/// A learned pipeline together with its parameters.
#[derive(Debug, Clone)]
pub struct SpatialModel {
    pub config: ModelConfig,
    pub stft: StftConfig,
    pub num_channels: usize,
    pub store: ParamStore,
    speech: Net,
    noise: Option<Net>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    stft: StftConfig,
    num_channels: usize,
}

impl SpatialModel {
    pub fn new(mut config: ModelConfig, stft: StftConfig, num_channels: usize) -> Result<Self> {
        stft.validate()?;
        if num_channels == 0 || config.reference >= num_channels {
            return Err(Error::Config(format!(
                "reference channel {} invalid for {num_channels} channels",
                config.reference
            )));
        }
        let bins = stft.num_bins();
        let m = num_channels;
        let dim = match config.variant {
            Variant::Flsf => 2 * bins * m,
            _ => bins * config.vectorize.dim(m),
        };
        config.attention.input_dim = dim;
        config.attention.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ParamStore::seeded_rng(config.attention.seed);
        let cfg = config.attention.clone();
        let mut build = |name: &str| -> Result<Net> {
            Ok(match config.variant {
                Variant::La => Net::La(LaNetwork::new(&mut store, &mut rng, name, &cfg)?),
                _ => Net::Nla(NlaNetwork::new(&mut store, &mut rng, name, &cfg, dim)?),
            })
        };
        let separate = !config.shared && config.variant != Variant::Flsf;
        let (speech, noise) = if separate {
            (build("speech_net")?, Some(build("noise_net")?))
        } else {
            (build("net")?, None)
        };
        if let Some(anchor) = output_anchor(&config, bins, m) {
            for net in std::iter::once(&speech).chain(noise.as_ref()) {
                if let Net::Nla(n) = net {
                    n.anchor_output(&mut store, &anchor, OUTPUT_INIT_SCALE)?;
                }
            }
        }
        Ok(Self {
            config,
            stft,
            num_channels,
            store,
            speech,
            noise,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Precomputes graph constants for one utterance. `mask` is required by
    /// every variant except FL-SF.
    pub fn features(&self, mixture: &Spectrogram, mask: Option<&Mask>) -> Result<Features> {
        let (m, bins, frames) = mixture.data.dim();
        if m != self.num_channels || bins != self.stft.num_bins() {
            return Err(Error::InvalidInput(format!(
                "mixture has {m} channels and {bins} bins; model expects {} and {}",
                self.num_channels,
                self.stft.num_bins()
            )));
        }
        let b = bins * frames;
        let mut y_re = vec![0.0; m * b];
        let mut y_im = vec![0.0; m * b];
        for c in 0..m {
            for t in 0..frames {
                for f in 0..bins {
                    let z = mixture.data[[c, f, t]];
                    y_re[c * b + t * bins + f] = z.re;
                    y_im[c * b + t * bins + f] = z.im;
                }
            }
        }
        let mut feats = Features {
            frames,
            bins,
            channels: m,
            num_samples: mixture.num_samples,
            input_dim: self.config.attention.input_dim,
            y_re,
            y_im,
            speech_in: Vec::new(),
            noise_in: Vec::new(),
            psi_x: None,
            psi_n: None,
        };
        if self.variant() == Variant::Flsf {
            let mut input = Vec::with_capacity(frames * 2 * bins * m);
            for t in 0..frames {
                for part in 0..2 {
                    for f in 0..bins {
                        for c in 0..m {
                            let z = mixture.data[[c, f, t]];
                            input.push(compress(if part == 0 { z.re } else { z.im }));
                        }
                    }
                }
            }
            feats.speech_in = input;
            return Ok(feats);
        }
        let mask = mask.ok_or_else(|| {
            Error::InvalidInput(format!(
                "the {} pipeline needs a speech mask",
                self.variant()
            ))
        })?;
        let pair = MaskedPair::from_mask(mixture, mask)?;
        let psi_x = ScmSequence::instantaneous(&pair.speech_est, ScmKind::Speech);
        let psi_n = ScmSequence::instantaneous(&pair.noise_est, ScmKind::Noise);
        let mode = self.config.vectorize;
        feats.speech_in = vectorize_sequence(&psi_x, mode)?
            .iter()
            .map(|v| compress(*v))
            .collect();
        feats.noise_in = vectorize_sequence(&psi_n, mode)?
            .iter()
            .map(|v| compress(*v))
            .collect();
        if self.variant() == Variant::La {
            feats.psi_x = Some(flat_scm(&psi_x));
            feats.psi_n = Some(flat_scm(&psi_n));
        }
        Ok(feats)
    }

    fn noise_net(&self) -> &Net {
        self.noise.as_ref().unwrap_or(&self.speech)
    }

    /// Network output for the speech and noise branches.
    fn branches<'t>(&self, p: &[Var<'t>], feats: &Features) -> Result<(Var<'t>, Var<'t>)> {
        let tape = p[0].tape();
        let shape = [feats.frames, feats.input_dim];
        let xs = tape.constant(feats.speech_in.clone(), &shape);
        let xn = tape.constant(feats.noise_in.clone(), &shape);
        Ok((
            self.speech.forward(p, &xs)?,
            self.noise_net().forward(p, &xn)?,
        ))
    }

    /// Expands vectorized `[T, F * D]` network output into `[B, M, M]`.
    fn expand<'t>(&self, out: &Var<'t>, feats: &Features) -> Result<CVar<'t>> {
        let m = feats.channels;
        let d = self.config.vectorize.dim(m);
        let b = feats.frames * feats.bins;
        let (e_re, e_im) = expansion_matrices(m, self.config.vectorize);
        let tape = out.tape();
        let flat = out.reshape(&[b, d])?;
        let re = flat.matmul(&tape.constant(e_re, &[d, m * m]))?;
        let im = flat.matmul(&tape.constant(e_im, &[d, m * m]))?;
        Ok(CVar::new(re.reshape(&[b, m, m])?, im.reshape(&[b, m, m])?)?)
    }

    /// Filter weights `[M, B]` on `p`'s tape.
    pub fn filter_var<'t>(&self, p: &[Var<'t>], feats: &Features) -> Result<CVar<'t>> {
        if p.is_empty() {
            return Err(Error::InvalidInput("no parameters bound".into()));
        }
        let tape = p[0].tape();
        let m = feats.channels;
        let b = feats.frames * feats.bins;
        let r = self.config.reference;
        match self.variant() {
            Variant::La => {
                let (wx, wn) = self.branches(p, feats)?;
                let combine =
                    |w: &Var<'t>, psi: &Option<(Vec<f64>, Vec<f64>)>| -> Result<CVar<'t>> {
                        let (re, im) = psi
                            .as_ref()
                            .ok_or_else(|| Error::InvalidInput("features lack ISCMs".into()))?;
                        let shape = [feats.frames, feats.bins * m * m];
                        let re = w.matmul(&tape.constant(re.clone(), &shape))?;
                        let im = w.matmul(&tape.constant(im.clone(), &shape))?;
                        Ok(CVar::new(re.reshape(&[b, m, m])?, im.reshape(&[b, m, m])?)?)
                    };
                let phi_x = combine(&wx, &feats.psi_x)?;
                let phi_n = combine(&wn, &feats.psi_n)?;
                mvdr_var(&phi_x, &phi_n, r, self.config.loading)
            }
            Variant::Nla => {
                let (ox, on) = self.branches(p, feats)?;
                let scm = |o: &Var<'t>| -> Result<CVar<'t>> {
                    let b = self.expand(o, feats)?;
                    Ok(match self.config.scm_form {
                        ScmForm::Gram => b.matmul(&b.conj_transpose()?)?,
                        ScmForm::Free => b,
                    })
                };
                let phi_x = scm(&ox)?;
                let phi_n = scm(&on)?;
                mvdr_var(&phi_x, &phi_n, r, self.config.loading)
            }
            Variant::Ic => {
                let (ox, on) = self.branches(p, feats)?;
                let a_xx = self.expand(&ox, feats)?;
                let a_nn = self.expand(&on, feats)?;
                let col = a_nn.slice(2, r, r + 1)?;
                let h = a_xx.matmul(&col)?.reshape(&[b, m])?;
                Ok(h.transpose()?)
            }
            Variant::Flsf => {
                let shape = [feats.frames, 2 * feats.bins * m];
                let x = tape.constant(feats.speech_in.clone(), &shape);
                let out = self.speech.forward(p, &x)?;
                let half = feats.bins * m;
                let re = out.slice(1, 0, half)?.reshape(&[b, m])?.transpose()?;
                let im = out
                    .slice(1, half, 2 * half)?
                    .reshape(&[b, m])?
                    .transpose()?;
                Ok(CVar::new(re, im)?)
            }
        }
    }

    /// Enhanced reference-channel coefficients `[T, F]`.
    pub fn enhance_var<'t>(&self, p: &[Var<'t>], feats: &Features) -> Result<CVar<'t>> {
        let h = self.filter_var(p, feats)?;
        let tape = h.re.tape();
        let shape = [feats.channels, feats.frames * feats.bins];
        let y = CVar::new(
            tape.constant(feats.y_re.clone(), &shape),
            tape.constant(feats.y_im.clone(), &shape),
        )?;
        Ok(h.conj_mul(&y)?
            .sum_axis(0)?
            .reshape(&[feats.frames, feats.bins])?)
    }

    /// Enhanced time signal `[num_samples]`.
    pub fn signal_var<'t>(&self, p: &[Var<'t>], feats: &Features) -> Result<Var<'t>> {
        let z = self.enhance_var(p, feats)?;
        synthesize_var(&z, &self.stft, feats.num_samples)
    }

    /// Filter weights from frozen parameters.
    pub fn filter_field(&self, feats: &Features) -> Result<FilterField> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let h = self.filter_var(&p, feats)?;
        let (re, im) = (h.re.value(), h.im.value());
        let b = feats.frames * feats.bins;
        let h = Array3::from_shape_fn((feats.bins, feats.frames, feats.channels), |(f, t, c)| {
            let i = c * b + t * feats.bins + f;
            Complex64::new(re[i], im[i])
        });
        Ok(FilterField { h })
    }

    /// Enhanced one-channel spectrogram from frozen parameters.
    pub fn enhance(&self, mixture: &Spectrogram, mask: Option<&Mask>) -> Result<Spectrogram> {
        let feats = self.features(mixture, mask)?;
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let z = self.enhance_var(&p, &feats)?;
        let (re, im) = (z.re.value(), z.im.value());
        let data = Array3::from_shape_fn((1, feats.bins, feats.frames), |(_, f, t)| {
            Complex64::new(re[t * feats.bins + f], im[t * feats.bins + f])
        });
        Ok(Spectrogram {
            data,
            config: mixture.config,
            num_samples: mixture.num_samples,
        })
    }

    /// Writes a JSON header line followed by the parameter checkpoint.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            stft: self.stft,
            num_channels: self.num_channels,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let params: Vec<_> = self.store.iter().cloned().collect();
        write_checkpoint(w, &params)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut line = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
            if line.len() > 1 << 20 {
                return Err(Error::Checkpoint("model header too long".into()));
            }
        }
        let header: Header = serde_json::from_slice(&line)?;
        let mut model = Self::new(header.config, header.stft, header.num_channels)?;
        let params = read_checkpoint(r)?;
        model.store.load_from(&params)?;
        Ok(model)
    }
}

fn to_complex(re: &[f64], im: &[f64]) -> Vec<Complex64> {
    re.iter()
        .zip(im)
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect()
}

/// Forward state kept for the backward pass of one bin.
struct MvdrBin {
    loaded: Vec<Complex64>,
    /// `A⁻¹ Φx`; empty for a pass-through bin.
    num: Vec<Complex64>,
    trace: Complex64,
}

/// Differentiable MVDR over `[B, M, M]` SCMs; returns weights `[M, B]`.
///
/// Mirrors [`crate::beamformer::mvdr_bin`]: relative diagonal loading, and
/// the pass-through filter where the trace vanishes. Evaluated as one tape
/// node per call with a closed-form backward; the loading amount depends on
/// `tr(Φn)` and is differentiated too.
pub fn mvdr_var<'t>(
    phi_x: &CVar<'t>,
    phi_n: &CVar<'t>,
    reference: usize,
    epsilon: f64,
) -> Result<CVar<'t>> {
    let shape = phi_x.shape();
    if shape.len() != 3 || shape[1] != shape[2] || phi_n.shape() != shape {
        return Err(Error::InvalidInput(format!(
            "SCM shapes {shape:?} and {:?} are not matching [B, M, M]",
            phi_n.shape()
        )));
    }
    let (b, m) = (shape[0], shape[1]);
    if reference >= m {
        return Err(Error::InvalidInput(format!(
            "reference {reference} out of range for {m} channels"
        )));
    }
    let mm = m * m;
    let x = to_complex(&phi_x.re.value(), &phi_x.im.value());
    let n = to_complex(&phi_n.re.value(), &phi_n.im.value());
    let bins: Vec<MvdrBin> = (0..b)
        .into_par_iter()
        .map(|i| {
            let (xi, ni) = (&x[i * mm..(i + 1) * mm], &n[i * mm..(i + 1) * mm]);
            let trace_nn: f64 = (0..m).map(|d| ni[d * m + d].re).sum();
            let delta = loading_amount(trace_nn, m, epsilon);
            let mut loaded = ni.to_vec();
            for d in 0..m {
                loaded[d * m + d] += delta;
            }
            let num = linalg::solve(&loaded, m, xi, m)?;
            let trace: Complex64 = (0..m).map(|d| num[d * m + d]).sum();
            let num = if trace.norm() < TRACE_EPS || !trace.is_finite() {
                Vec::new()
            } else {
                num
            };
            Ok(MvdrBin { loaded, num, trace })
        })
        .collect::<Result<_>>()?;

    let mut value = vec![0.0; 2 * m * b];
    for (i, bin) in bins.iter().enumerate() {
        for c in 0..m {
            let h = if bin.num.is_empty() {
                Complex64::new(if c == reference { 1.0 } else { 0.0 }, 0.0)
            } else {
                bin.num[c * m + reference] / bin.trace
            };
            value[c * b + i] = h.re;
            value[m * b + c * b + i] = h.im;
        }
    }

    let backward = Box::new(move |args: &BackwardArgs<'_>| {
        let (g, v) = (args.grad, args.value);
        let per_bin: Vec<(Vec<Complex64>, Vec<Complex64>)> = bins
            .par_iter()
            .enumerate()
            .map(|(i, bin)| {
                let zero = vec![Complex64::default(); mm];
                if bin.num.is_empty() {
                    return (zero.clone(), zero);
                }
                let at = |c: usize| -> (Complex64, Complex64) {
                    (
                        Complex64::new(v[c * b + i], v[m * b + c * b + i]),
                        Complex64::new(g[c * b + i], g[m * b + c * b + i]),
                    )
                };
                // h = N / τ with N the reference column of A⁻¹Φx and τ its trace.
                let tau_conj = bin.trace.conj();
                let mut g_tau = Complex64::default();
                let mut g_num = zero.clone();
                for c in 0..m {
                    let (h, gh) = at(c);
                    g_tau -= (h / bin.trace).conj() * gh;
                    g_num[c * m + reference] += gh / tau_conj;
                }
                for d in 0..m {
                    g_num[d * m + d] += g_tau;
                }
                // Φx̄ = A⁻ᴴ N̄, Ā = -Φx̄ (A⁻¹Φx)ᴴ.
                let mut adj = vec![Complex64::default(); mm];
                for r in 0..m {
                    for c in 0..m {
                        adj[r * m + c] = bin.loaded[c * m + r].conj();
                    }
                }
                let g_x = match linalg::solve(&adj, m, &g_num, m) {
                    Ok(y) => y,
                    Err(_) => vec![Complex64::new(f64::NAN, f64::NAN); mm],
                };
                let mut g_n = vec![Complex64::default(); mm];
                for r in 0..m {
                    for c in 0..m {
                        let mut acc = Complex64::default();
                        for k in 0..m {
                            acc += g_x[r * m + k] * bin.num[c * m + k].conj();
                        }
                        g_n[r * m + c] = -acc;
                    }
                }
                let g_delta: f64 = (0..m).map(|d| g_n[d * m + d].re).sum();
                for d in 0..m {
                    g_n[d * m + d].re += g_delta * epsilon / m as f64;
                }
                (g_x, g_n)
            })
            .collect();
        let mut grads = vec![vec![0.0; b * mm]; 4];
        for (i, (g_x, g_n)) in per_bin.iter().enumerate() {
            for k in 0..mm {
                grads[0][i * mm + k] = g_x[k].re;
                grads[1][i * mm + k] = g_x[k].im;
                grads[2][i * mm + k] = g_n[k].re;
                grads[3][i * mm + k] = g_n[k].im;
            }
        }
        grads.into_iter().map(Some).collect()
    });
    let tape = phi_x.re.tape();
    let out = tape.custom(
        &[phi_x.re, phi_x.im, phi_n.re, phi_n.im],
        value,
        &[2, m, b],
        backward,
    );
    Ok(CVar::new(
        out.slice(0, 0, 1)?.reshape(&[m, b])?,
        out.slice(0, 1, 2)?.reshape(&[m, b])?,
    )?)
}
