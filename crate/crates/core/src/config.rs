//! Run configuration files: `key = value` lines grouped under `[section]`
//! headers. `#` and `;` start comments. Every key is optional; unknown
//! sections and keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::attention::AttentionConfig;
use crate::covariance::VectorizeMode;
use crate::error::{Error, Result};
use crate::model::ScmForm;
use crate::pipeline::BaselineConfig;
use crate::simulator::ism::{AbsorptionModel, IsmOptions};
use crate::simulator::noise::DiffuseOptions;
use crate::simulator::scene::{Range, SceneRanges};
use crate::simulator::SimConfig;
use crate::stft::StftConfig;
use crate::train::TrainConfig;

/// Model options beyond the attention networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOptions {
    pub vectorize: VectorizeMode,
    pub shared: bool,
    pub scm_form: ScmForm,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            vectorize: VectorizeMode::Compact,
            shared: true,
            scm_form: ScmForm::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub stft: StftConfig,
    pub attention: AttentionConfig,
    pub model: ModelOptions,
    /// Loading and reference channel are shared by all methods.
    pub baseline: BaselineConfig,
    pub train: TrainConfig,
    pub scene: SceneRanges,
    pub ism: IsmOptions,
    pub noise: DiffuseOptions,
}

const SECTIONS: [&str; 7] = [
    "stft",
    "attention",
    "model",
    "baseline",
    "train",
    "scene",
    "simulator",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

/// `none` maps to `None`.
fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

/// `min, max` or a single value for a degenerate range.
fn parse_range(key: &str, value: &str) -> Result<Range> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [v] => {
            let v = parse(key, v)?;
            Ok(Range::new(v, v))
        }
        [a, b] => Ok(Range::new(parse(key, a)?, parse(key, b)?)),
        _ => Err(Error::Config(format!(
            "{key}: expected `min, max`, got {value:?}"
        ))),
    }
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref()
        .map_or_else(|| "none".to_string(), ToString::to_string)
}

fn range_str(r: &Range) -> String {
    format!("{}, {}", r.min, r.max)
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", no + 1))
                })?;
                section = name.trim().to_ascii_lowercase();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{section}]",
                        no + 1
                    )));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let (key, value) = (key.trim().to_ascii_lowercase(), value.trim());
            cfg.set(&section, &key, value)
                .map_err(|e| Error::Config(format!("line {}: [{section}] {e}", no + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.train.validate()?;
        self.scene.validate()?;
        if self.attention.dropout != 0.0 {
            return Err(Error::Config("dropout is not supported".into()));
        }
        if !(self.baseline.alpha > 0.0 && self.baseline.alpha < 1.0) || self.baseline.window == 0 {
            return Err(Error::Config(
                "baseline alpha must lie in (0, 1) and window be positive".into(),
            ));
        }
        if self.noise.num_waves == 0 {
            return Err(Error::Config("num_waves must be positive".into()));
        }
        Ok(())
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let unknown = || Err(Error::Config(format!("unknown key {key:?}")));
        match section {
            "stft" => match key {
                "window_len" => self.stft.window_len = parse(key, v)?,
                "hop" => self.stft.hop = parse(key, v)?,
                "sample_rate" => self.stft.sample_rate = parse(key, v)?,
                "window_kind" if v.eq_ignore_ascii_case("hann") => {}
                "window_kind" => return Err(Error::Config(format!("unsupported window {v:?}"))),
                _ => return unknown(),
            },
            "attention" => match key {
                "num_blocks" => self.attention.num_blocks = parse(key, v)?,
                "num_heads" => self.attention.num_heads = parse(key, v)?,
                "model_dim" => self.attention.model_dim = parse(key, v)?,
                "ff_dim" => self.attention.ff_dim = parse(key, v)?,
                "use_input_linear" => self.attention.use_input_linear = parse_bool(key, v)?,
                "use_output_linear" => self.attention.use_output_linear = parse_bool(key, v)?,
                "dropout" => self.attention.dropout = parse(key, v)?,
                "seed" => self.attention.seed = parse(key, v)?,
                _ => return unknown(),
            },
            "model" => match key {
                "vectorize" => {
                    self.model.vectorize = match v.to_ascii_lowercase().as_str() {
                        "compact" => VectorizeMode::Compact,
                        "full" => VectorizeMode::Full,
                        _ => return Err(Error::Config(format!("vectorize: unknown mode {v:?}"))),
                    }
                }
                "shared" => self.model.shared = parse_bool(key, v)?,
                "scm_form" => self.model.scm_form = v.parse()?,
                "loading" => self.baseline.loading = parse(key, v)?,
                "reference" => self.baseline.reference = parse(key, v)?,
                _ => return unknown(),
            },
            "baseline" => match key {
                "alpha" => self.baseline.alpha = parse(key, v)?,
                "window" => self.baseline.window = parse(key, v)?,
                _ => return unknown(),
            },
            "train" => match key {
                "batch_size" => self.train.batch_size = parse(key, v)?,
                "lr" => self.train.lr = parse(key, v)?,
                "max_epochs" => self.train.max_epochs = parse(key, v)?,
                "max_steps" => self.train.max_steps = parse_opt(key, v)?,
                "early_stop_patience" => self.train.early_stop_patience = parse(key, v)?,
                "lr_patience" => self.train.lr_patience = parse(key, v)?,
                "lr_decay_factor" => self.train.lr_decay_factor = parse(key, v)?,
                "clip_norm" => self.train.clip_norm = parse_opt(key, v)?,
                "seed" => self.train.seed = parse(key, v)?,
                "checkpoint_every" => self.train.checkpoint_every = parse(key, v)?,
                _ => return unknown(),
            },
            "scene" => {
                let s = &mut self.scene;
                match key {
                    "room_length" => s.room_length = parse_range(key, v)?,
                    "room_width" => s.room_width = parse_range(key, v)?,
                    "room_height" => s.room_height = parse_range(key, v)?,
                    "rt60" => s.rt60 = parse_range(key, v)?,
                    "array_height" => s.array_height = parse_range(key, v)?,
                    "source_height" => s.source_height = parse_range(key, v)?,
                    "speed" => s.speed = parse_range(key, v)?,
                    "snr_db" => s.snr_db = parse_range(key, v)?,
                    "duration_s" => s.duration_s = parse_range(key, v)?,
                    "wall_clearance" => s.wall_clearance = parse(key, v)?,
                    "min_source_distance" => s.min_source_distance = parse(key, v)?,
                    "num_templates" => s.num_templates = parse(key, v)?,
                    "template_seed" => s.template_seed = parse(key, v)?,
                    "waypoints" => s.waypoints = parse_opt(key, v)?,
                    _ => return unknown(),
                }
            }
            "simulator" => match key {
                "max_order" => self.ism.max_order = parse_opt(key, v)?,
                "rir_length_s" => self.ism.length_s = parse_opt(key, v)?,
                "absorption" => {
                    self.ism.absorption = match v.to_ascii_lowercase().as_str() {
                        "sabine" => AbsorptionModel::Sabine,
                        "eyring" => AbsorptionModel::Eyring,
                        _ => return Err(Error::Config(format!("absorption: unknown model {v:?}"))),
                    }
                }
                "diffuse_tail_db" => self.ism.diffuse_tail_db = parse_opt(key, v)?,
                "num_waves" => self.noise.num_waves = parse(key, v)?,
                "sensor_db" => self.noise.sensor_db = parse(key, v)?,
                _ => return unknown(),
            },
            "" => return Err(Error::Config(format!("key {key:?} outside a section"))),
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    /// Every effective value, in the file format.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut section = |name: &str, entries: Vec<(&str, String)>| {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        };
        section(
            "stft",
            vec![
                ("window_len", self.stft.window_len.to_string()),
                ("hop", self.stft.hop.to_string()),
                ("window_kind", "hann".into()),
                ("sample_rate", self.stft.sample_rate.to_string()),
            ],
        );
        let a = &self.attention;
        section(
            "attention",
            vec![
                ("num_blocks", a.num_blocks.to_string()),
                ("num_heads", a.num_heads.to_string()),
                ("model_dim", a.model_dim.to_string()),
                ("ff_dim", a.ff_dim.to_string()),
                ("use_input_linear", a.use_input_linear.to_string()),
                ("use_output_linear", a.use_output_linear.to_string()),
                ("dropout", a.dropout.to_string()),
                ("seed", a.seed.to_string()),
            ],
        );
        section(
            "model",
            vec![
                (
                    "vectorize",
                    match self.model.vectorize {
                        VectorizeMode::Compact => "compact".into(),
                        VectorizeMode::Full => "full".into(),
                    },
                ),
                ("shared", self.model.shared.to_string()),
                ("scm_form", self.model.scm_form.name().into()),
                ("loading", self.baseline.loading.to_string()),
                ("reference", self.baseline.reference.to_string()),
            ],
        );
        section(
            "baseline",
            vec![
                ("alpha", self.baseline.alpha.to_string()),
                ("window", self.baseline.window.to_string()),
            ],
        );
        let t = &self.train;
        section(
            "train",
            vec![
                ("batch_size", t.batch_size.to_string()),
                ("lr", t.lr.to_string()),
                ("max_epochs", t.max_epochs.to_string()),
                ("max_steps", opt_str(&t.max_steps)),
                ("early_stop_patience", t.early_stop_patience.to_string()),
                ("lr_patience", t.lr_patience.to_string()),
                ("lr_decay_factor", t.lr_decay_factor.to_string()),
                ("clip_norm", opt_str(&t.clip_norm)),
                ("seed", t.seed.to_string()),
                ("checkpoint_every", t.checkpoint_every.to_string()),
            ],
        );
        let s = &self.scene;
        section(
            "scene",
            vec![
                ("room_length", range_str(&s.room_length)),
                ("room_width", range_str(&s.room_width)),
                ("room_height", range_str(&s.room_height)),
                ("rt60", range_str(&s.rt60)),
                ("array_height", range_str(&s.array_height)),
                ("source_height", range_str(&s.source_height)),
                ("speed", range_str(&s.speed)),
                ("snr_db", range_str(&s.snr_db)),
                ("duration_s", range_str(&s.duration_s)),
                ("wall_clearance", s.wall_clearance.to_string()),
                ("min_source_distance", s.min_source_distance.to_string()),
                ("num_templates", s.num_templates.to_string()),
                ("template_seed", s.template_seed.to_string()),
                ("waypoints", opt_str(&s.waypoints)),
            ],
        );
        section(
            "simulator",
            vec![
                ("max_order", opt_str(&self.ism.max_order)),
                ("rir_length_s", opt_str(&self.ism.length_s)),
                (
                    "absorption",
                    match self.ism.absorption {
                        AbsorptionModel::Sabine => "sabine".into(),
                        AbsorptionModel::Eyring => "eyring".into(),
                    },
                ),
                ("diffuse_tail_db", opt_str(&self.ism.diffuse_tail_db)),
                ("num_waves", self.noise.num_waves.to_string()),
                ("sensor_db", self.noise.sensor_db.to_string()),
            ],
        );
        out
    }

    /// Simulator settings; the sample rate follows the STFT.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            ranges: self.scene.clone(),
            ism: IsmOptions {
                sample_rate: self.stft.sample_rate,
                ..self.ism
            },
            noise: DiffuseOptions {
                sample_rate: self.stft.sample_rate,
                ..self.noise
            },
            noise_file: None,
            speech_files: Vec::new(),
            reference: self.baseline.reference,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let text = "[stft]\nwindow_len = 256\nhop = 64 # quarter\n[scene]\nsnr_db = 5\nwaypoints = 50\n[train]\nclip_norm = none\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.stft.window_len, 256);
        assert_eq!(cfg.scene.snr_db, Range::new(5.0, 5.0));
        assert_eq!(cfg.scene.waypoints, Some(50));
        assert_eq!(cfg.train.clip_norm, None);
        assert_eq!(RunConfig::parse(&cfg.to_ini()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn scm_form_parses_and_echoes() {
        assert_eq!(RunConfig::default().model.scm_form, ScmForm::Gram);
        let cfg = RunConfig::parse("[model]\nscm_form = free\n").unwrap();
        assert_eq!(cfg.model.scm_form, ScmForm::Free);
        assert!(cfg.to_ini().contains("scm_form = free"));
        assert!(RunConfig::parse("[model]\nscm_form = dense\n").is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        assert!(RunConfig::parse("[stft]\nwindow = 3\n").is_err());
        assert!(RunConfig::parse("[nope]\n").is_err());
        assert!(RunConfig::parse("[nope]\na = 1\n").is_err());
        assert!(RunConfig::parse("hop = 64\n").is_err());
        assert!(RunConfig::parse("[stft]\nhop 64\n").is_err());
        assert!(RunConfig::parse("[stft]\nhop = 300\n").is_err());
    }
}
