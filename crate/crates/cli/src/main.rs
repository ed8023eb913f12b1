//! `adsf`: simulate datasets, enhance recordings, train and evaluate the
//! spatial filters.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adsf_core::config::RunConfig;
use adsf_core::eval::{enhance_example, score, EvalReport};
use adsf_core::grid::read_grid;
use adsf_core::masking::{FixedMaskProvider, Mask, MaskProvider, OracleMaskProvider};
use adsf_core::model::{ModelConfig, SpatialModel, Variant};
use adsf_core::pipeline::{Enhancer, Method};
use adsf_core::simulator::dataset::{generate_dataset, Manifest, MANIFEST_NAME};
use adsf_core::stft::{analyze, synthesize, StftConfig};
use adsf_core::train::{Example, TrainItem, Trainer, LOSS_CSV};
use adsf_core::wav::{read_wav, write_wav, WavFormat};
use adsf_core::{Error, Result};
use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand};
use ndarray::{s, ArrayView2};
use rayon::prelude::*;

const THREADS_ENV: &str = "BEAMFORM_NUM_THREADS";
const CONFIG_ECHO: &str = "config.ini";

#[derive(Parser)]
#[command(
    name = "adsf",
    version,
    about = "Attention-driven spatial filtering for moving talkers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multichannel dataset with a JSON-lines manifest.
    Simulate(SimulateArgs),
    /// Enhance a WAV file or every utterance of a manifest.
    Enhance(EnhanceArgs),
    /// Train a learned variant; rerunning on the same directory resumes.
    Train(TrainArgs),
    /// Score a method on a manifest and write a CSV report.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("motion").required(true).args(["dynamic", "static_"])))]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    /// Moving sources.
    #[arg(long)]
    dynamic: bool,
    /// Sources fixed at the first trajectory point.
    #[arg(long = "static")]
    static_: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Multichannel noise recording replacing the synthetic diffuse field.
    #[arg(long)]
    noise_file: Option<PathBuf>,
    /// Dry speech recordings replacing the synthetic source (repeatable).
    #[arg(long)]
    speech_file: Vec<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    /// Multichannel WAV or manifest (`.jsonl`).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Clean reference-channel speech for oracle masks and scoring (WAV input).
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Speech mask grid `[F, T]` for mask-based methods (WAV input).
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `[train] max_steps`.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Report CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Enhance(a) => {
            check_checkpoint(a.method, a.checkpoint.as_deref());
            enhance(a)
        }
        Command::Train(a) => train(a),
        Command::Evaluate(a) => {
            check_checkpoint(a.method, a.checkpoint.as_deref());
            evaluate(a)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn init_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Learned methods need a checkpoint and baselines must not get one.
fn check_checkpoint(method: Method, checkpoint: Option<&Path>) {
    let msg = match (method.is_learned(), checkpoint.is_some()) {
        (true, false) => format!("method {method} requires --checkpoint"),
        (false, true) => format!("method {method} does not take --checkpoint"),
        _ => return,
    };
    Cli::command()
        .error(ErrorKind::ArgumentConflict, msg)
        .exit();
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn echo_config(cfg: &RunConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_ini())?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut sim = cfg.sim_config();
    sim.noise_file = a.noise_file;
    sim.speech_files = a.speech_file;
    fs::create_dir_all(&a.out)?;
    echo_config(&cfg, &a.out.join(CONFIG_ECHO))?;
    let records = generate_dataset(&a.out, a.count, a.dynamic, a.seed, &sim)?;
    println!(
        "wrote {} {} utterances to {}",
        records.len(),
        if a.dynamic { "dynamic" } else { "static" },
        a.out.join(MANIFEST_NAME).display()
    );
    Ok(())
}

/// Enhancer and the STFT it runs on.
fn build_enhancer(
    method: Method,
    checkpoint: Option<&Path>,
    cfg: &RunConfig,
) -> Result<(Enhancer, StftConfig)> {
    match (method, checkpoint) {
        (Method::Learned(v), Some(path)) => {
            let model = SpatialModel::load(BufReader::new(File::open(path)?))?;
            if model.variant() != v {
                return Err(Error::Config(format!(
                    "checkpoint holds a {} model, not {v}",
                    model.variant()
                )));
            }
            let stft = model.stft;
            Ok((Enhancer::Learned(Box::new(model)), stft))
        }
        _ => Ok((Enhancer::baseline(method, cfg.baseline)?, cfg.stft)),
    }
}

fn reference_of(enhancer: &Enhancer) -> usize {
    match enhancer {
        Enhancer::Learned(m) => m.config.reference,
        Enhancer::Identity { reference } => *reference,
        Enhancer::Baseline { config, .. } => config.reference,
    }
}

fn is_manifest(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn load_examples(manifest: &Manifest, reference: usize, stft: &StftConfig) -> Result<Vec<Example>> {
    (0..manifest.records.len())
        .into_par_iter()
        .map(|i| {
            let rec = &manifest.records[i];
            let u = manifest.load(i)?;
            if u.sample_rate != stft.sample_rate {
                return Err(Error::InvalidInput(format!(
                    "{}: sample rate {} differs from the STFT rate {}",
                    rec.id, u.sample_rate, stft.sample_rate
                )));
            }
            Example::new(
                rec.id.clone(),
                u.mixture.view(),
                u.speech.view(),
                reference,
                stft,
            )
        })
        .collect()
}

fn enhance(a: EnhanceArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let (enhancer, stft) = build_enhancer(a.method, a.checkpoint.as_deref(), &cfg)?;
    let reference = reference_of(&enhancer);
    fs::create_dir_all(&a.out)?;
    echo_config(&cfg, &a.out.join(CONFIG_ECHO))?;
    if is_manifest(&a.input) {
        let manifest = Manifest::read(&a.input)?;
        let examples = load_examples(&manifest, reference, &stft)?;
        let rows = examples
            .par_iter()
            .map(|ex| {
                let y = enhance_example(&enhancer, ex, &OracleMaskProvider)?;
                let path = a.out.join(format!("{}_enhanced.wav", ex.id));
                write_wav(
                    path,
                    ArrayView2::from_shape((1, y.len()), &y)
                        .map_err(|e| Error::InvalidInput(e.to_string()))?,
                    stft.sample_rate,
                    WavFormat::Float32,
                )?;
                score(ex, &y)
            })
            .collect::<Result<Vec<_>>>()?;
        let report = EvalReport::new(a.method.name(), a.input.display().to_string(), rows)?;
        report.write_csv(a.out.join("metrics.csv"))?;
        println!(
            "enhanced {} utterances; mean SDR {:.2} dB",
            report.rows.len(),
            report.mean_sdr
        );
        return Ok(());
    }

    let audio = read_wav(&a.input)?;
    if audio.sample_rate != stft.sample_rate {
        return Err(Error::InvalidInput(format!(
            "{}: sample rate {} differs from the STFT rate {}",
            a.input.display(),
            audio.sample_rate,
            stft.sample_rate
        )));
    }
    let stem = a
        .input
        .file_stem()
        .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned());
    let mixture = analyze(audio.samples.view(), &stft)?;
    let example = match &a.clean {
        Some(path) => {
            let clean = read_wav(path)?;
            if clean.samples.ncols() != audio.samples.ncols() {
                return Err(Error::InvalidInput(
                    "clean and mixture lengths differ".into(),
                ));
            }
            let row = clean.samples.slice(s![0..1, ..]).to_owned();
            Some(Example {
                id: stem.clone(),
                clean: analyze(row.view(), &stft)?,
                target: row.row(0).to_vec(),
                mixture: mixture.clone(),
                reference,
            })
        }
        None => None,
    };
    let fixed;
    let masks: &dyn MaskProvider = match &a.mask {
        Some(path) => {
            fixed = FixedMaskProvider(Mask::new(read_grid(BufReader::new(File::open(path)?))?)?);
            &fixed
        }
        None => &OracleMaskProvider,
    };
    let z = enhancer.enhance(&mixture, example.as_ref().map(|e| &e.clean), masks)?;
    let y = synthesize(&z)?;
    let out_path = a.out.join(format!("{stem}_enhanced.wav"));
    write_wav(&out_path, y.view(), stft.sample_rate, WavFormat::Float32)?;
    if let Some(ex) = example {
        let report = EvalReport::new(
            a.method.name(),
            a.input.display().to_string(),
            vec![score(&ex, &y.row(0).to_vec())?],
        )?;
        report.write_csv(a.out.join("metrics.csv"))?;
    }
    println!("wrote {}", out_path.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(steps) = a.steps {
        cfg.train.max_steps = Some(steps);
    }
    let train_set = Manifest::read(&a.data)?;
    let val_set = Manifest::read(&a.val)?;
    if train_set.records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: empty manifest",
            a.data.display()
        )));
    }
    let num_channels = train_set.load(0)?.mixture.nrows();
    fs::create_dir_all(&a.out)?;
    echo_config(&cfg, &a.out.join(CONFIG_ECHO))?;

    let mut trainer = if Trainer::can_resume(&a.out) {
        let t = Trainer::resume(&a.out, cfg.train.clone())?;
        if t.model.variant() != a.variant {
            return Err(Error::Config(format!(
                "{} holds a {} run, not {}",
                a.out.display(),
                t.model.variant(),
                a.variant
            )));
        }
        println!("resuming at step {}", t.state.step);
        t
    } else {
        let mut mc = ModelConfig::new(a.variant, cfg.attention.clone());
        mc.vectorize = cfg.model.vectorize;
        mc.shared = cfg.model.shared;
        mc.scm_form = cfg.model.scm_form;
        mc.loading = cfg.baseline.loading;
        mc.reference = cfg.baseline.reference;
        Trainer::new(
            SpatialModel::new(mc, cfg.stft, num_channels)?,
            cfg.train.clone(),
        )?
    };
    let model = &trainer.model;
    let reference = model.config.reference;
    let items = |m: &Manifest| -> Result<Vec<TrainItem>> {
        load_examples(m, reference, &model.stft)?
            .iter()
            .map(|ex| TrainItem::new(model, ex, &OracleMaskProvider))
            .collect()
    };
    let train_items = items(&train_set)?;
    let val_items = items(&val_set)?;
    let reason = trainer.run(&train_items, &val_items, Some(&a.out), |r| {
        match r.val_loss {
            Some(v) => println!(
                "step {} epoch {} loss {:.3} val {:.3} lr {:.2e}",
                r.step, r.epoch, r.train_loss, v, r.lr
            ),
            None => println!("step {} epoch {} loss {:.3}", r.step, r.epoch, r.train_loss),
        }
    })?;
    println!(
        "stopped ({reason:?}) after {} steps; loss curve in {}",
        trainer.state.step,
        a.out.join(LOSS_CSV).display()
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let (enhancer, stft) = build_enhancer(a.method, a.checkpoint.as_deref(), &cfg)?;
    let manifest = Manifest::read(&a.data)?;
    let examples = load_examples(&manifest, reference_of(&enhancer), &stft)?;
    let report = adsf_core::eval::evaluate(
        &enhancer,
        &examples,
        &OracleMaskProvider,
        &a.data.display().to_string(),
    )?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    report.write_csv(&a.out)?;
    echo_config(&cfg, &a.out.with_extension("config.ini"))?;
    println!(
        "{}: mean SDR {:.2} dB, SI-SDR {:.2} dB over {} utterances",
        report.method,
        report.mean_sdr,
        report.mean_si_sdr,
        report.rows.len()
    );
    Ok(())
}
