//! `stereoqual`: score, train, evaluate and generate data for the stereo
//! quality predictor.
//!
//! Exit status is 0 on success, 1 on operational errors (I/O, formats,
//! numerics) and 2 on usage errors. Results go to stdout, diagnostics to stderr.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use stereoqual::audio::manifest_base;
use stereoqual::conditioning::{dual_mono, ChannelSet};
use stereoqual::evaluation::{builder_for, evaluate, score_pair, EvalOptions};
use stereoqual::model::CHECKPOINT_VERSION;
use stereoqual::synth::{default_degradations, gen_dataset, write_sources, DegradationSpec, MANIFEST_NAME};
use stereoqual::training::{load_pairs, train_with_progress, TrainConfig};
use stereoqual::{
    load_checkpoint, load_wav, read_manifest, save_checkpoint, transfer_from_mono, AudioExcerpt, FrontendConfig,
    GammatoneFrontend, InputLayout, Model32, ModelCheckpoint, ModelConfig, QualityNet, TransferMode,
};

#[derive(Parser)]
#[command(name = "stereoqual", version, about = "Full-reference quality prediction for coded stereo audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict the MUSHRA score of a coded file against its reference.
    Score(ScoreArgs),
    /// Train a model on a rated-pair manifest.
    Train(TrainArgs),
    /// Score every row of a manifest and report correlations.
    Eval(EvalArgs),
    /// Generate a degraded, proxy-labelled dataset from source WAVs.
    Gen(GenArgs),
    /// Write the Gammatone spectrogram of one channel as a GTSG matrix file.
    Spectrogram(SpectrogramArgs),
}

#[derive(clap::Args)]
struct ScoreArgs {
    /// Reference WAV (48 kHz).
    reference: PathBuf,
    /// Coded WAV, time-aligned with the reference.
    coded: PathBuf,
    /// Model checkpoint.
    #[arg(short = 'm', long = "model")]
    checkpoint: PathBuf,
    /// Print a single-line JSON object instead of the bare score.
    #[arg(long)]
    json: bool,
    /// Accept mono inputs by scoring them as L = R stereo.
    #[arg(long)]
    dual_mono: bool,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// JSONL manifest of rated pairs; paths resolve relative to its directory.
    manifest: PathBuf,
    /// TOML training configuration; omitted keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Where to write the trained checkpoint.
    #[arg(short, long)]
    out: PathBuf,
    /// Per-epoch history CSV [default: <out>.csv].
    #[arg(long)]
    history: Option<PathBuf>,
    /// Network size.
    #[arg(long, value_enum, default_value_t = Size::Full)]
    model: Size,
    /// Input planes.
    #[arg(long, value_enum, default_value_t = Layout::Stereo)]
    layout: Layout,
    /// Initialize the first blocks from a trained mono checkpoint.
    #[arg(long, value_name = "CKPT")]
    init_from_mono: Option<PathBuf>,
    /// How mono kernels are spread over the stereo input planes.
    #[arg(long, value_enum, default_value_t = Transfer::MonoPreserving, requires = "init_from_mono")]
    transfer_mode: Transfer,
    /// Widen mono manifest rows to L = R stereo.
    #[arg(long)]
    dual_mono: bool,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: logical cores].
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// JSONL manifest of rated pairs; paths resolve relative to its directory.
    manifest: PathBuf,
    /// Model checkpoint.
    #[arg(short = 'm', long = "model")]
    checkpoint: PathBuf,
    /// Score mono rows as L = R stereo.
    #[arg(long)]
    dual_mono: bool,
    /// Write the single-line JSON report here.
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
    /// Write per-row predictions as CSV.
    #[arg(long, value_name = "PATH")]
    rows_csv: Option<PathBuf>,
    /// Worker threads [default: logical cores].
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct GenArgs {
    /// Directory of 48 kHz source WAVs.
    source_dir: PathBuf,
    /// Output directory for degraded files and the manifest.
    out_dir: PathBuf,
    /// Seed for the noise conditions (and synthesized sources).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// First write this many synthetic stereo sources into the source directory.
    #[arg(long, value_name = "N")]
    synthesize: Option<usize>,
    /// Length of synthesized sources in seconds.
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
    /// JSON array of degradation specs replacing the defaults.
    #[arg(long, value_name = "PATH")]
    degradations: Option<PathBuf>,
    /// Worker threads [default: logical cores].
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct SpectrogramArgs {
    /// Input WAV (48 kHz).
    wav: PathBuf,
    /// Output GTSG file.
    out: PathBuf,
    /// Signal to analyse; stereo input defaults to mid.
    #[arg(long, value_enum)]
    channel: Option<Channel>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Size {
    Full,
    Compact,
    Tiny,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Stereo,
    StereoNoMid,
    Mono,
}

impl From<Layout> for InputLayout {
    fn from(l: Layout) -> Self {
        match l {
            Layout::Stereo => InputLayout::Stereo,
            Layout::StereoNoMid => InputLayout::StereoNoMid,
            Layout::Mono => InputLayout::Mono,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Transfer {
    MonoPreserving,
    ReplicateRandomS,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channel {
    Left,
    Right,
    Mid,
    Side,
}

/// Errors reported with exit status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(a) => score(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gen(a) => gen(a),
        Command::Spectrogram(a) => spectrogram(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelCheckpoint<f32>> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn layout_name(layout: InputLayout) -> &'static str {
    match layout {
        InputLayout::Stereo => "stereo",
        InputLayout::StereoNoMid => "stereo_no_mid",
        InputLayout::Mono => "mono",
    }
}

#[derive(Serialize)]
struct ScoreJson {
    score: f64,
    raw_score: f64,
    frames: usize,
    model_version: String,
}

fn score(args: ScoreArgs) -> Result<()> {
    let ckpt = load_model(&args.checkpoint)?;
    let layout = ckpt.model.config().layout;
    let mut reference: AudioExcerpt<f32> = load_wav(&args.reference)?;
    let mut coded: AudioExcerpt<f32> = load_wav(&args.coded)?;
    if layout != InputLayout::Mono {
        for (name, x) in [("reference", &mut reference), ("coded", &mut coded)] {
            if !x.is_stereo() {
                if !args.dual_mono {
                    return Err(usage(format!(
                        "{name} has {} channel(s); pass --dual-mono to score mono input",
                        x.num_channels()
                    )));
                }
                *x = dual_mono(x)?;
            }
        }
    }
    let builder = builder_for(&ckpt.model, ckpt.frontend)?.with_min_frames(ckpt.inference_frames());
    let s = score_pair(&ckpt.model, &builder, &reference, &coded, ckpt.metadata.target_scale)?;
    if args.json {
        let out = ScoreJson {
            score: s.score,
            raw_score: s.raw_score,
            frames: s.frames,
            model_version: format!("v{CHECKPOINT_VERSION}-{}-e{}", layout_name(layout), ckpt.metadata.epochs),
        };
        println!("{}", serde_json::to_string(&out)?);
    } else {
        println!("{:.1}", s.score);
    }
    Ok(())
}

fn model_config(size: Size, layout: InputLayout) -> ModelConfig {
    match size {
        Size::Full => ModelConfig::full(layout),
        Size::Compact => ModelConfig::compact(layout),
        Size::Tiny => ModelConfig::tiny(layout),
    }
}

fn train(args: TrainArgs) -> Result<()> {
    set_threads(args.threads)?;
    let mut config = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;

    let layout = InputLayout::from(args.layout);
    let model_cfg = model_config(args.model, layout);
    let (model, frontend): (Model32, FrontendConfig) = match &args.init_from_mono {
        Some(path) => {
            let mono = load_model(path)?;
            let mode = match args.transfer_mode {
                Transfer::MonoPreserving => TransferMode::MonoPreserving,
                Transfer::ReplicateRandomS => TransferMode::ReplicateRandomS,
            };
            (transfer_from_mono(&mono.model, &model_cfg, mode, config.seed)?, mono.frontend)
        }
        None => {
            let frontend = FrontendConfig {
                num_bands: model_cfg.bands,
                ..FrontendConfig::default()
            };
            (QualityNet::build(model_cfg, config.seed)?, frontend)
        }
    };

    let rows = read_manifest(&args.manifest)?;
    let pairs = load_pairs::<f32>(&rows, &manifest_base(&args.manifest), args.dual_mono)?;
    eprintln!(
        "training {} parameters on {} pairs: {} folds x {} epochs",
        model.count_params(),
        pairs.len(),
        config.folds,
        config.epochs_per_fold
    );
    let outcome = train_with_progress(model, &pairs, frontend, &config, &mut |e| {
        let val = match (e.val_loss, e.val_mse) {
            (Some(l), Some(m)) => format!("  val_loss {l:.6}  val_mse {m:.2}"),
            _ => String::new(),
        };
        println!("fold {} epoch {:>3} step {:>6}  train_loss {:.6}{val}", e.fold, e.epoch, e.step, e.train_loss);
    })?;

    save_checkpoint(&outcome.checkpoint, &args.out)?;
    let history = args.history.unwrap_or_else(|| args.out.with_extension("csv"));
    outcome.history.write_csv(&history)?;
    eprintln!("wrote {} and {}", args.out.display(), history.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    set_threads(args.threads)?;
    let ckpt = load_model(&args.checkpoint)?;
    let rows = read_manifest(&args.manifest)?;
    let options = EvalOptions::for_checkpoint(&ckpt, args.dual_mono);
    let report = evaluate(&ckpt.model, ckpt.frontend, &rows, &manifest_base(&args.manifest), &options)?;
    print!("{}", report.table());
    if let Some(path) = &args.json {
        std::fs::write(path, report.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.rows_csv {
        report.write_rows_csv(path)?;
    }
    Ok(())
}

fn gen(args: GenArgs) -> Result<()> {
    set_threads(args.threads)?;
    if let Some(n) = args.synthesize {
        if args.seconds.is_nan() || args.seconds <= 0.0 {
            return Err(usage("--seconds must be positive"));
        }
        write_sources(&args.source_dir, n, args.seconds, args.seed)?;
    }
    let specs: Vec<DegradationSpec> = match &args.degradations {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => default_degradations(),
    };
    let rows = gen_dataset(&args.source_dir, &args.out_dir, &specs, args.seed)?;
    eprintln!("{} rows", rows.len());
    println!("{}", args.out_dir.join(MANIFEST_NAME).display());
    Ok(())
}

fn spectrogram(args: SpectrogramArgs) -> Result<()> {
    let audio: AudioExcerpt<f32> = load_wav(&args.wav)?;
    let signal = match (audio.num_channels(), args.channel) {
        (1, None) => audio.channel(0).to_vec(),
        (1, Some(_)) => return Err(usage("--channel applies to stereo input only")),
        (_, channel) => {
            let set = ChannelSet::from_excerpt(&audio)?;
            match channel.unwrap_or(Channel::Mid) {
                Channel::Left => set.left,
                Channel::Right => set.right,
                Channel::Mid => set.mid,
                Channel::Side => set.side,
            }
        }
    };
    let frontend = GammatoneFrontend::<f32>::new(FrontendConfig::default())?;
    let spec = frontend.compute_at_rate(&signal, audio.sample_rate())?;
    spec.write_gtsg(&args.out)?;
    println!("{} x {}", spec.num_bands, spec.num_frames);
    Ok(())
}
