use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atss::atssnet::{attention_to_csv, load_checkpoint, save_checkpoint, AtssModel, EncoderConfig, ModelError};
use atss::embstore::{read_corpus, split_train_val, write_corpus, Corpus, FrameEmbeddingRecord};
use atss::metrics::evaluate;
use atss::optim::{train_with, write_log, TrainConfig};
use atss::simlat::{build_triplet, export_triplet_csv};
use atss::synthgen::{density_statistic, generate, SynthConfig};
use clap::{Args, Parser, Subcommand};

/// Detect AI-generated video from temporal self-similarity of frame
/// embeddings.
#[derive(Parser, Debug)]
#[command(name = "atss", version)]
struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Train a detector and save the best checkpoint.
    Train(TrainArgs),
    /// Score a corpus and print a JSON metrics report.
    Eval(EvalArgs),
    /// Export one video's three similarity matrices as CSV.
    Simmat(SimmatArgs),
    /// Export one video's head-averaged attention maps as CSV.
    Attn(AttnArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    n_real: usize,
    #[arg(long, default_value_t = 500)]
    n_fake: usize,
    /// Frames per video.
    #[arg(long = "T", default_value_t = 8)]
    frames: usize,
    /// Embedding width.
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 0.85)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    sigma_real: f64,
    #[arg(long, default_value_t = 0.15)]
    sigma_fake: f64,
    #[arg(long, default_value_t = 0.7)]
    rho_cross: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Seeds the split, the initialization and the shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    log_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 32)]
    d_ff: usize,
    #[arg(long, default_value_t = 0.5)]
    factor: f64,
    #[arg(long, default_value_t = 3)]
    patience: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Score only the validation side of the split `train` made with the
    /// same fraction and seed.
    #[arg(long, requires = "seed")]
    val_frac: Option<f64>,
    #[arg(long, requires = "val_frac")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimmatArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    video_id: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AttnArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    video_id: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    /// Bad flags or unusable input files.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    read_corpus(path).map_err(input)
}

fn load_model(path: &Path) -> Result<AtssModel, CliError> {
    load_checkpoint(path).map_err(input)
}

fn find<'a>(corpus: &'a Corpus, id: &str) -> Result<&'a FrameEmbeddingRecord, CliError> {
    corpus.get(id).ok_or_else(|| CliError::Input(format!("video not found: {id}")))
}

/// A model/corpus frame mismatch is the caller's mistake, everything else a
/// failure of ours.
fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::FrameMismatch { .. } => input(e),
        other => internal(other),
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        n_real: a.n_real,
        n_fake: a.n_fake,
        frames: a.frames,
        dim: a.d,
        alpha: a.alpha,
        sigma_real: a.sigma_real,
        sigma_fake: a.sigma_fake,
        rho_cross: a.rho_cross,
        seed: a.seed,
    };
    config.validate().map_err(input)?;
    let corpus = generate(&config).map_err(internal)?;
    write_corpus(&corpus, &a.out).map_err(internal)?;
    println!("wrote {} records ({} real, {} fake) to {}", corpus.len(), a.n_real, a.n_fake, a.out.display());
    if a.frames < 2 || a.n_real == 0 || a.n_fake == 0 {
        return Ok(());
    }
    let mut sums = [[0.0f64; 3]; 2];
    for r in corpus.records() {
        let d = density_statistic(&build_triplet(r).map_err(internal)?).map_err(internal)?;
        for (s, x) in sums[r.label.as_u8() as usize].iter_mut().zip(d.as_array()) {
            *s += x;
        }
    }
    let counts = [a.n_real as f64, a.n_fake as f64];
    println!("mean off-diagonal similarity   real      fake      gap");
    for (k, name) in ["visual", "textual", "cross"].iter().enumerate() {
        let (real, fake) = (sums[0][k] / counts[0], sums[1][k] / counts[1]);
        println!("  {name:<28} {real:>8.4}  {fake:>8.4}  {:>+8.4}", fake - real);
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let train_config = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        factor: a.factor,
        patience: a.patience,
    };
    train_config.validate().map_err(input)?;
    let encoder = EncoderConfig {
        n_layers: a.layers,
        n_heads: a.heads,
        d_model: a.d_model,
        d_ff: a.d_ff,
    };
    encoder.validate().map_err(input)?;

    let corpus = load_corpus(&a.data)?;
    let Some((frames, _)) = corpus.shape() else {
        return Err(CliError::Input(format!("{}: corpus has no records", a.data.display())));
    };
    let (train_set, val_set) = split_train_val(&corpus, a.val_frac, a.seed).map_err(input)?;
    let (real, fake) = val_set.class_counts();
    if real == 0 || fake == 0 {
        return Err(CliError::Input(format!(
            "validation split has {real} real and {fake} fake videos; both classes are needed"
        )));
    }
    println!(
        "training on {} videos, validating on {} (T = {frames})",
        train_set.len(),
        val_set.len()
    );
    let model = AtssModel::init(encoder, frames, a.seed).map_err(input)?;
    let outcome = train_with(model, &train_set, &val_set, &train_config, |e| {
        println!(
            "epoch {:>4}  train_loss {:.6}  val_auc {:.6}  lr {:e}",
            e.epoch, e.train_loss, e.val_auc, e.lr
        );
    })
    .map_err(internal)?;
    save_checkpoint(&outcome.model, &a.model_out).map_err(internal)?;
    if let Some(path) = &a.log_out {
        write_log(&outcome.log, path).map_err(internal)?;
    }
    match (outcome.best_epoch, outcome.best_val_auc) {
        (Some(epoch), Some(auc)) => println!("best val_auc {auc:.6} at epoch {epoch}; saved {}", a.model_out.display()),
        _ => println!("no epochs run; saved the initial model to {}", a.model_out.display()),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let mut corpus = load_corpus(&a.data)?;
    if let (Some(frac), Some(seed)) = (a.val_frac, a.seed) {
        corpus = split_train_val(&corpus, frac, seed).map_err(input)?.1;
    }
    if corpus.is_empty() {
        return Err(CliError::Input(format!("{}: corpus has no records", a.data.display())));
    }
    let report = evaluate(&model, &corpus).map_err(|e| match e {
        atss::metrics::MetricError::Model(m) => model_error(m),
        other => internal(other),
    })?;
    let json = report.to_json();
    match &a.report {
        Some(path) => atss::atomic_write(path, format!("{json}\n").as_bytes())
            .map_err(|e| internal(format!("{}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn simmat(a: SimmatArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&a.data)?;
    let triplet = build_triplet(find(&corpus, &a.video_id)?).map_err(input)?;
    export_triplet_csv(&triplet, &a.out).map_err(internal)?;
    println!("wrote {} ({} frames)", a.out.display(), triplet.frames());
    Ok(())
}

fn attn(a: AttnArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let corpus = load_corpus(&a.data)?;
    let triplet = build_triplet(find(&corpus, &a.video_id)?).map_err(input)?;
    let maps = model.export_attention_density(&triplet).map_err(model_error)?;
    atss::atomic_write(&a.out, attention_to_csv(&maps).as_bytes())
        .map_err(|e| internal(format!("{}: {e}", a.out.display())))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(internal)?;
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Simmat(a) => simmat(a),
        Command::Attn(a) => attn(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
