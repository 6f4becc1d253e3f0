use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use banzip_core::pipeline::{self, CompressOptions, Container, LatentMode};
use banzip_core::trainer::{self, AttentionSign, EpochLog, TrainObserver};
use banzip_core::{config, verify, ModelSnapshot, TrainConfig};

/// Lossless byte compressor driven by a Bayesian attention network.
#[derive(Parser)]
#[command(name = "banzip", version)]
struct Cli {
    /// Log progress and warnings to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model snapshot on a corpus file.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// key=value file applied before the flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        batch: Option<usize>,
        /// Context length in bytes.
        #[arg(long)]
        ctx: Option<usize>,
        /// Latent dimension.
        #[arg(long)]
        latent: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Byte embedding width of the predictor.
        #[arg(long)]
        embed: Option<usize>,
        /// Hidden layer width of the predictor.
        #[arg(long)]
        hidden: Option<usize>,
        /// Decoder update direction: descent or ascent.
        #[arg(long)]
        sign: Option<AttentionSign>,
    },
    /// Compress a file with a trained model.
    Compress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Store the model inside the container.
        #[arg(long)]
        embed_model: bool,
        /// Sample the latent code with an RNG seeded by the model hash.
        #[arg(long)]
        sample_z: bool,
    },
    /// Restore a compressed file.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        /// Required unless the container embeds its model.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the self-check suite.
    Verify {
        /// Smaller sample counts.
        #[arg(long)]
        quick: bool,
    },
    /// Print a container's header and coding rate.
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
}

struct EpochPrinter;

impl TrainObserver for EpochPrinter {
    fn on_epoch(&mut self, log: &EpochLog) {
        eprintln!("{log}");
    }
}

fn read(path: &Path, what: &str) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {what} {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelSnapshot> {
    ModelSnapshot::load(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { input, out, config: file, epochs, batch, ctx, latent, seed, embed, hidden, sign } => {
            let mut cfg = TrainConfig::default();
            if let Some(file) = file {
                config::load(&file, &mut cfg).with_context(|| format!("bad config file {}", file.display()))?;
            }
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.batch = batch.unwrap_or(cfg.batch);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.arch.context_len = ctx.unwrap_or(cfg.arch.context_len);
            cfg.arch.latent_dim = latent.unwrap_or(cfg.arch.latent_dim);
            cfg.arch.embed_dim = embed.unwrap_or(cfg.arch.embed_dim);
            cfg.arch.hidden = hidden.unwrap_or(cfg.arch.hidden);
            cfg.attention_sign = sign.unwrap_or(cfg.attention_sign);
            let corpus = read(&input, "input")?;
            let snapshot = trainer::train_with(&corpus, &cfg, &mut EpochPrinter).context("training failed")?;
            snapshot.save(&out).with_context(|| format!("cannot write {}", out.display()))?;
            eprintln!("model {:016x} written to {}", snapshot.hash(), out.display());
        }
        Command::Compress { input, model, out, embed_model, sample_z } => {
            let data = read(&input, "input")?;
            let snapshot = load_model(&model)?;
            let latent_mode = if sample_z { LatentMode::Sampled } else { LatentMode::Mean };
            let opts = CompressOptions { embed_model, latent_mode };
            let (bytes, stats) = pipeline::compress_with(&data, &snapshot, &opts).context("compression failed")?;
            write(&out, &bytes)?;
            eprintln!(
                "{} -> {} bytes, payload {:.4} bits/byte",
                data.len(),
                bytes.len(),
                stats.payload_bits_per_byte()
            );
        }
        Command::Decompress { input, model, out } => {
            let bytes = read(&input, "container")?;
            let snapshot = model.as_deref().map(load_model).transpose()?;
            let data = pipeline::decompress(&bytes, snapshot.as_ref()).context("decompression failed")?;
            write(&out, &data)?;
        }
        Command::Verify { quick } => {
            let report = verify::run(quick);
            println!("{report}");
            if !report.all_pass() {
                bail!("verification failed");
            }
        }
        Command::Stats { input } => {
            let bytes = read(&input, "container")?;
            let c = Container::parse(&bytes).context("not a valid container")?;
            let h = &c.header;
            println!("version         {}", h.version);
            println!("context length  {}", h.context_len);
            println!("latent dim      {}", h.latent_dim);
            println!("model hash      {:016x}", h.model_hash);
            println!("embedded model  {}", if h.embedded() { "yes" } else { "no" });
            println!("latent mode     {:?}", h.latent_mode());
            println!("original length {}", h.original_len);
            println!("container bytes {}", bytes.len());
            println!("payload bytes   {}", c.payload.len());
            if h.original_len > 0 {
                let n = h.original_len as f64;
                println!("payload bits/byte   {:.4}", c.payload.len() as f64 * 8.0 / n);
                println!("container bits/byte {:.4}", bytes.len() as f64 * 8.0 / n);
            } else {
                println!("bits/byte       n/a");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Error };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("banzip: {e:#}");
            ExitCode::FAILURE
        }
    }
}
