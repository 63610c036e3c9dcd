use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clsr_cli::config::SplitKind;
use clsr_cli::{commands, CliError, RunConfig};
use clsr_core::{AblationVariant, OptimizerKind};

/// Contrastive latent space reconstruction for audio-text retrieval.
#[derive(Parser)]
#[command(name = "clsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` in the config and `CLSR_SEED`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
}

#[derive(Subcommand)]
enum Command {
    /// Log-mel features for a directory of WAV files.
    Featurize {
        #[arg(long)]
        wav_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sample_rate: Option<u32>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Synthetic paired banks and manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_pairs: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        captions_per_audio: Option<usize>,
    },
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        variant: Option<AblationVariant>,
        /// Suppress per-step progress lines.
        #[arg(long)]
        quiet: bool,
    },
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_split)]
        split: Option<SplitKind>,
    },
    /// Train and score each loss variant.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: TrainFlags,
        /// Comma-separated subset of s,t,k,m,full.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<AblationVariant>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("unknown optimizer {s:?} (adam or sgd)")),
    }
}

fn parse_split(s: &str) -> Result<SplitKind, String> {
    match s {
        "val" => Ok(SplitKind::Val),
        "train" => Ok(SplitKind::Train),
        "all" => Ok(SplitKind::All),
        _ => Err(format!("unknown split {s:?} (val, train or all)")),
    }
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        let cwd = std::env::current_dir().map_err(|e| CliError::Runtime(e.to_string()))?;
        cfg.output_dir = Some(cwd.join(out));
    }
    cfg.resolve_seed(common.seed)?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, flags: &TrainFlags) {
    let t = &mut cfg.train;
    t.epochs = flags.epochs.unwrap_or(t.epochs);
    t.base_lr = flags.lr.unwrap_or(t.base_lr);
    t.batch_size = flags.batch_size.unwrap_or(t.batch_size);
    t.embed_dim = flags.embed_dim.unwrap_or(t.embed_dim);
    t.optimizer = flags.optimizer.unwrap_or(t.optimizer);
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Featurize {
            wav_dir,
            out,
            sample_rate,
            config,
        } => {
            let mut mel = match config {
                Some(path) => RunConfig::load(&path)?.dsp,
                None => Default::default(),
            };
            mel.sample_rate = sample_rate.unwrap_or(mel.sample_rate);
            let bank = commands::featurize(&wav_dir, &out, &mel)?;
            println!("featurize: {} items, dim {} -> {}", bank.len(), bank.dim(), out.display());
        }
        Command::Synth {
            common,
            n_pairs,
            noise_sigma,
            captions_per_audio,
        } => {
            let mut cfg = load(&common)?;
            let s = &mut cfg.synth;
            s.n_pairs = n_pairs.unwrap_or(s.n_pairs);
            s.noise_sigma = noise_sigma.unwrap_or(s.noise_sigma);
            s.captions_per_audio = captions_per_audio.unwrap_or(s.captions_per_audio);
            commands::synth(&mut cfg)?;
        }
        Command::Train {
            common,
            flags,
            variant,
            quiet,
        } => {
            let mut cfg = load(&common)?;
            apply(&mut cfg, &flags);
            cfg.variant = variant.unwrap_or(cfg.variant);
            cfg.validate()?;
            commands::train(&cfg, quiet)?;
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let mut cfg = load(&common)?;
            if let Some(p) = checkpoint {
                let cwd = std::env::current_dir().map_err(|e| CliError::Runtime(e.to_string()))?;
                cfg.eval.checkpoint = Some(cwd.join(p));
            }
            cfg.eval.split = split.unwrap_or(cfg.eval.split);
            cfg.validate()?;
            commands::eval(&cfg)?;
        }
        Command::Ablate {
            common,
            flags,
            variants,
            seeds,
        } => {
            let mut cfg = load(&common)?;
            apply(&mut cfg, &flags);
            if let Some(v) = variants {
                cfg.ablation.variants = v;
            }
            if let Some(s) = seeds {
                cfg.ablation.seeds = s;
            }
            cfg.validate()?;
            commands::ablate(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("clsr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
