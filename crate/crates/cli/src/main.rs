mod commands;
mod config;

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use vore::features::{Rect, SyntheticDatasetSpec};
use vore::search::Method;

use config::PipelineConfig;

#[derive(Parser)]
#[command(name = "vore", version, about = "Region-of-interest image retrieval with multi-level Voronoi cell descriptors")]
struct Cli {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the product-quantized index.
    #[arg(long, global = true)]
    quantized: bool,
    /// Ranking method: fast, global, subquery or root.
    #[arg(long, global = true)]
    method: Option<Method>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Roi,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted objects.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
        /// Number of images.
        #[arg(long)]
        size: Option<usize>,
        /// Number of planted objects (one query each).
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Train the visual vocabulary on the training manifest.
    TrainVocab {
        #[arg(long)]
        allow_overlap: bool,
    },
    /// Train the PCA projection on pooled cell descriptors.
    TrainPca {
        #[arg(long)]
        allow_overlap: bool,
    },
    /// Train the product quantizer (or write the sign-limit model).
    TrainPq {
        #[arg(long)]
        allow_overlap: bool,
    },
    /// Encode every image of the manifest into an index file.
    Encode,
    /// Rank the indexed images against one query feature file.
    Query {
        #[arg(long)]
        features: PathBuf,
        /// Crop the query to X,Y,W,H before encoding.
        #[arg(long)]
        roi: Option<Rect>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Run every query of the query list and report AP, mAP and complexity.
    Eval,
    /// Sweep the number of PQ blocks and print a CSV of mAP and distortion.
    Bench {
        /// Comma-separated block counts; defaults to the configured `bench_m`.
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        #[arg(long)]
        allow_overlap: bool,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::parse("", Path::new("."))?,
    };
    if let Some(s) = cli.seed {
        cfg.params.seed = s;
    }
    if cli.quantized {
        cfg.quantized = true;
    }
    if let Some(m) = cli.method {
        cfg.method = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Synth { out, preset, size, objects, dim } = &cli.command {
        let mut spec = match preset {
            Preset::Default => SyntheticDatasetSpec::default(),
            Preset::Roi => SyntheticDatasetSpec::roi_benchmark(),
        };
        if let Some(n) = size {
            spec.dataset_size = *n;
        }
        if let Some(n) = objects {
            spec.planted_roi_count = *n;
        }
        if let Some(d) = dim {
            spec.descriptor_dim = *d;
        }
        if let Some(s) = cli.seed {
            spec.seed = s;
        }
        return commands::synth(out, &spec);
    }
    let cfg = load_config(&cli).context("invalid configuration")?;
    let stdout = io::stdout();
    match &cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::TrainVocab { allow_overlap } => commands::train_vocab(&cfg, *allow_overlap),
        Command::TrainPca { allow_overlap } => commands::train_pca_cmd(&cfg, *allow_overlap),
        Command::TrainPq { allow_overlap } => commands::train_pq_cmd(&cfg, *allow_overlap),
        Command::Encode => commands::encode(&cfg),
        Command::Query { features, roi, top } => {
            commands::query(&cfg, features, roi.as_ref(), *top, &mut stdout.lock())
        }
        Command::Eval => commands::eval(&cfg, &mut stdout.lock()),
        Command::Bench { m, allow_overlap } => {
            let ms = m.clone().unwrap_or_else(|| cfg.bench_m.clone());
            commands::bench(&cfg, &ms, *allow_overlap, stdout.lock()).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
