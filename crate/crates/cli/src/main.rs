mod artifacts;
mod config;
mod error;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use labelfree::reward::RewardMode;

use crate::config::{Overrides, PipelineConfig};
use crate::error::StageError;
use crate::stages::{Context, RewardArgs};

/// Label-free profiling pipeline. Stages exchange files under the work
/// directory; run them in order gen, synthesize, vote, calibrate, then any of
/// build-sft, filter, reference, reward, evaluate, sweep, plot.
#[derive(Parser)]
#[command(name = "labelfree", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    stage: Stage,
}

#[derive(Args)]
struct Global {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides paths.work_dir.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Samples per record.
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Confidence threshold 1..5.
    #[arg(long, global = true)]
    tau: Option<i64>,
    /// confidence_weighted, majority or single_sample.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// original, uniform, vee, wedge or m_shape.
    #[arg(long, global = true)]
    shape: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// mock or http_chat.
    #[arg(long, global = true)]
    backend: Option<String>,
}

#[derive(Subcommand)]
enum Stage {
    /// Write a synthetic gold-labelled corpus.
    Gen {
        #[arg(long)]
        records: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Sample M annotations per record from the backend.
    Synthesize,
    /// Aggregate each record's samples into voted tags.
    Vote,
    /// Fit per-dimension calibration tables and relevel the votes.
    Calibrate,
    /// Render voted results as prompt/target training pairs.
    BuildSft,
    /// Subsample the corpus toward a difficulty histogram shape.
    Filter,
    /// Freeze per-record reference confidences for reward weighting.
    Reference,
    /// Score rollout groups.
    Reward {
        /// frozen or self; replaces the mode of every request.
        #[arg(long)]
        mode: Option<String>,
        /// Use the raw-sample store as rollout groups instead of a request file.
        #[arg(long)]
        from_raw: bool,
        /// Serve JSON-line requests on this address instead.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Precision, recall and F1 against gold at the configured threshold.
    Evaluate {
        /// Score every sample on its own and pool the counts.
        #[arg(long)]
        per_sample: bool,
    },
    /// Evaluate at every threshold 1..5.
    Sweep,
    /// Draw the sweep as SVG.
    Plot,
}

fn run(cli: Cli) -> Result<(), StageError> {
    let g = &cli.global;
    let mut config = PipelineConfig::load(g.config.as_deref())?;
    if let Stage::Gen { records, noise } = &cli.stage {
        if let Some(n) = records {
            config.gen.records = *n;
        }
        if let Some(noise) = noise {
            config.gen.noise = *noise;
        }
    }
    let mut reward_mode = None;
    if let Stage::Reward { mode: Some(mode), .. } = &cli.stage {
        let mode: RewardMode = mode.parse().map_err(|e: labelfree::reward::RewardError| StageError::Config(e.to_string()))?;
        config.mode = mode;
        reward_mode = Some(mode);
    }
    config.apply(&Overrides {
        m: g.m,
        tau: g.tau,
        strategy: g.strategy.clone(),
        shape: g.shape.clone(),
        seed: g.seed,
        backend: g.backend.clone(),
        work_dir: g.work_dir.clone(),
    })?;
    let ctx = Context::new(config)?;
    log::debug!("config fingerprint {}", ctx.fingerprint);
    match cli.stage {
        Stage::Gen { .. } => stages::gen(&ctx),
        Stage::Synthesize => stages::synthesize(&ctx),
        Stage::Vote => stages::vote(&ctx),
        Stage::Calibrate => stages::calibrate(&ctx),
        Stage::BuildSft => stages::build_sft(&ctx),
        Stage::Filter => stages::filter(&ctx),
        Stage::Reference => stages::reference(&ctx),
        Stage::Reward { from_raw, listen, .. } => stages::reward(
            &ctx,
            &RewardArgs {
                mode_override: reward_mode,
                from_raw,
                listen,
            },
        ),
        Stage::Evaluate { per_sample } => stages::evaluate(&ctx, per_sample),
        Stage::Sweep => stages::sweep(&ctx),
        Stage::Plot => stages::plot(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
