use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use handfit::error::{Error, Result};
use handfit::pipeline::{
    cmd_eval, cmd_fit, cmd_synth, cmd_train_prior, PipelineConfig, StageSelect,
};
use handfit::prior::PriorKind;
use log::{error, info};

/// Hand motion recovery from 2D keypoints.
#[derive(Parser)]
#[command(name = "handfit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Stages to run: 1, 2 or both.
    #[arg(long, global = true)]
    stage: Option<StageSelect>,
    /// Prior variant: none, pca, gmm or latent.
    #[arg(long, global = true)]
    prior: Option<PriorKind>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a motion to detections and an initialization.
    Fit,
    /// Train a motion prior.
    TrainPrior,
    /// Write a synthetic benchmark sequence.
    Synth,
    /// Compare a predicted motion against ground truth.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = c.stage {
        cfg.fit.stage = s;
    }
    if let Some(p) = c.prior {
        cfg.prior = p;
    }
    if let Some(o) = &c.out {
        cfg.paths.output = o.clone();
    }
    if let Command::Eval { pred, gt } = &cli.command {
        cfg.paths.pred = pred.clone().or(cfg.paths.pred);
        cfg.paths.gt = gt.clone().or(cfg.paths.gt);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    let out = cfg.paths.output.display();
    match cli.command {
        Command::Fit => {
            let r = cmd_fit(&cfg)?.report;
            info!(
                "fitted {} frames with the {} prior ({} masked, {} fallback) into {out}",
                r.frames,
                r.prior,
                r.masked_frames.len(),
                r.fallback_frames.len()
            );
        }
        Command::TrainPrior => {
            let r = cmd_train_prior(&cfg)?;
            info!(
                "trained {} prior on {} clips from {} sequences",
                r.variant, r.clips, r.sequences
            );
        }
        Command::Synth => {
            cmd_synth(&cfg)?;
            info!("wrote synthetic sequence to {out}");
        }
        Command::Eval { .. } => {
            let m = cmd_eval(&cfg)?;
            println!(
                "PA-MPJPE {:.3} mm  RA-MPJPE {:.3} mm  RA-ACC {}  F@5 {:.3}  F@15 {:.3}",
                m.pa_mpjpe_mm,
                m.ra_mpjpe_mm,
                m.ra_acc_mm_s2
                    .map_or("n/a".into(), |a| format!("{a:.3} mm/s^2")),
                m.pa_f5,
                m.pa_f15
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(code(&e))
        }
    }
}

fn code(e: &Error) -> u8 {
    u8::try_from(e.exit_code()).unwrap_or(1)
}
