//! `cpnet`: command-line workbench for the parallel-path video anomaly
//! experiments. Every subcommand works inside a run directory and writes
//! its effective configuration there before touching anything else.

use clap::{Args, Parser, Subcommand};
use cpnet_core::experiment::{
    cmd_ablate, cmd_analyze, cmd_eval, cmd_gen_data, cmd_train, RunConfig,
};
use cpnet_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cpnet",
    version,
    about = "Train, evaluate and cost-account parallel-path future-frame predictors on synthetic video"
)]
struct Cli {
    /// Directory all artifacts live under (created on demand)
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,

    /// Config file (defaults to <run-dir>/config.ini when present)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Raw override, repeatable: section.key=value (e.g. train.epochs=2)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

/// Flag sugar for the most commonly overridden keys.
#[derive(Args, Default)]
struct CommonOverrides {
    /// Master seed (run.seed)
    #[arg(long)]
    seed: Option<u64>,

    /// Model variant: baseline, cpnet075, cpnet037 (model.variant)
    #[arg(long)]
    variant: Option<String>,

    /// Inter-path feature shift: on or off (model.shift)
    #[arg(long)]
    shift: Option<String>,

    /// Training epochs (train.epochs)
    #[arg(long)]
    epochs: Option<usize>,

    /// Number of training videos to generate (video.train_videos)
    #[arg(long)]
    videos: Option<usize>,

    /// Decision threshold in (0,1) (eval.gamma)
    #[arg(long)]
    gamma: Option<f64>,

    /// Numeric precision: f32 or f64 (run.precision)
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/test corpus into <run-dir>/data
    GenData {
        #[command(flatten)]
        common: CommonOverrides,
        /// Wipe and regenerate an already-populated data directory
        #[arg(long)]
        force: bool,
    },
    /// Train the configured variant; writes checkpoint and epoch log
    Train {
        #[command(flatten)]
        common: CommonOverrides,
        /// Continue from the existing checkpoint instead of starting over
        #[arg(long)]
        resume: bool,
    },
    /// Score the test videos with the trained variant; writes CSVs + report
    Eval {
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Cost-account all variants; writes per-variant reports + ratio table
    Analyze {
        #[command(flatten)]
        common: CommonOverrides,
    },
    /// Train + evaluate every ablation variant and write one summary table
    Ablate {
        #[command(flatten)]
        common: CommonOverrides,
        /// Comma-separated subset of rows (ablate.variants)
        #[arg(long)]
        variants: Option<String>,
    },
}

fn collect_overrides(cli_set: &[String], common: &CommonOverrides) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for raw in cli_set {
        let (k, v) = raw.split_once('=').ok_or_else(|| {
            Error::Usage(format!("--set {raw:?} must look like section.key=value"))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    push("run.seed", common.seed.map(|v| v.to_string()));
    push("model.variant", common.variant.clone());
    push("model.shift", common.shift.clone());
    push("train.epochs", common.epochs.map(|v| v.to_string()));
    push("video.train_videos", common.videos.map(|v| v.to_string()));
    push("eval.gamma", common.gamma.map(|v| v.to_string()));
    push("run.precision", common.precision.clone());
    Ok(out)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let (common, extra): (&CommonOverrides, Vec<(String, String)>) = match &cli.command {
        Command::GenData { common, .. } => (common, vec![]),
        Command::Train { common, .. } => (common, vec![]),
        Command::Eval { common } => (common, vec![]),
        Command::Analyze { common } => (common, vec![]),
        Command::Ablate { common, variants } => (
            common,
            variants
                .iter()
                .map(|v| ("ablate.variants".to_string(), v.clone()))
                .collect(),
        ),
    };
    let mut overrides = collect_overrides(&cli.set, common)?;
    overrides.extend(extra);
    let cfg = RunConfig::load(&cli.run_dir, cli.config.as_deref(), &overrides)?;

    match &cli.command {
        Command::GenData { force, .. } => {
            cmd_gen_data(&cfg, *force)?;
        }
        Command::Train { resume, .. } => {
            cmd_train(&cfg, *resume)?;
        }
        Command::Eval { .. } => {
            cmd_eval(&cfg)?;
        }
        Command::Analyze { .. } => {
            cmd_analyze(&cfg)?;
        }
        Command::Ablate { .. } => {
            cmd_ablate(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: [{}] {e}", e.category());
            ExitCode::from(match e.category() {
                "usage" | "config" => 2,
                "data" => 3,
                "numeric" => 4,
                "io" | "checkpoint" => 5,
                _ => 1,
            })
        }
    }
}
