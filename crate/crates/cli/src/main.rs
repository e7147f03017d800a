use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specshift::config::RunConfig;
use specshift::Result;
use specshift_cli::{cmd_ablate, cmd_eval, cmd_shift, cmd_stats, cmd_synth, cmd_train, Output};

#[derive(Parser)]
#[command(name = "specshift", version, about = "Frequency stability scoring, spectral re-weighting and shift diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit stability scores and per-frequency statistics on the training split.
    Stats(Common),
    /// Train a pipeline and save its checkpoint and history.
    Train(Common),
    /// Evaluate a checkpoint on the test split over the alpha and EMA sweep.
    Eval(Common),
    /// Per-frequency train/test shift, before and after a checkpoint's transform.
    Shift(Common),
    /// Run the window x keep x metric ablation grid.
    Ablate(Common),
    /// Write the synthetic shift benchmark as CSV.
    Synth(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV path, or `synthetic`.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    backbone: Option<String>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| specshift::Error::Config(format!("--set expects key=value, got `{kv}`")))?;
            cfg.set(k.trim(), v)?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("data", self.data.clone()),
            ("method", self.method.clone()),
            ("backbone", self.backbone.clone()),
            ("horizon", self.horizon.map(|v| v.to_string())),
            ("lookback", self.lookback.map(|v| v.to_string())),
            ("checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<Output> {
    let (cmd, common): (fn(&RunConfig) -> Result<Output>, _) = match cli.command {
        Command::Stats(c) => (cmd_stats, c),
        Command::Train(c) => (cmd_train, c),
        Command::Eval(c) => (cmd_eval, c),
        Command::Shift(c) => (cmd_shift, c),
        Command::Ablate(c) => (cmd_ablate, c),
        Command::Synth(c) => (cmd_synth, c),
    };
    cmd(&common.resolve()?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            for line in &out.log {
                eprintln!("{line}");
            }
            for f in &out.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
