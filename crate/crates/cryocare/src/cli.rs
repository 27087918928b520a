//! Argument parsing and process exit handling.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use cryocare_core::pairing::Scheme;

use crate::config::PipelineConfig;
use crate::run::{self, Context, Stage};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "cryocare", version, about = "Noise2Noise restoration of cryo-TEM tilt series and tomograms")]
pub struct Cli {
    /// Config file, or `demo` for the bundled demo configuration.
    #[arg(long, global = true, env = "CRYOCARE_CONFIG", default_value = "demo")]
    pub config: String,
    /// Run seed; overrides the config.
    #[arg(long, global = true, env = "CRYOCARE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Never changes results.
    #[arg(long, global = true, env = "CRYOCARE_THREADS")]
    pub threads: Option<usize>,
    /// Pairing scheme: p2p-ip, p2p-tap, p2p-df, t2t-eoa or t2t-df; overrides the config.
    #[arg(long, global = true, env = "CRYOCARE_SCHEME", value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    /// Run directory holding every stage's inputs and outputs.
    #[arg(long, global = true, env = "CRYOCARE_OUT_DIR", default_value = "cryocare-run")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Scheme::ALL.iter().map(|s| s.as_str()).collect();
        format!("unknown scheme {s:?}; expected one of {}", names.join(", "))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Phantom, labels and a dose-fractionated movie tilt series.
    Simulate,
    /// Split the movie into two noise-independent projection stacks.
    Pair,
    /// Weighted backprojection of the full series and of both halves.
    Reconstruct,
    /// Train a Noise2Noise network on the halves.
    Train,
    /// Apply the trained network and average the restored halves.
    Restore,
    /// Median or anisotropic-diffusion baseline on the raw tomogram.
    Filter,
    /// Half-map FSC before and after restoration.
    Fsc,
    /// Train segmenters and segment the raw and restored tomograms.
    Segment,
    /// Detection sweeps, wedge ratios and a summary report.
    Evaluate,
    /// Every stage above in order.
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Pair => "pair",
            Command::Reconstruct => "reconstruct",
            Command::Train => "train",
            Command::Restore => "restore",
            Command::Filter => "filter",
            Command::Fsc => "fsc",
            Command::Segment => "segment",
            Command::Evaluate => "evaluate",
            Command::Pipeline => "pipeline",
        }
    }

    pub fn stages(self) -> Vec<Stage> {
        match self {
            Command::Simulate => vec![Stage::Simulate],
            Command::Pair => vec![Stage::Pair],
            Command::Reconstruct => vec![Stage::Reconstruct],
            Command::Train => vec![Stage::Train],
            Command::Restore => vec![Stage::Restore],
            Command::Filter => vec![Stage::Filter],
            Command::Fsc => vec![Stage::Fsc],
            Command::Segment => vec![Stage::Segment],
            Command::Evaluate => vec![Stage::Evaluate],
            Command::Pipeline => Stage::ALL.to_vec(),
        }
    }
}

/// Loads the config and applies flag and environment overrides.
pub fn resolve_config(cli: &Cli) -> crate::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(scheme) = cli.scheme {
        cfg.scheme = scheme.as_str().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> crate::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    }
    let cfg = resolve_config(cli)?;
    let ctx = Context::new(cfg, cli.out_dir.clone())?;
    run::run(&ctx, cli.command.name(), &cli.command.stages())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": e.category(), "command": cli.command.name(), "message": e.to_string() })
            );
            e.exit_code()
        }
    }
}
