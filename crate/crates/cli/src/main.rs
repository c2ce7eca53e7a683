#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Ctx, EvalInputs};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::Format;

#[derive(Debug, Parser)]
#[command(
    name = "mwslc",
    version,
    about = "Joint DoA and mask estimation with mask-weighted spatial likelihood coding"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    theta_count: Option<usize>,
    #[arg(long, global = true)]
    sigma_deg: Option<f64>,
    #[arg(long, global = true)]
    eps_theta: Option<f64>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: Format,
    /// Input directory or file of a previous stage. Defaults to the output
    /// directory.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the configured scene to WAV files and a truth record.
    Simulate,
    /// Build the configured oracle coding and masks.
    Encode,
    /// Gradient-norm sweep over grid sizes.
    Conditioning,
    /// Threshold sweep on generated validation scenes.
    Calibrate,
    /// Train the estimator on generated scenes.
    Train,
    /// Peak search and clustering on a stored coding.
    Decode,
    /// MVDR separation from decoded directions and masks.
    Beamform,
    /// Score separated signals and, when present, decoded directions.
    Eval(EvalArgs),
    /// Simulate, encode or estimate, decode, beamform and score in one run.
    Pipeline,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Separated signal; repeat for each speaker.
    #[arg(long = "estimate")]
    estimates: Vec<PathBuf>,
    /// Reference signal; repeat for each speaker.
    #[arg(long = "reference")]
    references: Vec<PathBuf>,
    /// Mixture for the input SI-SDR baseline.
    #[arg(long)]
    mixture: Option<PathBuf>,
}

fn load_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(n) = c.theta_count {
        cfg.coding.theta_count = n;
    }
    if let Some(s) = c.sigma_deg {
        cfg.coding.sigma_deg = s;
    }
    if let Some(e) = c.eps_theta {
        cfg.decode.eps_theta = Some(e);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        cfg: load_config(&cli.common)?,
        format: cli.common.format,
        input: cli.common.input,
    };
    match cli.command {
        Command::Simulate => commands::simulate_cmd(&ctx),
        Command::Encode => commands::encode_cmd(&ctx),
        Command::Conditioning => commands::conditioning_cmd(&ctx),
        Command::Calibrate => commands::calibrate_cmd(&ctx),
        Command::Train => commands::train_cmd(&ctx),
        Command::Decode => commands::decode_cmd(&ctx),
        Command::Beamform => commands::beamform_cmd(&ctx),
        Command::Eval(a) => commands::eval_cmd(
            &ctx,
            EvalInputs {
                estimates: a.estimates,
                references: a.references,
                mixture: a.mixture,
            },
        ),
        Command::Pipeline => commands::pipeline_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mwslc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
