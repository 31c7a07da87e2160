//! Command-line pipeline around `lmcl-core`: synthetic corpus generation,
//! contrastive pre-training, two-model fine-tuning, evaluation, and a
//! finite-difference gradient audit.
//!
//! Exit codes: 0 success, 1 validation error (flags, config, file
//! contents), 2 I/O error — always with a one-line diagnostic on stderr.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::CliError;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lmcl", version, about = "Noise-robust intent classification trainer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a paired clean/noisy corpus.
    GenData(RunArgs),
    /// Contrastive + masked-token pre-training of the encoder.
    Pretrain(RunArgs),
    /// Mutual fine-tuning of the clean-side and noisy-side models.
    Finetune(RunArgs),
    /// Compute metrics and a 2-d projection for trained checkpoints.
    Eval(RunArgs),
    /// Finite-difference audit of every analytic gradient.
    Gradcheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Cmd {
    fn args(&self) -> &RunArgs {
        match self {
            Cmd::GenData(a) | Cmd::Pretrain(a) | Cmd::Finetune(a) | Cmd::Eval(a)
            | Cmd::Gradcheck(a) => a,
        }
    }
}

/// Parse arguments (including the leading program name), run, and return
/// the process exit code, printing diagnostics to the standard streams.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e)
            if e.kind() == ErrorKind::DisplayHelp
                || e.kind() == ErrorKind::DisplayVersion =>
        {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let first_line = e.to_string().lines().next().unwrap_or("bad arguments").to_string();
            eprintln!("{first_line}");
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let args = cli.cmd.args();
    let mut cfg = config::load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.train.validate()?;
    fs::create_dir_all(&args.out).map_err(|e| error::io_error("create", &args.out, e))?;
    fs::write(
        args.out.join("resolved_config.txt"),
        config::resolved_text(&cfg),
    )
    .map_err(|e| error::io_error("write resolved config", &args.out.join("resolved_config.txt"), e))?;
    match &cli.cmd {
        Cmd::GenData(_) => commands::gen_data(&cfg, &args.out),
        Cmd::Pretrain(_) => commands::pretrain_cmd(&cfg, &args.out),
        Cmd::Finetune(_) => commands::finetune_cmd(&cfg, &args.out),
        Cmd::Eval(_) => commands::eval_cmd(&cfg, &args.out),
        Cmd::Gradcheck(_) => commands::gradcheck_cmd(&cfg, &args.out),
    }
}
