use std::path::PathBuf;
use std::process::ExitCode;

use anatomical_prior::cli::{run, Command, Overrides, RunConfig};
use anatomical_prior::micronet::Arch;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "anaprior", version, about = "Anatomical population priors for volumetric lesion detection")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets the phantom, training and bootstrap seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true, value_enum)]
    arch: Option<ArchArg>,
    /// Prior volume to fuse; relative paths resolve against --out.
    #[arg(long, global = true)]
    prior: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate the synthetic cohort.
    Phantom,
    /// Build the population prior from the training split.
    BuildPrior,
    /// Train the network, with or without a prior channel.
    Train,
    /// Patient- and lesion-level metrics on the test split.
    Eval,
    /// Left/right asymmetry of a prior.
    DiagnosePrior,
    /// Mid-axial slice with a prediction overlay.
    Render,
}

#[derive(ValueEnum, Clone, Copy)]
enum ArchArg {
    Unet,
    Se,
    Nested,
    Attention,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Phantom => Command::Phantom,
        Cmd::BuildPrior => Command::BuildPrior,
        Cmd::Train => Command::Train,
        Cmd::Eval => Command::Eval,
        Cmd::DiagnosePrior => Command::DiagnosePrior,
        Cmd::Render => Command::Render,
    };
    let result = args
        .config
        .as_deref()
        .map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
        .and_then(|mut cfg| {
            cfg.apply(&Overrides {
                seed: args.seed,
                mu: args.mu,
                arch: args.arch.map(|a| match a {
                    ArchArg::Unet => Arch::Unet,
                    ArchArg::Se => Arch::Se,
                    ArchArg::Nested => Arch::Nested,
                    ArchArg::Attention => Arch::Attention,
                }),
                prior: args.prior.clone(),
                threads: args.threads,
            });
            run(command, &cfg, &args.out)
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("anaprior {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
