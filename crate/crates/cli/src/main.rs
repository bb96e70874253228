//! `specmosaic`: simulate, reconstruct and evaluate coded-exposure hyperspectral video.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod experiment;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use experiment::{Experiment, IlluminantChoice, StripChoice};

#[derive(Parser)]
#[command(name = "specmosaic", version, about = "Hyperspectral video simulation and reconstruction")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "SPECMOSAIC_THREADS")]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render coded sensor frames for the configured scene, noise levels and seeds.
    Simulate(ConfigArg),
    /// Demosaic simulated frames into per-LED sub-images.
    Decode(ConfigArg),
    /// Align sub-images and solve for hyperspectral cubes.
    Reconstruct(ConfigArg),
    /// Score reconstructions against ground truth, or compare two cube files.
    Eval {
        #[arg(short, long, required_unless_present = "reference", conflicts_with_all = ["reference", "test"])]
        config: Option<PathBuf>,
        /// Reference cube for a one-off comparison.
        #[arg(long, requires = "test")]
        reference: Option<PathBuf>,
        /// Cube to score against `--reference`.
        #[arg(long, requires = "reference")]
        test: Option<PathBuf>,
    },
    /// Fit per-LED gains from a colour chart capture.
    Calibrate {
        #[command(flatten)]
        config: ConfigArg,
        /// Measured responses CSV; a synthetic chart capture is used when absent.
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Peak-localisation benchmarks on rainbow and synthetic spectra.
    Bench(ConfigArg),
    /// Render a cube file to an sRGB PNG.
    Render {
        cube: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        illuminant: IlluminantChoice,
        /// Also write a per-channel grayscale strip to this path.
        #[arg(long)]
        strip: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t)]
        norm: StripChoice,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    match cli.command {
        Command::Simulate(c) => stages::simulate(&Experiment::load(&c.config)?),
        Command::Decode(c) => stages::decode(&Experiment::load(&c.config)?),
        Command::Reconstruct(c) => stages::reconstruct(&Experiment::load(&c.config)?),
        Command::Eval { config, reference, test } => match (config, reference, test) {
            (Some(c), _, _) => stages::eval(&Experiment::load(&c)?),
            (None, Some(r), Some(t)) => stages::eval_pair(&r, &t),
            _ => unreachable!("clap enforces --config or --reference/--test"),
        },
        Command::Calibrate { config, responses } => {
            stages::calibrate(&Experiment::load(&config.config)?, responses.as_deref())
        }
        Command::Bench(c) => stages::bench(&Experiment::load(&c.config)?),
        Command::Render {
            cube,
            output,
            illuminant,
            strip,
            norm,
        } => stages::render(&cube, &output, illuminant, strip.as_ref(), norm),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<specmosaic::Error>())
        .any(specmosaic::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
