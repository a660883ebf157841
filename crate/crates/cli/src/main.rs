//! `scuba`: config-driven pipeline over the embedding boundary.
//!
//! ```text
//! scuba synth   --config synth.toml        # fixture + run.toml
//! scuba fit     --config fixture/run.toml  # encoder, r2.csv
//! scuba caption --config fixture/run.toml  # voxel_captions.tsv
//! scuba analyze --config fixture/run.toml  # report bundle
//! ```
//!
//! Exit codes: 0 ok, 2 usage/config, 3 data validation, 4 numeric failure.
//! Failures print `{"error":{"code":..,"kind":..,"message":..}}` on stderr.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scuba_core::projection::ProjectionMode;

use config::Loaded;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "scuba", version, about = "Voxel encoders, weight projection and caption analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run config (TOML, or JSON by `.json` extension).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic fixture and its run.toml.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Overrides `output_dir` (the fixture directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the voxel encoder and report R².
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Project voxel weights onto image banks and retrieve captions.
    Caption {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ProjectionMode>,
        /// Candidates kept per voxel.
        #[arg(long)]
        k: Option<usize>,
        /// Number of banks used for best-of-R.
        #[arg(long)]
        repeats: Option<usize>,
        /// Comma-separated image banks, replacing `data.banks`.
        #[arg(long, value_delimiter = ',')]
        banks: Option<Vec<PathBuf>>,
    },
    /// Term, person, cluster, classification and convergence reports.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        roi_threshold: Option<f64>,
        /// Number of clusters.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        person_list: Option<PathBuf>,
        /// Comma-separated bank sizes for the convergence curve.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
}

fn parse_mode(s: &str) -> Result<ProjectionMode, String> {
    match s {
        "decoupled" => Ok(ProjectionMode::Decoupled),
        "coupled" => Ok(ProjectionMode::Coupled),
        other => Err(format!("unknown mode {other:?} (expected decoupled or coupled)")),
    }
}

/// Paths given on the command line are relative to the working directory,
/// config paths to the config file; make the former absolute.
fn cwd_path(p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        std::env::current_dir().map(|d| d.join(&p)).unwrap_or(p)
    }
}

fn prepare(common: &Common) -> CliResult<Loaded> {
    let level = match common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot configure thread pool: {e}")))?;
    }
    let mut loaded = Loaded::load(&common.config)?;
    if let Some(s) = common.seed {
        loaded.config.seed = s;
    }
    Ok(loaded)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let mut loaded = prepare(&common)?;
            if let Some(o) = out {
                loaded.config.output_dir = cwd_path(o);
            }
            commands::synth::run(&mut loaded)
        }
        Command::Fit { common } => {
            let mut loaded = prepare(&common)?;
            commands::fit::run(&mut loaded)
        }
        Command::Caption {
            common,
            temperature,
            mode,
            k,
            repeats,
            banks,
        } => {
            let mut loaded = prepare(&common)?;
            let c = &mut loaded.config;
            if let Some(t) = temperature {
                c.projection.temperature = t;
            }
            if let Some(m) = mode {
                c.projection.mode = m;
            }
            if let Some(k) = k {
                c.caption.k = k;
            }
            if repeats.is_some() {
                c.caption.repeats = repeats;
            }
            if let Some(b) = banks {
                c.data.banks = b.into_iter().map(cwd_path).collect();
            }
            commands::caption::run(&mut loaded)
        }
        Command::Analyze {
            common,
            roi_threshold,
            k,
            restarts,
            lexicon,
            person_list,
            sizes,
        } => {
            let mut loaded = prepare(&common)?;
            let c = &mut loaded.config;
            if let Some(t) = roi_threshold {
                c.analysis.roi_threshold = t;
            }
            if let Some(k) = k {
                c.analysis.k = k;
            }
            if let Some(r) = restarts {
                c.analysis.restarts = r;
            }
            if let Some(l) = lexicon {
                c.data.lexicon = Some(cwd_path(l));
            }
            if let Some(p) = person_list {
                c.data.person_list = Some(cwd_path(p));
            }
            if let Some(s) = sizes {
                c.analysis.convergence_sizes = s;
            }
            commands::analyze::run(&mut loaded)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
