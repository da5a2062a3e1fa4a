//! `rayleigh`: Fisher-information analysis of subdiffraction incoherent
//! imaging from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RawConfig;

#[derive(Parser)]
#[command(
    name = "rayleigh",
    version,
    about = "Moment-information analysis for subdiffraction incoherent imaging",
    after_help = "Exit codes: 0 success, 2 validation failure, 3 numerical failure.\n\
                  Set RAYLEIGH_THREADS to bound the worker pool."
)]
struct Cli {
    /// Experiment configuration file (see README for the format).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format: `auto` picks CSV for tables and JSON for documents.
    #[arg(long, global = true, default_value = "auto")]
    format: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the mode Gram matrix and q-vector as CSV.
    BasisCheck {
        /// Highest mode order.
        #[arg(long)]
        lmax: Option<usize>,
    },
    /// Print the normalized moments of a scene as JSON.
    Moments {
        /// Highest moment order.
        #[arg(long, default_value_t = 8)]
        kmax: usize,
        /// Scene file (alternative to [scene] in the config).
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Sweep F_kk over image sizes and fit the scaling exponents (CSV).
    FiSweep,
    /// Second-moment quantum information matrices (JSON).
    Qfim,
    /// Sample photodetection records and check estimator variance
    /// against the Cramer-Rao bound.
    Simulate {
        /// Also emit the outcome probability table.
        #[arg(long)]
        dump_probs: bool,
    },
    /// Series-validity report over an s grid (CSV).
    Convergence,
    /// Centroid pre-estimation scheme: closed forms and an optional
    /// two-stage replication study (JSON).
    Centroid,
    /// Strong-source two-photon-subspace improvement for the eighth
    /// moment (JSON).
    Counterexample,
}

fn load_config(cli: &Cli) -> Result<RawConfig, commands::CliError> {
    match &cli.config {
        Some(path) => Ok(RawConfig::load(path)?),
        None => Err(commands::CliError::Validation(
            "missing --config FILE".into(),
        )),
    }
}

fn run(cli: Cli) -> Result<(), commands::CliError> {
    if let Ok(threads) = std::env::var("RAYLEIGH_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let out = cli.out.clone();
    let format = match cli.format.as_str() {
        "auto" => commands::Format::Auto,
        "csv" => commands::Format::Csv,
        "json" => commands::Format::Json,
        other => {
            return Err(commands::CliError::Validation(format!(
                "unknown format `{other}` (auto|csv|json)"
            )))
        }
    };
    match &cli.command {
        Command::BasisCheck { lmax } => {
            let cfg = load_config(&cli)?;
            commands::basis_check(&cfg, *lmax, format, out.as_deref())
        }
        Command::Moments { kmax, scene } => {
            let cfg = match (&cli.config, scene) {
                (Some(_), _) => load_config(&cli)?,
                (None, Some(path)) => {
                    // wrap a bare scene file in a synthetic config
                    let dir = path.parent().unwrap_or(std::path::Path::new("."));
                    let text = format!("[scene]\nfile = {}\n", path.file_name().unwrap().to_string_lossy());
                    RawConfig::parse(&text, dir)?
                }
                (None, None) => {
                    return Err(commands::CliError::Validation(
                        "moments needs --config or --scene".into(),
                    ))
                }
            };
            commands::moments(&cfg, *kmax, format, out.as_deref())
        }
        Command::FiSweep => {
            let cfg = load_config(&cli)?;
            commands::fi_sweep(&cfg, format, out.as_deref())
        }
        Command::Qfim => {
            let cfg = load_config(&cli)?;
            commands::qfim_cmd(&cfg, format, out.as_deref())
        }
        Command::Simulate { dump_probs } => {
            let cfg = load_config(&cli)?;
            commands::simulate(&cfg, cli.seed, format, out.as_deref(), *dump_probs)
        }
        Command::Convergence => {
            let cfg = load_config(&cli)?;
            commands::convergence(&cfg, format, out.as_deref())
        }
        Command::Centroid => {
            let cfg = load_config(&cli)?;
            commands::centroid(&cfg, cli.seed, format, out.as_deref())
        }
        Command::Counterexample => {
            let cfg = load_config(&cli)?;
            commands::counterexample(&cfg, format, out.as_deref())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
