//! `qcnet`: command-line front end of the QC pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;
mod config;

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "qcnet", version, about = "Volume-level artifact QC for diffusion MRI", args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice (data generation, init, shuffling, subsets).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON file of flag values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for data loading and tensor kernels.
    #[arg(long, global = true, env = "QCNET_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom dataset with injected artifacts.
    #[command(args_override_self = true)]
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        subjects: usize,
        #[arg(long, default_value_t = 10)]
        volumes_per_subject: usize,
        #[arg(long, default_value_t = 0.3)]
        artifact_rate: f64,
        /// Scales every artifact's strength, in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        severity: f64,
        #[arg(long, default_value = "sub")]
        prefix: String,
        /// Grid size as X,Y,Z.
        #[arg(long, value_name = "X,Y,Z", value_parser = parse_dims)]
        dims: Option<[usize; 3]>,
        /// Restrict artifacts to these kinds (equal weights).
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
        #[arg(long)]
        texture_sigma: Option<f64>,
        #[arg(long)]
        noise_level: Option<f64>,
        #[arg(long)]
        intensity_scale: Option<f64>,
    },
    /// Train a model from a labeled manifest.
    #[command(args_override_self = true)]
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Validation manifest; when absent, subjects are split off the training manifest.
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0.25)]
        val_fraction: f64,
        /// Architecture preset: desk-32 or paper-96.
        #[arg(long, default_value = "desk-32")]
        preset: String,
        /// Full model configuration as JSON (overrides --preset).
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, requires = "checkpoint_dir")]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Continue training a checkpoint on a small labeled subset.
    #[command(args_override_self = true)]
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 5)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Predict artifact probabilities and write a QC report.
    #[command(args_override_self = true)]
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "scan", required_unless_present = "scan")]
        manifest: Option<PathBuf>,
        /// NIfTI scan(s) to check, as an alternative to --manifest.
        #[arg(long)]
        scan: Vec<PathBuf>,
        /// Defaults to the threshold stored in the checkpoint.
        #[arg(long)]
        threshold: Option<f64>,
        /// Report JSON.
        #[arg(long)]
        out: PathBuf,
        /// Plain-text summary.
        #[arg(long)]
        text: Option<PathBuf>,
        /// Manifest with predicted probabilities (input for `serve`).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Metrics of a report against labels.
    #[command(args_override_self = true)]
    Eval {
        #[arg(long)]
        report: PathBuf,
        /// Label source; defaults to the labels recorded in the report.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Defaults to the report's threshold.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precision/recall/accuracy at every distinct threshold, as CSV.
    #[command(args_override_self = true)]
    Sweep {
        #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
        report: Option<PathBuf>,
        /// Manifest carrying both predicted probabilities and labels.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Label source when using --report.
        #[arg(long, conflicts_with = "predictions")]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a fraction of a manifest's volumes for annotation and fine-tuning.
    #[command(args_override_self = true)]
    Subset {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the review server.
    #[command(args_override_self = true)]
    Serve {
        /// Manifest with predicted probabilities, as written by `infer --predictions`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Journal and export directory; defaults to `review/` next to the predictions.
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Built UI assets.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Render slices preprocessed to X,Y,Z (what the model saw).
        #[arg(long, value_name = "X,Y,Z", value_parser = parse_dims)]
        display_dims: Option<[usize; 3]>,
    },
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s.split(',').map(|p| p.trim().parse().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y, z] if x > 0 && y > 0 && z > 0 => Ok([x, y, z]),
        [_, _, _] => Err("extents must be positive".into()),
        _ => Err(format!("expected X,Y,Z, got {} values", parts.len())),
    }
}

impl Command {
    pub const NAMES: [&'static str; 8] = ["synth", "train", "finetune", "infer", "eval", "sweep", "subset", "serve"];
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.into())
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses argv, first splicing in `--config` values. The config file and
/// subcommand are located by a pre-scan because flags the config supplies
/// may be required ones.
fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let Some((path, name)) = config::prescan(&argv, &Command::NAMES) else {
        return Cli::try_parse_from(argv);
    };
    let err = |m: String| Cli::command().error(clap::error::ErrorKind::ValueValidation, m);
    let cfg = config::read_config(&path).map_err(err)?;
    let (global, local) = config::config_flags(&cfg, name, &Command::NAMES).map_err(err)?;
    Cli::try_parse_from(config::splice(&argv, name, global, local))
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\n{}", Cli::command().render_usage());
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
