use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hfprune_core::{Error, RunConfig};

mod commands;

#[derive(Parser)]
#[command(name = "hfprune", version, about = "Hessian-free post-training weight pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prune a weight matrix and write the pruned tensor, mask and report.
    Prune {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output prefix for .swpt, .mask, .swnm, .report and .csv files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the per-step EWMA trace of one row as CSV.
    Trace {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        row: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two pruning configurations on the same layer.
    Compare {
        #[command(flatten)]
        inputs: Inputs,
        /// Config file for the first method.
        #[arg(long = "config-a")]
        config_a: PathBuf,
        /// Config file for the second method.
        #[arg(long = "config-b")]
        config_b: PathBuf,
        /// Rows sampled for the rank correlation.
        #[arg(long, default_value_t = 32)]
        sample_rows: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the pruning modes over a range of widths.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [1024, 2048, 4096, 8192])]
        sizes: Vec<usize>,
        /// Widths for the dense-inverse oracle.
        #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128, 256])]
        oracle_sizes: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        rows: usize,
        #[arg(long, default_value_t = 1)]
        oracle_rows: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map target sparsities to la and report the sparsity each achieves.
    Calibrate {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.6, 0.7, 0.8, 0.9])]
        targets: Vec<f64>,
    },
    /// Generate a synthetic weight matrix and calibration vector.
    Synth {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "gaussian")]
        family: String,
        #[arg(long, default_value = "f32")]
        dtype: String,
        /// Destination of the weight matrix.
        #[arg(long = "weights-out")]
        weights_out: PathBuf,
        /// Destination of the calibration vector.
        #[arg(long = "calib-out")]
        calib_out: PathBuf,
    },
}

#[derive(Args)]
struct Inputs {
    /// Weight matrix (.swpt).
    #[arg(long)]
    weights: PathBuf,
    /// Calibration vector or sample matrix (.swpt).
    #[arg(long)]
    calib: PathBuf,
}

/// Flags override values from `--config`, which override defaults.
#[derive(Args, Default)]
struct ConfigArgs {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    la: Option<String>,
    #[arg(long)]
    sparsity: Option<String>,
    /// N:M pattern, e.g. 2:4.
    #[arg(long)]
    nm: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<String>,
    /// Record per-step traces (written as <prefix>.csv by `prune`).
    #[arg(long)]
    trace: bool,
    /// Keep S fixed at its initial value during EWMA pruning.
    #[arg(long)]
    no_s_update: bool,
    /// Stream S updates through N:M selection.
    #[arg(long)]
    nm_streaming: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => hfprune_core::io::read_config(path)?,
            None => RunConfig::default(),
        };
        let pairs = [
            ("mode", &self.mode),
            ("metric", &self.metric),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("la", &self.la),
            ("sparsity", &self.sparsity),
            ("nm", &self.nm),
            ("workers", &self.workers),
            ("seed", &self.seed),
            ("threshold", &self.threshold),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.trace |= self.trace;
        cfg.s_update &= !self.no_s_update;
        cfg.nm_streaming |= self.nm_streaming;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Dimension(_) | Error::Config(_) | Error::Range(_) | Error::Structure(_) => 2,
        Error::Io(_) | Error::Format(_) | Error::Truncated { .. } | Error::Data(_) => 3,
        Error::Numerical(_) | Error::Domain(_) => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Prune { inputs, config, out } => {
            let cfg = config.resolve()?;
            let report = commands::prune(&inputs.weights, &inputs.calib, cfg, &out)?;
            print!("{}", report.to_kv());
        }
        Command::Trace { inputs, config, row, out } => {
            let cfg = config.resolve()?;
            commands::trace(&inputs.weights, &inputs.calib, &cfg, row, &out)?;
        }
        Command::Compare { inputs, config_a, config_b, sample_rows, seed, out } => {
            let opts = hfprune_core::compare::CompareOptions { sample_rows, seed };
            let report = commands::compare(&inputs.weights, &inputs.calib, &config_a, &config_b, opts)?;
            let text = report.to_kv();
            if let Some(path) = out {
                std::fs::write(path, &text)?;
            }
            print!("{text}");
        }
        Command::Bench { sizes, oracle_sizes, rows, oracle_rows, reps, seed, out } => {
            let plan = commands::BenchPlan { sizes, oracle_sizes, rows, oracle_rows, reps, seed };
            let csv = commands::bench(&plan)?;
            match out {
                Some(path) => std::fs::write(path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Calibrate { inputs, config, targets } => {
            let cfg = config.resolve()?;
            print!("{}", commands::calibrate(&inputs.weights, &inputs.calib, &cfg, &targets)?);
        }
        Command::Synth { rows, cols, seed, family, dtype, weights_out, calib_out } => {
            commands::synth(rows, cols, seed, family.parse()?, dtype.parse()?, &weights_out, &calib_out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("hfprune: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
