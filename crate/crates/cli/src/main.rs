mod cmd;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration: exit 1.
    Usage(String),
    /// Failure while running: exit 2.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mpsim", version, about = "Coupled FDTD-LLG cavity magnonics simulator")]
pub struct Cli {
    /// Seed for every random choice (weights, shuffles, toy data).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for sweeps and training; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 1)]
    pub parallel: usize,
    /// Validate inputs and print derived quantities without running.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Output directory.
    #[arg(long, global = true, env = "MPSIM_OUT", default_value = "mpsim-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the configured simulation and write probe series.
    Simulate {
        config: PathBuf,
        /// Override the configured biases, e.g. "1800 Oe, 2050 Oe".
        #[arg(long)]
        bias: Option<String>,
    },
    /// Bias sweep; writes a (bias, frequency, magnitude) map.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        biases: BiasArgs,
    },
    /// Closed-form and semi-analytic references.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Truncate, downsample and normalize probe files into a dataset.
    Curate {
        /// Probe files written by `simulate`.
        probes: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        truncate: usize,
        #[arg(long, default_value_t = 1)]
        factor: usize,
        /// Write a macrospin ringdown toy set with this many trajectories instead.
        #[arg(long)]
        toy: Option<usize>,
        /// Samples per toy trajectory.
        #[arg(long, default_value_t = 200)]
        toy_len: usize,
    },
    /// Train the recurrent surrogate.
    Train {
        /// `dataset.json` from `curate` (curated probes or toy sequences).
        dataset: PathBuf,
        /// TOML file with `[[stage]]` tables; defaults to the built-in schedule.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 1.0)]
        dt_cell: f64,
        #[arg(long, default_value_t = 10)]
        window_stride: usize,
        /// Gradient-norm clip.
        #[arg(long)]
        clip: Option<f64>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Continue trajectories from a prefix with a trained checkpoint.
    Predict {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Fraction of each trajectory given as input.
        #[arg(long, default_value_t = 0.2)]
        prefix: f64,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Args, Debug, Clone)]
pub struct BiasArgs {
    /// Comma-separated biases, e.g. "1500 Oe, 2050 Oe".
    #[arg(long)]
    pub biases: Option<String>,
    #[arg(long, requires_all = ["to", "step"])]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long)]
    pub step: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// The two magnetization components of curated datasets.
    #[arg(long, default_value = "My,Mz")]
    pub components: String,
    /// Bias for the physics residual; enables it for curated datasets.
    #[arg(long)]
    pub h0: Option<String>,
    #[arg(long, default_value = "12000 G")]
    pub ms: String,
    #[arg(long, default_value_t = 0.003)]
    pub alpha: f64,
}

#[derive(Subcommand, Debug)]
pub enum OracleCmd {
    /// Kittel frequency of an in-plane film.
    Kittel {
        #[arg(long, default_value = "2050 Oe")]
        h0: String,
        #[arg(long, default_value = "12000 G")]
        ms: String,
        /// μ0|γ| in m A⁻¹ s⁻¹; defaults to the electron value.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Hybrid eigenfrequencies of two coupled modes.
    Eigenfreq {
        #[arg(long)]
        omega_p: String,
        /// Detuning; give this or `--omega-m`.
        #[arg(long)]
        delta: Option<String>,
        #[arg(long, conflicts_with = "delta")]
        omega_m: Option<String>,
        /// photon-minus-magnon or magnon-minus-photon.
        #[arg(long, default_value = "photon-minus-magnon")]
        convention: String,
        #[arg(long)]
        g: String,
    },
    /// Absorbed power of the layered cavity over bias and frequency.
    PabsMap {
        #[command(flatten)]
        biases: BiasArgs,
        #[arg(long, default_value = "10 GHz")]
        fmin: String,
        #[arg(long, default_value = "20 GHz")]
        fmax: String,
        #[arg(long, default_value = "10 MHz")]
        df: String,
        /// consistent or listed parameter set.
        #[arg(long, default_value = "consistent")]
        model: String,
    },
    /// Monodromy of the scalarized periodically driven precession.
    Floquet {
        #[arg(long, default_value = "1800 Oe")]
        h0: String,
        #[arg(long, default_value = "0 A/m")]
        hx0: String,
        #[arg(long, default_value = "0 A/m")]
        hz0: String,
        #[arg(long, default_value = "14 GHz")]
        f0: String,
        #[arg(long, default_value = "9.7e5 A/m")]
        ms: String,
        #[arg(long, default_value_t = 2.23e5)]
        gamma: f64,
        #[arg(long, default_value = "2 ns")]
        t_end: String,
        #[arg(long, default_value_t = 1000)]
        steps_per_period: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cmd::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}
