mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dqdsim::config::Config;
use dqdsim::qcore::{BasisState, Qubit};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_240_101;

/// Pulse-level simulator of a two-spin silicon double quantum dot.
///
/// Device parameters come from built-in defaults, overridden by `--device`
/// (a flat `key = value` file), overridden in turn by `--set key=value`
/// flags. Each experiment writes `<name>.csv` and `<name>.meta.json` into the
/// output directory and prints a one-line summary.
///
/// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 configuration
/// error, 4 parameter out of range, 5 reproduction criteria failed.
#[derive(Debug, Parser)]
#[command(name = "dqdsim", version)]
pub struct Cli {
    /// Device configuration file (`key = value` per line).
    #[arg(long, global = true, value_name = "FILE")]
    pub device: Option<PathBuf>,

    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Seed for every Monte-Carlo draw.
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    /// Output directory.
    #[arg(long, global = true, env = "DQDSIM_OUT_DIR", default_value = "results")]
    pub out_dir: PathBuf,

    /// Output file stem; defaults to the subcommand name.
    #[arg(long, global = true)]
    pub name: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rabi oscillations (optionally a chevron over drive detuning).
    Rabi(RabiArgs),
    /// Ramsey decay and fitted T2*.
    Ramsey(RamseyArgs),
    /// Hahn echo.
    Echo(EchoArgs),
    /// Exchange spectroscopy of the left spin at one barrier voltage.
    Spectroscopy(SpectroscopyArgs),
    /// Exchange against barrier voltage from spectroscopy, with a fit.
    ExchangeFit(ExchangeFitArgs),
    /// Echo phase during a dc exchange pulse for both states of the other spin.
    EchoPhase(EchoPhaseArgs),
    /// Conditional Rabi oscillations inside an exchange pulse.
    CnotCal(CnotCalArgs),
    /// Calibrated CNOT on superposition inputs of the control.
    CnotScan(CnotScanArgs),
    /// Single-qubit randomized benchmarking.
    Rb(RbArgs),
    /// Single-shot readout Monte Carlo: fidelity and visibility curves.
    ReadoutSim(ReadoutArgs),
    /// Bell-state preparation and tomography.
    BellTomo(BellArgs),
    /// Runs every reproduction check and prints a pass/fail table.
    Reproduce,
}

fn parse_qubit(s: &str) -> Result<Qubit, String> {
    s.parse().map_err(|e: dqdsim::Error| e.to_string())
}

fn parse_basis(s: &str) -> Result<BasisState, String> {
    s.parse().map_err(|e: dqdsim::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct RabiArgs {
    #[arg(long, default_value = "left", value_parser = parse_qubit)]
    pub target: Qubit,
    #[arg(long, default_value_t = 201)]
    pub points: usize,
    /// Longest burst, s.
    #[arg(long, default_value_t = 1e-6)]
    pub max_time: f64,
    /// Half-width of the drive detuning sweep, Hz.
    #[arg(long, default_value_t = 0.0)]
    pub detuning_span: f64,
    #[arg(long, default_value_t = 1)]
    pub detuning_points: usize,
    /// Quasi-static noise realizations; 0 runs noiseless.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct RamseyArgs {
    #[arg(long, default_value = "left", value_parser = parse_qubit)]
    pub target: Qubit,
    #[arg(long, default_value_t = 81)]
    pub points: usize,
    #[arg(long, default_value_t = 4e-6)]
    pub max_delay: f64,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct EchoArgs {
    #[arg(long, default_value = "left", value_parser = parse_qubit)]
    pub target: Qubit,
    #[arg(long, default_value_t = 41)]
    pub points: usize,
    #[arg(long, default_value_t = 20e-6)]
    pub max_delay: f64,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct SpectroscopyArgs {
    /// Barrier voltage, V.
    #[arg(long, default_value_t = 0.400)]
    pub vm: f64,
    #[arg(long, default_value_t = 401)]
    pub points: usize,
    /// Number of right-spin burst lengths between 0 and a π rotation.
    #[arg(long, default_value_t = 21)]
    pub tau_points: usize,
    /// Probe Rabi frequency, Hz.
    #[arg(long, default_value_t = 10e3)]
    pub probe_rabi: f64,
}

#[derive(Debug, Args)]
pub struct ExchangeFitArgs {
    /// Barrier voltages, V, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.381,0.385,0.389,0.393,0.397,0.401,0.405,0.410"
    )]
    pub voltages: Vec<f64>,
    #[arg(long, default_value_t = 1601)]
    pub points: usize,
    #[arg(long, default_value_t = 10e3)]
    pub probe_rabi: f64,
}

#[derive(Debug, Args)]
pub struct EchoPhaseArgs {
    #[arg(long, default_value = "left", value_parser = parse_qubit)]
    pub target: Qubit,
    /// Exchange during the dc pulse, Hz.
    #[arg(long, default_value_t = 1e6)]
    pub j_on: f64,
    /// Longest dc pulse, s.
    #[arg(long, default_value_t = 1e-6)]
    pub tau_max: f64,
    #[arg(long, default_value_t = 51)]
    pub points: usize,
    /// Total echo free-evolution time, s.
    #[arg(long, default_value_t = 2e-6)]
    pub echo_tau: f64,
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct CnotCalArgs {
    #[arg(long, default_value = "du", value_parser = parse_basis)]
    pub input: BasisState,
    #[arg(long, default_value_t = 20e6)]
    pub j_on: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tau_dc: f64,
    /// Drive amplitude, Hz; defaults to a π rotation in 130 ns.
    #[arg(long, default_value_t = 1.0 / (2.0 * 130e-9))]
    pub rabi: f64,
    #[arg(long, default_value_t = 201)]
    pub points: usize,
    /// Burst-length step, s.
    #[arg(long, default_value_t = 2e-9)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct CnotScanArgs {
    #[arg(long, default_value_t = 33)]
    pub points: usize,
    #[arg(long, default_value_t = dqdsim::report::CNOT_J)]
    pub j_on: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RbModel {
    None,
    Depolarizing,
    QuasiStatic,
}

#[derive(Debug, Args)]
pub struct RbArgs {
    #[arg(long, default_value = "left", value_parser = parse_qubit)]
    pub target: Qubit,
    #[arg(long, value_enum, default_value_t = RbModel::Depolarizing)]
    pub model: RbModel,
    /// Depolarizing probability per Clifford.
    #[arg(long, default_value_t = 0.01)]
    pub rate: f64,
    /// Frequency noise for the quasi-static model, Hz; defaults to the T2* value.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128,256")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub sequences: usize,
    /// Shots per sequence; 0 uses exact probabilities.
    #[arg(long, default_value_t = 1000)]
    pub shots: u64,
}

#[derive(Debug, Args)]
pub struct ReadoutArgs {
    /// Traces per spin state and dot.
    #[arg(long, default_value_t = 10_000)]
    pub traces: usize,
    #[arg(long, default_value_t = 301)]
    pub thresholds: usize,
    /// Also search the white-noise densities that hit 0.85 / 0.78.
    #[arg(long)]
    pub calibrate: bool,
    /// Also write one example trace per dot and spin state.
    #[arg(long)]
    pub export_traces: bool,
}

#[derive(Debug, Args)]
pub struct BellArgs {
    #[arg(long, default_value_t = 1.0)]
    pub vl: f64,
    #[arg(long, default_value_t = 1.0)]
    pub vr: f64,
    /// Quasi-static noise realizations during the gates; 0 runs noiseless.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = dqdsim::report::CNOT_J)]
    pub j_on: f64,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Range(String),
    Runtime(String),
    Criteria(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 3,
            Failure::Range(_) => 4,
            Failure::Criteria(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Range(m) | Failure::Runtime(m) | Failure::Criteria(m) => m,
        }
    }
}

impl From<dqdsim::Error> for Failure {
    fn from(e: dqdsim::Error) -> Self {
        match e {
            dqdsim::Error::InvalidParameter { .. } | dqdsim::Error::OutOfRegime(_) => Failure::Range(e.to_string()),
            dqdsim::Error::Parse { .. } => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = Config::default();
    if let Some(path) = &cli.device {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read device file {}: {e}", path.display())))?;
        cfg.apply_str(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("--set {k}: `{v}` is not a number")))?;
        cfg.set(k.trim(), value)
            .map_err(|_| Failure::Config(format!("--set: unknown key `{}`", k.trim())))?;
    }
    cfg.validate()
        .map_err(|e| Failure::Config(format!("invalid configuration: {e}")))?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| commands::run(&cli, &cfg));
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
