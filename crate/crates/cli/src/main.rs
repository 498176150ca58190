//! `ncalg`: spectra, certificates, perturbations, stability checks and
//! training runs over non-commutative shift sets.
//!
//! Exit codes: 0 ok, 2 input or I/O error, 3 numerical non-convergence,
//! 4 stability bound violated, 5 training divergence.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ncalg::lipconst::CertificateDomain;
use ncalg::perturb::PerturbationKind;

#[derive(Parser, Debug)]
#[command(
    name = "ncalg",
    version,
    about = "Non-commutative convolutional filters and algebraic neural networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Joint block diagonalization of a shift set.
    Spectra(SpectraArgs),
    /// Apply a filter to a signal.
    Filter(FilterArgs),
    /// Lipschitz and integral-Lipschitz certificates of a filter.
    Lip(LipArgs),
    /// Sample a perturbation model and the perturbed shift set.
    Perturb(PerturbArgs),
    /// Epsilon sweep of a filter's stability bound.
    Verify(VerifyArgs),
    /// Epsilon sweep of a trained network's stability bound.
    VerifyNet(VerifyNetArgs),
    /// Train one architecture and write a checkpoint.
    Train(TrainArgs),
    /// Train every architecture and compare RMSE under re-estimated shifts.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct SpectraArgs {
    /// Shift-set directory (`shift_*.csv` and `meta.json`).
    #[arg(long)]
    pub shifts: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0xA15E)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ApplyMode {
    Dense,
    Streaming,
}

#[derive(Args, Debug, Serialize)]
pub struct FilterArgs {
    /// Polynomial text file, one `coefficient: letters` term per line.
    #[arg(long)]
    pub filter: PathBuf,
    #[arg(long)]
    pub shifts: PathBuf,
    /// Single-column CSV signal.
    #[arg(long)]
    pub signal: PathBuf,
    #[arg(long, value_enum, default_value_t = ApplyMode::Streaming)]
    pub mode: ApplyMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainArg {
    Ball,
    Blocks,
}

impl From<DomainArg> for CertificateDomain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Ball => CertificateDomain::Ball,
            DomainArg::Blocks => CertificateDomain::Blocks,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct LipArgs {
    #[arg(long)]
    pub filter: PathBuf,
    /// Shift set; sets the generator count and the default radius.
    #[arg(long)]
    pub shifts: Option<PathBuf>,
    /// Generator count when no shift set is given.
    #[arg(long)]
    pub generators: Option<usize>,
    /// Certificate radius; defaults to the largest shift norm.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, value_enum, default_value_t = DomainArg::Ball)]
    pub domain: DomainArg,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Absolute,
    Relative,
    Mixed,
}

impl From<KindArg> for PerturbationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Absolute => PerturbationKind::Absolute,
            KindArg::Relative => PerturbationKind::Relative,
            KindArg::Mixed => PerturbationKind::Mixed,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PerturbArgs {
    #[arg(long)]
    pub shifts: PathBuf,
    #[arg(long, value_enum, default_value_t = KindArg::Mixed)]
    pub kind: KindArg,
    /// Spectral norm of each sampled `T_i`.
    #[arg(long, default_value_t = 0.1)]
    pub magnitude: f64,
    /// Upper bound on the realized `‖T‖_F / ‖T‖₂`.
    #[arg(long, default_value_t = 2.0)]
    pub delta_cap: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    /// JSON perturbation spec or a directory written by `perturb`.
    #[arg(long)]
    pub perturbation: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1e-1,3e-2,1e-2,3e-3,1e-3")]
    pub epsilons: Vec<f64>,
    /// `random`, `adversarial` or a signal CSV path.
    #[arg(long, default_value = "random")]
    pub signal: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cap on the quadratic slack as a multiple of the first-order slope.
    #[arg(long, default_value_t = ncalg::stability::DEFAULT_C2_CAP_FACTOR)]
    pub c2_cap_factor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub filter: PathBuf,
    #[arg(long)]
    pub shifts: PathBuf,
    /// Certificate radius; enlarged as needed to cover every probe.
    #[arg(long)]
    pub radius: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sweep: SweepArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyNetArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub sweep: SweepArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct RunArgs {
    /// Flat TOML file with experiment keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override applied after the config file; repeatable.
    #[arg(long = "set")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// `mfilter`, `mgnn` or `mgnn_il`.
    #[arg(long, default_value = "mgnn_il")]
    pub arch: String,
    /// Split and initialization seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct ExperimentArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Spectra(a) => commands::spectra(a),
        Command::Filter(a) => commands::filter(a),
        Command::Lip(a) => commands::lip(a),
        Command::Perturb(a) => commands::perturb(a),
        Command::Verify(a) => commands::verify(a),
        Command::VerifyNet(a) => commands::verify_net(a),
        Command::Train(a) => commands::train(a),
        Command::Experiment(a) => commands::experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
