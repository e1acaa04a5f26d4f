use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ou_denoise::mcmc::NoiseMode;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("OU_DENOISE_GIT"), ")");

#[derive(Debug, Parser)]
#[command(name = "ou-denoise", version = VERSION, about = "Fit Ornstein-Uhlenbeck signals under measurement noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate a latent OU path and its noisy observation.
    Simulate(SimulateArgs),
    /// Fit a series by EM or by MCMC.
    Fit(FitArgs),
    /// Repeat simulate-and-fit over a grid of sampling intervals or noise ratios.
    Sweep(SweepArgs),
    /// First- and second-order spectra for pure, thermal and multiplicative cases.
    Spectra(SpectraArgs),
    /// Re-run a command from its manifest and compare the CSV outputs.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Sweep(_) => "sweep",
            Command::Spectra(_) => "spectra",
            Command::Replay(_) => "replay",
        }
    }

    pub fn out_dir_mut(&mut self) -> &mut PathBuf {
        match self {
            Command::Simulate(a) => &mut a.out.out_dir,
            Command::Fit(a) => &mut a.out.out_dir,
            Command::Sweep(a) => &mut a.out.out_dir,
            Command::Spectra(a) => &mut a.out.out_dir,
            Command::Replay(a) => &mut a.out.out_dir,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OutArgs {
    /// Output directory (created if missing). `replay` writes to `<manifest dir>/replay`
    /// when this is left at `.` or points at the original run.
    #[arg(long, env = "OU_DENOISE_OUT", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SignalArgs {
    /// Stationary variance of the latent process.
    #[arg(long = "A", default_value_t = 1.0)]
    pub amplitude: f64,
    /// Correlation time.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Sampling interval.
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Number of samples.
    #[arg(long, default_value_t = 1500)]
    pub n: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub signal: SignalArgs,
    #[arg(long, default_value_t = 0.2)]
    pub sigma_n: f64,
    #[arg(long, default_value_t = 0.0)]
    pub sigma_m: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Em,
    Mcmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Noise {
    Additive,
    Multiplicative,
    MixedFree,
    MixedKnownRatio,
}

impl From<Noise> for NoiseMode {
    fn from(n: Noise) -> Self {
        match n {
            Noise::Additive => NoiseMode::AdditiveOnly,
            Noise::Multiplicative => NoiseMode::MultiplicativeOnly,
            Noise::MixedFree => NoiseMode::MixedFree,
            Noise::MixedKnownRatio => NoiseMode::MixedKnownRatio,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SamplerArgs {
    /// Retained draws.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Warm-up draws.
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0.8)]
    pub target_accept: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Series to fit (`t,value` CSV or `{dt, values}` JSON).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Em)]
    pub method: Method,
    #[arg(long, value_enum, default_value_t = Noise::Additive)]
    pub noise: Noise,
    /// Multiplicative-to-thermal ratio for `mixed-known-ratio`.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// EM iteration budget.
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    DtOverTau,
    NoiseRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimators {
    Em,
    Mcmc,
    Both,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub variable: SweepVariable,
    /// Grid values (comma separated). Defaults: 0.05,0.1,0.5,1,2,4 for
    /// dt-over-tau; 9 log-spaced points over [0.1, 10] for noise-ratio.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    #[arg(long = "A", default_value_t = 1.0)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1500)]
    pub n: usize,
    /// Total noise magnitude, split by the ratio for noise-ratio sweeps.
    #[arg(long, default_value_t = 0.2)]
    pub total_noise: f64,
    /// Sampling interval in units of tau for noise-ratio sweeps.
    #[arg(long, default_value_t = 0.1)]
    pub dt_over_tau: f64,
    /// Estimators for dt-over-tau sweeps; noise-ratio sweeps always use MCMC.
    #[arg(long, value_enum, default_value_t = Estimators::Both)]
    pub method: Estimators,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Concurrent replicates (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SpectraArgs {
    #[command(flatten)]
    pub signal: SignalArgs,
    /// Thermal noise of the thermal case.
    #[arg(long, default_value_t = 0.2)]
    pub sigma_n: f64,
    /// Multiplicative noise of the multiplicative case.
    #[arg(long, default_value_t = 0.2)]
    pub sigma_m: f64,
    /// Number of independent series whose spectra are averaged.
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Welch segment averaging (8 segments, 50% overlap) instead of a plain periodogram.
    #[arg(long)]
    pub welch: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}
