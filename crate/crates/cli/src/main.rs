use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(name = "lfecm", version, about = "Low-frequency battery ECM identification with RC-ladder CPE approximation")]
struct Cli {
    /// Master seed for noise, synthetic frequency and random starts.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Run directory; defaults to `lfecm-out/<command>`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Sampling time in seconds.
    #[arg(long, global = true, default_value_t = 1.0, value_parser = positive)]
    ts: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decompose a CPE into an RC ladder and sweep its impedance.
    Decompose(DecomposeArgs),
    /// Simulate an FCR dataset from true parameters.
    Generate(GenerateArgs),
    /// Identify [R_sigma, Q, phi] from a dataset.
    Estimate(EstimateArgs),
    /// Repeated generate-and-estimate campaign with error statistics.
    Montecarlo(MonteCarloArgs),
    /// FCR power, current, voltage and SOC profile.
    Fcr(FcrArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DecomposeArgs {
    /// CPE coefficient Q.
    #[arg(long = "q", value_parser = positive)]
    pub q_coef: f64,
    #[arg(long, value_parser = unit_open)]
    pub phi: f64,
    #[arg(long, default_value_t = 0.0014, value_parser = positive)]
    pub r_sigma: f64,
    /// Number of RC branches.
    #[arg(long, default_value = "100", value_parser = count)]
    pub n: usize,
    /// Fastest corner frequency in Hz; defaults to just inside f_s/pi.
    #[arg(long, value_parser = positive)]
    pub f_max: Option<f64>,
    /// Allowed phase ripple in radians.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    pub delta_phi: f64,
    /// Log frequency grid `lo:hi:count` in Hz.
    #[arg(long, default_value = "1e-6:1:200", value_parser = sweep)]
    pub sweep: (f64, f64, usize),
}

/// Frequency trace: a `t,f` CSV or the seeded synthetic trace.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct FrequencySource {
    #[arg(long)]
    pub freq: Option<PathBuf>,
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TruthArgs {
    #[arg(long, default_value_t = 0.0014, value_parser = positive)]
    pub r_sigma: f64,
    #[arg(long = "q", default_value_t = 22281.0, value_parser = positive)]
    pub q_coef: f64,
    #[arg(long, default_value_t = 0.52, value_parser = unit_open)]
    pub phi: f64,
    /// Branches of the truth ladder.
    #[arg(long, default_value = "100", value_parser = count)]
    pub n_truth: usize,
    #[arg(long, value_parser = positive)]
    pub f_max: Option<f64>,
    /// Synthetic trace length in seconds.
    #[arg(long, default_value_t = 10800.0, value_parser = positive)]
    pub duration: f64,
    /// Droop in W/Hz.
    #[arg(long, default_value_t = 100.0, value_parser = positive)]
    pub droop: f64,
    #[arg(long, default_value_t = 20.0, value_parser = positive)]
    pub p_max: f64,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub source: FrequencySource,
    #[command(flatten)]
    pub truth: TruthArgs,
    /// Voltage noise standard deviation in V.
    #[arg(long, default_value_t = 5e-4, value_parser = non_negative)]
    pub sigma_v: f64,
    /// Current noise standard deviation in A.
    #[arg(long, default_value_t = 0.05 / 3.0, value_parser = non_negative)]
    pub sigma_i: f64,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    /// Bound case 1, 2 or 3.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub case: u8,
    #[arg(long, value_parser = positive)]
    pub r_sigma_min: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub r_sigma_max: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub q_min: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub q_max: Option<f64>,
    #[arg(long, value_parser = unit_open)]
    pub phi_min: Option<f64>,
    #[arg(long, value_parser = unit_open)]
    pub phi_max: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub f_max_lo: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub f_max_hi: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Relative-change tolerance on the branch-count loop.
    #[arg(long, default_value_t = 1e-4, value_parser = positive)]
    pub epsilon: f64,
    #[arg(long, default_value = "25", value_parser = count)]
    pub n_max: usize,
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    pub delta_phi: f64,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Dataset CSV with columns `t,i,v`.
    #[arg(long)]
    pub data: PathBuf,
    /// Sidecar JSON with the true parameters; defaults to the dataset path with a `.json` extension.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[command(flatten)]
    pub bounds: BoundArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Voltage noise level for the residual ratio when no sidecar is present.
    #[arg(long, value_parser = non_negative)]
    pub sigma_v: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct MonteCarloArgs {
    #[arg(long, default_value = "100", value_parser = count)]
    pub n_sim: usize,
    /// Comma-separated bound cases.
    #[arg(long, value_delimiter = ',', default_value = "1", value_parser = clap::value_parser!(u8).range(1..=3))]
    pub cases: Vec<u8>,
    /// Frequency CSV; the seeded synthetic trace otherwise.
    #[arg(long)]
    pub freq: Option<PathBuf>,
    #[command(flatten)]
    pub truth: TruthArgs,
    #[arg(long, default_value_t = 5e-4, value_parser = non_negative)]
    pub sigma_v: f64,
    #[arg(long, default_value_t = 0.05 / 3.0, value_parser = non_negative)]
    pub sigma_i: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FcrArgs {
    #[command(flatten)]
    pub source: FrequencySource,
    #[command(flatten)]
    pub truth: TruthArgs,
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    number(s).and_then(|v| if v > 0.0 { Ok(v) } else { Err(format!("{v} must be positive")) })
}

fn non_negative(s: &str) -> Result<f64, String> {
    number(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err(format!("{v} must be non-negative")) })
}

fn unit_open(s: &str) -> Result<f64, String> {
    number(s).and_then(|v| if v > 0.0 && v < 1.0 { Ok(v) } else { Err(format!("{v} must lie in (0, 1)")) })
}

/// Positive integer, also written as `1e2`.
fn count(s: &str) -> Result<usize, String> {
    let v = number(s)?;
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(format!("`{s}` is not a positive integer"))
    }
}

fn sweep(s: &str) -> Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(format!("`{s}` is not lo:hi:count"));
    };
    let (lo, hi, n) = (positive(lo)?, positive(hi)?, count(n)?);
    if hi < lo || (n == 1 && hi != lo) {
        return Err(format!("bad sweep range {lo}:{hi}:{n}"));
    }
    Ok((lo, hi, n))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Decompose(_) => "decompose",
        Command::Generate(_) => "generate",
        Command::Estimate(_) => "estimate",
        Command::Montecarlo(_) => "montecarlo",
        Command::Fcr(_) => "fcr",
    };
    let ctx = commands::Context {
        seed: cli.seed,
        ts: cli.ts,
        out_dir: cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("lfecm-out").join(name)),
    };
    std::fs::create_dir_all(&ctx.out_dir)?;
    match cli.command {
        Command::Decompose(a) => commands::decompose(&ctx, &a),
        Command::Generate(a) => commands::generate(&ctx, &a),
        Command::Estimate(a) => commands::estimate(&ctx, &a),
        Command::Montecarlo(a) => commands::montecarlo(&ctx, &a),
        Command::Fcr(a) => commands::fcr(&ctx, &a),
    }
}
