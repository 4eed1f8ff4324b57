//! Monte-Carlo campaigns, error statistics and residual checks.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpe::{decompose, z_ladder, Branch, CpeTriple, DecompositionConfig, LadderNetwork};
use crate::ecm::{CellConfig, DiscreteModel, TimeSeries};
use crate::error::{Error, Result};
use crate::estimation::{estimate, model_voltage, EstimatorConfig, FitReport, PhysicalBounds};
use crate::excitation::{add_noise, fcr_power, generate, power_to_current, synth_frequency, FcrConfig, FrequencySeries, NoiseConfig};

/// Environment variable capping the Monte-Carlo worker threads.
pub const THREADS_ENV: &str = "LFECM_THREADS";

/// Equal-width histogram; the last bin is closed so every sample is counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// `std / σ_V`, or NaN without a noise level.
    pub ratio: f64,
    pub histogram: Histogram,
    /// Jarque–Bera statistic; about χ²(2) for Gaussian residuals.
    pub jarque_bera: f64,
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Histogram with Freedman–Diaconis bin width `2·IQR·n^(−1/3)`.
pub fn freedman_diaconis(x: &[f64]) -> Result<Histogram> {
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("histogram needs finite, non-empty data".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let width = 2.0 * iqr / (x.len() as f64).cbrt();
    let bins = if width > 0.0 && max > min { ((max - min) / width).ceil().max(1.0) as usize } else { 1 };
    let span = if max > min { max - min } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|k| min + span * k as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    for v in x {
        let k = (((v - min) / span) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

pub fn residual_report(residuals: &[f64], sigma_v: Option<f64>) -> Result<ResidualReport> {
    if residuals.len() < 2 {
        return Err(Error::Data("residual report needs at least 2 samples".into()));
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let m2 = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let m3 = residuals.iter().map(|r| (r - mean).powi(3)).sum::<f64>() / n;
    let m4 = residuals.iter().map(|r| (r - mean).powi(4)).sum::<f64>() / n;
    let std = (m2 * n / (n - 1.0)).sqrt();
    let (skew, kurt) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2)) } else { (0.0, 3.0) };
    Ok(ResidualReport {
        n: residuals.len(),
        mean,
        std,
        ratio: sigma_v.filter(|s| *s > 0.0).map_or(f64::NAN, |s| std / s),
        histogram: freedman_diaconis(residuals)?,
        jarque_bera: n / 6.0 * (skew * skew + (kurt - 3.0).powi(2) / 4.0),
    })
}

/// Measured minus modelled voltage at the fitted parameters.
pub fn residuals(data: &TimeSeries, fit: &FitReport, delta_phi: f64, cell: &CellConfig) -> Result<Vec<f64>> {
    let q = crate::cpe::ripple_coefficient(delta_phi)?;
    let (y, _) = model_voltage(&fit.theta_hat, fit.n_used, q, data, cell)?;
    Ok(data.voltage()?.iter().zip(&y).map(|(m, s)| m - s).collect())
}

/// Error statistics of one parameter over a campaign; errors in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub name: String,
    pub true_value: f64,
    pub mean: f64,
    pub std: f64,
    pub mu_delta_pct: f64,
    pub delta_min_pct: f64,
    pub delta_max_pct: f64,
}

impl ParamStats {
    pub fn from_estimates(name: &str, true_value: f64, estimates: &[f64]) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::Data(format!("no estimates of {name}")));
        }
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let std = if estimates.len() > 1 {
            (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let errs: Vec<f64> = estimates.iter().map(|e| 100.0 * ((e - true_value) / true_value).abs()).collect();
        Ok(Self {
            name: name.to_string(),
            true_value,
            mean,
            std,
            mu_delta_pct: errs.iter().sum::<f64>() / n,
            delta_min_pct: errs.iter().cloned().fold(f64::INFINITY, f64::min),
            delta_max_pct: errs.iter().cloned().fold(0.0, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub count: usize,
    pub r_sigma: ParamStats,
    pub q: ParamStats,
    pub phi: ParamStats,
}

impl ErrorStats {
    pub fn from_estimates(truth: &CpeTriple, estimates: &[CpeTriple]) -> Result<Self> {
        let col = |f: fn(&CpeTriple) -> f64| estimates.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            count: estimates.len(),
            r_sigma: ParamStats::from_estimates("R_sigma", truth.r_sigma, &col(|p| p.r_sigma))?,
            q: ParamStats::from_estimates("Q", truth.q_coef, &col(|p| p.q_coef))?,
            phi: ParamStats::from_estimates("phi", truth.phi, &col(|p| p.phi))?,
        })
    }

    pub fn params(&self) -> [&ParamStats; 3] {
        [&self.r_sigma, &self.q, &self.phi]
    }
}

/// One Monte-Carlo campaign: fixed truth and excitation, fresh noise and
/// initial guess per replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub n_sim: usize,
    pub bounds: PhysicalBounds,
    pub p_true: CpeTriple,
    pub decomposition: DecompositionConfig,
    pub cell: CellConfig,
    /// Noise levels; the seed field is replaced per replicate.
    pub noise: NoiseConfig,
    pub fcr: FcrConfig,
    /// Length of the synthetic frequency trace in seconds.
    pub duration: f64,
    pub master_seed: u64,
    /// `p0` and `seed` are replaced per replicate.
    pub estimator: EstimatorConfig,
}

impl MonteCarloSpec {
    /// Reference truth and cell, 3 h at 1 Hz, one of the three bound cases.
    pub fn reference(case: u8, n_sim: usize, master_seed: u64) -> Result<Self> {
        let cell = CellConfig::nmc_60ah();
        let duration = 10800.0;
        Ok(Self {
            n_sim,
            bounds: PhysicalBounds::case(case, cell.ts, (duration / cell.ts) as usize)?,
            p_true: reference_truth(),
            decomposition: truth_decomposition(cell.ts),
            cell,
            noise: NoiseConfig::default(),
            fcr: FcrConfig::default(),
            duration,
            master_seed,
            estimator: EstimatorConfig::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sim == 0 {
            return Err(Error::Config("n_sim must be at least 1".into()));
        }
        self.bounds.validate()?;
        self.p_true.validate()?;
        self.decomposition.validate()?;
        self.cell.validate()?;
        self.noise.validate()?;
        self.fcr.validate()?;
        self.estimator.validate()
    }
}

pub fn reference_truth() -> CpeTriple {
    CpeTriple { r_sigma: 0.0014, q_coef: 22281.0, phi: 0.52 }
}

/// 100 branches, no ripple, fastest corner just inside the stability limit `f_s/π`.
///
/// Exactly at `f_s/π` the fastest branch has eigenvalue −1 and rings without
/// decay; the estimator can only approach that from inside its box.
pub fn truth_decomposition(ts: f64) -> DecompositionConfig {
    DecompositionConfig { n_branches: 100, delta_phi: 0.0, f_max: crate::ecm::max_stable_corner(ts) }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `index`, independent of scheduling order.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    mix(mix(master) ^ index)
}

/// Seed of the shared synthetic frequency trace.
pub fn frequency_seed(master: u64) -> u64 {
    mix(master ^ 0xF0F0_F0F0_F0F0_F0F0)
}

/// Current drawn by the truth model when it follows the FCR request.
pub fn fcr_current(
    freq: &FrequencySeries,
    fcr: &FcrConfig,
    p_true: &CpeTriple,
    decomposition: &DecompositionConfig,
    cell: &CellConfig,
) -> Result<TimeSeries> {
    freq.validate()?;
    fcr.validate()?;
    if (freq.ts - cell.ts).abs() > 1e-12 * cell.ts {
        return Err(Error::Config(format!("frequency sampled at {} s, cell at {} s", freq.ts, cell.ts)));
    }
    let net = decompose(p_true, decomposition)?;
    let model = DiscreteModel::from_ladder(p_true.r_sigma, &net, cell)?;
    let prof = power_to_current(&fcr_power(freq, fcr), &model, &model.rest_state(cell.soc0), cell)?;
    Ok(TimeSeries::from_current(cell.ts, prof.series.current))
}

/// Noise-free campaign data: synthetic frequency, FCR current, truth voltage.
pub fn clean_dataset(spec: &MonteCarloSpec) -> Result<TimeSeries> {
    let freq = synth_frequency(spec.duration, spec.cell.ts, frequency_seed(spec.master_seed))?;
    let current = fcr_current(&freq, &spec.fcr, &spec.p_true, &spec.decomposition, &spec.cell)?;
    Ok(generate(&spec.p_true, &spec.decomposition, &spec.cell, &current, &NoiseConfig::noiseless())?.clean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub seed: u64,
    pub p0: Option<CpeTriple>,
    pub p_hat: Option<CpeTriple>,
    pub n_used: Option<usize>,
    pub converged: bool,
    pub sse: Option<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub replicates: Vec<ReplicateOutcome>,
    pub successes: usize,
    pub failures: usize,
    /// Over successful replicates; `None` if every replicate failed.
    pub stats: Option<ErrorStats>,
    pub wall_time_s: f64,
}

impl MonteCarloResult {
    pub fn failure_fraction(&self) -> f64 {
        self.failures as f64 / self.replicates.len().max(1) as f64
    }
}

/// Worker count from the environment, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

fn run_replicate(spec: &MonteCarloSpec, clean: &TimeSeries, index: usize) -> ReplicateOutcome {
    let started = Instant::now();
    let seed = replicate_seed(spec.master_seed, index as u64);
    let noise = NoiseConfig { seed, ..spec.noise };
    let cfg = EstimatorConfig { p0: None, seed: mix(seed), ..spec.estimator.clone() };
    let fitted = add_noise(clean, &noise).and_then(|data| estimate(&data, &spec.bounds, &cfg, &spec.cell));
    let mut out = ReplicateOutcome {
        index,
        seed,
        p0: None,
        p_hat: None,
        n_used: None,
        converged: false,
        sse: None,
        iterations: 0,
        wall_time_s: 0.0,
        error: None,
    };
    match fitted {
        Ok(r) => {
            out.p0 = Some(r.p0);
            out.p_hat = Some(r.p_hat);
            out.n_used = Some(r.n_used);
            out.converged = r.converged;
            out.sse = Some(r.sse);
            out.iterations = r.iterations;
        }
        Err(e) => {
            log::warn!("replicate {index} failed: {e}");
            out.error = Some(e.to_string());
        }
    }
    out.wall_time_s = started.elapsed().as_secs_f64();
    out
}

/// Runs the replicates of a campaign on `clean` data in parallel.
///
/// Results are ordered by replicate index and do not depend on the thread
/// count. Replicate failures are recorded, not propagated.
pub fn run_montecarlo_on(spec: &MonteCarloSpec, clean: &TimeSeries) -> Result<MonteCarloResult> {
    spec.validate()?;
    let started = Instant::now();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let replicates: Vec<ReplicateOutcome> =
        pool.install(|| (0..spec.n_sim).into_par_iter().map(|k| run_replicate(spec, clean, k)).collect());
    let estimates: Vec<CpeTriple> = replicates.iter().filter_map(|r| r.p_hat).collect();
    let failures = replicates.len() - estimates.len();
    let stats = if estimates.is_empty() { None } else { Some(ErrorStats::from_estimates(&spec.p_true, &estimates)?) };
    Ok(MonteCarloResult {
        successes: estimates.len(),
        failures,
        replicates,
        stats,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

pub fn run_montecarlo(spec: &MonteCarloSpec) -> Result<MonteCarloResult> {
    spec.validate()?;
    let clean = clean_dataset(spec)?;
    run_montecarlo_on(spec, &clean)
}

/// Decomposed network with its per-branch table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDump {
    pub cpe: CpeTriple,
    pub decomposition: DecompositionConfig,
    pub q: f64,
    pub network: LadderNetwork,
    pub omega_avg: f64,
    pub branches: Vec<Branch>,
}

pub fn network_dump(cpe: &CpeTriple, decomposition: &DecompositionConfig) -> Result<NetworkDump> {
    let network = decompose(cpe, decomposition)?;
    Ok(NetworkDump {
        cpe: *cpe,
        decomposition: *decomposition,
        q: crate::cpe::ripple_coefficient(decomposition.delta_phi)?,
        omega_avg: network.omega_avg(),
        branches: network.branches(),
        network,
    })
}

/// Ladder impedance at one frequency; phase in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub f: f64,
    pub re: f64,
    pub im: f64,
    pub mag: f64,
    pub phase: f64,
}

/// `count` log-spaced frequencies from `lo` to `hi` Hz, both included.
pub fn impedance_sweep(net: &LadderNetwork, lo: f64, hi: f64, count: usize) -> Result<Vec<SweepRow>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 || (count == 1 && hi != lo) {
        return Err(Error::Config(format!("bad sweep {lo}:{hi}:{count}")));
    }
    let step = if count > 1 { (hi / lo).ln() / (count - 1) as f64 } else { 0.0 };
    Ok((0..count)
        .map(|k| {
            let f = if k + 1 == count { hi } else { lo * (step * k as f64).exp() };
            let z = z_ladder(net, 2.0 * std::f64::consts::PI * f);
            SweepRow { f, re: z.re, im: z.im, mag: z.norm(), phase: z.arg().to_degrees() }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn histogram_counts_every_sample() {
        let x: Vec<f64> = (0..1000).map(|k| ((k * 7919) % 1000) as f64 / 1000.0).collect();
        let h = freedman_diaconis(&x).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 1000);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        // uniform on [0,1): IQR ≈ 0.5, width ≈ 0.1, so 10 or 11 bins
        assert!((10..=11).contains(&h.counts.len()));
        let flat = freedman_diaconis(&[2.0; 5]).unwrap();
        assert_eq!(flat.counts, vec![5]);
    }

    proptest! {
        #[test]
        fn histogram_mass(x in prop::collection::vec(-1e-3f64..1e-3, 2..400)) {
            let h = freedman_diaconis(&x).unwrap();
            prop_assert_eq!(h.counts.iter().sum::<usize>(), x.len());
        }

        #[test]
        fn stats_ordering(est in prop::collection::vec(0.5f64..1.5, 1..30)) {
            let s = ParamStats::from_estimates("x", 1.0, &est).unwrap();
            prop_assert!(s.delta_min_pct <= s.mu_delta_pct + 1e-12);
            prop_assert!(s.mu_delta_pct <= s.delta_max_pct + 1e-12);
            prop_assert!(s.std >= 0.0);
        }
    }

    #[test]
    fn single_estimate_stats() {
        let s = ParamStats::from_estimates("x", 2.0, &[2.1]).unwrap();
        assert_eq!(s.delta_min_pct, s.delta_max_pct);
        assert_eq!(s.std, 0.0);
        assert!((s.mu_delta_pct - 5.0).abs() < 1e-12);
    }

    #[test]
    fn jarque_bera_separates_shapes() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Exp, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let g: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e: Vec<f64> = (0..5000).map(|_| Exp::new(1.0).unwrap().sample(&mut rng)).collect();
        let rg = residual_report(&g, Some(1.0)).unwrap();
        assert!(rg.jarque_bera < 13.8, "{}", rg.jarque_bera); // χ²(2) at 0.999
        assert!((rg.ratio - 1.0).abs() < 0.05);
        assert!(residual_report(&e, None).unwrap().jarque_bera > 100.0);
        assert!(residual_report(&e, None).unwrap().ratio.is_nan());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let s: Vec<u64> = (0..1000).map(|k| replicate_seed(7, k)).collect();
        let mut u = s.clone();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 1000);
        assert_eq!(s[3], replicate_seed(7, 3));
        assert_ne!(replicate_seed(7, 3), replicate_seed(8, 3));
    }

    #[test]
    fn sweep_grid() {
        let net = crate::cpe::decompose_with_q(22281.0, 0.52, 30, 0.24, 0.3).unwrap();
        let rows = impedance_sweep(&net, 1e-4, 1.0, 200).unwrap();
        assert_eq!(rows.len(), 200);
        assert_eq!(rows[0].f, 1e-4);
        assert_eq!(rows[199].f, 1.0);
        assert!(rows.windows(2).all(|w| w[1].f > w[0].f));
        assert!(rows.iter().all(|r| r.im <= 0.0 && r.phase <= 0.0));
        assert!(impedance_sweep(&net, 1.0, 1e-4, 10).is_err());
    }

    #[test]
    fn reference_dump_has_100_branches() {
        let d = network_dump(&reference_truth(), &truth_decomposition(1.0)).unwrap();
        assert_eq!(d.branches.len(), 100);
        assert_eq!(d.network.n, 100);
    }
}
