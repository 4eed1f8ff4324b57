//! FCR excitation and synthetic measurement generation.
//!
//! A grid-frequency trace is mapped to a droop power request, the request is
//! turned into cell current by dividing by the previous terminal voltage, and
//! the resulting current/voltage pair is corrupted with Gaussian sensor noise.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cpe::{decompose, CpeTriple, DecompositionConfig, LadderNetwork};
use crate::ecm::{ocv_eval, simulate, stability_margin, CellConfig, DiscreteModel, TimeSeries};
use crate::error::{Error, Result};

/// Edge of the linear droop band in Hz.
pub const DEADBAND_EDGE: f64 = 0.2;

/// Terminal voltage below which current conversion is abandoned.
pub const VOLTAGE_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySeries {
    pub ts: f64,
    pub freq: Vec<f64>,
    pub nominal: f64,
}

impl FrequencySeries {
    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::Data(format!("sampling time must be positive, got {}", self.ts)));
        }
        if self.freq.is_empty() {
            return Err(Error::Data("empty frequency series".into()));
        }
        if let Some((k, f)) = self
            .freq
            .iter()
            .enumerate()
            .find(|(_, f)| !((**f - self.nominal).abs() <= 5.0))
        {
            return Err(Error::Data(format!("sample {k}: {f} Hz is outside nominal ± 5 Hz")));
        }
        Ok(())
    }

    pub fn deviation(&self) -> Vec<f64> {
        self.freq.iter().map(|f| f - self.nominal).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcrConfig {
    /// Droop in W/Hz.
    pub droop: f64,
    pub p_max: f64,
}

impl Default for FcrConfig {
    fn default() -> Self {
        Self { droop: 100.0, p_max: 20.0 }
    }
}

impl FcrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.droop > 0.0) {
            return Err(Error::Config(format!("droop must be positive, got {}", self.droop)));
        }
        if !(self.p_max >= self.droop * DEADBAND_EDGE) {
            return Err(Error::Config(format!(
                "p_max = {} is below droop·{DEADBAND_EDGE} = {}",
                self.p_max,
                self.droop * DEADBAND_EDGE
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_v: f64,
    pub sigma_i: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    /// One third of a 1.5 mV / 50 mA sensor accuracy.
    fn default() -> Self {
        Self { sigma_v: 0.0015 / 3.0, sigma_i: 0.05 / 3.0, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self { sigma_v: 0.0, sigma_i: 0.0, seed: 0 }
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_v == 0.0 && self.sigma_i == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_v >= 0.0 && self.sigma_i >= 0.0 && self.sigma_v.is_finite() && self.sigma_i.is_finite()) {
            return Err(Error::Config(format!(
                "noise levels must be finite and >= 0, got σ_V = {}, σ_I = {}",
                self.sigma_v, self.sigma_i
            )));
        }
        Ok(())
    }
}

/// Droop power for one frequency deviation; positive power discharges.
pub fn fcr_power_at(df: f64, cfg: &FcrConfig) -> f64 {
    if df >= DEADBAND_EDGE {
        cfg.p_max
    } else if df <= -DEADBAND_EDGE {
        -cfg.p_max
    } else {
        cfg.droop * df
    }
}

pub fn fcr_power(freq: &FrequencySeries, cfg: &FcrConfig) -> Vec<f64> {
    freq.freq.iter().map(|f| fcr_power_at(f - freq.nominal, cfg)).collect()
}

/// Mean-reversion time of the synthetic frequency in seconds.
pub const SYNTH_TAU: f64 = 60.0;
/// Stationary standard deviation of the synthetic frequency in Hz.
pub const SYNTH_SIGMA: f64 = 0.02;

/// Seeded Ornstein–Uhlenbeck frequency around 50 Hz, clipped to ±0.2 Hz.
///
/// The process is sampled exactly, so its statistics do not depend on `ts`.
/// The first sample is drawn from the stationary law.
pub fn synth_frequency(duration: f64, ts: f64, seed: u64) -> Result<FrequencySeries> {
    if !(ts > 0.0 && duration >= ts && duration.is_finite()) {
        return Err(Error::Config(format!("need duration >= ts > 0, got duration {duration}, ts {ts}")));
    }
    let n = (duration / ts).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = (-ts / SYNTH_TAU).exp();
    let kick = SYNTH_SIGMA * (1.0 - rho * rho).sqrt();
    let z0: f64 = StandardNormal.sample(&mut rng);
    let mut x = SYNTH_SIGMA * z0;
    let mut freq = Vec::with_capacity(n);
    for _ in 0..n {
        freq.push(50.0 + x.clamp(-DEADBAND_EDGE, DEADBAND_EDGE));
        let z: f64 = StandardNormal.sample(&mut rng);
        x = rho * x + kick * z;
    }
    Ok(FrequencySeries { ts, freq, nominal: 50.0 })
}

/// Power request converted to current with the voltage of the previous sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentProfile {
    /// Current, co-simulated voltage and SOC.
    pub series: TimeSeries,
    pub final_state: DVector<f64>,
}

/// Sequential conversion `i_k = P_k / v_{k−1}` with `v_{−1} = OCV(soc0)`.
///
/// The state `x0` must carry the SOC in its last entry.
pub fn power_to_current(power: &[f64], model: &DiscreteModel, x0: &DVector<f64>, cell: &CellConfig) -> Result<CurrentProfile> {
    if x0.len() != model.n() + 1 {
        return Err(Error::Model(format!("initial state has {} entries, model needs {}", x0.len(), model.n() + 1)));
    }
    if !stability_margin(model).is_stable {
        log::warn!("power conversion on a model with a branch eigenvalue on or outside the unit circle");
    }
    let mut x = x0.clone();
    let mut v_prev = ocv_eval(cell, x0[model.n()])?;
    let mut current = Vec::with_capacity(power.len());
    let mut voltage = Vec::with_capacity(power.len());
    let mut soc = Vec::with_capacity(power.len());
    for (k, p) in power.iter().enumerate() {
        let i = p / v_prev;
        let v = model.output(&x, i);
        if !(v > VOLTAGE_FLOOR) {
            return Err(Error::Divergence { index: k, reason: format!("terminal voltage {v} V at or below the floor") });
        }
        current.push(i);
        voltage.push(v);
        soc.push(x[model.n()]);
        model.step(&mut x, i);
        v_prev = v;
    }
    Ok(CurrentProfile {
        series: TimeSeries { ts: model.ts(), current, voltage: Some(voltage), soc: Some(soc) },
        final_state: x,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    /// Noise-free current, voltage and SOC.
    pub clean: TimeSeries,
    /// Measured current and voltage.
    pub noisy: TimeSeries,
    pub network: LadderNetwork,
    pub stable: bool,
}

/// Independent standard-normal channels split from one seed.
fn noise_channel(seed: u64, stream: u64, sigma: f64, n: usize) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let dist = Normal::new(0.0, sigma).expect("sigma checked finite and >= 0");
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Measured copy of a clean record: current and voltage plus Gaussian noise.
///
/// Voltage noise uses stream 0 and current noise stream 1 of the noise seed.
pub fn add_noise(clean: &TimeSeries, noise: &NoiseConfig) -> Result<TimeSeries> {
    noise.validate()?;
    let v = clean.voltage()?;
    let n = clean.len();
    let dv = noise_channel(noise.seed, 0, noise.sigma_v, n);
    let di = noise_channel(noise.seed, 1, noise.sigma_i, n);
    Ok(TimeSeries {
        ts: clean.ts,
        current: clean.current.iter().zip(&di).map(|(i, e)| i + e).collect(),
        voltage: Some(v.iter().zip(&dv).map(|(v, e)| v + e).collect()),
        soc: None,
    })
}

/// Simulates the decomposed truth under `current` and adds sensor noise.
pub fn generate(
    p_true: &CpeTriple,
    decomposition: &DecompositionConfig,
    cell: &CellConfig,
    current: &TimeSeries,
    noise: &NoiseConfig,
) -> Result<GeneratedData> {
    p_true.validate()?;
    noise.validate()?;
    current.validate()?;
    if (current.ts - cell.ts).abs() > 1e-12 * cell.ts {
        return Err(Error::Config(format!("current sampled at {} s, cell at {} s", current.ts, cell.ts)));
    }
    let network = decompose(p_true, decomposition)?;
    let model = DiscreteModel::from_ladder(p_true.r_sigma, &network, cell)?;
    let sim = simulate(&model, &model.rest_state(cell.soc0), &TimeSeries::from_current(current.ts, current.current.clone()))?;
    let clean = sim.series;
    let noisy = add_noise(&clean, noise)?;
    Ok(GeneratedData { clean, noisy, network, stable: sim.stable })
}
