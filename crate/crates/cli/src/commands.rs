use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use lfecm::cpe::{self, CpeTriple, DecompositionConfig};
use lfecm::ecm::{max_stable_corner, CellConfig, DiscreteModel, TimeSeries};
use lfecm::estimation::{self, EstimatorConfig, PhysicalBounds};
use lfecm::excitation::{self, fcr_power, power_to_current, synth_frequency, FcrConfig, FrequencySeries, NoiseConfig};
use lfecm::harness::{
    self, fcr_current, frequency_seed, impedance_sweep, network_dump, residual_report, run_montecarlo_on, MonteCarloResult,
    MonteCarloSpec,
};
use lfecm::io::{read_frequency, read_json, read_series_file, write_json, write_series_file};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{BoundArgs, DecomposeArgs, EstimateArgs, FcrArgs, FrequencySource, GenerateArgs, MonteCarloArgs, SolverArgs, TruthArgs};

pub struct Context {
    pub seed: u64,
    pub ts: f64,
    pub out_dir: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn cell(&self) -> CellConfig {
        CellConfig { ts: self.ts, ..CellConfig::nmc_60ah() }
    }
}

/// Where a frequency trace came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyOrigin {
    pub path: Option<PathBuf>,
    /// Seed of the synthetic trace; absent for file input.
    pub seed: Option<u64>,
}

/// Self-description written next to every generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub noiseless: bool,
    pub n_samples: usize,
    pub truth: CpeTriple,
    pub decomposition: DecompositionConfig,
    pub cell: CellConfig,
    pub noise: NoiseConfig,
    pub fcr: FcrConfig,
    pub frequency: FrequencyOrigin,
    pub seed: u64,
    pub stable: bool,
}

fn write_rows<const K: usize>(path: &Path, header: [&str; K], rows: impl Iterator<Item = [f64; K]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn load_frequency(ctx: &Context, path: Option<&Path>, duration: f64) -> Result<(FrequencySeries, FrequencyOrigin)> {
    match path {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let series = read_frequency(f).with_context(|| format!("reading {}", p.display()))?;
            Ok((series, FrequencyOrigin { path: Some(p.to_path_buf()), seed: None }))
        }
        None => {
            let seed = frequency_seed(ctx.seed);
            Ok((synth_frequency(duration, ctx.ts, seed)?, FrequencyOrigin { path: None, seed: Some(seed) }))
        }
    }
}

fn source_path(src: &FrequencySource) -> Option<&Path> {
    if src.synthetic {
        None
    } else {
        src.freq.as_deref()
    }
}

fn truth(ctx: &Context, t: &TruthArgs) -> Result<(CpeTriple, DecompositionConfig, FcrConfig)> {
    let p = CpeTriple::new(t.r_sigma, t.q_coef, t.phi)?;
    let d = DecompositionConfig { n_branches: t.n_truth, delta_phi: 0.0, f_max: t.f_max.unwrap_or(max_stable_corner(ctx.ts)) };
    d.validate()?;
    let fcr = FcrConfig { droop: t.droop, p_max: t.p_max };
    fcr.validate()?;
    Ok((p, d, fcr))
}

fn estimator(ctx: &Context, s: &SolverArgs) -> Result<EstimatorConfig> {
    let cfg = EstimatorConfig { epsilon: s.epsilon, n_rc_max: s.n_max, delta_phi: s.delta_phi, seed: ctx.seed, ..Default::default() };
    cfg.validate()?;
    Ok(cfg)
}

fn bounds(b: &BoundArgs, ts: f64, n_samples: usize) -> Result<PhysicalBounds> {
    let mut pb = PhysicalBounds::case(b.case, ts, n_samples)?;
    let overrides = [
        (&mut pb.r_sigma_min, b.r_sigma_min),
        (&mut pb.r_sigma_max, b.r_sigma_max),
        (&mut pb.q_min, b.q_min),
        (&mut pb.q_max, b.q_max),
        (&mut pb.phi_min, b.phi_min),
        (&mut pb.phi_max, b.phi_max),
        (&mut pb.f_max_lo, b.f_max_lo),
        (&mut pb.f_max_hi, b.f_max_hi),
    ];
    for (slot, value) in overrides {
        if let Some(v) = value {
            *slot = v;
        }
    }
    pb.validate()?;
    Ok(pb)
}

fn range(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

pub fn decompose(ctx: &Context, a: &DecomposeArgs) -> Result<()> {
    let cpe = CpeTriple::new(a.r_sigma, a.q_coef, a.phi)?;
    let cfg = DecompositionConfig { n_branches: a.n, delta_phi: a.delta_phi, f_max: a.f_max.unwrap_or(max_stable_corner(ctx.ts)) };
    let dump = network_dump(&cpe, &cfg)?;
    let (lo, hi, count) = a.sweep;
    let rows = impedance_sweep(&dump.network, lo, hi, count)?;

    write_json(&ctx.path("config.json"), &json!({ "cpe": cpe, "decomposition": cfg, "sweep": { "lo": lo, "hi": hi, "count": count } }))?;
    write_json(&ctx.path("results.json"), &dump)?;
    write_rows(&ctx.path("branches.csv"), ["k", "r", "c", "tau", "f"], dump.branches.iter().map(|b| [b.k as f64, b.r, b.c, b.tau, b.f]))?;
    write_rows(&ctx.path("sweep.csv"), ["f", "re", "im", "mag", "phase"], rows.iter().map(|r| [r.f, r.re, r.im, r.mag, r.phase]))?;
    println!(
        "{} branches, a={:.6} b={:.6} R_inf={:.6e} ohm, corners {:.3e}..{:.3e} Hz -> {}",
        dump.network.n,
        dump.network.a,
        dump.network.b,
        dump.network.r_inf,
        dump.network.f_min(),
        dump.network.f_max(),
        ctx.out_dir.display()
    );
    Ok(())
}

pub fn generate(ctx: &Context, a: &GenerateArgs) -> Result<()> {
    let cell = ctx.cell();
    let (p, d, fcr) = truth(ctx, &a.truth)?;
    let (freq, origin) = load_frequency(ctx, source_path(&a.source), a.truth.duration)?;
    let current = fcr_current(&freq, &fcr, &p, &d, &cell)?;
    let noise = NoiseConfig { sigma_v: a.sigma_v, sigma_i: a.sigma_i, seed: ctx.seed };
    let data = excitation::generate(&p, &d, &cell, &current, &noise)?;

    let sidecar = Sidecar {
        noiseless: noise.is_noiseless(),
        n_samples: data.noisy.len(),
        truth: p,
        decomposition: d,
        cell: cell.clone(),
        noise,
        fcr,
        frequency: origin,
        seed: ctx.seed,
        stable: data.stable,
    };
    let soc = data.clean.soc.as_deref().unwrap_or_default();
    let (soc_lo, soc_hi) = range(soc);
    let (i_lo, i_hi) = range(&data.noisy.current);
    write_series_file(&ctx.path("data.csv"), &data.noisy)?;
    write_json(&ctx.path("data.json"), &sidecar)?;
    write_json(&ctx.path("config.json"), &sidecar)?;
    write_json(
        &ctx.path("results.json"),
        &json!({ "n_samples": sidecar.n_samples, "soc_min": soc_lo, "soc_max": soc_hi, "i_min": i_lo, "i_max": i_hi, "noiseless": sidecar.noiseless, "stable": data.stable }),
    )?;
    println!(
        "N={} SOC {:.4}..{:.4} current {:.3}..{:.3} A noise sigma_v={:e} V sigma_i={:e} A{} -> {}",
        sidecar.n_samples,
        soc_lo,
        soc_hi,
        i_lo,
        i_hi,
        noise.sigma_v,
        noise.sigma_i,
        if sidecar.noiseless { " (noiseless)" } else { "" },
        ctx.out_dir.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ParamError {
    r_sigma_pct: f64,
    q_pct: f64,
    phi_pct: f64,
}

fn pct(est: f64, truth: f64) -> f64 {
    100.0 * (est - truth) / truth
}

pub fn estimate(ctx: &Context, a: &EstimateArgs) -> Result<()> {
    let data = read_series_file(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let sidecar_path = a.sidecar.clone().unwrap_or_else(|| a.data.with_extension("json"));
    let sidecar: Option<Sidecar> = if sidecar_path.exists() {
        Some(read_json(&sidecar_path).with_context(|| format!("reading {}", sidecar_path.display()))?)
    } else if a.sidecar.is_some() {
        bail!("sidecar {} not found", sidecar_path.display());
    } else {
        None
    };
    let cell = match &sidecar {
        Some(s) => s.cell.clone(),
        None => CellConfig { ts: data.ts, ..CellConfig::nmc_60ah() },
    };
    if (cell.ts - data.ts).abs() > 1e-9 * data.ts {
        bail!("dataset step {} s does not match the cell step {} s", data.ts, cell.ts);
    }
    let pb = bounds(&a.bounds, data.ts, data.len())?;
    let cfg = estimator(ctx, &a.solver)?;
    let report = estimation::estimate(&data, &pb, &cfg, &cell)?;
    let r = harness::residuals(&data, &report, cfg.delta_phi, &cell)?;
    let sigma_v = a.sigma_v.or(sidecar.as_ref().map(|s| s.noise.sigma_v));
    let resid = residual_report(&r, sigma_v)?;
    let errors = sidecar.as_ref().map(|s| ParamError {
        r_sigma_pct: pct(report.p_hat.r_sigma, s.truth.r_sigma),
        q_pct: pct(report.p_hat.q_coef, s.truth.q_coef),
        phi_pct: pct(report.p_hat.phi, s.truth.phi),
    });

    let measured = data.voltage()?;
    write_rows(
        &ctx.path("fit.csv"),
        ["t", "v", "v_model", "r"],
        data.times().zip(measured).zip(&r).map(|((t, v), r)| [t, *v, v - r, *r]),
    )?;
    write_json(&ctx.path("config.json"), &json!({ "data": a.data, "bounds": pb, "estimator": cfg, "cell": cell }))?;
    write_json(&ctx.path("results.json"), &json!({ "fit": report, "residuals": resid, "errors": errors }))?;

    let p = report.p_hat;
    println!(
        "R_sigma={:.6e} ohm Q={:.6e} phi={:.6} n={} converged={} sse={:.4e}",
        p.r_sigma, p.q_coef, p.phi, report.n_used, report.converged, report.sse
    );
    if let (Some(e), Some(s)) = (&errors, &sidecar) {
        println!(
            "truth R_sigma={:e} Q={:e} phi={}; errors {:+.3}% {:+.3}% {:+.3}%",
            s.truth.r_sigma, s.truth.q_coef, s.truth.phi, e.r_sigma_pct, e.q_pct, e.phi_pct
        );
    }
    println!("residual mean={:.3e} V std={:.4e} V ratio={:.4}", resid.mean, resid.std, resid.ratio);
    Ok(())
}

pub fn montecarlo(ctx: &Context, a: &MonteCarloArgs) -> Result<()> {
    let (p, d, fcr) = truth(ctx, &a.truth)?;
    let cell = ctx.cell();
    let noise = NoiseConfig { sigma_v: a.sigma_v, sigma_i: a.sigma_i, seed: ctx.seed };
    let (freq, origin) = load_frequency(ctx, a.freq.as_deref(), a.truth.duration)?;
    let current = fcr_current(&freq, &fcr, &p, &d, &cell)?;
    let clean = excitation::generate(&p, &d, &cell, &current, &NoiseConfig::noiseless())?.clean;
    let estimator = estimator(ctx, &a.solver)?;

    let mut specs = Vec::new();
    for &case in &a.cases {
        let spec = MonteCarloSpec {
            n_sim: a.n_sim,
            bounds: PhysicalBounds::case(case, cell.ts, clean.len())?,
            p_true: p,
            decomposition: d,
            cell: cell.clone(),
            noise,
            fcr,
            duration: clean.len() as f64 * cell.ts,
            master_seed: ctx.seed,
            estimator: estimator.clone(),
        };
        spec.validate()?;
        specs.push((case, spec));
    }
    write_json(&ctx.path("config.json"), &json!({ "frequency": origin, "cases": specs.iter().map(|(c, s)| json!({ "case": c, "spec": s })).collect::<Vec<_>>() }))?;

    let mut results: Vec<(u8, MonteCarloResult)> = Vec::new();
    for (case, spec) in &specs {
        let res = run_montecarlo_on(spec, &clean)?;
        log::info!("case {case}: {} ok, {} failed in {:.1} s", res.successes, res.failures, res.wall_time_s);
        results.push((*case, res));
    }

    let mut stats = csv::Writer::from_path(ctx.path("stats.csv"))?;
    stats.write_record(["case", "param", "true_value", "mean", "std", "mu_delta_pct", "delta_min_pct", "delta_max_pct"])?;
    let mut reps = csv::Writer::from_path(ctx.path("replicates.csv"))?;
    reps.write_record(["case", "index", "seed", "converged", "n_used", "r_sigma", "q", "phi", "sse", "iterations", "wall_time_s", "error"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (case, res) in &results {
        if let Some(s) = &res.stats {
            for ps in s.params() {
                let row = [ps.true_value, ps.mean, ps.std, ps.mu_delta_pct, ps.delta_min_pct, ps.delta_max_pct];
                stats.write_record([case.to_string(), ps.name.clone()].into_iter().chain(row.iter().map(|v| v.to_string())))?;
                println!(
                    "case {case} {:<8} true={:<10e} mean={:<12.6e} mu_delta={:.3}% min={:.3}% max={:.3}%",
                    ps.name, ps.true_value, ps.mean, ps.mu_delta_pct, ps.delta_min_pct, ps.delta_max_pct
                );
            }
        }
        for r in &res.replicates {
            reps.write_record([
                case.to_string(),
                r.index.to_string(),
                r.seed.to_string(),
                r.converged.to_string(),
                r.n_used.map(|n| n.to_string()).unwrap_or_default(),
                opt(r.p_hat.map(|p| p.r_sigma)),
                opt(r.p_hat.map(|p| p.q_coef)),
                opt(r.p_hat.map(|p| p.phi)),
                opt(r.sse),
                r.iterations.to_string(),
                r.wall_time_s.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
    }
    stats.flush()?;
    reps.flush()?;
    write_json(&ctx.path("results.json"), &results.iter().map(|(c, r)| json!({ "case": c, "result": r })).collect::<Vec<_>>())?;

    let bad: Vec<String> =
        results.iter().filter(|(_, r)| r.failure_fraction() > 0.1).map(|(c, r)| format!("case {c}: {}/{}", r.failures, r.replicates.len())).collect();
    if !bad.is_empty() {
        bail!("more than 10% of replicates failed ({})", bad.join(", "));
    }
    Ok(())
}

pub fn fcr(ctx: &Context, a: &FcrArgs) -> Result<()> {
    let cell = ctx.cell();
    let (p, d, fcr) = truth(ctx, &a.truth)?;
    let (freq, origin) = load_frequency(ctx, source_path(&a.source), a.truth.duration)?;
    if (freq.ts - cell.ts).abs() > 1e-12 * cell.ts {
        bail!("frequency sampled at {} s, expected --ts {}", freq.ts, cell.ts);
    }
    let power = fcr_power(&freq, &fcr);
    let net = cpe::decompose(&p, &d)?;
    let model = DiscreteModel::from_ladder(p.r_sigma, &net, &cell)?;
    let prof = power_to_current(&power, &model, &model.rest_state(cell.soc0), &cell)?;
    let TimeSeries { current, voltage, soc, .. } = &prof.series;
    let (voltage, soc) = (voltage.as_deref().unwrap_or_default(), soc.as_deref().unwrap_or_default());
    let df = freq.deviation();

    write_rows(
        &ctx.path("fcr.csv"),
        ["t", "f", "df", "p", "i", "v", "soc"],
        (0..power.len()).map(|k| [k as f64 * freq.ts, freq.freq[k], df[k], power[k], current[k], voltage[k], soc[k]]),
    )?;
    let (p_lo, p_hi) = range(&power);
    let (soc_lo, soc_hi) = range(soc);
    let excursion = (soc_hi - cell.soc0).abs().max((cell.soc0 - soc_lo).abs());
    write_json(&ctx.path("config.json"), &json!({ "truth": p, "decomposition": d, "fcr": fcr, "cell": cell, "frequency": origin }))?;
    write_json(
        &ctx.path("results.json"),
        &json!({ "n_samples": power.len(), "p_min": p_lo, "p_max": p_hi, "soc_min": soc_lo, "soc_max": soc_hi, "soc_excursion": excursion }),
    )?;
    println!("N={} P {:.3}..{:.3} W SOC {:.4}..{:.4} -> {}", power.len(), p_lo, p_hi, soc_lo, soc_hi, ctx.out_dir.display());
    Ok(())
}
