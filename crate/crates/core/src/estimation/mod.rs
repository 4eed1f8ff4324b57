//! Estimation of `[R_Σ, Q, φ]` from a voltage/current record.
//!
//! For a fixed branch count `n` the search runs over the reduced vector
//! `θ = [R_Σ, R₁, a, f_max]`; `b = q/a` and `C₁ = q^(1−n) / (2π R₁ f_max)`
//! are implied, which turns the feasible set into a box. [`estimate`] fits
//! `n = 1, 2, …` in turn, warm-starting each fit from the previous
//! reconstruction, until the fitted vector stops moving.

mod bounds;
mod model;
pub mod solver;

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bounds::{derive_bounds, h_c, h_r, BoundGrid, PhysicalBounds, ThetaBox};
pub use model::{model_voltage, objective, residual_jacobian, Objective, INFEASIBLE_SCALE};
pub use solver::{SolverConfig, Termination};

use crate::cpe::{decompose_with_q, reconstruct, ripple_coefficient, CpeTriple};
use crate::ecm::{CellConfig, TimeSeries};
use crate::error::{Error, Result};
use solver::LeastSquaresProblem;

/// Reduced parameter vector searched by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedTheta {
    pub r_sigma: f64,
    /// Resistance of the slowest branch.
    pub r1: f64,
    pub a: f64,
    pub f_max: f64,
}

impl ReducedTheta {
    pub fn to_array(&self) -> [f64; 4] {
        [self.r_sigma, self.r1, self.a, self.f_max]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self { r_sigma: v[0], r1: v[1], a: v[2], f_max: v[3] }
    }

    /// Same vector with `R₁` replaced by the fastest-branch resistance `R_n = R₁ a^(n−1)`.
    ///
    /// Adding a branch extends the ladder at its slow end, which rescales `R₁`
    /// by roughly `1/a`; `R_n` refers to the same physical branch for every `n`.
    pub fn fast_aligned(&self, n: usize) -> [f64; 4] {
        [self.r_sigma, self.r1 * self.a.powi(n as i32 - 1), self.a, self.f_max]
    }

    fn to_log(self) -> DVector<f64> {
        DVector::from_iterator(4, self.to_array().iter().map(|v| v.ln()))
    }

    fn from_log(x: &DVector<f64>) -> Self {
        Self::from_array(std::array::from_fn(|i| x[i].exp()))
    }
}

/// Least-squares estimate of `R_Σ` with every RC branch neglected.
///
/// Both series are detrended first so that the OCV level does not leak into
/// the slope. The magnitude of the slope is returned: under the discharge-
/// positive convention the voltage falls with current. The result is clipped
/// into `r_sigma_range` when given.
pub fn init_r_sigma(current: &[f64], voltage: &[f64], r_sigma_range: Option<(f64, f64)>) -> Result<f64> {
    if current.len() != voltage.len() || current.len() < 2 {
        return Err(Error::Data(format!(
            "need two equally long series of at least 2 samples, got {} and {}",
            current.len(),
            voltage.len()
        )));
    }
    let n = current.len() as f64;
    let mean_i = current.iter().sum::<f64>() / n;
    let mean_v = voltage.iter().sum::<f64>() / n;
    let (mut sii, mut siv) = (0.0, 0.0);
    for (i, v) in current.iter().zip(voltage) {
        let di = i - mean_i;
        sii += di * di;
        siv += di * (v - mean_v);
    }
    if !(sii > 0.0) {
        return Err(Error::Degenerate("current has no variation around its mean".into()));
    }
    let r = (siv / sii).abs();
    Ok(match r_sigma_range {
        Some((lo, hi)) => r.clamp(lo, hi),
        None => r,
    })
}

/// Mid-point `(f_s/2)(1/π + 1/N)` of the default `f_max` range.
pub fn default_f_max0(ts: f64, n_samples: usize) -> f64 {
    0.5 / ts * (1.0 / std::f64::consts::PI + 1.0 / n_samples as f64)
}

/// Initial `θ` from a CPE guess: decompose it with `n` branches at `f_max0`.
pub fn init_theta(p0: &CpeTriple, n: usize, q: f64, f_max0: f64) -> Result<ReducedTheta> {
    let net = decompose_with_q(p0.q_coef, p0.phi, n, q, f_max0)?;
    Ok(ReducedTheta { r_sigma: p0.r_sigma, r1: net.r1, a: net.a, f_max: f_max0 })
}

/// Draws `φ` uniformly and `Q` log-uniformly within the bounds.
pub fn random_cpe_guess(pb: &PhysicalBounds, r_sigma: f64, seed: u64) -> CpeTriple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = if pb.phi_max > pb.phi_min { rng.random_range(pb.phi_min..pb.phi_max) } else { pb.phi_min };
    let q_coef = if pb.q_max > pb.q_min {
        rng.random_range(pb.q_min.ln()..pb.q_max.ln()).exp()
    } else {
        pb.q_min
    };
    CpeTriple { r_sigma, q_coef, phi }
}

struct LadderProblem<'a> {
    data: &'a TimeSeries,
    cell: &'a CellConfig,
    n: usize,
    q: f64,
}

impl LeastSquaresProblem for LadderProblem<'_> {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let theta = ReducedTheta::from_log(x);
        match objective(&theta, self.n, self.q, self.data, self.cell) {
            Ok(o) => o.residuals,
            Err(_) => DVector::from_element(self.data.len(), f64::INFINITY),
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, nalgebra::DMatrix<f64>) {
        let theta = ReducedTheta::from_log(x);
        let obj = objective(&theta, self.n, self.q, self.data, self.cell);
        match (obj, residual_jacobian(&theta, self.n, self.q, self.data, self.cell)) {
            (Ok(o), Ok((_, mut jac))) if o.feasible => {
                // chain rule for the log coordinates
                for (c, v) in theta.to_array().iter().enumerate() {
                    jac.column_mut(c).scale_mut(*v);
                }
                (o.residuals, jac)
            }
            (Ok(o), _) => (o.residuals, nalgebra::DMatrix::zeros(self.data.len(), 4)),
            (Err(_), _) => (
                DVector::from_element(self.data.len(), f64::INFINITY),
                nalgebra::DMatrix::zeros(self.data.len(), 4),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub theta_hat: ReducedTheta,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// False if the returned point is outside the stable region (penalty objective).
    pub feasible: bool,
    pub termination: Termination,
    /// Accepted iterates, the projected start first.
    pub path: Vec<ReducedTheta>,
}

/// Box-constrained nonlinear least squares for a fixed branch count.
///
/// The solver works on `ln θ`, so the box is preserved and the very
/// different scales of `R₁` and `f_max` do not matter.
pub fn fit(
    data: &TimeSeries,
    theta0: &ReducedTheta,
    bounds: &ThetaBox,
    n: usize,
    q: f64,
    solver: &SolverConfig,
    cell: &CellConfig,
) -> Result<FitOutcome> {
    data.validate()?;
    data.voltage()?;
    let problem = LadderProblem { data, cell, n, q };
    let lo = bounds.lo.to_log();
    let hi = bounds.hi.to_log();
    let out = solver::solve(&problem, &theta0.to_log(), &lo, &hi, solver);
    if !out.sse.is_finite() {
        return Err(Error::Model("objective is not finite at the starting point".into()));
    }
    let theta_hat = ReducedTheta::from_log(&out.x);
    let feasible = objective(&theta_hat, n, q, data, cell)?.feasible;
    Ok(FitOutcome {
        theta_hat,
        sse: out.sse,
        iterations: out.iterations,
        converged: out.converged && feasible,
        feasible,
        termination: out.termination,
        path: out.path.iter().map(ReducedTheta::from_log).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Stop once the largest relative change of the fitted vector between
    /// consecutive branch counts is at most this.
    pub epsilon: f64,
    pub n_rc_max: usize,
    /// Phase ripple (rad) fixing the ladder ratio `q`.
    pub delta_phi: f64,
    pub grid: BoundGrid,
    pub solver: SolverConfig,
    /// Seed for the random CPE guess when `p0` is not given.
    pub seed: u64,
    pub p0: Option<CpeTriple>,
    pub f_max0: Option<f64>,
    /// Also fit from the largest admissible `f_max` and keep the lower SSE.
    pub restart_f_max: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            n_rc_max: 25,
            delta_phi: 0.0,
            grid: BoundGrid::default(),
            solver: SolverConfig::default(),
            seed: 0,
            p0: None,
            f_max0: None,
            restart_f_max: true,
        }
    }
}

impl EstimatorConfig {
    pub fn q(&self) -> Result<f64> {
        ripple_coefficient(self.delta_phi)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.n_rc_max == 0 {
            return Err(Error::Config("n_rc_max must be at least 1".into()));
        }
        self.q()?;
        Ok(())
    }
}

/// Relative change between the fits at `n − 1` and `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub n: usize,
    /// Max-norm of `components`.
    pub delta: f64,
    /// Per component of `[R_Σ, R_n, a, f_max]`.
    pub components: [f64; 4],
}

/// One pass of the outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStep {
    pub n: usize,
    pub theta0: ReducedTheta,
    pub theta_hat: ReducedTheta,
    pub p_hat: CpeTriple,
    pub sse: f64,
    pub iterations: usize,
    pub solver_converged: bool,
    pub feasible: bool,
    pub bounds: ThetaBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta_hat: ReducedTheta,
    pub p_hat: CpeTriple,
    pub n_used: usize,
    pub sse: f64,
    /// Solver iterations summed over all branch counts.
    pub iterations: usize,
    /// True when the relative-change criterion was met.
    pub converged: bool,
    pub p0: CpeTriple,
    pub delta_history: Vec<DeltaRecord>,
    pub steps: Vec<FitStep>,
    pub wall_time_s: f64,
}

fn clamp_guess(p: &CpeTriple, pb: &PhysicalBounds) -> CpeTriple {
    CpeTriple {
        r_sigma: p.r_sigma.clamp(pb.r_sigma_min, pb.r_sigma_max),
        q_coef: p.q_coef.clamp(pb.q_min, pb.q_max),
        phi: p.phi.clamp(pb.phi_min, pb.phi_max),
    }
}

/// Grows the branch count from 1 until the fitted vector settles.
///
/// Each `n` is initialized by decomposing the previous reconstruction (the
/// initial guess for `n = 1`), fitted inside its own box, and reconstructed.
/// The loop stops when the relative change is at most `ε` or after
/// `n_rc_max` branches; without convergence the lowest-SSE fit is reported.
pub fn estimate(data: &TimeSeries, pb: &PhysicalBounds, cfg: &EstimatorConfig, cell: &CellConfig) -> Result<FitReport> {
    let started = Instant::now();
    data.validate()?;
    pb.validate()?;
    cfg.validate()?;
    cell.validate()?;
    let voltage = data.voltage()?;
    let q = cfg.q()?;

    let r_sigma0 = init_r_sigma(&data.current, voltage, Some((pb.r_sigma_min, pb.r_sigma_max)))?;
    let p0 = match cfg.p0 {
        Some(p) => CpeTriple { r_sigma: r_sigma0, ..p },
        None => random_cpe_guess(pb, r_sigma0, cfg.seed),
    };
    let f_max0 = cfg
        .f_max0
        .unwrap_or_else(|| default_f_max0(data.ts, data.len()))
        .clamp(pb.f_max_lo, pb.f_max_hi);

    let mut steps: Vec<FitStep> = Vec::new();
    let mut delta_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for n in 1..=cfg.n_rc_max {
        let bounds = derive_bounds(pb, n, q, &cfg.grid)?;
        let (guess, f_start) = match steps.last() {
            None => (p0, f_max0),
            Some(prev) => (prev.p_hat, prev.theta_hat.f_max),
        };
        let guess = clamp_guess(&guess, pb);
        let mut starts = vec![f_start];
        if cfg.restart_f_max {
            // the f_max landscape has a basin near f_s/2π, where the fastest
            // Euler branch turns oscillatory; also start above it
            if f_start != pb.f_max_hi {
                starts.push(pb.f_max_hi);
            }
        }
        let mut best: Option<(ReducedTheta, FitOutcome)> = None;
        for f in starts {
            let theta0 = bounds.project(&init_theta(&guess, n, q, f)?);
            let out = fit(data, &theta0, &bounds, n, q, &cfg.solver, cell)?;
            iterations += out.iterations;
            let better = match &best {
                None => true,
                Some((_, b)) => out.feasible && (!b.feasible || out.sse < b.sse),
            };
            if better {
                best = Some((theta0, out));
            }
        }
        let (theta0, out) = best.expect("at least one start");
        let p_hat = reconstruct(&out.theta_hat, n, q)?;
        log::debug!("n = {n}: sse = {:.6e}, p = {:?}", out.sse, p_hat);

        if !out.feasible {
            log::warn!("n = {n}: fit ended outside the stable region");
        }
        if let Some(prev) = steps.last().filter(|p| p.feasible && out.feasible) {
            let cur = out.theta_hat.fast_aligned(n);
            let old = prev.theta_hat.fast_aligned(prev.n);
            let components: [f64; 4] = std::array::from_fn(|i| ((cur[i] - old[i]) / cur[i]).abs());
            let delta = components.iter().cloned().fold(0.0, f64::max);
            delta_history.push(DeltaRecord { n, delta, components });
            converged = delta <= cfg.epsilon;
        }
        steps.push(FitStep {
            n,
            theta0,
            theta_hat: out.theta_hat,
            p_hat,
            sse: out.sse,
            iterations: out.iterations,
            solver_converged: out.converged,
            feasible: out.feasible,
            bounds,
        });
        if converged {
            break;
        }
    }

    let chosen = if converged {
        steps.last()
    } else {
        steps.iter().filter(|s| s.feasible).min_by(|a, b| a.sse.total_cmp(&b.sse))
    }
    .cloned()
    .ok_or_else(|| Error::Model("no branch count produced a stable fit".into()))?;

    Ok(FitReport {
        theta_hat: chosen.theta_hat,
        p_hat: chosen.p_hat,
        n_used: chosen.n,
        sse: chosen.sse,
        iterations,
        converged,
        p0,
        delta_history,
        steps,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_sigma_from_exact_line() {
        let i: Vec<f64> = (0..50).map(|k| (k as f64 * 0.3).sin()).collect();
        let v: Vec<f64> = i.iter().map(|x| 2.0 * x).collect();
        assert!((init_r_sigma(&i, &v, None).unwrap() - 2.0).abs() < 1e-12);
        // a battery drops voltage under discharge; the OCV offset is removed
        let v: Vec<f64> = i.iter().map(|x| 3.7 - 0.0014 * x).collect();
        assert!((init_r_sigma(&i, &v, None).unwrap() - 0.0014).abs() < 1e-12);
        assert_eq!(init_r_sigma(&i, &v, Some((0.01, 1.0))).unwrap(), 0.01);
    }

    #[test]
    fn r_sigma_rejects_flat_current() {
        let i = vec![0.0; 20];
        let v = vec![3.7; 20];
        assert!(matches!(init_r_sigma(&i, &v, None), Err(Error::Degenerate(_))));
        assert!(init_r_sigma(&i[..1], &v[..1], None).is_err());
    }

    #[test]
    fn r_sigma_noise_spread() {
        // v = 2 i + e: the slope error has std σ / ‖i − ī‖
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let i: Vec<f64> = (0..4000).map(|k| (k as f64 * 0.01).sin() * 3.0).collect();
        let v: Vec<f64> = i.iter().map(|x| 2.0 * x + noise.sample(&mut rng)).collect();
        let mean = i.iter().sum::<f64>() / i.len() as f64;
        let spread = 0.1 / i.iter().map(|x| (x - mean).powi(2)).sum::<f64>().sqrt();
        assert!((init_r_sigma(&i, &v, None).unwrap() - 2.0).abs() < 4.0 * spread);
    }

    #[test]
    fn f_max_midpoint() {
        let f = default_f_max0(1.0, 10800);
        assert!((f - 0.159_201_239_388_191_64).abs() < 1e-15);
    }

    #[test]
    fn init_theta_matches_decomposition() {
        let p = CpeTriple::new(0.0014, 22281.0, 0.52).unwrap();
        let t = init_theta(&p, 100, 0.24, 1.0 / std::f64::consts::PI).unwrap();
        let net = decompose_with_q(22281.0, 0.52, 100, 0.24, 1.0 / std::f64::consts::PI).unwrap();
        assert_eq!((t.r1, t.a, t.r_sigma), (net.r1, net.a, 0.0014));
    }

    #[test]
    fn random_guess_is_seeded_and_bounded() {
        let pb = PhysicalBounds::case(3, 1.0, 10800).unwrap();
        let a = random_cpe_guess(&pb, 0.001, 42);
        assert_eq!(a, random_cpe_guess(&pb, 0.001, 42));
        assert_ne!(a, random_cpe_guess(&pb, 0.001, 43));
        assert!(a.phi >= pb.phi_min && a.phi <= pb.phi_max);
        assert!(a.q_coef >= pb.q_min && a.q_coef <= pb.q_max);
        let t1 = init_theta(&a, 7, 0.24, 0.159).unwrap();
        let t2 = init_theta(&random_cpe_guess(&pb, 0.001, 42), 7, 0.24, 0.159).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn config_validation() {
        let cfg = EstimatorConfig { epsilon: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = EstimatorConfig { n_rc_max: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert_eq!(EstimatorConfig::default().q().unwrap(), 0.24);
    }
}
