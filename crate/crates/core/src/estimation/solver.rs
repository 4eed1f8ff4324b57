//! Levenberg-Marquardt for small dense box-constrained least-squares problems.
//!
//! Trial steps are projected onto the box. Variables sitting on a bound with
//! the gradient pointing outward are frozen for the step. Damping follows
//! a gain-ratio update with diagonal scaling of JᵀJ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when the projected gradient, relative to the cost, falls below this.
    pub gtol: f64,
    /// Stop when an accepted step reduces the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when an accepted step moves every coordinate by less than this.
    pub xtol: f64,
    /// Initial damping relative to the largest diagonal entry of `JᵀJ`.
    pub initial_damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iterations: 200, gtol: 1e-10, ftol: 1e-12, xtol: 1e-10, initial_damping: 1e-3 }
    }
}

/// Residual model seen by the solver.
pub trait LeastSquaresProblem {
    /// Residual vector at `x`.
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Residuals and their Jacobian `∂r/∂x` at `x`.
    fn jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ProjectedGradient,
    CostStalled,
    StepStalled,
    /// No damping level produced a decrease; the point is stationary to working precision.
    NoDecrease,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutcome {
    pub x: DVector<f64>,
    /// Sum of squared residuals at `x`.
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Accepted iterates, starting with the projected initial point.
    pub path: Vec<DVector<f64>>,
}

pub fn project(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().zip(lo.iter().zip(hi.iter())).map(|(v, (l, h))| v.clamp(*l, *h)))
}

pub fn solve<P: LeastSquaresProblem>(
    problem: &P,
    x0: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    cfg: &SolverConfig,
) -> SolverOutcome {
    let p = x0.len();
    let mut x = project(x0, lo, hi);
    let (mut r, mut jac) = problem.jacobian(&x);
    let mut cost = 0.5 * r.norm_squared();
    let mut path = vec![x.clone()];
    let mut mu = f64::NAN;
    let mut nu = 2.0;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let grad = jac.transpose() * &r;
        let hess = jac.transpose() * &jac;

        let pg = &x - project(&(&x - &grad), lo, hi);
        if pg.amax() <= cfg.gtol * cost.max(f64::MIN_POSITIVE) {
            termination = Termination::ProjectedGradient;
            break;
        }
        let free: Vec<usize> = (0..p)
            .filter(|&i| !((x[i] <= lo[i] && grad[i] > 0.0) || (x[i] >= hi[i] && grad[i] < 0.0)))
            .collect();
        if free.is_empty() {
            termination = Termination::ProjectedGradient;
            break;
        }
        let scale: Vec<f64> = (0..p).map(|i| hess[(i, i)].max(1e-300)).collect();
        if mu.is_nan() {
            mu = cfg.initial_damping * scale.iter().cloned().fold(0.0, f64::max);
        }

        iterations += 1;
        let mut accepted = false;
        for _ in 0..60 {
            let m = free.len();
            let mut a = DMatrix::zeros(m, m);
            let mut rhs = DVector::zeros(m);
            for (ii, &i) in free.iter().enumerate() {
                rhs[ii] = -grad[i];
                for (jj, &j) in free.iter().enumerate() {
                    a[(ii, jj)] = hess[(i, j)];
                }
                a[(ii, ii)] += mu * scale[i];
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    mu *= nu;
                    nu *= 2.0;
                    continue;
                }
            };
            let mut trial = x.clone();
            for (ii, &i) in free.iter().enumerate() {
                trial[i] += step[ii];
            }
            let trial = project(&trial, lo, hi);
            let dx = &trial - &x;
            if dx.amax() == 0.0 {
                mu *= nu;
                nu *= 2.0;
                continue;
            }
            let jdx = &jac * &dx;
            let predicted = -grad.dot(&dx) - 0.5 * jdx.norm_squared();
            let r_trial = problem.residuals(&trial);
            let cost_trial = 0.5 * r_trial.norm_squared();
            let actual = cost - cost_trial;
            if cost_trial.is_finite() && actual > 0.0 && predicted > 0.0 {
                let rho = actual / predicted;
                mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                let small_step = dx.amax() <= cfg.xtol;
                let small_gain = actual <= cfg.ftol * cost;
                x = trial;
                let (r_new, j_new) = problem.jacobian(&x);
                r = r_new;
                jac = j_new;
                cost = 0.5 * r.norm_squared();
                path.push(x.clone());
                accepted = true;
                if small_step {
                    termination = Termination::StepStalled;
                } else if small_gain {
                    termination = Termination::CostStalled;
                }
                break;
            }
            mu *= nu;
            nu *= 2.0;
            if !mu.is_finite() || mu > 1e300 {
                break;
            }
        }
        if !accepted {
            termination = Termination::NoDecrease;
            break;
        }
        if matches!(termination, Termination::StepStalled | Termination::CostStalled) {
            break;
        }
    }
    let converged = termination != Termination::MaxIterations;
    SolverOutcome { x, sse: 2.0 * cost, iterations, converged, termination, path }
}
