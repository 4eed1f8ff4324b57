//! Least-squares residuals of the ladder model and their analytic Jacobian.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::ReducedTheta;
use crate::cpe::expand_theta;
use crate::ecm::{simulate, CellConfig, DiscreteModel, TimeSeries};
use crate::error::{Error, Result};

/// Residual multiplier applied to the measured voltage when a trial point is unstable.
pub const INFEASIBLE_SCALE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    /// `ṽ_k − v_k(θ)`.
    pub residuals: DVector<f64>,
    pub sse: f64,
    /// False when the trial model was unstable or diverged and the penalty was returned.
    pub feasible: bool,
}

fn penalty(measured: &[f64]) -> Objective {
    let residuals = DVector::from_iterator(measured.len(), measured.iter().map(|v| v * INFEASIBLE_SCALE));
    let sse = residuals.norm_squared();
    Objective { residuals, sse, feasible: false }
}

/// Simulated terminal voltage for `θ` driven by the measured current, starting at rest.
pub fn model_voltage(theta: &ReducedTheta, n: usize, q: f64, current: &TimeSeries, cell: &CellConfig) -> Result<(Vec<f64>, bool)> {
    let net = expand_theta(theta, n, q)?;
    let model = DiscreteModel::from_ladder(theta.r_sigma, &net, cell)?;
    let sim = simulate(&model, &model.rest_state(cell.soc0), current)?;
    let v = sim.series.voltage.unwrap_or_default();
    Ok((v, sim.stable))
}

/// Residual vector and sum of squares for `θ` on a measured record.
pub fn objective(theta: &ReducedTheta, n: usize, q: f64, data: &TimeSeries, cell: &CellConfig) -> Result<Objective> {
    let measured = data.voltage()?;
    match model_voltage(theta, n, q, data, cell) {
        Ok((v, true)) => {
            let residuals = DVector::from_iterator(v.len(), measured.iter().zip(&v).map(|(m, y)| m - y));
            let sse = residuals.norm_squared();
            Ok(Objective { residuals, sse, feasible: true })
        }
        Ok((_, false)) | Err(Error::Divergence { .. }) => Ok(penalty(measured)),
        Err(e) => Err(e),
    }
}

/// Residuals and `∂r/∂θ` (columns `R_Σ, R₁, a, f_max`) by forward sensitivity recursion.
///
/// With `κ_j = 2π T_s q^(n−j)` the branch recursions are
/// `v_j ← (1 − κ_j f) v_j + κ_j f R₁ a^(j−1) i`, so `v_j` is linear in `R₁`,
/// scales as `a^(j−1)`, and only the `f_max` derivative needs its own state.
pub fn residual_jacobian(
    theta: &ReducedTheta,
    n: usize,
    q: f64,
    data: &TimeSeries,
    cell: &CellConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let measured = data.voltage()?;
    let seg = cell.segment_at(cell.soc0)?;
    let ReducedTheta { r_sigma, r1, a, f_max: f } = *theta;
    let r_inf = r1 * a.powi(n as i32) / (1.0 - a);
    let d_rinf_da = r1 * (n as f64 * a.powi(n as i32 - 1) * (1.0 - a) + a.powi(n as i32)) / (1.0 - a).powi(2);

    let kappa: Vec<f64> = (1..=n).map(|j| 2.0 * PI * data.ts * q.powi((n - j) as i32)).collect();
    let decay: Vec<f64> = kappa.iter().map(|k| 1.0 - k * f).collect();
    let drive: Vec<f64> = (1..=n).map(|j| kappa[j - 1] * r1 * a.powi(j as i32 - 1)).collect();
    let weight_a: Vec<f64> = (1..=n).map(|j| (j - 1) as f64 / a).collect();

    let len = data.len();
    let mut v = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut soc = cell.soc0;
    let soc_step = data.ts / cell.charge_capacity();
    let mut r = DVector::zeros(len);
    let mut jac = DMatrix::zeros(len, 4);
    for (k, &i) in data.current.iter().enumerate() {
        let (mut sum_v, mut sum_av, mut sum_s) = (0.0, 0.0, 0.0);
        for j in 0..n {
            sum_v += v[j];
            sum_av += weight_a[j] * v[j];
            sum_s += s[j];
        }
        let y = seg.alpha + seg.beta * soc - (r_sigma + r_inf) * i - sum_v;
        r[k] = measured[k] - y;
        jac[(k, 0)] = i;
        jac[(k, 1)] = (r_inf * i + sum_v) / r1;
        jac[(k, 2)] = d_rinf_da * i + sum_av;
        jac[(k, 3)] = sum_s;
        for j in 0..n {
            let vj = v[j];
            v[j] = decay[j] * vj + f * drive[j] * i;
            s[j] = decay[j] * s[j] - kappa[j] * vj + drive[j] * i;
        }
        soc -= soc_step * i;
        if !y.is_finite() {
            return Err(Error::Divergence { index: k, reason: "non-finite sensitivity state".into() });
        }
    }
    Ok((r, jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpe::decompose_with_q;

    fn setup() -> (TimeSeries, CellConfig) {
        let cell = CellConfig::nmc_60ah();
        let current: Vec<f64> = (0..600).map(|k| (k as f64 * 0.05).sin() * 2.0 + 0.3 * (k as f64 * 0.9).cos()).collect();
        let voltage = vec![3.7; current.len()];
        (TimeSeries::new(1.0, current, voltage).unwrap(), cell)
    }

    #[test]
    fn sensitivity_residuals_match_state_space_simulation() {
        let (data, cell) = setup();
        let net = decompose_with_q(22281.0, 0.52, 9, 0.24, 0.2).unwrap();
        let theta = ReducedTheta { r_sigma: 0.0014, r1: net.r1, a: net.a, f_max: 0.2 };
        let obj = objective(&theta, 9, 0.24, &data, &cell).unwrap();
        let (r, _) = residual_jacobian(&theta, 9, 0.24, &data, &cell).unwrap();
        let diff = (&obj.residuals - &r).amax();
        assert!(diff < 1e-12, "{diff}");
        assert!(obj.feasible);
    }

    #[test]
    fn unstable_point_returns_penalty() {
        let (data, cell) = setup();
        let theta = ReducedTheta { r_sigma: 0.0014, r1: 1e-3, a: 0.5, f_max: 0.5 };
        let obj = objective(&theta, 3, 0.24, &data, &cell).unwrap();
        assert!(!obj.feasible);
        assert!((obj.sse.sqrt() / (3.7 * (600f64).sqrt()) - INFEASIBLE_SCALE).abs() < 1.0);
    }
}
