//! State-space model of the low-frequency cell ECM with a decomposed CPE.
//!
//! State `x = [v₁, …, v_n, SOC]`, input `u = [i, 1]`, output the terminal
//! voltage. Positive current discharges the cell:
//!
//! ```text
//! dv_k/dt = -v_k / (R_k C_k) + i / C_k
//! dSOC/dt = -i / (3600 C_nom)
//! v       = α + β SOC - (R_Σ + R_∞) i - Σ v_k
//! ```
//!
//! The discrete model uses forward Euler, `A_d = I + T_s A_c`, `B_d = T_s B_c`.

use nalgebra::{DMatrix, DVector, RowDVector, RowVector2};
use serde::{Deserialize, Serialize};

use crate::cpe::LadderNetwork;
use crate::error::{domain, Error, Result};

/// Linear piece `E = α + β·SOC` of the open-circuit-voltage curve on `[soc_lo, soc_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcvSegment {
    pub alpha: f64,
    pub beta: f64,
    pub soc_lo: f64,
    pub soc_hi: f64,
}

impl OcvSegment {
    pub fn eval(&self, soc: f64) -> f64 {
        self.alpha + self.beta * soc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    /// Nominal capacity (Ah).
    pub c_nom: f64,
    pub soc0: f64,
    /// Sampling time (s).
    pub ts: f64,
    pub ocv: Vec<OcvSegment>,
}

impl CellConfig {
    /// 60 Ah NMC cell with a ten-piece OCV curve; the 0.5–0.6 piece is
    /// `E = 3.18 V + 1 V · SOC`.
    pub fn nmc_60ah() -> Self {
        const PIECES: [(f64, f64); 10] = [
            (3.00, 4.5),
            (3.35, 1.0),
            (3.45, 0.5),
            (3.48, 0.4),
            (3.48, 0.4),
            (3.18, 1.0),
            (3.18, 1.0),
            (3.18, 1.0),
            (3.18, 1.0),
            (3.00, 1.2),
        ];
        let ocv = PIECES
            .iter()
            .enumerate()
            .map(|(l, &(alpha, beta))| OcvSegment {
                alpha,
                beta,
                soc_lo: l as f64 / 10.0,
                soc_hi: (l + 1) as f64 / 10.0,
            })
            .collect();
        Self { c_nom: 60.0, soc0: 0.55, ts: 1.0, ocv }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_nom > 0.0 && self.c_nom.is_finite()) {
            return Err(Error::Config(format!("c_nom must be positive, got {}", self.c_nom)));
        }
        if !(0.0..=1.0).contains(&self.soc0) {
            return Err(Error::Config(format!("soc0 must lie in [0, 1], got {}", self.soc0)));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::Config(format!("ts must be positive, got {}", self.ts)));
        }
        let (first, last) = match (self.ocv.first(), self.ocv.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::Config("OCV curve has no segments".into())),
        };
        if first.soc_lo.abs() > 1e-12 || (last.soc_hi - 1.0).abs() > 1e-12 {
            return Err(Error::Config("OCV segments must cover [0, 1]".into()));
        }
        for seg in &self.ocv {
            if !(seg.soc_lo < seg.soc_hi) {
                return Err(Error::Config(format!("empty OCV segment [{}, {}]", seg.soc_lo, seg.soc_hi)));
            }
        }
        for w in self.ocv.windows(2) {
            if (w[0].soc_hi - w[1].soc_lo).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "OCV segments not contiguous at {} / {}",
                    w[0].soc_hi, w[1].soc_lo
                )));
            }
        }
        Ok(())
    }

    /// Segment containing `soc`; a shared boundary belongs to the left segment.
    pub fn segment_at(&self, soc: f64) -> Result<&OcvSegment> {
        if !(0.0..=1.0).contains(&soc) {
            return Err(domain(format!("SOC must lie in [0, 1], got {soc}")));
        }
        self.ocv
            .iter()
            .find(|s| soc <= s.soc_hi)
            .or(self.ocv.last())
            .ok_or_else(|| Error::Config("OCV curve has no segments".into()))
    }

    /// Ampere-seconds per unit SOC.
    pub fn charge_capacity(&self) -> f64 {
        self.c_nom * 3600.0
    }
}

/// Piecewise-linear open-circuit voltage at `soc`.
pub fn ocv_eval(cell: &CellConfig, soc: f64) -> Result<f64> {
    Ok(cell.segment_at(soc)?.eval(soc))
}

/// Uniformly sampled record. Positive current discharges the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub ts: f64,
    pub current: Vec<f64>,
    pub voltage: Option<Vec<f64>>,
    pub soc: Option<Vec<f64>>,
}

impl TimeSeries {
    pub fn from_current(ts: f64, current: Vec<f64>) -> Self {
        Self { ts, current, voltage: None, soc: None }
    }

    pub fn new(ts: f64, current: Vec<f64>, voltage: Vec<f64>) -> Result<Self> {
        let s = Self { ts, current, voltage: Some(voltage), soc: None };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::Data(format!("sampling time must be positive, got {}", self.ts)));
        }
        let n = self.current.len();
        for (name, col) in [("voltage", &self.voltage), ("soc", &self.soc)] {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(Error::Data(format!("{name} has {} samples, current has {n}", c.len())));
                }
            }
        }
        Ok(())
    }

    pub fn voltage(&self) -> Result<&[f64]> {
        self.voltage.as_deref().ok_or_else(|| Error::Data("series carries no voltage".into()))
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| k as f64 * self.ts)
    }
}

/// Full circuit parameter vector `[R_Σ, R₁, C₁, a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullTheta {
    pub r_sigma: f64,
    pub r1: f64,
    pub c1: f64,
    pub a: f64,
    pub b: f64,
}

impl FullTheta {
    pub fn from_ladder(r_sigma: f64, net: &LadderNetwork) -> Self {
        Self { r_sigma, r1: net.r1, c1: net.c1, a: net.a, b: net.b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a_c: DMatrix<f64>,
    pub b_c: DMatrix<f64>,
    pub c_c: RowDVector<f64>,
    pub d_c: RowVector2<f64>,
    pub n: usize,
}

/// Continuous matrices for `n` branches on OCV segment `seg`.
pub fn build_continuous(
    theta: &FullTheta,
    n: usize,
    r_inf: f64,
    cell: &CellConfig,
    seg: &OcvSegment,
) -> Result<ContinuousModel> {
    if n == 0 {
        return Err(Error::Model("model needs at least one branch".into()));
    }
    if !(theta.a > 0.0 && theta.a < 1.0 && theta.b > 0.0 && theta.b <= 1.0) {
        return Err(Error::Model(format!("ratios out of range: a={}, b={}", theta.a, theta.b)));
    }
    let dim = n + 1;
    let mut a_c = DMatrix::zeros(dim, dim);
    let mut b_c = DMatrix::zeros(dim, 2);
    let mut c_c = RowDVector::from_element(dim, -1.0);
    for k in 0..n {
        // powers, not running products, so branch tables and eigenvalues agree bit for bit
        let r = theta.r1 * theta.a.powi(k as i32);
        let c = theta.c1 * theta.b.powi(k as i32);
        a_c[(k, k)] = -1.0 / (r * c);
        b_c[(k, 0)] = 1.0 / c;
    }
    b_c[(n, 0)] = -1.0 / cell.charge_capacity();
    c_c[n] = seg.beta;
    let d_c = RowVector2::new(-theta.r_sigma - r_inf, seg.alpha);

    let finite = a_c.iter().chain(b_c.iter()).chain(c_c.iter()).chain(d_c.iter()).all(|v| v.is_finite());
    if !finite {
        return Err(Error::Model("non-finite entry in continuous model".into()));
    }
    Ok(ContinuousModel { a_c, b_c, c_c, d_c, n })
}

/// Forward-Euler discrete model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    a_d: DMatrix<f64>,
    b_d: DMatrix<f64>,
    c_d: RowDVector<f64>,
    d_d: RowVector2<f64>,
    ts: f64,
    n: usize,
}

pub fn discretize(cont: &ContinuousModel, ts: f64) -> Result<DiscreteModel> {
    if !(ts >= 0.0 && ts.is_finite()) {
        return Err(domain(format!("sampling time must be >= 0, got {ts}")));
    }
    let dim = cont.n + 1;
    Ok(DiscreteModel {
        a_d: DMatrix::identity(dim, dim) + &cont.a_c * ts,
        b_d: &cont.b_c * ts,
        c_d: cont.c_c.clone(),
        d_d: cont.d_c,
        ts,
        n: cont.n,
    })
}

impl DiscreteModel {
    /// Builds the discrete model for a ladder, using the OCV segment that contains `cell.soc0`.
    pub fn from_ladder(r_sigma: f64, net: &LadderNetwork, cell: &CellConfig) -> Result<Self> {
        let seg = cell.segment_at(cell.soc0)?;
        let cont = build_continuous(&FullTheta::from_ladder(r_sigma, net), net.n, net.r_inf, cell, seg)?;
        discretize(&cont, cell.ts)
    }

    pub fn a_d(&self) -> &DMatrix<f64> {
        &self.a_d
    }
    pub fn b_d(&self) -> &DMatrix<f64> {
        &self.b_d
    }
    pub fn c_d(&self) -> &RowDVector<f64> {
        &self.c_d
    }
    pub fn d_d(&self) -> &RowVector2<f64> {
        &self.d_d
    }
    pub fn ts(&self) -> f64 {
        self.ts
    }
    pub fn n(&self) -> usize {
        self.n
    }

    /// Rested state: branch voltages zero, SOC as given.
    pub fn rest_state(&self, soc0: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.n + 1);
        x[self.n] = soc0;
        x
    }

    /// Advances `x` by one sample under current `i`.
    pub fn step(&self, x: &mut DVector<f64>, i: f64) {
        for j in 0..=self.n {
            x[j] = self.a_d[(j, j)] * x[j] + self.b_d[(j, 0)] * i + self.b_d[(j, 1)];
        }
    }

    /// Output for state `x` and current `i`.
    pub fn output(&self, x: &DVector<f64>, i: f64) -> f64 {
        self.c_d.dot(&x.transpose()) + self.d_d[0] * i + self.d_d[1]
    }
}

/// Highest usable corner frequency: the open limit `f_s/π` backed off by one part in 10⁶.
pub fn max_stable_corner(ts: f64) -> f64 {
    (1.0 - 1e-6) / (std::f64::consts::PI * ts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Largest branch eigenvalue magnitude (the SOC integrator is excluded).
    pub spectral_radius: f64,
    pub is_stable: bool,
    pub branch_eigenvalues: Vec<f64>,
    /// Always 1: Coulomb counting is a pure integrator.
    pub soc_eigenvalue: f64,
}

/// Eigenvalues of the diagonal `A_d`; stable iff every branch eigenvalue is inside the unit circle.
///
/// A branch eigenvalue is `1 − T_s/(R C)` with `R C > 0`, so it is below 1
/// mathematically; very slow branches round to exactly 1.0 and behave as
/// integrators, so only the lower edge `−1` is tested.
pub fn stability_margin(model: &DiscreteModel) -> StabilityReport {
    let branch_eigenvalues: Vec<f64> = (0..model.n).map(|k| model.a_d[(k, k)]).collect();
    let spectral_radius = branch_eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    StabilityReport {
        spectral_radius,
        is_stable: branch_eigenvalues.iter().all(|l| *l > -1.0 && *l <= 1.0),
        branch_eigenvalues,
        soc_eigenvalue: model.a_d[(model.n, model.n)],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Input current with the simulated voltage and the SOC aligned to each sample.
    pub series: TimeSeries,
    /// State after the last input sample.
    pub final_state: DVector<f64>,
    pub stable: bool,
}

/// Runs `x_{k+1} = A_d x_k + B_d u_k`, `y_k = C_d x_k + D_d u_k` with `u_k = [i_k, 1]`.
///
/// `A_d` is diagonal by construction, so a step costs O(n).
pub fn simulate(model: &DiscreteModel, x0: &DVector<f64>, current: &TimeSeries) -> Result<Simulation> {
    let dim = model.n + 1;
    if x0.len() != dim {
        return Err(Error::Model(format!("initial state has {} entries, model needs {dim}", x0.len())));
    }
    if current.is_empty() {
        return Err(Error::Data("empty current series".into()));
    }
    let stable = stability_margin(model).is_stable;
    if !stable {
        log::warn!("simulating a model with a branch eigenvalue outside the unit circle");
    }
    let decay: Vec<f64> = (0..dim).map(|k| model.a_d[(k, k)]).collect();
    let gain_i: Vec<f64> = (0..dim).map(|k| model.b_d[(k, 0)]).collect();
    let gain_1: Vec<f64> = (0..dim).map(|k| model.b_d[(k, 1)]).collect();
    let c: Vec<f64> = model.c_d.iter().copied().collect();
    let (d_i, d_1) = (model.d_d[0], model.d_d[1]);

    let mut x: Vec<f64> = x0.iter().copied().collect();
    let mut voltage = Vec::with_capacity(current.len());
    let mut soc = Vec::with_capacity(current.len());
    for (k, &i) in current.current.iter().enumerate() {
        let mut y = d_i * i + d_1;
        for j in 0..dim {
            y += c[j] * x[j];
        }
        if !y.is_finite() {
            return Err(Error::Divergence { index: k, reason: "non-finite state".into() });
        }
        voltage.push(y);
        soc.push(x[model.n]);
        for j in 0..dim {
            x[j] = decay[j] * x[j] + gain_i[j] * i + gain_1[j];
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { index: current.len(), reason: "non-finite final state".into() });
    }
    Ok(Simulation {
        series: TimeSeries {
            ts: current.ts,
            current: current.current.clone(),
            voltage: Some(voltage),
            soc: Some(soc),
        },
        final_state: DVector::from_vec(x),
        stable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpe::decompose_with_q;
    use std::f64::consts::PI;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn flat_cell(alpha: f64, beta: f64, ts: f64) -> CellConfig {
        CellConfig {
            c_nom: 60.0,
            soc0: 0.55,
            ts,
            ocv: vec![OcvSegment { alpha, beta, soc_lo: 0.0, soc_hi: 1.0 }],
        }
    }

    fn one_branch(r_sigma: f64, r1: f64, c1: f64, cell: &CellConfig) -> DiscreteModel {
        let theta = FullTheta { r_sigma, r1, c1, a: 0.5, b: 0.5 };
        let cont = build_continuous(&theta, 1, 0.0, cell, &cell.ocv[0]).unwrap();
        discretize(&cont, cell.ts).unwrap()
    }

    #[test]
    fn default_cell_is_valid_and_continuous() {
        let cell = CellConfig::nmc_60ah();
        cell.validate().unwrap();
        let seg = cell.segment_at(0.55).unwrap();
        assert_eq!((seg.alpha, seg.beta), (3.18, 1.0));
        for w in cell.ocv.windows(2) {
            let s = w[0].soc_hi;
            assert!((w[0].eval(s) - w[1].eval(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn ocv_examples() {
        let cell = CellConfig::nmc_60ah();
        assert!((ocv_eval(&cell, 0.55).unwrap() - 3.73).abs() < 1e-12);
        assert_eq!(ocv_eval(&cell, 0.0).unwrap(), cell.ocv[0].alpha);
        // boundary uses the left segment
        let left = cell.ocv[4].eval(0.5);
        assert_eq!(ocv_eval(&cell, 0.5).unwrap(), left);
        assert!(ocv_eval(&cell, 1.0).is_ok());
        assert!(ocv_eval(&cell, -0.01).is_err());
        assert!(ocv_eval(&cell, 1.01).is_err());
    }

    #[test]
    fn cell_validation() {
        let mut cell = CellConfig::nmc_60ah();
        cell.ocv.remove(3);
        assert!(cell.validate().is_err());
        let mut cell = CellConfig::nmc_60ah();
        cell.c_nom = 0.0;
        assert!(cell.validate().is_err());
    }

    #[test]
    fn continuous_single_branch() {
        let cell = flat_cell(3.18, 1.0, 1.0);
        let theta = FullTheta { r_sigma: 0.01, r1: 1.0, c1: 1.0, a: 0.5, b: 0.5 };
        let m = build_continuous(&theta, 1, 0.25, &cell, &cell.ocv[0]).unwrap();
        assert_eq!(m.a_c, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]));
        assert_eq!(m.b_c[(0, 0)], 1.0);
        assert_eq!(m.b_c[(1, 0)], -1.0 / (60.0 * 3600.0));
        assert_eq!(m.b_c.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(m.c_c.iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0]);
        assert_eq!(m.d_c, RowVector2::new(-0.26, 3.18));
    }

    #[test]
    fn continuous_table_one_diagonal() {
        let cell = CellConfig::nmc_60ah();
        let net = decompose_with_q(22281.0, 0.52, 100, 0.24, 1.0 / PI).unwrap();
        let seg = cell.segment_at(0.55).unwrap();
        let m = build_continuous(&FullTheta::from_ladder(0.0014, &net), 100, net.r_inf, &cell, seg).unwrap();
        for k in 0..99 {
            assert!(rel(m.a_c[(k + 1, k + 1)] / m.a_c[(k, k)], 1.0 / 0.24) < 1e-12);
        }
        assert!(m.a_c.row(100).iter().all(|&v| v == 0.0));
        for k in 0..101 {
            for j in 0..101 {
                if j != k {
                    assert_eq!(m.a_c[(k, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn discretize_examples() {
        let cell = flat_cell(3.0, 0.0, 0.5);
        let theta = FullTheta { r_sigma: 0.01, r1: 1.0, c1: 1.0, a: 0.5, b: 0.5 };
        let cont = build_continuous(&theta, 1, 0.0, &cell, &cell.ocv[0]).unwrap();
        let d = discretize(&cont, 0.5).unwrap();
        assert_eq!(*d.a_d(), DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 1.0]));
        assert_eq!(*d.b_d(), &cont.b_c * 0.5);
        assert_eq!(*d.c_d(), cont.c_c);
        assert_eq!(*d.d_d(), cont.d_c);
        let d0 = discretize(&cont, 0.0).unwrap();
        assert_eq!(*d0.a_d(), DMatrix::identity(2, 2));
        assert!(discretize(&cont, -1.0).is_err());
    }

    #[test]
    fn stability_examples() {
        let cell = flat_cell(3.0, 0.0, 1.0);
        let s = stability_margin(&one_branch(0.0, 1.0, 1.0, &cell));
        assert_eq!(s.branch_eigenvalues, vec![0.0]);
        assert!(s.is_stable);
        assert_eq!(s.soc_eigenvalue, 1.0);

        // corner frequency exactly f_s/π: RC = T_s/2
        let s = stability_margin(&one_branch(0.0, 0.5, 1.0, &cell));
        assert_eq!(s.branch_eigenvalues, vec![-1.0]);
        assert!(!s.is_stable);

        let s = stability_margin(&one_branch(0.0, 10.0, 1.0, &cell));
        assert!((s.branch_eigenvalues[0] - 0.9).abs() < 1e-15);
        assert!(s.is_stable);
        assert!((s.spectral_radius - 0.9).abs() < 1e-15);

        // T_s/(R C) below half an ulp of 1: the eigenvalue rounds to 1, still a stable integrator
        let s = stability_margin(&one_branch(0.0, 1e9, 1e9, &cell));
        assert_eq!(s.branch_eigenvalues, vec![1.0]);
        assert!(s.is_stable);
    }

    #[test]
    fn rest_gives_open_circuit_voltage() {
        let cell = CellConfig::nmc_60ah();
        let net = decompose_with_q(22281.0, 0.52, 20, 0.24, 0.3).unwrap();
        let model = DiscreteModel::from_ladder(0.0014, &net, &cell).unwrap();
        let sim = simulate(&model, &model.rest_state(0.55), &TimeSeries::from_current(1.0, vec![0.0; 500])).unwrap();
        let e = ocv_eval(&cell, 0.55).unwrap();
        for v in sim.series.voltage.unwrap() {
            assert!((v - e).abs() <= 1e-12 * e);
        }
    }

    #[test]
    fn step_response_matches_discrete_closed_form() {
        let cell = flat_cell(3.2, 0.8, 1.0);
        let (r_sigma, r1, c1, i) = (0.002, 0.004, 2500.0, 3.0);
        let model = one_branch(r_sigma, r1, c1, &cell);
        let n = 20_000;
        let sim = simulate(&model, &model.rest_state(0.55), &TimeSeries::from_current(1.0, vec![i; n])).unwrap();
        let v = sim.series.voltage.unwrap();
        let soc = sim.series.soc.unwrap();
        let lambda = 1.0 - 1.0 / (r1 * c1);
        for k in [0, 1, 10, 999, n - 1] {
            let ocv = 3.2 + 0.8 * soc[k];
            let expected = ocv - r_sigma * i - r1 * i * (1.0 - lambda.powi(k as i32));
            assert!((v[k] - expected).abs() < 1e-12);
        }
        // steady state, SOC drift removed
        let ocv = 3.2 + 0.8 * soc[n - 1];
        assert!((v[n - 1] - (ocv - (r_sigma + r1) * i)).abs() < 1e-12);
    }

    #[test]
    fn divergence_names_first_bad_sample() {
        let cell = flat_cell(3.0, 0.0, 1.0);
        // eigenvalue -1 - 1e3: grows by ~1e3 per step and overflows after ~100 samples
        let model = one_branch(0.0, 1.0, 1.0 / 1002.0, &cell);
        let err = simulate(&model, &model.rest_state(0.5), &TimeSeries::from_current(1.0, vec![1.0; 400]))
            .unwrap_err();
        match err {
            Error::Divergence { index, .. } => assert!(index > 50 && index < 400),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generic_eigen_routine_agrees() {
        let cell = CellConfig::nmc_60ah();
        let net = decompose_with_q(3e3, 0.41, 6, 0.24, 0.2).unwrap();
        let model = DiscreteModel::from_ladder(0.001, &net, &cell).unwrap();
        let report = stability_margin(&model);
        let eig = model.a_d().clone().symmetric_eigen();
        let generic = eig
            .eigenvalues
            .iter()
            .filter(|l| (*l - 1.0).abs() > 1e-12)
            .fold(0.0_f64, |m, l| m.max(l.abs()));
        assert!((generic - report.spectral_radius).abs() < 1e-14);
    }

    #[test]
    fn euler_error_is_first_order() {
        // one branch driven by a constant current; the exact response is R I (1 - e^{-t/τ})
        let (r1, c1, i, horizon): (f64, f64, f64, f64) = (0.01, 100.0, 2.0, 4.0);
        let tau = r1 * c1;
        let exact = r1 * i * (1.0 - (-horizon / tau).exp());
        let mut errors = Vec::new();
        for ts in [0.1, 0.05, 0.025, 0.0125] {
            let cell = flat_cell(0.0, 0.0, ts);
            let model = one_branch(0.0, r1, c1, &cell);
            let steps = (horizon / ts).round() as usize;
            let sim = simulate(&model, &model.rest_state(0.5), &TimeSeries::from_current(ts, vec![i; steps])).unwrap();
            let v_branch = sim.final_state[0];
            errors.push((v_branch - exact).abs());
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
        }
    }
}
