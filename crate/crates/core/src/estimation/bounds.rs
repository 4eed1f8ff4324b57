//! Box bounds on the reduced vector `θ = [R_Σ, R₁, a, f_max]` derived from
//! bounds on the physical parameters.
//!
//! For a ladder with `n` branches, `R₁ = 1 / (Q h_R(φ, f_max))` and
//! `C₁ = Q h_C(φ, f_max)`, where `h_R` and `h_C` are the mid-band CPE
//! magnitudes of unit-anchored ladders. Neither is monotone in `φ`, so their
//! extremes are located on a grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ReducedTheta;
use crate::cpe::{omega_avg, ratios, z_ladder, LadderNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalBounds {
    pub r_sigma_min: f64,
    pub r_sigma_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub f_max_lo: f64,
    pub f_max_hi: f64,
}

impl PhysicalBounds {
    /// Default `f_max` range `[f_s/N, f_s/π)` for `n_samples` at sampling time `ts`.
    pub fn f_max_range(ts: f64, n_samples: usize) -> (f64, f64) {
        (1.0 / (ts * n_samples as f64), crate::ecm::max_stable_corner(ts))
    }

    /// One of the three benchmark bound sets (wide, medium, narrow).
    pub fn case(case: u8, ts: f64, n_samples: usize) -> Result<Self> {
        let ((phi_min, phi_max), (q_min, q_max)) = match case {
            1 => ((0.30, 0.70), (1e2, 1e6)),
            2 => ((0.40, 0.60), (1e3, 1e5)),
            3 => ((0.45, 0.55), (1e4, 3e4)),
            other => return Err(Error::Config(format!("unknown bound case {other}, expected 1, 2 or 3"))),
        };
        let (f_max_lo, f_max_hi) = Self::f_max_range(ts, n_samples);
        Ok(Self { r_sigma_min: 1e-5, r_sigma_max: 1.0, q_min, q_max, phi_min, phi_max, f_max_lo, f_max_hi })
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("r_sigma", self.r_sigma_min, self.r_sigma_max),
            ("q", self.q_min, self.q_max),
            ("phi", self.phi_min, self.phi_max),
            ("f_max", self.f_max_lo, self.f_max_hi),
        ];
        for (name, lo, hi) in pairs {
            if !(lo > 0.0 && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} bounds must satisfy 0 < min <= max, got [{lo}, {hi}]")));
            }
        }
        if self.phi_max >= 1.0 {
            return Err(Error::Config(format!("phi_max must be below 1, got {}", self.phi_max)));
        }
        Ok(())
    }
}

/// Sampling of the `(φ, f_max)` rectangle used to locate the extremes of `h_R` and `h_C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundGrid {
    /// Uniform points on `[φ_min, φ_max]`.
    pub n_phi: usize,
    /// Log-uniform points on `[f_max_lo, f_max_hi]`.
    pub n_f_max: usize,
    /// Relative widening of the resulting `R₁` and `C₁` ranges.
    pub margin: f64,
}

impl Default for BoundGrid {
    fn default() -> Self {
        Self { n_phi: 201, n_f_max: 25, margin: 0.1 }
    }
}

/// Axis-aligned feasible box for `θ`, plus the implied `C₁` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lo: ReducedTheta,
    pub hi: ReducedTheta,
    pub c1_lo: f64,
    pub c1_hi: f64,
}

impl ThetaBox {
    pub fn contains(&self, t: &ReducedTheta) -> bool {
        let (lo, hi, v) = (self.lo.to_array(), self.hi.to_array(), t.to_array());
        (0..4).all(|i| v[i] >= lo[i] && v[i] <= hi[i])
    }

    pub fn project(&self, t: &ReducedTheta) -> ReducedTheta {
        let (lo, hi, v) = (self.lo.to_array(), self.hi.to_array(), t.to_array());
        ReducedTheta::from_array(std::array::from_fn(|i| v[i].clamp(lo[i], hi[i])))
    }
}

fn anchored_magnitude(phi: f64, f_max: f64, n: usize, q: f64, resistive_anchor: bool) -> f64 {
    let (a, b) = match ratios(phi, q) {
        Ok(r) => r,
        Err(_) => return f64::NAN,
    };
    let rc = 1.0 / (2.0 * PI * f_max * q.powi(n as i32 - 1));
    let (r1, c1) = if resistive_anchor { (1.0, rc) } else { (rc, 1.0) };
    let net = match LadderNetwork::from_parts(r1, c1, a, b, n) {
        Ok(net) => net,
        Err(_) => return f64::NAN,
    };
    let w = omega_avg(r1, c1, a, b, q, n);
    w.powf(phi) * z_ladder(&net, w).norm()
}

/// `ω_avg^φ |Z_app|` for the anchor `C₁′ = 1 F`, `R₁′ = 1/(2π f_min)`; then `C₁ = Q h_C`.
pub fn h_c(phi: f64, f_max: f64, n: usize, q: f64) -> f64 {
    anchored_magnitude(phi, f_max, n, q, false)
}

/// `ω_avg^φ |Z_app|` for the anchor `R₁′ = 1 Ω`, `C₁′ = 1/(2π f_min)`; then `R₁ = 1/(Q h_R)`.
pub fn h_r(phi: f64, f_max: f64, n: usize, q: f64) -> f64 {
    anchored_magnitude(phi, f_max, n, q, true)
}

fn grid_points(lo: f64, hi: f64, count: usize, log: bool) -> Vec<f64> {
    if count <= 1 || lo == hi {
        return vec![lo];
    }
    (0..count)
        .map(|k| {
            let s = k as f64 / (count - 1) as f64;
            if log {
                (lo.ln() + s * (hi.ln() - lo.ln())).exp()
            } else {
                lo + s * (hi - lo)
            }
        })
        .collect()
}

pub fn derive_bounds(pb: &PhysicalBounds, n: usize, q: f64, grid: &BoundGrid) -> Result<ThetaBox> {
    pb.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    // larger φ gives smaller a because q < 1
    let a_lo = q.powf(pb.phi_max);
    let a_hi = q.powf(pb.phi_min);

    let phis = grid_points(pb.phi_min, pb.phi_max, grid.n_phi, false);
    let fmaxes = grid_points(pb.f_max_lo, pb.f_max_hi, grid.n_f_max, true);
    let (mut inv_hr_min, mut inv_hr_max) = (f64::INFINITY, 0.0_f64);
    let (mut hc_min, mut hc_max) = (f64::INFINITY, 0.0_f64);
    for &f in &fmaxes {
        for &phi in &phis {
            let inv_hr = 1.0 / h_r(phi, f, n, q);
            let hc = h_c(phi, f, n, q);
            if inv_hr.is_finite() {
                inv_hr_min = inv_hr_min.min(inv_hr);
                inv_hr_max = inv_hr_max.max(inv_hr);
            }
            if hc.is_finite() {
                hc_min = hc_min.min(hc);
                hc_max = hc_max.max(hc);
            }
        }
    }
    let widen = 1.0 + grid.margin;
    let r1_lo = inv_hr_min / pb.q_max / widen;
    let r1_hi = inv_hr_max / pb.q_min * widen;
    let c1_lo = pb.q_min * hc_min / widen;
    let c1_hi = pb.q_max * hc_max * widen;

    let lo = ReducedTheta { r_sigma: pb.r_sigma_min, r1: r1_lo, a: a_lo, f_max: pb.f_max_lo };
    let hi = ReducedTheta { r_sigma: pb.r_sigma_max, r1: r1_hi, a: a_hi, f_max: pb.f_max_hi };
    let ok = lo.to_array().iter().zip(hi.to_array()).all(|(l, h)| *l > 0.0 && l.is_finite() && h.is_finite() && *l <= h);
    if !ok {
        return Err(Error::Config(format!("empty or non-finite parameter box: {lo:?} .. {hi:?}")));
    }
    Ok(ThetaBox { lo, hi, c1_lo, c1_hi })
}
