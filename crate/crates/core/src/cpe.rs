//! Constant phase element (CPE) and its recursive RC-ladder approximation.
//!
//! A CPE `Z(ω) = 1 / (Q (jω)^φ)` is replaced by `n` parallel RC branches in
//! series with a corrective resistor `R_∞`. Branch values follow geometric
//! laws `R_k = R₁ a^(k-1)`, `C_k = C₁ b^(k-1)` with `a = q^φ` and `a b = q`,
//! where `q` is fixed by the admissible phase ripple. Branch 1 carries the
//! largest time constant (lowest corner frequency `f_min`), branch `n` the
//! smallest (`f_max`).
//!
//! The overall scale of the ladder is chosen so that its impedance magnitude
//! equals the CPE magnitude at the mid-band frequency `ω_avg`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::estimation::ReducedTheta;

/// Complex impedance in ohms.
pub type ComplexImpedance = Complex64;

/// Physical low-frequency parameters `[R_Σ, Q, φ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpeTriple {
    /// Total series resistance (Ω).
    pub r_sigma: f64,
    /// CPE coefficient (S·s^φ).
    pub q_coef: f64,
    /// CPE exponent, strictly inside (0, 1).
    pub phi: f64,
}

impl CpeTriple {
    pub fn new(r_sigma: f64, q_coef: f64, phi: f64) -> Result<Self> {
        let p = Self { r_sigma, q_coef, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_sigma > 0.0 && self.r_sigma.is_finite()) {
            return Err(domain(format!("r_sigma must be positive, got {}", self.r_sigma)));
        }
        if !(self.q_coef > 0.0 && self.q_coef.is_finite()) {
            return Err(domain(format!("q_coef must be positive, got {}", self.q_coef)));
        }
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(domain(format!("phi must lie in (0, 1), got {}", self.phi)));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.r_sigma, self.q_coef, self.phi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    pub n_branches: usize,
    /// Maximum phase ripple (rad).
    pub delta_phi: f64,
    /// Corner frequency of the fastest branch (Hz).
    pub f_max: f64,
}

impl DecompositionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_branches == 0 {
            return Err(domain("n_branches must be at least 1"));
        }
        if !(self.delta_phi >= 0.0 && self.delta_phi.is_finite()) {
            return Err(domain(format!("delta_phi must be >= 0, got {}", self.delta_phi)));
        }
        if !(self.f_max > 0.0 && self.f_max.is_finite()) {
            return Err(domain(format!("f_max must be positive, got {}", self.f_max)));
        }
        Ok(())
    }
}

/// Decomposed CPE: `n` RC branches plus the corrective resistor `R_∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderNetwork {
    pub r1: f64,
    pub c1: f64,
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub r_inf: f64,
    /// The product `a b`.
    pub q_const: f64,
}

/// One row of the per-branch table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub k: usize,
    pub r: f64,
    pub c: f64,
    pub tau: f64,
    pub f: f64,
}

impl LadderNetwork {
    /// Builds a network from `R₁, C₁, a, b`; `R_∞` follows from `R₁, a, n`.
    pub fn from_parts(r1: f64, c1: f64, a: f64, b: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(domain("ladder needs at least one branch"));
        }
        if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) {
            return Err(domain(format!("ratios must lie in (0, 1), got a={a}, b={b}")));
        }
        if !(r1 > 0.0 && c1 > 0.0 && r1.is_finite() && c1.is_finite()) {
            return Err(domain(format!("R1 and C1 must be positive, got {r1}, {c1}")));
        }
        Ok(Self {
            r1,
            c1,
            a,
            b,
            n,
            r_inf: r1 * a.powi(n as i32) / (1.0 - a),
            q_const: a * b,
        })
    }

    /// Resistance of branch `k` (1-based).
    pub fn resistance(&self, k: usize) -> f64 {
        self.r1 * self.a.powi(k as i32 - 1)
    }

    /// Capacitance of branch `k` (1-based).
    pub fn capacitance(&self, k: usize) -> f64 {
        self.c1 * self.b.powi(k as i32 - 1)
    }

    pub fn branches(&self) -> Vec<Branch> {
        (1..=self.n)
            .map(|k| {
                let r = self.resistance(k);
                let c = self.capacitance(k);
                let tau = r * c;
                Branch { k, r, c, tau, f: 1.0 / (2.0 * PI * tau) }
            })
            .collect()
    }

    /// Corner frequency of branch 1, the slowest one.
    pub fn f_min(&self) -> f64 {
        1.0 / (2.0 * PI * self.r1 * self.c1)
    }

    /// Corner frequency of branch `n`, the fastest one.
    pub fn f_max(&self) -> f64 {
        self.f_min() / self.q_const.powi(self.n as i32 - 1)
    }

    pub fn impedance(&self, omega: f64) -> ComplexImpedance {
        z_ladder(self, omega)
    }

    /// Mid-band angular frequency at which the ladder is matched to the CPE.
    pub fn omega_avg(&self) -> f64 {
        omega_avg(self.r1, self.c1, self.a, self.b, self.q_const, self.n)
    }
}

/// Ripple coefficient `q = 0.24 / (1 + Δφ·180/π)` for a phase ripple in radians.
pub fn ripple_coefficient(delta_phi: f64) -> Result<f64> {
    if !(delta_phi >= 0.0 && delta_phi.is_finite()) {
        return Err(domain(format!("phase ripple must be >= 0, got {delta_phi}")));
    }
    Ok(0.24 / (1.0 + delta_phi.to_degrees()))
}

/// Geometric ratios `(a, b)` with `a = q^φ` and `b = q / a`.
pub fn ratios(phi: f64, q: f64) -> Result<(f64, f64)> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(domain(format!("phi must lie in (0, 1), got {phi}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(domain(format!("q must lie in (0, 1), got {q}")));
    }
    let a = q.powf(phi);
    Ok((a, q / a))
}

/// Number of branches needed to span `[f_min, f_max]` with ratio `q`.
pub fn branch_count(f_min: f64, f_max: f64, q: f64) -> Result<usize> {
    if !(f_min > 0.0 && f_min < f_max && f_max.is_finite()) {
        return Err(domain(format!("need 0 < f_min < f_max, got {f_min}, {f_max}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(domain(format!("q must lie in (0, 1), got {q}")));
    }
    let ratio = (f_min.ln() - f_max.ln()) / q.ln();
    // log rounding must not push an exact integer ratio up by one
    let n = (ratio - 1e-9).ceil();
    Ok((n as usize).max(1))
}

/// Exact CPE impedance `1 / (Q (jω)^φ)`.
pub fn z_cpe(q_coef: f64, phi: f64, omega: f64) -> Result<ComplexImpedance> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(domain(format!("omega must be positive, got {omega}")));
    }
    if !(q_coef > 0.0) {
        return Err(domain(format!("q_coef must be positive, got {q_coef}")));
    }
    // (jω)^φ = exp(φ (ln ω + jπ/2))
    let jw_phi = Complex64::new(phi * omega.ln(), phi * PI / 2.0).exp();
    Ok(Complex64::new(1.0, 0.0) / (jw_phi * q_coef))
}

/// Ladder impedance `R_∞ + Σ R_k / (1 + jω R_k C_k)`.
pub fn z_ladder(net: &LadderNetwork, omega: f64) -> ComplexImpedance {
    let mut z = Complex64::new(net.r_inf, 0.0);
    let mut r = net.r1;
    let mut c = net.c1;
    for _ in 0..net.n {
        z += Complex64::new(r, 0.0) / Complex64::new(1.0, omega * r * c);
        r *= net.a;
        c *= net.b;
    }
    z
}

/// Mid-band angular frequency `(a/b)^¼ / (R₁′ C₁′ q^⌈n/2 − 1⌉)`.
pub fn omega_avg(r1_prime: f64, c1_prime: f64, a: f64, b: f64, q: f64, n: usize) -> f64 {
    let exponent = (n as f64 / 2.0 - 1.0).ceil();
    (a / b).powf(0.25) / (r1_prime * c1_prime * q.powf(exponent))
}

/// Ladder for a CPE at a given `q`, scaled from the anchor `C₁′ = 1 F`.
pub fn decompose_with_q(q_coef: f64, phi: f64, n: usize, q: f64, f_max: f64) -> Result<LadderNetwork> {
    decompose_anchored(q_coef, phi, n, q, f_max, 1.0)
}

/// Same as [`decompose_with_q`] with an explicit anchor capacitance `C₁′`.
pub fn decompose_anchored(
    q_coef: f64,
    phi: f64,
    n: usize,
    q: f64,
    f_max: f64,
    c1_prime: f64,
) -> Result<LadderNetwork> {
    if n == 0 {
        return Err(domain("n_branches must be at least 1"));
    }
    if !(f_max > 0.0 && f_max.is_finite()) {
        return Err(domain(format!("f_max must be positive, got {f_max}")));
    }
    if !(q_coef > 0.0 && q_coef.is_finite()) {
        return Err(domain(format!("q_coef must be positive, got {q_coef}")));
    }
    let (a, b) = ratios(phi, q)?;
    let f_min = f_max * q.powi(n as i32 - 1);
    let r1_prime = 1.0 / (2.0 * PI * f_min * c1_prime);
    let anchor = LadderNetwork::from_parts(r1_prime, c1_prime, a, b, n)?;
    let w = omega_avg(r1_prime, c1_prime, a, b, q, n);
    let gain = 1.0 / (q_coef * w.powf(phi) * z_ladder(&anchor, w).norm());
    LadderNetwork::from_parts(gain * r1_prime, c1_prime / gain, a, b, n)
}

/// RC-ladder decomposition of the CPE in `p` (the series resistance is not part of it).
pub fn decompose(p: &CpeTriple, cfg: &DecompositionConfig) -> Result<LadderNetwork> {
    p.validate()?;
    cfg.validate()?;
    let q = ripple_coefficient(cfg.delta_phi)?;
    decompose_with_q(p.q_coef, p.phi, cfg.n_branches, q, cfg.f_max)
}

/// Ladder described by a reduced parameter vector: `b = q/a`, `C₁ = q^(1−n) / (2π R₁ f_max)`.
pub fn expand_theta(theta: &ReducedTheta, n: usize, q: f64) -> Result<LadderNetwork> {
    if !(theta.a > 0.0 && theta.a < 1.0) {
        return Err(domain(format!("ratio a must lie in (0, 1), got {}", theta.a)));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(domain(format!("q must lie in (0, 1), got {q}")));
    }
    if !(theta.f_max > 0.0 && theta.r1 > 0.0 && theta.f_max.is_finite() && theta.r1.is_finite()) {
        return Err(domain("R1 and f_max must be positive"));
    }
    if n == 0 {
        return Err(domain("n_branches must be at least 1"));
    }
    // b = q/a may reach 1 at the phi = 1 edge; the ladder formulas stay valid there
    let a = theta.a;
    let r1 = theta.r1;
    let c1 = q.powi(1 - n as i32) / (2.0 * PI * r1 * theta.f_max);
    Ok(LadderNetwork {
        r1,
        c1,
        a,
        b: q / a,
        n,
        r_inf: r1 * a.powi(n as i32) / (1.0 - a),
        q_const: q,
    })
}

/// Physical parameters from a fitted reduced vector.
pub fn reconstruct(theta_hat: &ReducedTheta, n: usize, q: f64) -> Result<CpeTriple> {
    if n == 0 {
        return Err(domain("n_branches must be at least 1"));
    }
    let net = expand_theta(theta_hat, n, q)?;
    let phi = theta_hat.a.ln() / q.ln();
    let w = net.omega_avg();
    let q_coef = 1.0 / (w.powf(phi) * z_ladder(&net, w).norm());
    Ok(CpeTriple { r_sigma: theta_hat.r_sigma, q_coef, phi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn ripple_values() {
        assert_eq!(ripple_coefficient(0.0).unwrap(), 0.24);
        assert!(rel(ripple_coefficient(1f64.to_radians()).unwrap(), 0.12) < 1e-14);
        assert!(rel(ripple_coefficient(2.0 * PI / 180.0).unwrap(), 0.08) < 1e-14);
        assert!(ripple_coefficient(-1e-3).is_err());
    }

    #[test]
    fn ratio_values() {
        // frozen from a 40-digit evaluation of 0.24^0.52 and 0.24/a
        let (a, b) = ratios(0.52, 0.24).unwrap();
        assert!(rel(a, 0.476_112_787_193_525_5) < 1e-14);
        assert!(rel(b, 0.504_082_239_451_483_6) < 1e-14);
        let (a, b) = ratios(0.5, 0.25).unwrap();
        assert!(rel(a, 0.5) < 1e-15 && rel(b, 0.5) < 1e-15);
        assert!(ratios(1.0, 0.24).is_err());
        assert!(ratios(0.0, 0.24).is_err());
        assert!(ratios(0.5, 1.0).is_err());
        // a -> q as phi -> 1
        let (a, _) = ratios(1.0 - 1e-12, 0.24).unwrap();
        assert!(rel(a, 0.24) < 1e-10);
    }

    #[test]
    fn branch_count_values() {
        assert_eq!(branch_count(0.001, 1.0, 0.24).unwrap(), 5);
        assert_eq!(branch_count(1.0 / 10800.0, 1.0 / PI, 0.24).unwrap(), 6);
        for f in [1e-3, 0.37, 12.0] {
            assert_eq!(branch_count(f * 0.24, f, 0.24).unwrap(), 1);
        }
        assert!(branch_count(1.0, 1.0, 0.24).is_err());
        assert!(branch_count(2.0, 1.0, 0.24).is_err());
    }

    #[test]
    fn cpe_impedance() {
        let z = z_cpe(1.0, 1.0, 1.0).unwrap();
        assert!(z.re.abs() < 1e-15 && (z.im + 1.0).abs() < 1e-15);

        let w = 2.0 * PI * 0.01;
        let z = z_cpe(22281.0, 0.52, w).unwrap();
        assert!(rel(z.norm(), 1.892_394_990_908_738_6e-4) < 1e-13);

        for (q, phi, w) in [(3.0, 0.1, 0.2), (22281.0, 0.52, 7.0), (1e-3, 0.93, 1e4)] {
            let z = z_cpe(q, phi, w).unwrap();
            assert!((z.arg() + PI * phi / 2.0).abs() < 1e-14);
            assert!(rel(z.norm(), 1.0 / (q * w.powf(phi))) < 1e-13);
        }
        assert!(z_cpe(1.0, 0.5, 0.0).is_err());
        assert!(z_cpe(1.0, 0.5, -1.0).is_err());
    }

    #[test]
    fn single_branch_impedance_at_corner() {
        let net = LadderNetwork { r1: 1.0, c1: 1.0, a: 0.5, b: 0.5, n: 1, r_inf: 0.0, q_const: 0.25 };
        let z = z_ladder(&net, 1.0);
        assert!((z.re - 0.5).abs() < 1e-15 && (z.im + 0.5).abs() < 1e-15);
    }

    #[test]
    fn dc_limit_is_geometric_sum() {
        let net = decompose_with_q(1e4, 0.45, 12, 0.24, 0.3).unwrap();
        let z = z_ladder(&net, 1e-40);
        let expected = net.r_inf + net.r1 * (1.0 - net.a.powi(12)) / (1.0 - net.a);
        assert!(rel(z.re, expected) < 1e-12);
        assert!(z.im.abs() < 1e-12 * z.re);
    }

    #[test]
    fn omega_avg_ceil_rule() {
        assert!(rel(omega_avg(1.0, 1.0, 0.5, 0.5, 0.25, 2), 1.0) < 1e-15);
        assert!(rel(omega_avg(1.0, 1.0, 0.5, 0.5, 0.25, 4), 4.0) < 1e-15);
        // ceil(n/2 - 1): n=2 -> 0, n=3 -> 1, n=4 -> 1, n=1 -> 0
        assert!(rel(omega_avg(1.0, 1.0, 0.5, 0.5, 0.25, 3), 4.0) < 1e-15);
        assert!(rel(omega_avg(1.0, 1.0, 0.5, 0.5, 0.25, 1), 1.0) < 1e-15);
        assert!(rel(omega_avg(1.0, 1.0, 0.5, 0.5, 0.25, 5), 16.0) < 1e-15);
    }

    #[test]
    fn table_one_decomposition() {
        let p = CpeTriple::new(0.0014, 22281.0, 0.52).unwrap();
        let cfg = DecompositionConfig { n_branches: 100, delta_phi: 0.0, f_max: 1.0 / PI };
        let net = decompose(&p, &cfg).unwrap();
        assert_eq!(net.n, 100);
        // frozen from a 40-digit evaluation of the same construction
        assert!(rel(net.omega_avg(), 2.020_199_194_745_866_5e-31) < 1e-9);
        assert!(rel(net.r1, 1.142_492_854_673_839_5e27) < 1e-9);
        assert!(rel(net.c1, 1.000_468_875_413_561_7e34) < 1e-9);
        assert!(rel(net.r_inf, 1.287_064_356_917_441_7e-5) < 1e-9);
        assert!(rel(net.f_max(), 1.0 / PI) < 1e-12);
        let w = net.omega_avg();
        let lhs = z_ladder(&net, w).norm();
        assert!(rel(lhs, z_cpe(p.q_coef, p.phi, w).unwrap().norm()) < 1e-10);
    }

    #[test]
    fn single_branch_closed_form() {
        let q = 0.24_f64;
        let a = q.sqrt();
        let p = CpeTriple::new(1.0, 1.0, 0.5).unwrap();
        let cfg = DecompositionConfig { n_branches: 1, delta_phi: 0.0, f_max: 1.0 };
        let net = decompose(&p, &cfg).unwrap();
        // omega_avg = 2π and ωR₁C₁ = 1, so |Z| = R₁ |a/(1-a) + (1 - j)/2| = 1/sqrt(2π)
        let shape = Complex64::new(a / (1.0 - a) + 0.5, -0.5).norm();
        let r1 = 1.0 / ((2.0 * PI).sqrt() * shape);
        assert!(rel(net.r1, r1) < 1e-13);
        assert!(rel(net.c1, 1.0 / (2.0 * PI * r1)) < 1e-13);
        assert!(rel(net.omega_avg(), 2.0 * PI) < 1e-14);
    }

    #[test]
    fn anchor_independence() {
        let a = decompose_anchored(5e3, 0.61, 17, 0.2, 0.15, 1.0).unwrap();
        let b = decompose_anchored(5e3, 0.61, 17, 0.2, 0.15, 3.7e-4).unwrap();
        assert!(rel(a.r1, b.r1) < 1e-12);
        assert!(rel(a.c1, b.c1) < 1e-12);
    }

    #[test]
    fn reconstruct_log_identities() {
        let q = 0.24;
        let theta = ReducedTheta { r_sigma: 1e-3, r1: 2.0, a: q, f_max: 0.1 };
        assert!((reconstruct(&theta, 4, q).unwrap().phi - 1.0).abs() < 1e-15);
        let theta = ReducedTheta { a: q.sqrt(), ..theta };
        let p = reconstruct(&theta, 4, q).unwrap();
        assert!((p.phi - 0.5).abs() < 1e-15);
        assert_eq!(p.r_sigma, 1e-3);
        assert!(reconstruct(&ReducedTheta { a: 1.2, ..theta }, 4, q).is_err());
    }

    #[test]
    fn geometric_structure() {
        let net = decompose_with_q(2e4, 0.37, 30, 0.24, 0.25).unwrap();
        let br = net.branches();
        for w in br.windows(2) {
            assert!(rel(w[0].r / w[1].r, 1.0 / net.a) < 1e-12);
            assert!(rel(w[0].c / w[1].c, 1.0 / net.b) < 1e-12);
            assert!(rel(w[1].f / w[0].f, 1.0 / 0.24) < 1e-12);
        }
        assert!(rel(br.last().unwrap().f, 0.25) < 1e-12);
        assert!(rel(net.a * net.b, 0.24) < 1e-15);
    }
}
