use std::f64::consts::PI;

use lfecm::cpe::{decompose, decompose_with_q, reconstruct, z_cpe, z_ladder, CpeTriple, DecompositionConfig};
use lfecm::estimation::ReducedTheta;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

proptest! {
    #[test]
    fn anchor_identity(lq in 2.0f64..6.0, phi in 0.3f64..0.7, n in 1usize..60, f_max in 1e-3f64..0.3) {
        let q_coef = 10f64.powf(lq);
        let net = decompose_with_q(q_coef, phi, n, 0.24, f_max).unwrap();
        let w = net.omega_avg();
        let g = z_ladder(&net, w).norm() * q_coef * w.powf(phi);
        prop_assert!((g - 1.0).abs() < 1e-10, "gain {g}");
    }

    #[test]
    fn round_trip(lq in 2.0f64..6.0, phi in 0.3f64..0.7, n in 1usize..100, f_max in 1e-3f64..0.3) {
        let q_coef = 10f64.powf(lq);
        let net = decompose_with_q(q_coef, phi, n, 0.24, f_max).unwrap();
        let theta = ReducedTheta { r_sigma: 0.002, r1: net.r1, a: net.a, f_max };
        let p = reconstruct(&theta, n, 0.24).unwrap();
        prop_assert!(rel(p.q_coef, q_coef) < 1e-6);
        prop_assert!(rel(p.phi, phi) < 1e-6);
        prop_assert_eq!(p.r_sigma, 0.002);
    }

    #[test]
    fn geometric_structure(phi in 0.1f64..0.9, n in 2usize..50, dphi in 0.0f64..0.05) {
        let cfg = DecompositionConfig { n_branches: n, delta_phi: dphi, f_max: 0.1 };
        let net = decompose(&CpeTriple::new(1e-3, 1e4, phi).unwrap(), &cfg).unwrap();
        prop_assert!(rel(net.a * net.b, net.q_const) < 1e-14);
        let br = net.branches();
        prop_assert!(br.windows(2).all(|w| w[1].f > w[0].f));
        prop_assert!(rel(br[n - 1].f, 0.1) < 1e-12);
    }
}

#[test]
fn dc_limit_is_the_resistor_sum() {
    let net = decompose_with_q(22281.0, 0.52, 30, 0.24, 0.3).unwrap();
    let dc = net.r_inf + net.r1 * (1.0 - net.a.powi(30)) / (1.0 - net.a);
    let z = z_ladder(&net, 1e-40);
    assert!(rel(z.re, dc) < 1e-12);
    assert!(z.im.abs() < 1e-12 * dc);
}

#[test]
fn ladder_tracks_cpe_inside_the_band() {
    // with q = 0.24 the phase ripple stays near one degree inside the band
    let net = decompose_with_q(22281.0, 0.52, 40, 0.24, 0.3).unwrap();
    let (lo, hi) = (net.f_min() * 100.0, net.f_max() / 100.0);
    for k in 0..50 {
        let f = lo * (hi / lo).powf(k as f64 / 49.0);
        let w = 2.0 * PI * f;
        let (zl, zc) = (z_ladder(&net, w), z_cpe(22281.0, 0.52, w).unwrap());
        assert!((zl.arg() - zc.arg()).abs().to_degrees() < 2.0, "phase at {f} Hz");
        assert!(rel(zl.norm(), zc.norm()) < 0.05, "magnitude at {f} Hz");
    }
}

#[test]
fn reference_network_has_100_branches() {
    let cfg = DecompositionConfig { n_branches: 100, delta_phi: 0.0, f_max: 1.0 / PI };
    let net = decompose(&CpeTriple::new(0.0014, 22281.0, 0.52).unwrap(), &cfg).unwrap();
    assert_eq!(net.branches().len(), 100);
    assert!(rel(net.f_max(), 1.0 / PI) < 1e-12);
}
