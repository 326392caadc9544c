use std::f64::consts::PI;

use nalgebra::Matrix4;
use num_complex::Complex64;
use proptest::prelude::*;
use qdsource::bloch::{
    build_generator, evolve, evolve_pulse, pulse_emission_probability, steady_state_cw, BlochState, Drive,
    EmitterParams, PulseParams, DEFAULT_TOLERANCE,
};

/// Two-level saturation with coherence decay Γ₂: ρee = (s/2)/(1+s),
/// s = Ω²Γ₂ / (γ(Δ² + Γ₂²)).
fn saturation(gamma: f64, gamma_d: f64, omega: f64, delta: f64) -> f64 {
    let g2 = 0.5 * gamma + gamma_d;
    let s = omega * omega * g2 / (gamma * (delta * delta + g2 * g2));
    0.5 * s / (1.0 + s)
}

/// Null vector of `m` from its SVD, normalised to unit trace.
fn svd_null_vector(m: Matrix4<Complex64>) -> BlochState {
    let svd = m.svd(true, true);
    let v_t = svd.v_t.unwrap();
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let v = v_t.row(k).adjoint();
    let tr = v[0] + v[3];
    let v = v / tr;
    BlochState {
        rho_gg: v[0].re,
        rho_ge: v[1],
        rho_eg: v[2],
        rho_ee: v[3].re,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pulsed_evolution_stays_physical(
        gamma in 0.05f64..5.0,
        gamma_d in 0.0f64..2.0,
        theta in 0.0f64..4.0 * PI,
        sigma in 0.005f64..0.1,
        delta in -20.0f64..20.0,
    ) {
        let e = EmitterParams::new(gamma, gamma_d).unwrap();
        let p = PulseParams::new(theta, sigma, 8.0 * sigma, delta).unwrap();
        let traj = evolve_pulse(&e, &p, p.t0 + 8.0 * sigma + 2.0 / gamma, DEFAULT_TOLERANCE).unwrap();
        for s in &traj.states {
            prop_assert!((s.trace() - 1.0).abs() < 1e-8);
            prop_assert!(s.hermiticity_error() < 1e-8);
            prop_assert!(s.positivity_excess() < 1e-8);
            prop_assert!(s.rho_ee > -1e-8 && s.rho_gg > -1e-8);
        }
    }

    #[test]
    fn steady_state_matches_svd_null_space(
        gamma in 0.05f64..5.0,
        gamma_d in 0.0f64..3.0,
        omega in 0.0f64..20.0,
        delta in -10.0f64..10.0,
    ) {
        let e = EmitterParams::new(gamma, gamma_d).unwrap();
        let ss = steady_state_cw(&e, omega, delta).unwrap();
        let oracle = svd_null_vector(build_generator(&e, omega, delta));
        prop_assert!((ss.rho_ee - oracle.rho_ee).abs() < 1e-10);
        prop_assert!((ss.rho_ge - oracle.rho_ge).norm() < 1e-10);
        prop_assert!((ss.rho_ee - saturation(gamma, gamma_d, omega, delta)).abs() < 1e-10);
    }
}

#[test]
fn area_theorem_without_loss() {
    let e = EmitterParams::new(0.0, 0.0).unwrap();
    for k in 0..=16 {
        let theta = k as f64 * PI / 4.0;
        let p = PulseParams::new(theta, 0.02, 0.2, 0.0).unwrap();
        let pe = pulse_emission_probability(&e, &p, 1e-11).unwrap();
        let want = (theta / 2.0).sin().powi(2);
        assert!((pe - want).abs() < 1e-4, "theta {theta}: {pe} vs {want}");
    }
}

#[test]
fn steady_state_is_long_time_limit() {
    let cases = [(1.0, 0.0, 2.0, 0.0), (1.5625, 0.2, 3.0, 1.0), (0.5, 1.0, 0.7, -2.0)];
    for (gamma, gamma_d, omega, delta) in cases {
        let e = EmitterParams::new(gamma, gamma_d).unwrap();
        let ss = steady_state_cw(&e, omega, delta).unwrap();
        let t_end = 40.0 / gamma;
        let traj = evolve(&e, &Drive::Constant { omega, delta }, &BlochState::ground(), 0.0, t_end, 1e-11).unwrap();
        let (_, last) = traj.last().unwrap();
        assert!((last.rho_ee - ss.rho_ee).abs() < 1e-6);
        assert!((last.rho_ge - ss.rho_ge).norm() < 1e-6);
        if gamma_d == 0.0 {
            let exact = omega * omega / 4.0 / (delta * delta + gamma * gamma / 4.0 + omega * omega / 2.0);
            assert!((ss.rho_ee - exact).abs() < 1e-8);
        }
    }
}
