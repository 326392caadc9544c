use std::f64::consts::PI;

use qdsource::bloch::{
    first_rabi_peak, pulse_emission_probability, rabi_curve, EmitterParams, PulseParams,
};
use qdsource::device::{
    default_profiles, beta_at, impurity_simplified, impurity_vs_power, pump_suppression,
    DeviceParams,
};

fn emitter() -> EmitterParams {
    EmitterParams::from_lifetime_ns(0.640, 0.2).unwrap()
}

fn template() -> PulseParams {
    PulseParams::from_intensity_fwhm(0.0, 0.026, 0.2, 0.0).unwrap()
}

#[test]
fn first_peak_is_near_pi() {
    let peak = first_rabi_peak(&emitter(), &template(), 0.5 * PI, 1.5 * PI).unwrap();
    assert!((peak / PI - 1.0).abs() < 0.05, "peak at {} pi", peak / PI);
}

#[test]
fn impurity_ratio_at_pi_power() {
    let params = DeviceParams::default();
    let (pe, pc) = default_profiles();
    let betas = beta_at(&pe, &pc, &params, 20.0).unwrap();
    let rows = impurity_vs_power(&params, betas, &emitter(), &template(), 1.0, &[1e-6, 1.0]).unwrap();
    let xi0 = impurity_simplified(pump_suppression(&params), betas.0, betas.1).unwrap();
    assert!((rows[0].xi / xi0 - 1.0).abs() < 0.01);
    let ratio = rows[1].xi / xi0;
    assert!((2.0..=2.8).contains(&ratio), "ratio {ratio}");
    assert!((rows[1].xi - 0.004).abs() < 0.0005, "xi(P_pi) = {}", rows[1].xi);

    // Independent estimate: the small-area response is linear in Θ², so the
    // ratio is π² p_e(Θ₀)/(Θ₀² p_e(π)) for a small Θ₀.
    let theta0 = 0.01;
    let small = pulse_emission_probability(&emitter(), &template().with_theta(theta0), 1e-12).unwrap();
    let at_pi = rabi_curve(&emitter(), &template(), &[PI]).unwrap()[0].1;
    let oracle = PI * PI * small / (theta0 * theta0 * at_pi);
    assert!((ratio / oracle - 1.0).abs() < 1e-3, "ratio {ratio} oracle {oracle}");
}

#[test]
fn impurity_grows_beyond_saturation() {
    let params = DeviceParams::default();
    let (pe, pc) = default_profiles();
    let betas = beta_at(&pe, &pc, &params, 20.0).unwrap();
    let powers: Vec<f64> = (1..=10).map(|i| 0.2 * i as f64).collect();
    let rows = impurity_vs_power(&params, betas, &emitter(), &template(), 1.0, &powers).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].xi > w[0].xi);
    }
}
