use std::f64::consts::PI;

use qdsource::bloch::{fit_rabi, pulse_emission_probability, EmitterParams, PulseParams, RabiFitOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic(e: &EmitterParams, template: &PulseParams, p_pi: f64, scale: f64) -> Vec<(f64, f64)> {
    (1..=24)
        .map(|k| {
            let p = 2.2 * p_pi * k as f64 / 24.0;
            let pulse = template.with_theta(PI * (p / p_pi).sqrt());
            (p, scale * pulse_emission_probability(e, &pulse, 1e-10).unwrap())
        })
        .collect()
}

#[test]
fn recovers_noise_free_parameters() {
    let truth = EmitterParams::from_lifetime_ns(0.64, 0.2).unwrap();
    let template = PulseParams::from_intensity_fwhm(PI, 0.026, 0.2, 0.0).unwrap();
    let data = synthetic(&truth, &template, 7.5, 1300.0);
    let start = EmitterParams::new(truth.gamma, 0.0).unwrap();
    let fit = fit_rabi(&start, &template, &data, &RabiFitOptions::default()).unwrap();
    assert!((fit.p_pi / 7.5 - 1.0).abs() < 0.01, "{fit:?}");
    assert!((fit.gamma_d / 0.2 - 1.0).abs() < 0.01, "{fit:?}");
    assert!((fit.scale / 1300.0 - 1.0).abs() < 0.01, "{fit:?}");
}

#[test]
fn tolerates_two_percent_noise() {
    let truth = EmitterParams::from_lifetime_ns(0.64, 0.5).unwrap();
    let template = PulseParams::from_intensity_fwhm(PI, 0.026, 0.2, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let data: Vec<(f64, f64)> = synthetic(&truth, &template, 3.0, 1.0)
        .into_iter()
        .map(|(p, y)| (p, y * (1.0 + 0.02 * (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt())))
        .collect();
    let fit = fit_rabi(&truth, &template, &data, &RabiFitOptions::default()).unwrap();
    assert!((fit.p_pi / 3.0 - 1.0).abs() < 0.05, "{fit:?}");
}

#[test]
fn rejects_degenerate_input() {
    let e = EmitterParams::from_lifetime_ns(0.64, 0.2).unwrap();
    let template = PulseParams::from_intensity_fwhm(PI, 0.026, 0.2, 0.0).unwrap();
    let zeros: Vec<(f64, f64)> = (1..=10).map(|k| (k as f64, 0.0)).collect();
    assert!(fit_rabi(&e, &template, &zeros, &RabiFitOptions::default()).is_err());
    let short = synthetic(&e, &template, 1.0, 1.0)[..5].to_vec();
    assert!(fit_rabi(&e, &template, &short, &RabiFitOptions::default()).is_err());
    // data confined to the weak-excitation corner cannot pin P_π
    let narrow: Vec<(f64, f64)> = (1..=10)
        .map(|k| {
            let p = 0.01 * k as f64;
            (p, pulse_emission_probability(&e, &template.with_theta(PI * p.sqrt()), 1e-10).unwrap())
        })
        .collect();
    assert!(fit_rabi(&e, &template, &narrow, &RabiFitOptions::default()).is_err());
}
