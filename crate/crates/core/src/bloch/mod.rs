//! Driven, damped two-level emitter in the rotating frame of the laser.
//!
//! The density matrix is carried as the vector `(rho_gg, rho_ge, rho_eg, rho_ee)`
//! and evolves under `d rho / dt = M(t) rho`, with `M` built by
//! [`build_generator`]. Rates are in ns⁻¹, times in ns, angular frequencies in
//! rad/ns.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::ControlFlow;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, invalid, Error, Result};
use crate::ode::Dopri5;

mod fit;

pub use fit::{fit_rabi, RabiFit, RabiFitOptions};

/// Default relative/absolute tolerance of the master-equation integrator.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Threshold below which the excited population counts as fully decayed.
pub const DECAYED_POPULATION: f64 = 1e-6;

/// Radiative and pure-dephasing rates of the emitter (ns⁻¹).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    pub gamma: f64,
    pub gamma_d: f64,
}

impl EmitterParams {
    /// `gamma = 0` is accepted so the lossless limit can be studied; every
    /// physical emitter has `gamma > 0`.
    pub fn new(gamma: f64, gamma_d: f64) -> Result<Self> {
        let p = EmitterParams { gamma, gamma_d };
        p.validate()?;
        Ok(p)
    }

    pub fn from_lifetime_ns(lifetime_ns: f64, gamma_d: f64) -> Result<Self> {
        if !(lifetime_ns > 0.0) {
            return Err(invalid("lifetime_ns", "must be positive"));
        }
        Self::new(1.0 / lifetime_ns, gamma_d)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("gamma", self.gamma, 0.0, f64::MAX)?;
        check_range("gamma_d", self.gamma_d, 0.0, f64::MAX)
    }

    /// Decay rate of the optical coherence, `(gamma + 2 gamma_d) / 2`.
    pub fn coherence_decay(&self) -> f64 {
        0.5 * (self.gamma + 2.0 * self.gamma_d)
    }
}

/// Converts an intensity FWHM into the half-width `sigma` of the Gaussian
/// field envelope `exp(-(t - t0)^2 / sigma^2)`.
pub fn sigma_from_intensity_fwhm(fwhm: f64) -> f64 {
    fwhm / (2.0 * std::f64::consts::LN_2).sqrt()
}

/// Gaussian excitation pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    /// Pulse area Θ (rad).
    pub theta: f64,
    /// Half-width of the field envelope (ns).
    pub sigma: f64,
    /// Pulse centre (ns).
    pub t0: f64,
    /// Laser minus emitter angular frequency (rad/ns).
    pub delta: f64,
}

impl PulseParams {
    pub fn new(theta: f64, sigma: f64, t0: f64, delta: f64) -> Result<Self> {
        let p = PulseParams {
            theta,
            sigma,
            t0,
            delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_intensity_fwhm(theta: f64, fwhm: f64, t0: f64, delta: f64) -> Result<Self> {
        Self::new(theta, sigma_from_intensity_fwhm(fwhm), t0, delta)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("theta", self.theta, 0.0, f64::MAX)?;
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma", format!("{} must be positive", self.sigma)));
        }
        if !self.t0.is_finite() || !self.delta.is_finite() {
            return Err(invalid("t0/delta", "must be finite"));
        }
        Ok(())
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        PulseParams { theta, ..*self }
    }

    /// Ω(t) = Θ / (√π σ) · exp(−(t − t0)² / σ²).
    pub fn rabi_frequency(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.sigma;
        self.theta / (PI.sqrt() * self.sigma) * (-x * x).exp()
    }
}

/// Time-dependent drive used by [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    Gaussian(PulseParams),
    Constant { omega: f64, delta: f64 },
    /// Rectangular pulse of the given area; only meant for tests.
    Square {
        area: f64,
        start: f64,
        duration: f64,
        delta: f64,
    },
}

impl Drive {
    pub fn omega(&self, t: f64) -> f64 {
        match *self {
            Drive::Gaussian(p) => p.rabi_frequency(t),
            Drive::Constant { omega, .. } => omega,
            Drive::Square {
                area,
                start,
                duration,
                ..
            } => {
                if t >= start && t < start + duration {
                    area / duration
                } else {
                    0.0
                }
            }
        }
    }

    pub fn delta(&self) -> f64 {
        match *self {
            Drive::Gaussian(p) => p.delta,
            Drive::Constant { delta, .. } | Drive::Square { delta, .. } => delta,
        }
    }

    /// Times where the drive changes character; the integrator restarts there
    /// with a bounded step so narrow features are never stepped over.
    fn breakpoints(&self) -> Vec<(f64, f64, f64)> {
        match *self {
            Drive::Gaussian(p) => vec![(p.t0 - 6.0 * p.sigma, p.t0 + 6.0 * p.sigma, 0.5 * p.sigma)],
            Drive::Constant { .. } => vec![],
            Drive::Square {
                start, duration, ..
            } => vec![(start, start + duration, 0.1 * duration)],
        }
    }
}

/// Density matrix of the two-level system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochState {
    pub rho_gg: f64,
    pub rho_ee: f64,
    pub rho_ge: Complex64,
    pub rho_eg: Complex64,
}

impl BlochState {
    pub fn ground() -> Self {
        BlochState {
            rho_gg: 1.0,
            rho_ee: 0.0,
            rho_ge: Complex64::new(0.0, 0.0),
            rho_eg: Complex64::new(0.0, 0.0),
        }
    }

    pub fn trace(&self) -> f64 {
        self.rho_gg + self.rho_ee
    }

    /// `|rho_ge|² − rho_gg·rho_ee`; non-positive for a physical state.
    pub fn positivity_excess(&self) -> f64 {
        self.rho_ge.norm_sqr() - self.rho_gg * self.rho_ee
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.rho_eg - self.rho_ge.conj()).norm()
    }

    pub fn to_vector(&self) -> Vector4<Complex64> {
        Vector4::new(
            Complex64::new(self.rho_gg, 0.0),
            self.rho_ge,
            self.rho_eg,
            Complex64::new(self.rho_ee, 0.0),
        )
    }

    pub fn from_vector(v: &Vector4<Complex64>) -> Self {
        BlochState {
            rho_gg: v[0].re,
            rho_ge: v[1],
            rho_eg: v[2],
            rho_ee: v[3].re,
        }
    }
}

/// Output of [`evolve`]: the adaptive time grid, the state at every grid
/// point, and the running integral `∫ rho_ee dt` carried by the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<BlochState>,
    pub excited_integral: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &BlochState)> {
        Some((*self.times.last()?, self.states.last()?))
    }

    /// Trapezoidal `∫ rho_ee dt` on the output grid.
    pub fn trapezoid_excited_integral(&self) -> f64 {
        self.times
            .windows(2)
            .zip(self.states.windows(2))
            .map(|(t, s)| 0.5 * (t[1] - t[0]) * (s[0].rho_ee + s[1].rho_ee))
            .sum()
    }

    /// Writes `t_ns,rho_gg,re_rho_ge,im_rho_ge,rho_ee` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t_ns,rho_gg,re_rho_ge,im_rho_ge,rho_ee")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(
                out,
                "{},{},{},{},{}",
                t, s.rho_gg, s.rho_ge.re, s.rho_ge.im, s.rho_ee
            )?;
        }
        Ok(())
    }
}

/// The 4×4 generator `M` acting on `(rho_gg, rho_ge, rho_eg, rho_ee)`.
pub fn build_generator(emitter: &EmitterParams, omega: f64, delta: f64) -> Matrix4<Complex64> {
    let i_half_omega = Complex64::new(0.0, 0.5 * omega);
    let g = Complex64::new(emitter.gamma, 0.0);
    let decay = emitter.coherence_decay();
    let zero = Complex64::new(0.0, 0.0);
    Matrix4::new(
        zero, i_half_omega, -i_half_omega, g, //
        i_half_omega, Complex64::new(-decay, delta), zero, -i_half_omega, //
        -i_half_omega, zero, Complex64::new(-decay, -delta), i_half_omega, //
        zero, -i_half_omega, i_half_omega, -g,
    )
}

// State layout for the real-valued integrator: four complex entries followed by
// the running integral of rho_ee.
const STATE_DIM: usize = 9;

fn pack(state: &BlochState) -> [f64; STATE_DIM] {
    [
        state.rho_gg,
        0.0,
        state.rho_ge.re,
        state.rho_ge.im,
        state.rho_eg.re,
        state.rho_eg.im,
        state.rho_ee,
        0.0,
        0.0,
    ]
}

fn unpack(y: &[f64; STATE_DIM]) -> BlochState {
    BlochState {
        rho_gg: y[0],
        rho_ge: Complex64::new(y[2], y[3]),
        rho_eg: Complex64::new(y[4], y[5]),
        rho_ee: y[6],
    }
}

fn master_rhs(emitter: &EmitterParams, drive: &Drive, t: f64, y: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
    let m = build_generator(emitter, drive.omega(t), drive.delta());
    let rho = Vector4::new(
        Complex64::new(y[0], y[1]),
        Complex64::new(y[2], y[3]),
        Complex64::new(y[4], y[5]),
        Complex64::new(y[6], y[7]),
    );
    let d = m * rho;
    [
        d[0].re, d[0].im, d[1].re, d[1].im, d[2].re, d[2].im, d[3].re, d[3].im, y[6],
    ]
}

/// Integrates the master equation from `initial` at `t_start` to `t_end`.
pub fn evolve(
    emitter: &EmitterParams,
    drive: &Drive,
    initial: &BlochState,
    t_start: f64,
    t_end: f64,
    tolerance: f64,
) -> Result<Trajectory> {
    emitter.validate()?;
    if !(tolerance > 0.0) {
        return Err(invalid("tolerance", "must be positive"));
    }
    if !(t_end > t_start) {
        return Err(invalid("t_end", format!("{t_end} must exceed t_start {t_start}")));
    }

    // Split the interval so that drive features get a bounded step size.
    let mut pieces: Vec<(f64, f64, f64)> = Vec::new();
    let mut cursor = t_start;
    for (a, b, h) in drive.breakpoints() {
        let a = a.max(t_start);
        let b = b.min(t_end);
        if b <= a {
            continue;
        }
        if a > cursor {
            pieces.push((cursor, a, f64::INFINITY));
        }
        pieces.push((a.max(cursor), b, h));
        cursor = b;
    }
    if cursor < t_end {
        pieces.push((cursor, t_end, f64::INFINITY));
    }

    let mut traj = Trajectory {
        times: vec![t_start],
        states: vec![*initial],
        excited_integral: vec![0.0],
    };
    let mut y = pack(initial);
    for (a, b, h_max) in pieces {
        let solver = Dopri5::new(tolerance).with_max_step(h_max);
        let (_, y_end) = solver.integrate(
            |t, y| master_rhs(emitter, drive, t, y),
            a,
            y,
            b,
            |seg| {
                traj.times.push(seg.t1);
                traj.states.push(unpack(&seg.y1));
                traj.excited_integral.push(seg.y1[8]);
                ControlFlow::Continue(())
            },
        )?;
        y = y_end;
    }
    Ok(traj)
}

/// Default integration end: pulse plus fifteen radiative lifetimes, after which
/// `rho_ee < 1e-6`. With `gamma = 0` only the pulse is covered.
pub fn default_window(emitter: &EmitterParams, pulse: &PulseParams) -> f64 {
    let base = pulse.t0 + 8.0 * pulse.sigma;
    if emitter.gamma > 0.0 {
        base + 15.0 / emitter.gamma
    } else {
        base
    }
}

/// Evolves the ground state through a Gaussian pulse, starting at `t = 0`.
pub fn evolve_pulse(
    emitter: &EmitterParams,
    pulse: &PulseParams,
    t_end: f64,
    tolerance: f64,
) -> Result<Trajectory> {
    pulse.validate()?;
    if !(t_end > pulse.t0 + 5.0 * pulse.sigma) {
        return Err(invalid(
            "t_end",
            format!("{t_end} ns does not clear the pulse (t0 + 5 sigma)"),
        ));
    }
    evolve(
        emitter,
        &Drive::Gaussian(*pulse),
        &BlochState::ground(),
        0.0,
        t_end,
        tolerance,
    )
}

/// Mean number of emitted photons, `gamma ∫ rho_ee dt`, plus the population
/// still excited at the end of the trajectory (which decays freely once the
/// drive is off).
pub fn emission_probability(traj: &Trajectory, emitter: &EmitterParams) -> Result<f64> {
    let (t_end, last) = traj
        .last()
        .ok_or_else(|| Error::EmptyData("trajectory has no points".into()))?;
    if emitter.gamma > 0.0 && last.rho_ee >= DECAYED_POPULATION {
        return Err(Error::Truncated {
            time_ns: t_end,
            rho_ee: last.rho_ee,
        });
    }
    let integral = *traj.excited_integral.last().unwrap_or(&0.0);
    Ok(emitter.gamma * integral + last.rho_ee.max(0.0))
}

/// Emission probability for one pulse using the default window.
pub fn pulse_emission_probability(
    emitter: &EmitterParams,
    pulse: &PulseParams,
    tolerance: f64,
) -> Result<f64> {
    let traj = evolve_pulse(emitter, pulse, default_window(emitter, pulse), tolerance)?;
    emission_probability(&traj, emitter)
}

/// Emission probability integrating only across the pulse and adding the free
/// decay analytically. Agrees with [`pulse_emission_probability`] to the
/// integrator tolerance; used where many evaluations are needed.
pub fn pulse_emission_probability_fast(
    emitter: &EmitterParams,
    pulse: &PulseParams,
    tolerance: f64,
) -> Result<f64> {
    pulse.validate()?;
    let t_end = pulse.t0 + 8.0 * pulse.sigma;
    let traj = evolve(
        emitter,
        &Drive::Gaussian(*pulse),
        &BlochState::ground(),
        (pulse.t0 - 8.0 * pulse.sigma).max(0.0),
        t_end,
        tolerance,
    )?;
    let last = traj.states.last().expect("non-empty trajectory");
    Ok(emitter.gamma * traj.excited_integral.last().unwrap() + last.rho_ee.max(0.0))
}

/// Steady state under continuous drive: the trace-one null vector of `M`.
pub fn steady_state_cw(emitter: &EmitterParams, omega: f64, delta: f64) -> Result<BlochState> {
    emitter.validate()?;
    check_range("omega", omega, 0.0, f64::MAX)?;
    let m = build_generator(emitter, omega, delta);
    let mut a = m;
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    a[(0, 0)] = one;
    a[(0, 1)] = zero;
    a[(0, 2)] = zero;
    a[(0, 3)] = one;
    let b = Vector4::new(one, zero, zero, zero);
    let rho = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("generator has no unique steady state".into()))?;
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular("steady state is not finite".into()));
    }
    let residual = (m * rho).norm();
    if residual > 1e-10 {
        return Err(Error::Singular(format!("residual {residual:e} too large")));
    }
    Ok(BlochState::from_vector(&rho))
}

/// Emission probability for each pulse area, reusing the template's width,
/// centre and detuning.
pub fn rabi_curve(
    emitter: &EmitterParams,
    template: &PulseParams,
    thetas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    rabi_curve_with_tolerance(emitter, template, thetas, DEFAULT_TOLERANCE)
}

pub fn rabi_curve_with_tolerance(
    emitter: &EmitterParams,
    template: &PulseParams,
    thetas: &[f64],
    tolerance: f64,
) -> Result<Vec<(f64, f64)>> {
    if thetas.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("theta_values", "must be sorted ascending"));
    }
    thetas
        .iter()
        .map(|&theta| {
            let pulse = template.with_theta(theta);
            let p = pulse_emission_probability(emitter, &pulse, tolerance)?;
            Ok((theta, p))
        })
        .collect()
}

/// Locates the first maximum of `p_e(Θ)` between `lo` and `hi` by golden
/// section on the integrated curve.
pub fn first_rabi_peak(emitter: &EmitterParams, template: &PulseParams, lo: f64, hi: f64) -> Result<f64> {
    let f = |theta: f64| -> Result<f64> {
        pulse_emission_probability_fast(emitter, &template.with_theta(theta), DEFAULT_TOLERANCE)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > 1e-7 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_emitter() -> EmitterParams {
        EmitterParams::from_lifetime_ns(0.64, 0.2).unwrap()
    }

    fn paper_pulse(theta: f64) -> PulseParams {
        PulseParams::from_intensity_fwhm(theta, 0.026, 0.2, 0.0).unwrap()
    }

    #[test]
    fn pure_decay_generator_entries() {
        let e = EmitterParams::new(1.0, 0.0).unwrap();
        let m = build_generator(&e, 0.0, 0.0);
        for r in 0..4 {
            for c in 0..4 {
                let expected = match (r, c) {
                    (0, 3) => 1.0,
                    (3, 3) => -1.0,
                    (1, 1) | (2, 2) => -0.5,
                    _ => 0.0,
                };
                assert_eq!(m[(r, c)], Complex64::new(expected, 0.0), "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn coherence_decay_entry() {
        let e = EmitterParams::new(1.5625, 0.2).unwrap();
        let m = build_generator(&e, 1.0, 0.0);
        assert!((m[(1, 1)].re + 0.98125).abs() < 1e-15);
        assert!((m[(2, 2)].re + 0.98125).abs() < 1e-15);
    }

    #[test]
    fn generator_preserves_trace() {
        let e = EmitterParams::new(0.7, 0.3).unwrap();
        let m = build_generator(&e, 2.3, -0.4);
        for c in 0..4 {
            assert!((m[(0, c)] + m[(3, c)]).norm() < 1e-15);
        }
    }

    #[test]
    fn detuning_enters_with_opposite_signs() {
        let e = EmitterParams::new(1.0, 0.0).unwrap();
        let m = build_generator(&e, 0.0, 0.7);
        assert_eq!(m[(1, 1)].im, 0.7);
        assert_eq!(m[(2, 2)].im, -0.7);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(EmitterParams::new(-1.0, 0.0).is_err());
        assert!(EmitterParams::new(1.0, -0.1).is_err());
        assert!(PulseParams::new(1.0, 0.0, 0.0, 0.0).is_err());
        assert!(PulseParams::new(-1.0, 0.01, 0.0, 0.0).is_err());
    }

    #[test]
    fn pulse_area_integrates_to_theta() {
        let p = PulseParams::new(2.5, 0.03, 0.5, 0.0).unwrap();
        let n = 20000;
        let (a, b) = (0.0, 1.0);
        let h = (b - a) / n as f64;
        let s: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * p.rabi_frequency(a + k as f64 * h)
            })
            .sum::<f64>()
            * h;
        assert!((s - 2.5).abs() < 1e-10);
    }

    #[test]
    fn intensity_fwhm_conversion() {
        let sigma = sigma_from_intensity_fwhm(0.026);
        let p = PulseParams::new(1.0, sigma, 0.0, 0.0).unwrap();
        let peak = p.rabi_frequency(0.0).powi(2);
        let half = p.rabi_frequency(0.013).powi(2);
        assert!((half / peak - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_drive_stays_in_ground_state() {
        let e = paper_emitter();
        let p = paper_pulse(0.0);
        let traj = evolve_pulse(&e, &p, default_window(&e, &p), DEFAULT_TOLERANCE).unwrap();
        assert!(traj.states.iter().all(|s| s.rho_ee == 0.0));
        assert_eq!(emission_probability(&traj, &e).unwrap(), 0.0);
    }

    #[test]
    fn lossless_pi_pulse_inverts() {
        let e = EmitterParams::new(0.0, 0.0).unwrap();
        let p = PulseParams::new(PI, 0.001, 0.01, 0.0).unwrap();
        let traj = evolve_pulse(&e, &p, 0.05, DEFAULT_TOLERANCE).unwrap();
        let (_, last) = traj.last().unwrap();
        assert!((last.rho_ee - 1.0).abs() < 1e-6);
        assert!((emission_probability(&traj, &e).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn short_pi_pulse_emits_one_photon() {
        let e = EmitterParams::new(1.0, 0.0).unwrap();
        let p = PulseParams::new(PI, 1e-4, 0.001, 0.0).unwrap();
        let pe = pulse_emission_probability(&e, &p, DEFAULT_TOLERANCE).unwrap();
        assert!((pe - 1.0).abs() < 1e-3, "p_e = {pe}");
    }

    #[test]
    fn paper_pi_pulse_emission_in_expected_band() {
        let pe = pulse_emission_probability(&paper_emitter(), &paper_pulse(PI), DEFAULT_TOLERANCE).unwrap();
        assert!(pe > 0.9 && pe < 1.05, "p_e = {pe}");
    }

    #[test]
    fn truncated_trajectory_is_an_error() {
        let e = paper_emitter();
        let p = paper_pulse(PI);
        let traj = evolve_pulse(&e, &p, 1.0, DEFAULT_TOLERANCE).unwrap();
        assert!(matches!(
            emission_probability(&traj, &e),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn window_must_clear_pulse() {
        let e = paper_emitter();
        let p = paper_pulse(PI);
        assert!(evolve_pulse(&e, &p, p.t0, DEFAULT_TOLERANCE).is_err());
    }

    #[test]
    fn fast_and_full_emission_agree() {
        let e = paper_emitter();
        for theta in [0.3, PI, 2.2 * PI] {
            let p = paper_pulse(theta);
            let full = pulse_emission_probability(&e, &p, 1e-10).unwrap();
            let fast = pulse_emission_probability_fast(&e, &p, 1e-10).unwrap();
            assert!((full - fast).abs() < 1e-8, "theta {theta}: {full} vs {fast}");
        }
    }

    #[test]
    fn trapezoid_agrees_with_carried_integral() {
        let e = paper_emitter();
        let p = paper_pulse(PI);
        let traj = evolve_pulse(&e, &p, default_window(&e, &p), DEFAULT_TOLERANCE).unwrap();
        let carried = *traj.excited_integral.last().unwrap();
        let trap = traj.trapezoid_excited_integral();
        assert!(((carried - trap) / carried).abs() < 1e-3);
    }

    #[test]
    fn steady_state_limits() {
        let e = EmitterParams::new(1.0, 0.3).unwrap();
        let weak = steady_state_cw(&e, 1e-6, 0.0).unwrap();
        assert!(weak.rho_ee < 1e-11);
        let strong = steady_state_cw(&e, 1e4, 0.0).unwrap();
        assert!((strong.rho_ee - 0.5).abs() < 1e-6);
    }

    #[test]
    fn steady_state_degenerate_is_error() {
        let e = EmitterParams::new(0.0, 0.0).unwrap();
        assert!(steady_state_cw(&e, 0.0, 0.0).is_err());
        assert!(steady_state_cw(&EmitterParams::new(1.0, 0.0).unwrap(), -1.0, 0.0).is_err());
    }

    #[test]
    fn rabi_curve_requires_sorted_input() {
        let e = paper_emitter();
        assert!(rabi_curve(&e, &paper_pulse(0.0), &[1.0, 0.5]).is_err());
    }

    #[test]
    fn dephasing_damps_three_pi() {
        let e = paper_emitter();
        let coherent = EmitterParams::new(e.gamma, 0.0).unwrap();
        let damped = rabi_curve(&e, &paper_pulse(0.0), &[3.0 * PI]).unwrap();
        let undamped = rabi_curve(&coherent, &paper_pulse(0.0), &[3.0 * PI]).unwrap();
        assert!(damped[0].1 < undamped[0].1);
    }

    #[test]
    fn trajectory_csv_header() {
        let e = paper_emitter();
        let p = paper_pulse(PI);
        let traj = evolve_pulse(&e, &p, 1.0, 1e-6).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t_ns,rho_gg,re_rho_ge,im_rho_ge,rho_ee\n"));
        assert_eq!(text.lines().count(), traj.len() + 1);
    }
}
