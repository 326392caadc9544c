//! Adaptive Dormand–Prince 5(4) integrator over fixed-size real state vectors.
//!
//! Shared by the master-equation solver and the quantum-jump sampler. Every
//! accepted step is reported to an observer together with the derivative at
//! both ends, which is enough for cubic Hermite dense output.

use std::ops::ControlFlow;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th-order weights minus embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One accepted integration step `[t0, t1]`.
#[derive(Debug, Clone, Copy)]
pub struct Segment<const N: usize> {
    pub t0: f64,
    pub y0: [f64; N],
    pub f0: [f64; N],
    pub t1: f64,
    pub y1: [f64; N],
    pub f1: [f64; N],
}

impl<const N: usize> Segment<N> {
    /// Cubic Hermite interpolation of the state inside the step.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        if h == 0.0 {
            return self.y0;
        }
        let s = (t - self.t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = h00 * self.y0[i]
                + h10 * h * self.f0[i]
                + h01 * self.y1[i]
                + h11 * h * self.f1[i];
        }
        out
    }
}

/// Step-size controlled Dormand–Prince 5(4) pair.
#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Dopri5 {
    pub fn new(tolerance: f64) -> Self {
        Dopri5 {
            rtol: tolerance,
            atol: tolerance,
            h_max: f64::INFINITY,
            max_steps: 2_000_000,
        }
    }

    pub fn with_max_step(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    /// Integrates `dy/dt = rhs(t, y)` from `(t0, y0)` up to `t_end`.
    ///
    /// `observe` sees every accepted step and may stop the integration early by
    /// returning `Break`. Returns the time and state where integration stopped.
    pub fn integrate<const N: usize, F, O>(
        &self,
        mut rhs: F,
        t0: f64,
        y0: [f64; N],
        t_end: f64,
        mut observe: O,
    ) -> Result<(f64, [f64; N])>
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
        O: FnMut(&Segment<N>) -> ControlFlow<()>,
    {
        if !(t_end >= t0) {
            return Err(Error::IntegrationFailure {
                time_ns: t0,
                reason: format!("end time {t_end} precedes start time {t0}"),
            });
        }
        let span = t_end - t0;
        if span == 0.0 {
            return Ok((t0, y0));
        }
        let mut t = t0;
        let mut y = y0;
        let mut f = rhs(t, &y);
        let mut h = self.initial_step(&y, &f, span);
        let mut steps = 0usize;
        let mut rejected_last = false;

        loop {
            if steps >= self.max_steps {
                return Err(Error::IntegrationFailure {
                    time_ns: t,
                    reason: format!("exceeded {} steps", self.max_steps),
                });
            }
            steps += 1;

            let remaining = t_end - t;
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            let min_step = 1e-13 * t.abs().max(span);
            if h < min_step {
                return Err(Error::IntegrationFailure {
                    time_ns: t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }

            let (y_new, f_new, err) = self.try_step(&mut rhs, t, &y, &f, h);
            if !err.is_finite() {
                h *= 0.1;
                rejected_last = true;
                continue;
            }
            if err <= 1.0 {
                let t_new = if last { t_end } else { t + h };
                let seg = Segment {
                    t0: t,
                    y0: y,
                    f0: f,
                    t1: t_new,
                    y1: y_new,
                    f1: f_new,
                };
                t = t_new;
                y = y_new;
                f = f_new;
                if observe(&seg).is_break() || last {
                    return Ok((t, y));
                }
                let mut factor = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
                factor = factor.clamp(0.2, 5.0);
                if rejected_last {
                    factor = factor.min(1.0);
                }
                h = (h * factor).min(self.h_max);
                rejected_last = false;
            } else {
                let factor = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                h *= factor;
                rejected_last = true;
            }
        }
    }

    fn initial_step<const N: usize>(&self, y: &[f64; N], f: &[f64; N], span: f64) -> f64 {
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            let sc = self.atol + self.rtol * y[i].abs();
            d0 += (y[i] / sc).powi(2);
            d1 += (f[i] / sc).powi(2);
        }
        let d0 = (d0 / N as f64).sqrt();
        let d1 = (d1 / N as f64).sqrt();
        let h = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6 * span
        } else {
            0.01 * d0 / d1
        };
        h.min(span).min(self.h_max).max(1e-10 * span)
    }

    fn try_step<const N: usize, F>(
        &self,
        rhs: &mut F,
        t: f64,
        y: &[f64; N],
        k1: &[f64; N],
        h: f64,
    ) -> ([f64; N], [f64; N], f64)
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        let mut tmp = [0.0; N];
        for i in 0..N {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        let k2 = rhs(t + C2 * h, &tmp);
        for i in 0..N {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        let k3 = rhs(t + C3 * h, &tmp);
        for i in 0..N {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        let k4 = rhs(t + C4 * h, &tmp);
        for i in 0..N {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        let k5 = rhs(t + C5 * h, &tmp);
        for i in 0..N {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let k6 = rhs(t + h, &tmp);
        let mut y_new = [0.0; N];
        for i in 0..N {
            y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let k7 = rhs(t + h, &y_new);

        let mut acc = 0.0;
        for i in 0..N {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
            acc += (e / sc).powi(2);
        }
        (y_new, k7, (acc / N as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let solver = Dopri5::new(1e-10);
        let (t, y) = solver
            .integrate(|_, y: &[f64; 1]| [-2.0 * y[0]], 0.0, [1.0], 3.0, |_| {
                ControlFlow::Continue(())
            })
            .unwrap();
        assert_eq!(t, 3.0);
        assert!((y[0] - (-6.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn harmonic_oscillator_conserves_energy() {
        let solver = Dopri5::new(1e-10);
        let (_, y) = solver
            .integrate(
                |_, y: &[f64; 2]| [y[1], -y[0]],
                0.0,
                [1.0, 0.0],
                20.0 * std::f64::consts::PI,
                |_| ControlFlow::Continue(()),
            )
            .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-7);
        assert!(y[1].abs() < 1e-7);
    }

    #[test]
    fn observer_can_stop_early() {
        let solver = Dopri5::new(1e-8);
        let mut seen = 0;
        let (t, _) = solver
            .integrate(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 10.0, |_| {
                seen += 1;
                if seen == 3 {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })
            .unwrap();
        assert_eq!(seen, 3);
        assert!(t < 10.0);
    }

    #[test]
    fn hermite_interpolation_is_accurate_inside_steps() {
        let solver = Dopri5::new(1e-10).with_max_step(0.05);
        let mut worst: f64 = 0.0;
        solver
            .integrate(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], 2.0, |seg| {
                let tm = 0.5 * (seg.t0 + seg.t1);
                worst = worst.max((seg.interpolate(tm)[0] - (-tm).exp()).abs());
                ControlFlow::Continue(())
            })
            .unwrap();
        assert!(worst < 1e-8, "worst = {worst}");
    }

    #[test]
    fn blow_up_reports_underflow_time() {
        let solver = Dopri5::new(1e-8);
        let err = solver
            .integrate(|_, y: &[f64; 1]| [y[0] * y[0]], 0.0, [1.0], 2.0, |_| {
                ControlFlow::Continue(())
            })
            .unwrap_err();
        match err {
            Error::IntegrationFailure { time_ns, .. } => {
                assert!(time_ns > 0.9 && time_ns < 1.0 + 1e-6, "t = {time_ns}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reversed_interval_is_rejected() {
        let solver = Dopri5::new(1e-8);
        assert!(solver
            .integrate(|_, y: &[f64; 1]| [y[0]], 1.0, [1.0], 0.0, |_| ControlFlow::Continue(()))
            .is_err());
    }
}
