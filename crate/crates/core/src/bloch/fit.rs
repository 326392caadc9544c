use std::f64::consts::PI;

use super::{pulse_emission_probability_fast, EmitterParams, PulseParams};
use crate::error::{invalid, Error, Result};

const SPAN_SLACK: f64 = 1.1;

/// Result of [`fit_rabi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiFit {
    /// Power giving a π pulse, in the units of the input data.
    pub p_pi: f64,
    pub gamma_d: f64,
    pub scale: f64,
    pub residual_norm: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct RabiFitOptions {
    /// Nelder–Mead iterations allowed per start.
    pub max_iterations: usize,
    /// Integrator tolerance used for each model evaluation.
    pub tolerance: f64,
    /// Upper bound of the dephasing search (ns⁻¹).
    pub gamma_d_max: f64,
}

impl Default for RabiFitOptions {
    fn default() -> Self {
        RabiFitOptions {
            max_iterations: 600,
            tolerance: 1e-10,
            gamma_d_max: 20.0,
        }
    }
}

struct Model<'a> {
    emitter: EmitterParams,
    template: PulseParams,
    data: &'a [(f64, f64)],
    tolerance: f64,
    gamma_d_max: f64,
    evaluations: usize,
}

impl Model<'_> {
    fn bounded(&self, x: [f64; 2]) -> (f64, f64) {
        // Reflect gamma_d into [0, gamma_d_max].
        let period = 2.0 * self.gamma_d_max;
        let mut g = x[1].abs() % period;
        if g > self.gamma_d_max {
            g = period - g;
        }
        (x[0].exp(), g)
    }

    /// Returns (sum of squared residuals, best scale).
    fn evaluate(&mut self, x: [f64; 2]) -> Result<(f64, f64)> {
        self.evaluations += 1;
        let (p_pi, gamma_d) = self.bounded(x);
        let emitter = EmitterParams {
            gamma: self.emitter.gamma,
            gamma_d,
        };
        let mut model = Vec::with_capacity(self.data.len());
        for &(power, _) in self.data {
            let theta = PI * (power / p_pi).sqrt();
            model.push(pulse_emission_probability_fast(
                &emitter,
                &self.template.with_theta(theta),
                self.tolerance,
            )?);
        }
        let smm: f64 = model.iter().map(|m| m * m).sum();
        let smy: f64 = model.iter().zip(self.data).map(|(m, d)| m * d.1).sum();
        let scale = if smm > 0.0 { smy / smm } else { 0.0 };
        let ss = model
            .iter()
            .zip(self.data)
            .map(|(m, d)| (d.1 - scale * m).powi(2))
            .sum();
        Ok((ss, scale))
    }
}

/// Least-squares fit of `scale · p_e(Θ(P))` to Rabi data, with
/// `Θ = π √(P / P_π)`. `P_π`, the pure dephasing rate and the scale are free;
/// the radiative rate and pulse shape come from `emitter` and `template`.
///
/// The objective oscillates in `P_π`, so Nelder–Mead is restarted from several
/// `P_π` guesses derived from the data.
pub fn fit_rabi(
    emitter: &EmitterParams,
    template: &PulseParams,
    data: &[(f64, f64)],
    options: &RabiFitOptions,
) -> Result<RabiFit> {
    emitter.validate()?;
    template.validate()?;
    if data.len() < 8 {
        return Err(invalid("data", format!("need at least 8 points, got {}", data.len())));
    }
    if data
        .iter()
        .any(|&(p, y)| !p.is_finite() || !y.is_finite() || p < 0.0)
    {
        return Err(invalid("data", "powers must be non-negative and values finite"));
    }
    let syy: f64 = data.iter().map(|d| d.1 * d.1).sum();
    if syy == 0.0 {
        return Err(Error::DegenerateFit("all intensities are zero".into()));
    }
    let p_max = data.iter().map(|d| d.0).fold(0.0, f64::max);
    if p_max <= 0.0 {
        return Err(Error::DegenerateFit("all powers are zero".into()));
    }

    let mut model = Model {
        emitter: *emitter,
        template: *template,
        data,
        tolerance: options.tolerance,
        gamma_d_max: options.gamma_d_max,
        evaluations: 0,
    };

    // Start guesses: the power of the brightest point and a spread around it.
    let brightest = data
        .iter()
        .copied()
        .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
        .0
        .max(p_max * 1e-3);
    let guesses = [1.0, 0.5, 0.75, 1.5, 2.5].map(|f| brightest * f);
    let g0 = emitter.gamma_d.clamp(0.01, options.gamma_d_max);

    let mut best: Option<(f64, [f64; 2], bool)> = None;
    for p_guess in guesses {
        let start = [p_guess.ln(), g0];
        let step = [0.15, 0.5 * g0.max(0.05)];
        let (f, x, converged) =
            nelder_mead(&mut model, start, step, options.max_iterations, syy)?;
        if best.map_or(true, |b| f < b.0) {
            best = Some((f, x, converged));
        }
    }
    let (f, x, converged) = best.expect("at least one start");
    let (p_pi, gamma_d) = model.bounded(x);
    if !converged {
        return Err(Error::FitNotConverged {
            iterations: options.max_iterations,
            p_pi,
            gamma_d,
        });
    }
    let (_, scale) = model.evaluate(x)?;
    // The span requirement is checked against the fitted P_pi, with slack for noise.
    let p_min = data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    if p_min > 0.1 * p_pi * SPAN_SLACK || p_max < 2.0 * p_pi / SPAN_SLACK {
        return Err(invalid(
            "data",
            format!("powers [{p_min}, {p_max}] do not span [0.1, 2] x P_pi (P_pi = {p_pi})"),
        ));
    }
    Ok(RabiFit {
        p_pi,
        gamma_d,
        scale,
        residual_norm: f.sqrt(),
        evaluations: model.evaluations,
    })
}

fn nelder_mead(
    model: &mut Model<'_>,
    start: [f64; 2],
    step: [f64; 2],
    max_iterations: usize,
    scale_ref: f64,
) -> Result<(f64, [f64; 2], bool)> {
    let mut simplex = [start, [start[0] + step[0], start[1]], [start[0], start[1] + step[1]]];
    let mut values = [0.0; 3];
    for (v, x) in values.iter_mut().zip(&simplex) {
        *v = model.evaluate(*x)?.0;
    }
    let f_tol = 1e-15 * scale_ref;
    for _ in 0..max_iterations {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);

        let x_spread = (0..2)
            .map(|k| {
                (simplex[1][k] - simplex[0][k])
                    .abs()
                    .max((simplex[2][k] - simplex[0][k]).abs())
            })
            .fold(0.0, f64::max);
        if values[2] - values[0] <= f_tol && x_spread < 1e-9 {
            return Ok((values[0], simplex[0], true));
        }
        if x_spread < 1e-12 {
            return Ok((values[0], simplex[0], true));
        }

        let centroid = [
            0.5 * (simplex[0][0] + simplex[1][0]),
            0.5 * (simplex[0][1] + simplex[1][1]),
        ];
        let along = |t: f64| {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };
        let xr = along(-1.0);
        let fr = model.evaluate(xr)?.0;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = model.evaluate(xe)?.0;
            if fe < fr {
                simplex[2] = xe;
                values[2] = fe;
            } else {
                simplex[2] = xr;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = xr;
            values[2] = fr;
        } else {
            let (xc, fc) = if fr < values[2] {
                let xc = along(-0.5);
                (xc, model.evaluate(xc)?.0)
            } else {
                let xc = along(0.5);
                (xc, model.evaluate(xc)?.0)
            };
            if fc < values[2].min(fr) {
                simplex[2] = xc;
                values[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = [
                        simplex[0][0] + 0.5 * (simplex[k][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[k][1] - simplex[0][1]),
                    ];
                    values[k] = model.evaluate(simplex[k])?.0;
                }
            }
        }
    }
    let i = (0..3).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Ok((values[i], simplex[i], false))
}
