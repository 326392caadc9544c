//! Quantum-jump unravelling of the driven two-level master equation.
//!
//! The unnormalised amplitudes `(c_g, c_e)` evolve under
//! `H_eff = Δ|e⟩⟨e| + Ω/2 σx − iγ/2 |e⟩⟨e|`. An emission happens when the
//! squared norm drops below a uniform threshold, after which the state resets
//! to `|g⟩`. Pure dephasing enters as `σz` jumps at the constant rate `γ_d/2`,
//! which flip the sign of `c_e`. Once the pulse is over the remaining decay is
//! solved in closed form.

use std::ops::ControlFlow;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use super::rng::substream;
use crate::bloch::{EmitterParams, PulseParams};
use crate::error::{invalid, Result};
use crate::ode::{Dopri5, Segment};

/// Half-width of the integrated window around the pulse centre, in `sigma`.
const PULSE_HALF_WIDTH: f64 = 8.0;
const QJ_TOLERANCE: f64 = 1e-9;

type State = [f64; 4];

fn norm2(y: &State) -> f64 {
    y[0] * y[0] + y[1] * y[1] + y[2] * y[2] + y[3] * y[3]
}

const GROUND: State = [1.0, 0.0, 0.0, 0.0];

/// What ended a stretch of deterministic evolution.
enum Event {
    Emission(f64),
    Flip(f64, State),
    End(State),
}

/// Samples emission times for single pulses.
///
/// The no-event path from `|g⟩` is integrated once and reused: most
/// trajectories cross the window without a jump and only need a lookup.
#[derive(Debug, Clone)]
pub struct QuantumJumpSampler {
    emitter: EmitterParams,
    pulse: PulseParams,
    t_start: f64,
    t_end: f64,
    solver: Dopri5,
    reference: Vec<Segment<4>>,
    flip_rate: f64,
}

impl QuantumJumpSampler {
    pub fn new(emitter: &EmitterParams, pulse: &PulseParams) -> Result<Self> {
        emitter.validate()?;
        pulse.validate()?;
        if !(emitter.gamma > 0.0) {
            return Err(invalid("gamma", "quantum jumps need a positive decay rate"));
        }
        let t_start = (pulse.t0 - PULSE_HALF_WIDTH * pulse.sigma).max(0.0);
        let t_end = pulse.t0 + PULSE_HALF_WIDTH * pulse.sigma;
        let solver = Dopri5::new(QJ_TOLERANCE).with_max_step(0.25 * pulse.sigma);
        let mut sampler = QuantumJumpSampler {
            emitter: *emitter,
            pulse: *pulse,
            t_start,
            t_end,
            solver,
            reference: Vec::new(),
            flip_rate: 0.5 * emitter.gamma_d,
        };
        let mut reference = Vec::new();
        sampler.solver.integrate(
            |t, y| sampler.rhs(t, y),
            t_start,
            GROUND,
            t_end,
            |seg| {
                reference.push(*seg);
                ControlFlow::Continue(())
            },
        )?;
        sampler.reference = reference;
        Ok(sampler)
    }

    pub fn emitter(&self) -> &EmitterParams {
        &self.emitter
    }

    pub fn pulse(&self) -> &PulseParams {
        &self.pulse
    }

    fn rhs(&self, t: f64, y: &State) -> State {
        let half_omega = 0.5 * self.pulse.rabi_frequency(t);
        let delta = self.pulse.delta;
        let half_gamma = 0.5 * self.emitter.gamma;
        // y = (Re c_g, Im c_g, Re c_e, Im c_e)
        // dc_g = -i Ω/2 c_e
        // dc_e = -i Δ c_e - i Ω/2 c_g - γ/2 c_e
        [
            half_omega * y[3],
            -half_omega * y[2],
            delta * y[3] + half_omega * y[1] - half_gamma * y[2],
            -delta * y[2] - half_omega * y[0] - half_gamma * y[3],
        ]
    }

    fn next_flip<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        if self.flip_rate > 0.0 {
            t + Exp::new(self.flip_rate).expect("positive rate").sample(rng)
        } else {
            f64::INFINITY
        }
    }

    /// First event inside one accepted step, if any.
    fn scan_segment(seg: &Segment<4>, threshold: f64, t_flip: f64) -> Option<Event> {
        let crossing = if norm2(&seg.y1) <= threshold {
            // Bisection on the interpolated norm.
            let (mut lo, mut hi) = (seg.t0, seg.t1);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if norm2(&seg.interpolate(mid)) > threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(hi)
        } else {
            None
        };
        match crossing {
            Some(tc) if tc <= t_flip => Some(Event::Emission(tc)),
            _ if t_flip <= seg.t1 => Some(Event::Flip(t_flip, seg.interpolate(t_flip))),
            _ => None,
        }
    }

    /// Evolves from `(t, y)` to the first emission, flip or the window end.
    fn advance(&self, t: f64, y: State, threshold: f64, t_flip: f64) -> Result<Event> {
        let mut found = None;
        let (_, y_end) = self.solver.integrate(
            |t, y| self.rhs(t, y),
            t,
            y,
            self.t_end,
            |seg| match Self::scan_segment(seg, threshold, t_flip) {
                Some(e) => {
                    found = Some(e);
                    ControlFlow::Break(())
                }
                None => ControlFlow::Continue(()),
            },
        )?;
        Ok(found.unwrap_or(Event::End(y_end)))
    }

    /// The same as [`Self::advance`] from the start of the window, read off the
    /// stored no-event path.
    fn advance_reference(&self, threshold: f64, t_flip: f64) -> Event {
        // The norm decreases monotonically along the path, so the first step
        // whose end lies below the threshold can be found by bisection.
        let first_below = self
            .reference
            .partition_point(|seg| norm2(&seg.y1) > threshold);
        let first_flip = self.reference.partition_point(|seg| seg.t1 < t_flip);
        let i = first_below.min(first_flip);
        match self.reference.get(i) {
            Some(seg) => Self::scan_segment(seg, threshold, t_flip)
                .expect("segment selected by an event"),
            None => Event::End(self.reference.last().map_or(GROUND, |s| s.y1)),
        }
    }

    fn run<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>, cached: bool) -> Result<()> {
        out.clear();
        let mut threshold: f64 = rng.random();
        let mut t_flip = self.next_flip(self.t_start, rng);
        let mut event = if cached {
            self.advance_reference(threshold, t_flip)
        } else {
            self.advance(self.t_start, GROUND, threshold, t_flip)?
        };
        let final_state = loop {
            match event {
                Event::Emission(t) => {
                    out.push(t);
                    threshold = rng.random();
                    event = self.advance(t, GROUND, threshold, t_flip)?;
                }
                Event::Flip(t, mut y) => {
                    y[2] = -y[2];
                    y[3] = -y[3];
                    t_flip = self.next_flip(t, rng);
                    event = self.advance(t, y, threshold, t_flip)?;
                }
                Event::End(y) => break y,
            }
        };
        // Free decay: the norm relaxes from |c_g|² + |c_e|² to |c_g|².
        let pg = final_state[0] * final_state[0] + final_state[1] * final_state[1];
        let pe = final_state[2] * final_state[2] + final_state[3] * final_state[3];
        if threshold > pg && pe > 0.0 {
            let ratio = ((threshold - pg) / pe).min(1.0);
            out.push(self.t_end - ratio.ln() / self.emitter.gamma);
        }
        Ok(())
    }

    /// Emission times (ns, pulse frame) of one trajectory, written to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
        self.run(rng, out, true)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.sample_into(rng, &mut out)?;
        Ok(out)
    }

    /// Like [`Self::sample`] but integrates every trajectory from scratch.
    pub fn sample_uncached<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.run(rng, &mut out, false)?;
        Ok(out)
    }
}

/// Emission times of a single trajectory. Builds a fresh sampler; use
/// [`QuantumJumpSampler`] when drawing many pulses with the same parameters.
pub fn quantum_jump_pulse<R: Rng + ?Sized>(
    emitter: &EmitterParams,
    pulse: &PulseParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    QuantumJumpSampler::new(emitter, pulse)?.sample_uncached(rng)
}

/// Photon-number statistics from an ensemble of trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonNumberEstimate {
    pub trajectories: u64,
    /// Probability of exactly one emission.
    pub p1: f64,
    /// Probability of two or more emissions.
    pub p2: f64,
    pub p1_error: f64,
    pub p2_error: f64,
    pub mean: f64,
    pub mean_error: f64,
}

const TRAJ_BLOCK: u64 = 4096;

/// Per-block counts `(n1, n2plus, sum n, sum n²)`.
type Tally = (u64, u64, u64, u64);

/// Monte Carlo estimate of the one- and multi-photon probabilities per pulse.
/// Trajectories are drawn in parallel blocks with independent substreams of
/// `seed`, so the result does not depend on the thread count.
pub fn p2_probability(
    emitter: &EmitterParams,
    pulse: &PulseParams,
    n_traj: u64,
    seed: u64,
) -> Result<PhotonNumberEstimate> {
    if n_traj < 10_000 {
        return Err(invalid("n_traj", format!("{n_traj} < 10000 trajectories")));
    }
    let sampler = QuantumJumpSampler::new(emitter, pulse)?;
    let blocks = n_traj.div_ceil(TRAJ_BLOCK);
    let tallies: Vec<Tally> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<Tally> {
            let mut rng = substream(seed, super::rng::Domain::Trajectories, b);
            let count = TRAJ_BLOCK.min(n_traj - b * TRAJ_BLOCK);
            let mut buf = Vec::new();
            let mut t: Tally = (0, 0, 0, 0);
            for _ in 0..count {
                sampler.sample_into(&mut rng, &mut buf)?;
                let n = buf.len() as u64;
                match n {
                    0 => {}
                    1 => t.0 += 1,
                    _ => t.1 += 1,
                }
                t.2 += n;
                t.3 += n * n;
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let (n1, n2, s1, s2) = tallies
        .iter()
        .fold((0, 0, 0, 0), |a, t| (a.0 + t.0, a.1 + t.1, a.2 + t.2, a.3 + t.3));
    let n = n_traj as f64;
    let p1 = n1 as f64 / n;
    let p2 = n2 as f64 / n;
    let mean = s1 as f64 / n;
    let var = (s2 as f64 / n - mean * mean).max(0.0);
    Ok(PhotonNumberEstimate {
        trajectories: n_traj,
        p1,
        p2,
        p1_error: (p1 * (1.0 - p1) / n).sqrt(),
        p2_error: (p2 * (1.0 - p2) / n).sqrt(),
        mean,
        mean_error: (var / (n - 1.0)).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn paper() -> (EmitterParams, PulseParams) {
        (
            EmitterParams::from_lifetime_ns(0.640, 0.2).unwrap(),
            PulseParams::from_intensity_fwhm(PI, 0.026, 0.2, 0.0).unwrap(),
        )
    }

    #[test]
    fn zero_area_never_emits() {
        let (e, p) = paper();
        let s = QuantumJumpSampler::new(&e, &p.with_theta(0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            assert!(s.sample(&mut rng).unwrap().is_empty());
        }
    }

    #[test]
    fn cached_and_uncached_paths_agree() {
        let (e, p) = paper();
        let e = EmitterParams::new(e.gamma, 3.0).unwrap();
        let s = QuantumJumpSampler::new(&e, &p).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3000 {
            let x = s.sample(&mut a).unwrap();
            let y = s.sample_uncached(&mut b).unwrap();
            assert_eq!(x.len(), y.len());
            for (u, v) in x.iter().zip(&y) {
                assert!((u - v).abs() < 1e-9, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn emission_times_follow_the_pulse() {
        let (e, p) = paper();
        let s = QuantumJumpSampler::new(&e, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sum = 0.0;
        let mut n = 0;
        for _ in 0..20_000 {
            for t in s.sample(&mut rng).unwrap() {
                assert!(t >= 0.0);
                sum += t;
                n += 1;
            }
        }
        // Mean emission time: pulse centre plus about one lifetime.
        let mean = sum / n as f64;
        assert!((mean - (0.2 + 0.64)).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn zero_decay_rate_is_rejected() {
        let (_, p) = paper();
        let e = EmitterParams::new(0.0, 0.0).unwrap();
        assert!(QuantumJumpSampler::new(&e, &p).is_err());
    }

    #[test]
    fn too_few_trajectories() {
        let (e, p) = paper();
        assert!(p2_probability(&e, &p, 100, 1).is_err());
    }
}
