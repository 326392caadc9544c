//! Synthetic detector streams for Hanbury Brown–Twiss and Hong–Ou–Mandel
//! measurements.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qjump::QuantumJumpSampler;
use super::rng::{substream, Domain};
use super::stream::{apply_deadtime, Click, ClickStream};
use crate::bloch::{pulse_emission_probability, EmitterParams, PulseParams, DEFAULT_TOLERANCE};
use crate::error::{check_range, invalid, Result};
use crate::photonstats::HomSetup;

/// Pulses per parallel work unit.
pub const BLOCK_PULSES: u64 = 1 << 16;

/// How the emitter response to each pulse is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmissionMode {
    /// At most one photon per pulse, detected with probability `p_click`.
    Fast,
    /// Quantum-jump trajectories; every emitted photon is detected with
    /// probability `p_click`, so re-excitation can give several photons.
    QuantumJump {
        emitter: EmitterParams,
        pulse: PulseParams,
    },
}

/// Source, detection and timing parameters for stream synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    /// Detection probability of a bright-state photon.
    pub p_click: f64,
    /// Residual laser photons per detected single photon.
    pub xi: f64,
    /// Telegraph relaxation rate (µs⁻¹).
    pub blink_rate: f64,
    /// Stationary dark-state probability.
    pub blink_fraction: f64,
    /// Laser repetition period (ns).
    pub rep_period: f64,
    /// Intrinsic indistinguishability of consecutive photons.
    pub visibility: f64,
    /// Detector deadtime (ns).
    pub deadtime: f64,
    /// Radiative rate used for emission delays in fast mode (ns⁻¹).
    pub gamma: f64,
    pub emission: EmissionMode,
}

impl Default for SourceModel {
    fn default() -> Self {
        SourceModel {
            p_click: 0.05,
            xi: 0.004,
            blink_rate: 0.25,
            blink_fraction: 0.0,
            rep_period: 1e3 / 72.5,
            visibility: 0.96,
            deadtime: 100.0,
            gamma: 1.0 / 0.640,
            emission: EmissionMode::Fast,
        }
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        check_range("p_click", self.p_click, 0.0, 1.0)?;
        check_range("xi", self.xi, 0.0, 1.0)?;
        check_range("blink_rate", self.blink_rate, 0.0, f64::MAX)?;
        check_range("blink_fraction", self.blink_fraction, 0.0, 1.0)?;
        if self.blink_fraction >= 1.0 {
            return Err(invalid("blink_fraction", "emitter must be bright sometimes"));
        }
        if self.blink_fraction > 0.0 && self.blink_rate == 0.0 {
            return Err(invalid("blink_rate", "must be positive when blinking"));
        }
        if !(self.rep_period > 0.0) || !self.rep_period.is_finite() {
            return Err(invalid("rep_period", "must be positive"));
        }
        check_range("visibility", self.visibility, 0.0, 1.0)?;
        check_range("deadtime", self.deadtime, 0.0, f64::MAX)?;
        check_range("gamma", self.gamma, 0.0, f64::MAX)?;
        if let EmissionMode::QuantumJump { emitter, pulse } = &self.emission {
            emitter.validate()?;
            pulse.validate()?;
        }
        Ok(())
    }

    fn rep_ps(&self) -> f64 {
        self.rep_period * 1e3
    }
}

/// Interferometer polarisation configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarization {
    Co,
    Cross,
}

/// Per-pulse photon generator shared by all blocks.
struct Source {
    model: SourceModel,
    sampler: Option<QuantumJumpSampler>,
    leak_probability: f64,
    /// Pulse centre in the per-pulse time frame (ns).
    centre: f64,
    delay: Option<Exp<f64>>,
    dark: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
struct Photon {
    /// Time since the start of the pulse frame (ns).
    offset: f64,
    /// Whether the photon can interfere with emitter photons of other pulses.
    /// Laser photons cannot, and neither can the photons a re-excited
    /// trajectory emits during the pulse, whose wavepacket differs.
    interferes: bool,
}

impl Source {
    fn new(model: &SourceModel, n_pulses: u64, seed: u64) -> Result<Self> {
        model.validate()?;
        let (sampler, mean_n, centre) = match &model.emission {
            EmissionMode::Fast => (None, 1.0, 0.0),
            EmissionMode::QuantumJump { emitter, pulse } => (
                Some(QuantumJumpSampler::new(emitter, pulse)?),
                pulse_emission_probability(emitter, pulse, DEFAULT_TOLERANCE)?,
                pulse.t0,
            ),
        };
        let mean_signal = model.p_click * mean_n * (1.0 - model.blink_fraction);
        let leak_probability = model.xi * mean_signal;
        if leak_probability > 1.0 {
            return Err(invalid("xi", "leak probability per pulse exceeds one"));
        }
        let delay = (model.gamma > 0.0).then(|| Exp::new(model.gamma).expect("positive rate"));
        let dark = blink_schedule(model, n_pulses as f64 * model.rep_period, seed);
        Ok(Source {
            model: *model,
            sampler,
            leak_probability,
            centre,
            delay,
            dark,
        })
    }

    /// Photons of one pulse, appended to `out`.
    fn pulse<R: Rng>(&self, rng: &mut R, bright: bool, out: &mut Vec<Photon>, buf: &mut Vec<f64>) -> Result<()> {
        if bright {
            match &self.sampler {
                None => {
                    if rng.random::<f64>() < self.model.p_click {
                        let d = self.delay.map_or(0.0, |e| e.sample(rng));
                        out.push(Photon {
                            offset: self.centre + d,
                            interferes: true,
                        });
                    }
                }
                Some(s) => {
                    s.sample_into(rng, buf)?;
                    let last = buf.len().saturating_sub(1);
                    for (k, &t) in buf.iter().enumerate() {
                        if rng.random::<f64>() < self.model.p_click {
                            out.push(Photon {
                                offset: t,
                                interferes: k == last,
                            });
                        }
                    }
                }
            }
        }
        if self.leak_probability > 0.0 && rng.random::<f64>() < self.leak_probability {
            out.push(Photon {
                offset: self.centre,
                interferes: false,
            });
        }
        Ok(())
    }

    /// Bright flags for pulses `first..first + count`.
    fn bright_flags(&self, first: u64, count: u64) -> Vec<bool> {
        let rep = self.model.rep_period;
        let mut idx = self.dark.partition_point(|d| d.1 <= first as f64 * rep);
        (first..first + count)
            .map(|i| {
                let t = i as f64 * rep;
                while idx < self.dark.len() && self.dark[idx].1 <= t {
                    idx += 1;
                }
                !(idx < self.dark.len() && self.dark[idx].0 <= t)
            })
            .collect()
    }
}

/// Dark intervals `[start, end)` in ns of a two-state telegraph process with
/// relaxation rate `blink_rate` and stationary dark probability
/// `blink_fraction`, drawn sequentially from its own substream.
fn blink_schedule(model: &SourceModel, horizon_ns: f64, seed: u64) -> Vec<(f64, f64)> {
    let f = model.blink_fraction;
    if f == 0.0 {
        return Vec::new();
    }
    let lambda = model.blink_rate * 1e-3;
    let to_dark = Exp::new(f * lambda).expect("positive rate");
    let to_bright = Exp::new((1.0 - f) * lambda).expect("positive rate");
    let mut rng = substream(seed, Domain::Blinking, 0);
    let mut dark = rng.random::<f64>() < f;
    let mut t = 0.0;
    let mut out = Vec::new();
    while t <= horizon_ns {
        if dark {
            let end = t + to_bright.sample(&mut rng);
            out.push((t, end));
            t = end;
        } else {
            t += to_dark.sample(&mut rng);
        }
        dark = !dark;
    }
    out
}

fn to_ps(t_ns: f64) -> u64 {
    (t_ns * 1e3).round().max(0.0) as u64
}

fn block_ranges(n: u64) -> Vec<(u64, u64, u64)> {
    (0..n.div_ceil(BLOCK_PULSES))
        .map(|b| {
            let first = b * BLOCK_PULSES;
            (b, first, BLOCK_PULSES.min(n - first))
        })
        .collect()
}

/// Sorts, trims to the duration and applies deadtime; splits by channel.
fn finish(mut events: Vec<Click>, duration_ps: u64, deadtime_ns: f64) -> (ClickStream, ClickStream) {
    events.retain(|e| e.timestamp_ps < duration_ps);
    events.sort();
    let events = apply_deadtime(&events, to_ps(deadtime_ns));
    let (a, b): (Vec<Click>, Vec<Click>) = events.into_iter().partition(|e| e.channel == 0);
    (
        ClickStream {
            events: a,
            duration_ps,
        },
        ClickStream {
            events: b,
            duration_ps,
        },
    )
}

/// Two-detector HBT streams (channels 0 and 1) for `n_pulses` pulses.
///
/// Each photon is routed 50:50. Output is a pure function of `seed` and the
/// parameters.
pub fn synth_hbt(model: &SourceModel, n_pulses: u64, seed: u64) -> Result<(ClickStream, ClickStream)> {
    if n_pulses == 0 {
        return Err(invalid("n_pulses", "need at least one pulse"));
    }
    let source = Source::new(model, n_pulses, seed)?;
    let rep_ps = model.rep_ps();
    let blocks: Vec<Vec<Click>> = block_ranges(n_pulses)
        .into_par_iter()
        .map(|(b, first, count)| -> Result<Vec<Click>> {
            let mut rng = substream(seed, Domain::Pulses, b);
            let bright = source.bright_flags(first, count);
            let mut photons = Vec::new();
            let mut buf = Vec::new();
            let mut clicks = Vec::new();
            for (k, &on) in bright.iter().enumerate() {
                let i = first + k as u64;
                photons.clear();
                source.pulse(&mut rng, on, &mut photons, &mut buf)?;
                for p in &photons {
                    let channel = u16::from(rng.random::<bool>());
                    clicks.push(Click {
                        timestamp_ps: (i as f64 * rep_ps + p.offset * 1e3).round().max(0.0) as u64,
                        channel,
                    });
                }
            }
            Ok(clicks)
        })
        .collect::<Result<_>>()?;
    let duration_ps = ((n_pulses + 1) as f64 * rep_ps).round() as u64;
    Ok(finish(blocks.concat(), duration_ps, model.deadtime))
}

#[derive(Debug, Clone, Copy)]
struct Arrival {
    slot: u64,
    /// BS2 input: false for the short arm, true for the delayed arm.
    long: bool,
    photon: Photon,
}

/// Two-detector streams behind an unbalanced Mach–Zehnder interferometer whose
/// long arm delays by one repetition period.
///
/// Each photon picks the long arm with probability `R` at the first splitter.
/// When exactly one photon reaches each input of the second splitter in the
/// same slot, the pair exits through different ports with probability
/// `R² + T² − 2RT·V'`, where `V' = (1 − ε)² V` for co-polarised interfering
/// photons and 0 otherwise; all other photons are split independently.
/// Laser photons and the in-pulse photon of a re-excited trajectory do not
/// interfere, which makes the multi-photon share of the central peak about
/// twice g²(0), as in [`crate::photonstats::hom_expected_area`].
pub fn synth_hom(
    model: &SourceModel,
    setup: &HomSetup,
    polarization: Polarization,
    n_pulses: u64,
    seed: u64,
) -> Result<(ClickStream, ClickStream)> {
    setup.validate()?;
    if n_pulses == 0 {
        return Err(invalid("n_pulses", "need at least one pulse"));
    }
    let source = Source::new(model, n_pulses, seed)?;
    let rep_ps = model.rep_ps();
    let (r, t) = (setup.r, setup.t);

    // First splitter: photons with their arm, grouped by source block.
    let arrivals: Vec<Vec<Arrival>> = block_ranges(n_pulses)
        .into_par_iter()
        .map(|(b, first, count)| -> Result<Vec<Arrival>> {
            let mut rng = substream(seed, Domain::Pulses, b);
            let bright = source.bright_flags(first, count);
            let mut photons = Vec::new();
            let mut buf = Vec::new();
            let mut out = Vec::new();
            for (k, &on) in bright.iter().enumerate() {
                let i = first + k as u64;
                photons.clear();
                source.pulse(&mut rng, on, &mut photons, &mut buf)?;
                for &photon in &photons {
                    let long = rng.random::<f64>() < r;
                    out.push(Arrival {
                        slot: i + u64::from(long),
                        long,
                        photon,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let v_pair = match polarization {
        Polarization::Co => (1.0 - setup.epsilon).powi(2) * model.visibility,
        Polarization::Cross => 0.0,
    };
    let n_slots = n_pulses + 1;
    let slot_blocks = block_ranges(n_slots);
    let clicks: Vec<Vec<Click>> = slot_blocks
        .into_par_iter()
        .map(|(b, first, count)| {
            let end = first + count;
            let mut here: Vec<Arrival> = Vec::new();
            for src in [b.checked_sub(1), Some(b)].into_iter().flatten() {
                if let Some(list) = arrivals.get(src as usize) {
                    here.extend(list.iter().filter(|a| a.slot >= first && a.slot < end));
                }
            }
            // Stable: keeps source order within a slot.
            here.sort_by_key(|a| a.slot);
            let mut rng = substream(seed, Domain::Interferometer, b);
            let mut out = Vec::new();
            let mut start = 0;
            while start < here.len() {
                let slot = here[start].slot;
                let mut stop = start;
                while stop < here.len() && here[stop].slot == slot {
                    stop += 1;
                }
                let group = &here[start..stop];
                let base = slot as f64 * rep_ps;
                let stamp = |a: &Arrival| (base + a.photon.offset * 1e3).round().max(0.0) as u64;
                let shorts: Vec<&Arrival> = group.iter().filter(|a| !a.long).collect();
                let longs: Vec<&Arrival> = group.iter().filter(|a| a.long).collect();
                if shorts.len() == 1
                    && longs.len() == 1
                    && shorts[0].photon.interferes
                    && longs[0].photon.interferes
                {
                    let (s, l) = (shorts[0], longs[0]);
                    let same = r * t * (1.0 + v_pair);
                    let u: f64 = rng.random();
                    // Port 0 receives the short arm when transmitted.
                    let (cs, cl) = if u < same {
                        (0, 0)
                    } else if u < 2.0 * same {
                        (1, 1)
                    } else {
                        let split = (1.0 - 2.0 * same) * t * t / (t * t + r * r);
                        if u < 2.0 * same + split {
                            (0, 1)
                        } else {
                            (1, 0)
                        }
                    };
                    out.push(Click {
                        timestamp_ps: stamp(s),
                        channel: cs,
                    });
                    out.push(Click {
                        timestamp_ps: stamp(l),
                        channel: cl,
                    });
                } else {
                    for a in group {
                        let transmit = rng.random::<f64>() < t;
                        // Short arm: transmitted → port 0; long arm: transmitted → port 1.
                        let channel = u16::from(transmit == a.long);
                        out.push(Click {
                            timestamp_ps: stamp(a),
                            channel,
                        });
                    }
                }
                start = stop;
            }
            out
        })
        .collect();
    let duration_ps = ((n_pulses + 2) as f64 * rep_ps).round() as u64;
    Ok(finish(clicks.concat(), duration_ps, model.deadtime))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SourceModel {
        SourceModel {
            xi: 0.0,
            deadtime: 0.0,
            ..SourceModel::default()
        }
    }

    #[test]
    fn streams_are_sorted_and_channel_tagged() {
        let (a, b) = synth_hbt(&SourceModel::default(), 200_000, 3).unwrap();
        a.validate().unwrap();
        b.validate().unwrap();
        assert!(a.events.iter().all(|e| e.channel == 0));
        assert!(b.events.iter().all(|e| e.channel == 1));
        let expected = 200_000.0 * 0.05 / 2.0;
        assert!((a.len() as f64 - expected).abs() < 5.0 * expected.sqrt() + 0.2 * expected);
    }

    #[test]
    fn deadtime_is_respected() {
        let m = SourceModel {
            p_click: 0.5,
            ..SourceModel::default()
        };
        let (a, _) = synth_hbt(&m, 100_000, 1).unwrap();
        for w in a.events.windows(2) {
            assert!(w[1].timestamp_ps - w[0].timestamp_ps >= 100_000);
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let x = synth_hbt(&SourceModel::default(), 150_000, 9).unwrap();
        let y = synth_hbt(&SourceModel::default(), 150_000, 9).unwrap();
        let z = synth_hbt(&SourceModel::default(), 150_000, 10).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn blinking_schedule_has_the_right_dark_fraction() {
        let m = SourceModel {
            blink_fraction: 0.2,
            blink_rate: 5.0,
            ..SourceModel::default()
        };
        let horizon = 1e8;
        let dark = blink_schedule(&m, horizon, 4);
        let total: f64 = dark.iter().map(|d| d.1.min(horizon) - d.0).sum();
        assert!((total / horizon - 0.2).abs() < 0.01, "{}", total / horizon);
    }

    #[test]
    fn bright_flags_match_schedule() {
        let m = SourceModel {
            blink_fraction: 0.3,
            blink_rate: 50.0,
            ..SourceModel::default()
        };
        let s = Source::new(&m, 100_000, 2).unwrap();
        let flags = s.bright_flags(1000, 5000);
        for (k, f) in flags.iter().enumerate() {
            let t = (1000 + k as u64) as f64 * m.rep_period;
            let dark = s.dark.iter().any(|d| d.0 <= t && t < d.1);
            assert_eq!(*f, !dark);
        }
    }

    #[test]
    fn perfect_interference_empties_the_centre() {
        let m = SourceModel {
            visibility: 1.0,
            p_click: 0.2,
            ..quiet()
        };
        let (a, b) = synth_hom(&m, &HomSetup::ideal(), Polarization::Co, 200_000, 5).unwrap();
        let rep = (m.rep_period * 1e3) as i64;
        let tb: Vec<i64> = b.events.iter().map(|e| e.timestamp_ps as i64).collect();
        let mut central = 0;
        for e in &a.events {
            let t = e.timestamp_ps as i64;
            let lo = tb.partition_point(|&x| x < t - rep / 2);
            let hi = tb.partition_point(|&x| x < t + rep / 2);
            central += hi - lo;
        }
        assert_eq!(central, 0);
    }

    #[test]
    fn invalid_model_is_rejected() {
        let m = SourceModel {
            p_click: 1.5,
            ..SourceModel::default()
        };
        assert!(synth_hbt(&m, 10, 1).is_err());
        assert!(synth_hbt(&SourceModel::default(), 0, 1).is_err());
    }
}
