//! Dual-mode waveguide transport: β-factors versus emitter offset, pump
//! suppression and the single-photon impurity ξ.
//!
//! Offsets and widths are in nm.

use std::f64::consts::PI;
use std::fmt;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{pulse_emission_probability_fast, EmitterParams, PulseParams};
use crate::error::{check_range, invalid, Error, Result};

/// Transverse amplitude profile of a waveguide mode, normalised to `max|u| = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModeProfile {
    /// `cos(πx/w)` inside `|x| < w/2`.
    AnalyticEven { effective_width: f64 },
    /// `sin(2πx/w)` inside `|x| < w/2`.
    AnalyticOdd { effective_width: f64 },
    /// Linear interpolation between samples, zero outside them.
    Tabulated { samples: Vec<(f64, f64)> },
}

impl ModeProfile {
    pub fn even(effective_width: f64) -> Result<Self> {
        check_width(effective_width)?;
        Ok(ModeProfile::AnalyticEven { effective_width })
    }

    pub fn odd(effective_width: f64) -> Result<Self> {
        check_width(effective_width)?;
        Ok(ModeProfile::AnalyticOdd { effective_width })
    }

    /// Builds a tabulated profile; samples are sorted and rescaled to unit peak.
    pub fn tabulated(mut samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(invalid("samples", "need at least two profile samples"));
        }
        if samples.iter().any(|s| !s.0.is_finite() || !s.1.is_finite()) {
            return Err(invalid("samples", "non-finite profile sample"));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        if samples.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("samples", "duplicate offsets"));
        }
        let peak = samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max);
        if peak == 0.0 {
            return Err(invalid("samples", "profile is identically zero"));
        }
        for s in &mut samples {
            s.1 /= peak;
        }
        Ok(ModeProfile::Tabulated { samples })
    }

    /// Reads `offset_nm,amplitude` CSV with a header line.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let rows = read_numeric_csv(reader, &["offset_nm", "amplitude"])?;
        Self::tabulated(rows.into_iter().map(|r| (r[0], r[1])).collect())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModeProfile::AnalyticEven { effective_width }
            | ModeProfile::AnalyticOdd { effective_width } => check_width(*effective_width),
            ModeProfile::Tabulated { samples } => {
                Self::tabulated(samples.clone()).map(|_| ())
            }
        }
    }

    pub fn amplitude(&self, x: f64) -> f64 {
        match self {
            ModeProfile::AnalyticEven { effective_width: w } => {
                if x.abs() >= 0.5 * w {
                    0.0
                } else {
                    (PI * x / w).cos()
                }
            }
            ModeProfile::AnalyticOdd { effective_width: w } => {
                if x.abs() >= 0.5 * w {
                    0.0
                } else {
                    (2.0 * PI * x / w).sin()
                }
            }
            ModeProfile::Tabulated { samples } => interpolate(samples, x).unwrap_or(0.0),
        }
    }

    /// Largest offset at which the profile can be non-zero.
    fn support(&self) -> f64 {
        match self {
            ModeProfile::AnalyticEven { effective_width: w }
            | ModeProfile::AnalyticOdd { effective_width: w } => 0.5 * w,
            ModeProfile::Tabulated { samples } => samples
                .iter()
                .map(|s| s.0.abs())
                .fold(0.0, f64::max),
        }
    }
}

fn check_width(w: f64) -> Result<()> {
    if !(w > 0.0) || !w.is_finite() {
        return Err(invalid("effective_width", format!("{w} must be positive")));
    }
    Ok(())
}

fn interpolate(samples: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = samples.first()?;
    let last = samples.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    let i = samples.partition_point(|s| s.0 <= x);
    if i == samples.len() {
        return Some(last.1);
    }
    let (x0, y0) = samples[i - 1];
    let (x1, y1) = samples[i];
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

fn read_numeric_csv<R: BufRead>(reader: R, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))??;
    let cols: Vec<&str> = first.split(',').map(str::trim).collect();
    if cols != header {
        return Err(Error::Format(format!(
            "expected header `{}`, found `{first}`",
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 2)))?;
        if row.len() != header.len() {
            return Err(Error::Format(format!(
                "line {}: expected {} fields, found {}",
                n + 2,
                header.len(),
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Per-wavelength photonic-crystal transmittances `(T_E, T_C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSpectrum {
    /// `(lambda_nm, T_E, T_C)`, sorted by wavelength.
    pub samples: Vec<(f64, f64, f64)>,
}

impl TransmissionSpectrum {
    pub fn new(mut samples: Vec<(f64, f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyData("transmission spectrum".into()));
        }
        for s in &samples {
            check_range("T_E", s.1, 0.0, 1.0)?;
            check_range("T_C", s.2, 0.0, 1.0)?;
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(TransmissionSpectrum { samples })
    }

    /// Reads `lambda_nm,T_E,T_C` CSV with a header line.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let rows = read_numeric_csv(reader, &["lambda_nm", "T_E", "T_C"])?;
        Self::new(rows.into_iter().map(|r| (r[0], r[1], r[2])).collect())
    }

    /// Linear interpolation; wavelengths outside the table are an error.
    pub fn at(&self, lambda_nm: f64) -> Result<(f64, f64)> {
        let e: Vec<(f64, f64)> = self.samples.iter().map(|s| (s.0, s.1)).collect();
        let c: Vec<(f64, f64)> = self.samples.iter().map(|s| (s.0, s.2)).collect();
        match (interpolate(&e, lambda_nm), interpolate(&c, lambda_nm)) {
            (Some(te), Some(tc)) => Ok((te, tc)),
            _ => Err(Error::OutOfRange(format!(
                "wavelength {lambda_nm} nm outside tabulated spectrum"
            ))),
        }
    }
}

/// Transmittances and coupling peaks of the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Photonic-crystal transmittance of the excitation mode.
    pub t_e: f64,
    /// Photonic-crystal transmittance of the collection mode.
    pub t_c: f64,
    /// Taper-filter transmittance of the excitation mode.
    pub t_ef: f64,
    /// Taper-filter transmittance of the collection mode.
    pub t_cf: f64,
    pub b_c: f64,
    pub b_e: f64,
    /// Physical waveguide width.
    pub width: f64,
}

/// Calibrated peak coupling of the collection mode.
pub const DEFAULT_B_C: f64 = 1.0;
/// Calibrated peak coupling of the excitation mode.
pub const DEFAULT_B_E: f64 = 0.045_955_882_352_941_17;
/// Calibrated hard-wall width shared by both analytic profiles.
pub const DEFAULT_EFFECTIVE_WIDTH: f64 = 135.516_396_185_462_95;

impl Default for DeviceParams {
    /// Calibrated defaults, with `T_p = 2e-5`.
    fn default() -> Self {
        DeviceParams {
            t_e: 1.0,
            t_c: 3.9e-5,
            t_ef: 1e-6,
            t_cf: 1.0,
            b_c: DEFAULT_B_C,
            b_e: DEFAULT_B_E,
            width: 450.0,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        check_range("T_E", self.t_e, 0.0, 1.0)?;
        check_range("T_C", self.t_c, 0.0, 1.0)?;
        check_range("T_Ef", self.t_ef, 0.0, 1.0)?;
        check_range("T_Cf", self.t_cf, 0.0, 1.0)?;
        check_range("B_C", self.b_c, 0.0, 1.0)?;
        check_range("B_E", self.b_e, 0.0, 1.0)?;
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(invalid("width", "must be positive"));
        }
        Ok(())
    }

    /// Replaces `T_E`, `T_C` by the spectrum values at `lambda_nm`.
    pub fn at_wavelength(&self, spectrum: &TransmissionSpectrum, lambda_nm: f64) -> Result<Self> {
        let (t_e, t_c) = spectrum.at(lambda_nm)?;
        Ok(DeviceParams { t_e, t_c, ..*self })
    }
}

/// Analytic profiles with the calibrated effective width: `(E, C)`.
pub fn default_profiles() -> (ModeProfile, ModeProfile) {
    (
        ModeProfile::AnalyticOdd {
            effective_width: DEFAULT_EFFECTIVE_WIDTH,
        },
        ModeProfile::AnalyticEven {
            effective_width: DEFAULT_EFFECTIVE_WIDTH,
        },
    )
}

/// `(β_E, β_C)` at a transverse offset, `β_i = B_i u_i(x)²`.
pub fn beta_at(
    profile_e: &ModeProfile,
    profile_c: &ModeProfile,
    params: &DeviceParams,
    offset: f64,
) -> Result<(f64, f64)> {
    if !offset.is_finite() || offset.abs() >= 0.5 * params.width {
        return Err(Error::OutOfRange(format!(
            "offset {offset} nm outside waveguide of width {} nm",
            params.width
        )));
    }
    let ue = profile_e.amplitude(offset);
    let uc = profile_c.amplitude(offset);
    Ok((params.b_e * ue * ue, params.b_c * uc * uc))
}

/// One section of the filter chain with per-mode intensity transmittances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSection {
    pub t_e: f64,
    pub t_c: f64,
}

/// Ordered transport sections behind an input splitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterChain {
    pub sections: Vec<FilterSection>,
    pub split_e: f64,
    pub split_c: f64,
}

impl FilterChain {
    /// Chain with an even input splitter.
    pub fn new(sections: Vec<FilterSection>) -> Result<Self> {
        let chain = FilterChain {
            sections,
            split_e: 0.5,
            split_c: 0.5,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// The two-section chain (photonic crystal, taper filter) of `params`.
    pub fn from_params(params: &DeviceParams) -> Self {
        FilterChain {
            sections: vec![
                FilterSection {
                    t_e: params.t_e,
                    t_c: params.t_c,
                },
                FilterSection {
                    t_e: params.t_ef,
                    t_c: params.t_cf,
                },
            ],
            split_e: 0.5,
            split_c: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("split_e", self.split_e, 0.0, 1.0)?;
        check_range("split_c", self.split_c, 0.0, 1.0)?;
        for s in &self.sections {
            check_range("t_e", s.t_e, 0.0, 1.0)?;
            check_range("t_c", s.t_c, 0.0, 1.0)?;
        }
        Ok(())
    }

    /// Fraction of the pump intensity reaching the output.
    pub fn pump_suppression(&self) -> f64 {
        let te: f64 = self.sections.iter().map(|s| s.t_e).product();
        let tc: f64 = self.sections.iter().map(|s| s.t_c).product();
        self.split_e * te + self.split_c * tc
    }
}

/// `T_p = (T_E T_Ef + T_C T_Cf) / 2`.
pub fn pump_suppression(params: &DeviceParams) -> f64 {
    0.5 * (params.t_e * params.t_ef + params.t_c * params.t_cf)
}

/// Impurity that may diverge when the emitter does not couple to a mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Impurity {
    Finite(f64),
    Divergent,
}

impl Impurity {
    pub fn value(&self) -> f64 {
        match self {
            Impurity::Finite(x) => *x,
            Impurity::Divergent => f64::INFINITY,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, Impurity::Divergent)
    }
}

impl fmt::Display for Impurity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Impurity::Finite(x) => write!(f, "{x}"),
            Impurity::Divergent => f.write_str("inf"),
        }
    }
}

impl From<Result<f64>> for Impurity {
    fn from(r: Result<f64>) -> Self {
        match r {
            Ok(x) => Impurity::Finite(x),
            Err(_) => Impurity::Divergent,
        }
    }
}

/// `ξ = 2 T_p / (β_E β_C)`.
pub fn impurity_simplified(t_p: f64, beta_e: f64, beta_c: f64) -> Result<f64> {
    check_range("T_p", t_p, 0.0, 1.0)?;
    check_range("beta_E", beta_e, 0.0, 1.0)?;
    check_range("beta_C", beta_c, 0.0, 1.0)?;
    let product = beta_e * beta_c;
    if product == 0.0 {
        return Err(Error::DivergentImpurity);
    }
    Ok(2.0 * t_p / product)
}

/// Impurity keeping every path of the pump and of the emitted photon:
/// `ξ = (T_E T_Ef + T_C T_Cf) / ((T_E β_E + T_C β_C)(β_C T_Cf + β_E T_Ef))`.
pub fn impurity_exact(params: &DeviceParams, beta_e: f64, beta_c: f64) -> Result<f64> {
    params.validate()?;
    check_range("beta_E", beta_e, 0.0, 1.0)?;
    check_range("beta_C", beta_c, 0.0, 1.0)?;
    let residual = params.t_e * params.t_ef + params.t_c * params.t_cf;
    let excitation = params.t_e * beta_e + params.t_c * beta_c;
    let collection = beta_c * params.t_cf + beta_e * params.t_ef;
    let denom = excitation * collection;
    if denom == 0.0 {
        return Err(Error::DivergentImpurity);
    }
    Ok(residual / denom)
}

/// One row of [`impurity_vs_power`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPoint {
    pub power: f64,
    pub theta: f64,
    pub p_e: f64,
    pub xi: f64,
}

/// Low-power slope `lim p_e / Θ²`, by Richardson extrapolation.
fn low_power_slope(emitter: &EmitterParams, template: &PulseParams) -> Result<f64> {
    let h = 0.02;
    let f = |theta: f64| -> Result<f64> {
        Ok(pulse_emission_probability_fast(emitter, &template.with_theta(theta), 1e-12)?
            / (theta * theta))
    };
    let (a, b) = (f(h)?, f(2.0 * h)?);
    Ok((4.0 * a - b) / 3.0)
}

/// Impurity versus laser power. The residual laser grows linearly with `P`
/// while the single-photon signal follows `p_e(Θ)`, `Θ = π √(P / P_π)`:
/// `ξ(P) = ξ₀ κ Θ² / p_e(Θ)` with `κ` the low-power slope of `p_e / Θ²` and
/// `ξ₀` the simplified low-power impurity.
pub fn impurity_vs_power(
    params: &DeviceParams,
    betas: (f64, f64),
    emitter: &EmitterParams,
    template: &PulseParams,
    p_pi: f64,
    powers: &[f64],
) -> Result<Vec<PowerPoint>> {
    params.validate()?;
    emitter.validate()?;
    template.validate()?;
    if !(p_pi > 0.0) || !p_pi.is_finite() {
        return Err(invalid("p_pi", "must be positive"));
    }
    if let Some(p) = powers.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
        return Err(invalid("powers", format!("{p} must be positive")));
    }
    let xi0 = impurity_simplified(pump_suppression(params), betas.0, betas.1)?;
    let kappa = low_power_slope(emitter, template)?;
    powers
        .par_iter()
        .map(|&power| {
            let theta = PI * (power / p_pi).sqrt();
            let p_e = pulse_emission_probability_fast(emitter, &template.with_theta(theta), 1e-10)?;
            Ok(PowerPoint {
                power,
                theta,
                p_e,
                xi: xi0 * kappa * theta * theta / p_e,
            })
        })
        .collect()
}

/// One row of [`impurity_map`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub offset: f64,
    pub beta_e: f64,
    pub beta_c: f64,
    pub xi: Impurity,
}

/// `(β_E, β_C, ξ)` across offsets, with ξ from the simplified form and the
/// suppression of `params`. Output order follows `offsets`.
pub fn impurity_map(
    params: &DeviceParams,
    profile_e: &ModeProfile,
    profile_c: &ModeProfile,
    offsets: &[f64],
) -> Result<Vec<MapPoint>> {
    params.validate()?;
    let t_p = pump_suppression(params);
    offsets
        .par_iter()
        .map(|&offset| {
            let (beta_e, beta_c) = beta_at(profile_e, profile_c, params, offset)?;
            Ok(MapPoint {
                offset,
                beta_e,
                beta_c,
                xi: impurity_simplified(t_p, beta_e, beta_c).into(),
            })
        })
        .collect()
}

/// Finds the offset where the simplified impurity equals `xi_measured` and
/// returns `(β_C, offset)` there. Offsets are scanned outward from the
/// waveguide centre, so when two offsets match the one closer to the centre
/// (larger β_C) is returned.
pub fn extract_beta_c(
    xi_measured: f64,
    t_p: f64,
    profile_e: &ModeProfile,
    profile_c: &ModeProfile,
    params: &DeviceParams,
) -> Result<(f64, f64)> {
    params.validate()?;
    check_range("T_p", t_p, 0.0, 1.0)?;
    if !(xi_measured > 2.0 * t_p) || !xi_measured.is_finite() {
        return Err(invalid(
            "xi_measured",
            format!("{xi_measured} must exceed 2 T_p = {}", 2.0 * t_p),
        ));
    }
    let limit = (0.5 * params.width)
        .min(profile_e.support().max(profile_c.support()))
        * (1.0 - 1e-12);
    // ln ξ(x) − ln ξ_measured; +∞ where a coupling vanishes.
    let mismatch = |x: f64| -> f64 {
        let (be, bc) = match beta_at(profile_e, profile_c, params, x) {
            Ok(b) => b,
            Err(_) => return f64::INFINITY,
        };
        let product = be * bc;
        if product <= 0.0 {
            f64::INFINITY
        } else {
            (2.0 * t_p / product).ln() - xi_measured.ln()
        }
    };
    const STEPS: usize = 4000;
    let mut prev_x = 0.0;
    let mut prev = mismatch(0.0);
    for i in 1..=STEPS {
        let x = limit * i as f64 / STEPS as f64;
        let m = mismatch(x);
        if prev > 0.0 && m <= 0.0 {
            let (mut lo, mut hi) = (prev_x, x);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mismatch(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-12 * limit {
                    break;
                }
            }
            let offset = 0.5 * (lo + hi);
            let (_, beta_c) = beta_at(profile_e, profile_c, params, offset)?;
            return Ok((beta_c, offset));
        }
        prev_x = x;
        prev = m;
    }
    Err(Error::NoRoot(format!(
        "no offset in (0, {limit}) nm reaches xi = {xi_measured}"
    )))
}

/// Anchors for [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationAnchors {
    pub t_p: f64,
    /// Offset where `β_C` and ξ are pinned.
    pub offset: f64,
    pub beta_c: f64,
    pub xi: f64,
    /// Collection coupling that should be reachable somewhere.
    pub beta_c_reach: f64,
    /// Impurity targeted where `β_C ≥ beta_c_reach`.
    pub xi_reach: f64,
}

impl Default for CalibrationAnchors {
    fn default() -> Self {
        CalibrationAnchors {
            t_p: 2e-5,
            offset: 20.0,
            beta_c: 0.8,
            xi: 1.7e-3,
            beta_c_reach: 0.9,
            xi_reach: 5e-4,
        }
    }
}

/// Calibrated analytic-profile constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub b_c: f64,
    pub b_e: f64,
    pub effective_width: f64,
    /// Smallest ξ found where `β_C ≥ beta_c_reach`.
    pub xi_at_reach: f64,
}

/// Fits `(B_C, B_E, w_eff)` of the hard-wall profiles to the anchors.
///
/// The first two anchors fix `w_eff` and `B_E` for each `B_C`; `B_C` is then
/// scanned to bring the best impurity with `β_C ≥ beta_c_reach` as close to
/// `xi_reach` as possible.
pub fn calibrate(anchors: &CalibrationAnchors) -> Result<Calibration> {
    let a = anchors;
    check_range("beta_c", a.beta_c, 0.0, 1.0)?;
    check_range("beta_c_reach", a.beta_c_reach, 0.0, 1.0)?;
    if !(a.offset > 0.0 && a.xi > 2.0 * a.t_p && a.t_p > 0.0) {
        return Err(invalid("anchors", "need offset > 0, T_p > 0 and xi > 2 T_p"));
    }
    let target_product = 2.0 * a.t_p / a.xi;
    let candidate = |b_c: f64| -> Option<Calibration> {
        let ratio = (a.beta_c / b_c).sqrt();
        if !(ratio > 0.0 && ratio < 1.0) {
            return None;
        }
        let w = PI * a.offset / ratio.acos();
        let u_e = (2.0 * PI * a.offset / w).sin();
        let b_e = target_product / a.beta_c / (u_e * u_e);
        if !(b_e > 0.0 && b_e <= 1.0) {
            return None;
        }
        // Best impurity over the region where β_C reaches the target.
        let x_max = w / PI * (a.beta_c_reach / b_c).sqrt().min(1.0).acos();
        let mut best = f64::INFINITY;
        const N: usize = 2000;
        for i in 1..=N {
            let x = x_max * i as f64 / N as f64;
            let bc = b_c * (PI * x / w).cos().powi(2);
            let be = b_e * (2.0 * PI * x / w).sin().powi(2);
            if be * bc > 0.0 {
                best = best.min(2.0 * a.t_p / (be * bc));
            }
        }
        Some(Calibration {
            b_c,
            b_e,
            effective_width: w,
            xi_at_reach: best,
        })
    };
    let mut best: Option<Calibration> = None;
    const SCAN: usize = 1000;
    for i in 0..=SCAN {
        let b_c = a.beta_c + (1.0 - a.beta_c) * i as f64 / SCAN as f64;
        if let Some(c) = candidate(b_c) {
            let score = (c.xi_at_reach.ln() - a.xi_reach.ln()).abs();
            if best.map_or(true, |b| score < (b.xi_at_reach.ln() - a.xi_reach.ln()).abs()) {
                best = Some(c);
            }
        }
    }
    best.ok_or_else(|| Error::NoRoot("no profile satisfies the anchors".into()))
}
