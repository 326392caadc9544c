//! Run configuration: one JSON document with a section per component.
//!
//! Physical quantities carry their unit in the key name. Every section is
//! optional and falls back to the reference device; unknown keys are errors.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use qdsource::bloch::{EmitterParams, PulseParams};
use qdsource::budget::EfficiencyBudget;
use qdsource::device::{default_profiles, DeviceParams, ModeProfile};
use qdsource::montecarlo::{EmissionMode, Normalization, PeakMethod, PeakShape, SourceModel};
use qdsource::photonstats::HomSetup;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub emitter: EmitterSection,
    pub pulse: PulseSection,
    pub device: DeviceSection,
    pub rabi: RabiSection,
    pub impurity_map: MapSection,
    pub source: SourceSection,
    pub hom: HomSection,
    pub analysis: AnalysisSection,
    pub budget: EfficiencyBudget,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output_dir: None,
            emitter: EmitterSection::default(),
            pulse: PulseSection::default(),
            device: DeviceSection::default(),
            rabi: RabiSection::default(),
            impurity_map: MapSection::default(),
            source: SourceSection::default(),
            hom: HomSection::default(),
            analysis: AnalysisSection::default(),
            budget: EfficiencyBudget::reference(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmitterSection {
    pub lifetime_ns: f64,
    pub gamma_d_per_ns: f64,
}

impl Default for EmitterSection {
    fn default() -> Self {
        EmitterSection {
            lifetime_ns: 0.640,
            gamma_d_per_ns: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseSection {
    pub area_rad: f64,
    pub intensity_fwhm_ns: f64,
    pub center_ns: f64,
    pub detuning_rad_per_ns: f64,
}

impl Default for PulseSection {
    fn default() -> Self {
        PulseSection {
            area_rad: PI,
            intensity_fwhm_ns: 0.026,
            center_ns: 0.2,
            detuning_rad_per_ns: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum ProfileSection {
    AnalyticEven { effective_width_nm: f64 },
    AnalyticOdd { effective_width_nm: f64 },
    /// CSV `offset_nm,amplitude`, relative to the config file.
    Tabulated { csv_path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceSection {
    pub t_e: f64,
    pub t_c: f64,
    pub t_ef: f64,
    pub t_cf: f64,
    pub b_c: f64,
    pub b_e: f64,
    pub width_nm: f64,
    pub profile_e: ProfileSection,
    pub profile_c: ProfileSection,
}

impl Default for DeviceSection {
    fn default() -> Self {
        let d = DeviceParams::default();
        let (pe, pc) = default_profiles();
        let section = |p: ModeProfile| match p {
            ModeProfile::AnalyticEven { effective_width } => ProfileSection::AnalyticEven {
                effective_width_nm: effective_width,
            },
            ModeProfile::AnalyticOdd { effective_width } => ProfileSection::AnalyticOdd {
                effective_width_nm: effective_width,
            },
            ModeProfile::Tabulated { .. } => unreachable!("defaults are analytic"),
        };
        DeviceSection {
            t_e: d.t_e,
            t_c: d.t_c,
            t_ef: d.t_ef,
            t_cf: d.t_cf,
            b_c: d.b_c,
            b_e: d.b_e,
            width_nm: d.width,
            profile_e: section(pe),
            profile_c: section(pc),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiSection {
    /// Laser power giving a π pulse.
    pub p_pi_nw: f64,
    pub power_min_nw: f64,
    pub power_max_nw: f64,
    pub points: usize,
    /// Emitter offset at which the low-power impurity is evaluated.
    pub offset_nm: f64,
}

impl Default for RabiSection {
    fn default() -> Self {
        RabiSection {
            p_pi_nw: 10.0,
            power_min_nw: 0.05,
            power_max_nw: 40.0,
            points: 120,
            offset_nm: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    pub offset_min_nm: f64,
    pub offset_max_nm: f64,
    pub points: usize,
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection {
            offset_min_nm: -65.0,
            offset_max_nm: 65.0,
            points: 261,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmissionKind {
    Fast,
    QuantumJump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSection {
    pub p_click: f64,
    pub xi: f64,
    pub blink_rate_per_us: f64,
    pub blink_fraction: f64,
    pub rep_rate_mhz: f64,
    pub visibility: f64,
    pub deadtime_ns: f64,
    pub emission: EmissionKind,
}

impl Default for SourceSection {
    fn default() -> Self {
        let m = SourceModel::default();
        SourceSection {
            p_click: m.p_click,
            xi: m.xi,
            blink_rate_per_us: m.blink_rate,
            blink_fraction: m.blink_fraction,
            rep_rate_mhz: 72.5,
            visibility: m.visibility,
            deadtime_ns: m.deadtime,
            emission: EmissionKind::Fast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomSection {
    pub r: f64,
    pub t: f64,
    pub epsilon: f64,
    pub eta_opt: f64,
}

impl Default for HomSection {
    fn default() -> Self {
        HomSection {
            r: 0.476,
            t: 0.524,
            epsilon: 0.0,
            eta_opt: 0.053,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeakKind {
    Area,
    Fit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub bin_width_ps: u64,
    pub hbt_window_ns: f64,
    pub hbt_norm_delay_ns: f64,
    pub hbt_norm_span_ns: f64,
    pub hom_window_ns: f64,
    pub hom_norm_delay_ns: f64,
    pub hom_norm_span_ns: f64,
    pub peak: PeakKind,
    pub irf_sigma_ns: f64,
    pub blink_exclude_ns: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            bin_width_ps: 100,
            hbt_window_ns: 60_000.0,
            hbt_norm_delay_ns: 50_000.0,
            hbt_norm_span_ns: 5_000.0,
            hom_window_ns: 1_300.0,
            hom_norm_delay_ns: 1_000.0,
            hom_norm_span_ns: 500.0,
            peak: PeakKind::Area,
            irf_sigma_ns: 0.0,
            blink_exclude_ns: 200.0,
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    /// Reads and validates a config file; relative paths inside it resolve
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let file = File::open(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.device.profile_e, &mut cfg.device.profile_c] {
            if let ProfileSection::Tabulated { csv_path } = p {
                if csv_path.is_relative() {
                    *csv_path = base.join(&*csv_path);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.emitter()?;
        self.pulse()?;
        self.device()?;
        self.profiles()?;
        self.source_model()?;
        self.hom_setup()?;
        self.budget.validate().map_err(config_error)?;
        let r = &self.rabi;
        if !(r.p_pi_nw > 0.0 && r.power_min_nw > 0.0 && r.power_max_nw > r.power_min_nw && r.points >= 2) {
            return Err(config_error("rabi: need 0 < power_min_nw < power_max_nw, p_pi_nw > 0, points >= 2"));
        }
        let m = &self.impurity_map;
        if !(m.offset_max_nm > m.offset_min_nm && m.points >= 2) {
            return Err(config_error("impurity_map: need offset_min_nm < offset_max_nm and points >= 2"));
        }
        let a = &self.analysis;
        if a.bin_width_ps == 0 || !(a.irf_sigma_ns >= 0.0) || !(a.blink_exclude_ns >= 0.0) {
            return Err(config_error("analysis: bin_width_ps > 0, irf_sigma_ns >= 0, blink_exclude_ns >= 0"));
        }
        for (w, d, s, name) in [
            (a.hbt_window_ns, a.hbt_norm_delay_ns, a.hbt_norm_span_ns, "hbt"),
            (a.hom_window_ns, a.hom_norm_delay_ns, a.hom_norm_span_ns, "hom"),
        ] {
            if !(d > 0.0 && s >= 0.0 && d + 0.5 * s <= w) {
                return Err(config_error(format!(
                    "analysis: {name} normalisation region must lie inside the window"
                )));
            }
        }
        Ok(())
    }

    pub fn emitter(&self) -> Result<EmitterParams, CliError> {
        EmitterParams::from_lifetime_ns(self.emitter.lifetime_ns, self.emitter.gamma_d_per_ns).map_err(config_error)
    }

    pub fn pulse(&self) -> Result<PulseParams, CliError> {
        let p = &self.pulse;
        PulseParams::from_intensity_fwhm(p.area_rad, p.intensity_fwhm_ns, p.center_ns, p.detuning_rad_per_ns)
            .map_err(config_error)
    }

    pub fn device(&self) -> Result<DeviceParams, CliError> {
        let d = &self.device;
        let params = DeviceParams {
            t_e: d.t_e,
            t_c: d.t_c,
            t_ef: d.t_ef,
            t_cf: d.t_cf,
            b_c: d.b_c,
            b_e: d.b_e,
            width: d.width_nm,
        };
        params.validate().map_err(config_error)?;
        Ok(params)
    }

    /// `(E, C)` mode profiles.
    pub fn profiles(&self) -> Result<(ModeProfile, ModeProfile), CliError> {
        let build = |p: &ProfileSection| -> Result<ModeProfile, CliError> {
            match p {
                ProfileSection::AnalyticEven { effective_width_nm } => {
                    ModeProfile::even(*effective_width_nm).map_err(config_error)
                }
                ProfileSection::AnalyticOdd { effective_width_nm } => {
                    ModeProfile::odd(*effective_width_nm).map_err(config_error)
                }
                ProfileSection::Tabulated { csv_path } => {
                    let f = File::open(csv_path)
                        .map_err(|e| config_error(format!("{}: {e}", csv_path.display())))?;
                    ModeProfile::read_csv(BufReader::new(f)).map_err(config_error)
                }
            }
        };
        Ok((build(&self.device.profile_e)?, build(&self.device.profile_c)?))
    }

    pub fn source_model(&self) -> Result<SourceModel, CliError> {
        let s = &self.source;
        if !(s.rep_rate_mhz > 0.0) {
            return Err(config_error("source: rep_rate_mhz must be positive"));
        }
        let emitter = self.emitter()?;
        let emission = match s.emission {
            EmissionKind::Fast => EmissionMode::Fast,
            EmissionKind::QuantumJump => EmissionMode::QuantumJump {
                emitter,
                pulse: self.pulse()?,
            },
        };
        let model = SourceModel {
            p_click: s.p_click,
            xi: s.xi,
            blink_rate: s.blink_rate_per_us,
            blink_fraction: s.blink_fraction,
            rep_period: 1e3 / s.rep_rate_mhz,
            visibility: s.visibility,
            deadtime: s.deadtime_ns,
            gamma: emitter.gamma,
            emission,
        };
        model.validate().map_err(config_error)?;
        Ok(model)
    }

    pub fn hom_setup(&self) -> Result<HomSetup, CliError> {
        let h = &self.hom;
        HomSetup::new(h.r, h.t, h.epsilon, h.eta_opt).map_err(config_error)
    }

    pub fn hbt_normalization(&self) -> Normalization {
        Normalization {
            delay_ns: self.analysis.hbt_norm_delay_ns,
            span_ns: self.analysis.hbt_norm_span_ns,
        }
    }

    pub fn hom_normalization(&self) -> Normalization {
        Normalization {
            delay_ns: self.analysis.hom_norm_delay_ns,
            span_ns: self.analysis.hom_norm_span_ns,
        }
    }

    pub fn peak_method(&self) -> Result<PeakMethod, CliError> {
        Ok(match self.analysis.peak {
            PeakKind::Area => PeakMethod::Area,
            PeakKind::Fit => {
                let gamma = self.emitter()?.gamma;
                PeakMethod::Fit {
                    shape: PeakShape {
                        decay_rate: gamma,
                        irf_sigma: self.analysis.irf_sigma_ns,
                    },
                    core: 3.0 / gamma + 3.0 * self.analysis.irf_sigma_ns,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_reference_config() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        assert!((c.source_model().unwrap().rep_period - 1e3 / 72.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"emitter": {"gamma": 1.0}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(
            r#"{"device": {"profile_e": {"kind": "analytic-odd", "effective_width": 100}}}"#
        )
        .is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut c = RunConfig::default();
        c.hom.t = 0.6;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = RunConfig::default();
        c.analysis.hbt_norm_delay_ns = 70_000.0;
        assert!(c.validate().is_err());
    }
}
