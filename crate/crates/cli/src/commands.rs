//! One function per subcommand. Each writes its files into `out` and returns
//! the values it summarises, so tests can call them directly.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use qdsource::bloch::{first_rabi_peak, fit_rabi, RabiFit, RabiFitOptions};
use qdsource::budget::{EfficiencyBudget, Estimate, RateEstimate};
use qdsource::device::{
    beta_at, calibrate, impurity_map, impurity_simplified, impurity_vs_power, pump_suppression, Calibration,
    CalibrationAnchors, MapPoint, PowerPoint,
};
use qdsource::montecarlo::{
    central_ratio, correlate, extract_g2, extract_vraw, fit_blinking, synth_hbt, synth_hom, ClickStream,
    CorrelationHistogram, Polarization,
};
use qdsource::photonstats::{hom_intrinsic, v_intercept_fit, HomSetup, InterceptFit, IntrinsicVisibility};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let path = out.join(name);
    let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn write_json(out: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RabiSummary {
    /// Pulse area of the first emission maximum (rad).
    pub theta_peak: f64,
    pub theta_peak_over_pi: f64,
    /// Low-power impurity at the configured offset.
    pub xi_low_power: f64,
    pub xi_at_p_pi: f64,
    #[serde(skip)]
    pub rows: Vec<PowerPoint>,
}

/// Emission and impurity versus power; writes `rabi.csv`.
pub fn cmd_rabi(cfg: &RunConfig, out: &Path) -> Result<RabiSummary, CliError> {
    let emitter = cfg.emitter()?;
    let template = cfg.pulse()?;
    let params = cfg.device()?;
    let (pe, pc) = cfg.profiles()?;
    let r = &cfg.rabi;
    let betas = beta_at(&pe, &pc, &params, r.offset_nm)?;
    let powers = linspace(r.power_min_nw, r.power_max_nw, r.points);
    let rows = impurity_vs_power(&params, betas, &emitter, &template, r.p_pi_nw, &powers)?;
    let at_pi = impurity_vs_power(&params, betas, &emitter, &template, r.p_pi_nw, &[r.p_pi_nw])?[0];
    let theta_peak = first_rabi_peak(&emitter, &template, 0.5 * PI, 1.5 * PI)?;
    let xi_low_power = impurity_simplified(pump_suppression(&params), betas.0, betas.1)?;

    let mut w = create(out, "rabi.csv")?;
    writeln!(w, "power_nw,theta_rad,p_e,xi")?;
    for p in &rows {
        writeln!(w, "{},{},{},{}", p.power, p.theta, p.p_e, p.xi)?;
    }
    w.flush()?;
    Ok(RabiSummary {
        theta_peak,
        theta_peak_over_pi: theta_peak / PI,
        xi_low_power,
        xi_at_p_pi: at_pi.xi,
        rows,
    })
}

/// β-factors and impurity across offsets; writes `impurity_map.csv`.
pub fn cmd_impurity_map(cfg: &RunConfig, out: &Path) -> Result<Vec<MapPoint>, CliError> {
    let params = cfg.device()?;
    let (pe, pc) = cfg.profiles()?;
    let m = &cfg.impurity_map;
    let offsets = linspace(m.offset_min_nm, m.offset_max_nm, m.points);
    let points = impurity_map(&params, &pe, &pc, &offsets)?;
    let mut w = create(out, "impurity_map.csv")?;
    writeln!(w, "offset_nm,beta_e,beta_c,xi")?;
    for p in &points {
        writeln!(w, "{},{},{},{}", p.offset, p.beta_e, p.beta_c, p.xi)?;
    }
    w.flush()?;
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    /// Two-detector autocorrelation.
    Hbt,
    /// Interferometer with co-polarised arms.
    HomCo,
    /// Interferometer with cross-polarised arms.
    HomCross,
    /// Both interferometer configurations and the raw visibility.
    Hom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StreamFormat {
    Csv,
    Binary,
}

impl Experiment {
    fn label(&self) -> &'static str {
        match self {
            Experiment::Hbt => "hbt",
            Experiment::HomCo => "hom-co",
            Experiment::HomCross => "hom-cross",
            Experiment::Hom => "hom",
        }
    }
}

fn write_stream(a: &ClickStream, b: &ClickStream, out: &Path, stem: &str, format: StreamFormat) -> Result<PathBuf, CliError> {
    let merged = ClickStream::merge(&[a, b]);
    let name = match format {
        StreamFormat::Binary => format!("{stem}.bin"),
        StreamFormat::Csv => format!("{stem}.csv"),
    };
    let w = create(out, &name)?;
    match format {
        StreamFormat::Binary => merged.write_binary(w, 2)?,
        StreamFormat::Csv => merged.write_csv(w)?,
    }
    Ok(out.join(name))
}

fn write_histogram(h: &CorrelationHistogram, out: &Path, name: &str) -> Result<(), CliError> {
    h.write_csv(create(out, name)?)?;
    Ok(())
}

fn to_ps(ns: f64) -> u64 {
    (ns * 1e3).round() as u64
}

/// Synthesises streams, histograms them and extracts g² or the HOM peak
/// ratios. Writes `clicks_*`, `histogram_*.csv` and `result.json`, and
/// returns the result document.
pub fn cmd_synth(
    cfg: &RunConfig,
    experiment: Experiment,
    n_pulses: u64,
    seed: u64,
    format: StreamFormat,
    out: &Path,
) -> Result<Value, CliError> {
    let model = cfg.source_model()?;
    let setup = cfg.hom_setup()?;
    let a = &cfg.analysis;
    let rep_ps = (model.rep_period * 1e3).round() as u64;
    let mut result = json!({
        "experiment": experiment.label(),
        "seed": seed,
        "pulses": n_pulses,
    });
    let hom_run = |pol: Polarization, stem: &str| -> Result<(CorrelationHistogram, u64), CliError> {
        let (s0, s1) = synth_hom(&model, &setup, pol, n_pulses, seed)?;
        write_stream(&s0, &s1, out, &format!("clicks_{stem}"), format)?;
        let h = correlate(&s0, &s1, a.bin_width_ps, to_ps(a.hom_window_ns), rep_ps)?;
        write_histogram(&h, out, &format!("histogram_{stem}.csv"))?;
        Ok((h, (s0.len() + s1.len()) as u64))
    };
    match experiment {
        Experiment::Hbt => {
            let (s0, s1) = synth_hbt(&model, n_pulses, seed)?;
            write_stream(&s0, &s1, out, "clicks_hbt", format)?;
            let h = correlate(&s0, &s1, a.bin_width_ps, to_ps(a.hbt_window_ns), rep_ps)?;
            write_histogram(&h, out, "histogram_hbt.csv")?;
            let g2 = extract_g2(&h, &cfg.hbt_normalization(), &cfg.peak_method()?)?;
            result["clicks"] = json!([s0.len(), s1.len()]);
            result["g2"] = json!(g2.value);
            result["g2_uncertainty"] = json!(g2.uncertainty);
            result["blinking"] = match fit_blinking(&h, a.blink_exclude_ns) {
                Ok(b) => json!({
                    "amplitude": b.amplitude,
                    "amplitude_uncertainty": b.amplitude_error,
                    "rate_per_us": b.rate,
                    "rate_uncertainty_per_us": b.rate_error,
                }),
                Err(e) => json!({ "error": e.to_string() }),
            };
        }
        Experiment::HomCo | Experiment::HomCross => {
            let (pol, stem) = if experiment == Experiment::HomCo {
                (Polarization::Co, "co")
            } else {
                (Polarization::Cross, "cross")
            };
            let (h, clicks) = hom_run(pol, stem)?;
            let ratio = central_ratio(&h, &cfg.hom_normalization(), &qdsource::montecarlo::PeakMethod::Area)?;
            result["clicks"] = json!(clicks);
            result["central_area"] = json!(ratio.value);
            result["central_area_uncertainty"] = json!(ratio.uncertainty);
        }
        Experiment::Hom => {
            let (co, n_co) = hom_run(Polarization::Co, "co")?;
            let (cross, n_cross) = hom_run(Polarization::Cross, "cross")?;
            let v = extract_vraw(&co, &cross, &cfg.hom_normalization())?;
            result["clicks"] = json!([n_co, n_cross]);
            result["a_parallel"] = json!(v.a_parallel);
            result["a_perp"] = json!(v.a_perp);
            result["v_raw"] = json!(v.value);
            result["v_raw_uncertainty"] = json!(v.uncertainty);
        }
    }
    write_json(out, "result.json", &result)?;
    Ok(result)
}

#[derive(Debug, Clone, Copy)]
pub struct BudgetReport {
    pub total: Estimate,
    pub rate: RateEstimate,
}

/// Writes `budget.csv` and returns the totals together with the text table.
pub fn cmd_budget(budget: &EfficiencyBudget, out: &Path) -> Result<(BudgetReport, String), CliError> {
    let total = budget.total_efficiency()?;
    let rate = budget.expected_rate()?;
    budget.write_csv(create(out, "budget.csv")?)?;
    Ok((BudgetReport { total, rate }, budget.to_string()))
}

/// Two-column numeric CSV with a header row.
pub fn read_pairs(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if n == 0 || line.is_empty() {
            continue;
        }
        let bad = || CliError::Config(format!("{}:{}: expected two numbers", path.display(), n + 1));
        let (x, y) = line.split_once(',').ok_or_else(bad)?;
        let x: f64 = x.trim().parse().map_err(|_| bad())?;
        let y: f64 = y.trim().parse().map_err(|_| bad())?;
        rows.push((x, y));
    }
    Ok(rows)
}

pub fn cmd_hom_correct(setup: &HomSetup, v_raw: f64, g2: f64) -> Result<IntrinsicVisibility, CliError> {
    Ok(hom_intrinsic(v_raw, setup, g2)?)
}

/// Intercept fit of a `g2,v_raw` CSV.
pub fn cmd_hom_intercept(points_csv: &Path) -> Result<InterceptFit, CliError> {
    let pts: Vec<(f64, f64)> = read_pairs(points_csv)?
        .into_iter()
        .map(|(g2, v)| (g2, 1.0 - v))
        .collect();
    Ok(v_intercept_fit(&pts)?)
}

/// Fits a `power,intensity` CSV; writes `fit_rabi.json`.
pub fn cmd_fit_rabi(cfg: &RunConfig, data_csv: &Path, out: &Path) -> Result<RabiFit, CliError> {
    let data = read_pairs(data_csv)?;
    let fit = fit_rabi(&cfg.emitter()?, &cfg.pulse()?, &data, &RabiFitOptions::default())?;
    write_json(
        out,
        "fit_rabi.json",
        &json!({
            "p_pi": fit.p_pi,
            "gamma_d_per_ns": fit.gamma_d,
            "scale": fit.scale,
            "residual_norm": fit.residual_norm,
        }),
    )?;
    Ok(fit)
}

/// Fits the analytic mode profiles to the impurity anchors; writes
/// `calibration.json`.
pub fn cmd_calibrate(out: &Path) -> Result<Calibration, CliError> {
    let c = calibrate(&CalibrationAnchors::default())?;
    write_json(
        out,
        "calibration.json",
        &json!({
            "b_c": c.b_c,
            "b_e": c.b_e,
            "effective_width_nm": c.effective_width,
            "xi_at_reach": c.xi_at_reach,
        }),
    )?;
    Ok(c)
}
