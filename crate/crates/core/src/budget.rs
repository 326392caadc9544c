//! End-to-end efficiency budget and the count rates it implies.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};

/// Optical factors whose product is the source efficiency, in report order.
pub const FACTOR_NAMES: [&str; 8] = [
    "eta_Y",
    "eta_ZPL",
    "eta_blink",
    "beta_C",
    "eta_p",
    "T_optics",
    "eta_f",
    "eta_s",
];

/// A dimensionless efficiency with its absolute uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub value: f64,
    pub uncertainty: f64,
}

impl Factor {
    pub fn new(value: f64, uncertainty: f64) -> Self {
        Factor { value, uncertainty }
    }

    pub fn exact(value: f64) -> Self {
        Factor::new(value, 0.0)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidParameter {
            name: "factor",
            reason: format!("`{name}` {what}"),
        };
        if !(0.0..=1.0).contains(&self.value) {
            return Err(bad(&format!("value {} not in [0, 1]", self.value)));
        }
        if !(self.uncertainty >= 0.0) || !self.uncertainty.is_finite() {
            return Err(bad(&format!("uncertainty {} is negative", self.uncertainty)));
        }
        Ok(())
    }
}

/// Value with an absolute uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub uncertainty: f64,
}

impl Estimate {
    pub fn relative(&self) -> f64 {
        if self.value == 0.0 {
            0.0
        } else {
            self.uncertainty / self.value
        }
    }
}

/// Expected detected rate, before and after the deadtime correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub raw_mhz: f64,
    pub raw_uncertainty_mhz: f64,
    pub corrected_mhz: f64,
    pub corrected_uncertainty_mhz: f64,
}

/// Named efficiency factors plus detection and timing parameters.
///
/// Factors are keyed by the names in [`FACTOR_NAMES`]; others are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BudgetDoc", into = "BudgetDoc")]
pub struct EfficiencyBudget {
    factors: [Option<Factor>; 8],
    pub eta_det: Factor,
    pub rep_rate_mhz: f64,
    pub deadtime_ns: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BudgetDoc {
    factors: BTreeMap<String, Factor>,
    eta_det: Factor,
    rep_rate_mhz: f64,
    deadtime_ns: f64,
}

impl TryFrom<BudgetDoc> for EfficiencyBudget {
    type Error = Error;

    fn try_from(doc: BudgetDoc) -> Result<Self> {
        let mut b = EfficiencyBudget::new(doc.eta_det, doc.rep_rate_mhz, doc.deadtime_ns)?;
        for (name, f) in doc.factors {
            b.set(&name, f)?;
        }
        Ok(b)
    }
}

impl From<EfficiencyBudget> for BudgetDoc {
    fn from(b: EfficiencyBudget) -> Self {
        BudgetDoc {
            factors: b.factors().map(|(n, f)| (n.to_string(), f)).collect(),
            eta_det: b.eta_det,
            rep_rate_mhz: b.rep_rate_mhz,
            deadtime_ns: b.deadtime_ns,
        }
    }
}

fn index_of(name: &str) -> Result<usize> {
    FACTOR_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::UnknownFactor(name.to_string()))
}

impl EfficiencyBudget {
    /// Budget without optical factors.
    pub fn new(eta_det: Factor, rep_rate_mhz: f64, deadtime_ns: f64) -> Result<Self> {
        eta_det.validate("eta_det")?;
        check_range("rep_rate_mhz", rep_rate_mhz, 0.0, f64::MAX)?;
        check_range("deadtime_ns", deadtime_ns, 0.0, f64::MAX)?;
        Ok(EfficiencyBudget {
            factors: [None; 8],
            eta_det,
            rep_rate_mhz,
            deadtime_ns,
        })
    }

    /// Measured factors of the reference device at 72.5 MHz with 100 ns
    /// detector deadtime.
    pub fn reference() -> Self {
        let mut b = EfficiencyBudget::new(Factor::new(0.65, 0.05), 72.5, 100.0).expect("valid");
        let rows = [
            ("eta_Y", 0.91, 0.01),
            ("eta_ZPL", 0.915, 0.005),
            ("eta_blink", 0.97, 0.0),
            ("beta_C", 0.80, 0.05),
            ("eta_p", 0.85, 0.05),
            ("T_optics", 0.51, 0.02),
            ("eta_f", 0.24, 0.02),
            ("eta_s", 0.80, 0.01),
        ];
        for (n, v, u) in rows {
            b.set(n, Factor::new(v, u)).expect("known factor");
        }
        b
    }

    /// Sets or replaces a factor.
    pub fn set(&mut self, name: &str, factor: Factor) -> Result<()> {
        let i = index_of(name)?;
        factor.validate(name)?;
        self.factors[i] = Some(factor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<Factor> {
        self.factors[index_of(name)?].ok_or_else(|| Error::MissingFactor(name.to_string()))
    }

    /// Present factors in report order.
    pub fn factors(&self) -> impl Iterator<Item = (&'static str, Factor)> + '_ {
        FACTOR_NAMES
            .iter()
            .zip(self.factors.iter())
            .filter_map(|(n, f)| f.map(|f| (*n, f)))
    }

    /// Combines two stages: factors multiply pairwise and relative
    /// uncertainties add in quadrature. A factor missing on either side is
    /// missing in the result. Detection and timing are taken from `self`.
    pub fn compose(&self, other: &EfficiencyBudget) -> EfficiencyBudget {
        let mut out = self.clone();
        for i in 0..FACTOR_NAMES.len() {
            out.factors[i] = match (self.factors[i], other.factors[i]) {
                (Some(a), Some(b)) => Some(product(&[a, b])),
                _ => None,
            };
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (n, f) in self.factors() {
            f.validate(n)?;
        }
        self.eta_det.validate("eta_det")?;
        check_range("rep_rate_mhz", self.rep_rate_mhz, 0.0, f64::MAX)?;
        check_range("deadtime_ns", self.deadtime_ns, 0.0, f64::MAX)
    }

    /// Product of the eight optical factors; uncertainty by first-order
    /// propagation in relative quadrature.
    pub fn total_efficiency(&self) -> Result<Estimate> {
        let mut fs = Vec::with_capacity(8);
        for (n, f) in FACTOR_NAMES.iter().zip(self.factors.iter()) {
            fs.push(f.ok_or_else(|| Error::MissingFactor(n.to_string()))?);
        }
        let p = product(&fs);
        Ok(Estimate {
            value: p.value,
            uncertainty: p.uncertainty,
        })
    }

    /// Expected detected rate `total · eta_det · rep_rate` and its
    /// non-paralysable deadtime correction `raw / (1 + raw · deadtime)`.
    pub fn expected_rate(&self) -> Result<RateEstimate> {
        let total = self.total_efficiency()?;
        let raw = product(&[Factor::new(total.value, total.uncertainty), self.eta_det]);
        let raw_mhz = raw.value * self.rep_rate_mhz;
        let raw_unc = raw.uncertainty * self.rep_rate_mhz;
        let x = 1.0 + raw_mhz * self.deadtime_ns * 1e-3;
        Ok(RateEstimate {
            raw_mhz,
            raw_uncertainty_mhz: raw_unc,
            corrected_mhz: deadtime_corrected(raw_mhz, self.deadtime_ns),
            corrected_uncertainty_mhz: raw_unc / (x * x),
        })
    }

    /// Report rows `(name, value, uncertainty)`: factors, total, detection
    /// efficiency and the two rates in MHz.
    pub fn report(&self) -> Result<Vec<(String, f64, f64)>> {
        let total = self.total_efficiency()?;
        let rate = self.expected_rate()?;
        let mut rows: Vec<(String, f64, f64)> = self
            .factors()
            .map(|(n, f)| (n.to_string(), f.value, f.uncertainty))
            .collect();
        rows.push(("total".into(), total.value, total.uncertainty));
        rows.push(("eta_det".into(), self.eta_det.value, self.eta_det.uncertainty));
        rows.push(("rate_raw_mhz".into(), rate.raw_mhz, rate.raw_uncertainty_mhz));
        rows.push((
            "rate_corrected_mhz".into(),
            rate.corrected_mhz,
            rate.corrected_uncertainty_mhz,
        ));
        Ok(rows)
    }

    /// CSV with header `factor,value,uncertainty`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "factor,value,uncertainty")?;
        for (n, v, u) in self.report()? {
            writeln!(w, "{n},{v},{u}")?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for EfficiencyBudget {
    /// Aligned text table; prints the error instead when a factor is missing.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = match self.report() {
            Ok(r) => r,
            Err(e) => return write!(f, "{e}"),
        };
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
        writeln!(f, "{:<width$}  {:>10}  {:>10}", "factor", "value", "+/-")?;
        for (n, v, u) in rows {
            writeln!(f, "{n:<width$}  {v:>10.4}  {u:>10.4}")?;
        }
        Ok(())
    }
}

fn product(fs: &[Factor]) -> Factor {
    let value: f64 = fs.iter().map(|f| f.value).product();
    if value == 0.0 {
        return Factor::exact(0.0);
    }
    let rel2: f64 = fs.iter().map(|f| (f.uncertainty / f.value).powi(2)).sum();
    Factor::new(value, value * rel2.sqrt())
}

/// Non-paralysable deadtime correction of a rate in MHz.
pub fn deadtime_corrected(raw_mhz: f64, deadtime_ns: f64) -> f64 {
    raw_mhz / (1.0 + raw_mhz * deadtime_ns * 1e-3)
}

/// Waveguide transmission `10^(−loss · length / 10)` for a length in µm and a
/// loss in dB/mm.
pub fn propagation_transmission(length_um: f64, loss_db_per_mm: f64) -> Result<f64> {
    check_range("length_um", length_um, 0.0, f64::MAX)?;
    check_range("loss_db_per_mm", loss_db_per_mm, 0.0, f64::MAX)?;
    Ok(10f64.powf(-loss_db_per_mm * length_um * 1e-3 / 10.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unity() -> EfficiencyBudget {
        let mut b = EfficiencyBudget::new(Factor::exact(1.0), 72.5, 0.0).unwrap();
        for n in FACTOR_NAMES {
            b.set(n, Factor::exact(1.0)).unwrap();
        }
        b
    }

    #[test]
    fn trivial_totals() {
        let mut b = unity();
        assert_eq!(b.total_efficiency().unwrap().value, 1.0);
        b.set("eta_f", Factor::exact(0.0)).unwrap();
        assert_eq!(b.total_efficiency().unwrap().value, 0.0);
    }

    #[test]
    fn reference_total_and_rate() {
        let b = EfficiencyBudget::reference();
        let t = b.total_efficiency().unwrap();
        // independent arithmetic
        let v = 0.91 * 0.915 * 0.97 * 0.80 * 0.85 * 0.51 * 0.24 * 0.80;
        let rel = [0.01 / 0.91, 0.005 / 0.915, 0.05 / 0.8, 0.05 / 0.85, 0.02 / 0.51, 0.02 / 0.24, 0.01 / 0.8]
            .iter()
            .map(|r: &f64| r * r)
            .sum::<f64>()
            .sqrt();
        assert!((t.value - v).abs() < 1e-15);
        assert!((t.uncertainty - v * rel).abs() < 1e-12);
        assert!((t.value - 0.053).abs() <= 0.007 && (t.uncertainty - 0.007).abs() < 0.001);
        let r = b.expected_rate().unwrap();
        assert!((r.raw_mhz - v * 0.65 * 72.5).abs() < 1e-12);
        assert!((r.raw_mhz - 2.5).abs() <= 0.4);
        assert!((r.raw_uncertainty_mhz - 0.4).abs() < 0.05);
        assert!((r.corrected_mhz - 2.02).abs() < 0.01);
    }

    #[test]
    fn zero_deadtime_leaves_rate() {
        let mut b = EfficiencyBudget::reference();
        b.deadtime_ns = 0.0;
        let r = b.expected_rate().unwrap();
        assert_eq!(r.raw_mhz, r.corrected_mhz);
        assert!((deadtime_corrected(2.5, 100.0) - 2.5 / 1.25).abs() < 1e-15);
    }

    #[test]
    fn missing_and_unknown_names() {
        let b = EfficiencyBudget::new(Factor::exact(1.0), 1.0, 0.0).unwrap();
        assert_eq!(b.total_efficiency(), Err(Error::MissingFactor("eta_Y".into())));
        let mut b = unity();
        assert_eq!(b.set("eta_y", Factor::exact(1.0)), Err(Error::UnknownFactor("eta_y".into())));
        assert!(b.set("eta_s", Factor::new(1.2, 0.0)).is_err());
        assert!(b.set("eta_s", Factor::new(0.5, -0.1)).is_err());
    }

    #[test]
    fn propagation_db_arithmetic() {
        assert_eq!(propagation_transmission(0.0, 10.5).unwrap(), 1.0);
        assert!((propagation_transmission(100.0, 10.5).unwrap() - 10f64.powf(-0.105)).abs() < 1e-15);
        assert!((propagation_transmission(1000.0, 10.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(propagation_transmission(-1.0, 1.0).is_err());
    }

    #[test]
    fn csv_and_table() {
        let b = EfficiencyBudget::reference();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("factor,value,uncertainty\neta_Y,0.91,0.01\n"));
        assert_eq!(s.lines().count(), 1 + 8 + 4);
        let t = b.to_string();
        assert!(t.lines().nth(1).unwrap().starts_with("eta_Y "));
    }
}
