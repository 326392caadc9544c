//! Closed-form photon statistics: impurity and g²(0), Hong–Ou–Mandel
//! visibility correction, the background-intercept method and blinking.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, invalid, Error, Result};

/// `g²(0) = 2ξ − ξ²`.
pub fn g2_from_xi(xi: f64) -> Result<f64> {
    check_range("xi", xi, 0.0, 1.0)?;
    Ok(2.0 * xi - xi * xi)
}

/// Inverse of [`g2_from_xi`]: `ξ = 1 − √(1 − g²)`.
pub fn xi_from_g2(g2: f64) -> Result<f64> {
    check_range("g2", g2, 0.0, 1.0)?;
    // g2 / (1 + √(1 − g2)) avoids cancellation for small g2.
    Ok(g2 / (1.0 + (1.0 - g2).sqrt()))
}

/// Interferometer used for two-photon interference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomSetup {
    pub r: f64,
    pub t: f64,
    /// One minus the classical interferometer visibility.
    pub epsilon: f64,
    /// Total optical efficiency of the setup.
    pub eta_opt: f64,
}

impl HomSetup {
    pub fn new(r: f64, t: f64, epsilon: f64, eta_opt: f64) -> Result<Self> {
        let s = HomSetup {
            r,
            t,
            epsilon,
            eta_opt,
        };
        s.validate()?;
        Ok(s)
    }

    /// Balanced, lossless, perfectly aligned interferometer.
    pub fn ideal() -> Self {
        HomSetup {
            r: 0.5,
            t: 0.5,
            epsilon: 0.0,
            eta_opt: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("R", self.r, 0.0, 1.0)?;
        check_range("T", self.t, 0.0, 1.0)?;
        check_range("epsilon", self.epsilon, 0.0, 1.0)?;
        check_range("eta_opt", self.eta_opt, 0.0, 1.0)?;
        if (self.r + self.t - 1.0).abs() > 1e-6 {
            return Err(invalid("R+T", format!("{} must equal 1", self.r + self.t)));
        }
        Ok(())
    }
}

/// Normalised and raw zero-delay peak areas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakAreas {
    /// Co-polarised zero-delay area, normalised to the long-delay peak.
    pub a_parallel: f64,
    /// Cross-polarised zero-delay area, normalised to the long-delay peak.
    pub a_perp: f64,
    pub a_zero: f64,
    pub a_inf: f64,
}

impl PeakAreas {
    /// Areas from raw co- and cross-polarised central and long-delay peaks.
    pub fn from_raw(par_zero: f64, par_inf: f64, perp_zero: f64, perp_inf: f64) -> Result<Self> {
        for (name, v) in [
            ("par_zero", par_zero),
            ("par_inf", par_inf),
            ("perp_zero", perp_zero),
            ("perp_inf", perp_inf),
        ] {
            check_range(name, v, 0.0, f64::MAX)?;
        }
        if par_inf == 0.0 || perp_inf == 0.0 {
            return Err(invalid("A_inf", "long-delay area must be positive"));
        }
        Ok(PeakAreas {
            a_parallel: par_zero / par_inf,
            a_perp: perp_zero / perp_inf,
            a_zero: par_zero,
            a_inf: par_inf,
        })
    }
}

/// `V_raw = (A⊥ − A∥) / A⊥`.
pub fn vraw_from_areas(areas: &PeakAreas) -> Result<f64> {
    if !(areas.a_perp > 0.0) {
        return Err(invalid("A_perp", "must be positive"));
    }
    check_range("A_parallel", areas.a_parallel, 0.0, f64::MAX)?;
    Ok((areas.a_perp - areas.a_parallel) / areas.a_perp)
}

/// Expected normalised central-peak area for intrinsic visibility `v`:
/// `(R³T + RT³)[1 + (2 − η)g²] − 2R²T²(1 − ε)²V`.
pub fn hom_expected_area(v: f64, setup: &HomSetup, g2: f64) -> Result<f64> {
    check_range("V", v, 0.0, 1.0)?;
    check_range("g2", g2, 0.0, f64::MAX)?;
    setup.validate()?;
    let (r, t) = (setup.r, setup.t);
    let c = (1.0 - setup.epsilon).powi(2);
    Ok((r.powi(3) * t + r * t.powi(3)) * (1.0 + (2.0 - setup.eta_opt) * g2)
        - 2.0 * r * r * t * t * c * v)
}

/// Intrinsic visibility corrected for setup imperfections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntrinsicVisibility {
    pub value: f64,
    /// Set when `value` lies outside `[0, 1]`; the value is not clamped.
    pub out_of_range: bool,
}

/// `V = [1 + (2 − η)g²](R² + T²) V_raw / (2RT(1 − ε)²)`.
pub fn hom_intrinsic(v_raw: f64, setup: &HomSetup, g2: f64) -> Result<IntrinsicVisibility> {
    check_range("V_raw", v_raw, 0.0, 1.0)?;
    check_range("g2", g2, 0.0, f64::MAX)?;
    setup.validate()?;
    if setup.epsilon >= 1.0 {
        return Err(invalid("epsilon", "interferometer has no classical visibility"));
    }
    let (r, t) = (setup.r, setup.t);
    if r * t == 0.0 {
        return Err(invalid("R*T", "beamsplitter must have both outputs"));
    }
    let value = (1.0 + (2.0 - setup.eta_opt) * g2) * (r * r + t * t) * v_raw
        / (2.0 * r * t * (1.0 - setup.epsilon).powi(2));
    Ok(IntrinsicVisibility {
        value,
        out_of_range: !(0.0..=1.0).contains(&value),
    })
}

/// Straight-line fit of `1 − V_raw` against `g²(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterceptFit {
    /// `1 − intercept`.
    pub visibility: f64,
    pub slope: f64,
    /// Standard error of the intercept.
    pub uncertainty: f64,
}

/// Ordinary least squares on `(g², 1 − V_raw)` points.
pub fn v_intercept_fit(points: &[(f64, f64)]) -> Result<InterceptFit> {
    if points.len() < 3 {
        return Err(invalid("points", "need at least three points"));
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(invalid("points", "non-finite point"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let scale = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if !(sxx > 1e-24 * scale * scale * n) || sxx == 0.0 {
        return Err(Error::Singular("g2 values are not distinct".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let s2 = rss / (n - 2.0);
    let var_intercept = s2 * (1.0 / n + mx * mx / sxx);
    Ok(InterceptFit {
        visibility: 1.0 - intercept,
        slope,
        uncertainty: var_intercept.sqrt(),
    })
}

/// Dark-state probability from the bunching amplitude of a two-state
/// telegraph process, `b / (1 + b)`.
pub fn blinking_fraction(b: f64) -> Result<f64> {
    if b.is_nan() || b < 0.0 {
        return Err(invalid("b", format!("{b} must be non-negative")));
    }
    if b.is_infinite() {
        return Ok(1.0);
    }
    Ok(b / (1.0 + b))
}

/// Bunching amplitude that produces a dark fraction `f`, `f / (1 − f)`.
pub fn bunching_from_fraction(f: f64) -> Result<f64> {
    check_range("fraction", f, 0.0, 1.0)?;
    if f == 1.0 {
        return Err(invalid("fraction", "emitter never bright"));
    }
    Ok(f / (1.0 - f))
}

/// `g²(τ) = 1 + b exp(−λ|τ|)`, with `tau` and `lambda_rate` in reciprocal units.
pub fn blinking_envelope(tau: f64, b: f64, lambda_rate: f64) -> Result<f64> {
    if !(lambda_rate > 0.0) {
        return Err(invalid("lambda_rate", "must be positive"));
    }
    Ok(1.0 + b * (-lambda_rate * tau.abs()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_setup() -> HomSetup {
        HomSetup::new(0.476, 0.524, 0.05, 0.053).unwrap()
    }

    #[test]
    fn g2_values() {
        assert_eq!(g2_from_xi(0.0).unwrap(), 0.0);
        assert!((g2_from_xi(0.004).unwrap() - 0.008).abs() < 2e-5);
        let g = g2_from_xi(5e-4).unwrap();
        assert!((9.9e-4..=1.01e-3).contains(&g));
        assert!(g2_from_xi(1.5).is_err());
        assert!(g2_from_xi(-0.1).is_err());
    }

    #[test]
    fn xi_values() {
        assert_eq!(xi_from_g2(0.0).unwrap(), 0.0);
        assert_eq!(xi_from_g2(1.0).unwrap(), 1.0);
        let xi = xi_from_g2(0.008).unwrap();
        assert!((xi - 0.004).abs() < 2e-5);
        assert!((2.0 * xi - xi * xi - 0.008).abs() < 1e-15);
        assert!(xi_from_g2(1.01).is_err());
    }

    #[test]
    fn vraw_limits() {
        let same = PeakAreas {
            a_parallel: 0.2,
            a_perp: 0.2,
            a_zero: 0.2,
            a_inf: 1.0,
        };
        assert_eq!(vraw_from_areas(&same).unwrap(), 0.0);
        let perfect = PeakAreas {
            a_parallel: 0.0,
            ..same
        };
        assert_eq!(vraw_from_areas(&perfect).unwrap(), 1.0);
        let nine = PeakAreas::from_raw(0.9, 100.0, 10.0, 100.0).unwrap();
        assert!((vraw_from_areas(&nine).unwrap() - 0.91).abs() < 1e-12);
        let zero = PeakAreas { a_perp: 0.0, ..same };
        assert!(vraw_from_areas(&zero).is_err());
    }

    #[test]
    fn expected_area_ideal() {
        let s = HomSetup::ideal();
        assert!(hom_expected_area(1.0, &s, 0.0).unwrap().abs() < 1e-15);
        assert!((hom_expected_area(0.0, &s, 0.0).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn paper_setup_consistency() {
        let s = paper_setup();
        let perp = hom_expected_area(0.0, &s, 0.02).unwrap();
        let par = hom_expected_area(0.97, &s, 0.02).unwrap();
        let v_raw = (perp - par) / perp;
        let v = hom_intrinsic(v_raw, &s, 0.02).unwrap();
        assert!((v.value - 0.97).abs() < 1e-12);
    }

    #[test]
    fn paper_values_flag_out_of_range() {
        let v = hom_intrinsic(0.91, &paper_setup(), 0.02).unwrap();
        assert!(v.value > 1.0 && v.out_of_range);
        assert!((v.value - 1.0524).abs() < 1e-3, "{}", v.value);
    }

    #[test]
    fn intrinsic_ideal_identity_and_monotone_in_epsilon() {
        for v_raw in [0.0, 0.3, 0.91, 1.0] {
            assert_eq!(hom_intrinsic(v_raw, &HomSetup::ideal(), 0.0).unwrap().value, v_raw);
        }
        let a = hom_intrinsic(0.8, &HomSetup::new(0.5, 0.5, 0.01, 0.0).unwrap(), 0.0).unwrap();
        let b = hom_intrinsic(0.8, &HomSetup::new(0.5, 0.5, 0.02, 0.0).unwrap(), 0.0).unwrap();
        assert!(b.value > a.value);
        assert!(hom_intrinsic(0.8, &HomSetup::new(0.5, 0.5, 1.0, 0.0).unwrap(), 0.0).is_err());
    }

    #[test]
    fn setup_requires_unit_sum() {
        assert!(HomSetup::new(0.5, 0.6, 0.0, 0.0).is_err());
    }

    #[test]
    fn intercept_on_collinear_points() {
        let pts = [(0.01, 0.05), (0.02, 0.06), (0.04, 0.08)];
        let fit = v_intercept_fit(&pts).unwrap();
        assert!((fit.visibility - 0.96).abs() < 1e-14);
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!(fit.uncertainty < 1e-7);
        assert!(v_intercept_fit(&[(0.01, 0.1), (0.01, 0.2), (0.01, 0.3)]).is_err());
        assert!(v_intercept_fit(&pts[..2]).is_err());
    }

    #[test]
    fn blinking_values() {
        assert_eq!(blinking_fraction(0.0).unwrap(), 0.0);
        assert!((blinking_fraction(0.03).unwrap() - 0.0291).abs() < 1e-4);
        assert_eq!(blinking_fraction(f64::INFINITY).unwrap(), 1.0);
        assert!(blinking_fraction(1e300).unwrap() < 1.0 + 1e-15);
        assert!(blinking_fraction(-1.0).is_err());
        let b = bunching_from_fraction(0.03).unwrap();
        assert!((blinking_fraction(b).unwrap() - 0.03).abs() < 1e-15);
    }

    #[test]
    fn envelope_values() {
        assert!((blinking_envelope(0.0, 0.03, 0.25).unwrap() - 1.03).abs() < 1e-15);
        assert!((blinking_envelope(4.0, 0.03, 0.25).unwrap() - (1.0 + 0.03 / 1f64.exp())).abs() < 1e-15);
        assert!((blinking_envelope(1e6, 0.03, 0.25).unwrap() - 1.0).abs() < 1e-15);
        assert!(blinking_envelope(0.0, 0.03, 0.0).is_err());
    }
}
