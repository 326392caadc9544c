//! Start–stop correlation histograms and the quantities read off them.

use std::io::Write;

use rayon::prelude::*;

use super::stream::ClickStream;
use crate::error::{invalid, Error, Result};

/// Delay histogram `t_b − t_a` over whole repetition periods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    /// Repetition period, rounded to whole ps.
    pub rep_period_ps: u64,
    /// Number of complete side peaks on each side.
    pub periods: u64,
    /// Bin `k` is centred on `(k − n_half) · bin_width_ps`.
    pub counts: Vec<u64>,
}

impl CorrelationHistogram {
    fn n_half(&self) -> i64 {
        (self.counts.len() as i64 - 1) / 2
    }

    /// Centre of bin `k` (ps).
    pub fn delay(&self, k: usize) -> i64 {
        (k as i64 - self.n_half()) * self.bin_width_ps as i64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Peak index of each bin, `round(delay / rep)`.
    fn peak_of(&self, k: usize) -> i64 {
        (self.delay(k) as f64 / self.rep_period_ps as f64).round() as i64
    }

    /// Counts summed per peak, index `m + periods` for peak `m`.
    pub fn peak_areas(&self) -> Vec<u64> {
        let n = self.periods as i64;
        let mut areas = vec![0u64; (2 * n + 1) as usize];
        for (k, &c) in self.counts.iter().enumerate() {
            let m = self.peak_of(k);
            if m.abs() <= n {
                areas[(m + n) as usize] += c;
            }
        }
        areas
    }

    /// CSV with header `delay_ps,counts`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "delay_ps,counts")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", self.delay(k), c)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Histogram of all delays `t_b − t_a` within the largest whole number of
/// repetition periods inside `window_ps` (each side peak is complete).
/// Runs a sorted two-pointer sweep, sharded over `a`.
pub fn correlate(
    a: &ClickStream,
    b: &ClickStream,
    bin_width_ps: u64,
    window_ps: u64,
    rep_period_ps: u64,
) -> Result<CorrelationHistogram> {
    if bin_width_ps == 0 {
        return Err(invalid("bin_width", "must be positive"));
    }
    if rep_period_ps == 0 {
        return Err(invalid("rep_period", "must be positive"));
    }
    if window_ps < rep_period_ps {
        return Err(invalid(
            "window",
            format!("{window_ps} ps is shorter than one repetition period ({rep_period_ps} ps)"),
        ));
    }
    let periods = window_ps / rep_period_ps;
    let span = periods * rep_period_ps + rep_period_ps / 2;
    let n_half = span.div_ceil(bin_width_ps) as i64;
    let n_bins = (2 * n_half + 1) as usize;
    let ta: Vec<i64> = a.events.iter().map(|e| e.timestamp_ps as i64).collect();
    let tb: Vec<i64> = b.events.iter().map(|e| e.timestamp_ps as i64).collect();
    let span = span as i64;
    let bw = bin_width_ps as i64;

    let counts = ta
        .par_chunks(1 << 15)
        .map(|chunk| {
            let mut counts = vec![0u64; n_bins];
            let mut lo = tb.partition_point(|&t| t < chunk[0] - span);
            for &t in chunk {
                while lo < tb.len() && tb[lo] < t - span {
                    lo += 1;
                }
                let mut j = lo;
                while j < tb.len() && tb[j] <= t + span {
                    let d = tb[j] - t;
                    // Round half away from zero so bins are symmetric.
                    let k = if d >= 0 { (d + bw / 2) / bw } else { -((-d + bw / 2) / bw) };
                    let idx = k + n_half;
                    if (0..n_bins as i64).contains(&idx) {
                        counts[idx as usize] += 1;
                    }
                    j += 1;
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; n_bins],
            |mut x, y| {
                for (u, v) in x.iter_mut().zip(y) {
                    *u += v;
                }
                x
            },
        );
    Ok(CorrelationHistogram {
        bin_width_ps,
        rep_period_ps,
        periods,
        counts,
    })
}

/// Which side peaks normalise the central peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    /// Centre of the reference region (ns), used on both sides.
    pub delay_ns: f64,
    /// Full width of the reference region (ns).
    pub span_ns: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            delay_ns: 50_000.0,
            span_ns: 5_000.0,
        }
    }
}

/// Double-sided exponential convolved with a Gaussian instrument response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakShape {
    /// Decay rate of each side (ns⁻¹).
    pub decay_rate: f64,
    /// Standard deviation of the Gaussian response (ns); may be zero.
    pub irf_sigma: f64,
}

impl PeakShape {
    fn validate(&self) -> Result<()> {
        if !(self.decay_rate > 0.0) || !self.decay_rate.is_finite() {
            return Err(invalid("decay_rate", "must be positive"));
        }
        if !(self.irf_sigma >= 0.0) || !self.irf_sigma.is_finite() {
            return Err(invalid("irf_sigma", "must be non-negative"));
        }
        Ok(())
    }

    /// Cumulative distribution of the unit-area peak at `x` ns from its centre.
    pub fn cdf(&self, x: f64) -> f64 {
        let g = self.decay_rate;
        let s = self.irf_sigma;
        if s == 0.0 {
            return if x < 0.0 {
                0.5 * (g * x).exp()
            } else {
                1.0 - 0.5 * (-g * x).exp()
            };
        }
        let phi = |y: f64| 0.5 * libm::erfc(-y / std::f64::consts::SQRT_2);
        // e^{a} Φ(y), dropped once Φ underflows; the product is bounded.
        let term = |a: f64, y: f64| if y < -37.0 { 0.0 } else { (a).exp() * phi(y) };
        let q = 0.5 * g * g * s * s;
        phi(x / s) - 0.5 * (term(q - g * x, x / s - g * s) - term(q + g * x, -x / s - g * s))
    }
}

/// How peak amplitudes are measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeakMethod {
    /// Counts assigned to each peak.
    Area,
    /// Counts within `core` (ns) of the peak centre, divided by the fraction of
    /// the model peak that falls in those bins.
    Fit { shape: PeakShape, core: f64 },
}

/// A normalised peak ratio with its Poisson uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakRatio {
    pub value: f64,
    pub uncertainty: f64,
    pub central_counts: u64,
    pub reference_counts: u64,
    pub reference_peaks: usize,
}

fn reference_peaks(hist: &CorrelationHistogram, norm: &Normalization) -> Result<Vec<i64>> {
    let rep_ns = hist.rep_period_ps as f64 * 1e-3;
    let max_ns = hist.periods as f64 * rep_ns;
    if !(norm.delay_ns > 0.0) || norm.delay_ns > max_ns || !(norm.span_ns >= 0.0) {
        return Err(Error::OutOfRange(format!(
            "normalisation delay {} ns outside window (±{max_ns} ns)",
            norm.delay_ns
        )));
    }
    let n = hist.periods as i64;
    let peaks: Vec<i64> = (-n..=n)
        .filter(|&m| m != 0)
        .filter(|&m| ((m.abs() as f64) * rep_ns - norm.delay_ns).abs() <= 0.5 * norm.span_ns)
        .collect();
    if peaks.is_empty() {
        return Err(Error::EmptyData("no side peaks in the normalisation region".into()));
    }
    Ok(peaks)
}

/// Counts and model mass of peak `m`.
fn peak_measure(hist: &CorrelationHistogram, m: i64, method: &PeakMethod) -> (u64, f64) {
    let rep = hist.rep_period_ps as f64;
    let bw = hist.bin_width_ps as f64;
    let centre = m as f64 * rep;
    let n_half = hist.n_half();
    let k_lo = ((centre - 0.5 * rep) / bw).floor() as i64 + n_half - 1;
    let k_hi = ((centre + 0.5 * rep) / bw).ceil() as i64 + n_half + 1;
    let mut counts = 0;
    let mut lo_edge = f64::INFINITY;
    let mut hi_edge = f64::NEG_INFINITY;
    for k in k_lo.max(0)..=k_hi.min(hist.counts.len() as i64 - 1) {
        let k = k as usize;
        if hist.peak_of(k) != m {
            continue;
        }
        let d = hist.delay(k) as f64;
        if let PeakMethod::Fit { core, .. } = method {
            if (d - centre).abs() > core * 1e3 {
                continue;
            }
        }
        counts += hist.counts[k];
        lo_edge = lo_edge.min(d - 0.5 * bw);
        hi_edge = hi_edge.max(d + 0.5 * bw);
    }
    let mass = match method {
        PeakMethod::Area => 1.0,
        PeakMethod::Fit { shape, .. } => {
            if lo_edge > hi_edge {
                0.0
            } else {
                shape.cdf((hi_edge - centre) * 1e-3) - shape.cdf((lo_edge - centre) * 1e-3)
            }
        }
    };
    (counts, mass)
}

/// Central peak relative to the mean reference side peak.
pub fn central_ratio(
    hist: &CorrelationHistogram,
    norm: &Normalization,
    method: &PeakMethod,
) -> Result<PeakRatio> {
    if let PeakMethod::Fit { shape, core } = method {
        shape.validate()?;
        if !(*core > 0.0) {
            return Err(invalid("core", "must be positive"));
        }
    }
    let peaks = reference_peaks(hist, norm)?;
    let (c0, m0) = peak_measure(hist, 0, method);
    let mut ref_counts = 0;
    let mut ref_amp = 0.0;
    for &m in &peaks {
        let (c, mass) = peak_measure(hist, m, method);
        ref_counts += c;
        ref_amp += c as f64 / mass;
    }
    if ref_counts == 0 {
        return Err(Error::EmptyData("reference side peaks are empty".into()));
    }
    let mean_ref = ref_amp / peaks.len() as f64;
    let value = c0 as f64 / m0 / mean_ref;
    let rel_ref = 1.0 / ref_counts as f64;
    let uncertainty = if c0 > 0 {
        value * (1.0 / c0 as f64 + rel_ref).sqrt()
    } else {
        // One count as the Poisson scale of an empty peak.
        1.0 / m0 / mean_ref
    };
    Ok(PeakRatio {
        value,
        uncertainty,
        central_counts: c0,
        reference_counts: ref_counts,
        reference_peaks: peaks.len(),
    })
}

/// g²(0) from an HBT histogram.
pub fn extract_g2(
    hist: &CorrelationHistogram,
    norm: &Normalization,
    method: &PeakMethod,
) -> Result<PeakRatio> {
    central_ratio(hist, norm, method)
}

/// Raw two-photon visibility with its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawVisibility {
    pub value: f64,
    pub uncertainty: f64,
    pub a_parallel: f64,
    pub a_perp: f64,
}

/// `V_raw = 1 − A∥/A⊥`, each central area normalised to its own long-delay peaks.
pub fn extract_vraw(
    co: &CorrelationHistogram,
    cross: &CorrelationHistogram,
    norm: &Normalization,
) -> Result<RawVisibility> {
    if co.periods < 5 || cross.periods < 5 {
        return Err(invalid("window", "histograms must span at least 5 periods"));
    }
    let par = central_ratio(co, norm, &PeakMethod::Area)?;
    let perp = central_ratio(cross, norm, &PeakMethod::Area)?;
    if perp.central_counts == 0 {
        return Err(Error::EmptyData("cross-polarised central peak is empty".into()));
    }
    let ratio = par.value / perp.value;
    let rel_par = if par.central_counts > 0 {
        1.0 / par.central_counts as f64
    } else {
        0.0
    } + 1.0 / par.reference_counts as f64;
    let rel_perp = 1.0 / perp.central_counts as f64 + 1.0 / perp.reference_counts as f64;
    let uncertainty = if par.central_counts > 0 {
        ratio * (rel_par + rel_perp).sqrt()
    } else {
        par.uncertainty / perp.value
    };
    Ok(RawVisibility {
        value: 1.0 - ratio,
        uncertainty,
        a_parallel: par.value,
        a_perp: perp.value,
    })
}

/// Fit of `y(τ) = c (1 + b e^{−λ|τ|})` to side-peak areas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlinkingFit {
    /// `1 + b`, the bunching maximum relative to the long-delay level.
    pub amplitude: f64,
    pub amplitude_error: f64,
    /// λ in µs⁻¹.
    pub rate: f64,
    pub rate_error: f64,
    /// Long-delay peak area `c`.
    pub baseline: f64,
}

/// Weighted least squares of `y = a0 + a1·x` with Poisson weights; returns
/// `(a0, a1, chi², covariance)`.
fn linear_fit(pts: &[(f64, f64, f64)], lambda: f64) -> Option<(f64, f64, f64, [[f64; 2]; 2])> {
    let (mut s, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(tau, y, w) in pts {
        let x = (-lambda * tau).exp();
        s += w;
        sx += w * x;
        sxx += w * x * x;
        sy += w * y;
        sxy += w * x * y;
    }
    let det = s * sxx - sx * sx;
    if !(det.abs() > 1e-300) {
        return None;
    }
    let a1 = (s * sxy - sx * sy) / det;
    let a0 = (sy - a1 * sx) / s;
    let chi2 = pts
        .iter()
        .map(|&(tau, y, w)| w * (y - a0 - a1 * (-lambda * tau).exp()).powi(2))
        .sum();
    let cov = [[sxx / det, -sx / det], [-sx / det, s / det]];
    Some((a0, a1, chi2, cov))
}

/// Fits the blinking envelope to side peaks with `|τ| ≥ exclude_ns`.
/// λ is found by a log-spaced scan refined with golden-section search; the
/// amplitude and baseline follow in closed form for each λ.
pub fn fit_blinking(hist: &CorrelationHistogram, exclude_ns: f64) -> Result<BlinkingFit> {
    let rep_us = hist.rep_period_ps as f64 * 1e-6;
    let areas = hist.peak_areas();
    let n = hist.periods as i64;
    let pts: Vec<(f64, f64, f64)> = (-n..=n)
        .filter(|&m| (m.abs() as f64) * rep_us * 1e3 >= exclude_ns && m != 0)
        .map(|m| {
            let y = areas[(m + n) as usize] as f64;
            (m.abs() as f64 * rep_us, y, 1.0 / y.max(1.0))
        })
        .collect();
    if pts.len() < 4 {
        return Err(Error::EmptyData("too few side peaks outside the exclusion".into()));
    }
    if pts.iter().all(|p| p.1 == 0.0) {
        return Err(Error::EmptyData("side peaks are empty".into()));
    }
    let tau_max = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let chi2 = |ln_l: f64| linear_fit(&pts, ln_l.exp()).map_or(f64::INFINITY, |f| f.2);

    let lo = (0.01 / tau_max).ln();
    let hi = (100.0 / rep_us).ln().min((1e4f64).ln());
    let steps = 200;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
        .collect();
    let best = (0..grid.len())
        .min_by(|&i, &j| chi2(grid[i]).total_cmp(&chi2(grid[j])))
        .expect("non-empty grid");
    let (mut a, mut b) = (
        grid[best.saturating_sub(1)],
        grid[(best + 1).min(grid.len() - 1)],
    );
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (chi2(c), chi2(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = chi2(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = chi2(d);
        }
    }
    let ln_l = 0.5 * (a + b);
    let lambda = ln_l.exp();
    let (a0, a1, chi_min, cov) = linear_fit(&pts, lambda)
        .ok_or_else(|| Error::Singular("blinking fit is degenerate".into()))?;
    if !(a0 > 0.0) {
        return Err(Error::DegenerateFit("non-positive baseline".into()));
    }
    let amplitude = 1.0 + a1 / a0;
    // Delta method on a1/a0.
    let r = a1 / a0;
    let var_amp = (cov[1][1] - 2.0 * r * cov[0][1] + r * r * cov[0][0]) / (a0 * a0);
    // Curvature of chi² in λ.
    let h = 1e-3 * lambda;
    let curv = (linear_fit(&pts, lambda + h).map_or(chi_min, |f| f.2) - 2.0 * chi_min
        + linear_fit(&pts, lambda - h).map_or(chi_min, |f| f.2))
        / (h * h);
    let rate_error = if curv > 0.0 {
        (2.0 / curv).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(BlinkingFit {
        amplitude,
        amplitude_error: var_amp.max(0.0).sqrt(),
        rate: lambda,
        rate_error,
        baseline: a0,
    })
}
