//! Interference metrics over detector counts: raw and dark-subtracted
//! visibility, cosine fringe fits against modulator voltage, and windowed
//! time-series summaries.

use std::f64::consts::PI;

use crate::detection::CountRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityResult {
    pub value: f64,
    /// 1-sigma Poisson uncertainty, treating the rates as counts.
    pub uncertainty: f64,
    /// Dark counts were subtracted.
    pub net: bool,
    /// A dark-subtracted rate went negative and was clamped to zero.
    pub clamped: bool,
}

/// `|c2 - c1| / (c2 + c1)` for two count rates.
pub fn visibility(c1: f64, c2: f64) -> Result<VisibilityResult> {
    let sum = c1 + c2;
    if !(sum > 0.0) {
        return Err(Error::UndefinedVisibility);
    }
    let value = ((c2 - c1).abs() / sum).min(1.0);
    let uncertainty = 2.0 * (c1 * c1 * c2 + c2 * c2 * c1).max(0.0).sqrt() / (sum * sum);
    Ok(VisibilityResult {
        value,
        uncertainty,
        net: false,
        clamped: false,
    })
}

/// Visibility after subtracting each detector's dark rate.
pub fn net_visibility(c1: f64, c2: f64, dark1: f64, dark2: f64) -> Result<VisibilityResult> {
    let n1 = c1 - dark1;
    let n2 = c2 - dark2;
    let mut v = visibility(n1.max(0.0), n2.max(0.0))?;
    v.net = true;
    v.clamped = n1 < 0.0 || n2 < 0.0;
    Ok(v)
}

/// One point of a fringe scan: drive voltage, rate, and its 1-sigma error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitPoint {
    pub voltage: f64,
    pub rate: f64,
    pub sigma: f64,
}

/// Weighted fit of `C(V) = A (1 + vis cos(pi V / v_pi + phi0))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub amplitude: f64,
    pub v_pi_fit: f64,
    pub phi0: f64,
    pub visibility: f64,
    pub r_squared: f64,
    pub visibility_sigma: f64,
    pub v_pi_sigma: f64,
    pub chi_squared: f64,
}

impl FringeFit {
    pub fn model(&self, voltage: f64) -> f64 {
        self.amplitude * (1.0 + self.visibility * (PI * voltage / self.v_pi_fit + self.phi0).cos())
    }

    /// Residuals `rate - model` at each point.
    pub fn residuals(&self, points: &[FitPoint]) -> Vec<f64> {
        points.iter().map(|p| p.rate - self.model(p.voltage)).collect()
    }
}

/// Number of runs of equal sign in `residuals` and the number expected
/// for independent signs with the same positive/negative split.
pub fn sign_runs(residuals: &[f64]) -> (usize, f64) {
    let signs: Vec<bool> = residuals.iter().filter(|r| **r != 0.0).map(|r| *r > 0.0).collect();
    if signs.is_empty() {
        return (0, 0.0);
    }
    let runs = 1 + signs.windows(2).filter(|w| w[0] != w[1]).count();
    let pos = signs.iter().filter(|s| **s).count() as f64;
    let neg = signs.len() as f64 - pos;
    let expected = 1.0 + 2.0 * pos * neg / (pos + neg);
    (runs, expected)
}

/// Solve a small dense system in place by Gaussian elimination with
/// partial pivoting. Returns `None` when singular.
fn solve_dense<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    let scale = a.iter().flat_map(|r| r.iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let tail: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

fn invert<const N: usize>(a: [[f64; N]; N]) -> Option<[[f64; N]; N]> {
    let mut inv = [[0.0; N]; N];
    for col in 0..N {
        let mut e = [0.0; N];
        e[col] = 1.0;
        let x = solve_dense(a, e)?;
        for row in 0..N {
            inv[row][col] = x[row];
        }
    }
    Some(inv)
}

/// Linear part of the fit at a fixed angular rate `k` (rad/V):
/// `rate ~ c0 + c1 cos(kV) + c2 sin(kV)`. Returns coefficients and chi^2.
fn linear_fit(points: &[FitPoint], k: f64) -> Option<([f64; 3], f64)> {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for p in points {
        let w = 1.0 / (p.sigma * p.sigma);
        let row = [1.0, (k * p.voltage).cos(), (k * p.voltage).sin()];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += w * row[i] * row[j];
            }
            atb[i] += w * row[i] * p.rate;
        }
    }
    let c = solve_dense(ata, atb)?;
    let chi2 = points
        .iter()
        .map(|p| {
            let m = c[0] + c[1] * (k * p.voltage).cos() + c[2] * (k * p.voltage).sin();
            ((p.rate - m) / p.sigma).powi(2)
        })
        .sum();
    Some((c, chi2))
}

const FIT_GRID: usize = 4000;

/// Fit a cosine fringe to `points`.
///
/// The fringe phase and amplitudes enter linearly once the period is
/// fixed, so the period is found by a grid search on chi^2 followed by a
/// golden-section refinement; the rest is an exact weighted solve.
pub fn fit_fringe(points: &[FitPoint]) -> Result<FringeFit> {
    if points.len() < 6 {
        return Err(Error::FitFailed(format!(
            "need at least 6 points, got {}",
            points.len()
        )));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p.sigma > 0.0 && p.sigma.is_finite() && p.rate.is_finite() && p.voltage.is_finite()))
    {
        return Err(Error::FitFailed(format!(
            "point at {} V has rate {} and sigma {}",
            p.voltage, p.rate, p.sigma
        )));
    }
    let mut volts: Vec<f64> = points.iter().map(|p| p.voltage).collect();
    volts.sort_by(f64::total_cmp);
    let span = volts[volts.len() - 1] - volts[0];
    let min_gap = volts
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !(span > 0.0) || !min_gap.is_finite() {
        return Err(Error::FitFailed("voltage span is degenerate".into()));
    }

    // v_pi from the sample spacing (Nyquist) up to twice the span
    let k_lo = PI / (2.0 * span);
    let k_hi = PI / min_gap;
    let chi2_at = |k: f64| linear_fit(points, k).map_or(f64::INFINITY, |(_, c)| c);
    let step = (k_hi - k_lo) / FIT_GRID as f64;
    let (best_i, best_chi2) = (0..=FIT_GRID)
        .map(|i| (i, chi2_at(k_lo + step * i as f64)))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    if !best_chi2.is_finite() {
        return Err(Error::FitFailed("normal equations singular at every period".into()));
    }

    let (mut a, mut b) = (
        (k_lo + step * (best_i as f64 - 1.0)).max(k_lo),
        (k_lo + step * (best_i as f64 + 1.0)).min(k_hi),
    );
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (chi2_at(c), chi2_at(d));
    for _ in 0..100 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = chi2_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = chi2_at(d);
        }
    }
    let k = 0.5 * (a + b);
    let (coef, chi2) =
        linear_fit(points, k).ok_or_else(|| Error::FitFailed("normal equations singular at the optimum".into()))?;

    let amplitude = coef[0];
    if !(amplitude > 0.0) {
        return Err(Error::FitFailed(format!("non-positive mean rate {amplitude}")));
    }
    let swing = coef[1].hypot(coef[2]);
    let visibility = (swing / amplitude).clamp(0.0, 1.0);
    let phi0 = (-coef[2]).atan2(coef[1]);
    let v_pi_fit = PI / k;

    let wsum: f64 = points.iter().map(|p| p.sigma.powi(-2)).sum();
    let mean = points.iter().map(|p| p.rate * p.sigma.powi(-2)).sum::<f64>() / wsum;
    let ss_tot: f64 = points.iter().map(|p| ((p.rate - mean) / p.sigma).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - chi2 / ss_tot } else { 0.0 };

    // Covariance of (A, vis, v_pi, phi0) from the weighted Jacobian.
    let mut jtj = [[0.0; 4]; 4];
    for p in points {
        let arg = PI * p.voltage / v_pi_fit + phi0;
        let (s, cs) = arg.sin_cos();
        let grad = [
            1.0 + visibility * cs,
            amplitude * cs,
            amplitude * visibility * s * PI * p.voltage / (v_pi_fit * v_pi_fit),
            -amplitude * visibility * s,
        ];
        let w = p.sigma.powi(-2);
        for i in 0..4 {
            for j in 0..4 {
                jtj[i][j] += w * grad[i] * grad[j];
            }
        }
    }
    let (visibility_sigma, v_pi_sigma) = match invert(jtj) {
        Some(cov) => (cov[1][1].max(0.0).sqrt(), cov[2][2].max(0.0).sqrt()),
        None => (f64::INFINITY, f64::INFINITY),
    };

    Ok(FringeFit {
        amplitude,
        v_pi_fit,
        phi0,
        visibility,
        r_squared,
        visibility_sigma,
        v_pi_sigma,
        chi_squared: chi2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateStats {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeseriesSummary {
    pub bins: usize,
    pub d1: RateStats,
    pub d2: RateStats,
    /// Per-bin net visibility averaged over the window, with its sample sd.
    pub net_visibility: RateStats,
    /// Mean of the per-bin Poisson-propagated visibility errors.
    pub mean_bin_uncertainty: f64,
    /// Bins whose visibility was undefined (no net counts).
    pub undefined_bins: usize,
}

fn stats(values: impl Iterator<Item = f64> + Clone) -> RateStats {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    RateStats { mean, sd }
}

/// Summarize the records whose bins start inside `[t0, t1)`.
pub fn summarize_timeseries(
    records: &[CountRecord],
    window: (f64, f64),
    dark1: f64,
    dark2: f64,
) -> Result<TimeseriesSummary> {
    let sel: Vec<&CountRecord> = records
        .iter()
        .filter(|r| r.t_start >= window.0 && r.t_start < window.1)
        .collect();
    if sel.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no records start inside [{}, {})",
            window.0, window.1
        )));
    }
    let d1 = stats(sel.iter().map(|r| r.rate_d1()));
    let d2 = stats(sel.iter().map(|r| r.rate_d2()));
    let vis: Vec<VisibilityResult> = sel
        .iter()
        .filter_map(|r| net_visibility(r.rate_d1(), r.rate_d2(), dark1, dark2).ok())
        .collect();
    let undefined_bins = sel.len() - vis.len();
    let net_visibility = if vis.is_empty() {
        RateStats {
            mean: f64::NAN,
            sd: f64::NAN,
        }
    } else {
        stats(vis.iter().map(|v| v.value))
    };
    let mean_bin_uncertainty = vis.iter().map(|v| v.uncertainty).sum::<f64>() / vis.len().max(1) as f64;
    Ok(TimeseriesSummary {
        bins: sel.len(),
        d1,
        d2,
        net_visibility,
        mean_bin_uncertainty,
        undefined_bins,
    })
}
