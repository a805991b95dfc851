//! Autocorrelation engine and long-memory diagnostics.
//!
//! The sample autocorrelation at lag `j` is
//!
//! ```text
//! rho(j) = sum_{t=j+1..n} (x_t - xbar)(x_{t-j} - xbar) / sum_{t=1..n} (x_t - xbar)^2
//! ```
//!
//! with a two-sided 5% significance band `1.96 / sqrt(n)`. Long memory shows
//! up as hyperbolic decay `rho(j) ~ C j^(2d-1)`; [`estimate_d`] recovers the
//! fractional-integration degree `d` by least squares on the log-log curve.
//! [`power_sweep`] counts significant lags across power transformations of
//! the returns, and [`periodicity_profile`] slices the ACF over a trading
//! week to expose intraday seasonality.

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::series::{power_transform, PowerTransform, ReturnSeries, TransformMode};

/// Two-sided 5% critical value for an asymptotically standard-normal
/// autocorrelation estimate.
const Z_TWO_SIDED_5PCT: f64 = 1.96;

/// Exponents swept by default: `k` in squared mode `(r^2)^k` and absolute
/// mode `|r|^k`.
pub const DEFAULT_SWEEP_KS: [f64; 8] = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

/// Default lag horizon: one tenth of the sample.
pub fn default_max_lag(n: usize) -> usize {
    n / 10
}

/// Significance band for a sample of size `n`.
pub fn significance_band(n: usize) -> f64 {
    Z_TWO_SIDED_5PCT / (n as f64).sqrt()
}

/// Sample autocorrelations for lags `1..=max_lag` with their significance
/// band. Lag 0 (identically 1) is not stored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcfResult {
    rho: Vec<f64>,
    band: f64,
    n: usize,
}

impl AcfResult {
    /// Assemble a result from precomputed correlations, validating
    /// `|rho| <= 1` and a positive band.
    pub fn from_parts(rho: Vec<f64>, band: f64, n: usize) -> Result<Self> {
        if !(band > 0.0) || !band.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "significance band must be positive, got {band}"
            )));
        }
        for (i, &r) in rho.iter().enumerate() {
            if !r.is_finite() || r.abs() > 1.0 + 1e-12 {
                return Err(Error::InvalidSeries(format!(
                    "autocorrelation at lag {} out of [-1, 1]: {r}",
                    i + 1
                )));
            }
        }
        Ok(Self { rho, band, n })
    }

    pub fn max_lag(&self) -> usize {
        self.rho.len()
    }

    /// Lags covered, starting at 1.
    pub fn lags(&self) -> impl Iterator<Item = usize> {
        1..=self.rho.len()
    }

    /// Correlations indexed by lag minus one.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Correlation at a 1-based lag.
    pub fn rho_at(&self, lag: usize) -> Option<f64> {
        if lag == 0 {
            return None;
        }
        self.rho.get(lag - 1).copied()
    }

    pub fn band(&self) -> f64 {
        self.band
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Two-column `lag,rho` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,rho\n");
        for (lag, r) in self.lags().zip(&self.rho) {
            out.push_str(&format!("{lag},{r}\n"));
        }
        out
    }
}

/// Counts of lags whose correlation clears the significance band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SignificanceCounts {
    pub n_positive: usize,
    pub n_negative: usize,
    pub max_lag: usize,
}

/// Least-squares fit of `rho(j) = C j^(2d-1)` over positive-correlation lags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperbolicFit {
    /// Scale constant `C`.
    pub c: f64,
    /// Fractional-integration degree `d`.
    pub d: f64,
    /// Lag window the fit was requested over.
    pub lag_range: (usize, usize),
    /// Lags actually used (positive correlations inside the window).
    pub n_lags_used: usize,
    pub r_squared: f64,
}

/// ACF slice covering `days` trading days, for seasonality plots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicityProfile {
    rho: Vec<f64>,
    intervals_per_day: u32,
    days: u32,
    band: f64,
}

impl PeriodicityProfile {
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn intervals_per_day(&self) -> u32 {
        self.intervals_per_day
    }

    pub fn days(&self) -> u32 {
        self.days
    }

    pub fn band(&self) -> f64 {
        self.band
    }

    /// Lags at whole-day boundaries, e.g. 120, 240, ... for a 120-interval
    /// session.
    pub fn day_boundaries(&self) -> Vec<usize> {
        (1..=self.days as usize)
            .map(|d| d * self.intervals_per_day as usize)
            .collect()
    }

    /// Two-column `lag,rho` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lag,rho\n");
        for (i, r) in self.rho.iter().enumerate() {
            out.push_str(&format!("{},{r}\n", i + 1));
        }
        out
    }
}

/// Significant-lag counts for every (mode, k) cell of a power-transform
/// sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub label: String,
    pub ks: Vec<f64>,
    pub n: usize,
    pub max_lag: usize,
    pub band: f64,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mode: TransformMode,
    pub counts: Vec<SignificanceCounts>,
}

impl SweepTable {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Cell for a given mode and exponent, if present.
    pub fn cell(&self, mode: TransformMode, k: f64) -> Option<SignificanceCounts> {
        let col = self.ks.iter().position(|&kk| kk == k)?;
        let row = self.rows.iter().find(|r| r.mode == mode)?;
        row.counts.get(col).copied()
    }

    /// CSV with one row per mode and one `pos/neg` cell per exponent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,mode");
        for k in &self.ks {
            out.push_str(&format!(",k={k}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!("{},{}", self.label, row.mode));
            for c in &row.counts {
                out.push_str(&format!(",{}/{}", c.n_positive, c.n_negative));
            }
            out.push('\n');
        }
        out
    }
}

/// Sample autocorrelation function for lags `1..=max_lag`.
///
/// Computed through an FFT of the centered series (zero-padded to a power of
/// two), which matches the naive double loop to high precision while scaling
/// as `O(m log m)`.
pub fn acf(series: &ReturnSeries, max_lag: usize) -> Result<AcfResult> {
    let x = series.values();
    let n = x.len();
    if max_lag == 0 || max_lag >= n {
        return Err(Error::LagRange { max_lag, n });
    }
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidSeries(format!(
            "non-finite value {bad} in series"
        )));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|&v| v - mean).collect();
    let sums = autocov_sums_fft(&centered, max_lag);
    let s0 = sums[0];
    if !(s0 > 0.0) {
        return Err(Error::DegenerateSeries(
            "zero variance; autocorrelation undefined".into(),
        ));
    }
    let rho: Vec<f64> = sums[1..].iter().map(|&s| s / s0).collect();
    Ok(AcfResult {
        rho,
        band: significance_band(n),
        n,
    })
}

/// Raw lagged cross-product sums of an already-centered series, for lags
/// `0..=max_lag`, up to one common positive scale factor (it cancels in the
/// correlation ratio).
fn autocov_sums_fft(centered: &[f64], max_lag: usize) -> Vec<f64> {
    let n = centered.len();
    // Pad beyond n + max_lag so the circular correlation has no wrap-around
    // in the lags we keep; a power of two keeps the common scale factor
    // exactly cancellable.
    let m = (n + max_lag + 1).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = centered
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for z in &mut buf {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    buf[..=max_lag].iter().map(|z| z.re).collect()
}

/// Count lags strictly outside the `+/- band` interval.
pub fn count_significant(acf: &AcfResult) -> SignificanceCounts {
    let mut n_positive = 0;
    let mut n_negative = 0;
    for &r in &acf.rho {
        if r > acf.band {
            n_positive += 1;
        } else if r < -acf.band {
            n_negative += 1;
        }
    }
    SignificanceCounts {
        n_positive,
        n_negative,
        max_lag: acf.rho.len(),
    }
}

/// Significant-lag counts for every exponent in `ks` under both squared and
/// absolute transforms. Cells are independent and evaluated in parallel.
pub fn power_sweep(series: &ReturnSeries, ks: &[f64], max_lag: usize) -> Result<SweepTable> {
    if ks.is_empty() {
        return Err(Error::InvalidParameter("empty exponent list".into()));
    }
    for &k in ks {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sweep exponents must be positive, got {k}"
            )));
        }
    }
    let modes = [TransformMode::Squared, TransformMode::Absolute];
    let cells: Vec<(TransformMode, f64)> = modes
        .iter()
        .flat_map(|&m| ks.iter().map(move |&k| (m, k)))
        .collect();
    let counts: Result<Vec<SignificanceCounts>> = cells
        .par_iter()
        .map(|&(mode, k)| {
            let transformed = power_transform(series, PowerTransform::new(k, mode)?);
            Ok(count_significant(&acf(&transformed, max_lag)?))
        })
        .collect();
    let counts = counts?;
    let rows = modes
        .iter()
        .enumerate()
        .map(|(i, &mode)| SweepRow {
            mode,
            counts: counts[i * ks.len()..(i + 1) * ks.len()].to_vec(),
        })
        .collect();
    Ok(SweepTable {
        label: String::new(),
        ks: ks.to_vec(),
        n: series.len(),
        max_lag,
        band: significance_band(series.len()),
        rows,
    })
}

/// Fit `rho(j) = C j^(2d-1)` by regressing `ln rho` on `ln j` over the lags
/// in `[j_min, j_max]` with positive correlation. Non-positive correlations
/// are dropped; at least 10 positive lags are required.
pub fn estimate_d(acf: &AcfResult, j_min: usize, j_max: usize) -> Result<HyperbolicFit> {
    if j_min == 0 || j_min > j_max {
        return Err(Error::InvalidParameter(format!(
            "bad lag window [{j_min}, {j_max}]"
        )));
    }
    let j_hi = j_max.min(acf.max_lag());
    let points: Vec<(f64, f64)> = (j_min..=j_hi)
        .filter_map(|j| {
            let r = acf.rho[j - 1];
            (r > 0.0).then(|| ((j as f64).ln(), r.ln()))
        })
        .collect();
    if points.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "hyperbolic fit needs >= 10 positive-correlation lags in [{j_min}, {j_max}], found {}",
            points.len()
        )));
    }
    let m = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &points {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData(
            "hyperbolic fit needs more than one distinct lag".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res = (syy - slope * sxy).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(HyperbolicFit {
        c: intercept.exp(),
        d: (slope + 1.0) / 2.0,
        lag_range: (j_min, j_max),
        n_lags_used: points.len(),
        r_squared,
    })
}

/// Default trading-week span for [`periodicity_profile`].
pub const DEFAULT_PROFILE_DAYS: u32 = 5;

/// Slice the ACF over `days` full trading days.
pub fn periodicity_profile(
    acf: &AcfResult,
    intervals_per_day: u32,
    days: u32,
) -> Result<PeriodicityProfile> {
    if intervals_per_day == 0 || days == 0 {
        return Err(Error::InvalidParameter(
            "periodicity profile needs positive intervals_per_day and days".into(),
        ));
    }
    let needed = intervals_per_day as usize * days as usize;
    if acf.max_lag() < needed {
        return Err(Error::LagRange {
            max_lag: needed,
            n: acf.max_lag(),
        });
    }
    Ok(PeriodicityProfile {
        rho: acf.rho[..needed].to_vec(),
        intervals_per_day,
        days,
        band: acf.band,
    })
}
