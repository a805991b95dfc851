//! Core time-series types: price bars, log returns, power transformations and
//! summary moments.
//!
//! Everything downstream (autocorrelation sweeps, APARCH filtering and
//! estimation) consumes a [`ReturnSeries`]; ingestion produces a [`BarSeries`].
//! All values are immutable after construction and safe to share across
//! threads.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interval close prices for one contract, strictly ordered in time.
#[derive(Debug, Clone, PartialEq)]
pub struct BarSeries {
    timestamps: Vec<NaiveDateTime>,
    close_prices: Vec<f64>,
    intervals_per_day: u32,
    contract_id: String,
}

impl BarSeries {
    /// Build a bar series, validating that timestamps strictly increase and
    /// every close is positive.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        close_prices: Vec<f64>,
        intervals_per_day: u32,
        contract_id: impl Into<String>,
    ) -> Result<Self> {
        if timestamps.len() != close_prices.len() {
            return Err(Error::InvalidSeries(format!(
                "{} timestamps vs {} prices",
                timestamps.len(),
                close_prices.len()
            )));
        }
        if intervals_per_day == 0 {
            return Err(Error::InvalidSeries(
                "intervals_per_day must be positive".into(),
            ));
        }
        for w in timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidSeries(format!(
                    "timestamps not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        for (ts, &p) in timestamps.iter().zip(&close_prices) {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::NonPositivePrice {
                    timestamp: *ts,
                    price: p,
                });
            }
        }
        Ok(Self {
            timestamps,
            close_prices,
            intervals_per_day,
            contract_id: contract_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.close_prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.close_prices.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn close_prices(&self) -> &[f64] {
        &self.close_prices
    }

    pub fn intervals_per_day(&self) -> u32 {
        self.intervals_per_day
    }

    pub fn contract_id(&self) -> &str {
        &self.contract_id
    }
}

/// Ordered log-return observations with interval metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    values: Vec<f64>,
    timestamps: Vec<NaiveDateTime>,
    intervals_per_day: u32,
}

impl ReturnSeries {
    pub fn new(
        values: Vec<f64>,
        timestamps: Vec<NaiveDateTime>,
        intervals_per_day: u32,
    ) -> Result<Self> {
        if values.len() != timestamps.len() {
            return Err(Error::InvalidSeries(format!(
                "{} values vs {} timestamps",
                values.len(),
                timestamps.len()
            )));
        }
        if intervals_per_day == 0 {
            return Err(Error::InvalidSeries(
                "intervals_per_day must be positive".into(),
            ));
        }
        Ok(Self {
            values,
            timestamps,
            intervals_per_day,
        })
    }

    /// Convenience constructor for synthetic data: timestamps are spaced
    /// `step_secs` apart starting at `start`.
    pub fn from_values(
        values: Vec<f64>,
        start: NaiveDateTime,
        step_secs: i64,
        intervals_per_day: u32,
    ) -> Result<Self> {
        let timestamps = (0..values.len() as i64)
            .map(|i| start + chrono::Duration::seconds(i * step_secs))
            .collect();
        Self::new(values, timestamps, intervals_per_day)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn intervals_per_day(&self) -> u32 {
        self.intervals_per_day
    }

    /// Replace the interval count metadata, e.g. after loading from CSV.
    pub fn with_intervals_per_day(mut self, intervals_per_day: u32) -> Result<Self> {
        if intervals_per_day == 0 {
            return Err(Error::InvalidSeries(
                "intervals_per_day must be positive".into(),
            ));
        }
        self.intervals_per_day = intervals_per_day;
        Ok(self)
    }

    fn require_len(&self, min: usize, what: &str) -> Result<()> {
        if self.len() < min {
            return Err(Error::InsufficientData(format!(
                "{what} needs at least {min} observations, have {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Power transformation applied to a return series before autocorrelation
/// analysis: `|r|^k` in absolute mode, `(r^2)^k` in squared mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTransform {
    k: f64,
    mode: TransformMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformMode {
    Absolute,
    Squared,
}

impl std::fmt::Display for TransformMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransformMode::Absolute => write!(f, "absolute"),
            TransformMode::Squared => write!(f, "squared"),
        }
    }
}

impl PowerTransform {
    pub fn new(k: f64, mode: TransformMode) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "power transform exponent must be positive, got {k}"
            )));
        }
        Ok(Self { k, mode })
    }

    pub fn absolute(k: f64) -> Result<Self> {
        Self::new(k, TransformMode::Absolute)
    }

    pub fn squared(k: f64) -> Result<Self> {
        Self::new(k, TransformMode::Squared)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn mode(&self) -> TransformMode {
        self.mode
    }

    /// The exponent actually applied to `|r|`. Squared mode uses `2k` so that
    /// `(r^2)^k` and `|r|^(2k)` agree bit for bit.
    pub fn effective_exponent(&self) -> f64 {
        match self.mode {
            TransformMode::Absolute => self.k,
            TransformMode::Squared => 2.0 * self.k,
        }
    }

    pub fn apply(&self, r: f64) -> f64 {
        r.abs().powf(self.effective_exponent())
    }
}

/// First differences of log closing prices.
///
/// Timestamp layout in series CSV files: ISO-8601 at seconds precision.
pub const CSV_TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

fn series_csv(timestamps: &[NaiveDateTime], values: &[f64]) -> String {
    let mut out = String::from("timestamp,value\n");
    for (ts, v) in timestamps.iter().zip(values) {
        out.push_str(&format!("{},{v}\n", ts.format(CSV_TIMESTAMP_FORMAT)));
    }
    out
}

/// Parse a two-column `timestamp,value` CSV; values must be finite.
fn parse_series_csv(text: &str) -> Result<(Vec<NaiveDateTime>, Vec<f64>)> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let mut cols = header.split(',').map(str::trim);
    if cols.next() != Some("timestamp") || cols.next() != Some("value") || cols.next().is_some() {
        return Err(Error::BadHeader(format!(
            "expected 'timestamp,value', got '{header}'"
        )));
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = || -> Option<(NaiveDateTime, f64)> {
            let (ts_text, v_text) = line.split_once(',')?;
            let ts =
                NaiveDateTime::parse_from_str(ts_text.trim(), CSV_TIMESTAMP_FORMAT).ok()?;
            let v: f64 = v_text.trim().parse().ok()?;
            v.is_finite().then_some((ts, v))
        };
        let Some((ts, v)) = parse() else {
            return Err(Error::Format(format!("line {}: '{line}'", i + 2)));
        };
        timestamps.push(ts);
        values.push(v);
    }
    Ok((timestamps, values))
}

impl BarSeries {
    /// Two-column `timestamp,value` CSV at seconds precision. Float values
    /// print in shortest round-trip form, so a parse restores them exactly.
    pub fn to_csv(&self) -> String {
        series_csv(&self.timestamps, &self.close_prices)
    }

    /// Parse [`Self::to_csv`] output. The interval count and contract label
    /// are not carried by the format and must be resupplied.
    pub fn from_csv(
        text: &str,
        intervals_per_day: u32,
        contract_id: impl Into<String>,
    ) -> Result<Self> {
        let (timestamps, values) = parse_series_csv(text)?;
        Self::new(timestamps, values, intervals_per_day, contract_id)
    }
}

impl ReturnSeries {
    /// Two-column `timestamp,value` CSV at seconds precision. Float values
    /// print in shortest round-trip form, so a parse restores them exactly.
    pub fn to_csv(&self) -> String {
        series_csv(&self.timestamps, &self.values)
    }

    /// Parse [`Self::to_csv`] output. The interval count is not carried by
    /// the format; it defaults to 1, see [`Self::with_intervals_per_day`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let (timestamps, values) = parse_series_csv(text)?;
        Self::new(values, timestamps, 1)
    }
}

/// `values[i] = ln(close[i+1]) - ln(close[i])`, stamped with the later bar's
/// timestamp. With `drop_overnight`, pairs that span a calendar-day boundary
/// are omitted.
pub fn log_returns(bars: &BarSeries, drop_overnight: bool) -> Result<ReturnSeries> {
    if bars.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "log returns need at least 2 bars, have {}",
            bars.len()
        )));
    }
    let ts = bars.timestamps();
    let px = bars.close_prices();
    let mut values = Vec::with_capacity(bars.len() - 1);
    let mut out_ts = Vec::with_capacity(bars.len() - 1);
    for i in 0..bars.len() - 1 {
        for (t, p) in [(ts[i], px[i]), (ts[i + 1], px[i + 1])] {
            if !(p > 0.0) {
                return Err(Error::NonPositivePrice {
                    timestamp: t,
                    price: p,
                });
            }
        }
        if drop_overnight && ts[i].date() != ts[i + 1].date() {
            continue;
        }
        values.push(px[i + 1].ln() - px[i].ln());
        out_ts.push(ts[i + 1]);
    }
    ReturnSeries::new(values, out_ts, bars.intervals_per_day())
}

/// Elementwise power transformation of a return series.
pub fn power_transform(series: &ReturnSeries, t: PowerTransform) -> ReturnSeries {
    let values = series.values().iter().map(|&r| t.apply(r)).collect();
    ReturnSeries {
        values,
        timestamps: series.timestamps.clone(),
        intervals_per_day: series.intervals_per_day,
    }
}

/// Sample moments under the population convention (divide by n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(series: &ReturnSeries) -> Result<Moments> {
    series.require_len(4, "moments")?;
    let x = series.values();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return Err(Error::DegenerateSeries(
            "zero variance; moments undefined".into(),
        ));
    }
    Ok(Moments {
        mean,
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    })
}
