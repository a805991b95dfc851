//! Tick-file ingestion: delimited transaction records parsed against a
//! column-mapping descriptor, front delivery month selected by a daily
//! volume crossover, trades aggregated into fixed-width intraday bars.
//!
//! A bar covers the interval ending at its timestamp and closes at the last
//! trade in the interval; intervals without a trade are dropped, weekend
//! and holiday dates contribute nothing, and ticks outside session hours
//! are ignored. Returns spanning a contract roll are removed because the
//! price gap between delivery months is not a return.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::calendar::TradingCalendar;
use crate::error::{Error, Result};
use crate::series::{BarSeries, ReturnSeries};

/// Transaction record kind. Only kinds listed in
/// [`IngestConfig::trade_types_used`] reach bar construction; everything
/// else is parsed and counted but carries no price information forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordType {
    Trade,
    Bid,
    Ask,
    Other,
}

impl RecordType {
    fn parse(text: &str) -> Self {
        match text.trim().to_ascii_lowercase().as_str() {
            "trade" | "t" => Self::Trade,
            "bid" | "b" => Self::Bid,
            "ask" | "a" => Self::Ask,
            _ => Self::Other,
        }
    }
}

/// One tick: an instant, a delivery-month code, a price, a traded volume
/// and the record kind.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub timestamp: NaiveDateTime,
    pub expiry_code: String,
    pub price: f64,
    pub volume: u64,
    pub record_type: RecordType,
}

/// Column mapping for delimited tick files. Loaded from JSON; omitted keys
/// keep their defaults, and a missing `record_type_column` marks every
/// record as a trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TickFormat {
    pub delimiter: char,
    pub timestamp_column: String,
    pub timestamp_format: String,
    pub expiry_column: String,
    pub price_column: String,
    pub volume_column: String,
    pub record_type_column: Option<String>,
}

impl Default for TickFormat {
    fn default() -> Self {
        Self {
            delimiter: ',',
            timestamp_column: "timestamp".into(),
            timestamp_format: "%Y-%m-%dT%H:%M:%S".into(),
            expiry_column: "expiry".into(),
            price_column: "price".into(),
            volume_column: "volume".into(),
            record_type_column: Some("type".into()),
        }
    }
}

impl TickFormat {
    pub fn from_json(text: &str) -> Result<Self> {
        let format: Self =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("tick format: {e}")))?;
        if !format.delimiter.is_ascii() {
            return Err(Error::Format(format!(
                "tick format: delimiter {:?} must be ASCII",
                format.delimiter
            )));
        }
        Ok(format)
    }
}

/// One input line that failed to parse.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedLine {
    pub line: u64,
    pub reason: String,
}

/// Parse outcome: records in file order plus every line that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTicks {
    pub records: Vec<TickRecord>,
    pub rejects: Vec<RejectedLine>,
}

/// Parse a delimited tick file. Malformed lines are collected, not dropped
/// silently; a header missing a declared column is a hard failure. A fully
/// empty stream parses to nothing.
pub fn parse_ticks(input: impl Read, format: &TickFormat) -> Result<ParsedTicks> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .flexible(true)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::BadHeader(e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Ok(ParsedTicks {
            records: Vec::new(),
            rejects: Vec::new(),
        });
    }
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::BadHeader(format!("missing column '{name}'")))
    };
    let ts_col = column(&format.timestamp_column)?;
    let expiry_col = column(&format.expiry_column)?;
    let price_col = column(&format.price_column)?;
    let volume_col = column(&format.volume_column)?;
    let type_col = match &format.record_type_column {
        Some(name) => Some(column(name)?),
        None => None,
    };

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejects.push(RejectedLine {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let reject = |reason: String, rejects: &mut Vec<RejectedLine>| {
            rejects.push(RejectedLine { line, reason });
        };
        let field = |col: usize| row.get(col).map(str::trim);
        let Some(ts_text) = field(ts_col) else {
            reject("missing timestamp field".into(), &mut rejects);
            continue;
        };
        let timestamp = match NaiveDateTime::parse_from_str(ts_text, &format.timestamp_format) {
            Ok(ts) => ts,
            Err(e) => {
                reject(format!("timestamp '{ts_text}': {e}"), &mut rejects);
                continue;
            }
        };
        let Some(expiry) = field(expiry_col).filter(|s| !s.is_empty()) else {
            reject("missing expiry field".into(), &mut rejects);
            continue;
        };
        let price = match field(price_col).map(str::parse::<f64>) {
            Some(Ok(p)) if p.is_finite() => p,
            other => {
                reject(format!("bad price field: {other:?}"), &mut rejects);
                continue;
            }
        };
        let volume = match field(volume_col).map(str::parse::<u64>) {
            Some(Ok(v)) => v,
            other => {
                reject(format!("bad volume field: {other:?}"), &mut rejects);
                continue;
            }
        };
        let record_type = match type_col {
            Some(col) => match field(col) {
                Some(text) => RecordType::parse(text),
                None => {
                    reject("missing record type field".into(), &mut rejects);
                    continue;
                }
            },
            None => RecordType::Trade,
        };
        if record_type == RecordType::Trade && !(price > 0.0) {
            reject(format!("non-positive trade price {price}"), &mut rejects);
            continue;
        }
        records.push(TickRecord {
            timestamp,
            expiry_code: expiry.to_string(),
            price,
            volume,
            record_type,
        });
    }
    Ok(ParsedTicks { records, rejects })
}

/// A delivery-month handover: from `date` onward ticks come from `to`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RollEvent {
    pub date: NaiveDate,
    pub from: String,
    pub to: String,
}

/// Front-month restriction of a tick stream plus the handover dates.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontSelection {
    pub ticks: Vec<TickRecord>,
    pub rolls: Vec<RollEvent>,
}

/// Keep each day's ticks for the active delivery month.
///
/// The active month starts as the first trading day's highest-volume expiry
/// and hands over on the first day a later expiry's daily trade volume
/// exceeds the incumbent's; handovers never revert to an earlier month.
/// Expiry codes must order delivery months lexicographically (e.g.
/// `1998-03` before `1998-06`). Volume ties keep the earlier month.
pub fn select_front_contract(ticks: &[TickRecord]) -> Result<FrontSelection> {
    let mut daily: BTreeMap<NaiveDate, BTreeMap<&str, u64>> = BTreeMap::new();
    for t in ticks {
        if t.record_type == RecordType::Trade {
            *daily
                .entry(t.timestamp.date())
                .or_default()
                .entry(&t.expiry_code)
                .or_insert(0) += t.volume;
        }
    }
    if daily.is_empty() {
        return Err(Error::EmptyInput("no trade records".into()));
    }
    let all_dates: BTreeSet<NaiveDate> = ticks.iter().map(|t| t.timestamp.date()).collect();
    let mut active: Option<&str> = None;
    let mut active_by_day: BTreeMap<NaiveDate, &str> = BTreeMap::new();
    let mut rolls = Vec::new();
    for &date in &all_dates {
        if let Some(by_expiry) = daily.get(&date) {
            match active {
                None => {
                    // Ascending iteration with a strict `>` keeps the
                    // earliest month on ties.
                    let mut best: Option<(&str, u64)> = None;
                    for (&code, &vol) in by_expiry {
                        if best.is_none_or(|(_, bv)| vol > bv) {
                            best = Some((code, vol));
                        }
                    }
                    active = best.map(|(code, _)| code);
                }
                Some(incumbent) => {
                    let incumbent_vol = by_expiry.get(incumbent).copied().unwrap_or(0);
                    let mut challenger: Option<(&str, u64)> = None;
                    for (&code, &vol) in by_expiry.range(incumbent..).skip(1) {
                        if vol > incumbent_vol && challenger.is_none_or(|(_, cv)| vol > cv) {
                            challenger = Some((code, vol));
                        }
                    }
                    if let Some((code, _)) = challenger {
                        rolls.push(RollEvent {
                            date,
                            from: incumbent.to_string(),
                            to: code.to_string(),
                        });
                        active = Some(code);
                    }
                }
            }
        }
        if let Some(code) = active {
            active_by_day.insert(date, code);
        }
    }
    let selected = ticks
        .iter()
        .filter(|t| active_by_day.get(&t.timestamp.date()) == Some(&t.expiry_code.as_str()))
        .cloned()
        .collect();
    Ok(FrontSelection {
        ticks: selected,
        rolls,
    })
}

/// Contract-roll selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RollRule {
    #[default]
    VolumeCrossover,
}

/// Bar-construction settings: interval width, calendar, roll rule and which
/// record kinds count as price-setting.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub bar_minutes: u32,
    pub calendar: TradingCalendar,
    pub roll_rule: RollRule,
    pub trade_types_used: Vec<RecordType>,
}

impl IngestConfig {
    pub fn new(calendar: TradingCalendar) -> Self {
        Self {
            bar_minutes: 5,
            calendar,
            roll_rule: RollRule::VolumeCrossover,
            trade_types_used: vec![RecordType::Trade],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.calendar.intervals_per_day(self.bar_minutes)?;
        if self.trade_types_used.is_empty() {
            return Err(Error::InvalidConfig(
                "trade_types_used must not be empty".into(),
            ));
        }
        Ok(())
    }
}

/// Aggregate ticks into session bars.
///
/// Each session splits into `bar_minutes` intervals aligned to the open; a
/// tick at an interval's right edge belongs to that interval, and a tick at
/// exactly the open belongs to the first. The bar timestamp is the right
/// edge and its close is the interval's last trade. Out-of-session ticks,
/// non-trading dates and empty intervals contribute nothing.
pub fn build_bars(ticks: &[TickRecord], config: &IngestConfig) -> Result<BarSeries> {
    config.validate()?;
    let ipd = config.calendar.intervals_per_day(config.bar_minutes)?;
    let width_secs = i64::from(config.bar_minutes) * 60;
    let open_secs = i64::from(config.calendar.session_open_minutes()) * 60;
    let session_secs = i64::from(config.calendar.session_minutes()) * 60;

    let mut used: Vec<&TickRecord> = ticks
        .iter()
        .filter(|t| config.trade_types_used.contains(&t.record_type))
        .collect();
    // Stable, so same-second ticks keep file order and the later print wins.
    used.sort_by_key(|t| t.timestamp);

    let mut closes: BTreeMap<(NaiveDate, i64), f64> = BTreeMap::new();
    let mut label: Vec<&str> = Vec::new();
    for t in used {
        let date = t.timestamp.date();
        if !config.calendar.is_trading_day(date) {
            continue;
        }
        let offset = i64::from(t.timestamp.time().num_seconds_from_midnight()) - open_secs;
        if offset < 0 || offset > session_secs {
            continue;
        }
        let idx = if offset == 0 {
            0
        } else {
            (offset - 1) / width_secs
        };
        closes.insert((date, idx), t.price);
        if !label.contains(&t.expiry_code.as_str()) {
            label.push(&t.expiry_code);
        }
    }

    let mut timestamps = Vec::with_capacity(closes.len());
    let mut prices = Vec::with_capacity(closes.len());
    for (&(date, idx), &price) in &closes {
        let right_edge = open_secs + (idx + 1) * width_secs;
        timestamps.push(
            date.and_hms_opt(0, 0, 0).unwrap() + Duration::try_seconds(right_edge).unwrap(),
        );
        prices.push(price);
    }
    BarSeries::new(timestamps, prices, ipd, label.join("+"))
}

/// Log returns over front-contract bars with pairs spanning a roll date
/// removed; returns the series and the number of dropped pairs. Overnight
/// pairs are kept, matching the bar-concatenation convention.
pub fn roll_adjusted_returns(
    bars: &BarSeries,
    rolls: &[RollEvent],
) -> Result<(ReturnSeries, usize)> {
    if bars.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "returns need at least 2 bars, have {}",
            bars.len()
        )));
    }
    let ts = bars.timestamps();
    let px = bars.close_prices();
    let mut values = Vec::with_capacity(bars.len() - 1);
    let mut stamps = Vec::with_capacity(bars.len() - 1);
    let mut dropped = 0usize;
    for i in 1..bars.len() {
        let spans_roll = rolls
            .iter()
            .any(|r| ts[i - 1].date() < r.date && r.date <= ts[i].date());
        if spans_roll {
            dropped += 1;
            continue;
        }
        values.push((px[i] / px[i - 1]).ln());
        stamps.push(ts[i]);
    }
    let series = ReturnSeries::new(values, stamps, bars.intervals_per_day())?;
    Ok((series, dropped))
}

/// Ingest summary written beside the bar output.
#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub records_parsed: usize,
    pub rejects: Vec<RejectedLine>,
    pub roll_dates: Vec<RollEvent>,
    pub bar_count: usize,
    pub bars_per_day: BTreeMap<NaiveDate, u32>,
    pub return_count: usize,
    pub dropped_roll_returns: usize,
}

/// Full pipeline output: bars, roll-adjusted returns and the report.
#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub bars: BarSeries,
    pub returns: ReturnSeries,
    pub report: IngestReport,
}

/// Parse, select the front month, build bars and first-difference into
/// returns with roll-spanning pairs dropped.
pub fn ingest(
    input: impl Read,
    format: &TickFormat,
    config: &IngestConfig,
) -> Result<IngestOutput> {
    let parsed = parse_ticks(input, format)?;
    let selection = select_front_contract(&parsed.records)?;
    let bars = build_bars(&selection.ticks, config)?;
    let (returns, dropped) = roll_adjusted_returns(&bars, &selection.rolls)?;
    let mut bars_per_day: BTreeMap<NaiveDate, u32> = BTreeMap::new();
    for ts in bars.timestamps() {
        // The right edge of a session's last bar never crosses midnight, so
        // the bar's date is the session date.
        *bars_per_day.entry(ts.date()).or_insert(0) += 1;
    }
    let report = IngestReport {
        records_parsed: parsed.records.len(),
        rejects: parsed.rejects,
        roll_dates: selection.rolls,
        bar_count: bars.len(),
        bars_per_day,
        return_count: returns.len(),
        dropped_roll_returns: dropped,
    };
    Ok(IngestOutput {
        bars,
        returns,
        report,
    })
}
