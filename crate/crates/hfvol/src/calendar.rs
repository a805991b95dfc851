//! Trading calendars: session hours, weekend days and holiday dates.
//!
//! Ships the LIFFE 1998-1999 calendars for the FTSE100, UK Long Gilt and
//! Three-month Sterling contracts. Custom calendars load from a plain-text
//! key-value file.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};

use crate::error::{Error, Result};

/// Per-contract session hours and non-trading dates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingCalendar {
    /// Session open as minutes after midnight.
    session_open: u32,
    /// Session close as minutes after midnight.
    session_close: u32,
    holiday_dates: BTreeSet<NaiveDate>,
    weekend_days: Vec<Weekday>,
}

/// LIFFE holidays observed in 1998 and 1999 (9 per year).
const LIFFE_HOLIDAYS_1998_1999: [(i32, u32, u32); 18] = [
    (1998, 1, 1),
    (1998, 4, 10),
    (1998, 4, 13),
    (1998, 5, 4),
    (1998, 5, 25),
    (1998, 8, 31),
    (1998, 12, 25),
    (1998, 12, 28),
    (1998, 12, 31),
    (1999, 1, 1),
    (1999, 4, 2),
    (1999, 4, 5),
    (1999, 5, 3),
    (1999, 5, 31),
    (1999, 8, 30),
    (1999, 12, 27),
    (1999, 12, 28),
    (1999, 12, 31),
];

fn liffe_holidays() -> BTreeSet<NaiveDate> {
    LIFFE_HOLIDAYS_1998_1999
        .iter()
        .map(|&(y, m, d)| NaiveDate::from_ymd_opt(y, m, d).unwrap())
        .collect()
}

fn default_weekend() -> Vec<Weekday> {
    vec![Weekday::Sat, Weekday::Sun]
}

fn normalize_weekend(mut days: Vec<Weekday>) -> Vec<Weekday> {
    days.sort_by_key(|d| d.num_days_from_monday());
    days.dedup();
    days
}

impl TradingCalendar {
    pub fn new(
        session_open: u32,
        session_close: u32,
        holiday_dates: BTreeSet<NaiveDate>,
        weekend_days: Vec<Weekday>,
    ) -> Result<Self> {
        if session_open >= session_close || session_close > 24 * 60 {
            return Err(Error::InvalidCalendar(format!(
                "session open {session_open} must precede close {session_close} within one day"
            )));
        }
        Ok(Self {
            session_open,
            session_close,
            holiday_dates,
            weekend_days: normalize_weekend(weekend_days),
        })
    }

    /// FTSE100 futures: 08:35-18:00, 113 five-minute intervals.
    pub fn ftse100() -> Self {
        Self::new(8 * 60 + 35, 18 * 60, liffe_holidays(), default_weekend()).unwrap()
    }

    /// UK Long Gilt futures: 08:00-18:00, 120 five-minute intervals.
    pub fn uk_long_gilt() -> Self {
        Self::new(8 * 60, 18 * 60, liffe_holidays(), default_weekend()).unwrap()
    }

    /// Three-month Sterling futures: 08:05-17:55, 118 five-minute intervals.
    /// The 17:55 cut-off drops the incomplete final interval even though the
    /// last trade prints at 17:57.
    pub fn sterling() -> Self {
        Self::new(
            8 * 60 + 5,
            17 * 60 + 55,
            liffe_holidays(),
            default_weekend(),
        )
        .unwrap()
    }

    /// Look up a bundled calendar by name.
    pub fn bundled(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ftse100" | "ftse" => Some(Self::ftse100()),
            "gilt" | "uk_long_gilt" | "long_gilt" => Some(Self::uk_long_gilt()),
            "sterling" => Some(Self::sterling()),
            _ => None,
        }
    }

    pub fn session_open_minutes(&self) -> u32 {
        self.session_open
    }

    pub fn session_close_minutes(&self) -> u32 {
        self.session_close
    }

    /// Session length in minutes.
    pub fn session_minutes(&self) -> u32 {
        self.session_close - self.session_open
    }

    pub fn holiday_dates(&self) -> &BTreeSet<NaiveDate> {
        &self.holiday_dates
    }

    pub fn is_trading_day(&self, date: NaiveDate) -> bool {
        !self.weekend_days.contains(&date.weekday()) && !self.holiday_dates.contains(&date)
    }

    /// Whether a timestamp falls inside session hours (inclusive bounds).
    pub fn in_session(&self, ts: NaiveDateTime) -> bool {
        let mins_with_secs =
            ts.time().hour() * 3600 + ts.time().minute() * 60 + ts.time().second();
        mins_with_secs >= self.session_open * 60 && mins_with_secs <= self.session_close * 60
    }

    /// Number of `bar_minutes` intervals in one session; errors when the bar
    /// width does not divide the session length.
    pub fn intervals_per_day(&self, bar_minutes: u32) -> Result<u32> {
        if bar_minutes == 0 {
            return Err(Error::InvalidConfig("bar width must be positive".into()));
        }
        let span = self.session_minutes();
        if span % bar_minutes != 0 {
            return Err(Error::InvalidConfig(format!(
                "bar width {bar_minutes} min does not divide the {span} min session"
            )));
        }
        Ok(span / bar_minutes)
    }

    /// Parse a calendar from a plain-text key-value file:
    ///
    /// ```text
    /// session_open = 08:35
    /// session_close = 18:00
    /// holidays = 1998-01-01, 1998-04-10
    /// weekend_days = sat, sun
    /// ```
    ///
    /// `holidays` may repeat across lines; `weekend_days` defaults to
    /// Saturday and Sunday; `#` starts a comment.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut open = None;
        let mut close = None;
        let mut holidays = BTreeSet::new();
        let mut weekend = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidCalendar(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "session_open" => open = Some(parse_hhmm(value)?),
                "session_close" => close = Some(parse_hhmm(value)?),
                "holidays" => {
                    for tok in value.split([',', ' ']).filter(|t| !t.is_empty()) {
                        let d = NaiveDate::parse_from_str(tok, "%Y-%m-%d").map_err(|e| {
                            Error::InvalidCalendar(format!("bad holiday date '{tok}': {e}"))
                        })?;
                        holidays.insert(d);
                    }
                }
                "weekend_days" => {
                    let mut days = Vec::new();
                    for tok in value.split([',', ' ']).filter(|t| !t.is_empty()) {
                        days.push(parse_weekday(tok)?);
                    }
                    weekend = Some(days);
                }
                other => {
                    return Err(Error::InvalidCalendar(format!("unknown key '{other}'")));
                }
            }
        }
        let open =
            open.ok_or_else(|| Error::InvalidCalendar("missing session_open".into()))?;
        let close =
            close.ok_or_else(|| Error::InvalidCalendar("missing session_close".into()))?;
        Self::new(open, close, holidays, weekend.unwrap_or_else(default_weekend))
    }

    pub fn from_config_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text)
    }
}

fn parse_hhmm(s: &str) -> Result<u32> {
    let (h, m) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidCalendar(format!("bad session time '{s}', expected HH:MM")))?;
    let h: u32 = h
        .parse()
        .map_err(|_| Error::InvalidCalendar(format!("bad hour in '{s}'")))?;
    let m: u32 = m
        .parse()
        .map_err(|_| Error::InvalidCalendar(format!("bad minute in '{s}'")))?;
    if h > 24 || m >= 60 {
        return Err(Error::InvalidCalendar(format!("time '{s}' out of range")));
    }
    Ok(h * 60 + m)
}

fn parse_weekday(s: &str) -> Result<Weekday> {
    match s.to_ascii_lowercase().as_str() {
        "mon" | "monday" => Ok(Weekday::Mon),
        "tue" | "tuesday" => Ok(Weekday::Tue),
        "wed" | "wednesday" => Ok(Weekday::Wed),
        "thu" | "thursday" => Ok(Weekday::Thu),
        "fri" | "friday" => Ok(Weekday::Fri),
        "sat" | "saturday" => Ok(Weekday::Sat),
        "sun" | "sunday" => Ok(Weekday::Sun),
        other => Err(Error::InvalidCalendar(format!("unknown weekday '{other}'"))),
    }
}
