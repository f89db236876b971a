//! Call data records: the canonical row type, field validation, window
//! filtering and normalization.
//!
//! Parsing the delimited file itself lives in the std companion crate; this
//! module turns already-split text fields into validated [`CdrRecord`]s.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

/// Default investigation look-back in days.
pub const DEFAULT_WINDOW_DAYS: i64 = 14;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CdrError {
    #[error("subscriber number {0:?} must be 10-15 decimal digits")]
    BadSubscriber(String),
    #[error("IMEI {0:?} must be 13-16 decimal digits")]
    BadImei(String),
    #[error("unknown call type {0:?}")]
    BadCallType(String),
    #[error("unparseable timestamp {0:?}")]
    BadTimestamp(String),
    #[error("{0} out of range")]
    CoordinateOutOfRange(&'static str),
    #[error("unparseable {field} {value:?}")]
    BadNumber { field: &'static str, value: String },
    #[error("A party and B party are both {0}")]
    SelfCall(String),
    #[error("window {0:?} is not START..END")]
    BadWindow(String),
    #[error("window start {start} is after end {end}")]
    InvertedWindow { start: NaiveDateTime, end: NaiveDateTime },
}

/// A subscriber number (MSISDN): 10 to 15 decimal digits.
///
/// Ordered numerically, so a 10-digit number sorts before any 11-digit one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Subscriber(String);

impl Subscriber {
    pub fn parse(text: &str) -> Result<Self, CdrError> {
        let text = text.trim();
        if (10..=15).contains(&text.len()) && text.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Subscriber(text.to_owned()))
        } else {
            Err(CdrError::BadSubscriber(text.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Ord for Subscriber {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Subscriber {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Subscriber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Subscriber {
    type Err = CdrError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subscriber::parse(s)
    }
}

impl TryFrom<String> for Subscriber {
    type Error = CdrError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Subscriber::parse(&value)
    }
}

impl From<Subscriber> for String {
    fn from(value: Subscriber) -> Self {
        value.0
    }
}

/// Handset identity. Operators in the wild emit 13-16 digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Imei(String);

impl Imei {
    pub fn parse(text: &str) -> Result<Self, CdrError> {
        let text = text.trim();
        if (13..=16).contains(&text.len()) && text.bytes().all(|b| b.is_ascii_digit()) {
            Ok(Imei(text.to_owned()))
        } else {
            Err(CdrError::BadImei(text.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Imei {
    type Error = CdrError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Imei::parse(&value)
    }
}

impl From<Imei> for String {
    fn from(value: Imei) -> Self {
        value.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CallType {
    CallIncoming,
    CallOutgoing,
    SmsIncoming,
    SmsOutgoing,
}

impl CallType {
    pub fn is_outgoing(self) -> bool {
        matches!(self, CallType::CallOutgoing | CallType::SmsOutgoing)
    }

    pub fn is_sms(self) -> bool {
        matches!(self, CallType::SmsIncoming | CallType::SmsOutgoing)
    }

    /// The caption used in operator exports, e.g. `Call Outgoing`.
    pub fn caption(self) -> &'static str {
        match self {
            CallType::CallIncoming => "Call Incoming",
            CallType::CallOutgoing => "Call Outgoing",
            CallType::SmsIncoming => "SMS Incoming",
            CallType::SmsOutgoing => "SMS Outgoing",
        }
    }
}

impl fmt::Display for CallType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.caption())
    }
}

impl FromStr for CallType {
    type Err = CdrError;

    /// Accepts the medium and direction words in either order, any case
    /// (`Call Outgoing`, `outgoing call`, `SMS-Incoming`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| c.is_whitespace() || c == '-' || c == '_')
            .filter(|w| !w.is_empty())
            .collect();
        let has = |w: &str| words.contains(&w);
        let sms = has("sms") || has("message");
        let call = has("call") || has("voice");
        let incoming = has("incoming") || has("inbound") || has("in");
        let outgoing = has("outgoing") || has("outbound") || has("out");
        match (words.len(), call, sms, incoming, outgoing) {
            (2, true, false, true, false) => Ok(CallType::CallIncoming),
            (2, true, false, false, true) => Ok(CallType::CallOutgoing),
            (2, false, true, true, false) => Ok(CallType::SmsIncoming),
            (2, false, true, false, true) => Ok(CallType::SmsOutgoing),
            _ => Err(CdrError::BadCallType(s.trim().to_owned())),
        }
    }
}

/// Day/month order of the date column. Operator exports do not agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DateOrder {
    #[default]
    MonthFirst,
    DayFirst,
}

impl DateOrder {
    pub fn format(self) -> &'static str {
        match self {
            DateOrder::MonthFirst => "%m/%d/%Y %H:%M:%S",
            DateOrder::DayFirst => "%d/%m/%Y %H:%M:%S",
        }
    }

    pub fn parse(self, text: &str) -> Result<NaiveDateTime, CdrError> {
        let text = text.trim();
        NaiveDateTime::parse_from_str(text, self.format())
            .map_err(|_| CdrError::BadTimestamp(text.to_owned()))
    }

    pub fn render(self, at: NaiveDateTime) -> String {
        at.format(self.format()).to_string()
    }
}

/// One parsed CDR row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdrRecord {
    pub timestamp: NaiveDateTime,
    pub a_party: Subscriber,
    pub b_party: Subscriber,
    pub call_type: CallType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imei: Option<Imei>,
    pub cell_site: String,
    pub latitude: f64,
    pub longitude: f64,
}

/// Raw text of one row, keyed by column role.
#[derive(Debug, Clone, Copy, Default)]
pub struct CdrFields<'a> {
    pub timestamp: &'a str,
    pub a_party: &'a str,
    pub b_party: &'a str,
    pub call_type: &'a str,
    pub imei: &'a str,
    pub cell_site: &'a str,
    pub latitude: &'a str,
    pub longitude: &'a str,
    pub duration: Option<&'a str>,
}

impl CdrRecord {
    /// Validates and converts one row's fields.
    pub fn from_fields(fields: &CdrFields<'_>, dates: DateOrder) -> Result<Self, CdrError> {
        let timestamp = dates.parse(fields.timestamp)?;
        let a_party = Subscriber::parse(fields.a_party)?;
        let b_party = Subscriber::parse(fields.b_party)?;
        let call_type: CallType = fields.call_type.parse()?;
        let imei = match fields.imei.trim() {
            "" => None,
            text => Some(Imei::parse(text)?),
        };
        let latitude = parse_f64("latitude", fields.latitude)?;
        let longitude = parse_f64("longitude", fields.longitude)?;
        let duration_seconds = match fields.duration.map(str::trim) {
            None | Some("") => None,
            Some(text) => Some(text.parse::<u32>().map_err(|_| CdrError::BadNumber {
                field: "duration",
                value: text.to_owned(),
            })?),
        };
        let record = CdrRecord {
            timestamp,
            a_party,
            b_party,
            call_type,
            duration_seconds,
            imei,
            cell_site: fields.cell_site.trim().to_owned(),
            latitude,
            longitude,
        };
        record.validate()?;
        Ok(record)
    }

    /// Checks the cross-field invariants a deserialized record may violate.
    pub fn validate(&self) -> Result<(), CdrError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(CdrError::CoordinateOutOfRange("latitude"));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(CdrError::CoordinateOutOfRange("longitude"));
        }
        if self.a_party == self.b_party {
            return Err(CdrError::SelfCall(self.a_party.to_string()));
        }
        Ok(())
    }

    /// Sites are identified by their coordinates, never by address text.
    pub fn site_key(&self) -> (u64, u64) {
        (self.latitude.to_bits(), self.longitude.to_bits())
    }

    fn order_key(&self) -> (NaiveDateTime, &Subscriber, CallType) {
        (self.timestamp, &self.b_party, self.call_type)
    }
}

fn parse_f64(field: &'static str, text: &str) -> Result<f64, CdrError> {
    let text = text.trim();
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CdrError::BadNumber {
            field,
            value: text.to_owned(),
        }),
    }
}

/// A closed time interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawWindow")]
pub struct TimeWindow {
    start: NaiveDateTime,
    end: NaiveDateTime,
}

#[derive(Deserialize)]
struct RawWindow {
    start: NaiveDateTime,
    end: NaiveDateTime,
}

impl TryFrom<RawWindow> for TimeWindow {
    type Error = CdrError;
    fn try_from(raw: RawWindow) -> Result<Self, Self::Error> {
        TimeWindow::new(raw.start, raw.end)
    }
}

impl TimeWindow {
    pub fn new(start: NaiveDateTime, end: NaiveDateTime) -> Result<Self, CdrError> {
        if start > end {
            return Err(CdrError::InvertedWindow { start, end });
        }
        Ok(TimeWindow { start, end })
    }

    /// The `days`-long window that ends at `end`.
    pub fn ending_at(end: NaiveDateTime, days: i64) -> Self {
        TimeWindow {
            start: end - Duration::days(days.max(0)),
            end,
        }
    }

    /// Every instant from midnight of `first` to 23:59:59 of `last`.
    pub fn whole_days(first: chrono::NaiveDate, last: chrono::NaiveDate) -> Result<Self, CdrError> {
        let start = first.and_hms_opt(0, 0, 0).expect("midnight exists");
        let end = last.and_hms_opt(23, 59, 59).expect("end of day exists");
        TimeWindow::new(start, end)
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn end(&self) -> NaiveDateTime {
        self.end
    }

    pub fn contains(&self, at: NaiveDateTime) -> bool {
        self.start <= at && at <= self.end
    }

    /// Smallest window holding every record, or `None` for no records.
    pub fn spanning(records: &[CdrRecord]) -> Option<Self> {
        let start = records.iter().map(|r| r.timestamp).min()?;
        let end = records.iter().map(|r| r.timestamp).max()?;
        Some(TimeWindow { start, end })
    }
}

impl fmt::Display for TimeWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Parses `START..END`, each side a date (`2020-05-01`) or a date-time
/// (`2020-05-01T08:00:00`). A bare start date means its midnight, a bare
/// end date its last second.
impl FromStr for TimeWindow {
    type Err = CdrError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (a, b) = text
            .split_once("..")
            .ok_or_else(|| CdrError::BadWindow(text.to_owned()))?;
        let side = |s: &str, end: bool| -> Result<NaiveDateTime, CdrError> {
            let s = s.trim();
            for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
                if let Ok(at) = NaiveDateTime::parse_from_str(s, fmt) {
                    return Ok(at);
                }
            }
            let day = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map_err(|_| CdrError::BadWindow(text.to_owned()))?;
            let (h, m, sec) = if end { (23, 59, 59) } else { (0, 0, 0) };
            Ok(day.and_hms_opt(h, m, sec).expect("valid time of day"))
        };
        TimeWindow::new(side(a, false)?, side(b, true)?)
    }
}

/// Keeps the records inside the closed window, in input order.
pub fn filter_window(records: &[CdrRecord], window: &TimeWindow) -> Vec<CdrRecord> {
    records
        .iter()
        .filter(|r| window.contains(r.timestamp))
        .cloned()
        .collect()
}

/// Sorts by (timestamp, B party, call type) and drops exact duplicates.
/// The sort is stable, so records equal on the key keep their input order.
pub fn normalize_records(records: &[CdrRecord]) -> Vec<CdrRecord> {
    let mut sorted: Vec<&CdrRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.order_key().cmp(&b.order_key()));

    let mut out: Vec<CdrRecord> = Vec::with_capacity(sorted.len());
    let mut group_start = 0;
    for record in sorted {
        if out
            .last()
            .is_some_and(|last| last.order_key() != record.order_key())
        {
            group_start = out.len();
        }
        if !out[group_start..].iter().any(|kept| kept == record) {
            out.push(record.clone());
        }
    }
    out
}

/// Row-level problem found while ingesting; the row is excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    /// 1-based index among data rows (the header is not counted).
    pub row: usize,
    pub reason: String,
}

impl RowDiagnostic {
    pub fn new(row: usize, error: &CdrError) -> Self {
        let reason = match error {
            CdrError::CoordinateOutOfRange(field) => format!("{field} out of range at row {row}"),
            other => format!("{other} at row {row}"),
        };
        RowDiagnostic { row, reason }
    }
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.reason)
    }
}
