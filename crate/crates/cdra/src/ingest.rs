//! CDR files: reading operator CSV exports into records, writing the
//! canonical dialect back out.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use cdra_core::cdr::{CdrFields, RowDiagnostic};
use cdra_core::{CdrRecord, DateOrder};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column(s): {}", .0.join(", "))]
    MissingColumns(Vec<&'static str>),
}

/// Reader settings.
#[derive(Debug, Clone, Copy)]
pub struct CsvDialect {
    pub delimiter: u8,
    pub dates: DateOrder,
}

impl Default for CsvDialect {
    fn default() -> Self {
        CsvDialect {
            delimiter: b',',
            dates: DateOrder::MonthFirst,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCdr {
    pub records: Vec<CdrRecord>,
    pub diagnostics: Vec<RowDiagnostic>,
}

impl ParsedCdr {
    pub fn rows(&self) -> usize {
        self.records.len() + self.diagnostics.len()
    }
}

pub const CANONICAL_HEADER: [&str; 8] = [
    "Date & Time",
    "A party",
    "B party",
    "Call Type",
    "IMEI",
    "Cell Site",
    "Latitude",
    "Longitude",
];

/// Header captions are compared ignoring case, spacing and punctuation, so
/// "Date & Time", "date_time" and "DATETIME" all match.
fn squash(caption: &str) -> String {
    caption
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

#[derive(Debug)]
struct Columns {
    mandatory: [usize; 8],
    duration: Option<usize>,
}

impl Columns {
    fn locate(header: &csv::StringRecord) -> Result<Self, IngestError> {
        let names: Vec<String> = header.iter().map(squash).collect();
        let find = |want: &[&str]| names.iter().position(|n| want.contains(&n.as_str()));
        let wanted: [(&'static str, &[&str]); 8] = [
            ("Date & Time", &["datetime", "dateandtime", "timestamp"]),
            ("A party", &["aparty"]),
            ("B party", &["bparty"]),
            ("Call Type", &["calltype"]),
            ("IMEI", &["imei"]),
            ("Cell Site", &["cellsite"]),
            ("Latitude", &["latitude", "lat"]),
            ("Longitude", &["longitude", "lon", "long"]),
        ];
        let mut mandatory = [0; 8];
        let mut missing = Vec::new();
        for (slot, (caption, aliases)) in mandatory.iter_mut().zip(wanted) {
            match find(aliases) {
                Some(i) => *slot = i,
                None => missing.push(caption),
            }
        }
        if !missing.is_empty() {
            return Err(IngestError::MissingColumns(missing));
        }
        Ok(Columns {
            mandatory,
            duration: find(&["duration", "durationseconds", "durations", "durationsec"]),
        })
    }
}

/// Reads a CDR table. Bad rows become diagnostics; only an unreadable
/// source or a missing column is fatal. Call cost columns are ignored.
pub fn parse_cdr<R: Read>(source: R, dialect: &CsvDialect) -> Result<ParsedCdr, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(dialect.delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let columns = Columns::locate(reader.headers()?)?;

    let mut parsed = ParsedCdr::default();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(row) => row,
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
            Err(e) => {
                parsed.diagnostics.push(RowDiagnostic {
                    row: row_no,
                    reason: format!("{e} at row {row_no}"),
                });
                continue;
            }
        };
        let [ts, a, b, kind, imei, site, lat, lon] = columns.mandatory.map(|c| row.get(c));
        let (Some(ts), Some(a), Some(b), Some(kind), Some(imei), Some(site), Some(lat), Some(lon)) =
            (ts, a, b, kind, imei, site, lat, lon)
        else {
            parsed.diagnostics.push(RowDiagnostic {
                row: row_no,
                reason: format!("expected {} fields, found {} at row {row_no}", reader_width(&columns), row.len()),
            });
            continue;
        };
        let fields = CdrFields {
            timestamp: ts,
            a_party: a,
            b_party: b,
            call_type: kind,
            imei,
            cell_site: site,
            latitude: lat,
            longitude: lon,
            duration: columns.duration.and_then(|c| row.get(c)),
        };
        match CdrRecord::from_fields(&fields, dialect.dates) {
            Ok(record) => parsed.records.push(record),
            Err(e) => parsed.diagnostics.push(RowDiagnostic::new(row_no, &e)),
        }
    }
    Ok(parsed)
}

fn reader_width(columns: &Columns) -> usize {
    columns.mandatory.iter().chain(columns.duration.iter()).max().map_or(0, |m| m + 1)
}

pub fn parse_cdr_file(path: &Path, dialect: &CsvDialect) -> Result<ParsedCdr, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    parse_cdr(file, dialect)
}

/// Writes records in the canonical dialect: the eight standard columns in
/// the standard order, plus `Duration` when any record has one.
pub fn write_canonical_csv(records: &[CdrRecord], dates: DateOrder) -> String {
    let with_duration = records.iter().any(|r| r.duration_seconds.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = CANONICAL_HEADER.to_vec();
    if with_duration {
        header.push("Duration");
    }
    w.write_record(&header).expect("in-memory write");
    for r in records {
        let mut row = vec![
            dates.render(r.timestamp),
            r.a_party.to_string(),
            r.b_party.to_string(),
            r.call_type.caption().to_string(),
            r.imei.as_ref().map(|i| i.as_str().to_string()).unwrap_or_default(),
            r.cell_site.clone(),
            r.latitude.to_string(),
            r.longitude.to_string(),
        ];
        if with_duration {
            row.push(r.duration_seconds.map(|d| d.to_string()).unwrap_or_default());
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv of utf-8 fields")
}

/// One diagnostic per line.
pub fn write_diagnostics(diagnostics: &[RowDiagnostic]) -> String {
    diagnostics.iter().map(|d| format!("{d}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "Date & Time,A party,B party,Call Type,IMEI,Cell Site,Latitude,Longitude\n";

    #[test]
    fn first_table_row() {
        let text = format!(
            "{HEADER}08/01/2020 11:13:04, 1234567890, 12121212121, Call Outgoing, 3530030719058, Plot # 1 Rawalpindi, 33.52292, 73.23864\n"
        );
        let parsed = parse_cdr(text.as_bytes(), &CsvDialect::default()).unwrap();
        assert!(parsed.diagnostics.is_empty());
        let r = &parsed.records[0];
        assert_eq!(r.call_type, cdra_core::CallType::CallOutgoing);
        assert_eq!(r.latitude, 33.52292);
        assert_eq!(r.cell_site, "Plot # 1 Rawalpindi");
    }

    #[test]
    fn header_only_is_empty() {
        let parsed = parse_cdr(HEADER.as_bytes(), &CsvDialect::default()).unwrap();
        assert_eq!(parsed.rows(), 0);
    }

    #[test]
    fn bad_latitude_is_a_row_diagnostic() {
        let text = format!("{HEADER}05/01/2020 10:00:00,1234567890,12121212121,Call Incoming,,x,91.5,73.0\n");
        let parsed = parse_cdr(text.as_bytes(), &CsvDialect::default()).unwrap();
        assert!(parsed.records.is_empty());
        assert_eq!(write_diagnostics(&parsed.diagnostics), "latitude out of range at row 1\n");
    }

    #[test]
    fn columns_any_order_any_case_and_cost_ignored() {
        let text = "LONGITUDE,latitude,cost,cell site,imei,call type,b party,a party,date & time,duration\n\
                    73.0,33.5,12.5,X,,sms outgoing,12121212121,1234567890,05/01/2020 10:00:00,0\n";
        let parsed = parse_cdr(text.as_bytes(), &CsvDialect::default()).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.records[0].duration_seconds, Some(0));
        assert_eq!(parsed.records[0].call_type, cdra_core::CallType::SmsOutgoing);
    }

    #[test]
    fn missing_column_is_fatal() {
        let err = parse_cdr("Date & Time,A party,B party\n".as_bytes(), &CsvDialect::default()).unwrap_err();
        assert!(err.to_string().contains("Call Type"), "{err}");
    }

    #[test]
    fn short_row_is_reported() {
        let text = format!("{HEADER}05/01/2020 10:00:00,1234567890\n");
        let parsed = parse_cdr(text.as_bytes(), &CsvDialect::default()).unwrap();
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].row, 1);
    }
}
