//! Golden CDR fixtures shared by the integration tests.
#![allow(dead_code)]

use cdra_core::cdr::CdrFields;
use cdra_core::{CdrRecord, DateOrder, Subscriber};
use chrono::NaiveDateTime;

pub const TABLE2: &str = include_str!("../../../../fixtures/table2.csv");
pub const TABLE3: &str = include_str!("../../../../fixtures/table3.csv");

pub const FOCAL2: &str = "1234567890";
pub const FOCAL3: &str = "9876543210";

/// Splits one line on commas outside double quotes. Enough for the
/// fixtures; the real reader lives in the std crate.
fn split(line: &str) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut quoted = false;
    for c in line.chars() {
        match c {
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(String::new()),
            _ => out.last_mut().unwrap().push(c),
        }
    }
    out
}

pub fn parse(text: &str) -> Vec<CdrRecord> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f = split(line);
            let fields = CdrFields {
                timestamp: &f[0],
                a_party: &f[1],
                b_party: &f[2],
                call_type: &f[3],
                imei: &f[4],
                cell_site: &f[5],
                latitude: &f[6],
                longitude: &f[7],
                duration: None,
            };
            CdrRecord::from_fields(&fields, DateOrder::MonthFirst).expect("fixture row")
        })
        .collect()
}

pub fn table2() -> Vec<CdrRecord> {
    parse(TABLE2)
}

pub fn table3() -> Vec<CdrRecord> {
    parse(TABLE3)
}

pub fn sub(s: &str) -> Subscriber {
    Subscriber::parse(s).unwrap()
}

pub fn ts(s: &str) -> NaiveDateTime {
    DateOrder::MonthFirst.parse(s).unwrap()
}
