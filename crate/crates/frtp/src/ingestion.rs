//! Streaming parsers for raw search-record and traffic-counter files.
//!
//! Parsing is lossless: every input line either becomes exactly one typed
//! record or lands in the rejection report with its line number and reason.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FrtpError;
use crate::time::{format_timestamp, parse_timestamp, EpochMinutes};

pub const SEARCH_HEADER: &str = "search_time,departure_ic,arrival_ic,departure_time,arrival_time";
pub const TRAFFIC_HEADER: &str = "segment_id,timestamp,all_cars,speed,occ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub departure_ic: String,
    pub arrival_ic: String,
    pub departure_time: Option<EpochMinutes>,
    pub arrival_time: Option<EpochMinutes>,
    pub search_time: EpochMinutes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub segment_id: String,
    /// Start of the 5-minute measurement interval.
    pub timestamp: EpochMinutes,
    pub all_cars: u32,
    pub speed: f64,
    /// Occupancy fraction in [0, 1].
    pub occ: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ParseReport<T> {
    pub records: Vec<T>,
    pub rejects: Vec<Reject>,
}

fn split_fields(line: &str, expected: usize, lineno: usize) -> Result<Vec<&str>, Reject> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(Reject {
            line: lineno,
            reason: format!("expected {expected} fields, got {}", fields.len()),
        });
    }
    Ok(fields)
}

fn required<'a>(field: &'a str, name: &str, lineno: usize) -> Result<&'a str, Reject> {
    let v = field.trim();
    if v.is_empty() {
        Err(Reject { line: lineno, reason: format!("missing required field {name}") })
    } else {
        Ok(v)
    }
}

fn timestamp_field(field: &str, name: &str, lineno: usize) -> Result<EpochMinutes, Reject> {
    parse_timestamp(field)
        .map_err(|_| Reject { line: lineno, reason: format!("unparseable timestamp in {name}: {field:?}") })
}

fn optional_timestamp(field: &str, name: &str, lineno: usize) -> Result<Option<EpochMinutes>, Reject> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        timestamp_field(field, name, lineno).map(Some)
    }
}

/// Parses a search log. Line numbers in rejects are 1-based and count the
/// header line, matching what an editor shows.
pub fn parse_search_log<R: BufRead>(reader: R) -> Result<ParseReport<SearchRecord>, FrtpError> {
    let mut report = ParseReport { records: Vec::new(), rejects: Vec::new() };
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| FrtpError::EmptyInput("search log has no header".into()))??;
    if header.trim() != SEARCH_HEADER {
        return Err(FrtpError::BadConfig(format!("unexpected search log header: {header:?}")));
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        match parse_search_line(&line, lineno) {
            Ok(rec) => report.records.push(rec),
            Err(rej) => report.rejects.push(rej),
        }
    }
    Ok(report)
}

fn parse_search_line(line: &str, lineno: usize) -> Result<SearchRecord, Reject> {
    let f = split_fields(line, 5, lineno)?;
    let search_time = timestamp_field(required(f[0], "search_time", lineno)?, "search_time", lineno)?;
    let departure_ic = required(f[1], "departure_ic", lineno)?.to_string();
    let arrival_ic = required(f[2], "arrival_ic", lineno)?.to_string();
    let departure_time = optional_timestamp(f[3], "departure_time", lineno)?;
    let arrival_time = optional_timestamp(f[4], "arrival_time", lineno)?;
    if let (Some(d), Some(a)) = (departure_time, arrival_time) {
        if d > a {
            return Err(Reject {
                line: lineno,
                reason: format!("departure_time after arrival_time ({d} > {a} epoch minutes)"),
            });
        }
    }
    Ok(SearchRecord { departure_ic, arrival_ic, departure_time, arrival_time, search_time })
}

/// Parses a traffic-counter log. Duplicate (segment_id, timestamp) keys are
/// rejected, first occurrence kept.
pub fn parse_traffic_log<R: BufRead>(reader: R) -> Result<ParseReport<TrafficRecord>, FrtpError> {
    let mut report = ParseReport { records: Vec::new(), rejects: Vec::new() };
    let mut seen: HashSet<(String, EpochMinutes)> = HashSet::new();
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| FrtpError::EmptyInput("traffic log has no header".into()))??;
    if header.trim() != TRAFFIC_HEADER {
        return Err(FrtpError::BadConfig(format!("unexpected traffic log header: {header:?}")));
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        match parse_traffic_line(&line, lineno) {
            Ok(rec) => {
                if seen.insert((rec.segment_id.clone(), rec.timestamp)) {
                    report.records.push(rec);
                } else {
                    report.rejects.push(Reject {
                        line: lineno,
                        reason: format!(
                            "duplicate key ({}, {})",
                            rec.segment_id,
                            format_timestamp(rec.timestamp)
                        ),
                    });
                }
            }
            Err(rej) => report.rejects.push(rej),
        }
    }
    Ok(report)
}

fn parse_traffic_line(line: &str, lineno: usize) -> Result<TrafficRecord, Reject> {
    let f = split_fields(line, 5, lineno)?;
    let segment_id = required(f[0], "segment_id", lineno)?.to_string();
    let timestamp = timestamp_field(required(f[1], "timestamp", lineno)?, "timestamp", lineno)?;
    if timestamp.rem_euclid(5) != 0 {
        return Err(Reject { line: lineno, reason: "timestamp not aligned to 5-minute grid".into() });
    }
    let all_cars: u32 = required(f[2], "all_cars", lineno)?
        .parse()
        .map_err(|_| Reject { line: lineno, reason: format!("unparseable all_cars: {:?}", f[2]) })?;
    let speed: f64 = required(f[3], "speed", lineno)?
        .parse()
        .map_err(|_| Reject { line: lineno, reason: format!("unparseable speed: {:?}", f[3]) })?;
    if !speed.is_finite() || speed < 0.0 {
        return Err(Reject { line: lineno, reason: format!("speed out of range: {speed}") });
    }
    let occ: f64 = required(f[4], "occ", lineno)?
        .parse()
        .map_err(|_| Reject { line: lineno, reason: format!("unparseable occ: {:?}", f[4]) })?;
    if !(0.0..=1.0).contains(&occ) {
        return Err(Reject { line: lineno, reason: format!("occ out of range [0,1]: {occ}") });
    }
    Ok(TrafficRecord { segment_id, timestamp, all_cars, speed, occ })
}

pub fn format_search_line(r: &SearchRecord) -> String {
    let opt = |t: &Option<EpochMinutes>| t.map(format_timestamp).unwrap_or_default();
    format!(
        "{},{},{},{},{}",
        format_timestamp(r.search_time),
        r.departure_ic,
        r.arrival_ic,
        opt(&r.departure_time),
        opt(&r.arrival_time)
    )
}

pub fn format_traffic_line(r: &TrafficRecord) -> String {
    format!(
        "{},{},{},{},{}",
        r.segment_id,
        format_timestamp(r.timestamp),
        r.all_cars,
        r.speed,
        r.occ
    )
}

pub fn write_search_log<W: Write>(mut w: W, records: &[SearchRecord]) -> Result<(), FrtpError> {
    writeln!(w, "{SEARCH_HEADER}")?;
    for r in records {
        writeln!(w, "{}", format_search_line(r))?;
    }
    Ok(())
}

pub fn write_traffic_log<W: Write>(mut w: W, records: &[TrafficRecord]) -> Result<(), FrtpError> {
    writeln!(w, "{TRAFFIC_HEADER}")?;
    for r in records {
        writeln!(w, "{}", format_traffic_line(r))?;
    }
    Ok(())
}

/// Writes the rejection report as JSONL, one `{line, reason}` object per row.
pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<(), FrtpError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rejects {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse_search(s: &str) -> ParseReport<SearchRecord> {
        parse_search_log(Cursor::new(s)).unwrap()
    }

    fn parse_traffic(s: &str) -> ParseReport<TrafficRecord> {
        parse_traffic_log(Cursor::new(s)).unwrap()
    }

    #[test]
    fn search_all_fields() {
        let rep = parse_search(
            "search_time,departure_ic,arrival_ic,departure_time,arrival_time\n\
             2022-05-01 09:00:00,IC01,IC05,2022-05-02 08:00:00,2022-05-02 09:30:00\n",
        );
        assert!(rep.rejects.is_empty());
        let r = &rep.records[0];
        assert_eq!(r.departure_ic, "IC01");
        assert!(r.departure_time.is_some() && r.arrival_time.is_some());
    }

    #[test]
    fn search_empty_optionals() {
        let rep = parse_search(
            "search_time,departure_ic,arrival_ic,departure_time,arrival_time\n\
             2022-05-01 09:00:00,IC01,IC05,,\n",
        );
        let r = &rep.records[0];
        assert!(r.departure_time.is_none() && r.arrival_time.is_none());
    }

    #[test]
    fn search_rejects_bad_lines() {
        let rep = parse_search(
            "search_time,departure_ic,arrival_ic,departure_time,arrival_time\n\
             ,IC01,IC05,,\n\
             2022-05-01 09:00:00,,IC05,,\n\
             2022-05-01 09:00:00,IC01,IC05,2022-05-02 10:00:00,2022-05-02 08:00:00\n\
             2022-05-01 09:00:00,IC01,IC05,notatime,\n",
        );
        assert!(rep.records.is_empty());
        assert_eq!(rep.rejects.len(), 4);
        assert_eq!(rep.rejects[0].line, 2);
        assert!(rep.rejects[2].reason.contains("departure_time after arrival_time"));
    }

    #[test]
    fn traffic_occ_out_of_range() {
        let rep = parse_traffic(
            "segment_id,timestamp,all_cars,speed,occ\n\
             S01,2022-05-01 09:00:00,12,78.5,1.2\n",
        );
        assert_eq!(rep.rejects.len(), 1);
        assert!(rep.rejects[0].reason.contains("occ out of range"));
    }

    #[test]
    fn traffic_duplicates_keep_first() {
        let rep = parse_traffic(
            "segment_id,timestamp,all_cars,speed,occ\n\
             S01,2022-05-01 09:00:00,12,78.5,0.1\n\
             S01,2022-05-01 09:00:00,99,10.0,0.9\n\
             S01,2022-05-01 09:05:00,13,77.0,0.1\n",
        );
        assert_eq!(rep.records.len(), 2);
        assert_eq!(rep.records[0].all_cars, 12);
        assert_eq!(rep.rejects.len(), 1);
    }

    #[test]
    fn traffic_misaligned_timestamp_rejected() {
        let rep = parse_traffic(
            "segment_id,timestamp,all_cars,speed,occ\n\
             S01,2022-05-01 09:02:00,12,78.5,0.1\n",
        );
        assert_eq!(rep.rejects.len(), 1);
    }

    #[test]
    fn wrong_header_is_stream_error() {
        assert!(parse_search_log(Cursor::new("a,b,c\n")).is_err());
        assert!(parse_traffic_log(Cursor::new("a,b,c\n")).is_err());
    }

    #[test]
    fn accepted_plus_rejected_is_total() {
        let body: String = (0..50)
            .map(|i| {
                if i % 7 == 0 {
                    "bad line\n".to_string()
                } else {
                    format!("2022-05-01 09:{:02}:00,IC01,IC05,,\n", i)
                }
            })
            .collect();
        let rep = parse_search(&format!(
            "search_time,departure_ic,arrival_ic,departure_time,arrival_time\n{body}"
        ));
        assert_eq!(rep.records.len() + rep.rejects.len(), 50);
    }

    #[test]
    fn clean_file_roundtrip_is_byte_identical() {
        let input = "search_time,departure_ic,arrival_ic,departure_time,arrival_time\n\
             2022-05-01 09:00:00,IC01,IC05,2022-05-02 08:00:00,2022-05-02 09:30:00\n\
             2022-05-01 10:00:00,IC02,IC03,,\n";
        let rep = parse_search(input);
        let mut out = Vec::new();
        write_search_log(&mut out, &rep.records).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), input);
    }
}
