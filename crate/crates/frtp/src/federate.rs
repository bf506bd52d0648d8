//! Converts route-search records into per-segment, per-bucket count series.
//!
//! Time-specified searches are expanded along their shortest route and
//! projected onto the buckets their segment passage enters. Non-time-specified
//! searches are aggregated by search time over trailing lookback windows
//! (1/3/7/10 days), one series per window.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FrtpError;
use crate::ingestion::SearchRecord;
use crate::network::{passage_times, AnchorKind, RoadGraph, DEFAULT_SPEED_KMH};
use crate::time::{format_timestamp, parse_timestamp, EpochMinutes, TimeGrid, MINUTES_PER_DAY};

pub const DEFAULT_WINDOWS_DAYS: [u32; 4] = [1, 3, 7, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeriesKind {
    TimeSpecified,
    Unspecified { window_days: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountSeries {
    pub grid: TimeGrid,
    pub kind: SeriesKind,
    /// Row order; one row per segment in the graph.
    pub segment_ids: Vec<String>,
    /// counts[row][bucket]
    pub counts: Vec<Vec<u64>>,
}

impl CountSeries {
    fn zeros(graph: &RoadGraph, grid: TimeGrid, kind: SeriesKind) -> Self {
        let segment_ids: Vec<String> = graph.segments().iter().map(|s| s.id.clone()).collect();
        let counts = vec![vec![0u64; grid.len]; segment_ids.len()];
        CountSeries { grid, kind, segment_ids, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_of(&self, segment_id: &str) -> Option<usize> {
        self.segment_ids.iter().position(|s| s == segment_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Classification {
    TimeSpecified { anchor: EpochMinutes, anchor_kind: AnchorKind },
    NonTimeSpecified,
}

/// A record is time-specified iff a departure or arrival datetime is present.
/// When both are present the departure anchor wins.
pub fn classify(record: &SearchRecord) -> Classification {
    match (record.departure_time, record.arrival_time) {
        (Some(t), _) => Classification::TimeSpecified { anchor: t, anchor_kind: AnchorKind::Departure },
        (None, Some(t)) => Classification::TimeSpecified { anchor: t, anchor_kind: AnchorKind::Arrival },
        (None, None) => Classification::NonTimeSpecified,
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DropReport {
    /// Records skipped because routing failed (unknown IC or unreachable).
    pub route_failures: Vec<RouteDrop>,
    /// Records whose projected times fell entirely outside the grid.
    pub out_of_grid: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RouteDrop {
    pub record_index: usize,
    pub reason: String,
}

/// Accumulates time-specified searches: expand the shortest route, project
/// passage times from the record's anchor at 80 km/h, and add 1 at the bucket
/// of each segment's enter time. Out-of-grid enter times are skipped.
pub fn accumulate_time_specified(
    records: &[SearchRecord],
    graph: &RoadGraph,
    grid: &TimeGrid,
) -> Result<(CountSeries, DropReport), FrtpError> {
    let mut series = CountSeries::zeros(graph, grid.clone(), SeriesKind::TimeSpecified);
    let mut drops = DropReport::default();
    for (idx, rec) in records.iter().enumerate() {
        let (anchor, anchor_kind) = match classify(rec) {
            Classification::TimeSpecified { anchor, anchor_kind } => (anchor, anchor_kind),
            Classification::NonTimeSpecified => {
                return Err(FrtpError::BadConfig(format!(
                    "record {idx} is not time-specified"
                )))
            }
        };
        let route = match graph.shortest_route(&rec.departure_ic, &rec.arrival_ic) {
            Ok(r) => r,
            Err(e @ (FrtpError::NoRoute { .. } | FrtpError::UnknownNode(_))) => {
                drops.route_failures.push(RouteDrop { record_index: idx, reason: e.to_string() });
                continue;
            }
            Err(e) => return Err(e),
        };
        if route.is_empty() {
            continue;
        }
        let passages = passage_times(&route, anchor, anchor_kind, DEFAULT_SPEED_KMH)?;
        let mut hit = false;
        for p in &passages {
            let enter_min = (p.enter / 60.0).floor() as i64;
            if let Some(b) = grid.bucket(enter_min) {
                let row = series.row_of(&p.segment_id).expect("route segment is in graph");
                series.counts[row][b] += 1;
                hit = true;
            }
        }
        if !hit {
            drops.out_of_grid += 1;
        }
    }
    Ok((series, drops))
}

/// Accumulates non-time-specified searches into one series per lookback
/// window: a search made at time s adds 1 at every route segment for every
/// bucket whose start t satisfies s in [t - w days, t).
pub fn accumulate_unspecified(
    records: &[SearchRecord],
    graph: &RoadGraph,
    grid: &TimeGrid,
    windows_days: &[u32],
) -> Result<(Vec<CountSeries>, DropReport), FrtpError> {
    let mut series: Vec<CountSeries> = windows_days
        .iter()
        .map(|&w| CountSeries::zeros(graph, grid.clone(), SeriesKind::Unspecified { window_days: w }))
        .collect();
    let mut drops = DropReport::default();
    for (idx, rec) in records.iter().enumerate() {
        if classify(rec) != Classification::NonTimeSpecified {
            return Err(FrtpError::BadConfig(format!("record {idx} is time-specified")));
        }
        let route = match graph.shortest_route(&rec.departure_ic, &rec.arrival_ic) {
            Ok(r) => r,
            Err(e @ (FrtpError::NoRoute { .. } | FrtpError::UnknownNode(_))) => {
                drops.route_failures.push(RouteDrop { record_index: idx, reason: e.to_string() });
                continue;
            }
            Err(e) => return Err(e),
        };
        if route.is_empty() {
            continue;
        }
        let rows: Vec<usize> = route
            .iter()
            .map(|s| series[0].row_of(&s.id).expect("route segment is in graph"))
            .collect();
        let mut hit = false;
        let step = grid.step_minutes as i64;
        for (si, &w) in windows_days.iter().enumerate() {
            let w_min = w as i64 * MINUTES_PER_DAY;
            // bucket starts t with search_time < t <= search_time + w
            let lo = (rec.search_time - grid.start).div_euclid(step) + 1;
            let hi = (rec.search_time + w_min - grid.start).div_euclid(step);
            let lo = lo.max(0);
            let hi = hi.min(grid.len as i64 - 1);
            if lo > hi {
                continue;
            }
            hit = true;
            for &row in &rows {
                for b in lo..=hi {
                    series[si].counts[row][b as usize] += 1;
                }
            }
        }
        if !hit {
            drops.out_of_grid += 1;
        }
    }
    Ok((series, drops))
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    #[serde(flatten)]
    kind: SeriesKind,
    start: String,
    step_minutes: u32,
    len: usize,
}

/// Persists counts as a CSV matrix `segment_id,bucket_0,...` with a JSON
/// sidecar holding the grid and series kind.
pub fn save_count_series(series: &CountSeries, csv_path: &Path, sidecar_path: &Path) -> Result<(), FrtpError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    let header: Vec<String> = std::iter::once("segment_id".to_string())
        .chain((0..series.grid.len).map(|b| format!("bucket_{b}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (sid, row) in series.segment_ids.iter().zip(&series.counts) {
        write!(out, "{sid}")?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    let sidecar = Sidecar {
        kind: series.kind,
        start: format_timestamp(series.grid.start),
        step_minutes: series.grid.step_minutes,
        len: series.grid.len,
    };
    std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_count_series(csv_path: &Path, sidecar_path: &Path) -> Result<CountSeries, FrtpError> {
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    let grid = TimeGrid::new(parse_timestamp(&sidecar.start)?, sidecar.step_minutes, sidecar.len)?;
    let mut segment_ids = Vec::new();
    let mut counts = Vec::new();
    let mut reader = csv::Reader::from_path(csv_path)?;
    for row in reader.records() {
        let row = row?;
        segment_ids.push(row[0].to_string());
        let vals: Result<Vec<u64>, _> = row.iter().skip(1).map(|v| v.parse()).collect();
        let vals = vals.map_err(|e| FrtpError::BadConfig(format!("bad count value: {e}")))?;
        if vals.len() != grid.len {
            return Err(FrtpError::ShapeMismatch(format!(
                "row has {} buckets, grid expects {}",
                vals.len(),
                grid.len
            )));
        }
        counts.push(vals);
    }
    Ok(CountSeries { grid, kind: sidecar.kind, segment_ids, counts })
}
