//! Data-directory loading and feature-tensor assembly.

use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FrtpError;
use crate::features::{
    build_calendar_group, build_search_spec_group, build_search_unspec_group, build_static_group,
    build_target_series, build_traffic_group, FeatureGroup, HolidayCalendar, TargetSeries,
};
use crate::federate::{
    accumulate_time_specified, accumulate_unspecified, classify, Classification,
    DEFAULT_WINDOWS_DAYS,
};
use crate::ingestion::{parse_search_log, parse_traffic_log, SearchRecord, TrafficRecord};
use crate::network::{load_graph, RoadGraph};
use crate::time::{EpochMinutes, TimeGrid, MINUTES_PER_DAY};

/// A scenario directory: graph CSVs, raw logs, optional holiday calendar.
pub struct DataDir {
    pub graph: RoadGraph,
    pub traffic: Vec<TrafficRecord>,
    pub searches: Vec<SearchRecord>,
    pub holidays: HolidayCalendar,
}

pub fn load_data_dir(dir: &Path) -> Result<DataDir, FrtpError> {
    let graph = load_graph(&dir.join("ic.csv"), &dir.join("network.csv"))?;
    let traffic =
        parse_traffic_log(BufReader::new(std::fs::File::open(dir.join("traffic.csv"))?))?.records;
    let searches =
        parse_search_log(BufReader::new(std::fs::File::open(dir.join("search.csv"))?))?.records;
    let holidays_path = dir.join("holidays.csv");
    let holidays = if holidays_path.exists() {
        crate::features::load_holidays(&holidays_path)?
    } else {
        HolidayCalendar::new()
    };
    Ok(DataDir { graph, traffic, searches, holidays })
}

/// Ablation switches over the four toggleable feature groups. The static
/// group carries only per-segment constants and is always included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSwitches {
    pub traffic: bool,
    pub time: bool,
    pub search: bool,
    pub search_unspec: bool,
}

impl FeatureSwitches {
    pub fn all() -> Self {
        FeatureSwitches { traffic: true, time: true, search: true, search_unspec: true }
    }

    pub fn traffic_only() -> Self {
        FeatureSwitches { traffic: true, time: false, search: false, search_unspec: false }
    }

    /// Parses a comma-separated list like `traffic,time,search_unspec`.
    pub fn parse(s: &str) -> Result<Self, FrtpError> {
        let mut sw =
            FeatureSwitches { traffic: false, time: false, search: false, search_unspec: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "traffic" => sw.traffic = true,
                "time" => sw.time = true,
                "search" => sw.search = true,
                "search_unspec" => sw.search_unspec = true,
                other => {
                    return Err(FrtpError::BadConfig(format!("unknown feature switch {other:?}")))
                }
            }
        }
        if !(sw.traffic || sw.time || sw.search || sw.search_unspec) {
            return Err(FrtpError::BadConfig("no feature switches enabled".into()));
        }
        Ok(sw)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.traffic {
            parts.push("traffic");
        }
        if self.time {
            parts.push("time");
        }
        if self.search {
            parts.push("search");
        }
        if self.search_unspec {
            parts.push("search_unspec");
        }
        parts.join("+")
    }
}

/// Full-length feature series plus targets, before window cutting.
pub struct Prepared {
    pub groups: Vec<FeatureGroup>,
    pub targets: TargetSeries,
    /// Day-aligned [start, end) of the underlying traffic data.
    pub span: (EpochMinutes, EpochMinutes),
}

/// Day-aligned span covering every traffic record.
pub fn data_span(traffic: &[TrafficRecord]) -> Result<(EpochMinutes, EpochMinutes), FrtpError> {
    let min = traffic.iter().map(|r| r.timestamp).min();
    let max = traffic.iter().map(|r| r.timestamp).max();
    let (Some(min), Some(max)) = (min, max) else {
        return Err(FrtpError::EmptyInput("no traffic records".into()));
    };
    let start = min.div_euclid(MINUTES_PER_DAY) * MINUTES_PER_DAY;
    let end = (max + 5).div_euclid(MINUTES_PER_DAY) * MINUTES_PER_DAY
        + if (max + 5).rem_euclid(MINUTES_PER_DAY) == 0 { 0 } else { MINUTES_PER_DAY };
    Ok((start, end))
}

/// Mean-resamples a group to a coarser step; NaN when a coarse bucket has no
/// finite fine-grained observation.
fn resample_mean(g: &FeatureGroup, step_minutes: u32) -> Result<FeatureGroup, FrtpError> {
    let r = crate::features::pooling_ratio(g.grid.step_minutes, step_minutes)?;
    let grid = TimeGrid::new(g.grid.start, step_minutes, g.grid.len / r)?;
    let mut out = FeatureGroup::zeros(g.name, grid, g.segment_ids.clone(), g.n_features);
    for seg in 0..g.n_segments() {
        for t in 0..out.grid.len {
            for f in 0..g.n_features {
                let mut sum = 0.0;
                let mut n = 0u32;
                for k in 0..r {
                    let v = g.get(seg, t * r + k, f);
                    if v.is_finite() {
                        sum += v;
                        n += 1;
                    }
                }
                out.set(seg, t, f, if n > 0 { sum / n as f64 } else { f64::NAN });
            }
        }
    }
    Ok(out)
}

/// Assembles the enabled feature groups and the target series over the data
/// span. Traffic and time-specified searches live on the input-step grid;
/// everything else on the output-step grid.
pub fn prepare(
    data: &DataDir,
    switches: FeatureSwitches,
    input_step_minutes: u32,
    output_step_minutes: u32,
) -> Result<Prepared, FrtpError> {
    let (start, end) = data_span(&data.traffic)?;
    let span_min = end - start;
    let fine_grid = TimeGrid::new(start, 5, (span_min / 5) as usize)?;
    let in_grid =
        TimeGrid::new(start, input_step_minutes, (span_min / input_step_minutes as i64) as usize)?;
    let out_grid = TimeGrid::new(
        start,
        output_step_minutes,
        (span_min / output_step_minutes as i64) as usize,
    )?;

    let fine_traffic = build_traffic_group(&data.traffic, &data.graph, &fine_grid);
    let targets = build_target_series(&fine_traffic, &out_grid)?;

    let mut spec = Vec::new();
    let mut unspec = Vec::new();
    for r in &data.searches {
        match classify(r) {
            Classification::TimeSpecified { .. } => spec.push(r.clone()),
            Classification::NonTimeSpecified => unspec.push(r.clone()),
        }
    }

    let mut groups = Vec::new();
    if switches.traffic {
        groups.push(if input_step_minutes == 5 {
            fine_traffic
        } else {
            resample_mean(&fine_traffic, input_step_minutes)?
        });
    }
    if switches.search {
        let (series, _) = accumulate_time_specified(&spec, &data.graph, &in_grid)?;
        groups.push(build_search_spec_group(&series));
    }
    if switches.search_unspec {
        let (series, _) =
            accumulate_unspecified(&unspec, &data.graph, &out_grid, &DEFAULT_WINDOWS_DAYS)?;
        groups.push(build_search_unspec_group(&series)?);
    }
    if switches.time {
        let segment_ids: Vec<String> =
            data.graph.segments().iter().map(|s| s.id.clone()).collect();
        groups.push(build_calendar_group(&out_grid, &data.holidays, segment_ids));
    }
    groups.push(build_static_group(&data.graph, &out_grid));
    Ok(Prepared { groups, targets, span: (start, end) })
}
