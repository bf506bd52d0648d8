//! Multi-granularity feature assembly: named tensor groups, calendar and
//! static channels, normalization, and supervised window construction.
//!
//! Every group covers the same wall-clock span but keeps its own bucket
//! granularity; the model reconciles them later through per-group pooling
//! ratios. Missing traffic buckets are held as NaN and filled (capped
//! last-observation-carried-forward) only when a window is cut.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::FrtpError;
use crate::federate::{CountSeries, SeriesKind};
use crate::ingestion::TrafficRecord;
use crate::network::RoadGraph;
use crate::time::{
    date_of, day_of_week, format_timestamp, hour_of_day, parse_date, parse_timestamp,
    EpochMinutes, TimeGrid, MINUTES_PER_DAY,
};

pub const TRAFFIC_FEATURES: [&str; 3] = ["all_cars", "speed", "occ"];
pub const CALENDAR_FEATURES: [&str; 3] = ["dayofweek", "is_holiday", "hour"];
pub const STATIC_FEATURES: [&str; 2] = ["kp_index", "degree_sum"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupName {
    Traffic,
    SearchSpec,
    SearchUnspec,
    Calendar,
    Static,
}

impl GroupName {
    pub fn as_str(&self) -> &'static str {
        match self {
            GroupName::Traffic => "traffic",
            GroupName::SearchSpec => "search_spec",
            GroupName::SearchUnspec => "search_unspec",
            GroupName::Calendar => "calendar",
            GroupName::Static => "static",
        }
    }
}

/// A named tensor block: segments x time x features at one granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGroup {
    pub name: GroupName,
    pub grid: TimeGrid,
    pub segment_ids: Vec<String>,
    pub n_features: usize,
    /// Row-major [segment][time][feature]; NaN marks a missing observation.
    pub data: Vec<f64>,
}

impl FeatureGroup {
    pub fn zeros(name: GroupName, grid: TimeGrid, segment_ids: Vec<String>, n_features: usize) -> Self {
        let data = vec![0.0; segment_ids.len() * grid.len * n_features];
        FeatureGroup { name, grid, segment_ids, n_features, data }
    }

    #[inline]
    pub fn idx(&self, seg: usize, t: usize, f: usize) -> usize {
        (seg * self.grid.len + t) * self.n_features + f
    }

    pub fn get(&self, seg: usize, t: usize, f: usize) -> f64 {
        self.data[self.idx(seg, t, f)]
    }

    pub fn set(&mut self, seg: usize, t: usize, f: usize, v: f64) {
        let i = self.idx(seg, t, f);
        self.data[i] = v;
    }

    pub fn n_segments(&self) -> usize {
        self.segment_ids.len()
    }
}

/// Per-segment speed targets at output granularity; NaN marks missing buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSeries {
    pub grid: TimeGrid,
    pub segment_ids: Vec<String>,
    /// speeds[segment][bucket], km/h (never normalized in place).
    pub speeds: Vec<Vec<f64>>,
}

pub type HolidayCalendar = HashSet<NaiveDate>;

/// Loads a holiday CSV with header `date,name`.
pub fn load_holidays(path: &Path) -> Result<HolidayCalendar, FrtpError> {
    let mut out = HashSet::new();
    let mut reader = csv::Reader::from_path(path)?;
    for row in reader.records() {
        let row = row?;
        out.insert(parse_date(&row[0])?);
    }
    Ok(out)
}

/// (dayofweek Monday=0, is_holiday 0/1, hour 0-23) for a timestamp.
pub fn calendar_features(t: EpochMinutes, holidays: &HolidayCalendar) -> (u32, u8, u32) {
    let dow = day_of_week(t);
    let is_holiday = u8::from(holidays.contains(&date_of(t)));
    (dow, is_holiday, hour_of_day(t))
}

/// R = output_step / input_step; the max-pool interval and stride.
pub fn pooling_ratio(input_step_minutes: u32, output_step_minutes: u32) -> Result<usize, FrtpError> {
    if input_step_minutes == 0 || output_step_minutes % input_step_minutes != 0 {
        return Err(FrtpError::NotDivisible { input: input_step_minutes, output: output_step_minutes });
    }
    Ok((output_step_minutes / input_step_minutes) as usize)
}

// ---------------------------------------------------------------------------
// Group assembly
// ---------------------------------------------------------------------------

/// Traffic counter records on the 5-minute input grid; missing buckets NaN.
pub fn build_traffic_group(
    records: &[TrafficRecord],
    graph: &RoadGraph,
    grid: &TimeGrid,
) -> FeatureGroup {
    let segment_ids: Vec<String> = graph.segments().iter().map(|s| s.id.clone()).collect();
    let index: BTreeMap<String, usize> =
        segment_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let mut g = FeatureGroup {
        name: GroupName::Traffic,
        grid: grid.clone(),
        n_features: TRAFFIC_FEATURES.len(),
        data: vec![f64::NAN; segment_ids.len() * grid.len * TRAFFIC_FEATURES.len()],
        segment_ids,
    };
    for r in records {
        let Some(&seg) = index.get(r.segment_id.as_str()) else { continue };
        let Some(t) = grid.bucket(r.timestamp) else { continue };
        g.set(seg, t, 0, r.all_cars as f64);
        g.set(seg, t, 1, r.speed);
        g.set(seg, t, 2, r.occ);
    }
    g
}

/// Mean speed per output bucket; NaN when no 5-minute observation is present.
pub fn build_target_series(traffic: &FeatureGroup, out_grid: &TimeGrid) -> Result<TargetSeries, FrtpError> {
    let r = pooling_ratio(traffic.grid.step_minutes, out_grid.step_minutes)?;
    let mut speeds = vec![vec![f64::NAN; out_grid.len]; traffic.n_segments()];
    for (seg, row) in speeds.iter_mut().enumerate() {
        for (b, out) in row.iter_mut().enumerate() {
            let t0 = out_grid.bucket_start(b);
            let Some(start) = traffic.grid.bucket(t0) else { continue };
            let mut sum = 0.0;
            let mut n = 0usize;
            for t in start..(start + r).min(traffic.grid.len) {
                let v = traffic.get(seg, t, 1);
                if v.is_finite() {
                    sum += v;
                    n += 1;
                }
            }
            if n > 0 {
                *out = sum / n as f64;
            }
        }
    }
    Ok(TargetSeries { grid: out_grid.clone(), segment_ids: traffic.segment_ids.clone(), speeds })
}

/// Time-specified count series as a one-feature group at its own granularity.
pub fn build_search_spec_group(series: &CountSeries) -> FeatureGroup {
    assert_eq!(series.kind, SeriesKind::TimeSpecified);
    let mut g = FeatureGroup::zeros(
        GroupName::SearchSpec,
        series.grid.clone(),
        series.segment_ids.clone(),
        1,
    );
    for (seg, row) in series.counts.iter().enumerate() {
        for (t, &v) in row.iter().enumerate() {
            g.set(seg, t, 0, v as f64);
        }
    }
    g
}

/// The four lookback-window series stacked as one group with four features.
pub fn build_search_unspec_group(series: &[CountSeries]) -> Result<FeatureGroup, FrtpError> {
    if series.is_empty() {
        return Err(FrtpError::EmptyInput("no unspecified count series".into()));
    }
    let grid = series[0].grid.clone();
    let segment_ids = series[0].segment_ids.clone();
    for s in series {
        if s.grid != grid || s.segment_ids != segment_ids {
            return Err(FrtpError::ShapeMismatch("unspecified series grids differ".into()));
        }
        if !matches!(s.kind, SeriesKind::Unspecified { .. }) {
            return Err(FrtpError::BadConfig("expected unspecified series".into()));
        }
    }
    let mut g = FeatureGroup::zeros(GroupName::SearchUnspec, grid, segment_ids, series.len());
    for (f, s) in series.iter().enumerate() {
        for (seg, row) in s.counts.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                g.set(seg, t, f, v as f64);
            }
        }
    }
    Ok(g)
}

/// Integer-coded calendar channels broadcast across segments.
pub fn build_calendar_group(
    grid: &TimeGrid,
    holidays: &HolidayCalendar,
    segment_ids: Vec<String>,
) -> FeatureGroup {
    let mut g = FeatureGroup::zeros(GroupName::Calendar, grid.clone(), segment_ids, 3);
    for t in 0..grid.len {
        let (dow, hol, hour) = calendar_features(grid.bucket_start(t), holidays);
        for seg in 0..g.n_segments() {
            g.set(seg, t, 0, dow as f64);
            g.set(seg, t, 1, hol as f64);
            g.set(seg, t, 2, hour as f64);
        }
    }
    g
}

/// KP index and endpoint degree sum, broadcast along time as constants.
pub fn build_static_group(graph: &RoadGraph, grid: &TimeGrid) -> FeatureGroup {
    let segment_ids: Vec<String> = graph.segments().iter().map(|s| s.id.clone()).collect();
    let mut g = FeatureGroup::zeros(GroupName::Static, grid.clone(), segment_ids, 2);
    for (seg_i, s) in graph.segments().iter().enumerate() {
        let deg = graph.degree_sum(&s.from_ic).unwrap_or(0) + graph.degree_sum(&s.to_ic).unwrap_or(0);
        for t in 0..grid.len {
            g.set(seg_i, t, 0, s.kp_index as f64);
            g.set(seg_i, t, 1, deg as f64);
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

const STDDEV_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    /// Per-group, per-feature (mean, stddev) over the fit span.
    pub input_stats: BTreeMap<GroupName, Vec<(f64, f64)>>,
    pub target_min: f64,
    pub target_max: f64,
    /// Training range the statistics were fitted on, epoch minutes.
    pub fit_span: (EpochMinutes, EpochMinutes),
}

/// Fits standardization statistics on the training span only. Welford's
/// update keeps the pass single and stable; NaN cells are skipped.
pub fn fit_normalizer(
    groups: &[FeatureGroup],
    targets: &TargetSeries,
    fit_span: (EpochMinutes, EpochMinutes),
) -> Result<NormalizerState, FrtpError> {
    let (lo, hi) = fit_span;
    if lo >= hi {
        return Err(FrtpError::SpanTooShort("normalizer fit span is empty".into()));
    }
    let mut input_stats = BTreeMap::new();
    for g in groups {
        let mut stats = Vec::with_capacity(g.n_features);
        for f in 0..g.n_features {
            let mut n = 0u64;
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for t in 0..g.grid.len {
                let ts = g.grid.bucket_start(t);
                if ts < lo || ts >= hi {
                    continue;
                }
                for seg in 0..g.n_segments() {
                    let v = g.get(seg, t, f);
                    if !v.is_finite() {
                        continue;
                    }
                    n += 1;
                    let d = v - mean;
                    mean += d / n as f64;
                    m2 += d * (v - mean);
                }
            }
            if n == 0 {
                return Err(FrtpError::EmptyInput(format!(
                    "no observations for {} feature {f} in fit span",
                    g.name.as_str()
                )));
            }
            let std = (m2 / n as f64).sqrt().max(STDDEV_GUARD);
            stats.push((mean, std));
        }
        input_stats.insert(g.name, stats);
    }
    let mut tmin = f64::INFINITY;
    let mut tmax = f64::NEG_INFINITY;
    for (b, _) in (0..targets.grid.len).map(|b| (b, ())) {
        let ts = targets.grid.bucket_start(b);
        if ts < lo || ts >= hi {
            continue;
        }
        for row in &targets.speeds {
            let v = row[b];
            if v.is_finite() {
                tmin = tmin.min(v);
                tmax = tmax.max(v);
            }
        }
    }
    if !tmin.is_finite() {
        return Err(FrtpError::EmptyInput("no target observations in fit span".into()));
    }
    if tmin == tmax {
        return Err(FrtpError::DegenerateTarget(tmin));
    }
    Ok(NormalizerState { input_stats, target_min: tmin, target_max: tmax, fit_span })
}

impl NormalizerState {
    /// Standardizes a group in place: (x - mean) / std per feature.
    pub fn apply_group(&self, group: &mut FeatureGroup) -> Result<(), FrtpError> {
        let stats = self
            .input_stats
            .get(&group.name)
            .ok_or_else(|| FrtpError::BadConfig(format!("no stats for group {}", group.name.as_str())))?;
        if stats.len() != group.n_features {
            return Err(FrtpError::ShapeMismatch("feature count changed since fit".into()));
        }
        for seg in 0..group.n_segments() {
            for t in 0..group.grid.len {
                for (f, &(mean, std)) in stats.iter().enumerate() {
                    let i = group.idx(seg, t, f);
                    group.data[i] = (group.data[i] - mean) / std;
                }
            }
        }
        Ok(())
    }

    /// Maps a speed into [0, 1] over the fitted range.
    pub fn normalize_target(&self, speed: f64) -> f64 {
        (speed - self.target_min) / (self.target_max - self.target_min)
    }

    /// Recovers a speed in km/h from its normalized value.
    pub fn invert_target(&self, y: f64) -> f64 {
        y * (self.target_max - self.target_min) + self.target_min
    }
}

// ---------------------------------------------------------------------------
// Supervised windows
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Number of input buckets at the input (traffic) granularity.
    pub input_size: usize,
    /// Whole days between input end and target day start.
    pub n_day_interval: u32,
    /// Number of target buckets at the output granularity.
    pub output_size: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), FrtpError> {
        if self.input_size == 0 || self.output_size == 0 {
            return Err(FrtpError::BadConfig("window sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One input window per group plus its target block.
#[derive(Debug, Clone)]
pub struct Sample {
    /// End of the input span (exclusive), a day boundary.
    pub anchor: EpochMinutes,
    pub target_start: EpochMinutes,
    /// Per-group input tensors, same layout as FeatureGroup.data, with the
    /// group's own window length.
    pub inputs: Vec<SampleInput>,
    /// Normalized target speeds, [segment][output bucket].
    pub target: Vec<Vec<f64>>,
    /// Raw target speeds in km/h, same shape.
    pub target_raw: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SampleInput {
    pub name: GroupName,
    pub t_len: usize,
    pub n_features: usize,
    pub step_minutes: u32,
    /// Row-major [segment][time][feature].
    pub data: Vec<f64>,
}

impl SampleInput {
    #[inline]
    pub fn get(&self, seg: usize, t: usize, f: usize) -> f64 {
        self.data[(seg * self.t_len + t) * self.n_features + f]
    }
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct WindowReport {
    pub built: usize,
    pub dropped_missing_target: usize,
    pub dropped_missing_input: usize,
}

/// Longest run of consecutive NaNs tolerable inside an input window before
/// the sample is dropped instead of gap-filled.
const LOCF_CAP: usize = 3;

/// Cuts supervised windows at day-boundary anchors. The input covers
/// `input_size` buckets of the input granularity ending at the anchor; the
/// target covers `output_size` output buckets of the day starting
/// `n_day_interval` days after the anchor. Gaps inside an input window are
/// filled by last-observation-carried-forward up to LOCF_CAP buckets.
pub fn build_windows(
    groups: &[FeatureGroup],
    targets: &TargetSeries,
    normalizer: &NormalizerState,
    spec: &WindowSpec,
    input_step_minutes: u32,
) -> Result<(Vec<Sample>, WindowReport), FrtpError> {
    spec.validate()?;
    let span_min = spec.input_size as i64 * input_step_minutes as i64;
    for g in groups {
        if span_min % g.step_minutes() != 0 {
            return Err(FrtpError::BadConfig(format!(
                "input span {span_min} min not divisible by {} step",
                g.name.as_str()
            )));
        }
    }
    let earliest_start = groups.iter().map(|g| g.grid.start).max().unwrap_or(targets.grid.start);
    let latest_end = groups.iter().map(|g| g.grid.end()).min().unwrap_or(targets.grid.end());
    let out_step = targets.grid.step_minutes as i64;
    let target_span = spec.output_size as i64 * out_step;

    // Anchors at day boundaries.
    let first_anchor = {
        let min_anchor = earliest_start + span_min;
        let rem = min_anchor.rem_euclid(MINUTES_PER_DAY);
        if rem == 0 { min_anchor } else { min_anchor + MINUTES_PER_DAY - rem }
    };
    let mut samples = Vec::new();
    let mut report = WindowReport::default();
    let mut anchor = first_anchor;
    loop {
        let target_start = anchor + spec.n_day_interval as i64 * MINUTES_PER_DAY;
        let target_end = target_start + target_span;
        if anchor > latest_end || target_end > targets.grid.end() {
            break;
        }
        match cut_sample(groups, targets, normalizer, spec, anchor, target_start, span_min) {
            CutResult::Sample(s) => {
                samples.push(s);
                report.built += 1;
            }
            CutResult::MissingInput => report.dropped_missing_input += 1,
            CutResult::MissingTarget => report.dropped_missing_target += 1,
        }
        anchor += MINUTES_PER_DAY;
    }
    if samples.is_empty() && report.dropped_missing_input == 0 && report.dropped_missing_target == 0 {
        return Err(FrtpError::SpanTooShort(format!(
            "no admissible anchors for input_size={} interval={} output_size={}",
            spec.input_size, spec.n_day_interval, spec.output_size
        )));
    }
    Ok((samples, report))
}

impl FeatureGroup {
    fn step_minutes(&self) -> i64 {
        self.grid.step_minutes as i64
    }
}

enum CutResult {
    Sample(Sample),
    MissingInput,
    MissingTarget,
}

fn cut_sample(
    groups: &[FeatureGroup],
    targets: &TargetSeries,
    normalizer: &NormalizerState,
    spec: &WindowSpec,
    anchor: EpochMinutes,
    target_start: EpochMinutes,
    span_min: i64,
) -> CutResult {
    // Target block first: any missing bucket drops the sample.
    let Some(tb0) = targets.grid.bucket(target_start) else { return CutResult::MissingTarget };
    let n_seg = targets.segment_ids.len();
    let mut target = vec![vec![0.0; spec.output_size]; n_seg];
    let mut target_raw = vec![vec![0.0; spec.output_size]; n_seg];
    for seg in 0..n_seg {
        for b in 0..spec.output_size {
            let v = targets.speeds[seg][tb0 + b];
            if !v.is_finite() {
                return CutResult::MissingTarget;
            }
            target_raw[seg][b] = v;
            target[seg][b] = normalizer.normalize_target(v);
        }
    }
    // Input windows per group, LOCF-filled.
    let mut inputs = Vec::with_capacity(groups.len());
    for g in groups {
        let t_len = (span_min / g.step_minutes()) as usize;
        let start_min = anchor - span_min;
        let Some(t0) = g.grid.bucket(start_min) else { return CutResult::MissingInput };
        if t0 + t_len > g.grid.len {
            return CutResult::MissingInput;
        }
        let mut data = vec![0.0; g.n_segments() * t_len * g.n_features];
        for seg in 0..g.n_segments() {
            for f in 0..g.n_features {
                let mut last_seen: Option<f64> = None;
                let mut gap = 0usize;
                for t in 0..t_len {
                    let mut v = g.get(seg, t0 + t, f);
                    if v.is_finite() {
                        last_seen = Some(v);
                        gap = 0;
                    } else {
                        gap += 1;
                        match last_seen {
                            Some(prev) if gap <= LOCF_CAP => v = prev,
                            _ => return CutResult::MissingInput,
                        }
                    }
                    data[(seg * t_len + t) * g.n_features + f] = v;
                }
            }
        }
        inputs.push(SampleInput {
            name: g.name,
            t_len,
            n_features: g.n_features,
            step_minutes: g.grid.step_minutes,
            data,
        });
    }
    CutResult::Sample(Sample { anchor, target_start, inputs, target, target_raw })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub segment_ids: Vec<String>,
    pub groups: Vec<GroupMeta>,
    pub target: GridMeta,
    pub normalizer: Option<NormalizerState>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroupMeta {
    pub name: GroupName,
    pub n_features: usize,
    #[serde(flatten)]
    pub grid: GridMeta,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GridMeta {
    pub start: String,
    pub step_minutes: u32,
    pub len: usize,
}

impl GridMeta {
    fn from_grid(g: &TimeGrid) -> Self {
        GridMeta { start: format_timestamp(g.start), step_minutes: g.step_minutes, len: g.len }
    }

    fn to_grid(&self) -> Result<TimeGrid, FrtpError> {
        TimeGrid::new(parse_timestamp(&self.start)?, self.step_minutes, self.len)
    }
}

/// One dataset directory: `<group>.csv` per group (row per segment x feature),
/// `targets.csv`, and `manifest.json`.
pub struct Dataset {
    pub groups: Vec<FeatureGroup>,
    pub targets: TargetSeries,
    pub normalizer: Option<NormalizerState>,
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<(), FrtpError> {
    std::fs::create_dir_all(dir)?;
    for g in &dataset.groups {
        let mut out = std::io::BufWriter::new(std::fs::File::create(
            dir.join(format!("{}.csv", g.name.as_str())),
        )?);
        let header: Vec<String> = ["segment_id".into(), "feature".into()]
            .into_iter()
            .chain((0..g.grid.len).map(|b| format!("bucket_{b}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (seg, sid) in g.segment_ids.iter().enumerate() {
            for f in 0..g.n_features {
                write!(out, "{sid},{f}")?;
                for t in 0..g.grid.len {
                    write!(out, ",{}", g.get(seg, t, f))?;
                }
                writeln!(out)?;
            }
        }
        out.flush()?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("targets.csv"))?);
    let header: Vec<String> = std::iter::once("segment_id".to_string())
        .chain((0..dataset.targets.grid.len).map(|b| format!("bucket_{b}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (sid, row) in dataset.targets.segment_ids.iter().zip(&dataset.targets.speeds) {
        write!(out, "{sid}")?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    let manifest = DatasetManifest {
        segment_ids: dataset.targets.segment_ids.clone(),
        groups: dataset
            .groups
            .iter()
            .map(|g| GroupMeta {
                name: g.name,
                n_features: g.n_features,
                grid: GridMeta::from_grid(&g.grid),
            })
            .collect(),
        target: GridMeta::from_grid(&dataset.targets.grid),
        normalizer: dataset.normalizer.clone(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, FrtpError> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut groups = Vec::new();
    for meta in &manifest.groups {
        let grid = meta.grid.to_grid()?;
        let mut g = FeatureGroup::zeros(meta.name, grid, manifest.segment_ids.clone(), meta.n_features);
        let mut reader = csv::Reader::from_path(dir.join(format!("{}.csv", meta.name.as_str())))?;
        for row in reader.records() {
            let row = row?;
            let sid = &row[0];
            let seg = manifest
                .segment_ids
                .iter()
                .position(|s| s == sid)
                .ok_or_else(|| FrtpError::BadConfig(format!("unknown segment {sid}")))?;
            let f: usize = row[1]
                .parse()
                .map_err(|_| FrtpError::BadConfig(format!("bad feature index {:?}", &row[1])))?;
            for t in 0..g.grid.len {
                let v: f64 = row[t + 2]
                    .parse()
                    .map_err(|_| FrtpError::BadConfig("bad feature value".into()))?;
                g.set(seg, t, f, v);
            }
        }
        groups.push(g);
    }
    let target_grid = manifest.target.to_grid()?;
    let mut speeds = vec![vec![f64::NAN; target_grid.len]; manifest.segment_ids.len()];
    let mut reader = csv::Reader::from_path(dir.join("targets.csv"))?;
    for row in reader.records() {
        let row = row?;
        let sid = &row[0];
        let seg = manifest
            .segment_ids
            .iter()
            .position(|s| s == sid)
            .ok_or_else(|| FrtpError::BadConfig(format!("unknown segment {sid}")))?;
        for t in 0..target_grid.len {
            speeds[seg][t] = row[t + 1]
                .parse()
                .map_err(|_| FrtpError::BadConfig("bad target value".into()))?;
        }
    }
    Ok(Dataset {
        groups,
        targets: TargetSeries {
            grid: target_grid,
            segment_ids: manifest.segment_ids,
            speeds,
        },
        normalizer: manifest.normalizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::oracles::two_pass_stats;

    fn holidays() -> HolidayCalendar {
        let mut h = HashSet::new();
        h.insert(NaiveDate::from_ymd_opt(2022, 5, 3).unwrap());
        h
    }

    #[test]
    fn calendar_known_dates() {
        let h = holidays();
        let t = parse_timestamp("2022-05-03 10:00:00").unwrap();
        assert_eq!(calendar_features(t, &h), (1, 1, 10)); // Tuesday, holiday
        let t = parse_timestamp("2022-05-14 00:00:00").unwrap();
        assert_eq!(calendar_features(t, &h), (5, 0, 0)); // Saturday, midnight
    }

    #[test]
    fn pooling_ratio_reference_values() {
        assert_eq!(pooling_ratio(5, 60).unwrap(), 12);
        assert_eq!(pooling_ratio(15, 60).unwrap(), 4);
        assert_eq!(pooling_ratio(60, 60).unwrap(), 1);
        assert!(pooling_ratio(7, 60).is_err());
    }

    fn tiny_group(values: &[f64]) -> FeatureGroup {
        let grid = TimeGrid::new(0, 60, values.len()).unwrap();
        let mut g = FeatureGroup::zeros(GroupName::Traffic, grid, vec!["S".into()], 1);
        for (t, &v) in values.iter().enumerate() {
            g.set(0, t, 0, v);
        }
        g
    }

    fn tiny_targets(values: &[f64]) -> TargetSeries {
        TargetSeries {
            grid: TimeGrid::new(0, 60, values.len()).unwrap(),
            segment_ids: vec!["S".into()],
            speeds: vec![values.to_vec()],
        }
    }

    #[test]
    fn normalizer_matches_two_pass_oracle() {
        let values: Vec<f64> = (0..200).map(|i| ((i * 37) % 91) as f64 * 0.7 - 20.0).collect();
        let g = tiny_group(&values);
        let targets = tiny_targets(&values.iter().map(|v| v + 100.0).collect::<Vec<_>>());
        let span = (0, g.grid.end());
        let norm = fit_normalizer(&[g.clone()], &targets, span).unwrap();
        let (mean, std) = two_pass_stats(&values);
        let (m, s) = norm.input_stats[&GroupName::Traffic][0];
        assert!((m - mean).abs() < 1e-12);
        assert!((s - std).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_standardizes_to_zero() {
        let g = tiny_group(&[5.0; 50]);
        let targets = tiny_targets(&(0..50).map(|i| 40.0 + i as f64).collect::<Vec<_>>());
        let norm = fit_normalizer(&[g.clone()], &targets, (0, g.grid.end())).unwrap();
        let mut g2 = g;
        norm.apply_group(&mut g2).unwrap();
        assert!(g2.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn target_minmax_endpoints_and_roundtrip() {
        let g = tiny_group(&[1.0, 2.0]);
        let targets = tiny_targets(&[40.0, 80.0]);
        let norm = fit_normalizer(&[g], &targets, (0, 120)).unwrap();
        assert_eq!(norm.normalize_target(40.0), 0.0);
        assert_eq!(norm.normalize_target(80.0), 1.0);
        for v in [40.0, 55.5, 80.0] {
            assert!((norm.invert_target(norm.normalize_target(v)) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_target_rejected() {
        let g = tiny_group(&[1.0, 2.0]);
        let targets = tiny_targets(&[50.0, 50.0]);
        assert!(matches!(
            fit_normalizer(&[g], &targets, (0, 120)),
            Err(FrtpError::DegenerateTarget(_))
        ));
    }

    fn day_grid_group(days: i64, step: u32, name: GroupName, n_features: usize) -> FeatureGroup {
        let start = parse_timestamp("2022-05-01 00:00:00").unwrap();
        let len = (days * MINUTES_PER_DAY / step as i64) as usize;
        let grid = TimeGrid::new(start, step, len).unwrap();
        let mut g = FeatureGroup::zeros(name, grid, vec!["S0".into(), "S1".into()], n_features);
        for seg in 0..2 {
            for t in 0..g.grid.len {
                for f in 0..n_features {
                    g.set(seg, t, f, (t % 97) as f64 + seg as f64);
                }
            }
        }
        g
    }

    fn day_grid_targets(days: i64) -> TargetSeries {
        let start = parse_timestamp("2022-05-01 00:00:00").unwrap();
        let len = (days * 24) as usize;
        let grid = TimeGrid::new(start, 60, len).unwrap();
        let speeds = (0..2)
            .map(|seg| (0..len).map(|t| 60.0 + ((t + seg) % 24) as f64).collect())
            .collect();
        TargetSeries { grid, segment_ids: vec!["S0".into(), "S1".into()], speeds }
    }

    #[test]
    fn window_count_on_three_days() {
        let g = day_grid_group(3, 5, GroupName::Traffic, 1);
        let targets = day_grid_targets(3);
        let norm = fit_normalizer(&[g.clone()], &targets, (g.grid.start, g.grid.end())).unwrap();
        let spec = WindowSpec { input_size: 24 * 12, n_day_interval: 0, output_size: 24 };
        let (samples, report) = build_windows(&[g], &targets, &norm, &spec, 5).unwrap();
        assert_eq!(report.built, 2);
        // First sample's input is day 1, target is day 2.
        let day2 = parse_timestamp("2022-05-02 00:00:00").unwrap();
        assert_eq!(samples[0].anchor, day2);
        assert_eq!(samples[0].target_start, day2);
    }

    #[test]
    fn interval_six_targets_next_week() {
        let g = day_grid_group(10, 5, GroupName::Traffic, 1);
        let targets = day_grid_targets(10);
        let norm = fit_normalizer(&[g.clone()], &targets, (g.grid.start, g.grid.end())).unwrap();
        let spec = WindowSpec { input_size: 24 * 12, n_day_interval: 6, output_size: 24 };
        let (samples, _) = build_windows(&[g], &targets, &norm, &spec, 5).unwrap();
        let s = &samples[0];
        assert_eq!(s.target_start - s.anchor, 6 * MINUTES_PER_DAY);
        // Target day is the same weekday of next week relative to the input day.
        assert_eq!(day_of_week(s.target_start), day_of_week(s.anchor - MINUTES_PER_DAY));
    }

    #[test]
    fn closed_form_sample_count_thirty_days() {
        let days = 30i64;
        let g5 = day_grid_group(days, 5, GroupName::Traffic, 3);
        let g60 = day_grid_group(days, 60, GroupName::Calendar, 3);
        let targets = day_grid_targets(days);
        let norm =
            fit_normalizer(&[g5.clone(), g60.clone()], &targets, (g5.grid.start, g5.grid.end()))
                .unwrap();
        for (in_days, interval) in [(1i64, 0u32), (7, 0), (1, 6), (7, 6)] {
            let spec = WindowSpec {
                input_size: (in_days * 24 * 12) as usize,
                n_day_interval: interval,
                output_size: 24,
            };
            let (samples, _) =
                build_windows(&[g5.clone(), g60.clone()], &targets, &norm, &spec, 5).unwrap();
            let expected = days - in_days - interval as i64 - 1 + 1;
            assert_eq!(samples.len() as i64, expected, "in_days={in_days} interval={interval}");
        }
    }

    #[test]
    fn no_leakage_for_table_grid() {
        let g5 = day_grid_group(20, 5, GroupName::Traffic, 3);
        let targets = day_grid_targets(20);
        let norm = fit_normalizer(&[g5.clone()], &targets, (g5.grid.start, g5.grid.end())).unwrap();
        for input_size in [24 * 12, 168 * 12] {
            for interval in [0, 6] {
                let spec = WindowSpec { input_size, n_day_interval: interval, output_size: 24 };
                let (samples, _) = build_windows(&[g5.clone()], &targets, &norm, &spec, 5).unwrap();
                for s in &samples {
                    let max_input_ts = s.anchor - 5; // last 5-min bucket start
                    assert!(max_input_ts < s.target_start);
                }
            }
        }
    }

    #[test]
    fn locf_fills_short_gaps_and_drops_long_ones() {
        let mut g = day_grid_group(3, 60, GroupName::Traffic, 1);
        let targets = day_grid_targets(3);
        let norm = fit_normalizer(&[g.clone()], &targets, (g.grid.start, g.grid.end())).unwrap();
        let spec = WindowSpec { input_size: 24, n_day_interval: 0, output_size: 24 };
        // Poke a 3-bucket gap into day 1: gets filled.
        for t in 5..8 {
            g.set(0, t, 0, f64::NAN);
        }
        let (samples, report) = build_windows(&[g.clone()], &targets, &norm, &spec, 60).unwrap();
        assert_eq!(report.built, 2);
        let filled = samples[0].inputs[0].get(0, 5, 0);
        assert_eq!(filled, samples[0].inputs[0].get(0, 4, 0));
        // A 4-bucket gap drops the sample.
        g.set(0, 8, 0, f64::NAN);
        let (_, report) = build_windows(&[g], &targets, &norm, &spec, 60).unwrap();
        assert_eq!(report.built, 1);
        assert_eq!(report.dropped_missing_input, 1);
    }

    #[test]
    fn missing_target_bucket_drops_sample() {
        let g = day_grid_group(3, 60, GroupName::Traffic, 1);
        let mut targets = day_grid_targets(3);
        targets.speeds[1][30] = f64::NAN; // inside day 2
        let norm = fit_normalizer(&[g.clone()], &targets, (g.grid.start, g.grid.end())).unwrap();
        let spec = WindowSpec { input_size: 24, n_day_interval: 0, output_size: 24 };
        let (_, report) = build_windows(&[g], &targets, &norm, &spec, 60).unwrap();
        assert_eq!(report.dropped_missing_target, 1);
        assert_eq!(report.built, 1);
    }

    #[test]
    fn span_too_short_errors() {
        let g = day_grid_group(2, 60, GroupName::Traffic, 1);
        let targets = day_grid_targets(2);
        let norm = fit_normalizer(&[g.clone()], &targets, (g.grid.start, g.grid.end())).unwrap();
        let spec = WindowSpec { input_size: 24 * 7, n_day_interval: 6, output_size: 24 };
        assert!(matches!(
            build_windows(&[g], &targets, &norm, &spec, 60),
            Err(FrtpError::SpanTooShort(_))
        ));
    }
}
