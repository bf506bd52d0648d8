//! Correlation-matrix and day-type distribution analysis.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::FrtpError;
use crate::features::calendar_features;
use crate::federate::{
    accumulate_time_specified, accumulate_unspecified, classify, Classification,
    DEFAULT_WINDOWS_DAYS,
};
use crate::time::{day_of_week, TimeGrid, MINUTES_PER_DAY};

use super::pipeline::{data_span, DataDir};

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationMatrix {
    pub variables: Vec<String>,
    /// Symmetric; None marks a correlation against a degenerate (constant)
    /// column, which is undefined.
    pub values: Vec<Vec<Option<f64>>>,
    /// Variables flagged as degenerate.
    pub degenerate: Vec<String>,
}

/// Pearson correlation via single-pass co-moment updates (different
/// algorithm from the two-pass textbook oracle). None when either column is
/// constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, FrtpError> {
    if xs.len() != ys.len() {
        return Err(FrtpError::ShapeMismatch("correlation columns differ in length".into()));
    }
    if xs.is_empty() {
        return Err(FrtpError::EmptyInput("correlation over empty columns".into()));
    }
    let mut n = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    let mut m2x = 0.0;
    let mut m2y = 0.0;
    let mut cxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        n += 1.0;
        let dx = x - mx;
        mx += dx / n;
        m2x += dx * (x - mx);
        let dy = y - my;
        my += dy / n;
        m2y += dy * (y - my);
        cxy += dx * (y - my);
    }
    if m2x == 0.0 || m2y == 0.0 {
        return Ok(None);
    }
    Ok(Some(cxy / (m2x * m2y).sqrt()))
}

/// Full pairwise matrix over named columns of equal length.
pub fn correlation_matrix(columns: &[(String, Vec<f64>)]) -> Result<CorrelationMatrix, FrtpError> {
    let variables: Vec<String> = columns.iter().map(|(n, _)| n.clone()).collect();
    let k = columns.len();
    let mut values = vec![vec![None; k]; k];
    let mut degenerate = Vec::new();
    for (i, (name, xs)) in columns.iter().enumerate() {
        if pearson(xs, xs)?.is_none() {
            degenerate.push(name.clone());
        }
        for j in i..k {
            let r = if i == j {
                pearson(xs, xs)?.map(|_| 1.0)
            } else {
                pearson(xs, &columns[j].1)?
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { variables, values, degenerate })
}

#[derive(Debug, Clone, Serialize)]
pub struct DayTypeRow {
    /// `time_specified` or `unspecified`.
    pub kind: String,
    /// `weekday`, `weekend`, or `holiday`.
    pub day_type: String,
    pub n_days: usize,
    pub mean_daily_count: f64,
    pub std_daily_count: f64,
    pub min_daily_count: u64,
    pub max_daily_count: u64,
}

pub struct AnalysisReport {
    pub matrix: CorrelationMatrix,
    pub day_types: Vec<DayTypeRow>,
}

/// Builds the hourly variable table and correlates every pair; also
/// summarizes daily search counts per day type.
pub fn analyze(data: &DataDir) -> Result<AnalysisReport, FrtpError> {
    let (start, end) = data_span(&data.traffic)?;
    let n_hours = ((end - start) / 60) as usize;
    let hour_grid = TimeGrid::new(start, 60, n_hours)?;
    let five_grid = TimeGrid::new(start, 5, n_hours * 12)?;
    let graph = &data.graph;
    let n_segments = graph.segments().len();

    let mut spec = Vec::new();
    let mut unspec = Vec::new();
    for r in &data.searches {
        match classify(r) {
            Classification::TimeSpecified { .. } => spec.push(r.clone()),
            Classification::NonTimeSpecified => unspec.push(r.clone()),
        }
    }
    let (spec_5m, _) = accumulate_time_specified(&spec, graph, &five_grid)?;
    let (spec_1h, _) = accumulate_time_specified(&spec, graph, &hour_grid)?;
    let (unspec_series, _) =
        accumulate_unspecified(&unspec, graph, &hour_grid, &DEFAULT_WINDOWS_DAYS)?;

    // Hourly means of the 5-minute counter values, per segment.
    let seg_row = |sid: &str| graph.segments().iter().position(|s| s.id == sid);
    let mut sums = vec![[0.0f64; 3]; n_segments * n_hours];
    let mut counts = vec![0u32; n_segments * n_hours];
    for r in &data.traffic {
        let (Some(seg), Some(h)) = (seg_row(&r.segment_id), hour_grid.bucket(r.timestamp)) else {
            continue;
        };
        let cell = seg * n_hours + h;
        sums[cell][0] += r.all_cars as f64;
        sums[cell][1] += r.speed;
        sums[cell][2] += r.occ;
        counts[cell] += 1;
    }

    let names = [
        "dayofweek",
        "is_holiday",
        "hour",
        "degree_sum",
        "kp",
        "occ",
        "all_cars",
        "speed",
        "search_5min",
        "search_1h",
        "search_unspec_1d",
        "search_unspec_3d",
        "search_unspec_7d",
        "search_unspec_10d",
    ];
    let mut columns: Vec<(String, Vec<f64>)> =
        names.iter().map(|n| (n.to_string(), Vec::new())).collect();
    for (seg, s) in graph.segments().iter().enumerate() {
        let deg = graph.degree_sum(&s.from_ic)? + graph.degree_sum(&s.to_ic)?;
        for h in 0..n_hours {
            let cell = seg * n_hours + h;
            if counts[cell] == 0 {
                continue;
            }
            let t = hour_grid.bucket_start(h);
            let (dow, hol, hour) = calendar_features(t, &data.holidays);
            let n = counts[cell] as f64;
            // Mean 5-minute time-specified count within the hour.
            let s5: u64 = (0..12).map(|k| spec_5m.counts[seg][h * 12 + k]).sum();
            let row = [
                dow as f64,
                hol as f64,
                hour as f64,
                deg as f64,
                s.kp_index as f64,
                sums[cell][2] / n,
                sums[cell][0] / n,
                sums[cell][1] / n,
                s5 as f64 / 12.0,
                spec_1h.counts[seg][h] as f64,
                unspec_series[0].counts[seg][h] as f64,
                unspec_series[1].counts[seg][h] as f64,
                unspec_series[2].counts[seg][h] as f64,
                unspec_series[3].counts[seg][h] as f64,
            ];
            for (col, v) in columns.iter_mut().zip(row) {
                col.1.push(v);
            }
        }
    }
    let matrix = correlation_matrix(&columns)?;

    // Daily totals per search kind, grouped by day type. Time-specified
    // records are attributed to their anchor day, the rest to the search day.
    let n_days = ((end - start) / MINUTES_PER_DAY) as usize;
    let day_of = |t: i64| -> Option<usize> {
        let d = (t - start).div_euclid(MINUTES_PER_DAY);
        (0..n_days as i64).contains(&d).then_some(d as usize)
    };
    let mut per_day = vec![[0u64; 2]; n_days];
    for r in &data.searches {
        let (kind, t) = match classify(r) {
            Classification::TimeSpecified { anchor, .. } => (0, anchor),
            Classification::NonTimeSpecified => (1, r.search_time),
        };
        if let Some(d) = day_of(t) {
            per_day[d][kind] += 1;
        }
    }
    let day_type_of = |d: usize| {
        let t = start + d as i64 * MINUTES_PER_DAY;
        if data.holidays.contains(&crate::time::date_of(t)) {
            "holiday"
        } else if day_of_week(t) >= 5 {
            "weekend"
        } else {
            "weekday"
        }
    };
    let mut day_types = Vec::new();
    for (kind_i, kind) in ["time_specified", "unspecified"].iter().enumerate() {
        for dt in ["weekday", "weekend", "holiday"] {
            let xs: Vec<u64> = (0..n_days)
                .filter(|&d| day_type_of(d) == dt)
                .map(|d| per_day[d][kind_i])
                .collect();
            if xs.is_empty() {
                continue;
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<u64>() as f64 / n;
            let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
            day_types.push(DayTypeRow {
                kind: kind.to_string(),
                day_type: dt.to_string(),
                n_days: xs.len(),
                mean_daily_count: mean,
                std_daily_count: var.sqrt(),
                min_daily_count: *xs.iter().min().unwrap(),
                max_daily_count: *xs.iter().max().unwrap(),
            });
        }
    }
    Ok(AnalysisReport { matrix, day_types })
}

pub fn write_correlation_csv(path: &Path, m: &CorrelationMatrix) -> Result<(), FrtpError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "variable,{}", m.variables.join(","))?;
    for (name, row) in m.variables.iter().zip(&m.values) {
        write!(out, "{name}")?;
        for v in row {
            match v {
                Some(r) => write!(out, ",{r}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_day_type_csv(path: &Path, rows: &[DayTypeRow]) -> Result<(), FrtpError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "kind,day_type,n_days,mean_daily_count,std_daily_count,min_daily_count,max_daily_count")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.kind,
            r.day_type,
            r.n_days,
            r.mean_daily_count,
            r.std_daily_count,
            r.min_daily_count,
            r.max_daily_count
        )?;
    }
    Ok(())
}
