//! Ablation and parameter-grid experiment runner.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::FrtpError;
use crate::features::{build_windows, fit_normalizer, NormalizerState, Sample, WindowSpec};
use crate::ingestion::{format_search_line, format_traffic_line};
use crate::model::{evaluate_mae, forward, train, ModelConfig, TrainConfig, DEFAULT_SEED};
use crate::time::{EpochMinutes, MINUTES_PER_DAY};

use super::pipeline::{prepare, DataDir, FeatureSwitches};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDays {
    pub train: u32,
    pub validation: u32,
    pub test: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub input_step_minutes: u32,
    pub output_step_minutes: u32,
    pub window: WindowSpec,
    /// Ablation rows: one trained model per switch combination.
    pub feature_rows: Vec<FeatureSwitches>,
    /// Grid axes: one cell per (input_size, n_day_interval) pair.
    pub grid_input_sizes: Vec<usize>,
    pub grid_intervals: Vec<u32>,
    pub split_days: SplitDays,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lstm_hidden: usize,
    pub conv_kernel_time: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: DEFAULT_SEED,
            input_step_minutes: 5,
            output_step_minutes: 60,
            window: WindowSpec { input_size: 24 * 12, n_day_interval: 0, output_size: 24 },
            feature_rows: ablation_preset(),
            grid_input_sizes: vec![24 * 12, 168 * 12],
            grid_intervals: vec![0, 6],
            split_days: SplitDays { train: 28, validation: 7, test: 7 },
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            lstm_hidden: 32,
            conv_kernel_time: 3,
        }
    }
}

/// The shipped ablation rows: traffic alone, then cumulative additions.
pub fn ablation_preset() -> Vec<FeatureSwitches> {
    vec![
        FeatureSwitches::traffic_only(),
        FeatureSwitches { traffic: true, time: true, search: false, search_unspec: false },
        FeatureSwitches { traffic: true, time: true, search: true, search_unspec: false },
        FeatureSwitches::all(),
    ]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, FrtpError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<(), FrtpError> {
        self.window.validate()?;
        if self.split_days.train == 0 || self.split_days.test == 0 {
            return Err(FrtpError::BadConfig("train and test spans must be non-empty".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(FrtpError::BadConfig("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    /// Hex digest identifying config + seed + data.
    pub fingerprint: String,
    pub label: String,
    pub mae: Option<f64>,
    pub per_segment_mae: Vec<f64>,
    pub runtime_secs: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub segment_ids: Vec<String>,
}

impl ResultTable {
    /// Successful rows first, ranked by MAE; failed rows trail.
    fn sort(&mut self) {
        self.rows.sort_by(|a, b| match (a.mae, b.mae) {
            (Some(x), Some(y)) => x.partial_cmp(&y).unwrap(),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.fingerprint.cmp(&b.fingerprint),
        });
    }

    pub fn row(&self, label: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FrtpError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let seg_cols: Vec<String> =
            self.segment_ids.iter().map(|s| format!("mae_{s}")).collect();
        writeln!(
            out,
            "fingerprint,label,mae,runtime_secs,n_train,n_test,error,{}",
            seg_cols.join(",")
        )?;
        for r in &self.rows {
            write!(
                out,
                "{},{},{},{},{},{},{}",
                r.fingerprint,
                r.label,
                r.mae.map(|m| m.to_string()).unwrap_or_default(),
                r.runtime_secs,
                r.n_train,
                r.n_test,
                r.error.clone().unwrap_or_default().replace(',', ";")
            )?;
            for v in &r.per_segment_mae {
                write!(out, ",{v}")?;
            }
            if r.per_segment_mae.is_empty() {
                for _ in &self.segment_ids {
                    write!(out, ",")?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<44} {:>10} {:>9}  {}\n", "label", "MAE", "time(s)", "status");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<44} {:>10} {:>9.1}  {}\n",
                r.label,
                r.mae.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into()),
                r.runtime_secs,
                r.error.clone().unwrap_or_else(|| "ok".into())
            ));
        }
        s
    }
}

/// Stable digest over the experiment cell and the raw records it trained on.
fn fingerprint(cfg: &ExperimentConfig, label: &str, data_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_string(cfg).expect("config serializes"));
    h.update(label.as_bytes());
    h.update(data_hash.as_bytes());
    format!("{:x}", h.finalize())[..16].to_string()
}

pub fn hash_data(data: &DataDir) -> String {
    let mut h = Sha256::new();
    for r in &data.traffic {
        h.update(format_traffic_line(r));
        h.update(b"\n");
    }
    for r in &data.searches {
        h.update(format_search_line(r));
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())[..16].to_string()
}

pub struct TrainedCell {
    pub config: ModelConfig,
    pub result: crate::model::TrainResult,
    pub normalizer: NormalizerState,
    pub test_samples: Vec<Sample>,
    pub mae: f64,
    pub per_segment_mae: Vec<f64>,
    pub n_train: usize,
}

/// Chronological sample split by target day: train < validation < test.
pub fn split_samples(
    samples: Vec<Sample>,
    span_start: EpochMinutes,
    split: SplitDays,
) -> (Vec<Sample>, Vec<Sample>, Vec<Sample>) {
    let b1 = span_start + split.train as i64 * MINUTES_PER_DAY;
    let b2 = b1 + split.validation as i64 * MINUTES_PER_DAY;
    let b3 = b2 + split.test as i64 * MINUTES_PER_DAY;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        if s.target_start < b1 {
            train.push(s);
        } else if s.target_start < b2 {
            val.push(s);
        } else if s.target_start < b3 {
            test.push(s);
        }
    }
    (train, val, test)
}

/// Trains and evaluates one experiment cell.
pub fn run_one(
    data: &DataDir,
    cfg: &ExperimentConfig,
    switches: FeatureSwitches,
    window: WindowSpec,
) -> Result<TrainedCell, FrtpError> {
    cfg.validate()?;
    let prepared = prepare(data, switches, cfg.input_step_minutes, cfg.output_step_minutes)?;
    let (start, _) = prepared.span;
    let fit_end = start + cfg.split_days.train as i64 * MINUTES_PER_DAY;
    let normalizer = fit_normalizer(&prepared.groups, &prepared.targets, (start, fit_end))?;
    let mut groups = prepared.groups;
    for g in &mut groups {
        normalizer.apply_group(g)?;
    }
    let (samples, _report) =
        build_windows(&groups, &prepared.targets, &normalizer, &window, cfg.input_step_minutes)?;
    let (train_s, val_s, test_s) = split_samples(samples, start, cfg.split_days);
    if train_s.is_empty() || test_s.is_empty() {
        return Err(FrtpError::SpanTooShort(format!(
            "split left {} train / {} test samples",
            train_s.len(),
            test_s.len()
        )));
    }
    let model_cfg = ModelConfig::from_sample(
        &train_s[0],
        cfg.output_step_minutes,
        cfg.conv_kernel_time,
        cfg.lstm_hidden,
        window.output_size,
    )?;
    let tc = TrainConfig {
        seed: cfg.seed,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        ..TrainConfig::default()
    };
    let val_opt = if val_s.is_empty() { None } else { Some(val_s.as_slice()) };
    let result = train(&model_cfg, &train_s, val_opt, &normalizer, &tc)?;
    let mae = evaluate_mae(&model_cfg, &result.state, &test_s, &normalizer)?;
    let per_segment_mae = per_segment_mae(&model_cfg, &result, &test_s, &normalizer)?;
    Ok(TrainedCell {
        config: model_cfg,
        n_train: train_s.len(),
        result,
        normalizer,
        test_samples: test_s,
        mae,
        per_segment_mae,
    })
}

fn per_segment_mae(
    cfg: &ModelConfig,
    result: &crate::model::TrainResult,
    samples: &[Sample],
    normalizer: &NormalizerState,
) -> Result<Vec<f64>, FrtpError> {
    let mut abs = vec![0.0; cfg.n_segments];
    let mut n = vec![0u64; cfg.n_segments];
    for s in samples {
        let pred = forward(cfg, &result.state, s)?;
        for seg in 0..cfg.n_segments {
            for (p, t) in pred.values[seg].iter().zip(&s.target_raw[seg]) {
                if t.is_finite() {
                    abs[seg] += (normalizer.invert_target(*p) - t).abs();
                    n[seg] += 1;
                }
            }
        }
    }
    Ok(abs
        .iter()
        .zip(&n)
        .map(|(a, &k)| if k > 0 { a / k as f64 } else { f64::NAN })
        .collect())
}

fn run_cells(
    data: &DataDir,
    cfg: &ExperimentConfig,
    cells: Vec<(String, FeatureSwitches, WindowSpec)>,
) -> Result<ResultTable, FrtpError> {
    let data_hash = hash_data(data);
    let segment_ids: Vec<String> =
        data.graph.segments().iter().map(|s| s.id.clone()).collect();
    let mut rows = Vec::new();
    for (label, switches, window) in cells {
        let started = Instant::now();
        let fp = fingerprint(cfg, &label, &data_hash);
        match run_one(data, cfg, switches, window) {
            Ok(cell) => rows.push(ResultRow {
                fingerprint: fp,
                label,
                mae: Some(cell.mae),
                per_segment_mae: cell.per_segment_mae,
                runtime_secs: started.elapsed().as_secs_f64(),
                n_train: cell.n_train,
                n_test: cell.test_samples.len(),
                error: None,
            }),
            // Failed cells keep their row so the rest of the table survives.
            Err(e) => rows.push(ResultRow {
                fingerprint: fp,
                label,
                mae: None,
                per_segment_mae: Vec::new(),
                runtime_secs: started.elapsed().as_secs_f64(),
                n_train: 0,
                n_test: 0,
                error: Some(e.to_string()),
            }),
        }
    }
    let mut table = ResultTable { rows, segment_ids };
    table.sort();
    Ok(table)
}

/// One trained model per feature combination, identical seed and split.
pub fn run_ablation(data: &DataDir, cfg: &ExperimentConfig) -> Result<ResultTable, FrtpError> {
    if cfg.feature_rows.is_empty() {
        return Err(FrtpError::BadConfig("no ablation rows configured".into()));
    }
    let cells = cfg
        .feature_rows
        .iter()
        .map(|&sw| (sw.label(), sw, cfg.window))
        .collect();
    run_cells(data, cfg, cells)
}

/// One trained model per (input_size, n_day_interval) cell, all features on.
pub fn run_grid(data: &DataDir, cfg: &ExperimentConfig) -> Result<ResultTable, FrtpError> {
    if cfg.grid_input_sizes.is_empty() || cfg.grid_intervals.is_empty() {
        return Err(FrtpError::BadConfig("empty grid axes".into()));
    }
    let mut cells = Vec::new();
    for &in_size in &cfg.grid_input_sizes {
        for &interval in &cfg.grid_intervals {
            let window = WindowSpec {
                input_size: in_size,
                n_day_interval: interval,
                output_size: cfg.window.output_size,
            };
            cells.push((
                format!("in_size={in_size},n_day_interval={interval}"),
                FeatureSwitches::all(),
                window,
            ));
        }
    }
    run_cells(data, cfg, cells)
}
