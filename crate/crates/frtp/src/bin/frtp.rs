//! Command-line front end: pipelines the library modules end to end.

use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use frtp::error::FrtpError;
use frtp::features::{
    build_windows, load_dataset, save_dataset, Dataset, Sample, WindowSpec,
};
use frtp::federate::{
    accumulate_time_specified, accumulate_unspecified, classify, save_count_series,
    Classification, DEFAULT_WINDOWS_DAYS,
};
use frtp::harness::{
    analyze, load_data_dir, prepare, run_ablation, run_grid, ExperimentConfig, FeatureSwitches,
};
use frtp::harness::analyze::{write_correlation_csv, write_day_type_csv};
use frtp::harness::experiment::split_samples;
use frtp::ingestion::{
    parse_search_log, parse_traffic_log, write_rejects, write_search_log, write_traffic_log,
};
use frtp::model::{
    evaluate_mae, forward, load_checkpoint, save_checkpoint, train, ModelConfig, TrainConfig,
};
use frtp::synthlab::{generate, CongestionEvent, Scenario};
use frtp::time::{format_timestamp, TimeGrid};

#[derive(Parser)]
#[command(name = "frtp", about = "Federated route-search traffic prediction pipeline")]
struct Cli {
    /// Dataset root directory; FRTP_DATA_DIR is used when omitted.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario into the data directory.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        ics: usize,
        #[arg(long, default_value_t = 30)]
        days: u32,
        #[arg(long, default_value_t = 0.7)]
        coupling: f64,
        #[arg(long, default_value_t = 1.5)]
        weekend_amp: f64,
        #[arg(long, default_value_t = 1.8)]
        holiday_amp: f64,
        /// Holiday date (YYYY-MM-DD); repeatable.
        #[arg(long)]
        holiday: Vec<String>,
        /// Congestion event as day:segment_index:start_minute:duration:severity; repeatable.
        #[arg(long)]
        event: Vec<String>,
    },
    /// Validate the raw logs and write rejection reports plus clean copies.
    Ingest,
    /// Project search records onto segment count series.
    Federate {
        #[arg(long, default_value_t = 5)]
        step: u32,
        #[arg(long, default_value_t = 60)]
        out_step: u32,
    },
    /// Assemble feature groups, fit the normalizer, and save a dataset.
    Features {
        #[arg(long, default_value_t = 288)]
        in_size: usize,
        #[arg(long, default_value_t = 0)]
        n_day_interval: u32,
        #[arg(long, default_value_t = 24)]
        out_size: usize,
        #[arg(long, default_value_t = 5)]
        in_step: u32,
        #[arg(long, default_value_t = 60)]
        out_step: u32,
        /// Comma-separated switches: traffic,time,search,search_unspec.
        #[arg(long, default_value = "traffic,time,search,search_unspec")]
        features: String,
        #[arg(long, default_value_t = 28)]
        train_days: u32,
    },
    /// Train a model on the saved dataset and write a checkpoint.
    Train {
        #[arg(long, default_value_t = frtp::model::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 32)]
        lstm_hidden: usize,
        #[arg(long, default_value_t = 3)]
        kernel_time: usize,
        #[arg(long, default_value_t = 288)]
        in_size: usize,
        #[arg(long, default_value_t = 0)]
        n_day_interval: u32,
        #[arg(long, default_value_t = 24)]
        out_size: usize,
        #[arg(long, default_value_t = 28)]
        train_days: u32,
        #[arg(long, default_value_t = 7)]
        val_days: u32,
        #[arg(long, default_value_t = 7)]
        test_days: u32,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Forward the checkpointed model over every sample and dump predictions.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        n_day_interval: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the de-normalized test-set MAE of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        n_day_interval: u32,
        #[arg(long, default_value_t = 28)]
        train_days: u32,
        #[arg(long, default_value_t = 7)]
        val_days: u32,
        #[arg(long, default_value_t = 7)]
        test_days: u32,
    },
    /// Train one model per feature combination and rank the results.
    Ablation {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per (input size, day interval) cell.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation matrix and day-type search distribution.
    Analyze {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn data_dir(cli_dir: &Option<PathBuf>) -> Result<PathBuf, FrtpError> {
    if let Some(d) = cli_dir {
        return Ok(d.clone());
    }
    std::env::var_os("FRTP_DATA_DIR")
        .map(PathBuf::from)
        .ok_or_else(|| FrtpError::BadConfig("pass --data-dir or set FRTP_DATA_DIR".into()))
}

fn parse_event(s: &str) -> Result<CongestionEvent, FrtpError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 5 {
        return Err(FrtpError::BadConfig(format!(
            "--event wants day:segment_index:start_minute:duration:severity, got {s:?}"
        )));
    }
    let num = |i: usize| -> Result<u32, FrtpError> {
        parts[i].parse().map_err(|_| FrtpError::BadConfig(format!("bad --event field {:?}", parts[i])))
    };
    Ok(CongestionEvent {
        day: num(0)?,
        segment_index: num(1)? as usize,
        start_minute: num(2)?,
        duration_minutes: num(3)?,
        severity: parts[4]
            .parse()
            .map_err(|_| FrtpError::BadConfig(format!("bad --event severity {:?}", parts[4])))?,
    })
}

/// Input step and window sizes implied by a saved dataset + window flags.
fn dataset_samples(
    dataset: &Dataset,
    in_size: usize,
    n_day_interval: u32,
    out_size: usize,
) -> Result<Vec<Sample>, FrtpError> {
    let normalizer = dataset
        .normalizer
        .as_ref()
        .ok_or_else(|| FrtpError::BadConfig("dataset has no normalizer; rerun `features`".into()))?;
    let input_step = dataset
        .groups
        .iter()
        .map(|g| g.grid.step_minutes)
        .min()
        .ok_or_else(|| FrtpError::EmptyInput("dataset has no feature groups".into()))?;
    let window = WindowSpec { input_size: in_size, n_day_interval, output_size: out_size };
    let (samples, _) =
        build_windows(&dataset.groups, &dataset.targets, normalizer, &window, input_step)?;
    Ok(samples)
}

fn run(cli: Cli) -> Result<serde_json::Value, FrtpError> {
    let dir = data_dir(&cli.data_dir)?;
    match cli.command {
        Command::Synth { seed, ics, days, coupling, weekend_amp, holiday_amp, holiday, event } => {
            let mut scenario = Scenario::new(seed, ics, days);
            scenario.coupling = coupling;
            scenario.weekend_amplification = weekend_amp;
            scenario.holiday_amplification = holiday_amp;
            scenario.holidays = holiday;
            scenario.events =
                event.iter().map(|e| parse_event(e)).collect::<Result<_, _>>()?;
            let generated = generate(&scenario)?;
            generated.write_to_dir(&dir)?;
            Ok(serde_json::to_value(&generated.manifest.counts)?)
        }
        Command::Ingest => {
            let search =
                parse_search_log(BufReader::new(std::fs::File::open(dir.join("search.csv"))?))?;
            let traffic =
                parse_traffic_log(BufReader::new(std::fs::File::open(dir.join("traffic.csv"))?))?;
            write_rejects(&dir.join("search_rejects.jsonl"), &search.rejects)?;
            write_rejects(&dir.join("traffic_rejects.jsonl"), &traffic.rejects)?;
            write_search_log(
                std::io::BufWriter::new(std::fs::File::create(dir.join("search_clean.csv"))?),
                &search.records,
            )?;
            write_traffic_log(
                std::io::BufWriter::new(std::fs::File::create(dir.join("traffic_clean.csv"))?),
                &traffic.records,
            )?;
            Ok(serde_json::json!({
                "search_records": search.records.len(),
                "search_rejects": search.rejects.len(),
                "traffic_records": traffic.records.len(),
                "traffic_rejects": traffic.rejects.len(),
            }))
        }
        Command::Federate { step, out_step } => {
            let data = load_data_dir(&dir)?;
            let (start, end) = frtp::harness::pipeline::data_span(&data.traffic)?;
            let in_grid = TimeGrid::new(start, step, ((end - start) / step as i64) as usize)?;
            let out_grid =
                TimeGrid::new(start, out_step, ((end - start) / out_step as i64) as usize)?;
            let mut spec = Vec::new();
            let mut unspec = Vec::new();
            for r in &data.searches {
                match classify(r) {
                    Classification::TimeSpecified { .. } => spec.push(r.clone()),
                    Classification::NonTimeSpecified => unspec.push(r.clone()),
                }
            }
            let (spec_series, spec_drops) =
                accumulate_time_specified(&spec, &data.graph, &in_grid)?;
            save_count_series(
                &spec_series,
                &dir.join("counts_spec.csv"),
                &dir.join("counts_spec.json"),
            )?;
            let (unspec_series, unspec_drops) =
                accumulate_unspecified(&unspec, &data.graph, &out_grid, &DEFAULT_WINDOWS_DAYS)?;
            for s in &unspec_series {
                let frtp::federate::SeriesKind::Unspecified { window_days } = s.kind else {
                    continue;
                };
                save_count_series(
                    s,
                    &dir.join(format!("counts_unspec_{window_days}d.csv")),
                    &dir.join(format!("counts_unspec_{window_days}d.json")),
                )?;
            }
            Ok(serde_json::json!({
                "time_specified_total": spec_series.total(),
                "unspecified_totals": unspec_series.iter().map(|s| s.total()).collect::<Vec<_>>(),
                "route_drops": spec_drops.route_failures.len() + unspec_drops.route_failures.len(),
            }))
        }
        Command::Features { in_size, n_day_interval, out_size, in_step, out_step, features, train_days } => {
            let switches = FeatureSwitches::parse(&features)?;
            let data = load_data_dir(&dir)?;
            let prepared = prepare(&data, switches, in_step, out_step)?;
            let fit_end = prepared.span.0 + train_days as i64 * frtp::time::MINUTES_PER_DAY;
            let normalizer = frtp::features::fit_normalizer(
                &prepared.groups,
                &prepared.targets,
                (prepared.span.0, fit_end),
            )?;
            let mut groups = prepared.groups;
            for g in &mut groups {
                normalizer.apply_group(g)?;
            }
            // Window flags are validated here so mistakes surface before a
            // training run, even though only the dataset is persisted.
            WindowSpec { input_size: in_size, n_day_interval, output_size: out_size }.validate()?;
            let dataset =
                Dataset { groups, targets: prepared.targets, normalizer: Some(normalizer) };
            save_dataset(&dir.join("dataset"), &dataset)?;
            Ok(serde_json::json!({
                "groups": dataset.groups.iter().map(|g| g.name.as_str()).collect::<Vec<_>>(),
                "segments": dataset.targets.segment_ids.len(),
            }))
        }
        Command::Train {
            seed, epochs, batch_size, learning_rate, lstm_hidden, kernel_time,
            in_size, n_day_interval, out_size, train_days, val_days, test_days, checkpoint,
        } => {
            let dataset = load_dataset(&dir.join("dataset"))?;
            let samples = dataset_samples(&dataset, in_size, n_day_interval, out_size)?;
            let normalizer = dataset.normalizer.as_ref().unwrap();
            let span_start = dataset.targets.grid.start;
            let (train_s, val_s, test_s) = split_samples(
                samples,
                span_start,
                frtp::harness::SplitDays { train: train_days, validation: val_days, test: test_days },
            );
            if train_s.is_empty() {
                return Err(FrtpError::SpanTooShort("no training samples in split".into()));
            }
            let out_step = dataset.targets.grid.step_minutes;
            let cfg = ModelConfig::from_sample(&train_s[0], out_step, kernel_time, lstm_hidden, out_size)?;
            let tc = TrainConfig {
                seed,
                epochs,
                batch_size,
                learning_rate,
                ..TrainConfig::default()
            };
            let val_opt = if val_s.is_empty() { None } else { Some(val_s.as_slice()) };
            let result = train(&cfg, &train_s, val_opt, normalizer, &tc)?;
            let ckpt_path = checkpoint.unwrap_or_else(|| dir.join("model.json"));
            save_checkpoint(&ckpt_path, &cfg, &result.state, seed, out_step)?;
            let test_mae = if test_s.is_empty() {
                None
            } else {
                Some(evaluate_mae(&cfg, &result.state, &test_s, normalizer)?)
            };
            Ok(serde_json::json!({
                "checkpoint": ckpt_path,
                "epochs": result.epoch_losses.len(),
                "best_epoch": result.best_epoch,
                "final_train_loss": result.epoch_losses.last(),
                "test_mae": test_mae,
            }))
        }
        Command::Predict { checkpoint, n_day_interval, out } => {
            let dataset = load_dataset(&dir.join("dataset"))?;
            let ckpt_path = checkpoint.unwrap_or_else(|| dir.join("model.json"));
            let (cfg, state, ckpt) = load_checkpoint(&ckpt_path)?;
            let input_step =
                dataset.groups.iter().map(|g| g.grid.step_minutes).min().unwrap_or(5);
            let in_size = cfg
                .groups
                .iter()
                .zip(dataset.groups.iter())
                .find(|(_, g)| g.grid.step_minutes == input_step)
                .map(|(shape, _)| shape.t_len)
                .ok_or_else(|| FrtpError::BadConfig("checkpoint does not match dataset".into()))?;
            let samples = dataset_samples(&dataset, in_size, n_day_interval, cfg.output_size)?;
            let normalizer = dataset.normalizer.as_ref().unwrap();
            let out_path = out.unwrap_or_else(|| dir.join("predictions.csv"));
            let mut w = std::io::BufWriter::new(std::fs::File::create(&out_path)?);
            writeln!(w, "anchor,segment_id,target_bucket_start,predicted_speed_kmh")?;
            let out_step = ckpt.output_step_minutes as i64;
            for s in &samples {
                let pred = forward(&cfg, &state, s)?;
                for (seg, sid) in dataset.targets.segment_ids.iter().enumerate() {
                    for (o, v) in pred.values[seg].iter().enumerate() {
                        writeln!(
                            w,
                            "{},{},{},{}",
                            format_timestamp(s.anchor),
                            sid,
                            format_timestamp(s.target_start + o as i64 * out_step),
                            normalizer.invert_target(*v),
                        )?;
                    }
                }
            }
            Ok(serde_json::json!({ "predictions": out_path, "samples": samples.len() }))
        }
        Command::Evaluate { checkpoint, n_day_interval, train_days, val_days, test_days } => {
            let dataset = load_dataset(&dir.join("dataset"))?;
            let ckpt_path = checkpoint.unwrap_or_else(|| dir.join("model.json"));
            let (cfg, state, _) = load_checkpoint(&ckpt_path)?;
            let input_step =
                dataset.groups.iter().map(|g| g.grid.step_minutes).min().unwrap_or(5);
            let in_size = cfg
                .groups
                .iter()
                .zip(dataset.groups.iter())
                .find(|(_, g)| g.grid.step_minutes == input_step)
                .map(|(shape, _)| shape.t_len)
                .ok_or_else(|| FrtpError::BadConfig("checkpoint does not match dataset".into()))?;
            let samples = dataset_samples(&dataset, in_size, n_day_interval, cfg.output_size)?;
            let normalizer = dataset.normalizer.as_ref().unwrap();
            let (_, _, test_s) = split_samples(
                samples,
                dataset.targets.grid.start,
                frtp::harness::SplitDays { train: train_days, validation: val_days, test: test_days },
            );
            if test_s.is_empty() {
                return Err(FrtpError::SpanTooShort("no test samples in split".into()));
            }
            let mae = evaluate_mae(&cfg, &state, &test_s, normalizer)?;
            Ok(serde_json::json!({ "mae": mae, "n_test": test_s.len() }))
        }
        Command::Ablation { config, out } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            let data = load_data_dir(&dir)?;
            let table = run_ablation(&data, &cfg)?;
            let out_dir = out.unwrap_or_else(|| dir.join("results"));
            std::fs::create_dir_all(&out_dir)?;
            table.write_csv(&out_dir.join("ablation.csv"))?;
            std::fs::write(out_dir.join("ablation.txt"), table.to_text())?;
            println!("{}", table.to_text());
            Ok(serde_json::json!({ "rows": table.rows.len(), "out": out_dir }))
        }
        Command::Grid { config, out } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            let data = load_data_dir(&dir)?;
            let table = run_grid(&data, &cfg)?;
            let out_dir = out.unwrap_or_else(|| dir.join("results"));
            std::fs::create_dir_all(&out_dir)?;
            table.write_csv(&out_dir.join("grid.csv"))?;
            std::fs::write(out_dir.join("grid.txt"), table.to_text())?;
            println!("{}", table.to_text());
            Ok(serde_json::json!({ "rows": table.rows.len(), "out": out_dir }))
        }
        Command::Analyze { out } => {
            let data = load_data_dir(&dir)?;
            let report = analyze(&data)?;
            let out_dir = out.unwrap_or_else(|| dir.join("analysis"));
            std::fs::create_dir_all(&out_dir)?;
            write_correlation_csv(&out_dir.join("correlation.csv"), &report.matrix)?;
            write_day_type_csv(&out_dir.join("day_type_distribution.csv"), &report.day_types)?;
            Ok(serde_json::json!({
                "out": out_dir,
                "degenerate_columns": report.matrix.degenerate,
            }))
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            std::process::exit(1);
        }
    }
}
