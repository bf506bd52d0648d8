//! Deterministic synthetic scenario generator.
//!
//! Produces a linear expressway corridor, a traffic-counter log following a
//! daily sinusoid with planted congestion events, and a search log whose
//! time-specified records are (partially) coupled to the demand profile and
//! whose non-time-specified records are skewed toward weekends and holidays.
//! Everything is a pure function of the scenario, so regeneration is
//! bit-identical.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::FrtpError;
use crate::ingestion::{write_search_log, write_traffic_log, SearchRecord, TrafficRecord};
use crate::network::{save_graph, ICNode, RoadGraph, Segment};
use crate::rng::SplitMix64;
use crate::time::{parse_date, EpochMinutes, MINUTES_PER_DAY};

/// A planted congestion episode on one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionEvent {
    /// Day index from scenario start, 0-based.
    pub day: u32,
    /// Index into the corridor's segment list.
    pub segment_index: usize,
    /// Minute of day the slowdown starts.
    pub start_minute: u32,
    pub duration_minutes: u32,
    /// Fractional speed reduction in (0, 1].
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub n_ics: usize,
    pub n_days: u32,
    /// First generated day, `YYYY-MM-DD`.
    pub start_date: String,
    pub segment_km: f64,

    // Daily profile: speed dips and volume swells on a midday-peaked sinusoid.
    pub base_speed: f64,
    pub speed_dip: f64,
    pub base_volume: f64,
    pub volume_swing: f64,
    pub noise_speed: f64,
    pub noise_volume: f64,

    /// Demand multipliers by day type (weekday baseline is 1.0).
    pub weekend_amplification: f64,
    pub holiday_amplification: f64,
    /// Holiday dates, `YYYY-MM-DD`, within the generated span.
    pub holidays: Vec<String>,

    /// Baseline time-specified searches per weekday.
    pub searches_per_day: u32,
    /// Baseline non-time-specified searches per weekday.
    pub unspec_per_day: u32,
    /// Fraction of time-specified searches whose departure time follows the
    /// demand profile instead of a uniform draw.
    pub coupling: f64,
    /// Uniform lead-time range (minutes before departure) for time-specified
    /// searches.
    pub lead_minutes: (u32, u32),
    /// Extra non-time-specified searches emitted on each of the two days
    /// before an amplified (weekend/holiday) day: trip planning in advance.
    pub planning_searches: u32,

    /// Day-to-day AR(1) speed offset: rho * yesterday + sigma * noise.
    pub ar1_rho: f64,
    pub ar1_sigma: f64,

    pub events: Vec<CongestionEvent>,
    /// Coupled time-specified searches emitted per event.
    pub event_search_boost: u32,
    /// Extra vehicles counted during an event window.
    pub event_volume_boost: f64,
}

impl Scenario {
    /// A coupled corridor scenario with defaults sized for desk-scale runs.
    pub fn new(seed: u64, n_ics: usize, n_days: u32) -> Self {
        Scenario {
            seed,
            n_ics,
            n_days,
            start_date: "2024-01-01".into(),
            segment_km: 2.0,
            base_speed: 96.0,
            speed_dip: 30.0,
            base_volume: 40.0,
            volume_swing: 260.0,
            noise_speed: 3.0,
            noise_volume: 8.0,
            weekend_amplification: 1.5,
            holiday_amplification: 1.8,
            holidays: Vec::new(),
            searches_per_day: 400,
            unspec_per_day: 300,
            coupling: 0.7,
            lead_minutes: (60, 2880),
            planning_searches: 150,
            ar1_rho: 0.8,
            ar1_sigma: 2.5,
            events: Vec::new(),
            event_search_boost: 40,
            event_volume_boost: 150.0,
        }
    }

    pub fn validate(&self) -> Result<(), FrtpError> {
        let bad = |m: &str| Err(FrtpError::InvalidScenario(m.into()));
        if self.n_ics < 2 {
            return bad("corridor needs at least 2 ICs");
        }
        if self.n_days == 0 {
            return bad("n_days must be positive");
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return bad("coupling must be in [0, 1]");
        }
        if self.segment_km <= 0.0 || self.base_speed <= 0.0 {
            return bad("segment_km and base_speed must be positive");
        }
        if self.weekend_amplification <= 0.0 || self.holiday_amplification <= 0.0 {
            return bad("amplification factors must be positive");
        }
        if self.lead_minutes.0 > self.lead_minutes.1 {
            return bad("lead_minutes range is inverted");
        }
        parse_date(&self.start_date)?;
        for h in &self.holidays {
            parse_date(h)?;
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.day >= self.n_days {
                return bad(&format!("event {i}: day {} outside scenario", e.day));
            }
            if e.segment_index >= self.n_ics - 1 {
                return bad(&format!("event {i}: segment index {} out of range", e.segment_index));
            }
            if !(0.0 < e.severity && e.severity <= 1.0) {
                return bad(&format!("event {i}: severity must be in (0, 1]"));
            }
            if e.start_minute >= MINUTES_PER_DAY as u32 || e.duration_minutes == 0 {
                return bad(&format!("event {i}: bad window"));
            }
        }
        Ok(())
    }
}

/// Per-kind record totals, mirrored into the manifest for conservation
/// checks against the emitted files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub traffic_records: usize,
    pub search_records: usize,
    pub time_specified: usize,
    pub unspecified: usize,
    pub coupled_time_specified: usize,
    pub event_searches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: Scenario,
    pub counts: ManifestCounts,
    /// Resolved holiday dates actually inside the generated span.
    pub holidays_in_span: Vec<String>,
}

pub struct Generated {
    pub graph: RoadGraph,
    pub traffic: Vec<TrafficRecord>,
    pub searches: Vec<SearchRecord>,
    pub manifest: Manifest,
}

fn day_start_minutes(date: NaiveDate) -> EpochMinutes {
    date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp() / 60
}

/// Midday-peaked demand pulse in [0, 1].
fn pulse(minute_of_day: u32) -> f64 {
    let x = minute_of_day as f64 / MINUTES_PER_DAY as f64;
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * x).cos())
}

fn corridor(scenario: &Scenario) -> Result<RoadGraph, FrtpError> {
    let nodes: Vec<ICNode> = (0..scenario.n_ics)
        .map(|i| ICNode {
            id: format!("IC{:02}", i + 1),
            name: format!("IC{:02}", i + 1),
            kp: i as f64 * scenario.segment_km,
        })
        .collect();
    let segments: Vec<Segment> = (0..scenario.n_ics - 1)
        .map(|i| Segment {
            id: format!("S{:02}", i + 1),
            road_code: "E99".into(),
            from_ic: nodes[i].id.clone(),
            to_ic: nodes[i + 1].id.clone(),
            length_km: scenario.segment_km,
            kp_index: i as u32,
        })
        .collect();
    RoadGraph::build(nodes, segments)
}

struct DayTypes {
    holidays: BTreeSet<NaiveDate>,
    start: NaiveDate,
}

impl DayTypes {
    fn date(&self, day: u32) -> NaiveDate {
        self.start + chrono::Days::new(day as u64)
    }

    /// Demand multiplier for a day; holiday status wins over the weekend.
    fn amp(&self, scenario: &Scenario, day: u32) -> f64 {
        let d = self.date(day);
        if self.holidays.contains(&d) {
            scenario.holiday_amplification
        } else if d.weekday().num_days_from_monday() >= 5 {
            scenario.weekend_amplification
        } else {
            1.0
        }
    }
}

/// Inverse-CDF sampler over minutes of a day, weighted by the demand pulse.
struct ProfileSampler {
    cumulative: Vec<f64>,
}

impl ProfileSampler {
    fn new() -> Self {
        let mut cumulative = Vec::with_capacity(MINUTES_PER_DAY as usize);
        let mut acc = 0.0;
        for m in 0..MINUTES_PER_DAY as u32 {
            acc += pulse(m) + 1e-3;
            cumulative.push(acc);
        }
        ProfileSampler { cumulative }
    }

    fn sample(&self, rng: &mut SplitMix64) -> u32 {
        let u = rng.next_f64() * self.cumulative.last().unwrap();
        self.cumulative.partition_point(|&c| c < u) as u32
    }
}

fn random_od(rng: &mut SplitMix64, n_ics: usize) -> (String, String) {
    let a = rng.below(n_ics as u64 - 1) as usize;
    let b = a + 1 + rng.below((n_ics - 1 - a) as u64) as usize;
    (format!("IC{:02}", a + 1), format!("IC{:02}", b + 1))
}

/// Generates the full scenario: graph, traffic log, search log, manifest.
/// Single-threaded; the draw order is part of the reproducibility contract.
pub fn generate(scenario: &Scenario) -> Result<Generated, FrtpError> {
    scenario.validate()?;
    let graph = corridor(scenario)?;
    let start = parse_date(&scenario.start_date)?;
    let day_types = DayTypes {
        holidays: scenario.holidays.iter().map(|h| parse_date(h)).collect::<Result<_, _>>()?,
        start,
    };
    let t0 = day_start_minutes(start);
    let n_segments = scenario.n_ics - 1;

    let mut root = SplitMix64::new(scenario.seed);
    let mut rng_ar = root.fork(1);
    let mut rng_traffic = root.fork(2);
    let mut rng_spec = root.fork(3);
    let mut rng_unspec = root.fork(4);
    let mut rng_event = root.fork(5);

    // Day-to-day persistent speed offset.
    let mut ar = vec![0.0; scenario.n_days as usize];
    for d in 0..scenario.n_days as usize {
        let prev = if d == 0 { 0.0 } else { ar[d - 1] };
        ar[d] = scenario.ar1_rho * prev + scenario.ar1_sigma * rng_ar.normal();
    }

    // Traffic counters: one record per segment per 5-minute bucket.
    let mut traffic = Vec::with_capacity(scenario.n_days as usize * n_segments * 288);
    for day in 0..scenario.n_days {
        let amp = day_types.amp(scenario, day);
        for seg in 0..n_segments {
            let seg_id = format!("S{:02}", seg + 1);
            for bucket in 0..288u32 {
                let minute = bucket * 5;
                let load = pulse(minute) * amp;
                let mut all_cars = scenario.base_volume
                    + scenario.volume_swing * load
                    + scenario.noise_volume * rng_traffic.normal();
                let mut speed = scenario.base_speed - scenario.speed_dip * load
                    + ar[day as usize]
                    + scenario.noise_speed * rng_traffic.normal();
                for e in &scenario.events {
                    if e.day == day
                        && e.segment_index == seg
                        && minute >= e.start_minute
                        && minute < e.start_minute + e.duration_minutes
                    {
                        speed *= 1.0 - e.severity;
                        all_cars += scenario.event_volume_boost;
                    }
                }
                speed = speed.clamp(5.0, scenario.base_speed * 1.2);
                let occ = (1.0 - 0.9 * speed / scenario.base_speed
                    + 0.02 * rng_traffic.normal())
                .clamp(0.0, 1.0);
                traffic.push(TrafficRecord {
                    segment_id: seg_id.clone(),
                    timestamp: t0 + day as i64 * MINUTES_PER_DAY + minute as i64,
                    all_cars: all_cars.round().max(0.0) as u32,
                    speed: (speed * 10.0).round() / 10.0,
                    occ: (occ * 1000.0).round() / 1000.0,
                });
            }
        }
    }

    // Time-specified searches: departures follow the demand pulse for the
    // coupled fraction, uniform otherwise; emitted lead minutes in advance.
    let sampler = ProfileSampler::new();
    let (lead_lo, lead_hi) = scenario.lead_minutes;
    let mut searches = Vec::new();
    let mut coupled = 0usize;
    for day in 0..scenario.n_days {
        let amp = day_types.amp(scenario, day);
        let n = (scenario.searches_per_day as f64 * amp).round() as u32;
        let day_start = t0 + day as i64 * MINUTES_PER_DAY;
        for _ in 0..n {
            let is_coupled = rng_spec.chance(scenario.coupling);
            let minute = if is_coupled {
                coupled += 1;
                sampler.sample(&mut rng_spec)
            } else {
                rng_spec.below(MINUTES_PER_DAY as u64) as u32
            };
            let departure = day_start + minute as i64;
            let lead = lead_lo as i64 + rng_spec.below((lead_hi - lead_lo + 1) as u64) as i64;
            let (dep_ic, arr_ic) = random_od(&mut rng_spec, scenario.n_ics);
            searches.push(SearchRecord {
                departure_ic: dep_ic,
                arrival_ic: arr_ic,
                departure_time: Some(departure),
                arrival_time: None,
                search_time: departure - lead,
            });
        }
    }
    let mut time_specified = searches.len();

    // Non-time-specified searches: day-of volume scales with the day-type
    // multiplier; amplified days (weekends/holidays) additionally attract
    // planning searches on the two preceding days.
    let mut unspecified = 0usize;
    for day in 0..scenario.n_days {
        let amp = day_types.amp(scenario, day);
        let mut n = (scenario.unspec_per_day as f64 * amp).round() as u32;
        for lead_days in 1..=2u32 {
            let future = day + lead_days;
            if future < scenario.n_days && day_types.amp(scenario, future) > 1.0 {
                n += scenario.planning_searches;
            }
        }
        let day_start = t0 + day as i64 * MINUTES_PER_DAY;
        for _ in 0..n {
            let (dep_ic, arr_ic) = random_od(&mut rng_unspec, scenario.n_ics);
            searches.push(SearchRecord {
                departure_ic: dep_ic,
                arrival_ic: arr_ic,
                departure_time: None,
                arrival_time: None,
                search_time: day_start + rng_unspec.below(MINUTES_PER_DAY as u64) as i64,
            });
            unspecified += 1;
        }
    }

    // Event-coupled searches: trips entering the slowed segment during the
    // event window, searched for in advance.
    let mut event_searches = 0usize;
    for e in &scenario.events {
        let day_start = t0 + e.day as i64 * MINUTES_PER_DAY;
        for _ in 0..scenario.event_search_boost {
            let minute = e.start_minute as i64 + rng_event.below(e.duration_minutes as u64) as i64;
            let departure = day_start + minute;
            let lead = lead_lo as i64 + rng_event.below((lead_hi - lead_lo + 1) as u64) as i64;
            let arr = e.segment_index
                + 1
                + rng_event.below((scenario.n_ics - 1 - e.segment_index) as u64) as usize;
            searches.push(SearchRecord {
                departure_ic: format!("IC{:02}", e.segment_index + 1),
                arrival_ic: format!("IC{:02}", arr + 1),
                departure_time: Some(departure),
                arrival_time: None,
                search_time: departure - lead,
            });
            event_searches += 1;
        }
    }
    time_specified += event_searches;
    coupled += event_searches;

    let holidays_in_span: Vec<String> = day_types
        .holidays
        .iter()
        .filter(|d| {
            **d >= start && **d < start + chrono::Days::new(scenario.n_days as u64)
        })
        .map(|d| d.format("%Y-%m-%d").to_string())
        .collect();

    let manifest = Manifest {
        scenario: scenario.clone(),
        counts: ManifestCounts {
            traffic_records: traffic.len(),
            search_records: searches.len(),
            time_specified,
            unspecified,
            coupled_time_specified: coupled,
            event_searches,
        },
        holidays_in_span,
    };
    Ok(Generated { graph, traffic, searches, manifest })
}

impl Generated {
    /// Writes the ingestion-schema CSVs plus holidays.csv and manifest.json.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), FrtpError> {
        std::fs::create_dir_all(dir)?;
        save_graph(&self.graph, &dir.join("ic.csv"), &dir.join("network.csv"))?;
        write_traffic_log(
            std::io::BufWriter::new(std::fs::File::create(dir.join("traffic.csv"))?),
            &self.traffic,
        )?;
        write_search_log(
            std::io::BufWriter::new(std::fs::File::create(dir.join("search.csv"))?),
            &self.searches,
        )?;
        let mut h = std::io::BufWriter::new(std::fs::File::create(dir.join("holidays.csv"))?);
        writeln!(h, "date,name")?;
        for d in &self.manifest.holidays_in_span {
            writeln!(h, "{d},holiday")?;
        }
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest)?,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federate::accumulate_time_specified;
    use crate::synthlab::oracles::naive_pearson;
    use crate::time::TimeGrid;

    #[test]
    fn regeneration_is_identical() {
        let sc = Scenario::new(42, 6, 7);
        let a = generate(&sc).unwrap();
        let b = generate(&sc).unwrap();
        assert_eq!(a.traffic, b.traffic);
        assert_eq!(a.searches, b.searches);
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn written_trees_are_byte_identical() {
        let sc = Scenario::new(9, 4, 3);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(&sc).unwrap().write_to_dir(d1.path()).unwrap();
        generate(&sc).unwrap().write_to_dir(d2.path()).unwrap();
        for f in ["ic.csv", "network.csv", "traffic.csv", "search.csv", "holidays.csv", "manifest.json"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "{f} differs between runs");
        }
    }

    #[test]
    fn manifest_counts_match_emitted_records() {
        let mut sc = Scenario::new(7, 5, 10);
        sc.holidays = vec!["2024-01-04".into()];
        sc.events = vec![CongestionEvent {
            day: 2,
            segment_index: 1,
            start_minute: 480,
            duration_minutes: 120,
            severity: 0.5,
        }];
        let g = generate(&sc).unwrap();
        let c = &g.manifest.counts;
        assert_eq!(c.traffic_records, g.traffic.len());
        assert_eq!(c.search_records, g.searches.len());
        let spec = g.searches.iter().filter(|r| r.departure_time.is_some()).count();
        assert_eq!(c.time_specified, spec);
        assert_eq!(c.unspecified, g.searches.len() - spec);
        assert_eq!(c.event_searches, sc.event_search_boost as usize);
    }

    #[test]
    fn zero_noise_speed_matches_analytic_profile() {
        let mut sc = Scenario::new(3, 3, 2);
        sc.noise_speed = 0.0;
        sc.noise_volume = 0.0;
        sc.ar1_sigma = 0.0;
        let g = generate(&sc).unwrap();
        let start = parse_date(&sc.start_date).unwrap();
        let t0 = day_start_minutes(start);
        for r in &g.traffic {
            let minute = ((r.timestamp - t0).rem_euclid(MINUTES_PER_DAY)) as u32;
            let day = ((r.timestamp - t0) / MINUTES_PER_DAY) as u32;
            let amp = if (start + chrono::Days::new(day as u64)).weekday().num_days_from_monday() >= 5 {
                sc.weekend_amplification
            } else {
                1.0
            };
            let expect = ((sc.base_speed - sc.speed_dip * pulse(minute) * amp)
                .clamp(5.0, sc.base_speed * 1.2)
                * 10.0)
                .round()
                / 10.0;
            assert_eq!(r.speed, expect, "bucket {minute} day {day}");
        }
    }

    #[test]
    fn weekend_amplification_sets_unspec_ratio() {
        let mut sc = Scenario::new(11, 8, 28);
        sc.weekend_amplification = 2.0;
        sc.holidays.clear();
        // Day-of emission only, so the ratio reflects the multiplier.
        sc.planning_searches = 0;
        let g = generate(&sc).unwrap();
        let start = parse_date(&sc.start_date).unwrap();
        let t0 = day_start_minutes(start);
        let mut weekend = 0.0;
        let mut weekday = 0.0;
        let (mut we_days, mut wd_days) = (0.0, 0.0);
        let mut per_day = vec![0u32; sc.n_days as usize];
        for r in g.searches.iter().filter(|r| r.departure_time.is_none()) {
            per_day[((r.search_time - t0) / MINUTES_PER_DAY) as usize] += 1;
        }
        for (d, &n) in per_day.iter().enumerate() {
            if (start + chrono::Days::new(d as u64)).weekday().num_days_from_monday() >= 5 {
                weekend += n as f64;
                we_days += 1.0;
            } else {
                weekday += n as f64;
                wd_days += 1.0;
            }
        }
        let ratio = (weekend / we_days) / (weekday / wd_days);
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn uncoupled_searches_do_not_predict_future_speed() {
        let mut sc = Scenario::new(21, 6, 30);
        sc.coupling = 0.0;
        sc.events.clear();
        // Flat demand so the weekly cycle cannot masquerade as coupling.
        sc.weekend_amplification = 1.0;
        sc.holiday_amplification = 1.0;
        let g = generate(&sc).unwrap();
        let start = parse_date(&sc.start_date).unwrap();
        let t0 = day_start_minutes(start);
        let n_hours = sc.n_days as usize * 24;
        let grid = TimeGrid::new(t0, 60, n_hours).unwrap();
        let spec: Vec<SearchRecord> =
            g.searches.iter().filter(|r| r.departure_time.is_some()).cloned().collect();
        let (counts, _) = accumulate_time_specified(&spec, &g.graph, &grid).unwrap();
        // Hourly mean speed on the first segment, with the hour-of-day
        // profile removed, one day ahead of each count bucket.
        let mut speed_sum = vec![0.0; n_hours];
        let mut speed_n = vec![0u32; n_hours];
        for r in g.traffic.iter().filter(|r| r.segment_id == "S01") {
            let h = ((r.timestamp - t0) / 60) as usize;
            speed_sum[h] += r.speed;
            speed_n[h] += 1;
        }
        let speed: Vec<f64> =
            speed_sum.iter().zip(&speed_n).map(|(s, &n)| s / n as f64).collect();
        let mut hod_mean = vec![0.0; 24];
        for (h, s) in speed.iter().enumerate() {
            hod_mean[h % 24] += s / sc.n_days as f64;
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for h in 0..n_hours - 24 {
            xs.push(counts.counts[0][h] as f64);
            ys.push(speed[h + 24] - hod_mean[(h + 24) % 24]);
        }
        let r = naive_pearson(&xs, &ys).unwrap();
        assert!(r.abs() < 0.1, "unexpected coupling r = {r}");
    }
}
