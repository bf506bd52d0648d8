//! Property tests over the arithmetic core: invariances that must hold for
//! arbitrary inputs, not just the seeded cases.

use proptest::prelude::*;

use frtp::federate::{accumulate_time_specified, accumulate_unspecified};
use frtp::ingestion::SearchRecord;
use frtp::model::mae;
use frtp::network::{passage_times, AnchorKind, ICNode, RoadGraph, Segment};
use frtp::time::TimeGrid;

fn corridor(n: usize) -> RoadGraph {
    let nodes = (0..n)
        .map(|i| ICNode { id: format!("N{i:02}"), name: format!("N{i:02}"), kp: i as f64 * 2.0 })
        .collect();
    let segments = (0..n - 1)
        .map(|i| Segment {
            id: format!("S{i:02}"),
            road_code: "E01".into(),
            from_ic: format!("N{i:02}"),
            to_ic: format!("N{:02}", i + 1),
            length_km: 2.0,
            kp_index: i as u32,
        })
        .collect();
    RoadGraph::build(nodes, segments).unwrap()
}

fn spec_record(dep: usize, arr: usize, anchor: i64, forward: bool) -> SearchRecord {
    SearchRecord {
        departure_ic: format!("N{dep:02}"),
        arrival_ic: format!("N{arr:02}"),
        departure_time: forward.then_some(anchor),
        arrival_time: (!forward).then_some(anchor),
        search_time: anchor - 30,
    }
}

proptest! {
    /// Accumulation is order-independent: any permutation of the log gives
    /// the same per-segment counts.
    #[test]
    fn federation_is_permutation_invariant(
        recs in proptest::collection::vec(
            (0usize..6, 0usize..6, -2000i64..6000, any::<bool>()), 1..60),
        swaps in proptest::collection::vec((0usize..59, 0usize..59), 0..30),
    ) {
        let g = corridor(6);
        let grid = TimeGrid::new(0, 15, 200).unwrap();
        let records: Vec<SearchRecord> =
            recs.iter().map(|&(d, a, t, f)| spec_record(d, a, t, f)).collect();
        let mut shuffled = records.clone();
        for &(i, j) in &swaps {
            let (i, j) = (i % shuffled.len(), j % shuffled.len());
            shuffled.swap(i, j);
        }
        let (a, _) = accumulate_time_specified(&records, &g, &grid).unwrap();
        let (b, _) = accumulate_time_specified(&shuffled, &g, &grid).unwrap();
        prop_assert_eq!(a.counts, b.counts);
    }

    /// Widening the lookback window can only add counts, never remove them,
    /// and the total equals route length (in segments) times the number of
    /// buckets whose window covers the search.
    #[test]
    fn unspecified_windows_are_monotone(
        searches in proptest::collection::vec((0usize..6, 0usize..6, -20_000i64..10_000), 1..40),
    ) {
        let g = corridor(6);
        let grid = TimeGrid::new(0, 60, 120).unwrap();
        let records: Vec<SearchRecord> = searches
            .iter()
            .map(|&(d, a, t)| SearchRecord {
                departure_ic: format!("N{d:02}"),
                arrival_ic: format!("N{a:02}"),
                departure_time: None,
                arrival_time: None,
                search_time: t,
            })
            .collect();
        let (series, _) = accumulate_unspecified(&records, &g, &grid, &[1, 3, 7, 10]).unwrap();
        for pair in series.windows(2) {
            for (x, y) in pair[0].counts.iter().flatten().zip(pair[1].counts.iter().flatten()) {
                prop_assert!(x <= y);
            }
        }
    }

    /// MAE basics: zero on identical vectors, symmetric in its arguments,
    /// and shifts by exactly |c| under a constant offset.
    #[test]
    fn mae_axioms(
        y in proptest::collection::vec(-1e6f64..1e6, 1..50),
        c in -1e3f64..1e3,
    ) {
        prop_assert_eq!(mae(&y, &y).unwrap(), 0.0);
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let m = mae(&y, &shifted).unwrap();
        prop_assert!((m - c.abs()).abs() < 1e-9);
        prop_assert_eq!(m, mae(&shifted, &y).unwrap());
    }

    /// Grid buckets round-trip: every in-range timestamp lands in the bucket
    /// whose start is at most the timestamp, less than one step later.
    #[test]
    fn time_grid_bucket_round_trip(
        start in -1_000_000i64..1_000_000,
        step in prop::sample::select(vec![5u32, 15, 60]),
        len in 1usize..500,
        offset in 0i64..100_000,
    ) {
        let grid = TimeGrid::new(start, step, len).unwrap();
        let t = start + offset % (grid.end() - start);
        let b = grid.bucket(t).unwrap();
        let bs = grid.bucket_start(b);
        prop_assert!(bs <= t && t < bs + step as i64);
        prop_assert_eq!(grid.bucket(bs), Some(b));
        prop_assert_eq!(grid.bucket(grid.end()), None);
    }

    /// Passage projection: enters are strictly increasing, each segment's
    /// duration matches length/speed, and the anchor pins the right end.
    #[test]
    fn passage_times_are_monotone_and_anchored(
        lens in proptest::collection::vec(0.1f64..30.0, 1..30),
        anchor in -1_000_000i64..1_000_000,
        speed in 20.0f64..120.0,
        forward in any::<bool>(),
    ) {
        let segments: Vec<Segment> = lens
            .iter()
            .enumerate()
            .map(|(i, &km)| Segment {
                id: format!("S{i:02}"),
                road_code: "E01".into(),
                from_ic: format!("N{i:02}"),
                to_ic: format!("N{:02}", i + 1),
                length_km: km,
                kp_index: i as u32,
            })
            .collect();
        let kind = if forward { AnchorKind::Departure } else { AnchorKind::Arrival };
        let p = passage_times(&segments, anchor, kind, speed).unwrap();
        for (seg, pass) in segments.iter().zip(&p) {
            let want = seg.length_km / speed * 3600.0;
            prop_assert!((pass.exit - pass.enter - want).abs() < 1e-6);
        }
        for w in p.windows(2) {
            prop_assert!(w[0].enter < w[1].enter);
        }
        if forward {
            prop_assert_eq!(p[0].enter, anchor as f64 * 60.0);
        } else {
            prop_assert!((p.last().unwrap().exit - anchor as f64 * 60.0).abs() < 1e-6);
        }
    }
}
