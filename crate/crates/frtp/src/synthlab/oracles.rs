//! Brute-force reference implementations used to cross-check the fast paths.
//!
//! Each oracle deliberately uses a different algorithm (exhaustive
//! enumeration, naive double loops, finite differences) and shares no code
//! with the implementation it verifies.

use std::collections::HashMap;

use crate::ingestion::SearchRecord;
use crate::network::{RoadGraph, Segment};
use crate::time::{TimeGrid, MINUTES_PER_DAY};

/// All simple paths from `dep` to `arr` as node-id sequences, by exhaustive
/// depth-first enumeration. Only usable on small graphs.
pub fn enumerate_paths(graph: &RoadGraph, dep: &str, arr: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![dep.to_string()];
    fn visit(
        graph: &RoadGraph,
        arr: &str,
        stack: &mut Vec<String>,
        out: &mut Vec<Vec<String>>,
    ) {
        let here = stack.last().unwrap().clone();
        if here == arr {
            out.push(stack.clone());
            return;
        }
        for seg in graph.segments() {
            if seg.from_ic == here && !stack.contains(&seg.to_ic) {
                stack.push(seg.to_ic.clone());
                visit(graph, arr, stack, out);
                stack.pop();
            }
        }
    }
    visit(graph, arr, &mut stack, &mut out);
    out
}

/// Total length of a node-id path, summing the shortest parallel edge
/// between each consecutive pair. Returns None when an edge is missing.
pub fn path_length_km(graph: &RoadGraph, path: &[String]) -> Option<f64> {
    let mut total = 0.0;
    for w in path.windows(2) {
        let best = graph
            .segments()
            .iter()
            .filter(|s| s.from_ic == w[0] && s.to_ic == w[1])
            .map(|s| s.length_km)
            .fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return None;
        }
        total += best;
    }
    Some(total)
}

/// Minimum path length between two nodes by exhaustive enumeration, in
/// integer millimeters for exact comparison.
pub fn min_path_length_mm(graph: &RoadGraph, dep: &str, arr: &str) -> Option<u64> {
    enumerate_paths(graph, dep, arr)
        .iter()
        .filter_map(|p| path_length_km(graph, p).map(|km| (km * 1e6).round() as u64))
        .min()
}

/// Naive per-record accumulation of time-specified searches. Routing and
/// passage projection are recomputed here from first principles: enumerate
/// all simple paths, pick the shortest, then walk cumulative offsets.
pub fn naive_accumulate_time_specified(
    records: &[SearchRecord],
    graph: &RoadGraph,
    grid: &TimeGrid,
    speed_kmh: f64,
) -> HashMap<(String, usize), u64> {
    let mut counts: HashMap<(String, usize), u64> = HashMap::new();
    for rec in records {
        let Some(route) = naive_shortest_segments(graph, &rec.departure_ic, &rec.arrival_ic) else {
            continue;
        };
        let total_km: f64 = route.iter().map(|s| s.length_km).sum();
        // Departure anchor wins when both are present.
        let (anchor, forward) = match (rec.departure_time, rec.arrival_time) {
            (Some(t), _) => (t, true),
            (None, Some(t)) => (t, false),
            (None, None) => continue,
        };
        let mut cum = 0.0;
        for seg in &route {
            let offset_km = if forward { cum } else { cum - total_km };
            let enter_secs = anchor as f64 * 60.0 + offset_km / speed_kmh * 3600.0;
            let enter_min = (enter_secs / 60.0).floor() as i64;
            if let Some(b) = grid.bucket(enter_min) {
                *counts.entry((seg.id.clone(), b)).or_insert(0) += 1;
            }
            cum += seg.length_km;
        }
    }
    counts
}

fn naive_shortest_segments(graph: &RoadGraph, dep: &str, arr: &str) -> Option<Vec<Segment>> {
    if graph.node(dep).is_none() || graph.node(arr).is_none() {
        return None;
    }
    if dep == arr {
        return Some(Vec::new());
    }
    let paths = enumerate_paths(graph, dep, arr);
    // Shortest total length first, lexicographically smallest node sequence
    // among ties.
    let best = paths
        .into_iter()
        .filter_map(|p| path_length_km(graph, &p).map(|km| ((km * 1e6).round() as u64, p)))
        .min()?;
    let mut segs = Vec::new();
    for w in best.1.windows(2) {
        let seg = graph
            .segments()
            .iter()
            .filter(|s| s.from_ic == w[0] && s.to_ic == w[1])
            .min_by_key(|s| ((s.length_km * 1e6).round() as u64, s.id.clone()))?;
        segs.push(seg.clone());
    }
    Some(segs)
}

/// O(records x buckets) double loop for the unspecified-window accumulation.
pub fn naive_accumulate_unspecified(
    records: &[SearchRecord],
    graph: &RoadGraph,
    grid: &TimeGrid,
    window_days: u32,
) -> HashMap<(String, usize), u64> {
    let mut counts: HashMap<(String, usize), u64> = HashMap::new();
    let w_min = window_days as i64 * MINUTES_PER_DAY;
    for rec in records {
        if rec.departure_time.is_some() || rec.arrival_time.is_some() {
            continue;
        }
        let Some(route) = naive_shortest_segments(graph, &rec.departure_ic, &rec.arrival_ic) else {
            continue;
        };
        for b in 0..grid.len {
            let t = grid.bucket_start(b);
            if rec.search_time >= t - w_min && rec.search_time < t {
                for seg in &route {
                    *counts.entry((seg.id.clone(), b)).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

/// Nested-loop convolution over the feature axis with a zero-padded time
/// kernel: out[t] = bias + sum over (dt, f) of w[dt][f] * x[t + dt - pad][f].
pub fn naive_conv(x: &[Vec<f64>], weights: &[Vec<f64>], bias: f64) -> Vec<f64> {
    let t_len = x.len();
    let kernel_time = weights.len();
    let pad = kernel_time / 2;
    let mut out = vec![0.0; t_len];
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = bias;
        for (dt, wrow) in weights.iter().enumerate() {
            let ti = t as i64 + dt as i64 - pad as i64;
            if ti < 0 || ti >= t_len as i64 {
                continue;
            }
            for (f, w) in wrow.iter().enumerate() {
                acc += w * x[ti as usize][f];
            }
        }
        *o = acc;
    }
    out
}

/// Windowed max with stride r, trailing remainder dropped.
pub fn naive_maxpool(x: &[f64], r: usize) -> Vec<f64> {
    assert!(r > 0);
    (0..x.len() / r)
        .map(|b| x[b * r..(b + 1) * r].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Two-pass mean and (population) standard deviation.
pub fn two_pass_stats(xs: &[f64]) -> (f64, f64) {
    assert!(!xs.is_empty());
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

/// Pearson correlation by the textbook formula. Returns None when either
/// column is constant.
pub fn naive_pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ICNode;

    fn node(id: &str) -> ICNode {
        ICNode { id: id.into(), name: id.into(), kp: 0.0 }
    }

    fn seg(id: &str, from: &str, to: &str, km: f64) -> Segment {
        Segment {
            id: id.into(),
            road_code: "E4".into(),
            from_ic: from.into(),
            to_ic: to.into(),
            length_km: km,
            kp_index: 0,
        }
    }

    #[test]
    fn enumerate_paths_on_cycle() {
        // Directed 4-cycle A->B->C->D->A.
        let g = RoadGraph::build(
            vec![node("A"), node("B"), node("C"), node("D")],
            vec![
                seg("ab", "A", "B", 1.0),
                seg("bc", "B", "C", 1.0),
                seg("cd", "C", "D", 1.0),
                seg("da", "D", "A", 1.0),
            ],
        )
        .unwrap();
        // Exactly one simple path between each ordered distinct pair.
        for (a, b) in [("A", "C"), ("B", "D"), ("C", "A"), ("D", "B")] {
            assert_eq!(enumerate_paths(&g, a, b).len(), 1);
        }
        assert_eq!(enumerate_paths(&g, "A", "D")[0], ["A", "B", "C", "D"]);
    }

    #[test]
    fn pearson_of_identical_columns_is_one() {
        let x = [1.0, 2.0, 5.0, -1.0];
        assert!((naive_pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_undefined_for_constant_column() {
        assert!(naive_pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn fd_grad_of_square_at_three() {
        let g = finite_difference_grad(|w| w[0] * w[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn maxpool_definition() {
        assert_eq!(naive_maxpool(&[1.0, 3.0, 2.0, 5.0, 4.0, 0.0], 3), vec![3.0, 5.0]);
        let xs = [1.0, 2.0, 3.0];
        assert_eq!(naive_maxpool(&xs, 1), xs.to_vec());
    }

    #[test]
    fn two_pass_stats_basics() {
        let (m, s) = two_pass_stats(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert_eq!(s, 2.0);
    }
}
