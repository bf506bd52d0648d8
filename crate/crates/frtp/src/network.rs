//! Road-network graph, shortest-route extraction, and constant-speed
//! passage-time projection.
//!
//! The graph is directed; a bidirectional road is represented as two opposing
//! segments. Edge weights are segment lengths held internally in integer
//! millimeters so that path-length comparisons are exact.

use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FrtpError;
use crate::time::{EpochMinutes, EpochSeconds};

pub const DEFAULT_SPEED_KMH: f64 = 80.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ICNode {
    pub id: String,
    pub name: String,
    /// Kilometers from the road origin (kilo-post position).
    pub kp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub road_code: String,
    pub from_ic: String,
    pub to_ic: String,
    pub length_km: f64,
    /// Integer bucket of roughly 2 km along the road.
    pub kp_index: u32,
}

impl Segment {
    fn length_mm(&self) -> u64 {
        (self.length_km * 1e6).round() as u64
    }
}

#[derive(Debug, Clone, Default)]
pub struct RoadGraph {
    nodes: Vec<ICNode>,
    segments: Vec<Segment>,
    node_index: HashMap<String, usize>,
    segment_index: HashMap<String, usize>,
    /// Outgoing segment indices per node, sorted by (to_ic, segment id).
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
}

impl RoadGraph {
    pub fn build(nodes: Vec<ICNode>, segments: Vec<Segment>) -> Result<Self, FrtpError> {
        let mut node_index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if n.kp < 0.0 {
                return Err(FrtpError::BadGraph(format!("node {} has negative kp", n.id)));
            }
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(FrtpError::BadGraph(format!("duplicate node id {}", n.id)));
            }
        }
        let mut segment_index = HashMap::new();
        let mut outgoing = vec![Vec::new(); nodes.len()];
        let mut incoming = vec![Vec::new(); nodes.len()];
        for (i, s) in segments.iter().enumerate() {
            if s.length_km <= 0.0 {
                return Err(FrtpError::BadGraph(format!(
                    "segment {} has non-positive length",
                    s.id
                )));
            }
            if segment_index.insert(s.id.clone(), i).is_some() {
                return Err(FrtpError::BadGraph(format!("duplicate segment id {}", s.id)));
            }
            let from = *node_index
                .get(&s.from_ic)
                .ok_or_else(|| FrtpError::BadGraph(format!("segment {} has dangling from_ic {}", s.id, s.from_ic)))?;
            let to = *node_index
                .get(&s.to_ic)
                .ok_or_else(|| FrtpError::BadGraph(format!("segment {} has dangling to_ic {}", s.id, s.to_ic)))?;
            outgoing[from].push(i);
            incoming[to].push(i);
        }
        for adj in outgoing.iter_mut().chain(incoming.iter_mut()) {
            adj.sort_by(|&a, &b| {
                let sa = &segments[a];
                let sb = &segments[b];
                (&sa.to_ic, &sa.id).cmp(&(&sb.to_ic, &sb.id))
            });
        }
        Ok(RoadGraph { nodes, segments, node_index, segment_index, outgoing, incoming })
    }

    pub fn nodes(&self) -> &[ICNode] {
        &self.nodes
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn node(&self, id: &str) -> Option<&ICNode> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.segment_index.get(id).map(|&i| &self.segments[i])
    }

    fn node_idx(&self, id: &str) -> Result<usize, FrtpError> {
        self.node_index
            .get(id)
            .copied()
            .ok_or_else(|| FrtpError::UnknownNode(id.to_string()))
    }

    /// In-degree plus out-degree of a node.
    pub fn degree_sum(&self, node: &str) -> Result<usize, FrtpError> {
        let i = self.node_idx(node)?;
        Ok(self.outgoing[i].len() + self.incoming[i].len())
    }

    /// One-directional Dijkstra over millimeter edge weights.
    fn dijkstra(&self, source: usize, adjacency: &[Vec<usize>], forward: bool) -> Vec<Option<u64>> {
        let mut dist: Vec<Option<u64>> = vec![None; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = Some(0);
        heap.push(std::cmp::Reverse((0u64, source)));
        while let Some(std::cmp::Reverse((d, u))) = heap.pop() {
            if dist[u] != Some(d) {
                continue;
            }
            for &si in &adjacency[u] {
                let s = &self.segments[si];
                let v = if forward {
                    self.node_index[&s.to_ic]
                } else {
                    self.node_index[&s.from_ic]
                };
                let nd = d + s.length_mm();
                if dist[v].map_or(true, |old| nd < old) {
                    dist[v] = Some(nd);
                    heap.push(std::cmp::Reverse((nd, v)));
                }
            }
        }
        dist
    }

    /// Minimum-total-length route from `dep` to `arr` as an ordered segment
    /// list. Among equal-length routes the lexicographically smallest node-id
    /// sequence wins (segment id breaks ties between parallel edges).
    pub fn shortest_route(&self, dep: &str, arr: &str) -> Result<Vec<Segment>, FrtpError> {
        let dep_i = self.node_idx(dep)?;
        let arr_i = self.node_idx(arr)?;
        if dep_i == arr_i {
            return Ok(Vec::new());
        }
        let from_dep = self.dijkstra(dep_i, &self.outgoing, true);
        let total = from_dep[arr_i].ok_or_else(|| FrtpError::NoRoute {
            from: dep.to_string(),
            to: arr.to_string(),
        })?;
        let to_arr = self.dijkstra(arr_i, &self.incoming, false);

        // Walk the shortest-path DAG forward, always taking the smallest
        // admissible (to_ic, segment id). Adjacency is pre-sorted that way.
        let mut route = Vec::new();
        let mut u = dep_i;
        let mut used = total;
        while u != arr_i {
            let du = from_dep[u].expect("node on a shortest path has a distance");
            let next = self.outgoing[u]
                .iter()
                .map(|&si| &self.segments[si])
                .find(|s| {
                    let v = self.node_index[&s.to_ic];
                    to_arr[v].map_or(false, |dv| du + s.length_mm() + dv == total)
                })
                .expect("shortest-path DAG has an outgoing edge before arr");
            u = self.node_index[&next.to_ic];
            used = used.saturating_sub(next.length_mm());
            route.push(next.clone());
        }
        debug_assert_eq!(used, 0);
        Ok(route)
    }
}

pub fn route_length_km(route: &[Segment]) -> f64 {
    route.iter().map(|s| s.length_km).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorKind {
    Departure,
    Arrival,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPassage {
    pub segment_id: String,
    pub enter: EpochSeconds,
    pub exit: EpochSeconds,
}

/// Projects enter/exit times for every segment on a route at a constant
/// travel speed, forward from a departure anchor or backward from an
/// arrival anchor.
pub fn passage_times(
    route: &[Segment],
    anchor: EpochMinutes,
    anchor_kind: AnchorKind,
    speed_kmh: f64,
) -> Result<Vec<SegmentPassage>, FrtpError> {
    assert!(speed_kmh > 0.0, "speed must be positive");
    for w in route.windows(2) {
        if w[0].to_ic != w[1].from_ic {
            return Err(FrtpError::DiscontiguousRoute {
                prev: w[0].id.clone(),
                next: w[1].id.clone(),
            });
        }
    }
    let anchor_secs = anchor as f64 * 60.0;
    let total_km = route_length_km(route);
    let mut out = Vec::with_capacity(route.len());
    let mut cum_km = 0.0;
    for s in route {
        let offset = match anchor_kind {
            AnchorKind::Departure => cum_km,
            AnchorKind::Arrival => cum_km - total_km,
        };
        let enter = anchor_secs + offset / speed_kmh * 3600.0;
        let exit = enter + s.length_km / speed_kmh * 3600.0;
        out.push(SegmentPassage { segment_id: s.id.clone(), enter, exit });
        cum_km += s.length_km;
    }
    Ok(out)
}

/// Loads the IC file (`ic_id,name,kp`) and network file
/// (`segment_id,road_code,from_ic,to_ic,length_km,kp_index`).
pub fn load_graph(ic_path: &Path, network_path: &Path) -> Result<RoadGraph, FrtpError> {
    #[derive(Deserialize)]
    struct IcRow {
        ic_id: String,
        name: String,
        kp: f64,
    }
    #[derive(Deserialize)]
    struct SegRow {
        segment_id: String,
        road_code: String,
        from_ic: String,
        to_ic: String,
        length_km: f64,
        kp_index: u32,
    }
    let mut nodes = Vec::new();
    for row in csv::Reader::from_path(ic_path)?.deserialize() {
        let r: IcRow = row?;
        nodes.push(ICNode { id: r.ic_id, name: r.name, kp: r.kp });
    }
    let mut segments = Vec::new();
    for row in csv::Reader::from_path(network_path)?.deserialize() {
        let r: SegRow = row?;
        segments.push(Segment {
            id: r.segment_id,
            road_code: r.road_code,
            from_ic: r.from_ic,
            to_ic: r.to_ic,
            length_km: r.length_km,
            kp_index: r.kp_index,
        });
    }
    RoadGraph::build(nodes, segments)
}

pub fn save_graph(graph: &RoadGraph, ic_path: &Path, network_path: &Path) -> Result<(), FrtpError> {
    let mut w = csv::Writer::from_path(ic_path)?;
    w.write_record(["ic_id", "name", "kp"])?;
    for n in graph.nodes() {
        w.write_record([&n.id, &n.name, &format!("{}", n.kp)])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(network_path)?;
    w.write_record(["segment_id", "road_code", "from_ic", "to_ic", "length_km", "kp_index"])?;
    for s in graph.segments() {
        w.write_record([
            &s.id,
            &s.road_code,
            &s.from_ic,
            &s.to_ic,
            &format!("{}", s.length_km),
            &format!("{}", s.kp_index),
        ])?;
    }
    w.flush()?;
    Ok(())
}
