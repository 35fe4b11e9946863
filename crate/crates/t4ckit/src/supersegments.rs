//! Key-intersection selection and super-segment sampling.
//!
//! Key intersections are high-volume nodes with at least 3 neighbors; a
//! greedy pass drops neighbors of already-chosen nodes. Super-segments
//! are weight-optimal Dijkstra paths between key intersections, searched
//! in expanding circles of (beeline, path meters, segment count) with
//! per-source abort rules.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo;
use crate::heatmap::VolumeHeatmap;
use crate::model::{Edge, EdgeKey, NodeId, RoadGraph, SuperSegment};

/// Dijkstra weight: penalizes longer and less important edges.
pub fn edge_weight(edge: &Edge) -> f64 {
    ((6.0 - edge.importance as f64) / 2.0) * edge.length_m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchCircle {
    pub beeline_m: f64,
    pub path_m: f64,
    pub max_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Finding a super-segment longer than this aborts the source.
    pub max_path_m: f64,
    /// Finding more than this many super-segments aborts the source.
    pub max_per_source: usize,
    /// Expanding search circles; the search ends after the last one.
    pub circles: Vec<SearchCircle>,
    /// Key intersections chosen before the whitelist is appended.
    pub target_key_intersections: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_path_m: 10_000.0,
            max_per_source: 3,
            circles: vec![
                SearchCircle { beeline_m: 1_000.0, path_m: 2_000.0, max_segments: 8 },
                SearchCircle { beeline_m: 2_500.0, path_m: 5_000.0, max_segments: 20 },
                SearchCircle { beeline_m: 5_000.0, path_m: 10_000.0, max_segments: 40 },
                SearchCircle { beeline_m: 10_000.0, path_m: 20_000.0, max_segments: 80 },
            ],
            target_key_intersections: 400,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_path_m <= 0.0 || self.circles.is_empty() {
            return Err(Error::invalid("search config needs positive radii and >= 1 circle"));
        }
        for w in self.circles.windows(2) {
            if w[1].beeline_m < w[0].beeline_m
                || w[1].path_m < w[0].path_m
                || w[1].max_segments < w[0].max_segments
            {
                return Err(Error::invalid("search circles must expand monotonically"));
            }
        }
        if self
            .circles
            .iter()
            .any(|c| c.beeline_m <= 0.0 || c.path_m <= 0.0 || c.max_segments == 0)
        {
            return Err(Error::invalid("search circles must be positive"));
        }
        Ok(())
    }
}

/// Chosen key intersections with their selection scores.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyIntersectionSet {
    /// Selection order: by descending score, whitelist appended.
    pub nodes: Vec<NodeId>,
    pub scores: BTreeMap<NodeId, f64>,
}

/// Scores a node as the highest daily volume on any incident edge,
/// weighted by (importance + 1) / 6.
fn intersection_score(graph: &RoadGraph, heatmap: &VolumeHeatmap, node: NodeId) -> f64 {
    graph
        .incident_edges(node)
        .iter()
        .map(|e| heatmap.max_edge_volume(e).0 * (e.importance as f64 + 1.0) / 6.0)
        .fold(0.0, f64::max)
}

/// Picks up to `target_key_intersections` nodes with >= 3 neighbors by
/// descending score, skipping neighbors of already-chosen nodes, then
/// appends the whitelist.
pub fn select_key_intersections(
    graph: &RoadGraph,
    heatmap: &VolumeHeatmap,
    whitelist: &[NodeId],
    cfg: &SearchConfig,
) -> KeyIntersectionSet {
    let mut scored: Vec<(NodeId, f64)> = graph
        .node_ids()
        .filter(|id| graph.neighbors(*id).len() >= 3)
        .map(|id| (id, intersection_score(graph, heatmap, id)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });

    let mut chosen: Vec<NodeId> = Vec::new();
    let mut excluded: BTreeSet<NodeId> = BTreeSet::new();
    let mut scores: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (id, score) in scored {
        if chosen.len() >= cfg.target_key_intersections {
            break;
        }
        if excluded.contains(&id) {
            continue;
        }
        chosen.push(id);
        scores.insert(id, score);
        excluded.extend(graph.neighbors(id));
    }
    for id in whitelist {
        if graph.node(*id).is_some() && !chosen.contains(id) {
            chosen.push(*id);
            scores
                .entry(*id)
                .or_insert_with(|| intersection_score(graph, heatmap, *id));
        }
    }
    KeyIntersectionSet { nodes: chosen, scores }
}

#[derive(Debug, Clone, Copy)]
struct PathInfo {
    cost: f64,
    meters: f64,
    segments: usize,
    parent: Option<NodeId>,
}

struct HeapEntry {
    cost: f64,
    node: NodeId,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost && self.node == other.node
    }
}
impl Eq for HeapEntry {}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want the cheapest first
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then(other.node.cmp(&self.node))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cheapest parallel edge u -> v under `edge_weight`.
fn best_edge_between(graph: &RoadGraph, u: NodeId, v: NodeId) -> Option<&Edge> {
    graph
        .edges_between(u, v)
        .iter()
        .min_by(|a, b| {
            edge_weight(a)
                .partial_cmp(&edge_weight(b))
                .unwrap_or(Ordering::Equal)
                .then(a.length_m.partial_cmp(&b.length_m).unwrap_or(Ordering::Equal))
        })
}

fn path_nodes(info: &BTreeMap<NodeId, PathInfo>, mut node: NodeId) -> Vec<NodeId> {
    let mut rev = vec![node];
    while let Some(p) = info.get(&node).and_then(|i| i.parent) {
        rev.push(p);
        node = p;
    }
    rev.reverse();
    rev
}

/// Single-source Dijkstra under `edge_weight`. Equal-cost ties pick the
/// lexicographically smallest node sequence.
fn dijkstra(graph: &RoadGraph, source: NodeId) -> BTreeMap<NodeId, PathInfo> {
    let mut info: BTreeMap<NodeId, PathInfo> = BTreeMap::new();
    info.insert(
        source,
        PathInfo { cost: 0.0, meters: 0.0, segments: 0, parent: None },
    );
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry { cost: 0.0, node: source });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        match info.get(&node) {
            Some(i) if cost > i.cost => continue,
            None => continue,
            _ => {}
        }
        let current = *info.get(&node).unwrap();
        for next in graph.out_neighbors(node).collect::<Vec<_>>() {
            if next == node {
                continue;
            }
            let Some(edge) = best_edge_between(graph, node, next) else {
                continue;
            };
            let cand = PathInfo {
                cost: current.cost + edge_weight(edge),
                meters: current.meters + edge.length_m,
                segments: current.segments + 1,
                parent: Some(node),
            };
            let take = match info.get(&next) {
                None => true,
                Some(best) => {
                    if cand.cost < best.cost {
                        true
                    } else if cand.cost == best.cost {
                        // compare full node sequences for determinism
                        let mut trial = path_nodes(&info, node);
                        trial.push(next);
                        trial < path_nodes(&info, next)
                    } else {
                        false
                    }
                }
            };
            if take {
                info.insert(next, cand);
                heap.push(HeapEntry { cost: cand.cost, node: next });
            }
        }
    }
    info
}

/// Samples super-segments between key intersections. Sources are
/// processed in ascending node id; hand-curated whitelist segments are
/// appended afterwards. At most one super-segment is emitted per ordered
/// (source, target) pair.
pub fn sample_supersegments(
    graph: &RoadGraph,
    keys: &KeyIntersectionSet,
    cfg: &SearchConfig,
    whitelist_segments: &[Vec<EdgeKey>],
) -> Result<Vec<SuperSegment>> {
    cfg.validate()?;
    if keys.nodes.is_empty() && whitelist_segments.is_empty() {
        return Ok(Vec::new());
    }
    let key_set: BTreeSet<NodeId> = keys.nodes.iter().copied().collect();
    let mut sources: Vec<NodeId> = key_set.iter().copied().collect();
    sources.sort_unstable();

    let mut used_pairs: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    let mut segments: Vec<Vec<EdgeKey>> = Vec::new();

    for &source in &sources {
        let coord = match graph.node(source) {
            Some(n) => n.coord(),
            None => continue,
        };
        let info = dijkstra(graph, source);
        let mut reached: BTreeSet<NodeId> = BTreeSet::new();
        let mut found = 0usize;
        'source: for circle in &cfg.circles {
            // candidate targets in this circle, nearest first
            let mut candidates: Vec<(f64, f64, usize, NodeId)> = Vec::new();
            for &target in &key_set {
                if target == source || reached.contains(&target) {
                    continue;
                }
                let Some(t_info) = info.get(&target) else {
                    continue; // unreachable target: skipped
                };
                let beeline = match graph.node(target) {
                    Some(n) => geo::haversine_m(coord, n.coord()),
                    None => continue,
                };
                if beeline <= circle.beeline_m
                    && t_info.meters <= circle.path_m
                    && t_info.segments <= circle.max_segments
                {
                    candidates.push((beeline, t_info.meters, t_info.segments, target));
                }
            }
            candidates.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal))
                    .then(a.2.cmp(&b.2))
                    .then(a.3.cmp(&b.3))
            });
            for (_, meters, _, target) in candidates {
                reached.insert(target);
                if !used_pairs.insert((source, target)) {
                    continue;
                }
                let nodes = path_nodes(&info, target);
                let edges: Vec<EdgeKey> = nodes.windows(2).map(|w| (w[0], w[1])).collect();
                segments.push(edges);
                found += 1;
                if meters > cfg.max_path_m {
                    break 'source; // a super-segment farther than the cap was found
                }
                if found > cfg.max_per_source {
                    break 'source; // more than max_per_source found
                }
            }
        }
    }

    for wl in whitelist_segments {
        if wl.is_empty() {
            continue;
        }
        let pair = (wl[0].0, wl[wl.len() - 1].1);
        if used_pairs.insert(pair) {
            segments.push(wl.clone());
        }
    }

    let mut out = Vec::with_capacity(segments.len());
    for (i, edges) in segments.into_iter().enumerate() {
        let ss = SuperSegment { ssid: i as u64, edges };
        ss.validate()?;
        for (u, v) in &ss.edges {
            if !graph.has_edge(*u, *v) {
                return Err(Error::invalid(format!(
                    "super-segment {} uses unknown edge ({u}, {v})",
                    ss.ssid
                )));
            }
        }
        out.push(ss);
    }
    Ok(out)
}

/// Total `edge_weight` along a super-segment (cheapest parallel per hop).
pub fn supersegment_weight(graph: &RoadGraph, ss: &SuperSegment) -> f64 {
    ss.edges
        .iter()
        .map(|(u, v)| best_edge_between(graph, *u, *v).map(edge_weight).unwrap_or(f64::INFINITY))
        .sum()
}
