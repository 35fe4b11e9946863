//! Attaches stationary vehicle detectors to road-graph nodes: count
//! normalization to 15-minute bins, snapping to nodes, projection onto
//! edges with proportional edge splitting, co-located aggregation and
//! value splitting across multiple assigned nodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo;
use crate::model::{
    DetectorDay, Edge, EdgeKey, Node, NodeId, RoadGraph, BINS_PER_DAY, RAW_WINDOWS_PER_DAY,
};

/// Snapping thresholds in meters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AttachConfig {
    /// Assign to the nearest node when closer than this.
    pub node_snap_m: f64,
    /// Discard when the projection onto the nearest edge is farther than this.
    pub edge_snap_m: f64,
}

impl Default for AttachConfig {
    fn default() -> Self {
        AttachConfig {
            node_snap_m: 40.0,
            edge_snap_m: 20.0,
        }
    }
}

/// Sums 5-minute windows into 15-minute bins. Accepts an already-binned
/// 96-slot day (identity) or a 288-slot day of 5-minute windows; a bin is
/// missing only when all three contributing windows are missing.
pub fn normalize_counts(raw: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    match raw.len() {
        BINS_PER_DAY => Ok(raw.to_vec()),
        RAW_WINDOWS_PER_DAY => {
            let mut out = Vec::with_capacity(BINS_PER_DAY);
            for bin in 0..BINS_PER_DAY {
                let window = &raw[bin * 3..bin * 3 + 3];
                let present: Vec<f64> = window.iter().flatten().copied().collect();
                out.push(if present.is_empty() {
                    None
                } else {
                    Some(present.iter().sum())
                });
            }
            Ok(out)
        }
        other => Err(Error::invalid(format!(
            "detector series has {other} slots; expected {BINS_PER_DAY} or {RAW_WINDOWS_PER_DAY}"
        ))),
    }
}

/// Normalizes one detector record into a validated 96-bin day.
pub fn normalize_day(record: &DetectorDay) -> Result<DetectorDay> {
    let day = DetectorDay {
        counts: normalize_counts(&record.counts)
            .map_err(|e| Error::invalid(format!("detector {}: {e}", record.detector_id)))?,
        ..record.clone()
    };
    day.validate()?;
    Ok(day)
}

/// Where a detector location ends up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnapDecision {
    /// Within `node_snap_m` of an existing node, or the edge projection
    /// landed near an edge endpoint.
    AssignNode { node: NodeId, distance_m: f64 },
    /// Projection is mid-edge: split the edge there and attach to the
    /// inserted node.
    SplitEdge {
        u: NodeId,
        v: NodeId,
        parallel: usize,
        fraction: f64,
        distance_m: f64,
    },
    /// No node or edge close enough.
    Discard { reason: String, distance_m: f64 },
}

/// Decides how to attach one detector location, without mutating the graph.
pub fn snap_detector(
    graph: &RoadGraph,
    location: (f64, f64),
    cfg: &AttachConfig,
) -> Result<SnapDecision> {
    if graph.node_count() == 0 {
        return Err(Error::invalid("cannot snap onto an empty graph"));
    }

    // nearest node, ties broken by lowest node_id
    let mut best_node: Option<(f64, NodeId)> = None;
    for node in graph.nodes() {
        let d = geo::haversine_m(location, node.coord());
        let better = match best_node {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && node.node_id < bid),
        };
        if better {
            best_node = Some((d, node.node_id));
        }
    }
    let (node_dist, node_id) = best_node.unwrap();
    if node_dist < cfg.node_snap_m {
        return Ok(SnapDecision::AssignNode {
            node: node_id,
            distance_m: node_dist,
        });
    }

    // nearest edge by projection distance, ties by smallest (u, v, index)
    let mut best_edge: Option<(f64, EdgeKey, usize, geo::Projection)> = None;
    for (key, edges) in graph.edge_keys().map(|k| (k, graph.edges_between(k.0, k.1))) {
        for (idx, edge) in edges.iter().enumerate() {
            if let Some(proj) = geo::project_onto_polyline(location, &edge.geometry) {
                let better = match &best_edge {
                    None => true,
                    Some((bd, bk, bi, _)) => {
                        proj.distance_m < *bd
                            || (proj.distance_m == *bd && (key, idx) < (*bk, *bi))
                    }
                };
                if better {
                    best_edge = Some((proj.distance_m, key, idx, proj));
                }
            }
        }
    }
    let Some((edge_dist, key, parallel, proj)) = best_edge else {
        return Ok(SnapDecision::Discard {
            reason: "no edges in graph".into(),
            distance_m: node_dist,
        });
    };
    if edge_dist > cfg.edge_snap_m {
        return Ok(SnapDecision::Discard {
            reason: format!("nearest edge {:.1} m away", edge_dist),
            distance_m: edge_dist,
        });
    }

    // near an endpoint of the projected edge: reuse the endpoint instead
    // of splitting (same 40 m threshold as node snapping)
    let u_coord = graph.node(key.0).unwrap().coord();
    let v_coord = graph.node(key.1).unwrap().coord();
    let d_u = geo::haversine_m(proj.point, u_coord);
    let d_v = geo::haversine_m(proj.point, v_coord);
    let mut endpoint: Option<(f64, NodeId)> = None;
    if d_u < cfg.node_snap_m {
        endpoint = Some((d_u, key.0));
    }
    if d_v < cfg.node_snap_m && (endpoint.is_none() || d_v < endpoint.unwrap().0
        || (d_v == endpoint.unwrap().0 && key.1 < endpoint.unwrap().1))
    {
        endpoint = Some((d_v, key.1));
    }
    if let Some((_, node)) = endpoint {
        return Ok(SnapDecision::AssignNode {
            node,
            distance_m: edge_dist,
        });
    }

    Ok(SnapDecision::SplitEdge {
        u: key.0,
        v: key.1,
        parallel,
        fraction: proj.fraction,
        distance_m: edge_dist,
    })
}

/// Result of splitting a single directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub new_node: NodeId,
    pub first: EdgeKey,
    pub second: EdgeKey,
}

/// Splits the `parallel`-th edge u -> v at the given arc-length fraction.
/// Lengths split as fraction * L and (1 - fraction) * L, the geometry is
/// partitioned at the split point and all other attributes are copied.
pub fn split_edge(
    graph: &mut RoadGraph,
    u: NodeId,
    v: NodeId,
    parallel: usize,
    fraction: f64,
) -> Result<SplitResult> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let edges = graph.edges_between(u, v);
    if parallel >= edges.len() {
        return Err(Error::invalid(format!(
            "edge ({u}, {v}) has no parallel index {parallel}"
        )));
    }
    let mut removed = graph.remove_edges(u, v);
    let edge = removed.remove(parallel);
    for other in removed {
        graph.add_edge(other)?;
    }

    let (point, seg, _) = geo::point_at_fraction(&edge.geometry, fraction);
    let new_id = NodeId(graph.max_node_id().map(|n| n.0 + 1).unwrap_or(0));
    graph.add_node(Node::new(new_id, point.0, point.1))?;
    graph.mark_structural(new_id);

    let mut first_geom: Vec<(f64, f64)> = edge.geometry[..=seg].to_vec();
    push_distinct(&mut first_geom, point);
    let mut second_geom: Vec<(f64, f64)> = vec![point];
    for p in &edge.geometry[seg + 1..] {
        push_distinct(&mut second_geom, *p);
    }
    ensure_two_points(&mut first_geom, point);
    ensure_two_points(&mut second_geom, *edge.geometry.last().unwrap());

    let first = Edge {
        u,
        v: new_id,
        length_m: fraction * edge.length_m,
        geometry: first_geom,
        ..edge.clone()
    };
    let second = Edge {
        u: new_id,
        v,
        length_m: (1.0 - fraction) * edge.length_m,
        geometry: second_geom,
        ..edge
    };
    graph.add_edge(first)?;
    graph.add_edge(second)?;
    Ok(SplitResult {
        new_node: new_id,
        first: (u, new_id),
        second: (new_id, v),
    })
}

fn push_distinct(line: &mut Vec<(f64, f64)>, p: (f64, f64)) {
    if line.last() != Some(&p) {
        line.push(p);
    }
}

fn ensure_two_points(line: &mut Vec<(f64, f64)>, fallback: (f64, f64)) {
    if line.len() < 2 {
        line.push(fallback);
    }
}

/// Divides a bin value evenly across `k` assigned nodes; missing stays
/// missing.
pub fn split_value(counts: &[Option<f64>], k: usize) -> Result<Vec<Option<f64>>> {
    if k < 1 {
        return Err(Error::invalid("cannot split a detector value over k < 1 nodes"));
    }
    Ok(counts
        .iter()
        .map(|c| c.map(|v| v / k as f64))
        .collect())
}

/// Per-node, per-day attached counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCounts {
    pub node_id: NodeId,
    pub day: String,
    pub counts: Vec<Option<f64>>,
}

/// Sums co-located detector series per (node, day): a bin is present when
/// any contributor has data, missing only when all are missing.
pub fn aggregate_colocated(
    contributions: impl IntoIterator<Item = (NodeId, String, Vec<Option<f64>>)>,
) -> Vec<NodeCounts> {
    let mut acc: BTreeMap<(NodeId, String), Vec<Option<f64>>> = BTreeMap::new();
    for (node, day, counts) in contributions {
        let slot = acc
            .entry((node, day))
            .or_insert_with(|| vec![None; BINS_PER_DAY]);
        for (bin, value) in counts.into_iter().enumerate().take(BINS_PER_DAY) {
            if let Some(v) = value {
                slot[bin] = Some(slot[bin].unwrap_or(0.0) + v);
            }
        }
    }
    acc.into_iter()
        .map(|((node_id, day), counts)| NodeCounts {
            node_id,
            day,
            counts,
        })
        .collect()
}

/// One line of the attachment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttachmentRecord {
    pub detector_id: String,
    pub lat: f64,
    pub lon: f64,
    pub decision: SnapDecision,
}

/// Outcome of attaching a detector set to a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AttachmentResult {
    pub graph: RoadGraph,
    /// detector_id -> nodes carrying (a share of) its value.
    pub assignments: BTreeMap<String, Vec<NodeId>>,
    /// detector_id -> discard reasons (one per dropped location).
    pub discarded: BTreeMap<String, Vec<String>>,
    /// Aggregated per-node count series.
    pub node_counts: Vec<NodeCounts>,
    pub report: Vec<AttachmentRecord>,
}

/// Attaches detectors to the graph. Locations are processed in
/// deterministic order (by detector_id, then coordinates); edge splits
/// mutate the graph immediately, so later detectors may snap onto nodes
/// introduced for earlier ones.
pub fn attach_detectors(
    mut graph: RoadGraph,
    detectors: &[DetectorDay],
    cfg: &AttachConfig,
) -> Result<AttachmentResult> {
    // one snap decision per distinct (detector_id, location)
    let mut locations: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for det in detectors {
        let entry = locations.entry(det.detector_id.clone()).or_default();
        let loc = (det.lat, det.lon);
        if !entry.iter().any(|l| *l == loc) {
            entry.push(loc);
        }
    }
    for locs in locations.values_mut() {
        locs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }

    let mut report = Vec::new();
    let mut assignments: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
    let mut discarded: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (detector_id, locs) in &locations {
        let mut nodes = Vec::new();
        for loc in locs {
            let decision = snap_detector(&graph, *loc, cfg)?;
            match &decision {
                SnapDecision::AssignNode { node, .. } => nodes.push(*node),
                SnapDecision::SplitEdge {
                    u,
                    v,
                    parallel,
                    fraction,
                    ..
                } => {
                    let split = split_edge(&mut graph, *u, *v, *parallel, *fraction)?;
                    nodes.push(split.new_node);
                }
                SnapDecision::Discard { reason, .. } => {
                    discarded
                        .entry(detector_id.clone())
                        .or_default()
                        .push(reason.clone());
                }
            }
            report.push(AttachmentRecord {
                detector_id: detector_id.clone(),
                lat: loc.0,
                lon: loc.1,
                decision,
            });
        }
        nodes.sort_unstable();
        nodes.dedup();
        if !nodes.is_empty() {
            assignments.insert(detector_id.clone(), nodes);
        }
    }

    // record detector ids and split factors on the receiving nodes
    for (detector_id, nodes) in &assignments {
        let k = nodes.len() as u32;
        for node_id in nodes {
            let node = graph
                .node_mut(*node_id)
                .expect("assigned node exists");
            if !node.counter_info.contains(detector_id) {
                node.counter_info.push(detector_id.clone());
                node.counter_info.sort();
            }
            node.num_assigned = node.num_assigned.max(k);
        }
    }

    // one series per (detector, day); rows repeating the pair (the same
    // logical detector listed per location) must agree on the counts
    let mut series: BTreeMap<(&str, &str), &Vec<Option<f64>>> = BTreeMap::new();
    for det in detectors {
        let key = (det.detector_id.as_str(), det.day.as_str());
        match series.get(&key) {
            None => {
                series.insert(key, &det.counts);
            }
            Some(existing) if **existing == det.counts => {}
            Some(_) => {
                return Err(Error::invalid(format!(
                    "detector {} day {}: conflicting duplicate series",
                    det.detector_id, det.day
                )))
            }
        }
    }

    // split each series across the detector's nodes, then aggregate
    // co-located detectors per node
    let mut contributions = Vec::new();
    for ((detector_id, day), counts) in series {
        let Some(nodes) = assignments.get(detector_id) else {
            continue;
        };
        let shares = split_value(counts, nodes.len())?;
        for node in nodes {
            contributions.push((*node, day.to_string(), shares.clone()));
        }
    }
    let node_counts = aggregate_colocated(contributions);

    Ok(AttachmentResult {
        graph,
        assignments,
        discarded,
        node_counts,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{destination, haversine_m};
    use crate::test_util::{line_graph, straight_edge, ORIGIN};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn day_with(counts: Vec<Option<f64>>) -> DetectorDay {
        DetectorDay {
            detector_id: "d".into(),
            lat: ORIGIN.0,
            lon: ORIGIN.1,
            heading: None,
            day: "2021-06-01".into(),
            counts,
        }
    }

    #[test]
    fn normalize_sums_three_windows_per_bin() {
        let mut raw = vec![None; RAW_WINDOWS_PER_DAY];
        raw[0] = Some(2.0);
        raw[1] = Some(3.0);
        raw[2] = Some(4.0);
        let out = normalize_counts(&raw).unwrap();
        assert_eq!(out.len(), BINS_PER_DAY);
        assert_eq!(out[0], Some(9.0));
        assert_eq!(out[1], None);
    }

    #[test]
    fn normalize_partial_windows_sum_present_values() {
        let mut raw = vec![None; RAW_WINDOWS_PER_DAY];
        raw[3] = Some(5.0);
        let out = normalize_counts(&raw).unwrap();
        assert_eq!(out[1], Some(5.0));
    }

    #[test]
    fn normalize_all_missing_stays_missing() {
        let raw = vec![None; RAW_WINDOWS_PER_DAY];
        let out = normalize_counts(&raw).unwrap();
        assert!(out.iter().all(|c| c.is_none()));
    }

    #[test]
    fn normalize_passthrough_for_binned_input() {
        let mut raw = vec![Some(1.0); BINS_PER_DAY];
        raw[5] = None;
        assert_eq!(normalize_counts(&raw).unwrap(), raw);
    }

    #[test]
    fn normalize_rejects_other_slot_counts() {
        assert!(normalize_counts(&vec![Some(0.0); 95]).is_err());
    }

    #[test]
    fn snap_assigns_nearby_node() {
        let g = line_graph(&[0, 1], 500.0);
        let loc = destination(ORIGIN, 0.0, 10.0);
        let d = snap_detector(&g, loc, &AttachConfig::default()).unwrap();
        assert_eq!(
            d,
            SnapDecision::AssignNode {
                node: NodeId(0),
                distance_m: match d {
                    SnapDecision::AssignNode { distance_m, .. } => distance_m,
                    _ => unreachable!(),
                }
            }
        );
    }

    #[test]
    fn snap_splits_mid_edge() {
        let g = line_graph(&[0, 1], 500.0);
        let mid = destination(ORIGIN, 90.0, 250.0);
        let loc = destination(mid, 0.0, 5.0);
        match snap_detector(&g, loc, &AttachConfig::default()).unwrap() {
            SnapDecision::SplitEdge { u, v, fraction, distance_m, .. } => {
                assert_eq!((u, v), (NodeId(0), NodeId(1)));
                assert!((fraction - 0.5).abs() < 1e-3, "fraction {fraction}");
                assert!((distance_m - 5.0).abs() < 0.05);
            }
            other => panic!("expected split, got {other:?}"),
        }
    }

    #[test]
    fn snap_discards_far_detectors() {
        let g = line_graph(&[0, 1], 500.0);
        let mid = destination(ORIGIN, 90.0, 250.0);
        let loc = destination(mid, 0.0, 30.0);
        match snap_detector(&g, loc, &AttachConfig::default()).unwrap() {
            SnapDecision::Discard { distance_m, .. } => {
                assert!((distance_m - 30.0).abs() < 0.1)
            }
            other => panic!("expected discard, got {other:?}"),
        }
    }

    #[test]
    fn snap_prefers_edge_endpoint_near_projection() {
        let g = line_graph(&[0, 1], 500.0);
        // 15 m off a point 38 m along the edge: more than 40 m from both
        // nodes, within 20 m of the edge, and the projection lands within
        // 40 m of the start point, so the endpoint is reused
        let on_edge = destination(ORIGIN, 90.0, 38.0);
        let loc = destination(on_edge, 0.0, 15.0);
        assert!(geo::haversine_m(loc, ORIGIN) > 40.0, "fixture must miss node snapping");
        match snap_detector(&g, loc, &AttachConfig::default()).unwrap() {
            SnapDecision::AssignNode { node, .. } => assert_eq!(node, NodeId(0)),
            other => panic!("expected endpoint assignment, got {other:?}"),
        }
    }

    #[test]
    fn snap_threshold_boundaries() {
        let cfg = AttachConfig::default();
        let g = line_graph(&[0, 1], 2000.0);
        // 39.9 m north of node 0: assigned to the node
        let loc = destination(ORIGIN, 0.0, 39.9);
        assert!(matches!(
            snap_detector(&g, loc, &cfg).unwrap(),
            SnapDecision::AssignNode { node: NodeId(0), .. }
        ));
        // 40.1 m north of node 0: goes to edge projection; projection point
        // is node 0's coordinate, so it is endpoint-assigned, but via the
        // edge path with distance > node threshold
        let loc = destination(ORIGIN, 0.0, 40.1);
        match snap_detector(&g, loc, &cfg).unwrap() {
            SnapDecision::Discard { .. } => {}
            SnapDecision::AssignNode { distance_m, .. } => {
                assert!(distance_m >= 40.0, "must not use the node-snap branch")
            }
            SnapDecision::SplitEdge { .. } => panic!("projection at endpoint must not split"),
        }
        // 19.9 m from mid-edge: retained (split)
        let mid = destination(ORIGIN, 90.0, 1000.0);
        let loc = destination(mid, 0.0, 19.9);
        assert!(matches!(
            snap_detector(&g, loc, &cfg).unwrap(),
            SnapDecision::SplitEdge { .. }
        ));
        // 20.1 m from mid-edge: discarded
        let loc = destination(mid, 0.0, 20.1);
        assert!(matches!(
            snap_detector(&g, loc, &cfg).unwrap(),
            SnapDecision::Discard { .. }
        ));
    }

    #[test]
    fn snap_empty_graph_errors() {
        let g = RoadGraph::new();
        assert!(snap_detector(&g, ORIGIN, &AttachConfig::default()).is_err());
    }

    #[test]
    fn split_edge_divides_length_and_geometry() {
        let mut g = line_graph(&[0, 1], 100.0);
        let before = g.edge(NodeId(0), NodeId(1)).unwrap().clone();
        let split = split_edge(&mut g, NodeId(0), NodeId(1), 0, 0.25).unwrap();
        let first = g.edge(NodeId(0), split.new_node).unwrap();
        let second = g.edge(split.new_node, NodeId(1)).unwrap();
        assert!((first.length_m - 0.25 * before.length_m).abs() < 1e-9);
        assert!((second.length_m - 0.75 * before.length_m).abs() < 1e-9);
        assert_eq!(first.geometry.len(), 2);
        assert_eq!(second.geometry.len(), 2);
        assert_eq!(first.geometry[1], second.geometry[0]);
        assert!(g.is_structural(split.new_node));
        assert!(!g.has_edge(NodeId(0), NodeId(1)));
        // midpoint sits a quarter of the way along
        let d = haversine_m(before.geometry[0], first.geometry[1]);
        assert!((d - before.length_m * 0.25).abs() < 0.01, "{d}");
    }

    #[test]
    fn split_edge_rejects_bad_fraction() {
        let mut g = line_graph(&[0, 1], 100.0);
        assert!(split_edge(&mut g, NodeId(0), NodeId(1), 0, 0.0).is_err());
        assert!(split_edge(&mut g, NodeId(0), NodeId(1), 0, 1.0).is_err());
    }

    #[test]
    fn repeated_splits_conserve_total_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut g = line_graph(&[0, 1], 300.0);
            let original = g.total_length_m();
            for _ in 0..5 {
                let keys: Vec<EdgeKey> = g.edge_keys().collect();
                let key = keys[rng.gen_range(0..keys.len())];
                let fraction = rng.gen_range(0.05..0.95);
                split_edge(&mut g, key.0, key.1, 0, fraction).unwrap();
            }
            assert!(
                (g.total_length_m() - original).abs() < 0.01,
                "length drifted: {} vs {original}",
                g.total_length_m()
            );
        }
    }

    #[test]
    fn aggregate_sums_and_keeps_partial_bins() {
        let mut a = vec![None; BINS_PER_DAY];
        a[0] = Some(3.0);
        a[1] = Some(3.0);
        let mut b = vec![None; BINS_PER_DAY];
        b[0] = Some(4.0);
        let out = aggregate_colocated(vec![
            (NodeId(1), "2021-06-01".to_string(), a),
            (NodeId(1), "2021-06-01".to_string(), b),
        ]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].counts[0], Some(7.0));
        assert_eq!(out[0].counts[1], Some(3.0));
        assert_eq!(out[0].counts[2], None);
    }

    #[test]
    fn aggregate_single_detector_is_identity() {
        let mut a = vec![None; BINS_PER_DAY];
        a[10] = Some(2.5);
        let out = aggregate_colocated(vec![(NodeId(3), "2021-06-01".to_string(), a.clone())]);
        assert_eq!(out[0].counts, a);
    }

    #[test]
    fn split_value_is_conservative() {
        let counts = vec![Some(12.0), None, Some(1.0)];
        let shares = split_value(&counts, 3).unwrap();
        assert_eq!(shares[0], Some(4.0));
        assert_eq!(shares[1], None);
        for (orig, share) in counts.iter().zip(&shares) {
            match (orig, share) {
                (Some(o), Some(s)) => assert!((s * 3.0 - o).abs() < 1e-12),
                (None, None) => {}
                other => panic!("mismatch {other:?}"),
            }
        }
        assert!(split_value(&counts, 0).is_err());
        assert_eq!(split_value(&counts, 1).unwrap(), counts);
    }

    #[test]
    fn attach_conserves_total_counts_and_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..10 {
            let g = crate::test_util::grid_graph(4, 4, 400.0);
            let original_length = g.total_length_m();
            let mut detectors = Vec::new();
            for i in 0..12 {
                let anchor = destination(
                    destination(ORIGIN, 0.0, rng.gen_range(0.0..1200.0)),
                    90.0,
                    rng.gen_range(0.0..1200.0),
                );
                let loc = destination(anchor, rng.gen_range(0.0..360.0), rng.gen_range(0.0..60.0));
                let counts: Vec<Option<f64>> = (0..BINS_PER_DAY)
                    .map(|_| {
                        if rng.gen_bool(0.2) {
                            None
                        } else {
                            Some(rng.gen_range(0.0..50.0f64).floor())
                        }
                    })
                    .collect();
                detectors.push(DetectorDay {
                    detector_id: format!("d{i:02}"),
                    lat: loc.0,
                    lon: loc.1,
                    heading: None,
                    day: "2021-06-01".into(),
                    counts,
                });
            }
            let result = attach_detectors(g, &detectors, &AttachConfig::default()).unwrap();
            let retained: f64 = detectors
                .iter()
                .filter(|d| result.assignments.contains_key(&d.detector_id))
                .flat_map(|d| d.counts.iter().flatten())
                .sum();
            let attached: f64 = result
                .node_counts
                .iter()
                .flat_map(|nc| nc.counts.iter().flatten())
                .sum();
            assert!(
                (retained - attached).abs() < 1e-9,
                "round {round}: retained {retained} vs attached {attached}"
            );
            assert!(
                (result.graph.total_length_m() - original_length).abs() < 0.01,
                "round {round}: length drifted"
            );
            // every retained node is a real node carrying the detector id
            for (det, nodes) in &result.assignments {
                for n in nodes {
                    assert!(result.graph.node(*n).unwrap().counter_info.contains(det));
                }
            }
        }
    }

    #[test]
    fn colocated_detectors_add_up_on_one_node() {
        let g = line_graph(&[0, 1], 500.0);
        let mut counts_a = vec![None; BINS_PER_DAY];
        counts_a[0] = Some(3.0);
        let mut counts_b = vec![None; BINS_PER_DAY];
        counts_b[0] = Some(4.0);
        let near = destination(ORIGIN, 0.0, 5.0);
        let detectors = vec![
            DetectorDay {
                detector_id: "a".into(),
                lat: near.0,
                lon: near.1,
                heading: None,
                day: "2021-06-01".into(),
                counts: counts_a,
            },
            DetectorDay {
                detector_id: "b".into(),
                lat: ORIGIN.0,
                lon: ORIGIN.1,
                heading: None,
                day: "2021-06-01".into(),
                counts: counts_b,
            },
        ];
        let result = attach_detectors(g, &detectors, &AttachConfig::default()).unwrap();
        assert_eq!(result.node_counts.len(), 1);
        assert_eq!(result.node_counts[0].node_id, NodeId(0));
        assert_eq!(result.node_counts[0].counts[0], Some(7.0));
        let node = result.graph.node(NodeId(0)).unwrap();
        assert_eq!(node.counter_info, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn multi_location_detector_splits_value() {
        // same detector id at two far-apart nodes: value is halved
        let g = line_graph(&[0, 1], 600.0);
        let far = destination(ORIGIN, 90.0, 600.0);
        let mut counts = vec![None; BINS_PER_DAY];
        counts[0] = Some(12.0);
        let detectors = vec![
            DetectorDay {
                detector_id: "m".into(),
                lat: ORIGIN.0,
                lon: ORIGIN.1,
                heading: None,
                day: "2021-06-01".into(),
                counts: counts.clone(),
            },
            DetectorDay {
                detector_id: "m".into(),
                lat: far.0,
                lon: far.1,
                heading: None,
                day: "2021-06-01".into(),
                counts,
            },
        ];
        let result = attach_detectors(g, &detectors, &AttachConfig::default()).unwrap();
        assert_eq!(result.assignments["m"], vec![NodeId(0), NodeId(1)]);
        // one logical series of 12, split evenly over the two nodes
        let n0 = result
            .node_counts
            .iter()
            .find(|nc| nc.node_id == NodeId(0))
            .unwrap();
        assert_eq!(n0.counts[0], Some(6.0));
        let n1 = result
            .node_counts
            .iter()
            .find(|nc| nc.node_id == NodeId(1))
            .unwrap();
        assert_eq!(n1.counts[0], Some(6.0));
        assert_eq!(result.graph.node(NodeId(0)).unwrap().num_assigned, 2);
    }
}
