//! Road-graph cleaning pipeline: access filtering, low-volume removal
//! against the city heatmap, dead-end/isolate/self-loop/sub-graph/
//! circle-ramp cleanup and multi-edge resolution.
//!
//! Nodes introduced by edge splitting are geometric break points, not
//! intersections; the low-volume and circle-ramp rules skip them so that
//! running the pipeline on its own output changes nothing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::attach::split_edge;
use crate::error::{Error, Result};
use crate::heatmap::VolumeHeatmap;
use crate::model::{NodeId, RoadGraph};

/// Access tags whose edges are removed.
pub const FORBIDDEN_ACCESS: [&str; 7] = [
    "no",
    "private",
    "official",
    "permit",
    "delivery",
    "designated",
    "emergency",
];

/// Highway classes subject to low-volume removal.
pub const LOW_VOLUME_CLASSES: [&str; 2] = ["residential", "unclassified"];

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CleanConfig {
    /// Edges with max heatmap volume below this are dropped.
    pub low_volume_threshold: f64,
    /// Edges shorter than this survive low-volume removal.
    pub low_volume_min_length_m: f64,
    /// Self-loops shorter than this are dropped.
    pub self_loop_max_m: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            low_volume_threshold: 10.0,
            low_volume_min_length_m: 50.0,
            self_loop_max_m: 300.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct StepReport {
    pub step: String,
    pub nodes_removed: usize,
    pub edges_removed: usize,
    pub nodes_added: usize,
    pub edges_added: usize,
    pub length_removed_m: f64,
}

/// Ordered log of what each cleaning step did.
#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct CleanReport {
    pub steps: Vec<StepReport>,
    /// Low-volume samples that fell outside the heatmap extent.
    pub samples_outside_heatmap: usize,
}

impl CleanReport {
    fn log(&mut self, step: &str, before: (usize, usize, f64), graph: &RoadGraph) {
        let (nodes_before, edges_before, length_before) = before;
        let nodes_after = graph.node_count();
        let edges_after = graph.edge_count();
        self.steps.push(StepReport {
            step: step.to_string(),
            nodes_removed: nodes_before.saturating_sub(nodes_after),
            edges_removed: edges_before.saturating_sub(edges_after),
            nodes_added: nodes_after.saturating_sub(nodes_before),
            edges_added: edges_after.saturating_sub(edges_before),
            length_removed_m: (length_before - graph.total_length_m()).max(0.0),
        });
    }

    pub fn total_edges_removed(&self) -> usize {
        self.steps.iter().map(|s| s.edges_removed).sum()
    }
}

fn snapshot(graph: &RoadGraph) -> (usize, usize, f64) {
    (graph.node_count(), graph.edge_count(), graph.total_length_m())
}

/// Removes edges whose access tag forbids public traffic.
pub fn clean_no_access(graph: &mut RoadGraph) -> usize {
    graph.retain_edges(|e| match &e.access {
        Some(tag) => !FORBIDDEN_ACCESS.contains(&tag.as_str()),
        None => true,
    })
}

/// Removes residential/unclassified edges whose busiest intersecting
/// heatmap cell stays below the volume threshold. Edges shorter than
/// 50 m, edges touching a counter node and edges touching a split node
/// are kept. Returns (edges removed, samples outside the extent).
pub fn clean_low_volume(
    graph: &mut RoadGraph,
    heatmap: &VolumeHeatmap,
    cfg: &CleanConfig,
) -> (usize, usize) {
    let counter_nodes: BTreeSet<NodeId> = graph
        .nodes()
        .filter(|n| !n.counter_info.is_empty())
        .map(|n| n.node_id)
        .collect();
    let structural: BTreeSet<NodeId> = graph.structural_nodes().collect();

    let mut outside = 0usize;
    let mut doomed: Vec<(NodeId, NodeId, usize)> = Vec::new();
    for (key, edges) in graph
        .edge_keys()
        .map(|k| (k, graph.edges_between(k.0, k.1)))
    {
        for (idx, edge) in edges.iter().enumerate() {
            if !LOW_VOLUME_CLASSES.contains(&edge.highway_class.as_str()) {
                continue;
            }
            if edge.length_m < cfg.low_volume_min_length_m {
                continue;
            }
            if counter_nodes.contains(&edge.u) || counter_nodes.contains(&edge.v) {
                continue;
            }
            if structural.contains(&edge.u) || structural.contains(&edge.v) {
                continue;
            }
            let (volume, fell_outside) = heatmap.max_edge_volume(edge);
            if fell_outside {
                outside += 1;
            }
            if volume < cfg.low_volume_threshold {
                doomed.push((key.0, key.1, idx));
            }
        }
    }
    // remove from the back so parallel indices stay valid
    doomed.sort();
    doomed.reverse();
    let removed = doomed.len();
    for (u, v, idx) in doomed {
        let mut edges = graph.remove_edges(u, v);
        edges.remove(idx);
        for edge in edges {
            graph.add_edge(edge).expect("re-adding surviving parallel edge");
        }
    }
    (removed, outside)
}

/// Removes dead-end edges until none remain: an edge (a, b) dies when b
/// has no outgoing edge to a node other than a, or when a has no
/// incoming edge from a node other than b.
pub fn clean_dead_ends(graph: &mut RoadGraph) -> usize {
    let mut removed = 0usize;
    loop {
        let mut doomed: Vec<(NodeId, NodeId)> = Vec::new();
        for (a, b) in graph.edge_keys() {
            if a == b {
                continue;
            }
            let head_continues = graph.out_neighbors(b).any(|n| n != a && n != b);
            let tail_reachable = graph.in_neighbors(a).any(|n| n != b && n != a);
            if !head_continues || !tail_reachable {
                doomed.push((a, b));
            }
        }
        if doomed.is_empty() {
            return removed;
        }
        for (a, b) in doomed {
            removed += graph.remove_edges(a, b).len();
        }
    }
}

/// Removes nodes without any incident edge.
pub fn clean_isolates(graph: &mut RoadGraph) -> usize {
    let doomed: Vec<NodeId> = graph
        .node_ids()
        .filter(|id| graph.degree(*id) == 0)
        .collect();
    let removed = doomed.len();
    for id in doomed {
        graph.remove_node(id);
    }
    removed
}

/// Removes self-loops shorter than the configured threshold.
pub fn clean_self_loops(graph: &mut RoadGraph, max_m: f64) -> usize {
    graph.retain_edges(|e| !(e.is_self_loop() && e.length_m < max_m))
}

/// Removes nodes whose only connections are self-loops (or nothing).
pub fn clean_no_neighbors(graph: &mut RoadGraph) -> usize {
    let doomed: Vec<NodeId> = graph
        .node_ids()
        .filter(|id| graph.neighbors(*id).is_empty())
        .collect();
    let removed = doomed.len();
    for id in doomed {
        graph.remove_node(id);
    }
    removed
}

/// Keeps only the largest weakly connected component; ties go to the
/// component containing the smallest node id.
pub fn largest_component(graph: &mut RoadGraph) -> Result<(usize, usize)> {
    if graph.node_count() == 0 {
        return Err(Error::invalid("largest_component on an empty graph"));
    }
    let mut component: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut sizes: Vec<usize> = Vec::new();
    for start in graph.node_ids().collect::<Vec<_>>() {
        if component.contains_key(&start) {
            continue;
        }
        let label = sizes.len();
        let mut size = 0usize;
        let mut queue = VecDeque::from([start]);
        component.insert(start, label);
        while let Some(n) = queue.pop_front() {
            size += 1;
            for next in graph.neighbors(n) {
                if !component.contains_key(&next) {
                    component.insert(next, label);
                    queue.push_back(next);
                }
            }
        }
        sizes.push(size);
    }
    // BTreeMap iteration visits node ids ascending, so the first node of
    // a maximal component is the smallest-id tie-break
    let mut best_label = None;
    for (_, label) in component.iter() {
        let better = match best_label {
            None => true,
            Some(b) => sizes[*label] > sizes[b],
        };
        if better {
            best_label = Some(*label);
        }
    }
    let keep = best_label.expect("graph has nodes");
    let doomed: Vec<NodeId> = component
        .iter()
        .filter(|(_, label)| **label != keep)
        .map(|(id, _)| *id)
        .collect();
    let nodes_removed = doomed.len();
    let edges_before = graph.edge_count();
    for id in doomed {
        graph.remove_node(id);
    }
    Ok((nodes_removed, edges_before - graph.edge_count()))
}

/// Removes bypass nodes: a node connected to exactly two other nodes
/// that already have a direct connection. Split-artifact nodes and nodes
/// carrying a vehicle counter are kept. Runs to fixpoint. Returns
/// (nodes removed, edges removed).
pub fn clean_circle_ramps(graph: &mut RoadGraph) -> (usize, usize) {
    let mut nodes_removed = 0usize;
    let mut edges_removed = 0usize;
    loop {
        let mut doomed: Vec<NodeId> = Vec::new();
        for id in graph.node_ids().collect::<Vec<_>>() {
            if graph.is_structural(id) {
                continue;
            }
            if !graph.node(id).map(|n| n.counter_info.is_empty()).unwrap_or(true) {
                continue;
            }
            let nbrs = graph.neighbors(id);
            if nbrs.len() != 2 {
                continue;
            }
            let mut it = nbrs.into_iter();
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            if graph.has_edge(a, b) || graph.has_edge(b, a) {
                doomed.push(id);
            }
        }
        if doomed.is_empty() {
            return (nodes_removed, edges_removed);
        }
        for id in doomed {
            // a previous removal this round may have changed the situation
            if graph.node(id).is_none() {
                continue;
            }
            let nbrs = graph.neighbors(id);
            if nbrs.len() != 2 {
                continue;
            }
            let mut it = nbrs.into_iter();
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            if !(graph.has_edge(a, b) || graph.has_edge(b, a)) {
                continue;
            }
            let edges_before = graph.edge_count();
            graph.remove_node(id);
            nodes_removed += 1;
            edges_removed += edges_before - graph.edge_count();
        }
    }
}

/// Resolves parallel edges: the shortest edge per (u, v) pair stays, every
/// longer duplicate is split at its midpoint through an inserted node,
/// preserving total length. Returns (duplicates split, nodes added).
pub fn clean_multi_edges(graph: &mut RoadGraph) -> (usize, usize) {
    let mut split_count = 0usize;
    let mut nodes_added = 0usize;
    let keys: Vec<(NodeId, NodeId)> = graph
        .edge_keys()
        .filter(|(u, v)| graph.edges_between(*u, *v).len() > 1)
        .collect();
    for (u, v) in keys {
        loop {
            let edges = graph.edges_between(u, v);
            if edges.len() <= 1 {
                break;
            }
            let min_idx = edges
                .iter()
                .enumerate()
                .min_by(|(ia, a), (ib, b)| {
                    a.length_m
                        .partial_cmp(&b.length_m)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(ia.cmp(ib))
                })
                .map(|(i, _)| i)
                .unwrap();
            let victim = if min_idx == 0 { 1 } else { 0 };
            split_edge(graph, u, v, victim, 0.5).expect("midpoint split of a parallel edge");
            split_count += 1;
            nodes_added += 1;
        }
    }
    (split_count, nodes_added)
}

/// Runs the full cleaning pipeline in order: access filter, low-volume
/// removal, dead ends, isolates, (self-loops + isolates + dead ends) to
/// fixpoint, no-neighbors, largest component + dead ends, (circle ramps +
/// isolates) to fixpoint, a stabilization sweep, and finally multi-edge
/// resolution.
pub fn clean_pipeline(
    mut graph: RoadGraph,
    heatmap: &VolumeHeatmap,
    cfg: &CleanConfig,
) -> Result<(RoadGraph, CleanReport)> {
    let mut report = CleanReport::default();

    let before = snapshot(&graph);
    clean_no_access(&mut graph);
    report.log("no_access", before, &graph);

    let before = snapshot(&graph);
    let (_, outside) = clean_low_volume(&mut graph, heatmap, cfg);
    report.samples_outside_heatmap = outside;
    report.log("low_volume", before, &graph);

    let before = snapshot(&graph);
    clean_dead_ends(&mut graph);
    report.log("dead_ends", before, &graph);

    let before = snapshot(&graph);
    clean_isolates(&mut graph);
    report.log("isolates", before, &graph);

    let before = snapshot(&graph);
    loop {
        let a = clean_self_loops(&mut graph, cfg.self_loop_max_m);
        let b = clean_isolates(&mut graph);
        let c = clean_dead_ends(&mut graph);
        if a + b + c == 0 {
            break;
        }
    }
    report.log("self_loops_isolates_dead_ends", before, &graph);

    let before = snapshot(&graph);
    clean_no_neighbors(&mut graph);
    report.log("no_neighbors", before, &graph);

    let before = snapshot(&graph);
    largest_component(&mut graph)?;
    clean_dead_ends(&mut graph);
    report.log("largest_component_dead_ends", before, &graph);

    let before = snapshot(&graph);
    loop {
        let (n, _) = clean_circle_ramps(&mut graph);
        let i = clean_isolates(&mut graph);
        if n + i == 0 {
            break;
        }
    }
    report.log("circle_ramps_isolates", before, &graph);

    // removing dead ends can split the kept component or re-expose other
    // rules, so sweep the topology steps until nothing changes
    let before = snapshot(&graph);
    loop {
        let mut changed = clean_self_loops(&mut graph, cfg.self_loop_max_m);
        changed += clean_dead_ends(&mut graph);
        changed += clean_isolates(&mut graph);
        changed += clean_no_neighbors(&mut graph);
        if graph.node_count() > 0 {
            let (n, e) = largest_component(&mut graph)?;
            changed += n + e;
        }
        let (n, e) = clean_circle_ramps(&mut graph);
        changed += n + e;
        if changed == 0 {
            break;
        }
    }
    report.log("stabilize", before, &graph);

    let before = snapshot(&graph);
    clean_multi_edges(&mut graph);
    report.log("multi_edges", before, &graph);

    Ok((graph, report))
}
