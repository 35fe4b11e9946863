//! Shared domain types: road graph, detector readings, speed statistics,
//! labels, super-segments and predictions.
//!
//! All types are immutable after loading and safe to share across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo;

/// Number of 15-minute bins per day.
pub const BINS_PER_DAY: usize = 96;

/// Number of 5-minute windows per day (raw detector feeds).
pub const RAW_WINDOWS_PER_DAY: usize = 288;

/// Graph node identifier.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Ordered edge key (u, v); the reverse direction is a distinct edge.
pub type EdgeKey = (NodeId, NodeId);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: NodeId,
    pub lat: f64,
    pub lon: f64,
    /// City-specific detector IDs attached to this node (possibly empty).
    #[serde(default)]
    pub counter_info: Vec<String>,
    /// Number of nodes a detector's value was split into (1 when unsplit).
    #[serde(default = "default_num_assigned")]
    pub num_assigned: u32,
}

fn default_num_assigned() -> u32 {
    1
}

impl Node {
    pub fn new(node_id: NodeId, lat: f64, lon: f64) -> Self {
        Node {
            node_id,
            lat,
            lon,
            counter_info: Vec::new(),
            num_assigned: 1,
        }
    }

    pub fn coord(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::invalid(format!(
                "node {}: coordinates ({}, {}) out of range",
                self.node_id, self.lat, self.lon
            )));
        }
        if self.num_assigned < 1 {
            return Err(Error::invalid(format!(
                "node {}: num_assigned must be >= 1",
                self.node_id
            )));
        }
        Ok(())
    }
}

/// Highest importance class (motorway).
pub const IMPORTANCE_MAX: u8 = 5;

/// Maps an OSM highway class to the 0..=5 importance scale used by edge
/// weighting and cleaning. The full table is documented in the README.
pub fn importance_for_class(highway_class: &str) -> u8 {
    match highway_class.trim_end_matches("_link") {
        "motorway" => 5,
        "trunk" => 4,
        "primary" => 3,
        "secondary" => 2,
        "tertiary" => 1,
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub length_m: f64,
    /// Importance 0 (residential/unclassified) .. 5 (motorway).
    pub importance: u8,
    pub maxspeed_kph: f64,
    pub highway_class: String,
    #[serde(default)]
    pub access: Option<String>,
    pub oneway: bool,
    /// Polyline of (lat, lon) points from u to v.
    pub geometry: Vec<(f64, f64)>,
}

impl Edge {
    pub fn key(&self) -> EdgeKey {
        (self.u, self.v)
    }

    pub fn is_self_loop(&self) -> bool {
        self.u == self.v
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_m > 0.0) {
            return Err(Error::invalid(format!(
                "edge ({}, {}): length_m must be > 0, got {}",
                self.u, self.v, self.length_m
            )));
        }
        if self.importance > IMPORTANCE_MAX {
            return Err(Error::invalid(format!(
                "edge ({}, {}): importance {} out of 0..=5",
                self.u, self.v, self.importance
            )));
        }
        if !(self.maxspeed_kph > 0.0) {
            return Err(Error::invalid(format!(
                "edge ({}, {}): maxspeed_kph must be > 0",
                self.u, self.v
            )));
        }
        if self.geometry.len() < 2 {
            return Err(Error::invalid(format!(
                "edge ({}, {}): geometry needs at least 2 points",
                self.u, self.v
            )));
        }
        Ok(())
    }
}

/// Tolerance for geometry endpoints matching node coordinates, meters.
const GEOMETRY_ENDPOINT_TOL_M: f64 = 1.0;

/// Directed road graph. Parallel edges per ordered (u, v) pair are allowed
/// until `clean_multi_edges` runs; most consumers expect at most one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<EdgeKey, Vec<Edge>>,
    out_adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
    in_adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// Nodes introduced by splitting an edge (detector projections,
    /// multi-edge midpoints). These are geometric break points, not
    /// intersections, and are exempt from intersection-topology cleaning.
    structural_nodes: BTreeSet<NodeId>,
}

impl RoadGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(Vec::len).sum()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// All edges in deterministic (u, v, insertion) order.
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values().flatten()
    }

    pub fn edge_keys(&self) -> impl Iterator<Item = EdgeKey> + '_ {
        self.edges.keys().copied()
    }

    pub fn edges_between(&self, u: NodeId, v: NodeId) -> &[Edge] {
        self.edges.get(&(u, v)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The unique edge u -> v; None when absent or still a multi-edge.
    pub fn edge(&self, u: NodeId, v: NodeId) -> Option<&Edge> {
        match self.edges_between(u, v) {
            [e] => Some(e),
            _ => None,
        }
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        !self.edges_between(u, v).is_empty()
    }

    pub fn max_node_id(&self) -> Option<NodeId> {
        self.nodes.keys().next_back().copied()
    }

    pub fn total_length_m(&self) -> f64 {
        self.edges().map(|e| e.length_m).sum()
    }

    pub fn is_structural(&self, id: NodeId) -> bool {
        self.structural_nodes.contains(&id)
    }

    pub fn mark_structural(&mut self, id: NodeId) {
        self.structural_nodes.insert(id);
    }

    pub fn structural_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.structural_nodes.iter().copied()
    }

    pub fn add_node(&mut self, node: Node) -> Result<()> {
        node.validate()?;
        if self.nodes.contains_key(&node.node_id) {
            return Err(Error::invalid(format!(
                "duplicate node_id {}",
                node.node_id
            )));
        }
        self.nodes.insert(node.node_id, node);
        Ok(())
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<()> {
        edge.validate()?;
        let u = self
            .nodes
            .get(&edge.u)
            .ok_or_else(|| Error::invalid(format!("edge references unknown node {}", edge.u)))?;
        let v = self
            .nodes
            .get(&edge.v)
            .ok_or_else(|| Error::invalid(format!("edge references unknown node {}", edge.v)))?;
        let start = *edge.geometry.first().unwrap();
        let end = *edge.geometry.last().unwrap();
        if geo::haversine_m(start, u.coord()) > GEOMETRY_ENDPOINT_TOL_M
            || geo::haversine_m(end, v.coord()) > GEOMETRY_ENDPOINT_TOL_M
        {
            return Err(Error::invalid(format!(
                "edge ({}, {}): geometry endpoints do not coincide with node coordinates",
                edge.u, edge.v
            )));
        }
        self.out_adj.entry(edge.u).or_default().insert(edge.v);
        self.in_adj.entry(edge.v).or_default().insert(edge.u);
        self.edges.entry(edge.key()).or_default().push(edge);
        Ok(())
    }

    /// Removes every parallel edge u -> v; returns the removed edges.
    pub fn remove_edges(&mut self, u: NodeId, v: NodeId) -> Vec<Edge> {
        let removed = self.edges.remove(&(u, v)).unwrap_or_default();
        if !removed.is_empty() {
            if let Some(s) = self.out_adj.get_mut(&u) {
                s.remove(&v);
            }
            if let Some(s) = self.in_adj.get_mut(&v) {
                s.remove(&u);
            }
        }
        removed
    }

    /// Removes a node and all of its incident edges.
    pub fn remove_node(&mut self, id: NodeId) -> Option<Node> {
        let node = self.nodes.remove(&id)?;
        let outs: Vec<NodeId> = self.out_adj.remove(&id).unwrap_or_default().into_iter().collect();
        for v in outs {
            self.edges.remove(&(id, v));
            if let Some(s) = self.in_adj.get_mut(&v) {
                s.remove(&id);
            }
        }
        let ins: Vec<NodeId> = self.in_adj.remove(&id).unwrap_or_default().into_iter().collect();
        for u in ins {
            self.edges.remove(&(u, id));
            if let Some(s) = self.out_adj.get_mut(&u) {
                s.remove(&id);
            }
        }
        self.structural_nodes.remove(&id);
        Some(node)
    }

    /// Keeps only edges satisfying `pred`; returns the number removed.
    pub fn retain_edges(&mut self, mut pred: impl FnMut(&Edge) -> bool) -> usize {
        let before = self.edge_count();
        let mut emptied = Vec::new();
        for (key, list) in self.edges.iter_mut() {
            list.retain(|e| pred(e));
            if list.is_empty() {
                emptied.push(*key);
            }
        }
        for (u, v) in emptied {
            self.edges.remove(&(u, v));
            if let Some(s) = self.out_adj.get_mut(&u) {
                s.remove(&v);
            }
            if let Some(s) = self.in_adj.get_mut(&v) {
                s.remove(&u);
            }
        }
        before - self.edge_count()
    }

    /// Successor node ids of `u` (distinct, ordered).
    pub fn out_neighbors(&self, u: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.out_adj.get(&u).into_iter().flatten().copied()
    }

    /// Predecessor node ids of `u` (distinct, ordered).
    pub fn in_neighbors(&self, u: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.in_adj.get(&u).into_iter().flatten().copied()
    }

    /// Distinct neighbor nodes in either direction, excluding `u` itself.
    pub fn neighbors(&self, u: NodeId) -> BTreeSet<NodeId> {
        let mut set: BTreeSet<NodeId> = self.out_neighbors(u).collect();
        set.extend(self.in_neighbors(u));
        set.remove(&u);
        set
    }

    pub fn degree(&self, u: NodeId) -> usize {
        let out: usize = self
            .out_adj
            .get(&u)
            .map(|s| s.iter().map(|v| self.edges_between(u, *v).len()).sum())
            .unwrap_or(0);
        let inn: usize = self
            .in_adj
            .get(&u)
            .map(|s| s.iter().map(|w| self.edges_between(*w, u).len()).sum())
            .unwrap_or(0);
        out + inn
    }

    /// Edges incident to `u` in either direction.
    pub fn incident_edges(&self, u: NodeId) -> Vec<&Edge> {
        let mut out: Vec<&Edge> = Vec::new();
        for v in self.out_neighbors(u) {
            out.extend(self.edges_between(u, v));
        }
        for w in self.in_neighbors(u) {
            if w != u {
                out.extend(self.edges_between(w, u));
            }
        }
        out
    }

    /// Checks graph-level invariants (used after load).
    pub fn validate(&self) -> Result<()> {
        for edge in self.edges() {
            if !self.nodes.contains_key(&edge.u) {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) references unknown node {}",
                    edge.u, edge.v, edge.u
                )));
            }
            if !self.nodes.contains_key(&edge.v) {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) references unknown node {}",
                    edge.u, edge.v, edge.v
                )));
            }
        }
        Ok(())
    }
}

/// One detector's day of 15-minute vehicle counts. `None` marks missing data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorDay {
    pub detector_id: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub heading: Option<f64>,
    /// ISO date, YYYY-MM-DD.
    pub day: String,
    pub counts: Vec<Option<f64>>,
}

impl DetectorDay {
    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != BINS_PER_DAY {
            return Err(Error::invalid(format!(
                "detector {}: expected {} count slots, got {}",
                self.detector_id,
                BINS_PER_DAY,
                self.counts.len()
            )));
        }
        if let Some(bad) = self.counts.iter().flatten().find(|c| **c < 0.0) {
            return Err(Error::invalid(format!(
                "detector {}: negative count {}",
                self.detector_id, bad
            )));
        }
        validate_day(&self.day)
            .map_err(|e| Error::invalid(format!("detector {}: {e}", self.detector_id)))?;
        Ok(())
    }
}

/// Cheap YYYY-MM-DD shape check.
pub fn validate_day(day: &str) -> std::result::Result<(), String> {
    let parts: Vec<&str> = day.split('-').collect();
    let ok = parts.len() == 3
        && parts[0].len() == 4
        && parts[1].len() == 2
        && parts[2].len() == 2
        && parts.iter().all(|p| p.chars().all(|c| c.is_ascii_digit()))
        && (1..=12).contains(&parts[1].parse::<u32>().unwrap_or(0))
        && (1..=31).contains(&parts[2].parse::<u32>().unwrap_or(0));
    if ok {
        Ok(())
    } else {
        Err(format!("invalid day {day:?}, expected YYYY-MM-DD"))
    }
}

/// Raw median speed values 0 and 255 signal data corruption.
pub const RAW_SPEED_SENTINELS: [u32; 2] = [0, 255];

/// Per-edge, per-bin speed statistics derived from GPS probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpeedStats {
    pub u: NodeId,
    pub v: NodeId,
    /// 15-minute bin index, 0..=95.
    pub t: u8,
    pub median_speed_kph: f64,
    /// Probe count backing the median.
    pub volume: u32,
    /// Encoded median speed; 0 and 255 are corruption sentinels.
    pub raw_median_speed: u32,
}

impl SegmentSpeedStats {
    pub fn validate(&self) -> Result<()> {
        if self.t as usize >= BINS_PER_DAY {
            return Err(Error::invalid(format!(
                "speed stat ({}, {}): bin {} out of 0..=95",
                self.u, self.v, self.t
            )));
        }
        if self.median_speed_kph < 0.0 {
            return Err(Error::invalid(format!(
                "speed stat ({}, {}) t={}: negative median speed",
                self.u, self.v, self.t
            )));
        }
        Ok(())
    }

    pub fn is_corrupt(&self) -> bool {
        RAW_SPEED_SENTINELS.contains(&self.raw_median_speed)
    }
}

/// Uncongested reference speed per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeFlow {
    pub u: NodeId,
    pub v: NodeId,
    pub free_flow_kph: f64,
}

impl FreeFlow {
    pub fn validate(&self) -> Result<()> {
        if !(self.free_flow_kph > 0.0) {
            return Err(Error::invalid(format!(
                "free flow ({}, {}): free_flow_kph must be > 0",
                self.u, self.v
            )));
        }
        Ok(())
    }
}

/// Congestion class: 0 masked/unclassified, 1 green, 2 yellow, 3 red.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum CongestionClass {
    Unclassified = 0,
    Green = 1,
    Yellow = 2,
    Red = 3,
}

impl CongestionClass {
    pub const CLASSIFIED: [CongestionClass; 3] = [
        CongestionClass::Green,
        CongestionClass::Yellow,
        CongestionClass::Red,
    ];

    pub fn is_masked(self) -> bool {
        self == CongestionClass::Unclassified
    }

    /// Index into per-class arrays over classes 1..=3; None for the mask.
    pub fn class_index(self) -> Option<usize> {
        match self {
            CongestionClass::Unclassified => None,
            c => Some(c as usize - 1),
        }
    }
}

impl From<CongestionClass> for u8 {
    fn from(cc: CongestionClass) -> u8 {
        cc as u8
    }
}

impl TryFrom<u8> for CongestionClass {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(CongestionClass::Unclassified),
            1 => Ok(CongestionClass::Green),
            2 => Ok(CongestionClass::Yellow),
            3 => Ok(CongestionClass::Red),
            other => Err(format!("congestion class {other} out of 0..=3")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionLabel {
    pub u: NodeId,
    pub v: NodeId,
    pub t: u8,
    pub cc: CongestionClass,
}

/// Super-segment identifier.
pub type SsId = u64;

/// Ordered list of edge keys between two key intersections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperSegment {
    pub ssid: SsId,
    pub edges: Vec<EdgeKey>,
}

impl SuperSegment {
    /// Node sequence u0, u1, ..., un spelled by the edge chain.
    pub fn node_path(&self) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.edges.len() + 1);
        if let Some((u, _)) = self.edges.first() {
            path.push(*u);
        }
        path.extend(self.edges.iter().map(|(_, v)| *v));
        path
    }

    pub fn source(&self) -> Option<NodeId> {
        self.edges.first().map(|(u, _)| *u)
    }

    pub fn target(&self) -> Option<NodeId> {
        self.edges.last().map(|(_, v)| *v)
    }

    /// Non-empty, consecutive edges chain, and the walk is a simple path.
    pub fn validate(&self) -> Result<()> {
        if self.edges.is_empty() {
            return Err(Error::invalid(format!(
                "super-segment {}: empty edge list",
                self.ssid
            )));
        }
        for w in self.edges.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::invalid(format!(
                    "super-segment {}: edges ({}, {}) and ({}, {}) do not chain",
                    self.ssid, w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        let path = self.node_path();
        let distinct: BTreeSet<NodeId> = path.iter().copied().collect();
        if distinct.len() != path.len() {
            return Err(Error::invalid(format!(
                "super-segment {}: node path revisits a node",
                self.ssid
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaLabel {
    pub ssid: SsId,
    pub t: u8,
    pub eta_s: f64,
}

/// Congestion-class logits for classes 1..=3 on one (edge, bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcPrediction {
    pub u: NodeId,
    pub v: NodeId,
    pub t: u8,
    pub logits: [f64; 3],
}

/// ETA prediction in seconds for one (super-segment, bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaPrediction {
    pub ssid: SsId,
    pub t: u8,
    pub eta_s: f64,
}
