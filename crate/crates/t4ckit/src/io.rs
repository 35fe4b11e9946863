//! Newline-delimited JSON readers and writers for every core type.
//!
//! One JSON object per line; missing values are JSON `null`. Parse and
//! validation failures are reported with the offending line number.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    CcPrediction, CongestionLabel, DetectorDay, Edge, EtaLabel, EtaPrediction, FreeFlow, Node,
    NodeId, RoadGraph, SegmentSpeedStats, SsId, SuperSegment, BINS_PER_DAY,
};

pub const NODES_FILE: &str = "nodes.jsonl";
pub const EDGES_FILE: &str = "edges.jsonl";
/// Side file listing nodes created by edge splitting.
pub const STRUCTURAL_NODES_FILE: &str = "structural_nodes.json";

/// Reads one record per line, attaching the line number to any failure.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .map_err(|e| Error::record(path, idx + 1, e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

/// Writes one record per line; creates parent directories as needed.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, &record)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn validated<T>(
    path: &Path,
    records: Vec<T>,
    validate: impl Fn(&T) -> Result<()>,
) -> Result<Vec<T>> {
    for (idx, record) in records.iter().enumerate() {
        validate(record).map_err(|e| Error::record(path, idx + 1, e.to_string()))?;
    }
    Ok(records)
}

/// Loads a graph from `<dir>/nodes.jsonl` and `<dir>/edges.jsonl`. Every
/// record is validated; an edge naming an unknown node is rejected with
/// its line number.
pub fn load_graph(dir: &Path) -> Result<RoadGraph> {
    let nodes_path = dir.join(NODES_FILE);
    let edges_path = dir.join(EDGES_FILE);
    let mut graph = RoadGraph::new();
    let nodes: Vec<Node> = read_jsonl(&nodes_path)?;
    for (idx, node) in nodes.into_iter().enumerate() {
        graph
            .add_node(node)
            .map_err(|e| Error::record(&nodes_path, idx + 1, e.to_string()))?;
    }
    let edges: Vec<Edge> = read_jsonl(&edges_path)?;
    for (idx, edge) in edges.into_iter().enumerate() {
        graph
            .add_edge(edge)
            .map_err(|e| Error::record(&edges_path, idx + 1, e.to_string()))?;
    }
    let structural_path = dir.join(STRUCTURAL_NODES_FILE);
    if structural_path.exists() {
        let raw = fs::read_to_string(&structural_path).map_err(|e| Error::io(&structural_path, e))?;
        let ids: Vec<NodeId> = serde_json::from_str(&raw)
            .map_err(|e| Error::record(&structural_path, 1, e.to_string()))?;
        for id in ids {
            if graph.node(id).is_some() {
                graph.mark_structural(id);
            }
        }
    }
    Ok(graph)
}

/// Writes `nodes.jsonl`, `edges.jsonl` and the structural-node side file.
pub fn save_graph(dir: &Path, graph: &RoadGraph) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(NODES_FILE), graph.nodes())?;
    write_jsonl(&dir.join(EDGES_FILE), graph.edges())?;
    let structural: Vec<NodeId> = graph.structural_nodes().collect();
    let path = dir.join(STRUCTURAL_NODES_FILE);
    let json = serde_json::to_string(&structural)
        .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_detectors(path: &Path) -> Result<Vec<DetectorDay>> {
    validated(path, read_jsonl(path)?, DetectorDay::validate)
}

pub fn load_speed_stats(path: &Path) -> Result<Vec<SegmentSpeedStats>> {
    validated(path, read_jsonl(path)?, SegmentSpeedStats::validate)
}

pub fn load_free_flow(path: &Path) -> Result<Vec<FreeFlow>> {
    validated(path, read_jsonl(path)?, FreeFlow::validate)
}

pub fn load_supersegments(path: &Path) -> Result<Vec<SuperSegment>> {
    validated(path, read_jsonl(path)?, SuperSegment::validate)
}

pub fn load_cc_labels(path: &Path) -> Result<Vec<CongestionLabel>> {
    read_jsonl(path)
}

pub fn load_eta_labels(path: &Path) -> Result<Vec<EtaLabel>> {
    read_jsonl(path)
}

pub fn load_cc_predictions(path: &Path) -> Result<Vec<CcPrediction>> {
    read_jsonl(path)
}

pub fn load_eta_predictions(path: &Path) -> Result<Vec<EtaPrediction>> {
    read_jsonl(path)
}

/// One diagnostic from prediction validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PredictionIssue {
    /// Prediction references an edge or super-segment not in the inputs.
    UnknownTarget { target: String },
    /// A required (target, bin) pair has no prediction.
    MissingPair { target: String, t: u8 },
    /// A predicted value is NaN or infinite (or negative, for ETA).
    BadValue { target: String, t: u8, detail: String },
}

/// Diagnostic report; empty means the prediction set fully covers the
/// expected domain with finite values.
#[derive(Debug, Default, Clone, PartialEq, Serialize)]
pub struct PredictionReport {
    pub issues: Vec<PredictionIssue>,
}

impl PredictionReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks congestion-class predictions against a graph: every graph edge
/// must be predicted for every bin, with finite logits.
pub fn validate_cc_prediction(preds: &[CcPrediction], graph: &RoadGraph) -> PredictionReport {
    let mut report = PredictionReport::default();
    let known: BTreeSet<(NodeId, NodeId)> = graph.edge_keys().collect();
    let mut seen: BTreeSet<(NodeId, NodeId, u8)> = BTreeSet::new();
    for p in preds {
        let target = format!("({}, {})", p.u, p.v);
        if !known.contains(&(p.u, p.v)) {
            report
                .issues
                .push(PredictionIssue::UnknownTarget { target: target.clone() });
        }
        if p.logits.iter().any(|l| !l.is_finite()) {
            report.issues.push(PredictionIssue::BadValue {
                target: target.clone(),
                t: p.t,
                detail: format!("non-finite logits {:?}", p.logits),
            });
        }
        seen.insert((p.u, p.v, p.t));
    }
    for (u, v) in &known {
        for t in 0..BINS_PER_DAY as u8 {
            if !seen.contains(&(*u, *v, t)) {
                report.issues.push(PredictionIssue::MissingPair {
                    target: format!("({u}, {v})"),
                    t,
                });
            }
        }
    }
    report
}

/// Checks ETA predictions against the super-segment set: every
/// super-segment must be predicted for every bin, with finite
/// non-negative values.
pub fn validate_eta_prediction(
    preds: &[EtaPrediction],
    supersegments: &[SuperSegment],
) -> PredictionReport {
    let mut report = PredictionReport::default();
    let known: BTreeSet<SsId> = supersegments.iter().map(|s| s.ssid).collect();
    let mut seen: BTreeSet<(SsId, u8)> = BTreeSet::new();
    for p in preds {
        if !known.contains(&p.ssid) {
            report.issues.push(PredictionIssue::UnknownTarget {
                target: p.ssid.to_string(),
            });
        }
        if !p.eta_s.is_finite() || p.eta_s < 0.0 {
            report.issues.push(PredictionIssue::BadValue {
                target: p.ssid.to_string(),
                t: p.t,
                detail: format!("bad eta {}", p.eta_s),
            });
        }
        seen.insert((p.ssid, p.t));
    }
    for ssid in &known {
        for t in 0..BINS_PER_DAY as u8 {
            if !seen.contains(&(*ssid, t)) {
                report.issues.push(PredictionIssue::MissingPair {
                    target: ssid.to_string(),
                    t,
                });
            }
        }
    }
    report
}

/// Convenience for building output paths under a directory.
pub fn in_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
