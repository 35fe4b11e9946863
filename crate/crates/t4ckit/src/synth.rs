//! Synthetic city generator: a grid road network with planted per-zone,
//! per-hour congestion regimes, detectors, probe-volume heatmaps, speed
//! statistics and free-flow speeds. Speed statistics are keyed to the
//! topology that attachment and cleaning produce, so the full pipeline
//! recovers the planted labels.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attach::{attach_detectors, normalize_day, AttachConfig, AttachmentResult};
use crate::clean::{clean_pipeline, CleanConfig, CleanReport};
use crate::error::Result;
use crate::geo::destination;
use crate::heatmap::{build_heatmap, BoundingBox, DailyGrid, SAMPLE_DAYS};
use crate::model::{
    DetectorDay, Edge, FreeFlow, Node, NodeId, RoadGraph, SegmentSpeedStats, BINS_PER_DAY,
    RAW_WINDOWS_PER_DAY,
};
use crate::pipeline::stage_seed;

/// Planted class probabilities (green, yellow, red) per hour of day.
pub type HourlyRegime = [[f64; 3]; 24];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticCitySpec {
    pub name: String,
    pub grid_rows: u64,
    pub grid_cols: u64,
    pub spacing_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Fraction of bins per edge that carry a classifiable stats row.
    pub coverage_target: f64,
    /// Probability of placing a detector near a node.
    pub detector_density: f64,
    /// Days to generate speed statistics for.
    pub days: Vec<String>,
    /// Daily probe-volume grids backing the heatmap.
    pub heatmap_days: usize,
    /// Add junk that the cleaning pipeline must remove.
    pub messy: bool,
    /// Planted regimes for the four grid quadrants.
    pub regimes: Vec<HourlyRegime>,
}

/// Four zone regimes rotating the dominant class every 8 hours, offset
/// per zone; each class dominates the same number of hours overall, so
/// training counts come out balanced.
pub fn default_regimes() -> Vec<HourlyRegime> {
    let mut zones = Vec::with_capacity(4);
    for zone in 0..4usize {
        let mut regime = [[0.0; 3]; 24];
        for (hour, probs) in regime.iter_mut().enumerate() {
            let dominant = (hour / 8 + zone) % 3;
            for (c, p) in probs.iter_mut().enumerate() {
                *p = if c == dominant { 0.8 } else { 0.1 };
            }
        }
        zones.push(regime);
    }
    zones
}

impl Default for SyntheticCitySpec {
    fn default() -> Self {
        SyntheticCitySpec {
            name: "synthville".into(),
            grid_rows: 8,
            grid_cols: 8,
            spacing_m: 220.0,
            origin_lat: 48.0,
            origin_lon: 16.0,
            coverage_target: 0.42,
            detector_density: 0.35,
            days: vec!["2021-06-01".into(), "2021-06-02".into()],
            heatmap_days: 40,
            messy: true,
            regimes: default_regimes(),
        }
    }
}

impl SyntheticCitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_rows < 2 || self.grid_cols < 2 {
            return Err(crate::Error::invalid("grid must be at least 2x2"));
        }
        if !(0.0..=1.0).contains(&self.coverage_target) {
            return Err(crate::Error::invalid("coverage target must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.detector_density) {
            return Err(crate::Error::invalid("detector density must be in [0, 1]"));
        }
        if self.days.is_empty() {
            return Err(crate::Error::invalid("at least one day required"));
        }
        if self.regimes.is_empty() {
            return Err(crate::Error::invalid("at least one zone regime required"));
        }
        for regime in &self.regimes {
            for probs in regime {
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || probs.iter().any(|p| *p < 0.0) {
                    return Err(crate::Error::invalid(
                        "zone regime rows must be probability vectors",
                    ));
                }
            }
        }
        Ok(())
    }

    fn center(&self) -> (f64, f64) {
        let north = self.spacing_m * (self.grid_rows - 1) as f64 / 2.0;
        let east = self.spacing_m * (self.grid_cols - 1) as f64 / 2.0;
        destination(
            destination((self.origin_lat, self.origin_lon), 0.0, north),
            90.0,
            east,
        )
    }

    /// Quadrant of a coordinate: 0 SW, 1 SE, 2 NW, 3 NE (clamped to the
    /// available regimes).
    pub fn zone_of(&self, lat: f64, lon: f64) -> usize {
        let (clat, clon) = self.center();
        let mut zone = 0usize;
        if lon >= clon {
            zone += 1;
        }
        if lat >= clat {
            zone += 2;
        }
        zone.min(self.regimes.len() - 1)
    }

    pub fn planted(&self, zone: usize, hour: u8) -> [f64; 3] {
        self.regimes[zone.min(self.regimes.len() - 1)][hour as usize % 24]
    }

    pub fn bbox(&self) -> BoundingBox {
        let pad = self.spacing_m * 2.0;
        let sw = destination(
            destination((self.origin_lat, self.origin_lon), 180.0, pad),
            270.0,
            pad,
        );
        let ne = destination(
            destination(
                (self.origin_lat, self.origin_lon),
                0.0,
                self.spacing_m * (self.grid_rows - 1) as f64 + pad,
            ),
            90.0,
            self.spacing_m * (self.grid_cols - 1) as f64 + pad,
        );
        BoundingBox {
            lat_min: sw.0,
            lat_max: ne.0,
            lon_min: sw.1,
            lon_max: ne.1,
        }
    }
}

/// Everything the generator produced, including the replayed final
/// topology that statistics are keyed to.
#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub spec: SyntheticCitySpec,
    pub seed: u64,
    pub bbox: BoundingBox,
    pub raw_graph: RoadGraph,
    /// Raw detector records; count series are 96- or 288-slot.
    pub detectors: Vec<DetectorDay>,
    pub daily_grids: Vec<DailyGrid>,
    pub attachment: AttachmentResult,
    pub clean_report: CleanReport,
    /// Graph after attachment and cleaning.
    pub final_graph: RoadGraph,
    pub free_flow: Vec<FreeFlow>,
    pub stats_by_day: BTreeMap<String, Vec<SegmentSpeedStats>>,
}

fn node_position(spec: &SyntheticCitySpec, row: u64, col: u64) -> (f64, f64) {
    destination(
        destination(
            (spec.origin_lat, spec.origin_lon),
            0.0,
            spec.spacing_m * row as f64,
        ),
        90.0,
        spec.spacing_m * col as f64,
    )
}

fn class_for(importance: u8) -> &'static str {
    match importance {
        0 => "residential",
        1 => "tertiary",
        2 => "secondary",
        _ => "primary",
    }
}

fn make_edge(g: &RoadGraph, u: NodeId, v: NodeId, importance: u8) -> Edge {
    let a = g.node(u).unwrap().coord();
    let b = g.node(v).unwrap().coord();
    let maxspeed = match importance {
        0 => 30.0,
        1 => 50.0,
        2 => 60.0,
        _ => 80.0,
    };
    Edge {
        u,
        v,
        length_m: crate::geo::haversine_m(a, b).max(1.0),
        importance,
        maxspeed_kph: maxspeed,
        highway_class: class_for(importance).into(),
        access: None,
        oneway: false,
        geometry: vec![a, b],
    }
}

fn build_grid(spec: &SyntheticCitySpec) -> Result<RoadGraph> {
    let mut g = RoadGraph::new();
    for r in 0..spec.grid_rows {
        for c in 0..spec.grid_cols {
            let p = node_position(spec, r, c);
            g.add_node(Node::new(NodeId(r * spec.grid_cols + c), p.0, p.1))?;
        }
    }
    for r in 0..spec.grid_rows {
        for c in 0..spec.grid_cols {
            let id = NodeId(r * spec.grid_cols + c);
            let importance = ((r + c) % 4) as u8;
            if c + 1 < spec.grid_cols {
                let right = NodeId(r * spec.grid_cols + c + 1);
                g.add_edge(make_edge(&g, id, right, importance))?;
                g.add_edge(make_edge(&g, right, id, importance))?;
            }
            if r + 1 < spec.grid_rows {
                let down = NodeId((r + 1) * spec.grid_cols + c);
                g.add_edge(make_edge(&g, id, down, importance))?;
                g.add_edge(make_edge(&g, down, id, importance))?;
            }
        }
    }
    Ok(g)
}

fn add_mess(spec: &SyntheticCitySpec, g: &mut RoadGraph) -> Result<()> {
    let next = g.max_node_id().unwrap().0 + 1;
    let origin = (spec.origin_lat, spec.origin_lon);

    // quiet residential appendage hanging off the south-west corner
    let p1 = destination(origin, 225.0, spec.spacing_m);
    let p2 = destination(origin, 225.0, spec.spacing_m * 2.0);
    g.add_node(Node::new(NodeId(next), p1.0, p1.1))?;
    g.add_node(Node::new(NodeId(next + 1), p2.0, p2.1))?;
    for (u, v) in [
        (NodeId(0), NodeId(next)),
        (NodeId(next), NodeId(0)),
        (NodeId(next), NodeId(next + 1)),
        (NodeId(next + 1), NodeId(next)),
    ] {
        let mut e = make_edge(g, u, v, 0);
        e.maxspeed_kph = 30.0;
        g.add_edge(e)?;
    }

    // restricted-access edge duplicating a grid connection
    let mut e = make_edge(g, NodeId(0), NodeId(1), 2);
    e.access = Some("private".into());
    g.add_edge(e)?;

    // short self-loop on node 1
    let c1 = g.node(NodeId(1)).unwrap().coord();
    let bump = destination(c1, 0.0, 30.0);
    g.add_edge(Edge {
        u: NodeId(1),
        v: NodeId(1),
        length_m: 120.0,
        importance: 1,
        maxspeed_kph: 30.0,
        highway_class: "residential".into(),
        access: None,
        oneway: true,
        geometry: vec![c1, bump, c1],
    })?;

    // detached two-node component far away
    let f1 = destination(origin, 180.0, spec.spacing_m * 20.0);
    let f2 = destination(f1, 90.0, spec.spacing_m);
    g.add_node(Node::new(NodeId(next + 2), f1.0, f1.1))?;
    g.add_node(Node::new(NodeId(next + 3), f2.0, f2.1))?;
    g.add_edge(make_edge(g, NodeId(next + 2), NodeId(next + 3), 1))?;
    g.add_edge(make_edge(g, NodeId(next + 3), NodeId(next + 2), 1))?;

    // circle-ramp bypass of the 0 -> 1 connection
    let c0 = g.node(NodeId(0)).unwrap().coord();
    let ramp = destination(destination(c0, 90.0, spec.spacing_m / 2.0), 0.0, 60.0);
    g.add_node(Node::new(NodeId(next + 4), ramp.0, ramp.1))?;
    g.add_edge(make_edge(g, NodeId(0), NodeId(next + 4), 1))?;
    g.add_edge(make_edge(g, NodeId(next + 4), NodeId(1), 1))?;

    // parallel duplicate of the 1 -> 2 connection (if present)
    if g.has_edge(NodeId(1), NodeId(2)) {
        let dup = g.edges_between(NodeId(1), NodeId(2))[0].clone();
        let longer = Edge {
            length_m: dup.length_m * 1.5,
            ..dup
        };
        g.add_edge(longer)?;
    }
    Ok(())
}

fn place_detectors(
    spec: &SyntheticCitySpec,
    g: &RoadGraph,
    rng: &mut ChaCha8Rng,
) -> Vec<DetectorDay> {
    let mut locations: Vec<(String, f64, f64)> = Vec::new();
    let mut det_idx = 0usize;
    for node in g.nodes() {
        if !rng.gen_bool(spec.detector_density) {
            continue;
        }
        let jitter = destination(node.coord(), rng.gen_range(0.0..360.0), rng.gen_range(0.0..25.0));
        locations.push((format!("det{:04}", det_idx), jitter.0, jitter.1));
        det_idx += 1;
    }
    if spec.messy && g.node_count() >= 4 {
        // mid-edge detector forcing a split
        if let Some(edge) = g.edges().find(|e| e.u < e.v && !g.is_structural(e.u)) {
            let mid = crate::geo::point_at_fraction(&edge.geometry, 0.43).0;
            let off = destination(mid, 10.0, 8.0);
            locations.push((format!("det{det_idx:04}"), off.0, off.1));
            det_idx += 1;
        }
        // detector too far from everything: discarded
        let lost = destination((spec.origin_lat, spec.origin_lon), 200.0, spec.spacing_m * 8.0);
        locations.push((format!("det{det_idx:04}"), lost.0, lost.1));
        det_idx += 1;
        // one multi-location detector (value split across two nodes)
        let a = g.node(NodeId(0)).unwrap().coord();
        let b = g
            .node(NodeId(spec.grid_cols + 1))
            .map(|n| n.coord())
            .unwrap_or(a);
        let id = format!("det{det_idx:04}");
        locations.push((id.clone(), a.0, a.1));
        locations.push((id, b.0, b.1));
    }

    let mut out = Vec::new();
    for day in &spec.days {
        for (id, lat, lon) in &locations {
            // London-style raw 5-minute series for even detectors,
            // pre-binned 15-minute series for the rest
            let raw = id.as_bytes().last().map(|b| b % 2 == 0).unwrap_or(false);
            let slots = if raw { RAW_WINDOWS_PER_DAY } else { BINS_PER_DAY };
            let counts: Vec<Option<f64>> = (0..slots)
                .map(|_| {
                    if rng.gen_bool(0.15) {
                        None
                    } else {
                        Some(rng.gen_range(0.0..40.0f64).floor())
                    }
                })
                .collect();
            let mut det = DetectorDay {
                detector_id: id.clone(),
                lat: *lat,
                lon: *lon,
                heading: None,
                day: day.clone(),
                counts,
            };
            // rows of one detector share the series per day
            if let Some(prev) = out
                .iter()
                .rev()
                .find(|d: &&DetectorDay| d.detector_id == det.detector_id && d.day == det.day)
            {
                det.counts = prev.counts.clone();
            }
            out.push(det);
        }
    }
    out
}

fn rasterize_graph_volumes(
    spec: &SyntheticCitySpec,
    g: &RoadGraph,
    bbox: &BoundingBox,
    rng: &mut ChaCha8Rng,
) -> Vec<DailyGrid> {
    // cells touched by core (non-residential-appendage) edges
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for edge in g.edges() {
        for f in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let p = crate::geo::point_at_fraction(&edge.geometry, f).0;
            if let Some(cell) = bbox.cell(p.0, p.1) {
                cells.push(cell);
            }
        }
    }
    cells.sort_unstable();
    cells.dedup();

    let mut grids = Vec::with_capacity(spec.heatmap_days);
    for d in 0..spec.heatmap_days {
        let mut day_cells = Vec::with_capacity(cells.len() * 4);
        for (row, col) in &cells {
            for heading in 0..4usize {
                let volume = 12.0 + (d % 7) as f64 + rng.gen_range(0.0..8.0f64).floor();
                day_cells.push((*row, *col, heading, volume));
            }
        }
        grids.push(DailyGrid {
            day: format!("2021-05-{:02}", d % 28 + 1),
            cells: day_cells,
        });
    }
    grids
}

fn draw_class(probs: &[f64; 3], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.gen();
    if x < probs[0] {
        0
    } else if x < probs[0] + probs[1] {
        1
    } else {
        2
    }
}

fn generate_stats(
    spec: &SyntheticCitySpec,
    final_graph: &RoadGraph,
    free_flow: &BTreeMap<(NodeId, NodeId), f64>,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<String, Vec<SegmentSpeedStats>> {
    let classified_per_edge = (spec.coverage_target * BINS_PER_DAY as f64).round() as usize;
    let mut by_day: BTreeMap<String, Vec<SegmentSpeedStats>> = BTreeMap::new();
    for day in &spec.days {
        let mut rows = Vec::new();
        for key in final_graph.edge_keys() {
            let edge = &final_graph.edges_between(key.0, key.1)[0];
            let zone = spec.zone_of(edge.geometry[0].0, edge.geometry[0].1);
            let ff = free_flow.get(&key).copied().unwrap_or(edge.maxspeed_kph);

            let mut bins: Vec<u8> = (0..BINS_PER_DAY as u8).collect();
            bins.shuffle(rng);
            let (classified, rest) = bins.split_at(classified_per_edge.min(bins.len()));
            for &t in classified {
                let probs = spec.planted(zone, t / 4);
                let class = draw_class(&probs, rng);
                let factor = match class {
                    0 => rng.gen_range(0.85..1.1),
                    1 => rng.gen_range(0.45..0.75),
                    _ => rng.gen_range(0.05..0.35),
                };
                let median = factor * ff;
                rows.push(SegmentSpeedStats {
                    u: key.0,
                    v: key.1,
                    t,
                    median_speed_kph: median,
                    volume: rng.gen_range(5..=20),
                    raw_median_speed: (median.round() as u32).clamp(1, 254),
                });
            }
            // occasional corrupted rows on unclassified bins
            if spec.messy && !rest.is_empty() && rng.gen_bool(0.1) {
                let t = rest[0];
                rows.push(SegmentSpeedStats {
                    u: key.0,
                    v: key.1,
                    t,
                    median_speed_kph: rng.gen_range(1.0..ff.max(2.0)),
                    volume: rng.gen_range(0..3),
                    raw_median_speed: if rng.gen_bool(0.5) { 0 } else { 255 },
                });
            }
        }
        rows.sort_by_key(|s| (s.u, s.v, s.t));
        by_day.insert(day.clone(), rows);
    }
    by_day
}

/// Generates the full synthetic input set for one city. The attachment
/// and cleaning stages are replayed internally (with the same seeds the
/// pipeline derives) so that speed statistics and free-flow speeds are
/// keyed to the final topology.
pub fn generate_synthetic_city(spec: &SyntheticCitySpec, seed: u64) -> Result<SyntheticCity> {
    spec.validate()?;
    let bbox = spec.bbox();

    let mut structure_rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "synth-structure"));
    let mut raw_graph = build_grid(spec)?;
    if spec.messy {
        add_mess(spec, &mut raw_graph)?;
    }
    let detectors = place_detectors(spec, &raw_graph, &mut structure_rng);

    let mut heat_rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "synth-heatmap"));
    let daily_grids = rasterize_graph_volumes(spec, &raw_graph, &bbox, &mut heat_rng);

    // replay attach + clean exactly as the pipeline will
    let normalized: Vec<DetectorDay> = detectors
        .iter()
        .map(normalize_day)
        .collect::<Result<_>>()?;
    let attachment = attach_detectors(raw_graph.clone(), &normalized, &AttachConfig::default())?;
    let (heatmap, _) = build_heatmap(bbox, &daily_grids, SAMPLE_DAYS, stage_seed(seed, "heatmap"))?;
    let (final_graph, clean_report) =
        clean_pipeline(attachment.graph.clone(), &heatmap, &CleanConfig::default())?;

    // free flow for most final edges; a few fall back to maxspeed
    let mut free_flow_map: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    let mut free_flow = Vec::new();
    for key in final_graph.edge_keys() {
        if spec.messy && (key.0 .0 + key.1 .0) % 17 == 0 {
            continue;
        }
        let edge = &final_graph.edges_between(key.0, key.1)[0];
        let ff = edge.maxspeed_kph * 0.85;
        free_flow_map.insert(key, ff);
        free_flow.push(FreeFlow {
            u: key.0,
            v: key.1,
            free_flow_kph: ff,
        });
    }

    let mut stats_rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, "synth-stats"));
    let stats_by_day = generate_stats(spec, &final_graph, &free_flow_map, &mut stats_rng);

    Ok(SyntheticCity {
        spec: spec.clone(),
        seed,
        bbox,
        raw_graph,
        detectors,
        daily_grids,
        attachment,
        clean_report,
        final_graph,
        free_flow,
        stats_by_day,
    })
}
