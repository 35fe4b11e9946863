//! City-wide probe-volume heatmap: a 495 x 436 grid with 4 heading
//! quadrants per cell, built as the cellwise mean of 30 randomly sampled
//! daily grids. Drives low-volume edge removal and key-intersection
//! scoring.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo;
use crate::model::Edge;

pub const GRID_ROWS: usize = 495;
pub const GRID_COLS: usize = 436;
pub const GRID_HEADINGS: usize = 4;

/// Days averaged into the heatmap when more are available.
pub const SAMPLE_DAYS: usize = 30;

/// Polyline sampling step when rasterizing an edge onto cells, meters.
const RASTER_STEP_M: f64 = 10.0;

/// Heading quadrants indexed from movement bearing: NE, SE, SW, NW.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadingQuadrant {
    NorthEast = 0,
    SouthEast = 1,
    SouthWest = 2,
    NorthWest = 3,
}

impl HeadingQuadrant {
    pub fn from_bearing(bearing_deg: f64) -> Self {
        let b = bearing_deg.rem_euclid(360.0);
        if b < 90.0 {
            HeadingQuadrant::NorthEast
        } else if b < 180.0 {
            HeadingQuadrant::SouthEast
        } else if b < 270.0 {
            HeadingQuadrant::SouthWest
        } else {
            HeadingQuadrant::NorthWest
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            HeadingQuadrant::NorthEast => HeadingQuadrant::SouthWest,
            HeadingQuadrant::SouthEast => HeadingQuadrant::NorthWest,
            HeadingQuadrant::SouthWest => HeadingQuadrant::NorthEast,
            HeadingQuadrant::NorthWest => HeadingQuadrant::SouthEast,
        }
    }
}

/// Georeference of the grid: row 0 is the northern edge, column 0 the
/// western edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    /// Grid cell holding (lat, lon); None outside the extent.
    pub fn cell(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        if !self.contains(lat, lon) {
            return None;
        }
        let row_f = (self.lat_max - lat) / (self.lat_max - self.lat_min) * GRID_ROWS as f64;
        let col_f = (lon - self.lon_min) / (self.lon_max - self.lon_min) * GRID_COLS as f64;
        let row = (row_f as usize).min(GRID_ROWS - 1);
        let col = (col_f as usize).min(GRID_COLS - 1);
        Some((row, col))
    }
}

/// Dense 495 x 436 x 4 volume grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeatmap {
    pub bbox: BoundingBox,
    values: Vec<f64>,
}

impl VolumeHeatmap {
    pub fn zeros(bbox: BoundingBox) -> Self {
        VolumeHeatmap {
            bbox,
            values: vec![0.0; GRID_ROWS * GRID_COLS * GRID_HEADINGS],
        }
    }

    fn index(row: usize, col: usize, heading: usize) -> usize {
        (row * GRID_COLS + col) * GRID_HEADINGS + heading
    }

    pub fn get(&self, row: usize, col: usize, heading: HeadingQuadrant) -> f64 {
        self.values[Self::index(row, col, heading as usize)]
    }

    pub fn set(&mut self, row: usize, col: usize, heading: HeadingQuadrant, value: f64) {
        assert!(value >= 0.0, "heatmap volumes are non-negative");
        self.values[Self::index(row, col, heading as usize)] = value;
    }

    pub fn add(&mut self, row: usize, col: usize, heading: HeadingQuadrant, value: f64) {
        self.values[Self::index(row, col, heading as usize)] += value;
    }

    /// Highest volume among the cells the edge geometry intersects,
    /// sampled every 10 m along the polyline. Considers the travel
    /// heading quadrant, and additionally the opposite quadrant when the
    /// edge is not one-way. Cells outside the extent count as volume 0;
    /// the returned flag reports whether any sample fell outside.
    pub fn max_edge_volume(&self, edge: &Edge) -> (f64, bool) {
        let mut max = 0.0f64;
        let mut outside = false;
        for (point, bearing) in sample_polyline(&edge.geometry) {
            match self.bbox.cell(point.0, point.1) {
                Some((row, col)) => {
                    let q = HeadingQuadrant::from_bearing(bearing);
                    max = max.max(self.get(row, col, q));
                    if !edge.oneway {
                        max = max.max(self.get(row, col, q.opposite()));
                    }
                }
                None => outside = true,
            }
        }
        (max, outside)
    }
}

/// Sample points along a polyline every 10 m (plus each vertex), paired
/// with the local movement bearing.
fn sample_polyline(line: &[(f64, f64)]) -> Vec<((f64, f64), f64)> {
    let mut out = Vec::new();
    for w in line.windows(2) {
        let seg_len = geo::haversine_m(w[0], w[1]);
        if seg_len == 0.0 {
            continue;
        }
        let bearing = geo::bearing_deg(w[0], w[1]);
        let steps = (seg_len / RASTER_STEP_M).ceil() as usize;
        for i in 0..=steps {
            let t = (i as f64 / steps as f64).min(1.0);
            let p = (
                w[0].0 + t * (w[1].0 - w[0].0),
                w[0].1 + t * (w[1].1 - w[0].1),
            );
            out.push((p, bearing));
        }
    }
    if out.is_empty() {
        if let Some(p) = line.first() {
            out.push((*p, 0.0));
        }
    }
    out
}

/// Sparse cell record: row, col, heading index, value.
type CellRecord = (usize, usize, usize, f64);

#[derive(Debug, Serialize, Deserialize)]
struct HeatmapFile {
    bbox: BoundingBox,
    /// Prebuilt heatmap cells (row, col, heading, value); zeros omitted.
    #[serde(default)]
    cells: Option<Vec<CellRecord>>,
    /// Per-day grids to be sampled and averaged at load time.
    #[serde(default)]
    daily: Option<Vec<DailyGrid>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DailyGrid {
    pub day: String,
    pub cells: Vec<CellRecord>,
}

fn cells_to_heatmap(bbox: BoundingBox, cells: &[CellRecord]) -> Result<VolumeHeatmap> {
    let mut hm = VolumeHeatmap::zeros(bbox);
    for &(row, col, heading, value) in cells {
        if row >= GRID_ROWS || col >= GRID_COLS || heading >= GRID_HEADINGS {
            return Err(Error::invalid(format!(
                "heatmap cell ({row}, {col}, {heading}) out of {GRID_ROWS}x{GRID_COLS}x{GRID_HEADINGS}"
            )));
        }
        if value < 0.0 {
            return Err(Error::invalid(format!(
                "heatmap cell ({row}, {col}, {heading}) has negative volume {value}"
            )));
        }
        hm.set(row, col, HEADINGS[heading], value);
    }
    Ok(hm)
}

const HEADINGS: [HeadingQuadrant; 4] = [
    HeadingQuadrant::NorthEast,
    HeadingQuadrant::SouthEast,
    HeadingQuadrant::SouthWest,
    HeadingQuadrant::NorthWest,
];

/// Cellwise mean over up to 30 seeded-sampled days. Returns the heatmap
/// and the indices of the selected days (sorted).
pub fn build_heatmap(
    bbox: BoundingBox,
    daily: &[DailyGrid],
    sample_days: usize,
    seed: u64,
) -> Result<(VolumeHeatmap, Vec<usize>)> {
    if daily.is_empty() {
        return Err(Error::invalid("heatmap requires at least one daily grid"));
    }
    let mut indices: Vec<usize> = (0..daily.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(sample_days.min(daily.len()));
    indices.sort_unstable();

    let mut sums: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for &i in &indices {
        for &(row, col, heading, value) in &daily[i].cells {
            if row >= GRID_ROWS || col >= GRID_COLS || heading >= GRID_HEADINGS {
                return Err(Error::invalid(format!(
                    "daily grid {}: cell ({row}, {col}, {heading}) out of range",
                    daily[i].day
                )));
            }
            *sums.entry((row, col, heading)).or_insert(0.0) += value;
        }
    }
    let n = indices.len() as f64;
    let mut hm = VolumeHeatmap::zeros(bbox);
    for ((row, col, heading), sum) in sums {
        hm.set(row, col, HEADINGS[heading], sum / n);
    }
    Ok((hm, indices))
}

/// Loads a heatmap file; a file carrying per-day grids is averaged over a
/// seeded 30-day sample first.
pub fn load_heatmap(path: &Path, seed: u64) -> Result<VolumeHeatmap> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: HeatmapFile =
        serde_json::from_str(&raw).map_err(|e| Error::record(path, 1, e.to_string()))?;
    match (file.cells, file.daily) {
        (Some(cells), _) => cells_to_heatmap(file.bbox, &cells),
        (None, Some(daily)) => build_heatmap(file.bbox, &daily, SAMPLE_DAYS, seed).map(|(hm, _)| hm),
        (None, None) => Err(Error::invalid(format!(
            "{}: heatmap file needs either \"cells\" or \"daily\"",
            path.display()
        ))),
    }
}

/// Writes a heatmap as a sparse prebuilt file.
pub fn save_heatmap(path: &Path, hm: &VolumeHeatmap) -> Result<()> {
    let mut cells = Vec::new();
    for row in 0..GRID_ROWS {
        for col in 0..GRID_COLS {
            for (h, quad) in HEADINGS.iter().enumerate() {
                let v = hm.get(row, col, *quad);
                if v != 0.0 {
                    cells.push((row, col, h, v));
                }
            }
        }
    }
    let file = HeatmapFile {
        bbox: hm.bbox,
        cells: Some(cells),
        daily: None,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json =
        serde_json::to_string(&file).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::destination;

    fn test_bbox() -> BoundingBox {
        BoundingBox {
            lat_min: 47.9,
            lat_max: 48.1,
            lon_min: 15.9,
            lon_max: 16.1,
        }
    }

    #[test]
    fn single_day_heatmap_is_identity() {
        let daily = vec![DailyGrid {
            day: "2021-06-01".into(),
            cells: vec![(10, 20, 0, 7.0)],
        }];
        let (hm, sel) = build_heatmap(test_bbox(), &daily, 30, 1).unwrap();
        assert_eq!(sel, vec![0]);
        assert_eq!(hm.get(10, 20, HeadingQuadrant::NorthEast), 7.0);
    }

    #[test]
    fn two_day_mean() {
        let daily = vec![
            DailyGrid {
                day: "2021-06-01".into(),
                cells: vec![(3, 4, 1, 2.0)],
            },
            DailyGrid {
                day: "2021-06-02".into(),
                cells: vec![(3, 4, 1, 4.0)],
            },
        ];
        let (hm, _) = build_heatmap(test_bbox(), &daily, 30, 9).unwrap();
        assert_eq!(hm.get(3, 4, HeadingQuadrant::SouthEast), 3.0);
    }

    #[test]
    fn seeded_sampling_is_deterministic_and_bounded() {
        let daily: Vec<DailyGrid> = (0..60)
            .map(|i| DailyGrid {
                day: format!("2021-06-{:02}", i % 30 + 1),
                cells: vec![(0, 0, 0, i as f64)],
            })
            .collect();
        let (hm_a, sel_a) = build_heatmap(test_bbox(), &daily, 30, 42).unwrap();
        let (hm_b, sel_b) = build_heatmap(test_bbox(), &daily, 30, 42).unwrap();
        assert_eq!(sel_a, sel_b);
        assert_eq!(hm_a, hm_b);
        assert_eq!(sel_a.len(), 30);
        assert!(sel_a.windows(2).all(|w| w[0] < w[1]), "distinct sorted days");
        // the mean must match a direct recomputation over the selection
        let expect: f64 = sel_a.iter().map(|&i| i as f64).sum::<f64>() / 30.0;
        assert!((hm_a.get(0, 0, HeadingQuadrant::NorthEast) - expect).abs() < 1e-12);
        let (_, sel_c) = build_heatmap(test_bbox(), &daily, 30, 43).unwrap();
        assert_ne!(sel_a, sel_c, "different seed picks different days");
    }

    #[test]
    fn empty_daily_input_is_an_error() {
        assert!(build_heatmap(test_bbox(), &[], 30, 1).is_err());
    }

    #[test]
    fn cell_georeference_row_zero_is_north() {
        let bbox = test_bbox();
        let (row, _) = bbox.cell(48.0999, 16.0).unwrap();
        assert_eq!(row, 0);
        let (row, _) = bbox.cell(47.9001, 16.0).unwrap();
        assert_eq!(row, GRID_ROWS - 1);
        assert!(bbox.cell(50.0, 16.0).is_none());
    }

    #[test]
    fn edge_volume_respects_heading_and_oneway() {
        let bbox = test_bbox();
        let mut hm = VolumeHeatmap::zeros(bbox);
        let a = (48.0, 16.0);
        let b = destination(a, 45.0, 30.0);
        let (row, col) = bbox.cell(a.0, a.1).unwrap();
        hm.set(row, col, HeadingQuadrant::SouthWest, 25.0);

        let mut edge = Edge {
            u: crate::model::NodeId(0),
            v: crate::model::NodeId(1),
            length_m: 30.0,
            importance: 0,
            maxspeed_kph: 50.0,
            highway_class: "residential".into(),
            access: None,
            oneway: true,
            geometry: vec![a, b],
        };
        // a north-east edge reads the NE quadrant only
        assert_eq!(hm.max_edge_volume(&edge).0, 0.0);
        // two-way edges read the opposite (SW) quadrant as well
        edge.oneway = false;
        assert_eq!(hm.max_edge_volume(&edge).0, 25.0);
    }

    #[test]
    fn heatmap_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heatmap.json");
        let mut hm = VolumeHeatmap::zeros(test_bbox());
        hm.set(1, 2, HeadingQuadrant::NorthWest, 11.5);
        save_heatmap(&path, &hm).unwrap();
        let loaded = load_heatmap(&path, 0).unwrap();
        assert_eq!(hm, loaded);
    }
}
