//! Road-graph data engineering and evaluation toolkit.
//!
//! Builds dynamic road-graph datasets from sparse stationary vehicle
//! detectors and per-segment speed statistics: detector attachment, graph
//! cleaning, super-segment sampling, congestion-class and ETA labeling,
//! and scoring with a weighted masked cross-entropy / L1 metric pair,
//! including loss decompositions and a historic-distribution baseline.

pub mod attach;
pub mod baseline;
pub mod clean;
pub mod error;
pub mod geo;
pub mod heatmap;
pub mod io;
pub mod label;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod supersegments;
pub mod synth;

pub use error::{Error, Result};
