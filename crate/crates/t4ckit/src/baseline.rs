//! Historic-distribution baseline and the re-weighted-probability
//! comparison against an hourly empirical ground-truth distribution,
//! plus label-distribution reports.
//!
//! The baseline keys the empirical class distribution by (edge, hour of
//! day) and falls back to city-hour and then city-global counts for
//! sparse edges.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{softmax, ClassWeights, NUM_CLASSES};
use crate::model::{CcPrediction, CongestionLabel, EdgeKey, BINS_PER_DAY};

pub const HOURS_PER_DAY: usize = 24;

/// Hour of day of a 15-minute bin.
pub fn hour_of_bin(t: u8) -> u8 {
    t / 4
}

/// Additive smoothing applied when turning counts into baseline logits.
pub const SMOOTHING_ALPHA: f64 = 1.0;

/// Empirical class counts per (edge, hour of day), with city-level
/// aggregates as fallbacks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoricDistribution {
    per_edge_hour: BTreeMap<(EdgeKey, u8), [u64; NUM_CLASSES]>,
    city_hour: [[u64; NUM_CLASSES]; HOURS_PER_DAY],
    city_global: [u64; NUM_CLASSES],
}

impl HistoricDistribution {
    /// Raw empirical probabilities and sample count at (edge, hour);
    /// None when the cell has no classified bins.
    pub fn empirical(&self, edge: EdgeKey, hour: u8) -> Option<([f64; NUM_CLASSES], u64)> {
        let counts = self.per_edge_hour.get(&(edge, hour))?;
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return None;
        }
        Some((counts.map(|c| c as f64 / n as f64), n))
    }

    pub fn cells(&self) -> usize {
        self.per_edge_hour.len()
    }
}

/// Fits hour-of-day class frequencies from classified labels (cc = 0 is
/// excluded). Day-of-week is deliberately not modeled; multiple days
/// accumulate into the same 24 hours.
pub fn fit_historic<'a>(labels: impl IntoIterator<Item = &'a CongestionLabel>) -> HistoricDistribution {
    let mut dist = HistoricDistribution::default();
    for label in labels {
        let Some(ci) = label.cc.class_index() else {
            continue;
        };
        let hour = hour_of_bin(label.t);
        dist.per_edge_hour
            .entry(((label.u, label.v), hour))
            .or_insert([0; NUM_CLASSES])[ci] += 1;
        dist.city_hour[hour as usize][ci] += 1;
        dist.city_global[ci] += 1;
    }
    dist
}

fn smoothed_logits(counts: &[u64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let n: u64 = counts.iter().sum();
    let denom = n as f64 + SMOOTHING_ALPHA * NUM_CLASSES as f64;
    counts.map(|c| ((c as f64 + SMOOTHING_ALPHA) / denom).ln())
}

/// Baseline logits for one (edge, bin): log of additively smoothed class
/// frequencies, falling back edge-hour -> city-hour -> city-global ->
/// uniform.
pub fn predict_historic(dist: &HistoricDistribution, edge: EdgeKey, t: u8) -> [f64; NUM_CLASSES] {
    let hour = hour_of_bin(t);
    if let Some(counts) = dist.per_edge_hour.get(&(edge, hour)) {
        if counts.iter().sum::<u64>() > 0 {
            return smoothed_logits(counts);
        }
    }
    let ch = &dist.city_hour[hour as usize];
    if ch.iter().sum::<u64>() > 0 {
        return smoothed_logits(ch);
    }
    smoothed_logits(&dist.city_global)
}

/// Probabilities recovered from logits by undoing the class weighting:
/// p_c proportional to exp(logit_c * w_c).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reweighted {
    pub probs: [f64; NUM_CLASSES],
    /// Normalization factor b with p_c = b * exp(logit_c * w_c).
    pub normalizer: f64,
}

/// Re-weights logits by the class weights and normalizes to a proper
/// distribution. Exponentiation is max-subtracted.
pub fn reweight_logits(logits: &[f64; NUM_CLASSES], weights: &ClassWeights) -> Result<Reweighted> {
    let z: [f64; NUM_CLASSES] = [
        logits[0] * weights.w[0],
        logits[1] * weights.w[1],
        logits[2] * weights.w[2],
    ];
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite re-weighted logits {z:?}")));
    }
    let max = z.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let exps = z.map(|v| (v - max).exp());
    let sum: f64 = exps.iter().sum();
    Ok(Reweighted {
        probs: exps.map(|e| e / sum),
        normalizer: (-max).exp() / sum,
    })
}

/// Pearson correlation; None when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// One (historic, predicted) probability pair for a class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonPair {
    pub u: u64,
    pub v: u64,
    pub t: u8,
    pub class: u8,
    pub historic_p: f64,
    pub predicted_p: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Comparison {
    pub pairs: Vec<ComparisonPair>,
    /// Per-class Pearson correlation; None marks zero variance.
    pub pearson: [Option<f64>; NUM_CLASSES],
    pub skipped_no_history: usize,
}

/// Pairs each prediction's re-weighted probabilities with the raw
/// empirical (edge, hour) distribution, for bins whose hour falls in
/// `hour_range`, and correlates them per class.
pub fn compare_to_historic(
    predictions: &[CcPrediction],
    dist: &HistoricDistribution,
    weights: &ClassWeights,
    hour_range: Range<u8>,
) -> Result<Comparison> {
    let mut out = Comparison::default();
    for pred in predictions {
        let hour = hour_of_bin(pred.t);
        if !hour_range.contains(&hour) {
            continue;
        }
        let Some((historic, _)) = dist.empirical((pred.u, pred.v), hour) else {
            out.skipped_no_history += 1;
            continue;
        };
        let rw = reweight_logits(&pred.logits, weights)?;
        for c in 0..NUM_CLASSES {
            out.pairs.push(ComparisonPair {
                u: pred.u.0,
                v: pred.v.0,
                t: pred.t,
                class: c as u8 + 1,
                historic_p: historic[c],
                predicted_p: rw.probs[c],
            });
        }
    }
    for c in 0..NUM_CLASSES {
        let xs: Vec<f64> = out
            .pairs
            .iter()
            .filter(|p| p.class == c as u8 + 1)
            .map(|p| p.historic_p)
            .collect();
        let ys: Vec<f64> = out
            .pairs
            .iter()
            .filter(|p| p.class == c as u8 + 1)
            .map(|p| p.predicted_p)
            .collect();
        out.pearson[c] = pearson(&xs, &ys);
    }
    Ok(out)
}

/// Label-distribution summary: class fractions over classified labels and
/// a per-edge coverage histogram.
#[derive(Debug, Clone, Serialize)]
pub struct DistributionReport {
    pub class_fractions: [f64; NUM_CLASSES],
    pub classified: u64,
    pub total_labels: u64,
    /// (bin lower bound, bin upper bound, number of edges).
    pub coverage_histogram: Vec<(f64, f64, u64)>,
}

/// Builds the label-distribution report. `bins_per_edge` is 96 per
/// labeled day; the histogram uses 5% coverage bins over the given edge
/// universe.
pub fn label_distribution_report(
    labels: &[CongestionLabel],
    edges: impl IntoIterator<Item = EdgeKey>,
    bins_per_edge: usize,
) -> DistributionReport {
    let mut counts = [0u64; NUM_CLASSES];
    for label in labels {
        if let Some(ci) = label.cc.class_index() {
            counts[ci] += 1;
        }
    }
    let classified: u64 = counts.iter().sum();
    let class_fractions = if classified > 0 {
        counts.map(|c| c as f64 / classified as f64)
    } else {
        [0.0; NUM_CLASSES]
    };

    let (per_edge, _) = crate::metrics::coverage(labels, edges, bins_per_edge.max(1));
    let n_bins = 20usize;
    let mut hist = vec![0u64; n_bins];
    for c in per_edge.values() {
        let bin = ((c / 0.05) as usize).min(n_bins - 1);
        hist[bin] += 1;
    }
    DistributionReport {
        class_fractions,
        classified,
        total_labels: labels.len() as u64,
        coverage_histogram: hist
            .into_iter()
            .enumerate()
            .map(|(i, n)| (i as f64 * 0.05, ((i + 1) as f64 * 0.05).min(1.0), n))
            .collect(),
    }
}

/// Baseline prediction rows for every (edge, bin) of one day.
pub fn predict_city(
    dist: &HistoricDistribution,
    edges: impl IntoIterator<Item = EdgeKey>,
) -> Vec<CcPrediction> {
    let mut out = Vec::new();
    for key in edges {
        for t in 0..BINS_PER_DAY as u8 {
            out.push(CcPrediction {
                u: key.0,
                v: key.1,
                t,
                logits: predict_historic(dist, key, t),
            });
        }
    }
    out
}
