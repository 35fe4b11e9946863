//! Scoring: weighted masked cross-entropy over congestion classes with
//! macro-averaged class weights, the ETA L1 score, city averaging, and
//! loss decompositions by ground-truth class and by label coverage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CongestionClass, CongestionLabel, EdgeKey, EtaLabel, EtaPrediction};

/// Number of classified (non-masked) classes.
pub const NUM_CLASSES: usize = 3;

/// Macro-averaged class weights for classes green/yellow/red, computed on
/// training-label counts: w_c = total / (3 * count_c).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: [f64; NUM_CLASSES],
    pub counts: [u64; NUM_CLASSES],
    pub total: u64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights {
            w: [1.0; NUM_CLASSES],
            counts: [1; NUM_CLASSES],
            total: 3,
        }
    }

    pub fn weight_of(&self, cc: CongestionClass) -> Option<f64> {
        cc.class_index().map(|i| self.w[i])
    }
}

/// Computes macro-averaged class weights from training labels; masked
/// labels are ignored. Errors when a class never occurs.
pub fn compute_class_weights(
    labels: impl IntoIterator<Item = CongestionClass>,
) -> Result<ClassWeights> {
    let mut counts = [0u64; NUM_CLASSES];
    for cc in labels {
        if let Some(i) = cc.class_index() {
            counts[i] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if let Some(missing) = counts.iter().position(|c| *c == 0) {
        return Err(Error::invalid(format!(
            "class {} has no training labels; weights are undefined",
            missing + 1
        )));
    }
    let mut w = [0.0; NUM_CLASSES];
    for (i, count) in counts.iter().enumerate() {
        w[i] = total as f64 / (NUM_CLASSES as f64 * *count as f64);
    }
    Ok(ClassWeights { w, counts, total })
}

/// Result of the weighted masked cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct CeResult {
    /// (1/k) * sum of per-sample losses.
    pub loss: f64,
    /// Sum of class weights over non-masked samples.
    pub k: f64,
    /// Per-sample weighted losses; 0 for masked samples.
    pub per_sample: Vec<f64>,
}

fn log_softmax_at(logits: &[f64; NUM_CLASSES], class_index: usize) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let lse = max
        + logits
            .iter()
            .map(|l| (l - max).exp())
            .sum::<f64>()
            .ln();
    logits[class_index] - lse
}

/// Numerically stable softmax over the three class logits.
pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let exps = logits.map(|l| (l - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

/// Weighted masked cross-entropy: per sample n with target y_n,
/// l_n = -w_{y_n} * log softmax(logits_n)_{y_n} for y_n != 0, masked
/// samples contribute nothing; the total is normalized by
/// k = sum of w_{y_n} over non-masked samples.
pub fn weighted_masked_ce(
    logits: &[[f64; NUM_CLASSES]],
    targets: &[CongestionClass],
    weights: &ClassWeights,
) -> Result<CeResult> {
    if logits.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} logit rows vs {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(targets.len());
    let mut k = 0.0;
    let mut sum = 0.0;
    for (row, target) in logits.iter().zip(targets) {
        match target.class_index() {
            None => per_sample.push(0.0),
            Some(ci) => {
                if row.iter().any(|l| !l.is_finite()) {
                    return Err(Error::invalid(format!("non-finite logits {row:?}")));
                }
                let w = weights.w[ci];
                let l = -w * log_softmax_at(row, ci);
                k += w;
                sum += l;
                per_sample.push(l);
            }
        }
    }
    if k == 0.0 {
        return Err(Error::invalid("no classified samples (all targets masked)"));
    }
    Ok(CeResult {
        loss: sum / k,
        k,
        per_sample,
    })
}

/// Mean absolute error over all labeled (super-segment, bin) pairs; every
/// label must be predicted, there is no mask.
pub fn l1_eta(preds: &[EtaPrediction], labels: &[EtaLabel]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("no ETA labels to score"));
    }
    let mut map: BTreeMap<(u64, u8), f64> = BTreeMap::new();
    for p in preds {
        if map.insert((p.ssid, p.t), p.eta_s).is_some() {
            return Err(Error::invalid(format!(
                "duplicate ETA prediction for super-segment {} at t={}",
                p.ssid, p.t
            )));
        }
    }
    let mut sum = 0.0;
    for label in labels {
        let pred = map.get(&(label.ssid, label.t)).ok_or_else(|| {
            Error::invalid(format!(
                "missing ETA prediction for super-segment {} at t={}",
                label.ssid, label.t
            ))
        })?;
        sum += (pred - label.eta_s).abs();
    }
    Ok(sum / labels.len() as f64)
}

/// Arithmetic mean of per-city losses; exactly 3 cities unless
/// `allow_any_count` is set (synthetic runs).
pub fn overall_score(city_losses: &[f64], allow_any_count: bool) -> Result<f64> {
    if city_losses.is_empty() {
        return Err(Error::invalid("no city losses"));
    }
    if city_losses.len() != 3 && !allow_any_count {
        return Err(Error::invalid(format!(
            "expected 3 city losses, got {}",
            city_losses.len()
        )));
    }
    Ok(city_losses.iter().sum::<f64>() / city_losses.len() as f64)
}

/// Per-ground-truth-class loss decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassDecomposition {
    /// summedloss(c) = (1/k) * sum of l_n over samples with y_n = c.
    pub summed: [f64; NUM_CLASSES],
    /// meanloss(c) = (1/N_c) * sum of l_n over samples with y_n = c;
    /// missing when the class is absent from the test set.
    pub mean: [Option<f64>; NUM_CLASSES],
    /// Test-set class counts N_c.
    pub n_c: [u64; NUM_CLASSES],
}

/// Splits per-sample losses by ground-truth class. The summed parts add
/// up to the total loss.
pub fn loss_by_ground_truth(
    per_sample: &[f64],
    targets: &[CongestionClass],
    k: f64,
) -> ClassDecomposition {
    let mut sums = [0.0; NUM_CLASSES];
    let mut n_c = [0u64; NUM_CLASSES];
    for (l, target) in per_sample.iter().zip(targets) {
        if let Some(ci) = target.class_index() {
            sums[ci] += l;
            n_c[ci] += 1;
        }
    }
    let mut summed = [0.0; NUM_CLASSES];
    let mut mean = [None; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        summed[c] = sums[c] / k;
        if n_c[c] > 0 {
            mean[c] = Some(sums[c] / n_c[c] as f64);
        }
    }
    ClassDecomposition { summed, mean, n_c }
}

/// One coverage histogram bin [lo, hi).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageBin {
    pub lo: f64,
    pub hi: f64,
    pub samples: u64,
    pub mean_loss: Option<f64>,
    /// (1/k) * sum of per-sample losses falling in this bin.
    pub summed_loss: f64,
    /// Running total of summed_loss up to and including this bin.
    pub cumulative_summed: f64,
}

/// Default coverage bin width (5%).
pub const COVERAGE_BIN_WIDTH: f64 = 0.05;

/// Bins per-sample losses by the coverage of the sample's edge.
/// Right-open bins of `bin_width`; coverage 1.0 lands in the last bin.
/// Samples whose edge has no coverage entry count as coverage 0.
pub fn loss_by_coverage(
    per_sample: &[f64],
    sample_edges: &[EdgeKey],
    coverage: &BTreeMap<EdgeKey, f64>,
    k: f64,
    bin_width: f64,
) -> Result<Vec<CoverageBin>> {
    if per_sample.len() != sample_edges.len() {
        return Err(Error::invalid("per-sample losses and edges differ in length"));
    }
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::invalid(format!("bad coverage bin width {bin_width}")));
    }
    let n_bins = (1.0 / bin_width).ceil() as usize;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0u64; n_bins];
    for (l, key) in per_sample.iter().zip(sample_edges) {
        let c = coverage.get(key).copied().unwrap_or(0.0).clamp(0.0, 1.0);
        let bin = ((c / bin_width) as usize).min(n_bins - 1);
        sums[bin] += l;
        counts[bin] += 1;
    }
    let mut out = Vec::with_capacity(n_bins);
    let mut cumulative = 0.0;
    for b in 0..n_bins {
        let summed = sums[b] / k;
        cumulative += summed;
        out.push(CoverageBin {
            lo: b as f64 * bin_width,
            hi: ((b + 1) as f64 * bin_width).min(1.0),
            samples: counts[b],
            mean_loss: if counts[b] > 0 {
                Some(sums[b] / counts[b] as f64)
            } else {
                None
            },
            summed_loss: summed,
            cumulative_summed: cumulative,
        });
    }
    Ok(out)
}

/// Per-edge fraction of bins carrying a classified (cc != 0) label, and
/// the city aggregate (mean over the given edge universe; edges without
/// labels count as zero coverage). `bins_per_edge` is 96 per labeled day.
pub fn coverage(
    labels: &[CongestionLabel],
    edges: impl IntoIterator<Item = EdgeKey>,
    bins_per_edge: usize,
) -> (BTreeMap<EdgeKey, f64>, f64) {
    let mut classified: BTreeMap<EdgeKey, u64> = BTreeMap::new();
    for label in labels {
        if !label.cc.is_masked() {
            *classified.entry((label.u, label.v)).or_insert(0) += 1;
        }
    }
    let mut per_edge = BTreeMap::new();
    let mut sum = 0.0;
    let mut n = 0usize;
    for key in edges {
        let c = classified.get(&key).copied().unwrap_or(0) as f64 / bins_per_edge as f64;
        per_edge.insert(key, c);
        sum += c;
        n += 1;
    }
    let aggregate = if n > 0 { sum / n as f64 } else { 0.0 };
    (per_edge, aggregate)
}

/// Full score report for congestion-class predictions on one city.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CityCcScore {
    pub city: String,
    pub loss: f64,
    pub k: f64,
    /// All scored samples, masked included.
    pub samples: usize,
    pub classified: usize,
    pub class_counts: [u64; NUM_CLASSES],
    pub per_class_summed: [f64; NUM_CLASSES],
    pub per_class_mean: [Option<f64>; NUM_CLASSES],
    pub coverage_mean: f64,
    pub coverage_bins: Vec<CoverageBin>,
}
