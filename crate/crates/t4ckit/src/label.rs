//! Ground-truth derivation: congestion classes per (edge, bin) from speed
//! statistics and free-flow speeds, and ETAs per (super-segment, bin)
//! from a per-edge speed schedule with current -> free-flow -> maxspeed
//! defaulting.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    CongestionClass, CongestionLabel, EdgeKey, EtaLabel, FreeFlow, RoadGraph, SegmentSpeedStats,
    SuperSegment, BINS_PER_DAY,
};

/// Congestion factor below which an edge is red (with enough probes).
pub const RED_FACTOR: f64 = 0.4;
/// Congestion factor below which an edge is yellow (with enough probes).
pub const YELLOW_FACTOR: f64 = 0.8;
/// Probe volume required for a red classification.
pub const RED_MIN_VOLUME: u32 = 5;
/// Probe volume required for a yellow classification.
pub const YELLOW_MIN_VOLUME: u32 = 3;

/// Speeds are clipped below at this value before computing ETAs.
pub const SPEED_CLIP_KPH: f64 = 0.5;
/// Edge ETAs beyond this switch to the three-slot-mean formulation.
pub const LONG_ETA_S: f64 = 1800.0;

/// Classifies one (edge, bin) from its speed statistics. Encoded median
/// speeds of 0 or 255 signal corruption and stay unclassified; otherwise
/// the congestion factor (median / free flow) and probe volume decide.
pub fn extract_cc(stats: &SegmentSpeedStats, free_flow_kph: f64) -> Result<CongestionClass> {
    if stats.is_corrupt() {
        return Ok(CongestionClass::Unclassified);
    }
    if !(free_flow_kph > 0.0) {
        return Err(Error::invalid(format!(
            "edge ({}, {}): free flow speed must be > 0, got {free_flow_kph}",
            stats.u, stats.v
        )));
    }
    let factor = stats.median_speed_kph / free_flow_kph;
    let volume = stats.volume;
    if factor < RED_FACTOR && volume >= RED_MIN_VOLUME {
        Ok(CongestionClass::Red)
    } else if factor >= RED_FACTOR && factor < YELLOW_FACTOR && volume >= YELLOW_MIN_VOLUME {
        Ok(CongestionClass::Yellow)
    } else if factor >= YELLOW_FACTOR && volume > 0 {
        Ok(CongestionClass::Green)
    } else {
        Ok(CongestionClass::Unclassified)
    }
}

/// Where a scheduled speed came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedSource {
    Current,
    FreeFlow,
    Maxspeed,
}

/// One edge's resolved speeds for a day.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSlots {
    pub length_m: f64,
    pub speeds: [f64; BINS_PER_DAY],
    pub sources: [SpeedSource; BINS_PER_DAY],
}

/// Per-edge speed schedule for one day.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeSpeedSchedule {
    slots: BTreeMap<EdgeKey, EdgeSlots>,
    /// Stats rows that named edges outside the graph.
    pub skipped_stats: usize,
    /// Edges initialized from maxspeed because no free flow was known.
    pub maxspeed_only_edges: usize,
}

impl EdgeSpeedSchedule {
    pub fn get(&self, key: &EdgeKey) -> Option<&EdgeSlots> {
        self.slots.get(key)
    }

    pub fn insert(&mut self, key: EdgeKey, slots: EdgeSlots) {
        self.slots.insert(key, slots);
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Builds the day's schedule: every edge starts at its free-flow speed
/// (or maxspeed when free flow is unknown), then bins with current
/// median-speed statistics are overwritten.
pub fn build_edge_speed_schedule(
    graph: &RoadGraph,
    free_flow: &[FreeFlow],
    stats: &[SegmentSpeedStats],
) -> Result<EdgeSpeedSchedule> {
    let mut ff_map: BTreeMap<EdgeKey, f64> = BTreeMap::new();
    for ff in free_flow {
        ff.validate()?;
        if ff_map.insert((ff.u, ff.v), ff.free_flow_kph).is_some() {
            return Err(Error::invalid(format!(
                "duplicate free flow entry for edge ({}, {})",
                ff.u, ff.v
            )));
        }
    }

    let mut schedule = EdgeSpeedSchedule::default();
    for key in graph.edge_keys() {
        let edge = &graph.edges_between(key.0, key.1)[0];
        let (speed, source) = match ff_map.get(&key) {
            Some(ff) => (*ff, SpeedSource::FreeFlow),
            None => {
                schedule.maxspeed_only_edges += 1;
                (edge.maxspeed_kph, SpeedSource::Maxspeed)
            }
        };
        schedule.slots.insert(
            key,
            EdgeSlots {
                length_m: edge.length_m,
                speeds: [speed; BINS_PER_DAY],
                sources: [source; BINS_PER_DAY],
            },
        );
    }
    for stat in stats {
        stat.validate()?;
        match schedule.slots.get_mut(&(stat.u, stat.v)) {
            Some(slots) => {
                slots.speeds[stat.t as usize] = stat.median_speed_kph;
                slots.sources[stat.t as usize] = SpeedSource::Current;
            }
            None => schedule.skipped_stats += 1,
        }
    }
    Ok(schedule)
}

fn clip_speed(speed_kph: f64) -> f64 {
    if speed_kph < SPEED_CLIP_KPH {
        SPEED_CLIP_KPH
    } else {
        speed_kph
    }
}

/// Travel time of one edge at bin `t`: speed clipped below at 0.5 km/h;
/// if the resulting ETA exceeds 1800 s, it is recomputed as 1800 s plus
/// the time at the mean of the (clipped) speeds in slots t-1..=t+1,
/// truncated at the day boundary.
fn edge_eta_s(slots: &EdgeSlots, t: usize) -> f64 {
    let speed = clip_speed(slots.speeds[t]);
    let eta = slots.length_m * 3.6 / speed;
    if eta > LONG_ETA_S {
        let lo = t.saturating_sub(1);
        let hi = (t + 2).min(BINS_PER_DAY);
        let window = &slots.speeds[lo..hi];
        let mean: f64 = window.iter().map(|s| clip_speed(*s)).sum::<f64>() / window.len() as f64;
        LONG_ETA_S + slots.length_m * 3.6 / mean
    } else {
        eta
    }
}

/// Sums per-edge ETAs along a super-segment at bin `t`.
pub fn compute_eta(ss: &SuperSegment, schedule: &EdgeSpeedSchedule, t: usize) -> Result<f64> {
    if t >= BINS_PER_DAY {
        return Err(Error::invalid(format!("bin {t} out of 0..=95")));
    }
    let mut total = 0.0;
    for key in &ss.edges {
        let slots = schedule.get(key).ok_or_else(|| {
            Error::invalid(format!(
                "super-segment {}: edge ({}, {}) has no speed schedule",
                ss.ssid, key.0, key.1
            ))
        })?;
        total += edge_eta_s(slots, t);
    }
    Ok(total)
}

/// Label derivation summary for one day.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LabelSummary {
    pub cc_labels: usize,
    pub classified: usize,
    pub eta_labels: usize,
    pub stats_skipped_unknown_edge: usize,
    pub stats_without_free_flow: usize,
    pub maxspeed_only_edges: usize,
}

/// Derives one day's labels: a congestion-class label for every stats row
/// on a graph edge (unclassified when gated or corrupt), and an ETA label
/// for every (super-segment, bin) pair.
pub fn label_city(
    graph: &RoadGraph,
    supersegments: &[SuperSegment],
    stats: &[SegmentSpeedStats],
    free_flow: &[FreeFlow],
) -> Result<(Vec<CongestionLabel>, Vec<EtaLabel>, LabelSummary)> {
    let mut summary = LabelSummary::default();
    let ff_map: BTreeMap<EdgeKey, f64> = free_flow
        .iter()
        .map(|ff| ((ff.u, ff.v), ff.free_flow_kph))
        .collect();

    let mut seen: BTreeMap<(EdgeKey, u8), CongestionClass> = BTreeMap::new();
    for stat in stats {
        stat.validate()?;
        let key = (stat.u, stat.v);
        if !graph.has_edge(key.0, key.1) {
            summary.stats_skipped_unknown_edge += 1;
            continue;
        }
        let cc = match ff_map.get(&key) {
            Some(ff) => extract_cc(stat, *ff)?,
            None => {
                summary.stats_without_free_flow += 1;
                CongestionClass::Unclassified
            }
        };
        if seen.insert((key, stat.t), cc).is_some() {
            return Err(Error::invalid(format!(
                "duplicate speed stats for edge ({}, {}) at t={}",
                stat.u, stat.v, stat.t
            )));
        }
    }
    let cc_labels: Vec<CongestionLabel> = seen
        .into_iter()
        .map(|(((u, v), t), cc)| CongestionLabel { u, v, t, cc })
        .collect();
    summary.cc_labels = cc_labels.len();
    summary.classified = cc_labels.iter().filter(|l| !l.cc.is_masked()).count();

    let schedule = build_edge_speed_schedule(graph, free_flow, stats)?;
    summary.maxspeed_only_edges = schedule.maxspeed_only_edges;
    let mut eta_labels = Vec::with_capacity(supersegments.len() * BINS_PER_DAY);
    let mut sorted: Vec<&SuperSegment> = supersegments.iter().collect();
    sorted.sort_by_key(|ss| ss.ssid);
    for ss in sorted {
        ss.validate()?;
        for t in 0..BINS_PER_DAY {
            let eta_s = compute_eta(ss, &schedule, t)?;
            eta_labels.push(EtaLabel {
                ssid: ss.ssid,
                t: t as u8,
                eta_s,
            });
        }
    }
    summary.eta_labels = eta_labels.len();
    Ok((cc_labels, eta_labels, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FreeFlow, NodeId};
    use crate::test_util::line_graph;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn stat(median_kph: f64, volume: u32, raw: u32) -> SegmentSpeedStats {
        SegmentSpeedStats {
            u: NodeId(0),
            v: NodeId(1),
            t: 0,
            median_speed_kph: median_kph,
            volume,
            raw_median_speed: raw,
        }
    }

    #[test]
    fn corrupt_sentinels_stay_unclassified() {
        assert_eq!(
            extract_cc(&stat(30.0, 9, 255), 100.0).unwrap(),
            CongestionClass::Unclassified
        );
        assert_eq!(
            extract_cc(&stat(30.0, 9, 0), 100.0).unwrap(),
            CongestionClass::Unclassified
        );
        // sentinel short-circuits before the free-flow assertion
        assert!(extract_cc(&stat(30.0, 9, 255), 0.0).is_ok());
    }

    #[test]
    fn red_requires_low_factor_and_five_probes() {
        assert_eq!(extract_cc(&stat(30.0, 5, 30), 100.0).unwrap(), CongestionClass::Red);
        assert_eq!(
            extract_cc(&stat(30.0, 4, 30), 100.0).unwrap(),
            CongestionClass::Unclassified
        );
    }

    #[test]
    fn yellow_gate_unmet_is_unclassified() {
        // factor 0.5 with volume 2: yellow needs 3 probes, green needs factor >= 0.8
        assert_eq!(
            extract_cc(&stat(50.0, 2, 50), 100.0).unwrap(),
            CongestionClass::Unclassified
        );
    }

    #[test]
    fn nonpositive_free_flow_is_an_error() {
        assert!(extract_cc(&stat(30.0, 5, 30), 0.0).is_err());
        assert!(extract_cc(&stat(30.0, 5, 30), -1.0).is_err());
    }

    /// Direct transcription of the classification rules, kept independent
    /// of the production branch structure.
    fn extract_cc_oracle(raw: u32, median_kph: f64, free_flow: f64, volume: u32) -> u8 {
        if raw == 0 || raw == 255 {
            return 0;
        }
        let factor = median_kph / free_flow;
        if factor < 0.4 {
            if volume >= 5 {
                3
            } else {
                0
            }
        } else if factor < 0.8 {
            if volume >= 3 {
                2
            } else {
                0
            }
        } else if volume > 0 {
            1
        } else {
            0
        }
    }

    #[test]
    fn truth_table_over_branch_boundaries() {
        let free_flow = 100.0;
        for factor in [0.0, 0.39, 0.4, 0.79, 0.8, 1.2] {
            for volume in 0..=6u32 {
                for raw in [0u32, 255, 42] {
                    let s = stat(factor * free_flow, volume, raw);
                    let got = u8::from(extract_cc(&s, free_flow).unwrap());
                    let want = extract_cc_oracle(raw, s.median_speed_kph, free_flow, volume);
                    assert_eq!(got, want, "factor {factor} volume {volume} raw {raw}");
                }
            }
        }
    }

    fn free_flow01(kph: f64) -> Vec<FreeFlow> {
        vec![FreeFlow {
            u: NodeId(0),
            v: NodeId(1),
            free_flow_kph: kph,
        }]
    }

    #[test]
    fn schedule_defaults_to_free_flow_then_maxspeed() {
        let g = line_graph(&[0, 1], 100.0);
        let sched = build_edge_speed_schedule(&g, &free_flow01(50.0), &[]).unwrap();
        let slots = sched.get(&(NodeId(0), NodeId(1))).unwrap();
        assert!(slots.speeds.iter().all(|s| *s == 50.0));
        assert!(slots.sources.iter().all(|s| *s == SpeedSource::FreeFlow));

        let mut g = line_graph(&[0, 1], 100.0);
        let mut e = g.remove_edges(NodeId(0), NodeId(1)).pop().unwrap();
        e.maxspeed_kph = 30.0;
        g.add_edge(e).unwrap();
        let sched = build_edge_speed_schedule(&g, &[], &[]).unwrap();
        let slots = sched.get(&(NodeId(0), NodeId(1))).unwrap();
        assert!(slots.speeds.iter().all(|s| *s == 30.0));
        assert!(slots.sources.iter().all(|s| *s == SpeedSource::Maxspeed));
        assert_eq!(sched.maxspeed_only_edges, 1);
    }

    #[test]
    fn schedule_overwrites_bins_with_current_stats() {
        let g = line_graph(&[0, 1], 100.0);
        let mut s = stat(12.0, 5, 12);
        s.t = 10;
        let sched = build_edge_speed_schedule(&g, &free_flow01(50.0), &[s]).unwrap();
        let slots = sched.get(&(NodeId(0), NodeId(1))).unwrap();
        assert_eq!(slots.speeds[10], 12.0);
        assert_eq!(slots.sources[10], SpeedSource::Current);
        assert_eq!(slots.speeds[9], 50.0);
        assert_eq!(slots.sources[9], SpeedSource::FreeFlow);
    }

    fn single_edge_ss() -> SuperSegment {
        SuperSegment {
            ssid: 0,
            edges: vec![(NodeId(0), NodeId(1))],
        }
    }

    fn schedule_with(length_m: f64, speeds: [f64; BINS_PER_DAY]) -> EdgeSpeedSchedule {
        let mut sched = EdgeSpeedSchedule::default();
        sched.insert(
            (NodeId(0), NodeId(1)),
            EdgeSlots {
                length_m,
                speeds,
                sources: [SpeedSource::Current; BINS_PER_DAY],
            },
        );
        sched
    }

    #[test]
    fn eta_simple_arithmetic() {
        let sched = schedule_with(1000.0, [36.0; BINS_PER_DAY]);
        assert_eq!(compute_eta(&single_edge_ss(), &sched, 5).unwrap(), 100.0);
    }

    #[test]
    fn eta_clips_tiny_speeds() {
        let sched = schedule_with(100.0, [0.2; BINS_PER_DAY]);
        assert_eq!(compute_eta(&single_edge_ss(), &sched, 5).unwrap(), 720.0);
    }

    #[test]
    fn eta_long_branch_adds_three_slot_mean() {
        let sched = schedule_with(1000.0, [1.0; BINS_PER_DAY]);
        assert_eq!(compute_eta(&single_edge_ss(), &sched, 5).unwrap(), 5400.0);
    }

    #[test]
    fn eta_window_truncates_at_day_bounds() {
        let mut speeds = [50.0; BINS_PER_DAY];
        speeds[0] = 1.0;
        speeds[1] = 2.0;
        let sched = schedule_with(1000.0, speeds);
        // window at t=0 is slots 0..=1: mean of clipped (1, 2) = 1.5
        let expect = 1800.0 + 1000.0 * 3.6 / 1.5;
        assert!((compute_eta(&single_edge_ss(), &sched, 0).unwrap() - expect).abs() < 1e-9);

        let mut speeds = [50.0; BINS_PER_DAY];
        speeds[94] = 4.0;
        speeds[95] = 2.0;
        let sched = schedule_with(1000.0, speeds);
        // window at t=95 is slots 94..=95: mean (4, 2) = 3
        let expect = 1800.0 + 1000.0 * 3.6 / 3.0;
        assert!((compute_eta(&single_edge_ss(), &sched, 95).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn eta_mean_uses_clipped_inputs() {
        let mut speeds = [50.0; BINS_PER_DAY];
        speeds[4] = 0.1;
        speeds[5] = 0.2;
        speeds[6] = 0.3;
        let sched = schedule_with(1000.0, speeds);
        // all three slots clip to 0.5
        let expect = 1800.0 + 1000.0 * 3.6 / 0.5;
        assert!((compute_eta(&single_edge_ss(), &sched, 5).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn eta_rejects_bad_bin_and_missing_edge() {
        let sched = schedule_with(1000.0, [36.0; BINS_PER_DAY]);
        assert!(compute_eta(&single_edge_ss(), &sched, 96).is_err());
        let ss = SuperSegment {
            ssid: 1,
            edges: vec![(NodeId(5), NodeId(6))],
        };
        assert!(compute_eta(&ss, &sched, 0).is_err());
    }

    #[test]
    fn eta_additive_over_concatenation() {
        let g = line_graph(&[0, 1, 2], 400.0);
        let ff = vec![
            FreeFlow { u: NodeId(0), v: NodeId(1), free_flow_kph: 40.0 },
            FreeFlow { u: NodeId(1), v: NodeId(2), free_flow_kph: 20.0 },
        ];
        let sched = build_edge_speed_schedule(&g, &ff, &[]).unwrap();
        let p1 = SuperSegment { ssid: 0, edges: vec![(NodeId(0), NodeId(1))] };
        let p2 = SuperSegment { ssid: 1, edges: vec![(NodeId(1), NodeId(2))] };
        let whole = SuperSegment {
            ssid: 2,
            edges: vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2))],
        };
        for t in [0usize, 47, 95] {
            let a = compute_eta(&p1, &sched, t).unwrap();
            let b = compute_eta(&p2, &sched, t).unwrap();
            let c = compute_eta(&whole, &sched, t).unwrap();
            assert!((a + b - c).abs() < 1e-9);
        }
    }

    #[test]
    fn eta_monotone_in_single_edge_speed_and_bounded_by_clip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut speeds = [0.0; BINS_PER_DAY];
            for s in speeds.iter_mut() {
                *s = rng.gen_range(0.0..80.0);
            }
            let length = rng.gen_range(10.0..5000.0);
            let t = rng.gen_range(0..BINS_PER_DAY);
            let sched = schedule_with(length, speeds);
            let base = compute_eta(&single_edge_ss(), &sched, t).unwrap();
            assert!(base <= length * 3.6 / SPEED_CLIP_KPH + LONG_ETA_S);
            assert!(base > 0.0);

            let mut faster = speeds;
            faster[t] = speeds[t] + rng.gen_range(0.1..30.0);
            let sched2 = schedule_with(length, faster);
            let quicker = compute_eta(&single_edge_ss(), &sched2, t).unwrap();
            assert!(
                quicker <= base + 1e-9,
                "raising speed {} -> {} raised eta {base} -> {quicker}",
                speeds[t],
                faster[t]
            );
        }
    }

    #[test]
    fn label_city_masks_missing_stats_and_sums_free_flow_etas() {
        let g = line_graph(&[0, 1, 2], 500.0);
        let ss = vec![SuperSegment {
            ssid: 7,
            edges: vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(2))],
        }];
        let ff = vec![
            FreeFlow { u: NodeId(0), v: NodeId(1), free_flow_kph: 50.0 },
            FreeFlow { u: NodeId(1), v: NodeId(2), free_flow_kph: 25.0 },
        ];
        let mut s = stat(45.0, 4, 45); // factor 0.9, volume 4: green
        s.t = 3;
        let (cc, eta, summary) = label_city(&g, &ss, &[s], &ff).unwrap();
        assert_eq!(cc.len(), 1, "one label per stats row");
        assert_eq!(cc[0].cc, CongestionClass::Green);
        assert_eq!(eta.len(), BINS_PER_DAY);
        let len01 = g.edge(NodeId(0), NodeId(1)).unwrap().length_m;
        let len12 = g.edge(NodeId(1), NodeId(2)).unwrap().length_m;
        // bins without stats run at free flow
        let expect = len01 * 3.6 / 50.0 + len12 * 3.6 / 25.0;
        let at_t50 = eta.iter().find(|l| l.t == 50).unwrap();
        assert!((at_t50.eta_s - expect).abs() < 1e-9);
        assert_eq!(summary.classified, 1);
        assert!(eta.iter().all(|l| l.eta_s > 0.0));
    }

    #[test]
    fn label_city_rejects_supersegment_off_graph() {
        let g = line_graph(&[0, 1], 500.0);
        let ss = vec![SuperSegment {
            ssid: 0,
            edges: vec![(NodeId(0), NodeId(9))],
        }];
        assert!(label_city(&g, &ss, &[], &[]).is_err());
    }

    #[test]
    fn label_city_skips_stats_for_unknown_edges() {
        let g = line_graph(&[0, 1], 500.0);
        let mut s = stat(45.0, 4, 45);
        s.u = NodeId(7);
        s.v = NodeId(8);
        let (cc, _, summary) = label_city(&g, &[], &[s], &[]).unwrap();
        assert!(cc.is_empty());
        assert_eq!(summary.stats_skipped_unknown_edge, 1);
    }
}
