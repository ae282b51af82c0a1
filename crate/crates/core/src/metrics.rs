//! OSPA for point sets and OSPA(2) for sets of tracks.
//!
//! The OSPA(2) base distance between two tracks over a window is the mean,
//! over scans where at least one of them exists, of the cut-off distance
//! between their states, with `c` charged at scans where only one exists.
//! Scans where neither exists are skipped.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::assignment::min_cost_assignment;
use crate::labeled_state::{Label, LabeledState, TrajectorySegment};

/// OSPA value with its localization and cardinality parts. For `p = 1`
/// the parts add up to the total; in general `total^p = loc^p + card^p`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Ospa {
    pub total: f64,
    pub localization: f64,
    pub cardinality: f64,
}

fn ospa_from_costs(costs: &[Vec<f64>], rows: usize, cols: usize, c: f64, p: f64) -> Ospa {
    let n = rows.max(cols);
    if n == 0 {
        return Ospa::default();
    }
    let matched = if rows == 0 || cols == 0 {
        0.0
    } else if rows <= cols {
        min_cost_assignment(costs).1
    } else {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| costs[i][j]).collect()).collect();
        min_cost_assignment(&transposed).1
    };
    let card = libm::pow(c, p) * rows.abs_diff(cols) as f64;
    let nf = n as f64;
    Ospa {
        total: libm::pow((matched + card) / nf, 1.0 / p),
        localization: libm::pow(matched / nf, 1.0 / p),
        cardinality: libm::pow(card / nf, 1.0 / p),
    }
}

fn cut_distance(x: &DVector<f64>, y: &DVector<f64>, c: f64) -> f64 {
    (x - y).norm().min(c)
}

/// OSPA distance of order `p` with cut-off `c` between two point sets.
pub fn ospa(x: &[DVector<f64>], y: &[DVector<f64>], c: f64, p: f64) -> Ospa {
    assert!(c > 0.0 && p >= 1.0, "OSPA needs c > 0 and p >= 1");
    let costs: Vec<Vec<f64>> = x
        .iter()
        .map(|a| y.iter().map(|b| libm::pow(cut_distance(a, b, c), p)).collect())
        .collect();
    ospa_from_costs(&costs, x.len(), y.len(), c, p)
}

/// Tracks keyed by label, each a map from scan to state.
pub type Tracks = BTreeMap<Label, BTreeMap<usize, DVector<f64>>>;

/// Groups per-scan labeled states into tracks. `scans[i]` holds the states
/// of scan `first_scan + i`.
pub fn tracks_from_scans(scans: &[Vec<LabeledState>], first_scan: usize) -> Tracks {
    let mut tracks = Tracks::new();
    for (i, states) in scans.iter().enumerate() {
        for s in states {
            tracks
                .entry(s.label)
                .or_default()
                .insert(first_scan + i, s.kinematic.clone());
        }
    }
    tracks
}

pub fn tracks_from_segments(segments: &[TrajectorySegment]) -> Tracks {
    segments
        .iter()
        .map(|s| {
            let states = s.states.iter().enumerate().map(|(i, x)| (s.start + i, x.clone())).collect();
            (s.label, states)
        })
        .collect()
}

/// Mean cut-off distance between two tracks over `from..=to`.
fn track_distance(
    a: &BTreeMap<usize, DVector<f64>>,
    b: &BTreeMap<usize, DVector<f64>>,
    from: usize,
    to: usize,
    c: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in from..=to {
        match (a.get(&t), b.get(&t)) {
            (Some(x), Some(y)) => sum += cut_distance(x, y, c),
            (None, None) => continue,
            _ => sum += c,
        }
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn present_in(track: &BTreeMap<usize, DVector<f64>>, from: usize, to: usize) -> bool {
    track.range(from..=to).next().is_some()
}

/// OSPA(2) at every scan of `scans`, over the window of the last `w`
/// scans ending there (clipped at scan 1).
pub fn ospa2(estimate: &Tracks, truth: &Tracks, c: f64, p: f64, w: usize, scans: core::ops::RangeInclusive<usize>) -> Vec<Ospa> {
    assert!(c > 0.0 && p >= 1.0 && w >= 1, "OSPA(2) needs c > 0, p >= 1 and w >= 1");
    scans
        .map(|k| {
            let from = (k + 1).saturating_sub(w).max(1);
            let x: Vec<_> = estimate.values().filter(|t| present_in(t, from, k)).collect();
            let y: Vec<_> = truth.values().filter(|t| present_in(t, from, k)).collect();
            let costs: Vec<Vec<f64>> = x
                .iter()
                .map(|a| y.iter().map(|b| libm::pow(track_distance(a, b, from, k, c), p)).collect())
                .collect();
            ospa_from_costs(&costs, x.len(), y.len(), c, p)
        })
        .collect()
}
