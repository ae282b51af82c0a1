//! Labels, labeled states, multi-object state sequences and trajectories.
//!
//! A multi-object state sequence over a window of scans is equivalent to the
//! set of its trajectories; [`to_trajectories`] and [`from_trajectories`]
//! convert between the two views. The multi-scan exponential is a product of
//! a trajectory functional over all labels of a sequence.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Identity of one object: the scan it was born at and an index that
/// distinguishes objects born at the same scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label {
    pub birth_time: usize,
    pub index: usize,
}

impl Label {
    pub const fn new(birth_time: usize, index: usize) -> Self {
        Label { birth_time, index }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.birth_time, self.index)
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("malformed label `{s}`, expected `s.i`"));
        let (b, i) = s.trim().split_once('.').ok_or_else(bad)?;
        let birth_time = b.parse().map_err(|_| bad())?;
        let index = i.parse().map_err(|_| bad())?;
        if index == 0 {
            return Err(bad());
        }
        Ok(Label { birth_time, index })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledState {
    pub kinematic: DVector<f64>,
    pub label: Label,
}

impl LabeledState {
    pub fn new(kinematic: DVector<f64>, label: Label) -> Self {
        LabeledState { kinematic, label }
    }
}

/// `max(window_start, birth_time)`: the first scan a label can be observed
/// inside the window.
pub fn start_time(label: Label, window_start: usize) -> usize {
    window_start.max(label.birth_time)
}

/// Last scan at which `label` is alive, given per-scan label sets for the
/// window starting at `window_start`.
///
/// Computed as the start time plus the number of later scans containing the
/// label, which is the latest alive time only for sequences without
/// resurrection.
pub fn end_time(label: Label, label_sets: &[BTreeSet<Label>], window_start: usize) -> Result<usize> {
    if !label_sets.iter().any(|set| set.contains(&label)) {
        return Err(Error::LabelNotInWindow(label));
    }
    let s = start_time(label, window_start);
    let alive_after = label_sets
        .iter()
        .enumerate()
        .filter(|(offset, set)| window_start + offset > s && set.contains(&label))
        .count();
    Ok(s + alive_after)
}

/// A labeled trajectory: kinematic states at consecutive scans
/// `start..=end()`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySegment {
    pub label: Label,
    pub start: usize,
    pub states: Vec<DVector<f64>>,
}

impl TrajectorySegment {
    pub fn new(label: Label, start: usize, states: Vec<DVector<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidSequence(format!("trajectory {label} has no states")));
        }
        Ok(TrajectorySegment { label, start, states })
    }

    pub fn end(&self) -> usize {
        self.start + self.states.len() - 1
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_at(&self, scan: usize) -> Option<&DVector<f64>> {
        if scan < self.start {
            return None;
        }
        self.states.get(scan - self.start)
    }

    /// Sub-trajectory over `from..=to` intersected with the segment's span.
    pub fn restrict(&self, from: usize, to: usize) -> Option<TrajectorySegment> {
        let lo = from.max(self.start);
        let hi = to.min(self.end());
        if lo > hi {
            return None;
        }
        Some(TrajectorySegment {
            label: self.label,
            start: lo,
            states: self.states[lo - self.start..=hi - self.start].to_vec(),
        })
    }
}

/// Labeled multi-object states at scans `window_start..=window_end()`.
///
/// Construction enforces distinct labels per scan, a uniform kinematic
/// dimension, first appearance at `max(window_start, birth_time)` and no
/// resurrection.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiObjectStateSequence {
    window_start: usize,
    dim: usize,
    scans: Vec<Vec<LabeledState>>,
}

impl MultiObjectStateSequence {
    pub fn new(window_start: usize, dim: usize, mut scans: Vec<Vec<LabeledState>>) -> Result<Self> {
        let mut first_seen: BTreeMap<Label, usize> = BTreeMap::new();
        let mut last_seen: BTreeMap<Label, usize> = BTreeMap::new();
        for (offset, set) in scans.iter_mut().enumerate() {
            let scan = window_start + offset;
            set.sort_by_key(|x| x.label);
            for pair in set.windows(2) {
                if pair[0].label == pair[1].label {
                    return Err(Error::InvalidSequence(format!(
                        "label {} repeated at scan {scan}",
                        pair[0].label
                    )));
                }
            }
            for x in set.iter() {
                if x.kinematic.len() != dim {
                    return Err(Error::dims("labeled state", dim, x.kinematic.len()));
                }
                if x.label.birth_time > scan {
                    return Err(Error::InvalidSequence(format!(
                        "label {} present at scan {scan} before its birth",
                        x.label
                    )));
                }
                match last_seen.get(&x.label) {
                    Some(&prev) if prev + 1 != scan => {
                        return Err(Error::InvalidSequence(format!(
                            "label {} resurrected at scan {scan} after dying at {}",
                            x.label,
                            prev + 1
                        )));
                    }
                    None => {
                        let expected = start_time(x.label, window_start);
                        if scan != expected {
                            return Err(Error::InvalidSequence(format!(
                                "label {} first appears at scan {scan}, expected {expected}",
                                x.label
                            )));
                        }
                        first_seen.insert(x.label, scan);
                    }
                    _ => {}
                }
                last_seen.insert(x.label, scan);
            }
        }
        Ok(MultiObjectStateSequence {
            window_start,
            dim,
            scans,
        })
    }

    pub fn empty(window_start: usize, dim: usize, scans: usize) -> Self {
        MultiObjectStateSequence {
            window_start,
            dim,
            scans: (0..scans).map(|_| Vec::new()).collect(),
        }
    }

    pub fn window_start(&self) -> usize {
        self.window_start
    }

    /// Last scan of the window; equals `window_start - 1` for an empty window.
    pub fn window_end(&self) -> usize {
        (self.window_start + self.scans.len()).saturating_sub(1)
    }

    pub fn num_scans(&self) -> usize {
        self.scans.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states_at(&self, scan: usize) -> &[LabeledState] {
        scan.checked_sub(self.window_start)
            .and_then(|i| self.scans.get(i))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn label_set_at(&self, scan: usize) -> BTreeSet<Label> {
        self.states_at(scan).iter().map(|x| x.label).collect()
    }

    pub fn label_sets(&self) -> Vec<BTreeSet<Label>> {
        self.scans
            .iter()
            .map(|set| set.iter().map(|x| x.label).collect())
            .collect()
    }

    /// Union of the labels over all scans of the window.
    pub fn labels(&self) -> BTreeSet<Label> {
        self.scans.iter().flatten().map(|x| x.label).collect()
    }

    /// Sub-sequence over `from..=to` (clamped to the window).
    pub fn window(&self, from: usize, to: usize) -> Self {
        let lo = from.max(self.window_start);
        let hi = to.min(self.window_end());
        let scans = if lo > hi || self.scans.is_empty() {
            Vec::new()
        } else {
            self.scans[lo - self.window_start..=hi - self.window_start].to_vec()
        };
        MultiObjectStateSequence {
            window_start: lo,
            dim: self.dim,
            scans,
        }
    }

    /// Labels of the sequence split at scan `i` into those terminated before
    /// `i`, those alive at `i` and those born after `i`.
    pub fn label_partition(&self, i: usize) -> LabelPartition {
        let live = self.label_set_at(i);
        let mut terminated = BTreeSet::new();
        let mut born_after = BTreeSet::new();
        for seg in to_trajectories(self) {
            if live.contains(&seg.label) {
                continue;
            }
            if seg.end() < i {
                terminated.insert(seg.label);
            } else if seg.start > i {
                born_after.insert(seg.label);
            }
        }
        LabelPartition {
            terminated,
            live,
            born_after,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPartition {
    pub terminated: BTreeSet<Label>,
    pub live: BTreeSet<Label>,
    pub born_after: BTreeSet<Label>,
}

/// Regroups a state sequence into one trajectory per label, sorted by label.
pub fn to_trajectories(seq: &MultiObjectStateSequence) -> Vec<TrajectorySegment> {
    let mut out: BTreeMap<Label, TrajectorySegment> = BTreeMap::new();
    for (offset, set) in seq.scans.iter().enumerate() {
        let scan = seq.window_start + offset;
        for x in set {
            out.entry(x.label)
                .or_insert_with(|| TrajectorySegment {
                    label: x.label,
                    start: scan,
                    states: Vec::new(),
                })
                .states
                .push(x.kinematic.clone());
        }
    }
    out.into_values().collect()
}

/// Inverse of [`to_trajectories`] over the window `window_start..window_start + scans`.
pub fn from_trajectories(
    window_start: usize,
    scans: usize,
    dim: usize,
    trajectories: &[TrajectorySegment],
) -> Result<MultiObjectStateSequence> {
    let mut sets: Vec<Vec<LabeledState>> = (0..scans).map(|_| Vec::new()).collect();
    for seg in trajectories {
        if seg.start < window_start || seg.end() >= window_start + scans {
            return Err(Error::InvalidSequence(format!(
                "trajectory {} spans {}..={} outside window",
                seg.label,
                seg.start,
                seg.end()
            )));
        }
        for (i, x) in seg.states.iter().enumerate() {
            sets[seg.start + i - window_start].push(LabeledState::new(x.clone(), seg.label));
        }
    }
    MultiObjectStateSequence::new(window_start, dim, sets)
}

/// Product of `h` over the trajectories of `seq`; 1 for an empty sequence.
pub fn multiscan_exponential<H>(h: H, seq: &MultiObjectStateSequence) -> f64
where
    H: Fn(&TrajectorySegment) -> f64,
{
    to_trajectories(seq).iter().map(h).product()
}

/// Splice of two trajectory functionals at scan `i`: `g` is applied to the
/// part of a trajectory up to `i`, `h` to the part from `i` on.
pub fn splice<'a, G, H>(g: G, h: H, i: usize) -> impl Fn(&TrajectorySegment) -> f64 + 'a
where
    G: Fn(&TrajectorySegment) -> f64 + 'a,
    H: Fn(&TrajectorySegment) -> f64 + 'a,
{
    move |seg: &TrajectorySegment| {
        if seg.start > i {
            h(seg)
        } else if seg.end() < i {
            g(seg)
        } else {
            let head = seg.restrict(seg.start, i).expect("non-empty head");
            let tail = seg.restrict(i, seg.end()).expect("non-empty tail");
            g(&head) * h(&tail)
        }
    }
}
