//! Extended association maps and association histories.
//!
//! An extended association map at scan `k` sends each label of its domain
//! (labels alive at `k-1` followed by labels that may be born at `k`) to
//! `-1` (not alive), `0` (alive, misdetected) or `j > 0` (alive, generated
//! measurement `j`). Labels outside the domain are implicitly `-1`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::labeled_state::Label;

/// Default guard for exhaustive enumeration.
pub const ENUMERATION_LIMIT: f64 = 1.0e7;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssociationMap {
    scan: usize,
    measurements: usize,
    entries: Vec<(Label, i32)>,
}

impl AssociationMap {
    /// Entries are stored sorted by label, which places surviving labels
    /// before the births of this scan.
    pub fn new(scan: usize, measurements: usize, mut entries: Vec<(Label, i32)>) -> Self {
        entries.sort_by_key(|e| e.0);
        AssociationMap {
            scan,
            measurements,
            entries,
        }
    }

    /// Map that sends every label of `domain` to `-1`.
    pub fn all_negative(scan: usize, measurements: usize, domain: &[Label]) -> Self {
        Self::new(scan, measurements, domain.iter().map(|&l| (l, -1)).collect())
    }

    pub fn scan(&self) -> usize {
        self.scan
    }

    pub fn measurements(&self) -> usize {
        self.measurements
    }

    pub fn entries(&self) -> &[(Label, i32)] {
        &self.entries
    }

    pub fn domain(&self) -> impl Iterator<Item = Label> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    /// Value of the map at `label`; `-1` outside the stored domain.
    pub fn get(&self, label: Label) -> i32 {
        self.entries
            .binary_search_by_key(&label, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(-1)
    }

    pub fn live_labels(&self) -> BTreeSet<Label> {
        self.entries
            .iter()
            .filter(|e| e.1 >= 0)
            .map(|e| e.0)
            .collect()
    }

    /// No two labels share the same positive value. `0` and `-1` may repeat.
    pub fn is_positive_one_to_one(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .filter(|e| e.1 > 0)
            .all(|e| seen.insert(e.1))
    }

    /// The association map restricted to its live labels.
    pub fn to_theta(&self) -> BTreeMap<Label, usize> {
        self.entries
            .iter()
            .filter(|e| e.1 >= 0)
            .map(|&(l, v)| (l, v as usize))
            .collect()
    }

    /// Extends `theta` to `domain` by sending every label outside its domain
    /// to `-1`.
    pub fn from_theta(
        scan: usize,
        measurements: usize,
        domain: &[Label],
        theta: &BTreeMap<Label, usize>,
    ) -> Self {
        let entries = domain
            .iter()
            .map(|&l| (l, theta.get(&l).map_or(-1, |&v| v as i32)))
            .collect();
        Self::new(scan, measurements, entries)
    }
}

/// Canonical key of a history: the live `(label, value)` pairs of each scan,
/// sorted by label. `-1` entries are implied by the key and the birth model.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HistoryKey(pub Vec<Vec<(Label, u32)>>);

/// Association maps for scans `1..=k`.
#[derive(Clone, Debug, Default)]
pub struct AssociationHistory {
    maps: Vec<AssociationMap>,
}

impl PartialEq for AssociationHistory {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for AssociationHistory {}

impl AssociationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_maps(maps: Vec<AssociationMap>) -> Result<Self> {
        for (i, m) in maps.iter().enumerate() {
            if m.scan != i + 1 {
                return Err(Error::InvalidHistory(format!(
                    "map {i} is for scan {}, expected {}",
                    m.scan,
                    i + 1
                )));
            }
        }
        Ok(AssociationHistory { maps })
    }

    /// Number of scans covered.
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[AssociationMap] {
        &self.maps
    }

    pub fn map(&self, scan: usize) -> Option<&AssociationMap> {
        scan.checked_sub(1).and_then(|i| self.maps.get(i))
    }

    pub fn push(&mut self, map: AssociationMap) -> Result<()> {
        if map.scan != self.maps.len() + 1 {
            return Err(Error::InvalidHistory(format!(
                "appending map for scan {} to history of length {}",
                map.scan,
                self.maps.len()
            )));
        }
        self.maps.push(map);
        Ok(())
    }

    pub fn extended(&self, map: AssociationMap) -> Result<Self> {
        let mut h = self.clone();
        h.push(map)?;
        Ok(h)
    }

    pub fn value(&self, label: Label, scan: usize) -> i32 {
        self.map(scan).map_or(-1, |m| m.get(label))
    }

    /// Live labels at `scan`; empty at scan 0 and beyond the history.
    pub fn live_at(&self, scan: usize) -> BTreeSet<Label> {
        self.map(scan).map(AssociationMap::live_labels).unwrap_or_default()
    }

    /// `(s, t)` for every label ever alive: first and last live scan.
    pub fn label_spans(&self) -> BTreeMap<Label, (usize, usize)> {
        let mut spans: BTreeMap<Label, (usize, usize)> = BTreeMap::new();
        for m in &self.maps {
            for &(l, v) in &m.entries {
                if v >= 0 {
                    spans
                        .entry(l)
                        .and_modify(|span| span.1 = m.scan)
                        .or_insert((m.scan, m.scan));
                }
            }
        }
        spans
    }

    pub fn labels_ever_alive(&self) -> BTreeSet<Label> {
        self.maps.iter().flat_map(|m| m.live_labels()).collect()
    }

    /// Association values of `label` from its birth scan up to and including
    /// the first `-1` (or the end of the history).
    pub fn label_sequence(&self, label: Label) -> Vec<i32> {
        let mut seq = Vec::new();
        for scan in label.birth_time.max(1)..=self.len() {
            let v = self.value(label, scan);
            seq.push(v);
            if v < 0 {
                break;
            }
        }
        seq
    }

    pub fn key(&self) -> HistoryKey {
        HistoryKey(
            self.maps
                .iter()
                .map(|m| {
                    m.entries
                        .iter()
                        .filter(|e| e.1 >= 0)
                        .map(|&(l, v)| (l, v as u32))
                        .collect()
                })
                .collect(),
        )
    }
}

impl fmt::Display for AssociationHistory {
    /// `label:value` pairs sorted by label, scans separated by `|`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, m) in self.maps.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            for (n, (l, v)) in m.entries.iter().enumerate() {
                if n > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{l}:{v}")?;
            }
        }
        Ok(())
    }
}

/// Domain of the scan-`scan` map: live labels of the previous map followed by
/// the labels that may be born at `scan`.
pub fn scan_domain(previous_live: &BTreeSet<Label>, births: &[Label]) -> Vec<Label> {
    let mut domain: Vec<Label> = previous_live.iter().copied().collect();
    let mut b = births.to_vec();
    b.sort();
    domain.extend(b);
    domain
}

fn validity_violation(
    h: &AssociationHistory,
    births: &[Vec<Label>],
    meas_counts: &[usize],
) -> Option<String> {
    let mut previous_live = BTreeSet::new();
    for (i, m) in h.maps.iter().enumerate() {
        let scan = i + 1;
        if m.scan != scan {
            return Some(format!("map {i} is labelled scan {}", m.scan));
        }
        let Some(&count) = meas_counts.get(i) else {
            return Some(format!("no measurement count for scan {scan}"));
        };
        let born: &[Label] = births.get(i).map(Vec::as_slice).unwrap_or(&[]);
        if !m.is_positive_one_to_one() {
            return Some(format!("scan {scan}: repeated positive value"));
        }
        for &(l, v) in &m.entries {
            if v < -1 || v > count as i32 {
                return Some(format!("scan {scan}: value {v} of {l} outside -1..={count}"));
            }
            if v >= 0 && !previous_live.contains(&l) && !born.contains(&l) {
                return Some(format!("scan {scan}: {l} alive outside births and survivors"));
            }
        }
        previous_live = m.live_labels();
    }
    None
}

/// Positive 1-1 at every scan, live labels confined to births and previous
/// live labels, and no dead label alive again.
pub fn is_valid_history(h: &AssociationHistory, births: &[Vec<Label>], meas_counts: &[usize]) -> bool {
    validity_violation(h, births, meas_counts).is_none()
}

pub fn check_valid_history(
    h: &AssociationHistory,
    births: &[Vec<Label>],
    meas_counts: &[usize],
) -> Result<()> {
    match validity_violation(h, births, meas_counts) {
        None => Ok(()),
        Some(why) => Err(Error::InvalidHistory(why)),
    }
}

/// Calls `f` with every positive 1-1 assignment of `-1..=measurements` to
/// `n` ordered slots.
pub(crate) fn for_each_positive_one_to_one<F>(n: usize, measurements: usize, mut f: F)
where
    F: FnMut(&[i32]),
{
    fn rec<F: FnMut(&[i32])>(slot: usize, values: &mut Vec<i32>, taken: &mut [bool], m: usize, f: &mut F) {
        if slot == values.len() {
            f(values);
            return;
        }
        for v in -1..=m as i32 {
            if v > 0 {
                if taken[v as usize] {
                    continue;
                }
                taken[v as usize] = true;
            }
            values[slot] = v;
            rec(slot + 1, values, taken, m, f);
            if v > 0 {
                taken[v as usize] = false;
            }
        }
    }
    let mut values = alloc::vec![-1; n];
    let mut taken = alloc::vec![false; measurements + 1];
    rec(0, &mut values, &mut taken, measurements, &mut f);
}

/// Upper bound on the number of histories explored by exhaustive enumeration.
pub fn enumeration_size_bound(births: &[Vec<Label>], meas_counts: &[usize], k: usize) -> f64 {
    let mut cumulative = 0usize;
    let mut bound = 1.0f64;
    for j in 0..k {
        cumulative += births.get(j).map_or(0, Vec::len);
        let m = meas_counts.get(j).copied().unwrap_or(0);
        bound *= libm::pow((m + 2) as f64, cumulative as f64);
    }
    bound
}

/// Every valid history over scans `1..=k`, without duplicates.
pub fn enumerate_valid_histories(
    births: &[Vec<Label>],
    meas_counts: &[usize],
    k: usize,
) -> Result<Vec<AssociationHistory>> {
    if meas_counts.len() < k {
        return Err(Error::InvalidConfig(format!(
            "{} measurement counts for {k} scans",
            meas_counts.len()
        )));
    }
    let estimate = enumeration_size_bound(births, meas_counts, k);
    if estimate > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            estimate,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut frontier = alloc::vec![AssociationHistory::new()];
    for (j, &m) in meas_counts[..k].iter().enumerate() {
        let scan = j + 1;
        let born: &[Label] = births.get(j).map(Vec::as_slice).unwrap_or(&[]);
        let mut next = Vec::new();
        for h in &frontier {
            let domain = scan_domain(&h.live_at(j), born);
            for_each_positive_one_to_one(domain.len(), m, |values| {
                let entries = domain.iter().copied().zip(values.iter().copied()).collect();
                let mut extended = h.clone();
                extended.maps.push(AssociationMap::new(scan, m, entries));
                next.push(extended);
            });
        }
        frontier = next;
    }
    Ok(frontier)
}
