//! The multi-scan GLMB density on sets of trajectories.
//!
//! A component is indexed by its association history and carries an
//! unnormalized log weight plus one Gaussian trajectory density per label
//! that is alive at some scan of the history. Trajectory densities are shared
//! between components through `Arc` because many components agree on most
//! of their tracks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::DVector;

use crate::association::{AssociationHistory, HistoryKey};
use crate::error::{Error, Result};
use crate::gaussian::GaussianTrajectoryDensity;
use crate::labeled_state::{Label, TrajectorySegment};

/// `ln Σ exp(v)`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

#[derive(Clone, Debug)]
pub struct MultiScanGlmbComponent {
    pub history: AssociationHistory,
    pub log_weight: f64,
    pub trajectories: BTreeMap<Label, Arc<GaussianTrajectoryDensity>>,
}

impl MultiScanGlmbComponent {
    /// Labels alive at some scan of the history.
    pub fn labels(&self) -> BTreeSet<Label> {
        self.trajectories.keys().copied().collect()
    }

    pub fn cardinality(&self) -> usize {
        self.trajectories.len()
    }

    /// Number of scans `label` is alive for, `None` when it never is.
    pub fn length_of(&self, label: Label) -> Option<usize> {
        self.trajectories.get(&label).map(|t| t.end() - t.start + 1)
    }

    pub fn trajectory(&self, label: Label) -> Option<&GaussianTrajectoryDensity> {
        self.trajectories.get(&label).map(Arc::as_ref)
    }

    /// Checks that the densities match the spans induced by the history.
    pub fn check(&self) -> Result<()> {
        let spans = self.history.label_spans();
        if spans.len() != self.trajectories.len() || spans.keys().ne(self.trajectories.keys()) {
            return Err(Error::InvalidHistory(format!(
                "component {} has densities for a different label set",
                self.history
            )));
        }
        for (label, (s, t)) in spans {
            let traj = &self.trajectories[&label];
            if traj.start != s || traj.end() != t || traj.label != label {
                return Err(Error::InvalidHistory(format!(
                    "density of {label} spans {}..{}, history says {s}..{t}",
                    traj.start,
                    traj.end()
                )));
            }
        }
        Ok(())
    }

    /// Mean trajectories of every label.
    pub fn mean_trajectories(&self) -> Vec<TrajectorySegment> {
        self.trajectories.values().map(|t| t.mean_segment()).collect()
    }
}

/// Result of keeping the `K` highest-weight components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub kept: usize,
    pub discarded: usize,
    /// Sum of the discarded weights, in the scale the weights were stored in.
    pub l1_error: f64,
    pub log_l1_error: f64,
    /// `2 (|f_H| - |f_T|) / |f_H|`, the bound on the L1 error between the
    /// normalized original and the normalized truncation.
    pub normalized_error_bound: f64,
}

/// Truncation summary for log weights already sorted in decreasing order.
pub(crate) fn summarize_truncation(sorted_log_weights: &[f64], k: usize) -> Truncation {
    let kept = sorted_log_weights.len().min(k);
    let discarded = &sorted_log_weights[kept..];
    let total = log_sum_exp(sorted_log_weights.iter().copied());
    let log_l1_error = log_sum_exp(discarded.iter().copied());
    let l1_error: f64 = discarded.iter().map(|&w| libm::exp(w)).sum();
    let relative = if discarded.is_empty() || total == f64::NEG_INFINITY {
        0.0
    } else {
        libm::exp(log_l1_error - total)
    };
    Truncation {
        kept,
        discarded: discarded.len(),
        l1_error,
        log_l1_error,
        normalized_error_bound: 2.0 * relative,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// The highest-weight component.
    BestComponent,
    /// The highest-weight component among those with the most probable
    /// number of trajectories.
    MapCardinality,
    /// The most probable number of labels, chosen by marginal existence,
    /// each with its most probable length.
    ExistenceBased,
}

#[derive(Clone, Debug)]
pub struct MultiScanGlmbDensity {
    scan: usize,
    components: Vec<MultiScanGlmbComponent>,
    normalized: bool,
}

fn rank(components: &[MultiScanGlmbComponent]) -> Vec<usize> {
    let keys: Vec<HistoryKey> = components.iter().map(|c| c.history.key()).collect();
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.sort_by(|&a, &b| {
        components[b]
            .log_weight
            .total_cmp(&components[a].log_weight)
            .then_with(|| keys[a].cmp(&keys[b]))
    });
    order
}

fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b].total_cmp(v) != Ordering::Less => {}
            _ => best = Some(i),
        }
    }
    best
}

impl MultiScanGlmbDensity {
    /// Builds a density over scans `0..=scan`. Components are ordered by
    /// decreasing weight, ties by history key.
    pub fn new(scan: usize, components: Vec<MultiScanGlmbComponent>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &components {
            if c.history.len() != scan {
                return Err(Error::InvalidHistory(format!(
                    "history {} covers {} scans, density covers {scan}",
                    c.history,
                    c.history.len()
                )));
            }
            if !seen.insert(c.history.key()) {
                return Err(Error::InvalidHistory(format!("duplicate component {}", c.history)));
            }
            if c.log_weight.is_nan() {
                return Err(Error::Numerical("component log weight is NaN"));
            }
        }
        let mut d = MultiScanGlmbDensity {
            scan,
            components,
            normalized: false,
        };
        d.sort();
        Ok(d)
    }

    /// The empty initial posterior: one component, no labels, weight 1.
    pub fn empty_prior() -> Self {
        MultiScanGlmbDensity {
            scan: 0,
            components: vec![MultiScanGlmbComponent {
                history: AssociationHistory::new(),
                log_weight: 0.0,
                trajectories: BTreeMap::new(),
            }],
            normalized: true,
        }
    }

    fn sort(&mut self) {
        let order = rank(&self.components);
        let mut slots: Vec<Option<MultiScanGlmbComponent>> = self.components.drain(..).map(Some).collect();
        self.components = order.into_iter().map(|i| slots[i].take().expect("permutation")).collect();
    }

    pub fn scan(&self) -> usize {
        self.scan
    }

    pub fn components(&self) -> &[MultiScanGlmbComponent] {
        &self.components
    }

    pub fn into_components(self) -> Vec<MultiScanGlmbComponent> {
        self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn log_normalizer(&self) -> f64 {
        log_sum_exp(self.components.iter().map(|c| c.log_weight))
    }

    /// Rescales the weights to sum to one and returns the log normalizer.
    pub fn normalize(&mut self) -> Result<f64> {
        let z = self.log_normalizer();
        if !z.is_finite() {
            return Err(Error::Degenerate(if z == f64::NEG_INFINITY {
                "every component has zero weight"
            } else {
                "component weights overflow"
            }));
        }
        for c in &mut self.components {
            c.log_weight -= z;
        }
        self.normalized = true;
        Ok(z)
    }

    /// Normalized weights in component order.
    pub fn weights(&self) -> Vec<f64> {
        let z = self.log_normalizer();
        self.components.iter().map(|c| libm::exp(c.log_weight - z)).collect()
    }

    /// Keeps the `k` highest-weight components.
    pub fn truncate(&mut self, k: usize) -> Result<Truncation> {
        if k == 0 {
            return Err(Error::Degenerate("truncation to zero components"));
        }
        let all: Vec<f64> = self.components.iter().map(|c| c.log_weight).collect();
        let summary = summarize_truncation(&all, k);
        if self.components.len() > k {
            self.components.truncate(k);
            self.normalized = false;
        }
        Ok(summary)
    }

    /// `P(n)`: probability of `n` trajectories, for `n` up to the largest
    /// component cardinality.
    pub fn cardinality_distribution(&self) -> Vec<f64> {
        let n_max = self.components.iter().map(|c| c.cardinality()).max().unwrap_or(0);
        let mut p = vec![0.0; n_max + 1];
        for (c, w) in self.components.iter().zip(self.weights()) {
            p[c.cardinality()] += w;
        }
        p
    }

    /// Joint probability that every label of `labels` exists at some scan.
    pub fn existence_probability(&self, labels: &BTreeSet<Label>) -> f64 {
        self.components
            .iter()
            .zip(self.weights())
            .filter(|(c, _)| labels.iter().all(|l| c.trajectories.contains_key(l)))
            .map(|(_, w)| w)
            .sum()
    }

    /// Marginal existence probability of every label present in some component.
    pub fn marginal_existence(&self) -> BTreeMap<Label, f64> {
        let mut r = BTreeMap::new();
        for (c, w) in self.components.iter().zip(self.weights()) {
            for &l in c.trajectories.keys() {
                *r.entry(l).or_insert(0.0) += w;
            }
        }
        r
    }

    /// Distribution of trajectory lengths.
    ///
    /// For a given label, index `m >= 1` is the probability that the label
    /// exists with length `m` and index `0` holds the probability that it does
    /// not exist. For the population, each component spreads its weight
    /// evenly over its trajectories; components without trajectories are left
    /// out and the rest renormalized. An all-empty density gives a zero vector.
    pub fn length_distribution(&self, label: Option<Label>) -> Vec<f64> {
        let m_max = self
            .components
            .iter()
            .flat_map(|c| c.trajectories.values().map(|t| t.end() - t.start + 1))
            .max()
            .unwrap_or(0);
        let mut p = vec![0.0; m_max + 1];
        let weights = self.weights();
        match label {
            Some(l) => {
                for (c, w) in self.components.iter().zip(&weights) {
                    match c.length_of(l) {
                        Some(m) => p[m] += w,
                        None => p[0] += w,
                    }
                }
            }
            None => {
                let mut mass = 0.0;
                for (c, w) in self.components.iter().zip(&weights) {
                    let n = c.cardinality();
                    if n == 0 {
                        continue;
                    }
                    mass += w;
                    for t in c.trajectories.values() {
                        p[t.end() - t.start + 1] += w / n as f64;
                    }
                }
                if mass > 0.0 {
                    for v in &mut p {
                        *v /= mass;
                    }
                }
            }
        }
        p
    }

    /// The highest-weight component.
    pub fn best_component(&self) -> Option<&MultiScanGlmbComponent> {
        self.components.first()
    }

    /// The highest-weight component with `n` trajectories.
    pub fn best_with_cardinality(&self, n: usize) -> Option<&MultiScanGlmbComponent> {
        self.components.iter().find(|c| c.cardinality() == n)
    }

    pub fn estimate(&self, mode: Estimator) -> Result<Vec<TrajectorySegment>> {
        if self.components.is_empty() || self.log_normalizer() == f64::NEG_INFINITY {
            return Err(Error::Degenerate("estimate of an empty density"));
        }
        match mode {
            Estimator::BestComponent => Ok(self.components[0].mean_trajectories()),
            Estimator::MapCardinality => {
                let n = argmax(&self.cardinality_distribution()).unwrap_or(0);
                Ok(self
                    .best_with_cardinality(n)
                    .map(MultiScanGlmbComponent::mean_trajectories)
                    .unwrap_or_default())
            }
            Estimator::ExistenceBased => self.existence_estimate(),
        }
    }

    fn existence_estimate(&self) -> Result<Vec<TrajectorySegment>> {
        let n = argmax(&self.cardinality_distribution()).unwrap_or(0);
        let mut existence: Vec<(Label, f64)> = self.marginal_existence().into_iter().collect();
        existence.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let weights = self.weights();
        let mut out = Vec::new();
        for &(label, _) in existence.iter().take(n) {
            let lengths = self.length_distribution(Some(label));
            let Some(m) = argmax(&lengths[1..]).map(|i| i + 1) else {
                continue;
            };
            let mut total = 0.0;
            let mut mean: Option<DVector<f64>> = None;
            let mut template: Option<&GaussianTrajectoryDensity> = None;
            for (c, &w) in self.components.iter().zip(&weights) {
                let Some(t) = c.trajectory(label) else { continue };
                if t.end() - t.start + 1 != m {
                    continue;
                }
                total += w;
                let contrib = &t.gaussian.mean * w;
                mean = Some(match mean {
                    Some(acc) => acc + contrib,
                    None => contrib,
                });
                template.get_or_insert(t);
            }
            let (Some(mean), Some(t)) = (mean, template) else { continue };
            if total <= 0.0 {
                continue;
            }
            let mean = mean / total;
            let d = t.state_dim;
            let states = (0..t.blocks()).map(|b| mean.rows(b * d, d).into_owned()).collect();
            out.push(TrajectorySegment::new(label, t.first_block, states)?);
        }
        out.sort_by_key(|s| s.label);
        Ok(out)
    }
}
