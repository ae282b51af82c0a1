//! Gibbs sampling of association histories.
//!
//! Weights factor over labels: the weight of a history is the product over
//! labels of the product of that label's per-scan factors `omega`, and the
//! factors of a label depend only on its own association sequence. The
//! [`OmegaCache`] memoizes, per label, a trie of association sequences whose
//! nodes hold the cumulative log weight and the filtered Gaussian. Every
//! sampler here reads weights through that cache, so identical sequences
//! always produce bit-identical weights.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::association::{
    check_valid_history, for_each_positive_one_to_one, scan_domain, AssociationHistory, AssociationMap,
    HistoryKey,
};
use crate::error::{Error, Result};
use crate::gaussian::{scan_update, Gaussian, GaussianTrajectoryDensity, Outcome, Predecessor, Retention};
use crate::labeled_state::Label;
use crate::models::SystemModel;
use crate::seed;

/// A model together with the measurement sets of scans `1..=k`.
#[derive(Clone, Debug)]
pub struct Problem {
    model: SystemModel,
    measurements: Vec<Vec<DVector<f64>>>,
    births: Vec<Vec<Label>>,
}

impl Problem {
    /// `measurements[j - 1]` holds the measurements of scan `j`. Every
    /// measurement must lie where the clutter intensity is positive.
    pub fn new(model: SystemModel, measurements: Vec<Vec<DVector<f64>>>) -> Result<Self> {
        let mut p = Problem {
            model,
            measurements: Vec::new(),
            births: Vec::new(),
        };
        for z in measurements {
            p.push_scan(z)?;
        }
        Ok(p)
    }

    pub fn push_scan(&mut self, measurements: Vec<DVector<f64>>) -> Result<()> {
        let scan = self.measurements.len() + 1;
        let m = self.model.measurement_dim();
        for (i, z) in measurements.iter().enumerate() {
            if z.len() != m {
                return Err(Error::dims("measurement", m, z.len()));
            }
            if self.model.measurement.clutter.intensity_at(z) <= 0.0 {
                return Err(Error::ZeroClutterDensity { scan, index: i + 1 });
            }
        }
        self.births.push(self.model.birth_labels(scan));
        self.measurements.push(measurements);
        Ok(())
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn scans(&self) -> usize {
        self.measurements.len()
    }

    pub fn measurements(&self, scan: usize) -> &[DVector<f64>] {
        &self.measurements[scan - 1]
    }

    pub fn all_measurements(&self) -> &[Vec<DVector<f64>>] {
        &self.measurements
    }

    pub fn measurement_count(&self, scan: usize) -> usize {
        self.measurements[scan - 1].len()
    }

    pub fn measurement_counts(&self) -> Vec<usize> {
        self.measurements.iter().map(Vec::len).collect()
    }

    /// Birth spaces of scans `1..=k`, index `j - 1` for scan `j`.
    pub fn births(&self) -> &[Vec<Label>] {
        &self.births
    }

    pub fn birth_labels(&self, scan: usize) -> &[Label] {
        &self.births[scan - 1]
    }

    /// The same problem restricted to scans `1..=k`.
    pub fn prefix(&self, k: usize) -> Problem {
        Problem {
            model: self.model.clone(),
            measurements: self.measurements[..k].to_vec(),
            births: self.births[..k].to_vec(),
        }
    }
}

const NONE: u32 = u32::MAX;
const ROOT: u32 = 0;

#[derive(Clone, Debug)]
struct Node {
    /// Scan of the value this node represents; the root sits one scan before
    /// the label's birth.
    scan: usize,
    cum: f64,
    state: Option<Gaussian>,
    children: Vec<u32>,
}

#[derive(Clone, Debug)]
struct Trie {
    nodes: Vec<Node>,
}

/// Per-label memo of cumulative log weights and filtered Gaussians keyed by
/// association sequence.
#[derive(Clone, Debug)]
pub struct OmegaCache {
    tries: BTreeMap<Label, Trie>,
    nodes: usize,
    limit: usize,
}

impl Default for OmegaCache {
    fn default() -> Self {
        Self::new()
    }
}

impl OmegaCache {
    /// Node budget before the cache is flushed.
    pub const DEFAULT_LIMIT: usize = 250_000;

    pub fn new() -> Self {
        Self::with_limit(Self::DEFAULT_LIMIT)
    }

    pub fn with_limit(limit: usize) -> Self {
        OmegaCache {
            tries: BTreeMap::new(),
            nodes: 0,
            limit: limit.max(1),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn clear(&mut self) {
        self.tries.clear();
        self.nodes = 0;
    }

    fn maybe_flush(&mut self) {
        if self.nodes > self.limit {
            self.clear();
        }
    }

    fn cum(&self, label: Label, node: u32) -> f64 {
        self.tries[&label].nodes[node as usize].cum
    }

    fn trie(&mut self, label: Label) -> &mut Trie {
        self.tries.entry(label).or_insert_with(|| Trie {
            nodes: vec![Node {
                scan: label.birth_time.saturating_sub(1),
                cum: 0.0,
                state: None,
                children: Vec::new(),
            }],
        })
    }

    fn child(&mut self, problem: &Problem, label: Label, node: u32, value: i32) -> Result<u32> {
        let trie = self.trie(label);
        let parent = &trie.nodes[node as usize];
        let slot = (value + 1) as usize;
        if let Some(&c) = parent.children.get(slot) {
            if c != NONE {
                return Ok(c);
            }
        }
        let scan = parent.scan + 1;
        if scan > problem.scans() {
            return Err(Error::InvalidHistory(format!("{label} has no scan {scan} to update")));
        }
        let zs = problem.measurements(scan);
        let model = problem.model();
        let update = if node == ROOT {
            let birth = model
                .birth(label)
                .ok_or_else(|| Error::InvalidHistory(format!("{label} is not a birth label of the model")))?;
            scan_update(Predecessor::Birth(birth), value, model, scan, zs, Retention::LastBlock)?
        } else {
            let state = parent
                .state
                .as_ref()
                .ok_or_else(|| Error::InvalidHistory(format!("{label} is not alive at scan {}", scan - 1)))?;
            let prev = GaussianTrajectoryDensity {
                label,
                start: label.birth_time,
                first_block: scan - 1,
                state_dim: model.state_dim(),
                gaussian: state.clone(),
            };
            scan_update(Predecessor::Alive(&prev), value, model, scan, zs, Retention::LastBlock)?
        };
        let cum = parent.cum + update.log_weight;
        let state = match update.outcome {
            Outcome::Alive(t) => Some(t.gaussian),
            Outcome::Died | Outcome::Unborn => None,
        };
        let id = trie.nodes.len() as u32;
        trie.nodes.push(Node {
            scan,
            cum,
            state,
            children: Vec::new(),
        });
        let parent = &mut trie.nodes[node as usize];
        if parent.children.len() <= slot {
            parent.children.resize(zs.len() + 2, NONE);
        }
        parent.children[slot] = id;
        self.nodes += 1;
        Ok(id)
    }

    fn walk(&mut self, problem: &Problem, label: Label, seq: &[i32]) -> Result<u32> {
        self.trie(label);
        let mut node = ROOT;
        for &v in seq {
            node = self.child(problem, label, node, v)?;
        }
        Ok(node)
    }

    /// Sum of the log factors of `label` along `seq`, its association values
    /// from its birth scan on. A `-1` may only appear last.
    pub fn sequence_log_weight(&mut self, problem: &Problem, label: Label, seq: &[i32]) -> Result<f64> {
        self.maybe_flush();
        if let Some(p) = seq.iter().position(|&v| v < 0) {
            if p + 1 != seq.len() {
                return Err(Error::InvalidSequence(format!("{label} is alive again after -1")));
            }
        }
        let node = self.walk(problem, label, seq)?;
        Ok(self.cum(label, node))
    }

    /// Filtered Gaussian of `label` after `seq`, `None` when the sequence
    /// ends with `-1`.
    pub fn filtered(&mut self, problem: &Problem, label: Label, seq: &[i32]) -> Result<Option<Gaussian>> {
        self.maybe_flush();
        let node = self.walk(problem, label, seq)?;
        Ok(self.tries[&label].nodes[node as usize].state.clone())
    }

    /// Log factors of every value `-1..=M` of `label` at the scan after
    /// `prefix`, relative to the weight of `prefix`.
    pub fn next_scan_factors(&mut self, problem: &Problem, label: Label, prefix: &[i32]) -> Result<Vec<f64>> {
        self.maybe_flush();
        let node = self.walk(problem, label, prefix)?;
        let base = self.cum(label, node);
        let scan = label.birth_time + prefix.len();
        let m = problem.measurement_count(scan) as i32;
        (-1..=m)
            .map(|v| {
                let c = self.child(problem, label, node, v)?;
                Ok(self.cum(label, c) - base)
            })
            .collect()
    }
}

/// Exact log weight of a history: the sum over the birth labels of scans
/// `1..=k` of their sequence log weights.
pub fn history_log_weight(problem: &Problem, cache: &mut OmegaCache, history: &AssociationHistory) -> Result<f64> {
    let k = history.len();
    let mut total = 0.0;
    for births in &problem.births()[..k] {
        for &label in births {
            total += cache.sequence_log_weight(problem, label, &history.label_sequence(label))?;
        }
    }
    Ok(total)
}

/// Unnormalized conditional weights of one label's value at one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalTable {
    pub scan: usize,
    pub label: Label,
    /// `ln eta(alpha)` at index `alpha + 1`, `-inf` for zero weight.
    pub log_weights: Vec<f64>,
}

impl ConditionalTable {
    pub fn log_weight(&self, alpha: i32) -> f64 {
        self.log_weights[(alpha + 1) as usize]
    }

    pub fn weight(&self, alpha: i32) -> f64 {
        libm::exp(self.log_weight(alpha))
    }

    /// Normalized probabilities over `-1..=M`.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        normalized(&self.log_weights, 1.0)
    }

    fn sample(&self, rng: &mut ChaCha8Rng, inverse_temperature: f64) -> Result<i32> {
        sample_index(&self.log_weights, inverse_temperature, rng).map(|i| i as i32 - 1)
    }
}

fn normalized(log_weights: &[f64], inverse_temperature: f64) -> Result<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::Degenerate("conditional with no positive weight"));
    }
    let mut p: Vec<f64> = log_weights
        .iter()
        .map(|&l| libm::exp((l - max) * inverse_temperature))
        .collect();
    let s: f64 = p.iter().sum();
    for v in &mut p {
        *v /= s;
    }
    Ok(p)
}

fn sample_index(log_weights: &[f64], inverse_temperature: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::Degenerate("conditional with no positive weight"));
    }
    let mut total = 0.0;
    let mut last = 0;
    let p: Vec<f64> = log_weights
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let v = libm::exp((l - max) * inverse_temperature);
            if v > 0.0 {
                last = i;
            }
            total += v;
            v
        })
        .collect();
    let mut u = rng.random::<f64>() * total;
    for (i, v) in p.iter().enumerate() {
        if *v > 0.0 {
            if u < *v {
                return Ok(i);
            }
            u -= v;
        }
    }
    Ok(last)
}

/// Geometric temperature schedule from `start` to `end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annealing {
    pub start: f64,
    pub end: f64,
}

impl Default for Annealing {
    fn default() -> Self {
        Annealing { start: 1.0, end: 0.01 }
    }
}

impl Annealing {
    /// Temperature of sweep `t` of `total` (both counted from zero).
    pub fn temperature(&self, t: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.end;
        }
        let frac = t as f64 / (total - 1) as f64;
        self.start * libm::pow(self.end / self.start, frac)
    }
}

/// Start of each per-scan factor chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Initialization {
    /// Every label in the domain misdetected.
    #[default]
    AllZeros,
    /// Every label in the domain not alive.
    AllNegative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Number of iterates `T`, counting the initial state.
    pub iterations: usize,
    /// Per-scan iterate counts `T_j` for the factor sampler, index `j - 1`.
    /// Scans beyond the list use `iterations`.
    pub scan_iterations: Vec<usize>,
    /// Leading iterates dropped from the full Gibbs output.
    pub burn_in: usize,
    pub seed: u64,
    pub annealing: Option<Annealing>,
    pub init: Initialization,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 100,
            scan_iterations: Vec::new(),
            burn_in: 0,
            seed: 0,
            annealing: None,
            init: Initialization::AllZeros,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.scan_iterations.contains(&0) {
            return Err(Error::InvalidConfig("Gibbs iterations must be at least 1".into()));
        }
        if let Some(a) = self.annealing {
            if !(a.start > 0.0 && a.end > 0.0 && a.start.is_finite() && a.end.is_finite()) {
                return Err(Error::InvalidConfig("annealing temperatures must be positive".into()));
            }
        }
        Ok(())
    }

    fn scan_iterations(&self, scan: usize) -> usize {
        self.scan_iterations.get(scan - 1).copied().unwrap_or(self.iterations)
    }
}

/// Dense association history: one value per (scan, birth label).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GibbsState {
    universe: Vec<Label>,
    index: BTreeMap<Label, usize>,
    counts: Vec<usize>,
    /// `values[j - 1][u]`.
    values: Vec<Vec<i32>>,
    /// `taken[j - 1][m]`: labels holding measurement `m` at scan `j`.
    taken: Vec<Vec<u32>>,
}

impl GibbsState {
    /// Every label not alive over scans `1..=k`.
    pub fn empty(problem: &Problem, k: usize) -> Result<Self> {
        if k > problem.scans() {
            return Err(Error::InvalidConfig(format!(
                "{k} scans requested, problem has {}",
                problem.scans()
            )));
        }
        let universe: Vec<Label> = problem.births()[..k].iter().flatten().copied().collect();
        let index = universe.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let counts: Vec<usize> = (1..=k).map(|j| problem.measurement_count(j)).collect();
        Ok(GibbsState {
            values: vec![vec![-1; universe.len()]; k],
            taken: counts.iter().map(|&m| vec![0; m + 1]).collect(),
            universe,
            index,
            counts,
        })
    }

    pub fn from_history(problem: &Problem, history: &AssociationHistory) -> Result<Self> {
        let k = history.len();
        let mut s = Self::empty(problem, k)?;
        check_valid_history(history, &problem.births()[..k], &s.counts)?;
        for (j, map) in history.maps().iter().enumerate() {
            for &(label, v) in map.entries() {
                if v >= 0 {
                    s.set(j + 1, label, v)?;
                }
            }
        }
        Ok(s)
    }

    pub fn to_history(&self) -> AssociationHistory {
        let maps = (1..=self.scans())
            .map(|j| {
                let entries = self.domain_indices(j).map(|u| (self.universe[u], self.values[j - 1][u])).collect();
                AssociationMap::new(j, self.counts[j - 1], entries)
            })
            .collect();
        AssociationHistory::from_maps(maps).expect("scans are consecutive")
    }

    pub fn scans(&self) -> usize {
        self.values.len()
    }

    pub fn labels(&self) -> &[Label] {
        &self.universe
    }

    pub fn value(&self, scan: usize, label: Label) -> i32 {
        match self.index.get(&label) {
            Some(&u) if scan >= 1 && scan <= self.scans() => self.values[scan - 1][u],
            _ => -1,
        }
    }

    fn in_domain(&self, scan: usize, u: usize) -> bool {
        let l = self.universe[u];
        l.birth_time == scan || (scan > 1 && l.birth_time < scan && self.values[scan - 2][u] >= 0)
    }

    fn domain_indices(&self, scan: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.universe.len()).filter(move |&u| self.in_domain(scan, u))
    }

    /// `B_j` followed by the labels alive at `j - 1`, in label order.
    pub fn domain(&self, scan: usize) -> Vec<Label> {
        self.domain_indices(scan).map(|u| self.universe[u]).collect()
    }

    /// Sets one value without checking validity of the result.
    pub fn set(&mut self, scan: usize, label: Label, value: i32) -> Result<()> {
        let &u = self
            .index
            .get(&label)
            .ok_or(Error::LabelNotInWindow(label))?;
        if scan == 0 || scan > self.scans() || value < -1 || value > self.counts[scan - 1] as i32 {
            return Err(Error::InvalidHistory(format!("cannot set {label} to {value} at scan {scan}")));
        }
        self.assign(scan, u, value);
        Ok(())
    }

    fn assign(&mut self, scan: usize, u: usize, value: i32) {
        let old = self.values[scan - 1][u];
        if old > 0 {
            self.taken[scan - 1][old as usize] -= 1;
        }
        if value > 0 {
            self.taken[scan - 1][value as usize] += 1;
        }
        self.values[scan - 1][u] = value;
    }

    /// Values of label `u` from its birth scan through `scan - 1`.
    fn prefix(&self, u: usize, scan: usize) -> Vec<i32> {
        let s = self.universe[u].birth_time;
        (s..scan).map(|i| self.values[i - 1][u]).collect()
    }

    /// The label's association sequence over the state's scans.
    fn sequence(&self, u: usize) -> Vec<i32> {
        let s = self.universe[u].birth_time;
        let mut seq = Vec::new();
        for i in s..=self.scans() {
            let v = self.values[i - 1][u];
            seq.push(v);
            if v < 0 {
                break;
            }
        }
        seq
    }

    pub fn log_weight(&self, problem: &Problem, cache: &mut OmegaCache) -> Result<f64> {
        let mut total = 0.0;
        for u in 0..self.universe.len() {
            total += cache.sequence_log_weight(problem, self.universe[u], &self.sequence(u))?;
        }
        Ok(total)
    }

    fn taken_by_other(&self, scan: usize, u: usize, alpha: i32) -> bool {
        alpha > 0 && {
            let own = (self.values[scan - 1][u] == alpha) as u32;
            self.taken[scan - 1][alpha as usize] > own
        }
    }

    fn point_mass(&self, scan: usize, label: Label) -> ConditionalTable {
        let mut log_weights = vec![f64::NEG_INFINITY; self.counts[scan - 1] + 2];
        log_weights[0] = 0.0;
        ConditionalTable {
            scan,
            label,
            log_weights,
        }
    }
}

fn index_of(state: &GibbsState, scan: usize, label: Label) -> Result<usize> {
    if scan == 0 || scan > state.scans() {
        return Err(Error::InvalidHistory(format!("scan {scan} outside 1..={}", state.scans())));
    }
    state.index.get(&label).copied().ok_or(Error::LabelNotInWindow(label))
}

/// Conditional of one value given the rest of the same scan and the past:
/// `omega_j(alpha)`, zero for positive values held by another label.
pub fn factor_conditional(
    problem: &Problem,
    cache: &mut OmegaCache,
    state: &GibbsState,
    scan: usize,
    label: Label,
) -> Result<ConditionalTable> {
    let u = index_of(state, scan, label)?;
    if !state.in_domain(scan, u) {
        return Ok(state.point_mass(scan, label));
    }
    let mut log_weights = cache.next_scan_factors(problem, label, &state.prefix(u, scan))?;
    for (i, w) in log_weights.iter_mut().enumerate() {
        if state.taken_by_other(scan, u, i as i32 - 1) {
            *w = f64::NEG_INFINITY;
        }
    }
    Ok(ConditionalTable {
        scan,
        label,
        log_weights,
    })
}

/// Conditional of one value given every other value of a valid history:
/// the product of the label's factors from `scan` on, with death allowed
/// only when the label is not alive at the next scan.
pub fn full_conditional(
    problem: &Problem,
    cache: &mut OmegaCache,
    state: &GibbsState,
    scan: usize,
    label: Label,
) -> Result<ConditionalTable> {
    let u = index_of(state, scan, label)?;
    if !state.in_domain(scan, u) {
        return Ok(state.point_mass(scan, label));
    }
    cache.maybe_flush();
    let k = state.scans();
    let prefix = cache.walk(problem, label, &state.prefix(u, scan))?;
    let base = cache.cum(label, prefix);
    let alive_next = scan < k && state.values[scan][u] >= 0;
    let m = state.counts[scan - 1] as i32;
    let mut log_weights = Vec::with_capacity(m as usize + 2);
    for alpha in -1..=m {
        if (alpha < 0 && alive_next) || state.taken_by_other(scan, u, alpha) {
            log_weights.push(f64::NEG_INFINITY);
            continue;
        }
        let mut node = cache.child(problem, label, prefix, alpha)?;
        if alpha >= 0 {
            for i in scan + 1..=k {
                let v = state.values[i - 1][u];
                node = cache.child(problem, label, node, v)?;
                if v < 0 {
                    break;
                }
            }
        }
        log_weights.push(cache.cum(label, node) - base);
    }
    Ok(ConditionalTable {
        scan,
        label,
        log_weights,
    })
}

/// Gibbs chain over one scan with fixed per-label factor tables. Calls
/// `visit` with every iterate, the initial one included.
fn single_scan_chain<F>(
    tables: &[Vec<f64>],
    measurements: usize,
    iterations: usize,
    init: Initialization,
    rng: &mut ChaCha8Rng,
    mut visit: F,
) -> Result<Vec<i32>>
where
    F: FnMut(&[i32]),
{
    let start = match init {
        Initialization::AllZeros => 0,
        Initialization::AllNegative => -1,
    };
    let mut values = vec![start; tables.len()];
    let mut taken = vec![0u32; measurements + 1];
    visit(&values);
    let mut eta = vec![0.0; measurements + 2];
    for _ in 1..iterations {
        for n in 0..tables.len() {
            let own = values[n];
            for (i, e) in eta.iter_mut().enumerate() {
                let alpha = i as i32 - 1;
                let blocked = alpha > 0 && taken[alpha as usize] > (own == alpha) as u32;
                *e = if blocked { f64::NEG_INFINITY } else { tables[n][i] };
            }
            let alpha = sample_index(&eta, 1.0, rng)? as i32 - 1;
            if own > 0 {
                taken[own as usize] -= 1;
            }
            if alpha > 0 {
                taken[alpha as usize] += 1;
            }
            values[n] = alpha;
        }
        visit(&values);
    }
    Ok(values)
}

/// Factor tables for every label of the scan-`scan` domain of `history`
/// (which covers scans `1..scan`).
fn scan_tables(
    problem: &Problem,
    cache: &mut OmegaCache,
    history: &AssociationHistory,
    scan: usize,
) -> Result<(Vec<Label>, Vec<Vec<f64>>)> {
    let domain = scan_domain(&history.live_at(scan - 1), problem.birth_labels(scan));
    let mut tables = Vec::with_capacity(domain.len());
    for &label in &domain {
        let prefix: Vec<i32> = (label.birth_time..scan).map(|i| history.value(label, i)).collect();
        tables.push(cache.next_scan_factors(problem, label, &prefix)?);
    }
    Ok((domain, tables))
}

/// A distinct sampled extension of a history by one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanSample {
    pub map: AssociationMap,
    /// Sum of the log factors of the new scan.
    pub log_increment: f64,
    pub count: usize,
}

/// Runs the scan-`scan` factor chain for `iterations` iterates conditioned
/// on `history` and returns every distinct iterate with its log increment,
/// ordered by map.
pub fn sample_scan_extensions(
    problem: &Problem,
    cache: &mut OmegaCache,
    history: &AssociationHistory,
    iterations: usize,
    init: Initialization,
    seed: u64,
) -> Result<Vec<ScanSample>> {
    let scan = history.len() + 1;
    if scan > problem.scans() {
        return Err(Error::InvalidHistory(format!("no measurements for scan {scan}")));
    }
    let (domain, tables) = scan_tables(problem, cache, history, scan)?;
    let m = problem.measurement_count(scan);
    let mut rng = seed::rng(seed, &[scan as u64]);
    let mut seen: BTreeMap<Vec<i32>, usize> = BTreeMap::new();
    single_scan_chain(&tables, m, iterations.max(1), init, &mut rng, |values| {
        *seen.entry(values.to_vec()).or_insert(0) += 1;
    })?;
    Ok(seen
        .into_iter()
        .map(|(values, count)| scan_sample(scan, m, &domain, &tables, &values, count))
        .collect())
}

fn scan_sample(scan: usize, m: usize, domain: &[Label], tables: &[Vec<f64>], values: &[i32], count: usize) -> ScanSample {
    let log_increment = tables.iter().zip(values).map(|(t, &v)| t[(v + 1) as usize]).sum();
    let entries = domain.iter().copied().zip(values.iter().copied()).collect();
    ScanSample {
        map: AssociationMap::new(scan, m, entries),
        log_increment,
        count,
    }
}

/// Every valid extension of `history` by one scan with its log increment.
pub fn enumerate_scan_extensions(
    problem: &Problem,
    cache: &mut OmegaCache,
    history: &AssociationHistory,
) -> Result<Vec<ScanSample>> {
    let scan = history.len() + 1;
    if scan > problem.scans() {
        return Err(Error::InvalidHistory(format!("no measurements for scan {scan}")));
    }
    let (domain, tables) = scan_tables(problem, cache, history, scan)?;
    let m = problem.measurement_count(scan);
    let mut out = Vec::new();
    for_each_positive_one_to_one(domain.len(), m, |values| {
        out.push(scan_sample(scan, m, &domain, &tables, values, 1));
    });
    Ok(out)
}

/// Samples a history over scans `1..=k` one scan at a time: scan `j` is
/// the last iterate of a `T_j`-iterate Gibbs chain targeting the factor
/// conditional given the scans before it.
pub fn sample_factor_chain(
    problem: &Problem,
    cache: &mut OmegaCache,
    k: usize,
    config: &SamplerConfig,
) -> Result<AssociationHistory> {
    config.validate()?;
    if k > problem.scans() {
        return Err(Error::InvalidConfig(format!("{k} scans requested, problem has {}", problem.scans())));
    }
    let mut rng = seed::rng(config.seed, &[0xFAC7]);
    let mut history = AssociationHistory::new();
    for scan in 1..=k {
        let (domain, tables) = scan_tables(problem, cache, &history, scan)?;
        let m = problem.measurement_count(scan);
        let values = single_scan_chain(&tables, m, config.scan_iterations(scan), config.init, &mut rng, |_| {})?;
        let entries = domain.into_iter().zip(values).collect();
        history.push(AssociationMap::new(scan, m, entries))?;
    }
    Ok(history)
}

/// One full Gibbs sweep over every scan and every label of each domain.
fn sweep(
    problem: &Problem,
    cache: &mut OmegaCache,
    state: &mut GibbsState,
    inverse_temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for scan in 1..=state.scans() {
        let domain: Vec<usize> = state.domain_indices(scan).collect();
        for u in domain {
            let table = full_conditional(problem, cache, state, scan, state.universe[u])?;
            let alpha = table.sample(rng, inverse_temperature)?;
            state.assign(scan, u, alpha);
        }
    }
    Ok(())
}

/// A distinct history visited by a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub history: AssociationHistory,
    pub count: usize,
    pub log_weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostic {
    pub iteration: usize,
    pub log_weight: f64,
    pub distinct: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GibbsRun {
    /// Distinct histories after burn-in, ordered by history key.
    pub samples: Vec<Sample>,
    pub diagnostics: Vec<Diagnostic>,
}

impl GibbsRun {
    /// The highest-weight distinct sample.
    pub fn best(&self) -> Option<&Sample> {
        self.samples
            .iter()
            .reduce(|a, b| if b.log_weight > a.log_weight { b } else { a })
    }

    pub fn iterates(&self) -> usize {
        self.samples.iter().map(|s| s.count).sum()
    }
}

/// Full Gibbs sampler over scans `1..=init.len()` started from `init`.
/// Returns `T` iterates (the initial state is the first) minus burn-in,
/// merged by history. The annealing schedule is not used here.
pub fn run_full_gibbs(
    problem: &Problem,
    cache: &mut OmegaCache,
    init: &AssociationHistory,
    config: &SamplerConfig,
) -> Result<GibbsRun> {
    let mut pool = SamplePool::default();
    pool.run_chain(problem, cache, init, config)?;
    Ok(pool.finish())
}

/// Distinct histories visited by one or more chains, with diagnostics
/// numbered across chains in the order they ran.
#[derive(Clone, Debug, Default)]
pub struct SamplePool {
    seen: BTreeMap<HistoryKey, Sample>,
    diagnostics: Vec<Diagnostic>,
}

impl SamplePool {
    pub fn distinct(&self) -> usize {
        self.seen.len()
    }

    /// Runs one full Gibbs chain as [`run_full_gibbs`] and adds its iterates.
    pub fn run_chain(
        &mut self,
        problem: &Problem,
        cache: &mut OmegaCache,
        init: &AssociationHistory,
        config: &SamplerConfig,
    ) -> Result<()> {
        config.validate()?;
        let mut state = GibbsState::from_history(problem, init)?;
        let mut rng = seed::rng(config.seed, &[0xF011]);
        let offset = self.diagnostics.last().map_or(0, |d| d.iteration);
        for t in 0..config.iterations {
            if t > 0 {
                sweep(problem, cache, &mut state, 1.0, &mut rng)?;
            }
            if t < config.burn_in {
                continue;
            }
            let history = state.to_history();
            let key = history.key();
            let log_weight = match self.seen.get_mut(&key) {
                Some(s) => {
                    s.count += 1;
                    s.log_weight
                }
                None => {
                    let log_weight = state.log_weight(problem, cache)?;
                    self.seen.insert(
                        key,
                        Sample {
                            history,
                            count: 1,
                            log_weight,
                        },
                    );
                    log_weight
                }
            };
            self.diagnostics.push(Diagnostic {
                iteration: offset + t + 1 - config.burn_in,
                log_weight,
                distinct: self.seen.len(),
            });
        }
        Ok(())
    }

    pub fn finish(self) -> GibbsRun {
        GibbsRun {
            samples: self.seen.into_values().collect(),
            diagnostics: self.diagnostics,
        }
    }
}

/// Simulated annealing over histories: full Gibbs sweeps with conditionals
/// raised to `1 / temperature`. Returns the highest-weight history visited,
/// the initial one included. Without `init` the factor sampler provides it.
pub fn anneal_best_history(
    problem: &Problem,
    cache: &mut OmegaCache,
    init: Option<&AssociationHistory>,
    k: usize,
    config: &SamplerConfig,
) -> Result<Sample> {
    config.validate()?;
    let schedule = config
        .annealing
        .ok_or_else(|| Error::InvalidConfig("annealing needs a temperature schedule".into()))?;
    let init = match init {
        Some(h) => h.clone(),
        None => sample_factor_chain(problem, cache, k, config)?,
    };
    let mut state = GibbsState::from_history(problem, &init)?;
    let mut best = Sample {
        log_weight: state.log_weight(problem, cache)?,
        history: init,
        count: 1,
    };
    let mut rng = seed::rng(config.seed, &[0xA77E]);
    let sweeps = config.iterations.saturating_sub(1);
    for t in 0..sweeps {
        let temperature = schedule.temperature(t, sweeps);
        sweep(problem, cache, &mut state, 1.0 / temperature, &mut rng)?;
        let w = state.log_weight(problem, cache)?;
        if w > best.log_weight {
            best = Sample {
                history: state.to_history(),
                count: 1,
                log_weight: w,
            };
        }
    }
    Ok(best)
}

/// Merges sample sets from independent chains by history.
pub fn merge_samples<I>(runs: I) -> Vec<Sample>
where
    I: IntoIterator<Item = Vec<Sample>>,
{
    let mut merged: BTreeMap<HistoryKey, Sample> = BTreeMap::new();
    for run in runs {
        for s in run {
            merged
                .entry(s.history.key())
                .and_modify(|m| m.count += s.count)
                .or_insert(s);
        }
    }
    merged.into_values().collect()
}
