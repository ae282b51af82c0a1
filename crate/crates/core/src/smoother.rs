//! Posterior drivers: recursive and batch multi-scan smoothing, and the
//! single-scan GLMB filter.
//!
//! All three share the weight cache of [`crate::gibbs`], so a history gets
//! the same weight whichever driver produced it. They differ only in how
//! candidate histories are proposed and in how much of each trajectory
//! density is kept ([`Retention`]).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::association::{enumerate_valid_histories, AssociationHistory, AssociationMap, HistoryKey};
use crate::error::{Error, Result};
use crate::gaussian::{marginal_last_block, scan_update, GaussianTrajectoryDensity, Outcome, Predecessor, Retention};
use crate::gibbs::{
    enumerate_scan_extensions, history_log_weight, sample_factor_chain, sample_scan_extensions,
    Diagnostic, OmegaCache, Problem, SamplePool, SamplerConfig,
};
use crate::labeled_state::{Label, LabeledState};
use crate::multiscan_glmb::{summarize_truncation, MultiScanGlmbComponent, MultiScanGlmbDensity, Truncation};
use crate::seed;

/// How candidate histories are generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Proposal {
    #[default]
    Gibbs,
    /// Every valid history. Only feasible on tiny instances.
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmootherConfig {
    /// Component budget after each update.
    pub components: usize,
    pub sampler: SamplerConfig,
    pub proposal: Proposal,
    pub retention: Retention,
    /// Independent full Gibbs chains merged in batch mode, each started
    /// from its own factor-sampler draw.
    pub chains: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            components: 1000,
            sampler: SamplerConfig::default(),
            proposal: Proposal::Gibbs,
            retention: Retention::Full,
            chains: 10,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::InvalidConfig("component budget must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::InvalidConfig("at least one chain is needed".into()));
        }
        self.sampler.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateReport {
    pub scan: usize,
    /// Distinct candidate histories before truncation.
    pub candidates: usize,
    pub truncation: Truncation,
}

/// A proposed one-scan extension of a prior component.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub parent: usize,
    pub map: AssociationMap,
    pub log_weight: f64,
}

/// One recursive update split into independent per-component extensions
/// and a final merge, so callers may run the extensions in parallel.
#[derive(Debug)]
pub struct UpdatePlan<'a> {
    prior: &'a MultiScanGlmbDensity,
    problem: &'a Problem,
    config: &'a SmootherConfig,
    scan: usize,
    iterations: Vec<usize>,
}

impl<'a> UpdatePlan<'a> {
    /// Gibbs iterates are spread over prior components in proportion to
    /// the square root of their weights, at least two each, for a total of
    /// about `iterations` times the number of components.
    pub fn new(prior: &'a MultiScanGlmbDensity, problem: &'a Problem, config: &'a SmootherConfig) -> Result<Self> {
        config.validate()?;
        let scan = prior.scan() + 1;
        if scan > problem.scans() {
            return Err(Error::InvalidConfig(format!(
                "no measurements for scan {scan}; the problem has {} scans",
                problem.scans()
            )));
        }
        let roots: Vec<f64> = prior.weights().iter().map(|w| libm::sqrt(*w)).collect();
        let total: f64 = roots.iter().sum();
        let budget = (config.sampler.iterations * prior.len()) as f64;
        let iterations = roots
            .iter()
            .map(|r| {
                let share = if total > 0.0 { budget * r / total } else { 0.0 };
                (libm::round(share) as usize).max(2)
            })
            .collect();
        Ok(UpdatePlan {
            prior,
            problem,
            config,
            scan,
            iterations,
        })
    }

    pub fn len(&self) -> usize {
        self.prior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior.is_empty()
    }

    pub fn scan(&self) -> usize {
        self.scan
    }

    /// Proposes extensions of prior component `index`.
    pub fn extend_component(&self, index: usize, cache: &mut OmegaCache) -> Result<Vec<Candidate>> {
        let parent = &self.prior.components()[index];
        let samples = match self.config.proposal {
            Proposal::Gibbs => sample_scan_extensions(
                self.problem,
                cache,
                &parent.history,
                self.iterations[index],
                self.config.sampler.init,
                seed::derive(self.config.sampler.seed, &[self.scan as u64, index as u64]),
            )?,
            Proposal::Exhaustive => enumerate_scan_extensions(self.problem, cache, &parent.history)?,
        };
        Ok(samples
            .into_iter()
            .filter(|s| s.log_increment > f64::NEG_INFINITY)
            .map(|s| Candidate {
                parent: index,
                map: s.map,
                log_weight: parent.log_weight + s.log_increment,
            })
            .collect())
    }

    /// Keeps the best candidates within the budget and builds their
    /// trajectory densities.
    pub fn finish(&self, mut candidates: Vec<Candidate>) -> Result<(MultiScanGlmbDensity, UpdateReport)> {
        if candidates.is_empty() {
            return Err(Error::Degenerate("update produced no candidate with positive weight"));
        }
        let parent_keys: Vec<HistoryKey> = self.prior.components().iter().map(|c| c.history.key()).collect();
        let map_keys = |c: &Candidate| -> Vec<(Label, i32)> {
            c.map.entries().iter().filter(|e| e.1 >= 0).copied().collect()
        };
        candidates.sort_by(|a, b| {
            b.log_weight
                .total_cmp(&a.log_weight)
                .then_with(|| parent_keys[a.parent].cmp(&parent_keys[b.parent]))
                .then_with(|| map_keys(a).cmp(&map_keys(b)))
        });
        candidates.dedup_by(|a, b| a.parent == b.parent && a.map == b.map);
        let sorted: Vec<f64> = candidates.iter().map(|c| c.log_weight).collect();
        let truncation = summarize_truncation(&sorted, self.config.components);
        candidates.truncate(self.config.components);

        let model = self.problem.model();
        let zs = self.problem.measurements(self.scan);
        let mut interned: BTreeMap<(Label, usize, i32), Arc<GaussianTrajectoryDensity>> = BTreeMap::new();
        let mut components = Vec::with_capacity(candidates.len());
        for c in candidates {
            let parent = &self.prior.components()[c.parent];
            let mut trajectories = parent.trajectories.clone();
            for &(label, value) in c.map.entries() {
                let alive_before = self.scan > 1 && parent.history.value(label, self.scan - 1) >= 0;
                let (pred, ptr) = if alive_before {
                    let t = &parent.trajectories[&label];
                    (Predecessor::Alive(t.as_ref()), Arc::as_ptr(t) as usize)
                } else {
                    let b = model.birth(label).ok_or_else(|| {
                        Error::InvalidHistory(format!("{label} is not a birth label of the model"))
                    })?;
                    (Predecessor::Birth(b), 0)
                };
                if value < 0 {
                    continue;
                }
                let traj = match interned.get(&(label, ptr, value)) {
                    Some(t) => t.clone(),
                    None => {
                        let update = scan_update(pred, value, model, self.scan, zs, self.config.retention)?;
                        let Outcome::Alive(t) = update.outcome else {
                            return Err(Error::Numerical("live association without a density"));
                        };
                        let t = Arc::new(t);
                        interned.insert((label, ptr, value), t.clone());
                        t
                    }
                };
                trajectories.insert(label, traj);
            }
            components.push(MultiScanGlmbComponent {
                history: parent.history.extended(c.map)?,
                log_weight: c.log_weight,
                trajectories,
            });
        }
        let kept = components.len();
        let mut density = MultiScanGlmbDensity::new(self.scan, components)?;
        density.normalize().map_err(|_| Error::Degenerate("every candidate of the update has zero weight"))?;
        Ok((
            density,
            UpdateReport {
                scan: self.scan,
                candidates: kept + truncation.discarded,
                truncation,
            },
        ))
    }
}

/// One recursive posterior update from scans `0..k-1` to `0..k`, where `k`
/// is one past the prior's last scan.
pub fn smooth_update(
    prior: &MultiScanGlmbDensity,
    problem: &Problem,
    cache: &mut OmegaCache,
    config: &SmootherConfig,
) -> Result<(MultiScanGlmbDensity, UpdateReport)> {
    let plan = UpdatePlan::new(prior, problem, config)?;
    let mut candidates = Vec::new();
    for i in 0..plan.len() {
        candidates.extend(plan.extend_component(i, cache)?);
    }
    plan.finish(candidates)
}

/// The GLMB filter update: the recursive update keeping only the latest
/// block of each trajectory density.
pub fn glmb_filter_update(
    prior: &MultiScanGlmbDensity,
    problem: &Problem,
    cache: &mut OmegaCache,
    config: &SmootherConfig,
) -> Result<(MultiScanGlmbDensity, UpdateReport)> {
    let config = SmootherConfig {
        retention: Retention::LastBlock,
        ..config.clone()
    };
    smooth_update(prior, problem, cache, &config)
}

/// Runs [`smooth_update`] over every scan of `problem` from the empty prior.
pub fn recursive_smooth(
    problem: &Problem,
    cache: &mut OmegaCache,
    config: &SmootherConfig,
) -> Result<(MultiScanGlmbDensity, Vec<UpdateReport>)> {
    let mut density = MultiScanGlmbDensity::empty_prior();
    let mut reports = Vec::with_capacity(problem.scans());
    for _ in 0..problem.scans() {
        let (next, report) = smooth_update(&density, problem, cache, config)?;
        density = next;
        reports.push(report);
    }
    Ok((density, reports))
}

/// Output of a filter run.
#[derive(Clone, Debug)]
pub struct FilterRun {
    /// Labeled state estimates, index `j - 1` for scan `j`.
    pub estimates: Vec<Vec<LabeledState>>,
    pub density: MultiScanGlmbDensity,
    pub reports: Vec<UpdateReport>,
}

/// Runs the GLMB filter over every scan and estimates after each update.
pub fn run_filter(problem: &Problem, cache: &mut OmegaCache, config: &SmootherConfig) -> Result<FilterRun> {
    let mut density = MultiScanGlmbDensity::empty_prior();
    let mut estimates = Vec::with_capacity(problem.scans());
    let mut reports = Vec::with_capacity(problem.scans());
    for _ in 0..problem.scans() {
        let (next, report) = glmb_filter_update(&density, problem, cache, config)?;
        density = next;
        estimates.push(filter_estimate(&density));
        reports.push(report);
    }
    Ok(FilterRun {
        estimates,
        density,
        reports,
    })
}

/// Labeled states at the density's last scan: the most probable number of
/// live labels, then the highest-weight component with that many.
pub fn filter_estimate(density: &MultiScanGlmbDensity) -> Vec<LabeledState> {
    let k = density.scan();
    let live: Vec<usize> = density.components().iter().map(|c| c.history.live_at(k).len()).collect();
    let n_max = live.iter().copied().max().unwrap_or(0);
    let mut p = alloc::vec![0.0; n_max + 1];
    for (n, w) in live.iter().zip(density.weights()) {
        p[*n] += w;
    }
    let mut n_star = 0;
    for (n, v) in p.iter().enumerate() {
        if *v > p[n_star] {
            n_star = n;
        }
    }
    let Some(best) = density.components().iter().zip(&live).find(|(_, &n)| n == n_star).map(|(c, _)| c) else {
        return Vec::new();
    };
    best.history
        .live_at(k)
        .into_iter()
        .map(|l| LabeledState::new(marginal_last_block(&best.trajectories[&l]).mean, l))
        .collect()
}

/// Builds the component of `history` with trajectory densities rebuilt
/// from the model, sharing densities through `interned`.
pub fn materialize(
    problem: &Problem,
    history: &AssociationHistory,
    log_weight: f64,
    retention: Retention,
    interned: &mut BTreeMap<(Label, Vec<i32>), Arc<GaussianTrajectoryDensity>>,
) -> Result<MultiScanGlmbComponent> {
    let model = problem.model();
    let mut trajectories = BTreeMap::new();
    for label in history.labels_ever_alive() {
        let seq = history.label_sequence(label);
        let live = seq.iter().take_while(|&&v| v >= 0).count();
        let mut current: Option<Arc<GaussianTrajectoryDensity>> = None;
        for n in 1..=live {
            let key = (label, seq[..n].to_vec());
            if let Some(t) = interned.get(&key) {
                current = Some(t.clone());
                continue;
            }
            let scan = label.birth_time + n - 1;
            let pred = match &current {
                Some(t) => Predecessor::Alive(t.as_ref()),
                None => Predecessor::Birth(
                    model
                        .birth(label)
                        .ok_or_else(|| Error::InvalidHistory(format!("{label} is not a birth label of the model")))?,
                ),
            };
            let update = scan_update(pred, seq[n - 1], model, scan, problem.measurements(scan), retention)?;
            let Outcome::Alive(t) = update.outcome else {
                return Err(Error::Numerical("live association without a density"));
            };
            let t = Arc::new(t);
            interned.insert(key, t.clone());
            current = Some(t);
        }
        if let Some(t) = current {
            trajectories.insert(label, t);
        }
    }
    Ok(MultiScanGlmbComponent {
        history: history.clone(),
        log_weight,
        trajectories,
    })
}

/// Diagnostics of a batch run.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchReport {
    pub distinct: usize,
    pub truncation: Truncation,
    pub diagnostics: Vec<Diagnostic>,
}

/// Batch posterior over scans `1..=k`: the factor sampler initializes
/// `chains` full Gibbs chains whose distinct histories become the
/// components, with exact weights, truncated to the budget.
pub fn batch_smooth(
    problem: &Problem,
    cache: &mut OmegaCache,
    config: &SmootherConfig,
) -> Result<(MultiScanGlmbDensity, BatchReport)> {
    config.validate()?;
    let k = problem.scans();
    let (mut scored, diagnostics): (Vec<(AssociationHistory, f64)>, Vec<Diagnostic>) = match config.proposal {
        Proposal::Gibbs => {
            let mut pool = SamplePool::default();
            for c in 0..config.chains {
                let sampler = SamplerConfig {
                    seed: seed::derive(config.sampler.seed, &[c as u64]),
                    ..config.sampler.clone()
                };
                let init = sample_factor_chain(problem, cache, k, &sampler)?;
                pool.run_chain(problem, cache, &init, &sampler)?;
            }
            let run = pool.finish();
            (
                run.samples.into_iter().map(|s| (s.history, s.log_weight)).collect(),
                run.diagnostics,
            )
        }
        Proposal::Exhaustive => {
            let histories = enumerate_valid_histories(problem.births(), &problem.measurement_counts(), k)?;
            let mut scored = Vec::with_capacity(histories.len());
            for h in histories {
                let w = history_log_weight(problem, cache, &h)?;
                scored.push((h, w));
            }
            (scored, Vec::new())
        }
    };
    scored.retain(|(_, w)| *w > f64::NEG_INFINITY);
    if scored.is_empty() {
        return Err(Error::Degenerate("no sampled history has positive weight"));
    }
    let keys: Vec<HistoryKey> = scored.iter().map(|(h, _)| h.key()).collect();
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].1.total_cmp(&scored[a].1).then_with(|| keys[a].cmp(&keys[b])));
    let sorted: Vec<f64> = order.iter().map(|&i| scored[i].1).collect();
    let truncation = summarize_truncation(&sorted, config.components);
    let distinct = scored.len();
    let mut interned = BTreeMap::new();
    let mut components = Vec::with_capacity(truncation.kept);
    for &i in order.iter().take(config.components) {
        let (h, w) = &scored[i];
        components.push(materialize(problem, h, *w, config.retention, &mut interned)?);
    }
    let mut density = MultiScanGlmbDensity::new(k, components)?;
    density.normalize()?;
    Ok((
        density,
        BatchReport {
            distinct,
            truncation,
            diagnostics,
        },
    ))
}
