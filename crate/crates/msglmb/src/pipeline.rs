//! Tracking runs, evaluation against truth, and Monte-Carlo repetition.

use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use msglmb_core::gaussian::Retention;
use msglmb_core::gibbs::{OmegaCache, Problem};
use msglmb_core::metrics::{ospa, ospa2, Tracks};
use msglmb_core::multiscan_glmb::{Estimator, MultiScanGlmbDensity};
use msglmb_core::simulator::{generate_measurements, generate_truth, Scenario};
use msglmb_core::smoother::{
    batch_smooth, filter_estimate, BatchReport, SmootherConfig, UpdatePlan, UpdateReport,
};
use msglmb_core::{seed, DMatrix, DVector, Label, Result};
use rayon::prelude::*;

use crate::io::{rows_from_scans, rows_from_segments, tracks_from_rows, EvaluationRow, TrackRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    /// Single-scan GLMB filter.
    Filter,
    /// Recursive multi-scan posterior, one update per scan.
    SmoothRecursive,
    /// Multi-scan posterior sampled over the whole window at once.
    SmoothBatch,
}

#[derive(Clone, Debug)]
pub struct TrackSettings {
    pub mode: Mode,
    pub smoother: SmootherConfig,
    pub estimator: Estimator,
    /// Spread each update's per-component sampling over the rayon pool.
    pub parallel: bool,
}

impl TrackSettings {
    pub fn new(mode: Mode, smoother: SmootherConfig) -> Self {
        TrackSettings {
            mode,
            smoother,
            estimator: Estimator::BestComponent,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug)]
pub enum RunDiagnostics {
    Updates(Vec<UpdateReport>),
    Batch(BatchReport),
}

#[derive(Clone, Debug)]
pub struct TrackOutput {
    pub rows: Vec<TrackRow>,
    pub density: MultiScanGlmbDensity,
    pub diagnostics: RunDiagnostics,
}

fn update(
    prior: &MultiScanGlmbDensity,
    problem: &Problem,
    cache: &mut OmegaCache,
    config: &SmootherConfig,
    parallel: bool,
) -> Result<(MultiScanGlmbDensity, UpdateReport)> {
    let plan = UpdatePlan::new(prior, problem, config)?;
    let candidates = if parallel {
        let per: Vec<_> = (0..plan.len())
            .into_par_iter()
            .map_init(OmegaCache::new, |c, i| plan.extend_component(i, c))
            .collect::<Result<_>>()?;
        per.into_iter().flatten().collect()
    } else {
        let mut all = Vec::new();
        for i in 0..plan.len() {
            all.extend(plan.extend_component(i, cache)?);
        }
        all
    };
    plan.finish(candidates)
}

/// Runs one tracker over every scan of `problem`.
pub fn track(problem: &Problem, settings: &TrackSettings) -> Result<TrackOutput> {
    settings.smoother.validate()?;
    let mut cache = OmegaCache::new();
    match settings.mode {
        Mode::Filter | Mode::SmoothRecursive => {
            let mut config = settings.smoother.clone();
            if settings.mode == Mode::Filter {
                config.retention = Retention::LastBlock;
            }
            let mut density = MultiScanGlmbDensity::empty_prior();
            let mut reports = Vec::with_capacity(problem.scans());
            let mut per_scan = Vec::with_capacity(problem.scans());
            for _ in 0..problem.scans() {
                let (next, report) = update(&density, problem, &mut cache, &config, settings.parallel)?;
                density = next;
                log::debug!(
                    "scan {}: {} candidates, kept {}",
                    report.scan,
                    report.candidates,
                    report.truncation.kept
                );
                if settings.mode == Mode::Filter {
                    per_scan.push(filter_estimate(&density));
                }
                reports.push(report);
            }
            let rows = if settings.mode == Mode::Filter {
                rows_from_scans(&per_scan, 1)
            } else {
                rows_from_segments(&density.estimate(settings.estimator)?)
            };
            Ok(TrackOutput {
                rows,
                density,
                diagnostics: RunDiagnostics::Updates(reports),
            })
        }
        Mode::SmoothBatch => {
            let (density, report) = batch_smooth(problem, &mut cache, &settings.smoother)?;
            log::debug!("batch: {} distinct histories", report.distinct);
            Ok(TrackOutput {
                rows: rows_from_segments(&density.estimate(settings.estimator)?),
                density,
                diagnostics: RunDiagnostics::Batch(report),
            })
        }
    }
}

/// Applies `h` to every state, e.g. to compare positions only.
pub fn project(tracks: &Tracks, h: &DMatrix<f64>) -> Tracks {
    tracks
        .iter()
        .map(|(l, t)| (*l, t.iter().map(|(k, x)| (*k, h * x)).collect()))
        .collect()
}

/// Selection matrix keeping coordinates `dims` of a `dim`-vector.
pub fn selection(dims: &[usize], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dims.len(), dim, |i, j| if dims[i] == j { 1.0 } else { 0.0 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSettings {
    pub c: f64,
    pub p: f64,
    pub window: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            c: 100.0,
            p: 1.0,
            window: 10,
        }
    }
}

fn states_at(tracks: &Tracks, scan: usize) -> Vec<DVector<f64>> {
    tracks.values().filter_map(|t| t.get(&scan).cloned()).collect()
}

/// Per-scan OSPA and windowed OSPA² of `estimate` against `truth`.
pub fn evaluate(truth: &Tracks, estimate: &Tracks, scans: RangeInclusive<usize>, m: MetricSettings) -> Vec<EvaluationRow> {
    let second = ospa2(estimate, truth, m.c, m.p, m.window, scans.clone());
    scans
        .zip(second)
        .map(|(k, o2)| EvaluationRow {
            scan: k,
            ospa: ospa(&states_at(estimate, k), &states_at(truth, k), m.c, m.p),
            ospa2: o2,
        })
        .collect()
}

/// Labels whose estimated scans are not contiguous.
pub fn fragmented_labels(rows: &[TrackRow]) -> Vec<Label> {
    let tracks = tracks_from_rows(rows);
    tracks
        .iter()
        .filter(|(_, t)| {
            let first = t.keys().next().copied().unwrap_or(0);
            let last = t.keys().next_back().copied().unwrap_or(0);
            last + 1 - first != t.len()
        })
        .map(|(l, _)| *l)
        .collect()
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub run: usize,
    pub seed: u64,
    pub truth: Vec<TrackRow>,
    pub measurements: Vec<Vec<DVector<f64>>>,
    pub dropped_measurements: usize,
    pub output: TrackOutput,
    pub evaluation: Vec<EvaluationRow>,
    pub fragmented: Vec<Label>,
}

/// Seed of the scenario of run `run`; the sampler seed is derived from it.
pub fn run_seed(base: u64, run: usize) -> u64 {
    seed::derive(base, &[run as u64])
}

/// Simulates, tracks and evaluates one run. Metrics use `H x`.
pub fn run_once(template: &Scenario, run: usize, base_seed: u64, settings: &TrackSettings, metric: MetricSettings) -> Result<RunOutput> {
    let seed = run_seed(base_seed, run);
    let scenario = Scenario {
        seed,
        ..template.clone()
    };
    let truth = generate_truth(&scenario)?;
    let raw = generate_measurements(&truth, &scenario)?;
    let model = &scenario.model;
    let mut dropped = 0;
    let measurements: Vec<_> = raw
        .into_iter()
        .map(|z| {
            let n = z.len();
            let kept = model.admit(z);
            dropped += n - kept.len();
            kept
        })
        .collect();
    let problem = Problem::new(model.clone(), measurements.clone())?;
    let mut settings = settings.clone();
    settings.smoother.sampler.seed = seed::derive(seed, &[1]);
    let output = track(&problem, &settings)?;
    let truth_rows = rows_from_scans(
        &(1..=scenario.scans).map(|k| truth.states_at(k).to_vec()).collect::<Vec<_>>(),
        1,
    );
    let h = &model.measurement.observation;
    let evaluation = evaluate(
        &project(&tracks_from_rows(&truth_rows), h),
        &project(&tracks_from_rows(&output.rows), h),
        1..=scenario.scans,
        metric,
    );
    let fragmented = fragmented_labels(&output.rows);
    Ok(RunOutput {
        run,
        seed,
        truth: truth_rows,
        measurements,
        dropped_measurements: dropped,
        output,
        evaluation,
        fragmented,
    })
}

/// Runs `runs` independent repetitions on `jobs` worker threads. Results
/// are in run order and do not depend on `jobs`.
pub fn monte_carlo(
    template: &Scenario,
    runs: usize,
    jobs: usize,
    base_seed: u64,
    settings: &TrackSettings,
    metric: MetricSettings,
) -> Result<Vec<RunOutput>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|_| msglmb_core::Error::InvalidConfig("cannot start worker threads".into()))?;
    pool.install(|| {
        (0..runs)
            .into_par_iter()
            .map(|r| run_once(template, r, base_seed, settings, metric))
            .collect()
    })
}

/// Per-scan mean of the evaluation rows over runs.
pub fn mean_evaluation(runs: &[Vec<EvaluationRow>]) -> Vec<EvaluationRow> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let n = runs.len() as f64;
    (0..first.len())
        .map(|i| {
            let mut row = EvaluationRow {
                scan: first[i].scan,
                ..Default::default()
            };
            for r in runs {
                let e = &r[i];
                row.ospa.total += e.ospa.total / n;
                row.ospa.localization += e.ospa.localization / n;
                row.ospa.cardinality += e.ospa.cardinality / n;
                row.ospa2.total += e.ospa2.total / n;
                row.ospa2.localization += e.ospa2.localization / n;
                row.ospa2.cardinality += e.ospa2.cardinality / n;
            }
            row
        })
        .collect()
}

/// Scans covered by either track set, starting at 1.
pub fn scan_span(a: &Tracks, b: &Tracks) -> Option<RangeInclusive<usize>> {
    let last: BTreeSet<usize> = a.values().chain(b.values()).filter_map(|t| t.keys().next_back().copied()).collect();
    last.last().map(|&k| 1..=k)
}
