//! Command-line surface: `simulate`, `track`, `evaluate` and `montecarlo`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use msglmb_core::gibbs::{Problem, SamplerConfig};
use msglmb_core::multiscan_glmb::Estimator;
use msglmb_core::simulator::{generate_measurements, generate_truth, PresetParameters, Scenario};
use msglmb_core::smoother::SmootherConfig;

use crate::error::{AppError, AppResult};
use crate::io::{self, MeasurementFile, ScenarioFile};
use crate::pipeline::{self, MetricSettings, Mode, RunDiagnostics, TrackSettings};

#[derive(Debug, Parser)]
#[command(name = "msglmb", version, about = "Multi-scan GLMB tracking, simulation and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample ground truth and measurements from a scenario.
    Simulate(SimulateArgs),
    /// Estimate trajectories from measurements.
    Track(TrackArgs),
    /// Score estimated tracks against truth with OSPA and OSPA².
    Evaluate(EvaluateArgs),
    /// Repeat simulate, track and evaluate over independent seeds.
    Montecarlo(MonteCarloArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    #[value(name = "v-v-2018")]
    VV2018,
    Desk,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::VV2018 => "v-v-2018",
            Preset::Desk => "desk",
        }
    }

    fn parameters(self) -> PresetParameters {
        match self {
            Preset::VV2018 => PresetParameters::v_v_2018(),
            Preset::Desk => PresetParameters::desk(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Best,
    MapCardinality,
    Existence,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Best => Estimator::BestComponent,
            EstimatorArg::MapCardinality => Estimator::MapCardinality,
            EstimatorArg::Existence => Estimator::ExistenceBased,
        }
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ScenarioSource {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

impl ScenarioSource {
    fn load(&self, seed: Option<u64>) -> AppResult<ScenarioFile> {
        match (&self.scenario, self.preset) {
            (Some(path), _) => {
                let mut file = io::read_scenario(path)?;
                if seed.is_some() {
                    file.seed = seed;
                }
                Ok(file)
            }
            (None, Some(p)) => ScenarioFile::from_preset(p.name(), &p.parameters(), seed.unwrap_or(0)),
            (None, None) => Err(AppError::Config("one of --scenario or --preset is required".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    /// Overrides the scenario file's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for scenario.json, truth.csv and measurements.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrackerArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Component budget of the posterior.
    #[arg(long, default_value_t = 1000)]
    pub components: usize,
    /// Gibbs iterates per component and scan, or of the whole chain in batch mode.
    #[arg(long, default_value_t = 100)]
    pub gibbs_iters: usize,
    /// Independent Gibbs chains merged in batch mode.
    #[arg(long, default_value_t = 10)]
    pub chains: usize,
    /// Estimator applied to the multi-scan posterior.
    #[arg(long, value_enum, default_value_t = EstimatorArg::Best)]
    pub estimator: EstimatorArg,
}

impl TrackerArgs {
    fn settings(&self, seed: u64) -> TrackSettings {
        let smoother = SmootherConfig {
            components: self.components,
            sampler: SamplerConfig {
                iterations: self.gibbs_iters,
                seed,
                ..Default::default()
            },
            chains: self.chains,
            ..Default::default()
        };
        TrackSettings {
            estimator: self.estimator.into(),
            ..TrackSettings::new(self.mode, smoother)
        }
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub measurements: PathBuf,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for the per-component updates; 1 runs sequentially.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory for tracks.csv, tracks.json, density.json and diagnostics.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// OSPA cut-off.
    #[arg(long, default_value_t = 100.0)]
    pub ospa_c: f64,
    /// OSPA order.
    #[arg(long, default_value_t = 1.0)]
    pub ospa_p: f64,
    /// OSPA² window length in scans.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
}

impl MetricArgs {
    fn settings(&self) -> AppResult<MetricSettings> {
        if self.ospa_c.is_nan() || self.ospa_c <= 0.0 {
            return Err(AppError::Config(format!("--ospa-c must be positive, got {}", self.ospa_c)));
        }
        if self.ospa_p.is_nan() || self.ospa_p < 1.0 {
            return Err(AppError::Config(format!("--ospa-p must be at least 1, got {}", self.ospa_p)));
        }
        if self.window == 0 {
            return Err(AppError::Config("--window must be at least 1".into()));
        }
        Ok(MetricSettings {
            c: self.ospa_c,
            p: self.ospa_p,
            window: self.window,
        })
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// State coordinates compared, e.g. `0,2`; all coordinates by default.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Last scan evaluated; defaults to the last scan in either file.
    #[arg(long)]
    pub scans: Option<usize>,
    /// Evaluation CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Base seed; each run derives its own.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory: one `run_NNN` directory per run plus mean.csv.
    #[arg(long)]
    pub out: PathBuf,
}

fn create_dir(path: &Path) -> AppResult<()> {
    fs::create_dir_all(path).map_err(|e| AppError::io(path, e))
}

type Measurements = Vec<Vec<msglmb_core::DVector<f64>>>;

fn truth_rows(scenario: &Scenario) -> AppResult<(Vec<io::TrackRow>, Measurements)> {
    let truth = generate_truth(scenario)?;
    let z = generate_measurements(&truth, scenario)?;
    let per_scan: Vec<_> = (1..=scenario.scans).map(|k| truth.states_at(k).to_vec()).collect();
    Ok((io::rows_from_scans(&per_scan, 1), z))
}

pub fn simulate(args: &SimulateArgs) -> AppResult<()> {
    let file = args.source.load(args.seed)?;
    let scenario = file.to_scenario(None)?;
    let (truth, z) = truth_rows(&scenario)?;
    create_dir(&args.out)?;
    io::write_scenario(&args.out.join("scenario.json"), &file)?;
    io::write_tracks(&args.out.join("truth.csv"), &truth, scenario.model.state_dim())?;
    io::write_measurements(&args.out.join("measurements.json"), &MeasurementFile::new(&z))?;
    log::info!(
        "simulated {} scans, {} truth rows, {} measurements",
        scenario.scans,
        truth.len(),
        z.iter().map(Vec::len).sum::<usize>()
    );
    Ok(())
}

fn write_outputs(dir: &Path, out: &pipeline::TrackOutput, dim: usize) -> AppResult<()> {
    create_dir(dir)?;
    io::write_tracks(&dir.join("tracks.csv"), &out.rows, dim)?;
    io::write_tracks_json(&dir.join("tracks.json"), &out.rows)?;
    io::write_density(&dir.join("density.json"), &out.density)?;
    let diagnostics = dir.join("diagnostics.csv");
    match &out.diagnostics {
        RunDiagnostics::Updates(reports) => io::write_update_reports(&diagnostics, reports),
        RunDiagnostics::Batch(report) => io::write_sampler_diagnostics(&diagnostics, &report.diagnostics),
    }
}

pub fn track(args: &TrackArgs) -> AppResult<()> {
    if args.jobs == 0 {
        return Err(AppError::Config("--jobs must be at least 1".into()));
    }
    let scenario = io::read_scenario(&args.scenario)?.to_scenario(None)?;
    let model = scenario.model;
    let raw = io::read_measurements(&args.measurements)?.to_vectors(model.measurement_dim())?;
    let mut measurements = Vec::with_capacity(raw.len());
    for (k, z) in raw.into_iter().enumerate() {
        let n = z.len();
        let kept = model.admit(z);
        if kept.len() < n {
            log::warn!("scan {}: dropped {} measurements outside the clutter region", k + 1, n - kept.len());
        }
        measurements.push(kept);
    }
    let dim = model.state_dim();
    let problem = Problem::new(model, measurements)?;
    let mut settings = args.tracker.settings(args.seed);
    settings.parallel = args.jobs > 1;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| AppError::Config(format!("cannot start {} worker threads: {e}", args.jobs)))?;
    let out = pool.install(|| pipeline::track(&problem, &settings))?;
    log::info!("{} components, {} estimate rows", out.density.len(), out.rows.len());
    write_outputs(&args.out, &out, dim)
}

pub fn evaluate(args: &EvaluateArgs) -> AppResult<()> {
    let metric = args.metric.settings()?;
    log::info!("OSPA c={} p={}, OSPA² window {}", metric.c, metric.p, metric.window);
    let truth_rows = io::read_tracks(&args.truth)?;
    let est_rows = io::read_tracks(&args.estimate)?;
    let dim = truth_rows.first().or(est_rows.first()).map_or(0, |r| r.x.len());
    if let Some(r) = truth_rows.iter().chain(&est_rows).find(|r| r.x.len() != dim) {
        return Err(AppError::Config(format!(
            "state of {} at scan {} has {} coordinates, expected {dim}",
            r.label,
            r.scan,
            r.x.len()
        )));
    }
    let mut truth = io::tracks_from_rows(&truth_rows);
    let mut estimate = io::tracks_from_rows(&est_rows);
    if let Some(dims) = &args.dims {
        if let Some(&bad) = dims.iter().find(|&&i| i >= dim) {
            return Err(AppError::Config(format!("--dims: coordinate {bad} out of range for {dim}-dimensional states")));
        }
        let h = pipeline::selection(dims, dim);
        truth = pipeline::project(&truth, &h);
        estimate = pipeline::project(&estimate, &h);
    }
    let scans = match args.scans {
        Some(k) => 1..=k,
        None => match pipeline::scan_span(&truth, &estimate) {
            Some(r) => r,
            None => {
                log::warn!("both track files are empty");
                return io::write_evaluation(&args.out, &[]);
            }
        },
    };
    let rows = pipeline::evaluate(&truth, &estimate, scans, metric);
    io::write_evaluation(&args.out, &rows)
}

pub fn montecarlo(args: &MonteCarloArgs) -> AppResult<()> {
    if args.jobs == 0 || args.runs == 0 {
        return Err(AppError::Config("--runs and --jobs must be at least 1".into()));
    }
    let metric = args.metric.settings()?;
    let scenario = args.source.load(None)?.to_scenario(None)?;
    let settings = args.tracker.settings(0);
    let runs = pipeline::monte_carlo(&scenario, args.runs, args.jobs, args.seed, &settings, metric)?;
    create_dir(&args.out)?;
    let dim = scenario.model.state_dim();
    for r in &runs {
        let dir = args.out.join(format!("run_{:03}", r.run));
        write_outputs(&dir, &r.output, dim)?;
        io::write_tracks(&dir.join("truth.csv"), &r.truth, dim)?;
        io::write_measurements(&dir.join("measurements.json"), &MeasurementFile::new(&r.measurements))?;
        io::write_evaluation(&dir.join("evaluation.csv"), &r.evaluation)?;
        if !r.fragmented.is_empty() {
            log::warn!("run {}: fragmented labels {:?}", r.run, r.fragmented);
        }
    }
    let all: Vec<_> = runs.iter().map(|r| r.evaluation.clone()).collect();
    io::write_evaluation(&args.out.join("mean.csv"), &pipeline::mean_evaluation(&all))
}

pub fn run(cli: &Cli) -> AppResult<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Track(a) => track(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Montecarlo(a) => montecarlo(a),
    }
}
