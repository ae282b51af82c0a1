//! Scenario, measurement, track, density, diagnostics and evaluation files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use msglmb_core::gibbs::Diagnostic;
use msglmb_core::metrics::{Ospa, Tracks};
use msglmb_core::models::{BirthComponent, DynamicModel, MeasurementModel, SystemModel, UniformClutter};
use msglmb_core::multiscan_glmb::MultiScanGlmbDensity;
use msglmb_core::simulator::{PresetParameters, Scenario};
use msglmb_core::smoother::UpdateReport;
use msglmb_core::{DMatrix, DVector, Label, LabeledState, TrajectorySegment};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirthSpec {
    pub label: [usize; 2],
    pub r_b: f64,
    pub m_b: Vec<f64>,
    #[serde(rename = "P_b")]
    pub p_b: Vec<Vec<f64>>,
}

/// The named parameters a preset was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetBlock {
    pub name: String,
    pub scans: usize,
    pub sampling_period: f64,
    pub sigma_nu: f64,
    pub sigma_epsilon: f64,
    #[serde(rename = "P_S")]
    pub p_s: f64,
    #[serde(rename = "P_D")]
    pub p_d: f64,
    pub lambda_c: f64,
    pub region: Vec<[f64; 2]>,
    pub mean_clutter_per_scan: f64,
    pub r_b: f64,
    pub m_b: Vec<Vec<f64>>,
    #[serde(rename = "P_B_diag_std")]
    pub p_b_std: Vec<f64>,
}

impl PresetBlock {
    pub fn new(name: &str, p: &PresetParameters) -> Self {
        let region = vec![[-p.half_width, p.half_width]; 2];
        let area = (2.0 * p.half_width) * (2.0 * p.half_width);
        PresetBlock {
            name: name.to_string(),
            scans: p.scans,
            sampling_period: p.dt,
            sigma_nu: p.sigma_v,
            sigma_epsilon: p.sigma_e,
            p_s: p.p_s,
            p_d: p.p_d,
            lambda_c: p.lambda_c,
            region,
            mean_clutter_per_scan: p.lambda_c * area,
            r_b: p.r_b,
            m_b: p.sites.iter().map(|m| m.iter().copied().collect()).collect(),
            p_b_std: vec![p.birth_std; 4],
        }
    }
}

/// Scenario JSON: a linear Gaussian model with an explicit birth list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub dt: f64,
    pub d: usize,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    pub p_s: f64,
    pub p_d: f64,
    pub lambda_c: f64,
    pub region: Vec<[f64; 2]>,
    pub births: Vec<BirthSpec>,
    pub scans: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetBlock>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(field: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> AppResult<DMatrix<f64>> {
    let found_cols = rows.first().map_or(0, Vec::len);
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(AppError::Config(format!(
            "field `{field}`: expected a {nrows}x{ncols} matrix, found {}x{found_cols}",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ScenarioFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        let model = &s.model;
        let (f, q) = (&model.dynamics.transition, &model.dynamics.process_noise);
        let meas = &model.measurement;
        let births = model
            .dynamics
            .births
            .values()
            .flatten()
            .map(|b| BirthSpec {
                label: [b.label.birth_time, b.label.index],
                r_b: b.prob,
                m_b: b.mean.iter().copied().collect(),
                p_b: rows_of(&b.cov),
            })
            .collect();
        ScenarioFile {
            dt: s.dt,
            d: model.state_dim(),
            f: rows_of(f),
            q: rows_of(q),
            h: rows_of(&meas.observation),
            r: rows_of(&meas.noise),
            p_s: model.dynamics.survival_prob,
            p_d: meas.detection_prob,
            lambda_c: meas.clutter.intensity,
            region: meas.clutter.region.iter().map(|&(a, b)| [a, b]).collect(),
            births,
            scans: s.scans,
            seed: Some(s.seed),
            preset: None,
        }
    }

    pub fn from_preset(name: &str, p: &PresetParameters, seed: u64) -> AppResult<Self> {
        let mut file = ScenarioFile::from_scenario(&p.scenario(seed)?);
        file.preset = Some(PresetBlock::new(name, p));
        Ok(file)
    }

    /// Builds the scenario, with `seed` taking precedence over the file's.
    pub fn to_scenario(&self, seed: Option<u64>) -> AppResult<Scenario> {
        let d = self.d;
        let m = self.h.len();
        let f = matrix("F", &self.f, d, d)?;
        let q = matrix("Q", &self.q, d, d)?;
        let h = matrix("H", &self.h, m, d)?;
        let r = matrix("R", &self.r, m, m)?;
        if self.region.len() != m {
            return Err(AppError::Config(format!(
                "field `region`: expected {m} intervals, one per measurement coordinate, found {}",
                self.region.len()
            )));
        }
        let mut births: BTreeMap<usize, Vec<BirthComponent>> = BTreeMap::new();
        for (i, b) in self.births.iter().enumerate() {
            if b.m_b.len() != d {
                return Err(AppError::Config(format!(
                    "field `births[{i}].m_b`: expected {d} entries, found {}",
                    b.m_b.len()
                )));
            }
            let label = Label::new(b.label[0], b.label[1]);
            births.entry(label.birth_time).or_default().push(BirthComponent {
                label,
                prob: b.r_b,
                mean: DVector::from_vec(b.m_b.clone()),
                cov: matrix(&format!("births[{i}].P_b"), &b.p_b, d, d)?,
            });
        }
        let model = SystemModel::new(
            DynamicModel {
                transition: f,
                process_noise: q,
                survival_prob: self.p_s,
                births,
                overrides: BTreeMap::new(),
            },
            MeasurementModel {
                observation: h,
                noise: r,
                detection_prob: self.p_d,
                clutter: UniformClutter {
                    intensity: self.lambda_c,
                    region: self.region.iter().map(|r| (r[0], r[1])).collect(),
                },
            },
        )?;
        Ok(Scenario::new(self.scans, self.dt, model, seed.or(self.seed).unwrap_or(0))?)
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| AppError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let file = File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| AppError::io(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| AppError::io(path, e))
}

pub fn read_scenario(path: &Path) -> AppResult<ScenarioFile> {
    read_json(path)
}

pub fn write_scenario(path: &Path, scenario: &ScenarioFile) -> AppResult<()> {
    write_json(path, scenario)
}

/// Measurement JSON: one list of measurement vectors per scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFile {
    pub first_scan: usize,
    pub scans: Vec<Vec<Vec<f64>>>,
}

impl MeasurementFile {
    pub fn new(scans: &[Vec<DVector<f64>>]) -> Self {
        MeasurementFile {
            first_scan: 1,
            scans: scans.iter().map(|z| z.iter().map(|v| v.iter().copied().collect()).collect()).collect(),
        }
    }

    /// Measurement vectors per scan, checked against the measurement dimension.
    pub fn to_vectors(&self, dim: usize) -> AppResult<Vec<Vec<DVector<f64>>>> {
        if self.first_scan != 1 {
            return Err(AppError::Config(format!(
                "field `first_scan`: measurements must start at scan 1, found {}",
                self.first_scan
            )));
        }
        let mut out = Vec::with_capacity(self.scans.len());
        for (k, scan) in self.scans.iter().enumerate() {
            let mut zs = Vec::with_capacity(scan.len());
            for (i, z) in scan.iter().enumerate() {
                if z.len() != dim {
                    return Err(AppError::Config(format!(
                        "measurement {i} of scan {} has {} coordinates but the scenario observes {dim}",
                        k + 1,
                        z.len()
                    )));
                }
                zs.push(DVector::from_vec(z.clone()));
            }
            out.push(zs);
        }
        Ok(out)
    }
}

pub fn read_measurements(path: &Path) -> AppResult<MeasurementFile> {
    read_json(path)
}

pub fn write_measurements(path: &Path, m: &MeasurementFile) -> AppResult<()> {
    write_json(path, m)
}

/// One row of a track file: a labeled state at one scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    #[serde(with = "label_text")]
    pub label: Label,
    pub scan: usize,
    pub x: Vec<f64>,
}

mod label_text {
    use msglmb_core::Label;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(l: &Label, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(l)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Label, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rows ordered by scan, then label.
pub fn rows_from_scans(scans: &[Vec<LabeledState>], first_scan: usize) -> Vec<TrackRow> {
    let mut rows: Vec<TrackRow> = scans
        .iter()
        .enumerate()
        .flat_map(|(i, xs)| {
            xs.iter().map(move |s| TrackRow {
                label: s.label,
                scan: first_scan + i,
                x: s.kinematic.iter().copied().collect(),
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.scan, r.label));
    rows
}

pub fn rows_from_segments(segments: &[TrajectorySegment]) -> Vec<TrackRow> {
    let mut rows: Vec<TrackRow> = segments
        .iter()
        .flat_map(|s| {
            s.states.iter().enumerate().map(move |(i, x)| TrackRow {
                label: s.label,
                scan: s.start + i,
                x: x.iter().copied().collect(),
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.scan, r.label));
    rows
}

pub fn tracks_from_rows(rows: &[TrackRow]) -> Tracks {
    let mut tracks = Tracks::new();
    for r in rows {
        tracks
            .entry(r.label)
            .or_default()
            .insert(r.scan, DVector::from_vec(r.x.clone()));
    }
    tracks
}

pub fn write_tracks(path: &Path, rows: &[TrackRow], dim: usize) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::io(path, e))?;
    let mut header = vec!["label".to_string(), "scan".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(|e| AppError::io(path, e))?;
    for r in rows {
        let mut record = vec![r.label.to_string(), r.scan.to_string()];
        record.extend(r.x.iter().map(f64::to_string));
        w.write_record(&record).map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Same rows as [`write_tracks`], as a JSON array.
pub fn write_tracks_json(path: &Path, rows: &[TrackRow]) -> AppResult<()> {
    write_json(path, &rows)
}

/// Reads a track CSV. A file without any rows, or an empty file, yields no rows.
pub fn read_tracks(path: &Path) -> AppResult<Vec<TrackRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| AppError::io(path, e))?;
    let mut rows = Vec::new();
    for (n, record) in r.records().enumerate() {
        let record = record.map_err(|e| AppError::io(path, e))?;
        let line = n + 2;
        let bad = |what: &str| AppError::Config(format!("{}: line {line}: {what}", path.display()));
        if record.len() < 3 {
            return Err(bad("expected label, scan and at least one state column"));
        }
        let label: Label = record[0].parse().map_err(|_| bad("malformed label"))?;
        let scan: usize = record[1].trim().parse().map_err(|_| bad("malformed scan"))?;
        let x = record
            .iter()
            .skip(2)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad("malformed state value"))?;
        rows.push(TrackRow { label, scan, x });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct DumpTrack {
    label: String,
    start: usize,
    first_block: usize,
    mean: Vec<Vec<f64>>,
    cov: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct DumpComponent {
    history: Vec<Vec<(String, i32)>>,
    log_weight: f64,
    weight: f64,
    tracks: Vec<DumpTrack>,
}

#[derive(Serialize)]
struct DensityDump {
    scan: usize,
    components: Vec<DumpComponent>,
}

/// Writes each component's history, weight and, per label, the start scan
/// with the mean and marginal covariance of every retained block.
pub fn write_density(path: &Path, density: &MultiScanGlmbDensity) -> AppResult<()> {
    let weights = density.weights();
    let components = density
        .components()
        .iter()
        .zip(weights)
        .map(|(c, weight)| DumpComponent {
            history: c
                .history
                .maps()
                .iter()
                .map(|m| m.entries().iter().map(|(l, v)| (l.to_string(), *v)).collect())
                .collect(),
            log_weight: c.log_weight,
            weight,
            tracks: c
                .trajectories
                .values()
                .map(|t| {
                    let blocks: Vec<_> = (t.first_block..=t.end()).filter_map(|s| t.block_marginal(s)).collect();
                    DumpTrack {
                        label: t.label.to_string(),
                        start: t.start,
                        first_block: t.first_block,
                        mean: blocks.iter().map(|g| g.mean.iter().copied().collect()).collect(),
                        cov: blocks.iter().map(|g| rows_of(&g.cov)).collect(),
                    }
                })
                .collect(),
        })
        .collect();
    write_json(
        path,
        &DensityDump {
            scan: density.scan(),
            components,
        },
    )
}

fn csv_writer(path: &Path) -> AppResult<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| AppError::io(path, e))
}

pub fn write_sampler_diagnostics(path: &Path, diagnostics: &[Diagnostic]) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "log_weight", "distinct"]).map_err(|e| AppError::io(path, e))?;
    for d in diagnostics {
        w.write_record([d.iteration.to_string(), d.log_weight.to_string(), d.distinct.to_string()])
            .map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn write_update_reports(path: &Path, reports: &[UpdateReport]) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["scan", "candidates", "kept", "l1_error", "normalized_error_bound"])
        .map_err(|e| AppError::io(path, e))?;
    for r in reports {
        w.write_record([
            r.scan.to_string(),
            r.candidates.to_string(),
            r.truncation.kept.to_string(),
            r.truncation.l1_error.to_string(),
            r.truncation.normalized_error_bound.to_string(),
        ])
        .map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Per-scan OSPA and OSPA² values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvaluationRow {
    pub scan: usize,
    pub ospa: Ospa,
    pub ospa2: Ospa,
}

pub const EVALUATION_HEADER: [&str; 7] = [
    "scan",
    "ospa_total",
    "ospa_loc",
    "ospa_card",
    "ospa2_total",
    "ospa2_loc",
    "ospa2_card",
];

pub fn write_evaluation(path: &Path, rows: &[EvaluationRow]) -> AppResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EVALUATION_HEADER).map_err(|e| AppError::io(path, e))?;
    for r in rows {
        w.write_record([
            r.scan.to_string(),
            r.ospa.total.to_string(),
            r.ospa.localization.to_string(),
            r.ospa.cardinality.to_string(),
            r.ospa2.total.to_string(),
            r.ospa2.localization.to_string(),
            r.ospa2.cardinality.to_string(),
        ])
        .map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_evaluation(path: &Path) -> AppResult<Vec<EvaluationRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| AppError::io(path, e))?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| AppError::io(path, e))?;
        let v = |i: usize| -> AppResult<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| AppError::Config(format!("{}: malformed evaluation row", path.display())))
        };
        rows.push(EvaluationRow {
            scan: v(0)? as usize,
            ospa: Ospa {
                total: v(1)?,
                localization: v(2)?,
                cardinality: v(3)?,
            },
            ospa2: Ospa {
                total: v(4)?,
                localization: v(5)?,
                cardinality: v(6)?,
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use msglmb_core::simulator::PresetParameters;

    #[test]
    fn scenario_round_trip() {
        let file = ScenarioFile::from_preset("desk", &PresetParameters::desk(), 7).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        let back: ScenarioFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        let s = back.to_scenario(None).unwrap();
        assert_eq!(s, PresetParameters::desk().scenario(7).unwrap());
    }

    #[test]
    fn wrong_matrix_shape_names_field() {
        let mut file = ScenarioFile::from_preset("desk", &PresetParameters::desk(), 0).unwrap();
        file.q.pop();
        let err = file.to_scenario(None).unwrap_err();
        assert!(err.to_string().contains("`Q`"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn track_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            TrackRow { label: Label::new(1, 1), scan: 1, x: vec![0.5, -1.25] },
            TrackRow { label: Label::new(2, 3), scan: 2, x: vec![1e-17, 3.0] },
        ];
        write_tracks(&path, &rows, 2).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("label,scan,x1,x2\n1.1,1,0.5,-1.25\n"));
        assert_eq!(read_tracks(&path).unwrap(), rows);
    }

    #[test]
    fn empty_track_file_has_no_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "").unwrap();
        assert!(read_tracks(&path).unwrap().is_empty());
        std::fs::write(&path, "label,scan,x1\n").unwrap();
        assert!(read_tracks(&path).unwrap().is_empty());
    }

    #[test]
    fn measurement_dimension_checked() {
        let m = MeasurementFile {
            first_scan: 1,
            scans: vec![vec![vec![1.0, 2.0]], vec![vec![1.0, 2.0, 3.0]]],
        };
        assert_eq!(m.to_vectors(2).unwrap_err().exit_code(), 2);
        assert_eq!(m.to_vectors(3).unwrap_err().exit_code(), 2);
        let ok = MeasurementFile {
            first_scan: 1,
            scans: vec![vec![vec![1.0, 2.0]], vec![]],
        };
        assert_eq!(ok.to_vectors(2).unwrap()[1].len(), 0);
    }
}
