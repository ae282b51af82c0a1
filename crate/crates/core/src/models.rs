//! The standard multi-object system model with linear-Gaussian kinematics.
//!
//! Each object alive at scan `k-1` survives with probability `P_S` and moves
//! through `x_k = F x_{k-1} + w`, `w ~ N(0, Q)`. Each birth label of scan `k`
//! is born with probability `P_B` and a Gaussian initial state. Each object
//! is detected with probability `P_D` through `z = H x + v`, `v ~ N(0, R)`,
//! and clutter is Poisson with uniform intensity over a rectangular region.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gaussian::log_normal_pdf;
use crate::labeled_state::{Label, LabeledState};

#[derive(Clone, Debug, PartialEq)]
pub struct BirthComponent {
    pub label: Label,
    /// Probability `P_B` that the label is born.
    pub prob: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicModel {
    pub transition: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub survival_prob: f64,
    /// Birth components keyed by the scan they may be born at.
    pub births: BTreeMap<usize, Vec<BirthComponent>>,
    /// Per-scan `(F, Q)` overrides for the transition into that scan.
    pub overrides: BTreeMap<usize, (DMatrix<f64>, DMatrix<f64>)>,
}

impl DynamicModel {
    /// `(F, Q)` for the transition from `scan - 1` to `scan`.
    pub fn transition_at(&self, scan: usize) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match self.overrides.get(&scan) {
            Some((f, q)) => (f, q),
            None => (&self.transition, &self.process_noise),
        }
    }

    pub fn births_at(&self, scan: usize) -> &[BirthComponent] {
        self.births.get(&scan).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Poisson clutter with intensity `intensity` per unit volume inside an
/// axis-aligned box and zero outside it.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformClutter {
    pub intensity: f64,
    pub region: Vec<(f64, f64)>,
}

impl UniformClutter {
    pub fn volume(&self) -> f64 {
        self.region.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Expected number of clutter returns per scan.
    pub fn mean_count(&self) -> f64 {
        self.intensity * self.volume()
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        z.len() == self.region.len()
            && z.iter().zip(&self.region).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn intensity_at(&self, z: &DVector<f64>) -> f64 {
        if self.contains(z) {
            self.intensity
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementModel {
    pub observation: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub detection_prob: f64,
    pub clutter: UniformClutter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub dynamics: DynamicModel,
    pub measurement: MeasurementModel,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::InvalidConfig(format!(
            "{name} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidConfig(format!("{name} is not symmetric")));
    }
    let eig = SymmetricEigen::new(m.clone());
    let trace = m.trace().abs();
    if eig.eigenvalues.iter().any(|&e| e < -1e-10 * trace.max(1.0)) {
        return Err(Error::InvalidConfig(format!("{name} is not positive semidefinite")));
    }
    Ok(())
}

impl SystemModel {
    /// Builds a model after checking dimensions, probabilities and PSD
    /// covariances.
    pub fn new(dynamics: DynamicModel, measurement: MeasurementModel) -> Result<Self> {
        let d = dynamics.transition.nrows();
        check_square("F", &dynamics.transition, d)?;
        check_square("Q", &dynamics.process_noise, d)?;
        check_psd("Q", &dynamics.process_noise)?;
        check_prob("p_s", dynamics.survival_prob)?;
        for (scan, (f, q)) in &dynamics.overrides {
            check_square(&format!("F override at scan {scan}"), f, d)?;
            check_square(&format!("Q override at scan {scan}"), q, d)?;
            check_psd(&format!("Q override at scan {scan}"), q)?;
        }
        let mut seen = BTreeSet::new();
        for (&scan, births) in &dynamics.births {
            for b in births {
                if b.label.birth_time != scan {
                    return Err(Error::InvalidConfig(format!(
                        "birth label {} listed at scan {scan}",
                        b.label
                    )));
                }
                if scan == 0 {
                    return Err(Error::InvalidConfig(format!("birth label {} at scan 0", b.label)));
                }
                if !seen.insert(b.label) {
                    return Err(Error::InvalidConfig(format!("duplicate birth label {}", b.label)));
                }
                check_prob("r_b", b.prob)?;
                if b.mean.len() != d {
                    return Err(Error::InvalidConfig(format!(
                        "m_b of {} has length {}, expected {d}",
                        b.label,
                        b.mean.len()
                    )));
                }
                check_square("P_b", &b.cov, d)?;
                check_psd("P_b", &b.cov)?;
            }
        }
        let h = &measurement.observation;
        if h.ncols() != d {
            return Err(Error::InvalidConfig(format!("H has {} columns, expected {d}", h.ncols())));
        }
        let m = h.nrows();
        check_square("R", &measurement.noise, m)?;
        check_psd("R", &measurement.noise)?;
        check_prob("p_d", measurement.detection_prob)?;
        let clutter = &measurement.clutter;
        if !clutter.intensity.is_finite() || clutter.intensity < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda_c = {} must be finite and non-negative",
                clutter.intensity
            )));
        }
        if clutter.region.len() != m {
            return Err(Error::InvalidConfig(format!(
                "region has {} axes, expected {m}",
                clutter.region.len()
            )));
        }
        if clutter.region.iter().any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo >= hi) {
            return Err(Error::InvalidConfig("region is empty".into()));
        }
        Ok(SystemModel {
            dynamics,
            measurement,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.transition.nrows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.measurement.observation.nrows()
    }

    pub fn births_at(&self, scan: usize) -> &[BirthComponent] {
        self.dynamics.births_at(scan)
    }

    pub fn birth(&self, label: Label) -> Option<&BirthComponent> {
        self.births_at(label.birth_time).iter().find(|b| b.label == label)
    }

    pub fn birth_labels(&self, scan: usize) -> Vec<Label> {
        let mut labels: Vec<Label> = self.births_at(scan).iter().map(|b| b.label).collect();
        labels.sort();
        labels
    }

    /// Birth label sets for scans `1..=k`, index `j - 1` for scan `j`.
    pub fn birth_spaces(&self, k: usize) -> Vec<Vec<Label>> {
        (1..=k).map(|s| self.birth_labels(s)).collect()
    }

    /// Drops measurements outside the clutter region, where the clutter
    /// intensity is zero.
    pub fn admit(&self, measurements: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
        measurements
            .into_iter()
            .filter(|z| self.measurement.clutter.contains(z))
            .collect()
    }
}

/// Single-object measurement likelihood ratio: `Q_D` for `j = 0`, otherwise
/// `P_D N(z_j; H x, R) / kappa(z_j)`.
pub fn psi(model: &SystemModel, measurements: &[DVector<f64>], j: usize, x: &DVector<f64>) -> Result<f64> {
    let meas = &model.measurement;
    if j == 0 {
        return Ok(1.0 - meas.detection_prob);
    }
    let z = measurements
        .get(j - 1)
        .ok_or_else(|| Error::InvalidConfig(format!("measurement index {j} out of range")))?;
    let kappa = meas.clutter.intensity_at(z);
    if kappa <= 0.0 {
        return Err(Error::ZeroClutterDensity { scan: 0, index: j });
    }
    let g = log_normal_pdf(z, &(&meas.observation * x), &meas.noise)?;
    Ok(meas.detection_prob * libm::exp(g) / kappa)
}

/// Which transition factor applies to a label of `X_{k-1} ∪ X_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionCase {
    /// Born at `k`.
    Born,
    /// Alive at `k-1` and `k`.
    Survived,
    /// Alive at `k-1`, dead at `k`.
    Died,
}

pub fn transition_case(label: Label, previous: &BTreeSet<Label>, current: &BTreeSet<Label>, scan: usize) -> Option<TransitionCase> {
    match (previous.contains(&label), current.contains(&label)) {
        (true, true) => Some(TransitionCase::Survived),
        (true, false) => Some(TransitionCase::Died),
        (false, true) if label.birth_time == scan => Some(TransitionCase::Born),
        _ => None,
    }
}

fn state_of(set: &[LabeledState], l: Label) -> Option<&DVector<f64>> {
    set.iter().find(|x| x.label == l).map(|x| &x.kinematic)
}

/// Labeled multi-object transition density `f(X_k | X_{k-1})` for the
/// transition into `scan`. Returns 0 off its support.
pub fn transition_density(
    current: &[LabeledState],
    previous: &[LabeledState],
    scan: usize,
    model: &SystemModel,
) -> f64 {
    let cur: BTreeSet<Label> = current.iter().map(|x| x.label).collect();
    let prev: BTreeSet<Label> = previous.iter().map(|x| x.label).collect();
    if cur.len() != current.len() || prev.len() != previous.len() {
        return 0.0;
    }
    let births = model.births_at(scan);
    let d = model.state_dim();
    let mut value = 1.0;
    for b in births {
        if !cur.contains(&b.label) {
            value *= 1.0 - b.prob;
        }
    }
    let (f, q) = model.dynamics.transition_at(scan);
    let p_s = model.dynamics.survival_prob;
    for &l in prev.union(&cur) {
        let factor = match transition_case(l, &prev, &cur, scan) {
            Some(TransitionCase::Born) => {
                let Some(b) = births.iter().find(|b| b.label == l) else {
                    return 0.0;
                };
                let x = state_of(current, l).expect("label present");
                if x.len() != d {
                    return 0.0;
                }
                match log_normal_pdf(x, &b.mean, &b.cov) {
                    Ok(lp) => b.prob * libm::exp(lp),
                    Err(_) => return 0.0,
                }
            }
            Some(TransitionCase::Survived) => {
                let x = state_of(current, l).expect("label present");
                let xp = state_of(previous, l).expect("label present");
                if x.len() != d || xp.len() != d {
                    return 0.0;
                }
                match log_normal_pdf(x, &(f * xp), q) {
                    Ok(lp) => p_s * libm::exp(lp),
                    Err(_) => return 0.0,
                }
            }
            Some(TransitionCase::Died) => 1.0 - p_s,
            None => return 0.0,
        };
        value *= factor;
    }
    value
}
