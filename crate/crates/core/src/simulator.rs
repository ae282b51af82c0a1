//! Ground truth and measurement generation from the standard model, with
//! the linear Gaussian constant-velocity scenario at native and reduced
//! scale.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::labeled_state::{LabeledState, MultiObjectStateSequence};
use crate::models::{BirthComponent, DynamicModel, MeasurementModel, SystemModel, UniformClutter};
use crate::seed;
use crate::Label;

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// Number of scans; truth and measurements cover scans `1..=scans`.
    pub scans: usize,
    /// Sampling period, kept for reference in exported files.
    pub dt: f64,
    pub model: SystemModel,
    pub seed: u64,
}

impl Scenario {
    pub fn new(scans: usize, dt: f64, model: SystemModel, seed: u64) -> Result<Self> {
        if scans == 0 {
            return Err(Error::InvalidConfig("scans must be at least 1".into()));
        }
        Ok(Scenario { scans, dt, model, seed })
    }
}

/// Constant-velocity transition for state `[px, vx, py, vy]` and the
/// process noise of piecewise-constant white acceleration with standard
/// deviation `sigma`.
pub fn constant_velocity(dt: f64, sigma: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    #[rustfmt::skip]
    let f = DMatrix::from_row_slice(4, 4, &[
        1.0, dt, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, dt,
        0.0, 0.0, 0.0, 1.0,
    ]);
    #[rustfmt::skip]
    let g = DMatrix::from_row_slice(4, 2, &[
        dt * dt / 2.0, 0.0,
        dt, 0.0,
        0.0, dt * dt / 2.0,
        0.0, dt,
    ]);
    let q = &g * g.transpose() * (sigma * sigma);
    (f, q)
}

/// Position observation `[px, py]` of a constant-velocity state.
pub fn position_observation(sigma: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    #[rustfmt::skip]
    let h = DMatrix::from_row_slice(2, 4, &[
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    ]);
    (h, DMatrix::identity(2, 2) * (sigma * sigma))
}

/// Birth sites of the linear Gaussian scenario.
pub fn birth_sites() -> [DVector<f64>; 3] {
    [
        DVector::from_vec(vec![0.0, 0.0, 100.0, 0.0]),
        DVector::from_vec(vec![-100.0, 0.0, -100.0, 0.0]),
        DVector::from_vec(vec![100.0, 0.0, -100.0, 0.0]),
    ]
}

/// Parameters of a constant-velocity scenario preset.
#[derive(Clone, Debug, PartialEq)]
pub struct PresetParameters {
    pub scans: usize,
    pub dt: f64,
    pub sigma_v: f64,
    pub sigma_e: f64,
    pub p_s: f64,
    pub p_d: f64,
    pub lambda_c: f64,
    pub half_width: f64,
    pub r_b: f64,
    pub sites: Vec<DVector<f64>>,
    pub birth_std: f64,
}

impl PresetParameters {
    /// 100 scans, three birth sites, about 66 clutter returns per scan.
    pub fn v_v_2018() -> Self {
        PresetParameters {
            scans: 100,
            dt: 1.0,
            sigma_v: 5.0,
            sigma_e: 10.0,
            p_s: 0.99,
            p_d: 0.77,
            lambda_c: 1.65e-5,
            half_width: 1000.0,
            r_b: 0.04,
            sites: birth_sites().to_vec(),
            birth_std: 10.0,
        }
    }

    /// 20 scans, the first birth site only, 10 clutter returns per scan on
    /// average and a birth probability of 0.1.
    pub fn desk() -> Self {
        PresetParameters {
            scans: 20,
            lambda_c: 10.0 / 4.0e6,
            r_b: 0.1,
            sites: vec![birth_sites()[0].clone()],
            ..Self::v_v_2018()
        }
    }

    pub fn model(&self) -> Result<SystemModel> {
        let (f, q) = constant_velocity(self.dt, self.sigma_v);
        let (h, r) = position_observation(self.sigma_e);
        let cov = DMatrix::identity(4, 4) * (self.birth_std * self.birth_std);
        let mut births = BTreeMap::new();
        for scan in 1..=self.scans {
            let list = self
                .sites
                .iter()
                .enumerate()
                .map(|(i, m)| BirthComponent {
                    label: Label::new(scan, i + 1),
                    prob: self.r_b,
                    mean: m.clone(),
                    cov: cov.clone(),
                })
                .collect();
            births.insert(scan, list);
        }
        SystemModel::new(
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
                    region: vec![(-self.half_width, self.half_width); 2],
                },
            },
        )
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        Scenario::new(self.scans, self.dt, self.model()?, seed)
    }
}

/// Draws from `N(mean, cov)` for a positive semidefinite `cov`.
pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let n = mean.len();
    let e: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let root = match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = SymmetricEigen::new(cov.clone());
            let sqrt = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
            &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
        }
    };
    mean + root * e
}

fn truth_rng(s: &Scenario) -> ChaCha8Rng {
    seed::rng(s.seed, &[0x7207])
}

fn measurement_rng(s: &Scenario) -> ChaCha8Rng {
    seed::rng(s.seed, &[0x2E45])
}

/// Samples a ground-truth sequence over scans `1..=scans`: each birth label
/// is born with its probability, each object survives with `P_S` and moves
/// by the linear Gaussian dynamics.
pub fn generate_truth(s: &Scenario) -> Result<MultiObjectStateSequence> {
    let mut rng = truth_rng(s);
    let model = &s.model;
    let p_s = model.dynamics.survival_prob;
    let mut scans: Vec<Vec<LabeledState>> = Vec::with_capacity(s.scans);
    let mut alive: Vec<LabeledState> = Vec::new();
    for scan in 1..=s.scans {
        let (f, q) = model.dynamics.transition_at(scan);
        let mut next = Vec::new();
        for x in &alive {
            if rng.random::<f64>() < p_s {
                let mean = f * &x.kinematic;
                next.push(LabeledState::new(sample_gaussian(&mut rng, &mean, q), x.label));
            }
        }
        for b in model.births_at(scan) {
            if rng.random::<f64>() < b.prob {
                next.push(LabeledState::new(sample_gaussian(&mut rng, &b.mean, &b.cov), b.label));
            }
        }
        scans.push(next.clone());
        alive = next;
    }
    MultiObjectStateSequence::new(1, model.state_dim(), scans)
}

/// Measurement sets for each scan of `truth`, index `k - 1` for scan `k`:
/// detections with probability `P_D`, Poisson clutter uniform over the
/// region, in shuffled order.
pub fn generate_measurements(truth: &MultiObjectStateSequence, s: &Scenario) -> Result<Vec<Vec<DVector<f64>>>> {
    if truth.dim() != s.model.state_dim() {
        return Err(Error::dims("truth state", s.model.state_dim(), truth.dim()));
    }
    let mut rng = measurement_rng(s);
    let meas = &s.model.measurement;
    let clutter_mean = meas.clutter.mean_count();
    let poisson = if clutter_mean > 0.0 {
        Some(Poisson::new(clutter_mean).map_err(|_| Error::InvalidConfig(format!("clutter mean {clutter_mean}")))?)
    } else {
        None
    };
    let zero = DVector::zeros(s.model.measurement_dim());
    let mut out = Vec::with_capacity(truth.num_scans());
    for scan in truth.window_start()..=truth.window_end() {
        let mut z = Vec::new();
        for x in truth.states_at(scan) {
            if rng.random::<f64>() < meas.detection_prob {
                let noise = sample_gaussian(&mut rng, &zero, &meas.noise);
                z.push(&meas.observation * &x.kinematic + noise);
            }
        }
        if let Some(p) = &poisson {
            let n: f64 = p.sample(&mut rng);
            for _ in 0..n as usize {
                let point = meas.clutter.region.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect::<Vec<f64>>();
                z.push(DVector::from_vec(point));
            }
        }
        z.shuffle(&mut rng);
        out.push(z);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_birth_probability_gives_empty_truth() {
        let mut p = PresetParameters::desk();
        p.r_b = 0.0;
        let truth = generate_truth(&p.scenario(3).unwrap()).unwrap();
        assert!(truth.labels().is_empty());
    }

    #[test]
    fn certain_survival_keeps_a_forced_birth_alive() {
        let mut p = PresetParameters::desk();
        p.p_s = 1.0;
        let mut model = p.model().unwrap();
        for (scan, list) in model.dynamics.births.iter_mut() {
            for b in list {
                b.prob = if *scan == 1 { 1.0 } else { 0.0 };
            }
        }
        let s = Scenario::new(p.scans, 1.0, model, 4).unwrap();
        let truth = generate_truth(&s).unwrap();
        for scan in 1..=p.scans {
            assert_eq!(truth.label_set_at(scan).len(), 1);
        }
    }

    #[test]
    fn perfect_detection_without_clutter_matches_truth_size() {
        let mut p = PresetParameters::desk();
        p.p_d = 1.0;
        p.lambda_c = 0.0;
        p.r_b = 0.3;
        let s = p.scenario(11).unwrap();
        let truth = generate_truth(&s).unwrap();
        let z = generate_measurements(&truth, &s).unwrap();
        for (i, zs) in z.iter().enumerate() {
            assert_eq!(zs.len(), truth.states_at(i + 1).len());
        }
    }

    #[test]
    fn preset_clutter_rate() {
        let p = PresetParameters::v_v_2018().model().unwrap();
        assert!((p.measurement.clutter.mean_count() - 66.0).abs() < 1e-9);
        let d = PresetParameters::desk().model().unwrap();
        assert!((d.measurement.clutter.mean_count() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn generation_is_reproducible() {
        let s = PresetParameters::desk().scenario(7).unwrap();
        let a = generate_truth(&s).unwrap();
        let b = generate_truth(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_measurements(&a, &s).unwrap(), generate_measurements(&b, &s).unwrap());
    }

    #[test]
    fn process_noise_matches_white_acceleration() {
        let (_, q) = constant_velocity(1.0, 5.0);
        assert!((q[(0, 0)] - 25.0 / 4.0).abs() < 1e-12);
        assert!((q[(0, 1)] - 25.0 / 2.0).abs() < 1e-12);
        assert!((q[(1, 1)] - 25.0).abs() < 1e-12);
        assert_eq!(q[(0, 2)], 0.0);
    }
}
