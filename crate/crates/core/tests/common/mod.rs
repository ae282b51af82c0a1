#![allow(dead_code)]

use std::collections::BTreeMap;

use msglmb_core::association::{enumerate_valid_histories, AssociationHistory, HistoryKey};
use msglmb_core::gibbs::{history_log_weight, OmegaCache, Problem};
use msglmb_core::models::{BirthComponent, DynamicModel, MeasurementModel, SystemModel, UniformClutter};
use msglmb_core::multiscan_glmb::log_sum_exp;
use msglmb_core::{DMatrix, DVector, Label};
use rand::Rng;

pub fn one(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

pub fn x(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

/// Scalar random walk observed directly, clutter on `[-20, 20]`.
/// `births[j]` lists the `(probability, mean)` of the labels born at scan `j + 1`.
pub fn scalar_model(births: &[Vec<(f64, f64)>], p_s: f64, p_d: f64, lambda: f64) -> SystemModel {
    let births = births
        .iter()
        .enumerate()
        .map(|(j, list)| {
            let scan = j + 1;
            let list = list
                .iter()
                .enumerate()
                .map(|(i, &(prob, mean))| BirthComponent {
                    label: Label::new(scan, i + 1),
                    prob,
                    mean: x(mean),
                    cov: one(3.0),
                })
                .collect();
            (scan, list)
        })
        .collect();
    SystemModel::new(
        DynamicModel {
            transition: one(1.0),
            process_noise: one(1.0),
            survival_prob: p_s,
            births,
            overrides: BTreeMap::new(),
        },
        MeasurementModel {
            observation: one(1.0),
            noise: one(0.6),
            detection_prob: p_d,
            clutter: UniformClutter {
                intensity: lambda,
                region: vec![(-20.0, 20.0)],
            },
        },
    )
    .unwrap()
}

/// 2 or 3 scans, 1 or 2 labels born at scan 1, up to 1 more per later
/// scan, up to 2 measurements per scan.
pub fn random_problem<R: Rng>(rng: &mut R) -> Problem {
    let k = rng.random_range(2..=3);
    let births: Vec<Vec<(f64, f64)>> = (1..=k)
        .map(|j| {
            let n = if j == 1 { rng.random_range(1..=2) } else { rng.random_range(0..=1) };
            (0..n).map(|_| (rng.random_range(0.1..0.9), rng.random_range(-3.0..3.0))).collect()
        })
        .collect();
    let model = scalar_model(
        &births,
        rng.random_range(0.5..0.98),
        rng.random_range(0.5..0.95),
        rng.random_range(0.05..0.3),
    );
    let z = (0..k)
        .map(|_| (0..rng.random_range(0..=2)).map(|_| x(rng.random_range(-5.0..5.0))).collect())
        .collect();
    Problem::new(model, z).unwrap()
}

/// Every valid history with its normalized posterior probability.
pub fn enumerated_posterior(problem: &Problem) -> Vec<(AssociationHistory, f64)> {
    let mut cache = OmegaCache::new();
    let hs = enumerate_valid_histories(problem.births(), &problem.measurement_counts(), problem.scans()).unwrap();
    let lw: Vec<f64> = hs.iter().map(|h| history_log_weight(problem, &mut cache, h).unwrap()).collect();
    let z = log_sum_exp(lw.iter().copied());
    hs.into_iter().zip(lw).map(|(h, w)| (h, (w - z).exp())).collect()
}

pub fn by_key(posterior: &[(AssociationHistory, f64)]) -> BTreeMap<HistoryKey, f64> {
    posterior.iter().map(|(h, p)| (h.key(), *p)).collect()
}

pub fn total_variation(p: &BTreeMap<HistoryKey, f64>, q: &BTreeMap<HistoryKey, f64>) -> f64 {
    let mut keys: Vec<&HistoryKey> = p.keys().chain(q.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
