//! Gaussian and model quantities against direct numerical integration on
//! one-dimensional instances.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use msglmb_core::gaussian::{condition_on_measurement, scan_update, Gaussian, GaussianTrajectoryDensity, Outcome, Predecessor, Retention};
use msglmb_core::models::{transition_density, BirthComponent, DynamicModel, MeasurementModel, SystemModel, UniformClutter};
use msglmb_core::{DMatrix, DVector, Label, LabeledState};

const A: f64 = 0.9;
const Q: f64 = 1.3;
const H: f64 = 1.1;
const R: f64 = 0.7;
const KAPPA: f64 = 0.05;

fn one(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn x(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

fn model(p_b: f64, p_s: f64, p_d: f64) -> SystemModel {
    SystemModel::new(
        DynamicModel {
            transition: one(A),
            process_noise: one(Q),
            survival_prob: p_s,
            births: BTreeMap::from([(
                2,
                vec![BirthComponent {
                    label: Label::new(2, 1),
                    prob: p_b,
                    mean: x(1.0),
                    cov: one(2.0),
                }],
            )]),
            overrides: BTreeMap::new(),
        },
        MeasurementModel {
            observation: one(H),
            noise: one(R),
            detection_prob: p_d,
            clutter: UniformClutter {
                intensity: KAPPA,
                region: vec![(-10.0, 10.0)],
            },
        },
    )
    .unwrap()
}

/// Trapezoid grid on `[-half, half]`.
fn grid(half: f64, step: f64) -> Vec<f64> {
    let n = (2.0 * half / step).round() as usize + 1;
    (0..n).map(|i| -half + i as f64 * step).collect()
}

fn alive(mean: f64, var: f64) -> GaussianTrajectoryDensity {
    GaussianTrajectoryDensity::new(Label::new(1, 1), 1, 1, Gaussian::new(x(mean), one(var)).unwrap()).unwrap()
}

#[test]
fn detected_survival_weight_matches_double_integral() {
    let (p_s, p_d) = (0.95, 0.8);
    let m = model(0.04, p_s, p_d);
    let (mean, var, z) = (0.4, 1.7, 1.9);
    let step = 0.05;
    let xs = grid(25.0, step);
    // int int N(z; H x', R) N(x'; A x, Q) N(x; m, P) dx dx'
    let mut integral = 0.0;
    for &x0 in &xs {
        let prior = pdf(x0, mean, var);
        for &x1 in &xs {
            integral += pdf(z, H * x1, R) * pdf(x1, A * x0, Q) * prior;
        }
    }
    integral *= step * step;
    let expected = p_s * p_d * integral / KAPPA;
    let update = scan_update(Predecessor::Alive(&alive(mean, var)), 1, &m, 2, &[x(z)], Retention::Full).unwrap();
    assert!((update.weight() / expected - 1.0).abs() < 1e-6, "{} vs {expected}", update.weight());
}

#[test]
fn scan_update_examples() {
    let m = model(0.04, 0.99, 0.77);
    let birth = &m.births_at(2)[0];
    let born = scan_update(Predecessor::Birth(birth), 0, &m, 2, &[], Retention::Full).unwrap();
    assert!((born.weight() - 0.0092).abs() < 1e-15);
    let unborn = scan_update(Predecessor::Birth(birth), -1, &m, 2, &[], Retention::Full).unwrap();
    assert!((unborn.weight() - 0.96).abs() < 1e-15);
    let prev = alive(0.4, 1.7);
    let died = scan_update(Predecessor::Alive(&prev), -1, &m, 2, &[], Retention::Full).unwrap();
    assert!((died.weight() - 0.01).abs() < 1e-15);
    assert_eq!(died.outcome, Outcome::Died);
}

#[test]
fn measurement_likelihood_integrates_to_one() {
    let prior = Gaussian::new(x(0.3), one(2.2)).unwrap();
    let step = 0.01;
    let total: f64 = grid(40.0, step)
        .iter()
        .map(|&z| condition_on_measurement(&one(H), &one(R), &prior, &x(z)).unwrap().likelihood())
        .sum::<f64>()
        * step;
    assert!((total - 1.0).abs() < 1e-10, "{total}");
}

#[test]
fn transition_density_integrates_to_one() {
    let m = model(0.3, 0.85, 0.8);
    let previous = vec![LabeledState::new(x(0.7), Label::new(1, 1))];
    let (a, b) = (Label::new(1, 1), Label::new(2, 1));
    let step = 0.05;
    let xs = grid(20.0, step);
    let f = |states: Vec<LabeledState>| transition_density(&states, &previous, 2, &m);
    // Label subsets of {a, b}, each integrated over its states.
    let empty = f(vec![]);
    let only_a: f64 = xs.iter().map(|&u| f(vec![LabeledState::new(x(u), a)])).sum::<f64>() * step;
    let only_b: f64 = xs.iter().map(|&u| f(vec![LabeledState::new(x(u), b)])).sum::<f64>() * step;
    let both: f64 = xs
        .iter()
        .map(|&u| xs.iter().map(|&v| f(vec![LabeledState::new(x(u), a), LabeledState::new(x(v), b)])).sum::<f64>())
        .sum::<f64>()
        * step
        * step;
    let total = empty + only_a + only_b + both;
    assert!((total - 1.0).abs() < 1e-4, "{total}");
    // A label outside the birth space and the survivors has no mass.
    assert_eq!(f(vec![LabeledState::new(x(0.0), Label::new(2, 2))]), 0.0);
}
