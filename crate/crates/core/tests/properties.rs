mod common;

use std::collections::BTreeSet;

use common::random_problem;
use msglmb_core::association::{enumerate_valid_histories, is_valid_history, AssociationHistory, AssociationMap};
use msglmb_core::gibbs::{OmegaCache, SamplerConfig};
use msglmb_core::labeled_state::{from_trajectories, multiscan_exponential, splice, to_trajectories};
use msglmb_core::multiscan_glmb::{Estimator, MultiScanGlmbComponent, MultiScanGlmbDensity};
use msglmb_core::smoother::{recursive_smooth, smooth_update, SmootherConfig};
use msglmb_core::{DVector, Label, LabeledState, MultiObjectStateSequence, TrajectorySegment};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const K: usize = 4;

/// Valid sequences over scans `1..=K` with scalar states: each label
/// appears from its birth scan for a contiguous run.
fn sequences() -> impl Strategy<Value = MultiObjectStateSequence> {
    prop::collection::vec((1..=K, 1..=K, prop::collection::vec(-5.0..5.0f64, K)), 0..6).prop_map(|specs| {
        let mut sets: Vec<Vec<LabeledState>> = vec![Vec::new(); K];
        for (i, (birth, len, states)) in specs.into_iter().enumerate() {
            let end = (birth + len - 1).min(K);
            for scan in birth..=end {
                let v = DVector::from_element(1, states[scan - 1]);
                sets[scan - 1].push(LabeledState::new(v, Label::new(birth, i + 1)));
            }
        }
        MultiObjectStateSequence::new(1, 1, sets).unwrap()
    })
}

fn g(seg: &TrajectorySegment) -> f64 {
    1.0 + 0.1 * seg.states.iter().map(|x| x[0] * x[0]).sum::<f64>()
}

fn h(seg: &TrajectorySegment) -> f64 {
    (-0.1 * seg.start as f64).exp() * (2.0 + seg.states.iter().map(|x| x[0]).sum::<f64>().cos())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn density(seed: u64, budget: usize) -> MultiScanGlmbDensity {
    let problem = random_problem(&mut ChaCha8Rng::seed_from_u64(seed));
    let config = SmootherConfig {
        components: budget,
        sampler: SamplerConfig {
            iterations: 30,
            seed,
            ..Default::default()
        },
        ..Default::default()
    };
    recursive_smooth(&problem, &mut OmegaCache::new(), &config).unwrap().0
}

fn shifted(d: &MultiScanGlmbDensity, c: f64) -> MultiScanGlmbDensity {
    let components = d
        .components()
        .iter()
        .map(|x| MultiScanGlmbComponent {
            log_weight: x.log_weight + c,
            ..x.clone()
        })
        .collect();
    MultiScanGlmbDensity::new(d.scan(), components).unwrap()
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn exponential_of_a_product_is_the_product_of_exponentials(seq in sequences()) {
        let lhs = multiscan_exponential(|s| g(s) * h(s), &seq);
        let rhs = multiscan_exponential(g, &seq) * multiscan_exponential(h, &seq);
        prop_assert!(close(lhs, rhs));
    }

    #[test]
    fn splice_splits_the_exponential(seq in sequences(), i in 1..=K) {
        let lhs = multiscan_exponential(g, &seq.window(1, i)) * multiscan_exponential(h, &seq.window(i, K));
        let rhs = multiscan_exponential(splice(g, h, i), &seq);
        prop_assert!(close(lhs, rhs));
    }

    #[test]
    fn label_partition_is_a_partition(seq in sequences(), i in 1..=K) {
        let p = seq.label_partition(i);
        prop_assert!(p.terminated.is_disjoint(&p.live));
        prop_assert!(p.terminated.is_disjoint(&p.born_after));
        prop_assert!(p.live.is_disjoint(&p.born_after));
        let union: BTreeSet<Label> = p.terminated.iter().chain(&p.live).chain(&p.born_after).copied().collect();
        prop_assert_eq!(union, seq.labels());
    }

    #[test]
    fn trajectories_round_trip(seq in sequences()) {
        let back = from_trajectories(1, K, 1, &to_trajectories(&seq)).unwrap();
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn enumerated_histories_are_valid_and_duplicates_are_not(
        births in prop::collection::vec(0usize..=2, 1..=3),
        counts in prop::collection::vec(0usize..=2, 3),
    ) {
        let k = births.len();
        let births: Vec<Vec<Label>> = births.iter().enumerate().map(|(j, &n)| (1..=n).map(|i| Label::new(j + 1, i)).collect()).collect();
        let counts = &counts[..k];
        let histories = enumerate_valid_histories(&births, counts, k).unwrap();
        let keys: BTreeSet<_> = histories.iter().map(|h| h.key()).collect();
        prop_assert_eq!(keys.len(), histories.len());
        for hist in &histories {
            prop_assert!(is_valid_history(hist, &births, counts));
            for (j, map) in hist.maps().iter().enumerate() {
                // theta round trip on the map's domain
                let domain: Vec<Label> = map.domain().collect();
                prop_assert_eq!(&AssociationMap::from_theta(j + 1, map.measurements(), &domain, &map.to_theta()), map);
                // two labels on the same measurement
                if domain.len() >= 2 && map.measurements() >= 1 {
                    let mut entries = map.entries().to_vec();
                    entries[0].1 = 1;
                    entries[1].1 = 1;
                    let mut maps = hist.maps().to_vec();
                    maps[j] = AssociationMap::new(j + 1, map.measurements(), entries);
                    let bad = AssociationHistory::from_maps(maps).unwrap();
                    prop_assert!(!is_valid_history(&bad, &births, counts));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn updates_leave_normalized_weights(seed in any::<u64>(), budget in 1usize..40) {
        let problem = random_problem(&mut ChaCha8Rng::seed_from_u64(seed));
        let config = SmootherConfig { components: budget, ..Default::default() };
        let mut cache = OmegaCache::new();
        let mut d = MultiScanGlmbDensity::empty_prior();
        for _ in 0..problem.scans() {
            d = smooth_update(&d, &problem, &mut cache, &config).unwrap().0;
            prop_assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.len() <= budget);
        }
    }

    #[test]
    fn existence_is_monotone_in_the_label_set(seed in any::<u64>()) {
        let d = density(seed, 30);
        let labels: Vec<Label> = d.marginal_existence().keys().copied().collect();
        for mask in 0u32..1 << labels.len() {
            let set: BTreeSet<Label> = labels.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, l)| *l).collect();
            let p = d.existence_probability(&set);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
            for l in &labels {
                let mut bigger = set.clone();
                bigger.insert(*l);
                prop_assert!(d.existence_probability(&bigger) <= p + 1e-12);
            }
        }
    }

    #[test]
    fn estimates_ignore_a_common_weight_scale(seed in any::<u64>(), c in -50.0..50.0f64) {
        let d = density(seed, 30);
        let s = shifted(&d, c);
        for mode in [Estimator::BestComponent, Estimator::MapCardinality, Estimator::ExistenceBased] {
            let (a, b) = (d.estimate(mode).unwrap(), s.estimate(mode).unwrap());
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!((x.label, x.start, x.len()), (y.label, y.start, y.len()));
                for (u, v) in x.states.iter().zip(&y.states) {
                    prop_assert!((u - v).amax() <= 1e-9 * u.amax().max(1.0));
                }
            }
        }
    }

    #[test]
    fn truncation_commutes_with_normalization(seed in any::<u64>(), c in -50.0..50.0f64, k in 1usize..10) {
        let d = density(seed, 30);
        let mut a = shifted(&d, c);
        a.normalize().unwrap();
        a.truncate(k).unwrap();
        a.normalize().unwrap();
        let mut b = shifted(&d, c);
        b.truncate(k).unwrap();
        b.normalize().unwrap();
        let ka: Vec<_> = a.components().iter().map(|x| x.history.key()).collect();
        let kb: Vec<_> = b.components().iter().map(|x| x.history.key()).collect();
        prop_assert_eq!(ka, kb);
        for (x, y) in a.weights().iter().zip(b.weights()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
