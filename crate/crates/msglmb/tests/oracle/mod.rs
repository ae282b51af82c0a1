//! Reference computations that share no code with the library's Gaussian
//! algebra: posterior weights by enumeration and grid quadrature, and a
//! textbook Kalman filter with RTS smoother.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use msglmb_core::association::HistoryKey;
use msglmb_core::gibbs::Problem;
use msglmb_core::models::{BirthComponent, DynamicModel, MeasurementModel, SystemModel, UniformClutter};
use msglmb_core::{DMatrix, DVector, Label};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct ToyBirth {
    pub label: Label,
    pub r: f64,
    pub m: f64,
    pub p: f64,
}

/// Scalar linear Gaussian instance with uniform clutter on `[-half, half]`.
#[derive(Clone, Debug)]
pub struct Toy {
    pub a: f64,
    pub q: f64,
    pub h: f64,
    pub r: f64,
    pub p_s: f64,
    pub p_d: f64,
    pub lambda: f64,
    pub half: f64,
    /// `births[j - 1]` are the labels that may be born at scan `j`.
    pub births: Vec<Vec<ToyBirth>>,
    /// `z[j - 1]` are the measurements of scan `j`.
    pub z: Vec<Vec<f64>>,
}

impl Toy {
    /// 2 or 3 scans, at most 2 birth labels and 2 measurements per scan.
    pub fn random<R: Rng>(rng: &mut R) -> Toy {
        let k = rng.random_range(2..=3);
        let births = (1..=k)
            .map(|j| {
                let n = if j == 1 { rng.random_range(1..=2) } else { rng.random_range(0..=2) };
                (1..=n)
                    .map(|i| ToyBirth {
                        label: Label::new(j, i),
                        r: rng.random_range(0.05..0.95),
                        m: rng.random_range(-3.0..3.0),
                        p: rng.random_range(1.0..4.0),
                    })
                    .collect()
            })
            .collect();
        let z = (0..k)
            .map(|_| {
                let n = rng.random_range(0..=2);
                (0..n).map(|_| rng.random_range(-6.0..6.0)).collect()
            })
            .collect();
        Toy {
            a: rng.random_range(0.7..1.2),
            q: rng.random_range(0.5..2.0),
            h: rng.random_range(0.8..1.2),
            r: rng.random_range(0.3..1.0),
            p_s: rng.random_range(0.5..0.99),
            p_d: rng.random_range(0.5..0.95),
            lambda: rng.random_range(0.05..0.5),
            half: 10.0,
            births,
            z,
        }
    }

    /// Upper bound on the number of valid histories: the product over
    /// labels of their sequence counts.
    pub fn history_bound(&self) -> usize {
        self.births
            .iter()
            .flatten()
            .map(|b| label_sequences(self, b).len())
            .product()
    }

    pub fn scans(&self) -> usize {
        self.z.len()
    }

    pub fn model(&self) -> SystemModel {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let births = self
            .births
            .iter()
            .enumerate()
            .map(|(j, bs)| {
                (
                    j + 1,
                    bs.iter()
                        .map(|b| BirthComponent {
                            label: b.label,
                            prob: b.r,
                            mean: DVector::from_element(1, b.m),
                            cov: one(b.p),
                        })
                        .collect(),
                )
            })
            .collect();
        SystemModel::new(
            DynamicModel {
                transition: one(self.a),
                process_noise: one(self.q),
                survival_prob: self.p_s,
                births,
                overrides: BTreeMap::new(),
            },
            MeasurementModel {
                observation: one(self.h),
                noise: one(self.r),
                detection_prob: self.p_d,
                clutter: UniformClutter {
                    intensity: self.lambda,
                    region: vec![(-self.half, self.half)],
                },
            },
        )
        .expect("toy model is valid")
    }

    pub fn problem(&self) -> Problem {
        let z = self
            .z
            .iter()
            .map(|zs| zs.iter().map(|&v| DVector::from_element(1, v)).collect())
            .collect();
        Problem::new(self.model(), z).expect("toy measurements lie in the clutter region")
    }
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Trapezoid rule on a uniform grid. For smooth integrands that vanish at
/// the ends its error decays like `exp(-2 pi^2 s^2 / step^2)` for a
/// Gaussian of standard deviation `s`, far below 1e-15 here.
pub struct Quadrature {
    pub xs: Vec<f64>,
    pub step: f64,
    transition: Vec<Vec<f64>>,
}

impl Quadrature {
    pub fn new(toy: &Toy, half_width: f64, step: f64) -> Self {
        let n = (2.0 * half_width / step).round() as usize + 1;
        let xs: Vec<f64> = (0..n).map(|i| -half_width + i as f64 * step).collect();
        let transition = xs
            .iter()
            .map(|&to| xs.iter().map(|&from| normal_pdf(to, toy.a * from, toy.q)).collect())
            .collect();
        Quadrature { xs, step, transition }
    }
}

fn psi(toy: &Toy, scan: usize, value: i32, x: f64) -> f64 {
    if value == 0 {
        1.0 - toy.p_d
    } else {
        let z = toy.z[scan - 1][value as usize - 1];
        toy.p_d * normal_pdf(z, toy.h * x, toy.r) / toy.lambda
    }
}

/// The label's factor in the posterior weight: `1 - r` when unborn,
/// otherwise the integral over its states of birth, survival, detection
/// and (when it ends before the last scan) death terms.
pub fn label_factor(toy: &Toy, birth: &ToyBirth, values: &[i32], grid: &Quadrature) -> f64 {
    if values.is_empty() {
        return 1.0 - birth.r;
    }
    let s = birth.label.birth_time;
    let mut alpha: Vec<f64> = grid
        .xs
        .iter()
        .map(|&x| normal_pdf(x, birth.m, birth.p) * psi(toy, s, values[0], x))
        .collect();
    for (n, &v) in values.iter().enumerate().skip(1) {
        let scan = s + n;
        alpha = grid
            .xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let carried: f64 = grid.transition[i].iter().zip(&alpha).map(|(t, a)| t * a).sum();
                toy.p_s * grid.step * carried * psi(toy, scan, v, x)
            })
            .collect();
    }
    let mass: f64 = alpha.iter().sum::<f64>() * grid.step;
    let end = s + values.len() - 1;
    let death = if end < toy.scans() { 1.0 - toy.p_s } else { 1.0 };
    birth.r * mass * death
}

/// Every per-label association sequence: unborn, or alive from birth for
/// some number of scans with any value in `0..=M_j` at each.
fn label_sequences(toy: &Toy, birth: &ToyBirth) -> Vec<Vec<i32>> {
    let s = birth.label.birth_time;
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for scan in s..=toy.scans() {
        let m = toy.z[scan - 1].len() as i32;
        let mut next = Vec::new();
        for seq in &frontier {
            for v in 0..=m {
                let mut e: Vec<i32> = seq.clone();
                e.push(v);
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Normalized posterior weight of every valid history, keyed like the
/// library's components.
pub fn posterior(toy: &Toy, grid: &Quadrature) -> BTreeMap<HistoryKey, f64> {
    let labels: Vec<&ToyBirth> = toy.births.iter().flatten().collect();
    let options: Vec<Vec<(Vec<i32>, f64)>> = labels
        .iter()
        .map(|b| {
            label_sequences(toy, b)
                .into_iter()
                .map(|seq| {
                    let f = label_factor(toy, b, &seq, grid);
                    (seq, f)
                })
                .collect()
        })
        .collect();
    let mut out = BTreeMap::new();
    let mut choice = vec![0usize; labels.len()];
    loop {
        let mut key: Vec<Vec<(Label, u32)>> = vec![Vec::new(); toy.scans()];
        let mut weight = 1.0;
        for (n, b) in labels.iter().enumerate() {
            let (seq, f) = &options[n][choice[n]];
            weight *= f;
            for (i, &v) in seq.iter().enumerate() {
                key[b.label.birth_time + i - 1].push((b.label, v as u32));
            }
        }
        let one_to_one = key.iter().all(|scan| {
            let mut used: Vec<u32> = scan.iter().map(|e| e.1).filter(|&v| v > 0).collect();
            let n = used.len();
            used.sort_unstable();
            used.dedup();
            used.len() == n
        });
        if one_to_one {
            for scan in &mut key {
                scan.sort();
            }
            out.insert(HistoryKey(key), weight);
        }
        let mut n = 0;
        loop {
            if n == labels.len() {
                let total: f64 = out.values().sum();
                return out.into_iter().map(|(k, w)| (k, w / total)).collect();
            }
            choice[n] += 1;
            if choice[n] < options[n].len() {
                break;
            }
            choice[n] = 0;
            n += 1;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Kalman filter started from the prior `N(m0, p0)` at the first scan,
/// followed by the Rauch-Tung-Striebel smoother. Returns the filtered and
/// the smoothed moments of every scan.
pub fn kalman_rts(
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    m0: &DVector<f64>,
    p0: &DMatrix<f64>,
    zs: &[DVector<f64>],
) -> (Vec<Moments>, Vec<Moments>) {
    let mut filtered: Vec<Moments> = Vec::with_capacity(zs.len());
    let mut predicted: Vec<Moments> = Vec::with_capacity(zs.len());
    for z in zs {
        let (m, p) = match filtered.last() {
            None => (m0.clone(), p0.clone()),
            Some(prev) => (f * &prev.mean, f * &prev.cov * f.transpose() + q),
        };
        predicted.push(Moments { mean: m.clone(), cov: p.clone() });
        let s = h * &p * h.transpose() + r;
        let gain = &p * h.transpose() * s.try_inverse().expect("innovation covariance is invertible");
        let mean = &m + &gain * (z - h * &m);
        let i = DMatrix::identity(p.nrows(), p.ncols());
        let ikh = &i - &gain * h;
        let cov = &ikh * &p * ikh.transpose() + &gain * r * gain.transpose();
        filtered.push(Moments { mean, cov });
    }
    let n = zs.len();
    let mut smoothed = filtered.clone();
    for k in (0..n.saturating_sub(1)).rev() {
        let pred = &predicted[k + 1];
        let c = &filtered[k].cov * f.transpose() * pred.cov.clone().try_inverse().expect("predicted covariance is invertible");
        let mean = &filtered[k].mean + &c * (&smoothed[k + 1].mean - &pred.mean);
        let cov = &filtered[k].cov + &c * (&smoothed[k + 1].cov - &pred.cov) * c.transpose();
        smoothed[k] = Moments { mean, cov };
    }
    (filtered, smoothed)
}
