//! Gaussian algebra for stacked trajectory densities.
//!
//! A trajectory density is a joint Gaussian over the kinematic states of one
//! label at consecutive scans. Prediction appends a block through the linear
//! dynamics without marginalizing earlier blocks, and a measurement
//! conditions the joint through the last block only. Keeping just the last
//! block ([`Retention::LastBlock`]) recovers the ordinary filter on the same
//! code path.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::labeled_state::{Label, TrajectorySegment};
use crate::models::{BirthComponent, SystemModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::dims("gaussian covariance", n, cov.nrows().max(cov.ncols())));
        }
        let scale = cov.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Numerical("covariance is not symmetric"));
        }
        Ok(Gaussian { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        log_normal_pdf(x, &self.mean, &self.cov)
    }
}

/// `ln N(x; mean, cov)` through a Cholesky factorization of `cov`.
pub fn log_normal_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() {
        return Err(Error::dims("gaussian argument", mean.len(), x.len()));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(Error::Numerical("covariance not positive definite"))?;
    let r = x - mean;
    let y = chol.l().solve_lower_triangular(&r).ok_or(Error::Numerical("singular factor"))?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * libm::log(*d)).sum();
    Ok(-0.5 * (x.len() as f64 * LN_2PI + log_det + y.norm_squared()))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Result of conditioning a Gaussian prior on a linear-Gaussian measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioned {
    /// `ln N(z; H m, R + H P H')`
    pub log_likelihood: f64,
    pub posterior: Gaussian,
}

impl Conditioned {
    pub fn likelihood(&self) -> f64 {
        libm::exp(self.log_likelihood)
    }
}

/// Conditions `prior` on `z = H x_b + v`, `v ~ N(0, R)`, where `x_b` is the
/// block of `H.ncols()` coordinates starting at `offset`.
fn condition_block(
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    prior: &Gaussian,
    offset: usize,
    z: &DVector<f64>,
) -> Result<Conditioned> {
    let d = h.ncols();
    let n = prior.dim();
    if offset + d > n {
        return Err(Error::dims("observed block", n, offset + d));
    }
    if z.len() != h.nrows() || r.nrows() != h.nrows() || r.ncols() != h.nrows() {
        return Err(Error::dims("measurement", h.nrows(), z.len()));
    }
    let block_mean = prior.mean.rows(offset, d);
    let block_cov = prior.cov.view((offset, offset), (d, d));
    // H P_{b,*}: measurement-by-state cross covariance.
    let hp = h * prior.cov.rows(offset, d);
    let s = h * block_cov * h.transpose() + r;
    let predicted = h * block_mean;
    let chol = s
        .clone()
        .cholesky()
        .ok_or(Error::Numerical("innovation covariance is singular"))?;
    let innovation = z - &predicted;
    let log_likelihood = log_normal_pdf(z, &predicted, &s)?;
    let w = chol.solve(&hp);
    let mean = &prior.mean + w.transpose() * innovation;
    let mut cov = &prior.cov - hp.transpose() * w;
    symmetrize(&mut cov);
    Ok(Conditioned {
        log_likelihood,
        posterior: Gaussian { mean, cov },
    })
}

/// Conditions `prior` on the measurement `z` with observation matrix `h` and
/// noise covariance `r`.
pub fn condition_on_measurement(
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    prior: &Gaussian,
    z: &DVector<f64>,
) -> Result<Conditioned> {
    if h.ncols() != prior.dim() {
        return Err(Error::dims("observation matrix columns", prior.dim(), h.ncols()));
    }
    condition_block(h, r, prior, 0, z)
}

/// Which part of a trajectory density is kept across scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Retention {
    /// The full joint over every scan since birth (smoothing).
    Full,
    /// Only the marginal of the latest scan (filtering).
    LastBlock,
}

/// Joint Gaussian over the stacked kinematic states of `label` at scans
/// `first_block..=end()`. For full densities `first_block == start`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTrajectoryDensity {
    pub label: Label,
    /// Scan the trajectory starts at.
    pub start: usize,
    /// First scan covered by `gaussian`.
    pub first_block: usize,
    pub state_dim: usize,
    pub gaussian: Gaussian,
}

impl GaussianTrajectoryDensity {
    pub fn new(label: Label, start: usize, state_dim: usize, gaussian: Gaussian) -> Result<Self> {
        if state_dim == 0 || gaussian.dim() == 0 || !gaussian.dim().is_multiple_of(state_dim) {
            return Err(Error::dims("trajectory dimension", state_dim, gaussian.dim()));
        }
        Ok(GaussianTrajectoryDensity {
            label,
            start,
            first_block: start,
            state_dim,
            gaussian,
        })
    }

    pub fn blocks(&self) -> usize {
        self.gaussian.dim() / self.state_dim
    }

    pub fn end(&self) -> usize {
        self.first_block + self.blocks() - 1
    }

    pub fn is_full(&self) -> bool {
        self.first_block == self.start
    }

    /// Marginal of the block for `scan`, when covered.
    pub fn block_marginal(&self, scan: usize) -> Option<Gaussian> {
        if scan < self.first_block || scan > self.end() {
            return None;
        }
        let d = self.state_dim;
        let off = (scan - self.first_block) * d;
        Some(Gaussian {
            mean: self.gaussian.mean.rows(off, d).into_owned(),
            cov: self.gaussian.cov.view((off, off), (d, d)).into_owned(),
        })
    }

    pub fn block_means(&self) -> Vec<DVector<f64>> {
        let d = self.state_dim;
        (0..self.blocks())
            .map(|b| self.gaussian.mean.rows(b * d, d).into_owned())
            .collect()
    }

    /// The mean trajectory over the covered scans.
    pub fn mean_segment(&self) -> TrajectorySegment {
        TrajectorySegment {
            label: self.label,
            start: self.first_block,
            states: self.block_means(),
        }
    }
}

/// Marginal of the final block.
pub fn marginal_last_block(traj: &GaussianTrajectoryDensity) -> Gaussian {
    traj.block_marginal(traj.end()).expect("last block always covered")
}

/// Drops every block but the last.
pub fn retain_last_block(traj: &GaussianTrajectoryDensity) -> GaussianTrajectoryDensity {
    GaussianTrajectoryDensity {
        label: traj.label,
        start: traj.start,
        first_block: traj.end(),
        state_dim: traj.state_dim,
        gaussian: marginal_last_block(traj),
    }
}

/// Appends the next scan's state `x' = F x_last + w`, `w ~ N(0, Q)`, to the
/// joint without marginalizing earlier blocks.
pub fn joint_extend(
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    traj: &GaussianTrajectoryDensity,
) -> Result<GaussianTrajectoryDensity> {
    let d = traj.state_dim;
    if f.nrows() != d || f.ncols() != d {
        return Err(Error::dims("transition matrix", d, f.nrows().max(f.ncols())));
    }
    if q.nrows() != d || q.ncols() != d {
        return Err(Error::dims("process noise", d, q.nrows().max(q.ncols())));
    }
    let n = traj.gaussian.dim();
    let last = n - d;
    let p = &traj.gaussian.cov;
    let m = &traj.gaussian.mean;

    let mut mean = DVector::zeros(n + d);
    mean.rows_mut(0, n).copy_from(m);
    mean.rows_mut(n, d).copy_from(&(f * m.rows(last, d)));

    let mut cov = DMatrix::zeros(n + d, n + d);
    cov.view_mut((0, 0), (n, n)).copy_from(p);
    // Cov(x_{s:k-1}, x_k) = P_{*,last} F'
    let cross = p.columns(last, d) * f.transpose();
    cov.view_mut((0, n), (n, d)).copy_from(&cross);
    cov.view_mut((n, 0), (d, n)).copy_from(&cross.transpose());
    let tail = f * p.view((last, last), (d, d)) * f.transpose() + q;
    cov.view_mut((n, n), (d, d)).copy_from(&tail);
    symmetrize(&mut cov);

    Ok(GaussianTrajectoryDensity {
        label: traj.label,
        start: traj.start,
        first_block: traj.first_block,
        state_dim: d,
        gaussian: Gaussian { mean, cov },
    })
}

/// Conditions a trajectory density on a measurement of its last block.
pub fn condition_last_block(
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    traj: &GaussianTrajectoryDensity,
    z: &DVector<f64>,
) -> Result<(f64, GaussianTrajectoryDensity)> {
    if h.ncols() != traj.state_dim {
        return Err(Error::dims("observation matrix columns", traj.state_dim, h.ncols()));
    }
    let offset = traj.gaussian.dim() - traj.state_dim;
    let c = condition_block(h, r, &traj.gaussian, offset, z)?;
    Ok((
        c.log_likelihood,
        GaussianTrajectoryDensity {
            gaussian: c.posterior,
            ..traj.clone()
        },
    ))
}

/// What a label is before the scan update.
#[derive(Clone, Copy, Debug)]
pub enum Predecessor<'a> {
    /// A label in the birth space of the scan.
    Birth(&'a BirthComponent),
    /// A label alive at the previous scan.
    Alive(&'a GaussianTrajectoryDensity),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// Birth label that was not born; it has no density.
    Unborn,
    /// Label died at this scan; its density is the predecessor, unchanged.
    Died,
    Alive(GaussianTrajectoryDensity),
}

/// Log weight increment and updated density of one label for one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanUpdate {
    pub log_weight: f64,
    pub outcome: Outcome,
}

impl ScanUpdate {
    pub fn weight(&self) -> f64 {
        libm::exp(self.log_weight)
    }
}

fn ln(p: f64) -> f64 {
    libm::log(p)
}

/// One-scan update of a single label given its association value `gamma`
/// (`-1` not alive, `0` misdetected, `j > 0` measurement `j` of `measurements`).
///
/// | predecessor | gamma | weight increment      | density               |
/// |-------------|-------|-----------------------|-----------------------|
/// | birth       | -1    | `Q_B`                 | none                  |
/// | birth       | 0     | `P_B Q_D`             | birth Gaussian        |
/// | birth       | j     | `P_B P_D q(z_j)/k(z_j)` | conditioned birth   |
/// | alive       | -1    | `Q_S`                 | unchanged             |
/// | alive       | 0     | `P_S Q_D`             | extended              |
/// | alive       | j     | `P_S P_D q(z_j)/k(z_j)` | extended, conditioned |
pub fn scan_update(
    predecessor: Predecessor<'_>,
    gamma: i32,
    model: &SystemModel,
    scan: usize,
    measurements: &[DVector<f64>],
    retention: Retention,
) -> Result<ScanUpdate> {
    if gamma < -1 || gamma > measurements.len() as i32 {
        return Err(Error::InvalidHistory(alloc::format!(
            "association value {gamma} outside -1..={}",
            measurements.len()
        )));
    }
    let meas = &model.measurement;
    let p_d = meas.detection_prob;
    let detection_terms = |index: usize| -> Result<(f64, &DVector<f64>)> {
        let z = &measurements[index - 1];
        let kappa = meas.clutter.intensity_at(z);
        if kappa <= 0.0 {
            return Err(Error::ZeroClutterDensity { scan, index });
        }
        Ok((ln(p_d) - ln(kappa), z))
    };

    match predecessor {
        Predecessor::Birth(birth) => {
            let p_b = birth.prob;
            if gamma < 0 {
                return Ok(ScanUpdate {
                    log_weight: ln(1.0 - p_b),
                    outcome: Outcome::Unborn,
                });
            }
            let prior = Gaussian {
                mean: birth.mean.clone(),
                cov: birth.cov.clone(),
            };
            let (log_weight, gaussian) = if gamma == 0 {
                (ln(p_b) + ln(1.0 - p_d), prior)
            } else {
                let (log_detect, z) = detection_terms(gamma as usize)?;
                let c = condition_on_measurement(&meas.observation, &meas.noise, &prior, z)?;
                (ln(p_b) + log_detect + c.log_likelihood, c.posterior)
            };
            let traj = GaussianTrajectoryDensity::new(birth.label, scan, model.state_dim(), gaussian)?;
            Ok(ScanUpdate {
                log_weight,
                outcome: Outcome::Alive(traj),
            })
        }
        Predecessor::Alive(prev) => {
            if prev.end() + 1 != scan {
                return Err(Error::InvalidHistory(alloc::format!(
                    "label {} ends at scan {}, cannot update at scan {scan}",
                    prev.label,
                    prev.end()
                )));
            }
            let p_s = model.dynamics.survival_prob;
            if gamma < 0 {
                return Ok(ScanUpdate {
                    log_weight: ln(1.0 - p_s),
                    outcome: Outcome::Died,
                });
            }
            let (f, q) = model.dynamics.transition_at(scan);
            let predicted = match retention {
                Retention::Full => joint_extend(f, q, prev)?,
                Retention::LastBlock => retain_last_block(&joint_extend(f, q, &retain_last_block(prev))?),
            };
            let (log_weight, traj) = if gamma == 0 {
                (ln(p_s) + ln(1.0 - p_d), predicted)
            } else {
                let (log_detect, z) = detection_terms(gamma as usize)?;
                let (log_q, traj) = condition_last_block(&meas.observation, &meas.noise, &predicted, z)?;
                (ln(p_s) + log_detect + log_q, traj)
            };
            Ok(ScanUpdate {
                log_weight,
                outcome: Outcome::Alive(traj),
            })
        }
    }
}
