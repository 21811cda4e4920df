//! Foot-noise estimation by innovation covariance matching.
//!
//! For a foot in contact the velocity kinematics give a right-invariant
//! observation of the body velocity. Its innovation `e_i` has covariance
//! `H_v P^- H_v^T + R (Q_uf + Q_v) R^T`; averaging `e_i e_i^T` over a short
//! window and subtracting the predicted part yields an estimate of the
//! unknown foot noise `Q_uf`, which is turned into a per-axis scale
//! `alpha in [1, alpha_max]` on the nominal contact foot noise.

use nalgebra::{DMatrix, DVector};

use crate::inekf::{FilterError, ObservationBlock, PredictionSnapshot};
use crate::legged::{build_process_noise, first_three_rows, AlphaDiag, ContactVector, NoiseConfig};
use crate::liegroup::{hat_so3, GroupState, LegVecs, Mat3, Vec3};

/// Velocity-kinematics observation for one leg:
/// `Y = (-[w]x p~ - v~, -1, 0, ..)`, `b = (0, -1, 0, ..)`,
/// `H_v = (0, I, 0, ..)`, `M_v = R_hat`.
pub fn velocity_observation(
    rel_pos: &Vec3,
    rel_vel: &Vec3,
    omega: &Vec3,
    chi: &GroupState,
    cfg: &NoiseConfig,
) -> ObservationBlock {
    let n = 5 + chi.n_legs();
    let dim = 15 + 3 * chi.n_legs();
    let mut b = DVector::zeros(n);
    b[3] = -1.0;
    let mut y = b.clone();
    y.fixed_rows_mut::<3>(0)
        .copy_from(&(-(hat_so3(omega) * rel_pos) - rel_vel));
    let mut h = DMatrix::zeros(3, dim);
    h.fixed_view_mut::<3, 3>(0, 3).copy_from(&Mat3::identity());
    ObservationBlock {
        y,
        b,
        h,
        m: chi.rot,
        noise: cfg.vel_kin_cov(),
        selection: first_three_rows(n),
    }
}

/// Innovation `e = R_hat(-[w]x p~ - v~) - v_hat`, in the inertial frame.
///
/// `omega` is the bias-corrected gyro rate. For a static foot and exact
/// sensors `e = 0`; a foot sliding with inertial velocity `u` gives `e = -u`.
pub fn velocity_innovation(rel_pos: &Vec3, rel_vel: &Vec3, omega: &Vec3, chi: &GroupState) -> Vec3 {
    chi.rot * (-(omega.cross(rel_pos)) - rel_vel) - chi.vel
}

/// Per-leg innovations for the current tick; `None` for legs not in contact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VelocityInnovation {
    pub e: LegVecs,
    pub valid: smallvec::SmallVec<[bool; 4]>,
}

impl VelocityInnovation {
    pub fn get(&self, leg: usize) -> Option<&Vec3> {
        if self.valid[leg] {
            Some(&self.e[leg])
        } else {
            None
        }
    }
}

/// Moving window of innovation outer products per leg. Slots that have not
/// been filled yet count as zero.
#[derive(Debug, Clone)]
pub struct InnovationWindow {
    size: usize,
    slots: Vec<Vec<Mat3>>,
    head: Vec<usize>,
    filled: Vec<usize>,
}

impl InnovationWindow {
    pub fn new(n_legs: usize, size: usize) -> Self {
        let size = size.max(1);
        Self {
            size,
            slots: vec![vec![Mat3::zeros(); size]; n_legs],
            head: vec![0; n_legs],
            filled: vec![0; n_legs],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn filled(&self, leg: usize) -> usize {
        self.filled[leg]
    }

    pub fn reset(&mut self, leg: usize) {
        self.slots[leg].iter_mut().for_each(|m| *m = Mat3::zeros());
        self.head[leg] = 0;
        self.filled[leg] = 0;
    }

    /// Pushes `e e^T` and returns `U = (1/m) sum` over the window.
    pub fn push(&mut self, leg: usize, e: &Vec3) -> Mat3 {
        let h = self.head[leg];
        self.slots[leg][h] = e * e.transpose();
        self.head[leg] = (h + 1) % self.size;
        self.filled[leg] = (self.filled[leg] + 1).min(self.size);
        self.covariance(leg)
    }

    pub fn covariance(&self, leg: usize) -> Mat3 {
        let sum = self.slots[leg].iter().fold(Mat3::zeros(), |acc, m| acc + m);
        sum / self.size as f64
    }
}

/// Per-leg diagonal foot-noise scale.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaScale {
    pub diag: LegVecs,
}

impl AlphaScale {
    pub fn ones(n_legs: usize) -> Self {
        Self {
            diag: smallvec::smallvec![Vec3::repeat(1.0); n_legs],
        }
    }
}

/// Estimated unknown foot noise `R^T (U - H_v P H_v^T) R - Q_v` in the body
/// frame.
pub fn matched_foot_noise(u: &Mat3, cov_pred: &DMatrix<f64>, chi: &GroupState, cfg: &NoiseConfig) -> Mat3 {
    let hph: Mat3 = cov_pred.fixed_view::<3, 3>(3, 3).into_owned();
    chi.rot.transpose() * (u - hph) * chi.rot - cfg.vel_kin_cov()
}

/// `alpha_jj = clamp(Q_uf,jj / Q_f,jj, 1, alpha_max)`.
pub fn estimate_alpha(u: &Mat3, cov_pred: &DMatrix<f64>, chi: &GroupState, cfg: &NoiseConfig) -> AlphaDiag {
    let q_uf = matched_foot_noise(u, cov_pred, chi, cfg);
    let q_f = cfg.foot_cov();
    Vec3::from_fn(|j, _| {
        let ratio = q_uf[(j, j)] / q_f[(j, j)];
        if ratio.is_nan() {
            1.0
        } else {
            ratio.clamp(1.0, cfg.alpha_max)
        }
    })
}

/// Covariance prediction re-run from `snapshot` with contact foot noise
/// scaled by `alpha`.
pub fn apply_adaptive_prediction(
    snapshot: &PredictionSnapshot,
    contacts: &ContactVector,
    alpha: &AlphaScale,
    cfg: &NoiseConfig,
) -> Result<DMatrix<f64>, FilterError> {
    snapshot.predict(&build_process_noise(contacts, cfg, &alpha.diag))
}
