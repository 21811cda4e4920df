//! Mahalanobis gate on the velocity-kinematics innovation.
//!
//! A leg whose innovation is implausible under `S = H_v P^- H_v^T + R Q_v R^T`
//! is treated as slipping: its foot noise is raised to the swing level for
//! this tick and it is left out of the position update.

use nalgebra::{Cholesky, DMatrix};
use smallvec::SmallVec;

use crate::adaptive::{AlphaScale, VelocityInnovation};
use crate::inekf::{FilterError, PredictionSnapshot, MAX_INNOVATION_CONDITION};
use crate::legged::{build_process_noise, ContactVector, NoiseConfig};
use crate::liegroup::{GroupState, Mat3, Vec3};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlipDecision {
    /// Squared distance per leg; 0 for legs that were not tested.
    pub distance: SmallVec<[f64; 4]>,
    pub rejected: SmallVec<[bool; 4]>,
}

impl SlipDecision {
    pub fn none(n_legs: usize) -> Self {
        Self {
            distance: smallvec::smallvec![0.0; n_legs],
            rejected: smallvec::smallvec![false; n_legs],
        }
    }

    pub fn any(&self) -> bool {
        self.rejected.iter().any(|&r| r)
    }
}

/// Innovation covariance `S = P^-_vv + R Q_v R^T`.
pub fn innovation_covariance(cov_pred: &DMatrix<f64>, chi: &GroupState, cfg: &NoiseConfig) -> Mat3 {
    let hph: Mat3 = cov_pred.fixed_view::<3, 3>(3, 3).into_owned();
    hph + chi.rot * cfg.vel_kin_cov() * chi.rot.transpose()
}

/// `d = e^T S^-1 e`. Returns `None` when `S` is too ill-conditioned to trust.
pub fn squared_distance(e: &Vec3, s: &Mat3) -> Option<f64> {
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_INNOVATION_CONDITION {
        return None;
    }
    let chol = Cholesky::new(*s)?;
    Some(e.dot(&chol.solve(e)).max(0.0))
}

/// Gates every valid innovation against `threshold`. An untrustworthy `S`
/// counts as a rejection.
pub fn mahalanobis(
    innov: &VelocityInnovation,
    cov_pred: &DMatrix<f64>,
    chi: &GroupState,
    cfg: &NoiseConfig,
    threshold: f64,
) -> SlipDecision {
    let n = innov.e.len();
    let mut out = SlipDecision::none(n);
    let s = innovation_covariance(cov_pred, chi, cfg);
    for leg in 0..n {
        let Some(e) = innov.get(leg) else { continue };
        match squared_distance(e, &s) {
            Some(d) => {
                out.distance[leg] = d;
                out.rejected[leg] = d > threshold;
            }
            None => {
                out.distance[leg] = f64::INFINITY;
                out.rejected[leg] = true;
            }
        }
    }
    out
}

/// Contact set as seen by the noise model once rejected legs are demoted.
pub fn effective_contacts(contacts: &ContactVector, decision: &SlipDecision) -> ContactVector {
    let mut c = contacts.clone();
    for (flag, &rej) in c.flags.iter_mut().zip(&decision.rejected) {
        *flag &= !rej;
    }
    c
}

/// Re-runs the covariance prediction with rejected legs at swing noise.
/// Returns `None` when nothing was rejected, leaving the caller's covariance
/// as is.
pub fn apply_rejection(
    snapshot: &PredictionSnapshot,
    contacts: &ContactVector,
    alpha: &AlphaScale,
    decision: &SlipDecision,
    cfg: &NoiseConfig,
) -> Result<Option<DMatrix<f64>>, FilterError> {
    if !decision.any() {
        return Ok(None);
    }
    let eff = effective_contacts(contacts, decision);
    snapshot.predict(&build_process_noise(&eff, cfg, &alpha.diag)).map(Some)
}
