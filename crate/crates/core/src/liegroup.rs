//! SO(3) and SE_{2+N}(3) group operations.
//!
//! An element of SE_{2+N}(3) bundles a rotation `R`, a velocity `v`, a
//! position `p` and `N` extra points `r_i` (foot positions for a legged
//! robot). Its `(5+N) x (5+N)` matrix embedding is
//!
//! ```text
//! | R  v  p  r_1 ... r_N |
//! | 0  1  0  0   ...  0  |
//! | ...                  |
//! | 0  0  0  0   ...  1  |
//! ```
//!
//! Tangent vectors are ordered `(xi_R, xi_v, xi_p, xi_r1, ..., xi_rN)`.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use smallvec::SmallVec;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
/// Per-leg 3-vectors, stored inline for up to four legs.
pub type LegVecs = SmallVec<[Vec3; 4]>;

/// Below this rotation angle the closed forms switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("tangent vector length {0} is not 9 + 3N")]
    TangentLength(usize),
    #[error("landmark count mismatch: {0} vs {1}")]
    LegCount(usize, usize),
    #[error("non-finite value in group element")]
    NonFinite,
    #[error("rotation is not orthonormal (residual {0:e})")]
    NotRotation(f64),
}

/// Skew-symmetric matrix with `hat_so3(w) * y == w.cross(&y)`.
#[inline]
pub fn hat_so3(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

#[inline]
pub fn vee_so3(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula, Taylor-expanded for `|w| < SMALL_ANGLE`.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat_so3(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3); maps translational tangent blocks in `exp_se2n3`.
pub fn left_jacobian_so3(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat_so3(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Mat3::identity() + k * a + k * k * b
}

pub fn left_jacobian_inv_so3(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat_so3(w);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Mat3::identity() - k * 0.5 + k * k * c
}

/// Principal logarithm, `|w| <= pi`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let skew = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    // acos loses half the digits near 0 and pi; atan2 does not
    let theta = (0.5 * skew.norm()).atan2(cos_theta);
    if theta < SMALL_ANGLE {
        // sin(theta)/theta ~ 1 - theta^2/6
        return skew * 0.5 * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > 1e-3 {
        return skew * (theta / (2.0 * theta.sin()));
    }
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part R + R^T = 2 cos(theta) I + 2 (1 - cos(theta)) a a^T.
    let s = (r + r.transpose()) * 0.5 - Mat3::identity() * cos_theta;
    let denom = 1.0 - cos_theta;
    let diag = Vec3::new(s[(0, 0)], s[(1, 1)], s[(2, 2)]) / denom;
    let i = diag.imax();
    let mut axis = Vec3::zeros();
    axis[i] = diag[i].max(0.0).sqrt();
    for j in 0..3 {
        if j != i {
            axis[j] = s[(i, j)] / (denom * axis[i]);
        }
    }
    axis.normalize_mut();
    // Fix the sign using the (small) antisymmetric part when available.
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// One Newton step of the polar decomposition, `R <- (R + R^-T) / 2`.
pub fn reorthonormalize(r: &Mat3) -> Mat3 {
    match r.try_inverse() {
        Some(inv) => (r + inv.transpose()) * 0.5,
        None => *r,
    }
}

/// Tangent vector of SE_{2+N}(3).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec(DVector<f64>);

impl TangentVec {
    pub fn new(v: DVector<f64>) -> Result<Self, LieError> {
        legs_for_len(v.len())?;
        Ok(Self(v))
    }

    pub fn zeros(n_legs: usize) -> Self {
        Self(DVector::zeros(9 + 3 * n_legs))
    }

    pub fn n_legs(&self) -> usize {
        (self.0.len() - 9) / 3
    }

    pub fn block(&self, i: usize) -> Vec3 {
        Vec3::new(self.0[3 * i], self.0[3 * i + 1], self.0[3 * i + 2])
    }

    pub fn rot(&self) -> Vec3 {
        self.block(0)
    }
    pub fn vel(&self) -> Vec3 {
        self.block(1)
    }
    pub fn pos(&self) -> Vec3 {
        self.block(2)
    }
    pub fn foot(&self, leg: usize) -> Vec3 {
        self.block(3 + leg)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

fn legs_for_len(len: usize) -> Result<usize, LieError> {
    if len < 9 || (len - 9) % 3 != 0 {
        return Err(LieError::TangentLength(len));
    }
    Ok((len - 9) / 3)
}

/// Element of SE_{2+N}(3).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupState {
    pub rot: Mat3,
    pub vel: Vec3,
    pub pos: Vec3,
    pub feet: LegVecs,
}

impl GroupState {
    pub fn identity(n_legs: usize) -> Self {
        Self {
            rot: Mat3::identity(),
            vel: Vec3::zeros(),
            pos: Vec3::zeros(),
            feet: smallvec::smallvec![Vec3::zeros(); n_legs],
        }
    }

    /// Validated constructor: finite entries, `R^T R = I` and `det R = 1`
    /// within 1e-9.
    pub fn new(rot: Mat3, vel: Vec3, pos: Vec3, feet: LegVecs) -> Result<Self, LieError> {
        let s = Self { rot, vel, pos, feet };
        s.validate(1e-9)?;
        Ok(s)
    }

    pub fn validate(&self, tol: f64) -> Result<(), LieError> {
        let finite = self.rot.iter().all(|x| x.is_finite())
            && self.vel.iter().all(|x| x.is_finite())
            && self.pos.iter().all(|x| x.is_finite())
            && self.feet.iter().all(|f| f.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(LieError::NonFinite);
        }
        let ortho = (self.rot.transpose() * self.rot - Mat3::identity()).abs().max();
        let det = (self.rot.determinant() - 1.0).abs();
        let residual = ortho.max(det);
        if residual > tol {
            return Err(LieError::NotRotation(residual));
        }
        Ok(())
    }

    pub fn n_legs(&self) -> usize {
        self.feet.len()
    }

    /// Group product `self * other`.
    pub fn compose(&self, other: &GroupState) -> Result<GroupState, LieError> {
        if self.n_legs() != other.n_legs() {
            return Err(LieError::LegCount(self.n_legs(), other.n_legs()));
        }
        Ok(GroupState {
            rot: self.rot * other.rot,
            vel: self.rot * other.vel + self.vel,
            pos: self.rot * other.pos + self.pos,
            feet: self
                .feet
                .iter()
                .zip(other.feet.iter())
                .map(|(a, b)| self.rot * b + a)
                .collect(),
        })
    }

    pub fn inverse(&self) -> GroupState {
        let rt = self.rot.transpose();
        GroupState {
            rot: rt,
            vel: -(rt * self.vel),
            pos: -(rt * self.pos),
            feet: self.feet.iter().map(|f| -(rt * f)).collect(),
        }
    }

    /// `(5+N) x (5+N)` matrix embedding.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = 5 + self.n_legs();
        let mut m = DMatrix::identity(n, n);
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vel);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.pos);
        for (i, f) in self.feet.iter().enumerate() {
            m.fixed_view_mut::<3, 1>(0, 5 + i).copy_from(f);
        }
        m
    }

    /// Inverse of [`GroupState::to_matrix`]; does not validate.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self, LieError> {
        if m.nrows() < 5 || m.nrows() != m.ncols() {
            return Err(LieError::TangentLength(m.nrows()));
        }
        let n_legs = m.nrows() - 5;
        Ok(Self {
            rot: m.fixed_view::<3, 3>(0, 0).into_owned(),
            vel: m.fixed_view::<3, 1>(0, 3).into_owned(),
            pos: m.fixed_view::<3, 1>(0, 4).into_owned(),
            feet: (0..n_legs)
                .map(|i| m.fixed_view::<3, 1>(0, 5 + i).into_owned())
                .collect(),
        })
    }

    /// The translational columns `v, p, r_1..r_N` in order.
    pub fn column(&self, i: usize) -> &Vec3 {
        match i {
            0 => &self.vel,
            1 => &self.pos,
            k => &self.feet[k - 2],
        }
    }
}

/// `xi^` as a `(5+N) x (5+N)` matrix.
pub fn wedge(xi: &[f64]) -> Result<DMatrix<f64>, LieError> {
    let n_legs = legs_for_len(xi.len())?;
    let n = 5 + n_legs;
    let mut m = DMatrix::zeros(n, n);
    let w = Vec3::new(xi[0], xi[1], xi[2]);
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat_so3(&w));
    for col in 0..(2 + n_legs) {
        for r in 0..3 {
            m[(r, 3 + col)] = xi[3 + 3 * col + r];
        }
    }
    Ok(m)
}

/// Exponential map `Exp: R^{9+3N} -> SE_{2+N}(3)`.
pub fn exp_se2n3_slice(xi: &[f64]) -> Result<GroupState, LieError> {
    let n_legs = legs_for_len(xi.len())?;
    let phi = Vec3::new(xi[0], xi[1], xi[2]);
    let jac = left_jacobian_so3(&phi);
    let block = |i: usize| Vec3::new(xi[3 * i], xi[3 * i + 1], xi[3 * i + 2]);
    Ok(GroupState {
        rot: exp_so3(&phi),
        vel: jac * block(1),
        pos: jac * block(2),
        feet: (0..n_legs).map(|i| jac * block(3 + i)).collect(),
    })
}

pub fn exp_se2n3(xi: &TangentVec) -> GroupState {
    exp_se2n3_slice(xi.0.as_slice()).expect("TangentVec length is validated at construction")
}

/// Inverse of [`exp_se2n3`] on the principal branch.
pub fn log_se2n3(chi: &GroupState) -> TangentVec {
    let phi = log_so3(&chi.rot);
    let jinv = left_jacobian_inv_so3(&phi);
    let n = chi.n_legs();
    let mut v = DVector::zeros(9 + 3 * n);
    v.fixed_rows_mut::<3>(0).copy_from(&phi);
    for i in 0..(2 + n) {
        v.fixed_rows_mut::<3>(3 + 3 * i).copy_from(&(jinv * chi.column(i)));
    }
    TangentVec(v)
}

/// Adjoint matrix, `(Ad_chi xi)^ = chi xi^ chi^-1`.
pub fn adjoint(chi: &GroupState) -> DMatrix<f64> {
    let n = 9 + 3 * chi.n_legs();
    let mut ad = DMatrix::zeros(n, n);
    let r = &chi.rot;
    for blk in 0..(n / 3) {
        ad.fixed_view_mut::<3, 3>(3 * blk, 3 * blk).copy_from(r);
    }
    for i in 0..(2 + chi.n_legs()) {
        ad.fixed_view_mut::<3, 3>(3 + 3 * i, 0)
            .copy_from(&(hat_so3(chi.column(i)) * r));
    }
    ad
}
