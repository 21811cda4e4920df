//! Legged-robot instance of the filter: IMU-driven plant on SE_{2+N}(3) with
//! foot positions as extra columns, contact-switched foot noise and the
//! leg-kinematics position observation.

use nalgebra::{DMatrix, DVector, Vector6};
use smallvec::SmallVec;

use crate::inekf::{ObservationBlock, ProcessNoise};
use crate::liegroup::{exp_so3, hat_so3, GroupState, LegVecs, Mat3, Vec3};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Body-frame angular rate, rad/s.
    pub gyro: Vec3,
    /// Body-frame specific force, m/s^2.
    pub accel: Vec3,
}

/// Body-frame foot position and velocity relative to the base, per leg.
#[derive(Debug, Clone, PartialEq)]
pub struct LegKinSample {
    pub rel_pos: LegVecs,
    pub rel_vel: LegVecs,
}

impl LegKinSample {
    pub fn n_legs(&self) -> usize {
        self.rel_pos.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactVector {
    pub flags: SmallVec<[bool; 4]>,
    pub probability: SmallVec<[f64; 4]>,
}

impl ContactVector {
    pub fn all(n_legs: usize, in_contact: bool) -> Self {
        Self {
            flags: smallvec::smallvec![in_contact; n_legs],
            probability: smallvec::smallvec![if in_contact { 1.0 } else { 0.0 }; n_legs],
        }
    }

    pub fn from_flags(flags: &[bool]) -> Self {
        Self {
            flags: flags.iter().copied().collect(),
            probability: flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn n_legs(&self) -> usize {
        self.flags.len()
    }
}

/// Noise densities and adaptive-filter tuning.
///
/// Continuous densities are standard deviations (`w` symbols); the
/// corresponding covariance densities are their squares.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// rad/s/sqrt(Hz)
    pub gyro_noise: f64,
    /// m/s^2/sqrt(Hz)
    pub accel_noise: f64,
    /// rad/s^2/sqrt(Hz)
    pub gyro_bias_walk: f64,
    /// m/s^3/sqrt(Hz)
    pub accel_bias_walk: f64,
    /// Contact foot velocity noise per axis, m/s/sqrt(Hz).
    pub foot_noise: Vec3,
    /// Swing foot covariance density, m^2/s (applied isotropically).
    pub swing_noise: f64,
    /// Kinematic position measurement noise, m.
    pub kin_noise: f64,
    /// Diagonal of the velocity-kinematics compound noise `Q_v`, (m/s)^2.
    pub vel_kin_var: Vec3,
    /// Innovation window length.
    pub window: usize,
    pub alpha_max: f64,
    /// Squared Mahalanobis distance above which a leg is rejected.
    pub slip_threshold: f64,
    pub gravity: Vec3,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gyro_noise: 0.005 * 1e-3f64.sqrt(),
            accel_noise: 0.05 * 1e-3f64.sqrt(),
            gyro_bias_walk: 1e-4,
            accel_bias_walk: 1e-4,
            foot_noise: Vec3::repeat(0.02),
            swing_noise: 1e4,
            kin_noise: 0.01,
            vel_kin_var: Vec3::repeat(0.05 * 0.05),
            window: 10,
            alpha_max: 9.0,
            slip_threshold: 7.81,
            gravity: Vec3::new(0.0, 0.0, -GRAVITY),
        }
    }
}

impl NoiseConfig {
    /// `Q_f` for a contact foot.
    pub fn foot_cov(&self) -> Mat3 {
        Mat3::from_diagonal(&self.foot_noise.component_mul(&self.foot_noise))
    }

    pub fn swing_cov(&self) -> Mat3 {
        Mat3::identity() * self.swing_noise
    }

    pub fn kin_cov(&self) -> Mat3 {
        Mat3::identity() * (self.kin_noise * self.kin_noise)
    }

    pub fn vel_kin_cov(&self) -> Mat3 {
        Mat3::from_diagonal(&self.vel_kin_var)
    }

    /// Checks the documented invariants.
    pub fn validate(&self) -> Result<(), String> {
        let scalars = [
            ("gyro_noise", self.gyro_noise),
            ("accel_noise", self.accel_noise),
            ("gyro_bias_walk", self.gyro_bias_walk),
            ("accel_bias_walk", self.accel_bias_walk),
            ("swing_noise", self.swing_noise),
            ("kin_noise", self.kin_noise),
        ];
        for (name, v) in scalars {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and non-negative"));
            }
        }
        if self.foot_noise.iter().any(|v| !(v.is_finite() && *v >= 0.0))
            || self.vel_kin_var.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err("foot_noise and vel_kin_var must be non-negative".into());
        }
        if self.swing_noise <= self.foot_cov().max() {
            return Err("swing_noise must exceed the contact foot noise".into());
        }
        if self.window < 1 {
            return Err("window must be at least 1".into());
        }
        if !(self.alpha_max >= 1.0) {
            return Err("alpha_max must be >= 1".into());
        }
        if !(self.slip_threshold > 0.0) {
            return Err("slip_threshold must be positive".into());
        }
        Ok(())
    }
}

/// Mean time derivatives of the plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantRates {
    pub rot: Mat3,
    pub vel: Vec3,
    pub pos: Vec3,
}

/// Bias-corrected rates `(omega, a)`.
pub fn corrected_imu(imu: &ImuSample, bias: &Vector6<f64>) -> (Vec3, Vec3) {
    (imu.gyro - bias.fixed_rows::<3>(0), imu.accel - bias.fixed_rows::<3>(3))
}

/// Noise-free plant: `R' = R [w]x`, `v' = R a + g`, `p' = v`; feet and biases
/// have zero mean rate.
pub fn plant_dynamics(chi: &GroupState, bias: &Vector6<f64>, imu: &ImuSample, gravity: &Vec3) -> PlantRates {
    let (omega, accel) = corrected_imu(imu, bias);
    PlantRates {
        rot: chi.rot * hat_so3(&omega),
        vel: chi.rot * accel + gravity,
        pos: chi.vel,
    }
}

/// The plant written as `f(chi, u)` on the matrix embedding.
pub fn plant_matrix(chi: &GroupState, omega: &Vec3, accel: &Vec3, gravity: &Vec3) -> DMatrix<f64> {
    let n = 5 + chi.n_legs();
    let mut f = DMatrix::zeros(n, n);
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&(chi.rot * hat_so3(omega)));
    f.fixed_view_mut::<3, 1>(0, 3).copy_from(&(chi.rot * accel + gravity));
    f.fixed_view_mut::<3, 1>(0, 4).copy_from(&chi.vel);
    f
}

/// Discretized mean dynamics over `dt` (strapdown integration with a
/// second-order position term). Feet are held constant.
pub fn strapdown(chi: &GroupState, bias: &Vector6<f64>, imu: &ImuSample, dt: f64, gravity: &Vec3) -> GroupState {
    let (omega, accel) = corrected_imu(imu, bias);
    let acc_world = chi.rot * accel + gravity;
    GroupState {
        rot: chi.rot * exp_so3(&(omega * dt)),
        vel: chi.vel + acc_world * dt,
        pos: chi.pos + chi.vel * dt + acc_world * (0.5 * dt * dt),
        feet: chi.feet.clone(),
    }
}

/// Continuous error-propagation matrix over `(xi, eps_b)`.
pub fn build_a(chi: &GroupState, gravity: &Vec3) -> DMatrix<f64> {
    let n_legs = chi.n_legs();
    let dim = 15 + 3 * n_legs;
    let bg = 9 + 3 * n_legs;
    let ba = bg + 3;
    let r = &chi.rot;
    let mut a = DMatrix::zeros(dim, dim);
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&hat_so3(gravity));
    a.fixed_view_mut::<3, 3>(6, 3).copy_from(&Mat3::identity());
    a.fixed_view_mut::<3, 3>(0, bg).copy_from(&(-r));
    a.fixed_view_mut::<3, 3>(3, ba).copy_from(&(-r));
    for i in 0..(2 + n_legs) {
        a.fixed_view_mut::<3, 3>(3 + 3 * i, bg)
            .copy_from(&(-hat_so3(chi.column(i)) * r));
    }
    a
}

/// Per-leg foot-noise scale; diagonal entries of `alpha`.
pub type AlphaDiag = Vec3;

/// Process noise with contact-switched foot blocks: `alpha * Q_f` for contact
/// legs, `Q_swing` for swing legs.
pub fn build_process_noise(contacts: &ContactVector, cfg: &NoiseConfig, alpha: &[AlphaDiag]) -> ProcessNoise {
    let n_legs = contacts.n_legs();
    let mut q = ProcessNoise::zeros(n_legs);
    q.blocks[0] = Mat3::identity() * cfg.gyro_noise.powi(2);
    q.blocks[1] = Mat3::identity() * cfg.accel_noise.powi(2);
    let qf = cfg.foot_cov();
    for leg in 0..n_legs {
        q.blocks[3 + leg] = if contacts.flags[leg] {
            let s = alpha.get(leg).copied().unwrap_or(Vec3::repeat(1.0));
            Mat3::from_diagonal(&s) * qf
        } else {
            cfg.swing_cov()
        };
    }
    q.blocks[3 + n_legs] = Mat3::identity() * cfg.gyro_bias_walk.powi(2);
    q.blocks[4 + n_legs] = Mat3::identity() * cfg.accel_bias_walk.powi(2);
    q
}

/// Leg-kinematics position observation for `leg`:
/// `Y = (p~, 0, 1, -e_leg)`, `b = (0, 0, 1, -e_leg)`,
/// `H = (0, 0, -I, .., I at leg, .., 0)`, `M = R_hat`.
pub fn build_position_observation(
    leg: usize,
    rel_pos: &Vec3,
    chi_est: &GroupState,
    cfg: &NoiseConfig,
) -> ObservationBlock {
    let n_legs = chi_est.n_legs();
    let n = 5 + n_legs;
    let dim = 15 + 3 * n_legs;
    let mut b = DVector::zeros(n);
    b[4] = 1.0;
    b[5 + leg] = -1.0;
    let mut y = b.clone();
    y.fixed_rows_mut::<3>(0).copy_from(rel_pos);
    let mut h = DMatrix::zeros(3, dim);
    h.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-Mat3::identity()));
    h.fixed_view_mut::<3, 3>(0, 9 + 3 * leg).copy_from(&Mat3::identity());
    ObservationBlock {
        y,
        b,
        h,
        m: chi_est.rot,
        noise: cfg.kin_cov(),
        selection: first_three_rows(n),
    }
}

pub fn first_three_rows(n: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(3, n);
    s.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
    s
}
