//! One tick of the complete filter loop.
//!
//! Order within a tick:
//! 1. propagate the mean with the previous IMU sample, predict `P^-` with
//!    the nominal contact-switched noise;
//! 2. velocity-kinematics innovations for contact legs;
//! 3. (FE) per-leg `alpha` from the innovation window, re-predict;
//! 4. (SR) Mahalanobis gate against the nominal prior, re-predict with
//!    rejected legs at swing noise;
//! 5. position update from contact legs that were not rejected.

use nalgebra::{DMatrix, DVector, Vector6};
use smallvec::SmallVec;

use crate::adaptive::{
    apply_adaptive_prediction, estimate_alpha, velocity_innovation, AlphaScale, InnovationWindow, VelocityInnovation,
};
use crate::contact::{ContactDetector, FusionConfig, GaitSchedule};
use crate::inekf::{Discretization, FilterError, FilterState, LinearizedDynamics, PredictionSnapshot, UpdateInfo};
use crate::legged::{
    build_a, build_position_observation, build_process_noise, strapdown, ContactVector, ImuSample, LegKinSample,
    NoiseConfig,
};
use crate::liegroup::{GroupState, Mat3, Vec3};
use crate::slip::{apply_rejection, mahalanobis, SlipDecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Iekf,
    IekfSr,
    IekfFe,
    IekfSrFe,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Iekf, Variant::IekfSr, Variant::IekfFe, Variant::IekfSrFe];

    pub fn slip_rejection(self) -> bool {
        matches!(self, Variant::IekfSr | Variant::IekfSrFe)
    }

    pub fn foot_estimation(self) -> bool {
        matches!(self, Variant::IekfFe | Variant::IekfSrFe)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Iekf => "IEKF",
            Variant::IekfSr => "IEKF+SR",
            Variant::IekfFe => "IEKF+FE",
            Variant::IekfSrFe => "IEKF+SR+FE",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_uppercase().replace(['-', '_', ' '], "+");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| format!("unknown variant '{s}' (expected IEKF, IEKF+SR, IEKF+FE or IEKF+SR+FE)"))
    }
}

/// Initial standard deviations of the error state.
#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub rot_std: Vec3,
    pub vel_std: f64,
    pub pos_std: f64,
    pub foot_std: f64,
    pub gyro_bias_std: f64,
    pub accel_bias_std: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            rot_std: Vec3::repeat(0.1),
            vel_std: 0.1,
            pos_std: 0.01,
            foot_std: 0.05,
            gyro_bias_std: 0.005,
            accel_bias_std: 0.05,
        }
    }
}

impl InitConfig {
    pub fn covariance(&self, n_legs: usize) -> DMatrix<f64> {
        let dim = 15 + 3 * n_legs;
        let mut d = DVector::zeros(dim);
        for k in 0..3 {
            d[k] = self.rot_std[k].powi(2);
            d[3 + k] = self.vel_std.powi(2);
            d[6 + k] = self.pos_std.powi(2);
            d[dim - 6 + k] = self.gyro_bias_std.powi(2);
            d[dim - 3 + k] = self.accel_bias_std.powi(2);
        }
        for i in 0..3 * n_legs {
            d[9 + i] = self.foot_std.powi(2);
        }
        DMatrix::from_diagonal(&d)
    }
}

/// Everything the robot reports at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub t: f64,
    pub imu: ImuSample,
    pub kin: LegKinSample,
    /// Per-leg normal force evidence (N).
    pub force: SmallVec<[f64; 4]>,
}

impl SensorFrame {
    pub fn n_legs(&self) -> usize {
        self.kin.n_legs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub contacts: ContactVector,
    pub innovation: VelocityInnovation,
    /// Active scale per leg; all ones for swing legs or when FE is off.
    pub alpha: AlphaScale,
    /// Distances are always evaluated for contact legs; `rejected` is only
    /// set when SR is enabled.
    pub slip: SlipDecision,
    pub update: Option<UpdateInfo>,
    /// Set when the update was skipped because `S` was ill-conditioned.
    pub update_refused: bool,
}

impl StepDiagnostics {
    fn empty(n_legs: usize) -> Self {
        Self {
            t: 0.0,
            contacts: ContactVector::all(n_legs, false),
            innovation: VelocityInnovation {
                e: smallvec::smallvec![Vec3::zeros(); n_legs],
                valid: smallvec::smallvec![false; n_legs],
            },
            alpha: AlphaScale::ones(n_legs),
            slip: SlipDecision::none(n_legs),
            update: None,
            update_refused: false,
        }
    }
}

/// Right-invariant EKF with optional foot-noise estimation and slip
/// rejection.
#[derive(Debug, Clone)]
pub struct AdaptiveInekf {
    pub state: FilterState,
    pub cfg: NoiseConfig,
    pub variant: Variant,
    pub discretization: Discretization,
    window: InnovationWindow,
    prev_imu: Option<ImuSample>,
    prev_contact: SmallVec<[bool; 4]>,
    diag: StepDiagnostics,
}

impl AdaptiveInekf {
    pub fn new(
        chi: GroupState,
        bias: Vector6<f64>,
        init: &InitConfig,
        cfg: NoiseConfig,
        variant: Variant,
    ) -> Result<Self, FilterError> {
        let n = chi.n_legs();
        let cov = init.covariance(n);
        Ok(Self {
            state: FilterState::new(chi, bias, cov)?,
            window: InnovationWindow::new(n, cfg.window),
            cfg,
            variant,
            discretization: Discretization::FirstOrder,
            prev_imu: None,
            prev_contact: smallvec::smallvec![false; n],
            diag: StepDiagnostics::empty(n),
        })
    }

    pub fn n_legs(&self) -> usize {
        self.state.n_legs()
    }

    /// Diagnostics of the most recent tick.
    pub fn diagnostics(&self) -> &StepDiagnostics {
        &self.diag
    }

    pub fn step(&mut self, frame: &SensorFrame, contacts: &ContactVector) -> Result<&StepDiagnostics, FilterError> {
        let n = self.n_legs();
        if frame.n_legs() != n || contacts.n_legs() != n {
            return Err(FilterError::Dimension {
                expected: n,
                got: frame.n_legs(),
            });
        }
        self.diag.t = frame.t;
        self.diag.contacts.clone_from(contacts);
        self.diag.update = None;
        self.diag.update_refused = false;

        // 1. propagation and nominal prediction
        let snapshot = match self.prev_imu {
            Some(prev) => {
                let dt = frame.t - prev.t;
                let chi_pred = strapdown(&self.state.chi, &self.state.bias, &prev, dt, &self.cfg.gravity);
                let dynamics = LinearizedDynamics {
                    a: build_a(&self.state.chi, &self.cfg.gravity),
                    noise: build_process_noise(contacts, &self.cfg, &[]),
                    dt,
                    discretization: self.discretization,
                };
                let snap = PredictionSnapshot::new(&self.state.cov, &chi_pred, &dynamics)?;
                self.state.cov = snap.predict(&dynamics.noise)?;
                self.state.chi = chi_pred;
                Some(snap)
            }
            None => None,
        };
        self.prev_imu = Some(frame.imu);

        // 2. velocity innovations against the nominal prior
        let omega = frame.imu.gyro - self.state.gyro_bias();
        for leg in 0..n {
            let c = contacts.flags[leg];
            if c && !self.prev_contact[leg] {
                self.window.reset(leg);
                self.reset_foot(leg, &frame.kin.rel_pos[leg]);
            }
            self.diag.innovation.valid[leg] = c;
            self.diag.innovation.e[leg] = if c {
                velocity_innovation(
                    &frame.kin.rel_pos[leg],
                    &frame.kin.rel_vel[leg],
                    &omega,
                    &self.state.chi,
                )
            } else {
                Vec3::zeros()
            };
        }
        self.prev_contact.clone_from(&contacts.flags);
        let nominal = &self.state.cov;

        // 3. foot-noise estimation
        for leg in 0..n {
            self.diag.alpha.diag[leg] = Vec3::repeat(1.0);
            if let Some(e) = self.diag.innovation.get(leg) {
                let u = self.window.push(leg, e);
                if self.variant.foot_estimation() {
                    self.diag.alpha.diag[leg] = estimate_alpha(&u, nominal, &self.state.chi, &self.cfg);
                }
            }
        }

        // 4. slip gate, evaluated on the nominal prior
        self.diag.slip = mahalanobis(
            &self.diag.innovation,
            nominal,
            &self.state.chi,
            &self.cfg,
            self.cfg.slip_threshold,
        );
        if !self.variant.slip_rejection() {
            self.diag.slip.rejected.iter_mut().for_each(|r| *r = false);
        }

        if let Some(snap) = &snapshot {
            let rejected = apply_rejection(snap, contacts, &self.diag.alpha, &self.diag.slip, &self.cfg)?;
            if let Some(cov) = rejected {
                self.state.cov = cov;
            } else if self.variant.foot_estimation() && contacts.flags.iter().any(|&c| c) {
                self.state.cov = apply_adaptive_prediction(snap, contacts, &self.diag.alpha, &self.cfg)?;
            }
        }

        // 5. position update
        let mut blocks: SmallVec<[_; 4]> = SmallVec::new();
        for leg in 0..n {
            if contacts.flags[leg] && !self.diag.slip.rejected[leg] {
                blocks.push(build_position_observation(
                    leg,
                    &frame.kin.rel_pos[leg],
                    &self.state.chi,
                    &self.cfg,
                ));
            }
        }
        if !blocks.is_empty() {
            match self.state.update(&blocks) {
                Ok(info) => self.diag.update = Some(info),
                Err(FilterError::SingularInnovation { .. }) => self.diag.update_refused = true,
                Err(e) => return Err(e),
            }
        }
        Ok(&self.diag)
    }

    /// Re-anchors a foot that just touched down at `p + R p~`, with error
    /// `xi_r = xi_p + R n`: its rows copy the position rows plus fresh
    /// measurement noise.
    fn reset_foot(&mut self, leg: usize, rel_pos: &Vec3) {
        let chi = &mut self.state.chi;
        chi.feet[leg] = chi.pos + chi.rot * rel_pos;
        let r = chi.rot;
        let cov = &mut self.state.cov;
        let f = 9 + 3 * leg;
        let dim = cov.nrows();
        for j in 0..dim {
            if (f..f + 3).contains(&j) {
                continue;
            }
            for k in 0..3 {
                let v = cov[(6 + k, j)];
                cov[(f + k, j)] = v;
                cov[(j, f + k)] = v;
            }
        }
        let pp: Mat3 = cov.fixed_view::<3, 3>(6, 6).into_owned();
        let ff = pp + r * self.cfg.kin_cov() * r.transpose();
        cov.fixed_view_mut::<3, 3>(f, f).copy_from(&ff);
    }
}

/// Contact detector followed by the filter.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub detector: ContactDetector,
    pub filter: AdaptiveInekf,
}

impl Pipeline {
    pub fn new(schedule: GaitSchedule, fusion: FusionConfig, filter: AdaptiveInekf) -> Self {
        Self {
            detector: ContactDetector::new(schedule, fusion),
            filter,
        }
    }

    pub fn step(&mut self, frame: &SensorFrame) -> Result<&StepDiagnostics, FilterError> {
        let contacts = self.detector.step(frame.t, &frame.force);
        self.filter.step(frame, &contacts)
    }
}

/// Zero-point calibration of `Q_v`: the mean of
/// `R^T (e e^T - P_vv) R` over contact samples from a standstill run, so that
/// the matched foot noise averages to zero there. `frames` should all be in
/// stance. Diagonal entries are floored at `floor`.
pub fn calibrate_qv(
    frames: &[SensorFrame],
    chi0: GroupState,
    bias0: Vector6<f64>,
    init: &InitConfig,
    cfg: &NoiseConfig,
    skip: usize,
    floor: f64,
) -> Result<Vec3, FilterError> {
    let n = chi0.n_legs();
    let mut filter = AdaptiveInekf::new(chi0, bias0, init, cfg.clone(), Variant::Iekf)?;
    let contacts = ContactVector::all(n, true);
    let mut acc = Mat3::zeros();
    let mut count = 0usize;
    for (k, frame) in frames.iter().enumerate() {
        // innovations are taken against the prior, before this tick's update
        let prior = filter.clone();
        let diag = filter.step(frame, &contacts)?;
        if k < skip {
            continue;
        }
        let pvv_prior = prior_velocity_cov(&prior, frame, &contacts)?;
        let r = &filter_prior_rot(&prior, frame);
        for leg in 0..n {
            if let Some(e) = diag.innovation.get(leg) {
                acc += r.transpose() * (e * e.transpose() - pvv_prior) * r;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Ok(cfg.vel_kin_var);
    }
    let mean = acc / count as f64;
    Ok(Vec3::from_fn(|j, _| mean[(j, j)].max(floor)))
}

fn filter_prior_rot(prior: &AdaptiveInekf, frame: &SensorFrame) -> Mat3 {
    match prior.prev_imu {
        Some(prev) => {
            strapdown(
                &prior.state.chi,
                &prior.state.bias,
                &prev,
                frame.t - prev.t,
                &prior.cfg.gravity,
            )
            .rot
        }
        None => prior.state.chi.rot,
    }
}

fn prior_velocity_cov(
    prior: &AdaptiveInekf,
    frame: &SensorFrame,
    contacts: &ContactVector,
) -> Result<Mat3, FilterError> {
    let cov = match prior.prev_imu {
        Some(prev) => {
            let dt = frame.t - prev.t;
            let chi_pred = strapdown(&prior.state.chi, &prior.state.bias, &prev, dt, &prior.cfg.gravity);
            let dynamics = LinearizedDynamics {
                a: build_a(&prior.state.chi, &prior.cfg.gravity),
                noise: build_process_noise(contacts, &prior.cfg, &[]),
                dt,
                discretization: prior.discretization,
            };
            PredictionSnapshot::new(&prior.state.cov, &chi_pred, &dynamics)?.predict(&dynamics.noise)?
        }
        None => prior.state.cov.clone(),
    };
    Ok(cov.fixed_view::<3, 3>(3, 3).into_owned())
}

/// Variance of the error along a direction that no measurement sees, given
/// all other error components: `1 / (u^T P^-1 u)`. For the translation and
/// gravity-axis rotation directions this cannot decrease under prediction or
/// update.
pub fn unobservable_variance(cov: &DMatrix<f64>, u: &DVector<f64>) -> Option<f64> {
    let chol = cov.clone().cholesky()?;
    let w = chol.solve(u);
    Some(1.0 / u.dot(&w))
}

/// Common shift of body and all feet along `axis`.
pub fn translation_direction(n_legs: usize, axis: usize) -> DVector<f64> {
    let mut u = DVector::zeros(15 + 3 * n_legs);
    u[6 + axis] = 1.0;
    for leg in 0..n_legs {
        u[9 + 3 * leg + axis] = 1.0;
    }
    u
}

/// Rotation about the gravity axis.
pub fn yaw_direction(n_legs: usize) -> DVector<f64> {
    let mut u = DVector::zeros(15 + 3 * n_legs);
    u[2] = 1.0;
    u
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("iekf-sr-fe".parse::<Variant>().unwrap(), Variant::IekfSrFe);
        assert!("ekf".parse::<Variant>().is_err());
        assert!(Variant::IekfSrFe.slip_rejection() && Variant::IekfSrFe.foot_estimation());
        assert!(!Variant::Iekf.slip_rejection() && !Variant::Iekf.foot_estimation());
    }

    #[test]
    fn init_covariance_layout() {
        let p = InitConfig::default().covariance(4);
        assert_eq!(p.nrows(), 27);
        assert!((p[(0, 0)] - 0.01).abs() < 1e-15);
        assert!((p[(24, 24)] - 0.0025).abs() < 1e-15);
    }

    fn standing_frame(t: f64, chi: &GroupState) -> SensorFrame {
        let rel: SmallVec<[Vec3; 4]> = chi.feet.iter().map(|f| chi.rot.transpose() * (f - chi.pos)).collect();
        SensorFrame {
            t,
            imu: ImuSample {
                t,
                gyro: Vec3::zeros(),
                accel: chi.rot.transpose() * Vec3::new(0.0, 0.0, 9.81),
            },
            kin: LegKinSample {
                rel_vel: smallvec::smallvec![Vec3::zeros(); rel.len()],
                rel_pos: rel,
            },
            force: smallvec::smallvec![50.0; chi.n_legs()],
        }
    }

    fn standing_truth() -> GroupState {
        GroupState {
            rot: Mat3::identity(),
            vel: Vec3::zeros(),
            pos: Vec3::new(0.0, 0.0, 0.3),
            feet: smallvec::smallvec![
                Vec3::new(0.2, 0.15, 0.0),
                Vec3::new(0.2, -0.15, 0.0),
                Vec3::new(-0.2, 0.15, 0.0),
                Vec3::new(-0.2, -0.15, 0.0)
            ],
        }
    }

    #[test]
    fn exact_standstill_stays_put() {
        let truth = standing_truth();
        for v in Variant::ALL {
            let mut f = AdaptiveInekf::new(
                truth.clone(),
                Vector6::zeros(),
                &InitConfig::default(),
                NoiseConfig::default(),
                v,
            )
            .unwrap();
            let contacts = ContactVector::all(4, true);
            for k in 0..200 {
                f.step(&standing_frame(k as f64 * 1e-3, &truth), &contacts).unwrap();
            }
            assert!((f.state.chi.vel).norm() < 1e-12, "{v}");
            assert!((f.state.chi.pos - truth.pos).norm() < 1e-12, "{v}");
            assert!(f.diagnostics().slip.rejected.iter().all(|r| !r));
        }
    }

    #[test]
    fn foot_reset_copies_position_rows() {
        let truth = standing_truth();
        let mut f = AdaptiveInekf::new(
            truth.clone(),
            Vector6::zeros(),
            &InitConfig::default(),
            NoiseConfig::default(),
            Variant::Iekf,
        )
        .unwrap();
        f.state.cov[(6, 0)] = 1e-4;
        f.state.cov[(0, 6)] = 1e-4;
        f.reset_foot(2, &Vec3::new(-0.2, 0.15, -0.3));
        let p = &f.state.cov;
        assert_eq!(p[(15, 0)], 1e-4);
        assert_eq!(p[(0, 15)], 1e-4);
        assert!((p[(15, 15)] - (1e-4 + 1e-4)).abs() < 1e-15);
        assert!((p[(15, 6)] - 1e-4).abs() < 1e-15);
        assert!(crate::inekf::min_eigenvalue(p) > 0.0);
    }

    #[test]
    fn unobservable_directions_are_state_independent() {
        let u = translation_direction(2, 1);
        assert_eq!(u.iter().filter(|&&x| x == 1.0).count(), 3);
        let cov = DMatrix::identity(21, 21) * 2.0;
        let var = unobservable_variance(&cov, &u).unwrap();
        assert!((var - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(yaw_direction(0)[2], 1.0);
    }
}
