//! Adaptive right-invariant extended Kalman filter for proprioceptive
//! legged-robot state estimation.
//!
//! The filter state lives on SE_{2+N}(3) (orientation, velocity, position and
//! `N` foot positions) with additive IMU biases. Leg kinematics provide
//! right-invariant position observations for feet in contact. Two optional
//! mechanisms handle feet that violate the static-contact assumption:
//!
//! * foot-noise estimation ([`adaptive`]): covariance matching on the
//!   velocity-kinematics innovation scales each contact foot's process noise;
//! * slip rejection ([`slip`]): a Mahalanobis gate that treats a slipping
//!   foot as swinging for the current tick.
//!
//! [`estimator::AdaptiveInekf`] runs one tick of the complete loop.

pub mod adaptive;
pub mod contact;
pub mod estimator;
pub mod inekf;
pub mod legged;
pub mod liegroup;
pub mod slip;

pub use estimator::{AdaptiveInekf, InitConfig, SensorFrame, StepDiagnostics, Variant};
pub use inekf::{FilterError, FilterState};
pub use legged::{ContactVector, ImuSample, LegKinSample, NoiseConfig};
pub use liegroup::{GroupState, Mat3, TangentVec, Vec3};
