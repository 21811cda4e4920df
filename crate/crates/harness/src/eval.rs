//! Replays sensor streams through the filter variants and scores them
//! against truth.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use aiekf_core::contact::GaitSchedule;
use aiekf_core::estimator::{calibrate_qv, Pipeline};
use aiekf_core::liegroup::{exp_so3, GroupState, Mat3};
use aiekf_core::{AdaptiveInekf, FilterError, SensorFrame, Variant, Vec3};
use aiekf_sim::TruthFrame;
use nalgebra::Vector6;

use crate::config::FilterConfig;

/// Trace of `P` above which a run is declared divergent.
pub const MAX_COV_TRACE: f64 = 1e9;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sensor and truth streams differ in length ({sensors} vs {truth})")]
    LengthMismatch { sensors: usize, truth: usize },
    #[error("numerical fault at t = {t:.3} s: {reason}")]
    NumericalFault { t: f64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::NumericalFault { .. } => 2,
            _ => 1,
        }
    }
}

/// One row of the per-leg diagnostic trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub contact: bool,
    pub probability: f64,
    pub distance: f64,
    pub rejected: bool,
    /// `alpha / alpha_max` per axis.
    pub alpha: [f64; 3],
}

/// Filter output for one variant.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub variant: Variant,
    pub t: Vec<f64>,
    pub rot: Vec<Mat3>,
    pub vel: Vec<Vec3>,
    /// Per-leg traces when requested.
    pub traces: Option<Vec<Vec<TraceRow>>>,
}

/// Runs one variant. The filter starts from the first truth pose (optionally
/// with a roll offset) and zero bias estimates.
pub fn run_filter(
    sensors: &[SensorFrame],
    start: &GroupState,
    schedule: &GaitSchedule,
    cfg: &FilterConfig,
    variant: Variant,
    traces: bool,
) -> Result<RunOutput, HarnessError> {
    cfg.validate().map_err(HarnessError::Config)?;
    let n_legs = start.n_legs();
    let mut chi0 = start.clone();
    chi0.rot = exp_so3(&(Vec3::x() * cfg.init_roll_error)) * chi0.rot;
    let mut filter = AdaptiveInekf::new(chi0, Vector6::zeros(), &cfg.init, cfg.noise.clone(), variant)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    filter.discretization = cfg.discretization;
    let mut pipeline = Pipeline::new(schedule.clone(), cfg.fusion, filter);

    let mut out = RunOutput {
        variant,
        t: Vec::with_capacity(sensors.len()),
        rot: Vec::with_capacity(sensors.len()),
        vel: Vec::with_capacity(sensors.len()),
        traces: traces.then(|| vec![Vec::with_capacity(sensors.len()); n_legs]),
    };
    let alpha_max = cfg.noise.alpha_max;
    for frame in sensors {
        let fault = |reason: String| HarnessError::NumericalFault { t: frame.t, reason };
        let diag = pipeline.step(frame).map_err(|e: FilterError| fault(e.to_string()))?;
        if let Some(tr) = out.traces.as_mut() {
            for (leg, rows) in tr.iter_mut().enumerate() {
                let a = diag.alpha.diag[leg] / alpha_max;
                rows.push(TraceRow {
                    t: frame.t,
                    contact: diag.contacts.flags[leg],
                    probability: diag.contacts.probability[leg],
                    distance: diag.slip.distance[leg],
                    rejected: diag.slip.rejected[leg],
                    alpha: [a.x, a.y, a.z],
                });
            }
        }
        let state = &pipeline.filter.state;
        let trace = state.cov.trace();
        if !trace.is_finite() || !state.chi.vel.iter().chain(state.chi.rot.iter()).all(|x| x.is_finite()) {
            return Err(fault("non-finite state or covariance".into()));
        }
        if trace > MAX_COV_TRACE {
            return Err(fault(format!("covariance trace {trace:e} exceeds {MAX_COV_TRACE:e}")));
        }
        out.t.push(frame.t);
        out.rot.push(state.chi.rot);
        out.vel.push(state.chi.vel);
    }
    Ok(out)
}

/// Roll and pitch (rad) of `R_true^T R_est`, ZYX convention.
pub fn roll_pitch_error(r_true: &Mat3, r_est: &Mat3) -> (f64, f64) {
    let e = r_true.transpose() * r_est;
    let roll = e[(2, 1)].atan2(e[(2, 2)]);
    let pitch = (-e[(2, 0)]).clamp(-1.0, 1.0).asin();
    (roll, pitch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rmse {
    /// Body-frame velocity (m/s).
    pub vel: [f64; 3],
    /// Degrees.
    pub roll: f64,
    pub pitch: f64,
    pub samples: usize,
}

/// RMSE of body-frame velocity and roll/pitch after `burn_in` seconds.
pub fn score(run: &RunOutput, truth: &[TruthFrame], burn_in: f64) -> Result<Rmse, HarnessError> {
    if run.t.len() != truth.len() {
        return Err(HarnessError::LengthMismatch {
            sensors: run.t.len(),
            truth: truth.len(),
        });
    }
    let t0 = truth.first().map_or(0.0, |f| f.t);
    let mut acc = [0.0; 5];
    let mut n = 0usize;
    for (k, tf) in truth.iter().enumerate() {
        if tf.t - t0 < burn_in {
            continue;
        }
        let v_est = run.rot[k].transpose() * run.vel[k];
        let v_true = tf.state.rot.transpose() * tf.state.vel;
        let dv = v_est - v_true;
        let (roll, pitch) = roll_pitch_error(&tf.state.rot, &run.rot[k]);
        for (a, x) in acc.iter_mut().zip([dv.x, dv.y, dv.z, roll, pitch]) {
            *a += x * x;
        }
        n += 1;
    }
    let r = |i: usize| if n == 0 { 0.0 } else { (acc[i] / n as f64).sqrt() };
    Ok(Rmse {
        vel: [r(0), r(1), r(2)],
        roll: r(3).to_degrees(),
        pitch: r(4).to_degrees(),
        samples: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub rmse: Rmse,
    pub traces: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub name: String,
    pub burn_in: f64,
    pub results: Vec<VariantResult>,
}

impl EvalReport {
    pub fn get(&self, v: Variant) -> Option<&Rmse> {
        self.results.iter().find(|r| r.variant == v).map(|r| &r.rmse)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# scenario: {}", self.name);
        let _ = writeln!(
            s,
            "# RMSE after {} s burn-in; velocity in the body frame (R^T v for each of truth and estimate); \
             roll/pitch from ZYX Euler angles of R_true^T R_est",
            self.burn_in
        );
        let _ = writeln!(s, "variant,vx_mps,vy_mps,vz_mps,roll_deg,pitch_deg,samples");
        for r in &self.results {
            let m = &r.rmse;
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                r.variant, m.vel[0], m.vel[1], m.vel[2], m.roll, m.pitch, m.samples
            );
        }
        s
    }
}

/// Evaluates `variants` (reported in sorted order) on one stream.
pub fn run_eval(
    name: &str,
    sensors: &[SensorFrame],
    truth: &[TruthFrame],
    schedule: &GaitSchedule,
    variants: &[Variant],
    cfg: &FilterConfig,
    trace_dir: Option<&Path>,
) -> Result<EvalReport, HarnessError> {
    if sensors.len() != truth.len() {
        return Err(HarnessError::LengthMismatch {
            sensors: sensors.len(),
            truth: truth.len(),
        });
    }
    let start = &truth
        .first()
        .ok_or(HarnessError::LengthMismatch { sensors: 0, truth: 0 })?
        .state;
    let mut sorted = variants.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut results = Vec::with_capacity(sorted.len());
    for v in sorted {
        let run = run_filter(sensors, start, schedule, cfg, v, trace_dir.is_some())?;
        let rmse = score(&run, truth, cfg.burn_in)?;
        let traces = match trace_dir {
            Some(dir) => emit_traces(&run, dir, &format!("{name}_{}", slug(v)))?,
            None => Vec::new(),
        };
        results.push(VariantResult {
            variant: v,
            rmse,
            traces,
        });
    }
    Ok(EvalReport {
        name: name.to_string(),
        burn_in: cfg.burn_in,
        results,
    })
}

pub fn slug(v: Variant) -> String {
    v.name().to_ascii_lowercase().replace('+', "_")
}

/// Writes one CSV per leg: `t, contact, probability, d, rejected,
/// alpha_xx/alpha_max, alpha_yy/alpha_max, alpha_zz/alpha_max`.
pub fn emit_traces(run: &RunOutput, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, HarnessError> {
    let Some(traces) = &run.traces else {
        return Ok(Vec::new());
    };
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(traces.len());
    for (leg, rows) in traces.iter().enumerate() {
        let path = dir.join(format!("{stem}_leg{leg}.csv"));
        let mut w = io::BufWriter::new(fs::File::create(&path)?);
        writeln!(
            w,
            "t,contact,probability,d,rejected,alpha_xx_norm,alpha_yy_norm,alpha_zz_norm"
        )?;
        for r in rows {
            writeln!(
                w,
                "{:.3},{},{:.6},{:.6},{},{:.6},{:.6},{:.6}",
                r.t, r.contact as u8, r.probability, r.distance, r.rejected as u8, r.alpha[0], r.alpha[1], r.alpha[2]
            )?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub w_f: f64,
    pub rmse: Rmse,
}

/// RMSE as a function of the contact foot noise `w_f`.
pub fn noise_sweep(
    sensors: &[SensorFrame],
    truth: &[TruthFrame],
    schedule: &GaitSchedule,
    grid: &[f64],
    variant: Variant,
    cfg: &FilterConfig,
) -> Result<Vec<SweepRow>, HarnessError> {
    let start = &truth
        .first()
        .ok_or(HarnessError::LengthMismatch { sensors: 0, truth: 0 })?
        .state;
    grid.iter()
        .map(|&w_f| {
            let c = cfg.with_foot_noise(w_f);
            let run = run_filter(sensors, start, schedule, &c, variant, false)?;
            Ok(SweepRow {
                w_f,
                rmse: score(&run, truth, c.burn_in)?,
            })
        })
        .collect()
}

pub fn sweep_to_text(variant: Variant, rows: &[SweepRow]) -> String {
    let mut s = format!("# foot-noise sweep, variant {variant}\nw_f,vx_mps,vy_mps,vz_mps,roll_deg,pitch_deg\n");
    for r in rows {
        let m = &r.rmse;
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.w_f, m.vel[0], m.vel[1], m.vel[2], m.roll, m.pitch
        );
    }
    s
}

/// Smallest diagonal `Q_v` entry the calibration will return.
pub const QV_FLOOR: f64 = 1e-6;

/// Estimates the velocity-kinematics noise `Q_v` from a standstill stream so
/// that the matched foot noise averages to zero there. The first `skip_s`
/// seconds are ignored while the filter settles.
pub fn calibrate_velocity_noise(
    sensors: &[SensorFrame],
    truth: &[TruthFrame],
    cfg: &FilterConfig,
    skip_s: f64,
) -> Result<Vec3, HarnessError> {
    let start = truth.first().ok_or(HarnessError::LengthMismatch {
        sensors: sensors.len(),
        truth: 0,
    })?;
    let dt = match sensors {
        [a, b, ..] => b.t - a.t,
        _ => return Err(HarnessError::Config("calibration needs at least two frames".into())),
    };
    let skip = (skip_s / dt).round() as usize;
    calibrate_qv(
        sensors,
        start.state.clone(),
        Vector6::zeros(),
        &cfg.init,
        &cfg.noise,
        skip,
        QV_FLOOR,
    )
    .map_err(|e| HarnessError::NumericalFault {
        t: 0.0,
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_roll_pitch_extraction() {
        let r_true = exp_so3(&Vec3::new(0.1, 0.2, 1.0));
        let err = exp_so3(&Vec3::new(0.01, 0.0, 0.0));
        let (roll, pitch) = roll_pitch_error(&r_true, &(r_true * err));
        assert!((roll - 0.01).abs() < 1e-12);
        assert!(pitch.abs() < 1e-12);
        let err = exp_so3(&Vec3::new(0.0, -0.02, 0.0));
        let (roll, pitch) = roll_pitch_error(&r_true, &(r_true * err));
        assert!(roll.abs() < 1e-12 && (pitch + 0.02).abs() < 1e-12);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            HarnessError::NumericalFault {
                t: 0.0,
                reason: String::new()
            }
            .exit_code(),
            2
        );
        assert_eq!(HarnessError::Config(String::new()).exit_code(), 1);
    }
}
