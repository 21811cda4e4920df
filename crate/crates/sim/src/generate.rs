//! Procedural body motion, foot trajectories and sensor synthesis.
//!
//! The body follows smooth closed-form reference signals, but the truth
//! stream is produced by the same discrete strapdown step the filter uses:
//! for every tick the IMU sample is chosen so that integrating it lands
//! exactly on the next reference pose. Noise-free sensors therefore
//! reproduce the truth to rounding error.

use std::f64::consts::PI;

use aiekf_core::contact::{GaitKind, GaitSchedule};
use aiekf_core::legged::{ImuSample, LegKinSample, GRAVITY};
use aiekf_core::liegroup::{exp_so3, log_so3, GroupState, LegVecs, Mat3, Vec3};
use aiekf_core::SensorFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use smallvec::SmallVec;

use crate::scenario::{ScenarioConfig, SlipEvent};
use crate::SimError;

/// Hip positions in the body frame, FL, FR, HL, HR.
pub const HIP_OFFSETS: [[f64; 3]; 4] = [
    [0.2, 0.15, 0.0],
    [0.2, -0.15, 0.0],
    [-0.2, 0.15, 0.0],
    [-0.2, -0.15, 0.0],
];

/// Force ramp at each end of a stance (s).
const FORCE_RAMP: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct TruthFrame {
    pub t: f64,
    /// Body pose and inertial foot positions.
    pub state: GroupState,
    /// Inertial foot velocities. Not serialized.
    pub foot_vel: LegVecs,
    pub contact: SmallVec<[bool; 4]>,
    /// Ground-reaction normal force (N). Not serialized.
    pub force: SmallVec<[f64; 4]>,
    /// IMU biases `(gyro, accel)`. Not serialized.
    pub bias: [Vec3; 2],
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub truth: Vec<TruthFrame>,
    pub sensors: Vec<SensorFrame>,
    /// Slip windows actually applied, including touchdown settling.
    pub applied_slips: Vec<SlipEvent>,
}

/// Smooth height field bounded by `amplitude`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terrain {
    pub amplitude: f64,
    phase: [f64; 3],
}

impl Terrain {
    pub fn new(amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            amplitude,
            phase: [0, 1, 2].map(|_| rng.random_range(0.0..2.0 * PI)),
        }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let [a, b, c] = self.phase;
        self.amplitude
            * (0.6 * (2.0 * PI * x / 0.9 + a).sin() * (2.0 * PI * y / 1.3 + b).cos()
                + 0.4 * (2.0 * PI * (0.6 * x + 0.8 * y) / 0.55 + c).sin())
    }
}

/// Closed-form body reference: attitude, inertial velocity and height.
struct Reference<'a> {
    cfg: &'a ScenarioConfig,
    gait_freq: f64,
    bounce_freq: f64,
    rough: f64,
}

impl<'a> Reference<'a> {
    fn new(cfg: &'a ScenarioConfig, schedule: &GaitSchedule) -> Self {
        let gait_freq = 1.0 / schedule.period;
        let bounce_freq = match cfg.gait {
            GaitKind::Pronk => gait_freq,
            _ => 2.0 * gait_freq,
        };
        Self {
            cfg,
            gait_freq,
            bounce_freq,
            rough: cfg.terrain_amplitude,
        }
    }

    fn yaw(&self, t: f64) -> f64 {
        self.cfg.yaw_amplitude * (2.0 * PI * 0.1 * t).sin()
    }

    fn rot(&self, t: f64) -> Mat3 {
        let w = 2.0 * PI * self.gait_freq;
        // uneven ground adds slow tilts on top of the gait rocking
        let roll = self.cfg.roll_amplitude * (w * t + 0.3).sin() + 2.0 * self.rough * (2.0 * PI * 0.37 * t).sin();
        let pitch =
            self.cfg.pitch_amplitude * (2.0 * w * t).sin() + 2.0 * self.rough * (2.0 * PI * 0.23 * t + 1.0).sin();
        exp_so3(&(Vec3::z() * self.yaw(t))) * exp_so3(&(Vec3::y() * pitch)) * exp_so3(&(Vec3::x() * roll))
    }

    fn vel(&self, t: f64) -> Vec3 {
        let speed = self.cfg.speed * (1.0 + 0.2 * (2.0 * PI * 0.15 * t).sin());
        let psi = self.yaw(t);
        let wb = 2.0 * PI * self.bounce_freq;
        let ws = 2.0 * PI * 0.21;
        let vz = self.cfg.bounce * wb * (wb * t).cos() + self.rough * ws * (ws * t).cos();
        Vec3::new(speed * psi.cos(), speed * psi.sin(), vz)
    }

    fn height(&self, t: f64) -> f64 {
        let wb = 2.0 * PI * self.bounce_freq;
        let ws = 2.0 * PI * 0.21;
        self.cfg.body_height + self.cfg.bounce * (wb * t).sin() + self.rough * (ws * t).sin()
    }
}

/// Body truth integrated with the filter's own discrete step.
struct BodyTrack {
    rot: Vec<Mat3>,
    vel: Vec<Vec3>,
    pos: Vec<Vec3>,
    omega: Vec<Vec3>,
    accel: Vec<Vec3>,
}

impl BodyTrack {
    fn generate(cfg: &ScenarioConfig, r: &Reference) -> Self {
        let n = cfg.n_ticks();
        let dt = cfg.dt;
        let g = Vec3::new(0.0, 0.0, -GRAVITY);
        let mut track = BodyTrack {
            rot: Vec::with_capacity(n),
            vel: Vec::with_capacity(n),
            pos: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            accel: Vec::with_capacity(n),
        };
        let mut rot = r.rot(0.0);
        let mut vel = r.vel(0.0);
        let mut pos = Vec3::new(0.0, 0.0, r.height(0.0));
        for k in 0..n {
            let t1 = (k + 1) as f64 * dt;
            let omega = log_so3(&(rot.transpose() * r.rot(t1))) / dt;
            let acc_world = (r.vel(t1) - vel) / dt;
            let accel = rot.transpose() * (acc_world - g);
            track.rot.push(rot);
            track.vel.push(vel);
            track.pos.push(pos);
            track.omega.push(omega);
            track.accel.push(accel);
            let aw = rot * accel + g;
            rot *= exp_so3(&(omega * dt));
            pos += vel * dt + aw * (0.5 * dt * dt);
            vel += aw * dt;
        }
        track
    }

    /// Pose at time `t`, extrapolated at constant velocity outside the run.
    fn hip(&self, t: f64, dt: f64, offset: &Vec3) -> Vec3 {
        let last = self.pos.len() - 1;
        let k = ((t / dt).round().max(0.0) as usize).min(last);
        let extra = t - k as f64 * dt;
        self.pos[k] + self.vel[k] * extra + self.rot[k] * offset
    }
}

#[derive(Debug, Clone, Copy)]
struct Stance {
    start: f64,
    end: f64,
    anchor: Vec3,
    /// Start of a spurious early force, if injected.
    early_force: Option<f64>,
}

fn quintic(tau: f64) -> (f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    (t3 * (10.0 - 15.0 * tau + 6.0 * t2), 30.0 * t2 * (1.0 - tau).powi(2))
}

fn bump(tau: f64) -> (f64, f64) {
    let s = 1.0 - tau;
    (
        64.0 * tau.powi(3) * s.powi(3),
        64.0 * 3.0 * tau * tau * s * s * (s - tau),
    )
}

/// Runs the scenario. Deterministic for a given config.
pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario, SimError> {
    cfg.validate()?;
    let schedule = cfg.schedule();
    let reference = Reference::new(cfg, &schedule);
    let body = BodyTrack::generate(cfg, &reference);
    let terrain = Terrain::new(cfg.terrain_amplitude, cfg.seed);
    let n_legs = cfg.n_legs();
    let n = cfg.n_ticks();
    let dt = cfg.dt;

    let mut event_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    event_rng.set_stream(2);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(3);

    let plateau = match cfg.gait {
        GaitKind::Stand => cfg.mass * GRAVITY / n_legs as f64,
        _ => cfg.mass * GRAVITY / (n_legs as f64 * schedule.duty),
    };

    // stance windows per leg, covering a margin on both sides of the run
    let t_end = (n - 1) as f64 * dt;
    let mut stances: Vec<Vec<Stance>> = Vec::with_capacity(n_legs);
    let mut slips = cfg.slips.clone();
    for leg in 0..n_legs {
        let hip = Vec3::from(HIP_OFFSETS[leg]);
        let place = |t_mid: f64| {
            let h = body.hip(t_mid, dt, &hip);
            Vec3::new(h.x, h.y, terrain.height(h.x, h.y))
        };
        let mut list = Vec::new();
        if schedule.duty >= 1.0 {
            list.push(Stance {
                start: f64::NEG_INFINITY,
                end: f64::INFINITY,
                anchor: place(0.0),
                early_force: None,
            });
        } else {
            let stance_len = schedule.duty * schedule.period;
            let mut start = schedule.next_touchdown(leg, 0.0) - schedule.period;
            while start <= t_end + schedule.period {
                let early = (start > 0.0 && event_rng.random_bool(cfg.misdetection_rate))
                    .then(|| start - event_rng.random_range(0.015..0.040));
                list.push(Stance {
                    start,
                    end: start + stance_len,
                    anchor: place(start + 0.5 * stance_len),
                    early_force: early,
                });
                if cfg.touchdown_slip > 0.0 && start >= 0.0 && start + cfg.settle_time <= t_end {
                    let u = Vec3::from_fn(|_, _| StandardNormal.sample(&mut event_rng)) * cfg.touchdown_slip;
                    slips.push(SlipEvent {
                        leg,
                        t_start: start,
                        duration: cfg.settle_time.min(stance_len),
                        velocity: u,
                    });
                }
                start += schedule.period;
            }
        }
        stances.push(list);
    }

    let mut truth = Vec::with_capacity(n);
    let mut sensors = Vec::with_capacity(n);
    let mut cursor = vec![0usize; n_legs];
    let mut offset = vec![Vec3::zeros(); n_legs];
    let mut lift_pos: Vec<Vec3> = (0..n_legs).map(|l| stances[l][0].anchor).collect();
    let mut bias = [Vec3::zeros(); 2];
    let noise = cfg.noise;
    let gauss = |rng: &mut ChaCha8Rng, s: f64| -> Vec3 {
        if s == 0.0 {
            Vec3::zeros()
        } else {
            Vec3::from_fn(|_, _| StandardNormal.sample(rng)) * s
        }
    };

    for k in 0..n {
        let t = k as f64 * dt;
        let (rot, vel, pos, omega) = (body.rot[k], body.vel[k], body.pos[k], body.omega[k]);
        let mut feet = LegVecs::new();
        let mut foot_vel = LegVecs::new();
        let mut contact = SmallVec::<[bool; 4]>::new();
        let mut force = SmallVec::<[f64; 4]>::new();
        let mut force_meas = SmallVec::<[f64; 4]>::new();
        for leg in 0..n_legs {
            let list = &stances[leg];
            while cursor[leg] + 1 < list.len() && t >= list[cursor[leg]].end {
                lift_pos[leg] = list[cursor[leg]].anchor + offset[leg];
                offset[leg] = Vec3::zeros();
                cursor[leg] += 1;
            }
            let st = list[cursor[leg]];
            let in_stance = t >= st.start && t < st.end;
            let (d, dd, f_true, f_spurious) = if in_stance {
                let u: Vec3 = slips.iter().filter(|s| s.active(leg, t)).map(|s| s.velocity).sum();
                let d = st.anchor + offset[leg];
                offset[leg] += u * dt;
                let ramp = ((t - st.start) / FORCE_RAMP).min((st.end - t) / FORCE_RAMP).min(1.0);
                let f = if st.start.is_infinite() {
                    plateau
                } else {
                    plateau * ramp.max(0.0)
                };
                (d, u, f, 0.0)
            } else {
                // swing from the previous liftoff toward the upcoming stance;
                // the stance list starts a period before t = 0, so a
                // previous stance always exists here
                let c = cursor[leg];
                debug_assert!(c > 0 && t < st.start);
                let (from, to, t0, t1) = (lift_pos[leg], st.anchor, list[c - 1].end, st.start);
                let span = t1 - t0;
                let tau = ((t - t0) / span).clamp(0.0, 1.0);
                let (s, ds) = quintic(tau);
                let (b, db) = bump(tau);
                let d = from + (to - from) * s + Vec3::z() * (cfg.swing_height * b);
                let dd = ((to - from) * ds + Vec3::z() * (cfg.swing_height * db)) / span;
                let spurious = match st.early_force {
                    Some(te) if t >= te && t < st.start => plateau * ((t - te) / FORCE_RAMP).min(1.0),
                    _ => 0.0,
                };
                (d, dd, 0.0, spurious)
            };
            feet.push(d);
            foot_vel.push(dd);
            contact.push(in_stance);
            force.push(f_true);
            let f_noise = if noise.force > 0.0 {
                noise.force * noise_rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            force_meas.push(f_true + f_spurious + f_noise);
        }

        let mut rel_pos = LegVecs::new();
        let mut rel_vel = LegVecs::new();
        for leg in 0..n_legs {
            let rp = rot.transpose() * (feet[leg] - pos);
            let rv = rot.transpose() * (foot_vel[leg] - vel) - omega.cross(&rp);
            rel_pos.push(rp + gauss(&mut noise_rng, noise.enc_pos));
            rel_vel.push(rv + gauss(&mut noise_rng, noise.enc_vel));
        }
        let imu = ImuSample {
            t,
            gyro: omega + bias[0] + gauss(&mut noise_rng, noise.gyro),
            accel: body.accel[k] + bias[1] + gauss(&mut noise_rng, noise.accel),
        };
        truth.push(TruthFrame {
            t,
            state: GroupState { rot, vel, pos, feet },
            foot_vel,
            contact,
            force,
            bias,
        });
        sensors.push(SensorFrame {
            t,
            imu,
            kin: LegKinSample { rel_pos, rel_vel },
            force: force_meas,
        });
        let sq = dt.sqrt();
        bias[0] += gauss(&mut noise_rng, noise.gyro_bias_walk * sq);
        bias[1] += gauss(&mut noise_rng, noise.accel_bias_walk * sq);
    }

    Ok(Scenario {
        cfg: cfg.clone(),
        truth,
        sensors,
        applied_slips: slips,
    })
}

/// Places `count` slips of speed `speed` in random horizontal-or-downward
/// directions inside stance windows of randomly chosen legs, each lasting
/// `duration` and starting at least `margin` seconds into the stance.
pub fn random_slips(cfg: &ScenarioConfig, count: usize, speed: f64, duration: f64, seed: u64) -> Vec<SlipEvent> {
    let schedule = cfg.schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let stance = if schedule.duty >= 1.0 {
        f64::INFINITY
    } else {
        schedule.duty * schedule.period
    };
    let margin = 0.02;
    let mut out: Vec<SlipEvent> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let leg = rng.random_range(0..cfg.n_legs());
        let t = rng.random_range(1.0..(cfg.duration - 0.5).max(1.0 + 1e-9));
        let start = if stance.is_finite() {
            let td = schedule.next_touchdown(leg, t);
            if stance < duration + 2.0 * margin {
                continue;
            }
            td + margin + rng.random_range(0.0..(stance - duration - 2.0 * margin))
        } else {
            t
        };
        if start + duration > cfg.duration - 0.1 || start < 1.0 {
            continue;
        }
        if out.iter().any(|s| s.leg == leg && (s.t_start - start).abs() < 0.5) {
            continue;
        }
        let heading = rng.random_range(0.0..2.0 * PI);
        let dip = rng.random_range(-0.8f64..0.0);
        let dir = Vec3::new(heading.cos() * dip.cos(), heading.sin() * dip.cos(), dip.sin());
        out.push(SlipEvent {
            leg,
            t_start: start,
            duration,
            velocity: dir * speed,
        });
    }
    out.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    out
}
