//! Scenario description and its flat `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use aiekf_core::contact::{GaitKind, GaitSchedule};
use aiekf_core::Vec3;

use crate::SimError;

/// Foot `leg` slides with inertial velocity `velocity` for `duration`
/// seconds from `t_start`, while it is in contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlipEvent {
    pub leg: usize,
    pub t_start: f64,
    pub duration: f64,
    pub velocity: Vec3,
}

impl SlipEvent {
    pub fn active(&self, leg: usize, t: f64) -> bool {
        leg == self.leg && t >= self.t_start && t < self.t_start + self.duration
    }
}

/// Per-sample standard deviations of the synthesized sensors, except the
/// bias walks which are densities (unit/s/sqrt(Hz)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorNoise {
    pub gyro: f64,
    pub accel: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    pub enc_pos: f64,
    pub enc_vel: f64,
    pub force: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            gyro: 0.005,
            accel: 0.05,
            gyro_bias_walk: 1e-4,
            accel_bias_walk: 1e-4,
            enc_pos: 0.002,
            enc_vel: 0.02,
            force: 2.0,
        }
    }
}

impl SensorNoise {
    pub fn zero() -> Self {
        Self {
            gyro: 0.0,
            accel: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            enc_pos: 0.0,
            enc_vel: 0.0,
            force: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub gait: GaitKind,
    /// Height-field amplitude (m); 0 is flat ground.
    pub terrain_amplitude: f64,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    /// Mean forward speed (m/s).
    pub speed: f64,
    pub body_height: f64,
    /// Vertical CoM oscillation amplitude (m).
    pub bounce: f64,
    pub roll_amplitude: f64,
    pub pitch_amplitude: f64,
    pub yaw_amplitude: f64,
    pub swing_height: f64,
    pub mass: f64,
    pub slips: Vec<SlipEvent>,
    /// Std of the random sliding velocity a foot picks up right after
    /// touchdown (m/s), lasting `settle_time`.
    pub touchdown_slip: f64,
    pub settle_time: f64,
    pub noise: SensorNoise,
    /// Probability per touchdown that the force channel reports contact
    /// 15-40 ms early.
    pub misdetection_rate: f64,
}

impl ScenarioConfig {
    pub fn preset(gait: GaitKind, rough: bool) -> Self {
        let (speed, bounce, roll, pitch, yaw, swing) = match gait {
            GaitKind::Trot => (0.5, 0.01, 0.02, 0.02, 0.2, 0.08),
            GaitKind::FlyingTrot => (1.0, 0.03, 0.05, 0.05, 0.3, 0.1),
            GaitKind::Pronk => (0.4, 0.05, 0.02, 0.06, 0.2, 0.1),
            GaitKind::Stand => (0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        };
        Self {
            gait,
            terrain_amplitude: if rough { 0.03 } else { 0.0 },
            duration: 10.0,
            dt: 1e-3,
            seed: 0,
            speed,
            body_height: 0.3,
            bounce,
            roll_amplitude: roll,
            pitch_amplitude: pitch,
            yaw_amplitude: yaw,
            swing_height: swing,
            mass: 20.0,
            slips: Vec::new(),
            touchdown_slip: 0.0,
            settle_time: 0.02,
            noise: SensorNoise::default(),
            misdetection_rate: 0.0,
        }
    }

    pub fn standstill() -> Self {
        Self::preset(GaitKind::Stand, false)
    }

    pub fn schedule(&self) -> GaitSchedule {
        GaitSchedule::preset(self.gait)
    }

    pub fn n_legs(&self) -> usize {
        4
    }

    pub fn n_ticks(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.duration >= 1.0 && self.duration.is_finite()) {
            return bad(format!("duration must be at least 1 s, got {}", self.duration));
        }
        if !(self.terrain_amplitude >= 0.0) {
            return bad(format!(
                "terrain amplitude must be non-negative, got {}",
                self.terrain_amplitude
            ));
        }
        if !(self.mass > 0.0) || !(self.body_height > 0.0) {
            return bad("mass and body_height must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.misdetection_rate) {
            return bad(format!(
                "misdetection_rate must lie in [0, 1], got {}",
                self.misdetection_rate
            ));
        }
        if !(self.touchdown_slip >= 0.0 && self.settle_time >= 0.0) {
            return bad("touchdown_slip and settle_time must be non-negative".into());
        }
        let n = &self.noise;
        let levels = [
            n.gyro,
            n.accel,
            n.gyro_bias_walk,
            n.accel_bias_walk,
            n.enc_pos,
            n.enc_vel,
            n.force,
        ];
        if levels.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("sensor noise levels must be finite and non-negative".into());
        }
        for (i, s) in self.slips.iter().enumerate() {
            if s.leg >= self.n_legs() {
                return bad(format!("slip {i}: leg {} out of range", s.leg));
            }
            if !(s.t_start >= 0.0 && s.duration >= 0.0 && s.t_start + s.duration <= self.duration + 1e-12) {
                return bad(format!("slip {i}: window must lie within the scenario duration"));
            }
            if s.velocity.iter().any(|v| !v.is_finite()) {
                return bad(format!("slip {i}: velocity must be finite"));
            }
        }
        self.schedule().validate().map_err(SimError::Config)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value '{v}' for '{key}'"))
        }
        match key {
            "gait" => self.gait = value.parse()?,
            "terrain" => match value {
                "flat" => self.terrain_amplitude = 0.0,
                "rough" => {
                    if self.terrain_amplitude == 0.0 {
                        self.terrain_amplitude = 0.03
                    }
                }
                other => return Err(format!("unknown terrain '{other}'")),
            },
            "terrain_amplitude" => self.terrain_amplitude = num(key, value)?,
            "duration" => self.duration = num(key, value)?,
            "dt" => self.dt = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "speed" => self.speed = num(key, value)?,
            "body_height" => self.body_height = num(key, value)?,
            "bounce" => self.bounce = num(key, value)?,
            "roll_amplitude" => self.roll_amplitude = num(key, value)?,
            "pitch_amplitude" => self.pitch_amplitude = num(key, value)?,
            "yaw_amplitude" => self.yaw_amplitude = num(key, value)?,
            "swing_height" => self.swing_height = num(key, value)?,
            "mass" => self.mass = num(key, value)?,
            "touchdown_slip" => self.touchdown_slip = num(key, value)?,
            "settle_time" => self.settle_time = num(key, value)?,
            "misdetection_rate" => self.misdetection_rate = num(key, value)?,
            "noise.gyro" => self.noise.gyro = num(key, value)?,
            "noise.accel" => self.noise.accel = num(key, value)?,
            "noise.gyro_bias_walk" => self.noise.gyro_bias_walk = num(key, value)?,
            "noise.accel_bias_walk" => self.noise.accel_bias_walk = num(key, value)?,
            "noise.enc_pos" => self.noise.enc_pos = num(key, value)?,
            "noise.enc_vel" => self.noise.enc_vel = num(key, value)?,
            "noise.force" => self.noise.force = num(key, value)?,
            "noise" if value == "none" => self.noise = SensorNoise::zero(),
            "slip" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 6 {
                    return Err(format!("slip expects 'leg,t_start,duration,ux,uy,uz', got '{value}'"));
                }
                self.slips.push(SlipEvent {
                    leg: num("slip leg", parts[0])?,
                    t_start: num("slip t_start", parts[1])?,
                    duration: num("slip duration", parts[2])?,
                    velocity: Vec3::new(
                        num("slip ux", parts[3])?,
                        num("slip uy", parts[4])?,
                        num("slip uz", parts[5])?,
                    ),
                });
            }
            _ => return Err(format!("unknown scenario key '{key}'")),
        }
        Ok(())
    }

    /// Parses a scenario file. `gait` (and optionally `terrain`) pick the
    /// preset that later keys override.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let pairs = parse_pairs(text)?;
        let gait = pairs
            .iter()
            .find(|(_, k, _)| k == "gait")
            .map(|(line, _, v)| {
                v.parse::<GaitKind>()
                    .map_err(|e| SimError::Config(format!("line {line}: {e}")))
            })
            .transpose()?
            .unwrap_or(GaitKind::Trot);
        let rough = pairs.iter().any(|(_, k, v)| k == "terrain" && v == "rough");
        let mut cfg = Self::preset(gait, rough);
        for (line, k, v) in &pairs {
            cfg.set(k, v)
                .map_err(|e| SimError::Config(format!("line {line}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let n = &self.noise;
        let _ = writeln!(s, "gait = {}", self.gait);
        let scalars: [(&str, f64); 20] = [
            ("terrain_amplitude", self.terrain_amplitude),
            ("duration", self.duration),
            ("dt", self.dt),
            ("speed", self.speed),
            ("body_height", self.body_height),
            ("bounce", self.bounce),
            ("roll_amplitude", self.roll_amplitude),
            ("pitch_amplitude", self.pitch_amplitude),
            ("yaw_amplitude", self.yaw_amplitude),
            ("swing_height", self.swing_height),
            ("mass", self.mass),
            ("touchdown_slip", self.touchdown_slip),
            ("settle_time", self.settle_time),
            ("misdetection_rate", self.misdetection_rate),
            ("noise.gyro", n.gyro),
            ("noise.accel", n.accel),
            ("noise.gyro_bias_walk", n.gyro_bias_walk),
            ("noise.accel_bias_walk", n.accel_bias_walk),
            ("noise.enc_pos", n.enc_pos),
            ("noise.enc_vel", n.enc_vel),
        ];
        let _ = writeln!(s, "seed = {}", self.seed);
        for (k, v) in scalars {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "noise.force = {}", n.force);
        for e in &self.slips {
            let u = e.velocity;
            let _ = writeln!(
                s,
                "slip = {},{},{},{},{},{}",
                e.leg, e.t_start, e.duration, u.x, u.y, u.z
            );
        }
        s
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments. Returns
/// `(line number, key, value)`.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, SimError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| SimError::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
