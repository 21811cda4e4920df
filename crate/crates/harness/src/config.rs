//! Filter configuration in the same flat `key = value` format as scenarios.

use std::fmt::Write as _;
use std::str::FromStr;

use aiekf_core::contact::FusionConfig;
use aiekf_core::inekf::Discretization;
use aiekf_core::{InitConfig, NoiseConfig, Vec3};
use aiekf_sim::scenario::parse_pairs;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub noise: NoiseConfig,
    pub fusion: FusionConfig,
    pub init: InitConfig,
    pub discretization: Discretization,
    /// Roll offset (rad) applied to the initial estimate.
    pub init_roll_error: f64,
    /// RMSE burn-in (s).
    pub burn_in: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig::default(),
            fusion: FusionConfig::default(),
            init: InitConfig::default(),
            discretization: Discretization::FirstOrder,
            init_roll_error: 0.0,
            burn_in: 1.0,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid value '{v}' for '{key}'"))
}

fn vec3(key: &str, v: &str) -> Result<Vec3, String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x] => Ok(Vec3::repeat(num(key, x)?)),
        [x, y, z] => Ok(Vec3::new(num(key, x)?, num(key, y)?, num(key, z)?)),
        _ => Err(format!("'{key}' expects one or three comma-separated values")),
    }
}

impl FilterConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let n = &mut self.noise;
        let f = &mut self.fusion;
        match key {
            "gyro_noise" => n.gyro_noise = num(key, value)?,
            "accel_noise" => n.accel_noise = num(key, value)?,
            "gyro_bias_walk" => n.gyro_bias_walk = num(key, value)?,
            "accel_bias_walk" => n.accel_bias_walk = num(key, value)?,
            "foot_noise" | "w_f" => n.foot_noise = vec3(key, value)?,
            "swing_noise" => n.swing_noise = num(key, value)?,
            "kin_noise" => n.kin_noise = num(key, value)?,
            "vel_kin_var" => n.vel_kin_var = vec3(key, value)?,
            "window" => n.window = num(key, value)?,
            "alpha_max" => n.alpha_max = num(key, value)?,
            "slip_threshold" => n.slip_threshold = num(key, value)?,
            "gravity" => n.gravity = vec3(key, value)?,
            "contact.prior_weight" => f.prior_weight = num(key, value)?,
            "contact.process_var" => f.process_var = num(key, value)?,
            "contact.measurement_var" => f.measurement_var = num(key, value)?,
            "contact.force_mid" => f.force_mid = num(key, value)?,
            "contact.force_scale" => f.force_scale = num(key, value)?,
            "contact.on_threshold" => f.on_threshold = num(key, value)?,
            "contact.off_threshold" => f.off_threshold = num(key, value)?,
            "contact.cutoff_hz" => f.cutoff_hz = num(key, value)?,
            "init.rot_std" => self.init.rot_std = vec3(key, value)?,
            "init.vel_std" => self.init.vel_std = num(key, value)?,
            "init.pos_std" => self.init.pos_std = num(key, value)?,
            "init.foot_std" => self.init.foot_std = num(key, value)?,
            "init.gyro_bias_std" => self.init.gyro_bias_std = num(key, value)?,
            "init.accel_bias_std" => self.init.accel_bias_std = num(key, value)?,
            "init.roll_error" => self.init_roll_error = num(key, value)?,
            "discretization" => {
                self.discretization = match value {
                    "first-order" | "first_order" => Discretization::FirstOrder,
                    "exact" => Discretization::Exact,
                    other => return Err(format!("unknown discretization '{other}'")),
                }
            }
            "burn_in" => self.burn_in = num(key, value)?,
            _ => return Err(format!("unknown filter key '{key}'")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = Self::default();
        for (line, k, v) in parse_pairs(text).map_err(|e| e.to_string())? {
            cfg.set(&k, &v).map_err(|e| format!("line {line}: {e}"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.noise.validate()?;
        self.fusion.validate()?;
        if !(self.burn_in >= 0.0) {
            return Err("burn_in must be non-negative".into());
        }
        let i = &self.init;
        let stds = [i.vel_std, i.pos_std, i.foot_std, i.gyro_bias_std, i.accel_bias_std];
        if stds
            .iter()
            .chain(i.rot_std.iter())
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err("initial standard deviations must be positive".into());
        }
        Ok(())
    }

    pub fn with_foot_noise(&self, w_f: f64) -> Self {
        let mut c = self.clone();
        c.noise.foot_noise = Vec3::repeat(w_f);
        c
    }

    pub fn to_text(&self) -> String {
        let n = &self.noise;
        let f = &self.fusion;
        let v = |x: &Vec3| format!("{},{},{}", x.x, x.y, x.z);
        let mut s = String::new();
        let rows: Vec<(&str, String)> = vec![
            ("gyro_noise", n.gyro_noise.to_string()),
            ("accel_noise", n.accel_noise.to_string()),
            ("gyro_bias_walk", n.gyro_bias_walk.to_string()),
            ("accel_bias_walk", n.accel_bias_walk.to_string()),
            ("foot_noise", v(&n.foot_noise)),
            ("swing_noise", n.swing_noise.to_string()),
            ("kin_noise", n.kin_noise.to_string()),
            ("vel_kin_var", v(&n.vel_kin_var)),
            ("window", n.window.to_string()),
            ("alpha_max", n.alpha_max.to_string()),
            ("slip_threshold", n.slip_threshold.to_string()),
            ("gravity", v(&n.gravity)),
            ("contact.prior_weight", f.prior_weight.to_string()),
            ("contact.process_var", f.process_var.to_string()),
            ("contact.measurement_var", f.measurement_var.to_string()),
            ("contact.force_mid", f.force_mid.to_string()),
            ("contact.force_scale", f.force_scale.to_string()),
            ("contact.on_threshold", f.on_threshold.to_string()),
            ("contact.off_threshold", f.off_threshold.to_string()),
            ("contact.cutoff_hz", f.cutoff_hz.to_string()),
            ("init.rot_std", v(&self.init.rot_std)),
            ("init.vel_std", self.init.vel_std.to_string()),
            ("init.pos_std", self.init.pos_std.to_string()),
            ("init.foot_std", self.init.foot_std.to_string()),
            ("init.gyro_bias_std", self.init.gyro_bias_std.to_string()),
            ("init.accel_bias_std", self.init.accel_bias_std.to_string()),
            ("init.roll_error", self.init_roll_error.to_string()),
            (
                "discretization",
                match self.discretization {
                    Discretization::FirstOrder => "first-order".into(),
                    Discretization::Exact => "exact".into(),
                },
            ),
            ("burn_in", self.burn_in.to_string()),
        ];
        for (k, val) in rows {
            let _ = writeln!(s, "{k} = {val}");
        }
        s
    }
}
