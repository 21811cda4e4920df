//! Contact estimation: gait-schedule prior fused with force evidence.
//!
//! Each leg runs a scalar Kalman filter on its contact probability. The
//! prediction pulls the state toward the scheduled prior, the update uses a
//! logistic pseudo-measurement of the low-passed normal force, and a
//! hysteresis band turns the probability into a binary flag.

use smallvec::SmallVec;

use crate::legged::ContactVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaitKind {
    Trot,
    FlyingTrot,
    Pronk,
    Stand,
}

impl std::str::FromStr for GaitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "trot" => Ok(Self::Trot),
            "flying-trot" | "flyingtrot" => Ok(Self::FlyingTrot),
            "pronk" => Ok(Self::Pronk),
            "stand" => Ok(Self::Stand),
            other => Err(format!("unknown gait '{other}'")),
        }
    }
}

impl std::fmt::Display for GaitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Trot => "trot",
            Self::FlyingTrot => "flying-trot",
            Self::Pronk => "pronk",
            Self::Stand => "stand",
        })
    }
}

/// Periodic stance/swing timetable. Legs are ordered FL, FR, HL, HR.
///
/// Leg `i` is scheduled in stance while `frac(t / period + offset_i) < duty`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSchedule {
    pub kind: GaitKind,
    pub period: f64,
    pub duty: f64,
    pub offsets: SmallVec<[f64; 4]>,
    /// Width of the linear prior ramp centred on each transition (s).
    pub ramp: f64,
}

impl GaitSchedule {
    pub fn preset(kind: GaitKind) -> Self {
        let (period, duty, offsets): (f64, f64, [f64; 4]) = match kind {
            GaitKind::Trot => (0.4, 0.6, [0.0, 0.5, 0.5, 0.0]),
            GaitKind::FlyingTrot => (0.3, 0.35, [0.0, 0.5, 0.5, 0.0]),
            GaitKind::Pronk => (0.4, 0.4, [0.0; 4]),
            GaitKind::Stand => (1.0, 1.0, [0.0; 4]),
        };
        Self {
            kind,
            period,
            duty,
            offsets: offsets.iter().copied().collect(),
            ramp: 0.01,
        }
    }

    pub fn n_legs(&self) -> usize {
        self.offsets.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.period > 0.0) {
            return Err(format!("gait period must be positive, got {}", self.period));
        }
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(format!("duty factor must lie in (0, 1], got {}", self.duty));
        }
        if !(self.ramp >= 0.0) {
            return Err(format!("prior ramp must be non-negative, got {}", self.ramp));
        }
        Ok(())
    }

    pub fn phase(&self, leg: usize, t: f64) -> f64 {
        (t / self.period + self.offsets[leg]).rem_euclid(1.0)
    }

    pub fn in_stance(&self, leg: usize, t: f64) -> bool {
        self.duty >= 1.0 || self.phase(leg, t) < self.duty
    }

    /// Start time of the stance interval containing or following `t`.
    pub fn next_touchdown(&self, leg: usize, t: f64) -> f64 {
        let ph = self.phase(leg, t);
        if ph < self.duty {
            t - ph * self.period
        } else {
            t + (1.0 - ph) * self.period
        }
    }

    /// Scheduled contact probability: 1 in stance, 0 in swing, linear
    /// across a window of width `ramp` centred on each transition.
    pub fn prior(&self, leg: usize, t: f64) -> f64 {
        if self.duty >= 1.0 {
            return 1.0;
        }
        let tau = self.phase(leg, t) * self.period;
        let stance = self.duty * self.period;
        let edge = |x: f64| {
            if self.ramp > 0.0 {
                (0.5 + x / self.ramp).clamp(0.0, 1.0)
            } else if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        };
        (-1..=1)
            .map(|k| {
                let start = k as f64 * self.period;
                edge(tau - start).min(edge(start + stance - tau))
            })
            .fold(0.0, f64::max)
    }
}

/// First-order low-pass on the per-leg force channel, exactly discretized.
/// The state is primed with the first sample it sees.
#[derive(Debug, Clone)]
pub struct ForceObserver {
    pub cutoff_hz: f64,
    state: SmallVec<[f64; 4]>,
    primed: bool,
}

impl ForceObserver {
    pub fn new(n_legs: usize, cutoff_hz: f64) -> Self {
        Self {
            cutoff_hz,
            state: smallvec::smallvec![0.0; n_legs],
            primed: false,
        }
    }

    pub fn time_constant(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.cutoff_hz)
    }

    pub fn estimate(&self) -> &[f64] {
        &self.state
    }

    pub fn update(&mut self, force: &[f64], dt: f64) -> &[f64] {
        if !self.primed {
            self.state.copy_from_slice(force);
            self.primed = true;
            return &self.state;
        }
        let gain = 1.0 - (-dt / self.time_constant()).exp();
        for (s, &f) in self.state.iter_mut().zip(force) {
            *s += gain * (f - *s);
        }
        &self.state
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Pull of the predicted probability toward the gait prior per step.
    pub prior_weight: f64,
    pub process_var: f64,
    pub measurement_var: f64,
    /// Logistic midpoint and scale of the force pseudo-measurement (N).
    pub force_mid: f64,
    pub force_scale: f64,
    pub on_threshold: f64,
    pub off_threshold: f64,
    pub cutoff_hz: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            prior_weight: 0.2,
            process_var: 0.05,
            measurement_var: 0.05,
            force_mid: 40.0,
            force_scale: 10.0,
            on_threshold: 0.6,
            off_threshold: 0.4,
            cutoff_hz: 30.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (
                self.prior_weight >= 0.0 && self.prior_weight <= 1.0,
                "prior_weight must lie in [0, 1]",
            ),
            (self.process_var > 0.0, "contact process variance must be positive"),
            (
                self.measurement_var > 0.0,
                "contact measurement variance must be positive",
            ),
            (self.force_scale > 0.0, "force_scale must be positive"),
            (self.cutoff_hz > 0.0, "force cutoff must be positive"),
            (
                self.off_threshold <= self.on_threshold && self.off_threshold >= 0.0 && self.on_threshold <= 1.0,
                "hysteresis thresholds must satisfy 0 <= off <= on <= 1",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }

    pub fn pseudo_measurement(&self, force: f64) -> f64 {
        1.0 / (1.0 + (-(force.max(0.0) - self.force_mid) / self.force_scale).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactBelief {
    pub probability: f64,
    pub variance: f64,
    pub flag: bool,
}

/// Per-leg scalar Kalman filter with hysteresis.
#[derive(Debug, Clone)]
pub struct ContactFuser {
    pub cfg: FusionConfig,
    beliefs: SmallVec<[ContactBelief; 4]>,
}

impl ContactFuser {
    pub fn new(initial_prior: &[f64], cfg: FusionConfig) -> Self {
        let beliefs = initial_prior
            .iter()
            .map(|&p| ContactBelief {
                probability: p.clamp(0.0, 1.0),
                variance: cfg.measurement_var,
                flag: p >= 0.5,
            })
            .collect();
        Self { cfg, beliefs }
    }

    pub fn beliefs(&self) -> &[ContactBelief] {
        &self.beliefs
    }

    pub fn step(&mut self, leg: usize, prior: f64, force: f64) -> ContactBelief {
        let c = &self.cfg;
        let b = &mut self.beliefs[leg];
        let lam = c.prior_weight;
        let x_pred = (1.0 - lam) * b.probability + lam * prior;
        let p_pred = (1.0 - lam).powi(2) * b.variance + c.process_var;
        let gain = p_pred / (p_pred + c.measurement_var);
        b.probability = (x_pred + gain * (c.pseudo_measurement(force) - x_pred)).clamp(0.0, 1.0);
        b.variance = (1.0 - gain) * p_pred;
        if b.flag && b.probability <= c.off_threshold {
            b.flag = false;
        } else if !b.flag && b.probability >= c.on_threshold {
            b.flag = true;
        }
        *b
    }
}

/// Schedule, force observer and fuser wired together.
#[derive(Debug, Clone)]
pub struct ContactDetector {
    pub schedule: GaitSchedule,
    observer: ForceObserver,
    fuser: ContactFuser,
    last_t: Option<f64>,
    priors: SmallVec<[f64; 4]>,
}

impl ContactDetector {
    pub fn new(schedule: GaitSchedule, cfg: FusionConfig) -> Self {
        let n = schedule.n_legs();
        Self {
            observer: ForceObserver::new(n, cfg.cutoff_hz),
            fuser: ContactFuser::new(&vec![1.0; n], cfg),
            schedule,
            last_t: None,
            priors: smallvec::smallvec![0.0; n],
        }
    }

    pub fn n_legs(&self) -> usize {
        self.schedule.n_legs()
    }

    /// Prior used on the most recent step.
    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn filtered_force(&self) -> &[f64] {
        self.observer.estimate()
    }

    pub fn step(&mut self, t: f64, force: &[f64]) -> ContactVector {
        let dt = self.last_t.map_or(0.0, |t0| t - t0);
        self.last_t = Some(t);
        let mut out = ContactVector::all(self.n_legs(), false);
        // split borrows: the observer output feeds the fuser directly
        let Self {
            schedule,
            observer,
            fuser,
            priors,
            ..
        } = self;
        let filtered = observer.update(force, dt);
        for leg in 0..schedule.n_legs() {
            priors[leg] = schedule.prior(leg, t);
            let b = fuser.step(leg, priors[leg], filtered[leg]);
            out.flags[leg] = b.flag;
            out.probability[leg] = b.probability;
        }
        out
    }
}
