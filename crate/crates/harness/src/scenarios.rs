//! Canned scenarios used by the table command and the acceptance runs.

use aiekf_core::contact::GaitKind;
use aiekf_sim::{random_slips, ScenarioConfig};

/// Rough-terrain flying trot with scripted slips and early-contact
/// misdetections.
pub fn rough_flying_trot_with_slips(seed: u64, duration: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::preset(GaitKind::FlyingTrot, true);
    cfg.seed = seed;
    cfg.duration = duration;
    cfg.misdetection_rate = 0.3;
    cfg.touchdown_slip = 0.05;
    let n = (duration / 2.0).ceil() as usize;
    cfg.slips = random_slips(&cfg, n, 0.3, 0.05, seed);
    cfg
}
