use aiekf_core::adaptive::{estimate_alpha, InnovationWindow};
use aiekf_core::contact::{ContactFuser, ForceObserver, FusionConfig, GaitKind, GaitSchedule};
use aiekf_core::liegroup::{exp_so3, GroupState, Mat3, Vec3};
use aiekf_core::NoiseConfig;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn window_mean_recovers_known_covariance() {
    let c = Mat3::new(4e-4, 1e-4, -5e-5, 1e-4, 2e-4, 3e-5, -5e-5, 3e-5, 9e-4);
    let l = c.cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = 10;
    let windows = 10_000;
    let mut win = InnovationWindow::new(1, m);
    let mut acc = Mat3::zeros();
    for _ in 0..windows {
        win.reset(0);
        let mut u = Mat3::zeros();
        for _ in 0..m {
            let n = Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            u = win.push(0, &(l * n));
        }
        acc += u;
    }
    let mean = acc / windows as f64;
    for j in 0..3 {
        let rel = (mean[(j, j)] - c[(j, j)]).abs() / c[(j, j)];
        assert!(rel < 0.05, "axis {j}: {rel}");
    }
    assert!((mean - c).norm() / c.norm() < 0.05);
}

fn pred_cov() -> DMatrix<f64> {
    DMatrix::identity(27, 27) * 1e-4
}

fn state() -> GroupState {
    let mut s = GroupState::identity(4);
    s.rot = exp_so3(&Vec3::new(0.1, -0.05, 1.2));
    s
}

fn sym(v: &[f64]) -> Mat3 {
    let a = Mat3::from_column_slice(v);
    (a + a.transpose()) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn alpha_stays_clamped(v in prop::collection::vec(-1.0f64..1.0, 9), scale in 1e-6f64..1.0) {
        let cfg = NoiseConfig::default();
        let u = sym(&v) * scale;
        let a = estimate_alpha(&u, &pred_cov(), &state(), &cfg);
        prop_assert!(a.iter().all(|&x| (1.0..=cfg.alpha_max).contains(&x)));
    }

    #[test]
    fn alpha_is_monotone_in_u(
        base in prop::collection::vec(-1.0f64..1.0, 9),
        extra in prop::collection::vec(-1.0f64..1.0, 9),
        scale in 1e-5f64..1e-2,
    ) {
        let cfg = NoiseConfig::default();
        let b = Mat3::from_column_slice(&extra);
        let u1 = sym(&base) * scale;
        let u2 = u1 + b * b.transpose() * scale;
        let a1 = estimate_alpha(&u1, &pred_cov(), &state(), &cfg);
        let a2 = estimate_alpha(&u2, &pred_cov(), &state(), &cfg);
        prop_assert!((0..3).all(|j| a2[j] >= a1[j] - 1e-12));
    }
}

#[test]
fn low_pass_rise_follows_first_order_response() {
    let mut obs = ForceObserver::new(1, 30.0);
    let tau = obs.time_constant();
    let dt = 1e-3;
    obs.update(&[0.0], dt);
    for k in 1..=40 {
        let y = obs.update(&[1.0], dt)[0];
        let expected = 1.0 - (-(k as f64) * dt / tau).exp();
        assert!((y - expected).abs() <= 0.05 * expected, "step {k}");
    }
}

/// Independent recursion for the contact fuser with constant inputs.
fn kf_trajectory(x0: f64, p0: f64, prior: f64, z: f64, steps: usize, c: &FusionConfig) -> Vec<f64> {
    let (mut x, mut p) = (x0, p0);
    let mut out = Vec::new();
    for _ in 0..steps {
        let xm = (1.0 - c.prior_weight) * x + c.prior_weight * prior;
        let pm = (1.0 - c.prior_weight).powi(2) * p + c.process_var;
        let k = pm / (pm + c.measurement_var);
        x = xm + k * (z - xm);
        p = (1.0 - k) * pm;
        out.push(x);
    }
    out
}

#[test]
fn fuser_matches_closed_form_trajectories() {
    let c = FusionConfig::default();
    let z_missing = 1.0 / (1.0 + (c.force_mid / c.force_scale).exp());
    let z_early = 1.0 / (1.0 + (-(200.0 - c.force_mid) / c.force_scale).exp());

    let mut f = ContactFuser::new(&[1.0, 0.0], c);
    let missed = kf_trajectory(1.0, c.measurement_var, 1.0, z_missing, 10, &c);
    let early = kf_trajectory(0.0, c.measurement_var, 0.0, z_early, 10, &c);
    for k in 0..10 {
        let a = f.step(0, 1.0, 0.0);
        let b = f.step(1, 0.0, 200.0);
        assert!((a.probability - missed[k]).abs() < 1e-12);
        assert!((b.probability - early[k]).abs() < 1e-12);
    }
    assert!(missed.iter().take(5).any(|&x| x < 0.5));
    assert!(early.iter().take(10).any(|&x| x >= 0.6));
}

#[test]
fn hysteresis_suppresses_chatter() {
    let c = FusionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let patterns: [Box<dyn Fn(usize, &mut ChaCha8Rng) -> f64>; 3] = [
        Box::new(|k, _| if k % 2 == 0 { 1.1 } else { 0.9 }),
        Box::new(|k, _| if (k / 5) % 2 == 0 { 1.1 } else { 0.9 }),
        Box::new(|_, r| 1.0 + 0.1 * (2.0 * rand::Rng::random::<f64>(r) - 1.0)),
    ];
    for pattern in &patterns {
        let mut f = ContactFuser::new(&[0.5], c);
        let mut toggles = 0;
        let mut last = f.beliefs()[0].flag;
        let steps = 1000;
        for k in 0..steps {
            let b = f.step(0, 0.5, c.force_mid * pattern(k, &mut rng));
            if b.flag != last {
                toggles += 1;
                last = b.flag;
            }
            assert!((0.0..=1.0).contains(&b.probability) && b.variance > 0.0);
        }
        assert!(toggles <= steps / 50, "{toggles} toggles");
    }
}

#[test]
fn schedule_priors_stay_in_unit_interval() {
    for kind in [GaitKind::Trot, GaitKind::FlyingTrot, GaitKind::Pronk, GaitKind::Stand] {
        let g = GaitSchedule::preset(kind);
        for k in 0..5000 {
            let t = k as f64 * 1e-3;
            for leg in 0..4 {
                let p = g.prior(leg, t);
                assert!((0.0..=1.0).contains(&p));
                // prior agrees with the schedule away from transitions
                let ph = g.phase(leg, t) * g.period;
                let dist = ph.min((ph - g.duty * g.period).abs()).min(g.period - ph);
                if dist > g.ramp {
                    assert_eq!(p, if g.in_stance(leg, t) { 1.0 } else { 0.0 });
                }
            }
        }
    }
}
