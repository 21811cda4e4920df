use aiekf_core::inekf::{
    check_group_affine, min_eigenvalue, predict_covariance, right_invariant_error, Discretization, FilterState,
    LinearizedDynamics, ProcessNoise,
};
use aiekf_core::legged::{
    build_a, build_position_observation, build_process_noise, plant_matrix, strapdown, ContactVector, ImuSample,
    NoiseConfig, GRAVITY,
};
use aiekf_core::liegroup::{adjoint, exp_se2n3_slice, exp_so3, GroupState, LegVecs, Mat3, Vec3};
use nalgebra::{DMatrix, DVector, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gvec() -> Vec3 {
    Vec3::new(0.0, 0.0, -GRAVITY)
}

fn rvec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

fn random_state(rng: &mut ChaCha8Rng, n_legs: usize) -> GroupState {
    GroupState {
        rot: exp_so3(&rvec(rng, 1.0)),
        vel: rvec(rng, 1.0),
        pos: rvec(rng, 2.0),
        feet: (0..n_legs).map(|_| rvec(rng, 2.0)).collect::<LegVecs>(),
    }
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&l * l.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1) * scale
}

#[test]
fn legged_plant_is_group_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = gvec();
    let worst = check_group_affine(
        |chi: &GroupState, u: &(Vec3, Vec3)| plant_matrix(chi, &u.0, &u.1, &g),
        || {
            let a = random_state(&mut rng, 4);
            let b = random_state(&mut rng, 4);
            let u = (rvec(&mut rng, 1.0), rvec(&mut rng, 5.0));
            (a, b, u)
        },
        1000,
    );
    assert!(worst < 1e-9, "residual {worst}");
}

#[test]
fn velocity_dependent_drag_is_not_group_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = gvec();
    let worst = check_group_affine(
        |chi: &GroupState, u: &(Vec3, Vec3)| {
            let mut f = plant_matrix(chi, &u.0, &u.1, &g);
            // quadratic drag breaks the condition
            let drag = -chi.vel * chi.vel.norm() * 0.3;
            for k in 0..3 {
                f[(k, 3)] += drag[k];
            }
            f
        },
        || {
            let a = random_state(&mut rng, 2);
            let b = random_state(&mut rng, 2);
            (a, b, (rvec(&mut rng, 1.0), rvec(&mut rng, 5.0)))
        },
        100,
    );
    assert!(worst > 1e-3, "residual {worst}");
}

#[test]
fn update_matches_joseph_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = NoiseConfig::default();
    for _ in 0..50 {
        let truth = random_state(&mut rng, 4);
        let dim = 27;
        let cov = random_spd(&mut rng, dim, 1e-2);
        let chi = truth.clone();
        let mut state = FilterState::new(chi.clone(), Vector6::zeros(), cov.clone()).unwrap();
        let legs = [0usize, 2, 3];
        let blocks: Vec<_> = legs
            .iter()
            .map(|&leg| {
                let rel = truth.rot.transpose() * (truth.feet[leg] - truth.pos) + rvec(&mut rng, 0.01);
                build_position_observation(leg, &rel, &chi, &cfg)
            })
            .collect();
        state.update(&blocks).unwrap();

        // dense oracle: explicit inverse, Joseph form
        let mut h = DMatrix::zeros(9, dim);
        let mut z = DVector::zeros(9);
        let mut n = DMatrix::zeros(9, 9);
        for (k, b) in blocks.iter().enumerate() {
            h.rows_mut(3 * k, 3).copy_from(&b.h);
            let r = b.residual(&chi);
            z.fixed_rows_mut::<3>(3 * k).copy_from(&r);
            n.fixed_view_mut::<3, 3>(3 * k, 3 * k)
                .copy_from(&(b.m * b.noise * b.m.transpose()));
        }
        let s = &h * &cov * h.transpose() + &n;
        let k = &cov * h.transpose() * s.try_inverse().unwrap();
        let ikh = DMatrix::identity(dim, dim) - &k * &h;
        let joseph = &ikh * &cov * ikh.transpose() + &k * &n * k.transpose();
        let rel = (&state.cov - &joseph).amax() / cov.amax();
        assert!(rel < 1e-9, "covariance mismatch {rel}");

        let delta = &k * z;
        let expected = exp_se2n3_slice(&delta.as_slice()[..21]).unwrap().compose(&chi).unwrap();
        assert!((state.chi.to_matrix() - expected.to_matrix()).amax() < 1e-9);
        assert!((state.bias - delta.fixed_rows::<6>(21)).amax() < 1e-12);
    }
}

/// Integrates `P' = A P + P A^T + W` with RK4.
fn lyapunov_rk4(p0: &DMatrix<f64>, a: &DMatrix<f64>, w: &DMatrix<f64>, t: f64, steps: usize) -> DMatrix<f64> {
    let h = t / steps as f64;
    let f = |p: &DMatrix<f64>| a * p + p * a.transpose() + w;
    let mut p = p0.clone();
    for _ in 0..steps {
        let k1 = f(&p);
        let k2 = f(&(&p + &k1 * (h / 2.0)));
        let k3 = f(&(&p + &k2 * (h / 2.0)));
        let k4 = f(&(&p + &k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    p
}

fn conjugated_dense(chi: &GroupState, q: &ProcessNoise) -> DMatrix<f64> {
    let dim = q.dim();
    let mut g = DMatrix::identity(dim, dim);
    let ad = adjoint(chi);
    g.view_mut((0, 0), (ad.nrows(), ad.ncols())).copy_from(&ad);
    &g * q.to_dense() * g.transpose()
}

#[test]
fn exact_prediction_matches_fine_riccati_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = NoiseConfig {
        gyro_noise: 0.05,
        accel_noise: 0.3,
        ..NoiseConfig::default()
    };
    for _ in 0..5 {
        let chi = random_state(&mut rng, 2);
        let cov = random_spd(&mut rng, 21, 1e-2);
        let contacts = ContactVector::from_flags(&[true, false]);
        let noise = build_process_noise(&contacts, &cfg, &[]);
        let a = build_a(&chi, &gvec());
        let dt = 0.01;
        let w = conjugated_dense(&chi, &noise);
        let oracle = lyapunov_rk4(&cov, &a, &w, dt, 200);
        let exact = predict_covariance(
            &cov,
            &chi,
            &LinearizedDynamics {
                a: a.clone(),
                noise: noise.clone(),
                dt,
                discretization: Discretization::Exact,
            },
        )
        .unwrap();
        let scale = oracle.amax();
        assert!((&exact - &oracle).amax() / scale < 1e-10);
        let first = predict_covariance(
            &cov,
            &chi,
            &LinearizedDynamics {
                a,
                noise,
                dt,
                discretization: Discretization::FirstOrder,
            },
        )
        .unwrap();
        // first order drops O(T^2) terms only
        let err = (&first - &oracle).amax() / scale;
        assert!(err < 1e-2 && err > 1e-10, "first-order error {err}");
    }
}

#[test]
fn a_matches_finite_difference_of_error_dynamics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = gvec();
    for _ in 0..20 {
        let truth = random_state(&mut rng, 2);
        let bias = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * 0.05);
        let imu = ImuSample {
            t: 0.0,
            gyro: rvec(&mut rng, 1.0),
            accel: rvec(&mut rng, 5.0),
        };
        let delta = 1e-6;
        let xi: Vec<f64> = (0..15).map(|_| rng.sample::<f64, _>(StandardNormal) * delta).collect();
        let eps = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal) * delta);
        let est = exp_se2n3_slice(&xi).unwrap().compose(&truth).unwrap();
        let dt = 1e-4;
        let truth_next = strapdown(&truth, &bias, &imu, dt, &g);
        let est_next = strapdown(&est, &(bias + eps), &imu, dt, &g);
        let xi_next = right_invariant_error(&est_next, &truth_next).unwrap();

        let mut e0 = DVector::zeros(21);
        e0.rows_mut(0, 15).copy_from_slice(&xi);
        e0.rows_mut(15, 6).copy_from(&eps);
        let fd = (xi_next.as_vector() - e0.rows(0, 15)) / dt;
        let predicted = (build_a(&truth, &g) * &e0).rows(0, 15).into_owned();
        let rel = (&fd - &predicted).amax() / predicted.amax();
        assert!(rel < 1e-2, "relative mismatch {rel}");
    }
}

#[test]
fn invariant_error_evolves_independently_of_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = gvec();
    let eta0 = exp_se2n3_slice(&(0..15).map(|_| rng.random_range(-0.2..0.2)).collect::<Vec<_>>()).unwrap();
    let mut finals = Vec::new();
    for _ in 0..3 {
        let mut truth = random_state(&mut rng, 2);
        let mut est = eta0.compose(&truth).unwrap();
        for k in 0..100 {
            let imu = ImuSample {
                t: k as f64 * 1e-3,
                gyro: rvec(&mut rng, 2.0),
                accel: rvec(&mut rng, 10.0),
            };
            truth = strapdown(&truth, &Vector6::zeros(), &imu, 1e-3, &g);
            est = strapdown(&est, &Vector6::zeros(), &imu, 1e-3, &g);
        }
        finals.push(est.compose(&truth.inverse()).unwrap());
    }
    for f in &finals[1..] {
        assert!((f.to_matrix() - finals[0].to_matrix()).amax() < 1e-10);
    }
    // closed form: eta_R fixed, eta_v gains (I - eta_R) g per second
    let t = 0.1;
    let eta_r = eta0.rot;
    let dv = (Mat3::identity() - eta_r) * g;
    let expected_v = eta0.vel + dv * t;
    let expected_p = eta0.pos + eta0.vel * t + dv * (0.5 * t * t);
    assert!((finals[0].rot - eta_r).amax() < 1e-12);
    assert!((finals[0].vel - expected_v).amax() < 1e-10);
    assert!((finals[0].pos - expected_p).amax() < 1e-10);
}

#[test]
fn covariance_stays_symmetric_psd_over_random_cycles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = NoiseConfig::default();
    let g = gvec();
    let truth = random_state(&mut rng, 4);
    let mut state = FilterState::new(truth.clone(), Vector6::zeros(), DMatrix::identity(27, 27) * 0.01).unwrap();
    let mut worst_eig = f64::INFINITY;
    for k in 0..1000 {
        let flags: Vec<bool> = (0..4).map(|_| rng.random_bool(0.6)).collect();
        let contacts = ContactVector::from_flags(&flags);
        let imu = ImuSample {
            t: k as f64 * 1e-3,
            gyro: rvec(&mut rng, 0.5),
            accel: rvec(&mut rng, 1.0) + Vec3::new(0.0, 0.0, GRAVITY),
        };
        let dynamics = LinearizedDynamics {
            a: build_a(&state.chi, &g),
            noise: build_process_noise(&contacts, &cfg, &[]),
            dt: 1e-3,
            discretization: Discretization::FirstOrder,
        };
        state
            .propagate(&dynamics, |chi, b| strapdown(chi, b, &imu, 1e-3, &g))
            .unwrap();
        let blocks: Vec<_> = (0..4)
            .filter(|&l| flags[l])
            .map(|l| {
                let rel = state.chi.rot.transpose() * (state.chi.feet[l] - state.chi.pos) + rvec(&mut rng, 0.01);
                build_position_observation(l, &rel, &state.chi, &cfg)
            })
            .collect();
        if !blocks.is_empty() {
            let info = state.update(&blocks).unwrap();
            assert!(info.asymmetry < 1e-9);
        }
        assert!(state.cov.iter().all(|x| x.is_finite()));
        assert_eq!(state.cov, state.cov.transpose());
        worst_eig = worst_eig.min(min_eigenvalue(&state.cov));
    }
    assert!(worst_eig > -1e-9, "min eigenvalue {worst_eig}");
}

#[test]
fn uninformative_update_leaves_state_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = random_state(&mut rng, 4);
    let cfg = NoiseConfig {
        kin_noise: 1e6,
        ..NoiseConfig::default()
    };
    let cov = random_spd(&mut rng, 27, 1e-2);
    let mut state = FilterState::new(truth.clone(), Vector6::zeros(), cov.clone()).unwrap();
    let rel = truth.rot.transpose() * (truth.feet[1] - truth.pos) + Vec3::new(0.3, -0.2, 0.1);
    let blk = build_position_observation(1, &rel, &truth, &cfg);
    state.update(&[blk]).unwrap();
    assert!((state.chi.to_matrix() - truth.to_matrix()).amax() < 1e-9);
    assert!((&state.cov - &cov).amax() < 1e-9);
}
