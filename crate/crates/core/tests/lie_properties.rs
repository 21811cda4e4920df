use aiekf_core::liegroup::{adjoint, exp_se2n3_slice, exp_so3, log_se2n3, log_so3, wedge, GroupState};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Matrix exponential by Taylor series with scaling and squaring.
fn series_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = m.abs().row_sum().max();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a = m / 2f64.powi(squarings);
    let n = m.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn tangent(n_legs: usize, max_angle: f64) -> impl Strategy<Value = Vec<f64>> {
    let dim = 9 + 3 * n_legs;
    (
        prop::collection::vec(-1.0f64..1.0, 3),
        0.0..max_angle,
        prop::collection::vec(-3.0f64..3.0, dim - 3),
    )
        .prop_filter("non-degenerate axis", |(axis, _, _)| {
            axis.iter().map(|x| x * x).sum::<f64>() > 1e-6
        })
        .prop_map(|(axis, angle, rest)| {
            let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut xi: Vec<f64> = axis.iter().map(|x| x / norm * angle).collect();
            xi.extend(rest);
            xi
        })
}

fn legs() -> impl Strategy<Value = usize> {
    prop_oneof![Just(0usize), Just(1), Just(4)]
}

fn element(n_legs: usize) -> impl Strategy<Value = GroupState> {
    tangent(n_legs, 3.1).prop_map(|xi| exp_se2n3_slice(&xi).unwrap())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.abs().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn closed_form_exp_matches_series(xi in legs().prop_flat_map(|n| tangent(n, 3.1))) {
        let closed = exp_se2n3_slice(&xi).unwrap().to_matrix();
        let series = series_exp(&wedge(&xi).unwrap());
        prop_assert!(max_abs(&(closed - series)) < 1e-9);
    }

    #[test]
    fn log_inverts_exp(xi in legs().prop_flat_map(|n| tangent(n, 3.1))) {
        let back = log_se2n3(&exp_se2n3_slice(&xi).unwrap());
        let diff = back.as_vector() - DVector::from_column_slice(&xi);
        prop_assert!(diff.amax() < 1e-9, "diff {}", diff.amax());
    }

    #[test]
    fn exp_inverts_log(x in legs().prop_flat_map(element)) {
        let back = exp_se2n3_slice(log_se2n3(&x).as_vector().as_slice()).unwrap();
        prop_assert!(max_abs(&(back.to_matrix() - x.to_matrix())) < 1e-9);
    }

    #[test]
    fn so3_roundtrip(w in prop::collection::vec(-1.8f64..1.8, 3)) {
        let w = aiekf_core::Vec3::from_column_slice(&w);
        prop_assert!((log_so3(&exp_so3(&w)) - w).amax() < 1e-9);
    }

    #[test]
    fn group_axioms((a, b, c) in legs().prop_flat_map(|n| (element(n), element(n), element(n)))) {
        let n = a.n_legs();
        let id = GroupState::identity(n);
        let left = a.compose(&b).unwrap().compose(&c).unwrap();
        let right = a.compose(&b.compose(&c).unwrap()).unwrap();
        prop_assert!(max_abs(&(left.to_matrix() - right.to_matrix())) < 1e-9);
        prop_assert!(max_abs(&(a.compose(&id).unwrap().to_matrix() - a.to_matrix())) < 1e-12);
        prop_assert!(max_abs(&(id.compose(&a).unwrap().to_matrix() - a.to_matrix())) < 1e-12);
        let e = a.compose(&a.inverse()).unwrap();
        prop_assert!(max_abs(&(e.to_matrix() - id.to_matrix())) < 1e-9);
        // matrix embedding is a homomorphism
        let prod = a.to_matrix() * b.to_matrix();
        prop_assert!(max_abs(&(a.compose(&b).unwrap().to_matrix() - prod)) < 1e-9);
    }

    #[test]
    fn adjoint_defining_relation(
        (x, xi) in legs().prop_flat_map(|n| (element(n), tangent(n, 3.0)))
    ) {
        let m = x.to_matrix();
        let lhs = &m * wedge(&xi).unwrap() * x.inverse().to_matrix();
        let ad_xi = adjoint(&x) * DVector::from_column_slice(&xi);
        let rhs = wedge(ad_xi.as_slice()).unwrap();
        prop_assert!(max_abs(&(lhs - rhs)) < 1e-9);
    }

    #[test]
    fn adjoint_is_homomorphism((a, b) in legs().prop_flat_map(|n| (element(n), element(n)))) {
        let lhs = adjoint(&a.compose(&b).unwrap());
        let rhs = adjoint(&a) * adjoint(&b);
        prop_assert!(max_abs(&(lhs - rhs)) < 1e-9);
    }

    #[test]
    fn exp_conjugation((x, xi) in legs().prop_flat_map(|n| (element(n), tangent(n, 1.0)))) {
        let ad_xi = adjoint(&x) * DVector::from_column_slice(&xi);
        let lhs = exp_se2n3_slice(ad_xi.as_slice()).unwrap();
        let rhs = x.compose(&exp_se2n3_slice(&xi).unwrap()).unwrap().compose(&x.inverse()).unwrap();
        prop_assert!(max_abs(&(lhs.to_matrix() - rhs.to_matrix())) < 1e-9);
    }
}
