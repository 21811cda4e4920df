//! Discrete-time right-invariant EKF on SE_{2+N}(3) with additive IMU bias
//! states.
//!
//! The error state is `(xi, eps_b)` with `xi` in R^{9+3N} (right-invariant
//! error, `eta = chi_hat * chi^-1 = Exp(xi)`) and `eps_b` in R^6 ordered
//! (gyro bias, accel bias), `eps_b = b_hat - b`.

use nalgebra::{DMatrix, DVector, Vector6};
use smallvec::SmallVec;
use thiserror::Error;

use crate::liegroup::{exp_se2n3_slice, log_se2n3, reorthonormalize, GroupState, LieError, Mat3, TangentVec, Vec3};

pub const BIAS_DIM: usize = 6;

/// Condition number of the innovation covariance above which an update is
/// refused.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("covariance became non-finite during propagation")]
    NonFiniteCovariance,
    #[error("innovation covariance is numerically singular (condition {condition:e})")]
    SingularInnovation { condition: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("update called without observation blocks")]
    NoObservations,
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// How `A` and `Q` are turned into their discrete counterparts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Discretization {
    /// `A_d = I + A T`, `Q_d = Q T`.
    #[default]
    FirstOrder,
    /// `A_d = exp(A T)` and the exact noise integral (Van Loan).
    Exact,
}

/// Continuous process noise, block-diagonal in 3x3 blocks: one per group
/// tangent block `(R, v, p, r_1..r_N)` followed by gyro-bias and
/// accel-bias blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessNoise {
    pub blocks: SmallVec<[Mat3; 9]>,
}

impl ProcessNoise {
    pub fn zeros(n_legs: usize) -> Self {
        Self {
            blocks: smallvec::smallvec![Mat3::zeros(); 5 + n_legs],
        }
    }

    pub fn n_legs(&self) -> usize {
        self.blocks.len() - 5
    }

    pub fn dim(&self) -> usize {
        3 * self.blocks.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut q = DMatrix::zeros(n, n);
        for (i, b) in self.blocks.iter().enumerate() {
            q.fixed_view_mut::<3, 3>(3 * i, 3 * i).copy_from(b);
        }
        q
    }
}

/// Linearized error dynamics `d/dt e = A e + G w` over one sampling period.
#[derive(Debug, Clone)]
pub struct LinearizedDynamics {
    pub a: DMatrix<f64>,
    pub noise: ProcessNoise,
    pub dt: f64,
    pub discretization: Discretization,
}

/// One right-invariant observation `Y = chi^-1 b + V`, reduced to three rows.
#[derive(Debug, Clone)]
pub struct ObservationBlock {
    /// Observation in the `(5+N)` embedding.
    pub y: DVector<f64>,
    /// Known vector.
    pub b: DVector<f64>,
    /// `3 x (15+3N)` measurement matrix, `H xi = -s xi^ b`.
    pub h: DMatrix<f64>,
    /// Noise injection, `M v = s chi V`.
    pub m: Mat3,
    pub noise: Mat3,
    /// `3 x (5+N)` selection matrix.
    pub selection: DMatrix<f64>,
}

impl ObservationBlock {
    /// Innovation `s (chi_hat Y - b)`.
    pub fn residual(&self, chi: &GroupState) -> Vec3 {
        let diff = act(chi, &self.y) - &self.b;
        let z = &self.selection * diff;
        Vec3::new(z[0], z[1], z[2])
    }
}

/// `chi * y` for `y` in the `(5+N)` embedding.
pub fn act(chi: &GroupState, y: &DVector<f64>) -> DVector<f64> {
    let mut out = y.clone();
    let head = chi.rot * Vec3::new(y[0], y[1], y[2])
        + chi.vel * y[3]
        + chi.pos * y[4]
        + chi
            .feet
            .iter()
            .enumerate()
            .fold(Vec3::zeros(), |acc, (i, f)| acc + f * y[5 + i]);
    out.fixed_rows_mut::<3>(0).copy_from(&head);
    out
}

/// Diagnostics from one measurement update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateInfo {
    /// Largest `|P - P^T|` entry before re-symmetrization.
    pub asymmetry: f64,
    pub innovation_condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub chi: GroupState,
    /// `(b_gyro, b_accel)`.
    pub bias: Vector6<f64>,
    pub cov: DMatrix<f64>,
}

impl FilterState {
    pub fn new(chi: GroupState, bias: Vector6<f64>, cov: DMatrix<f64>) -> Result<Self, FilterError> {
        let dim = 15 + 3 * chi.n_legs();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(FilterError::Dimension {
                expected: dim,
                got: cov.nrows(),
            });
        }
        Ok(Self { chi, bias, cov })
    }

    pub fn n_legs(&self) -> usize {
        self.chi.n_legs()
    }

    /// Error-state dimension `15 + 3N`.
    pub fn dim(&self) -> usize {
        15 + 3 * self.n_legs()
    }

    /// Index of the first bias row.
    pub fn bias_offset(&self) -> usize {
        9 + 3 * self.n_legs()
    }

    pub fn gyro_bias(&self) -> Vec3 {
        self.bias.fixed_rows::<3>(0).into_owned()
    }

    pub fn accel_bias(&self) -> Vec3 {
        self.bias.fixed_rows::<3>(3).into_owned()
    }

    /// Mean propagation with `mean_fn` followed by covariance prediction.
    /// On error the state is left untouched.
    pub fn propagate<F>(&mut self, dynamics: &LinearizedDynamics, mean_fn: F) -> Result<(), FilterError>
    where
        F: FnOnce(&GroupState, &Vector6<f64>) -> GroupState,
    {
        let chi = mean_fn(&self.chi, &self.bias);
        let cov = predict_covariance(&self.cov, &chi, dynamics)?;
        self.chi = chi;
        self.cov = cov;
        Ok(())
    }

    /// Stacked right-invariant update. On error the state is left untouched.
    pub fn update(&mut self, blocks: &[ObservationBlock]) -> Result<UpdateInfo, FilterError> {
        if blocks.is_empty() {
            return Err(FilterError::NoObservations);
        }
        let dim = self.dim();
        let rows = 3 * blocks.len();
        let mut h = DMatrix::zeros(rows, dim);
        let mut z = DVector::zeros(rows);
        let mut s = DMatrix::zeros(rows, rows);
        for (k, blk) in blocks.iter().enumerate() {
            if blk.h.ncols() != dim || blk.h.nrows() != 3 {
                return Err(FilterError::Dimension {
                    expected: dim,
                    got: blk.h.ncols(),
                });
            }
            h.rows_mut(3 * k, 3).copy_from(&blk.h);
            z.fixed_rows_mut::<3>(3 * k).copy_from(&blk.residual(&self.chi));
            s.fixed_view_mut::<3, 3>(3 * k, 3 * k)
                .copy_from(&(blk.m * blk.noise * blk.m.transpose()));
        }
        let hp = &h * &self.cov;
        s += &hp * h.transpose();
        symmetrize(&mut s);

        let condition = condition_number(&s);
        if !(condition <= MAX_INNOVATION_CONDITION) {
            return Err(FilterError::SingularInnovation { condition });
        }
        let chol = s
            .clone()
            .cholesky()
            .ok_or(FilterError::SingularInnovation { condition })?;
        // K^T = S^-1 H P
        let kt = chol.solve(&hp);
        let correction = kt.transpose() * z;

        let n_group = self.bias_offset();
        let delta = exp_se2n3_slice(&correction.as_slice()[..n_group])?;
        let mut chi = delta.compose(&self.chi)?;
        chi.rot = reorthonormalize(&chi.rot);

        let mut cov = &self.cov - kt.transpose() * hp;
        let asymmetry = (&cov - cov.transpose()).abs().max();
        symmetrize(&mut cov);

        self.chi = chi;
        self.bias += correction.fixed_rows::<6>(n_group);
        self.cov = cov;
        Ok(UpdateInfo {
            asymmetry,
            innovation_condition: condition,
        })
    }
}

/// `P^- = A_d P A_d^T + Q_d`, with the noise conjugated by
/// `blockdiag(Ad_{chi_pred}, I_6)`.
pub fn predict_covariance(
    cov: &DMatrix<f64>,
    chi_pred: &GroupState,
    dynamics: &LinearizedDynamics,
) -> Result<DMatrix<f64>, FilterError> {
    PredictionSnapshot::new(cov, chi_pred, dynamics)?.predict(&dynamics.noise)
}

/// The noise-independent part `A_d P A_d^T` of a covariance prediction.
///
/// Covariance prediction is affine in the process noise, so predicting again
/// with different foot noise only re-adds the noise term to the shared base.
#[derive(Debug, Clone)]
pub struct PredictionSnapshot {
    base: DMatrix<f64>,
    chi: GroupState,
    a: DMatrix<f64>,
    dt: f64,
    mode: Discretization,
}

impl PredictionSnapshot {
    pub fn new(cov: &DMatrix<f64>, chi_pred: &GroupState, dynamics: &LinearizedDynamics) -> Result<Self, FilterError> {
        let dim = cov.nrows();
        if dynamics.a.nrows() != dim || dynamics.noise.dim() != dim || cov.ncols() != dim {
            return Err(FilterError::Dimension {
                expected: dim,
                got: dynamics.a.nrows(),
            });
        }
        let transition = match dynamics.discretization {
            Discretization::FirstOrder => {
                let mut ad = &dynamics.a * dynamics.dt;
                for i in 0..dim {
                    ad[(i, i)] += 1.0;
                }
                ad
            }
            Discretization::Exact => (&dynamics.a * dynamics.dt).exp(),
        };
        let base = &transition * cov * transition.transpose();
        Ok(Self {
            base,
            chi: chi_pred.clone(),
            a: dynamics.a.clone(),
            dt: dynamics.dt,
            mode: dynamics.discretization,
        })
    }

    pub fn predict(&self, noise: &ProcessNoise) -> Result<DMatrix<f64>, FilterError> {
        let mut out = &self.base + discretized_noise(&self.chi, &self.a, noise, self.dt, self.mode);
        if out.iter().any(|x| !x.is_finite()) {
            return Err(FilterError::NonFiniteCovariance);
        }
        symmetrize(&mut out);
        Ok(out)
    }

    pub fn chi(&self) -> &GroupState {
        &self.chi
    }
}

/// Discrete noise contribution of `noise` over one period. Linear in
/// `noise`, so re-predicting with `Q + dQ` equals adding this for `dQ`.
pub fn discretized_noise(
    chi: &GroupState,
    a: &DMatrix<f64>,
    noise: &ProcessNoise,
    dt: f64,
    mode: Discretization,
) -> DMatrix<f64> {
    let gqg = conjugated_noise(chi, noise);
    match mode {
        Discretization::FirstOrder => gqg * dt,
        Discretization::Exact => {
            // Van Loan: exp([[-A, GQG^T], [0, A^T]] T) = [[., F12], [0, F22]],
            // Q_d = F22^T F12.
            let n = a.nrows();
            let mut big = DMatrix::zeros(2 * n, 2 * n);
            big.view_mut((0, 0), (n, n)).copy_from(&(-a));
            big.view_mut((0, n), (n, n)).copy_from(&gqg);
            big.view_mut((n, n), (n, n)).copy_from(&a.transpose());
            let e = (big * dt).exp();
            let f12 = e.view((0, n), (n, n)).into_owned();
            let f22 = e.view((n, n), (n, n)).into_owned();
            let mut q = f22.transpose() * f12;
            symmetrize(&mut q);
            q
        }
    }
}

/// `blockdiag(Ad_chi, I) Q blockdiag(Ad_chi, I)^T`, using the sparsity of the
/// adjoint: row block `i` of `Ad` is `(X_i R, 0, .., R, ..)` with
/// `X_0 = 0`, `X_1 = [v]x`, `X_2 = [p]x`, `X_{2+j} = [r_j]x`.
pub fn conjugated_noise(chi: &GroupState, noise: &ProcessNoise) -> DMatrix<f64> {
    let n_legs = chi.n_legs();
    let groups = 3 + n_legs;
    let dim = 3 * (groups + 2);
    let mut out = DMatrix::zeros(dim, dim);
    let r = &chi.rot;
    let w = r * noise.blocks[0] * r.transpose();
    let x: SmallVec<[Mat3; 8]> = (0..groups)
        .map(|i| {
            if i == 0 {
                Mat3::identity()
            } else {
                crate::liegroup::hat_so3(chi.column(i - 1))
            }
        })
        .collect();
    let xw: SmallVec<[Mat3; 8]> = x.iter().map(|xi| xi * w).collect();
    for i in 0..groups {
        for j in 0..=i {
            let mut blk = xw[i] * x[j].transpose();
            if i == j && i > 0 {
                blk += r * noise.blocks[i] * r.transpose();
            }
            out.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&blk);
            if i != j {
                out.fixed_view_mut::<3, 3>(3 * j, 3 * i).copy_from(&blk.transpose());
            }
        }
    }
    for k in 0..2 {
        let o = 3 * (groups + k);
        out.fixed_view_mut::<3, 3>(o, o).copy_from(&noise.blocks[groups + k]);
    }
    out
}

/// Right-invariant error `log(est * truth^-1)`.
pub fn right_invariant_error(est: &GroupState, truth: &GroupState) -> Result<TangentVec, LieError> {
    let eta = est.compose(&truth.inverse())?;
    Ok(log_se2n3(&eta))
}

/// Largest residual of the group-affine condition
/// `f(a b) = f(a) b + a f(b) - a f(I) b` over `samples` draws.
///
/// `f` returns the `(5+N) x (5+N)` time derivative of the embedding.
pub fn check_group_affine<U, F, S>(f: F, mut sample: S, samples: usize) -> f64
where
    F: Fn(&GroupState, &U) -> DMatrix<f64>,
    S: FnMut() -> (GroupState, GroupState, U),
{
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (a, b, u) = sample();
        let ab = a.compose(&b).expect("sampler must draw matching leg counts");
        let id = GroupState::identity(a.n_legs());
        let ma = a.to_matrix();
        let mb = b.to_matrix();
        let lhs = f(&ab, &u);
        let rhs = f(&a, &u) * &mb + &ma * f(&b, &u) - &ma * f(&id, &u) * &mb;
        worst = worst.max((lhs - rhs).norm());
    }
    worst
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// 2-norm condition number of a symmetric matrix.
pub fn condition_number(s: &DMatrix<f64>) -> f64 {
    let eig = s.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}
