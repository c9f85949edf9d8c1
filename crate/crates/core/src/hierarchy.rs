//! Two-level hierarchically decoupled task representation.
//!
//! Level 1 is the end-effector pose (6 rows), level 2 the joint-1 angle. The
//! null-space basis of the level-1 Jacobian comes from an SVD, the level-1
//! generalized inverse is the inertia-weighted (dynamically consistent) one,
//! and the decoupled inertia/Coriolis blocks follow from `J̄⁻¹ = [Z1ᵀ Z2ᵀ]`.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use thiserror::Error;

use crate::dynamics::{jacobian_secondary, DynamicTerms, JointState};
use crate::scalar::Real;

/// Singular-value ratio below which the level-1 Jacobian is rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-8;
/// Diagonal damping added to a near-singular `J M⁻¹ Jᵀ`.
pub const DAMPING_LAMBDA_SQ: f64 = 1e-6;
/// Reciprocal condition number that triggers the damping.
const NEAR_SINGULAR_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum HierarchyError {
    #[error("task Jacobian is rank deficient (σ_min/σ_max = {ratio:.3e}) at q = {configuration:?}")]
    Singular { ratio: f64, configuration: Vec<f64> },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Orthonormal basis of the null space of a wide full-row-rank matrix.
///
/// Each basis row is signed so its first entry that is not negligible is
/// positive, which keeps the basis continuous along smooth motions.
pub fn null_basis<T: Real>(jac: &DMatrix<T>) -> Result<DMatrix<T>, HierarchyError> {
    let (basis, ratio) = null_basis_with_ratio(jac);
    if ratio < RANK_TOLERANCE {
        return Err(HierarchyError::Singular {
            ratio,
            configuration: Vec::new(),
        });
    }
    Ok(basis)
}

/// Null-space basis without the rank check; also returns `σ_m / σ_1`.
pub fn null_basis_with_ratio<T: Real>(jac: &DMatrix<T>) -> (DMatrix<T>, f64) {
    let (m, n) = jac.shape();
    assert!(m < n, "null basis needs a wide matrix");
    let mut padded = DMatrix::zeros(n, n);
    padded.rows_mut(0, m).copy_from(jac);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let largest = svd.singular_values[order[0]].as_f64();
    let smallest_kept = svd.singular_values[order[m - 1]].as_f64();
    let ratio = if largest > 0.0 { smallest_kept / largest } else { 0.0 };

    let mut basis = DMatrix::zeros(n - m, n);
    for (row, &idx) in order[m..].iter().enumerate() {
        let mut v = v_t.row(idx).into_owned();
        let scale = v.amax();
        let tol = T::lit(1e-9) * scale;
        if let Some(first) = v.iter().copied().find(|x| x.abs() > tol) {
            if first < T::zero() {
                v.neg_mut();
            }
        }
        basis.row_mut(row).copy_from(&v);
    }
    (basis, ratio)
}

/// Dynamically consistent generalized inverse `M⁻¹Jᵀ(J M⁻¹ Jᵀ)⁻¹`.
#[derive(Debug, Clone)]
pub struct ConsistentInverse<T: Real> {
    pub matrix: DMatrix<T>,
    /// True when damping had to be added to `J M⁻¹ Jᵀ`.
    pub regularized: bool,
}

pub fn dyn_consistent_inverse<T: Real>(
    jac: &DMatrix<T>,
    mass: &DMatrix<T>,
) -> Result<ConsistentInverse<T>, HierarchyError> {
    let chol = mass.clone().cholesky().ok_or(HierarchyError::NotPositiveDefinite)?;
    let minv_jt = chol.solve(&jac.transpose());
    let mut task_inv_inertia = jac * &minv_jt;
    let eig = SymmetricEigen::new(task_inv_inertia.clone());
    let hi = eig.eigenvalues.max().as_f64();
    let lo = eig.eigenvalues.min().as_f64();
    let regularized = !(hi > 0.0 && lo / hi >= NEAR_SINGULAR_RCOND);
    if regularized {
        warn!("J M⁻¹ Jᵀ near singular (eigenvalues {lo:.3e}..{hi:.3e}); applying damping");
        for i in 0..task_inv_inertia.nrows() {
            task_inv_inertia[(i, i)] += T::lit(DAMPING_LAMBDA_SQ);
        }
    }
    let inner = task_inv_inertia.cholesky().ok_or(HierarchyError::NotPositiveDefinite)?;
    // (J M⁻¹ Jᵀ)⁻¹ is symmetric, so the product can be formed as a solve.
    let matrix = inner.solve(&minv_jt.transpose()).transpose();
    Ok(ConsistentInverse { matrix, regularized })
}

/// Decoupled Jacobians, null-space bases and decoupled dynamics blocks.
#[derive(Debug, Clone)]
pub struct HierarchyDecomposition<T: Real> {
    pub j1: DMatrix<T>,
    pub j2: DMatrix<T>,
    /// `J̄1 = J1`.
    pub jbar1: DMatrix<T>,
    pub jbar2: DMatrix<T>,
    pub z1: DMatrix<T>,
    pub z2: DMatrix<T>,
    /// Stacked `[J̄1; J̄2]`.
    pub jbar: DMatrix<T>,
    /// `[Z1ᵀ Z2ᵀ]`, the inverse of `jbar`.
    pub jbar_inv: DMatrix<T>,
    pub lambda: DMatrix<T>,
    pub mu: DMatrix<T>,
    pub v1: DVector<T>,
    pub v2: DVector<T>,
    /// Joint-space inertia the decomposition was built on.
    pub mass: DMatrix<T>,
    /// Level-1 singular-value ratio `σ_6 / σ_1`.
    pub conditioning: f64,
    pub regularized: bool,
}

impl<T: Real> HierarchyDecomposition<T> {
    pub fn m1(&self) -> usize {
        self.j1.nrows()
    }

    pub fn lambda1(&self) -> DMatrix<T> {
        let m1 = self.m1();
        self.lambda.view((0, 0), (m1, m1)).into_owned()
    }

    pub fn lambda2(&self) -> DMatrix<T> {
        let m1 = self.m1();
        let m2 = self.lambda.nrows() - m1;
        self.lambda.view((m1, m1), (m2, m2)).into_owned()
    }

    pub fn mu11(&self) -> DMatrix<T> {
        let m1 = self.m1();
        self.mu.view((0, 0), (m1, m1)).into_owned()
    }

    pub fn mu12(&self) -> DMatrix<T> {
        let m1 = self.m1();
        let m2 = self.mu.ncols() - m1;
        self.mu.view((0, m1), (m1, m2)).into_owned()
    }

    pub fn mu21(&self) -> DMatrix<T> {
        let m1 = self.m1();
        let m2 = self.mu.nrows() - m1;
        self.mu.view((m1, 0), (m2, m1)).into_owned()
    }

    pub fn mu22(&self) -> DMatrix<T> {
        let m1 = self.m1();
        let m2 = self.mu.nrows() - m1;
        self.mu.view((m1, m1), (m2, m2)).into_owned()
    }
}

/// Builds the decomposition from the dynamic terms of one state.
///
/// `jbar_rate` is the time derivative of the stacked decoupled Jacobian; pass
/// `None` to treat it as zero. With `allow_singular` the rank check is skipped
/// and the smallest right singular vector is used as the null-space basis.
pub fn decompose<T: Real>(
    terms: &DynamicTerms<T>,
    state: &JointState<T>,
    jbar_rate: Option<&DMatrix<T>>,
    allow_singular: bool,
) -> Result<HierarchyDecomposition<T>, HierarchyError> {
    let n = state.q.len();
    let j1 = terms.jacobian.clone();
    let j2 = jacobian_secondary::<T>(n);
    let mass = &terms.mass;
    let (z2, conditioning) = null_basis_with_ratio(&j1);
    if conditioning < RANK_TOLERANCE && !allow_singular {
        return Err(HierarchyError::Singular {
            ratio: conditioning,
            configuration: state.q.iter().map(|v| v.as_f64()).collect(),
        });
    }
    let inv = dyn_consistent_inverse(&j1, mass)?;
    let z1 = inv.matrix.transpose();
    let null_inertia = &z2 * mass * z2.transpose();
    let null_chol = null_inertia.cholesky().ok_or(HierarchyError::NotPositiveDefinite)?;
    let jbar2 = null_chol.solve(&(&z2 * mass));

    let m1 = j1.nrows();
    let mut jbar = DMatrix::zeros(n, n);
    jbar.rows_mut(0, m1).copy_from(&j1);
    jbar.rows_mut(m1, n - m1).copy_from(&jbar2);
    let mut jbar_inv = DMatrix::zeros(n, n);
    jbar_inv.columns_mut(0, m1).copy_from(&z1.transpose());
    jbar_inv.columns_mut(m1, n - m1).copy_from(&z2.transpose());

    let lambda = jbar_inv.transpose() * mass * &jbar_inv;
    let mut mu_left = jbar_inv.transpose() * &terms.coriolis;
    if let Some(rate) = jbar_rate {
        mu_left -= &lambda * rate;
    }
    let mu = mu_left * &jbar_inv;
    let v1 = &j1 * &state.qd;
    let v2 = &jbar2 * &state.qd;
    Ok(HierarchyDecomposition {
        jbar1: j1.clone(),
        j1,
        j2,
        jbar2,
        z1,
        z2,
        jbar,
        jbar_inv,
        lambda,
        mu,
        v1,
        v2,
        mass: mass.clone(),
        conditioning,
        regularized: inv.regularized,
    })
}

/// Owns the previous-step `J̄` so its rate can be taken by backward
/// difference over the control period.
#[derive(Debug, Clone)]
pub struct Decoupler<T: Real> {
    dt: T,
    previous: Option<DMatrix<T>>,
}

impl<T: Real> Decoupler<T> {
    pub fn new(dt: T) -> Self {
        Self { dt, previous: None }
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    /// Decomposes `state`; the first call uses a zero `J̄` rate.
    pub fn decouple(
        &mut self,
        terms: &DynamicTerms<T>,
        state: &JointState<T>,
        allow_singular: bool,
    ) -> Result<HierarchyDecomposition<T>, HierarchyError> {
        let mut out = decompose(terms, state, None, allow_singular)?;
        if let Some(prev) = &self.previous {
            let rate = (&out.jbar - prev) / self.dt;
            out.mu -= &out.lambda * rate * &out.jbar_inv;
        }
        self.previous = Some(out.jbar.clone());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RobotModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = random_matrix(rng, n, n);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    /// Generalized cross product: entry k is (−1)^k times the minor with
    /// column k removed. Spans the null space of a 6×7 full-rank matrix.
    fn minors_null_vector(j: &DMatrix<f64>) -> DVector<f64> {
        let n = j.ncols();
        DVector::from_fn(n, |k, _| {
            let minor = j.clone().remove_column(k);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * minor.determinant()
        })
    }

    #[test]
    fn canonical_block_basis() {
        let mut j = DMatrix::<f64>::zeros(6, 7);
        for i in 0..6 {
            j[(i, i)] = 1.0;
        }
        let z = null_basis(&j).unwrap();
        let expected = DMatrix::from_row_slice(1, 7, &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((z - expected).amax() < 1e-15);
    }

    #[test]
    fn random_full_rank_basis_properties() {
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j = random_matrix(&mut rng, 6, 7);
            let z = null_basis(&j).unwrap();
            assert!((&j * z.transpose()).norm() < 1e-10);
            assert!((&z * z.transpose() - DMatrix::identity(1, 1)).norm() < 1e-10);
            // Same line as the cofactor vector, same sign convention.
            let mut oracle = minors_null_vector(&j);
            oracle.normalize_mut();
            let first = oracle.iter().copied().find(|v| v.abs() > 1e-9).unwrap();
            if first < 0.0 {
                oracle.neg_mut();
            }
            assert!((z.row(0).transpose() - oracle).norm() < 1e-9, "seed {seed}");
        }
    }

    #[test]
    fn zeroed_row_is_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut j = random_matrix(&mut rng, 6, 7);
        j.row_mut(2).fill(0.0);
        assert!(matches!(null_basis(&j), Err(HierarchyError::Singular { .. })));
    }

    #[test]
    fn identity_inertia_gives_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j = random_matrix(&mut rng, 6, 7);
        let inv = dyn_consistent_inverse(&j, &DMatrix::identity(7, 7)).unwrap();
        let pinv = j.clone().pseudo_inverse(1e-14).unwrap();
        assert!((inv.matrix - pinv).amax() < 1e-9);
        assert!(!inv.regularized);
    }

    #[test]
    fn consistent_inverse_is_right_inverse() {
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j = random_matrix(&mut rng, 6, 7);
            let m = random_spd(&mut rng, 7);
            let inv = dyn_consistent_inverse(&j, &m).unwrap();
            assert!(
                (&j * &inv.matrix - DMatrix::identity(6, 6)).amax() < 1e-9,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn square_case_is_plain_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = random_matrix(&mut rng, 6, 6);
        let m = random_spd(&mut rng, 6);
        let inv = dyn_consistent_inverse(&j, &m).unwrap();
        let plain = j.try_inverse().unwrap();
        assert!((inv.matrix - plain).amax() < 1e-8);
    }

    #[test]
    fn singular_task_inertia_is_damped() {
        let mut j = DMatrix::<f64>::zeros(6, 7);
        for i in 0..5 {
            j[(i, i)] = 1.0;
        }
        let inv = dyn_consistent_inverse(&j, &DMatrix::identity(7, 7)).unwrap();
        assert!(inv.regularized);
        assert!(inv.matrix.iter().all(|v| v.is_finite()));
    }

    fn random_state(rng: &mut ChaCha8Rng) -> JointState<f64> {
        JointState {
            q: DVector::from_fn(7, |_, _| rng.gen_range(-2.0..2.0)),
            qd: DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn decomposition_identities_on_random_states() {
        let model = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut checked = 0;
        while checked < 200 {
            let state = random_state(&mut rng);
            let terms = DynamicTerms::compute(&model, &state);
            let Ok(d) = decompose(&terms, &state, None, false) else {
                continue;
            };
            if d.conditioning < 1e-3 {
                continue;
            }
            checked += 1;
            let eye6 = DMatrix::<f64>::identity(6, 6);
            assert!((&d.j1 * d.z2.transpose()).norm() < 1e-9);
            assert!((&d.z1 * &d.mass * d.z2.transpose()).norm() < 1e-9);
            assert!((&d.z1 * d.jbar1.transpose() - eye6).norm() < 1e-9);
            assert!((&d.z2 * d.jbar2.transpose() - DMatrix::identity(1, 1)).norm() < 1e-9);
            assert!((&d.jbar * &d.jbar_inv - DMatrix::identity(7, 7)).norm() < 1e-9);
            let off = d.lambda.view((0, 6), (6, 1)).norm();
            assert!(off / d.lambda.norm() < 1e-8);
            assert!((&d.v1 - &d.j1 * &state.qd).norm() < 1e-15);
            let minv = d.mass.clone().try_inverse().unwrap();
            assert!((&d.jbar1 * &minv * d.jbar2.transpose()).norm() < 1e-9);
        }
    }

    #[test]
    fn basis_is_continuous_along_smooth_motion() {
        let model = RobotModel::<f64>::panda_like();
        let mut decoupler = Decoupler::new(1e-3);
        let mut previous: Option<DMatrix<f64>> = None;
        for k in 0..2000 {
            let t = k as f64 * 1e-3;
            let q = DVector::from_fn(7, |i, _| model.home[i] + 0.4 * (t * (1.0 + i as f64 * 0.3)).sin());
            let state = JointState::at_rest(q);
            let terms = DynamicTerms::compute(&model, &state);
            let d = decoupler.decouple(&terms, &state, false).unwrap();
            if let Some(prev) = &previous {
                assert!((&d.z2 - prev).amax() < 0.01, "step {k}");
            }
            previous = Some(d.z2.clone());
        }
    }

    #[test]
    fn first_decouple_uses_zero_rate() {
        let model = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = random_state(&mut rng);
        let terms = DynamicTerms::compute(&model, &state);
        let mut decoupler = Decoupler::new(1e-3);
        let a = decoupler.decouple(&terms, &state, true).unwrap();
        let b = decompose(&terms, &state, None, true).unwrap();
        assert_eq!(a.mu, b.mu);
        // Second call at the same configuration: J̄ unchanged, rate zero again.
        let c = decoupler.decouple(&terms, &state, true).unwrap();
        assert!((c.mu - b.mu).amax() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let j = DMatrix::<f32>::from_fn(6, 7, |r, c| if r == c { 1.0 } else { 0.1 * (r + c) as f32 });
        let z = null_basis(&j).unwrap();
        assert!((&j * z.transpose()).norm() < 1e-4);
    }
}
