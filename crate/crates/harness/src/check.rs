//! Algebraic property suite behind `intentctl check`.

use std::fmt;

use intentctl_core::controller::{compensation_torque, task1_acceleration_of};
use intentctl_core::dynamics::{
    coriolis_matrix, forward_kinematics, jacobian_main, mass_matrix, DynamicTerms, JointState, Pose, RobotModel,
};
use intentctl_core::hierarchy::{decompose, HierarchyDecomposition};
use intentctl_core::intent::{basic_b, compute_factors, FactorParams, PerceptionSnapshot};
use intentctl_core::minjerk::minjerk_generate;
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn random_state(rng: &mut ChaCha8Rng) -> JointState<f64> {
    JointState {
        q: DVector::from_fn(7, |_, _| rng.gen_range(-2.5..2.5)),
        qd: DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0)),
    }
}

/// Well-conditioned random decompositions of the bundled arm.
pub fn random_decompositions(count: usize, seed: u64) -> Vec<(JointState<f64>, HierarchyDecomposition<f64>)> {
    let model = RobotModel::<f64>::panda_like();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let state = random_state(&mut rng);
        let terms = DynamicTerms::compute(&model, &state);
        if let Ok(d) = decompose(&terms, &state, None, false) {
            if d.conditioning >= 1e-3 {
                out.push((state, d));
            }
        }
    }
    out
}

/// Largest residual of each hierarchy identity over the given decompositions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdentityResiduals {
    pub j1_z2: f64,
    pub z1_m_z2: f64,
    pub z1_jbar1: f64,
    pub z2_jbar2: f64,
    pub lambda_off: f64,
    pub jbar_inverse: f64,
}

impl IdentityResiduals {
    pub fn within_bounds(&self) -> bool {
        self.j1_z2 < 1e-9
            && self.z1_m_z2 < 1e-9
            && self.z1_jbar1 < 1e-9
            && self.z2_jbar2 < 1e-9
            && self.lambda_off < 1e-8
            && self.jbar_inverse < 1e-9
    }
}

impl fmt::Display for IdentityResiduals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "J1Z2ᵀ {:.1e}, Z1MZ2ᵀ {:.1e}, Z1J̄1ᵀ−I {:.1e}, Z2J̄2ᵀ−I {:.1e}, Λ off {:.1e}, J̄J̄⁻¹−I {:.1e}",
            self.j1_z2, self.z1_m_z2, self.z1_jbar1, self.z2_jbar2, self.lambda_off, self.jbar_inverse
        )
    }
}

pub fn identity_residuals(decomps: &[(JointState<f64>, HierarchyDecomposition<f64>)]) -> IdentityResiduals {
    let mut r = IdentityResiduals::default();
    for (_, d) in decomps {
        let m1 = d.m1();
        let m2 = d.jbar.nrows() - m1;
        r.j1_z2 = r.j1_z2.max((&d.j1 * d.z2.transpose()).norm());
        r.z1_m_z2 = r.z1_m_z2.max((&d.z1 * &d.mass * d.z2.transpose()).norm());
        r.z1_jbar1 = r
            .z1_jbar1
            .max((&d.z1 * d.jbar1.transpose() - DMatrix::identity(m1, m1)).norm());
        r.z2_jbar2 = r
            .z2_jbar2
            .max((&d.z2 * d.jbar2.transpose() - DMatrix::identity(m2, m2)).norm());
        let off = d.lambda.view((0, m1), (m1, m2)).norm() + d.lambda.view((m1, 0), (m2, m1)).norm();
        r.lambda_off = r.lambda_off.max(off / d.lambda.norm());
        let n = d.jbar.nrows();
        r.jbar_inverse = r
            .jbar_inverse
            .max((&d.jbar * &d.jbar_inv - DMatrix::identity(n, n)).norm());
    }
    r
}

fn check_hierarchy() -> CheckOutcome {
    let r = identity_residuals(&random_decompositions(1000, 1));
    outcome("hierarchy identities (1000 states)", r.within_bounds(), r.to_string())
}

fn check_compensation_power() -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for (state, d) in random_decompositions(200, 2) {
        let tau_d = compensation_torque(&d);
        let scale = tau_d.norm() * state.qd.norm();
        if scale > 0.0 {
            worst = worst.max(tau_d.dot(&state.qd).abs() / scale);
        }
    }
    outcome(
        "coupling compensation is powerless",
        worst < 1e-10,
        format!("max |τ_dᵀq̇|/(‖τ_d‖‖q̇‖) {worst:.1e}"),
    )
}

fn check_transparency() -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for (_, d) in random_decompositions(200, 3) {
        let f: f64 = rng.gen_range(-5.0..5.0);
        let tau2: DVector<f64> = d.jbar2.row(0).transpose() * f;
        let acc = task1_acceleration_of(&d, &tau2);
        worst = worst.max(acc.norm() / tau2.norm());
    }
    outcome(
        "level-2 torque is task-1 transparent",
        worst < 1e-9,
        format!("max ‖J̄1M⁻¹τ2‖/‖τ2‖ {worst:.1e}"),
    )
}

fn check_skew() -> CheckOutcome {
    let model = RobotModel::<f64>::panda_like();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s = random_state(&mut rng);
        let h = 1e-6;
        let m_dot = (mass_matrix(&model, &(&s.q + &s.qd * h)) - mass_matrix(&model, &(&s.q - &s.qd * h))) / (2.0 * h);
        let n = m_dot - coriolis_matrix(&model, &s.q, &s.qd) * 2.0;
        worst = worst.max((&n + n.transpose()).amax());
    }
    outcome(
        "Ṁ − 2C skew-symmetric",
        worst < 1e-8,
        format!("max symmetric part {worst:.1e}"),
    )
}

fn check_jacobian() -> CheckOutcome {
    let model = RobotModel::<f64>::panda_like();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let eps = 1e-7;
    for _ in 0..100 {
        let q = random_state(&mut rng).q;
        let j = jacobian_main(&model, &q);
        let p0 = forward_kinematics(&model, &q).position;
        for k in 0..7 {
            let mut qk = q.clone();
            qk[k] += eps;
            let fd = (forward_kinematics(&model, &qk).position - p0) / eps;
            worst = worst.max((fd - j.fixed_view::<3, 1>(0, k)).norm());
        }
    }
    outcome(
        "Jacobian matches finite differences",
        worst < 1e-5,
        format!("max column error {worst:.1e}"),
    )
}

fn check_factor_math() -> CheckOutcome {
    let exact = basic_b(0.0f64) == 1.0 && basic_b(1.0f64) == 0.5 && basic_b(-0.3f64) == 1.0;
    let grid: Vec<f64> = (0..10_000).map(|i| -1.0 + 5.0 * i as f64 / 9_999.0).collect();
    let monotone = grid.windows(2).all(|w| basic_b(w[1]) <= basic_b(w[0]));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = FactorParams::default();
    let mut in_range = true;
    for _ in 0..2000 {
        let j1 = DMatrix::from_fn(6, 7, |_, _| rng.gen_range(-1.0..1.0));
        let snapshot = PerceptionSnapshot {
            d_h: rng.gen_range(-0.5..2.0),
            d_b: rng.gen_range(-0.5..3.0),
            d_p: Vector3::from_fn(|_, _| rng.gen_range(-0.3..0.3)),
            f_z_e: rng.gen_range(-30.0..60.0),
            tau_e: DVector::from_fn(7, |_, _| rng.gen_range(-20.0..20.0)),
            f_1e: Vector6::from_fn(|_, _| rng.gen_range(-30.0..30.0)),
        };
        let f = compute_factors(&snapshot, &params, &j1);
        in_range &= f.as_array().iter().all(|a| (0.0..=1.0).contains(a));
    }
    outcome(
        "weighting factor math",
        exact && monotone && in_range,
        format!("exact points {exact}, monotone on 10⁴ grid {monotone}, factors in [0,1] {in_range}"),
    )
}

fn check_minjerk() -> CheckOutcome {
    let start: Pose<f64> = Pose::new(Vector3::new(0.3, -0.1, 0.5), UnitQuaternion::identity());
    let goal = Pose::new(
        Vector3::new(0.5, 0.1, 0.4),
        UnitQuaternion::from_euler_angles(0.2, -0.1, 0.4),
    );
    let seg = minjerk_generate(start, goal, 2.0);
    let (a, b) = (seg.sample(0.0), seg.sample(2.0));
    let pos = (a.pose.position - start.position)
        .norm()
        .max((b.pose.position - goal.position).norm());
    let rates = a
        .velocity
        .norm()
        .max(b.velocity.norm())
        .max(a.acceleration.norm())
        .max(b.acceleration.norm());
    outcome(
        "min-jerk boundary conditions",
        pos < 1e-12 && rates < 1e-9,
        format!("endpoint position {pos:.1e} m, endpoint rates {rates:.1e}"),
    )
}

/// Runs every property check.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        check_hierarchy(),
        check_compensation_power(),
        check_transparency(),
        check_skew(),
        check_jacobian(),
        check_factor_math(),
        check_minjerk(),
    ]
}
