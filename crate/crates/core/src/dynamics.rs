//! Serial-chain kinematics and rigid-body dynamics.
//!
//! Every joint is revolute. Joint `i` sits at `offset[i]` in the frame of the
//! previous joint and rotates about `axis[i]` expressed in that same frame, so
//! at `q = 0` all body frames are parallel to the base frame. The mass matrix
//! is assembled with the composite-rigid-body algorithm in base coordinates,
//! the Coriolis matrix from Christoffel symbols of analytic mass-matrix
//! partials, and gravity as the gradient of the potential energy.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Rotation3, SymmetricEigen, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Degrees of freedom of the scanning manipulator.
pub const ARM_DOF: usize = 7;

/// Largest integration step accepted by [`forward_dynamics_step`] (s).
pub const MAX_STEP: f64 = 0.005;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("robot must have {expected} joints, got {actual}")]
    JointCount { expected: usize, actual: usize },
    #[error("link {link}: mass must be positive, got {mass}")]
    NonPositiveMass { link: usize, mass: f64 },
    #[error("link {link}: rotational inertia must be symmetric positive definite")]
    InertiaNotSpd { link: usize },
    #[error("link {link}: joint axis has zero length")]
    ZeroAxis { link: usize },
    #[error("link {link}: non-finite parameter")]
    NonFinite { link: usize },
    #[error("home configuration has {actual} entries, expected {expected}")]
    HomeLength { expected: usize, actual: usize },
    #[error("reading robot file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing robot file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite {what} rejected")]
    NonFinite { what: &'static str },
    #[error("time step {0} s outside (0, {MAX_STEP}]")]
    InvalidStep(f64),
    #[error("{what} has length {actual}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("mass matrix is not positive definite")]
    MassNotPositiveDefinite,
}

/// On-disk description of one link and the joint that drives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    /// Joint rotation axis in the parent joint frame.
    pub axis: [f64; 3],
    /// Joint origin relative to the parent joint frame (m).
    pub offset: [f64; 3],
    /// Link mass (kg).
    pub mass: f64,
    /// Center of mass in the link frame (m).
    pub com: [f64; 3],
    /// Rotational inertia about the center of mass, link frame (kg·m²).
    pub inertia: [[f64; 3]; 3],
}

/// Fixed transform from the last joint frame to the end-effector frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolParams {
    pub offset: [f64; 3],
    /// Roll, pitch, yaw (rad).
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Default for ToolParams {
    fn default() -> Self {
        Self {
            offset: [0.0; 3],
            rpy: [0.0; 3],
        }
    }
}

/// Robot parameter file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    #[serde(default)]
    pub name: String,
    /// Gravity in the base frame (m/s²).
    pub gravity: [f64; 3],
    pub links: Vec<LinkParams>,
    #[serde(default)]
    pub tool: ToolParams,
    /// Nominal starting configuration (rad).
    #[serde(default)]
    pub home: Option<Vec<f64>>,
}

const PANDA_LIKE_JSON: &str = include_str!("../../../config/panda_like.json");

impl RobotParams {
    /// The bundled Panda-like 7-DOF parameter set.
    pub fn panda_like() -> Self {
        serde_json::from_str(PANDA_LIKE_JSON).expect("bundled robot file parses")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone)]
pub struct Link<T: Real> {
    pub axis: Unit<Vector3<T>>,
    pub offset: Vector3<T>,
    pub mass: T,
    pub com: Vector3<T>,
    pub inertia: Matrix3<T>,
}

/// Kinematic and inertial description of a serial revolute chain.
#[derive(Debug, Clone)]
pub struct RobotModel<T: Real> {
    pub links: Vec<Link<T>>,
    pub tool_offset: Vector3<T>,
    pub tool_rotation: Rotation3<T>,
    pub gravity: Vector3<T>,
    pub home: DVector<T>,
}

fn vec3<T: Real>(v: [f64; 3]) -> Vector3<T> {
    Vector3::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]))
}

impl<T: Real> RobotModel<T> {
    /// Builds a model of any joint count, validating inertial parameters.
    pub fn from_params(params: &RobotParams) -> Result<Self, ModelError> {
        let mut links = Vec::with_capacity(params.links.len());
        for (i, lp) in params.links.iter().enumerate() {
            let finite = lp.axis.iter().chain(&lp.offset).chain(&lp.com).all(|v| v.is_finite())
                && lp.mass.is_finite()
                && lp.inertia.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(ModelError::NonFinite { link: i });
            }
            if lp.mass <= 0.0 {
                return Err(ModelError::NonPositiveMass { link: i, mass: lp.mass });
            }
            let inertia = Matrix3::from_fn(|r, c| lp.inertia[r][c]);
            let symmetric = (inertia - inertia.transpose()).amax() <= 1e-12 * inertia.amax().max(1.0);
            let spd = symmetric && SymmetricEigen::new(inertia).eigenvalues.min() > 0.0;
            if !spd {
                return Err(ModelError::InertiaNotSpd { link: i });
            }
            let axis = vec3::<T>(lp.axis);
            if axis.norm() <= T::lit(1e-12) {
                return Err(ModelError::ZeroAxis { link: i });
            }
            links.push(Link {
                axis: Unit::new_normalize(axis),
                offset: vec3(lp.offset),
                mass: T::lit(lp.mass),
                com: vec3(lp.com),
                inertia: Matrix3::from_fn(|r, c| T::lit(lp.inertia[r][c])),
            });
        }
        let n = links.len();
        let home = match &params.home {
            Some(h) if h.len() != n => {
                return Err(ModelError::HomeLength {
                    expected: n,
                    actual: h.len(),
                })
            }
            Some(h) => DVector::from_iterator(n, h.iter().map(|v| T::lit(*v))),
            None => DVector::zeros(n),
        };
        let [r, p, y] = params.tool.rpy;
        Ok(Self {
            links,
            tool_offset: vec3(params.tool.offset),
            tool_rotation: Rotation3::from_euler_angles(T::lit(r), T::lit(p), T::lit(y)),
            gravity: vec3(params.gravity),
            home,
        })
    }

    /// Builds a model and additionally requires the 7-DOF arm layout.
    pub fn arm_from_params(params: &RobotParams) -> Result<Self, ModelError> {
        if params.links.len() != ARM_DOF {
            return Err(ModelError::JointCount {
                expected: ARM_DOF,
                actual: params.links.len(),
            });
        }
        Self::from_params(params)
    }

    pub fn panda_like() -> Self {
        Self::arm_from_params(&RobotParams::panda_like()).expect("bundled robot file is valid")
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }
}

/// Joint positions and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState<T: Real> {
    pub q: DVector<T>,
    pub qd: DVector<T>,
}

impl<T: Real> JointState<T> {
    pub fn at_rest(q: DVector<T>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite_value())
    }
}

/// End-effector pose in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub position: Vector3<T>,
    pub orientation: UnitQuaternion<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(position: Vector3<T>, orientation: UnitQuaternion<T>) -> Self {
        Self { position, orientation }
    }

    /// Six-vector error `self - desired`: translation difference stacked on
    /// the rotation vector of `R · R_dᵀ` (base frame).
    pub fn error_from(&self, desired: &Pose<T>) -> Vector6<T> {
        let dp = self.position - desired.position;
        let dr = (self.orientation * desired.orientation.inverse()).scaled_axis();
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }

    /// Unit z-axis of the pose frame in base coordinates.
    pub fn z_axis(&self) -> Vector3<T> {
        self.orientation * Vector3::z()
    }
}

/// Per-configuration kinematic quantities reused by every dynamics routine.
#[derive(Debug, Clone)]
pub struct Kinematics<T: Real> {
    /// Joint origins in the base frame.
    pub origins: Vec<Vector3<T>>,
    /// Joint axes in the base frame.
    pub axes: Vec<Vector3<T>>,
    /// Body orientations (body `i` is driven by joint `i`).
    pub rotations: Vec<Rotation3<T>>,
    /// Body centers of mass in the base frame.
    pub coms: Vec<Vector3<T>>,
    pub end_effector: Pose<T>,
}

impl<T: Real> Kinematics<T> {
    pub fn compute(model: &RobotModel<T>, q: &DVector<T>) -> Self {
        let n = model.dof();
        assert_eq!(q.len(), n, "configuration length must equal joint count");
        let mut origins = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut rotations = Vec::with_capacity(n);
        let mut coms = Vec::with_capacity(n);
        let mut rot = Rotation3::identity();
        let mut pos = Vector3::zeros();
        for (link, &angle) in model.links.iter().zip(q.iter()) {
            pos += rot * link.offset;
            let axis = rot * link.axis.into_inner();
            rot *= Rotation3::from_axis_angle(&link.axis, angle);
            origins.push(pos);
            axes.push(axis);
            coms.push(pos + rot * link.com);
            rotations.push(rot);
        }
        let ee_pos = pos + rot * model.tool_offset;
        let ee_rot = rot * model.tool_rotation;
        Self {
            origins,
            axes,
            rotations,
            coms,
            end_effector: Pose::new(ee_pos, UnitQuaternion::from_rotation_matrix(&ee_rot)),
        }
    }

    /// Plücker motion axis of joint `i` at the base origin, ordered (ω; v).
    fn motion_axis(&self, i: usize) -> Vector6<T> {
        let a = self.axes[i];
        let v = self.origins[i].cross(&a);
        Vector6::new(a.x, a.y, a.z, v.x, v.y, v.z)
    }

    /// Spatial inertia of body `i` about the base origin.
    fn spatial_inertia(&self, model: &RobotModel<T>, i: usize) -> Matrix6<T> {
        let link = &model.links[i];
        let r = self.rotations[i].matrix();
        let ic = r * link.inertia * r.transpose();
        let cx = self.coms[i].cross_matrix();
        let m = link.mass;
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(ic + cx * cx.transpose() * m));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cx * m));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cx.transpose() * m));
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
        out
    }
}

fn motion_cross<T: Real>(s: &Vector6<T>) -> Matrix6<T> {
    let w = Vector3::new(s[0], s[1], s[2]).cross_matrix();
    let v = Vector3::new(s[3], s[4], s[5]).cross_matrix();
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&v);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    out
}

pub fn forward_kinematics<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> Pose<T> {
    Kinematics::compute(model, q).end_effector
}

/// Geometric Jacobian of the end-effector (linear rows first, then angular),
/// both in the base frame.
pub fn jacobian_main<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> DMatrix<T> {
    jacobian_from(&Kinematics::compute(model, q))
}

pub fn jacobian_from<T: Real>(kin: &Kinematics<T>) -> DMatrix<T> {
    let n = kin.axes.len();
    let tip = kin.end_effector.position;
    let mut jac = DMatrix::zeros(6, n);
    for i in 0..n {
        let a = kin.axes[i];
        let lin = a.cross(&(tip - kin.origins[i]));
        for r in 0..3 {
            jac[(r, i)] = lin[r];
            jac[(r + 3, i)] = a[r];
        }
    }
    jac
}

/// Selector of joint 1: the secondary task coordinate is `q[0]`.
pub fn jacobian_secondary<T: Real>(dof: usize) -> DMatrix<T> {
    let mut row = DMatrix::zeros(1, dof);
    row[(0, 0)] = T::one();
    row
}

/// Composite inertias `IC_i = Σ_{b ≥ i} I_b` and joint motion axes.
struct Composite<T: Real> {
    axes: Vec<Vector6<T>>,
    composite: Vec<Matrix6<T>>,
}

impl<T: Real> Composite<T> {
    fn new(model: &RobotModel<T>, kin: &Kinematics<T>) -> Self {
        let n = model.dof();
        let axes: Vec<_> = (0..n).map(|i| kin.motion_axis(i)).collect();
        let mut composite = vec![Matrix6::zeros(); n];
        let mut acc = Matrix6::zeros();
        for i in (0..n).rev() {
            acc += kin.spatial_inertia(model, i);
            composite[i] = acc;
        }
        Self { axes, composite }
    }
}

pub fn mass_matrix<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> DMatrix<T> {
    mass_matrix_from(model, &Kinematics::compute(model, q))
}

pub fn mass_matrix_from<T: Real>(model: &RobotModel<T>, kin: &Kinematics<T>) -> DMatrix<T> {
    let n = model.dof();
    let crb = Composite::new(model, kin);
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let force = crb.composite[j] * crb.axes[j];
        for i in 0..=j {
            let v = crb.axes[i].dot(&force);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Analytic partials `∂M/∂q_k` for every joint `k`.
pub fn mass_matrix_partials<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> Vec<DMatrix<T>> {
    mass_matrix_partials_from(model, &Kinematics::compute(model, q))
}

pub fn mass_matrix_partials_from<T: Real>(model: &RobotModel<T>, kin: &Kinematics<T>) -> Vec<DMatrix<T>> {
    let n = model.dof();
    let crb = Composite::new(model, kin);
    let crm: Vec<Matrix6<T>> = crb.axes.iter().map(motion_cross).collect();
    let mut out = Vec::with_capacity(n);
    for (k, crm_k) in crm.iter().enumerate() {
        // ∂s_i/∂q_k is nonzero only for joints distal to k.
        let ds: Vec<Vector6<T>> = (0..n)
            .map(|i| if k < i { crm_k * crb.axes[i] } else { Vector6::zeros() })
            .collect();
        let mut dm = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let l = j;
                let ic = &crb.composite[l];
                let lk = l.max(k);
                let icl = &crb.composite[lk];
                // ∂IC_l/∂q_k = crf(s_k)·IC − IC·crm(s_k), crf = −crmᵀ
                let dic = -(crm_k.transpose() * icl) - icl * crm_k;
                let v = ds[i].dot(&(ic * crb.axes[j]))
                    + crb.axes[i].dot(&(dic * crb.axes[j]))
                    + crb.axes[i].dot(&(ic * ds[j]));
                dm[(i, j)] = v;
                dm[(j, i)] = v;
            }
        }
        out.push(dm);
    }
    out
}

/// Coriolis matrix from Christoffel symbols of the first kind, so that
/// `Ṁ − 2C` is skew-symmetric.
pub fn coriolis_matrix<T: Real>(model: &RobotModel<T>, q: &DVector<T>, qd: &DVector<T>) -> DMatrix<T> {
    coriolis_from_partials(&mass_matrix_partials(model, q), qd)
}

pub fn coriolis_from_partials<T: Real>(partials: &[DMatrix<T>], qd: &DVector<T>) -> DMatrix<T> {
    let n = qd.len();
    let half = T::lit(0.5);
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            let mut acc = T::zero();
            for i in 0..n {
                let gamma = partials[i][(k, j)] + partials[j][(k, i)] - partials[k][(i, j)];
                acc += gamma * qd[i];
            }
            c[(k, j)] = acc * half;
        }
    }
    c
}

/// `Ṁ = Σ_k ∂M/∂q_k · q̇_k`.
pub fn mass_matrix_rate<T: Real>(partials: &[DMatrix<T>], qd: &DVector<T>) -> DMatrix<T> {
    let n = qd.len();
    let mut out = DMatrix::zeros(n, n);
    for (dm, &v) in partials.iter().zip(qd.iter()) {
        out += dm * v;
    }
    out
}

pub fn gravity_vector<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> DVector<T> {
    gravity_from(model, &Kinematics::compute(model, q))
}

/// Gradient of `U = −Σ m_b gᵀ c_b` with respect to the joint angles.
pub fn gravity_from<T: Real>(model: &RobotModel<T>, kin: &Kinematics<T>) -> DVector<T> {
    let n = model.dof();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let mut acc = T::zero();
        for b in i..n {
            let dc = kin.axes[i].cross(&(kin.coms[b] - kin.origins[i]));
            acc -= model.links[b].mass * model.gravity.dot(&dc);
        }
        g[i] = acc;
    }
    g
}

/// Potential energy relative to the base origin (J).
pub fn potential_energy<T: Real>(model: &RobotModel<T>, q: &DVector<T>) -> T {
    let kin = Kinematics::compute(model, q);
    model
        .links
        .iter()
        .zip(&kin.coms)
        .fold(T::zero(), |acc, (l, c)| acc - l.mass * model.gravity.dot(c))
}

/// All dynamic terms of one configuration, computed together.
#[derive(Debug, Clone)]
pub struct DynamicTerms<T: Real> {
    pub kinematics: Kinematics<T>,
    pub jacobian: DMatrix<T>,
    pub mass: DMatrix<T>,
    pub coriolis: DMatrix<T>,
    pub gravity: DVector<T>,
}

impl<T: Real> DynamicTerms<T> {
    pub fn compute(model: &RobotModel<T>, state: &JointState<T>) -> Self {
        let kinematics = Kinematics::compute(model, &state.q);
        let jacobian = jacobian_from(&kinematics);
        let mass = mass_matrix_from(model, &kinematics);
        let partials = mass_matrix_partials_from(model, &kinematics);
        let coriolis = coriolis_from_partials(&partials, &state.qd);
        let gravity = gravity_from(model, &kinematics);
        Self {
            kinematics,
            jacobian,
            mass,
            coriolis,
            gravity,
        }
    }
}

fn check_len<T: Real>(what: &'static str, v: &DVector<T>, n: usize) -> Result<(), DynamicsError> {
    if v.len() != n {
        return Err(DynamicsError::Dimension {
            what,
            expected: n,
            actual: v.len(),
        });
    }
    if !v.iter().all(|x| x.is_finite_value()) {
        return Err(DynamicsError::NonFinite { what });
    }
    Ok(())
}

/// Joint accelerations `M⁻¹(τ + τ_e − C q̇ − g)`.
pub fn joint_acceleration<T: Real>(
    terms: &DynamicTerms<T>,
    state: &JointState<T>,
    tau: &DVector<T>,
    tau_e: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    let rhs = tau + tau_e - &terms.coriolis * &state.qd - &terms.gravity;
    let chol = terms
        .mass
        .clone()
        .cholesky()
        .ok_or(DynamicsError::MassNotPositiveDefinite)?;
    Ok(chol.solve(&rhs))
}

/// One semi-implicit Euler step: velocities first, then positions.
pub fn forward_dynamics_step<T: Real>(
    model: &RobotModel<T>,
    state: &JointState<T>,
    tau: &DVector<T>,
    tau_e: &DVector<T>,
    dt: T,
) -> Result<JointState<T>, DynamicsError> {
    let terms = DynamicTerms::compute(model, state);
    step_with_terms(&terms, state, tau, tau_e, dt)
}

/// Same as [`forward_dynamics_step`] with precomputed terms for `state`.
pub fn step_with_terms<T: Real>(
    terms: &DynamicTerms<T>,
    state: &JointState<T>,
    tau: &DVector<T>,
    tau_e: &DVector<T>,
    dt: T,
) -> Result<JointState<T>, DynamicsError> {
    let n = state.q.len();
    let dt_f = dt.as_f64();
    if !(dt_f > 0.0 && dt_f <= MAX_STEP) {
        return Err(DynamicsError::InvalidStep(dt_f));
    }
    check_len("joint positions", &state.q, n)?;
    check_len("joint velocities", &state.qd, n)?;
    check_len("control torque", tau, n)?;
    check_len("external torque", tau_e, n)?;
    let qdd = joint_acceleration(terms, state, tau, tau_e)?;
    let qd = &state.qd + qdd * dt;
    let q = &state.q + &qd * dt;
    Ok(JointState { q, qd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_q(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn bundled_arm_is_seven_dof() {
        let m = RobotModel::<f64>::panda_like();
        assert_eq!(m.dof(), ARM_DOF);
        assert!(m.links.iter().all(|l| l.mass > 0.0));
    }

    #[test]
    fn rejects_bad_links() {
        let mut p = RobotParams::panda_like();
        p.links[2].mass = 0.0;
        assert!(matches!(
            RobotModel::<f64>::from_params(&p),
            Err(ModelError::NonPositiveMass { link: 2, .. })
        ));
        let mut p = RobotParams::panda_like();
        p.links[4].inertia = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(
            RobotModel::<f64>::from_params(&p),
            Err(ModelError::InertiaNotSpd { link: 4 })
        ));
        let mut p = RobotParams::panda_like();
        p.links.pop();
        assert!(matches!(
            RobotModel::<f64>::arm_from_params(&p),
            Err(ModelError::JointCount { .. })
        ));
        let bad = r#"{"gravity":[0,0,-9.81],"links":[],"colour":1}"#;
        assert!(RobotParams::from_json(bad).is_err());
    }

    #[test]
    fn zero_configuration_composes_offsets() {
        let m = RobotModel::<f64>::panda_like();
        let q = DVector::zeros(7);
        let pose = forward_kinematics(&m, &q);
        let mut expected = m.tool_offset;
        for l in &m.links {
            expected += l.offset;
        }
        assert!((pose.position - expected).norm() < 1e-12);
        let expected_rot = UnitQuaternion::from_rotation_matrix(&m.tool_rotation);
        assert!(pose.orientation.angle_to(&expected_rot) < 1e-12);
    }

    #[test]
    fn half_turn_of_base_negates_planar_tip() {
        let m = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_q(&mut rng, 7);
        let mut q2 = q.clone();
        q2[0] += std::f64::consts::PI;
        let a = forward_kinematics(&m, &q).position;
        let b = forward_kinematics(&m, &q2).position;
        assert!((a.x + b.x).abs() < 1e-12 && (a.y + b.y).abs() < 1e-12);
        assert!((a.z - b.z).abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-7;
        for _ in 0..100 {
            let q = random_q(&mut rng, 7);
            let jac = jacobian_main(&m, &q);
            let base = forward_kinematics(&m, &q);
            for k in 0..7 {
                let mut qe = q.clone();
                qe[k] += eps;
                let moved = forward_kinematics(&m, &qe);
                let fd = (moved.position - base.position) / eps;
                let col = jac.fixed_view::<3, 1>(0, k).into_owned();
                assert!((fd - col).norm() < 1e-5);
                let drot = (moved.orientation * base.orientation.inverse()).scaled_axis() / eps;
                let wcol = jac.fixed_view::<3, 1>(3, k).into_owned();
                assert!((drot - wcol).norm() < 1e-5);
            }
        }
        assert_eq!(&jac_zero_velocity(&m), &DVector::zeros(6));
    }

    fn jac_zero_velocity(m: &RobotModel<f64>) -> DVector<f64> {
        jacobian_main(m, &m.home) * DVector::zeros(7)
    }

    #[test]
    fn secondary_jacobian_selects_joint_one() {
        let j2 = jacobian_secondary::<f64>(7);
        assert_eq!(
            j2.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        let qd = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.1, 0.0, 5.0, -2.0]);
        assert_eq!((&j2 * &qd)[0], 0.3);
    }

    #[test]
    fn mass_matrix_symmetric_positive_definite() {
        let m = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = random_q(&mut rng, 7);
            let mm = mass_matrix(&m, &q);
            assert!((&mm - mm.transpose()).amax() < 1e-10);
            assert!(SymmetricEigen::new(mm).eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn mass_matrix_equals_jacobian_energy_sum() {
        // M = Σ_b m_b J_vbᵀ J_vb + J_ωbᵀ I_b J_ωb, evaluated link by link.
        let m = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let q = random_q(&mut rng, 7);
            let kin = Kinematics::compute(&m, &q);
            let mut expected = DMatrix::<f64>::zeros(7, 7);
            for b in 0..7 {
                let mut jv = DMatrix::<f64>::zeros(3, 7);
                let mut jw = DMatrix::<f64>::zeros(3, 7);
                for i in 0..=b {
                    let lin = kin.axes[i].cross(&(kin.coms[b] - kin.origins[i]));
                    for r in 0..3 {
                        jv[(r, i)] = lin[r];
                        jw[(r, i)] = kin.axes[i][r];
                    }
                }
                let rot = kin.rotations[b].matrix();
                let inertia = rot * m.links[b].inertia * rot.transpose();
                let inertia = DMatrix::from_fn(3, 3, |r, c| inertia[(r, c)]);
                expected += jv.transpose() * &jv * m.links[b].mass + jw.transpose() * inertia * &jw;
            }
            assert!((mass_matrix(&m, &q) - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn partials_match_central_differences() {
        let m = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = random_q(&mut rng, 7);
        let partials = mass_matrix_partials(&m, &q);
        let h = 1e-6;
        for k in 0..7 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let fd = (mass_matrix(&m, &qp) - mass_matrix(&m, &qm)) / (2.0 * h);
            assert!((&partials[k] - fd).amax() < 1e-7, "joint {k}");
        }
    }

    #[test]
    fn mdot_minus_two_c_is_skew() {
        let m = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let q = random_q(&mut rng, 7);
            let qd = random_q(&mut rng, 7);
            let partials = mass_matrix_partials(&m, &q);
            let n = mass_matrix_rate(&partials, &qd) - coriolis_from_partials(&partials, &qd) * 2.0;
            assert!((&n + n.transpose()).amax() < 1e-10);
        }
    }

    #[test]
    fn gravity_matches_potential_gradient() {
        let m = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = random_q(&mut rng, 7);
        let g = gravity_vector(&m, &q);
        let h = 1e-6;
        for k in 0..7 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let fd = (potential_energy(&m, &qp) - potential_energy(&m, &qm)) / (2.0 * h);
            assert!((g[k] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn gravity_compensation_is_an_equilibrium() {
        let m = RobotModel::<f64>::panda_like();
        let state = JointState::at_rest(m.home.clone());
        let g = gravity_vector(&m, &state.q);
        let next = forward_dynamics_step(&m, &state, &g, &DVector::zeros(7), 1e-3).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn power_balance_holds() {
        let m = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let state = JointState {
                q: random_q(&mut rng, 7),
                qd: random_q(&mut rng, 7),
            };
            let tau = random_q(&mut rng, 7) * 5.0;
            let tau_e = random_q(&mut rng, 7);
            let terms = DynamicTerms::compute(&m, &state);
            let qdd = joint_acceleration(&terms, &state, &tau, &tau_e).unwrap();
            let partials = mass_matrix_partials(&m, &state.q);
            let mdot = mass_matrix_rate(&partials, &state.qd);
            let kinetic_rate = state.qd.dot(&(&terms.mass * &qdd)) + 0.5 * state.qd.dot(&(mdot * &state.qd));
            let supplied = state.qd.dot(&(&tau + &tau_e - &terms.gravity));
            assert!((kinetic_rate - supplied).abs() < 1e-6);
        }
    }

    #[test]
    fn step_rejects_bad_input() {
        let m = RobotModel::<f64>::panda_like();
        let state = JointState::at_rest(m.home.clone());
        let mut tau = DVector::zeros(7);
        tau[3] = f64::NAN;
        assert_eq!(
            forward_dynamics_step(&m, &state, &tau, &DVector::zeros(7), 1e-3),
            Err(DynamicsError::NonFinite { what: "control torque" })
        );
        let zero = DVector::zeros(7);
        assert_eq!(
            forward_dynamics_step(&m, &state, &zero, &zero, 0.01),
            Err(DynamicsError::InvalidStep(0.01))
        );
        assert!(forward_dynamics_step(&m, &state, &zero, &zero, 0.0).is_err());
    }

    #[test]
    fn deterministic_outputs() {
        let m = RobotModel::<f64>::panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let state = JointState {
            q: random_q(&mut rng, 7),
            qd: random_q(&mut rng, 7),
        };
        let a = DynamicTerms::compute(&m, &state);
        let b = DynamicTerms::compute(&m, &state);
        assert_eq!(a.mass, b.mass);
        assert_eq!(a.coriolis, b.coriolis);
        assert_eq!(a.gravity, b.gravity);
    }
}
