//! Unified compliance controller: gravity compensation, inertial coupling
//! compensation, per-level impedance torques and factor-scheduled stiffness.

use log::warn;
use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{JointState, Pose};
use crate::hierarchy::HierarchyDecomposition;
use crate::intent::Factors;
use crate::scalar::Real;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ControlError {
    #[error("non-finite {component} torque")]
    NonFinite { component: &'static str },
}

/// Maximum stiffness constants reached when every factor is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StiffnessGains {
    /// Translational stiffness (N/m), applied to x, y, z.
    pub k1_translational: f64,
    /// Rotational stiffness (N·m/rad).
    pub k1_rotational: f64,
    /// Joint-1 stiffness (N·m/rad).
    pub k2: f64,
}

impl Default for StiffnessGains {
    fn default() -> Self {
        Self {
            k1_translational: 3000.0,
            k1_rotational: 30.0,
            k2: 10.0,
        }
    }
}

impl StiffnessGains {
    pub fn k1g<T: Real>(&self) -> Vector6<T> {
        let t = T::lit(self.k1_translational);
        let r = T::lit(self.k1_rotational);
        Vector6::new(t, t, t, r, r, r)
    }
}

/// Diagonal impedance of both levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceParams<T: Real> {
    pub k1: Vector6<T>,
    pub d1: Vector6<T>,
    pub k2: T,
    pub d2: T,
}

/// `d = 2√k` per diagonal entry.
pub fn critical_damping<T: Real>(k: T) -> T {
    T::lit(2.0) * k.max(T::zero()).sqrt()
}

impl<T: Real> ImpedanceParams<T> {
    pub fn critically_damped(k1: Vector6<T>, k2: T) -> Self {
        Self {
            d1: k1.map(critical_damping),
            k1,
            d2: critical_damping(k2),
            k2,
        }
    }

    pub fn full(gains: &StiffnessGains) -> Self {
        Self::critically_damped(gains.k1g(), T::lit(gains.k2))
    }
}

/// Level-1 stiffness `(1−a_h)(1−a_f)(1−a_p)K1g`, level-2 stiffness
/// `(1−a_h)(1−a_n)K2g`, both critically damped.
pub fn schedule_stiffness<T: Real>(factors: &Factors<T>, gains: &StiffnessGains) -> ImpedanceParams<T> {
    let mut f = *factors;
    if f.clamp_unit() {
        warn!("stiffness schedule received a factor outside [0, 1]; clamped");
    }
    let one = T::one();
    let s1 = (one - f.a_h) * (one - f.a_f) * (one - f.a_p);
    let s2 = (one - f.a_h) * (one - f.a_n);
    ImpedanceParams::critically_damped(gains.k1g::<T>() * s1, T::lit(gains.k2) * s2)
}

/// Desired values for both task levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskTargets<T: Real> {
    pub x1d: Pose<T>,
    pub xd1d: Vector6<T>,
    pub xdd1d: Vector6<T>,
    /// Joint-1 target (rad).
    pub x2d: T,
    /// Tracking form of the level-1 law (Recovery only).
    pub tracking: bool,
}

impl<T: Real> TaskTargets<T> {
    pub fn regulation(x1d: Pose<T>, x2d: T) -> Self {
        Self {
            x1d,
            xd1d: Vector6::zeros(),
            xdd1d: Vector6::zeros(),
            x2d,
            tracking: false,
        }
    }
}

/// Torque and its components, retained for logging.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCommand<T: Real> {
    pub tau: DVector<T>,
    pub tau_g: DVector<T>,
    pub tau_d: DVector<T>,
    pub tau_1: DVector<T>,
    pub tau_2: DVector<T>,
    /// External torque that was subtracted, when compensation is enabled.
    pub tau_e_compensated: Option<DVector<T>>,
}

/// Coupling compensation `J̄1ᵀμ12 v2 + J̄2ᵀμ21 v1`.
///
/// `μ21` is taken as `−μ12ᵀ`, the identity that holds for the exact
/// decoupled Coriolis matrix; with it `τ_dᵀq̇ = v1ᵀμ12v2 − v2ᵀμ12ᵀv1 = 0`
/// no matter how `J̄̇` was approximated.
pub fn compensation_torque<T: Real>(decomp: &HierarchyDecomposition<T>) -> DVector<T> {
    let mu12 = decomp.mu12();
    let first = decomp.jbar1.transpose() * (&mu12 * &decomp.v2);
    let second = decomp.jbar2.transpose() * (mu12.transpose() * &decomp.v1);
    first - second
}

/// Same term using the `μ21` block as computed, without the skew identity.
pub fn compensation_torque_unprojected<T: Real>(decomp: &HierarchyDecomposition<T>) -> DVector<T> {
    decomp.jbar1.transpose() * (decomp.mu12() * &decomp.v2) + decomp.jbar2.transpose() * (decomp.mu21() * &decomp.v1)
}

/// Level-1 and level-2 impedance torques.
pub fn task_torques<T: Real>(
    decomp: &HierarchyDecomposition<T>,
    targets: &TaskTargets<T>,
    params: &ImpedanceParams<T>,
    pose: &Pose<T>,
    state: &JointState<T>,
) -> (DVector<T>, DVector<T>) {
    let err1 = pose.error_from(&targets.x1d);
    let xd1 = Vector6::from_column_slice(decomp.v1.as_slice());
    let wrench = if targets.tracking {
        targets.xdd1d - params.k1.component_mul(&err1) - params.d1.component_mul(&(xd1 - targets.xd1d))
    } else {
        -params.k1.component_mul(&err1) - params.d1.component_mul(&xd1)
    };
    let tau1 = decomp.jbar1.transpose() * DVector::from_column_slice(wrench.as_slice());

    let err2 = state.q[0] - targets.x2d;
    let xd2 = (&decomp.j2 * &state.qd)[0];
    let force2 = -params.k2 * err2 - params.d2 * xd2;
    let z2_j2t = (&decomp.z2 * decomp.j2.transpose())[(0, 0)];
    let tau2 = decomp.jbar2.transpose() * DVector::from_element(1, z2_j2t * force2);
    (tau1, tau2)
}

/// Inputs that are not part of the decomposition.
#[derive(Debug, Clone)]
pub struct ControlInputs<'a, T: Real> {
    pub targets: &'a TaskTargets<T>,
    pub params: &'a ImpedanceParams<T>,
    pub pose: &'a Pose<T>,
    pub state: &'a JointState<T>,
    pub gravity: &'a DVector<T>,
    pub tau_e: &'a DVector<T>,
    pub compensate_external: bool,
}

fn finite<T: Real>(component: &'static str, v: &DVector<T>) -> Result<(), ControlError> {
    if v.iter().all(|x| x.is_finite_value()) {
        Ok(())
    } else {
        Err(ControlError::NonFinite { component })
    }
}

/// `τ = g + τ_d + τ1 + τ2 (− τ_e when compensation is enabled)`.
pub fn total_control<T: Real>(
    decomp: &HierarchyDecomposition<T>,
    inputs: &ControlInputs<'_, T>,
) -> Result<ControlCommand<T>, ControlError> {
    let tau_g = inputs.gravity.clone();
    let tau_d = compensation_torque(decomp);
    let (tau_1, tau_2) = task_torques(decomp, inputs.targets, inputs.params, inputs.pose, inputs.state);
    finite("gravity", &tau_g)?;
    finite("compensation", &tau_d)?;
    finite("task 1", &tau_1)?;
    finite("task 2", &tau_2)?;
    let mut tau = &tau_g + &tau_d + &tau_1 + &tau_2;
    let tau_e_compensated = if inputs.compensate_external {
        finite("external", inputs.tau_e)?;
        tau -= inputs.tau_e;
        Some(inputs.tau_e.clone())
    } else {
        None
    };
    Ok(ControlCommand {
        tau,
        tau_g,
        tau_d,
        tau_1,
        tau_2,
        tau_e_compensated,
    })
}

/// Reconstruction of `tau` from the logged components, in the same order.
pub fn recompose<T: Real>(cmd: &ControlCommand<T>) -> DVector<T> {
    let mut tau = &cmd.tau_g + &cmd.tau_d + &cmd.tau_1 + &cmd.tau_2;
    if let Some(e) = &cmd.tau_e_compensated {
        tau -= e;
    }
    tau
}

/// `J̄1 M⁻¹ τ`: the level-1 acceleration a torque would produce.
pub fn task1_acceleration_of<T: Real>(decomp: &HierarchyDecomposition<T>, tau: &DVector<T>) -> DVector<T> {
    let chol = decomp
        .mass
        .clone()
        .cholesky()
        .expect("decomposition holds an SPD inertia");
    &decomp.jbar1 * chol.solve(tau)
}
