//! Cylindrical neck: penalty contact and the analytic scanning path.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::Pose;
use crate::supervisor::{SupervisorError, TrajectoryBuffer};

/// Neck placement and contact constants.
///
/// The neck frame has its x axis along the cylinder (pointing up in the
/// world) and its y axis pointing from the neck toward the robot base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeckParams {
    /// Cylinder center in the base frame (m).
    pub position: [f64; 3],
    /// Rotation of the neck about the world vertical (rad).
    pub yaw: f64,
    pub radius: f64,
    pub x_top: f64,
    pub x_bottom: f64,
    /// Contact stiffness (N/m).
    pub k_c: f64,
    /// Contact damping (N·s/m).
    pub c_c: f64,
}

impl Default for NeckParams {
    fn default() -> Self {
        Self {
            position: [0.62, 0.0, 0.45],
            yaw: 0.0,
            radius: 0.065,
            x_top: 0.06,
            x_bottom: -0.06,
            k_c: 2000.0,
            c_c: 50.0,
        }
    }
}

impl NeckParams {
    pub fn violation(&self) -> Option<&'static str> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Some("neck radius > 0");
        }
        if !(self.k_c >= 0.0 && self.c_c >= 0.0) {
            return Some("contact k_c, c_c >= 0");
        }
        if !(self.x_top > self.x_bottom) {
            return Some("neck x_top > x_bottom");
        }
        if !self.position.iter().chain([&self.yaw]).all(|v| v.is_finite()) {
            return Some("neck pose finite");
        }
        None
    }

    /// Neck pose with no patient motion applied.
    pub fn rest_pose(&self) -> Isometry3<f64> {
        // Neck x = world up, neck y = world −x (toward the robot), turned by yaw.
        let base =
            Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[Vector3::z(), -Vector3::x(), -Vector3::y()]));
        let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw);
        Isometry3::from_parts(
            Translation3::new(self.position[0], self.position[1], self.position[2]),
            yaw * UnitQuaternion::from_rotation_matrix(&base),
        )
    }
}

/// Neck geometry at one instant, including its rigid motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeckState {
    pub pose: Isometry3<f64>,
    pub velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
    pub radius: f64,
    pub x_top: f64,
    pub x_bottom: f64,
    pub k_c: f64,
    pub c_c: f64,
}

impl NeckState {
    pub fn at_rest(params: &NeckParams) -> Self {
        Self {
            pose: params.rest_pose(),
            velocity: Vector3::zeros(),
            angular_velocity: Vector3::zeros(),
            radius: params.radius,
            x_top: params.x_top,
            x_bottom: params.x_bottom,
            k_c: params.k_c,
            c_c: params.c_c,
        }
    }

    /// Point `p` (base frame) expressed in the neck frame.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse_transform_point(&(*p).into()).coords
    }

    fn surface_velocity(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.velocity + self.angular_velocity.cross(&(p - self.pose.translation.vector))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactWrench {
    /// Force then moment on the probe, base frame.
    pub wrench: Vector6<f64>,
    /// Compressive force along the probe z axis (N).
    pub f_z_e: f64,
    /// Penetration depth (m).
    pub depth: f64,
}

/// Unilateral spring-damper between the probe tip and the cylinder wall.
pub fn probe_contact_wrench(probe: &Pose<f64>, probe_velocity: &Vector3<f64>, neck: &NeckState) -> ContactWrench {
    let none = ContactWrench {
        wrench: Vector6::zeros(),
        f_z_e: 0.0,
        depth: 0.0,
    };
    let local = neck.to_local(&probe.position);
    if local.x < neck.x_bottom || local.x > neck.x_top {
        return none;
    }
    let radial = Vector3::new(0.0, local.y, local.z);
    let rho = radial.norm();
    let depth = neck.radius - rho;
    if depth <= 0.0 || rho < 1e-12 {
        return none;
    }
    let normal = neck.pose.rotation * (radial / rho);
    let relative = probe_velocity - neck.surface_velocity(&probe.position);
    let radial_rate = normal.dot(&relative);
    let magnitude = (neck.k_c * depth - neck.c_c * radial_rate).max(0.0);
    let force = normal * magnitude;
    let f_z_e = -probe.z_axis().dot(&force);
    ContactWrench {
        wrench: Vector6::new(force.x, force.y, force.z, 0.0, 0.0, 0.0),
        f_z_e,
        depth,
    }
}

/// Scanning path on the neck surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    /// Number of points N.
    pub points: usize,
    /// Total scanning time T (s).
    pub total_time: f64,
    /// Depth of the path below the neck surface (m).
    pub inward_offset: f64,
    /// Simulation time at which the path is handed to the supervisor (s).
    pub available_at: f64,
    /// Axial coordinate at the first and last point (m, neck frame).
    pub axial_start: f64,
    pub axial_end: f64,
    /// Angle around the neck at the first and last point (rad, 0 faces the robot).
    pub angle_start: f64,
    pub angle_end: f64,
    /// Joint-1 target while following the path (rad).
    pub joint1: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            points: 2000,
            total_time: 20.0,
            inward_offset: 0.025,
            available_at: 0.0,
            axial_start: -0.03,
            axial_end: 0.03,
            angle_start: -0.25,
            angle_end: 0.25,
            joint1: 0.15,
        }
    }
}

impl TrajectoryParams {
    pub fn violation(&self) -> Option<&'static str> {
        if self.points < 2 {
            return Some("trajectory points >= 2");
        }
        if !(self.total_time > 0.0 && self.total_time.is_finite()) {
            return Some("trajectory total_time > 0");
        }
        if !(self.inward_offset >= 0.0) {
            return Some("trajectory inward_offset >= 0");
        }
        if !(self.available_at >= 0.0) {
            return Some("trajectory available_at >= 0");
        }
        let finite = [
            self.axial_start,
            self.axial_end,
            self.angle_start,
            self.angle_end,
            self.joint1,
        ];
        if !finite.iter().all(|v| v.is_finite()) {
            return Some("trajectory parameters finite");
        }
        None
    }
}

/// Probe pose on the surface at axial coordinate `axial` and angle `angle`,
/// pushed `depth` into the neck, in the neck frame. The probe z axis points
/// into the neck and its x axis runs along the neck.
pub fn surface_pose(radius: f64, depth: f64, axial: f64, angle: f64) -> Pose<f64> {
    let outward = Vector3::new(0.0, angle.cos(), angle.sin());
    let z = -outward;
    let x = Vector3::x();
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Pose::new(
        Vector3::new(axial, 0.0, 0.0) + outward * (radius - depth),
        UnitQuaternion::from_rotation_matrix(&rot),
    )
}

/// Straight sweep in (axial, angle) between the two end points.
pub fn scan_trajectory(params: &TrajectoryParams, radius: f64) -> Result<TrajectoryBuffer<f64>, SupervisorError> {
    let n = params.points;
    let last = (n.max(2) - 1) as f64;
    let points = (0..n)
        .map(|i| {
            let u = i as f64 / last;
            surface_pose(
                radius,
                params.inward_offset,
                params.axial_start + (params.axial_end - params.axial_start) * u,
                params.angle_start + (params.angle_end - params.angle_start) * u,
            )
        })
        .collect();
    TrajectoryBuffer::new(points, vec![params.joint1; n])
}
