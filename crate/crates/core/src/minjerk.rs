//! Minimum-jerk pose segments.
//!
//! Translation follows `s(τ) = 10τ³ − 15τ⁴ + 6τ⁵`; orientation rotates about
//! the fixed base-frame axis of `R_goal · R_startᵀ` by `s(τ)` of the total
//! angle, which is spherical interpolation with the same time scaling.

use nalgebra::{UnitQuaternion, Vector3, Vector6};

use crate::dynamics::Pose;
use crate::scalar::Real;

/// Quintic time scaling and its first two derivatives with respect to `τ`.
pub fn quintic<T: Real>(tau: T) -> (T, T, T) {
    let t = tau.clamp(T::zero(), T::one());
    let t2 = t * t;
    let t3 = t2 * t;
    let s = t3 * (T::lit(10.0) + t * (T::lit(-15.0) + T::lit(6.0) * t));
    let ds = T::lit(30.0) * t2 * (T::one() - t) * (T::one() - t);
    let dds = T::lit(60.0) * t * (T::one() - t) * (T::one() - T::lit(2.0) * t);
    (s, ds, dds)
}

/// Desired pose, twist and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample<T: Real> {
    pub pose: Pose<T>,
    pub velocity: Vector6<T>,
    pub acceleration: Vector6<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinJerkSegment<T: Real> {
    pub start: Pose<T>,
    pub goal: Pose<T>,
    pub duration: T,
    rotation: Vector3<T>,
}

pub fn minjerk_generate<T: Real>(start: Pose<T>, goal: Pose<T>, duration: T) -> MinJerkSegment<T> {
    assert!(duration > T::zero(), "segment duration must be positive");
    let rotation = (goal.orientation * start.orientation.inverse()).scaled_axis();
    MinJerkSegment {
        start,
        goal,
        duration,
        rotation,
    }
}

impl<T: Real> MinJerkSegment<T> {
    /// Samples the segment at `t` seconds after its start; holds the goal
    /// with zero rates past the end.
    pub fn sample(&self, t: T) -> PoseSample<T> {
        let (s, ds, dds) = quintic(t / self.duration);
        let inv_t = T::one() / self.duration;
        let dp = self.goal.position - self.start.position;
        let position = self.start.position + dp * s;
        let orientation = UnitQuaternion::from_scaled_axis(self.rotation * s) * self.start.orientation;
        let lin_v = dp * (ds * inv_t);
        let ang_v = self.rotation * (ds * inv_t);
        let lin_a = dp * (dds * inv_t * inv_t);
        let ang_a = self.rotation * (dds * inv_t * inv_t);
        PoseSample {
            pose: Pose::new(position, orientation),
            velocity: Vector6::new(lin_v.x, lin_v.y, lin_v.z, ang_v.x, ang_v.y, ang_v.z),
            acceleration: Vector6::new(lin_a.x, lin_a.y, lin_a.z, ang_a.x, ang_a.y, ang_a.z),
        }
    }

    pub fn is_finished(&self, t: T) -> bool {
        t >= self.duration
    }
}
