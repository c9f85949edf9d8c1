//! Scripted human interaction events and their ground-truth effects.

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::Pose;
use crate::minjerk::quintic;
use crate::sim::neck::{NeckParams, NeckState};

fn default_approach_time() -> f64 {
    0.5
}
fn default_hand_displacement() -> [f64; 3] {
    [-0.10, 0.0, 0.08]
}
fn default_move_time() -> f64 {
    1.5
}
fn default_hand_stiffness() -> f64 {
    300.0
}
fn default_hand_damping() -> f64 {
    40.0
}
fn default_hand_rot_stiffness() -> f64 {
    10.0
}
fn default_hand_rot_damping() -> f64 {
    1.0
}
fn default_torque() -> f64 {
    4.0
}
fn default_ramp() -> f64 {
    0.3
}
fn default_closest() -> f64 {
    0.1
}
fn default_push_force() -> f64 {
    25.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Sign of the joint-1 avoidance step.
    pub fn sign(self) -> f64 {
        match self {
            Side::Right => 1.0,
            Side::Left => -1.0,
        }
    }
}

/// One timed interaction. Times are simulation seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum HumanEvent {
    /// A hand closes on the probe over `approach_time`, holds it while
    /// dragging it by `displacement` over `move_time`, and lets go at `end`.
    GraspProbe {
        start: f64,
        end: f64,
        #[serde(default = "default_approach_time")]
        approach_time: f64,
        #[serde(default = "default_hand_displacement")]
        displacement: [f64; 3],
        #[serde(default = "default_move_time")]
        move_time: f64,
        #[serde(default = "default_hand_stiffness")]
        stiffness: f64,
        #[serde(default = "default_hand_damping")]
        damping: f64,
        #[serde(default = "default_hand_rot_stiffness")]
        rot_stiffness: f64,
        #[serde(default = "default_hand_rot_damping")]
        rot_damping: f64,
    },
    /// Ends every grasp that is active at `start`.
    ReleaseProbe { start: f64, end: f64 },
    /// Torque on the arm body. With `joint` (1-based) the torque acts on that
    /// joint; without it the torque is a twist purely in the null space.
    BodyContact {
        start: f64,
        end: f64,
        #[serde(default = "default_torque")]
        torque: f64,
        #[serde(default)]
        joint: Option<usize>,
        #[serde(default = "default_ramp")]
        ramp: f64,
    },
    /// The doctor's body comes within `closest` of the arm on `side`.
    BodyApproach {
        start: f64,
        end: f64,
        side: Side,
        #[serde(default = "default_closest")]
        closest: f64,
        #[serde(default = "default_ramp")]
        ramp: f64,
    },
    /// The neck shifts by `displacement` and turns by `rotation` about its
    /// own axis; the change persists after `end`.
    PatientMove {
        start: f64,
        end: f64,
        #[serde(default)]
        displacement: [f64; 3],
        #[serde(default)]
        rotation: f64,
    },
    /// The patient pushes the probe back along its axis with a `sin²` profile
    /// peaking at `force`.
    PushProbe {
        start: f64,
        end: f64,
        #[serde(default = "default_push_force")]
        force: f64,
    },
}

impl HumanEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            HumanEvent::GraspProbe { .. } => "GraspProbe",
            HumanEvent::ReleaseProbe { .. } => "ReleaseProbe",
            HumanEvent::BodyContact { .. } => "BodyContact",
            HumanEvent::BodyApproach { .. } => "BodyApproach",
            HumanEvent::PatientMove { .. } => "PatientMove",
            HumanEvent::PushProbe { .. } => "PushProbe",
        }
    }

    pub fn start(&self) -> f64 {
        match *self {
            HumanEvent::GraspProbe { start, .. }
            | HumanEvent::ReleaseProbe { start, .. }
            | HumanEvent::BodyContact { start, .. }
            | HumanEvent::BodyApproach { start, .. }
            | HumanEvent::PatientMove { start, .. }
            | HumanEvent::PushProbe { start, .. } => start,
        }
    }

    pub fn end(&self) -> f64 {
        match *self {
            HumanEvent::GraspProbe { end, .. }
            | HumanEvent::ReleaseProbe { end, .. }
            | HumanEvent::BodyContact { end, .. }
            | HumanEvent::BodyApproach { end, .. }
            | HumanEvent::PatientMove { end, .. }
            | HumanEvent::PushProbe { end, .. } => end,
        }
    }

    /// Same event moved later by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut e = self.clone();
        match &mut e {
            HumanEvent::GraspProbe { start, end, .. }
            | HumanEvent::ReleaseProbe { start, end }
            | HumanEvent::BodyContact { start, end, .. }
            | HumanEvent::BodyApproach { start, end, .. }
            | HumanEvent::PatientMove { start, end, .. }
            | HumanEvent::PushProbe { start, end, .. } => {
                *start += offset;
                *end += offset;
            }
        }
        e
    }

    /// Returns the first violated invariant, if any.
    pub fn violation(&self, dof: usize) -> Option<String> {
        let (start, end) = (self.start(), self.end());
        if !(start.is_finite() && end.is_finite()) {
            return Some("start and end must be finite".into());
        }
        if !(start < end) {
            return Some(format!("start {start} must be before end {end}"));
        }
        if start < 0.0 {
            return Some("start must be non-negative".into());
        }
        let span = end - start;
        let positive = |v: f64, name: &str| -> Option<String> {
            (!(v > 0.0 && v.is_finite())).then(|| format!("{name} must be positive"))
        };
        match self {
            HumanEvent::GraspProbe {
                approach_time,
                displacement,
                move_time,
                stiffness,
                damping,
                rot_stiffness,
                rot_damping,
                ..
            } => positive(*approach_time, "approach_time")
                .or_else(|| positive(*move_time, "move_time"))
                .or_else(|| (*approach_time >= span).then(|| "approach_time must be shorter than the event".into()))
                .or_else(|| {
                    let all = [*stiffness, *damping, *rot_stiffness, *rot_damping];
                    (!all.iter().all(|v| *v >= 0.0 && v.is_finite()))
                        .then(|| "hand stiffness and damping must be non-negative".into())
                })
                .or_else(|| {
                    (!displacement.iter().all(|v| v.is_finite())).then(|| "displacement must be finite".into())
                }),
            HumanEvent::ReleaseProbe { .. } => None,
            HumanEvent::BodyContact {
                torque, joint, ramp, ..
            } => positive(*ramp, "ramp")
                .or_else(|| (!torque.is_finite()).then(|| "torque must be finite".into()))
                .or_else(|| (2.0 * ramp > span).then(|| "ramps must fit inside the event".into()))
                .or_else(|| match joint {
                    Some(j) if *j < 1 || *j > dof => Some(format!("joint must be in 1..={dof}")),
                    _ => None,
                }),
            HumanEvent::BodyApproach { closest, ramp, .. } => positive(*ramp, "ramp")
                .or_else(|| (!(*closest >= 0.0)).then(|| "closest must be non-negative".into()))
                .or_else(|| (2.0 * ramp > span).then(|| "ramps must fit inside the event".into())),
            HumanEvent::PatientMove {
                displacement, rotation, ..
            } => (!displacement.iter().chain([rotation]).all(|v| v.is_finite()))
                .then(|| "displacement and rotation must be finite".into()),
            HumanEvent::PushProbe { force, .. } => {
                (!(force.is_finite() && *force >= 0.0)).then(|| "force must be non-negative".into())
            }
        }
    }
}

/// Ground-truth distances used when no event is active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    /// Probe-to-hand distance with no hand nearby (m).
    pub hand_idle_distance: f64,
    /// Doctor-to-arm distance with nobody nearby (m).
    pub body_idle_distance: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            hand_idle_distance: 1.0,
            body_idle_distance: 2.0,
        }
    }
}

/// Rises smoothly from 0 to 1 over `ramp` after `start` and falls back over
/// `ramp` before `end`.
fn trapezoid(t: f64, start: f64, end: f64, ramp: f64) -> f64 {
    if t <= start || t >= end {
        return 0.0;
    }
    let rise = quintic((t - start) / ramp).0;
    let fall = quintic((end - t) / ramp).0;
    rise.min(fall)
}

/// Ground-truth world quantities for one control cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldInputs {
    pub neck: NeckState,
    pub d_h: f64,
    pub d_b: f64,
    /// Sign of the avoidance step for the nearest doctor.
    pub avoid_side: f64,
    /// Hand and push wrench on the probe (base frame).
    pub probe_wrench: Vector6<f64>,
    /// Compressive part of `probe_wrench` along the probe axis (N).
    pub probe_push: f64,
    /// Joint torque from body contact.
    pub body_torque: DVector<f64>,
}

/// Time-ordered event list plus the little state grasps need.
#[derive(Debug, Clone)]
pub struct EventSchedule {
    events: Vec<HumanEvent>,
    anchors: Vec<Option<(f64, Pose<f64>)>>,
}

impl EventSchedule {
    pub fn new(events: Vec<HumanEvent>) -> Self {
        let mut s = Self {
            events: vec![],
            anchors: vec![],
        };
        for e in events {
            s.push(e);
        }
        s
    }

    pub fn events(&self) -> &[HumanEvent] {
        &self.events
    }

    pub fn push(&mut self, event: HumanEvent) {
        let at = self.events.partition_point(|e| e.start() <= event.start());
        self.events.insert(at, event);
        self.anchors.insert(at, None);
    }

    pub fn reset(&mut self, events: Vec<HumanEvent>) {
        *self = Self::new(events);
    }

    /// Time at which grasp `index` lets go: its own end or the first
    /// release after it started.
    fn grasp_end(&self, index: usize) -> f64 {
        let e = &self.events[index];
        self.events
            .iter()
            .filter_map(|r| match r {
                HumanEvent::ReleaseProbe { start, .. } if *start > e.start() => Some(*start),
                _ => None,
            })
            .fold(e.end(), f64::min)
    }

    /// Evaluates every event at time `t`.
    ///
    /// `probe` and `probe_twist` are the measured probe pose and twist;
    /// `null_row` is the dynamically consistent null-space row `J̄2` used for
    /// body twists.
    pub fn evaluate(
        &mut self,
        t: f64,
        neck: &NeckParams,
        world: &WorldParams,
        probe: &Pose<f64>,
        probe_twist: &Vector6<f64>,
        null_row: &DMatrix<f64>,
    ) -> WorldInputs {
        let n = null_row.ncols();
        let mut displacement = Vector3::zeros();
        let mut displacement_rate = Vector3::zeros();
        let mut turn = 0.0;
        let mut turn_rate = 0.0;
        let mut d_h = world.hand_idle_distance;
        let mut d_b = world.body_idle_distance;
        let mut avoid_side = 1.0;
        let mut probe_wrench = Vector6::zeros();
        let mut probe_push = 0.0;
        let mut body_torque = DVector::zeros(n);

        for i in 0..self.events.len() {
            let grasp_end = self.grasp_end(i);
            match self.events[i].clone() {
                HumanEvent::PatientMove {
                    start,
                    end,
                    displacement: d,
                    rotation,
                } => {
                    let span = end - start;
                    let (s, ds, _) = quintic((t - start) / span);
                    let ds = if t > start && t < end { ds / span } else { 0.0 };
                    let d = Vector3::from(d);
                    displacement += d * s;
                    displacement_rate += d * ds;
                    turn += rotation * s;
                    turn_rate += rotation * ds;
                }
                HumanEvent::GraspProbe {
                    start,
                    approach_time,
                    displacement: hand_move,
                    move_time,
                    stiffness,
                    damping,
                    rot_stiffness,
                    rot_damping,
                    ..
                } => {
                    let idle = world.hand_idle_distance;
                    let engage = start + approach_time;
                    let release = grasp_end.max(engage);
                    let dist = if t < start {
                        idle
                    } else if t < engage {
                        idle * (1.0 - (t - start) / approach_time)
                    } else if t < release {
                        0.0
                    } else {
                        (idle * (t - release) / approach_time).min(idle)
                    };
                    d_h = d_h.min(dist);
                    if t >= engage && t < release {
                        let (_, anchor) = *self.anchors[i].get_or_insert((t, *probe));
                        let (s, ds, _) = quintic((t - engage) / move_time);
                        let moving = t - engage < move_time;
                        let hand_move = Vector3::from(hand_move);
                        let target = anchor.position + hand_move * s;
                        let target_rate = if moving {
                            hand_move * (ds / move_time)
                        } else {
                            Vector3::zeros()
                        };
                        let v = probe_twist.fixed_rows::<3>(0).into_owned();
                        let w = probe_twist.fixed_rows::<3>(3).into_owned();
                        let force = (target - probe.position) * stiffness + (target_rate - v) * damping;
                        let twist = (anchor.orientation * probe.orientation.inverse()).scaled_axis();
                        let moment = twist * rot_stiffness - w * rot_damping;
                        probe_wrench += Vector6::new(force.x, force.y, force.z, moment.x, moment.y, moment.z);
                    }
                }
                HumanEvent::ReleaseProbe { .. } => {}
                HumanEvent::BodyContact {
                    start,
                    end,
                    torque,
                    joint,
                    ramp,
                } => {
                    let level = torque * trapezoid(t, start, end, ramp);
                    if level != 0.0 {
                        match joint {
                            Some(j) => body_torque[j - 1] += level,
                            None => {
                                let row = null_row.row(0).transpose();
                                let norm = row.norm();
                                if norm > 0.0 {
                                    body_torque += row * (level / norm);
                                }
                            }
                        }
                    }
                }
                HumanEvent::BodyApproach {
                    start,
                    end,
                    side,
                    closest,
                    ramp,
                } => {
                    let w = trapezoid(t, start, end, ramp);
                    let idle = world.body_idle_distance;
                    let dist = idle + (closest - idle) * w;
                    if dist < d_b {
                        d_b = dist;
                        avoid_side = side.sign();
                    }
                }
                HumanEvent::PushProbe { start, end, force } => {
                    if t > start && t < end {
                        let phase = std::f64::consts::PI * (t - start) / (end - start);
                        let f = force * phase.sin().powi(2);
                        let push = -probe.z_axis() * f;
                        probe_wrench += Vector6::new(push.x, push.y, push.z, 0.0, 0.0, 0.0);
                        probe_push += f;
                    }
                }
            }
        }

        let rest = neck.rest_pose();
        let axis = rest.rotation * Vector3::x();
        let pose = Isometry3::from_parts(
            Translation3::from(rest.translation.vector + displacement),
            rest.rotation * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), turn),
        );
        let mut state = NeckState::at_rest(neck);
        state.pose = pose;
        state.velocity = displacement_rate;
        state.angular_velocity = axis * turn_rate;
        WorldInputs {
            neck: state,
            d_h,
            d_b,
            avoid_side,
            probe_wrench,
            probe_push,
            body_torque,
        }
    }
}
