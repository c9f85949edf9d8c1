//! Mode supervisor: picks the active interaction mode each control cycle and
//! produces the task targets for it.

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::TaskTargets;
use crate::dynamics::Pose;
use crate::intent::Factors;
use crate::minjerk::{minjerk_generate, MinJerkSegment};
use crate::scalar::Real;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SupervisorError {
    #[error("total task time must be positive, got {0}")]
    InvalidTotalTime(f64),
    #[error("trajectory needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("trajectory points {index} and {next} are {gap_m:.4} m / {gap_rad:.4} rad apart")]
    NotSmooth {
        index: usize,
        next: usize,
        gap_m: f64,
        gap_rad: f64,
    },
    #[error("trajectory has {poses} poses but {targets} secondary targets")]
    LengthMismatch { poses: usize, targets: usize },
    #[error("mode {0:?} requires a trajectory")]
    MissingTrajectory(Mode),
    #[error("invalid threshold: {0}")]
    InvalidThreshold(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Waiting,
    Recovery,
    Scanning,
    HumanGuiding,
    Avoiding,
    Contacting,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Waiting,
        Mode::Recovery,
        Mode::Scanning,
        Mode::HumanGuiding,
        Mode::Avoiding,
        Mode::Contacting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Waiting => "Waiting",
            Mode::Recovery => "Recovery",
            Mode::Scanning => "Scanning",
            Mode::HumanGuiding => "HumanGuiding",
            Mode::Avoiding => "Avoiding",
            Mode::Contacting => "Contacting",
        }
    }

    /// Modes whose targets come from the scanning trajectory.
    pub fn follows_trajectory(self) -> bool {
        matches!(self, Mode::Scanning | Mode::Avoiding | Mode::Contacting)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub a_ht: f64,
    pub a_pt: f64,
    pub a_ft: f64,
    pub a_bt: f64,
    pub a_nt: f64,
    /// Translational task-error threshold (m).
    pub eps: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            a_ht: 0.5,
            a_pt: 0.5,
            a_ft: 0.05,
            a_bt: 0.5,
            a_nt: 0.5,
            eps: 0.03,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), SupervisorError> {
        let unit = [
            (self.a_ht, "a_ht in (0, 1)"),
            (self.a_pt, "a_pt in (0, 1)"),
            (self.a_ft, "a_ft in (0, 1)"),
            (self.a_bt, "a_bt in (0, 1)"),
            (self.a_nt, "a_nt in (0, 1)"),
        ];
        for (v, name) in unit {
            if !(v > 0.0 && v < 1.0) {
                return Err(SupervisorError::InvalidThreshold(name));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(SupervisorError::InvalidThreshold("eps > 0"));
        }
        Ok(())
    }
}

/// Step sizes of the Avoiding and Recovery behaviors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorParams {
    /// Joint-1 target increment per cycle at `a_b = 1` (rad).
    pub avoid_step: f64,
    /// Joint-1 target return step per cycle (rad).
    pub return_step: f64,
    /// Shortest Recovery segment (s).
    pub recovery_min_duration: f64,
    /// Average Recovery speed used to size segments (m/s).
    pub recovery_speed: f64,
    /// Goal movement that forces a new Recovery segment (m).
    pub recovery_regenerate: f64,
    /// Cycles between joint-1 target refreshes in Recovery.
    pub recovery_refresh_cycles: u32,
}

impl Default for SupervisorParams {
    fn default() -> Self {
        Self {
            avoid_step: 0.002,
            return_step: 0.001,
            recovery_min_duration: 1.0,
            recovery_speed: 0.1,
            recovery_regenerate: 0.02,
            recovery_refresh_cycles: 100,
        }
    }
}

/// Scanning poses in a reference frame (the neck frame) plus a joint-1 target
/// per point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBuffer<T: Real> {
    points: Vec<Pose<T>>,
    x2d: Vec<T>,
}

pub const MAX_POINT_GAP_M: f64 = 0.005;
pub const MAX_POINT_GAP_RAD: f64 = 0.05;

impl<T: Real> TrajectoryBuffer<T> {
    pub fn new(points: Vec<Pose<T>>, x2d: Vec<T>) -> Result<Self, SupervisorError> {
        if points.len() < 2 {
            return Err(SupervisorError::TooFewPoints(points.len()));
        }
        if points.len() != x2d.len() {
            return Err(SupervisorError::LengthMismatch {
                poses: points.len(),
                targets: x2d.len(),
            });
        }
        for (i, w) in points.windows(2).enumerate() {
            let gap_m = (w[1].position - w[0].position).norm().as_f64();
            let gap_rad = w[1].orientation.angle_to(&w[0].orientation).as_f64();
            if gap_m > MAX_POINT_GAP_M || gap_rad > MAX_POINT_GAP_RAD {
                return Err(SupervisorError::NotSmooth {
                    index: i + 1,
                    next: i + 2,
                    gap_m,
                    gap_rad,
                });
            }
        }
        Ok(Self { points, x2d })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point `index` (1-based) in the reference frame.
    pub fn point(&self, index: usize) -> &Pose<T> {
        &self.points[index - 1]
    }

    pub fn secondary(&self, index: usize) -> T {
        self.x2d[index - 1]
    }

    /// Point `index` (1-based) mapped through `frame` into the base frame.
    pub fn world_point(&self, index: usize, frame: &Isometry3<T>) -> Pose<T> {
        let p = self.point(index);
        Pose::new(
            frame.transform_point(&p.position.into()).coords,
            frame.rotation * p.orientation,
        )
    }
}

/// 1-based trajectory index `round(t_p·N/T)` clamped to `[1, N]`.
pub fn trajectory_index(t_p: f64, n: usize, total: f64) -> Result<usize, SupervisorError> {
    if !(total > 0.0) {
        return Err(SupervisorError::InvalidTotalTime(total));
    }
    let raw = (t_p.clamp(0.0, total) * n as f64 / total).round() as usize;
    Ok(raw.clamp(1, n))
}

/// Priority rules of the interaction algorithm; a pure function.
pub fn decide_mode<T: Real>(
    factors: &Factors<T>,
    thresholds: &Thresholds,
    task_error_norm: T,
    trajectory_present: bool,
) -> Mode {
    let th = |v: f64| T::lit(v);
    if factors.a_h >= th(thresholds.a_ht) {
        return Mode::HumanGuiding;
    }
    if !trajectory_present {
        return Mode::Waiting;
    }
    let near = task_error_norm < th(thresholds.eps) && factors.a_p > th(thresholds.a_pt);
    if near || factors.a_f > th(thresholds.a_ft) {
        if factors.a_b > th(thresholds.a_bt) {
            if factors.a_n > th(thresholds.a_nt) {
                Mode::Contacting
            } else {
                Mode::Avoiding
            }
        } else {
            Mode::Scanning
        }
    } else {
        Mode::Recovery
    }
}

/// Everything the supervisor reads in one cycle.
#[derive(Debug, Clone, Copy)]
pub struct CycleInputs<'a, T: Real> {
    pub factors: &'a Factors<T>,
    /// Measured end-effector pose.
    pub pose: &'a Pose<T>,
    /// Measured joint-1 angle.
    pub q1: T,
    pub trajectory: Option<&'a TrajectoryBuffer<T>>,
    /// Maps trajectory points into the base frame.
    pub frame: &'a Isometry3<T>,
    /// +1 when the doctor is on the right of the arm, −1 on the left.
    pub avoid_side: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleOutput<T: Real> {
    pub mode: Mode,
    pub targets: TaskTargets<T>,
    /// Translational distance to the current trajectory point, when one exists.
    pub task_error: Option<T>,
    pub trajectory_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ActiveSegment<T: Real> {
    segment: MinJerkSegment<T>,
    elapsed: T,
}

/// Copy-out view of the supervisor for telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisorSnapshot<T: Real> {
    pub mode: Mode,
    pub t_p: T,
    pub total_time: T,
    pub x2d: T,
    pub x2d_origin: T,
    pub avoid_offset: T,
    pub cycles_in_mode: u64,
}

#[derive(Debug, Clone)]
pub struct SupervisorState<T: Real> {
    params: SupervisorParams,
    thresholds: Thresholds,
    dt: T,
    mode: Mode,
    t_p: T,
    total_time: T,
    held: Option<(Pose<T>, T)>,
    x2d: T,
    x2d_origin: T,
    avoid_offset: T,
    recovery_x2d: T,
    segment: Option<ActiveSegment<T>>,
    cycles_in_mode: u64,
    started: bool,
}

impl<T: Real> SupervisorState<T> {
    pub fn new(
        thresholds: Thresholds,
        params: SupervisorParams,
        total_time: T,
        dt: T,
    ) -> Result<Self, SupervisorError> {
        thresholds.validate()?;
        if !(total_time.as_f64() > 0.0) {
            return Err(SupervisorError::InvalidTotalTime(total_time.as_f64()));
        }
        Ok(Self {
            params,
            thresholds,
            dt,
            mode: Mode::Waiting,
            t_p: T::zero(),
            total_time,
            held: None,
            x2d: T::zero(),
            x2d_origin: T::zero(),
            avoid_offset: T::zero(),
            recovery_x2d: T::zero(),
            segment: None,
            cycles_in_mode: 0,
            started: false,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn progress(&self) -> T {
        self.t_p
    }

    pub fn total_time(&self) -> T {
        self.total_time
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn set_thresholds(&mut self, thresholds: Thresholds) -> Result<(), SupervisorError> {
        thresholds.validate()?;
        self.thresholds = thresholds;
        Ok(())
    }

    pub fn params(&self) -> &SupervisorParams {
        &self.params
    }

    pub fn set_params(&mut self, params: SupervisorParams) {
        self.params = params;
    }

    pub fn snapshot(&self) -> SupervisorSnapshot<T> {
        SupervisorSnapshot {
            mode: self.mode,
            t_p: self.t_p,
            total_time: self.total_time,
            x2d: self.x2d,
            x2d_origin: self.x2d_origin,
            avoid_offset: self.avoid_offset,
            cycles_in_mode: self.cycles_in_mode,
        }
    }

    /// Runs one cycle: decides the mode, applies entry actions and returns
    /// the targets.
    pub fn step(&mut self, input: &CycleInputs<'_, T>) -> Result<CycleOutput<T>, SupervisorError> {
        let active = input.trajectory.filter(|_| self.t_p < self.total_time);
        let (index, goal) = match active {
            Some(traj) => {
                let i = trajectory_index(self.t_p.as_f64(), traj.len(), self.total_time.as_f64())?;
                (Some(i), Some(traj.world_point(i, input.frame)))
            }
            None => (None, None),
        };
        let task_error = goal.map(|g| (input.pose.position - g.position).norm());
        let err = task_error.unwrap_or_else(T::zero);
        let mode = decide_mode(input.factors, &self.thresholds, err, active.is_some());

        if !self.started || mode != self.mode {
            self.enter(mode, input, goal);
            self.started = true;
            self.cycles_in_mode = 0;
        }
        self.mode = mode;

        // The avoidance offset decays whenever the arm is not avoiding.
        let ret = T::lit(self.params.return_step);
        if mode == Mode::Avoiding {
            let step = input.factors.a_b * T::lit(self.params.avoid_step) * input.avoid_side;
            self.avoid_offset += step;
        } else if self.avoid_offset.abs() <= ret {
            self.avoid_offset = T::zero();
        } else {
            self.avoid_offset -= ret * self.avoid_offset.signum();
        }

        let targets = match mode {
            Mode::Waiting => {
                let (pose, x2d) = self.held.unwrap_or((*input.pose, input.q1));
                self.x2d = x2d;
                TaskTargets::regulation(pose, x2d)
            }
            Mode::HumanGuiding => {
                self.x2d = input.q1;
                TaskTargets::regulation(*input.pose, input.q1)
            }
            Mode::Recovery => {
                let goal = goal.ok_or(SupervisorError::MissingTrajectory(mode))?;
                self.recovery_targets(input, goal)
            }
            Mode::Scanning | Mode::Avoiding | Mode::Contacting => {
                let (traj, i, goal) = match (active, index, goal) {
                    (Some(t), Some(i), Some(g)) => (t, i, g),
                    _ => return Err(SupervisorError::MissingTrajectory(mode)),
                };
                self.x2d = traj.secondary(i) + self.avoid_offset;
                if mode == Mode::Scanning {
                    self.t_p = (self.t_p + self.dt).min(self.total_time);
                }
                TaskTargets::regulation(goal, self.x2d)
            }
        };
        self.cycles_in_mode += 1;
        Ok(CycleOutput {
            mode,
            targets,
            task_error,
            trajectory_index: index,
        })
    }

    fn enter(&mut self, mode: Mode, input: &CycleInputs<'_, T>, goal: Option<Pose<T>>) {
        match mode {
            Mode::Waiting => self.held = Some((*input.pose, input.q1)),
            Mode::Recovery => {
                self.recovery_x2d = input.q1;
                self.segment = goal.map(|g| self.new_segment(input.pose, g));
            }
            Mode::Avoiding if self.avoid_offset == T::zero() => {
                self.x2d_origin = self.x2d;
            }
            _ => {}
        }
        if mode != Mode::Waiting {
            self.held = None;
        }
        if mode != Mode::Recovery {
            self.segment = None;
        }
    }

    fn new_segment(&self, from: &Pose<T>, goal: Pose<T>) -> ActiveSegment<T> {
        let distance = (goal.position - from.position).norm();
        let duration = T::lit(self.params.recovery_min_duration).max(distance / T::lit(self.params.recovery_speed));
        ActiveSegment {
            segment: minjerk_generate(*from, goal, duration),
            elapsed: T::zero(),
        }
    }

    fn recovery_targets(&mut self, input: &CycleInputs<'_, T>, goal: Pose<T>) -> TaskTargets<T> {
        let regenerate = match &self.segment {
            Some(s) => (s.segment.goal.position - goal.position).norm() > T::lit(self.params.recovery_regenerate),
            None => true,
        };
        if regenerate {
            self.segment = Some(self.new_segment(input.pose, goal));
        }
        let every = u64::from(self.params.recovery_refresh_cycles.max(1));
        if self.cycles_in_mode.is_multiple_of(every) {
            self.recovery_x2d = input.q1;
        }
        self.x2d = self.recovery_x2d;
        let seg = self.segment.as_mut().expect("segment set above");
        let sample = seg.segment.sample(seg.elapsed);
        seg.elapsed += self.dt;
        TaskTargets {
            x1d: sample.pose,
            xd1d: sample.velocity,
            xdd1d: sample.acceleration,
            x2d: self.x2d,
            tracking: true,
        }
    }

    /// Clears progress and mode memory, as on a scenario reset.
    pub fn reset(&mut self) {
        self.mode = Mode::Waiting;
        self.t_p = T::zero();
        self.held = None;
        self.x2d = T::zero();
        self.x2d_origin = T::zero();
        self.avoid_offset = T::zero();
        self.recovery_x2d = T::zero();
        self.segment = None;
        self.cycles_in_mode = 0;
        self.started = false;
    }

    /// Avoidance offset currently added to the trajectory's joint-1 target.
    pub fn avoid_offset(&self) -> T {
        self.avoid_offset
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    fn factors(a_h: f64, a_p: f64, a_f: f64, a_n: f64, a_b: f64) -> Factors<f64> {
        Factors {
            a_h,
            a_p,
            a_f,
            a_n,
            a_b,
        }
    }

    fn line(n: usize) -> TrajectoryBuffer<f64> {
        let pts = (0..n)
            .map(|i| Pose::new(Vector3::new(0.5, 0.001 * i as f64, 0.4), UnitQuaternion::identity()))
            .collect();
        TrajectoryBuffer::new(pts, vec![0.1; n]).unwrap()
    }

    fn supervisor() -> SupervisorState<f64> {
        SupervisorState::new(Thresholds::default(), SupervisorParams::default(), 1.0, 0.001).unwrap()
    }

    #[test]
    fn index_examples() {
        assert_eq!(trajectory_index(0.0, 100, 10.0).unwrap(), 1);
        assert_eq!(trajectory_index(10.0, 100, 10.0).unwrap(), 100);
        assert_eq!(trajectory_index(5.0, 100, 10.0).unwrap(), 50);
        assert!(matches!(
            trajectory_index(1.0, 100, 0.0),
            Err(SupervisorError::InvalidTotalTime(_))
        ));
    }

    #[test]
    fn mode_examples() {
        let th = Thresholds::default();
        assert_eq!(
            decide_mode(&factors(0.9, 1.0, 1.0, 1.0, 1.0), &th, 0.0, true),
            Mode::HumanGuiding
        );
        assert_eq!(
            decide_mode(&factors(0.9, 0.0, 0.0, 0.0, 0.0), &th, 1.0, false),
            Mode::HumanGuiding
        );
        assert_eq!(
            decide_mode(&factors(0.0, 0.0, 0.0, 0.0, 0.0), &th, 0.1, true),
            Mode::Recovery
        );
        assert_eq!(
            decide_mode(&factors(0.0, 0.0, 0.4, 0.7, 0.8), &th, 0.1, true),
            Mode::Contacting
        );
        assert_eq!(
            decide_mode(&factors(0.0, 0.0, 0.4, 0.2, 0.8), &th, 0.1, true),
            Mode::Avoiding
        );
        assert_eq!(
            decide_mode(&factors(0.0, 0.9, 0.0, 0.0, 0.0), &th, 0.01, true),
            Mode::Scanning
        );
        assert_eq!(
            decide_mode(&factors(0.0, 0.9, 0.0, 0.0, 0.0), &th, 0.01, false),
            Mode::Waiting
        );
        // a_n exactly at its threshold selects Avoiding.
        assert_eq!(
            decide_mode(&factors(0.0, 0.0, 0.4, 0.5, 0.8), &th, 0.1, true),
            Mode::Avoiding
        );
    }

    #[test]
    fn smoothness_is_enforced() {
        let pts = vec![
            Pose::new(Vector3::zeros(), UnitQuaternion::identity()),
            Pose::new(Vector3::new(0.01, 0.0, 0.0), UnitQuaternion::identity()),
        ];
        assert!(matches!(
            TrajectoryBuffer::new(pts, vec![0.0; 2]),
            Err(SupervisorError::NotSmooth { index: 1, next: 2, .. })
        ));
        assert!(matches!(
            TrajectoryBuffer::<f64>::new(vec![], vec![]),
            Err(SupervisorError::TooFewPoints(0))
        ));
    }

    fn run(
        sup: &mut SupervisorState<f64>,
        f: &Factors<f64>,
        pose: &Pose<f64>,
        traj: Option<&TrajectoryBuffer<f64>>,
        side: f64,
    ) -> CycleOutput<f64> {
        let frame = Isometry3::identity();
        sup.step(&CycleInputs {
            factors: f,
            pose,
            q1: 0.3,
            trajectory: traj,
            frame: &frame,
            avoid_side: side,
        })
        .unwrap()
    }

    #[test]
    fn guiding_targets_current_pose_exactly() {
        let mut sup = supervisor();
        let pose = Pose::new(
            Vector3::new(0.123456789, -0.3, 0.7),
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
        );
        let out = run(&mut sup, &factors(1.0, 0.0, 0.0, 0.0, 0.0), &pose, Some(&line(10)), 1.0);
        assert_eq!(out.mode, Mode::HumanGuiding);
        assert_eq!(out.targets.x1d, pose);
        assert_eq!(out.targets.x2d, 0.3);
    }

    #[test]
    fn progress_advances_only_while_scanning() {
        let traj = line(10);
        let mut sup = supervisor();
        let pose = *traj.point(1);
        let scan = factors(0.0, 1.0, 0.0, 0.0, 0.0);
        let out = run(&mut sup, &scan, &pose, Some(&traj), 1.0);
        assert_eq!(out.mode, Mode::Scanning);
        assert_eq!(sup.progress(), 0.001);
        let contact = factors(0.0, 1.0, 0.5, 0.9, 0.9);
        let c = run(&mut sup, &contact, &pose, Some(&traj), 1.0);
        assert_eq!(c.mode, Mode::Contacting);
        assert_eq!(sup.progress(), 0.001);

        // Contacting targets equal Scanning targets at the same progress.
        let mut other = supervisor();
        run(&mut other, &scan, &pose, Some(&traj), 1.0);
        let mut probe = other.clone();
        let s = run(&mut probe, &scan, &pose, Some(&traj), 1.0);
        assert_eq!(s.targets, c.targets);
    }

    #[test]
    fn avoiding_steps_and_returns() {
        let traj = line(10);
        let mut sup = supervisor();
        let pose = *traj.point(1);
        run(&mut sup, &factors(0.0, 1.0, 0.0, 0.0, 0.0), &pose, Some(&traj), 1.0);
        let avoid = factors(0.0, 1.0, 0.0, 0.0, 1.0);
        let first = run(&mut sup, &avoid, &pose, Some(&traj), 1.0);
        assert_eq!(first.mode, Mode::Avoiding);
        assert!((first.targets.x2d - (0.1 + 0.002)).abs() < 1e-15);
        let origin = sup.snapshot().x2d_origin;
        assert_eq!(origin, 0.1);
        for _ in 0..99 {
            run(&mut sup, &avoid, &pose, Some(&traj), 1.0);
        }
        let peak = sup.snapshot().x2d;
        assert!((peak - 0.3).abs() < 1e-12);
        let left = factors(0.0, 1.0, 0.0, 0.0, 0.005);
        let budget = ((peak - origin).abs() / 0.001).ceil() as usize;
        let mut prev = peak;
        for k in 0..budget {
            let out = run(&mut sup, &left, &pose, Some(&traj), 1.0);
            assert_eq!(out.mode, Mode::Scanning);
            assert!(out.targets.x2d <= prev, "not monotone at {k}");
            prev = out.targets.x2d;
        }
        assert!((prev - origin).abs() < 1e-12);
    }

    #[test]
    fn avoiding_left_side_decreases_target() {
        let traj = line(10);
        let mut sup = supervisor();
        let pose = *traj.point(1);
        let out = run(&mut sup, &factors(0.0, 1.0, 0.0, 0.0, 1.0), &pose, Some(&traj), -1.0);
        assert!((out.targets.x2d - (0.1 - 0.002)).abs() < 1e-15);
    }

    #[test]
    fn waiting_freezes_entry_pose() {
        let mut sup = supervisor();
        let f = factors(0.0, 0.0, 0.0, 0.0, 0.0);
        let a = Pose::new(Vector3::new(0.1, 0.2, 0.3), UnitQuaternion::identity());
        let b = Pose::new(Vector3::new(0.4, 0.2, 0.3), UnitQuaternion::identity());
        let first = run(&mut sup, &f, &a, None, 1.0);
        let second = run(&mut sup, &f, &b, None, 1.0);
        assert_eq!(first.mode, Mode::Waiting);
        assert_eq!(first.targets.x1d, a);
        assert_eq!(second.targets.x1d, a);
    }

    #[test]
    fn recovery_starts_at_current_pose_and_tracks() {
        let traj = line(10);
        let mut sup = supervisor();
        let f = factors(0.0, 0.0, 0.0, 0.0, 0.0);
        let pose = Pose::new(Vector3::new(0.3, 0.0, 0.4), UnitQuaternion::identity());
        let out = run(&mut sup, &f, &pose, Some(&traj), 1.0);
        assert_eq!(out.mode, Mode::Recovery);
        assert!(out.targets.tracking);
        assert!((out.targets.x1d.position - pose.position).norm() < 1e-12);
        assert_eq!(out.targets.x2d, 0.3);
        let mut last = out;
        for _ in 0..3000 {
            last = run(&mut sup, &f, &pose, Some(&traj), 1.0);
        }
        assert!((last.targets.x1d.position - traj.point(1).position).norm() < 1e-12);
        assert_eq!(sup.progress(), 0.0);
    }

    #[test]
    fn finished_trajectory_waits() {
        let traj = line(10);
        let mut sup = SupervisorState::new(Thresholds::default(), SupervisorParams::default(), 0.003, 0.001).unwrap();
        let pose = *traj.point(10);
        let scan = factors(0.0, 1.0, 0.0, 0.0, 0.0);
        let mut modes = vec![];
        for _ in 0..5 {
            modes.push(run(&mut sup, &scan, &pose, Some(&traj), 1.0).mode);
        }
        assert_eq!(modes[..3], [Mode::Scanning; 3]);
        assert_eq!(modes[3..], [Mode::Waiting; 2]);
        assert!(sup.progress() <= sup.total_time());
    }
}
