//! Closed-loop world: the arm under the unified controller, a penalty-contact
//! neck, scripted humans, ground-truth perception and an energy monitor.

pub mod events;
pub mod neck;
pub mod telemetry;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    schedule_stiffness, total_control, ControlError, ControlInputs, ImpedanceParams, StiffnessGains, TaskTargets,
};
use crate::dynamics::{
    forward_kinematics, mass_matrix, step_with_terms, DynamicTerms, DynamicsError, JointState, Pose, RobotModel,
};
use crate::hierarchy::{Decoupler, HierarchyDecomposition, HierarchyError};
use crate::intent::{compute_factors, null_space_torque, FactorParams, Factors, PerceptionSnapshot};
use crate::supervisor::{
    CycleInputs, Mode, SupervisorError, SupervisorParams, SupervisorState, Thresholds, TrajectoryBuffer,
};

pub use events::{EventSchedule, HumanEvent, Side, WorldInputs, WorldParams};
pub use neck::{probe_contact_wrench, scan_trajectory, ContactWrench, NeckParams, NeckState, TrajectoryParams};
pub use telemetry::{write_csv, TelemetryRecord, CSV_COLUMNS};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("non-finite state at t = {time:.4} s")]
    NonFinite { time: f64 },
}

/// Zero-mean Gaussian noise on the force channels of the perception snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    /// Standard deviation on `f_z_E` (N).
    pub force_std: f64,
    /// Standard deviation on each external joint torque (N·m).
    pub torque_std: f64,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: RobotModel<f64>,
    pub initial_q: DVector<f64>,
    pub dt: f64,
    pub duration: f64,
    pub neck: NeckParams,
    pub trajectory: Option<TrajectoryParams>,
    pub factors: FactorParams,
    pub thresholds: Thresholds,
    pub gains: StiffnessGains,
    pub supervisor: SupervisorParams,
    pub world: WorldParams,
    pub noise: SensorNoise,
    pub seed: u64,
    pub compensate_external: bool,
    /// Largest change of any weighting factor per second.
    pub factor_rate: f64,
    pub events: Vec<HumanEvent>,
}

impl SimConfig {
    /// Panda-like arm at its home pose, default neck and path, no events.
    pub fn with_defaults(duration: f64) -> Self {
        let model = RobotModel::panda_like();
        Self {
            initial_q: model.home.clone(),
            model,
            dt: 0.001,
            duration,
            neck: NeckParams::default(),
            trajectory: Some(TrajectoryParams::default()),
            factors: FactorParams::default(),
            thresholds: Thresholds::default(),
            gains: StiffnessGains::default(),
            supervisor: SupervisorParams::default(),
            world: WorldParams::default(),
            noise: SensorNoise::default(),
            seed: 0,
            compensate_external: false,
            factor_rate: 10.0,
            events: vec![],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.dt > 0.0 && self.dt <= crate::dynamics::MAX_STEP) {
            return bad(format!("dt must be in (0, {}]", crate::dynamics::MAX_STEP));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive".into());
        }
        if self.initial_q.len() != self.model.dof() || !self.initial_q.iter().all(|v| v.is_finite()) {
            return bad(format!("initial_q must hold {} finite angles", self.model.dof()));
        }
        if let Some(v) = self.neck.violation() {
            return bad(v.into());
        }
        if let Some(v) = self.factors.violation() {
            return bad(v.into());
        }
        if let Some(v) = self.trajectory.as_ref().and_then(|t| t.violation()) {
            return bad(v.into());
        }
        self.thresholds.validate()?;
        if !(self.factor_rate > 0.0) {
            return bad("factor_rate must be positive".into());
        }
        if !(self.noise.force_std >= 0.0 && self.noise.torque_std >= 0.0) {
            return bad("noise standard deviations must be non-negative".into());
        }
        for (i, e) in self.events.iter().enumerate() {
            if let Some(v) = e.violation(self.model.dof()) {
                return bad(format!("event {i} ({}): {v}", e.kind()));
            }
        }
        Ok(())
    }
}

/// Storage function `½q̇ᵀMq̇ + ½x̃1ᵀK1x̃1 + ½K2x̃2²`.
pub fn storage_function(
    mass: &DMatrix<f64>,
    state: &JointState<f64>,
    pose: &Pose<f64>,
    targets: &TaskTargets<f64>,
    params: &ImpedanceParams<f64>,
) -> f64 {
    let kinetic = 0.5 * state.qd.dot(&(mass * &state.qd));
    let e1 = pose.error_from(&targets.x1d);
    let e2 = state.q[0] - targets.x2d;
    kinetic + 0.5 * e1.dot(&params.k1.component_mul(&e1)) + 0.5 * params.k2 * e2 * e2
}

/// Stiffness-variation part of the storage change: `½x̃ᵀΔKx̃`.
pub fn stiffness_variation(
    error1: &Vector6<f64>,
    error2: f64,
    before: &ImpedanceParams<f64>,
    after: &ImpedanceParams<f64>,
) -> f64 {
    let dk = after.k1 - before.k1;
    0.5 * error1.dot(&dk.component_mul(error1)) + 0.5 * (after.k2 - before.k2) * error2 * error2
}

fn quaternion_array(pose: &Pose<f64>) -> [f64; 4] {
    let q = pose.orientation.quaternion();
    [q.i, q.j, q.k, q.w]
}

/// The simulated world; the single writer of its own state.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: SimConfig,
    state: JointState<f64>,
    step: u64,
    decoupler: Decoupler<f64>,
    supervisor: SupervisorState<f64>,
    trajectory: Option<TrajectoryBuffer<f64>>,
    schedule: EventSchedule,
    rng: ChaCha8Rng,
    previous_params: Option<ImpedanceParams<f64>>,
    previous_factors: Option<Factors<f64>>,
    singular_steps: u64,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let trajectory = match &config.trajectory {
            Some(t) => Some(scan_trajectory(t, config.neck.radius)?),
            None => None,
        };
        let total = config.trajectory.map_or(1.0, |t| t.total_time);
        let supervisor = SupervisorState::new(config.thresholds, config.supervisor, total, config.dt)?;
        Ok(Self {
            state: JointState::at_rest(config.initial_q.clone()),
            step: 0,
            decoupler: Decoupler::new(config.dt),
            supervisor,
            trajectory,
            schedule: EventSchedule::new(config.events.clone()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            previous_params: None,
            previous_factors: None,
            singular_steps: 0,
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &JointState<f64> {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.dt
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.time() >= self.config.duration - 0.5 * self.config.dt
    }

    pub fn supervisor(&self) -> &SupervisorState<f64> {
        &self.supervisor
    }

    pub fn events(&self) -> &[HumanEvent] {
        self.schedule.events()
    }

    pub fn singular_steps(&self) -> u64 {
        self.singular_steps
    }

    /// Adds an event; its times are absolute simulation seconds.
    pub fn inject(&mut self, event: HumanEvent) -> Result<(), SimError> {
        if let Some(v) = event.violation(self.config.model.dof()) {
            return Err(SimError::Config(format!("{}: {v}", event.kind())));
        }
        self.schedule.push(event);
        Ok(())
    }

    pub fn set_gains(&mut self, gains: StiffnessGains) {
        self.config.gains = gains;
    }

    pub fn set_factor_params(&mut self, params: FactorParams) -> Result<(), SimError> {
        if let Some(v) = params.violation() {
            return Err(SimError::Config(v.into()));
        }
        self.config.factors = params;
        Ok(())
    }

    pub fn set_thresholds(&mut self, thresholds: Thresholds) -> Result<(), SimError> {
        self.supervisor.set_thresholds(thresholds)?;
        self.config.thresholds = thresholds;
        Ok(())
    }

    pub fn set_supervisor_params(&mut self, params: SupervisorParams) {
        self.supervisor.set_params(params);
        self.config.supervisor = params;
    }

    /// Back to time zero with the configured events.
    pub fn reset(&mut self) {
        let fresh = Simulation::new(self.config.clone()).expect("configuration was validated at construction");
        *self = fresh;
    }

    fn decouple(&mut self, terms: &DynamicTerms<f64>) -> Result<(HierarchyDecomposition<f64>, bool), SimError> {
        match self.decoupler.decouple(terms, &self.state, false) {
            Ok(d) => Ok((d, false)),
            Err(HierarchyError::Singular { ratio, .. }) => {
                warn!(
                    "task Jacobian near singular (ratio {ratio:.3e}) at t = {:.4} s",
                    self.time()
                );
                let d = self.decoupler.decouple(terms, &self.state, true)?;
                Ok((d, true))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Advances one control cycle and returns its telemetry.
    pub fn step(&mut self) -> Result<TelemetryRecord, SimError> {
        let t = self.time();
        let dt = self.config.dt;
        let terms = DynamicTerms::compute(&self.config.model, &self.state);
        let (decomp, singular) = self.decouple(&terms)?;
        if singular {
            self.singular_steps += 1;
        }
        let pose = terms.kinematics.end_effector;
        let twist = Vector6::from_column_slice((&terms.jacobian * &self.state.qd).as_slice());

        // Events and ground truth.
        let world = self
            .schedule
            .evaluate(t, &self.config.neck, &self.config.world, &pose, &twist, &decomp.jbar2);
        let probe_velocity = twist.fixed_rows::<3>(0).into_owned();
        let contact = probe_contact_wrench(&pose, &probe_velocity, &world.neck);
        let f_1e = contact.wrench + world.probe_wrench;
        let f_vec = DVector::from_column_slice(f_1e.as_slice());
        let tau_e = terms.jacobian.transpose() * &f_vec + &world.body_torque;
        let f_z_e = contact.f_z_e + world.probe_push;

        // Perception snapshot and factors.
        let d_p: Vector3<f64> = world.neck.to_local(&pose.position);
        let mut snapshot = PerceptionSnapshot {
            d_h: world.d_h,
            d_b: world.d_b,
            d_p,
            f_z_e,
            tau_e: tau_e.clone(),
            f_1e,
        };
        self.add_noise(&mut snapshot);
        let raw = compute_factors(&snapshot, &self.config.factors, &terms.jacobian);
        let factors = match &self.previous_factors {
            Some(prev) => raw.slew_from(prev, self.config.factor_rate * dt),
            None => raw,
        };
        let tau_n_norm = null_space_torque(&snapshot.tau_e, &terms.jacobian, &snapshot.f_1e).norm();

        // Mode and targets.
        let trajectory = self
            .trajectory
            .as_ref()
            .filter(|_| self.config.trajectory.is_some_and(|p| t >= p.available_at));
        let cycle = self.supervisor.step(&CycleInputs {
            factors: &factors,
            pose: &pose,
            q1: self.state.q[0],
            trajectory,
            frame: &world.neck.pose,
            avoid_side: world.avoid_side,
        })?;
        let targets = cycle.targets;

        // Stiffness and torque.
        let params = schedule_stiffness(&factors, &self.config.gains);
        let cmd = total_control(
            &decomp,
            &ControlInputs {
                targets: &targets,
                params: &params,
                pose: &pose,
                state: &self.state,
                gravity: &terms.gravity,
                tau_e: &tau_e,
                compensate_external: self.config.compensate_external,
            },
        )?;

        // Energy bookkeeping around the dynamics step.
        let error1 = pose.error_from(&targets.x1d);
        let error2 = self.state.q[0] - targets.x2d;
        let stiffness_power = self
            .previous_params
            .map_or(0.0, |prev| stiffness_variation(&error1, error2, &prev, &params));
        let storage = storage_function(&terms.mass, &self.state, &pose, &targets, &params);
        let next = step_with_terms(&terms, &self.state, &cmd.tau, &tau_e, dt)?;
        if !next.is_finite() {
            return Err(SimError::NonFinite { time: t + dt });
        }
        let next_pose = forward_kinematics(&self.config.model, &next.q);
        let next_mass = mass_matrix(&self.config.model, &next.q);
        let storage_next = storage_function(&next_mass, &next, &next_pose, &targets, &params);
        let external_work = 0.5 * (&self.state.qd + &next.qd).dot(&tau_e) * dt;
        let energy_residual = storage_next - storage - external_work;

        let qd = &self.state.qd;
        let tau_d_norm = cmd.tau_d.norm() * qd.norm();
        let compensation_power = if tau_d_norm > 0.0 {
            cmd.tau_d.dot(qd).abs() / tau_d_norm
        } else {
            0.0
        };
        let tau2_norm = cmd.tau_2.norm();
        let transparency = if tau2_norm > 0.0 {
            let chol = decomp
                .mass
                .clone()
                .cholesky()
                .ok_or(HierarchyError::NotPositiveDefinite)?;
            (&decomp.jbar1 * chol.solve(&cmd.tau_2)).norm() / tau2_norm
        } else {
            0.0
        };

        let neck_pose = Pose::new(world.neck.pose.translation.vector, world.neck.pose.rotation);
        let record = TelemetryRecord {
            time: t,
            mode: cycle.mode,
            a_h: factors.a_h,
            a_p: factors.a_p,
            a_f: factors.a_f,
            a_n: factors.a_n,
            a_b: factors.a_b,
            k_d1: params.k1[0],
            k_d2: params.k2,
            error: error1.into(),
            x1d: targets.x1d.position.into(),
            f_z_e,
            tau_n_norm,
            energy_residual,
            t_p: self.supervisor.progress(),
            q1: self.state.q[0],
            x2d: targets.x2d,
            compensation_power,
            transparency,
            stiffness_power,
            storage,
            singular,
            probe_position: pose.position.into(),
            probe_orientation: quaternion_array(&pose),
            neck_position: neck_pose.position.into(),
            neck_orientation: quaternion_array(&neck_pose),
            d_h: world.d_h,
            d_b: world.d_b,
            q: self.state.q.iter().copied().collect(),
        };
        if self.step.is_multiple_of(1000) {
            debug!(
                "t = {t:.3} s mode {} |x̃| = {:.4}",
                cycle.mode,
                record.translational_error()
            );
        }
        self.state = next;
        self.previous_params = Some(params);
        self.previous_factors = Some(factors);
        self.step += 1;
        Ok(record)
    }

    fn add_noise(&mut self, snapshot: &mut PerceptionSnapshot<f64>) {
        let SensorNoise { force_std, torque_std } = self.config.noise;
        if force_std > 0.0 {
            let n = Normal::new(0.0, force_std).expect("validated standard deviation");
            snapshot.f_z_e += n.sample(&mut self.rng);
        }
        if torque_std > 0.0 {
            let n = Normal::new(0.0, torque_std).expect("validated standard deviation");
            for v in snapshot.tau_e.iter_mut() {
                *v += n.sample(&mut self.rng);
            }
        }
    }

    /// Runs to the configured duration.
    pub fn run(&mut self) -> Result<Vec<TelemetryRecord>, SimError> {
        let n = (self.config.duration / self.config.dt).round() as usize;
        let mut out = Vec::with_capacity(n);
        while !self.is_finished() {
            out.push(self.step()?);
        }
        Ok(out)
    }
}

/// Fraction of records spent in each mode, in `Mode::ALL` order.
pub fn mode_occupancy(records: &[TelemetryRecord]) -> Vec<(Mode, f64)> {
    let total = records.len().max(1) as f64;
    Mode::ALL
        .iter()
        .map(|m| (*m, records.iter().filter(|r| r.mode == *m).count() as f64 / total))
        .collect()
}

/// Consecutive distinct modes in the order they occurred.
pub fn mode_timeline(records: &[TelemetryRecord]) -> Vec<(Mode, f64)> {
    let mut out: Vec<(Mode, f64)> = vec![];
    for r in records {
        if out.last().map(|(m, _)| *m) != Some(r.mode) {
            out.push((r.mode, r.time));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_is_zero_at_rest_on_target() {
        let model = RobotModel::<f64>::panda_like();
        let state = JointState::at_rest(model.home.clone());
        let pose = forward_kinematics(&model, &state.q);
        let targets = TaskTargets::regulation(pose, state.q[0]);
        let params = ImpedanceParams::full(&StiffnessGains::default());
        let m = mass_matrix(&model, &state.q);
        assert!(storage_function(&m, &state, &pose, &targets, &params).abs() < 1e-25);
    }

    #[test]
    fn stiffness_variation_algebra() {
        let before = ImpedanceParams::full(&StiffnessGains::default());
        let mut after = before;
        after.k1 *= 0.5;
        after.k2 *= 0.25;
        let e1 = Vector6::new(0.01, -0.02, 0.0, 0.1, 0.0, 0.0);
        let e2 = 0.2;
        // Halving 3000 N/m and 30 N·m/rad, quartering 10 N·m/rad.
        let oracle = 0.5 * (-1500.0 * (1e-4 + 4e-4) - 15.0 * 0.01) + 0.5 * (-7.5 * 0.04);
        assert!((stiffness_variation(&e1, e2, &before, &after) - oracle).abs() < 1e-15);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = SimConfig::with_defaults(1.0);
        c.dt = 0.01;
        assert!(matches!(Simulation::new(c), Err(SimError::Config(_))));
        let mut c = SimConfig::with_defaults(1.0);
        c.events.push(HumanEvent::PushProbe {
            start: 1.0,
            end: 0.5,
            force: 1.0,
        });
        let err = Simulation::new(c).unwrap_err().to_string();
        assert!(err.contains("event 0"), "{err}");
    }
}
