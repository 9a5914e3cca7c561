//! Quasistatic time stepping: forward solve, exponential-map predictor,
//! projection corrector, event detection and trajectory recording.

use nalgebra::{DVector, Vector3, Vector6};
use serde::Serialize;
use thiserror::Error;

use crate::control::{hand_jacobian, ControlError, Controller};
use crate::grasp::{project_to_manifold, GraspError, GraspState, ObjectConstraint, ProjectionOptions};
use crate::lie::{rotation_angle, Transform};
use crate::mechanics::{assemble, forward_solve, inverse_map, MechanicsError};
use crate::qp::min_norm_solution;
use crate::scenario::{ControlSpec, FrictionPolicy, Scenario, ScenarioError};

/// A drop of `σ_min` by more than this factor in one step is reported.
pub const SIGMA_DROP_WARNING: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("requested object twist leaves the admissible subspace (residual {residual:.3e})")]
    OutsideSubspace { residual: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ContactBreak,
    FrictionViolation,
    SingularSystem,
    ChartReseat,
    ConstraintInfeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimEvent {
    pub kind: EventKind,
    pub time: f64,
    pub step: usize,
    pub finger: Option<usize>,
    /// Whether the event ended the run.
    pub terminal: bool,
    pub payload: serde_json::Value,
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    SingularSystem,
    ContactBreak,
    FrictionViolation,
    ConstraintInfeasible,
    /// The corrector failed or the state left the model's domain.
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub object_pose: Transform,
    pub anchors: Vec<Transform>,
    pub tips: Vec<Transform>,
    pub contact_points: Vec<Vector3<f64>>,
    pub normal_forces: Vec<f64>,
    pub tangential_forces: Vec<f64>,
    /// Largest component of the unbalanced object wrench.
    pub equilibrium_residual: f64,
    /// Largest contact gap magnitude.
    pub max_gap: f64,
    pub sigma_min: f64,
    pub sigma_ratio: f64,
    /// Growth of the gap and unbalanced wrench over the predictor, before correction.
    pub predictor_gap: f64,
    pub predictor_unbalanced: f64,
    /// Indices into the event list of events raised at this step.
    pub events: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementLevel {
    pub dt: f64,
    pub steps: usize,
    /// Mean predictor gap per unit time [m/s].
    pub gap_drift_rate: f64,
    /// Mean predictor unbalanced wrench per unit time.
    pub wrench_drift_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementStudy {
    pub horizon: f64,
    pub levels: Vec<RefinementLevel>,
    /// Drift rates decrease monotonically with dt (vacuous when no step was taken).
    pub converging: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub termination: Termination,
    pub steps: usize,
    pub final_time: f64,
    /// Rotation of the object since t = 0 [rad].
    pub rotation_angle: f64,
    pub rotation_vector: [f64; 3],
    /// Displacement of the object origin since t = 0 [m].
    pub center_displacement: f64,
    /// Rotation between desired and final object pose [rad] (closed loop only).
    pub tracking_error: Option<f64>,
    /// Largest rotation away from the pose held at the end of the ramp [rad].
    pub hold_drift: Option<f64>,
    pub max_gap: f64,
    pub max_equilibrium_residual: f64,
    pub min_normal_force: f64,
    pub max_normal_force: f64,
    pub max_friction_ratio: f64,
    pub min_sigma_ratio: f64,
    /// Largest relative mismatch of contact path lengths on object and fingertip.
    pub rolling_mismatch: f64,
    pub path_length_object: Vec<f64>,
    pub path_length_fingertip: Vec<f64>,
    pub anchor_work: f64,
    pub elastic_energy_change: f64,
    pub gravity_energy_change: f64,
    /// `|W − ΔE − ΔU|` over the gross anchor work.
    pub energy_mismatch: f64,
    /// Final translational flexure displacement per finger [m].
    pub flexure_displacement: Vec<f64>,
    /// Largest deviation of a constrained object's axis or plane normal [rad].
    pub constraint_deviation: f64,
    /// Gap and equilibrium tolerances held at every recorded step.
    pub valid: bool,
    pub refinement: Option<RefinementStudy>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub scenario: String,
    pub n: usize,
    pub finger_names: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub events: Vec<SimEvent>,
    pub summary: Summary,
}

/// Result of restricting a twist to a constrained object's motion.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstrainedTwist {
    pub twist: Vector6<f64>,
    /// Coordinates on the admissible motion basis.
    pub coordinates: DVector<f64>,
    /// Wrench the constraint currently exerts on the object (world frame).
    pub absorbed_wrench: Vector6<f64>,
}

/// Checks that `twist` lies in the admissible subspace and reports the
/// wrench the constraint absorbs in `state`.
pub fn enforce_object_constraint(state: &GraspState, twist: &Vector6<f64>) -> Result<ConstrainedTwist, SimError> {
    let s = state.constraint.motion_basis();
    let v = DVector::from_column_slice(twist.as_slice());
    let coordinates = min_norm_solution(&s, &v);
    let projected = &s * &coordinates;
    let residual = (&projected - &v).norm();
    if residual > 1e-9 * (1.0 + twist.norm()) {
        return Err(SimError::OutsideSubspace { residual });
    }
    let lambda = state.constraint_multipliers();
    let absorbed = if lambda.is_empty() {
        Vector6::zeros()
    } else {
        Vector6::from_column_slice((state.constraint.wrench_basis() * lambda).as_slice())
    };
    Ok(ConstrainedTwist {
        twist: Vector6::from_column_slice(projected.as_slice()),
        coordinates,
        absorbed_wrench: absorbed,
    })
}

/// Desired pose and feedforward twist of a closed-loop scenario at `t`.
pub fn desired_motion(scenario: &Scenario, initial: &Transform, t: f64) -> Option<(Transform, Vector6<f64>)> {
    match &scenario.control {
        ControlSpec::ClosedLoop { target, .. } => {
            let v = Vector6::from(target.twist);
            let pose = initial.advanced(&v, t.min(target.ramp_time));
            let feedforward = if t < target.ramp_time { v } else { Vector6::zeros() };
            Some((pose, feedforward))
        }
        ControlSpec::Scripted { .. } => None,
    }
}

fn constraint_axis(c: &ObjectConstraint) -> Option<Vector3<f64>> {
    match c {
        ObjectConstraint::Free => None,
        ObjectConstraint::Axis { direction, .. } => Some(direction.normalize()),
        ObjectConstraint::Planar { normal, .. } => Some(normal.normalize()),
    }
}

struct Accumulators {
    anchor_work: f64,
    gross_work: f64,
    path_object: Vec<f64>,
    path_tip: Vec<f64>,
    constraint_deviation: f64,
    hold_pose: Option<Transform>,
    hold_drift: f64,
}

/// Contact point in object and fingertip body coordinates.
fn body_contact_points(state: &GraspState) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let to_object = state.object.pose.inverse();
    state
        .contacts
        .iter()
        .zip(&state.fingers)
        .map(|(c, f)| (to_object.transform_point(&c.point), f.tip.inverse().transform_point(&c.point)))
        .collect()
}

fn max_unbalanced(state: &GraspState) -> f64 {
    let r = state.unbalanced_wrench();
    if r.is_empty() {
        0.0
    } else {
        r.amax()
    }
}

/// Growth of the gaps and of the unbalanced wrench from `before` to `after`;
/// the corrector's leftover residual cancels out.
fn residual_increment(before: &GraspState, after: &GraspState) -> (f64, f64) {
    let gap = before.gaps().iter().zip(after.gaps()).map(|(a, b)| (b - a).abs()).fold(0.0, f64::max);
    let wrench = (after.unbalanced_wrench() - before.unbalanced_wrench()).iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    (gap, wrench)
}

fn max_gap(state: &GraspState) -> f64 {
    state.gaps().iter().fold(0.0, |m, g| m.max(g.abs()))
}

pub struct Simulator {
    scenario: Scenario,
    state: GraspState,
    controller: Option<Controller>,
    initial_pose: Transform,
    projection: ProjectionOptions,
    dt: f64,
    total_steps: usize,
    step: usize,
    prev_sigma_min: Option<f64>,
    events: Vec<SimEvent>,
    records: Vec<StepRecord>,
    pending: Vec<usize>,
    predictor: (f64, f64),
    acc: Accumulators,
    initial_energy: (f64, f64),
    termination: Option<Termination>,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        Self::with_dt(scenario, scenario.sim.dt, scenario.sim.duration)
    }

    /// Simulator over `duration` with step `dt` (overriding the scenario's).
    pub fn with_dt(scenario: &Scenario, dt: f64, duration: f64) -> Result<Self, SimError> {
        let (state, _) = scenario.build()?;
        if let ControlSpec::ClosedLoop { target, .. } = &scenario.control {
            enforce_object_constraint(&state, &Vector6::from(target.twist))?;
        }
        let controller = match scenario.controller_config() {
            Some(mut config) => {
                config.period = dt;
                Some(Controller::new(config, &state).map_err(|e| ScenarioError::Invalid(e.to_string()))?)
            }
            None => None,
        };
        let initial_energy = (state.elastic_energy().map_err(ScenarioError::Seeding)?, state.gravity_potential());
        let n = state.n();
        Ok(Simulator {
            scenario: scenario.clone(),
            initial_pose: state.object.pose.clone(),
            projection: scenario.sim.tolerances.projection(),
            dt,
            total_steps: (duration / dt).round().max(1.0) as usize,
            step: 0,
            prev_sigma_min: None,
            events: Vec::new(),
            records: Vec::new(),
            pending: Vec::new(),
            predictor: (0.0, 0.0),
            acc: Accumulators {
                anchor_work: 0.0,
                gross_work: 0.0,
                path_object: vec![0.0; n],
                path_tip: vec![0.0; n],
                constraint_deviation: 0.0,
                hold_pose: None,
                hold_drift: 0.0,
            },
            initial_energy,
            termination: None,
            controller,
            state,
        })
    }

    pub fn state(&self) -> &GraspState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    fn event(&mut self, kind: EventKind, finger: Option<usize>, terminal: bool, payload: serde_json::Value) {
        self.events.push(SimEvent {
            kind,
            time: self.time(),
            step: self.step,
            finger,
            terminal,
            payload,
        });
        self.pending.push(self.events.len() - 1);
    }

    fn terminate(&mut self, why: Termination) {
        if self.termination.is_none() {
            self.termination = Some(why);
        }
    }

    fn record(&mut self, sigma_min: f64, sigma_ratio: f64) {
        let s = &self.state;
        let n = s.n();
        let mut normal = Vec::with_capacity(n);
        let mut tangential = Vec::with_capacity(n);
        for (fz, ft) in s.contact_force_components() {
            normal.push(fz);
            tangential.push(ft);
        }
        let rec = StepRecord {
            step: self.step,
            time: self.time(),
            object_pose: s.object.pose.clone(),
            anchors: s.fingers.iter().map(|f| f.anchor.clone()).collect(),
            tips: s.fingers.iter().map(|f| f.tip.clone()).collect(),
            contact_points: s.contacts.iter().map(|c| c.point).collect(),
            normal_forces: normal,
            tangential_forces: tangential,
            equilibrium_residual: max_unbalanced(s),
            max_gap: max_gap(s),
            sigma_min,
            sigma_ratio,
            predictor_gap: self.predictor.0,
            predictor_unbalanced: self.predictor.1,
            events: std::mem::take(&mut self.pending),
        };
        self.records.push(rec);
    }

    fn check_contacts(&mut self) {
        let mu = self.scenario.sim.mu;
        let gap_tol = self.scenario.sim.tolerances.gap;
        let soft = self.scenario.sim.friction == FrictionPolicy::Soft;
        let forces = self.state.contact_force_components();
        let gaps = self.state.gaps();
        for (i, ((normal, tangential), gap)) in forces.into_iter().zip(gaps).enumerate() {
            if normal <= 0.0 || gap > gap_tol {
                self.event(
                    EventKind::ContactBreak,
                    Some(i),
                    true,
                    serde_json::json!({ "normal_force": normal, "gap": gap }),
                );
                self.terminate(Termination::ContactBreak);
            } else if tangential / normal > mu {
                self.event(
                    EventKind::FrictionViolation,
                    Some(i),
                    !soft,
                    serde_json::json!({ "ratio": tangential / normal, "mu": mu }),
                );
                if !soft {
                    self.terminate(Termination::FrictionViolation);
                }
            }
        }
    }

    fn reseat_events(&mut self, reseats: &[(usize, bool, bool)]) {
        for &(i, object, tip) in reseats {
            self.event(
                EventKind::ChartReseat,
                Some(i),
                false,
                serde_json::json!({ "object_chart": object, "fingertip_chart": tip }),
            );
        }
    }

    /// Anchor twists commanded for the current state, and the joint rates
    /// behind them in closed loop.
    fn controls(&mut self, sys: &crate::mechanics::ConstraintSystem) -> Result<(Vec<Vector6<f64>>, Option<Vec<DVector<f64>>>), ControlError> {
        let t = self.time();
        let Some(controller) = self.controller.as_mut() else {
            return Ok((self.scenario.scripted_twists(t), None));
        };
        let (t_d, v_d) = desired_motion(&self.scenario, &self.initial_pose, t).expect("closed loop");
        let inv = inverse_map(sys)?;
        let cmd = controller.control_step_with(&self.state, sys, &inv, &t_d, &v_d)?;
        let xi = hand_jacobian(&self.state);
        let stacked = DVector::from_iterator(xi.ncols(), cmd.joint_rates.iter().flat_map(|r| r.iter().copied()));
        let v_a = xi * stacked;
        let twists = (0..self.state.n()).map(|i| Vector6::from_column_slice(v_a.rows(6 * i, 6).as_slice())).collect();
        Ok((twists, Some(cmd.joint_rates)))
    }

    /// Records the current state and advances one step. Returns `false` once
    /// the run is over (after recording its last state).
    pub fn step(&mut self) -> bool {
        if self.termination.is_some() {
            if self.records.last().is_none_or(|r| r.step != self.step) {
                self.record(f64::NAN, f64::NAN);
            }
            return false;
        }
        let sys = match assemble(&self.state) {
            Ok(sys) => sys,
            Err(e) => {
                self.event(EventKind::SingularSystem, None, true, serde_json::json!({ "error": e.to_string() }));
                self.terminate(Termination::SingularSystem);
                self.record(f64::NAN, f64::NAN);
                return false;
            }
        };
        let finished = self.step >= self.total_steps;
        let controls = if finished {
            Ok((vec![Vector6::zeros(); self.state.n()], None))
        } else {
            self.controls(&sys)
        };
        let (v_a, joint_rates) = match controls {
            Ok(c) => c,
            Err(ControlError::Infeasible { violated, max_violation }) => {
                let rows: Vec<_> = violated.iter().map(|(f, k)| serde_json::json!({ "finger": f, "kind": k })).collect();
                self.event(
                    EventKind::ConstraintInfeasible,
                    None,
                    true,
                    serde_json::json!({ "rows": rows, "max_violation": max_violation }),
                );
                self.terminate(Termination::ConstraintInfeasible);
                (vec![Vector6::zeros(); self.state.n()], None)
            }
            Err(ControlError::Mechanics(MechanicsError::Singular { sigma_min, sigma_max })) => {
                self.event(
                    EventKind::SingularSystem,
                    None,
                    true,
                    serde_json::json!({ "sigma_min": sigma_min, "sigma_max": sigma_max }),
                );
                self.terminate(Termination::SingularSystem);
                (vec![Vector6::zeros(); self.state.n()], None)
            }
            Err(e) => {
                self.event(EventKind::ConstraintInfeasible, None, true, serde_json::json!({ "error": e.to_string() }));
                self.terminate(Termination::NumericalFailure);
                (vec![Vector6::zeros(); self.state.n()], None)
            }
        };
        let stacked = DVector::from_iterator(6 * v_a.len(), v_a.iter().flat_map(|v| v.iter().copied()));
        let sol = forward_solve(&sys, &stacked).expect("dimensions match");
        let ratio = sol.sigma_ratio();
        if sol.singular && self.termination != Some(Termination::SingularSystem) {
            self.event(
                EventKind::SingularSystem,
                None,
                true,
                serde_json::json!({ "sigma_min": sol.sigma_min, "sigma_max": sol.sigma_max, "sigma_ratio": ratio }),
            );
            self.terminate(Termination::SingularSystem);
        } else if let Some(prev) = self.prev_sigma_min {
            if prev > SIGMA_DROP_WARNING * sol.sigma_min {
                self.event(
                    EventKind::SingularSystem,
                    None,
                    false,
                    serde_json::json!({ "warning": "sigma_min dropped", "previous": prev, "sigma_min": sol.sigma_min }),
                );
            }
        }
        self.prev_sigma_min = Some(sol.sigma_min);
        self.record(sol.sigma_min, ratio);
        if finished || self.termination.is_some() {
            self.terminate(Termination::Completed);
            return false;
        }
        let motion = sol.motion.expect("nonsingular");
        self.advance(&v_a, joint_rates.as_deref(), &motion);
        true
    }

    fn advance(&mut self, v_a: &[Vector6<f64>], joint_rates: Option<&[DVector<f64>]>, motion: &crate::mechanics::Motion) {
        let dt = self.dt;
        let before_wrenches: Vec<Vector6<f64>> = self.state.wrenches.iter().map(|w| w.to_vector()).collect();
        let before_points = body_contact_points(&self.state);
        let mut next = self.state.clone();
        next.object.pose = self.state.object.pose.advanced(&motion.object_twist, dt);
        for i in 0..next.n() {
            let model = &next.hand[i];
            let finger = &mut next.fingers[i];
            finger.tip = finger.tip.advanced(&motion.fingertip_twists[i], dt);
            match joint_rates {
                Some(rates) => {
                    finger.theta += &rates[i] * dt;
                    finger.anchor = model.forward_kinematics(&finger.theta);
                }
                None => finger.anchor = finger.anchor.advanced(&v_a[i], dt),
            }
        }
        self.step += 1;
        let reseats = match next.refresh() {
            Ok(r) => r,
            Err(e) => return self.fail(e),
        };
        self.reseat_events(&reseats);
        self.predictor = residual_increment(&self.state, &next);
        let (corrected, report) = match project_to_manifold(&next, &self.projection) {
            Ok(r) => r,
            Err(e) => return self.fail(e),
        };
        self.reseat_events(&report.reseats);
        if self.controller.is_some() {
            for (k, (model, finger)) in corrected.hand.iter().zip(&corrected.fingers).enumerate() {
                if let Err(e) = model.check_joints(k, &finger.theta) {
                    self.state = corrected.clone();
                    return self.fail(e);
                }
            }
        }
        for i in 0..corrected.n() {
            let after = corrected.wrenches[i].to_vector();
            let power = 0.5 * (before_wrenches[i] + after).dot(&v_a[i]);
            self.acc.anchor_work += power * dt;
            self.acc.gross_work += power.abs() * dt;
        }
        for (i, (after, before)) in body_contact_points(&corrected).iter().zip(&before_points).enumerate() {
            self.acc.path_object[i] += (after.0 - before.0).norm();
            self.acc.path_tip[i] += (after.1 - before.1).norm();
        }
        if let Some(axis) = constraint_axis(&corrected.constraint) {
            let moved = corrected.object.pose.rotation_matrix() * self.initial_pose.rotation_matrix().transpose() * axis;
            let deviation = moved.cross(&axis).norm().atan2(moved.dot(&axis));
            self.acc.constraint_deviation = self.acc.constraint_deviation.max(deviation);
        }
        if let ControlSpec::ClosedLoop { target, .. } = &self.scenario.control {
            let t = self.time();
            if t >= target.ramp_time - 0.5 * dt {
                match &self.acc.hold_pose {
                    None => self.acc.hold_pose = Some(corrected.object.pose.clone()),
                    Some(hold) => {
                        let r = hold.rotation_matrix().transpose() * corrected.object.pose.rotation_matrix();
                        self.acc.hold_drift = self.acc.hold_drift.max(rotation_angle(&r));
                    }
                }
            }
        }
        self.state = corrected;
        self.check_contacts();
    }

    /// Ends the run on a state that cannot be advanced. A joint leaving its
    /// range means the commanded motion is not realizable by the hand; any
    /// other failure means the quasistatic state was lost.
    fn fail(&mut self, e: GraspError) {
        let (kind, finger) = match &e {
            GraspError::JointLimit { finger, .. } => (EventKind::ConstraintInfeasible, Some(*finger)),
            GraspError::DisplacementLimit { finger, .. } => (EventKind::SingularSystem, Some(*finger)),
            _ => (EventKind::SingularSystem, None),
        };
        self.event(kind, finger, true, serde_json::json!({ "error": e.to_string() }));
        self.termination = Some(Termination::NumericalFailure);
    }

    pub fn run(mut self) -> TrajectoryRecord {
        while self.step() {}
        self.finish()
    }

    fn finish(self) -> TrajectoryRecord {
        let s = &self.state;
        let rel = self.initial_pose.rotation_matrix().transpose() * s.object.pose.rotation_matrix();
        let rotation_vector = crate::lie::so3_log(&rel).unwrap_or_else(|_| Vector3::repeat(f64::NAN));
        let world_rotation = self.initial_pose.rotation_matrix() * rotation_vector;
        let tracking_error = desired_motion(&self.scenario, &self.initial_pose, self.time()).map(|(t_d, _)| {
            let r = t_d.rotation_matrix().transpose() * s.object.pose.rotation_matrix();
            rotation_angle(&r)
        });
        let hold_drift = match &self.scenario.control {
            ControlSpec::ClosedLoop { .. } => Some(self.acc.hold_drift),
            ControlSpec::Scripted { .. } => None,
        };
        let fold = |f: &dyn Fn(&StepRecord) -> f64, init: f64, pick: fn(f64, f64) -> f64| self.records.iter().map(f).fold(init, pick);
        let max_gap = fold(&|r| r.max_gap, 0.0, f64::max);
        let max_eq = fold(&|r| r.equilibrium_residual, 0.0, f64::max);
        let min_normal = fold(&|r| r.normal_forces.iter().copied().fold(f64::INFINITY, f64::min), f64::INFINITY, f64::min);
        let max_normal = fold(&|r| r.normal_forces.iter().copied().fold(0.0, f64::max), 0.0, f64::max);
        let max_friction = fold(
            &|r| r.normal_forces.iter().zip(&r.tangential_forces).map(|(n, t)| t / n).fold(0.0, f64::max),
            0.0,
            f64::max,
        );
        let min_ratio = fold(&|r| r.sigma_ratio, f64::INFINITY, |a, b| if b.is_nan() { a } else { a.min(b) });
        let rolling_mismatch = self
            .acc
            .path_object
            .iter()
            .zip(&self.acc.path_tip)
            .map(|(a, b)| {
                let scale = a.max(*b);
                if scale > 1e-9 {
                    (a - b).abs() / scale
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        let elastic = s.elastic_energy().unwrap_or(f64::NAN) - self.initial_energy.0;
        let gravity = s.gravity_potential() - self.initial_energy.1;
        let energy_mismatch = if self.acc.gross_work > 1e-12 {
            (self.acc.anchor_work - elastic - gravity).abs() / self.acc.gross_work
        } else {
            0.0
        };
        let flexure = s
            .displacements()
            .map(|d| d.iter().map(|x| x.fixed_rows::<3>(3).norm()).collect())
            .unwrap_or_default();
        let tol = &self.scenario.sim.tolerances;
        let summary = Summary {
            scenario: self.scenario.name.clone(),
            termination: self.termination.unwrap_or(Termination::Completed),
            steps: self.step,
            final_time: self.time(),
            rotation_angle: rotation_angle(&rel),
            rotation_vector: world_rotation.into(),
            center_displacement: (s.object.pose.translation() - self.initial_pose.translation()).norm(),
            tracking_error,
            hold_drift,
            max_gap,
            max_equilibrium_residual: max_eq,
            min_normal_force: min_normal,
            max_normal_force: max_normal,
            max_friction_ratio: max_friction,
            min_sigma_ratio: min_ratio,
            rolling_mismatch,
            path_length_object: self.acc.path_object.clone(),
            path_length_fingertip: self.acc.path_tip.clone(),
            anchor_work: self.acc.anchor_work,
            elastic_energy_change: elastic,
            gravity_energy_change: gravity,
            energy_mismatch,
            flexure_displacement: flexure,
            constraint_deviation: self.acc.constraint_deviation,
            valid: max_gap < tol.gap && max_eq < tol.equilibrium,
            refinement: None,
        };
        TrajectoryRecord {
            scenario: self.scenario.name.clone(),
            n: s.n(),
            finger_names: s.hand.iter().map(|m| m.name.clone()).collect(),
            steps: self.records,
            events: self.events,
            summary,
        }
    }
}

/// Runs `scenario` to completion, including its refinement study.
pub fn run(scenario: &Scenario) -> Result<TrajectoryRecord, SimError> {
    let mut record = Simulator::new(scenario)?.run();
    let horizon = scenario.sim.refinement_horizon.min(scenario.sim.duration);
    if horizon > 0.0 {
        record.summary.refinement = Some(refinement_study(scenario, horizon)?);
    }
    Ok(record)
}

/// Predictor drift rates at `dt`, `dt/2`, `dt/4` over `horizon`.
pub fn refinement_study(scenario: &Scenario, horizon: f64) -> Result<RefinementStudy, SimError> {
    let mut levels = Vec::new();
    for k in 0..3 {
        let dt = scenario.sim.dt / f64::from(1 << k);
        let record = Simulator::with_dt(scenario, dt, horizon)?.run();
        let advanced: Vec<&StepRecord> = record.steps.iter().filter(|r| r.step > 0).collect();
        let count = advanced.len();
        let mean = |f: &dyn Fn(&StepRecord) -> f64| {
            if count == 0 {
                0.0
            } else {
                advanced.iter().map(|r| f(r)).sum::<f64>() / count as f64 / dt
            }
        };
        levels.push(RefinementLevel {
            dt,
            steps: count,
            gap_drift_rate: mean(&|r| r.predictor_gap),
            wrench_drift_rate: mean(&|r| r.predictor_unbalanced),
        });
    }
    let converging = levels.windows(2).all(|w| {
        let shrinks = |a: f64, b: f64| b <= a || a == 0.0 && b == 0.0;
        shrinks(w[0].gap_drift_rate, w[1].gap_drift_rate) && shrinks(w[0].wrench_drift_rate, w[1].wrench_drift_rate)
    });
    Ok(RefinementStudy { horizon, levels, converging })
}
