//! Scenario documents (TOML), `--set` overrides, and construction of the
//! initial grasp.

use std::sync::Arc;

use nalgebra::{DVector, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControllerConfig, PiGains, SolverMode};
use crate::geometry::{SurfaceKind, SurfaceModel};
use crate::grasp::{
    prismatic_screw, revolute_screw, seed_equilibrium, FingerModel, GraspError, GraspState, Joint, ObjectConstraint, ProjectionOptions, ProjectionReport, RigidObject,
};
use crate::lie::{Frame, Rotation, StiffnessMatrix, Transform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("override `{text}`: {message}")]
    Override { text: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("equilibrium seeding failed: {0}")]
    Seeding(GraspError),
    #[error("unknown bundled scenario `{0}`")]
    UnknownBundled(String),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    #[serde(default)]
    pub position: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    #[serde(default = "identity_quaternion")]
    pub orientation: [f64; 4],
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Default for PoseSpec {
    fn default() -> Self {
        PoseSpec {
            position: [0.0; 3],
            orientation: identity_quaternion(),
        }
    }
}

impl PoseSpec {
    fn to_transform(&self, from: Frame, to: Frame, what: &str) -> Result<Transform> {
        let q = self.orientation;
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 1e-9) || q.iter().chain(&self.position).any(|c| !c.is_finite()) {
            return Err(ScenarioError::Invalid(format!("{what}: pose must be finite with a nonzero quaternion")));
        }
        Ok(Transform::new(Rotation::from_quaternion(q), Vector3::from(self.position), from, to))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub mass: f64,
    pub surface: SurfaceKind,
    /// Surface placement in the object body frame.
    #[serde(default)]
    pub surface_pose: PoseSpec,
    #[serde(default)]
    pub pose: PoseSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StiffnessSpec {
    /// Diagonal rotational stiffness [N·m/rad].
    pub rotational: [f64; 3],
    /// Diagonal translational stiffness [N/m].
    pub translational: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum JointSpec {
    Revolute {
        axis: [f64; 3],
        point: [f64; 3],
        #[serde(default = "neg_inf")]
        lower: f64,
        #[serde(default = "pos_inf")]
        upper: f64,
    },
    Prismatic {
        axis: [f64; 3],
        #[serde(default = "neg_inf")]
        lower: f64,
        #[serde(default = "pos_inf")]
        upper: f64,
    },
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerSpec {
    pub name: String,
    /// Anchor pose at zero joint values.
    pub home: PoseSpec,
    /// Relaxed fingertip pose relative to the anchor.
    #[serde(default)]
    pub rest_offset: PoseSpec,
    pub stiffness: StiffnessSpec,
    pub tip: SurfaceKind,
    /// Tip surface placement in the fingertip frame.
    #[serde(default)]
    pub tip_pose: PoseSpec,
    #[serde(default)]
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub theta: Vec<f64>,
}

/// One constant anchor twist (world frame) applied on `[start, end)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub finger: usize,
    pub start: f64,
    pub end: f64,
    pub twist: [f64; 6],
}

/// Desired object motion: constant world twist for `ramp_time`, then hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub twist: [f64; 6],
    pub ramp_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    Scripted {
        #[serde(default, rename = "segment")]
        segments: Vec<Segment>,
    },
    ClosedLoop {
        #[serde(default = "default_solver")]
        solver: SolverMode,
        #[serde(default)]
        gains: PiGains,
        #[serde(default = "default_speed_limit")]
        joint_speed_limit: f64,
        #[serde(default = "default_f_min")]
        f_min: f64,
        #[serde(default = "default_mu_max")]
        mu_max: f64,
        #[serde(default = "default_constraint_gain")]
        constraint_gain: f64,
        target: TargetSpec,
    },
}

fn default_solver() -> SolverMode {
    SolverMode::Qp
}
fn default_speed_limit() -> f64 {
    ControllerConfig::default().joint_speed_limit
}
fn default_f_min() -> f64 {
    ControllerConfig::default().f_min
}
fn default_mu_max() -> f64 {
    ControllerConfig::default().mu_max
}
fn default_constraint_gain() -> f64 {
    ControllerConfig::default().constraint_gain
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Free,
    Axis { point: [f64; 3], direction: [f64; 3] },
    Planar { point: [f64; 3], normal: [f64; 3] },
}

impl ConstraintSpec {
    pub fn to_constraint(&self) -> ObjectConstraint {
        match *self {
            ConstraintSpec::Free => ObjectConstraint::Free,
            ConstraintSpec::Axis { point, direction } => ObjectConstraint::Axis {
                point: point.into(),
                direction: direction.into(),
            },
            ConstraintSpec::Planar { point, normal } => ObjectConstraint::Planar {
                point: point.into(),
                normal: normal.into(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionPolicy {
    /// Friction violations terminate the run.
    Strict,
    /// Friction violations are reported and the run continues.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest accepted contact gap [m].
    pub gap: f64,
    /// Largest accepted equilibrium residual [N, N·m].
    pub equilibrium: f64,
    pub projection_gap: f64,
    pub projection_moment: f64,
    pub projection_equilibrium: f64,
    pub projection_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let p = ProjectionOptions::default();
        Tolerances {
            gap: 1e-6,
            equilibrium: 1e-3,
            projection_gap: p.gap_tolerance,
            projection_moment: p.moment_tolerance,
            projection_equilibrium: p.equilibrium_tolerance,
            projection_iterations: p.max_iterations,
        }
    }
}

impl Tolerances {
    pub fn projection(&self) -> ProjectionOptions {
        ProjectionOptions {
            gap_tolerance: self.projection_gap,
            moment_tolerance: self.projection_moment,
            equilibrium_tolerance: self.projection_equilibrium,
            max_iterations: self.projection_iterations,
            ..ProjectionOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    pub duration: f64,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default = "free")]
    pub constraint: ConstraintSpec,
    #[serde(default = "strict")]
    pub friction: FrictionPolicy,
    /// Friction coefficient used for violation events.
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Horizon of the dt, dt/2, dt/4 study [s]; zero disables it.
    #[serde(default = "default_refinement")]
    pub refinement_horizon: f64,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}
fn free() -> ConstraintSpec {
    ConstraintSpec::Free
}
fn strict() -> FrictionPolicy {
    FrictionPolicy::Strict
}
fn default_mu() -> f64 {
    1.0
}
fn default_refinement() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub object: ObjectSpec,
    #[serde(rename = "finger")]
    pub fingers: Vec<FingerSpec>,
    pub control: ControlSpec,
    pub sim: SimSpec,
}

/// Converts a byte offset into 1-based line and column.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text.as_bytes()[..offset];
    let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
    let column = offset - before.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

fn parse_error(text: &str, err: toml::de::Error) -> ScenarioError {
    let (line, column) = err.span().map_or((0, 0), |s| line_column(text, s.start));
    ScenarioError::Parse {
        line,
        column,
        message: err.message().to_string(),
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// A parsed `key=value` override with a dotted path.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: toml::Value,
    text: String,
}

pub fn parse_override(text: &str) -> Result<Override> {
    let err = |message: &str| ScenarioError::Override {
        text: text.to_string(),
        message: message.to_string(),
    };
    let (key, raw) = text.split_once('=').ok_or_else(|| err("expected key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(err("empty key"));
    }
    let path: Vec<String> = key.split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(err("empty path segment"));
    }
    Ok(Override {
        path,
        value: parse_override_value(raw.trim()),
        text: text.to_string(),
    })
}

fn set_path(node: &mut toml::Value, path: &[String], value: toml::Value) -> std::result::Result<(), String> {
    let Some((key, rest)) = path.split_first() else {
        *node = value;
        return Ok(());
    };
    match node {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(key.clone(), value);
                return Ok(());
            }
            let child = t.entry(key.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            set_path(child, rest, value)
        }
        toml::Value::Array(a) => {
            let index: usize = key.parse().map_err(|_| format!("`{key}` is not an array index"))?;
            let len = a.len();
            let child = a.get_mut(index).ok_or_else(|| format!("index {index} out of range (length {len})"))?;
            set_path(child, rest, value)
        }
        _ => Err(format!("cannot descend into `{key}`: parent is not a table or array")),
    }
}

fn apply_override(doc: toml::Table, ov: &Override) -> Result<toml::Table> {
    let mut root = toml::Value::Table(doc);
    set_path(&mut root, &ov.path, ov.value.clone()).map_err(|message| ScenarioError::Override {
        text: ov.text.clone(),
        message,
    })?;
    match root {
        toml::Value::Table(t) => Ok(t),
        _ => unreachable!("root stays a table"),
    }
}

/// Parses a scenario document and applies overrides before validation.
pub fn parse_scenario_with(text: &str, overrides: &[Override]) -> Result<Scenario> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    if overrides.is_empty() {
        let scenario: Scenario = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        scenario.validate()?;
        return Ok(scenario);
    }
    for ov in overrides {
        doc = apply_override(doc, ov)?;
    }
    let rendered = toml::to_string(&doc).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    let scenario: Scenario = toml::from_str(&rendered).map_err(|e| {
        let inner = parse_error(&rendered, e);
        match inner {
            ScenarioError::Parse { message, .. } => ScenarioError::Invalid(format!("after overrides: {message}")),
            other => other,
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    parse_scenario_with(text, &[])
}

const BUNDLED: &[(&str, &str)] = &[
    ("fig6_disk", include_str!("../scenarios/fig6_disk.toml")),
    ("cylinder_twist", include_str!("../scenarios/cylinder_twist.toml")),
    ("degenerate_parallel_plates", include_str!("../scenarios/degenerate_parallel_plates.toml")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_source(name: &str) -> Result<&'static str> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| ScenarioError::UnknownBundled(name.to_string()))
}

pub fn bundled(name: &str) -> Result<Scenario> {
    parse_scenario(bundled_source(name)?)
}

fn vector_ok(v: &[f64]) -> bool {
    v.iter().all(|c| c.is_finite())
}

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ScenarioError::Invalid(msg.into()))
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let sim = &self.sim;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return invalid("sim.dt must be positive");
        }
        if !(sim.duration > 0.0 && sim.duration.is_finite()) {
            return invalid("sim.duration must be positive");
        }
        if !(sim.refinement_horizon >= 0.0) {
            return invalid("sim.refinement_horizon must be nonnegative");
        }
        if !(sim.mu > 0.0) || !vector_ok(&sim.gravity) {
            return invalid("sim.mu must be positive and gravity finite");
        }
        if !(self.object.mass > 0.0 && self.object.mass.is_finite()) {
            return invalid("object.mass must be positive");
        }
        if self.fingers.is_empty() {
            return invalid("at least one finger is required");
        }
        for (i, f) in self.fingers.iter().enumerate() {
            if f.name.is_empty() || f.name.contains('/') {
                return invalid(format!("finger {i}: name must be nonempty without '/'"));
            }
            if self.fingers[..i].iter().any(|g| g.name == f.name) {
                return invalid(format!("finger {i}: duplicate name `{}`", f.name));
            }
            if f.theta.len() != f.joints.len() {
                return invalid(format!("finger {i}: {} joint values for {} joints", f.theta.len(), f.joints.len()));
            }
            if !vector_ok(&f.theta) || !vector_ok(&f.stiffness.rotational) || !vector_ok(&f.stiffness.translational) {
                return invalid(format!("finger {i}: values must be finite"));
            }
        }
        match &self.control {
            ControlSpec::Scripted { segments } => {
                for (k, s) in segments.iter().enumerate() {
                    if s.finger >= self.fingers.len() {
                        return invalid(format!("segment {k}: finger {} out of range", s.finger));
                    }
                    if !(s.end > s.start) || !vector_ok(&s.twist) {
                        return invalid(format!("segment {k}: needs start < end and a finite twist"));
                    }
                }
            }
            ControlSpec::ClosedLoop { target, .. } => {
                if !(target.ramp_time >= 0.0) || !vector_ok(&target.twist) {
                    return invalid("control.target needs a finite twist and nonnegative ramp_time");
                }
                self.controller_config().expect("closed loop").validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                if self.fingers.iter().any(|f| f.joints.is_empty()) {
                    return invalid("closed-loop control needs jointed fingers");
                }
            }
        }
        Ok(())
    }

    /// Controller configuration of a closed-loop scenario.
    pub fn controller_config(&self) -> Option<ControllerConfig> {
        match &self.control {
            ControlSpec::Scripted { .. } => None,
            ControlSpec::ClosedLoop {
                solver,
                gains,
                joint_speed_limit,
                f_min,
                mu_max,
                constraint_gain,
                ..
            } => Some(ControllerConfig {
                gains: gains.clone(),
                mode: *solver,
                joint_speed_limit: *joint_speed_limit,
                period: self.sim.dt,
                f_min: *f_min,
                mu_max: *mu_max,
                constraint_gain: *constraint_gain,
            }),
        }
    }

    pub fn constraint(&self) -> ObjectConstraint {
        self.sim.constraint.to_constraint()
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.sim.gravity)
    }

    pub fn hand(&self) -> Result<Arc<[FingerModel]>> {
        let w = Frame::world();
        let mut hand = Vec::with_capacity(self.fingers.len());
        for (i, f) in self.fingers.iter().enumerate() {
            let frames = FingerModel::frames_for(&f.name);
            let joints = f
                .joints
                .iter()
                .map(|j| match *j {
                    JointSpec::Revolute { axis, point, lower, upper } => {
                        Joint::new(revolute_screw(&axis.into(), &point.into())).with_limits(lower, upper)
                    }
                    JointSpec::Prismatic { axis, lower, upper } => Joint::new(prismatic_screw(&Vector3::from(axis).normalize())).with_limits(lower, upper),
                })
                .collect::<Vec<_>>();
            if f.joints.iter().any(|j| match j {
                JointSpec::Revolute { axis, .. } | JointSpec::Prismatic { axis, .. } => Vector3::from(*axis).norm() < 1e-12,
            }) {
                return invalid(format!("finger {i}: joint axis must be nonzero"));
            }
            let k = &f.stiffness;
            let diag = Vector6::new(k.rotational[0], k.rotational[1], k.rotational[2], k.translational[0], k.translational[1], k.translational[2]);
            let stiffness = StiffnessMatrix::new(Matrix6::from_diagonal(&diag), frames.rest.clone())
                .map_err(|e| ScenarioError::Invalid(format!("finger {i}: {e}")))?;
            if !stiffness.is_positive_definite() {
                return invalid(format!("finger {i}: stiffness must be positive definite"));
            }
            let placement = f.tip_pose.to_transform(frames.tip.clone(), Frame::new(format!("{}/s", frames.tip)), "tip_pose")?;
            let tip = SurfaceModel::new(f.tip, placement).map_err(|e| ScenarioError::Invalid(format!("finger {i}: {e}")))?;
            let model = FingerModel::new(
                &f.name,
                joints,
                &f.home.to_transform(w.clone(), w.clone(), "home")?,
                &f.rest_offset.to_transform(w.clone(), w.clone(), "rest_offset")?,
                stiffness,
                tip,
            )
            .map_err(|e| ScenarioError::Invalid(format!("finger {i}: {e}")))?;
            model
                .check_joints(i, &DVector::from_column_slice(&f.theta))
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            hand.push(model);
        }
        Ok(hand.into())
    }

    pub fn object(&self) -> Result<RigidObject> {
        let o = Frame::new("o");
        let placement = self.object.surface_pose.to_transform(o.clone(), Frame::new("o/s"), "object.surface_pose")?;
        let surface = SurfaceModel::new(self.object.surface, placement).map_err(|e| ScenarioError::Invalid(format!("object: {e}")))?;
        let pose = self.object.pose.to_transform(Frame::world(), o, "object.pose")?;
        RigidObject::new(self.object.mass, surface, pose).map_err(|e| ScenarioError::Invalid(format!("object: {e}")))
    }

    /// Relaxed-finger guess pressed into the object, before seeding.
    pub fn initial_guess(&self) -> Result<GraspState> {
        let hand = self.hand()?;
        let object = self.object()?;
        let thetas: Vec<DVector<f64>> = self.fingers.iter().map(|f| DVector::from_column_slice(&f.theta)).collect();
        let fingers = GraspState::relaxed_fingers(&hand, &object, &thetas);
        GraspState::new(object, hand, fingers, self.gravity(), self.constraint())
            .map(|(s, _)| s)
            .map_err(ScenarioError::Seeding)
    }

    /// Initial quasistatic grasp.
    pub fn build(&self) -> Result<(GraspState, ProjectionReport)> {
        let guess = self.initial_guess()?;
        seed_equilibrium(&guess, &self.sim.tolerances.projection()).map_err(ScenarioError::Seeding)
    }

    /// Scripted anchor twists at time `t` (world frame), one per finger.
    pub fn scripted_twists(&self, t: f64) -> Vec<Vector6<f64>> {
        let mut out = vec![Vector6::zeros(); self.fingers.len()];
        if let ControlSpec::Scripted { segments } = &self.control {
            for s in segments {
                if t >= s.start && t < s.end {
                    out[s.finger] += Vector6::from(s.twist);
                }
            }
        }
        out
    }
}
