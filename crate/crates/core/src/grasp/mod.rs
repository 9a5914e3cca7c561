//! Fingers, object and the quasistatic grasp state.
//!
//! Each finger is a serial chain ending in an anchor, a 6-dof flexure and a
//! fingertip. All wrenches and twists stored on a [`GraspState`] are expressed
//! in the world frame.

mod seed;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3x6, Matrix6, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{closest_point_contact_reseating, ContactPair, GeometryError, SurfaceModel};
use crate::lie::{
    exp_pose, log_pose, skew, transform_stiffness, transform_wrench, Frame, LieError, StiffnessMatrix, Transform,
    Wrench,
};

pub use seed::{project_to_manifold, seed_equilibrium, ProjectionOptions, ProjectionReport};

/// Flexure displacements above this norm raise a warning.
pub const DISPLACEMENT_WARNING: f64 = 0.05;

/// Flexure displacements above this norm are rejected.
pub const DISPLACEMENT_LIMIT: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraspError {
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("finger {finger}: flexure displacement {norm:.3e} exceeds the limit {limit}")]
    DisplacementLimit { finger: usize, norm: f64, limit: f64 },
    #[error("finger {finger}: expected {expected} joint values, found {found}")]
    JointCount { finger: usize, expected: usize, found: usize },
    #[error("finger {finger}: joint {joint} value {value} outside [{lower}, {upper}]")]
    JointLimit { finger: usize, joint: usize, value: f64, lower: f64, upper: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("equilibrium projection did not converge after {iterations} iterations (residual {residual:.3e})")]
    ProjectionFailed { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, GraspError>;

/// Space-frame screw axis of a revolute joint about `axis` through `point`.
pub fn revolute_screw(axis: &Vector3<f64>, point: &Vector3<f64>) -> Vector6<f64> {
    let w = axis.normalize();
    let v = point.cross(&w);
    Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z)
}

/// Space-frame screw axis of a prismatic joint along `axis`.
pub fn prismatic_screw(axis: &Vector3<f64>) -> Vector6<f64> {
    let v = axis.normalize();
    Vector6::new(0.0, 0.0, 0.0, v.x, v.y, v.z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    /// Screw axis in the world frame at the zero configuration.
    pub screw: Vector6<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl Joint {
    pub fn new(screw: Vector6<f64>) -> Self {
        Joint {
            screw,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn with_limits(mut self, lower: f64, upper: f64) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }
}

/// Frame labels used by one finger.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerFrames {
    pub anchor: Frame,
    pub rest: Frame,
    pub tip: Frame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FingerModel {
    pub name: String,
    pub joints: Vec<Joint>,
    /// Anchor pose at the zero configuration.
    pub home: Transform,
    /// Relaxed fingertip pose relative to the anchor.
    pub rest_offset: Transform,
    /// Flexure stiffness in the relaxed fingertip frame.
    pub stiffness: StiffnessMatrix,
    /// Fingertip surface in the fingertip frame.
    pub tip: SurfaceModel,
    pub frames: FingerFrames,
}

impl FingerModel {
    /// Builds a finger, labelling its frames `<name>/a`, `<name>/f0`, `<name>/f`.
    ///
    /// `home` maps the anchor into the world, `rest_offset` the relaxed
    /// fingertip into the anchor; their labels are replaced. The stiffness and
    /// the tip surface must already use the fingertip labels.
    pub fn new(
        name: &str,
        joints: Vec<Joint>,
        home: &Transform,
        rest_offset: &Transform,
        stiffness: StiffnessMatrix,
        tip: SurfaceModel,
    ) -> Result<Self> {
        let frames = Self::frames_for(name);
        if stiffness.frame() != &frames.rest {
            return Err(GraspError::InvalidModel(format!(
                "finger {name}: stiffness must be expressed in {}",
                frames.rest
            )));
        }
        if !stiffness.is_positive_definite() {
            return Err(GraspError::InvalidModel(format!("finger {name}: stiffness is not positive definite")));
        }
        if tip.body_frame() != &frames.tip {
            return Err(GraspError::InvalidModel(format!("finger {name}: tip surface must live in {}", frames.tip)));
        }
        Ok(FingerModel {
            name: name.to_owned(),
            joints,
            home: home.relabeled(Frame::world(), frames.anchor.clone()),
            rest_offset: rest_offset.relabeled(frames.anchor.clone(), frames.rest.clone()),
            stiffness,
            tip,
            frames,
        })
    }

    pub fn frames_for(name: &str) -> FingerFrames {
        FingerFrames {
            anchor: Frame::new(format!("{name}/a")),
            rest: Frame::new(format!("{name}/f0")),
            tip: Frame::new(format!("{name}/f")),
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Product-of-exponentials anchor pose.
    pub fn forward_kinematics(&self, theta: &DVector<f64>) -> Transform {
        let w = Frame::world();
        let mut t = Transform::identity(w.clone(), w.clone());
        for (joint, &q) in self.joints.iter().zip(theta.iter()) {
            t = t.compose_unchecked(&exp_pose(&(joint.screw * q), w.clone(), w.clone()));
        }
        t.compose_unchecked(&self.home).orthonormalized()
    }

    /// Space Jacobian: `V_wa = J θ̇` in the world frame.
    pub fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let w = Frame::world();
        let mut j = DMatrix::zeros(6, self.dof());
        let mut t = Transform::identity(w.clone(), w.clone());
        for (k, (joint, &q)) in self.joints.iter().zip(theta.iter()).enumerate() {
            j.column_mut(k).copy_from(&(t.adjoint() * joint.screw));
            t = t.compose_unchecked(&exp_pose(&(joint.screw * q), w.clone(), w.clone()));
        }
        j
    }

    pub fn check_joints(&self, finger: usize, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.dof() {
            return Err(GraspError::JointCount {
                finger,
                expected: self.dof(),
                found: theta.len(),
            });
        }
        for (k, (joint, &q)) in self.joints.iter().zip(theta.iter()).enumerate() {
            if q < joint.lower || q > joint.upper {
                return Err(GraspError::JointLimit {
                    finger,
                    joint: k,
                    value: q,
                    lower: joint.lower,
                    upper: joint.upper,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidObject {
    pub mass: f64,
    pub surface: SurfaceModel,
    /// Pose of the object frame (origin at the centre of mass).
    pub pose: Transform,
}

impl RigidObject {
    pub fn new(mass: f64, surface: SurfaceModel, pose: Transform) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(GraspError::InvalidModel(format!("object mass must be positive, got {mass}")));
        }
        if surface.body_frame() != pose.to_frame() {
            return Err(GraspError::InvalidModel("object surface and pose use different frames".into()));
        }
        Ok(RigidObject { mass, surface, pose })
    }

    pub fn frame(&self) -> &Frame {
        self.pose.to_frame()
    }
}

/// Hard kinematic constraint on the object motion, fixed in the world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObjectConstraint {
    Free,
    /// Rotation about and translation along a fixed line.
    Axis { point: Vector3<f64>, direction: Vector3<f64> },
    /// Motion in a fixed plane: rotation about its normal and in-plane translation.
    Planar { point: Vector3<f64>, normal: Vector3<f64> },
}

fn columns(cols: &[Vector6<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(6, cols.len(), |r, c| cols[c][r])
}

fn orthonormal_pair(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let a = n.cross(&helper).normalize();
    (a, n.cross(&a))
}

impl ObjectConstraint {
    /// Columns span the admissible object twists (world frame).
    pub fn motion_basis(&self) -> DMatrix<f64> {
        let rot = |p: &Vector3<f64>, e: &Vector3<f64>| revolute_screw(e, p);
        match self {
            ObjectConstraint::Free => DMatrix::identity(6, 6),
            ObjectConstraint::Axis { point, direction } => {
                let e = direction.normalize();
                columns(&[rot(point, &e), prismatic_screw(&e)])
            }
            ObjectConstraint::Planar { point, normal } => {
                let n = normal.normalize();
                let (a, b) = orthonormal_pair(&n);
                columns(&[rot(point, &n), prismatic_screw(&a), prismatic_screw(&b)])
            }
        }
    }

    /// Columns span the wrenches the constraint can exert (reciprocal to the motion basis).
    pub fn wrench_basis(&self) -> DMatrix<f64> {
        let s = self.motion_basis();
        let k = 6 - s.ncols();
        if k == 0 {
            return DMatrix::zeros(6, 0);
        }
        let svd = (s.clone() * s.transpose()).symmetric_eigen();
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&i, &j| svd.eigenvalues[i].total_cmp(&svd.eigenvalues[j]));
        DMatrix::from_columns(&order[..k].iter().map(|&i| svd.eigenvectors.column(i).into_owned()).collect::<Vec<_>>())
    }

    pub fn dof(&self) -> usize {
        match self {
            ObjectConstraint::Free => 6,
            ObjectConstraint::Axis { .. } => 2,
            ObjectConstraint::Planar { .. } => 3,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, ObjectConstraint::Free)
    }
}

/// Configuration of one finger.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerState {
    pub theta: DVector<f64>,
    pub anchor: Transform,
    pub tip: Transform,
    /// Object surface chart used at this finger's contact.
    pub object_chart: SurfaceModel,
    /// Fingertip surface chart.
    pub tip_chart: SurfaceModel,
}

impl FingerState {
    pub fn rest(&self, model: &FingerModel) -> Transform {
        self.anchor.compose_unchecked(&model.rest_offset)
    }

    /// `T_{f₀f}`.
    pub fn relative(&self, model: &FingerModel) -> Transform {
        self.rest(model).inverse().compose_unchecked(&self.tip)
    }

    /// Exponential coordinates `X_{f₀f}` of the flexure displacement.
    pub fn displacement(&self, model: &FingerModel) -> Result<Vector6<f64>> {
        Ok(log_pose(&self.relative(model))?)
    }
}

/// Spring wrench `F^{f₀} = K X` in the relaxed fingertip frame.
pub fn flexure_spring_wrench(model: &FingerModel, state: &FingerState) -> Result<Wrench> {
    let x = state.displacement(model)?;
    Ok(Wrench::from_vector(&(model.stiffness.matrix() * x), model.frames.rest.clone()))
}

/// Contact wrench applied by the fingertip to the object, `F_con = −F_spr`, in the world frame.
pub fn flexure_wrench(finger: usize, model: &FingerModel, state: &FingerState) -> Result<Wrench> {
    let x = state.displacement(model)?;
    let norm = x.norm();
    if norm > DISPLACEMENT_LIMIT {
        return Err(GraspError::DisplacementLimit {
            finger,
            norm,
            limit: DISPLACEMENT_LIMIT,
        });
    }
    let spring = Wrench::from_vector(&(-(model.stiffness.matrix() * x)), model.frames.rest.clone());
    Ok(transform_wrench(&state.rest(model), &spring)?)
}

/// Flexure stiffness expressed in the world frame.
pub fn world_stiffness(model: &FingerModel, state: &FingerState) -> Result<Matrix6<f64>> {
    Ok(*transform_stiffness(&state.rest(model), &model.stiffness)?.matrix())
}

/// `F_ext = m([p_wo] g, g)`.
pub fn external_wrench(object: &RigidObject, gravity: &Vector3<f64>) -> Wrench {
    let p = object.pose.translation();
    let f = gravity * object.mass;
    Wrench::new(p.cross(&f), f, Frame::world())
}

/// Linear map `G` with `Ḟ_ext = G V_wo`: `m [[g][[p], −I]; 0]`.
pub fn external_wrench_rate_matrix(object: &RigidObject, gravity: &Vector3<f64>) -> Matrix6<f64> {
    let mut left = Matrix3x6::zeros();
    left.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(object.pose.translation()));
    left.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-nalgebra::Matrix3::identity()));
    let mut g = Matrix6::zeros();
    g.fixed_view_mut::<3, 6>(0, 0)
        .copy_from(&(skew(gravity) * left * object.mass));
    g
}

pub fn external_wrench_rate(object: &RigidObject, gravity: &Vector3<f64>, v_wo: &Vector6<f64>) -> Vector6<f64> {
    external_wrench_rate_matrix(object, gravity) * v_wo
}

/// Full quasistatic state snapshot.
#[derive(Clone, Debug)]
pub struct GraspState {
    pub object: RigidObject,
    pub hand: Arc<[FingerModel]>,
    pub fingers: Vec<FingerState>,
    pub contacts: Vec<ContactPair>,
    /// Contact wrenches on the object, world frame.
    pub wrenches: Vec<Wrench>,
    pub gravity: Vector3<f64>,
    pub constraint: ObjectConstraint,
}

/// Charts re-seated while refreshing contacts: `(finger, object side, tip side)`.
pub type Reseats = Vec<(usize, bool, bool)>;

impl GraspState {
    /// Builds a state from poses and computes contacts and wrenches.
    pub fn new(
        object: RigidObject,
        hand: Arc<[FingerModel]>,
        fingers: Vec<FingerState>,
        gravity: Vector3<f64>,
        constraint: ObjectConstraint,
    ) -> Result<(Self, Reseats)> {
        if hand.len() != fingers.len() || hand.is_empty() {
            return Err(GraspError::InvalidModel("finger states do not match the hand".into()));
        }
        let mut state = GraspState {
            object,
            hand,
            fingers,
            contacts: Vec::new(),
            wrenches: Vec::new(),
            gravity,
            constraint,
        };
        let reseats = state.refresh()?;
        Ok((state, reseats))
    }

    /// Finger states at the relaxed pose of the given anchors, with the object's
    /// own chart at every finger.
    pub fn relaxed_fingers(hand: &[FingerModel], object: &RigidObject, thetas: &[DVector<f64>]) -> Vec<FingerState> {
        hand.iter()
            .zip(thetas)
            .map(|(model, theta)| {
                let anchor = model.forward_kinematics(theta);
                let tip = anchor
                    .compose_unchecked(&model.rest_offset)
                    .relabeled(Frame::world(), model.frames.tip.clone());
                FingerState {
                    theta: theta.clone(),
                    anchor,
                    tip,
                    object_chart: object.surface.clone(),
                    tip_chart: model.tip.clone(),
                }
            })
            .collect()
    }

    pub fn n(&self) -> usize {
        self.fingers.len()
    }

    /// Recomputes contact pairs and wrenches from the current poses.
    pub fn refresh(&mut self) -> Result<Reseats> {
        let mut reseats = Vec::new();
        let mut contacts = Vec::with_capacity(self.n());
        let mut wrenches = Vec::with_capacity(self.n());
        for (i, (model, finger)) in self.hand.iter().zip(self.fingers.iter_mut()).enumerate() {
            let out = closest_point_contact_reseating(
                &mut finger.object_chart,
                &self.object.pose,
                &mut finger.tip_chart,
                &finger.tip,
            )?;
            if out.object_reseated || out.tip_reseated {
                reseats.push((i, out.object_reseated, out.tip_reseated));
            }
            contacts.push(out.pair);
            wrenches.push(flexure_wrench(i, model, finger)?);
        }
        self.contacts = contacts;
        self.wrenches = wrenches;
        Ok(reseats)
    }

    pub fn external_wrench(&self) -> Wrench {
        external_wrench(&self.object, &self.gravity)
    }

    /// `Σ F_con,i + F_ext` in the world frame.
    pub fn equilibrium_residual(&self) -> Vector6<f64> {
        self.wrenches.iter().map(|w| w.to_vector()).sum::<Vector6<f64>>() + self.external_wrench().to_vector()
    }

    /// Part of the equilibrium residual that the object constraint cannot absorb,
    /// as generalized forces along the admissible motion basis.
    pub fn unbalanced_wrench(&self) -> DVector<f64> {
        let r = self.equilibrium_residual();
        self.constraint.motion_basis().transpose() * DVector::from_column_slice(r.as_slice())
    }

    /// Constraint wrench multipliers `λ` such that `B λ` best cancels the equilibrium residual.
    pub fn constraint_multipliers(&self) -> DVector<f64> {
        let b = self.constraint.wrench_basis();
        if b.ncols() == 0 {
            return DVector::zeros(0);
        }
        let r = self.equilibrium_residual();
        let rhs = -DVector::from_column_slice(r.as_slice());
        b.svd(true, true).solve(&rhs, 1e-14).expect("svd solve")
    }

    /// Moment of the contact wrench about the contact point, per finger.
    pub fn contact_moments(&self) -> Vec<Vector3<f64>> {
        self.contacts
            .iter()
            .zip(&self.wrenches)
            .map(|(c, w)| w.moment - c.point.cross(&w.force))
            .collect()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.contacts.iter().map(|c| c.gap).collect()
    }

    /// Contact force in the object contact frame.
    pub fn contact_force_local(&self, i: usize) -> Vector3<f64> {
        self.contacts[i].object_world.rotation_matrix().transpose() * self.wrenches[i].force
    }

    /// `(normal, tangential)` magnitudes of each contact force; positive normal = pushing.
    pub fn contact_force_components(&self) -> Vec<(f64, f64)> {
        (0..self.n())
            .map(|i| {
                let f = self.contact_force_local(i);
                (-f.z, f.x.hypot(f.y))
            })
            .collect()
    }

    pub fn displacements(&self) -> Result<Vec<Vector6<f64>>> {
        self.hand
            .iter()
            .zip(&self.fingers)
            .map(|(m, f)| f.displacement(m))
            .collect()
    }

    /// `½ Σ Xᵀ K X`.
    pub fn elastic_energy(&self) -> Result<f64> {
        let mut e = 0.0;
        for (m, f) in self.hand.iter().zip(&self.fingers) {
            let x = f.displacement(m)?;
            e += 0.5 * x.dot(&(m.stiffness.matrix() * x));
        }
        Ok(e)
    }

    /// `−m gᵀ p_wo`.
    pub fn gravity_potential(&self) -> f64 {
        -self.object.mass * self.gravity.dot(self.object.pose.translation())
    }

    /// Characteristic length used to scale angular quantities.
    pub fn length_scale(&self) -> f64 {
        use crate::geometry::SurfaceKind;
        let radius = |k: &SurfaceKind| match *k {
            SurfaceKind::Sphere { radius } | SurfaceKind::Cylinder { radius, .. } => Some(radius),
            SurfaceKind::Plane => None,
        };
        std::iter::once(self.object.surface.kind())
            .chain(self.hand.iter().map(|m| m.tip.kind()))
            .filter_map(radius)
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))))
            .unwrap_or(0.01)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::SurfaceKind;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    pub(crate) fn w() -> Frame {
        Frame::world()
    }

    pub(crate) use crate::fixtures::sphere_finger;

    #[test]
    fn relaxed_flexure_has_zero_wrench() {
        let m = sphere_finger("a", Vector3::new(0.1, 0.0, 0.0), 0.01, vec![]);
        let obj = RigidObject::new(
            0.1,
            SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: 0.05 }, Frame::new("o")).unwrap(),
            Transform::identity(w(), Frame::new("o")),
        )
        .unwrap();
        let fs = GraspState::relaxed_fingers(std::slice::from_ref(&m), &obj, &[DVector::zeros(0)]);
        assert_eq!(flexure_wrench(0, &m, &fs[0]).unwrap().to_vector(), Vector6::zeros());
    }

    #[test]
    fn hooke_law_sign() {
        let k = 1000.0;
        let delta = 0.002;
        let m = sphere_finger("a", Vector3::zeros(), 0.01, vec![]);
        let obj_surface = SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: 0.05 }, Frame::new("o")).unwrap();
        let mut fs = GraspState::relaxed_fingers(
            std::slice::from_ref(&m),
            &RigidObject::new(1.0, obj_surface, Transform::identity(w(), Frame::new("o"))).unwrap(),
            &[DVector::zeros(0)],
        );
        fs[0].tip = Transform::from_translation(Vector3::new(0.0, 0.0, delta), w(), m.frames.tip.clone());
        let f = flexure_wrench(0, &m, &fs[0]).unwrap();
        assert!((f.force - Vector3::new(0.0, 0.0, -k * delta)).norm() < 1e-12);
        assert!(f.moment.norm() < 1e-15);
        fs[0].tip = Transform::from_translation(Vector3::new(0.0, 0.0, 0.25), w(), m.frames.tip.clone());
        assert!(matches!(flexure_wrench(0, &m, &fs[0]), Err(GraspError::DisplacementLimit { .. })));
    }

    #[test]
    fn spring_power_matches_energy_rate() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut kmat = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        kmat = kmat * kmat.transpose() + Matrix6::identity();
        let x0 = Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01));
        let x1 = Vector6::from_fn(|_, _| rng.random_range(-0.01..0.01));
        let energy = |t: f64| {
            let x = x0 + x1 * t;
            0.5 * x.dot(&(kmat * x))
        };
        for k in 0..20 {
            let t = k as f64 * 0.05;
            let x = x0 + x1 * t;
            // velocity of the tip relative to the rest frame, in the rest frame, for Ẋ = x1
            let v = crate::lie::left_jacobian(&x) * x1;
            let power = (kmat * x).dot(&v);
            let h = 1e-6;
            let de = (energy(t + h) - energy(t - h)) / (2.0 * h);
            // the small-displacement model F = K X is conservative to O(‖X‖)
            assert!((power - de).abs() < 0.05 * (de.abs() + 1e-3), "{power} vs {de}");
        }
    }

    #[test]
    fn external_wrench_and_rate() {
        let mut rng = StdRng::seed_from_u64(4);
        let g = Vector3::new(0.0, 0.0, -9.81);
        for _ in 0..50 {
            let surf = SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: 0.05 }, Frame::new("o")).unwrap();
            let x = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let v = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let pose_at = |t: f64| exp_pose(&(v * t), w(), w()).compose_unchecked(&exp_pose(&x, w(), Frame::new("o")));
            let obj_at = |t: f64| RigidObject::new(0.3, surf.clone(), pose_at(t)).unwrap();
            let h = 1e-6;
            let fd = (external_wrench(&obj_at(h), &g).to_vector() - external_wrench(&obj_at(-h), &g).to_vector()) / (2.0 * h);
            let rate = external_wrench_rate(&obj_at(0.0), &g, &v);
            assert!((fd - rate).norm() < 1e-6);
            assert_eq!(external_wrench_rate(&obj_at(0.0), &g, &Vector6::zeros()), Vector6::zeros());
        }
        // p = 0, pure linear velocity
        let obj = RigidObject::new(
            2.0,
            SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: 0.05 }, Frame::new("o")).unwrap(),
            Transform::identity(w(), Frame::new("o")),
        )
        .unwrap();
        let lin = Vector3::new(0.3, -0.2, 0.5);
        let rate = external_wrench_rate(&obj, &g, &Vector6::new(0.0, 0.0, 0.0, lin.x, lin.y, lin.z));
        let expected = -2.0 * skew(&g) * lin;
        assert!((rate.fixed_rows::<3>(0) - expected).norm() < 1e-12);
        assert!(rate.fixed_rows::<3>(3).norm() == 0.0);
    }

    #[test]
    fn single_revolute_jacobian() {
        let m = sphere_finger("a", Vector3::new(0.1, 0.0, 0.0), 0.01, vec![Joint::new(revolute_screw(&Vector3::z(), &Vector3::zeros()))]);
        for q in [-1.0, 0.0, 0.7, 2.5] {
            let j = m.jacobian(&DVector::from_element(1, q));
            assert_eq!(j.column(0).into_owned(), DVector::from_row_slice(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..30 {
            let joints: Vec<Joint> = (0..4)
                .map(|k| {
                    let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                    let point = Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1));
                    if k == 2 {
                        Joint::new(prismatic_screw(&axis))
                    } else {
                        Joint::new(revolute_screw(&axis, &point))
                    }
                })
                .collect();
            let m = sphere_finger("a", Vector3::new(0.1, 0.02, 0.0), 0.01, joints);
            let theta = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let dtheta = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let h = 1e-6;
            let tp = m.forward_kinematics(&(&theta + &dtheta * h));
            let tm = m.forward_kinematics(&(&theta - &dtheta * h));
            // spatial twist from the 4x4 derivative: [V] = Ṫ T⁻¹
            let dt = (tp.matrix4() - tm.matrix4()) / (2.0 * h);
            let vm = dt * m.forward_kinematics(&theta).matrix4().try_inverse().unwrap();
            let v = Vector6::new(vm[(2, 1)], vm[(0, 2)], vm[(1, 0)], vm[(0, 3)], vm[(1, 3)], vm[(2, 3)]);
            let jv = m.jacobian(&theta) * &dtheta;
            assert!((DVector::from_column_slice(v.as_slice()) - jv).norm() < 1e-6);
            assert_eq!(m.jacobian(&theta) * DVector::zeros(4), DVector::zeros(6));
        }
    }

    #[test]
    fn constraint_bases_are_reciprocal() {
        let cons = [
            ObjectConstraint::Axis { point: Vector3::new(0.1, 0.2, 0.0), direction: Vector3::new(0.0, 1.0, 1.0) },
            ObjectConstraint::Planar { point: Vector3::new(0.0, 0.0, 0.3), normal: Vector3::new(1.0, 0.0, 1.0) },
            ObjectConstraint::Free,
        ];
        for c in cons {
            let s = c.motion_basis();
            let b = c.wrench_basis();
            assert_eq!(s.ncols(), c.dof());
            assert_eq!(b.ncols(), 6 - c.dof());
            if b.ncols() > 0 {
                assert!((b.transpose() * &s).abs().max() < 1e-12);
                assert_eq!(b.rank(1e-10), 6 - c.dof());
            }
        }
    }

    #[test]
    fn symmetric_squeeze_is_balanced() {
        let hand: Arc<[FingerModel]> = vec![
            sphere_finger("l", Vector3::new(-0.059, 0.0, 0.0), 0.01, vec![]),
            sphere_finger("r", Vector3::new(0.059, 0.0, 0.0), 0.01, vec![]),
        ]
        .into();
        let obj = RigidObject::new(
            0.1,
            SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: 0.05 }, Frame::new("o")).unwrap(),
            Transform::identity(w(), Frame::new("o")),
        )
        .unwrap();
        let mut fingers = GraspState::relaxed_fingers(&hand, &obj, &[DVector::zeros(0), DVector::zeros(0)]);
        fingers[0].tip = Transform::from_translation(Vector3::new(-0.06, 0.0, 0.0), w(), hand[0].frames.tip.clone());
        fingers[1].tip = Transform::from_translation(Vector3::new(0.06, 0.0, 0.0), w(), hand[1].frames.tip.clone());
        let (state, _) = GraspState::new(obj, hand, fingers, Vector3::zeros(), ObjectConstraint::Free).unwrap();
        assert!(state.equilibrium_residual().norm() < 1e-12);
        for (n, t) in state.contact_force_components() {
            assert!((n - 1.0).abs() < 1e-9 && t.abs() < 1e-9);
        }
        assert!(state.contact_moments().iter().all(|m| m.norm() < 1e-12));
    }

    #[test]
    fn zero_gravity_relaxed_is_balanced() {
        let hand: Arc<[FingerModel]> = vec![sphere_finger("l", Vector3::new(-0.06, 0.0, 0.0), 0.01, vec![])].into();
        let obj = RigidObject::new(
            0.1,
            SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: 0.05 }, Frame::new("o")).unwrap(),
            Transform::identity(w(), Frame::new("o")),
        )
        .unwrap();
        let fingers = GraspState::relaxed_fingers(&hand, &obj, &[DVector::zeros(0)]);
        let (state, _) = GraspState::new(obj, hand, fingers, Vector3::zeros(), ObjectConstraint::Free).unwrap();
        assert_eq!(state.equilibrium_residual(), Vector6::zeros());
    }
}
