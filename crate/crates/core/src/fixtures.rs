//! Randomized grasps and problem instances for the verification suites.
//!
//! Every generator is driven by a caller-supplied RNG, so a fixed seed gives
//! a reproducible instance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::rngs::StdRng;
use rand::Rng;

use crate::geometry::{SurfaceKind, SurfaceModel};
use crate::grasp::{
    prismatic_screw, revolute_screw, seed_equilibrium, FingerModel, GraspState, Joint, ObjectConstraint,
    ProjectionOptions, RigidObject,
};
use crate::lie::{Frame, StiffnessMatrix, Transform};

/// Finger with a spherical tip whose relaxed tip frame sits at `anchor`;
/// rotational stiffness 1 N·m/rad, translational 1000 N/m.
pub fn sphere_finger(name: &str, anchor: Vector3<f64>, radius: f64, joints: Vec<Joint>) -> FingerModel {
    let w = Frame::world();
    let frames = FingerModel::frames_for(name);
    FingerModel::new(
        name,
        joints,
        &Transform::from_translation(anchor, w.clone(), w.clone()),
        &Transform::identity(w.clone(), w),
        StiffnessMatrix::diagonal(1.0, 1000.0, frames.rest.clone()).expect("positive stiffness"),
        SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius }, frames.tip).expect("positive radius"),
    )
    .expect("valid finger")
}

fn direction(azimuth: f64, elevation: f64) -> Vector3<f64> {
    Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
}

fn seeded(obj: RigidObject, hand: Arc<[FingerModel]>, joints: usize, gravity: Vector3<f64>) -> GraspState {
    let thetas = vec![DVector::zeros(joints); hand.len()];
    let fingers = GraspState::relaxed_fingers(&hand, &obj, &thetas);
    let guess = GraspState::new(obj, hand, fingers, gravity, ObjectConstraint::Free).expect("valid grasp").0;
    seed_equilibrium(&guess, &ProjectionOptions::default()).expect("seeding converges").0
}

fn sphere_object(mass: f64, radius: f64) -> RigidObject {
    let o = Frame::new("o");
    RigidObject::new(
        mass,
        SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius }, o.clone()).expect("positive radius"),
        Transform::identity(Frame::world(), o),
    )
    .expect("valid object")
}

/// Free sphere held by `n` jointless spherical fingertips spread around it,
/// under gravity in a random direction, seeded to equilibrium.
pub fn random_grasp(rng: &mut StdRng, n: usize) -> GraspState {
    let radius = rng.random_range(0.02..0.04);
    let tip = rng.random_range(0.006..0.012);
    let preload = rng.random_range(0.5e-3..2e-3);
    let offset = rng.random_range(0.0..1.0);
    let hand: Arc<[FingerModel]> = (0..n)
        .map(|i| {
            let az = 2.0 * std::f64::consts::PI * (i as f64 + offset) / n as f64 + rng.random_range(-0.2..0.2);
            let dir = direction(az, rng.random_range(-0.4..0.4));
            sphere_finger(&format!("f{i}"), dir * (radius + tip - preload), tip, vec![])
        })
        .collect::<Vec<_>>()
        .into();
    let obj = sphere_object(rng.random_range(0.01..0.1), radius);
    let gravity = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize() * 9.81;
    seeded(obj, hand, 0, gravity)
}

/// Free sphere held by three fingers, each with two revolute joints about a
/// pivot behind the tip and a radial slide.
pub fn jointed_grasp(rng: &mut StdRng) -> GraspState {
    let radius = 0.025;
    let tip = 0.008;
    let hand: Arc<[FingerModel]> = (0..3)
        .map(|i| {
            let az = 2.0 * std::f64::consts::PI * i as f64 / 3.0 + rng.random_range(-0.3..0.3);
            let dir = direction(az, rng.random_range(-0.3..0.3));
            let anchor = dir * (radius + tip - 1.5e-3);
            let pivot = anchor + dir * 0.05;
            let helper = if dir.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
            let e1 = dir.cross(&helper).normalize();
            let e2 = dir.cross(&e1);
            let joints = vec![
                Joint::new(revolute_screw(&e1, &pivot)),
                Joint::new(revolute_screw(&e2, &pivot)),
                Joint::new(prismatic_screw(&(-dir))),
            ];
            sphere_finger(&format!("f{i}"), anchor, tip, joints)
        })
        .collect::<Vec<_>>()
        .into();
    seeded(sphere_object(0.05, radius), hand, 3, Vector3::new(0.0, 0.0, -9.81))
}

/// Feasible instance of `min ‖x‖² s.t. A x = b, G x ≤ h` with `n` unknowns,
/// `min(6, n − 1)` equalities and `m` inequalities.
pub fn random_qp(rng: &mut StdRng, n: usize, m: usize) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let a = DMatrix::from_fn(6.min(n - 1), n, |_, _| rng.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let feasible = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let b = &a * &feasible;
    let h = &g * &feasible + DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
    (a, b, g, h)
}

/// Brute-force KKT solution of `min ‖x‖² s.t. A x = b, G x ≤ h`: every subset
/// of inequality rows is tried as equalities and the smallest primal- and
/// dual-feasible point kept.
pub fn kkt_enumeration(a: &DMatrix<f64>, b: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.ncols();
    let m = g.nrows();
    let mut best: Option<DVector<f64>> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = a.nrows() + rows.len();
        let mut c = DMatrix::zeros(k, n);
        let mut d = DVector::zeros(k);
        c.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        d.rows_mut(0, a.nrows()).copy_from(b);
        for (r, &i) in rows.iter().enumerate() {
            c.set_row(a.nrows() + r, &g.row(i));
            d[a.nrows() + r] = h[i];
        }
        // [I Cᵀ; C 0][x; ν] = [0; d]
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).fill_with_identity();
        kkt.view_mut((0, n), (n, k)).copy_from(&c.transpose());
        kkt.view_mut((n, 0), (k, n)).copy_from(&c);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(n, k).copy_from(&d);
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x = sol.rows(0, n).into_owned();
        if (&c * &x - &d).amax() > 1e-9 {
            continue;
        }
        let primal_ok = (g * &x - h).iter().all(|&v| v <= 1e-9);
        let dual_ok = (0..rows.len()).all(|r| sol[n + a.nrows() + r] >= -1e-9);
        if primal_ok && dual_ok && best.as_ref().is_none_or(|bx| x.norm() < bx.norm()) {
            best = Some(x);
        }
    }
    best
}
