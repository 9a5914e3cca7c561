//! Numerical verification suites with machine-readable results.
//!
//! Each check draws seeded random instances, measures the worst deviation
//! from an independent oracle and compares it with a fixed tolerance.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix4, Matrix6, SMatrix, Vector2, Vector3, Vector6};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::control::{hand_jacobian, solve_joint_velocities, ControllerConfig, SolverMode};
use crate::fixtures::{jointed_grasp, kkt_enumeration, random_grasp};
use crate::geometry::{closest_point_contact, closest_point_contact_reseating, evaluate_contact_geometry, rolling_map, SurfaceKind, SurfaceModel};
use crate::lie::{
    adjoint_rate, exp_pose, log_pose, wrench_rate_transform, Frame, Rotation, Transform, Twist, Wrench, WrenchMatrix,
};
use crate::mechanics::{
    assemble, contact_wrench_rate_sum_direct, contact_wrench_rate_sum_transported, forward_solve, force_rate_rows,
    inverse_map, SINGULAR_RATIO,
};
use crate::scenario::bundled;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Lie,
    Geometry,
    Mechanics,
    Control,
}

impl Suite {
    pub fn parse(name: &str) -> Option<Suite> {
        match name {
            "all" => Some(Suite::All),
            "lie" => Some(Suite::Lie),
            "geometry" => Some(Suite::Geometry),
            "mechanics" => Some(Suite::Mechanics),
            "control" => Some(Suite::Control),
            _ => None,
        }
    }

    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    /// Worst deviation over all samples.
    pub measured: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

type Measure = fn(&mut StdRng) -> (f64, usize);

const CHECKS: &[(Suite, &str, f64, Measure)] = &[
    (Suite::Lie, "adjoint_rate_finite_difference", 1e-6, adjoint_rate_error),
    (Suite::Lie, "wrench_rate_finite_difference", 1e-6, wrench_rate_error),
    (Suite::Lie, "exp_log_round_trip", 1e-10, exp_log_error),
    (Suite::Lie, "adjoint_homomorphism", 1e-12, homomorphism_error),
    (Suite::Geometry, "curvature_finite_difference", 1e-5, curvature_error),
    (Suite::Geometry, "tangent_placement_gap", 1e-9, tangent_gap_error),
    (Suite::Geometry, "ball_rolling_on_plane", 1e-12, ball_rolling_error),
    (Suite::Mechanics, "dual_route_wrench_rate", 1e-10, dual_route_error),
    (Suite::Mechanics, "forward_inverse_round_trip", 1e-8, round_trip_error),
    (Suite::Mechanics, "parallel_plates_singular", SINGULAR_RATIO, plates_sigma_ratio),
    (Suite::Control, "qp_matches_kkt_enumeration", 1e-8, qp_kkt_error),
    (Suite::Control, "closed_form_pseudoinverse", 1e-10, pseudoinverse_error),
];

/// Runs every check of `suite` (all checks for [`Suite::All`]).
pub fn run_suite(suite: Suite) -> VerifyReport {
    let checks: Vec<CheckResult> = CHECKS
        .iter()
        .enumerate()
        .filter(|(_, (s, ..))| suite.includes(*s))
        .map(|(k, &(s, name, tolerance, measure))| {
            let mut rng = StdRng::seed_from_u64(1000 + k as u64);
            let start = Instant::now();
            let (measured, samples) = measure(&mut rng);
            CheckResult {
                suite: s,
                name: name.to_owned(),
                passed: measured < tolerance,
                measured,
                tolerance,
                samples,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    VerifyReport {
        suite,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn rv6(rng: &mut StdRng, s: f64) -> Vector6<f64> {
    Vector6::from_fn(|_, _| rng.random_range(-s..s))
}

fn fr(name: &str) -> Frame {
    Frame::new(name)
}

fn random_transform(rng: &mut StdRng, from: &str, to: &str) -> Transform {
    let mut x = rv6(rng, 1.0);
    let w = x.fixed_rows::<3>(0).norm();
    if w > 2.5 {
        x.fixed_rows_mut::<3>(0).scale_mut(2.5 / w);
    }
    exp_pose(&x, fr(from), fr(to))
}

fn central<const R: usize, const C: usize>(g: impl Fn(f64) -> SMatrix<f64, R, C>, t: f64, h: f64) -> SMatrix<f64, R, C> {
    (g(t + h) - g(t - h)) / (2.0 * h)
}

/// Adjoint built directly from a homogeneous matrix.
fn adjoint_4x4(m: &Matrix4<f64>) -> Matrix6<f64> {
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let p = m.fixed_view::<3, 1>(0, 3).into_owned();
    let px = Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0);
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(px * r));
    ad
}

fn transform_4x4(m: &Matrix4<f64>, from: &str, to: &str) -> Transform {
    Transform::new(
        Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
        m.fixed_view::<3, 1>(0, 3).into_owned(),
        fr(from),
        fr(to),
    )
}

/// Spatial twist `[V] = Ṫ T⁻¹` of a homogeneous trajectory.
fn spatial_twist(t: impl Fn(f64) -> Matrix4<f64>, s: f64, h: f64) -> Vector6<f64> {
    let v = central(&t, s, h) * t(s).try_inverse().expect("rigid transform");
    Vector6::new(v[(2, 1)], v[(0, 2)], v[(1, 0)], v[(0, 3)], v[(1, 3)], v[(2, 3)])
}

fn adjoint_rate_error(rng: &mut StdRng) -> (f64, usize) {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (x1, x2) = (rv6(rng, 1.0), rv6(rng, 1.0));
        let t0 = random_transform(rng, "j", "i").matrix4();
        let t_ji = |s: f64| {
            exp_pose(&(x1 * s.sin()), fr("j"), fr("j")).matrix4() * exp_pose(&(x2 * s * s), fr("j"), fr("j")).matrix4() * t0
        };
        let s = rng.random_range(-1.0..1.0);
        let v = spatial_twist(t_ji, s, h);
        let fd = central(|q| adjoint_4x4(&t_ji(q).try_inverse().expect("rigid")), s, h);
        let t_ij = transform_4x4(&t_ji(s).try_inverse().expect("rigid"), "i", "j");
        let analytic = adjoint_rate(&t_ij, &Twist::from_vector(&v, fr("j"))).expect("frames match");
        worst = worst.max((analytic - fd).abs().max());
    }
    (worst, 100)
}

fn wrench_rate_error(rng: &mut StdRng) -> (f64, usize) {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x1 = rv6(rng, 1.0);
        let t0 = random_transform(rng, "i", "j").matrix4();
        let (f0, f1) = (rv6(rng, 2.0), rv6(rng, 2.0));
        let t_ij = |s: f64| exp_pose(&(x1 * s), fr("i"), fr("i")).matrix4() * t0;
        let f_i = |s: f64| adjoint_4x4(&t_ij(s).try_inverse().expect("rigid")).transpose() * (f0 + f1 * s);
        let s = rng.random_range(-1.0..1.0);
        let fd = central(f_i, s, h);
        let v_ij = spatial_twist(t_ij, s, h);
        let t_ji = transform_4x4(&t_ij(s).try_inverse().expect("rigid"), "j", "i");
        let now = Wrench::from_vector(&f_i(s), fr("i"));
        let rate = wrench_rate_transform(
            &WrenchMatrix::from_wrench(&now),
            &Twist::from_vector(&v_ij, fr("i")),
            &Wrench::from_vector(&f1, fr("j")),
            &t_ji,
        )
        .expect("frames match");
        worst = worst.max((rate.to_vector() - fd).abs().max());
    }
    (worst, 100)
}

fn exp_log_error(rng: &mut StdRng) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = random_transform(rng, "a", "b");
        let back = exp_pose(&log_pose(&t).expect("angle below pi"), fr("a"), fr("b"));
        worst = worst.max((back.matrix4() - t.matrix4()).abs().max());
    }
    (worst, 100)
}

fn homomorphism_error(rng: &mut StdRng) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random_transform(rng, "a", "b");
        let b = random_transform(rng, "b", "c");
        let ab = a.compose(&b).expect("chained frames");
        worst = worst.max((ab.adjoint() - a.adjoint() * b.adjoint()).abs().max());
    }
    (worst, 100)
}

/// Relative error of the analytic curvature form against the derivative of
/// the finite-differenced unit normal.
fn curvature_error(rng: &mut StdRng) -> (f64, usize) {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let r = rng.random_range(0.005..0.1);
        let kind = if k % 2 == 0 {
            SurfaceKind::Sphere { radius: r }
        } else {
            SurfaceKind::Cylinder { radius: r, half_length: None }
        };
        let s = SurfaceModel::at_body_origin(kind, fr("o")).expect("valid surface");
        let u = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-1.2..1.2));
        let du = [Vector2::new(h, 0.0), Vector2::new(0.0, h)];
        let tangent = |u: &Vector2<f64>, j: usize| (s.local_point(&(u + du[j])) - s.local_point(&(u - du[j]))) / (2.0 * h);
        let normal = |u: &Vector2<f64>| tangent(u, 0).cross(&tangent(u, 1)).normalize();
        let basis = SMatrix::<f64, 3, 2>::from_columns(&[tangent(&u, 0).normalize(), tangent(&u, 1).normalize()]);
        let m = Matrix2::new(tangent(&u, 0).norm(), 0.0, 0.0, tangent(&u, 1).norm());
        let dn = SMatrix::<f64, 3, 2>::from_columns(&[
            (normal(&(u + du[0])) - normal(&(u - du[0]))) / (2.0 * h),
            (normal(&(u + du[1])) - normal(&(u - du[1]))) / (2.0 * h),
        ]);
        let oracle = basis.transpose() * dn * m.try_inverse().expect("regular chart");
        let g = evaluate_contact_geometry(&s, &u).expect("inside chart");
        worst = worst.max((g.curvature - oracle).abs().max() * r);
    }
    (worst, 100)
}

fn tangent_gap_error(rng: &mut StdRng) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let r1 = rng.random_range(0.01..0.05);
        let r2 = rng.random_range(0.005..0.02);
        let kind = if k % 2 == 0 {
            SurfaceKind::Sphere { radius: r1 }
        } else {
            SurfaceKind::Cylinder { radius: r1, half_length: None }
        };
        let obj = SurfaceModel::at_body_origin(kind, fr("o")).expect("valid surface");
        let tip = SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: r2 }, fr("f")).expect("valid surface");
        let t_wo = exp_pose(&rv6(rng, 0.5), Frame::world(), fr("o"));
        let u = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-0.8..0.8));
        let g = evaluate_contact_geometry(&obj, &u).expect("inside chart");
        let c = t_wo.compose(&g.frame).expect("chained frames");
        let n = c.rotation_matrix().column(2).into_owned();
        let rot = exp_pose(&Vector6::new(rng.random(), rng.random(), rng.random(), 0.0, 0.0, 0.0), Frame::world(), fr("f"));
        let t_wf = Transform::new(*rot.rotation(), c.translation() + n * r2, Frame::world(), fr("f"));
        let pair = closest_point_contact(&obj, &t_wo, &tip, &t_wf).expect("supported pair");
        worst = worst.max(pair.gap.abs());
    }
    (worst, 100)
}

/// A ball of radius `r` rolling about `x̂` on a plane moves its contact point
/// on the plane by `(0, −rω)`; spinning about the normal leaves it fixed.
fn ball_rolling_error(rng: &mut StdRng) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let r = rng.random_range(0.005..0.05);
        let omega = rng.random_range(-3.0..3.0);
        let plane = SurfaceModel::at_body_origin(SurfaceKind::Plane, fr("o")).expect("valid surface");
        let ball = SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: r }, fr("f")).expect("valid surface");
        let pair = closest_point_contact_reseating(
            &mut plane.clone(),
            &Transform::identity(Frame::world(), fr("o")),
            &mut ball.clone(),
            &Transform::from_translation(Vector3::new(0.0, 0.0, r), Frame::world(), fr("f")),
        )
        .expect("supported pair")
        .pair;
        let l = rolling_map(&pair).expect("regular contact");
        let v = l.local * Vector6::new(omega, 0.0, 0.0, 0.0, 0.0, 0.0);
        let spin = l.local * Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        worst = worst.max(v[3].abs()).max((v[4] + r * omega).abs()).max(spin.amax());
    }
    (worst, 20)
}

fn random_twists(rng: &mut StdRng, n: usize, s: f64) -> Vec<Vector6<f64>> {
    (0..n).map(|_| rv6(rng, s)).collect()
}

fn stack(v: &[Vector6<f64>]) -> DVector<f64> {
    DVector::from_iterator(6 * v.len(), v.iter().flat_map(|x| x.iter().copied()))
}

fn dual_route_error(rng: &mut StdRng) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for n in [2, 3, 4] {
        for _ in 0..34 {
            let state = random_grasp(rng, n);
            let v_f = random_twists(rng, n, 0.1);
            let v_a = random_twists(rng, n, 0.1);
            let v_o = rv6(rng, 0.1);
            let a = contact_wrench_rate_sum_transported(&state, &v_f, &v_o, &v_a).expect("valid state");
            let b = contact_wrench_rate_sum_direct(&state, &v_f, &v_a).expect("valid state");
            worst = worst.max((a - b).norm() / (1.0 + b.norm()));
            samples += 1;
        }
    }
    (worst, samples)
}

fn round_trip_error(rng: &mut StdRng) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    while samples < 100 {
        let n = 3 + samples % 2;
        let state = random_grasp(rng, n);
        let sys = assemble(&state).expect("valid state");
        let v_a = stack(&random_twists(rng, n, 0.01));
        let sol = forward_solve(&sys, &v_a).expect("dimensions match");
        let Some(motion) = sol.motion else { continue };
        let inv = inverse_map(&sys).expect("nonsingular");
        let pi = inv.object_twist_of(&v_a);
        worst = worst.max((pi - motion.object_twist).norm() / motion.object_twist.norm().max(1e-12));
        samples += 1;
    }
    (worst, samples)
}

/// `σ_min/σ_max` of the parallel-plates grasp (singular when below the threshold).
fn plates_sigma_ratio(_: &mut StdRng) -> (f64, usize) {
    let scenario = bundled("degenerate_parallel_plates").expect("bundled scenario");
    let (state, _) = scenario.build().expect("seeding converges");
    let sys = assemble(&state).expect("valid state");
    let sol = forward_solve(&sys, &DVector::zeros(6 * state.n())).expect("dimensions match");
    (sol.sigma_ratio(), 1)
}

fn qp_kkt_error(rng: &mut StdRng) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let state = jointed_grasp(rng);
        let sys = assemble(&state).expect("valid state");
        let inv = inverse_map(&sys).expect("nonsingular");
        let strongest = (0..state.n()).map(|i| state.contact_force_local(i).norm()).fold(0.0, f64::max);
        let rows = force_rate_rows(&state, &sys, &inv, strongest + 1e-9, 1e9);
        let config = ControllerConfig {
            joint_speed_limit: 1e9,
            mode: SolverMode::Qp,
            ..ControllerConfig::default()
        };
        let v_c = DVector::from_fn(6, |_, _| rng.random_range(-0.1..0.1));
        let xi = hand_jacobian(&state);
        let sigma = &inv.reduced_map * &xi;
        let g = DMatrix::from_fn(rows.rows.len(), xi.ncols(), |r, c| rows.rows[r].row.dot(&xi.column(c)));
        let h = DVector::zeros(rows.rows.len());
        let Some(oracle) = kkt_enumeration(&sigma, &v_c, &g, &h) else {
            return (f64::INFINITY, 0);
        };
        let x = match solve_joint_velocities(&state, &inv, &v_c, &rows, &config) {
            Ok((rates, ..)) => DVector::from_iterator(xi.ncols(), rates.iter().flat_map(|r| r.iter().copied())),
            Err(_) => return (f64::INFINITY, 0),
        };
        worst = worst.max((&x - &oracle).amax() / (1.0 + oracle.amax()));
    }
    (worst, 50)
}

fn pseudoinverse_error(rng: &mut StdRng) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let state = jointed_grasp(rng);
        let sys = assemble(&state).expect("valid state");
        let inv = inverse_map(&sys).expect("nonsingular");
        let none = force_rate_rows(&state, &sys, &inv, 0.0, 1e9);
        let config = ControllerConfig {
            joint_speed_limit: 1e9,
            mode: SolverMode::ClosedForm,
            ..ControllerConfig::default()
        };
        let v_c = DVector::from_fn(6, |_, _| rng.random_range(-0.1..0.1));
        let xi = hand_jacobian(&state);
        let sigma = &inv.reduced_map * &xi;
        let oracle = sigma.clone().pseudo_inverse(1e-12).expect("svd converges") * &v_c;
        let x = match solve_joint_velocities(&state, &inv, &v_c, &none, &config) {
            Ok((rates, ..)) => DVector::from_iterator(xi.ncols(), rates.iter().flat_map(|r| r.iter().copied())),
            Err(_) => return (f64::INFINITY, 0),
        };
        worst = worst.max((&x - &oracle).amax() / (1.0 + oracle.amax()));
    }
    (worst, 50)
}
