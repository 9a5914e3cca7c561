use nalgebra::{DVector, Matrix3, Vector2, Vector3, Vector6};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use rollhand::control::{hand_jacobian, solve_joint_velocities, ControllerConfig, SolverMode};
use rollhand::export::{column_count, read_trajectory, trajectory_row, write_trajectory};
use rollhand::fixtures::{jointed_grasp, random_grasp};
use rollhand::geometry::{evaluate_contact_geometry, SurfaceKind, SurfaceModel};
use rollhand::lie::{
    exp_pose, log_pose, skew, transform_twist, transform_wrench, Frame, Rotation, Transform, Twist, Wrench,
};
use rollhand::mechanics::{assemble, force_rate_rows, forward_solve, inverse_map};
use rollhand::scenario::{bundled, bundled_source, parse_override, parse_scenario, parse_scenario_with};
use rollhand::sim::Simulator;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-r..r).prop_map(Vector3::from)
}

fn vec6(r: f64) -> impl Strategy<Value = Vector6<f64>> {
    prop::array::uniform6(-r..r).prop_map(|a| Vector6::from_column_slice(&a))
}

fn rotation() -> impl Strategy<Value = Rotation> {
    (vec3(1.0), -3.0..3.0f64).prop_filter_map("nonzero axis", |(axis, angle)| {
        (axis.norm() > 1e-3).then(|| Rotation::from_axis_angle(&axis.normalize(), angle))
    })
}

fn pose(from: &str, to: &str) -> impl Strategy<Value = Transform> {
    let (from, to) = (Frame::new(from), Frame::new(to));
    (rotation(), vec3(1.0)).prop_map(move |(r, p)| Transform::new(r, p, from.clone(), to.clone()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn skew_is_antisymmetric_cross_product(a in vec3(10.0), b in vec3(10.0)) {
        let s = skew(&a);
        prop_assert!((s + s.transpose()).amax() == 0.0);
        prop_assert!((s * b - a.cross(&b)).amax() <= 1e-12 * (1.0 + a.norm() * b.norm()));
    }

    #[test]
    fn skew_conjugation(r in rotation(), p in vec3(5.0)) {
        let r = r.matrix();
        let lhs: Matrix3<f64> = r * skew(&p) * r.transpose();
        prop_assert!((lhs - skew(&(r * p))).amax() <= 1e-12 * (1.0 + p.norm()));
    }

    #[test]
    fn adjoint_is_homomorphism(a in pose("a", "b"), b in pose("b", "c")) {
        let ab = a.compose(&b).unwrap();
        prop_assert!((ab.adjoint() - a.adjoint() * b.adjoint()).amax() <= 1e-12);
        prop_assert!((a.inverse().adjoint() * a.adjoint() - nalgebra::Matrix6::identity()).amax() <= 1e-12);
    }

    #[test]
    fn exp_log_round_trip(omega in vec3(1.7), v in vec3(2.0)) {
        let x = Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z);
        let t = exp_pose(&x, Frame::world(), Frame::new("b"));
        prop_assert!((log_pose(&t).unwrap() - x).amax() <= 1e-10);
    }

    #[test]
    fn power_is_frame_invariant(t in pose("a", "b"), v in vec6(2.0), f in vec6(2.0)) {
        let b = t.to_frame().clone();
        let twist = Twist::from_vector(&v, b.clone());
        let wrench = Wrench::from_vector(&f, b);
        let there = transform_wrench(&t, &wrench).unwrap().power(&transform_twist(&t, &twist).unwrap()).unwrap();
        let here = wrench.power(&twist).unwrap();
        prop_assert!((there - here).abs() <= 1e-11 * (1.0 + v.norm() * f.norm()));
    }

    #[test]
    fn mismatched_frames_are_rejected(v in vec6(1.0), f in vec6(1.0)) {
        let twist = Twist::from_vector(&v, Frame::new("a"));
        let wrench = Wrench::from_vector(&f, Frame::new("b"));
        prop_assert!(wrench.power(&twist).is_err());
    }

    #[test]
    fn sphere_contact_frame_lies_on_surface(radius in 0.005..0.1f64, lon in -3.0..3.0f64, lat in -1.3..1.3f64) {
        let surface = SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius }, Frame::new("s")).unwrap();
        let g = evaluate_contact_geometry(&surface, &Vector2::new(lon, lat)).unwrap();
        let p = g.frame.translation();
        let normal = g.frame.rotation_matrix().column(2).into_owned();
        prop_assert!((p.norm() - radius).abs() <= 1e-12);
        prop_assert!((normal - p / radius).norm() <= 1e-10);
        prop_assert!((g.curvature - Matrix3::identity().fixed_view::<2, 2>(0, 0) / radius).amax() <= 1e-8 / radius);
    }

    #[test]
    fn override_parsing_never_panics(text in ".{0,64}") {
        let _ = parse_override(&text);
    }

    #[test]
    fn scenario_parsing_never_panics(text in "(?s).{0,256}") {
        let _ = parse_scenario(&text);
    }

    #[test]
    fn well_formed_overrides_split_on_first_equals(key in "[a-z_]{1,8}(\\.[a-z0-9_]{1,8}){0,3}", value in "[-0-9.e=a-z]{0,12}") {
        let ov = parse_override(&format!("{key}={value}")).unwrap();
        prop_assert_eq!(ov.path.join("."), key);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_solve_is_linear(seed in any::<u64>(), n in 2usize..5, a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let mut rng = StdRng::seed_from_u64(seed);
        let state = random_grasp(&mut rng, n);
        let sys = assemble(&state).unwrap();
        let x = DVector::from_fn(6 * n, |i, _| ((seed >> (i % 32)) & 7) as f64 * 0.01 - 0.035);
        let y = DVector::from_fn(6 * n, |i, _| (i as f64 * 0.37).sin() * 0.02);
        let solve = |v: &DVector<f64>| forward_solve(&sys, v).unwrap().motion.unwrap().object_twist;
        let combined = solve(&(&x * a + &y * b));
        let separate = solve(&x) * a + solve(&y) * b;
        prop_assert!((combined - separate).amax() <= 1e-9 * (1.0 + separate.amax()));
    }

    #[test]
    fn closed_form_joint_rates_are_linear_and_track(seed in any::<u64>(), a in -2.0..2.0f64) {
        let mut rng = StdRng::seed_from_u64(seed);
        let state = jointed_grasp(&mut rng);
        let sys = assemble(&state).unwrap();
        let inv = inverse_map(&sys).unwrap();
        let config = ControllerConfig { mode: SolverMode::ClosedForm, joint_speed_limit: 1e6, ..Default::default() };
        let rows = force_rate_rows(&state, &sys, &inv, 0.0, 1e6);
        let xi = hand_jacobian(&state);
        let stack = |r: Vec<DVector<f64>>| DVector::from_iterator(xi.ncols(), r.into_iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()));
        let y = DVector::from_fn(6, |i, _| ((i as u64 + seed) % 5) as f64 * 0.01 - 0.02);
        let one = stack(solve_joint_velocities(&state, &inv, &y, &rows, &config).unwrap().0);
        let scaled = stack(solve_joint_velocities(&state, &inv, &(&y * a), &rows, &config).unwrap().0);
        prop_assert!((&scaled - &one * a).amax() <= 1e-10 * (1.0 + one.amax()));
        let tracked = &inv.reduced_map * &xi * &one;
        prop_assert!((tracked - &y).amax() <= 1e-9);
    }

    #[test]
    fn qp_with_slack_rows_matches_closed_form(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let state = jointed_grasp(&mut rng);
        let sys = assemble(&state).unwrap();
        let inv = inverse_map(&sys).unwrap();
        let rows = force_rate_rows(&state, &sys, &inv, 0.0, 1e6);
        let y = DVector::from_fn(6, |i, _| ((i as u64 * 7 + seed) % 9) as f64 * 0.005 - 0.02);
        let qp = ControllerConfig { mode: SolverMode::Qp, joint_speed_limit: 1e6, f_min: 0.0, mu_max: 1e6, ..Default::default() };
        let closed = ControllerConfig { mode: SolverMode::ClosedForm, ..qp.clone() };
        let (a, active, _, _) = solve_joint_velocities(&state, &inv, &y, &rows, &qp).unwrap();
        let (b, _, _, _) = solve_joint_velocities(&state, &inv, &y, &rows, &closed).unwrap();
        prop_assert!(active.is_empty());
        for (x, z) in a.iter().zip(&b) {
            prop_assert!((x - z).amax() <= 1e-8);
        }
    }

    #[test]
    fn qp_rates_respect_force_rows(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let state = jointed_grasp(&mut rng);
        let sys = assemble(&state).unwrap();
        let inv = inverse_map(&sys).unwrap();
        let strongest = (0..state.n()).map(|i| state.contact_force_local(i).norm()).fold(0.0, f64::max);
        let rows = force_rate_rows(&state, &sys, &inv, 2.0 * strongest, 0.1);
        let y = DVector::from_fn(6, |i, _| ((i as u64 * 3 + seed) % 7) as f64 * 0.01 - 0.03);
        let config = ControllerConfig { joint_speed_limit: 1e6, ..Default::default() };
        let Ok((rates, _, _, _)) = solve_joint_velocities(&state, &inv, &y, &rows, &config) else { return Ok(()) };
        let xi = hand_jacobian(&state);
        let theta = DVector::from_iterator(xi.ncols(), rates.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()));
        let va = &xi * &theta;
        for row in &rows.rows {
            prop_assert!(row.row.dot(&va) <= 1e-8 * (1.0 + row.row.norm() * va.norm()));
        }
        prop_assert!((&inv.reduced_map * &va - &y).amax() <= 1e-8);
    }
}

#[test]
fn trajectory_csv_round_trip_is_exact() {
    let text = bundled_source("fig6_disk").unwrap();
    let overrides = [parse_override("sim.duration=0.02").unwrap(), parse_override("sim.refinement_horizon=0").unwrap()];
    let scenario = parse_scenario_with(text, &overrides).unwrap();
    let record = Simulator::new(&scenario).unwrap().run();
    let mut bytes = Vec::new();
    write_trajectory(&record, &mut bytes).unwrap();
    let table = read_trajectory(bytes.as_slice()).unwrap();
    assert_eq!(table.header.len(), column_count(record.finger_names.len()));
    assert_eq!(table.fingers(), record.finger_names.len());
    assert_eq!(table.rows.len(), record.steps.len());
    for (row, step) in table.rows.iter().zip(&record.steps) {
        assert_eq!(row, &trajectory_row(step));
    }
    let times = table.column("t").unwrap();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn bundled_scenarios_parse() {
    for name in rollhand::scenario::bundled_names() {
        bundled(name).unwrap();
    }
}
