//! Acceptance criteria, one line each. Exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use rollhand::lie::rotation_angle;
use rollhand::scenario::{bundled, bundled_names};
use rollhand::sim::{run, EventKind, Simulator, TrajectoryRecord};
use rollhand::verify::{run_suite, Suite, VerifyReport};

struct Outcome {
    passed: bool,
    detail: String,
}

fn within(elapsed: Duration, limit: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit, format!("{s:.2} s < {limit} s"))
}

fn checks(report: &VerifyReport, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in names {
        let c = report.check(name).expect("known check");
        ok &= c.passed && c.samples > 0;
        parts.push(format!("{name} {:.2e} < {:.0e} (n = {})", c.measured, c.tolerance, c.samples));
    }
    (ok, parts.join(", "))
}

fn derivative_identities() -> Outcome {
    let start = Instant::now();
    let report = run_suite(Suite::Lie);
    let (ok, detail) = checks(&report, &["adjoint_rate_finite_difference", "wrench_rate_finite_difference"]);
    let (fast, time) = within(start.elapsed(), 5.0);
    Outcome {
        passed: ok && fast,
        detail: format!("{detail}; {time}"),
    }
}

fn dual_route_identity() -> Outcome {
    let start = Instant::now();
    let report = run_suite(Suite::Mechanics);
    let (ok, detail) = checks(&report, &["dual_route_wrench_rate"]);
    let (fast, time) = within(start.elapsed(), 10.0);
    Outcome {
        passed: ok && fast && report.check("dual_route_wrench_rate").unwrap().samples >= 100,
        detail: format!("{detail}; {time}"),
    }
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let report = run_suite(Suite::Mechanics);
    let (ok, detail) = checks(&report, &["forward_inverse_round_trip"]);
    let (fast, time) = within(start.elapsed(), 10.0);
    Outcome {
        passed: ok && fast,
        detail: format!("{detail}; {time}"),
    }
}

fn fig6() -> Outcome {
    let start = Instant::now();
    let scenario = bundled("fig6_disk").expect("bundled");
    let record = Simulator::new(&scenario).expect("seeds").run();
    let s = &record.summary;
    let radius = 0.015;
    let degrees = s.rotation_angle.to_degrees();
    let d = &s.flexure_displacement;
    let asymmetry = (d[0] - d[1]).abs() / d[0].max(d[1]);
    let (fast, time) = within(start.elapsed(), 30.0);
    Outcome {
        passed: degrees >= 20.0 && s.center_displacement < 0.1 * radius && asymmetry < 0.05 && fast,
        detail: format!(
            "rotation {degrees:.2} deg >= 20, center {:.2e} m < {:.1e} m, flexure asymmetry {:.2}% < 5%; {time}",
            s.center_displacement,
            0.1 * radius,
            100.0 * asymmetry
        ),
    }
}

/// Rotation of the object at the first recorded step at or after `t`,
/// relative to the pose at step 0.
fn rotation_at(record: &TrajectoryRecord, t: f64) -> Option<(usize, f64)> {
    let first = record.steps.first()?.object_pose.rotation_matrix();
    let k = record.steps.iter().position(|r| r.time >= t - 1e-9)?;
    let r = first.transpose() * record.steps[k].object_pose.rotation_matrix();
    Some((k, rotation_angle(&r)))
}

fn cylinder() -> Outcome {
    let start = Instant::now();
    let scenario = bundled("cylinder_twist").expect("bundled");
    let record = Simulator::new(&scenario).expect("seeds").run();
    let Some((k, angle)) = rotation_at(&record, 5.0) else {
        return Outcome {
            passed: false,
            detail: format!("run ended at t = {:.3} s ({:?})", record.summary.final_time, record.summary.termination),
        };
    };
    let degrees = angle.to_degrees();
    let hold = record.steps[k].object_pose.rotation_matrix();
    let drift = record.steps[k..]
        .iter()
        .map(|r| rotation_angle(&(hold.transpose() * r.object_pose.rotation_matrix())))
        .fold(0.0, f64::max)
        .to_degrees();
    let reached_end = record.summary.final_time >= 10.0 - 1e-9;
    let (lo, hi) = record.steps.iter().flat_map(|r| r.normal_forces.iter().copied()).fold((f64::INFINITY, 0.0f64), |(lo, hi), f| (lo.min(f), hi.max(f)));
    let (fast, time) = within(start.elapsed(), 60.0);
    Outcome {
        passed: (degrees - 30.0).abs() <= 2.0 && drift < 0.5 && reached_end && lo >= 0.5 && hi <= 5.0 && fast,
        detail: format!(
            "angle at 5 s {degrees:.3} deg (30 +/- 2), hold drift {drift:.2e} deg < 0.5, held to {:.1} s, normal forces [{lo:.3}, {hi:.3}] N in [0.5, 5]; {time}",
            record.summary.final_time
        ),
    }
}

fn degeneracy() -> Outcome {
    let scenario = bundled("degenerate_parallel_plates").expect("bundled");
    let record = Simulator::new(&scenario).expect("seeds").run();
    let event = record.events.iter().find(|e| e.kind == EventKind::SingularSystem && e.step == 0 && e.terminal);
    let ratio = record.steps.first().map_or(f64::NAN, |r| r.sigma_ratio);
    Outcome {
        passed: event.is_some() && ratio < 1e-10,
        detail: format!("singular_system at step 0: {}, sigma ratio {ratio:.2e} < 1e-10", event.is_some()),
    }
}

fn qp() -> Outcome {
    let report = run_suite(Suite::Control);
    let (ok, detail) = checks(&report, &["qp_matches_kkt_enumeration", "closed_form_pseudoinverse"]);
    Outcome { passed: ok, detail }
}

fn conservation() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in bundled_names() {
        let scenario = bundled(name).expect("bundled");
        let record = run(&scenario).expect("runs");
        let s = &record.summary;
        let refinement = s.refinement.as_ref().expect("refinement study");
        let good = s.max_gap < 1e-6
            && s.max_equilibrium_residual < 1e-3
            && s.rolling_mismatch < 0.01
            && s.energy_mismatch < 0.01
            && refinement.converging;
        ok &= good;
        let rates: Vec<String> = refinement.levels.iter().map(|l| format!("{:.2e}", l.gap_drift_rate)).collect();
        let wrench: Vec<String> = refinement.levels.iter().map(|l| format!("{:.3e}", l.wrench_drift_rate)).collect();
        parts.push(format!(
            "{name}: gap {:.1e}, residual {:.1e}, rolling {:.2e}, power {:.2e}, gap drift [{}], wrench drift [{}]",
            s.max_gap,
            s.max_equilibrium_residual,
            s.rolling_mismatch,
            s.energy_mismatch,
            rates.join(", "),
            wrench.join(", ")
        ));
    }
    Outcome {
        passed: ok,
        detail: parts.join("; "),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("derivative identities", derivative_identities),
        ("dual-route wrench rate", dual_route_identity),
        ("forward/inverse round trip", round_trip),
        ("disk rolled by two fingers", fig6),
        ("closed-loop cylinder twist", cylinder),
        ("degeneracy detection", degeneracy),
        ("QP correctness", qp),
        ("simulation conservation", conservation),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {}: {verdict}: {name}: {}", k + 1, outcome.detail);
        if !outcome.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
