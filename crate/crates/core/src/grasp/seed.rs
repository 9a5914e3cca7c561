//! Projection of a grasp onto the quasistatic contact manifold.
//!
//! The unknowns are a correction of the object pose inside the admissible
//! motion subspace and a correction of every fingertip pose. The residual is
//! made of the contact gaps, the moments of the contact wrenches about their
//! contact points, and the unbalanced object wrench. Corrections are taken as
//! minimum-norm Gauss-Newton steps (angles weighted by the grasp length
//! scale), so a state already close to the manifold moves as little as
//! possible.

use nalgebra::{DMatrix, DVector, Vector6};

use super::{GraspError, GraspState, Reseats, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionOptions {
    pub gap_tolerance: f64,
    pub moment_tolerance: f64,
    pub equilibrium_tolerance: f64,
    pub max_iterations: usize,
    /// Finite-difference step relative to the length scale.
    pub fd_step: f64,
    /// Largest correction per iteration relative to the length scale.
    pub max_step: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            gap_tolerance: 1e-10,
            moment_tolerance: 1e-9,
            equilibrium_tolerance: 1e-9,
            max_iterations: 100,
            fd_step: 1e-6,
            max_step: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProjectionReport {
    pub iterations: usize,
    pub max_gap: f64,
    pub max_moment: f64,
    pub max_unbalanced: f64,
    /// Size of the applied correction in scaled units.
    pub correction: f64,
    pub reseats: Reseats,
}

struct Layout {
    /// Object twist = `object_map * q` for the scaled object unknowns `q`.
    object_map: DMatrix<f64>,
    scale: f64,
    n: usize,
}

impl Layout {
    fn new(state: &GraspState) -> Self {
        let scale = state.length_scale();
        let s = state.constraint.motion_basis();
        let mut weighted = s.clone();
        for r in 0..3 {
            weighted.row_mut(r).scale_mut(scale);
        }
        // Λ S = U R, so S R⁻¹ maps unknowns with ‖q‖ = ‖Λ V‖ to twists.
        let r = weighted.qr().r();
        let r_inv = r.try_inverse().expect("constraint basis has full column rank");
        Layout {
            object_map: s * r_inv,
            scale,
            n: state.n(),
        }
    }

    fn dim(&self) -> usize {
        self.object_map.ncols() + 6 * self.n
    }

    fn unscale(&self, z: &[f64]) -> Vector6<f64> {
        let l = self.scale;
        Vector6::new(z[0] / l, z[1] / l, z[2] / l, z[3], z[4], z[5])
    }

    fn apply(&self, state: &GraspState, z: &DVector<f64>) -> Result<(GraspState, Reseats)> {
        let d = self.object_map.ncols();
        let mut next = state.clone();
        let v_o = &self.object_map * z.rows(0, d);
        let v_o = Vector6::from_column_slice(v_o.as_slice());
        if v_o.norm() > 0.0 {
            next.object.pose = state.object.pose.advanced(&v_o, 1.0);
        }
        for i in 0..self.n {
            let zi = z.rows(d + 6 * i, 6);
            if zi.norm() > 0.0 {
                next.fingers[i].tip = state.fingers[i].tip.advanced(&self.unscale(zi.as_slice()), 1.0);
            }
        }
        let reseats = next.refresh()?;
        Ok((next, reseats))
    }
}

/// Raw residual `[gaps; contact moments; Sᵀ(ΣF + F_ext)]`.
fn residual(state: &GraspState) -> DVector<f64> {
    let n = state.n();
    let unbalanced = state.unbalanced_wrench();
    let mut r = DVector::zeros(4 * n + unbalanced.len());
    for (i, c) in state.contacts.iter().enumerate() {
        r[i] = c.gap;
    }
    for (i, m) in state.contact_moments().iter().enumerate() {
        r.rows_mut(n + 3 * i, 3).copy_from(m);
    }
    r.rows_mut(4 * n, unbalanced.len()).copy_from(&unbalanced);
    r
}

fn merit(r: &DVector<f64>, n: usize, scale: f64) -> f64 {
    let geometric: f64 = r.rows(0, 4 * n).norm_squared() / (scale * scale);
    geometric + r.rows(4 * n, r.len() - 4 * n).norm_squared()
}

fn measures(r: &DVector<f64>, n: usize) -> (f64, f64, f64) {
    let gap = r.rows(0, n).amax();
    let moment = (0..n).map(|i| r.rows(n + 3 * i, 3).norm()).fold(0.0, f64::max);
    let tail = r.rows(4 * n, r.len() - 4 * n);
    let unbalanced = if tail.is_empty() { 0.0 } else { tail.amax() };
    (gap, moment, unbalanced)
}

/// Moves `state` onto the contact/equilibrium manifold.
///
/// Fails with [`GraspError::ProjectionFailed`] if the tolerances are not met
/// within the iteration budget.
pub fn project_to_manifold(state: &GraspState, opts: &ProjectionOptions) -> Result<(GraspState, ProjectionReport)> {
    let layout = Layout::new(state);
    let n = layout.n;
    let dim = layout.dim();
    let h = opts.fd_step * layout.scale;
    let mut current = state.clone();
    let mut report = ProjectionReport::default();
    let mut r = residual(&current);
    for iteration in 0..=opts.max_iterations {
        let (gap, moment, unbalanced) = measures(&r, n);
        report.iterations = iteration;
        report.max_gap = gap;
        report.max_moment = moment;
        report.max_unbalanced = unbalanced;
        if gap < opts.gap_tolerance && moment < opts.moment_tolerance && unbalanced < opts.equilibrium_tolerance {
            return Ok((current, report));
        }
        if iteration == opts.max_iterations {
            break;
        }
        let mut jac = DMatrix::zeros(r.len(), dim);
        for k in 0..dim {
            let mut dz = DVector::zeros(dim);
            dz[k] = h;
            let (plus, _) = layout.apply(&current, &dz)?;
            dz[k] = -h;
            let (minus, _) = layout.apply(&current, &dz)?;
            jac.set_column(k, &((residual(&plus) - residual(&minus)) / (2.0 * h)));
        }
        let svd = jac.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max();
        let mut step = -svd.solve(&r, tol).expect("svd solve");
        let limit = opts.max_step * layout.scale;
        if step.norm() > limit {
            step *= limit / step.norm();
        }
        let base = merit(&r, n, layout.scale);
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..12 {
            let trial = &step * alpha;
            if let Ok((next, reseats)) = layout.apply(&current, &trial) {
                let rn = residual(&next);
                if merit(&rn, n, layout.scale) < base {
                    accepted = Some((next, rn, reseats, trial.norm()));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((next, rn, reseats, size)) => {
                current = next;
                r = rn;
                report.correction += size;
                report.reseats.extend(reseats);
            }
            None => break,
        }
    }
    Err(GraspError::ProjectionFailed {
        iterations: report.iterations,
        residual: report.max_gap.max(report.max_moment).max(report.max_unbalanced),
    })
}

/// Builds an initial quasistatic grasp from a guess (typically relaxed
/// fingertips pressed into the object).
pub fn seed_equilibrium(state: &GraspState, opts: &ProjectionOptions) -> Result<(GraspState, ProjectionReport)> {
    project_to_manifold(state, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SurfaceKind, SurfaceModel};
    use crate::grasp::tests::{sphere_finger, w};
    use crate::grasp::{FingerModel, ObjectConstraint, RigidObject};
    use crate::lie::{Frame, Transform};
    use nalgebra::Vector3;
    use std::sync::Arc;

    fn disk_state(constraint: ObjectConstraint, gravity: Vector3<f64>) -> GraspState {
        let hand: Arc<[FingerModel]> = vec![
            sphere_finger("l", Vector3::new(-0.0205, 0.0, 0.0), 0.0075, vec![]),
            sphere_finger("r", Vector3::new(0.0205, 0.0, 0.0), 0.0075, vec![]),
        ]
        .into();
        let o = Frame::new("o");
        let obj = RigidObject::new(
            0.01,
            SurfaceModel::at_body_origin(SurfaceKind::Cylinder { radius: 0.015, half_length: None }, o.clone()).unwrap(),
            Transform::identity(w(), o),
        )
        .unwrap();
        let fingers = GraspState::relaxed_fingers(&hand, &obj, &[DVector::zeros(0), DVector::zeros(0)]);
        GraspState::new(obj, hand, fingers, gravity, constraint).unwrap().0
    }

    #[test]
    fn symmetric_disk_grasp_seeds_to_equilibrium() {
        let planar = ObjectConstraint::Planar { point: Vector3::zeros(), normal: Vector3::z() };
        let guess = disk_state(planar, Vector3::new(0.0, 0.0, -9.81));
        let (state, report) = seed_equilibrium(&guess, &ProjectionOptions::default()).unwrap();
        assert!(report.iterations < 20);
        assert!(state.gaps().iter().all(|g| g.abs() < 1e-10));
        assert!(state.unbalanced_wrench().amax() < 1e-9);
        let forces = state.contact_force_components();
        // 2 mm preload shared by two 1000 N/m springs
        for (normal, tangential) in &forces {
            assert!((normal - 2.0).abs() < 1e-6, "{normal}");
            assert!(tangential.abs() < 1e-9);
        }
        assert!(state.object.pose.translation().norm() < 1e-9);
    }

    #[test]
    fn free_object_seeding_balances_gravity() {
        let guess = disk_state(ObjectConstraint::Free, Vector3::new(0.0, -9.81, 0.0));
        let (state, _) = seed_equilibrium(&guess, &ProjectionOptions::default()).unwrap();
        assert!(state.equilibrium_residual().amax() < 1e-9);
        assert!(state.contact_moments().iter().all(|m| m.norm() < 1e-9));
        let lift: Vector3<f64> = state.wrenches.iter().map(|w| w.force).sum();
        assert!((lift - Vector3::new(0.0, 0.01 * 9.81, 0.0)).norm() < 1e-9);
        // the fingertips deflect downward to carry the weight
        for (m, f) in state.hand.iter().zip(&state.fingers) {
            assert!(f.displacement(m).unwrap()[4] < 0.0);
        }
    }
}
