//! Parametric contact surfaces and rolling contact kinematics.
//!
//! Each surface lives in a local frame placed in its owning body frame. Charts
//! are orthogonal, so the metric form is diagonal:
//!
//! * plane: `u = (x, y)`, outward normal `+z`;
//! * sphere: `u = (longitude, latitude)` about the local `z` axis, poles excluded;
//! * cylinder: `u = (azimuth, height)` about the local `z` axis.

use nalgebra::{Matrix2, Matrix3, Matrix6, RowVector2, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lie::{Frame, LieError, Rotation, Transform};

/// Relative curvature is treated as singular at or above this condition number.
pub const CURVATURE_CONDITION_LIMIT: f64 = 1e8;

/// Sphere charts are re-seated once the contact latitude exceeds this angle.
pub const RESEAT_LATITUDE: f64 = 80.0 * std::f64::consts::PI / 180.0;

/// Latitudes closer than this to a pole are rejected as chart singularities.
const POLE_MARGIN: f64 = 1e-9;

/// Below this distance two closest-point candidates cannot be told apart.
const DEGENERATE_DISTANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("chart coordinates ({0}, {1}) are outside the chart domain")]
    OutsideChart(f64, f64),
    #[error("chart coordinates ({0}, {1}) are at a chart singularity")]
    ChartSingularity(f64, f64),
    #[error("relative curvature is degenerate (condition number {0:.3e})")]
    DegenerateCurvature(f64),
    #[error("closest point is not unique")]
    NonUniqueClosestPoint,
    #[error("contact between {0} and {1} is not supported")]
    UnsupportedPair(&'static str, &'static str),
    #[error("invalid surface: {0}")]
    InvalidShape(&'static str),
    #[error(transparent)]
    Lie(#[from] LieError),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum SurfaceKind {
    Plane,
    Sphere { radius: f64 },
    /// Lateral surface only; end caps are not modelled.
    Cylinder { radius: f64, half_length: Option<f64> },
}

impl SurfaceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SurfaceKind::Plane => "plane",
            SurfaceKind::Sphere { .. } => "sphere",
            SurfaceKind::Cylinder { .. } => "cylinder",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SurfaceKind::Plane => Ok(()),
            SurfaceKind::Sphere { radius } if radius > 0.0 && radius.is_finite() => Ok(()),
            SurfaceKind::Cylinder { radius, half_length }
                if radius > 0.0 && radius.is_finite() && half_length.is_none_or(|h| h > 0.0) =>
            {
                Ok(())
            }
            _ => Err(GeometryError::InvalidShape("radius and half length must be positive")),
        }
    }
}

/// A surface attached to a rigid body. `placement` maps the local surface
/// frame into the body frame (`from` = body, `to` = surface).
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceModel {
    kind: SurfaceKind,
    placement: Transform,
}

impl SurfaceModel {
    pub fn new(kind: SurfaceKind, placement: Transform) -> Result<Self> {
        kind.validate()?;
        Ok(SurfaceModel { kind, placement })
    }

    /// Surface frame coincident with the body frame.
    pub fn at_body_origin(kind: SurfaceKind, body: Frame) -> Result<Self> {
        let surface = Frame::new(format!("{}/s", body.name()));
        Self::new(kind, Transform::identity(body, surface))
    }

    pub fn kind(&self) -> &SurfaceKind {
        &self.kind
    }

    pub fn placement(&self) -> &Transform {
        &self.placement
    }

    pub fn body_frame(&self) -> &Frame {
        self.placement.from_frame()
    }

    /// Chart point in the local surface frame.
    pub fn local_point(&self, u: &Vector2<f64>) -> Vector3<f64> {
        match self.kind {
            SurfaceKind::Plane => Vector3::new(u.x, u.y, 0.0),
            SurfaceKind::Sphere { radius } => {
                let (lon, lat) = (u.x, u.y);
                radius * Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin())
            }
            SurfaceKind::Cylinder { radius, .. } => Vector3::new(radius * u.x.cos(), radius * u.x.sin(), u.y),
        }
    }

    /// Chart coordinates of a local point on (or near) the surface, located
    /// through the local outward normal direction.
    fn chart_of(&self, point: &Vector3<f64>, normal: &Vector3<f64>) -> Vector2<f64> {
        match self.kind {
            SurfaceKind::Plane => Vector2::new(point.x, point.y),
            SurfaceKind::Sphere { .. } => {
                Vector2::new(normal.y.atan2(normal.x), normal.z.atan2(normal.x.hypot(normal.y)))
            }
            SurfaceKind::Cylinder { .. } => Vector2::new(normal.y.atan2(normal.x), point.z),
        }
    }

    /// Same sphere with its chart rotated so that the local direction `dir`
    /// sits on the chart equator at zero longitude.
    pub fn reseated_toward(&self, dir: &Vector3<f64>) -> SurfaceModel {
        let x = dir.normalize();
        let helper = if x.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let y = helper.cross(&x).normalize();
        let z = x.cross(&y);
        let r = Rotation::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
        let surface = self.placement.to_frame().clone();
        let turn = Transform::new(r, Vector3::zeros(), surface.clone(), surface);
        SurfaceModel {
            kind: self.kind,
            placement: self.placement.compose_unchecked(&turn),
        }
    }
}

/// Contact coordinates, fundamental forms and contact frame at a chart point.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactGeometry {
    pub u: Vector2<f64>,
    pub metric: Matrix2<f64>,
    pub curvature: Matrix2<f64>,
    pub torsion: RowVector2<f64>,
    /// Body frame to contact frame; the contact `z` axis is the outward normal.
    pub frame: Transform,
}

fn contact_label(body: &Frame) -> Frame {
    Frame::new(format!("{}/c", body.name()))
}

pub fn evaluate_contact_geometry(surface: &SurfaceModel, u: &Vector2<f64>) -> Result<ContactGeometry> {
    if !(u.x.is_finite() && u.y.is_finite()) {
        return Err(GeometryError::OutsideChart(u.x, u.y));
    }
    let (x, y, n, metric, curvature, torsion) = match surface.kind {
        SurfaceKind::Plane => (
            Vector3::x(),
            Vector3::y(),
            Vector3::z(),
            Matrix2::identity(),
            Matrix2::zeros(),
            RowVector2::zeros(),
        ),
        SurfaceKind::Sphere { radius } => {
            let (lon, lat) = (u.x, u.y);
            if lat.abs() > std::f64::consts::FRAC_PI_2 {
                return Err(GeometryError::OutsideChart(u.x, u.y));
            }
            if std::f64::consts::FRAC_PI_2 - lat.abs() < POLE_MARGIN {
                return Err(GeometryError::ChartSingularity(u.x, u.y));
            }
            let (sl, cl) = lat.sin_cos();
            let (so, co) = lon.sin_cos();
            (
                Vector3::new(-so, co, 0.0),
                Vector3::new(-sl * co, -sl * so, cl),
                Vector3::new(cl * co, cl * so, sl),
                Matrix2::new(radius * cl, 0.0, 0.0, radius),
                Matrix2::identity() / radius,
                RowVector2::new(sl / (cl * radius), 0.0),
            )
        }
        SurfaceKind::Cylinder { radius, half_length } => {
            if half_length.is_some_and(|h| u.y.abs() > h) {
                return Err(GeometryError::OutsideChart(u.x, u.y));
            }
            let (s, c) = u.x.sin_cos();
            (
                Vector3::new(-s, c, 0.0),
                Vector3::z(),
                Vector3::new(c, s, 0.0),
                Matrix2::new(radius, 0.0, 0.0, 1.0),
                Matrix2::new(1.0 / radius, 0.0, 0.0, 0.0),
                RowVector2::zeros(),
            )
        }
    };
    let local = Transform::new(
        Rotation::from_matrix_unchecked(Matrix3::from_columns(&[x, y, n])),
        surface.local_point(u),
        surface.placement.to_frame().clone(),
        contact_label(surface.body_frame()),
    );
    Ok(ContactGeometry {
        u: *u,
        metric,
        curvature,
        torsion,
        frame: surface.placement.compose_unchecked(&local),
    })
}

/// Object/fingertip contact at one finger.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactPair {
    pub object: ContactGeometry,
    pub fingertip: ContactGeometry,
    /// Chart angle between the two contact frames.
    pub phi: f64,
    /// Object-side contact point in world coordinates.
    pub point: Vector3<f64>,
    /// Signed separation along the object normal (negative = penetration).
    pub gap: f64,
    /// World pose of the object contact frame.
    pub object_world: Transform,
    /// World pose of the fingertip contact frame.
    pub fingertip_world: Transform,
}

impl ContactPair {
    /// Outward object normal in world coordinates.
    pub fn normal(&self) -> Vector3<f64> {
        self.object_world.rotation_matrix().column(2).into_owned()
    }
}

/// `R_φ = [[cos φ, sin φ], [sin φ, −cos φ]]`.
pub fn r_phi(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, s, s, -c)
}

pub fn relative_curvature(pair: &ContactPair) -> Matrix2<f64> {
    let r = r_phi(pair.phi);
    pair.object.curvature + r * pair.fingertip.curvature * r
}

/// `G = [[0, −1], [1, 0]] K ; T ; I ; 0` (6×2).
pub fn montana_g(geometry: &ContactGeometry) -> SMatrix<f64, 6, 2> {
    let j = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    let mut g = SMatrix::<f64, 6, 2>::zeros();
    g.fixed_view_mut::<2, 2>(0, 0).copy_from(&(j * geometry.curvature));
    g.fixed_view_mut::<1, 2>(2, 0).copy_from(&geometry.torsion);
    g.fixed_view_mut::<2, 2>(3, 0).copy_from(&Matrix2::identity());
    g
}

/// Selects `(ω_y, −ω_x)` from a twist.
pub fn rolling_selector() -> SMatrix<f64, 2, 6> {
    let mut n = SMatrix::<f64, 2, 6>::zeros();
    n[(0, 1)] = 1.0;
    n[(1, 0)] = -1.0;
    n
}

/// The rolling map `L₁` in the object contact frame and its world-frame
/// conjugate `L̃₁ = Ad_{T_wc₁} L₁ Ad_{T_wc₁}⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct RollingMap {
    pub local: Matrix6<f64>,
    pub world: Matrix6<f64>,
}

pub fn rolling_map(pair: &ContactPair) -> Result<RollingMap> {
    let k = relative_curvature(pair);
    let sv = k.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < CURVATURE_CONDITION_LIMIT) {
        return Err(GeometryError::DegenerateCurvature(condition));
    }
    let k_inv = k.try_inverse().ok_or(GeometryError::DegenerateCurvature(condition))?;
    let local = montana_g(&pair.object) * k_inv * rolling_selector();
    let ad = pair.object_world.adjoint();
    let ad_inv = pair.object_world.inverse().adjoint();
    Ok(RollingMap {
        local,
        world: ad * local * ad_inv,
    })
}

/// World-space closest points of two surfaces: `(point on a, point on b,
/// outward normal of a, signed gap)`.
type RawContact = (Vector3<f64>, Vector3<f64>, Vector3<f64>, f64);

struct WorldSurface<'a> {
    kind: &'a SurfaceKind,
    pose: Transform,
}

impl WorldSurface<'_> {
    fn origin(&self) -> Vector3<f64> {
        *self.pose.translation()
    }

    fn axis(&self) -> Vector3<f64> {
        self.pose.rotation_matrix().column(2).into_owned()
    }
}

fn sphere_sphere(a: &WorldSurface, ra: f64, b: &WorldSurface, rb: f64) -> Result<RawContact> {
    let d = b.origin() - a.origin();
    let dist = d.norm();
    if dist < DEGENERATE_DISTANCE {
        return Err(GeometryError::NonUniqueClosestPoint);
    }
    let n = d / dist;
    Ok((a.origin() + ra * n, b.origin() - rb * n, n, dist - ra - rb))
}

fn sphere_plane(a: &WorldSurface, ra: f64, b: &WorldSurface) -> Result<RawContact> {
    let m = b.axis();
    let height = (a.origin() - b.origin()).dot(&m);
    Ok((a.origin() - ra * m, a.origin() - height * m, -m, height - ra))
}

fn sphere_cylinder(a: &WorldSurface, ra: f64, b: &WorldSurface, rb: f64) -> Result<RawContact> {
    let e = b.axis();
    let rel = a.origin() - b.origin();
    let along = rel.dot(&e);
    let radial = rel - along * e;
    let rho = radial.norm();
    if rho < DEGENERATE_DISTANCE {
        return Err(GeometryError::NonUniqueClosestPoint);
    }
    let m = radial / rho;
    let on_cylinder = b.origin() + along * e + rb * m;
    Ok((a.origin() - ra * m, on_cylinder, -m, rho - ra - rb))
}

fn raw_contact(a: &WorldSurface, b: &WorldSurface) -> Result<RawContact> {
    use SurfaceKind::*;
    let swap = |r: Result<RawContact>| r.map(|(pb, pa, nb, gap)| (pa, pb, -nb, gap));
    match (*a.kind, *b.kind) {
        (Sphere { radius: ra }, Sphere { radius: rb }) => sphere_sphere(a, ra, b, rb),
        (Sphere { radius }, Plane) => sphere_plane(a, radius, b),
        (Plane, Sphere { radius }) => swap(sphere_plane(b, radius, a)),
        (Sphere { radius: ra }, Cylinder { radius: rb, .. }) => sphere_cylinder(a, ra, b, rb),
        (Cylinder { radius: ra, .. }, Sphere { radius: rb }) => swap(sphere_cylinder(b, rb, a, ra)),
        (ka, kb) => Err(GeometryError::UnsupportedPair(ka.name(), kb.name())),
    }
}

fn world_surface<'a>(surface: &'a SurfaceModel, pose: &Transform) -> Result<WorldSurface<'a>> {
    Ok(WorldSurface {
        kind: &surface.kind,
        pose: pose.compose(&surface.placement)?,
    })
}

fn local_geometry(
    surface: &SurfaceModel,
    world: &WorldSurface,
    point: &Vector3<f64>,
    normal: &Vector3<f64>,
) -> Result<ContactGeometry> {
    let inv = world.pose.inverse();
    let u = surface.chart_of(&inv.transform_point(point), &inv.transform_vector(normal));
    evaluate_contact_geometry(surface, &u)
}

/// Local latitude of the contact direction on a sphere chart, if the surface is a sphere.
fn sphere_latitude(surface: &SurfaceModel, world: &WorldSurface, normal: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    match surface.kind {
        SurfaceKind::Sphere { .. } => {
            let local = world.pose.inverse().transform_vector(normal);
            Some((local.z.atan2(local.x.hypot(local.y)), local))
        }
        _ => None,
    }
}

fn assemble_pair(
    object: &SurfaceModel,
    t_wo: &Transform,
    tip: &SurfaceModel,
    t_wf: &Transform,
    raw: &RawContact,
) -> Result<ContactPair> {
    let (p_obj, p_tip, n_obj, gap) = raw;
    let wo = world_surface(object, t_wo)?;
    let wf = world_surface(tip, t_wf)?;
    let obj_geom = local_geometry(object, &wo, p_obj, n_obj)?;
    let tip_geom = local_geometry(tip, &wf, p_tip, &(-n_obj))?;
    let object_world = t_wo.compose(&obj_geom.frame)?;
    let fingertip_world = t_wf.compose(&tip_geom.frame)?;
    let r1 = object_world.rotation_matrix();
    let x2 = fingertip_world.rotation_matrix().column(0).into_owned();
    let phi = x2.dot(&r1.column(1)).atan2(x2.dot(&r1.column(0)));
    Ok(ContactPair {
        object: obj_geom,
        fingertip: tip_geom,
        phi,
        point: *p_obj,
        gap: *gap,
        object_world,
        fingertip_world,
    })
}

/// Contact between an object surface at `t_wo` and a fingertip surface at `t_wf`.
///
/// The pair is returned whatever the sign of the gap; callers decide whether a
/// separation is acceptable.
pub fn closest_point_contact(
    object: &SurfaceModel,
    t_wo: &Transform,
    tip: &SurfaceModel,
    t_wf: &Transform,
) -> Result<ContactPair> {
    let wo = world_surface(object, t_wo)?;
    let wf = world_surface(tip, t_wf)?;
    let raw = raw_contact(&wo, &wf)?;
    assemble_pair(object, t_wo, tip, t_wf, &raw)
}

/// Outcome of [`closest_point_contact_reseating`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReseatedContact {
    pub pair: ContactPair,
    pub object_reseated: bool,
    pub tip_reseated: bool,
}

/// Like [`closest_point_contact`], but first re-seats any sphere chart whose
/// contact latitude exceeds [`RESEAT_LATITUDE`], updating the surface in place.
pub fn closest_point_contact_reseating(
    object: &mut SurfaceModel,
    t_wo: &Transform,
    tip: &mut SurfaceModel,
    t_wf: &Transform,
) -> Result<ReseatedContact> {
    let (object_reseated, tip_reseated) = {
        let wo = world_surface(object, t_wo)?;
        let wf = world_surface(tip, t_wf)?;
        let (_, _, n_obj, _) = raw_contact(&wo, &wf)?;
        let check = |s: &SurfaceModel, w: &WorldSurface, n: &Vector3<f64>| {
            sphere_latitude(s, w, n)
                .filter(|(lat, _)| lat.abs() > RESEAT_LATITUDE)
                .map(|(_, dir)| s.reseated_toward(&dir))
        };
        (check(object, &wo, &n_obj), check(tip, &wf, &(-n_obj)))
    };
    let flags = (object_reseated.is_some(), tip_reseated.is_some());
    if let Some(s) = object_reseated {
        *object = s;
    }
    if let Some(s) = tip_reseated {
        *tip = s;
    }
    Ok(ReseatedContact {
        pair: closest_point_contact(object, t_wo, tip, t_wf)?,
        object_reseated: flags.0,
        tip_reseated: flags.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp_pose, log_pose};
    use nalgebra::Vector6;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn fr(s: &str) -> Frame {
        Frame::new(s)
    }

    fn w() -> Frame {
        Frame::world()
    }

    fn sphere(r: f64, body: &str) -> SurfaceModel {
        SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: r }, fr(body)).unwrap()
    }

    fn at(p: Vector3<f64>, body: &str) -> Transform {
        Transform::from_translation(p, w(), fr(body))
    }

    fn contact(a: &SurfaceModel, ta: &Transform, b: &SurfaceModel, tb: &Transform) -> ContactPair {
        closest_point_contact_reseating(&mut a.clone(), ta, &mut b.clone(), tb).unwrap().pair
    }

    /// Curvature, torsion and metric rebuilt from finite differences of the chart point map.
    fn gauss_map_oracle(s: &SurfaceModel, u: &Vector2<f64>) -> (Matrix2<f64>, Matrix2<f64>, RowVector2<f64>) {
        let h = 1e-5;
        let du = [Vector2::new(h, 0.0), Vector2::new(0.0, h)];
        let dp = |u: &Vector2<f64>, k: usize| (s.local_point(&(u + du[k])) - s.local_point(&(u - du[k]))) / (2.0 * h);
        let frame = |u: &Vector2<f64>| {
            let (a, b) = (dp(u, 0), dp(u, 1));
            let x = a.normalize();
            let y = b.normalize();
            (x, y, x.cross(&y).normalize())
        };
        let (x, y, _) = frame(u);
        let m = Matrix2::new(dp(u, 0).norm(), 0.0, 0.0, dp(u, 1).norm());
        let mut dn = SMatrix::<f64, 3, 2>::zeros();
        let mut dx = SMatrix::<f64, 3, 2>::zeros();
        for k in 0..2 {
            let (xp, _, np) = frame(&(u + du[k]));
            let (xm, _, nm) = frame(&(u - du[k]));
            dn.set_column(k, &((np - nm) / (2.0 * h)));
            dx.set_column(k, &((xp - xm) / (2.0 * h)));
        }
        let basis = SMatrix::<f64, 3, 2>::from_columns(&[x, y]);
        let m_inv = m.try_inverse().unwrap();
        let k = basis.transpose() * dn * m_inv;
        let t = y.transpose() * dx * m_inv;
        (m, k, t)
    }

    #[test]
    fn plane_is_flat() {
        let s = SurfaceModel::at_body_origin(SurfaceKind::Plane, fr("o")).unwrap();
        let g = evaluate_contact_geometry(&s, &Vector2::new(0.3, -2.0)).unwrap();
        assert_eq!(g.curvature, Matrix2::zeros());
        assert_eq!(g.torsion, RowVector2::zeros());
        assert_eq!(g.metric, Matrix2::identity());
    }

    #[test]
    fn sphere_and_cylinder_forms_match_gauss_map() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..50 {
            let r = rng.random_range(0.005..0.1);
            let u = Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-1.3..1.3));
            for kind in [
                SurfaceKind::Sphere { radius: r },
                SurfaceKind::Cylinder { radius: r, half_length: None },
            ] {
                let s = SurfaceModel::at_body_origin(kind, fr("o")).unwrap();
                let g = evaluate_contact_geometry(&s, &u).unwrap();
                let (m, k, t) = gauss_map_oracle(&s, &u);
                let scale = 1.0 / r;
                assert!((g.metric - m).abs().max() < 1e-8, "{kind:?} metric");
                assert!((g.curvature - k).abs().max() < 1e-5 * scale, "{kind:?} curvature {} vs {}", g.curvature, k);
                assert!((g.torsion - t).abs().max() < 1e-5 * scale * (1.0 + u.y.tan().abs()), "{kind:?} torsion");
                assert!((g.curvature - g.curvature.transpose()).abs().max() < 1e-10);
                // contact z axis is the outward normal
                let n = g.frame.rotation_matrix().column(2).into_owned();
                let p = g.frame.translation();
                let outward = match kind {
                    SurfaceKind::Sphere { .. } => p.normalize(),
                    _ => Vector3::new(p.x, p.y, 0.0).normalize(),
                };
                assert!((n - outward).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn sphere_curvature_is_isotropic() {
        let s = sphere(0.02, "o");
        let g = evaluate_contact_geometry(&s, &Vector2::new(0.4, 0.2)).unwrap();
        assert!((g.curvature - Matrix2::identity() * 50.0).abs().max() < 1e-12);
        let c = SurfaceModel::at_body_origin(SurfaceKind::Cylinder { radius: 0.02, half_length: None }, fr("o")).unwrap();
        let g = evaluate_contact_geometry(&c, &Vector2::new(0.4, 0.2)).unwrap();
        let eig = g.curvature.symmetric_eigenvalues();
        assert!((eig.max() - 50.0).abs() < 1e-12 && eig.min().abs() < 1e-12);
    }

    #[test]
    fn chart_domain_errors() {
        let s = sphere(0.02, "o");
        assert!(matches!(
            evaluate_contact_geometry(&s, &Vector2::new(0.0, std::f64::consts::FRAC_PI_2)),
            Err(GeometryError::ChartSingularity(..))
        ));
        assert!(matches!(evaluate_contact_geometry(&s, &Vector2::new(0.0, 2.0)), Err(GeometryError::OutsideChart(..))));
        let c = SurfaceModel::at_body_origin(SurfaceKind::Cylinder { radius: 0.02, half_length: Some(0.05) }, fr("o")).unwrap();
        assert!(matches!(evaluate_contact_geometry(&c, &Vector2::new(0.0, 0.06)), Err(GeometryError::OutsideChart(..))));
        assert!(SurfaceModel::at_body_origin(SurfaceKind::Sphere { radius: -1.0 }, fr("o")).is_err());
    }

    #[test]
    fn r_phi_is_involutory() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let r = r_phi(rng.random_range(-10.0..10.0));
            assert!((r * r - Matrix2::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn tangent_spheres_and_planes() {
        let pair = contact(&sphere(1.0, "o"), &at(Vector3::zeros(), "o"), &sphere(1.0, "f"), &at(Vector3::new(3.0, 0.0, 0.0), "f"));
        assert!((pair.gap - 1.0).abs() < 1e-15);
        let plane = SurfaceModel::at_body_origin(SurfaceKind::Plane, fr("f")).unwrap();
        let pair = contact(&sphere(1.0, "o"), &at(Vector3::zeros(), "o"), &plane, &at(Vector3::new(0.0, 0.0, -1.0), "f"));
        assert!(pair.gap.abs() < 1e-15);
        assert!((pair.point - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn contact_frames_are_opposed_and_coincident() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let (r1, r2) = (rng.random_range(0.01..0.05), rng.random_range(0.005..0.02));
            let dir: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
            let rot = exp_pose(&Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)), w(), fr("o"));
            let obj = SurfaceModel::new(
                SurfaceKind::Cylinder { radius: r1, half_length: None },
                Transform::identity(fr("o"), fr("o/s")),
            )
            .unwrap();
            // analytic tangent placement: tip center at distance r1 + r2 from the axis
            let radial: Vector3<f64> = (dir - dir.z * Vector3::z()).normalize();
            let c_local = radial * (r1 + r2) + Vector3::z() * rng.random_range(-0.05f64..0.05);
            let t_wf = at(rot.transform_point(&c_local), "f");
            let pair = closest_point_contact(&obj, &rot, &sphere(r2, "f"), &t_wf).unwrap();
            assert!(pair.gap.abs() < 1e-9);
            let z1 = pair.object_world.rotation_matrix().column(2).into_owned();
            let z2 = pair.fingertip_world.rotation_matrix().column(2).into_owned();
            assert!((z1 + z2).norm() < 1e-8);
            assert!((pair.object_world.translation() - pair.fingertip_world.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn unsupported_and_degenerate_pairs() {
        let plane = SurfaceModel::at_body_origin(SurfaceKind::Plane, fr("o")).unwrap();
        let plane2 = SurfaceModel::at_body_origin(SurfaceKind::Plane, fr("f")).unwrap();
        assert!(matches!(
            closest_point_contact(&plane, &at(Vector3::zeros(), "o"), &plane2, &at(Vector3::zeros(), "f")),
            Err(GeometryError::UnsupportedPair(..))
        ));
        assert!(matches!(
            closest_point_contact(&sphere(1.0, "o"), &at(Vector3::zeros(), "o"), &sphere(0.5, "f"), &at(Vector3::zeros(), "f")),
            Err(GeometryError::NonUniqueClosestPoint)
        ));
    }

    #[test]
    fn relative_curvature_cases() {
        let (r1, r2) = (0.02, 0.01);
        let pair = contact(&sphere(r1, "o"), &at(Vector3::zeros(), "o"), &sphere(r2, "f"), &at(Vector3::new(0.03, 0.0, 0.0), "f"));
        assert!((relative_curvature(&pair) - Matrix2::identity() * (1.0 / r1 + 1.0 / r2)).abs().max() < 1e-9);
        let plane = SurfaceModel::at_body_origin(SurfaceKind::Plane, fr("o")).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..20 {
            let c = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), r2);
            let pair = contact(&plane, &at(Vector3::zeros(), "o"), &sphere(r2, "f"), &at(c, "f"));
            assert!((relative_curvature(&pair) - Matrix2::identity() / r2).abs().max() < 1e-9);
        }
    }

    #[test]
    fn flat_on_flat_is_degenerate() {
        // both curvatures zero, built directly since plane/plane has no unique closest point
        let plane = SurfaceModel::at_body_origin(SurfaceKind::Plane, fr("o")).unwrap();
        let g = evaluate_contact_geometry(&plane, &Vector2::zeros()).unwrap();
        let pair = ContactPair {
            object: g.clone(),
            fingertip: g.clone(),
            phi: 0.3,
            point: Vector3::zeros(),
            gap: 0.0,
            object_world: g.frame.relabeled(w(), fr("o/c")),
            fingertip_world: g.frame.relabeled(w(), fr("f/c")),
        };
        assert_eq!(relative_curvature(&pair), Matrix2::zeros());
        assert!(matches!(rolling_map(&pair), Err(GeometryError::DegenerateCurvature(_))));
    }

    #[test]
    fn ball_rolling_on_plane() {
        let r = 0.01;
        let omega = 2.0;
        let plane = SurfaceModel::at_body_origin(SurfaceKind::Plane, fr("o")).unwrap();
        let pair = contact(&plane, &at(Vector3::zeros(), "o"), &sphere(r, "f"), &at(Vector3::new(0.0, 0.0, r), "f"));
        let l = rolling_map(&pair).unwrap();
        let v = l.local * Vector6::new(omega, 0.0, 0.0, 0.0, 0.0, 0.0);
        // chart velocity M u̇ is the linear part
        assert!((v[3] - 0.0).abs() < 1e-15 && (v[4] + r * omega).abs() < 1e-15);
        let spin = l.local * Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(spin, Vector6::zeros());
    }

    /// Contact-frame motion under integrated rolling, measured by re-projection.
    #[test]
    fn rolling_map_matches_reprojected_contact_motion() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 40 {
            let r1 = rng.random_range(0.01..0.04);
            let r2 = rng.random_range(0.005..0.02);
            let obj_kind = if checked % 2 == 0 {
                SurfaceKind::Sphere { radius: r1 }
            } else {
                SurfaceKind::Cylinder { radius: r1, half_length: None }
            };
            let t_wo = exp_pose(&Vector6::from_fn(|_, _| rng.random_range(-0.5..0.5)), w(), fr("o"));
            let obj = SurfaceModel::new(obj_kind, Transform::identity(fr("o"), fr("o/s"))).unwrap();
            let tip = sphere(r2, "f");
            let u = Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-0.8..0.8));
            let g = evaluate_contact_geometry(&obj, &u).unwrap();
            let cw = t_wo.compose(&g.frame).unwrap();
            let n = cw.rotation_matrix().column(2).into_owned();
            let rot = exp_pose(&Vector6::new(rng.random(), rng.random(), rng.random(), 0.0, 0.0, 0.0), w(), fr("f"));
            let t_wf = Transform::new(*rot.rotation(), cw.translation() + n * r2, w(), fr("f"));
            let pair = closest_point_contact(&obj, &t_wo, &tip, &t_wf).unwrap();
            // relative twist of fingertip w.r.t. object, pure rolling about the contact point
            let om = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let p = pair.point;
            let lin = p.cross(&om);
            let v_rel = Vector6::new(om.x, om.y, om.z, lin.x, lin.y, lin.z);
            let l = rolling_map(&pair).unwrap();
            let predicted = l.world * v_rel;
            let h = 1e-6;
            let frame_at = |s: f64| {
                let tf = t_wf.advanced(&v_rel, s);
                closest_point_contact(&obj, &t_wo, &tip, &tf).unwrap().object_world
            };
            let (fp, fm) = (frame_at(h), frame_at(-h));
            // body twist of the contact frame relative to the (fixed) object
            let body = log_pose(&fm.inverse().compose(&fp).unwrap()).unwrap() / (2.0 * h);
            let spatial = pair.object_world.adjoint() * body;
            let err = (spatial - predicted).norm() / (1.0 + predicted.norm());
            assert!(err < 1e-5, "rolling map error {err}: {spatial} vs {predicted}");
            checked += 1;
        }
    }

    #[test]
    fn sphere_chart_reseats_near_pole() {
        let mut obj = sphere(0.02, "o");
        let mut tip = sphere(0.01, "f");
        let t_wo = at(Vector3::zeros(), "o");
        let t_wf = at(Vector3::new(0.001, 0.0, 0.03), "f");
        let out = closest_point_contact_reseating(&mut obj, &t_wo, &mut tip, &t_wf).unwrap();
        assert!(out.object_reseated && out.tip_reseated);
        assert!(out.pair.object.u.norm() < 1e-9);
        assert!(out.pair.fingertip.u.norm() < 1e-9);
        let again = closest_point_contact_reseating(&mut obj, &t_wo, &mut tip, &t_wf).unwrap();
        assert!(!again.object_reseated && !again.tip_reseated);
    }
}
