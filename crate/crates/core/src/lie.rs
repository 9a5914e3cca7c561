//! Screw-theory primitives on SO(3) and SE(3).
//!
//! Conventions: twists are `(angular, linear)`, wrenches are `(moment, force)`.
//! A [`Transform`] `T_ij` is the pose of frame `j` relative to frame `i`
//! (`from = i`, `to = j`), so it maps coordinates expressed in `j` into `i`.
//! Every binary operation checks frame labels at runtime and fails with
//! [`LieError::FrameMismatch`] instead of silently mixing frames.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use thiserror::Error;

/// Below this rotation angle the Rodrigues terms are replaced by Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Distance from π at which the logarithm is considered ambiguous.
pub const LOG_BRANCH_MARGIN: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("frame mismatch in {op}: expected `{expected}`, found `{found}`")]
    FrameMismatch {
        op: &'static str,
        expected: Frame,
        found: Frame,
    },
    #[error("matrix is not a rotation (orthonormality error {orthonormality:.3e}, det {det})")]
    NotARotation { orthonormality: f64, det: f64 },
    #[error("rotation angle {angle} is on the branch cut of the logarithm")]
    LogBranch { angle: f64 },
    #[error("invalid stiffness matrix: {0}")]
    InvalidStiffness(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, LieError>;

/// Runtime frame label.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Frame(Arc<str>);

impl Frame {
    pub fn new(name: impl AsRef<str>) -> Self {
        Frame(Arc::from(name.as_ref()))
    }

    pub fn world() -> Self {
        Frame::new("w")
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0)
    }
}

fn expect_frame(op: &'static str, expected: &Frame, found: &Frame) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(LieError::FrameMismatch {
            op,
            expected: expected.clone(),
            found: found.clone(),
        })
    }
}

/// The so(3) matrix `[a]` with `[a] b = a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Inverse of [`skew`], reading the antisymmetric part of `m`.
pub fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// `[[R, 0], [[p]R, R]]`.
pub fn adjoint_of(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Matrix6<f64> {
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(rotation);
    ad.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(skew(translation) * rotation));
    ad
}

/// Lie bracket matrix `ad_V = [[[ω], 0], [[v], [ω]]]` of a twist.
pub fn twist_bracket(v: &Vector6<f64>) -> Matrix6<f64> {
    let w = skew(&v.fixed_rows::<3>(0).into_owned());
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&skew(&v.fixed_rows::<3>(3).into_owned()));
    m
}

/// Wrench matrix `W = [[[m], [f]], [[f], 0]]`.
pub fn wrench_matrix_of(w: &Vector6<f64>) -> Matrix6<f64> {
    let m = skew(&w.fixed_rows::<3>(0).into_owned());
    let f = skew(&w.fixed_rows::<3>(3).into_owned());
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&f);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&f);
    out
}

pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    let w2 = w * w;
    if theta < SMALL_ANGLE {
        Matrix3::identity() + w + 0.5 * w2
    } else {
        Matrix3::identity() + (theta.sin() / theta) * w + ((1.0 - theta.cos()) / (theta * theta)) * w2
    }
}

/// Rotation angle of `r` in `[0, π]`, computed with `atan2` so it stays accurate near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = unskew(r).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let theta = rotation_angle(r);
    if std::f64::consts::PI - theta < LOG_BRANCH_MARGIN {
        return Err(LieError::LogBranch { angle: theta });
    }
    let axis_part = unskew(r);
    if theta < SMALL_ANGLE {
        Ok(axis_part)
    } else {
        Ok(axis_part * (theta / theta.sin()))
    }
}

/// `exp([X])` for exponential coordinates `X = (ω, v)`, returned as `(R, p)`.
pub fn se3_exp(x: &Vector6<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let omega = x.fixed_rows::<3>(0).into_owned();
    let v = x.fixed_rows::<3>(3).into_owned();
    let theta = omega.norm();
    let w = skew(&omega);
    let w2 = w * w;
    let g = if theta < SMALL_ANGLE {
        Matrix3::identity() + 0.5 * w + w2 / 6.0
    } else {
        let t2 = theta * theta;
        Matrix3::identity() + ((1.0 - theta.cos()) / t2) * w + ((theta - theta.sin()) / (t2 * theta)) * w2
    };
    (so3_exp(&omega), g * v)
}

/// Exponential coordinates of `(R, p)` on the principal branch.
pub fn se3_log(r: &Matrix3<f64>, p: &Vector3<f64>) -> Result<Vector6<f64>> {
    let omega = so3_log(r)?;
    let theta = omega.norm();
    let w = skew(&omega);
    let w2 = w * w;
    let g_inv = if theta < SMALL_ANGLE {
        Matrix3::identity() - 0.5 * w + w2 / 12.0
    } else {
        let half = 0.5 * theta;
        let coeff = (1.0 - half * half.cos() / half.sin()) / (theta * theta);
        Matrix3::identity() - 0.5 * w + coeff * w2
    };
    let v = g_inv * p;
    Ok(Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z))
}

/// Left Jacobian of SE(3): `d/dt exp([X]) · exp(-[X]) = [J_l(X) Ẋ]`.
///
/// Evaluated from the series `Σ ad_X^k / (k+1)!`, which converges for every `X`
/// but is only used here for the small flexure displacements.
pub fn left_jacobian(x: &Vector6<f64>) -> Matrix6<f64> {
    let ad = twist_bracket(x);
    let mut term = Matrix6::identity();
    let mut sum = Matrix6::identity();
    for k in 1..40 {
        term = term * ad / (k as f64 + 1.0);
        sum += term;
        if term.abs().max() < 1e-18 {
            break;
        }
    }
    sum
}

/// Exact rate of exponential coordinates, `Ẋ = J_l(X)⁻¹ V`, where `V` is the
/// twist of the displaced frame expressed in the reference frame.
///
/// The mechanics use the small-displacement approximation `Ẋ ≈ V`; this is the
/// exact counterpart against which that approximation is checked.
pub fn exp_coords_rate(x: &Vector6<f64>, v: &Vector6<f64>) -> Vector6<f64> {
    left_jacobian(x)
        .lu()
        .solve(v)
        .unwrap_or_else(|| *v)
}

/// Rotation matrix in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub const TOLERANCE: f64 = 1e-12;

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(LieError::NonFinite("rotation"));
        }
        let orthonormality = (m * m.transpose() - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if orthonormality > Self::TOLERANCE || (det - 1.0).abs() > Self::TOLERANCE {
            return Err(LieError::NotARotation { orthonormality, det });
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix already known to be a rotation (e.g. a product of rotations).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Nearest rotation to `m`, used to remove rounding drift after long integrations.
    pub fn orthonormalized(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd u");
        let vt = svd.v_t.expect("svd v_t");
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        Rotation(r)
    }

    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Rotation(so3_exp(&(axis * (angle / n))))
    }

    /// Unit quaternion `(w, x, y, z)`; normalised on input.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Rotation(*uq.to_rotation_matrix().matrix())
    }

    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let mut out = [q.w, q.i, q.j, q.k];
        if out[0] < 0.0 {
            out.iter_mut().for_each(|c| *c = -*c);
        }
        out
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn angle(&self) -> f64 {
        rotation_angle(&self.0)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Rigid-body pose `T_ij` of frame `to = j` relative to frame `from = i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    rotation: Rotation,
    translation: Vector3<f64>,
    from: Frame,
    to: Frame,
}

impl Transform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>, from: Frame, to: Frame) -> Self {
        Transform {
            rotation,
            translation,
            from,
            to,
        }
    }

    pub fn identity(from: Frame, to: Frame) -> Self {
        Self::new(Rotation::identity(), Vector3::zeros(), from, to)
    }

    pub fn from_translation(p: Vector3<f64>, from: Frame, to: Frame) -> Self {
        Self::new(Rotation::identity(), p, from, to)
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        self.rotation.matrix()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn from_frame(&self) -> &Frame {
        &self.from
    }

    pub fn to_frame(&self) -> &Frame {
        &self.to
    }

    /// Same pose, new labels.
    pub fn relabeled(&self, from: Frame, to: Frame) -> Self {
        Self::new(self.rotation, self.translation, from, to)
    }

    pub fn inverse(&self) -> Transform {
        let rt = self.rotation.transpose();
        let p = -(rt.matrix() * self.translation);
        Transform::new(rt, p, self.to.clone(), self.from.clone())
    }

    /// `T_ij ∘ T_jk = T_ik`; the inner labels must agree.
    pub fn compose(&self, other: &Transform) -> Result<Transform> {
        expect_frame("compose", &self.to, &other.from)?;
        Ok(self.compose_unchecked(other))
    }

    pub(crate) fn compose_unchecked(&self, other: &Transform) -> Transform {
        Transform::new(
            self.rotation * other.rotation,
            self.rotation.matrix() * other.translation + self.translation,
            self.from.clone(),
            other.to.clone(),
        )
    }

    pub fn adjoint(&self) -> Matrix6<f64> {
        adjoint_of(self.rotation.matrix(), &self.translation)
    }

    pub fn matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Maps a point expressed in `to` into `from`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * v
    }

    /// Removes rounding drift from the rotation block.
    pub fn orthonormalized(&self) -> Transform {
        Transform::new(
            Rotation::orthonormalized(self.rotation.matrix()),
            self.translation,
            self.from.clone(),
            self.to.clone(),
        )
    }

    /// Left-multiplies by `exp([V] dt)` where `V` is a twist expressed in `from`:
    /// the first-order update of `T_ij` under `Ṫ = [V] T`.
    pub fn advanced(&self, twist: &Vector6<f64>, dt: f64) -> Transform {
        let (r, p) = se3_exp(&(twist * dt));
        let step = Transform::new(Rotation::from_matrix_unchecked(r), p, self.from.clone(), self.from.clone());
        step.compose_unchecked(self).orthonormalized()
    }
}

/// `exp([X])` with the given frame labels.
pub fn exp_pose(x: &Vector6<f64>, from: Frame, to: Frame) -> Transform {
    let (r, p) = se3_exp(x);
    Transform::new(Rotation::from_matrix_unchecked(r), p, from, to)
}

/// Principal-branch exponential coordinates of `T`.
pub fn log_pose(t: &Transform) -> Result<Vector6<f64>> {
    se3_log(t.rotation_matrix(), t.translation())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Twist {
    pub angular: Vector3<f64>,
    pub linear: Vector3<f64>,
    pub frame: Frame,
}

impl Twist {
    pub fn new(angular: Vector3<f64>, linear: Vector3<f64>, frame: Frame) -> Self {
        Twist { angular, linear, frame }
    }

    pub fn zero(frame: Frame) -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros(), frame)
    }

    pub fn from_vector(v: &Vector6<f64>, frame: Frame) -> Self {
        Self::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned(), frame)
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.angular.x,
            self.angular.y,
            self.angular.z,
            self.linear.x,
            self.linear.y,
            self.linear.z,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Wrench {
    pub moment: Vector3<f64>,
    pub force: Vector3<f64>,
    pub frame: Frame,
}

impl Wrench {
    pub fn new(moment: Vector3<f64>, force: Vector3<f64>, frame: Frame) -> Self {
        Wrench { moment, force, frame }
    }

    pub fn zero(frame: Frame) -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros(), frame)
    }

    pub fn from_vector(v: &Vector6<f64>, frame: Frame) -> Self {
        Self::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned(), frame)
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.moment.x,
            self.moment.y,
            self.moment.z,
            self.force.x,
            self.force.y,
            self.force.z,
        )
    }

    /// Instantaneous power `Fᵀ V`; both must be expressed in the same frame.
    pub fn power(&self, twist: &Twist) -> Result<f64> {
        expect_frame("power", &self.frame, &twist.frame)?;
        Ok(self.moment.dot(&twist.angular) + self.force.dot(&twist.linear))
    }
}

/// 6×6 stiffness `F = K X`, symmetric positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct StiffnessMatrix {
    matrix: Matrix6<f64>,
    frame: Frame,
}

impl StiffnessMatrix {
    pub fn new(matrix: Matrix6<f64>, frame: Frame) -> Result<Self> {
        if !matrix.iter().all(|x| x.is_finite()) {
            return Err(LieError::NonFinite("stiffness"));
        }
        let scale = matrix.abs().max().max(1e-300);
        if (matrix - matrix.transpose()).abs().max() > 1e-9 * scale.max(1.0) {
            return Err(LieError::InvalidStiffness("not symmetric"));
        }
        let eig = matrix.symmetric_eigenvalues();
        let max = eig.max();
        if eig.min() < -1e-9 * max.abs() {
            return Err(LieError::InvalidStiffness("not positive semidefinite"));
        }
        Ok(StiffnessMatrix { matrix, frame })
    }

    /// Block-diagonal `diag(k_rot I, k_lin I)`.
    pub fn diagonal(rotational: f64, linear: f64, frame: Frame) -> Result<Self> {
        let mut m = Matrix6::zeros();
        for i in 0..3 {
            m[(i, i)] = rotational;
            m[(i + 3, i + 3)] = linear;
        }
        Self::new(m, frame)
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn is_positive_definite(&self) -> bool {
        self.matrix.symmetric_eigenvalues().min() > 0.0
    }
}

/// Matrix representation of a wrench, with stiffness units.
#[derive(Clone, Debug, PartialEq)]
pub struct WrenchMatrix {
    matrix: Matrix6<f64>,
    frame: Frame,
}

impl WrenchMatrix {
    pub fn from_wrench(w: &Wrench) -> Self {
        WrenchMatrix {
            matrix: wrench_matrix_of(&w.to_vector()),
            frame: w.frame.clone(),
        }
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }
}

/// `V^i = Ad_{T_ij} V^j`.
pub fn transform_twist(t_ij: &Transform, v: &Twist) -> Result<Twist> {
    expect_frame("transform_twist", t_ij.to_frame(), &v.frame)?;
    Ok(Twist::from_vector(&(t_ij.adjoint() * v.to_vector()), t_ij.from_frame().clone()))
}

/// `F^i = Ad_{T_ji}ᵀ F^j`, with `T_ji = T_ij⁻¹`.
pub fn transform_wrench(t_ij: &Transform, f: &Wrench) -> Result<Wrench> {
    expect_frame("transform_wrench", t_ij.to_frame(), &f.frame)?;
    let ad_ji = t_ij.inverse().adjoint();
    Ok(Wrench::from_vector(&(ad_ji.transpose() * f.to_vector()), t_ij.from_frame().clone()))
}

/// `K^i = Ad_{T_ji}ᵀ K^j Ad_{T_ji}`.
pub fn transform_stiffness(t_ij: &Transform, k: &StiffnessMatrix) -> Result<StiffnessMatrix> {
    expect_frame("transform_stiffness", t_ij.to_frame(), k.frame())?;
    let ad_ji = t_ij.inverse().adjoint();
    Ok(StiffnessMatrix {
        matrix: ad_ji.transpose() * k.matrix() * ad_ji,
        frame: t_ij.from_frame().clone(),
    })
}

/// `W^i = Ad_{T_ji}ᵀ W^j Ad_{T_ji}`.
pub fn transform_wrench_matrix(t_ij: &Transform, w: &WrenchMatrix) -> Result<WrenchMatrix> {
    expect_frame("transform_wrench_matrix", t_ij.to_frame(), w.frame())?;
    let ad_ji = t_ij.inverse().adjoint();
    Ok(WrenchMatrix {
        matrix: ad_ji.transpose() * w.matrix() * ad_ji,
        frame: t_ij.from_frame().clone(),
    })
}

/// Time derivative of `Ad_{T_ij}` given the twist `V^j_ji` of `i` relative to `j`
/// expressed in `j`: `−Ad_{T_ij} [[[ω], 0], [[v], [ω]]]`.
pub fn adjoint_rate(t_ij: &Transform, v_ji: &Twist) -> Result<Matrix6<f64>> {
    expect_frame("adjoint_rate", t_ij.to_frame(), &v_ji.frame)?;
    Ok(-t_ij.adjoint() * twist_bracket(&v_ji.to_vector()))
}

/// Rate of a wrench re-expressed in a moving frame:
/// `Ḟ^i = −W^i V^i_ij + Ad_{T_ji}ᵀ Ḟ^j`.
pub fn wrench_rate_transform(
    w_i: &WrenchMatrix,
    v_ij: &Twist,
    f_rate_j: &Wrench,
    t_ji: &Transform,
) -> Result<Wrench> {
    let frame_i = t_ji.to_frame();
    expect_frame("wrench_rate_transform", frame_i, w_i.frame())?;
    expect_frame("wrench_rate_transform", frame_i, &v_ij.frame)?;
    expect_frame("wrench_rate_transform", t_ji.from_frame(), &f_rate_j.frame)?;
    let rate = -w_i.matrix() * v_ij.to_vector() + t_ji.adjoint().transpose() * f_rate_j.to_vector();
    Ok(Wrench::from_vector(&rate, frame_i.clone()))
}
