//! Stacked quasistatic constraint system and its forward/inverse solutions.
//!
//! Per finger `i` (world frame):
//!
//! * `A = K − W L̃`, `B = W (L̃ − I)`, `C = K − W`;
//! * `P = [[p_c] | −I]` (rolling), `Q = [−I | [p_c]]` (moment about the contact point).
//!
//! `D_f`, `D_o`, `D_a` stack `[Q A; P]`, `[Q B; −P]`, `[Q C; 0]` per finger and
//! close with the object wrench-rate balance `Σ K V_f − G V_o = Σ C V_a`.
//! For a kinematically constrained object the object twist is `S ν` and the
//! constraint wrench rate `B_c λ̇` enters the balance, which keeps the system square.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};
use thiserror::Error;

use crate::geometry::{rolling_map, GeometryError};
use crate::grasp::{external_wrench_rate_matrix, world_stiffness, GraspError, GraspState};
use crate::lie::{skew, wrench_matrix_of, wrench_rate_transform, LieError, Twist, Wrench, WrenchMatrix};

/// `D_f&o` is singular when `σ_min / σ_max` falls below this ratio.
pub const SINGULAR_RATIO: f64 = 1e-10;

/// Rank tolerance (relative) for the inverse map.
pub const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanicsError {
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("constraint system is singular (sigma_min {sigma_min:.3e}, sigma_max {sigma_max:.3e})")]
    Singular { sigma_min: f64, sigma_max: f64 },
    #[error("object twist not fully controllable (rank {rank} < 6)")]
    NotControllable { rank: usize },
    #[error("expected {expected} anchor twist components, found {found}")]
    Dimension { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, MechanicsError>;

/// Per-finger blocks of the stacked system, all in the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactTerms {
    pub stiffness: Matrix6<f64>,
    pub wrench_matrix: Matrix6<f64>,
    pub rolling: Matrix6<f64>,
    pub a: Matrix6<f64>,
    pub b: Matrix6<f64>,
    pub c: Matrix6<f64>,
    pub p: Matrix3x6<f64>,
    pub q: Matrix3x6<f64>,
    /// Rotation of the object contact frame.
    pub r_wc: Matrix3<f64>,
}

/// `P = [[p] | −I]`.
pub fn rolling_rows(p: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut m = Matrix3x6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(p));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-Matrix3::identity()));
    m
}

/// `Q = [−I | [p]]`.
pub fn moment_rows(p: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut m = Matrix3x6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-Matrix3::identity()));
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(p));
    m
}

pub fn rolling_constraint_rows(state: &GraspState) -> Vec<Matrix3x6<f64>> {
    state.contacts.iter().map(|c| rolling_rows(&c.point)).collect()
}

pub fn contact_terms(state: &GraspState, i: usize) -> Result<ContactTerms> {
    let pair = &state.contacts[i];
    let stiffness = world_stiffness(&state.hand[i], &state.fingers[i])?;
    let wrench_matrix = wrench_matrix_of(&state.wrenches[i].to_vector());
    let rolling = rolling_map(pair)?.world;
    let identity = Matrix6::identity();
    Ok(ContactTerms {
        a: stiffness - wrench_matrix * rolling,
        b: wrench_matrix * (rolling - identity),
        c: stiffness - wrench_matrix,
        p: rolling_rows(&pair.point),
        q: moment_rows(&pair.point),
        r_wc: *pair.object_world.rotation_matrix(),
        stiffness,
        wrench_matrix,
        rolling,
    })
}

/// Contact wrench rate in the object contact frame:
/// `Ḟ^{c₁} = Ad_{T_wc₁}ᵀ (−A V_wf − B V_wo + C V_wa)`.
pub fn contact_wrench_rate(
    state: &GraspState,
    i: usize,
    v_wf: &Vector6<f64>,
    v_wo: &Vector6<f64>,
    v_wa: &Vector6<f64>,
) -> Result<Wrench> {
    let t = contact_terms(state, i)?;
    let world = -t.a * v_wf - t.b * v_wo + t.c * v_wa;
    let frame = &state.contacts[i].object_world;
    Ok(Wrench::from_vector(&(frame.adjoint().transpose() * world), frame.to_frame().clone()))
}

#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    pub n: usize,
    pub d_f: DMatrix<f64>,
    pub d_o: DMatrix<f64>,
    pub d_a: DMatrix<f64>,
    pub terms: Vec<ContactTerms>,
    /// Admissible object twists (columns).
    pub motion_basis: DMatrix<f64>,
    /// Constraint wrenches (columns).
    pub wrench_basis: DMatrix<f64>,
    /// `G` with `Ḟ_ext = G V_wo`.
    pub external_rate: Matrix6<f64>,
}

impl ConstraintSystem {
    pub fn rows(&self) -> usize {
        6 * (self.n + 1)
    }

    /// `[D_f | D_o]`.
    pub fn d_fo(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.rows());
        m.columns_mut(0, 6 * self.n).copy_from(&self.d_f);
        m.columns_mut(6 * self.n, 6).copy_from(&self.d_o);
        m
    }

    /// Square system `[D_f | D_o S | −E B_c]` over `(V_f, ν, λ̇)`; equals
    /// `D_f&o` for a free object.
    pub fn reduced(&self) -> DMatrix<f64> {
        let (rows, n) = (self.rows(), self.n);
        let dof = self.motion_basis.ncols();
        let k = self.wrench_basis.ncols();
        let mut m = DMatrix::zeros(rows, rows);
        m.columns_mut(0, 6 * n).copy_from(&self.d_f);
        m.columns_mut(6 * n, dof).copy_from(&(&self.d_o * &self.motion_basis));
        if k > 0 {
            m.view_mut((6 * n, 6 * n + dof), (6, k)).copy_from(&(-&self.wrench_basis));
        }
        m
    }

    pub fn beta(&self, v_a: &DVector<f64>) -> Result<DVector<f64>> {
        if v_a.len() != 6 * self.n {
            return Err(MechanicsError::Dimension {
                expected: 6 * self.n,
                found: v_a.len(),
            });
        }
        Ok(&self.d_a * v_a)
    }
}

pub fn assemble(state: &GraspState) -> Result<ConstraintSystem> {
    let n = state.n();
    let rows = 6 * (n + 1);
    let mut d_f = DMatrix::zeros(rows, 6 * n);
    let mut d_o = DMatrix::zeros(rows, 6);
    let mut d_a = DMatrix::zeros(rows, 6 * n);
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let t = contact_terms(state, i)?;
        let r = 6 * i;
        d_f.view_mut((r, r), (3, 6)).copy_from(&(t.q * t.a));
        d_f.view_mut((r + 3, r), (3, 6)).copy_from(&t.p);
        d_o.view_mut((r, 0), (3, 6)).copy_from(&(t.q * t.b));
        d_o.view_mut((r + 3, 0), (3, 6)).copy_from(&(-t.p));
        d_a.view_mut((r, r), (3, 6)).copy_from(&(t.q * t.c));
        d_f.view_mut((6 * n, r), (6, 6)).copy_from(&t.stiffness);
        d_a.view_mut((6 * n, r), (6, 6)).copy_from(&t.c);
        terms.push(t);
    }
    let external_rate = external_wrench_rate_matrix(&state.object, &state.gravity);
    d_o.view_mut((6 * n, 0), (6, 6)).copy_from(&(-external_rate));
    Ok(ConstraintSystem {
        n,
        d_f,
        d_o,
        d_a,
        terms,
        motion_basis: state.constraint.motion_basis(),
        wrench_basis: state.constraint.wrench_basis(),
        external_rate,
    })
}

/// Twists produced by a set of anchor twists.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub fingertip_twists: Vec<Vector6<f64>>,
    pub object_twist: Vector6<f64>,
    /// Rate of the constraint-wrench multipliers (empty for a free object).
    pub constraint_rate: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MechanicsSolution {
    pub motion: Option<Motion>,
    pub singular: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `‖D x − β‖` of the returned solution.
    pub residual: f64,
}

impl MechanicsSolution {
    pub fn sigma_ratio(&self) -> f64 {
        if self.sigma_max > 0.0 {
            self.sigma_min / self.sigma_max
        } else {
            0.0
        }
    }
}

fn singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.singular_values();
    (sv.min(), sv.max())
}

/// Column-pivoted QR solve followed by one step of iterative refinement.
fn refined_solve(m: &DMatrix<f64>, qr: &nalgebra::linalg::ColPivQR<f64, nalgebra::Dyn, nalgebra::Dyn>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = qr.solve(rhs).unwrap_or_else(|| DMatrix::zeros(m.ncols(), rhs.ncols()));
    let r = rhs - m * &x;
    if let Some(dx) = qr.solve(&r) {
        x += dx;
    }
    x
}

fn split_solution(sys: &ConstraintSystem, x: &DVector<f64>) -> Motion {
    let n = sys.n;
    let dof = sys.motion_basis.ncols();
    let fingertip_twists = (0..n)
        .map(|i| Vector6::from_column_slice(x.rows(6 * i, 6).as_slice()))
        .collect();
    let v_o = &sys.motion_basis * x.rows(6 * n, dof);
    Motion {
        fingertip_twists,
        object_twist: Vector6::from_column_slice(v_o.as_slice()),
        constraint_rate: x.rows(6 * n + dof, 6 - dof).into_owned(),
    }
}

/// Solves for fingertip and object twists given stacked anchor twists `V_a`.
pub fn forward_solve(sys: &ConstraintSystem, v_a: &DVector<f64>) -> Result<MechanicsSolution> {
    let beta = sys.beta(v_a)?;
    let m = sys.reduced();
    let (sigma_min, sigma_max) = singular_values(&m);
    if !(sigma_max > 0.0) || sigma_min / sigma_max < SINGULAR_RATIO {
        return Ok(MechanicsSolution {
            motion: None,
            singular: true,
            sigma_min,
            sigma_max,
            residual: f64::NAN,
        });
    }
    let qr = m.clone().col_piv_qr();
    let rhs = DMatrix::from_column_slice(beta.len(), 1, beta.as_slice());
    let x = refined_solve(&m, &qr, &rhs).column(0).into_owned();
    let residual = (&m * &x - &beta).norm();
    Ok(MechanicsSolution {
        motion: Some(split_solution(sys, &x)),
        singular: false,
        sigma_min,
        sigma_max,
        residual,
    })
}

/// Linear maps from stacked anchor twists to the solved quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseMap {
    /// `D⁻¹ D_a`, rows ordered `(V_f, ν, λ̇)`.
    pub solution_map: DMatrix<f64>,
    /// `V_wo = Π V_a`, world frame (6×6n).
    pub object_map: DMatrix<f64>,
    /// `(ν, λ̇) = Π_r V_a`; equals `object_map` for a free object.
    pub reduced_map: DMatrix<f64>,
    pub rank: usize,
}

impl InverseMap {
    /// Maps `V_a` to the object twist.
    pub fn object_twist_of(&self, v_a: &DVector<f64>) -> Vector6<f64> {
        Vector6::from_column_slice((&self.object_map * v_a).as_slice())
    }

    pub fn fingertip_map(&self, i: usize) -> DMatrix<f64> {
        self.solution_map.rows(6 * i, 6).into_owned()
    }
}

/// `S^j_i`: identity in block `j` (1-based) of `i` blocks.
pub fn selection_matrix(j: usize, i: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(6, 6 * i);
    s.view_mut((0, 6 * (j - 1)), (6, 6)).fill_with_identity();
    s
}

pub fn inverse_map(sys: &ConstraintSystem) -> Result<InverseMap> {
    let m = sys.reduced();
    let (sigma_min, sigma_max) = singular_values(&m);
    if !(sigma_max > 0.0) || sigma_min / sigma_max < SINGULAR_RATIO {
        return Err(MechanicsError::Singular { sigma_min, sigma_max });
    }
    let qr = m.clone().col_piv_qr();
    let solution_map = refined_solve(&m, &qr, &sys.d_a);
    let n = sys.n;
    let dof = sys.motion_basis.ncols();
    let reduced_map = solution_map.rows(6 * n, 6).into_owned();
    let object_map = &sys.motion_basis * solution_map.rows(6 * n, dof);
    let rank = reduced_map.rank(RANK_TOLERANCE * reduced_map.amax().max(f64::MIN_POSITIVE));
    Ok(InverseMap {
        solution_map,
        object_map,
        reduced_map,
        rank,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceRowKind {
    /// Contact force magnitude must not decrease.
    NormalMaintenance,
    /// Contact force direction must not leave the friction cone.
    FrictionCone,
}

/// One inequality `row · V_a ≤ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceRateRow {
    pub finger: usize,
    pub kind: ForceRowKind,
    pub row: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForceRateConstraints {
    pub rows: Vec<ForceRateRow>,
    pub normal_active: Vec<bool>,
    pub friction_active: Vec<bool>,
    pub f_min: f64,
    pub mu_max: f64,
}

/// `Ψ_a,i`: contact force rate in the object contact frame as a map of `V_a`.
pub fn force_rate_map(sys: &ConstraintSystem, inv: &InverseMap, i: usize) -> DMatrix<f64> {
    let t = &sys.terms[i];
    let mut rt = DMatrix::zeros(3, 6);
    rt.view_mut((0, 3), (3, 3)).copy_from(&t.r_wc.transpose());
    let a = DMatrix::from_column_slice(6, 6, t.a.as_slice());
    let b = DMatrix::from_column_slice(6, 6, t.b.as_slice());
    let c = DMatrix::from_column_slice(6, 6, t.c.as_slice());
    let inner = -a * inv.fingertip_map(i) - b * &inv.object_map + c * selection_matrix(i + 1, sys.n);
    rt * inner
}

/// `Z = fᵀ [[H f] f]` with `H = diag(1, 1, 0)`.
pub fn friction_row(f: &Vector3<f64>) -> Vector3<f64> {
    let hf = Vector3::new(f.x, f.y, 0.0);
    (skew(&(skew(&hf) * f)).transpose() * f).into_owned()
}

/// Tangential-to-normal ratio of a contact force in its contact frame.
pub fn friction_ratio(f: &Vector3<f64>) -> f64 {
    f.x.hypot(f.y) / f.z.abs()
}

pub fn force_rate_rows(state: &GraspState, sys: &ConstraintSystem, inv: &InverseMap, f_min: f64, mu_max: f64) -> ForceRateConstraints {
    let n = state.n();
    let mut rows = Vec::new();
    let mut normal_active = vec![false; n];
    let mut friction_active = vec![false; n];
    for i in 0..n {
        let f = state.contact_force_local(i);
        let normal = f.norm() <= f_min;
        let friction = friction_ratio(&f) >= mu_max;
        if !(normal || friction) {
            continue;
        }
        let psi = force_rate_map(sys, inv, i);
        if normal {
            normal_active[i] = true;
            let row = -(psi.transpose() * DVector::from_column_slice(f.as_slice()));
            rows.push(ForceRateRow {
                finger: i,
                kind: ForceRowKind::NormalMaintenance,
                row,
            });
        }
        if friction {
            friction_active[i] = true;
            let z = friction_row(&f);
            let row = psi.transpose() * DVector::from_column_slice(z.as_slice());
            rows.push(ForceRateRow {
                finger: i,
                kind: ForceRowKind::FrictionCone,
                row,
            });
        }
    }
    ForceRateConstraints {
        rows,
        normal_active,
        friction_active,
        f_min,
        mu_max,
    }
}

/// Stacked anchor twists split per finger.
pub fn split_anchor_twists(v_a: &DVector<f64>) -> Vec<Vector6<f64>> {
    (0..v_a.len() / 6)
        .map(|i| Vector6::from_column_slice(v_a.rows(6 * i, 6).as_slice()))
        .collect()
}

/// `Σ d/dt F_con` through the moving contact frames:
/// `Σ (−W V_wc₁ + Ad_{T_c₁w}ᵀ Ḟ^{c₁})`, with `V_wc₁ = V_wo + L̃ (V_wf − V_wo)`.
pub fn contact_wrench_rate_sum_transported(
    state: &GraspState,
    v_f: &[Vector6<f64>],
    v_o: &Vector6<f64>,
    v_a: &[Vector6<f64>],
) -> Result<Vector6<f64>> {
    let mut total = Vector6::zeros();
    for i in 0..state.n() {
        let pair = &state.contacts[i];
        let rolling = rolling_map(pair)?.world;
        let v_c = Twist::from_vector(&(v_o + rolling * (v_f[i] - v_o)), pair.object_world.from_frame().clone());
        let rate_c = contact_wrench_rate(state, i, &v_f[i], v_o, &v_a[i])?;
        let w = WrenchMatrix::from_wrench(&state.wrenches[i]);
        total += wrench_rate_transform(&w, &v_c, &rate_c, &pair.object_world.inverse())?.to_vector();
    }
    Ok(total)
}

/// `Σ (C V_wa − K V_wf)`.
pub fn contact_wrench_rate_sum_direct(state: &GraspState, v_f: &[Vector6<f64>], v_a: &[Vector6<f64>]) -> Result<Vector6<f64>> {
    let mut total = Vector6::zeros();
    for i in 0..state.n() {
        let t = contact_terms(state, i)?;
        total += t.c * v_a[i] - t.stiffness * v_f[i];
    }
    Ok(total)
}

/// Residuals of the three constraint families for a motion.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintResiduals {
    pub rolling: f64,
    pub moment_rate: f64,
    pub balance_rate: f64,
}

pub fn constraint_residuals(sys: &ConstraintSystem, motion: &Motion, v_a: &DVector<f64>) -> ConstraintResiduals {
    let va = split_anchor_twists(v_a);
    let v_o = motion.object_twist;
    let mut rolling: f64 = 0.0;
    let mut moment_rate: f64 = 0.0;
    let mut balance = -sys.external_rate * v_o;
    for (i, t) in sys.terms.iter().enumerate() {
        let v_f = motion.fingertip_twists[i];
        rolling = rolling.max((t.p * (v_f - v_o)).norm());
        moment_rate = moment_rate.max((t.q * (t.a * v_f + t.b * v_o - t.c * va[i])).norm());
        balance += t.stiffness * v_f - t.c * va[i];
    }
    if sys.wrench_basis.ncols() > 0 {
        let lam = &sys.wrench_basis * &motion.constraint_rate;
        balance -= Vector6::from_column_slice(lam.as_slice());
    }
    ConstraintResiduals {
        rolling,
        moment_rate,
        balance_rate: balance.norm(),
    }
}
