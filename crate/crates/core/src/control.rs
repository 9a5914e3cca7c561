//! In-hand rolling manipulation controller: error twist, PI loop and the
//! joint-velocity solve (minimum-norm QP with force-rate rows, or the
//! closed-form pseudoinverse).

use nalgebra::{DMatrix, DVector, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grasp::{GraspError, GraspState};
use crate::lie::{log_pose, LieError, Transform};
use crate::mechanics::{assemble, force_rate_rows, inverse_map, ConstraintSystem, ForceRateConstraints, ForceRowKind, InverseMap, MechanicsError};
use crate::qp::{min_norm_solution, solve_min_norm_qp, QpStatus};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Mechanics(#[from] MechanicsError),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Lie(#[from] LieError),
    #[error("hand cannot produce every object twist (rank {rank} < 6)")]
    RankDeficient { rank: usize },
    #[error("force-rate constraints infeasible (rows {violated:?}, max violation {max_violation:.3e})")]
    Infeasible {
        violated: Vec<(usize, ForceRowKind)>,
        max_violation: f64,
    },
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ControlError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PiGains {
    pub proportional: [f64; 6],
    pub integral: [f64; 6],
    /// Bound on each component of the integrated error.
    pub integral_limit: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        PiGains {
            proportional: [1.0; 6],
            integral: [0.1; 6],
            integral_limit: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    Qp,
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub gains: PiGains,
    pub mode: SolverMode,
    /// Joint speed bound [rad/s or m/s].
    pub joint_speed_limit: f64,
    /// Control period [s].
    pub period: f64,
    /// Contact force magnitude below which the force is held [N].
    pub f_min: f64,
    /// Tangential/normal ratio at which the friction row activates.
    pub mu_max: f64,
    /// Gain regulating the constraint wrench of a constrained object [1/s].
    pub constraint_gain: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            gains: PiGains::default(),
            mode: SolverMode::Qp,
            joint_speed_limit: 2.0,
            period: 1e-3,
            f_min: 0.5,
            mu_max: 0.8,
            constraint_gain: 1.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.gains;
        if g.proportional.iter().chain(&g.integral).any(|&k| !(k >= 0.0)) {
            return Err(ControlError::InvalidConfig("gains must be nonnegative".into()));
        }
        if !(g.integral_limit >= 0.0) {
            return Err(ControlError::InvalidConfig("integral limit must be nonnegative".into()));
        }
        if !(self.period > 0.0) {
            return Err(ControlError::InvalidConfig("period must be positive".into()));
        }
        if !(self.joint_speed_limit > 0.0) {
            return Err(ControlError::InvalidConfig("joint speed limit must be positive".into()));
        }
        if !(self.f_min >= 0.0 && self.mu_max > 0.0 && self.constraint_gain >= 0.0) {
            return Err(ControlError::InvalidConfig("force limits and constraint gain must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ActiveRow {
    pub finger: usize,
    pub kind: ForceRowKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlCommand {
    /// Commanded joint velocities per finger.
    pub joint_rates: Vec<DVector<f64>>,
    /// Integrated commanded joint positions per finger.
    pub joint_targets: Vec<DVector<f64>>,
    /// Commanded object twist (world frame).
    pub commanded_twist: Vector6<f64>,
    /// Rows of the inequality set held at equality.
    pub active_rows: Vec<ActiveRow>,
    /// Rows offered to the solver (active or not).
    pub candidate_rows: Vec<ActiveRow>,
    /// Uniform factor applied by joint speed saturation (1 when unsaturated).
    pub saturation: f64,
    pub qp_iterations: usize,
}

/// `V_e = Ad_{T_wo} log(T_wo⁻¹ T_d)`, world frame.
pub fn error_twist(t_wo: &Transform, t_d: &Transform) -> Result<Vector6<f64>> {
    let rel = t_wo.inverse().compose(&t_d.relabeled(t_wo.from_frame().clone(), t_wo.to_frame().clone()))?;
    Ok(t_wo.adjoint() * log_pose(&rel)?)
}

/// `Ξ` with `V_a = Ξ Θ̇` (block diagonal of the finger space Jacobians).
pub fn hand_jacobian(state: &GraspState) -> DMatrix<f64> {
    let n = state.n();
    let dofs: Vec<usize> = state.hand.iter().map(|m| m.dof()).collect();
    let mut xi = DMatrix::zeros(6 * n, dofs.iter().sum());
    let mut col = 0;
    for (i, (model, finger)) in state.hand.iter().zip(&state.fingers).enumerate() {
        let j = model.jacobian(&finger.theta);
        xi.view_mut((6 * i, col), (6, dofs[i])).copy_from(&j);
        col += dofs[i];
    }
    xi
}

fn split_joints(state: &GraspState, stacked: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(state.n());
    let mut at = 0;
    for model in state.hand.iter() {
        out.push(stacked.rows(at, model.dof()).into_owned());
        at += model.dof();
    }
    out
}

/// Uniform scale bringing every joint speed within `limit`.
pub fn saturation_scale(rates: &DVector<f64>, limit: f64) -> f64 {
    let peak = rates.amax();
    if peak > limit {
        limit / peak
    } else {
        1.0
    }
}

/// Equality target `(ν, λ̇)` for a commanded world twist: `ν` is the
/// least-squares coordinate of `V_c` on the admissible motion basis.
pub fn constrained_target(sys: &ConstraintSystem, v_c: &Vector6<f64>, constraint_rate: &DVector<f64>) -> DVector<f64> {
    let dof = sys.motion_basis.ncols();
    let nu = min_norm_solution(&sys.motion_basis, &DVector::from_column_slice(v_c.as_slice()));
    let mut y = DVector::zeros(6);
    y.rows_mut(0, dof).copy_from(&nu);
    y.rows_mut(dof, 6 - dof).copy_from(constraint_rate);
    y
}

/// Minimum-norm joint velocities with `Σ Θ̇ = y` and the force-rate rows
/// `row · Ξ Θ̇ ≤ 0`, where `Σ = Π Ξ`.
pub fn solve_joint_velocities(
    state: &GraspState,
    inv: &InverseMap,
    target: &DVector<f64>,
    constraints: &ForceRateConstraints,
    config: &ControllerConfig,
) -> Result<(Vec<DVector<f64>>, Vec<ActiveRow>, f64, usize)> {
    let xi = hand_jacobian(state);
    let sigma = &inv.reduced_map * &xi;
    let rank = sigma.rank(1e-9 * sigma.amax().max(f64::MIN_POSITIVE));
    if rank < 6 {
        return Err(ControlError::RankDeficient { rank });
    }
    let rows: &[_] = match config.mode {
        SolverMode::Qp => &constraints.rows,
        SolverMode::ClosedForm => &[],
    };
    let (rates, active, iterations) = if rows.is_empty() {
        let closed = sigma.transpose() * (&sigma * sigma.transpose()).try_inverse().ok_or(ControlError::RankDeficient { rank })? * target;
        (closed, Vec::new(), 0)
    } else {
        let g = DMatrix::from_fn(rows.len(), xi.ncols(), |r, c| rows[r].row.dot(&xi.column(c)));
        let sol = solve_min_norm_qp(&sigma, target, &g, &DVector::zeros(rows.len()));
        let label = |i: usize| ActiveRow {
            finger: rows[i].finger,
            kind: rows[i].kind,
        };
        if let QpStatus::Infeasible { violated, max_violation } = &sol.status {
            return Err(ControlError::Infeasible {
                violated: violated.iter().map(|&i| (rows[i].finger, rows[i].kind)).collect(),
                max_violation: *max_violation,
            });
        }
        (sol.x, sol.active.iter().map(|&i| label(i)).collect(), sol.iterations)
    };
    let scale = saturation_scale(&rates, config.joint_speed_limit);
    Ok((split_joints(state, &(rates * scale)), active, scale, iterations))
}

/// Stateful PI controller of one simulation.
#[derive(Clone, Debug)]
pub struct Controller {
    pub config: ControllerConfig,
    integral: Vector6<f64>,
    theta_c: Vec<DVector<f64>>,
    lambda_ref: DVector<f64>,
}

impl Controller {
    pub fn new(config: ControllerConfig, state: &GraspState) -> Result<Self> {
        config.validate()?;
        Ok(Controller {
            config,
            integral: Vector6::zeros(),
            theta_c: state.fingers.iter().map(|f| f.theta.clone()).collect(),
            lambda_ref: state.constraint_multipliers(),
        })
    }

    pub fn integral(&self) -> &Vector6<f64> {
        &self.integral
    }

    /// `V_c = V_d + K_p V_e + K_i ∫V_e`; advances the integral by one period.
    pub fn pi_output(&mut self, v_e: &Vector6<f64>, v_d: &Vector6<f64>) -> Vector6<f64> {
        let g = &self.config.gains;
        let limit = g.integral_limit;
        self.integral = (self.integral + v_e * self.config.period).map(|x| x.clamp(-limit, limit));
        v_d + Vector6::from(g.proportional).component_mul(v_e) + Vector6::from(g.integral).component_mul(&self.integral)
    }

    pub fn control_step(&mut self, state: &GraspState, t_d: &Transform, v_d: &Vector6<f64>) -> Result<ControlCommand> {
        let sys = assemble(state)?;
        let inv = inverse_map(&sys)?;
        self.control_step_with(state, &sys, &inv, t_d, v_d)
    }

    /// As [`Controller::control_step`] with the constraint system already assembled.
    pub fn control_step_with(
        &mut self,
        state: &GraspState,
        sys: &ConstraintSystem,
        inv: &InverseMap,
        t_d: &Transform,
        v_d: &Vector6<f64>,
    ) -> Result<ControlCommand> {
        let v_e = error_twist(&state.object.pose, t_d)?;
        let v_c = self.pi_output(&v_e, v_d);
        let lambda_rate = -(state.constraint_multipliers() - &self.lambda_ref) * self.config.constraint_gain;
        let target = constrained_target(sys, &v_c, &lambda_rate);
        let constraints = force_rate_rows(state, sys, inv, self.config.f_min, self.config.mu_max);
        let candidate_rows = constraints
            .rows
            .iter()
            .map(|r| ActiveRow {
                finger: r.finger,
                kind: r.kind,
            })
            .collect();
        let (joint_rates, active_rows, saturation, qp_iterations) = solve_joint_velocities(state, inv, &target, &constraints, &self.config)?;
        for (theta, rate) in self.theta_c.iter_mut().zip(&joint_rates) {
            *theta += rate * self.config.period;
        }
        Ok(ControlCommand {
            joint_rates,
            joint_targets: self.theta_c.clone(),
            commanded_twist: v_c,
            active_rows,
            candidate_rows,
            saturation,
            qp_iterations,
        })
    }
}
