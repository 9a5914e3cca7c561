//! Small dense minimum-norm quadratic program:
//!
//! ```text
//! minimize ½‖x‖²  subject to  A x = b,  G x ≤ h
//! ```
//!
//! Solved by a primal active-set method on the exact-penalty form
//! `min ½‖x‖² + ½δt² + M t` with `G x − t ≤ h`, `t ≥ 0`, which always has a
//! feasible starting point. `M` is raised until `t` vanishes or the cap is hit.

use nalgebra::{DMatrix, DVector};

const PENALTY_START: f64 = 1e3;
const PENALTY_FACTOR: f64 = 100.0;
const PENALTY_CAP: f64 = 1e12;
const SLACK_WEIGHT: f64 = 1.0;
const FEASIBILITY_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub enum QpStatus {
    Optimal,
    /// No point satisfies every inequality together with the equalities.
    Infeasible { violated: Vec<usize>, max_violation: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Inequality rows held at equality at the solution.
    pub active: Vec<usize>,
    /// Multipliers of `active`, in the same order (for unit-normalized rows).
    pub multipliers: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Minimum-norm solution of `A x = b` (least squares if inconsistent).
pub fn min_norm_solution(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let tol = 1e-13 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, tol).expect("svd solve")
}

/// Orthonormal basis of the null space of `m` (columns), for an `n`-column matrix.
fn null_space(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // pad to a square system so that the full right singular basis is returned
    let mut padded = DMatrix::zeros(m.nrows().max(n), n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors");
    let smax = svd.singular_values.max();
    let tol = 1e-11 * smax.max(1.0);
    let keep: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= tol).collect();
    let mut basis = DMatrix::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &v_t.row(k).transpose());
    }
    basis
}

struct Penalized<'a> {
    a: &'a DMatrix<f64>,
    g: &'a DMatrix<f64>,
    h: &'a DVector<f64>,
    n: usize,
}

impl Penalized<'_> {
    /// Row `i < m` is `[G_i, −1]`; row `m` is `[0, −1]`.
    fn row(&self, i: usize) -> DVector<f64> {
        let mut r = DVector::zeros(self.n + 1);
        if i < self.g.nrows() {
            r.rows_mut(0, self.n).copy_from(&self.g.row(i).transpose());
        }
        r[self.n] = -1.0;
        r
    }

    fn rhs(&self, i: usize) -> f64 {
        if i < self.g.nrows() {
            self.h[i]
        } else {
            0.0
        }
    }

    fn count(&self) -> usize {
        self.g.nrows() + 1
    }

    fn equality_rows(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.a.nrows(), self.n + 1);
        e.view_mut((0, 0), (self.a.nrows(), self.n)).copy_from(self.a);
        e
    }

    fn gradient(&self, z: &DVector<f64>, penalty: f64) -> DVector<f64> {
        let mut g = z.clone();
        g[self.n] = SLACK_WEIGHT * z[self.n] + penalty;
        g
    }

    /// Primal active-set iterations from a feasible `z`.
    fn solve(&self, mut z: DVector<f64>, mut working: Vec<usize>, penalty: f64) -> (DVector<f64>, Vec<usize>, Vec<f64>, usize) {
        let dim = self.n + 1;
        let e = self.equality_rows();
        let mut hess = DVector::from_element(dim, 1.0);
        hess[self.n] = SLACK_WEIGHT;
        for iteration in 0..MAX_ITERATIONS {
            let mut cons = DMatrix::zeros(e.nrows() + working.len(), dim);
            cons.view_mut((0, 0), (e.nrows(), dim)).copy_from(&e);
            for (k, &i) in working.iter().enumerate() {
                cons.set_row(e.nrows() + k, &self.row(i).transpose());
            }
            let basis = null_space(&cons, dim);
            let grad = self.gradient(&z, penalty);
            let step = if basis.ncols() == 0 {
                DVector::zeros(dim)
            } else {
                let reduced_h = basis.transpose() * DMatrix::from_diagonal(&hess) * &basis;
                let reduced_g = basis.transpose() * &grad;
                let y = reduced_h.cholesky().expect("positive definite").solve(&(-reduced_g));
                &basis * y
            };
            if step.norm() <= 1e-13 * (1.0 + z.norm()) {
                let multipliers = if working.is_empty() {
                    Vec::new()
                } else {
                    let lhs = cons.transpose();
                    let sol = min_norm_solution(&lhs, &(-&grad));
                    sol.rows(e.nrows(), working.len()).iter().copied().collect()
                };
                let worst = multipliers
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .filter(|(_, &l)| l < -1e-12);
                match worst {
                    Some((k, _)) => {
                        working.remove(k);
                    }
                    None => return (z, working, multipliers, iteration),
                }
            } else {
                let mut alpha = 1.0;
                let mut blocking = None;
                for i in 0..self.count() {
                    if working.contains(&i) {
                        continue;
                    }
                    let r = self.row(i);
                    let rate = r.dot(&step);
                    if rate > 1e-14 {
                        let room = (self.rhs(i) - r.dot(&z)).max(0.0);
                        let limit = room / rate;
                        if limit < alpha {
                            alpha = limit;
                            blocking = Some(i);
                        }
                    }
                }
                z += step * alpha;
                if let Some(i) = blocking {
                    working.push(i);
                }
            }
        }
        (z, working, Vec::new(), MAX_ITERATIONS)
    }
}

/// Solves the minimum-norm QP. Inequality rows are normalized internally.
pub fn solve_min_norm_qp(a: &DMatrix<f64>, b: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> QpSolution {
    let n = a.ncols().max(g.ncols());
    let x0 = min_norm_solution(a, b);
    if g.nrows() == 0 {
        return QpSolution {
            x: x0,
            active: Vec::new(),
            multipliers: Vec::new(),
            status: QpStatus::Optimal,
            iterations: 0,
        };
    }
    let mut gn = g.clone();
    let mut hn = h.clone();
    for i in 0..g.nrows() {
        let norm = g.row(i).norm();
        if norm > 0.0 {
            gn.row_mut(i).scale_mut(1.0 / norm);
            hn[i] /= norm;
        }
    }
    let problem = Penalized { a, g: &gn, h: &hn, n };
    let mut penalty = PENALTY_START;
    let mut total = 0;
    loop {
        let violation = (&gn * &x0 - &hn).max().max(0.0);
        let mut z = DVector::zeros(n + 1);
        z.rows_mut(0, n).copy_from(&x0);
        z[n] = violation;
        let (z, working, multipliers, iterations) = problem.solve(z, Vec::new(), penalty);
        total += iterations;
        let x = z.rows(0, n).into_owned();
        let slack = z[n];
        if slack <= FEASIBILITY_TOLERANCE || penalty >= PENALTY_CAP {
            let residual = &gn * &x - &hn;
            let (active, multipliers): (Vec<usize>, Vec<f64>) = working
                .iter()
                .zip(multipliers.iter().chain(std::iter::repeat(&0.0)))
                .filter(|(&i, _)| i < gn.nrows())
                .map(|(&i, &l)| (i, l))
                .unzip();
            let status = if slack <= FEASIBILITY_TOLERANCE {
                QpStatus::Optimal
            } else {
                let violated = (0..gn.nrows()).filter(|&i| residual[i] > FEASIBILITY_TOLERANCE).collect();
                QpStatus::Infeasible {
                    violated,
                    max_violation: residual.max(),
                }
            };
            return QpSolution {
                x,
                active,
                multipliers,
                status,
                iterations: total,
            };
        }
        penalty *= PENALTY_FACTOR;
    }
}
