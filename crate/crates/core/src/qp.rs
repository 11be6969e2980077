//! Convex QP with equality constraints and simple bounds, solved by a primal
//! active-set method on top of the null-space equality kernel.
//!
//! ```text
//! min 1/2 x^T H x + g^T x   s.t.  A x = b,  lower <= x <= upper
//! ```
//!
//! Index ties (which constraint to drop, which one blocks) are broken by the
//! smallest index, which rules out cycling.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, DpcError, Result};
use crate::linalg::{self, FEASIBILITY_TOL, HESSIAN_RCOND};

pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Debug, Clone)]
pub struct BoxQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `-inf` for no bound.
    pub lower: DVector<f64>,
    /// `+inf` for no bound.
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActiveBound {
    pub index: usize,
    pub side: Side,
    /// Nonnegative at a solution.
    pub multiplier: f64,
}

#[derive(Debug, Clone)]
pub enum QpOutcome {
    Optimal,
    /// No point satisfies the constraints; `residual` is the smallest
    /// achievable equality violation within the bounds.
    Infeasible {
        residual: f64,
    },
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub outcome: QpOutcome,
    pub active: Vec<ActiveBound>,
    pub eq_multipliers: DVector<f64>,
    pub iterations: usize,
    pub nonunique: bool,
    pub stationarity_residual: f64,
    pub feasibility_residual: f64,
    /// Largest `|multiplier * slack|` over all bounds.
    pub complementarity: f64,
    /// Smallest bound multiplier (negative means dual infeasible).
    pub min_multiplier: f64,
}

impl BoxQp {
    pub fn unbounded(h: DMatrix<f64>, g: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let n = g.len();
        BoxQp {
            h,
            g,
            a,
            b,
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.g.len();
        check_dim("QP Hessian rows", n, self.h.nrows())?;
        check_dim("QP Hessian cols", n, self.h.ncols())?;
        check_dim("QP constraint cols", n, self.a.ncols())?;
        check_dim("QP constraint rows", self.a.nrows(), self.b.len())?;
        check_dim("QP lower bounds", n, self.lower.len())?;
        check_dim("QP upper bounds", n, self.upper.len())?;
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() {
                return Err(DpcError::InvalidParameter(format!("bound {i} is NaN")));
            }
        }
        Ok(())
    }

    fn has_bounds(&self) -> bool {
        self.lower.iter().any(|v| v.is_finite()) || self.upper.iter().any(|v| v.is_finite())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.h * x)[(0, 0)] + self.g.dot(x)
    }
}

/// Solve the QP. Empty boxes and inconsistent equalities yield
/// [`QpOutcome::Infeasible`]; an objective unbounded below is an error.
pub fn solve(qp: &BoxQp, tol: f64, max_iter: usize) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.g.len();
    for i in 0..n {
        if qp.lower[i] > qp.upper[i] {
            return Ok(infeasible(qp, DVector::zeros(n), qp.lower[i] - qp.upper[i]));
        }
    }
    if !qp.has_bounds() {
        return match linalg::solve_kkt(&qp.h, &qp.g, &qp.a, &qp.b, tol) {
            Ok(k) => Ok(QpSolution {
                complementarity: 0.0,
                min_multiplier: 0.0,
                x: k.x,
                outcome: QpOutcome::Optimal,
                active: Vec::new(),
                eq_multipliers: k.multipliers,
                iterations: 1,
                nonunique: k.nonunique,
                stationarity_residual: k.stationarity_residual,
                feasibility_residual: k.feasibility_residual,
            }),
            Err(DpcError::Infeasible { residual, .. }) => {
                Ok(infeasible(qp, linalg::pinv(&qp.a, tol) * &qp.b, residual))
            }
            Err(e) => Err(e),
        };
    }

    let x0 = match phase_one(qp, tol, max_iter)? {
        Ok(x) => x,
        Err((x, residual)) => return Ok(infeasible(qp, x, residual)),
    };
    active_set(qp, x0, tol, max_iter)
}

fn infeasible(qp: &BoxQp, x: DVector<f64>, residual: f64) -> QpSolution {
    let feas = if x.len() == qp.a.ncols() {
        (&qp.a * &x - &qp.b).norm()
    } else {
        f64::NAN
    };
    QpSolution {
        x,
        outcome: QpOutcome::Infeasible { residual },
        active: Vec::new(),
        eq_multipliers: DVector::zeros(qp.a.nrows()),
        iterations: 0,
        nonunique: false,
        stationarity_residual: f64::NAN,
        feasibility_residual: feas,
        complementarity: f64::NAN,
        min_multiplier: f64::NAN,
    }
}

fn clamp(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].max(lo[i]).min(hi[i]))
}

/// Feasible start, or the best point found with its equality residual.
type PhaseOne = std::result::Result<DVector<f64>, (DVector<f64>, f64)>;

/// Find a point inside the bounds satisfying the equalities, by minimizing
/// `1/2 |r|^2` subject to `A x + r = b` within the bounds.
fn phase_one(qp: &BoxQp, tol: f64, max_iter: usize) -> Result<PhaseOne> {
    let n = qp.g.len();
    let m = qp.a.nrows();
    let x_ls = linalg::pinv(&qp.a, tol) * &qp.b;
    let x0 = clamp(&x_ls, &qp.lower, &qp.upper);
    let limit = FEASIBILITY_TOL * (1.0 + qp.b.norm());
    if (&qp.a * &x0 - &qp.b).norm() <= limit {
        return Ok(Ok(x0));
    }
    let mut h = DMatrix::zeros(n + m, n + m);
    h.view_mut((n, n), (m, m)).fill_with_identity();
    let a = linalg::hstack(&[&qp.a, &DMatrix::identity(m, m)]);
    let inf = DVector::from_element(m, f64::INFINITY);
    let aux = BoxQp {
        h,
        g: DVector::zeros(n + m),
        a,
        b: qp.b.clone(),
        lower: linalg::vcat(&[&qp.lower, &(-&inf)]),
        upper: linalg::vcat(&[&qp.upper, &inf]),
    };
    let r0 = &qp.b - &qp.a * &x0;
    let sol = active_set(&aux, linalg::vcat(&[&x0, &r0]), tol, max_iter)?;
    let x = sol.x.rows(0, n).into_owned();
    let residual = (&qp.a * &x - &qp.b).norm();
    if residual <= limit {
        Ok(Ok(x))
    } else {
        Ok(Err((x, residual)))
    }
}

struct Step {
    p: DVector<f64>,
    /// Zero-curvature descent direction: no natural step length.
    unbounded: bool,
    flat: bool,
}

fn eqp_step(qp: &BoxQp, x: &DVector<f64>, working: &[(usize, Side)], tol: f64) -> Step {
    let n = x.len();
    let mut c = DMatrix::zeros(qp.a.nrows() + working.len(), n);
    c.view_mut((0, 0), (qp.a.nrows(), n)).copy_from(&qp.a);
    for (k, &(i, _)) in working.iter().enumerate() {
        c[(qp.a.nrows() + k, i)] = 1.0;
    }
    let basis = linalg::null_space(&c, tol);
    let k = basis.ncols();
    if k == 0 {
        return Step {
            p: DVector::zeros(n),
            unbounded: false,
            flat: false,
        };
    }
    let grad = &qp.h * x + &qp.g;
    let hr = linalg::symmetrize(&(basis.transpose() * &qp.h * &basis));
    let rhs = -(basis.transpose() * &grad);
    let eig = hr.symmetric_eigen();
    let emax = eig.eigenvalues.iter().fold(qp.h.norm(), |m, v| m.max(v.abs()));
    let cutoff = HESSIAN_RCOND * emax * (k as f64);
    let scale = grad.norm() + qp.h.norm() * x.norm();
    let mut z = DVector::zeros(k);
    let mut flat = false;
    let mut descent: Option<DVector<f64>> = None;
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        let coeff = v.dot(&rhs);
        if ev > cutoff && ev > 0.0 {
            z += v * (coeff / ev);
        } else {
            flat = true;
            if coeff.abs() > 1e-10 * scale && descent.is_none() {
                descent = Some(v * coeff.signum());
            }
        }
    }
    match descent {
        Some(d) => Step {
            p: &basis * d,
            unbounded: true,
            flat,
        },
        None => Step {
            p: &basis * z,
            unbounded: false,
            flat,
        },
    }
}

/// Bound multipliers from a least-squares fit of the stationarity condition
/// `H x + g = A^T nu + sum_i mu_i s_i e_i` (`s_i = +1` lower, `-1` upper).
fn multipliers(qp: &BoxQp, x: &DVector<f64>, working: &[(usize, Side)], tol: f64) -> (DVector<f64>, DVector<f64>, f64) {
    let n = x.len();
    let m = qp.a.nrows();
    let grad = &qp.h * x + &qp.g;
    let mut mat = DMatrix::zeros(n, m + working.len());
    mat.view_mut((0, 0), (n, m)).copy_from(&qp.a.transpose());
    for (k, &(i, side)) in working.iter().enumerate() {
        mat[(i, m + k)] = if side == Side::Lower { 1.0 } else { -1.0 };
    }
    let sol = linalg::pinv(&mat, tol) * &grad;
    let resid = (&mat * &sol - &grad).norm();
    (
        sol.rows(0, m).into_owned(),
        sol.rows(m, working.len()).into_owned(),
        resid,
    )
}

fn active_set(qp: &BoxQp, mut x: DVector<f64>, tol: f64, max_iter: usize) -> Result<QpSolution> {
    let n = x.len();
    let mut working: Vec<(usize, Side)> = Vec::new();
    for iter in 1..=max_iter {
        let step = eqp_step(qp, &x, &working, tol);
        let pnorm = step.p.norm();
        if !step.unbounded && pnorm <= 1e-12 * (1.0 + x.norm()) {
            let (nu, mu, resid) = multipliers(qp, &x, &working, tol);
            let grad_scale = 1.0 + (&qp.h * &x + &qp.g).amax();
            let drop = working
                .iter()
                .zip(mu.iter())
                .filter(|(_, &m)| m < -1e-9 * grad_scale)
                .map(|(&(i, s), _)| (i, s))
                .min_by_key(|&(i, _)| i);
            match drop {
                Some(entry) => {
                    working.retain(|&e| e != entry);
                    continue;
                }
                None => {
                    let active: Vec<ActiveBound> = working
                        .iter()
                        .zip(mu.iter())
                        .map(|(&(index, side), &multiplier)| ActiveBound {
                            index,
                            side,
                            multiplier,
                        })
                        .collect();
                    let complementarity = active
                        .iter()
                        .map(|ab| {
                            let bound = match ab.side {
                                Side::Lower => qp.lower[ab.index],
                                Side::Upper => qp.upper[ab.index],
                            };
                            (ab.multiplier * (x[ab.index] - bound)).abs()
                        })
                        .fold(0.0, f64::max);
                    let min_multiplier = active.iter().map(|a| a.multiplier).fold(0.0, f64::min);
                    let mut sorted = active;
                    sorted.sort_by_key(|a| a.index);
                    return Ok(QpSolution {
                        feasibility_residual: (&qp.a * &x - &qp.b).norm(),
                        x,
                        outcome: QpOutcome::Optimal,
                        active: sorted,
                        eq_multipliers: -nu,
                        iterations: iter,
                        nonunique: step.flat,
                        stationarity_residual: resid,
                        complementarity,
                        min_multiplier,
                    });
                }
            }
        }

        let mut alpha = if step.unbounded { f64::INFINITY } else { 1.0 };
        let mut blocking: Option<(usize, Side)> = None;
        let eps = 1e-14 * (1.0 + pnorm);
        for i in 0..n {
            if working.iter().any(|&(j, _)| j == i) {
                continue;
            }
            let pi = step.p[i];
            let (cand, side) = if pi < -eps && qp.lower[i].is_finite() {
                ((qp.lower[i] - x[i]) / pi, Side::Lower)
            } else if pi > eps && qp.upper[i].is_finite() {
                ((qp.upper[i] - x[i]) / pi, Side::Upper)
            } else {
                continue;
            };
            let cand = cand.max(0.0);
            // Strict comparison keeps the smallest index on ties.
            if cand < alpha {
                alpha = cand;
                blocking = Some((i, side));
            }
        }
        if alpha.is_infinite() {
            return Err(DpcError::Unbounded);
        }
        x += &step.p * alpha;
        if let Some((i, side)) = blocking {
            x[i] = match side {
                Side::Lower => qp.lower[i],
                Side::Upper => qp.upper[i],
            };
            working.push((i, side));
        }
    }
    Err(DpcError::IterationLimit(max_iter))
}
