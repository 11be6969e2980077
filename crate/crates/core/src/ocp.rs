//! The regularized predictive-control problem
//!
//! ```text
//! min_{u, y, a}  |y - y_ref|^2_Q + |u - u_ref|^2_{R_u} + h(a)
//! s.t.           [W; U; Y] a = (xi, u, y),  u in U,  y in Y
//! ```
//!
//! solved either over `(u, y, a)` directly or over `(u, y)` with `h`
//! replaced by its closed-form trajectory cost.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{DataMatrix, DataMode, NoiseSource, SystemModel, TrajectoryTuple};
use crate::error::{check_dim, DpcError, Result};
use crate::io::vector_json;
use crate::linalg::{self, DEFAULT_TOL, FEASIBILITY_TOL};
use crate::predictors::augment_xi;
use crate::qp::{self, ActiveBound, BoxQp, QpOutcome};
use crate::regularizers::{brute_force_cost_tol, ClosedForm, Regularizer, RegularizerQp};

fn check_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    let asym = linalg::asymmetry(m);
    let scale = m.amax().max(1.0);
    if asym > 1e-10 * scale {
        return Err(DpcError::NotSymmetric { asymmetry: asym });
    }
    if m.nrows() > 0 {
        let emin = linalg::symmetrize(m).symmetric_eigen().eigenvalues.min();
        if emin < -1e-10 * scale {
            return Err(DpcError::InvalidParameter(format!(
                "{name} must be positive semidefinite (smallest eigenvalue {emin:e})"
            )));
        }
    }
    Ok(())
}

/// `J = |y - y_ref|^2_Q + |u - u_ref|^2_{R_u}`.
#[derive(Debug, Clone)]
pub struct ControlObjective {
    pub q: DMatrix<f64>,
    pub y_ref: DVector<f64>,
    pub r_u: DMatrix<f64>,
    pub u_ref: DVector<f64>,
}

impl ControlObjective {
    pub fn new(q: DMatrix<f64>, y_ref: DVector<f64>, r_u: DMatrix<f64>, u_ref: DVector<f64>) -> Result<Self> {
        check_dim("Q rows", y_ref.len(), q.nrows())?;
        check_dim("Q columns", y_ref.len(), q.ncols())?;
        check_dim("R_u rows", u_ref.len(), r_u.nrows())?;
        check_dim("R_u columns", u_ref.len(), r_u.ncols())?;
        check_psd("Q", &q)?;
        check_psd("R_u", &r_u)?;
        Ok(ControlObjective { q, y_ref, r_u, u_ref })
    }

    /// Block-diagonal weights repeating a per-step block over the horizon.
    pub fn block_diagonal(
        q_step: &DMatrix<f64>,
        r_step: &DMatrix<f64>,
        n_f: usize,
        y_ref: DVector<f64>,
        u_ref: DVector<f64>,
    ) -> Result<Self> {
        let qs: Vec<&DMatrix<f64>> = vec![q_step; n_f];
        let rs: Vec<&DMatrix<f64>> = vec![r_step; n_f];
        Self::new(linalg::block_diag(&qs), y_ref, linalg::block_diag(&rs), u_ref)
    }

    pub fn value(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let dy = y - &self.y_ref;
        let du = u - &self.u_ref;
        (dy.transpose() * &self.q * &dy)[(0, 0)] + (du.transpose() * &self.r_u * &du)[(0, 0)]
    }
}

/// Elementwise bounds; infinite entries are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim("bound lengths", lower.len(), upper.len())?;
        for i in 0..lower.len() {
            if lower[i].is_nan() || upper[i].is_nan() {
                return Err(DpcError::InvalidParameter(format!("bound {i} is NaN")));
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn symmetric(dim: usize, radius: f64) -> Self {
        Bounds {
            lower: DVector::from_element(dim, -radius),
            upper: DVector::from_element(dim, radius),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lower.iter().zip(self.upper.iter()).any(|(l, u)| l > u)
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.iter()
            .enumerate()
            .all(|(i, &x)| x >= self.lower[i] - tol && x <= self.upper[i] + tol)
    }
}

/// `selector * y = target`.
#[derive(Debug, Clone)]
pub struct TerminalConstraint {
    pub selector: DMatrix<f64>,
    pub target: DVector<f64>,
    /// Number of trailing steps when built by [`TerminalConstraint::last_steps`].
    pub steps: Option<usize>,
}

impl TerminalConstraint {
    pub fn new(selector: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        check_dim("terminal target", selector.nrows(), target.len())?;
        if linalg::numerical_rank(&selector, DEFAULT_TOL) != selector.nrows() {
            return Err(DpcError::InvalidParameter(
                "terminal selector rows must be linearly independent".into(),
            ));
        }
        Ok(TerminalConstraint {
            selector,
            target,
            steps: None,
        })
    }

    /// Pin the last `steps` output blocks (each of size `p`) to the matching
    /// entries of `y_ref`.
    pub fn last_steps(steps: usize, p: usize, y_ref: &DVector<f64>) -> Result<Self> {
        let ny = y_ref.len();
        let k = steps * p;
        if steps == 0 || k > ny {
            return Err(DpcError::InvalidParameter(format!(
                "cannot pin {steps} steps of size {p} in an output sequence of length {ny}"
            )));
        }
        let mut sel = DMatrix::zeros(k, ny);
        for i in 0..k {
            sel[(i, ny - k + i)] = 1.0;
        }
        Ok(TerminalConstraint {
            selector: sel,
            target: y_ref.rows(ny - k, k).into_owned(),
            steps: Some(steps),
        })
    }
}

/// `{ xi : h xi <= k }`, used for feasibility reporting only.
#[derive(Debug, Clone)]
pub struct Polyhedron {
    pub h: DMatrix<f64>,
    pub k: DVector<f64>,
}

impl Polyhedron {
    pub fn new(h: DMatrix<f64>, k: DVector<f64>) -> Result<Self> {
        check_dim("polyhedron offsets", h.nrows(), k.len())?;
        Ok(Polyhedron { h, k })
    }

    /// `|xi|_inf <= radius`.
    pub fn inf_ball(dim: usize, radius: f64) -> Self {
        let eye = DMatrix::<f64>::identity(dim, dim);
        Polyhedron {
            h: linalg::vstack(&[&eye, &(-&eye)]),
            k: DVector::from_element(2 * dim, radius),
        }
    }

    /// Largest constraint violation (nonpositive inside).
    pub fn violation(&self, xi: &DVector<f64>) -> f64 {
        (&self.h * xi - &self.k)
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pub u_box: Option<Bounds>,
    pub y_box: Option<Bounds>,
    pub terminal: Option<TerminalConstraint>,
    pub xi_set: Option<Polyhedron>,
}

/// Additional linear equality `a_u u + a_y y = b` on the decision variables.
#[derive(Debug, Clone)]
pub struct LinearEquality {
    pub a_u: DMatrix<f64>,
    pub a_y: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct DPCProblem {
    pub data: DataMatrix,
    pub objective: ControlObjective,
    pub constraints: ConstraintSet,
    pub regularizer: Regularizer,
    pub xi: DVector<f64>,
    /// Restrict generators to the affine hull (`1^T a = 1`).
    pub affine: bool,
    pub tol: f64,
}

impl DPCProblem {
    pub fn new(
        data: DataMatrix,
        objective: ControlObjective,
        constraints: ConstraintSet,
        regularizer: Regularizer,
        xi: DVector<f64>,
    ) -> Result<Self> {
        let p = DPCProblem {
            data,
            objective,
            constraints,
            regularizer,
            xi,
            affine: false,
            tol: DEFAULT_TOL,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_affine(mut self, affine: bool) -> Self {
        self.affine = affine;
        self
    }

    pub fn with_xi(&self, xi: DVector<f64>) -> Self {
        let mut p = self.clone();
        p.xi = xi;
        p
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        check_dim("xi length", d.xi_dim(), self.xi.len())?;
        check_dim("y_ref length", d.y_dim(), self.objective.y_ref.len())?;
        check_dim("u_ref length", d.u_dim(), self.objective.u_ref.len())?;
        if let Some(b) = &self.constraints.u_box {
            check_dim("input bounds", d.u_dim(), b.lower.len())?;
        }
        if let Some(b) = &self.constraints.y_box {
            check_dim("output bounds", d.y_dim(), b.lower.len())?;
        }
        if let Some(t) = &self.constraints.terminal {
            check_dim("terminal selector columns", d.y_dim(), t.selector.ncols())?;
        }
        if let Some(x) = &self.constraints.xi_set {
            check_dim("state set columns", d.xi_dim(), x.h.ncols())?;
        }
        if !(self.tol > 0.0) {
            return Err(DpcError::InvalidParameter("tolerance must be positive".into()));
        }
        self.regularizer.validate(d.ell())
    }

    fn nu(&self) -> usize {
        self.data.u_dim()
    }
    fn ny(&self) -> usize {
        self.data.y_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveDiagnostics {
    pub stationarity_residual: f64,
    pub feasibility_residual: f64,
    pub complementarity: f64,
    pub min_multiplier: f64,
    pub iterations: usize,
    /// Constraint violation certificate when infeasible.
    pub infeasibility_residual: Option<f64>,
    /// `h(a*)` at the reported generator.
    pub h_at_a: f64,
    /// Closed-form `h*` at the reported trajectory (reduced solves).
    pub closed_form_h: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DPCSolution {
    pub status: SolveStatus,
    #[serde(with = "vector_json")]
    pub u: DVector<f64>,
    #[serde(with = "vector_json")]
    pub y: DVector<f64>,
    #[serde(with = "vector_json")]
    pub a: DVector<f64>,
    #[serde(with = "vector_json")]
    pub sigma: DVector<f64>,
    pub value: f64,
    /// Active bounds, indexed into the stacked `(u, y)` vector.
    pub active_set: Vec<ActiveBound>,
    pub nonunique: bool,
    pub diagnostics: SolveDiagnostics,
}

impl DPCSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn trajectory(&self, xi: &DVector<f64>) -> TrajectoryTuple {
        TrajectoryTuple::new(xi.clone(), self.u.clone(), self.y.clone())
    }
}

fn bounds_for(prob: &DPCProblem, extra: usize) -> (DVector<f64>, DVector<f64>) {
    let (nu, ny) = (prob.nu(), prob.ny());
    let n = nu + ny + extra;
    let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(n, f64::INFINITY);
    if let Some(b) = &prob.constraints.u_box {
        lo.rows_mut(0, nu).copy_from(&b.lower);
        hi.rows_mut(0, nu).copy_from(&b.upper);
    }
    if let Some(b) = &prob.constraints.y_box {
        lo.rows_mut(nu, ny).copy_from(&b.lower);
        hi.rows_mut(nu, ny).copy_from(&b.upper);
    }
    (lo, hi)
}

/// Equality rows on `(u, y)` from terminal and user constraints, padded with
/// `pad` zero columns.
fn uy_equalities(prob: &DPCProblem, extra: &[LinearEquality], pad: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (nu, ny) = (prob.nu(), prob.ny());
    let mut blocks: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    if let Some(t) = &prob.constraints.terminal {
        let mut a = DMatrix::zeros(t.selector.nrows(), nu + ny + pad);
        a.view_mut((0, nu), (t.selector.nrows(), ny)).copy_from(&t.selector);
        blocks.push((a, t.target.clone()));
    }
    for e in extra {
        check_dim("equality input columns", nu, e.a_u.ncols())?;
        check_dim("equality output columns", ny, e.a_y.ncols())?;
        check_dim("equality rows", e.a_u.nrows(), e.a_y.nrows())?;
        check_dim("equality right-hand side", e.a_u.nrows(), e.b.len())?;
        let r = e.a_u.nrows();
        let mut a = DMatrix::zeros(r, nu + ny + pad);
        a.view_mut((0, 0), (r, nu)).copy_from(&e.a_u);
        a.view_mut((0, nu), (r, ny)).copy_from(&e.a_y);
        blocks.push((a, e.b.clone()));
    }
    let mats: Vec<&DMatrix<f64>> = blocks.iter().map(|(a, _)| a).collect();
    let vecs: Vec<&DVector<f64>> = blocks.iter().map(|(_, b)| b).collect();
    if mats.is_empty() {
        return Ok((DMatrix::zeros(0, nu + ny + pad), DVector::zeros(0)));
    }
    Ok((linalg::vstack(&mats), linalg::vcat(&vecs)))
}

fn objective_hessian(prob: &DPCProblem, extra: usize) -> (DMatrix<f64>, DVector<f64>) {
    let (nu, ny) = (prob.nu(), prob.ny());
    let o = &prob.objective;
    let n = nu + ny + extra;
    let mut h = DMatrix::zeros(n, n);
    h.view_mut((0, 0), (nu, nu)).copy_from(&(&o.r_u * 2.0));
    h.view_mut((nu, nu), (ny, ny)).copy_from(&(&o.q * 2.0));
    let mut g = DVector::zeros(n);
    g.rows_mut(0, nu).copy_from(&(&o.r_u * &o.u_ref * -2.0));
    g.rows_mut(nu, ny).copy_from(&(&o.q * &o.y_ref * -2.0));
    (h, g)
}

fn infeasible_solution(prob: &DPCProblem, x: &DVector<f64>, n_a: usize, n_sigma: usize, residual: f64) -> DPCSolution {
    let (nu, ny) = (prob.nu(), prob.ny());
    let take = |off: usize, len: usize| {
        if x.len() >= off + len {
            x.rows(off, len).into_owned()
        } else {
            DVector::from_element(len, f64::NAN)
        }
    };
    DPCSolution {
        status: SolveStatus::Infeasible,
        u: take(0, nu),
        y: take(nu, ny),
        a: take(nu + ny, n_a),
        sigma: take(nu + ny + n_a, n_sigma),
        value: f64::INFINITY,
        active_set: Vec::new(),
        nonunique: false,
        diagnostics: SolveDiagnostics {
            stationarity_residual: f64::NAN,
            feasibility_residual: f64::NAN,
            complementarity: f64::NAN,
            min_multiplier: f64::NAN,
            iterations: 0,
            infeasibility_residual: Some(residual),
            h_at_a: f64::NAN,
            closed_form_h: None,
        },
    }
}

/// Solve over `(u, y, a)` (plus slack variables for the slack regularizer).
pub fn solve_full(prob: &DPCProblem) -> Result<DPCSolution> {
    solve_full_with(prob, &[])
}

/// [`solve_full`] with additional equalities on `(u, y)`.
pub fn solve_full_with(prob: &DPCProblem, extra: &[LinearEquality]) -> Result<DPCSolution> {
    prob.validate()?;
    let (nu, ny) = (prob.nu(), prob.ny());
    let rq = RegularizerQp::new(&prob.regularizer, &prob.data, prob.affine, prob.tol)?;
    let nv = rq.n_vars();
    let n = nu + ny + nv;

    let (mut h, mut g) = objective_hessian(prob, nv);
    h.view_mut((nu + ny, nu + ny), (nv, nv)).copy_from(&(&rq.s * 2.0));
    g.rows_mut(nu + ny, nv).copy_from(&rq.lin);

    // generator v - P_u u - P_y y = (1?, xi, 0, 0)
    let rows = rq.generator.nrows();
    let lead = rows - nu - ny;
    let mut a_gen = DMatrix::zeros(rows, n);
    a_gen.view_mut((0, nu + ny), (rows, nv)).copy_from(&rq.generator);
    for i in 0..nu {
        a_gen[(lead + i, i)] = -1.0;
    }
    for i in 0..ny {
        a_gen[(lead + nu + i, nu + i)] = -1.0;
    }
    let mut b_gen = DVector::zeros(rows);
    let xi_t = if prob.affine {
        augment_xi(&prob.xi)
    } else {
        prob.xi.clone()
    };
    b_gen.rows_mut(0, lead).copy_from(&xi_t);

    let mut a_extra = DMatrix::zeros(rq.extra_a.nrows(), n);
    a_extra
        .view_mut((0, nu + ny), (rq.extra_a.nrows(), nv))
        .copy_from(&rq.extra_a);
    let (a_uy, b_uy) = uy_equalities(prob, extra, nv)?;

    let a = linalg::vstack(&[&a_gen, &a_extra, &a_uy]);
    let b = linalg::vcat(&[&b_gen, &rq.extra_b, &b_uy]);
    let (lower, upper) = bounds_for(prob, nv);
    let problem = BoxQp {
        h,
        g,
        a,
        b,
        lower,
        upper,
    };
    let sol = qp::solve(&problem, prob.tol, qp::DEFAULT_MAX_ITER)?;
    if let QpOutcome::Infeasible { residual } = sol.outcome {
        return Ok(infeasible_solution(prob, &sol.x, rq.n_a, rq.n_sigma, residual));
    }
    let x = &sol.x;
    let u = x.rows(0, nu).into_owned();
    let y = x.rows(nu, ny).into_owned();
    let v = x.rows(nu + ny, nv).into_owned();
    let h_at_a = rq.value(&v);
    Ok(DPCSolution {
        status: SolveStatus::Optimal,
        value: prob.objective.value(&u, &y) + h_at_a,
        a: v.rows(0, rq.n_a).into_owned(),
        sigma: v.rows(rq.n_a, rq.n_sigma).into_owned(),
        u,
        y,
        active_set: sol.active.clone(),
        nonunique: sol.nonunique,
        diagnostics: SolveDiagnostics {
            stationarity_residual: sol.stationarity_residual,
            feasibility_residual: sol.feasibility_residual,
            complementarity: sol.complementarity,
            min_multiplier: sol.min_multiplier,
            iterations: sol.iterations,
            infeasibility_residual: None,
            h_at_a,
            closed_form_h: None,
        },
    })
}

/// Solve over `(u, y)` with `h` replaced by its closed form, then recover
/// the generator by the direct minimization at the optimal trajectory.
pub fn solve_reduced(prob: &DPCProblem) -> Result<DPCSolution> {
    solve_reduced_with(prob, &[])
}

pub fn solve_reduced_with(prob: &DPCProblem, extra: &[LinearEquality]) -> Result<DPCSolution> {
    prob.validate()?;
    let (nu, ny) = (prob.nu(), prob.ny());
    let n = nu + ny;
    let cf = ClosedForm::new(&prob.regularizer, &prob.data, prob.affine, prob.tol)?;
    let p = &cf.predictor;
    let tw = cf.weights;

    // Shifted coordinates: t = (xi_t, u - u_bar, y - y_bar).
    let zero_u = DVector::zeros(nu);
    let zero_y = DVector::zeros(ny);
    let probe = cf.shifted(&TrajectoryTuple::new(prob.xi.clone(), zero_u, zero_y));
    let xi_t = probe.xi;
    let (u_bar, y_bar) = (-probe.u, -probe.y);

    // Residuals as affine functions of v = (u, y).
    // dy = (y - y_bar) - G_xi xi_t - G_u (u - u_bar)
    let g_xi = p.g_xi();
    let g_u = p.g_u();
    let mut a_y = DMatrix::zeros(ny, n);
    a_y.view_mut((0, 0), (ny, nu)).copy_from(&(-&g_u));
    a_y.view_mut((0, nu), (ny, ny)).fill_with_identity();
    let b_y = -&y_bar - &g_xi * &xi_t + &g_u * &u_bar;
    // du = (u - u_bar) - K xi_t
    let mut a_u = DMatrix::zeros(nu, n);
    a_u.view_mut((0, 0), (nu, nu)).fill_with_identity();
    let b_u = -&u_bar - &p.k * &xi_t;

    let scale = FEASIBILITY_TOL * (1.0 + prob.xi.norm());
    if p.wwt.singular {
        let r = (p.wwt.null_projector() * &xi_t).norm();
        if r > scale {
            return Ok(infeasible_solution(prob, &DVector::zeros(0), 0, 0, r));
        }
    }

    let (mut h, mut g) = objective_hessian(prob, 0);
    let mut constant = tw.xi * linalg::weighted_sqnorm(&xi_t, &p.wwt.weight)?;
    let mut add_term = |c: f64, a: &DMatrix<f64>, b: &DVector<f64>, w: &DMatrix<f64>| {
        if c == 0.0 {
            return;
        }
        let aw = a.transpose() * w;
        h += &aw * a * (2.0 * c);
        g += &aw * b * (2.0 * c);
        constant += c * (b.transpose() * w * b)[(0, 0)];
    };
    if !tw.hard_output {
        add_term(tw.y, &a_y, &b_y, &p.q_reg.weight);
    }
    add_term(tw.u, &a_u, &b_u, &p.r_reg.weight);
    let _ = constant;

    let mut eq_a: Vec<DMatrix<f64>> = Vec::new();
    let mut eq_b: Vec<DVector<f64>> = Vec::new();
    if tw.hard_output {
        eq_a.push(a_y.clone());
        eq_b.push(-&b_y);
    } else if p.q_reg.singular {
        let np = p.q_reg.null_projector();
        eq_a.push(&np * &a_y);
        eq_b.push(-(&np * &b_y));
    }
    if p.r_reg.singular {
        let np = p.r_reg.null_projector();
        eq_a.push(&np * &a_u);
        eq_b.push(-(&np * &b_u));
    }
    let (a_uy, b_uy) = uy_equalities(prob, extra, 0)?;
    eq_a.push(a_uy);
    eq_b.push(b_uy);
    let a = linalg::vstack(&eq_a.iter().collect::<Vec<_>>());
    let b = linalg::vcat(&eq_b.iter().collect::<Vec<_>>());
    let (lower, upper) = bounds_for(prob, 0);
    let problem = BoxQp {
        h,
        g,
        a,
        b,
        lower,
        upper,
    };
    let sol = qp::solve(&problem, prob.tol, qp::DEFAULT_MAX_ITER)?;
    if let QpOutcome::Infeasible { residual } = sol.outcome {
        return Ok(infeasible_solution(prob, &sol.x, 0, 0, residual));
    }
    let u = sol.x.rows(0, nu).into_owned();
    let y = sol.x.rows(nu, ny).into_owned();
    let w = TrajectoryTuple::new(prob.xi.clone(), u.clone(), y.clone());
    let h_star = cf.evaluate(&w)?.total;
    let bf = brute_force_cost_tol(&prob.regularizer, &prob.data, &w, prob.affine, prob.tol)?;
    Ok(DPCSolution {
        status: SolveStatus::Optimal,
        value: prob.objective.value(&u, &y) + h_star,
        u,
        y,
        a: bf.a,
        sigma: bf.sigma,
        active_set: sol.active.clone(),
        nonunique: sol.nonunique || bf.nonunique,
        diagnostics: SolveDiagnostics {
            stationarity_residual: sol.stationarity_residual,
            feasibility_residual: sol.feasibility_residual,
            complementarity: sol.complementarity,
            min_multiplier: sol.min_multiplier,
            iterations: sol.iterations,
            infeasibility_residual: None,
            h_at_a: bf.cost,
            closed_form_h: Some(h_star),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeasibilityRule {
    /// Boxes or bounds are inconsistent.
    EmptyConstraints,
    /// Explicit initial-state set decides.
    StateSet,
    /// Full row rank data: any trajectory is reachable.
    FullRowRank,
    /// Initial condition outside the span of `W`.
    ImageOfW,
    /// Decided by solving the constraint system.
    ConstraintSolve,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub rule: FeasibilityRule,
    pub residual: f64,
    pub detail: String,
}

/// Whether the problem admits any feasible point.
pub fn feasible(prob: &DPCProblem) -> Result<FeasibilityReport> {
    prob.validate()?;
    let report = |feasible, rule, residual, detail: &str| FeasibilityReport {
        feasible,
        rule,
        residual,
        detail: detail.to_string(),
    };
    let c = &prob.constraints;
    for (name, b) in [("input", &c.u_box), ("output", &c.y_box)] {
        if let Some(b) = b {
            if b.is_empty() {
                let gap = b
                    .lower
                    .iter()
                    .zip(b.upper.iter())
                    .map(|(l, u)| l - u)
                    .fold(0.0, f64::max);
                return Ok(report(
                    false,
                    FeasibilityRule::EmptyConstraints,
                    gap,
                    &format!("{name} box is empty"),
                ));
            }
        }
    }
    if let Some(x) = &c.xi_set {
        let v = x.violation(&prob.xi);
        if v > FEASIBILITY_TOL {
            return Ok(report(
                false,
                FeasibilityRule::StateSet,
                v,
                "initial condition violates the state set",
            ));
        }
    }

    let d = if prob.affine {
        prob.data.with_ones_row()?
    } else {
        prob.data.clone()
    };
    let dm = d.d();
    let full_rank = linalg::numerical_rank(&dm, prob.tol) == dm.nrows();
    let simple_terminal = c.terminal.as_ref().is_none_or(|t| {
        t.selector
            .row_iter()
            .all(|r| r.iter().filter(|&&v| v != 0.0).count() == 1 && r.iter().any(|&v| v == 1.0))
    });
    let gen_free = matches!(
        prob.regularizer,
        Regularizer::Quadratic { .. }
            | Regularizer::ProjectionPerp { .. }
            | Regularizer::ProjectionPar { .. }
            | Regularizer::MixedProjection { .. }
            | Regularizer::OffsetQuadratic { .. }
            | Regularizer::SlackQuadratic { .. }
            | Regularizer::GeneralWeighted { .. }
    ) || matches!(prob.regularizer, Regularizer::GammaDdpc { gamma3_zero: false, .. });
    if full_rank && simple_terminal && gen_free {
        // Any (xi, u, y) is generated by some a; only the boxes and the
        // pinned outputs remain.
        if let (Some(t), Some(yb)) = (&c.terminal, &c.y_box) {
            for (r, row) in t.selector.row_iter().enumerate() {
                let j = row.iter().position(|&v| v == 1.0).expect("unit selector row");
                let v = t.target[r];
                if v < yb.lower[j] - FEASIBILITY_TOL || v > yb.upper[j] + FEASIBILITY_TOL {
                    let gap = (yb.lower[j] - v).max(v - yb.upper[j]);
                    return Ok(report(
                        false,
                        FeasibilityRule::EmptyConstraints,
                        gap,
                        "terminal target outside the output box",
                    ));
                }
            }
        }
        let detail = if c.xi_set.is_some() {
            "initial condition in the state set and data matrix has full row rank"
        } else {
            "data matrix has full row rank and constraint sets are nonempty"
        };
        let rule = if c.xi_set.is_some() {
            FeasibilityRule::StateSet
        } else {
            FeasibilityRule::FullRowRank
        };
        return Ok(report(true, rule, 0.0, detail));
    }

    if !matches!(prob.regularizer, Regularizer::SlackQuadratic { .. }) {
        let xi_t = if prob.affine {
            augment_xi(&prob.xi)
        } else {
            prob.xi.clone()
        };
        let w = d.w();
        let r = (w * (linalg::pinv(w, prob.tol) * &xi_t) - &xi_t).norm();
        if r > FEASIBILITY_TOL * (1.0 + xi_t.norm()) {
            return Ok(report(
                false,
                FeasibilityRule::ImageOfW,
                r,
                "initial condition is not in the image of W",
            ));
        }
    }
    // Remaining cases: solve the constraint system with a zero objective.
    let mut probe = prob.clone();
    let nu = prob.nu();
    let ny = prob.ny();
    probe.objective = ControlObjective {
        q: DMatrix::zeros(ny, ny),
        y_ref: DVector::zeros(ny),
        r_u: DMatrix::zeros(nu, nu),
        u_ref: DVector::zeros(nu),
    };
    probe.regularizer = match &prob.regularizer {
        Regularizer::SlackQuadratic { .. } => prob.regularizer.clone(),
        Regularizer::GammaDdpc { gamma3_zero: true, .. } => Regularizer::GammaDdpc {
            l2: 1.0,
            l3: 0.0,
            gamma3_zero: true,
        },
        _ => Regularizer::Quadratic { lambda: 1.0 },
    };
    let sol = solve_full(&probe)?;
    Ok(match sol.status {
        SolveStatus::Optimal => report(
            true,
            FeasibilityRule::ConstraintSolve,
            sol.diagnostics.feasibility_residual,
            "a feasible point was found",
        ),
        SolveStatus::Infeasible => report(
            false,
            FeasibilityRule::ConstraintSolve,
            sol.diagnostics.infeasibility_residual.unwrap_or(f64::NAN),
            "constraints admit no trajectory generated by the data",
        ),
    })
}

/// One receding-horizon step.
#[derive(Debug, Clone)]
pub struct ClosedLoopStep {
    pub applied_input: DVector<f64>,
    pub measured_output: DVector<f64>,
    pub next_state: DVector<f64>,
    pub next_xi: DVector<f64>,
    pub solution: DPCSolution,
}

/// Solve, apply the first input block to `plant` at `plant_state`, and
/// shift the initial-condition window.
pub fn closed_loop_step(
    prob: &DPCProblem,
    plant: &SystemModel,
    plant_state: &DVector<f64>,
    rng_seed: u64,
) -> Result<ClosedLoopStep> {
    let layout = *prob.data.layout();
    if layout.n_f == 0 || prob.data.u_dim() == 0 {
        return Err(DpcError::EmptyInput("prediction horizon has no inputs".into()));
    }
    check_dim("plant input dimension", layout.m, plant.input_dim())?;
    check_dim("plant state", plant.state_dim(), plant_state.len())?;
    let solution = solve_full(prob)?;
    if !solution.is_optimal() {
        return Err(DpcError::Infeasible {
            what: "control problem has no feasible point".into(),
            residual: solution.diagnostics.infeasibility_residual.unwrap_or(f64::NAN),
        });
    }
    let u0 = solution.u.rows(0, layout.m).into_owned();
    let mut noise = NoiseSource::new(rng_seed);
    let y_now = plant.output(plant_state, &u0);
    let next_state = plant.step_state(plant_state, &u0);
    let (measured_output, next_xi) = match layout.mode {
        DataMode::StateSpace => {
            check_dim("plant state vs data", layout.p, plant.state_dim())?;
            let meas = noise.perturb(&next_state, plant.noise_std);
            (meas.clone(), meas)
        }
        DataMode::Io => {
            check_dim("plant output vs data", layout.p, plant.output_dim())?;
            let meas = noise.perturb(&y_now, plant.noise_std);
            let (m, p, np) = (layout.m, layout.p, layout.n_p);
            let mut xi = prob.xi.clone();
            if np > 0 {
                let up = prob.xi.rows(0, m * np).into_owned();
                let yp = prob.xi.rows(m * np, p * np).into_owned();
                let mut nup = DVector::zeros(m * np);
                let mut nyp = DVector::zeros(p * np);
                nup.rows_mut(0, m * (np - 1)).copy_from(&up.rows(m, m * (np - 1)));
                nup.rows_mut(m * (np - 1), m).copy_from(&u0);
                nyp.rows_mut(0, p * (np - 1)).copy_from(&yp.rows(p, p * (np - 1)));
                nyp.rows_mut(p * (np - 1), p).copy_from(&meas);
                xi = linalg::vcat(&[&nup, &nyp]);
            }
            (meas, xi)
        }
    };
    Ok(ClosedLoopStep {
        applied_input: u0,
        measured_output,
        next_state,
        next_xi,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::{random_data, InstanceSpec};
    use crate::data::{build_hankel, sample_state_columns, Layout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn objective(d: &DataMatrix, rng: &mut ChaCha8Rng) -> ControlObjective {
        let ny = d.y_dim();
        let nu = d.u_dim();
        ControlObjective::new(
            DMatrix::identity(ny, ny),
            DVector::from_fn(ny, |_, _| rng.random_range(-1.0..1.0)),
            DMatrix::identity(nu, nu) * 0.1,
            DVector::zeros(nu),
        )
        .unwrap()
    }

    fn problem(seed: u64, reg: Regularizer, constraints: ConstraintSet) -> DPCProblem {
        let d = random_data(&InstanceSpec::default(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        let obj = objective(&d, &mut rng);
        let xi = DVector::from_fn(d.xi_dim(), |_, _| rng.random_range(-1.0..1.0));
        DPCProblem::new(d, obj, constraints, reg, xi).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + b.abs())
    }

    #[test]
    fn full_and_reduced_agree_quadratic() {
        for seed in 0..8 {
            let prob = problem(seed, Regularizer::Quadratic { lambda: 3.0 }, ConstraintSet::default());
            let f = solve_full(&prob).unwrap();
            let r = solve_reduced(&prob).unwrap();
            assert!(rel(f.value, r.value) < 1e-8, "{} vs {}", f.value, r.value);
            assert!((&f.u - &r.u).amax() < 1e-6);
            assert!(rel(f.value, prob.objective.value(&f.u, &f.y) + f.diagnostics.h_at_a) < 1e-12);
        }
    }

    #[test]
    fn full_and_reduced_agree_with_boxes() {
        for seed in 0..6 {
            let d = random_data(&InstanceSpec::default(), seed).unwrap();
            let c = ConstraintSet {
                u_box: Some(Bounds::symmetric(d.u_dim(), 0.05)),
                y_box: Some(Bounds::symmetric(d.y_dim(), 0.3)),
                ..Default::default()
            };
            let prob = problem(seed, Regularizer::MixedProjection { l2: 0.5, l3: 50.0 }, c);
            let f = solve_full(&prob).unwrap();
            let r = solve_reduced(&prob).unwrap();
            assert!(f.is_optimal() && r.is_optimal());
            assert!(rel(f.value, r.value) < 1e-8, "{} vs {}", f.value, r.value);
            assert!((&f.u - &r.u).amax() < 1e-6);
            assert!(f.diagnostics.complementarity < 1e-8);
            assert!(f.diagnostics.min_multiplier > -1e-8);
            assert!(f.u.amax() <= 0.05 + 1e-12);
        }
    }

    #[test]
    fn gamma_hard_output_equals_explicit_predictor_constraint() {
        let prob = problem(
            3,
            Regularizer::GammaDdpc {
                l2: 2.0,
                l3: 0.0,
                gamma3_zero: true,
            },
            ConstraintSet::default(),
        );
        let g = solve_full(&prob).unwrap();
        let r = solve_reduced(&prob).unwrap();
        assert!(rel(g.value, r.value) < 1e-8);
        // Explicit: y = G z as an equality with the u-term of the gamma regularizer.
        let p = crate::predictors::fit_ls(&prob.data, DEFAULT_TOL).unwrap();
        let eq = LinearEquality {
            a_u: -p.g_u(),
            a_y: DMatrix::identity(prob.data.y_dim(), prob.data.y_dim()),
            b: p.g_xi() * &prob.xi,
        };
        let mut alt = prob.clone();
        alt.regularizer = Regularizer::GammaDdpc {
            l2: 2.0,
            l3: 0.0,
            gamma3_zero: false,
        };
        let e = solve_full_with(&alt, &[eq]).unwrap();
        assert!(rel(g.value, e.value) < 1e-8);
        assert!((&g.y - &e.y).amax() < 1e-6);
    }

    #[test]
    fn zero_regularization_hits_reference() {
        let prob = problem(5, Regularizer::Quadratic { lambda: 0.0 }, ConstraintSet::default());
        let s = solve_full(&prob).unwrap();
        assert!((&s.y - &prob.objective.y_ref).amax() < 1e-9);
        assert!((&s.u - &prob.objective.u_ref).amax() < 1e-9);
        assert!(s.nonunique);
        assert!(s.value.abs() < 1e-12);
    }

    #[test]
    fn large_lambda_pushes_input_to_controller() {
        let mut last = f64::INFINITY;
        for lambda in [1e2, 1e4, 1e6, 1e8, 1e10, 1e12] {
            let prob = problem(2, Regularizer::Quadratic { lambda }, ConstraintSet::default());
            let p = crate::predictors::fit_ls(&prob.data, DEFAULT_TOL).unwrap();
            let s = solve_reduced(&prob).unwrap();
            let gap = (&s.u - p.predict_u(&prob.xi).unwrap()).norm();
            assert!(gap <= last * 1.0001 + 1e-12);
            last = gap;
        }
        assert!(last < 1e-6, "{last}");
    }

    #[test]
    fn general_weighted_has_no_reduced_form() {
        let d = random_data(&InstanceSpec::default(), 0).unwrap();
        let reg = Regularizer::GeneralWeighted {
            s: DMatrix::identity(d.ell(), d.ell()),
        };
        let prob = problem(0, reg, ConstraintSet::default());
        assert!(matches!(solve_reduced(&prob), Err(DpcError::ClosedFormUnavailable(_))));
        assert!(solve_full(&prob).unwrap().is_optimal());
    }

    #[test]
    fn terminal_constraint_pins_outputs() {
        let s = sample_state_columns(&SystemModel::scalar_example().with_noise(0.1).unwrap(), 40, 3, 1).unwrap();
        let d = s.measured;
        let y_ref = DVector::from_vec(vec![0.5, 0.5, 0.5]);
        let obj = ControlObjective::new(
            DMatrix::identity(3, 3),
            y_ref.clone(),
            DMatrix::zeros(3, 3),
            DVector::zeros(3),
        )
        .unwrap();
        let c = ConstraintSet {
            terminal: Some(TerminalConstraint::last_steps(1, 1, &y_ref).unwrap()),
            ..Default::default()
        };
        let prob = DPCProblem::new(
            d,
            obj,
            c,
            Regularizer::Quadratic { lambda: 1.0 },
            DVector::from_element(1, 0.2),
        )
        .unwrap();
        let f = solve_full(&prob).unwrap();
        assert!((f.y[2] - 0.5).abs() < 1e-10);
        let r = solve_reduced(&prob).unwrap();
        assert!(rel(f.value, r.value) < 1e-8);
    }

    #[test]
    fn feasibility_rules() {
        let d = random_data(&InstanceSpec::default(), 1).unwrap();
        let c = ConstraintSet {
            u_box: Some(Bounds::symmetric(d.u_dim(), 1.0)),
            y_box: Some(Bounds::symmetric(d.y_dim(), 1.0)),
            ..Default::default()
        };
        let prob = problem(1, Regularizer::Quadratic { lambda: 1.0 }, c.clone());
        let f = feasible(&prob).unwrap();
        assert!(f.feasible && f.rule == FeasibilityRule::FullRowRank);

        let mut boxed = prob.clone();
        boxed.constraints.xi_set = Some(Polyhedron::inf_ball(d.xi_dim(), 1.0));
        boxed.xi = DVector::from_element(d.xi_dim(), 2.0);
        let f = feasible(&boxed).unwrap();
        assert!(!f.feasible && f.rule == FeasibilityRule::StateSet);

        let mut empty = prob.clone();
        empty.constraints.u_box =
            Some(Bounds::new(DVector::from_element(d.u_dim(), 1.0), DVector::zeros(d.u_dim())).unwrap());
        assert!(!feasible(&empty).unwrap().feasible);
        assert!(!solve_full(&empty).unwrap().is_optimal());
    }

    #[test]
    fn xi_outside_image_of_w_is_infeasible() {
        // Two columns, three-dimensional initial condition.
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let u = DMatrix::from_row_slice(1, 2, &[0.5, -0.5]);
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let d = DataMatrix::new(w, u, y, Layout::io(1, 2, 1, 1)).unwrap();
        let obj = ControlObjective::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(1, 1),
            DVector::zeros(1),
        )
        .unwrap();
        let prob = DPCProblem::new(
            d,
            obj,
            ConstraintSet::default(),
            Regularizer::Quadratic { lambda: 1.0 },
            DVector::from_vec(vec![0.0, 0.0, 1.0]),
        )
        .unwrap();
        let f = feasible(&prob).unwrap();
        assert!(!f.feasible);
        assert_eq!(f.rule, FeasibilityRule::ImageOfW);
        assert!((f.residual - 1.0).abs() < 1e-12);
        let s = solve_full(&prob).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(s.diagnostics.infeasibility_residual.unwrap() > 0.5);
        let inside = prob.with_xi(DVector::from_vec(vec![0.3, -0.2, 0.0]));
        assert!(feasible(&inside).unwrap().feasible);
    }

    #[test]
    fn closed_loop_step_tracks_reference() {
        let model = SystemModel::scalar_example();
        let s = sample_state_columns(&model, 40, 3, 9).unwrap();
        let obj = ControlObjective::new(
            DMatrix::identity(3, 3),
            DVector::zeros(3),
            DMatrix::identity(3, 3) * 0.01,
            DVector::zeros(3),
        )
        .unwrap();
        let x0 = DVector::from_element(1, 0.8);
        let prob = DPCProblem::new(
            s.exact,
            obj,
            ConstraintSet::default(),
            Regularizer::MixedProjection { l2: 1e-3, l3: 1e6 },
            x0.clone(),
        )
        .unwrap();
        let step = closed_loop_step(&prob, &model, &x0, 0).unwrap();
        let uncontrolled = model.step_state(&x0, &DVector::zeros(1));
        assert!(step.next_state[0].abs() < uncontrolled[0].abs());
        assert_eq!(step.next_xi, step.next_state);
    }

    #[test]
    fn closed_loop_io_window_shift() {
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        let b = DMatrix::from_row_slice(1, 1, &[1.0]);
        let c = DMatrix::from_row_slice(1, 1, &[1.0]);
        let model = SystemModel::lti(a, b, c, DMatrix::zeros(1, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u: Vec<_> = (0..40)
            .map(|_| DVector::from_element(1, rng.random_range(-1.0..1.0)))
            .collect();
        let noisy = model.clone().with_noise(0.05).unwrap();
        let sim = crate::data::simulate(&noisy, &DVector::zeros(1), &u, 0).unwrap();
        let d = build_hankel(&u, &sim.measured_outputs, 2, 2).unwrap();
        let obj = ControlObjective::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
        )
        .unwrap();
        let xi = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let prob = DPCProblem::new(
            d,
            obj,
            ConstraintSet::default(),
            Regularizer::Quadratic { lambda: 1.0 },
            xi,
        )
        .unwrap();
        let step = closed_loop_step(&prob, &model, &DVector::from_element(1, 0.4), 0).unwrap();
        assert_eq!(step.next_xi[0], 0.2);
        assert_eq!(step.next_xi[1], step.applied_input[0]);
        assert_eq!(step.next_xi[2], 0.4);
        assert_eq!(step.next_xi[3], step.measured_output[0]);
    }

    #[test]
    fn closed_loop_rejects_empty_horizon() {
        let w = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let d = DataMatrix::new(
            w,
            DMatrix::zeros(0, 2),
            DMatrix::zeros(0, 2),
            Layout::state_space(1, 1, 0),
        )
        .unwrap();
        let obj = ControlObjective::new(
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
        )
        .unwrap();
        let prob = DPCProblem::new(
            d,
            obj,
            ConstraintSet::default(),
            Regularizer::Quadratic { lambda: 1.0 },
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let model = SystemModel::scalar_example();
        assert!(matches!(
            closed_loop_step(&prob, &model, &DVector::from_element(1, 1.0), 0),
            Err(DpcError::EmptyInput(_))
        ));
    }

    #[test]
    fn objective_rejects_indefinite_weight() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(ControlObjective::new(q, DVector::zeros(2), DMatrix::zeros(0, 0), DVector::zeros(0)).is_err());
    }
}
