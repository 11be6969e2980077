//! Implicit predictor maps `y_hat(xi, u) = M_xi xi + M_u u + c`: the output
//! the regularized problem would pick for a fixed `(xi, u)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, DpcError, Result};
use crate::io::{matrix_json, vector_json};
use crate::linalg::{self, DEFAULT_TOL};
use crate::ocp::{self, DPCProblem, LinearEquality, SolveStatus};
use crate::predictors::{AffineLeastSquaresPredictor, LeastSquaresPredictor, OffsetPredictor, ResidualWeight};
use crate::regularizers::ClosedForm;

/// Weight used on pinned outputs when a hard terminal constraint is
/// approximated by a penalty.
pub const SOFT_TERMINAL_WEIGHT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MapVariant {
    Unconstrained,
    Affine,
    Offset,
    Terminal,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImplicitPredictorMap {
    pub variant: MapVariant,
    #[serde(with = "matrix_json")]
    pub m_xi: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub m_u: DMatrix<f64>,
    #[serde(with = "vector_json")]
    pub c: DVector<f64>,
    /// Weight on the output residual term; infinite for a hard `y = y_LS`.
    pub lambda: f64,
    #[serde(with = "matrix_json")]
    pub q: DMatrix<f64>,
    #[serde(with = "vector_json")]
    pub y_ref: DVector<f64>,
    /// Output block size per step.
    pub block: usize,
    pub n_terminal: Option<usize>,
    /// Built from the penalty approximation of the terminal constraint.
    pub soft_limit: bool,
    pub warnings: Vec<String>,
}

impl ImplicitPredictorMap {
    pub fn xi_dim(&self) -> usize {
        self.m_xi.ncols()
    }
    pub fn u_dim(&self) -> usize {
        self.m_u.ncols()
    }
    pub fn y_dim(&self) -> usize {
        self.c.len()
    }

    pub fn predict(&self, xi: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("xi length", self.xi_dim(), xi.len())?;
        check_dim("u length", self.u_dim(), u.len())?;
        Ok(&self.m_xi * xi + &self.m_u * u + &self.c)
    }

    /// Largest entrywise difference of the coefficients, relative to the
    /// largest coefficient magnitude.
    pub fn max_relative_difference(&self, other: &ImplicitPredictorMap) -> f64 {
        if self.m_xi.shape() != other.m_xi.shape()
            || self.m_u.shape() != other.m_u.shape()
            || self.c.len() != other.c.len()
        {
            return f64::INFINITY;
        }
        let scale = 1.0 + self.m_xi.amax().max(self.m_u.amax()).max(self.c.amax());
        let d = (&self.m_xi - &other.m_xi)
            .amax()
            .max((&self.m_u - &other.m_u).amax())
            .max((&self.c - &other.c).amax());
        d / scale
    }

    /// Rows `(xi.., u.., y_hat..)` for every pair of the two grids.
    pub fn surface(&self, xi_grid: &[DVector<f64>], u_grid: &[DVector<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(xi_grid.len() * u_grid.len());
        for xi in xi_grid {
            for u in u_grid {
                let y = self.predict(xi, u)?;
                rows.push(xi.iter().chain(u.iter()).chain(y.iter()).copied().collect());
            }
        }
        Ok(rows)
    }

    pub fn surface_header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.xi_dim()).map(|i| format!("xi{i}")).collect();
        h.extend((0..self.u_dim()).map(|i| format!("u{i}")));
        h.extend((0..self.y_dim()).map(|i| format!("y_hat{i}")));
        h
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Cartesian grid of `n` evenly spaced values per coordinate on `[lo, hi]`,
/// first coordinate varying slowest. Coordinates in `fixed` are held at
/// the given value instead.
pub fn product_grid(dim: usize, lo: f64, hi: f64, n: usize, fixed: &[(usize, f64)]) -> Result<Vec<DVector<f64>>> {
    if n == 0 || !(lo <= hi) {
        return Err(DpcError::InvalidParameter(format!(
            "grid needs n > 0 and lo <= hi, got n={n}, [{lo}, {hi}]"
        )));
    }
    let axis: Vec<f64> = if n == 1 {
        vec![lo]
    } else {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    let mut points = vec![DVector::zeros(dim)];
    for k in 0..dim {
        let values: Vec<f64> = match fixed.iter().find(|(i, _)| *i == k) {
            Some(&(_, v)) => vec![v],
            None => axis.clone(),
        };
        if points.len().saturating_mul(values.len()) > 1_000_000 {
            return Err(DpcError::InvalidParameter("grid exceeds one million points".into()));
        }
        points = points
            .iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q[k] = v;
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// Block weights of the terminal-constrained map.
#[derive(Debug, Clone, Serialize)]
pub struct TerminalWeights {
    #[serde(with = "matrix_json")]
    pub lambda_ref: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub lambda_reg: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub q1: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub q2: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub q_reg11: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub q_reg12: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub q_reg21: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub q_reg22: DMatrix<f64>,
    pub n_terminal: usize,
    pub soft_limit: bool,
}

/// `y_0(xi, u) = B_xi xi + B_u u + b0`, the prediction being pulled toward.
struct Base {
    b_xi: DMatrix<f64>,
    b_u: DMatrix<f64>,
    b0: DVector<f64>,
    q_reg: ResidualWeight,
}

impl Base {
    fn linear(p: &LeastSquaresPredictor) -> Self {
        Base {
            b_xi: p.g_xi(),
            b_u: p.g_u(),
            b0: DVector::zeros(p.y_dim()),
            q_reg: p.q_reg.clone(),
        }
    }

    fn affine(p: &AffineLeastSquaresPredictor) -> Self {
        let nx = p.xi_dim();
        let nu = p.g_lin.ncols() - nx;
        Base {
            b_xi: p.g_lin.columns(0, nx).into_owned(),
            b_u: p.g_lin.columns(nx, nu).into_owned(),
            b0: p.g_off.clone(),
            q_reg: p.inner.q_reg.clone(),
        }
    }

    fn offset(p: &OffsetPredictor) -> Self {
        let mut b = Base::linear(&p.base);
        b.b0 = p.c_y.clone();
        b
    }

    /// From the coordinates a closed form evaluates in.
    fn closed_form(cf: &ClosedForm, xi_dim: usize) -> Self {
        let p = &cf.predictor;
        let g_xi = p.g_xi();
        let lead = g_xi.ncols() - xi_dim;
        let zero = cf.shifted(&crate::data::TrajectoryTuple::zeros(xi_dim, p.u_dim(), p.y_dim()));
        // zero.u = -u_bar, zero.y = -y_bar
        let b0 = -&zero.y + &g_xi * &zero.xi + p.g_u() * &zero.u;
        Base {
            b_xi: g_xi.columns(lead, xi_dim).into_owned(),
            b_u: p.g_u(),
            b0,
            q_reg: p.q_reg.clone(),
        }
    }

    fn compose(&self, a: &DMatrix<f64>, c: DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        (a * &self.b_xi, a * &self.b_u, a * &self.b0 + c)
    }
}

fn check_objective(q: &DMatrix<f64>, y_ref: &DVector<f64>, ny: usize, lambda: f64) -> Result<()> {
    check_dim("Q rows", ny, q.nrows())?;
    check_dim("Q columns", ny, q.ncols())?;
    check_dim("y_ref length", ny, y_ref.len())?;
    if lambda.is_nan() || lambda < 0.0 {
        return Err(DpcError::InvalidParameter(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

/// Weights `(A, c)` of `argmin_y |y - y_ref|^2_Q + lambda |y - y_0|^2_{Q_reg}
/// = A y_0 + c`. A singular `Q_reg` confines `y - y_0` to the range of its
/// Gram matrix.
fn weighted_sum(
    q: &DMatrix<f64>,
    y_ref: &DVector<f64>,
    lambda: f64,
    q_reg: &ResidualWeight,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let ny = y_ref.len();
    let eye = DMatrix::<f64>::identity(ny, ny);
    if lambda.is_infinite() {
        return Ok((eye, DVector::zeros(ny)));
    }
    if lambda == 0.0 {
        // Q is required positive definite here, so the minimizer is y_ref itself.
        linalg::checked_inverse(q, "output weight Q")?;
        return Ok((DMatrix::zeros(ny, ny), y_ref.clone()));
    }
    if !q_reg.singular {
        let combined = q_reg.weight.clone() * lambda + q;
        let inv = linalg::checked_inverse(&combined, "combined output weight lambda Q_reg + Q")?;
        return Ok((&inv * &q_reg.weight * lambda, &inv * q * y_ref));
    }
    let basis = linalg::null_space(&q_reg.null_projector(), DEFAULT_TOL);
    let bt = basis.transpose();
    let inner = &bt * q * &basis + &bt * &q_reg.weight * &basis * lambda;
    let inv = linalg::checked_inverse(&inner, "restricted combined output weight")?;
    let pull = &basis * inv * &bt * q;
    Ok((eye - &pull, pull * y_ref))
}

fn build(
    base: &Base,
    variant: MapVariant,
    q: &DMatrix<f64>,
    y_ref: &DVector<f64>,
    lambda: f64,
    block: usize,
) -> Result<ImplicitPredictorMap> {
    check_objective(q, y_ref, base.b_xi.nrows(), lambda)?;
    let (a, c) = weighted_sum(q, y_ref, lambda, &base.q_reg)?;
    let (m_xi, m_u, c) = base.compose(&a, c);
    Ok(ImplicitPredictorMap {
        variant,
        m_xi,
        m_u,
        c,
        lambda,
        q: q.clone(),
        y_ref: y_ref.clone(),
        block,
        n_terminal: None,
        soft_limit: false,
        warnings: Vec::new(),
    })
}

fn block_size(p: &LeastSquaresPredictor) -> usize {
    p.data().layout().p
}

pub fn implicit_unconstrained(
    p: &LeastSquaresPredictor,
    q: &DMatrix<f64>,
    y_ref: &DVector<f64>,
    lambda: f64,
) -> Result<ImplicitPredictorMap> {
    build(
        &Base::linear(p),
        MapVariant::Unconstrained,
        q,
        y_ref,
        lambda,
        block_size(p),
    )
}

pub fn implicit_affine(
    p: &AffineLeastSquaresPredictor,
    q: &DMatrix<f64>,
    y_ref: &DVector<f64>,
    lambda: f64,
) -> Result<ImplicitPredictorMap> {
    build(
        &Base::affine(p),
        MapVariant::Affine,
        q,
        y_ref,
        lambda,
        block_size(&p.inner),
    )
}

pub fn implicit_offset(
    p: &OffsetPredictor,
    q: &DMatrix<f64>,
    y_ref: &DVector<f64>,
    lambda: f64,
) -> Result<ImplicitPredictorMap> {
    build(
        &Base::offset(p),
        MapVariant::Offset,
        q,
        y_ref,
        lambda,
        block_size(&p.base),
    )
}

/// `Q` is block diagonal with one repeated positive definite block per step.
fn repeated_block_diagonal(q: &DMatrix<f64>, block: usize) -> bool {
    let n = q.nrows();
    if block == 0 || !n.is_multiple_of(block) {
        return false;
    }
    let first = q.view((0, 0), (block, block)).into_owned();
    let scale = 1e-12 * (1.0 + q.amax());
    for i in 0..n {
        for j in 0..n {
            let (bi, bj) = (i / block, j / block);
            let expected = if bi == bj { first[(i % block, j % block)] } else { 0.0 };
            if (q[(i, j)] - expected).abs() > scale {
                return false;
            }
        }
    }
    linalg::is_symmetric(&first, 1e-12) && first.clone().cholesky().is_some()
}

fn terminal_core(
    base: &Base,
    q: &DMatrix<f64>,
    y_ref: &DVector<f64>,
    lambda: f64,
    block: usize,
    n_terminal: usize,
) -> Result<(ImplicitPredictorMap, TerminalWeights)> {
    let ny = base.b_xi.nrows();
    check_objective(q, y_ref, ny, lambda)?;
    if !(lambda > 0.0) || lambda.is_infinite() {
        return Err(DpcError::InvalidParameter(format!(
            "the terminal map needs a finite positive lambda, got {lambda}"
        )));
    }
    let k = n_terminal * block;
    if n_terminal == 0 || k > ny {
        return Err(DpcError::InvalidParameter(format!(
            "cannot pin {n_terminal} steps of size {block} in an output sequence of length {ny}"
        )));
    }
    let f = ny - k;
    let sub = |m: &DMatrix<f64>, r: usize, c: usize, nr: usize, nc: usize| m.view((r, c), (nr, nc)).into_owned();
    let qr = &base.q_reg.weight;
    let q1 = sub(q, 0, 0, f, f);
    let q2 = sub(q, f, f, k, k);
    let (q11, q12, q21, q22) = (
        sub(qr, 0, 0, f, f),
        sub(qr, 0, f, f, k),
        sub(qr, f, 0, k, f),
        sub(qr, f, f, k, k),
    );

    let exact = repeated_block_diagonal(q, block) && !base.q_reg.singular;
    let (lambda_ref, lambda_reg, warnings) = if exact {
        let inv = linalg::checked_inverse(&(&q1 + &q11 * lambda), "upper-left combined block Q1 + lambda Q_reg11")?;
        let mut l_ref = DMatrix::zeros(ny, ny);
        let mut l_reg = DMatrix::zeros(ny, ny);
        l_ref.view_mut((0, 0), (f, f)).copy_from(&(&inv * &q1));
        l_ref.view_mut((0, f), (f, k)).copy_from(&(&inv * &q12 * -lambda));
        l_ref.view_mut((f, f), (k, k)).fill_with_identity();
        l_reg.view_mut((0, 0), (f, f)).copy_from(&(&inv * &q11 * lambda));
        l_reg.view_mut((0, f), (f, k)).copy_from(&(&inv * &q12 * lambda));
        (l_ref, l_reg, Vec::new())
    } else {
        let q_soft = soft_terminal_weight(q, block, n_terminal, SOFT_TERMINAL_WEIGHT)?;
        let (a, _) = weighted_sum(&q_soft, &DVector::zeros(ny), lambda, &base.q_reg)?;
        (
            DMatrix::identity(ny, ny) - &a,
            a,
            vec![format!(
                "weight matrix is not block diagonal with a repeated positive definite block or Q_reg is singular; \
                 terminal map uses the penalty approximation with weight {SOFT_TERMINAL_WEIGHT:e}"
            )],
        )
    };
    let (m_xi, m_u, c) = base.compose(&lambda_reg, &lambda_ref * y_ref);
    let soft = !warnings.is_empty();
    let map = ImplicitPredictorMap {
        variant: MapVariant::Terminal,
        m_xi,
        m_u,
        c,
        lambda,
        q: q.clone(),
        y_ref: y_ref.clone(),
        block,
        n_terminal: Some(n_terminal),
        soft_limit: soft,
        warnings,
    };
    let weights = TerminalWeights {
        lambda_ref,
        lambda_reg,
        q1,
        q2,
        q_reg11: q11,
        q_reg12: q12,
        q_reg21: q21,
        q_reg22: q22,
        n_terminal,
        soft_limit: soft,
    };
    Ok((map, weights))
}

/// Map for the problem with the last `n_terminal` output steps pinned to `y_ref`.
pub fn implicit_terminal(
    p: &LeastSquaresPredictor,
    q: &DMatrix<f64>,
    y_ref: &DVector<f64>,
    lambda: f64,
    n_terminal: usize,
) -> Result<(ImplicitPredictorMap, TerminalWeights)> {
    terminal_core(&Base::linear(p), q, y_ref, lambda, block_size(p), n_terminal)
}

/// `diag(Q_1, q I)`: the free block of `Q` with the pinned outputs penalized by `q`.
pub fn soft_terminal_weight(q: &DMatrix<f64>, block: usize, n_terminal: usize, weight: f64) -> Result<DMatrix<f64>> {
    let ny = q.nrows();
    let k = n_terminal * block;
    if k > ny {
        return Err(DpcError::InvalidParameter(
            "terminal block larger than the horizon".into(),
        ));
    }
    let f = ny - k;
    let mut out = DMatrix::zeros(ny, ny);
    out.view_mut((0, 0), (f, f)).copy_from(&q.view((0, 0), (f, f)));
    out.view_mut((f, f), (k, k)).fill_with_identity();
    out.view_mut((f, f), (k, k)).scale_mut(weight);
    Ok(out)
}

/// Map matching the regularizer, affine flag and terminal constraint of `prob`.
pub fn implicit_for_problem(prob: &DPCProblem) -> Result<ImplicitPredictorMap> {
    let cf = ClosedForm::new(&prob.regularizer, &prob.data, prob.affine, prob.tol)?;
    let tw = cf.weights;
    let lambda = if tw.hard_output { f64::INFINITY } else { tw.y };
    let base = Base::closed_form(&cf, prob.data.xi_dim());
    let block = prob.data.layout().p;
    let q = &prob.objective.q;
    let y_ref = &prob.objective.y_ref;
    if let Some(t) = &prob.constraints.terminal {
        let n = terminal_steps(prob, t)?;
        if lambda.is_infinite() {
            // Output fixed to the prediction; the terminal rows constrain u only.
            let mut m = build(&base, MapVariant::Terminal, q, y_ref, lambda, block)?;
            m.n_terminal = Some(n);
            return Ok(m);
        }
        return Ok(terminal_core(&base, q, y_ref, lambda, block, n)?.0);
    }
    let variant = if cf.augmented {
        MapVariant::Affine
    } else if cf.w_bar.is_some() {
        MapVariant::Offset
    } else {
        MapVariant::Unconstrained
    };
    build(&base, variant, q, y_ref, lambda, block)
}

fn terminal_steps(prob: &DPCProblem, t: &ocp::TerminalConstraint) -> Result<usize> {
    let n = t.steps.ok_or_else(|| {
        DpcError::AssumptionViolated("implicit maps support terminal constraints on trailing output steps only".into())
    })?;
    let expected = ocp::TerminalConstraint::last_steps(n, prob.data.layout().p, &prob.objective.y_ref)?;
    if expected.selector != t.selector || (&expected.target - &t.target).amax() > 1e-12 {
        return Err(DpcError::AssumptionViolated(
            "terminal constraint must pin the trailing outputs to the reference".into(),
        ));
    }
    Ok(n)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub inner_checks: usize,
    pub outer_checks: usize,
    pub failures: Vec<String>,
    pub max_inner_error: f64,
    pub max_value_error: f64,
    pub max_minimizer_error: f64,
    /// Some solve had a non-unique minimizer; minimizer comparisons there
    /// use the minimum-norm representative.
    pub nonunique: bool,
}

pub const INNER_TOL: f64 = 1e-5;
pub const VALUE_TOL: f64 = 1e-6;
pub const MINIMIZER_TOL: f64 = 1e-5;

/// Check that `map` is an implicit predictor for `prob`:
/// fixing `u` yields `y = map(xi, u)`, and adding `y = map(xi, u)` as a
/// constraint changes neither the optimal value nor the minimizer.
pub fn verify_implicit_map(
    map: &ImplicitPredictorMap,
    prob: &DPCProblem,
    xi_samples: &[DVector<f64>],
    u_grid: &[DVector<f64>],
) -> Result<VerificationReport> {
    if prob.constraints.y_box.is_some() {
        return Err(DpcError::AssumptionViolated(
            "output bounds are present; equality-based implicit maps do not apply".into(),
        ));
    }
    match (&prob.constraints.terminal, map.variant) {
        (Some(t), MapVariant::Terminal) => {
            if Some(terminal_steps(prob, t)?) != map.n_terminal {
                return Err(DpcError::AssumptionViolated(
                    "terminal horizon differs from the map's".into(),
                ));
            }
        }
        (Some(_), _) => {
            return Err(DpcError::AssumptionViolated(
                "problem has a terminal constraint but the map is not a terminal map".into(),
            ))
        }
        (None, MapVariant::Terminal) => {
            return Err(DpcError::AssumptionViolated(
                "terminal map needs a terminal-constrained problem".into(),
            ))
        }
        _ => {}
    }
    check_dim("map input dimension", prob.data.u_dim(), map.u_dim())?;
    check_dim("map initial-condition dimension", prob.data.xi_dim(), map.xi_dim())?;
    if (&map.q - &prob.objective.q).amax() > 1e-12 || (&map.y_ref - &prob.objective.y_ref).amax() > 1e-12 {
        return Err(DpcError::AssumptionViolated(
            "map was built for a different output objective".into(),
        ));
    }

    let ny = map.y_dim();
    let nu = map.u_dim();
    let mut rep = VerificationReport {
        passed: true,
        inner_checks: 0,
        outer_checks: 0,
        failures: Vec::new(),
        max_inner_error: 0.0,
        max_value_error: 0.0,
        max_minimizer_error: 0.0,
        nonunique: false,
    };
    for (si, xi) in xi_samples.iter().enumerate() {
        let p = prob.with_xi(xi.clone());
        for (ui, u) in u_grid.iter().enumerate() {
            if let Some(b) = &p.constraints.u_box {
                if !b.contains(u, 0.0) {
                    continue;
                }
            }
            let fix = LinearEquality {
                a_u: DMatrix::identity(nu, nu),
                a_y: DMatrix::zeros(nu, ny),
                b: u.clone(),
            };
            let s = ocp::solve_full_with(&p, &[fix])?;
            rep.inner_checks += 1;
            if s.status != SolveStatus::Optimal {
                rep.failures
                    .push(format!("inner solve infeasible at xi sample {si}, u sample {ui}"));
                continue;
            }
            let y_hat = map.predict(xi, u)?;
            let err = (&s.y - &y_hat).norm() / (1.0 + s.y.norm());
            rep.max_inner_error = rep.max_inner_error.max(err);
            if err > INNER_TOL {
                rep.failures.push(format!(
                    "inner minimizer differs from the map at xi sample {si}, u sample {ui} (relative error {err:e})"
                ));
            }
        }

        let base = ocp::solve_full(&p)?;
        let on_map = LinearEquality {
            a_u: -&map.m_u,
            a_y: DMatrix::identity(ny, ny),
            b: &map.m_xi * xi + &map.c,
        };
        let with = ocp::solve_full_with(&p, &[on_map])?;
        rep.outer_checks += 1;
        if base.status != with.status {
            rep.failures
                .push(format!("adding the map changed feasibility at xi sample {si}"));
            continue;
        }
        if base.status == SolveStatus::Infeasible {
            continue;
        }
        rep.nonunique |= base.nonunique || with.nonunique;
        let verr = (base.value - with.value).abs() / (1.0 + base.value.abs());
        rep.max_value_error = rep.max_value_error.max(verr);
        if verr > VALUE_TOL {
            rep.failures.push(format!(
                "optimal value changed at xi sample {si}: {} vs {} (relative {verr:e})",
                base.value, with.value
            ));
        }
        let x0 = linalg::vcat(&[&base.u, &base.y]);
        let x1 = linalg::vcat(&[&with.u, &with.y]);
        let merr = (&x0 - &x1).norm() / (1.0 + x0.norm());
        rep.max_minimizer_error = rep.max_minimizer_error.max(merr);
        if merr > MINIMIZER_TOL {
            rep.failures
                .push(format!("minimizer changed at xi sample {si} (relative {merr:e})"));
        }
    }
    rep.passed = rep.failures.is_empty();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::{random_data, InstanceSpec};
    use crate::ocp::{ConstraintSet, ControlObjective, TerminalConstraint};
    use crate::predictors::{fit_als, fit_ls, offset_predictor};
    use crate::regularizers::Regularizer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    /// Direct argmin over y of the two-term quadratic.
    fn oracle(
        q: &DMatrix<f64>,
        y_ref: &DVector<f64>,
        lambda: f64,
        qr: &DMatrix<f64>,
        y0: &DVector<f64>,
    ) -> DVector<f64> {
        let h = q + qr * lambda;
        h.lu().solve(&(q * y_ref + qr * y0 * lambda)).unwrap()
    }

    #[test]
    fn unconstrained_matches_direct_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..10 {
            let d = random_data(&InstanceSpec::default(), seed).unwrap();
            let p = fit_ls(&d, DEFAULT_TOL).unwrap();
            let q = spd(&mut rng, d.y_dim());
            let y_ref = rand_vec(&mut rng, d.y_dim());
            let map = implicit_unconstrained(&p, &q, &y_ref, 2.5).unwrap();
            let (xi, u) = (rand_vec(&mut rng, d.xi_dim()), rand_vec(&mut rng, d.u_dim()));
            let want = oracle(&q, &y_ref, 2.5, &p.q_reg.weight, &p.predict_y(&xi, &u).unwrap());
            assert!((map.predict(&xi, &u).unwrap() - want).amax() < 1e-8);
        }
    }

    #[test]
    fn limits_in_lambda() {
        let d = random_data(&InstanceSpec::default(), 4).unwrap();
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let ny = d.y_dim();
        let q = DMatrix::identity(ny, ny);
        let y_ref = DVector::from_element(ny, 0.3);
        let zero = implicit_unconstrained(&p, &q, &y_ref, 0.0).unwrap();
        assert_eq!(zero.m_xi.amax(), 0.0);
        assert_eq!(zero.m_u.amax(), 0.0);
        assert!((&zero.c - &y_ref).amax() < 1e-15);
        let big = implicit_unconstrained(&p, &q, &y_ref, 1e12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (xi, u) = (rand_vec(&mut rng, d.xi_dim()), rand_vec(&mut rng, d.u_dim()));
        let ls = p.predict_y(&xi, &u).unwrap();
        assert!((big.predict(&xi, &u).unwrap() - &ls).norm() <= 1e-5 * (1.0 + ls.norm()));
        assert!(implicit_unconstrained(&p, &DMatrix::zeros(ny, ny), &y_ref, 0.0).is_err());
    }

    #[test]
    fn quadratic_and_perp_share_a_map() {
        let d = random_data(&InstanceSpec::default(), 6).unwrap();
        let ny = d.y_dim();
        let nu = d.u_dim();
        let obj = ControlObjective::new(
            DMatrix::identity(ny, ny),
            DVector::from_element(ny, 0.2),
            DMatrix::identity(nu, nu),
            DVector::zeros(nu),
        )
        .unwrap();
        let xi = DVector::from_element(d.xi_dim(), 0.1);
        let mk = |reg| DPCProblem::new(d.clone(), obj.clone(), ConstraintSet::default(), reg, xi.clone()).unwrap();
        let a = implicit_for_problem(&mk(Regularizer::Quadratic { lambda: 1.5 })).unwrap();
        let b = implicit_for_problem(&mk(Regularizer::ProjectionPerp { lambda: 1.5 })).unwrap();
        assert!(a.max_relative_difference(&b) < 1e-14);
    }

    #[test]
    fn affine_and_offset_maps_agree_with_wrappers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_data(&InstanceSpec::default(), 8).unwrap();
        let ny = d.y_dim();
        let q = spd(&mut rng, ny);
        let y_ref = rand_vec(&mut rng, ny);
        let obj = ControlObjective::new(
            q.clone(),
            y_ref.clone(),
            DMatrix::identity(d.u_dim(), d.u_dim()),
            DVector::zeros(d.u_dim()),
        )
        .unwrap();
        let xi = rand_vec(&mut rng, d.xi_dim());

        let als = fit_als(&d, DEFAULT_TOL).unwrap();
        let direct = implicit_affine(&als, &q, &y_ref, 0.7).unwrap();
        let prob = DPCProblem::new(
            d.clone(),
            obj.clone(),
            ConstraintSet::default(),
            Regularizer::Quadratic { lambda: 0.7 },
            xi.clone(),
        )
        .unwrap()
        .with_affine(true);
        let via = implicit_for_problem(&prob).unwrap();
        assert_eq!(via.variant, MapVariant::Affine);
        assert!(direct.max_relative_difference(&via) < 1e-12);

        let a_bar = rand_vec(&mut rng, d.ell());
        let op = offset_predictor(&fit_ls(&d, DEFAULT_TOL).unwrap(), &a_bar).unwrap();
        let direct = implicit_offset(&op, &q, &y_ref, 0.7).unwrap();
        let reg = Regularizer::OffsetQuadratic { lambda: 0.7, a_bar };
        let prob = DPCProblem::new(d.clone(), obj, ConstraintSet::default(), reg, xi).unwrap();
        let via = implicit_for_problem(&prob).unwrap();
        assert_eq!(via.variant, MapVariant::Offset);
        assert!(direct.max_relative_difference(&via) < 1e-12);
    }

    #[test]
    fn offset_with_zero_shift_is_unconstrained() {
        let d = random_data(&InstanceSpec::default(), 9).unwrap();
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let ny = d.y_dim();
        let q = DMatrix::identity(ny, ny);
        let y_ref = DVector::from_element(ny, 1.0);
        let op = offset_predictor(&p, &DVector::zeros(d.ell())).unwrap();
        let a = implicit_offset(&op, &q, &y_ref, 3.0).unwrap();
        let b = implicit_unconstrained(&p, &q, &y_ref, 3.0).unwrap();
        assert!(a.max_relative_difference(&b) < 1e-14);
    }

    #[test]
    fn terminal_weights_structure_and_soft_limit() {
        let spec = InstanceSpec {
            io: true,
            ..Default::default()
        };
        let d = random_data(&spec, 2).unwrap();
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let ny = d.y_dim();
        let block = d.layout().p;
        let q = DMatrix::identity(ny, ny) * 2.0;
        let y_ref = DVector::from_fn(ny, |i, _| 0.1 * i as f64);
        let (map, tw) = implicit_terminal(&p, &q, &y_ref, 1.3, 1).unwrap();
        assert!(!map.soft_limit);
        let f = ny - block;
        let bottom_ref = tw.lambda_ref.rows(f, block).into_owned();
        let bottom_reg = tw.lambda_reg.rows(f, block).into_owned();
        let mut want = DMatrix::zeros(block, ny);
        want.view_mut((0, f), (block, block)).fill_with_identity();
        assert_eq!(bottom_ref, want);
        assert_eq!(bottom_reg.amax(), 0.0);
        let sum = &tw.lambda_ref + &tw.lambda_reg;
        assert!((sum - DMatrix::identity(ny, ny)).amax() < 1e-10);
        let soft = implicit_unconstrained(
            &p,
            &soft_terminal_weight(&q, block, 1, SOFT_TERMINAL_WEIGHT).unwrap(),
            &y_ref,
            1.3,
        )
        .unwrap();
        assert!(map.max_relative_difference(&soft) < 1e-4);
    }

    #[test]
    fn terminal_non_block_diagonal_falls_back() {
        let d = (0..)
            .map(|seed| {
                random_data(
                    &InstanceSpec {
                        io: true,
                        ..Default::default()
                    },
                    seed,
                )
                .unwrap()
            })
            .find(|d| d.layout().n_f > 1)
            .unwrap();
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let ny = d.y_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = spd(&mut rng, ny);
        let y_ref = DVector::zeros(ny);
        let (map, tw) = implicit_terminal(&p, &q, &y_ref, 1.0, 1).unwrap();
        assert!(map.soft_limit && tw.soft_limit && !map.warnings.is_empty());
    }

    #[test]
    fn implicit_map_holds_for_problem_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (k, reg) in [
            Regularizer::Quadratic { lambda: 0.8 },
            Regularizer::MixedProjection { l2: 0.3, l3: 4.0 },
            Regularizer::GammaDdpc {
                l2: 0.3,
                l3: 2.0,
                gamma3_zero: false,
            },
            Regularizer::GammaDdpc {
                l2: 0.3,
                l3: 0.0,
                gamma3_zero: true,
            },
            Regularizer::Quadratic { lambda: 0.0 },
        ]
        .into_iter()
        .enumerate()
        {
            let d = random_data(&InstanceSpec::default(), 20 + k as u64).unwrap();
            let (ny, nu) = (d.y_dim(), d.u_dim());
            let obj = ControlObjective::new(
                spd(&mut rng, ny),
                rand_vec(&mut rng, ny),
                DMatrix::identity(nu, nu),
                DVector::zeros(nu),
            )
            .unwrap();
            let prob = DPCProblem::new(
                d.clone(),
                obj,
                ConstraintSet::default(),
                reg,
                rand_vec(&mut rng, d.xi_dim()),
            )
            .unwrap();
            let map = implicit_for_problem(&prob).unwrap();
            let xis: Vec<_> = (0..2).map(|_| rand_vec(&mut rng, d.xi_dim())).collect();
            let us: Vec<_> = (0..2).map(|_| rand_vec(&mut rng, nu)).collect();
            let rep = verify_implicit_map(&map, &prob, &xis, &us).unwrap();
            assert!(rep.passed, "{k}: {:?}", rep.failures);
        }
    }

    #[test]
    fn implicit_map_terminal() {
        let d = random_data(
            &InstanceSpec {
                io: true,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let (ny, nu) = (d.y_dim(), d.u_dim());
        let y_ref = DVector::from_element(ny, 0.5);
        let obj = ControlObjective::new(
            DMatrix::identity(ny, ny),
            y_ref.clone(),
            DMatrix::identity(nu, nu) * 0.1,
            DVector::zeros(nu),
        )
        .unwrap();
        let c = ConstraintSet {
            terminal: Some(TerminalConstraint::last_steps(1, d.layout().p, &y_ref).unwrap()),
            ..Default::default()
        };
        let prob = DPCProblem::new(
            d.clone(),
            obj,
            c,
            Regularizer::Quadratic { lambda: 1.0 },
            DVector::zeros(d.xi_dim()),
        )
        .unwrap();
        let map = implicit_for_problem(&prob).unwrap();
        assert_eq!(map.variant, MapVariant::Terminal);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xis: Vec<_> = (0..2).map(|_| rand_vec(&mut rng, d.xi_dim())).collect();
        let us: Vec<_> = (0..2).map(|_| rand_vec(&mut rng, nu)).collect();
        let rep = verify_implicit_map(&map, &prob, &xis, &us).unwrap();
        assert!(rep.passed, "{:?}", rep.failures);
    }

    #[test]
    fn corrupted_map_fails_verification() {
        let d = random_data(&InstanceSpec::default(), 7).unwrap();
        let (ny, nu) = (d.y_dim(), d.u_dim());
        let obj = ControlObjective::new(
            DMatrix::identity(ny, ny),
            DVector::from_element(ny, 0.4),
            DMatrix::identity(nu, nu),
            DVector::zeros(nu),
        )
        .unwrap();
        let prob = DPCProblem::new(
            d.clone(),
            obj,
            ConstraintSet::default(),
            Regularizer::Quadratic { lambda: 1.0 },
            DVector::zeros(d.xi_dim()),
        )
        .unwrap();
        let p = fit_ls(&d, DEFAULT_TOL).unwrap().with_scaled_q_reg(1.5);
        let map = implicit_unconstrained(&p, &prob.objective.q, &prob.objective.y_ref, 1.0).unwrap();
        let xi = vec![DVector::from_element(d.xi_dim(), 0.3)];
        let u = vec![DVector::from_element(nu, -0.2)];
        assert!(!verify_implicit_map(&map, &prob, &xi, &u).unwrap().passed);
    }

    #[test]
    fn verification_refuses_output_boxes() {
        let d = random_data(&InstanceSpec::default(), 7).unwrap();
        let (ny, nu) = (d.y_dim(), d.u_dim());
        let obj = ControlObjective::new(
            DMatrix::identity(ny, ny),
            DVector::zeros(ny),
            DMatrix::identity(nu, nu),
            DVector::zeros(nu),
        )
        .unwrap();
        let c = ConstraintSet {
            y_box: Some(crate::ocp::Bounds::symmetric(ny, 1.0)),
            ..Default::default()
        };
        let prob = DPCProblem::new(
            d.clone(),
            obj,
            c,
            Regularizer::Quadratic { lambda: 1.0 },
            DVector::zeros(d.xi_dim()),
        )
        .unwrap();
        let map = implicit_unconstrained(
            &fit_ls(&d, DEFAULT_TOL).unwrap(),
            &prob.objective.q,
            &prob.objective.y_ref,
            1.0,
        )
        .unwrap();
        assert!(matches!(
            verify_implicit_map(&map, &prob, &[], &[]),
            Err(DpcError::AssumptionViolated(_))
        ));
    }

    #[test]
    fn scalar_map_interpolates_between_reference_and_prediction() {
        let c = crate::fixtures::cloud(0).unwrap();
        let p = fit_ls(&c.measured, DEFAULT_TOL).unwrap();
        let q = DMatrix::identity(1, 1);
        let y_ref = DVector::zeros(1);
        for lambda in [0.0, 0.1, 1.0, 10.0, 1e6] {
            let map = implicit_unconstrained(&p, &q, &y_ref, lambda).unwrap();
            for x0 in [-1.0, 0.0, 1.0] {
                for u in [-1.0, 0.5] {
                    let (xi, uv) = (DVector::from_element(1, x0), DVector::from_element(1, u));
                    let y = map.predict(&xi, &uv).unwrap()[0];
                    let ls = p.predict_y(&xi, &uv).unwrap()[0];
                    assert!(y >= ls.min(0.0) - 1e-12 && y <= ls.max(0.0) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn product_grid_orders_and_fixes_coordinates() {
        let g = product_grid(2, -1.0, 1.0, 3, &[]).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[1].as_slice(), &[-1.0, 0.0]);
        assert_eq!(g[8].as_slice(), &[1.0, 1.0]);
        let f = product_grid(2, 0.0, 1.0, 2, &[(1, 0.25)]).unwrap();
        assert_eq!(f.iter().map(|v| v[1]).collect::<Vec<_>>(), vec![0.25, 0.25]);
        assert_eq!(product_grid(1, 2.0, 3.0, 1, &[]).unwrap()[0][0], 2.0);
        assert!(product_grid(1, 1.0, 0.0, 3, &[]).is_err());
        assert!(product_grid(1, 0.0, 1.0, 0, &[]).is_err());
    }
}
