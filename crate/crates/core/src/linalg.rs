//! Dense numerical kernels shared by every other module.
//!
//! All rank decisions use singular values thresholded relative to the
//! largest singular value of the matrix at hand. Pseudoinverse semantics
//! replace inverses whenever a matrix turns out to be rank deficient.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::DataMatrix;
use crate::error::{check_dim, DpcError, Result};

/// Default relative singular-value cutoff.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Relative eigenvalue cutoff used for reduced Hessians inside the KKT kernel.
///
/// Much smaller than [`DEFAULT_TOL`] because regularization weights of 1e12
/// next to unit tracking weights are routine.
pub const HESSIAN_RCOND: f64 = 1e-14;

/// Relative residual threshold for deciding that `A x = b` is consistent.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Thin singular value decomposition `M = U diag(s) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl Svd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let k = r.min(c);
        if k == 0 {
            return Svd {
                u: DMatrix::zeros(r, 0),
                s: DVector::zeros(0),
                v_t: DMatrix::zeros(0, c),
            };
        }
        // nalgebra's default convergence threshold (5 eps) occasionally
        // returns factors that do not reconstruct rank-deficient inputs, so
        // iterate to machine precision and verify, falling back to the
        // transpose.
        let scale = m.norm().max(f64::MIN_POSITIVE);
        let accept = 1e-12 * scale * ((r + c) as f64);
        let mut best: Option<(f64, Svd)> = None;
        for transpose in [false, true] {
            for eps in [f64::EPSILON, 5.0 * f64::EPSILON] {
                let input = if transpose { m.transpose() } else { m.clone() };
                let Some(svd) = input.try_svd(true, true, eps, 0) else {
                    continue;
                };
                let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
                let cand = if transpose {
                    Svd {
                        u: v_t.transpose(),
                        s: svd.singular_values,
                        v_t: u.transpose(),
                    }
                } else {
                    Svd {
                        u,
                        s: svd.singular_values,
                        v_t,
                    }
                };
                let err = (&cand.u * DMatrix::from_diagonal(&cand.s) * &cand.v_t - m).norm();
                if err <= accept {
                    return cand;
                }
                if best.as_ref().is_none_or(|(e, _)| err < *e) {
                    best = Some((err, cand));
                }
            }
        }
        best.expect("at least one decomposition converges").1
    }

    pub fn max_singular_value(&self) -> f64 {
        self.s.iter().cloned().fold(0.0, f64::max)
    }

    /// Number of singular values strictly above `cutoff`.
    pub fn rank_above(&self, cutoff: f64) -> usize {
        self.s.iter().filter(|&&s| s > cutoff && s > 0.0).count()
    }

    pub fn relative_cutoff(&self, tol: f64) -> f64 {
        tol * self.max_singular_value()
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows().min(m.ncols()) == 0 {
        return DVector::zeros(0);
    }
    Svd::new(m).s
}

/// Numerical rank: count of singular values above `tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let s = singular_values(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > tol * smax).count()
}

/// Moore-Penrose pseudoinverse with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let svd = Svd::new(m);
    let cutoff = svd.relative_cutoff(tol);
    pinv_from_svd(&svd, cutoff, m.nrows(), m.ncols())
}

/// Pseudoinverse keeping only singular values above the absolute `cutoff`.
pub fn pinv_abs(m: &DMatrix<f64>, cutoff: f64) -> DMatrix<f64> {
    let svd = Svd::new(m);
    pinv_from_svd(&svd, cutoff, m.nrows(), m.ncols())
}

fn pinv_from_svd(svd: &Svd, cutoff: f64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(cols, rows);
    for (k, &s) in svd.s.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let v = svd.v_t.row(k).transpose();
            let u = svd.u.column(k);
            out += (v * u.transpose()) / s;
        }
    }
    out
}

/// Gram matrix `E E^T`, its pseudoinverse and rank, computed from the SVD of
/// `E` so that the cutoff acts on singular values of `E` rather than their
/// squares.
#[derive(Debug, Clone)]
pub struct GramInverse {
    pub gram: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub rank: usize,
}

pub fn gram_pinv(e: &DMatrix<f64>, cutoff: f64) -> GramInverse {
    let rows = e.nrows();
    let gram = e * e.transpose();
    let svd = Svd::new(e);
    let mut inverse = DMatrix::zeros(rows, rows);
    let mut rank = 0;
    for (k, &s) in svd.s.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let u = svd.u.column(k);
            inverse += (u * u.transpose()) / (s * s);
            rank += 1;
        }
    }
    GramInverse {
        gram,
        inverse: symmetrize(&inverse),
        rank,
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `M - M^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    (m - m.transpose()).amax()
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    asymmetry(m) <= rel_tol * m.amax().max(1.0)
}

/// Orthonormal basis (as columns) of the null space of `a`.
pub fn null_space(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    if r == 0 {
        return DMatrix::identity(c, c);
    }
    // Zero-padding to at least `c` rows makes the thin SVD return all `c`
    // right singular vectors.
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = Svd::new(&padded);
    let cutoff = svd.relative_cutoff(tol);
    let keep: Vec<usize> = (0..svd.s.len())
        .filter(|&k| !(svd.s[k] > cutoff && svd.s[k] > 0.0))
        .collect();
    let mut basis = DMatrix::zeros(c, keep.len());
    for (j, &k) in keep.iter().enumerate() {
        basis.set_column(j, &svd.v_t.row(k).transpose());
    }
    basis
}

/// Orthogonal projectors onto the row space of `Z` and its complement.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectorPair {
    #[serde(with = "crate::io::matrix_json")]
    pub pi: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_json")]
    pub pi_perp: DMatrix<f64>,
}

/// `Pi = Z^+ Z` and `Pi_perp = I - Pi`.
pub fn projectors(z: &DMatrix<f64>, tol: f64) -> ProjectorPair {
    let ell = z.ncols();
    let pi = symmetrize(&(pinv(z, tol) * z));
    let pi_perp = DMatrix::identity(ell, ell) - &pi;
    ProjectorPair { pi, pi_perp }
}

/// Block LQ factors `D = L Q` of a row-partitioned matrix.
///
/// `L` is lower triangular with nonnegative diagonal; the rows of `Q` are
/// orthonormal whenever the matrix has at least as many columns as rows.
/// The trailing `Q4` block spanning the complement is never formed.
#[derive(Debug, Clone, Serialize)]
pub struct LqFactors {
    #[serde(with = "crate::io::matrix_json")]
    pub l: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_json")]
    pub q: DMatrix<f64>,
    pub blocks: Vec<usize>,
    /// Per diagonal block: true when some diagonal entry vanishes.
    pub singular_blocks: Vec<bool>,
    pub row_orthonormal: bool,
}

impl LqFactors {
    fn offset(&self, i: usize) -> usize {
        self.blocks[..i].iter().sum()
    }

    /// Block `L_{ij}` (zero-based block indices).
    pub fn l_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (ri, rj) = (self.offset(i), self.offset(j));
        self.l.view((ri, rj), (self.blocks[i], self.blocks[j])).into_owned()
    }

    /// Block row `Q_i` (zero-based).
    pub fn q_block(&self, i: usize) -> DMatrix<f64> {
        self.q
            .view((self.offset(i), 0), (self.blocks[i], self.q.ncols()))
            .into_owned()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * &self.q
    }

    pub fn any_singular(&self) -> bool {
        self.singular_blocks.iter().any(|&s| s)
    }
}

/// LQ decomposition of an arbitrary matrix with the given row blocks,
/// computed from a Householder QR of the transpose.
pub fn lq_blocks(m: &DMatrix<f64>, blocks: &[usize], tol: f64) -> Result<LqFactors> {
    let (r, ell) = m.shape();
    check_dim("LQ row blocks", r, blocks.iter().sum())?;
    let (mut l, mut q, row_orthonormal) = if r == 0 {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, ell), true)
    } else if ell >= r {
        let qr = m.transpose().qr();
        (qr.r().transpose(), qr.q().transpose(), true)
    } else {
        let mut padded = DMatrix::zeros(r, r);
        padded.view_mut((0, 0), (ell, r)).copy_from(&m.transpose());
        let qr = padded.qr();
        let qt = qr.q().transpose();
        (qr.r().transpose(), qt.columns(0, ell).into_owned(), false)
    };
    for i in 0..r {
        if l[(i, i)] < 0.0 {
            l.column_mut(i).neg_mut();
            q.row_mut(i).neg_mut();
        }
    }
    let dmax = (0..r).map(|i| l[(i, i)].abs()).fold(0.0, f64::max);
    let mut singular_blocks = Vec::with_capacity(blocks.len());
    let mut off = 0;
    for &b in blocks {
        let sing = (off..off + b).any(|i| l[(i, i)].abs() <= tol * dmax || dmax == 0.0);
        singular_blocks.push(sing);
        off += b;
    }
    Ok(LqFactors {
        l,
        q,
        blocks: blocks.to_vec(),
        singular_blocks,
        row_orthonormal,
    })
}

/// LQ decomposition of `[W; U; Y]` with blocks matching the data partition.
pub fn lq_decompose(d: &DataMatrix, tol: f64) -> Result<LqFactors> {
    lq_blocks(&d.d(), &[d.xi_dim(), d.u_dim(), d.y_dim()], tol)
}

/// `v^T W v` for a symmetric weight `W`.
pub fn weighted_sqnorm(v: &DVector<f64>, weight: &DMatrix<f64>) -> Result<f64> {
    check_dim("weighted norm", weight.nrows(), v.len())?;
    let asym = asymmetry(weight);
    if asym > 1e-10 * weight.amax().max(1.0) {
        return Err(DpcError::NotSymmetric { asymmetry: asym });
    }
    Ok((v.transpose() * weight * v)[(0, 0)].max(0.0))
}

/// Minimizer and multipliers of an equality-constrained convex QP.
#[derive(Debug, Clone)]
pub struct KktSolution {
    pub x: DVector<f64>,
    /// Multipliers `nu` with `H x + g + Aeq^T nu = 0`.
    pub multipliers: DVector<f64>,
    /// True when the reduced Hessian is singular and `x` is the
    /// minimum-norm minimizer among several.
    pub nonunique: bool,
    pub stationarity_residual: f64,
    pub feasibility_residual: f64,
}

/// Minimize `1/2 x^T H x + g^T x` subject to `Aeq x = beq` by the
/// null-space method.
///
/// The particular solution `Aeq^+ beq` lies in the row space of `Aeq`, so
/// taking the minimum-norm reduced step yields the minimum-norm minimizer.
pub fn solve_kkt(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    aeq: &DMatrix<f64>,
    beq: &DVector<f64>,
    tol: f64,
) -> Result<KktSolution> {
    let n = g.len();
    check_dim("KKT Hessian rows", n, h.nrows())?;
    check_dim("KKT Hessian cols", n, h.ncols())?;
    check_dim("KKT constraint cols", n, aeq.ncols())?;
    check_dim("KKT constraint rows", aeq.nrows(), beq.len())?;

    let a_pinv = pinv(aeq, tol);
    let x_p = &a_pinv * beq;
    let feas = (aeq * &x_p - beq).norm();
    if feas > FEASIBILITY_TOL * (1.0 + beq.norm()) {
        return Err(DpcError::Infeasible {
            what: "equality constraints are inconsistent".into(),
            residual: feas,
        });
    }

    let basis = null_space(aeq, tol);
    let k = basis.ncols();
    let mut nonunique = false;
    let x = if k == 0 {
        x_p
    } else {
        let hr = symmetrize(&(basis.transpose() * h * &basis));
        let rhs = -(basis.transpose() * (h * &x_p + g));
        let eig = hr.clone().symmetric_eigen();
        // Curvature is judged against the full Hessian: a reduced Hessian
        // that is zero up to roundoff has no meaningful relative scale.
        let emax = eig.eigenvalues.iter().fold(h.norm(), |m, v| m.max(v.abs()));
        let cutoff = HESSIAN_RCOND * emax * (k as f64);
        let mut z = DVector::zeros(k);
        // Magnitude of the quantities feeding the reduced gradient, used to
        // judge whether its component along a flat direction is roundoff.
        let scale = h.norm() * x_p.norm() + g.norm();
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            let vec = eig.eigenvectors.column(i);
            let coeff = vec.dot(&rhs);
            if ev > cutoff && ev > 0.0 {
                z += vec * (coeff / ev);
            } else {
                nonunique = true;
                if ev < -1e-10 * emax {
                    return Err(DpcError::InvalidParameter(
                        "Hessian is not positive semidefinite on the feasible set".into(),
                    ));
                }
                if coeff.abs() > 1e-8 * scale {
                    return Err(DpcError::Unbounded);
                }
            }
        }
        x_p + &basis * z
    };

    let grad = h * &x + g;
    let multipliers = if aeq.nrows() == 0 {
        DVector::zeros(0)
    } else {
        -(pinv(&aeq.transpose(), tol) * &grad)
    };
    let stationarity_residual = (&grad + aeq.transpose() * &multipliers).norm();
    let feasibility_residual = (aeq * &x - beq).norm();
    Ok(KktSolution {
        x,
        multipliers,
        nonunique,
        stationarity_residual,
        feasibility_residual,
    })
}

/// Inverse of a square matrix, failing when it is numerically singular.
pub fn checked_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_dim(what, m.nrows(), m.ncols())?;
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let s = singular_values(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if smax == 0.0 || smin <= 1e-14 * smax {
        return Err(DpcError::Singular(what.to_string()));
    }
    m.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| DpcError::Singular(what.to_string()))
}

/// Vertical concatenation of matrices sharing a column count.
pub fn vstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        assert_eq!(p.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (p.nrows(), cols)).copy_from(*p);
        r += p.nrows();
    }
    out
}

/// Horizontal concatenation of matrices sharing a row count.
pub fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        assert_eq!(p.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, p.ncols())).copy_from(*p);
        c += p.ncols();
    }
    out
}

pub fn vcat(parts: &[&DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(*p);
        r += p.len();
    }
    out
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for p in parts {
        out.view_mut((r, c), p.shape()).copy_from(*p);
        r += p.nrows();
        c += p.ncols();
    }
    out
}
