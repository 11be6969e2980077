//! Regularizers `h(a)` and the cost each one attributes to a single
//! trajectory, `h*(w) = min { h(a) : D a = w }`.
//!
//! Every variant here is quadratic in `a`, so the direct minimization is an
//! exact equality-constrained QP. Where a closed form exists it is written in
//! terms of the least-squares residual weights:
//!
//! ```text
//! h*(xi, u, y) = c_y |y - G z|^2_{Q_reg} + c_u |u - K xi|^2_{R_reg} + c_xi |xi|^2_{(W W^T)^+}
//! ```
//!
//! with variant-specific coefficients `(c_y, c_u, c_xi)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{DataMatrix, TrajectoryTuple};
use crate::error::{check_dim, DpcError, Result};
use crate::io::{self, matrix_json, vector_json};
use crate::linalg::{self, LqFactors, FEASIBILITY_TOL};
use crate::predictors::{
    augment_tuple, fit_ls, fit_with_origin, AffineLeastSquaresPredictor, LeastSquaresPredictor, OffsetPredictor,
    PredictorOrigin,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    /// `lambda |a|^2`
    Quadratic { lambda: f64 },
    /// `lambda |Pi_perp a|^2`
    ProjectionPerp { lambda: f64 },
    /// `lambda |Pi a|^2`
    ProjectionPar { lambda: f64 },
    /// `l2 |Pi a|^2 + l3 |Pi_perp a|^2`
    MixedProjection { l2: f64, l3: f64 },
    /// `lambda |a - a_bar|^2`
    OffsetQuadratic {
        lambda: f64,
        #[serde(with = "vector_json")]
        a_bar: DVector<f64>,
    },
    /// `l2 |gamma_2|^2 + l3 |gamma_3|^2` on the LQ coordinates `gamma = Q a`.
    /// With `gamma3_zero` the output coordinate is pinned to zero instead.
    GammaDdpc { l2: f64, l3: f64, gamma3_zero: bool },
    /// `lambda |a|^2 + lambda_sigma |sigma|^2` with a slack `sigma` on the
    /// measured-output part of the initial condition.
    SlackQuadratic { lambda: f64, lambda_sigma: f64 },
    /// `a^T S a`; no closed form.
    GeneralWeighted {
        #[serde(with = "matrix_json")]
        s: DMatrix<f64>,
    },
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DpcError::InvalidParameter(format!(
            "{name} must be a finite nonnegative number, got {v}"
        )))
    }
}

impl Regularizer {
    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::Quadratic { .. } => "quadratic",
            Regularizer::ProjectionPerp { .. } => "perp",
            Regularizer::ProjectionPar { .. } => "par",
            Regularizer::MixedProjection { .. } => "mixed",
            Regularizer::OffsetQuadratic { .. } => "offset",
            Regularizer::GammaDdpc { .. } => "gamma",
            Regularizer::SlackQuadratic { .. } => "slack",
            Regularizer::GeneralWeighted { .. } => "weighted",
        }
    }

    /// Check parameter ranges and sizes against a data matrix with `ell` columns.
    pub fn validate(&self, ell: usize) -> Result<()> {
        match self {
            Regularizer::Quadratic { lambda }
            | Regularizer::ProjectionPerp { lambda }
            | Regularizer::ProjectionPar { lambda } => nonneg("lambda", *lambda),
            Regularizer::MixedProjection { l2, l3 } | Regularizer::GammaDdpc { l2, l3, .. } => {
                nonneg("l2", *l2)?;
                nonneg("l3", *l3)
            }
            Regularizer::OffsetQuadratic { lambda, a_bar } => {
                nonneg("lambda", *lambda)?;
                check_dim("a_bar length", ell, a_bar.len())
            }
            Regularizer::SlackQuadratic { lambda, lambda_sigma } => {
                if !(*lambda > 0.0 && *lambda_sigma > 0.0) || !lambda.is_finite() || !lambda_sigma.is_finite() {
                    return Err(DpcError::InvalidParameter(format!(
                        "slack weights must be positive, got lambda={lambda}, lambda_sigma={lambda_sigma}"
                    )));
                }
                Ok(())
            }
            Regularizer::GeneralWeighted { s } => {
                check_dim("S rows", ell, s.nrows())?;
                check_dim("S columns", ell, s.ncols())?;
                let asym = linalg::asymmetry(s);
                if asym > 1e-10 * s.amax().max(1.0) {
                    return Err(DpcError::NotSymmetric { asymmetry: asym });
                }
                let eig = linalg::symmetrize(s).symmetric_eigen();
                let emin = eig.eigenvalues.min();
                if emin < -1e-10 * s.amax().max(1.0) {
                    return Err(DpcError::InvalidParameter(format!(
                        "S must be positive semidefinite (smallest eigenvalue {emin:e})"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Textual form accepted by [`Regularizer::parse`]. Vectors and matrices
    /// are written inline.
    pub fn to_spec(&self) -> String {
        let f = io::format_number;
        let list = |v: &DVector<f64>| v.iter().map(|&x| f(x)).collect::<Vec<_>>().join(";");
        match self {
            Regularizer::Quadratic { lambda } => format!("quadratic:lambda={}", f(*lambda)),
            Regularizer::ProjectionPerp { lambda } => format!("perp:lambda={}", f(*lambda)),
            Regularizer::ProjectionPar { lambda } => format!("par:lambda={}", f(*lambda)),
            Regularizer::MixedProjection { l2, l3 } => format!("mixed:l2={},l3={}", f(*l2), f(*l3)),
            Regularizer::OffsetQuadratic { lambda, a_bar } => {
                format!("offset:lambda={},abar={}", f(*lambda), list(a_bar))
            }
            Regularizer::GammaDdpc { l2, l3, gamma3_zero } => {
                format!("gamma:l2={},l3={},g3zero={}", f(*l2), f(*l3), gamma3_zero)
            }
            Regularizer::SlackQuadratic { lambda, lambda_sigma } => {
                format!("slack:lambda={},lsigma={}", f(*lambda), f(*lambda_sigma))
            }
            Regularizer::GeneralWeighted { s } => {
                let rows: Vec<String> = (0..s.nrows())
                    .map(|i| s.row(i).iter().map(|&x| f(x)).collect::<Vec<_>>().join(" "))
                    .collect();
                format!("weighted:S={}", rows.join(";"))
            }
        }
    }

    /// Parse `name:key=value,...`. Vector/matrix values are either inline
    /// (`1;2;3`, matrix rows separated by `;` and entries by spaces) or
    /// `@path` to a CSV file resolved against `base`.
    pub fn parse(spec: &str, base: &Path) -> Result<Regularizer> {
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut pairs = Vec::new();
        for item in rest.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| DpcError::Parse(format!("expected key=value, found {item:?}")))?;
            pairs.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
        let get = |keys: &[&str]| -> Option<&str> {
            pairs
                .iter()
                .find(|(k, _)| keys.contains(&k.as_str()))
                .map(|(_, v)| v.as_str())
        };
        let num = |keys: &[&str]| -> Result<f64> {
            let v = get(keys)
                .ok_or_else(|| DpcError::Parse(format!("regularizer {name:?} needs parameter {}", keys[0])))?;
            io::parse_number(v)
        };
        let known: &[&str] = match name.trim() {
            "quadratic" | "perp" | "projection_perp" | "par" | "projection_par" => &["lambda", "l"],
            "mixed" => &["l2", "l3"],
            "offset" => &["lambda", "l", "abar", "a_bar"],
            "gamma" => &["l2", "l3", "g3zero", "gamma3_zero"],
            "slack" => &["lambda", "l", "lsigma", "lambda_sigma"],
            "weighted" => &["s"],
            other => return Err(DpcError::Parse(format!("unknown regularizer {other:?}"))),
        };
        if let Some((k, _)) = pairs.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            return Err(DpcError::Parse(format!(
                "unknown parameter {k:?} for regularizer {name:?}"
            )));
        }
        let reg = match name.trim() {
            "quadratic" => Regularizer::Quadratic {
                lambda: num(&["lambda", "l"])?,
            },
            "perp" | "projection_perp" => Regularizer::ProjectionPerp {
                lambda: num(&["lambda", "l"])?,
            },
            "par" | "projection_par" => Regularizer::ProjectionPar {
                lambda: num(&["lambda", "l"])?,
            },
            "mixed" => Regularizer::MixedProjection {
                l2: num(&["l2"])?,
                l3: num(&["l3"])?,
            },
            "offset" => {
                let raw =
                    get(&["abar", "a_bar"]).ok_or_else(|| DpcError::Parse("offset regularizer needs abar".into()))?;
                let a_bar = match raw.strip_prefix('@') {
                    Some(file) => io::read_vector_csv(&base.join(file))?,
                    None => DVector::from_vec(raw.split(';').map(io::parse_number).collect::<Result<Vec<_>>>()?),
                };
                Regularizer::OffsetQuadratic {
                    lambda: num(&["lambda", "l"])?,
                    a_bar,
                }
            }
            "gamma" => {
                let gamma3_zero = match get(&["g3zero", "gamma3_zero"]) {
                    None | Some("false") | Some("0") => false,
                    Some("true") | Some("1") => true,
                    Some(other) => return Err(DpcError::Parse(format!("bad boolean {other:?}"))),
                };
                Regularizer::GammaDdpc {
                    l2: num(&["l2"])?,
                    l3: if gamma3_zero {
                        get(&["l3"]).map(io::parse_number).transpose()?.unwrap_or(0.0)
                    } else {
                        num(&["l3"])?
                    },
                    gamma3_zero,
                }
            }
            "slack" => Regularizer::SlackQuadratic {
                lambda: num(&["lambda", "l"])?,
                lambda_sigma: num(&["lsigma", "lambda_sigma"])?,
            },
            _ => {
                let raw = get(&["s"]).ok_or_else(|| DpcError::Parse("weighted regularizer needs S".into()))?;
                let s = match raw.strip_prefix('@') {
                    Some(file) => io::read_matrix_csv(&base.join(file))?,
                    None => parse_inline_matrix(raw)?,
                };
                Regularizer::GeneralWeighted { s }
            }
        };
        Ok(reg)
    }

    /// Closed-form coefficients `(c_y, c_u, c_xi)`; `None` without a closed form.
    pub fn term_weights(&self) -> Option<TermWeights> {
        let w = |y, u, xi| {
            Some(TermWeights {
                y,
                u,
                xi,
                hard_output: false,
            })
        };
        match *self {
            Regularizer::Quadratic { lambda }
            | Regularizer::OffsetQuadratic { lambda, .. }
            | Regularizer::SlackQuadratic { lambda, .. } => w(lambda, lambda, lambda),
            Regularizer::ProjectionPerp { lambda } => w(lambda, 0.0, 0.0),
            Regularizer::ProjectionPar { lambda } => w(0.0, lambda, lambda),
            Regularizer::MixedProjection { l2, l3 } => w(l3, l2, l2),
            Regularizer::GammaDdpc { l2, l3, gamma3_zero } => Some(TermWeights {
                y: if gamma3_zero { 0.0 } else { l3 },
                u: l2,
                xi: 0.0,
                hard_output: gamma3_zero,
            }),
            Regularizer::GeneralWeighted { .. } => None,
        }
    }
}

fn parse_inline_matrix(raw: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = raw
        .split(';')
        .map(|r| r.split_whitespace().map(io::parse_number).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, |r| r.len());
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(DpcError::Parse(
            "inline matrix rows must have equal nonzero length".into(),
        ));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

/// Coefficients of the three closed-form terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermWeights {
    pub y: f64,
    pub u: f64,
    pub xi: f64,
    /// Output deviation is forced to zero rather than penalized.
    pub hard_output: bool,
}

/// Closed-form trajectory cost split into its terms (each already weighted).
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryCostBreakdown {
    pub variant: String,
    pub total: f64,
    pub term_y: f64,
    pub term_u: f64,
    pub term_xi: f64,
    pub weights: TermWeights,
    pub active_y: bool,
    pub active_u: bool,
    pub active_xi: bool,
    /// Output deviation imposed as an equality (`y = y_LS`).
    pub hard_output_constraint: bool,
    /// Some weight was a pseudoinverse of a singular Gram matrix; deviations
    /// in its null directions are excluded as hard constraints.
    pub pseudoinverse_used: bool,
}

/// Everything needed to evaluate a closed-form trajectory cost.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    pub predictor: LeastSquaresPredictor,
    pub weights: TermWeights,
    /// Offset trajectory subtracted before evaluating the terms.
    pub w_bar: Option<TrajectoryTuple>,
    /// Inputs are lifted to `(1, xi)` before evaluation.
    pub augmented: bool,
    pub variant: &'static str,
}

impl ClosedForm {
    /// Build from a predictor fitted on the data the regularizer acts on.
    /// `augmented` marks a predictor fitted on ones-augmented data.
    pub fn from_predictor(reg: &Regularizer, p: &LeastSquaresPredictor, augmented: bool) -> Result<Self> {
        let ell = p.data().ell();
        reg.validate(ell)?;
        let weights = reg.term_weights().ok_or_else(|| {
            DpcError::ClosedFormUnavailable(format!(
                "the {} regularizer has no closed-form trajectory cost; use the direct minimization",
                reg.name()
            ))
        })?;
        let mut out = ClosedForm {
            predictor: p.clone(),
            weights,
            w_bar: None,
            augmented,
            variant: reg.name(),
        };
        match reg {
            Regularizer::OffsetQuadratic { a_bar, .. } => {
                if augmented {
                    return Err(DpcError::InvalidParameter(
                        "offset regularization is not combined with the affine formulation".into(),
                    ));
                }
                out.w_bar = Some(p.data().generate(a_bar)?);
            }
            Regularizer::SlackQuadratic { lambda, lambda_sigma } => {
                if augmented {
                    return Err(DpcError::InvalidParameter(
                        "slack regularization is not combined with the affine formulation".into(),
                    ));
                }
                let (aug, _) = slack_augment(p.data(), *lambda, *lambda_sigma)?;
                out.predictor = fit_with_origin(&aug, p.tolerance, PredictorOrigin::Slack)?;
            }
            _ => {}
        }
        Ok(out)
    }

    /// Closed form for `reg` on data `d`, fitting the predictor internally.
    pub fn new(reg: &Regularizer, d: &DataMatrix, affine: bool, tol: f64) -> Result<Self> {
        let p = if affine {
            fit_ls(&d.with_ones_row()?, tol)?
        } else {
            fit_ls(d, tol)?
        };
        Self::from_predictor(reg, &p, affine)
    }

    /// Map a user trajectory into the coordinates the terms act on.
    pub fn shifted(&self, w: &TrajectoryTuple) -> TrajectoryTuple {
        let mut t = if self.augmented { augment_tuple(w) } else { w.clone() };
        if let Some(bar) = &self.w_bar {
            t.xi -= &bar.xi;
            t.u -= &bar.u;
            t.y -= &bar.y;
        }
        t
    }

    pub fn evaluate(&self, w: &TrajectoryTuple) -> Result<TrajectoryCostBreakdown> {
        let p = &self.predictor;
        let t = self.shifted(w);
        let (dy, du) = p.deviations(&t)?;
        let scale = FEASIBILITY_TOL * (1.0 + w.stacked().norm());
        let outside = |what: &str, proj: DMatrix<f64>, v: &DVector<f64>| -> Result<()> {
            let r = (proj * v).norm();
            if r > scale {
                Err(DpcError::Infeasible {
                    what: format!("trajectory is not generated by the data ({what})"),
                    residual: r,
                })
            } else {
                Ok(())
            }
        };
        if p.wwt.singular {
            outside("initial condition outside the span of W", p.wwt.null_projector(), &t.xi)?;
        }
        if p.r_reg.singular {
            outside(
                "input deviation outside the residual span",
                p.r_reg.null_projector(),
                &du,
            )?;
        }
        let tw = self.weights;
        if tw.hard_output {
            let r = dy.norm();
            if r > scale {
                return Err(DpcError::Infeasible {
                    what: "output differs from the least-squares prediction under a hard constraint".into(),
                    residual: r,
                });
            }
        } else if p.q_reg.singular {
            outside(
                "output deviation outside the residual span",
                p.q_reg.null_projector(),
                &dy,
            )?;
        }
        let term_y = if tw.hard_output {
            0.0
        } else {
            tw.y * linalg::weighted_sqnorm(&dy, &p.q_reg.weight)?
        };
        let term_u = tw.u * linalg::weighted_sqnorm(&du, &p.r_reg.weight)?;
        let term_xi = tw.xi * linalg::weighted_sqnorm(&t.xi, &p.wwt.weight)?;
        Ok(TrajectoryCostBreakdown {
            variant: self.variant.to_string(),
            total: term_y + term_u + term_xi,
            term_y,
            term_u,
            term_xi,
            weights: tw,
            active_y: tw.y > 0.0 && !tw.hard_output,
            active_u: tw.u > 0.0,
            active_xi: tw.xi > 0.0,
            hard_output_constraint: tw.hard_output,
            pseudoinverse_used: p.pseudoinverse_used,
        })
    }
}

/// Closed-form trajectory-specific cost of `reg` for the data `p` was fitted on.
pub fn trajectory_cost(
    reg: &Regularizer,
    p: &LeastSquaresPredictor,
    w: &TrajectoryTuple,
) -> Result<TrajectoryCostBreakdown> {
    p.data().check_tuple(w)?;
    ClosedForm::from_predictor(reg, p, false)?.evaluate(w)
}

/// Closed-form cost of the affine formulation (generators summing to one).
pub fn affine_trajectory_cost(
    reg: &Regularizer,
    p: &AffineLeastSquaresPredictor,
    w: &TrajectoryTuple,
) -> Result<TrajectoryCostBreakdown> {
    check_dim("xi length", p.xi_dim(), w.xi.len())?;
    ClosedForm::from_predictor(reg, &p.inner, true)?.evaluate(w)
}

/// Offset cost written with the shifted predictor:
/// `lambda (|y - y_LS(xi,u) - c_y|^2_{Q_reg} + |u - u_LS(xi) - c_u|^2_{R_reg} + |xi - xi_bar|^2)`.
pub fn offset_expanded_cost(op: &OffsetPredictor, lambda: f64, w: &TrajectoryTuple) -> Result<f64> {
    nonneg("lambda", lambda)?;
    op.base.data().check_tuple(w)?;
    let ry = &w.y - op.predict_y(&w.xi, &w.u)?;
    let ru = &w.u - op.predict_u(&w.xi)?;
    let rx = &w.xi - &op.xi_bar;
    let b = &op.base;
    Ok(lambda
        * (linalg::weighted_sqnorm(&ry, &b.q_reg.weight)?
            + linalg::weighted_sqnorm(&ru, &b.r_reg.weight)?
            + linalg::weighted_sqnorm(&rx, &b.wwt.weight)?))
}

/// `h(v) = v^T S v + lin^T v + constant` over the generator (and slack)
/// variables `v`, together with the linear map `v -> (xi, u, y)`.
#[derive(Debug, Clone)]
pub struct RegularizerQp {
    /// Maps `v` to the stacked trajectory (ones-augmented in affine mode).
    pub generator: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
    /// Extra equalities `A v = b` that the variant imposes.
    pub extra_a: DMatrix<f64>,
    pub extra_b: DVector<f64>,
    pub n_a: usize,
    pub n_sigma: usize,
    pub affine: bool,
}

impl RegularizerQp {
    pub fn new(reg: &Regularizer, d: &DataMatrix, affine: bool, tol: f64) -> Result<Self> {
        reg.validate(d.ell())?;
        let data = if affine { d.with_ones_row()? } else { d.clone() };
        let ell = data.ell();
        let mut out = RegularizerQp {
            generator: data.d(),
            s: DMatrix::zeros(ell, ell),
            lin: DVector::zeros(ell),
            constant: 0.0,
            extra_a: DMatrix::zeros(0, ell),
            extra_b: DVector::zeros(0),
            n_a: ell,
            n_sigma: 0,
            affine,
        };
        match reg {
            Regularizer::Quadratic { lambda } => out.s = DMatrix::identity(ell, ell) * *lambda,
            Regularizer::ProjectionPerp { lambda } => out.s = linalg::projectors(&data.z(), tol).pi_perp * *lambda,
            Regularizer::ProjectionPar { lambda } => out.s = linalg::projectors(&data.z(), tol).pi * *lambda,
            Regularizer::MixedProjection { l2, l3 } => {
                let pp = linalg::projectors(&data.z(), tol);
                out.s = pp.pi * *l2 + pp.pi_perp * *l3;
            }
            Regularizer::OffsetQuadratic { lambda, a_bar } => {
                if affine {
                    return Err(DpcError::InvalidParameter(
                        "offset regularization is not combined with the affine formulation".into(),
                    ));
                }
                out.s = DMatrix::identity(ell, ell) * *lambda;
                out.lin = a_bar * (-2.0 * lambda);
                out.constant = lambda * a_bar.norm_squared();
            }
            Regularizer::GammaDdpc { l2, l3, gamma3_zero } => {
                let f = linalg::lq_decompose(&data, tol)?;
                let q2 = f.q_block(1);
                let q3 = f.q_block(2);
                out.s = q2.transpose() * &q2 * *l2;
                if *gamma3_zero {
                    out.extra_b = DVector::zeros(q3.nrows());
                    out.extra_a = q3;
                } else {
                    out.s += q3.transpose() * &q3 * *l3;
                }
            }
            Regularizer::SlackQuadratic { lambda, lambda_sigma } => {
                if affine {
                    return Err(DpcError::InvalidParameter(
                        "slack regularization is not combined with the affine formulation".into(),
                    ));
                }
                let rows = data.layout().slack_rows();
                let k = rows.len();
                let mut sel = DMatrix::zeros(data.rows(), k);
                for (j, r) in rows.enumerate() {
                    sel[(r, j)] = -1.0;
                }
                out.generator = linalg::hstack(&[&data.d(), &sel]);
                out.s = linalg::block_diag(&[
                    &(DMatrix::identity(ell, ell) * *lambda),
                    &(DMatrix::identity(k, k) * *lambda_sigma),
                ]);
                out.lin = DVector::zeros(ell + k);
                out.extra_a = DMatrix::zeros(0, ell + k);
                out.n_sigma = k;
            }
            Regularizer::GeneralWeighted { s } => {
                if affine {
                    return Err(DpcError::InvalidParameter(
                        "the general weighted regularizer acts on the raw generator only".into(),
                    ));
                }
                out.s = linalg::symmetrize(s);
            }
        }
        Ok(out)
    }

    pub fn n_vars(&self) -> usize {
        self.n_a + self.n_sigma
    }

    pub fn value(&self, v: &DVector<f64>) -> f64 {
        (v.transpose() * &self.s * v)[(0, 0)] + self.lin.dot(v) + self.constant
    }

    /// Stacked trajectory target for `w` (with the leading one in affine mode).
    pub fn target(&self, w: &TrajectoryTuple) -> DVector<f64> {
        let s = w.stacked();
        if self.affine {
            let mut out = DVector::zeros(s.len() + 1);
            out[0] = 1.0;
            out.rows_mut(1, s.len()).copy_from(&s);
            out
        } else {
            s
        }
    }
}

/// Result of the direct minimization over generators.
#[derive(Debug, Clone, Serialize)]
pub struct BruteForceCost {
    pub cost: f64,
    #[serde(with = "vector_json")]
    pub a: DVector<f64>,
    #[serde(with = "vector_json")]
    pub sigma: DVector<f64>,
    pub nonunique: bool,
    pub stationarity_residual: f64,
    pub feasibility_residual: f64,
}

/// `min h(a)` subject to `D a = w` (and `1^T a = 1` when `affine`), solved
/// exactly as an equality-constrained QP.
pub fn brute_force_cost(
    reg: &Regularizer,
    d: &DataMatrix,
    w: &TrajectoryTuple,
    affine: bool,
) -> Result<BruteForceCost> {
    brute_force_cost_tol(reg, d, w, affine, linalg::DEFAULT_TOL)
}

pub fn brute_force_cost_tol(
    reg: &Regularizer,
    d: &DataMatrix,
    w: &TrajectoryTuple,
    affine: bool,
    tol: f64,
) -> Result<BruteForceCost> {
    d.check_tuple(w)?;
    let qp = RegularizerQp::new(reg, d, affine, tol)?;
    let target = qp.target(w);
    let gen = &qp.generator;
    let ls = linalg::pinv(gen, tol) * &target;
    let resid = (gen * &ls - &target).norm();
    if resid > FEASIBILITY_TOL * (1.0 + target.norm()) {
        return Err(DpcError::Infeasible {
            what: "trajectory is not in the image of the data matrix".into(),
            residual: resid,
        });
    }
    let aeq = linalg::vstack(&[gen, &qp.extra_a]);
    let beq = linalg::vcat(&[&target, &qp.extra_b]);
    let sol = linalg::solve_kkt(&(&qp.s * 2.0), &qp.lin, &aeq, &beq, tol)?;
    Ok(BruteForceCost {
        cost: qp.value(&sol.x),
        a: sol.x.rows(0, qp.n_a).into_owned(),
        sigma: sol.x.rows(qp.n_a, qp.n_sigma).into_owned(),
        nonunique: sol.nonunique,
        stationarity_residual: sol.stationarity_residual,
        feasibility_residual: sol.feasibility_residual,
    })
}

/// LQ coordinates of a trajectory.
#[derive(Debug, Clone)]
pub struct GammaSplit {
    pub gamma1: DVector<f64>,
    pub gamma2: DVector<f64>,
    pub gamma3: DVector<f64>,
    pub pseudoinverse_used: bool,
}

fn lower_solve(
    l: &DMatrix<f64>,
    singular: bool,
    allow_pinv: bool,
    rhs: &DVector<f64>,
    what: &str,
) -> Result<DVector<f64>> {
    if l.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    if singular {
        if !allow_pinv {
            return Err(DpcError::Singular(format!("diagonal LQ block {what}")));
        }
        return Ok(linalg::pinv(l, linalg::DEFAULT_TOL) * rhs);
    }
    l.solve_lower_triangular(rhs)
        .ok_or_else(|| DpcError::Singular(format!("diagonal LQ block {what}")))
}

/// Block forward substitution `gamma = L^{-1} w` on the LQ factors of `D`.
pub fn gamma_from_trajectory(f: &LqFactors, w: &TrajectoryTuple, allow_pinv: bool) -> Result<GammaSplit> {
    if f.blocks.len() != 3 {
        return Err(DpcError::InvalidParameter(
            "LQ factors must have three row blocks".into(),
        ));
    }
    check_dim("xi length", f.blocks[0], w.xi.len())?;
    check_dim("u length", f.blocks[1], w.u.len())?;
    check_dim("y length", f.blocks[2], w.y.len())?;
    let sing = &f.singular_blocks;
    let g1 = lower_solve(&f.l_block(0, 0), sing[0], allow_pinv, &w.xi, "L11")?;
    let g2 = lower_solve(
        &f.l_block(1, 1),
        sing[1],
        allow_pinv,
        &(&w.u - f.l_block(1, 0) * &g1),
        "L22",
    )?;
    let r3 = &w.y - f.l_block(2, 0) * &g1 - f.l_block(2, 1) * &g2;
    let g3 = lower_solve(&f.l_block(2, 2), sing[2], allow_pinv, &r3, "L33")?;
    Ok(GammaSplit {
        gamma1: g1,
        gamma2: g2,
        gamma3: g3,
        pseudoinverse_used: f.any_singular(),
    })
}

/// Bookkeeping of the slack augmentation.
#[derive(Debug, Clone, Serialize)]
pub struct SlackMap {
    /// Scale `sqrt(lambda / lambda_sigma)` of the artificial columns.
    pub scale: f64,
    /// Rows of `W` the slack acts on.
    pub rows: Vec<usize>,
    pub original_ell: usize,
}

impl SlackMap {
    /// Slack `sigma` from the artificial part of the augmented generator.
    pub fn sigma(&self, a_aug: &DVector<f64>) -> DVector<f64> {
        a_aug.rows(self.original_ell, self.rows.len()) * self.scale
    }
}

/// Append columns `-sqrt(lambda/lambda_sigma) e_r` for every output row `r`
/// of `W`, so that `lambda |a_aug|^2` on the result equals
/// `lambda |a|^2 + lambda_sigma |sigma|^2` on the original problem.
pub fn slack_augment(d: &DataMatrix, lambda: f64, lambda_sigma: f64) -> Result<(DataMatrix, SlackMap)> {
    if !(lambda > 0.0 && lambda_sigma > 0.0) {
        return Err(DpcError::InvalidParameter(format!(
            "slack weights must be positive, got lambda={lambda}, lambda_sigma={lambda_sigma}"
        )));
    }
    if d.has_ones_row() {
        return Err(DpcError::InvalidParameter("slack augmentation expects raw data".into()));
    }
    let scale = (lambda / lambda_sigma).sqrt();
    let rows: Vec<usize> = d.layout().slack_rows().collect();
    let k = rows.len();
    let mut w = DMatrix::zeros(d.xi_dim(), k);
    for (j, &r) in rows.iter().enumerate() {
        w[(r, j)] = -scale;
    }
    let aug = d.append_columns(&w, &DMatrix::zeros(d.u_dim(), k), &DMatrix::zeros(d.y_dim(), k))?;
    Ok((
        aug,
        SlackMap {
            scale,
            rows,
            original_ell: d.ell(),
        },
    ))
}

/// Weights for a data set with a different number of columns:
/// `lambda_new = (ell_new / ell_old) lambda_old`.
pub fn rescale_weights(lambdas: &[f64], ell_old: usize, ell_new: usize) -> Result<Vec<f64>> {
    if ell_old == 0 || ell_new == 0 {
        return Err(DpcError::InvalidParameter("column counts must be at least one".into()));
    }
    let factor = ell_new as f64 / ell_old as f64;
    Ok(lambdas.iter().map(|l| l * factor).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campaign::{random_data, InstanceSpec};
    use crate::data::{sample_state_columns, Layout, SystemModel};
    use crate::linalg::DEFAULT_TOL;
    use crate::predictors::{fit_als, offset_predictor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tuple(d: &DataMatrix, rng: &mut ChaCha8Rng) -> TrajectoryTuple {
        let v = DVector::from_fn(d.rows(), |_, _| rng.random_range(-1.0..1.0));
        TrajectoryTuple::from_stacked(&v, d.xi_dim(), d.u_dim())
    }

    fn full_rank(seed: u64) -> DataMatrix {
        random_data(&InstanceSpec::default(), seed).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + b.abs())
    }

    #[test]
    fn zero_trajectory_costs_nothing() {
        let d = full_rank(1);
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let w = TrajectoryTuple::zeros(d.xi_dim(), d.u_dim(), d.y_dim());
        for reg in [
            Regularizer::Quadratic { lambda: 3.0 },
            Regularizer::ProjectionPerp { lambda: 3.0 },
            Regularizer::MixedProjection { l2: 0.1, l3: 100.0 },
            Regularizer::OffsetQuadratic {
                lambda: 2.0,
                a_bar: DVector::zeros(d.ell()),
            },
            Regularizer::GammaDdpc {
                l2: 1.0,
                l3: 2.0,
                gamma3_zero: true,
            },
            Regularizer::SlackQuadratic {
                lambda: 1.0,
                lambda_sigma: 5.0,
            },
        ] {
            assert_eq!(trajectory_cost(&reg, &p, &w).unwrap().total, 0.0, "{}", reg.name());
        }
    }

    #[test]
    fn quadratic_matches_gram_inverse_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let d = full_rank(seed);
            let p = fit_ls(&d, DEFAULT_TOL).unwrap();
            let w = random_tuple(&d, &mut rng);
            let dm = d.d();
            let ddt_inv = (&dm * dm.transpose()).try_inverse().unwrap();
            let v = w.stacked();
            let oracle = 2.5 * (v.transpose() * ddt_inv * &v)[(0, 0)];
            let got = trajectory_cost(&Regularizer::Quadratic { lambda: 2.5 }, &p, &w).unwrap();
            assert!(rel(got.total, oracle) < 1e-8, "{} vs {oracle}", got.total);
            assert!((got.total - (got.term_y + got.term_u + got.term_xi)).abs() < 1e-12);
        }
    }

    #[test]
    fn projections_sum_to_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = full_rank(3);
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let w = random_tuple(&d, &mut rng);
        let q = trajectory_cost(&Regularizer::Quadratic { lambda: 4.0 }, &p, &w).unwrap();
        let a = trajectory_cost(&Regularizer::ProjectionPerp { lambda: 4.0 }, &p, &w).unwrap();
        let b = trajectory_cost(&Regularizer::ProjectionPar { lambda: 4.0 }, &p, &w).unwrap();
        assert!(rel(a.total + b.total, q.total) < 1e-12);
    }

    #[test]
    fn offset_with_zero_bar_equals_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = full_rank(4);
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let w = random_tuple(&d, &mut rng);
        let q = trajectory_cost(&Regularizer::Quadratic { lambda: 1.5 }, &p, &w).unwrap();
        let o = trajectory_cost(
            &Regularizer::OffsetQuadratic {
                lambda: 1.5,
                a_bar: DVector::zeros(d.ell()),
            },
            &p,
            &w,
        )
        .unwrap();
        assert_eq!((q.term_y, q.term_u, q.term_xi), (o.term_y, o.term_u, o.term_xi));
    }

    #[test]
    fn offset_delta_and_expanded_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for seed in 0..10 {
            let d = full_rank(100 + seed);
            let p = fit_ls(&d, DEFAULT_TOL).unwrap();
            let a_bar = DVector::from_fn(d.ell(), |_, _| rng.random_range(-0.3..0.3));
            let w = random_tuple(&d, &mut rng);
            let delta = trajectory_cost(
                &Regularizer::OffsetQuadratic {
                    lambda: 0.7,
                    a_bar: a_bar.clone(),
                },
                &p,
                &w,
            )
            .unwrap()
            .total;
            let op = offset_predictor(&p, &a_bar).unwrap();
            let expanded = offset_expanded_cost(&op, 0.7, &w).unwrap();
            assert!((delta - expanded).abs() <= 1e-10 * (1.0 + delta), "{delta} {expanded}");
        }
    }

    #[test]
    fn offset_neutral_when_bar_on_predictor() {
        // Noiseless data: every offset trajectory lies on the predictor.
        let s = sample_state_columns(&SystemModel::scalar_example(), 12, 2, 3).unwrap();
        let d = s.exact;
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let a_bar = DVector::from_fn(12, |i, _| 0.1 * i as f64);
        let op = offset_predictor(&p, &a_bar).unwrap();
        assert!(op.c_y.amax() < 1e-12);
        let xi = DVector::from_element(1, 0.4);
        let u = DVector::from_vec(vec![0.2, -0.1]);
        let y = p.predict_y(&xi, &u).unwrap();
        let w = TrajectoryTuple::new(xi, u, y);
        let reg_o = Regularizer::OffsetQuadratic { lambda: 1.0, a_bar };
        let o = trajectory_cost(&reg_o, &p, &w).unwrap();
        let q = trajectory_cost(&Regularizer::Quadratic { lambda: 1.0 }, &p, &w).unwrap();
        assert_eq!(o.term_y, q.term_y);
    }

    #[test]
    fn brute_force_column_bound_and_min_norm() {
        let d = full_rank(9);
        let reg = Regularizer::Quadratic { lambda: 1.0 };
        for j in [0, 5, d.ell() - 1] {
            let bf = brute_force_cost(&reg, &d, &d.column(j), false).unwrap();
            assert!(bf.cost <= 1.0 + 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = random_tuple(&d, &mut rng);
        let bf = brute_force_cost(&reg, &d, &w, false).unwrap();
        let a_min = linalg::pinv(&d.d(), DEFAULT_TOL) * w.stacked();
        assert!((&bf.a - &a_min).amax() < 1e-10);
        assert!(rel(bf.cost, a_min.norm_squared()) < 1e-10);
    }

    #[test]
    fn brute_force_rejects_infeasible() {
        let s = sample_state_columns(&SystemModel::scalar_example(), 10, 1, 3).unwrap();
        let w = TrajectoryTuple::new(
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 0.0),
        );
        let err = brute_force_cost(&Regularizer::Quadratic { lambda: 1.0 }, &s.exact, &w, false).unwrap_err();
        assert!(matches!(err, DpcError::Infeasible { residual, .. } if residual > 0.1));
        let p = fit_ls(&s.exact, DEFAULT_TOL).unwrap();
        assert!(matches!(
            trajectory_cost(&Regularizer::Quadratic { lambda: 1.0 }, &p, &w),
            Err(DpcError::Infeasible { .. })
        ));
    }

    #[test]
    fn rank_deficient_closed_form_matches_brute_force() {
        let s = sample_state_columns(&SystemModel::scalar_example(), 15, 1, 6).unwrap();
        let d = s.exact;
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let w = TrajectoryTuple::new(
            DVector::from_element(1, 0.3),
            DVector::from_element(1, -0.8),
            DVector::from_element(1, 2.0 * 0.3 + 0.5 * 0.8),
        );
        for reg in [
            Regularizer::Quadratic { lambda: 2.0 },
            Regularizer::ProjectionPerp { lambda: 2.0 },
            Regularizer::MixedProjection { l2: 0.5, l3: 7.0 },
        ] {
            let cf = trajectory_cost(&reg, &p, &w).unwrap();
            let bf = brute_force_cost(&reg, &d, &w, false).unwrap();
            assert!(
                rel(cf.total, bf.cost) < 1e-8,
                "{}: {} vs {}",
                reg.name(),
                cf.total,
                bf.cost
            );
            assert!(cf.pseudoinverse_used);
        }
    }

    #[test]
    fn gamma_identities_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let d = full_rank(12);
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let f = linalg::lq_decompose(&d, DEFAULT_TOL).unwrap();
        let w = random_tuple(&d, &mut rng);
        let g = gamma_from_trajectory(&f, &w, false).unwrap();
        let (dy, du) = p.deviations(&w).unwrap();
        let t1 = linalg::weighted_sqnorm(&w.xi, &p.wwt.weight).unwrap();
        let t2 = linalg::weighted_sqnorm(&du, &p.r_reg.weight).unwrap();
        let t3 = linalg::weighted_sqnorm(&dy, &p.q_reg.weight).unwrap();
        assert!(rel(g.gamma1.norm_squared(), t1) < 1e-9);
        assert!(rel(g.gamma2.norm_squared(), t2) < 1e-9);
        assert!(rel(g.gamma3.norm_squared(), t3) < 1e-9);
        let zero = gamma_from_trajectory(&f, &TrajectoryTuple::zeros(d.xi_dim(), d.u_dim(), d.y_dim()), false).unwrap();
        assert_eq!(zero.gamma3.amax(), 0.0);
    }

    #[test]
    fn gamma_singular_block_needs_fallback() {
        let s = sample_state_columns(&SystemModel::scalar_example(), 10, 1, 2).unwrap();
        let f = linalg::lq_decompose(&s.exact, DEFAULT_TOL).unwrap();
        assert!(f.singular_blocks[2]);
        let w = s.exact.column(0);
        assert!(matches!(
            gamma_from_trajectory(&f, &w, false),
            Err(DpcError::Singular(_))
        ));
        let g = gamma_from_trajectory(&f, &w, true).unwrap();
        assert!(g.pseudoinverse_used);
    }

    #[test]
    fn slack_augment_columns() {
        let d = full_rank(2);
        let (aug, map) = slack_augment(&d, 2.0, 2.0).unwrap();
        assert_eq!(map.scale, 1.0);
        assert_eq!(aug.ell(), d.ell() + map.rows.len());
        for (j, &r) in map.rows.iter().enumerate() {
            let col = aug.d().column(d.ell() + j).into_owned();
            assert_eq!(col[r], -1.0);
            assert_eq!(col.iter().filter(|&&x| x != 0.0).count(), 1);
        }
        assert!(slack_augment(&d, 0.0, 1.0).is_err());
    }

    #[test]
    fn slack_closed_form_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = random_data(
            &InstanceSpec {
                io: true,
                ..InstanceSpec::default()
            },
            4,
        )
        .unwrap();
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let w = random_tuple(&d, &mut rng);
        let reg = Regularizer::SlackQuadratic {
            lambda: 3.0,
            lambda_sigma: 0.5,
        };
        let cf = trajectory_cost(&reg, &p, &w).unwrap();
        let bf = brute_force_cost(&reg, &d, &w, false).unwrap();
        assert!(rel(cf.total, bf.cost) < 1e-8);
        assert_eq!(bf.sigma.len(), d.layout().slack_rows().len());
    }

    #[test]
    fn affine_closed_form_matches_constrained_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let d = full_rank(7);
        let p = fit_als(&d, DEFAULT_TOL).unwrap();
        let w = random_tuple(&d, &mut rng);
        let reg = Regularizer::Quadratic { lambda: 1.0 };
        let cf = affine_trajectory_cost(&reg, &p, &w).unwrap();
        let bf = brute_force_cost(&reg, &d, &w, true).unwrap();
        assert!(rel(cf.total, bf.cost) < 1e-8);
        assert!((bf.a.sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn general_weighted_has_no_closed_form() {
        let d = full_rank(1);
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let reg = Regularizer::GeneralWeighted {
            s: DMatrix::identity(d.ell(), d.ell()),
        };
        let w = d.column(0);
        assert!(matches!(
            trajectory_cost(&reg, &p, &w),
            Err(DpcError::ClosedFormUnavailable(_))
        ));
        let bf = brute_force_cost(&reg, &d, &w, false).unwrap();
        let q = brute_force_cost(&Regularizer::Quadratic { lambda: 1.0 }, &d, &w, false).unwrap();
        assert!(rel(bf.cost, q.cost) < 1e-10);
        let bad = Regularizer::GeneralWeighted {
            s: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
        };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn perp_cost_ignores_shift_of_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = full_rank(6);
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let w = random_tuple(&d, &mut rng);
        let (dy, _) = p.deviations(&w).unwrap();
        let other = random_tuple(&d, &mut rng);
        let y2 = p.predict_y(&other.xi, &other.u).unwrap() + &dy;
        let w2 = TrajectoryTuple::new(other.xi, other.u, y2);
        let reg = Regularizer::ProjectionPerp { lambda: 5.0 };
        let a = trajectory_cost(&reg, &p, &w).unwrap();
        let b = trajectory_cost(&reg, &p, &w2).unwrap();
        assert!(rel(a.term_y, b.term_y) < 1e-12);
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_weights(&[2.0, 0.0], 100, 300).unwrap(), vec![6.0, 0.0]);
        assert_eq!(rescale_weights(&[1.5], 7, 7).unwrap(), vec![1.5]);
        assert!(rescale_weights(&[1.0], 0, 3).is_err());
    }

    #[test]
    fn parse_specs() {
        let base = Path::new(".");
        assert_eq!(
            Regularizer::parse("quadratic:lambda=10", base).unwrap(),
            Regularizer::Quadratic { lambda: 10.0 }
        );
        assert_eq!(
            Regularizer::parse("mixed:l2=0.1,l3=1e6", base).unwrap(),
            Regularizer::MixedProjection { l2: 0.1, l3: 1e6 }
        );
        assert!(Regularizer::parse("mixed:l2=0.1", base).is_err());
        assert!(Regularizer::parse("quadratic:lambda=1,bogus=2", base).is_err());
        assert!(Regularizer::parse("l1:lambda=1", base).is_err());
        let g = Regularizer::parse("gamma:l2=1,g3zero=true", base).unwrap();
        assert_eq!(
            g,
            Regularizer::GammaDdpc {
                l2: 1.0,
                l3: 0.0,
                gamma3_zero: true
            }
        );
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "0.5\n0.25\n").unwrap();
        let o = Regularizer::parse("offset:lambda=1,abar=@a.csv", dir.path()).unwrap();
        assert_eq!(
            o,
            Regularizer::OffsetQuadratic {
                lambda: 1.0,
                a_bar: DVector::from_vec(vec![0.5, 0.25])
            }
        );
        for reg in [
            o,
            g,
            Regularizer::SlackQuadratic {
                lambda: 2.0,
                lambda_sigma: 1e3,
            },
            Regularizer::GeneralWeighted {
                s: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
            },
        ] {
            assert_eq!(Regularizer::parse(&reg.to_spec(), base).unwrap(), reg);
        }
    }

    #[test]
    fn layout_slack_rows_io() {
        let l = Layout::io(2, 1, 3, 2);
        assert_eq!(l.slack_rows(), 6..9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn split_identity_on_optimizer(seed in 0u64..10_000, l2 in 0.01f64..10.0, l3 in 0.01f64..10.0) {
                let d = full_rank(seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                let w = random_tuple(&d, &mut rng);
                let bf = brute_force_cost(&Regularizer::MixedProjection { l2, l3 }, &d, &w, false).unwrap();
                let pp = linalg::projectors(&d.z(), DEFAULT_TOL);
                let a = &bf.a;
                let lhs = a.norm_squared();
                let rhs = (&pp.pi * a).norm_squared() + (&pp.pi_perp * a).norm_squared();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs));
            }

            #[test]
            fn mixed_closed_form_matches_oracle(seed in 0u64..10_000, l2 in 0.0f64..5.0, l3 in 0.0f64..1e4) {
                let d = full_rank(seed);
                let p = fit_ls(&d, DEFAULT_TOL).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let w = random_tuple(&d, &mut rng);
                let reg = Regularizer::MixedProjection { l2, l3 };
                let cf = trajectory_cost(&reg, &p, &w).unwrap().total;
                let bf = brute_force_cost(&reg, &d, &w, false).unwrap().cost;
                prop_assert!((cf - bf).abs() <= 1e-7 * (1.0 + bf));
            }
        }
    }
}
