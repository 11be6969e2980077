//! Least-squares multistep predictors `y ~ G z`, `u ~ K xi` and their
//! residual-based weights, in linear, affine and offset-shifted form.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{DataMatrix, TrajectoryTuple};
use crate::error::{check_dim, Result};
use crate::io::{matrix_json, vector_json};
use crate::linalg::{self, gram_pinv, GramInverse, Svd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorOrigin {
    Raw,
    /// Fitted on `[1^T; W]`-augmented data.
    Affine,
    /// Fitted on slack-augmented data.
    Slack,
}

/// Weight `(E E^T)^+` together with the Gram matrix it inverts.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualWeight {
    #[serde(with = "matrix_json")]
    pub gram: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub weight: DMatrix<f64>,
    pub rank: usize,
    /// True when the Gram matrix is singular and the pseudoinverse is used.
    pub singular: bool,
}

impl ResidualWeight {
    fn from_gram(g: GramInverse) -> Self {
        let dim = g.gram.nrows();
        ResidualWeight {
            singular: g.rank < dim,
            gram: g.gram,
            weight: g.inverse,
            rank: g.rank,
        }
    }

    /// Eigenvalues of the weight, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = linalg::symmetrize(&self.weight)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Projector onto the directions the Gram matrix does not span. A
    /// deviation with a component here cannot be generated by the data.
    pub fn null_projector(&self) -> DMatrix<f64> {
        let n = self.gram.nrows();
        let range = linalg::symmetrize(&(&self.gram * &self.weight));
        DMatrix::identity(n, n) - range
    }
}

/// Fitted maps `G = Y Z^+` and `K = U W^+` with residual weights.
#[derive(Debug, Clone, Serialize)]
pub struct LeastSquaresPredictor {
    #[serde(skip)]
    data: DataMatrix,
    #[serde(with = "matrix_json")]
    pub g: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub k: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub e_y: DMatrix<f64>,
    #[serde(with = "matrix_json")]
    pub e_u: DMatrix<f64>,
    /// `Q_reg = (E_y E_y^T)^+`.
    pub q_reg: ResidualWeight,
    /// `R_reg = (E_u E_u^T)^+`.
    pub r_reg: ResidualWeight,
    /// `(W W^T)^+`.
    pub wwt: ResidualWeight,
    pub rank_z: usize,
    pub rank_w: usize,
    /// True when any inverse above had to be replaced by a pseudoinverse.
    pub pseudoinverse_used: bool,
    pub tolerance: f64,
    pub origin: PredictorOrigin,
}

/// Fit with relative singular-value tolerance `tol`.
///
/// The cutoff for the residual Gram matrices is `tol * sigma_max(D)`, so
/// residuals that vanish up to rounding (exact LTI data) give `Q_reg = 0`
/// with the singular flag set.
pub fn fit_ls(d: &DataMatrix, tol: f64) -> Result<LeastSquaresPredictor> {
    fit_with_origin(d, tol, PredictorOrigin::Raw)
}

pub(crate) fn fit_with_origin(d: &DataMatrix, tol: f64, origin: PredictorOrigin) -> Result<LeastSquaresPredictor> {
    if !(tol > 0.0) {
        return Err(crate::error::DpcError::InvalidParameter(
            "tolerance must be positive".into(),
        ));
    }
    let z = d.z();
    let w = d.w();
    let z_pinv = linalg::pinv(&z, tol);
    let w_pinv = linalg::pinv(w, tol);
    let g = d.y() * &z_pinv;
    let k = d.u() * &w_pinv;
    let e_y = d.y() - &g * &z;
    let e_u = d.u() - &k * w;
    let cutoff = tol * Svd::new(&d.d()).max_singular_value();
    let q_reg = ResidualWeight::from_gram(gram_pinv(&e_y, cutoff));
    let r_reg = ResidualWeight::from_gram(gram_pinv(&e_u, cutoff));
    let w_svd = Svd::new(w);
    let wwt = ResidualWeight::from_gram(gram_pinv(w, w_svd.relative_cutoff(tol)));
    let rank_z = linalg::numerical_rank(&z, tol);
    let rank_w = wwt.rank;
    let pseudoinverse_used = q_reg.singular || r_reg.singular || wwt.singular || rank_z < z.nrows();
    Ok(LeastSquaresPredictor {
        data: d.clone(),
        g,
        k,
        e_y,
        e_u,
        q_reg,
        r_reg,
        wwt,
        rank_z,
        rank_w,
        pseudoinverse_used,
        tolerance: tol,
        origin,
    })
}

impl LeastSquaresPredictor {
    pub fn data(&self) -> &DataMatrix {
        &self.data
    }

    pub fn xi_dim(&self) -> usize {
        self.k.ncols()
    }
    pub fn u_dim(&self) -> usize {
        self.k.nrows()
    }
    pub fn y_dim(&self) -> usize {
        self.g.nrows()
    }

    /// Columns of `G` acting on `xi`.
    pub fn g_xi(&self) -> DMatrix<f64> {
        self.g.columns(0, self.xi_dim()).into_owned()
    }

    /// Columns of `G` acting on `u`.
    pub fn g_u(&self) -> DMatrix<f64> {
        self.g.columns(self.xi_dim(), self.u_dim()).into_owned()
    }

    /// `y_LS = G [xi; u]`.
    pub fn predict_y(&self, xi: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("xi length", self.xi_dim(), xi.len())?;
        check_dim("u length", self.u_dim(), u.len())?;
        Ok(self.g_xi() * xi + self.g_u() * u)
    }

    /// `u_LS = K xi`.
    pub fn predict_u(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("xi length", self.xi_dim(), xi.len())?;
        Ok(&self.k * xi)
    }

    /// Residuals `(y - y_LS, u - u_LS)` of a trajectory.
    pub fn deviations(&self, w: &TrajectoryTuple) -> Result<(DVector<f64>, DVector<f64>)> {
        let y_hat = self.predict_y(&w.xi, &w.u)?;
        check_dim("y length", self.y_dim(), w.y.len())?;
        Ok((&w.y - y_hat, &w.u - self.predict_u(&w.xi)?))
    }

    /// Copy with `Q_reg` multiplied by `factor`. Used to inject faults into
    /// verification campaigns.
    pub fn with_scaled_q_reg(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.q_reg.weight *= factor;
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Affine least-squares fit on `[1^T; W]`-augmented data.
///
/// The ones row is the first row of the augmented `W`, so the first column
/// of the augmented maps is the constant offset.
#[derive(Debug, Clone, Serialize)]
pub struct AffineLeastSquaresPredictor {
    /// Linear fit of the augmented data; its `q_reg`, `r_reg`, `wwt` are the
    /// checked weights.
    pub inner: LeastSquaresPredictor,
    #[serde(with = "matrix_json")]
    pub g_lin: DMatrix<f64>,
    #[serde(with = "vector_json")]
    pub g_off: DVector<f64>,
    #[serde(with = "matrix_json")]
    pub k_lin: DMatrix<f64>,
    #[serde(with = "vector_json")]
    pub k_off: DVector<f64>,
}

pub fn fit_als(d: &DataMatrix, tol: f64) -> Result<AffineLeastSquaresPredictor> {
    let aug = d.with_ones_row()?;
    let inner = fit_with_origin(&aug, tol, PredictorOrigin::Affine)?;
    let g_cols = inner.g.ncols();
    let k_cols = inner.k.ncols();
    Ok(AffineLeastSquaresPredictor {
        g_off: inner.g.column(0).into_owned(),
        g_lin: inner.g.columns(1, g_cols - 1).into_owned(),
        k_off: inner.k.column(0).into_owned(),
        k_lin: inner.k.columns(1, k_cols - 1).into_owned(),
        inner,
    })
}

impl AffineLeastSquaresPredictor {
    pub fn xi_dim(&self) -> usize {
        self.k_lin.ncols()
    }

    pub fn predict_y(&self, xi: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.predict_y(&augment_xi(xi), u)
    }

    pub fn predict_u(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.predict_u(&augment_xi(xi))
    }
}

/// `(1, xi)`.
pub fn augment_xi(xi: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(xi.len() + 1);
    out[0] = 1.0;
    out.rows_mut(1, xi.len()).copy_from(xi);
    out
}

/// `(1, xi, u, y)` as a tuple for augmented data.
pub fn augment_tuple(w: &TrajectoryTuple) -> TrajectoryTuple {
    TrajectoryTuple::new(augment_xi(&w.xi), w.u.clone(), w.y.clone())
}

/// Least-squares predictor shifted to pass through an offset trajectory
/// `w_bar = D a_bar`.
#[derive(Debug, Clone, Serialize)]
pub struct OffsetPredictor {
    pub base: LeastSquaresPredictor,
    #[serde(with = "vector_json")]
    pub a_bar: DVector<f64>,
    #[serde(with = "vector_json")]
    pub xi_bar: DVector<f64>,
    #[serde(with = "vector_json")]
    pub u_bar: DVector<f64>,
    #[serde(with = "vector_json")]
    pub y_bar: DVector<f64>,
    /// `y_bar - G z_bar`.
    #[serde(with = "vector_json")]
    pub c_y: DVector<f64>,
    /// `u_bar - K xi_bar`.
    #[serde(with = "vector_json")]
    pub c_u: DVector<f64>,
}

pub fn offset_predictor(p: &LeastSquaresPredictor, a_bar: &DVector<f64>) -> Result<OffsetPredictor> {
    let w_bar = p.data().generate(a_bar)?;
    let (c_y, c_u) = p.deviations(&w_bar)?;
    Ok(OffsetPredictor {
        base: p.clone(),
        a_bar: a_bar.clone(),
        xi_bar: w_bar.xi,
        u_bar: w_bar.u,
        y_bar: w_bar.y,
        c_y,
        c_u,
    })
}

impl OffsetPredictor {
    /// `G z + c_y`.
    pub fn predict_y(&self, xi: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.base.predict_y(xi, u)? + &self.c_y)
    }

    pub fn predict_u(&self, xi: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.base.predict_u(xi)? + &self.c_u)
    }

    pub fn offset_trajectory(&self) -> TrajectoryTuple {
        TrajectoryTuple::new(self.xi_bar.clone(), self.u_bar.clone(), self.y_bar.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_state_columns, Layout, SystemModel};
    use crate::fixtures;
    use crate::linalg::DEFAULT_TOL;

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let err = (a - b).amax();
        assert!(err <= tol, "max deviation {err:e} > {tol:e}\n{a}\n{b}");
    }

    #[test]
    fn noiseless_fit_recovers_model() {
        let s = sample_state_columns(&SystemModel::scalar_example(), 50, 1, 3).unwrap();
        let p = fit_ls(&s.exact, DEFAULT_TOL).unwrap();
        assert_close(&p.g, &DMatrix::from_row_slice(1, 2, &[2.0, -0.5]), 1e-12);
        assert!(p.e_y.amax() < 1e-12);
        assert!(p.q_reg.singular && p.q_reg.weight.amax() == 0.0);
        let y = p
            .predict_y(&DVector::from_element(1, 1.0), &DVector::from_element(1, 0.0))
            .unwrap();
        assert!((y[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_outputs_give_zero_map() {
        let s = sample_state_columns(&SystemModel::scalar_example(), 10, 1, 1).unwrap();
        let d = DataMatrix::new(
            s.exact.w().clone(),
            s.exact.u().clone(),
            DMatrix::zeros(1, 10),
            *s.exact.layout(),
        )
        .unwrap();
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        assert_eq!(p.g.amax(), 0.0);
        assert_eq!(p.e_y.amax(), 0.0);
    }

    #[test]
    fn noisy_fixture_matches_normal_equations() {
        let d = fixtures::hankel_nf1().unwrap();
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let z = d.z();
        let zzt = &z * z.transpose();
        let oracle = d.y() * z.transpose() * zzt.try_inverse().unwrap();
        assert_close(&p.g, &oracle, 1e-10);
        assert!((p.g[(0, 0)] - 2.0).abs() < 0.3 && (p.g[(0, 1)] + 0.5).abs() < 0.3);
        assert!(!p.q_reg.singular);
        assert!(p.q_reg.weight[(0, 0)] > 0.0);
    }

    #[test]
    fn normal_equations_hold() {
        let s = sample_state_columns(&SystemModel::scalar_example().with_noise(0.1).unwrap(), 30, 2, 7).unwrap();
        let d = &s.measured;
        let p = fit_ls(d, DEFAULT_TOL).unwrap();
        let z = d.z();
        assert!((&p.e_y * z.transpose()).norm() <= 1e-8 * d.y().norm() * z.norm());
        assert!((&p.e_u * d.w().transpose()).norm() <= 1e-8 * d.u().norm() * d.w().norm());
        let eig = p.q_reg.weight.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn single_column_controller_is_rank_one() {
        let w = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let u = DMatrix::from_row_slice(1, 1, &[3.0]);
        let y = DMatrix::from_row_slice(1, 1, &[4.0]);
        let d = DataMatrix::new(w.clone(), u.clone(), y, Layout::io(1, 1, 1, 1)).unwrap();
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let oracle = &u * (w.transpose() / 5.0);
        assert_close(&p.k, &oracle, 1e-14);
        assert_eq!(linalg::numerical_rank(&p.k, DEFAULT_TOL), 1);
        let xi = DVector::from_vec(vec![0.3, -0.7]);
        let a = p.predict_u(&(xi.clone() * 2.5)).unwrap();
        let b = p.predict_u(&xi).unwrap() * 2.5;
        assert!((a - b).amax() < 1e-14);
        assert!(p.predict_u(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn affine_fit_recovers_offset() {
        let mut model = SystemModel::scalar_example();
        model.e = DVector::from_element(1, 0.3);
        let s = sample_state_columns(&model, 40, 1, 5).unwrap();
        let p = fit_als(&s.exact, DEFAULT_TOL).unwrap();
        assert!((p.g_off[0] - 0.3).abs() < 1e-12);
        assert_close(&p.g_lin, &DMatrix::from_row_slice(1, 2, &[2.0, -0.5]), 1e-12);
        assert!(p.inner.e_y.amax() < 1e-12);
    }

    #[test]
    fn affine_fit_on_constant_outputs() {
        let s = sample_state_columns(&SystemModel::scalar_example(), 20, 1, 11).unwrap();
        let d = DataMatrix::new(
            s.exact.w().clone(),
            s.exact.u().clone(),
            DMatrix::from_element(1, 20, 1.75),
            *s.exact.layout(),
        )
        .unwrap();
        let p = fit_als(&d, DEFAULT_TOL).unwrap();
        assert!((p.g_off[0] - 1.75).abs() < 1e-12);
        assert!(p.g_lin.amax() < 1e-12);
    }

    #[test]
    fn affine_residuals_have_zero_row_sum() {
        let s = sample_state_columns(&SystemModel::scalar_example().with_noise(0.1).unwrap(), 30, 1, 2).unwrap();
        let p = fit_als(&s.measured, DEFAULT_TOL).unwrap();
        assert!(p.inner.e_y.column_sum().amax() < 1e-12);
        assert!(p.inner.e_u.column_sum().amax() < 1e-12);
        // Same numbers as the linear API on the augmented matrix.
        let direct = fit_ls(&s.measured.with_ones_row().unwrap(), DEFAULT_TOL).unwrap();
        assert_eq!(direct.g, p.inner.g);
    }

    #[test]
    fn offset_predictor_identities() {
        let s = sample_state_columns(&SystemModel::scalar_example().with_noise(0.1).unwrap(), 25, 1, 4).unwrap();
        let p = fit_ls(&s.measured, DEFAULT_TOL).unwrap();
        let zero = offset_predictor(&p, &DVector::zeros(25)).unwrap();
        assert_eq!(zero.c_y.amax(), 0.0);
        let mut e3 = DVector::zeros(25);
        e3[3] = 1.0;
        let op = offset_predictor(&p, &e3).unwrap();
        assert!((&op.c_y - p.e_y.column(3)).amax() < 1e-14);
        let y = op.predict_y(&op.xi_bar, &op.u_bar).unwrap();
        assert!((y - &op.y_bar).amax() < 1e-13);
        assert!(offset_predictor(&p, &DVector::zeros(3)).is_err());

        let exact = fit_ls(&s.exact, DEFAULT_TOL).unwrap();
        let a = DVector::from_fn(25, |i, _| (i as f64 * 0.37).sin());
        assert!(offset_predictor(&exact, &a).unwrap().c_y.amax() < 1e-12);
    }

    #[test]
    fn predictor_json_has_row_major_maps() {
        let s = sample_state_columns(&SystemModel::scalar_example(), 10, 1, 1).unwrap();
        let p = fit_ls(&s.exact, DEFAULT_TOL).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(v["g"]["rows"], 1);
        assert_eq!(v["g"]["cols"], 2);
        assert_eq!(v["origin"], "raw");
    }

    #[test]
    fn weight_eigenvalues_ascending() {
        let d = fixtures::cloud(5).unwrap().measured;
        let p = fit_ls(&d, DEFAULT_TOL).unwrap();
        let ev = p.wwt.eigenvalues();
        assert_eq!(ev.len(), 1);
        assert!((ev[0] - p.wwt.weight[(0, 0)]).abs() < 1e-15);
        let ex = fit_ls(&fixtures::cloud(5).unwrap().exact, DEFAULT_TOL).unwrap();
        assert!(ex.q_reg.singular && ex.q_reg.eigenvalues().iter().all(|&e| e == 0.0));
    }
}
