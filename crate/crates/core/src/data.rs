//! Trajectory data: system models, simulation, data-matrix construction and
//! rank diagnostics.
//!
//! Every data column is stacked as `(xi, u, y)`: the initial-condition block
//! first, then the future inputs, then the future outputs. Within a block the
//! samples are time-major, i.e. `(s(0), s(1), ...)` with each `s(k)` a vector.
//! In I/O mode the initial-condition block is itself `(u_p, y_p)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DpcError, Result};
use crate::linalg::{self, vcat, vstack};

/// Discrete-time affine state-space model with optional measurement noise.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// State offset (zero for LTI).
    pub e: DVector<f64>,
    /// Output offset (zero for LTI).
    pub r: DVector<f64>,
    pub noise_std: f64,
}

impl SystemModel {
    /// Noiseless LTI model.
    pub fn lti(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let p = c.nrows();
        Self::new(a, b, c, d, DVector::zeros(n), DVector::zeros(p), 0.0)
    }

    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        e: DVector<f64>,
        r: DVector<f64>,
        noise_std: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        check_dim("A columns", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        let m = b.ncols();
        check_dim("C columns", n, c.ncols())?;
        let p = c.nrows();
        check_dim("D rows", p, d.nrows())?;
        check_dim("D columns", m, d.ncols())?;
        check_dim("e length", n, e.len())?;
        check_dim("r length", p, r.len())?;
        if !(noise_std >= 0.0) {
            return Err(DpcError::InvalidParameter(format!(
                "noise_std must be nonnegative, got {noise_std}"
            )));
        }
        Ok(SystemModel {
            a,
            b,
            c,
            d,
            e,
            r,
            noise_std,
        })
    }

    /// Scalar-state system used throughout the running example:
    /// `x(k+1) = 2 x(k) - 0.5 u(k)` with the state measured directly.
    pub fn scalar_example() -> Self {
        let one = DMatrix::from_element(1, 1, 1.0);
        Self::lti(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, -0.5),
            one,
            DMatrix::zeros(1, 1),
        )
        .expect("consistent dimensions")
    }

    pub fn with_noise(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0) {
            return Err(DpcError::InvalidParameter(format!(
                "noise_std must be nonnegative, got {noise_std}"
            )));
        }
        self.noise_std = noise_std;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_lti(&self) -> bool {
        self.e.iter().all(|&v| v == 0.0) && self.r.iter().all(|&v| v == 0.0)
    }

    pub fn step_state(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.e
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u + &self.r
    }
}

/// Exact and measured trajectories of a simulation run.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// `x(0), ..., x(T)`.
    pub states: Vec<DVector<f64>>,
    /// `y(0), ..., y(T-1)`.
    pub outputs: Vec<DVector<f64>>,
    pub measured_states: Vec<DVector<f64>>,
    pub measured_outputs: Vec<DVector<f64>>,
    pub seed: u64,
}

/// Noise sampler: standard normals from a seeded ChaCha8 stream, scaled by
/// the model's noise level. Samples are always drawn so that runs with and
/// without noise consume the stream identically.
pub(crate) struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub(crate) fn new(seed: u64) -> Self {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn perturb(&mut self, v: &DVector<f64>, std: f64) -> DVector<f64> {
        let mut out = v.clone();
        for x in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x += std * z;
        }
        out
    }

    pub(crate) fn uniform(&mut self, len: usize, lo: f64, hi: f64) -> DVector<f64> {
        DVector::from_fn(len, |_, _| self.rng.random_range(lo..=hi))
    }
}

/// `len` vectors of dimension `dim` with entries uniform on `[lo, hi]`.
pub fn uniform_sequence(dim: usize, len: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<DVector<f64>>> {
    if !(lo <= hi) {
        return Err(DpcError::InvalidParameter(format!(
            "empty sampling interval [{lo}, {hi}]"
        )));
    }
    let mut src = NoiseSource::new(seed);
    Ok((0..len).map(|_| src.uniform(dim, lo, hi)).collect())
}

/// `count` tuples shaped for `layout` with entries uniform on `[-radius, radius]`.
pub fn uniform_tuples(layout: &Layout, count: usize, radius: f64, seed: u64) -> Result<Vec<TrajectoryTuple>> {
    let (xi, u) = (layout.xi_dim(), layout.u_dim());
    let stacked = uniform_sequence(xi + u + layout.y_dim(), count, -radius, radius, seed)?;
    Ok(stacked
        .iter()
        .map(|v| TrajectoryTuple::from_stacked(v, xi, u))
        .collect())
}

/// Run the state recursion from `x0` under `u_seq`.
///
/// Measurement noise (if any) is added to every state, including `x0`, and
/// to every output.
pub fn simulate(model: &SystemModel, x0: &DVector<f64>, u_seq: &[DVector<f64>], rng_seed: u64) -> Result<Simulation> {
    if u_seq.is_empty() {
        return Err(DpcError::EmptyInput("input sequence".into()));
    }
    check_dim("initial state", model.state_dim(), x0.len())?;
    for u in u_seq {
        check_dim("input sample", model.input_dim(), u.len())?;
    }
    let mut noise = NoiseSource::new(rng_seed);
    let mut states = vec![x0.clone()];
    let mut outputs = Vec::with_capacity(u_seq.len());
    let mut measured_states = vec![noise.perturb(x0, model.noise_std)];
    let mut measured_outputs = Vec::with_capacity(u_seq.len());
    let mut x = x0.clone();
    for u in u_seq {
        let y = model.output(&x, u);
        measured_outputs.push(noise.perturb(&y, model.noise_std));
        outputs.push(y);
        x = model.step_state(&x, u);
        measured_states.push(noise.perturb(&x, model.noise_std));
        states.push(x.clone());
    }
    Ok(Simulation {
        states,
        outputs,
        measured_states,
        measured_outputs,
        seed: rng_seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    /// Initial condition is the past `N_p` inputs and outputs.
    Io,
    /// Initial condition is the measured state; outputs are future states.
    StateSpace,
}

/// Block dimensions of a data matrix.
///
/// `p` is the per-step size of the `y` block, which is the state dimension
/// in state-space mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub mode: DataMode,
    pub m: usize,
    pub p: usize,
    /// System order, when known.
    pub n: Option<usize>,
    pub n_p: usize,
    pub n_f: usize,
}

impl Layout {
    pub fn io(m: usize, p: usize, n_p: usize, n_f: usize) -> Self {
        Layout {
            mode: DataMode::Io,
            m,
            p,
            n: None,
            n_p,
            n_f,
        }
    }

    /// State-space layout: `xi = x0` (n entries), `y = (x1, ..., x_Nf)`.
    pub fn state_space(n: usize, m: usize, n_f: usize) -> Self {
        Layout {
            mode: DataMode::StateSpace,
            m,
            p: n,
            n: Some(n),
            n_p: 1,
            n_f,
        }
    }

    pub fn with_order(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }

    /// Total trajectory length `L = N_p + N_f`.
    pub fn total_len(&self) -> usize {
        self.n_p + self.n_f
    }

    pub fn xi_dim(&self) -> usize {
        match self.mode {
            DataMode::Io => (self.m + self.p) * self.n_p,
            DataMode::StateSpace => self.p,
        }
    }

    pub fn u_dim(&self) -> usize {
        self.m * self.n_f
    }

    pub fn y_dim(&self) -> usize {
        self.p * self.n_f
    }

    /// Rows of `W` that carry measured outputs (the `y_p` block), which is
    /// where slack variables act. In state-space mode this is the whole state.
    pub fn slack_rows(&self) -> std::ops::Range<usize> {
        match self.mode {
            DataMode::Io => self.m * self.n_p..(self.m + self.p) * self.n_p,
            DataMode::StateSpace => 0..self.p,
        }
    }
}

/// A single trajectory `w = (xi, u, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTuple {
    pub xi: DVector<f64>,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
}

impl TrajectoryTuple {
    pub fn new(xi: DVector<f64>, u: DVector<f64>, y: DVector<f64>) -> Self {
        TrajectoryTuple { xi, u, y }
    }

    pub fn zeros(xi: usize, u: usize, y: usize) -> Self {
        TrajectoryTuple::new(DVector::zeros(xi), DVector::zeros(u), DVector::zeros(y))
    }

    /// `z = (xi, u)`.
    pub fn z(&self) -> DVector<f64> {
        vcat(&[&self.xi, &self.u])
    }

    /// `w = (xi, u, y)`.
    pub fn stacked(&self) -> DVector<f64> {
        vcat(&[&self.xi, &self.u, &self.y])
    }

    pub fn from_stacked(v: &DVector<f64>, xi: usize, u: usize) -> Self {
        let y = v.len() - xi - u;
        TrajectoryTuple {
            xi: v.rows(0, xi).into_owned(),
            u: v.rows(xi, u).into_owned(),
            y: v.rows(xi + u, y).into_owned(),
        }
    }
}

/// Column-partitioned trajectory data `D = [W; U; Y]`.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    w: DMatrix<f64>,
    u: DMatrix<f64>,
    y: DMatrix<f64>,
    layout: Layout,
    lag_hint: Option<usize>,
    ones_row: bool,
}

impl DataMatrix {
    pub fn new(w: DMatrix<f64>, u: DMatrix<f64>, y: DMatrix<f64>, layout: Layout) -> Result<Self> {
        let ell = w.ncols();
        check_dim("U columns", ell, u.ncols())?;
        check_dim("Y columns", ell, y.ncols())?;
        check_dim("W rows", layout.xi_dim(), w.nrows())?;
        check_dim("U rows", layout.u_dim(), u.nrows())?;
        check_dim("Y rows", layout.y_dim(), y.nrows())?;
        Ok(DataMatrix {
            w,
            u,
            y,
            layout,
            lag_hint: None,
            ones_row: false,
        })
    }

    pub fn with_lag_hint(mut self, lag: usize) -> Self {
        self.lag_hint = Some(lag);
        self
    }

    pub fn lag_hint(&self) -> Option<usize> {
        self.lag_hint
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// True for the affine-augmented matrix whose `W` starts with a ones row.
    pub fn has_ones_row(&self) -> bool {
        self.ones_row
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// `Z = [W; U]`.
    pub fn z(&self) -> DMatrix<f64> {
        vstack(&[&self.w, &self.u])
    }

    /// `D = [W; U; Y]`.
    pub fn d(&self) -> DMatrix<f64> {
        vstack(&[&self.w, &self.u, &self.y])
    }

    pub fn ell(&self) -> usize {
        self.w.ncols()
    }

    pub fn xi_dim(&self) -> usize {
        self.w.nrows()
    }
    pub fn u_dim(&self) -> usize {
        self.u.nrows()
    }
    pub fn y_dim(&self) -> usize {
        self.y.nrows()
    }
    pub fn rows(&self) -> usize {
        self.xi_dim() + self.u_dim() + self.y_dim()
    }

    pub fn column(&self, j: usize) -> TrajectoryTuple {
        TrajectoryTuple::new(
            self.w.column(j).into_owned(),
            self.u.column(j).into_owned(),
            self.y.column(j).into_owned(),
        )
    }

    /// Trajectory generated by the combination `D a`.
    pub fn generate(&self, a: &DVector<f64>) -> Result<TrajectoryTuple> {
        check_dim("generator length", self.ell(), a.len())?;
        Ok(TrajectoryTuple::new(&self.w * a, &self.u * a, &self.y * a))
    }

    pub fn check_tuple(&self, t: &TrajectoryTuple) -> Result<()> {
        check_dim("xi length", self.xi_dim(), t.xi.len())?;
        check_dim("u length", self.u_dim(), t.u.len())?;
        check_dim("y length", self.y_dim(), t.y.len())
    }

    /// Affine-augmented copy with `W` replaced by `[1^T; W]`.
    pub fn with_ones_row(&self) -> Result<DataMatrix> {
        if self.ones_row {
            return Err(DpcError::InvalidParameter(
                "data matrix already carries a ones row".into(),
            ));
        }
        let ones = DMatrix::from_element(1, self.ell(), 1.0);
        Ok(DataMatrix {
            w: vstack(&[&ones, &self.w]),
            u: self.u.clone(),
            y: self.y.clone(),
            layout: self.layout,
            lag_hint: self.lag_hint,
            ones_row: true,
        })
    }

    /// Copy with extra columns appended (used for slack augmentation).
    pub fn append_columns(&self, w: &DMatrix<f64>, u: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DataMatrix> {
        check_dim("appended W rows", self.xi_dim(), w.nrows())?;
        check_dim("appended U rows", self.u_dim(), u.nrows())?;
        check_dim("appended Y rows", self.y_dim(), y.nrows())?;
        check_dim("appended U columns", w.ncols(), u.ncols())?;
        check_dim("appended Y columns", w.ncols(), y.ncols())?;
        Ok(DataMatrix {
            w: linalg::hstack(&[&self.w, w]),
            u: linalg::hstack(&[&self.u, u]),
            y: linalg::hstack(&[&self.y, y]),
            layout: self.layout,
            lag_hint: self.lag_hint,
            ones_row: self.ones_row,
        })
    }

    /// Copy with columns reordered (or subsampled) by `order`.
    pub fn select_columns(&self, order: &[usize]) -> Result<DataMatrix> {
        if order.is_empty() {
            return Err(DpcError::EmptyInput("column selection".into()));
        }
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), order.len(), |i, j| m[(i, order[j])]);
        Ok(DataMatrix {
            w: pick(&self.w),
            u: pick(&self.u),
            y: pick(&self.y),
            layout: self.layout,
            lag_hint: self.lag_hint,
            ones_row: self.ones_row,
        })
    }
}

fn check_sequence(name: &str, seq: &[DVector<f64>]) -> Result<usize> {
    let dim = seq
        .first()
        .map(|v| v.len())
        .ok_or_else(|| DpcError::EmptyInput(format!("{name} sequence")))?;
    for v in seq {
        check_dim(&format!("{name} sample"), dim, v.len())?;
    }
    Ok(dim)
}

fn window(seq: &[DVector<f64>], start: usize, len: usize, dim: usize) -> DVector<f64> {
    let mut out = DVector::zeros(len * dim);
    for k in 0..len {
        out.rows_mut(k * dim, dim).copy_from(&seq[start + k]);
    }
    out
}

/// Block Hankel data matrix from an input/output record.
///
/// Column `j` is the window `(u(j..j+N_p), y(j..j+N_p), u(j+N_p..j+L), y(j+N_p..j+L))`.
pub fn build_hankel(u_data: &[DVector<f64>], y_data: &[DVector<f64>], n_p: usize, n_f: usize) -> Result<DataMatrix> {
    let m = check_sequence("input", u_data)?;
    let p = check_sequence("output", y_data)?;
    check_dim("output sequence length", u_data.len(), y_data.len())?;
    let layout = Layout::io(m, p, n_p, n_f);
    let l = layout.total_len();
    if l == 0 {
        return Err(DpcError::InvalidParameter("N_p + N_f must be positive".into()));
    }
    let t = u_data.len();
    if t < l {
        return Err(DpcError::InsufficientData { needed: l, got: t });
    }
    let ell = t - l + 1;
    let mut w = DMatrix::zeros(layout.xi_dim(), ell);
    let mut u = DMatrix::zeros(layout.u_dim(), ell);
    let mut y = DMatrix::zeros(layout.y_dim(), ell);
    for j in 0..ell {
        let up = window(u_data, j, n_p, m);
        let yp = window(y_data, j, n_p, p);
        w.set_column(j, &vcat(&[&up, &yp]));
        u.set_column(j, &window(u_data, j + n_p, n_f, m));
        y.set_column(j, &window(y_data, j + n_p, n_f, p));
    }
    DataMatrix::new(w, u, y, layout)
}

/// Block Hankel data matrix from an input/state record (state-space mode).
///
/// Column `j` is `(x(j), u(j..j+N_f), x(j+1..j+N_f+1))`.
pub fn build_hankel_state(u_data: &[DVector<f64>], x_data: &[DVector<f64>], n_f: usize) -> Result<DataMatrix> {
    let m = check_sequence("input", u_data)?;
    let n = check_sequence("state", x_data)?;
    if n_f == 0 {
        return Err(DpcError::InvalidParameter("N_f must be positive".into()));
    }
    let from_u = (u_data.len() + 1).saturating_sub(n_f);
    let from_x = x_data.len().saturating_sub(n_f);
    let ell = from_u.min(from_x);
    if ell == 0 {
        return Err(DpcError::InsufficientData {
            needed: n_f + 1,
            got: x_data.len().min(u_data.len() + 1),
        });
    }
    let layout = Layout::state_space(n, m, n_f);
    let mut w = DMatrix::zeros(n, ell);
    let mut u = DMatrix::zeros(layout.u_dim(), ell);
    let mut y = DMatrix::zeros(layout.y_dim(), ell);
    for j in 0..ell {
        w.set_column(j, &x_data[j]);
        u.set_column(j, &window(u_data, j, n_f, m));
        y.set_column(j, &window(x_data, j + 1, n_f, n));
    }
    DataMatrix::new(w, u, y, layout)
}

/// Stack trajectory tuples as data columns, in the order given.
pub fn build_from_columns(columns: &[TrajectoryTuple], layout: Layout) -> Result<DataMatrix> {
    if columns.is_empty() {
        return Err(DpcError::EmptyInput("trajectory column list".into()));
    }
    let ell = columns.len();
    let mut w = DMatrix::zeros(layout.xi_dim(), ell);
    let mut u = DMatrix::zeros(layout.u_dim(), ell);
    let mut y = DMatrix::zeros(layout.y_dim(), ell);
    for (j, c) in columns.iter().enumerate() {
        check_dim("column xi length", layout.xi_dim(), c.xi.len())?;
        check_dim("column u length", layout.u_dim(), c.u.len())?;
        check_dim("column y length", layout.y_dim(), c.y.len())?;
        w.set_column(j, &c.xi);
        u.set_column(j, &c.u);
        y.set_column(j, &c.y);
    }
    DataMatrix::new(w, u, y, layout)
}

/// Exact and measured state-space data columns.
#[derive(Debug, Clone)]
pub struct ColumnSample {
    pub exact: DataMatrix,
    pub measured: DataMatrix,
    pub seed: u64,
}

/// Draw `samples` i.i.d. columns `(x0, u, x)` with `x0` and `u` uniform on
/// `[-1, 1]`, simulate `N_f` steps and add measurement noise to `x0` and the
/// subsequent states.
pub fn sample_state_columns(model: &SystemModel, samples: usize, n_f: usize, rng_seed: u64) -> Result<ColumnSample> {
    if samples == 0 {
        return Err(DpcError::EmptyInput("sample count is zero".into()));
    }
    if n_f == 0 {
        return Err(DpcError::InvalidParameter("N_f must be positive".into()));
    }
    let (n, m) = (model.state_dim(), model.input_dim());
    let layout = Layout::state_space(n, m, n_f);
    let mut src = NoiseSource::new(rng_seed);
    let mut exact = Vec::with_capacity(samples);
    let mut measured = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x0 = src.uniform(n, -1.0, 1.0);
        let u = src.uniform(m * n_f, -1.0, 1.0);
        let mut x = x0.clone();
        let mut states = Vec::with_capacity(n_f);
        for k in 0..n_f {
            let uk = u.rows(k * m, m).into_owned();
            x = model.step_state(&x, &uk);
            states.push(x.clone());
        }
        let y = window(&states, 0, n_f, n);
        let x0_meas = src.perturb(&x0, model.noise_std);
        let y_meas = src.perturb(&y, model.noise_std);
        exact.push(TrajectoryTuple::new(x0, u.clone(), y));
        measured.push(TrajectoryTuple::new(x0_meas, u, y_meas));
    }
    Ok(ColumnSample {
        exact: build_from_columns(&exact, layout)?,
        measured: build_from_columns(&measured, layout)?,
        seed: rng_seed,
    })
}

/// Rank diagnostics of a data matrix.
#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub rank_d: usize,
    pub rank_z: usize,
    pub rank_w: usize,
    pub rows_d: usize,
    /// Mode-appropriate excitation target: `L m + n` in I/O mode,
    /// `n + m N_f` in state-space mode (plus one in the affine report).
    pub gpe_target: Option<usize>,
    /// The `L m + n` formula evaluated literally with `L = N_p + N_f`.
    pub gpe_target_lmn: Option<usize>,
    pub gpe_satisfied: bool,
    pub full_row_rank_d: bool,
    pub rank_deficiency_holds: bool,
    pub tolerance: f64,
    pub affine: bool,
}

fn build_report(
    d: &DMatrix<f64>,
    z: &DMatrix<f64>,
    w: &DMatrix<f64>,
    layout: &Layout,
    n: Option<usize>,
    tol: f64,
    affine: bool,
) -> RankReport {
    let rank_d = linalg::numerical_rank(d, tol);
    let rank_z = linalg::numerical_rank(z, tol);
    let rank_w = linalg::numerical_rank(w, tol);
    let extra = usize::from(affine);
    let n = n.or(layout.n);
    let gpe_target = n.map(|n| match layout.mode {
        DataMode::Io => layout.total_len() * layout.m + n + extra,
        DataMode::StateSpace => layout.m * layout.n_f + n + extra,
    });
    let gpe_target_lmn = n.map(|n| layout.total_len() * layout.m + n + extra);
    // A zero matrix carries no trajectory information: every flag is false.
    let nonzero = rank_d > 0;
    RankReport {
        rank_d,
        rank_z,
        rank_w,
        rows_d: d.nrows(),
        gpe_target,
        gpe_target_lmn,
        gpe_satisfied: nonzero && gpe_target == Some(rank_d),
        full_row_rank_d: nonzero && rank_d == d.nrows(),
        rank_deficiency_holds: nonzero && rank_d == rank_z,
        tolerance: tol,
        affine,
    }
}

/// Ranks of `D`, `Z`, `W` with excitation and deficiency flags.
pub fn rank_report(d: &DataMatrix, n: Option<usize>, tol: f64) -> Result<RankReport> {
    if !(tol > 0.0) {
        return Err(DpcError::InvalidParameter("rank tolerance must be positive".into()));
    }
    Ok(build_report(&d.d(), &d.z(), d.w(), d.layout(), n, tol, false))
}

/// Rank report of the ones-augmented matrices `[1^T; D]`, `[1^T; Z]`, `[1^T; W]`.
pub fn affine_rank_report(d: &DataMatrix, n: Option<usize>, tol: f64) -> Result<RankReport> {
    if !(tol > 0.0) {
        return Err(DpcError::InvalidParameter("rank tolerance must be positive".into()));
    }
    let ones = DMatrix::from_element(1, d.ell(), 1.0);
    let dd = vstack(&[&ones, &d.d()]);
    let zz = vstack(&[&ones, &d.z()]);
    let ww = vstack(&[&ones, d.w()]);
    Ok(build_report(&dd, &zz, &ww, d.layout(), n, tol, true))
}
