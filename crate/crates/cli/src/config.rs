//! JSON experiment configuration. Every field is optional; command-line
//! flags take precedence.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail};
use serde::Deserialize;

use dpc_core::data::{uniform_sequence, ColumnSample};
use dpc_core::io::parse_number;
use dpc_core::ocp::Polyhedron;
use dpc_core::{
    build_hankel, build_hankel_state, linalg, sample_state_columns, simulate, Bounds, ConstraintSet, ControlObjective,
    DMatrix, DVector, DataMatrix, SystemModel, TerminalConstraint,
};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    /// Output directory, relative to the config file.
    pub out: Option<PathBuf>,
    pub system: Option<SystemSpec>,
    pub data: Option<DataSpec>,
    /// Regularizer spec string, e.g. `mixed:l2=1,l3=100`.
    pub regularizer: Option<String>,
    pub objective: Option<ObjectiveSpec>,
    pub constraints: Option<ConstraintSpec>,
    pub xi: Option<Vec<f64>>,
    pub affine: Option<bool>,
}

type Rows = Vec<Vec<f64>>;

fn matrix(rows: &Rows, what: &str) -> anyhow::Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        bail!("{what}: rows have different lengths");
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

pub fn parse_list(s: &str) -> anyhow::Result<DVector<f64>> {
    let v = s
        .split([';', ','])
        .filter(|t| !t.trim().is_empty())
        .map(parse_number)
        .collect::<dpc_core::Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(v))
}

/// Linear system `x+ = A x + B u`, `y = C x + D u`. Defaults to the scalar
/// running example with measurement noise of standard deviation 0.1.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub a: Option<Rows>,
    pub b: Option<Rows>,
    /// Identity when omitted.
    pub c: Option<Rows>,
    /// Zero when omitted.
    pub d: Option<Rows>,
    pub noise_std: Option<f64>,
}

impl SystemSpec {
    pub fn model(&self) -> anyhow::Result<SystemModel> {
        let noise = self.noise_std.unwrap_or(dpc_core::fixtures::EXAMPLE_NOISE_STD);
        let model = match (&self.a, &self.b) {
            (None, None) => SystemModel::scalar_example(),
            (Some(a), Some(b)) => {
                let a = matrix(a, "system.a")?;
                let b = matrix(b, "system.b")?;
                let c = match &self.c {
                    Some(c) => matrix(c, "system.c")?,
                    None => DMatrix::identity(a.nrows(), a.nrows()),
                };
                let d = match &self.d {
                    Some(d) => matrix(d, "system.d")?,
                    None => DMatrix::zeros(c.nrows(), b.ncols()),
                };
                SystemModel::lti(a, b, c, d)?
            }
            _ => bail!("system.a and system.b must be given together"),
        };
        Ok(model.with_noise(noise)?)
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// I.i.d. columns `(x0, u, x)` with `x0`, `u` uniform on `[-1, 1]`.
    #[default]
    Samples,
    /// Input/output Hankel matrix from one simulated run.
    Hankel,
    /// Input/state Hankel matrix from one simulated run.
    HankelState,
}

impl FromStr for DataSource {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        match s {
            "samples" => Ok(DataSource::Samples),
            "hankel" => Ok(DataSource::Hankel),
            "hankel-state" => Ok(DataSource::HankelState),
            other => Err(anyhow!("unknown data source '{other}' (samples, hankel, hankel-state)")),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub source: DataSource,
    /// Column count for `samples` (default 500), run length for Hankel
    /// sources (default 100).
    pub samples: Option<usize>,
    pub n_f: Option<usize>,
    /// Past window of the I/O Hankel matrix; the state dimension by default.
    pub n_p: Option<usize>,
    /// Existing data descriptor used by the analysis commands.
    pub path: Option<PathBuf>,
}

impl DataSpec {
    pub fn generate(&self, model: &SystemModel, seed: u64) -> anyhow::Result<ColumnSample> {
        let n_f = self.n_f.unwrap_or(1);
        if self.source == DataSource::Samples {
            return Ok(sample_state_columns(model, self.samples.unwrap_or(500), n_f, seed)?);
        }
        let len = self.samples.unwrap_or(100);
        let u = uniform_sequence(model.input_dim(), len, -1.0, 1.0, seed)?;
        let x0 = uniform_sequence(model.state_dim(), 1, -1.0, 1.0, seed.wrapping_add(1))?.remove(0);
        let sim = simulate(model, &x0, &u, seed.wrapping_add(2))?;
        let (exact, measured) = match self.source {
            DataSource::HankelState => (
                build_hankel_state(&u, &sim.states, n_f)?,
                build_hankel_state(&u, &sim.measured_states, n_f)?,
            ),
            _ => {
                let n_p = self.n_p.unwrap_or(model.state_dim());
                (
                    build_hankel(&u, &sim.outputs, n_p, n_f)?.with_lag_hint(model.state_dim()),
                    build_hankel(&u, &sim.measured_outputs, n_p, n_f)?.with_lag_hint(model.state_dim()),
                )
            }
        };
        Ok(ColumnSample { exact, measured, seed })
    }
}

/// Tracking objective. `q` and `r_u` are full weights; `q_step` and
/// `r_step` are per-step blocks repeated over the horizon. Defaults:
/// identity weights and zero references.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub q: Option<Rows>,
    pub q_step: Option<Rows>,
    pub y_ref: Option<Vec<f64>>,
    pub r_u: Option<Rows>,
    pub r_step: Option<Rows>,
    pub u_ref: Option<Vec<f64>>,
}

fn weight(full: &Option<Rows>, step: &Option<Rows>, dim: usize, what: &str) -> anyhow::Result<DMatrix<f64>> {
    match (full, step) {
        (Some(_), Some(_)) => bail!("give either {what} or {what}_step, not both"),
        (Some(m), None) => matrix(m, what),
        (None, Some(s)) => {
            let s = matrix(s, what)?;
            if s.nrows() == 0 || !dim.is_multiple_of(s.nrows()) {
                bail!("{what}_step of size {} does not tile dimension {dim}", s.nrows());
            }
            Ok(linalg::block_diag(&vec![&s; dim / s.nrows()]))
        }
        (None, None) => Ok(DMatrix::identity(dim, dim)),
    }
}

impl ObjectiveSpec {
    pub fn build(&self, ny: usize, nu: usize) -> anyhow::Result<ControlObjective> {
        let q = weight(&self.q, &self.q_step, ny, "q")?;
        let r = weight(&self.r_u, &self.r_step, nu, "r_u")?;
        let y_ref = self.y_ref.clone().map_or_else(|| DVector::zeros(ny), DVector::from_vec);
        let u_ref = self.u_ref.clone().map_or_else(|| DVector::zeros(nu), DVector::from_vec);
        Ok(ControlObjective::new(q, y_ref, r, u_ref)?)
    }
}

/// Box, terminal and initial-condition constraints.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    /// Symmetric input box `|u_i| <= u_max`.
    pub u_max: Option<f64>,
    pub u_lower: Option<Vec<f64>>,
    pub u_upper: Option<Vec<f64>>,
    pub y_max: Option<f64>,
    pub y_lower: Option<Vec<f64>>,
    pub y_upper: Option<Vec<f64>>,
    /// Pin the last `n` output steps to the reference.
    pub terminal_steps: Option<usize>,
    /// Initial conditions restricted to `|xi_i| <= xi_max`.
    pub xi_max: Option<f64>,
}

fn bounds(
    sym: Option<f64>,
    lower: &Option<Vec<f64>>,
    upper: &Option<Vec<f64>>,
    dim: usize,
    what: &str,
) -> anyhow::Result<Option<Bounds>> {
    if sym.is_some() && (lower.is_some() || upper.is_some()) {
        bail!("give either {what}_max or {what}_lower/{what}_upper");
    }
    if let Some(r) = sym {
        return Ok(Some(Bounds::symmetric(dim, r)));
    }
    if lower.is_none() && upper.is_none() {
        return Ok(None);
    }
    let lo = lower
        .clone()
        .map_or_else(|| DVector::from_element(dim, f64::NEG_INFINITY), DVector::from_vec);
    let hi = upper
        .clone()
        .map_or_else(|| DVector::from_element(dim, f64::INFINITY), DVector::from_vec);
    Ok(Some(Bounds::new(lo, hi)?))
}

impl ConstraintSpec {
    pub fn build(&self, d: &DataMatrix, objective: &ControlObjective) -> anyhow::Result<ConstraintSet> {
        let terminal = match self.terminal_steps {
            Some(n) => Some(TerminalConstraint::last_steps(n, d.layout().p, &objective.y_ref)?),
            None => None,
        };
        Ok(ConstraintSet {
            u_box: bounds(self.u_max, &self.u_lower, &self.u_upper, d.u_dim(), "u")?,
            y_box: bounds(self.y_max, &self.y_lower, &self.y_upper, d.y_dim(), "y")?,
            terminal,
            xi_set: self.xi_max.map(|r| Polyhedron::inf_ball(d.xi_dim(), r)),
        })
    }
}
