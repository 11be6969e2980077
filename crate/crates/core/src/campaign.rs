//! Seeded random instances and the oracle-equivalence campaigns run by
//! `dpc verify` and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{build_hankel, sample_state_columns, simulate, DataMatrix, SystemModel, TrajectoryTuple};
use crate::error::{DpcError, Result};
use crate::implicit::{self, implicit_for_problem, implicit_terminal, implicit_unconstrained, soft_terminal_weight};
use crate::linalg::{self, DEFAULT_TOL};
use crate::ocp::{self, Bounds, ConstraintSet, ControlObjective, DPCProblem, SolveStatus, TerminalConstraint};
use crate::predictors::{fit_als, fit_ls};
use crate::regularizers::{brute_force_cost, gamma_from_trajectory, slack_augment, ClosedForm, Regularizer};

/// Shape of a random data matrix.
#[derive(Debug, Clone)]
pub struct InstanceSpec {
    /// Input/output Hankel data instead of state-space columns.
    pub io: bool,
    pub noise_std: f64,
    pub max_rows: usize,
    pub max_ell: usize,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            io: false,
            noise_std: 0.1,
            max_rows: 10,
            max_ell: 60,
        }
    }
}

/// Random stable-ish system with `n` states, `m` inputs, `p` outputs.
pub fn random_system(n: usize, m: usize, p: usize, rng: &mut ChaCha8Rng) -> Result<SystemModel> {
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let rho = linalg::singular_values(&a).max();
    if rho > 0.0 {
        a *= 0.9 / rho;
    }
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
    SystemModel::lti(a, b, c, DMatrix::zeros(p, m))
}

/// Full-row-rank random data with at most `max_rows` rows and `max_ell`
/// columns (noise permitting).
pub fn random_data(spec: &InstanceSpec, seed: u64) -> Result<DataMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..20u64 {
        let d = if spec.io {
            random_io(spec, &mut rng, seed, attempt)?
        } else {
            random_state(spec, &mut rng, seed, attempt)?
        };
        if spec.noise_std == 0.0 || linalg::numerical_rank(&d.d(), DEFAULT_TOL) == d.rows() {
            return Ok(d);
        }
    }
    Err(DpcError::AssumptionViolated(format!(
        "could not draw full-row-rank data for seed {seed}"
    )))
}

fn pick_ell(rows: usize, spec: &InstanceSpec, rng: &mut ChaCha8Rng) -> usize {
    let lo = (rows + 2).min(spec.max_ell);
    rng.random_range(lo..=spec.max_ell.max(lo))
}

fn random_state(spec: &InstanceSpec, rng: &mut ChaCha8Rng, seed: u64, attempt: u64) -> Result<DataMatrix> {
    loop {
        let n = rng.random_range(1..=2);
        let m = rng.random_range(1..=2);
        let n_f = rng.random_range(1..=3);
        let rows = n + m * n_f + n * n_f;
        if rows > spec.max_rows {
            continue;
        }
        let model = random_system(n, m, n, rng)?.with_noise(spec.noise_std)?;
        let ell = pick_ell(rows, spec, rng);
        let s = sample_state_columns(&model, ell, n_f, seed.wrapping_mul(31).wrapping_add(attempt))?;
        return Ok(if spec.noise_std > 0.0 { s.measured } else { s.exact });
    }
}

fn random_io(spec: &InstanceSpec, rng: &mut ChaCha8Rng, seed: u64, attempt: u64) -> Result<DataMatrix> {
    loop {
        let m = rng.random_range(1..=2);
        let p = rng.random_range(1..=2);
        let n_p = rng.random_range(1..=2);
        let n_f = rng.random_range(1..=3);
        let rows = (m + p) * (n_p + n_f);
        if rows > spec.max_rows {
            continue;
        }
        let n = rng.random_range(1..=2);
        let model = random_system(n, m, p, rng)?.with_noise(spec.noise_std)?;
        let ell = pick_ell(rows, spec, rng);
        let t = ell + n_p + n_f - 1;
        let u: Vec<DVector<f64>> = (0..t)
            .map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let sim = simulate(&model, &x0, &u, seed.wrapping_mul(31).wrapping_add(attempt))?;
        let y = if spec.noise_std > 0.0 {
            sim.measured_outputs
        } else {
            sim.outputs
        };
        return build_hankel(&u, &y, n_p, n_f);
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Campaign {
    CostOracle,
    GammaIdentities,
    ProjectionSplit,
    FullReduced,
    ImplicitMap,
    Terminal,
    Slack,
    Feasibility,
    MpcEquivalence,
    Limits,
}

impl Campaign {
    pub const ALL: [Campaign; 10] = [
        Campaign::CostOracle,
        Campaign::GammaIdentities,
        Campaign::ProjectionSplit,
        Campaign::FullReduced,
        Campaign::ImplicitMap,
        Campaign::Terminal,
        Campaign::Slack,
        Campaign::Feasibility,
        Campaign::MpcEquivalence,
        Campaign::Limits,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Campaign::CostOracle => "cost-oracle",
            Campaign::GammaIdentities => "gamma-identities",
            Campaign::ProjectionSplit => "projection-split",
            Campaign::FullReduced => "full-reduced",
            Campaign::ImplicitMap => "implicit-map",
            Campaign::Terminal => "terminal",
            Campaign::Slack => "slack",
            Campaign::Feasibility => "feasibility",
            Campaign::MpcEquivalence => "mpc-equivalence",
            Campaign::Limits => "limits",
        }
    }

    pub fn parse(s: &str) -> Result<Campaign> {
        Campaign::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| DpcError::Parse(format!("unknown campaign '{s}'")))
    }

    /// Default instance count.
    pub fn default_instances(self) -> usize {
        match self {
            Campaign::ImplicitMap | Campaign::Slack => 50,
            _ => 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Scale the closed-form output weight by 1.5.
    CorruptQreg,
}

impl Fault {
    pub fn parse(s: &str) -> Result<Fault> {
        match s {
            "corrupt-qreg" => Ok(Fault::CorruptQreg),
            _ => Err(DpcError::Parse(format!("unknown fault '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignConfig {
    /// Overrides the per-campaign default.
    pub instances: Option<usize>,
    pub base_seed: u64,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignFailure {
    pub seed: u64,
    pub invariant: String,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignResult {
    pub campaign: Campaign,
    pub instances: usize,
    pub checks: usize,
    /// Largest observed error, relative where the invariant is relative.
    pub max_error: f64,
    pub failures: Vec<CampaignFailure>,
}

impl CampaignResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Recorder {
    seed: u64,
    checks: usize,
    max_error: f64,
    failures: Vec<CampaignFailure>,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            seed: 0,
            checks: 0,
            max_error: 0.0,
            failures: Vec::new(),
        }
    }

    /// Record `err <= tol` (NaN fails).
    fn check(&mut self, invariant: &str, err: f64, tol: f64, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if err.is_finite() {
            self.max_error = self.max_error.max(err);
        }
        if !(err <= tol) {
            self.failures.push(CampaignFailure {
                seed: self.seed,
                invariant: invariant.to_string(),
                detail: format!("{} (error {err:e}, tolerance {tol:e})", detail()),
            });
        }
    }

    fn truth(&mut self, invariant: &str, ok: bool, detail: impl FnOnce() -> String) {
        self.check(invariant, if ok { 0.0 } else { f64::INFINITY }, 0.0, detail);
    }

    fn error(&mut self, invariant: &str, e: DpcError) {
        self.checks += 1;
        self.failures.push(CampaignFailure {
            seed: self.seed,
            invariant: invariant.to_string(),
            detail: format!("unexpected error: {e}"),
        });
    }
}

/// Run one campaign. Failures are collected rather than returned as errors.
pub fn run_campaign(c: Campaign, cfg: &CampaignConfig) -> Result<CampaignResult> {
    let n = cfg.instances.unwrap_or_else(|| c.default_instances());
    if n == 0 {
        return Err(DpcError::InvalidParameter(
            "campaign needs at least one instance".into(),
        ));
    }
    let mut rec = Recorder::new();
    for i in 0..n {
        let seed = cfg.base_seed.wrapping_add(i as u64);
        rec.seed = seed;
        let out = match c {
            Campaign::CostOracle => cost_oracle(&mut rec, seed, cfg.fault),
            Campaign::GammaIdentities => gamma_identities(&mut rec, seed),
            Campaign::ProjectionSplit => projection_split(&mut rec, seed),
            Campaign::FullReduced => full_reduced(&mut rec, seed),
            Campaign::ImplicitMap => implicit_map(&mut rec, seed, cfg.fault),
            Campaign::Terminal => terminal(&mut rec, seed),
            Campaign::Slack => slack(&mut rec, seed),
            Campaign::Feasibility => feasibility(&mut rec, seed),
            Campaign::MpcEquivalence => mpc_equivalence(&mut rec, seed),
            Campaign::Limits => limits(&mut rec, seed),
        };
        if let Err(e) = out {
            rec.error("instance completes", e);
        }
    }
    Ok(CampaignResult {
        campaign: c,
        instances: n,
        checks: rec.checks,
        max_error: rec.max_error,
        failures: rec.failures,
    })
}

/// Run several campaigns in order; an empty list is an error.
pub fn run_campaigns(list: &[Campaign], cfg: &CampaignConfig) -> Result<Vec<CampaignResult>> {
    if list.is_empty() {
        return Err(DpcError::EmptyInput("campaign list".into()));
    }
    list.iter().map(|&c| run_campaign(c, cfg)).collect()
}

fn random_tuple(d: &DataMatrix, rng: &mut ChaCha8Rng) -> TrajectoryTuple {
    TrajectoryTuple::from_stacked(&rand_vec(rng, d.rows()), d.xi_dim(), d.u_dim())
}

/// Regularizers with a closed form and their readable labels.
pub fn closed_form_variants(ell: usize, rng: &mut ChaCha8Rng) -> Vec<(&'static str, Regularizer, bool)> {
    let lam = rng.random_range(0.1..10.0);
    let l2 = rng.random_range(0.01..5.0);
    let l3 = 10f64.powf(rng.random_range(-1.0..4.0));
    let a_bar = DVector::from_fn(ell, |_, _| rng.random_range(-0.3..0.3));
    vec![
        ("quadratic", Regularizer::Quadratic { lambda: lam }, false),
        ("perp", Regularizer::ProjectionPerp { lambda: lam }, false),
        ("par", Regularizer::ProjectionPar { lambda: lam }, false),
        ("mixed", Regularizer::MixedProjection { l2, l3 }, false),
        ("offset", Regularizer::OffsetQuadratic { lambda: lam, a_bar }, false),
        (
            "gamma",
            Regularizer::GammaDdpc {
                l2,
                l3,
                gamma3_zero: false,
            },
            false,
        ),
        (
            "gamma-hard",
            Regularizer::GammaDdpc {
                l2,
                l3: 0.0,
                gamma3_zero: true,
            },
            false,
        ),
        ("affine-quadratic", Regularizer::Quadratic { lambda: lam }, true),
        ("affine-mixed", Regularizer::MixedProjection { l2, l3 }, true),
    ]
}

fn cost_oracle(rec: &mut Recorder, seed: u64, fault: Option<Fault>) -> Result<()> {
    let d = random_data(
        &InstanceSpec {
            io: seed % 2 == 1,
            ..Default::default()
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let variants = closed_form_variants(d.ell(), &mut rng);
    for (label, reg, affine) in variants {
        let mut w = random_tuple(&d, &mut rng);
        let fitted = if affine {
            fit_ls(&d.with_ones_row()?, DEFAULT_TOL)?
        } else {
            fit_ls(&d, DEFAULT_TOL)?
        };
        let p = match fault {
            Some(Fault::CorruptQreg) => fitted.with_scaled_q_reg(1.5),
            None => fitted,
        };
        if matches!(reg, Regularizer::GammaDdpc { gamma3_zero: true, .. }) {
            // Only trajectories on the predictor have finite cost.
            w.y = p.predict_y(&w.xi, &w.u)?;
        }
        let cf = ClosedForm::from_predictor(&reg, &p, affine)?.evaluate(&w)?.total;
        let bf = brute_force_cost(&reg, &d, &w, affine)?.cost;
        rec.check("closed-form cost equals direct minimization", rel(cf, bf), 1e-7, || {
            format!("{label}: closed form {cf}, direct {bf}")
        });
    }
    Ok(())
}

fn gamma_identities(rec: &mut Recorder, seed: u64) -> Result<()> {
    let d = random_data(
        &InstanceSpec {
            io: seed.is_multiple_of(2),
            ..Default::default()
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a);
    let p = fit_ls(&d, DEFAULT_TOL)?;
    let f = linalg::lq_decompose(&d, DEFAULT_TOL)?;
    let w = random_tuple(&d, &mut rng);
    let g = gamma_from_trajectory(&f, &w, false)?;
    let (dy, du) = p.deviations(&w)?;
    let pairs = [
        (
            "gamma1 norm equals initial-condition weighted norm",
            g.gamma1.norm_squared(),
            linalg::weighted_sqnorm(&w.xi, &p.wwt.weight)?,
        ),
        (
            "gamma2 norm equals input-deviation weighted norm",
            g.gamma2.norm_squared(),
            linalg::weighted_sqnorm(&du, &p.r_reg.weight)?,
        ),
        (
            "gamma3 norm equals output-deviation weighted norm",
            g.gamma3.norm_squared(),
            linalg::weighted_sqnorm(&dy, &p.q_reg.weight)?,
        ),
    ];
    for (inv, a, b) in pairs {
        rec.check(inv, rel(a, b), 1e-9, || format!("{a} vs {b}"));
    }
    Ok(())
}

fn projection_split(rec: &mut Recorder, seed: u64) -> Result<()> {
    let d = random_data(
        &InstanceSpec {
            io: seed % 2 == 1,
            ..Default::default()
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e);
    let pp = linalg::projectors(&d.z(), DEFAULT_TOL);
    let w = random_tuple(&d, &mut rng);
    for (label, reg) in [
        (
            "quadratic",
            Regularizer::Quadratic {
                lambda: rng.random_range(0.1..10.0),
            },
        ),
        (
            "mixed",
            Regularizer::MixedProjection {
                l2: rng.random_range(0.1..5.0),
                l3: rng.random_range(0.1..100.0),
            },
        ),
    ] {
        let bf = brute_force_cost(&reg, &d, &w, false)?;
        let lambda = match reg {
            Regularizer::Quadratic { lambda } => lambda,
            _ => 1.0,
        };
        let a = &bf.a;
        let lhs = lambda * a.norm_squared();
        let rhs = lambda * (&pp.pi * a).norm_squared() + lambda * (&pp.pi_perp * a).norm_squared();
        rec.check(
            "norm splits over the two projections",
            (lhs - rhs).abs() / (1.0 + lhs),
            1e-10,
            || format!("{label}: {lhs} vs {rhs}"),
        );
    }
    Ok(())
}

/// Strictly convex problem on a random instance.
fn random_problem(d: DataMatrix, reg: Regularizer, rng: &mut ChaCha8Rng, boxes: bool) -> Result<DPCProblem> {
    let (ny, nu) = (d.y_dim(), d.u_dim());
    let obj = ControlObjective::new(
        rand_spd(rng, ny),
        rand_vec(rng, ny),
        rand_spd(rng, nu) * 0.1,
        DVector::zeros(nu),
    )?;
    let constraints = if boxes {
        ConstraintSet {
            u_box: Some(Bounds::symmetric(nu, rng.random_range(0.05..0.5))),
            y_box: Some(Bounds::symmetric(ny, rng.random_range(0.2..1.0))),
            ..Default::default()
        }
    } else {
        ConstraintSet::default()
    };
    let xi = rand_vec(rng, d.xi_dim());
    DPCProblem::new(d, obj, constraints, reg, xi)
}

fn full_reduced(rec: &mut Recorder, seed: u64) -> Result<()> {
    let d = random_data(
        &InstanceSpec {
            io: seed.is_multiple_of(2),
            ..Default::default()
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf0);
    let variants = closed_form_variants(d.ell(), &mut rng);
    let (label, reg, affine) = variants
        .into_iter()
        .filter(|(l, _, _)| *l != "gamma-hard" && *l != "par")
        .nth(seed as usize % 7)
        .expect("variant list is long enough");
    let prob = random_problem(d, reg, &mut rng, seed.is_multiple_of(3))?.with_affine(affine);
    let f = ocp::solve_full(&prob)?;
    let r = ocp::solve_reduced(&prob)?;
    rec.truth("both formulations solve", f.is_optimal() && r.is_optimal(), || {
        format!("{label}: {:?} / {:?}", f.status, r.status)
    });
    if !(f.is_optimal() && r.is_optimal()) {
        return Ok(());
    }
    rec.check(
        "full and reduced optimal values agree",
        rel(r.value, f.value),
        1e-8,
        || format!("{label}: full {}, reduced {}", f.value, r.value),
    );
    rec.check("full and reduced minimizers agree", (&f.u - &r.u).norm(), 1e-6, || {
        label.to_string()
    });
    rec.check(
        "reported value equals objective plus regularizer",
        rel(f.value, prob.objective.value(&f.u, &f.y) + f.diagnostics.h_at_a),
        1e-9,
        || label.to_string(),
    );
    rec.check(
        "stationarity residual",
        f.diagnostics.stationarity_residual,
        1e-8,
        || label.to_string(),
    );
    rec.check("complementarity", f.diagnostics.complementarity, 1e-8, || {
        label.to_string()
    });
    Ok(())
}

fn def2_samples(rng: &mut ChaCha8Rng, xi_dim: usize, u_dim: usize) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let xis = (0..2).map(|_| rand_vec(rng, xi_dim)).collect();
    let us = (0..2).map(|_| rand_vec(rng, u_dim)).collect();
    (xis, us)
}

fn implicit_map(rec: &mut Recorder, seed: u64, fault: Option<Fault>) -> Result<()> {
    let io = seed % 2 == 1;
    let d = random_data(
        &InstanceSpec {
            io,
            ..Default::default()
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd2);
    let lam = rng.random_range(0.1..5.0);
    let variants: Vec<(&str, Regularizer, bool, bool)> = vec![
        ("quadratic", Regularizer::Quadratic { lambda: lam }, false, false),
        ("perp", Regularizer::ProjectionPerp { lambda: lam }, false, false),
        ("affine", Regularizer::Quadratic { lambda: lam }, true, false),
        (
            "offset",
            Regularizer::OffsetQuadratic {
                lambda: lam,
                a_bar: DVector::from_fn(d.ell(), |_, _| rng.random_range(-0.3..0.3)),
            },
            false,
            false,
        ),
        ("terminal", Regularizer::Quadratic { lambda: lam }, false, true),
    ];
    let (ny, nu) = (d.y_dim(), d.u_dim());
    let block = d.layout().p;
    // Block-diagonal per-step weight so the exact terminal formula applies.
    let q_step = rand_spd(&mut rng, block);
    let y_ref = rand_vec(&mut rng, ny);
    let n_f = d.layout().n_f;
    let obj = ControlObjective::block_diagonal(
        &q_step,
        &(rand_spd(&mut rng, d.layout().m) * 0.1),
        n_f,
        y_ref.clone(),
        DVector::zeros(nu),
    )?;
    let xi0 = rand_vec(&mut rng, d.xi_dim());
    let (xis, us) = def2_samples(&mut rng, d.xi_dim(), nu);
    let mut shared = Vec::new();
    for (label, reg, affine, term) in variants {
        let constraints = if term {
            ConstraintSet {
                terminal: Some(TerminalConstraint::last_steps(1, block, &y_ref)?),
                ..Default::default()
            }
        } else {
            ConstraintSet::default()
        };
        let prob = DPCProblem::new(d.clone(), obj.clone(), constraints, reg, xi0.clone())?.with_affine(affine);
        let map = match fault {
            Some(Fault::CorruptQreg) if label == "quadratic" => {
                let p = fit_ls(&d, DEFAULT_TOL)?.with_scaled_q_reg(1.5);
                implicit_unconstrained(&p, &obj.q, &y_ref, lam)?
            }
            _ => implicit_for_problem(&prob)?,
        };
        let rep = implicit::verify_implicit_map(&map, &prob, &xis, &us)?;
        rec.check(
            "implicit map leaves optimal value unchanged",
            rep.max_value_error,
            implicit::VALUE_TOL,
            || format!("{label}: {:?}", rep.failures),
        );
        rec.check(
            "implicit map leaves minimizer unchanged",
            rep.max_minimizer_error,
            implicit::MINIMIZER_TOL,
            || label.to_string(),
        );
        rec.check(
            "implicit map reproduces inner minimizer",
            rep.max_inner_error,
            implicit::INNER_TOL,
            || label.to_string(),
        );
        if label == "quadratic" || label == "perp" {
            shared.push(map);
        }
    }
    let diff = shared[0].max_relative_difference(&shared[1]);
    rec.check(
        "quadratic and projection regularizers share one map",
        diff,
        1e-10,
        String::new,
    );
    Ok(())
}

fn terminal(rec: &mut Recorder, seed: u64) -> Result<()> {
    let d = random_data(
        &InstanceSpec {
            io: true,
            ..Default::default()
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e);
    let p = fit_ls(&d, DEFAULT_TOL)?;
    let (ny, block, n_f) = (d.y_dim(), d.layout().p, d.layout().n_f);
    let q_step = rand_spd(&mut rng, block);
    let q = linalg::block_diag(&vec![&q_step; n_f]);
    let y_ref = rand_vec(&mut rng, ny);
    let lambda = rng.random_range(0.1..10.0);
    let n_t = rng.random_range(1..=n_f);
    let (map, tw) = implicit_terminal(&p, &q, &y_ref, lambda, n_t)?;
    rec.truth("exact terminal formula applies", !map.soft_limit, || {
        "fell back to penalty".into()
    });
    let k = n_t * block;
    let f = ny - k;
    let mut bottom = DMatrix::zeros(k, ny);
    bottom.view_mut((0, f), (k, k)).fill_with_identity();
    rec.truth(
        "reference weight bottom rows are [0 I]",
        tw.lambda_ref.rows(f, k).into_owned() == bottom,
        String::new,
    );
    rec.truth(
        "regularization weight bottom rows are zero",
        tw.lambda_reg.rows(f, k).iter().all(|&v| v == 0.0),
        String::new,
    );
    let sum = (&tw.lambda_ref + &tw.lambda_reg - DMatrix::identity(ny, ny)).amax();
    rec.check("terminal weights sum to identity", sum, 1e-10, String::new);
    let soft = implicit_unconstrained(
        &p,
        &soft_terminal_weight(&q, block, n_t, implicit::SOFT_TERMINAL_WEIGHT)?,
        &y_ref,
        lambda,
    )?;
    rec.check(
        "penalty limit matches terminal map",
        map.max_relative_difference(&soft),
        1e-4,
        String::new,
    );
    Ok(())
}

fn slack(rec: &mut Recorder, seed: u64) -> Result<()> {
    let d = random_data(
        &InstanceSpec {
            io: seed.is_multiple_of(2),
            ..Default::default()
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51);
    let lambda = rng.random_range(0.1..5.0);
    let lambda_sigma = rng.random_range(0.5..50.0);
    let reg = Regularizer::SlackQuadratic { lambda, lambda_sigma };
    let explicit = random_problem(d.clone(), reg, &mut rng, false)?;
    let (aug, _) = slack_augment(&d, lambda, lambda_sigma)?;
    let mut augmented = explicit.clone();
    augmented.data = aug;
    augmented.regularizer = Regularizer::Quadratic { lambda };
    let a = ocp::solve_full(&explicit)?;
    let b = ocp::solve_full(&augmented)?;
    rec.check(
        "explicit slack and augmented data agree in value",
        rel(a.value, b.value),
        1e-8,
        || format!("{} vs {}", a.value, b.value),
    );
    let du = (&a.u - &b.u).amax().max((&a.y - &b.y).amax());
    rec.check(
        "explicit slack and augmented data agree in minimizer",
        du,
        1e-8,
        String::new,
    );

    let mut last = f64::INFINITY;
    for ls in [0.1, 1.0, 10.0, 100.0, 1e3, 1e4] {
        let mut p = explicit.clone();
        p.regularizer = Regularizer::SlackQuadratic {
            lambda,
            lambda_sigma: ls,
        };
        let s = ocp::solve_full(&p)?;
        let norm = s.sigma.norm();
        rec.check(
            "slack norm nonincreasing in its weight",
            (norm - last).max(0.0),
            1e-9 * (1.0 + last.min(1e300)),
            || format!("lambda_sigma {ls}: {norm} after {last}"),
        );
        last = norm;
    }
    Ok(())
}

fn feasibility(rec: &mut Recorder, seed: u64) -> Result<()> {
    let d = random_data(
        &InstanceSpec {
            io: seed % 2 == 1,
            ..Default::default()
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfe);
    let prob = random_problem(
        d.clone(),
        Regularizer::Quadratic {
            lambda: rng.random_range(0.1..10.0),
        },
        &mut rng,
        true,
    )?;
    let rep = ocp::feasible(&prob)?;
    rec.truth(
        "full-row-rank data is feasible for any initial condition",
        rep.feasible,
        || rep.detail.clone(),
    );
    let s = ocp::solve_full(&prob)?;
    rec.truth(
        "feasible problem solves to optimality",
        s.status == SolveStatus::Optimal,
        String::new,
    );

    // Converse: rank-deficient W and an initial condition orthogonal to it.
    let cols = d.xi_dim().saturating_sub(1).max(1).min(d.ell());
    let small = d.select_columns(&(0..cols).collect::<Vec<_>>())?;
    let w = small.w();
    let proj = DMatrix::identity(w.nrows(), w.nrows()) - w * linalg::pinv(w, DEFAULT_TOL);
    let xi = &proj * rand_vec(&mut rng, w.nrows());
    if xi.norm() > 1e-3 && d.xi_dim() > cols {
        let mut deficient = prob.clone();
        deficient.data = small;
        deficient.xi = xi.clone();
        let rep = ocp::feasible(&deficient)?;
        rec.truth(
            "initial condition outside the span of W is infeasible",
            !rep.feasible,
            || rep.detail.clone(),
        );
        rec.check(
            "infeasibility residual equals distance to span",
            rel(rep.residual, xi.norm()),
            1e-8,
            String::new,
        );
        let s = ocp::solve_full(&deficient)?;
        rec.truth(
            "solver reports infeasible",
            s.status == SolveStatus::Infeasible,
            String::new,
        );
    }
    Ok(())
}

/// Model-based prediction matrices: `x(1..N_f) = Phi x0 + Gamma u`.
pub fn prediction_matrices(model: &SystemModel, n_f: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (model.state_dim(), model.input_dim());
    let mut phi = DMatrix::zeros(n * n_f, n);
    let mut gamma = DMatrix::zeros(n * n_f, m * n_f);
    let mut a_pow = model.a.clone();
    for k in 0..n_f {
        phi.view_mut((k * n, 0), (n, n)).copy_from(&a_pow);
        a_pow = &model.a * a_pow;
        for j in 0..=k {
            let mut blk = model.b.clone();
            for _ in j..k {
                blk = &model.a * blk;
            }
            gamma.view_mut((k * n, j * m), (n, m)).copy_from(&blk);
        }
    }
    (phi, gamma)
}

fn mpc_equivalence(rec: &mut Recorder, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3c);
    let n = rng.random_range(1..=2);
    let m = rng.random_range(1..=2);
    let n_f = if n + m * 2 + n * 2 <= 10 { 2 } else { 1 };
    let model = random_system(n, m, n, &mut rng)?;
    let d = sample_state_columns(&model, 30, n_f, seed)?.exact;
    let (ny, nu) = (d.y_dim(), d.u_dim());
    let q = rand_spd(&mut rng, ny);
    let r = rand_spd(&mut rng, nu);
    let y_ref = rand_vec(&mut rng, ny);
    let u_ref = rand_vec(&mut rng, nu);
    let x0 = rand_vec(&mut rng, n);
    let obj = ControlObjective::new(q.clone(), y_ref.clone(), r.clone(), u_ref.clone())?;
    let prob = DPCProblem::new(
        d,
        obj.clone(),
        ConstraintSet::default(),
        Regularizer::Quadratic { lambda: 0.0 },
        x0.clone(),
    )?;
    let s = ocp::solve_full(&prob)?;
    let (phi, gamma) = prediction_matrices(&model, n_f);
    let h = gamma.transpose() * &q * &gamma + &r;
    let rhs = gamma.transpose() * &q * (&y_ref - &phi * &x0) + &r * &u_ref;
    let u = h
        .lu()
        .solve(&rhs)
        .ok_or_else(|| DpcError::Singular("model-based Hessian".into()))?;
    let y = &phi * &x0 + &gamma * &u;
    let v = obj.value(&u, &y);
    rec.check(
        "data-driven solution matches model-based optimum (value)",
        rel(s.value, v),
        1e-8,
        || format!("{} vs {v}", s.value),
    );
    let e = (&s.u - &u).amax().max((&s.y - &y).amax());
    rec.check(
        "data-driven solution matches model-based optimum (minimizer)",
        e,
        1e-8,
        String::new,
    );
    Ok(())
}

fn limits(rec: &mut Recorder, seed: u64) -> Result<()> {
    let d = random_data(
        &InstanceSpec {
            io: seed.is_multiple_of(2),
            ..Default::default()
        },
        seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let ny = d.y_dim();
    let q = rand_spd(&mut rng, ny);
    let y_ref = rand_vec(&mut rng, ny);
    let p = fit_ls(&d, DEFAULT_TOL)?;
    let zero = implicit_unconstrained(&p, &q, &y_ref, 0.0)?;
    let big = implicit_unconstrained(&p, &q, &y_ref, 1e12)?;
    let als = fit_als(&d, DEFAULT_TOL)?;
    let big_aff = implicit::implicit_affine(&als, &q, &y_ref, 1e12)?;
    for _ in 0..5 {
        let xi = rand_vec(&mut rng, d.xi_dim());
        let u = rand_vec(&mut rng, d.u_dim());
        let y0 = zero.predict(&xi, &u)?;
        rec.check(
            "zero weight predicts the reference",
            (&y0 - &y_ref).amax(),
            1e-12,
            String::new,
        );
        let ls = p.predict_y(&xi, &u)?;
        let yb = big.predict(&xi, &u)?;
        rec.check(
            "large weight predicts least squares",
            (&yb - &ls).norm() / (1.0 + ls.norm()),
            1e-5,
            String::new,
        );
        let als_y = als.predict_y(&xi, &u)?;
        let ya = big_aff.predict(&xi, &u)?;
        rec.check(
            "large weight predicts affine least squares",
            (&ya - &als_y).norm() / (1.0 + als_y.norm()),
            1e-5,
            String::new,
        );
        // Scalar outputs lie between the reference and the prediction.
        let mid = implicit_unconstrained(&p, &DMatrix::identity(ny, ny), &y_ref, 1.0)?.predict(&xi, &u)?;
        if ny == 1 {
            let (lo, hi) = (ls[0].min(y_ref[0]), ls[0].max(y_ref[0]));
            rec.truth(
                "prediction interpolates",
                mid[0] >= lo - 1e-12 && mid[0] <= hi + 1e-12,
                String::new,
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_data_is_full_rank_and_small() {
        for io in [false, true] {
            for seed in 0..30 {
                let d = random_data(
                    &InstanceSpec {
                        io,
                        ..Default::default()
                    },
                    seed,
                )
                .unwrap();
                assert!(d.rows() <= 10 && d.ell() <= 60);
                assert_eq!(linalg::numerical_rank(&d.d(), DEFAULT_TOL), d.rows());
            }
        }
    }

    #[test]
    fn random_data_is_deterministic() {
        let a = random_data(&InstanceSpec::default(), 7).unwrap();
        let b = random_data(&InstanceSpec::default(), 7).unwrap();
        assert_eq!(a.d(), b.d());
    }

    #[test]
    fn prediction_matrices_match_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = random_system(2, 1, 2, &mut rng).unwrap();
        let (phi, gamma) = prediction_matrices(&model, 3);
        let x0 = rand_vec(&mut rng, 2);
        let u = rand_vec(&mut rng, 3);
        let mut x = x0.clone();
        for k in 0..3 {
            x = model.step_state(&x, &u.rows(k, 1).into_owned());
            let pred = (&phi * &x0 + &gamma * &u).rows(2 * k, 2).into_owned();
            assert!((pred - &x).amax() < 1e-12);
        }
    }

    #[test]
    fn small_campaigns_pass() {
        let cfg = CampaignConfig {
            instances: Some(4),
            ..Default::default()
        };
        for c in Campaign::ALL {
            let r = run_campaign(c, &cfg).unwrap();
            assert!(r.passed(), "{}: {:?}", c.name(), r.failures);
            assert!(r.checks > 0);
        }
    }

    #[test]
    fn corrupted_weight_is_caught() {
        let cfg = CampaignConfig {
            instances: Some(3),
            fault: Some(Fault::CorruptQreg),
            ..Default::default()
        };
        let r = run_campaign(Campaign::CostOracle, &cfg).unwrap();
        assert!(!r.passed());
        assert!(r
            .failures
            .iter()
            .all(|f| f.invariant == "closed-form cost equals direct minimization"));
        let r = run_campaign(Campaign::ImplicitMap, &cfg).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn campaign_names_round_trip() {
        for c in Campaign::ALL {
            assert_eq!(Campaign::parse(c.name()).unwrap(), c);
        }
        assert!(Campaign::parse("nope").is_err());
        assert!(run_campaigns(&[], &CampaignConfig::default()).is_err());
    }
}
