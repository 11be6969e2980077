//! `dpc`: data generation, fitting, costs, OCP solves, implicit predictors,
//! verification campaigns and the running-example reproductions.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dpc_core::campaign::{run_campaigns, Campaign, CampaignConfig, Fault};
use dpc_core::data::{uniform_tuples, ColumnSample};
use dpc_core::implicit::{implicit_for_problem, implicit_terminal, product_grid, ImplicitPredictorMap};
use dpc_core::io::{load_data, save_data, write_json, write_table_file};
use dpc_core::ocp::{feasible, solve_full, solve_reduced};
use dpc_core::predictors::fit_ls;
use dpc_core::regularizers::{brute_force_cost_tol, ClosedForm};
use dpc_core::{
    fixtures, rank_report, ConstraintSet, ControlObjective, DMatrix, DPCProblem, DVector, DataMatrix, DpcError,
    Regularizer, TerminalConstraint, TrajectoryTuple,
};

use config::ExperimentConfig;

const EXIT_VALIDATION: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;

#[derive(Parser)]
#[command(name = "dpc", version, about = "Regularized data-driven predictive control toolkit")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON experiment configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Relative singular-value tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a data matrix from the configured system.
    GenData(GenDataArgs),
    /// Fit the least-squares predictor and summarize the residual weights.
    Fit(DataArgs),
    /// Closed-form trajectory costs next to the brute-force minimum.
    Cost(CostArgs),
    /// Solve the control problem.
    Solve(SolveArgs),
    /// Implicit predictor map and its surface on a grid.
    Predictor(PredictorArgs),
    /// Run verification campaigns.
    Verify(VerifyArgs),
    /// Sample cloud of the running example, noiseless and noisy.
    ExampleFig2,
    /// Unconstrained implicit predictors of the one-step example.
    ExampleFig3(GridArgs),
    /// Terminal-constrained implicit predictor of the two-step example.
    ExampleFig4(GridArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// samples | hankel | hankel-state
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    n_f: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// Data descriptor JSON written by `gen-data`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct ProblemArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Regularizer spec, e.g. `quadratic:lambda=1` or `mixed:l2=1,l3=100`.
    #[arg(long)]
    regularizer: Option<String>,
    /// Use the affine formulation (generators sum to one).
    #[arg(long)]
    affine: bool,
    /// Initial condition, `;`-separated.
    #[arg(long, allow_hyphen_values = true)]
    xi: Option<String>,
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// CSV with one stacked `(xi, u, y)` trajectory per row.
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// Number of random trajectories when no file is given.
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Solve the reduced problem over `(u, y)` instead of the full one.
    #[arg(long)]
    reduced: bool,
}

#[derive(Args)]
struct PredictorArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Clone, Copy)]
struct GridArgs {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    grid_min: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    grid_max: f64,
    /// Points per coordinate.
    #[arg(long, default_value_t = 21)]
    grid_n: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Comma-separated campaign names; all campaigns when omitted.
    #[arg(long)]
    campaigns: Option<String>,
    /// Instances per campaign (default: each campaign's own count).
    #[arg(long)]
    instances: Option<usize>,
    /// Deliberately corrupt an input to check that the campaigns notice.
    #[arg(long)]
    inject_fault: Option<String>,
}

/// Error carrying the process exit code.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(x) = e.downcast_ref::<Exit>() {
        return x.code;
    }
    match e.downcast_ref::<DpcError>() {
        Some(DpcError::Infeasible { .. }) => EXIT_INFEASIBLE,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Settings after merging the config file with command-line flags.
struct Settings {
    cfg: ExperimentConfig,
    seed: u64,
    tol: f64,
    out: PathBuf,
    base: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (cfg, base) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let cfg: ExperimentConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            (cfg, path.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    let ctx = Settings {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        tol: cli.tol.or(cfg.tol).unwrap_or(dpc_core::DEFAULT_TOL),
        out: cli
            .out
            .clone()
            .or_else(|| cfg.out.as_ref().map(|o| base.join(o)))
            .unwrap_or_else(|| "out".into()),
        cfg,
        base,
    };
    if ctx.tol.is_nan() || ctx.tol <= 0.0 {
        bail!("--tol must be positive");
    }
    match cli.command {
        Command::GenData(a) => gen_data(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Cost(a) => cost(&ctx, a),
        Command::Solve(a) => solve(&ctx, a),
        Command::Predictor(a) => predictor(&ctx, a),
        Command::Verify(a) => verify(&ctx, a),
        Command::ExampleFig2 => example_fig2(&ctx),
        Command::ExampleFig3(g) => example_fig3(&ctx, g),
        Command::ExampleFig4(g) => example_fig4(&ctx, g),
    }
}

fn out_dir(ctx: &Settings) -> anyhow::Result<&Path> {
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    Ok(&ctx.out)
}

fn gen_data(ctx: &Settings, a: GenDataArgs) -> anyhow::Result<()> {
    let mut spec = ctx.cfg.data.clone().unwrap_or_default();
    if let Some(s) = a.source {
        spec.source = s.parse()?;
    }
    if a.samples.is_some() {
        spec.samples = a.samples;
    }
    if a.n_f.is_some() {
        spec.n_f = a.n_f;
    }
    let mut system = ctx.cfg.system.clone().unwrap_or_default();
    if a.noise.is_some() {
        system.noise_std = a.noise;
    }
    let model = system.model()?;
    let ColumnSample { exact, measured, .. } = spec.generate(&model, ctx.seed)?;
    let dir = out_dir(ctx)?;
    let desc = save_data(&measured, dir, "data", Some(ctx.seed))?;
    save_data(&exact, dir, "data_exact", Some(ctx.seed))?;
    let n = Some(model.state_dim());
    let report = RankPair {
        measured: rank_report(&measured, n, ctx.tol)?,
        exact: rank_report(&exact, n, ctx.tol)?,
    };
    write_json(&dir.join("rank_report.json"), &report)?;
    println!(
        "wrote {} ({} x {}); rank D = {} (noiseless {})",
        desc.display(),
        measured.rows(),
        measured.ell(),
        report.measured.rank_d,
        report.exact.rank_d
    );
    Ok(())
}

#[derive(Serialize)]
struct RankPair {
    measured: dpc_core::RankReport,
    exact: dpc_core::RankReport,
}

fn load(ctx: &Settings, a: &DataArgs) -> anyhow::Result<DataMatrix> {
    let path = match (&a.data, ctx.cfg.data.as_ref().and_then(|d| d.path.as_ref())) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => ctx.base.join(p),
        (None, None) => bail!(Exit {
            code: EXIT_VALIDATION,
            message: "no data given; pass --data or set data.path in the config".into(),
        }),
    };
    let (d, _) = load_data(&path).with_context(|| format!("loading data {}", path.display()))?;
    Ok(d)
}

#[derive(Serialize)]
struct WeightSummary {
    name: &'static str,
    dim: usize,
    rank: usize,
    singular: bool,
    eigenvalues: Vec<f64>,
}

fn fit(ctx: &Settings, a: DataArgs) -> anyhow::Result<()> {
    let d = load(ctx, &a)?;
    let p = fit_ls(&d, ctx.tol)?;
    let dir = out_dir(ctx)?;
    fs::write(dir.join("predictor.json"), p.to_json()? + "\n")?;
    let summary: Vec<WeightSummary> = [("q_reg", &p.q_reg), ("r_reg", &p.r_reg), ("wwt", &p.wwt)]
        .into_iter()
        .map(|(name, w)| WeightSummary {
            name,
            dim: w.weight.nrows(),
            rank: w.rank,
            singular: w.singular,
            eigenvalues: w.eigenvalues(),
        })
        .collect();
    write_json(&dir.join("weights.json"), &summary)?;
    write_json(&dir.join("rank_report.json"), &rank_report(&d, d.lag_hint(), ctx.tol)?)?;
    for s in &summary {
        println!(
            "{}: rank {}/{}{}",
            s.name,
            s.rank,
            s.dim,
            if s.singular { " (singular)" } else { "" }
        );
    }
    Ok(())
}

fn regularizer(ctx: &Settings, a: &ProblemArgs) -> anyhow::Result<Regularizer> {
    match (&a.regularizer, &ctx.cfg.regularizer) {
        (Some(s), _) => Ok(Regularizer::parse(s, Path::new("."))?),
        (None, Some(s)) => Ok(Regularizer::parse(s, &ctx.base)?),
        (None, None) => Ok(Regularizer::Quadratic { lambda: 1.0 }),
    }
}

fn problem(ctx: &Settings, a: &ProblemArgs) -> anyhow::Result<DPCProblem> {
    let d = load(ctx, &a.data)?;
    let reg = regularizer(ctx, a)?;
    let objective = ctx
        .cfg
        .objective
        .clone()
        .unwrap_or_default()
        .build(d.y_dim(), d.u_dim())?;
    let constraints = ctx.cfg.constraints.clone().unwrap_or_default().build(&d, &objective)?;
    let xi = match (&a.xi, &ctx.cfg.xi) {
        (Some(s), _) => config::parse_list(s)?,
        (None, Some(v)) => DVector::from_vec(v.clone()),
        (None, None) => DVector::zeros(d.xi_dim()),
    };
    let mut prob =
        DPCProblem::new(d, objective, constraints, reg, xi)?.with_affine(a.affine || ctx.cfg.affine.unwrap_or(false));
    prob.tol = ctx.tol;
    Ok(prob)
}

fn cost(ctx: &Settings, a: CostArgs) -> anyhow::Result<()> {
    let d = load(ctx, &a.problem.data)?;
    let reg = regularizer(ctx, &a.problem)?;
    let affine = a.problem.affine || ctx.cfg.affine.unwrap_or(false);
    let tuples: Vec<TrajectoryTuple> = match &a.trajectories {
        Some(path) => {
            let m = dpc_core::io::read_matrix_csv(path)?;
            if m.ncols() != d.rows() {
                bail!(
                    "trajectory rows have {} entries, the data has {} rows",
                    m.ncols(),
                    d.rows()
                );
            }
            (0..m.nrows())
                .map(|i| TrajectoryTuple::from_stacked(&m.row(i).transpose(), d.xi_dim(), d.u_dim()))
                .collect()
        }
        None => uniform_tuples(d.layout(), a.samples, 1.0, ctx.seed)?,
    };
    let closed = match ClosedForm::new(&reg, &d, affine, ctx.tol) {
        Ok(c) => Some(c),
        Err(DpcError::ClosedFormUnavailable(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let mut header: Vec<String> = (0..d.rows()).map(|i| format!("w{i}")).collect();
    header.extend(["total", "term_y", "term_u", "term_xi", "brute_force"].map(String::from));
    let mut rows = Vec::with_capacity(tuples.len());
    for w in &tuples {
        let mut row: Vec<f64> = w.stacked().iter().copied().collect();
        match &closed {
            Some(c) => {
                let b = c.evaluate(w)?;
                row.extend([b.total, b.term_y, b.term_u, b.term_xi]);
            }
            None => row.extend([f64::NAN; 4]),
        }
        let brute = match brute_force_cost_tol(&reg, &d, w, affine, ctx.tol) {
            Ok(b) => b.cost,
            Err(DpcError::Infeasible { .. }) => f64::INFINITY,
            Err(e) => return Err(e.into()),
        };
        row.push(brute);
        rows.push(row);
    }
    let dir = out_dir(ctx)?;
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table_file(&dir.join("costs.csv"), &header, &rows)?;
    println!("wrote {} trajectory costs for {}", rows.len(), reg.name());
    Ok(())
}

fn solve(ctx: &Settings, a: SolveArgs) -> anyhow::Result<()> {
    let prob = problem(ctx, &a.problem)?;
    let report = feasible(&prob)?;
    let sol = if a.reduced {
        solve_reduced(&prob)?
    } else {
        solve_full(&prob)?
    };
    let dir = out_dir(ctx)?;
    write_json(&dir.join("feasibility.json"), &report)?;
    write_json(&dir.join("solution.json"), &sol)?;
    if !sol.is_optimal() {
        bail!(Exit {
            code: EXIT_INFEASIBLE,
            message: format!(
                "problem is infeasible ({:?}, residual {:.3e})",
                report.rule, report.residual
            ),
        });
    }
    println!(
        "optimal value {} after {} iterations",
        dpc_core::io::format_number(sol.value),
        sol.diagnostics.iterations
    );
    Ok(())
}

fn write_surface(
    path: &Path,
    map: &ImplicitPredictorMap,
    xi_grid: &[DVector<f64>],
    u_grid: &[DVector<f64>],
) -> anyhow::Result<()> {
    let header = map.surface_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table_file(path, &header, &map.surface(xi_grid, u_grid)?)?;
    Ok(())
}

fn predictor(ctx: &Settings, a: PredictorArgs) -> anyhow::Result<()> {
    let prob = problem(ctx, &a.problem)?;
    let map = implicit_for_problem(&prob)?;
    let g = a.grid;
    let xi_grid = product_grid(map.xi_dim(), g.grid_min, g.grid_max, g.grid_n, &[])?;
    let u_grid = product_grid(map.u_dim(), g.grid_min, g.grid_max, g.grid_n, &[])?;
    if xi_grid.len().saturating_mul(u_grid.len()) > 1_000_000 {
        bail!("surface grid exceeds one million points; lower --grid-n");
    }
    let dir = out_dir(ctx)?;
    fs::write(dir.join("map.json"), map.to_json()? + "\n")?;
    write_surface(&dir.join("surface.csv"), &map, &xi_grid, &u_grid)?;
    for w in &map.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "wrote {:?} map and {} surface points",
        map.variant,
        xi_grid.len() * u_grid.len()
    );
    Ok(())
}

fn verify(ctx: &Settings, a: VerifyArgs) -> anyhow::Result<()> {
    let list = match &a.campaigns {
        None => Campaign::ALL.to_vec(),
        Some(s) => s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(Campaign::parse)
            .collect::<dpc_core::Result<Vec<_>>>()?,
    };
    let cfg = CampaignConfig {
        instances: a.instances,
        base_seed: ctx.seed,
        fault: a.inject_fault.as_deref().map(Fault::parse).transpose()?,
    };
    let results = run_campaigns(&list, &cfg)?;
    let dir = out_dir(ctx)?;
    write_json(&dir.join("verify_report.json"), &results)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {}: {} instances, {} checks, max error {:.3e}",
            r.campaign.name(),
            r.instances,
            r.checks,
            r.max_error
        );
        for f in r.failures.iter().take(10) {
            println!("  seed {} [{}] {}", f.seed, f.invariant, f.detail);
        }
        if r.failures.len() > 10 {
            println!("  ... {} more", r.failures.len() - 10);
        }
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        bail!(Exit {
            code: EXIT_VERIFICATION,
            message: format!("{failed} of {} campaigns failed", results.len()),
        });
    }
    Ok(())
}

fn example_fig2(ctx: &Settings) -> anyhow::Result<()> {
    let cloud = fixtures::cloud(ctx.seed)?;
    let dir = out_dir(ctx)?;
    save_data(&cloud.exact, dir, "fig2_exact", Some(ctx.seed))?;
    save_data(&cloud.measured, dir, "fig2_noisy", Some(ctx.seed))?;
    let report = RankPair {
        measured: rank_report(&cloud.measured, Some(1), ctx.tol)?,
        exact: rank_report(&cloud.exact, Some(1), ctx.tol)?,
    };
    write_json(&dir.join("fig2_rank.json"), &report)?;
    println!(
        "noiseless: rank D = {}, rank Z = {}; noisy: rank D = {}",
        report.exact.rank_d, report.exact.rank_z, report.measured.rank_d
    );
    Ok(())
}

const FIG3_LAMBDAS: [(&str, f64); 4] = [("0", 0.0), ("0.1", 0.1), ("1", 1.0), ("10", 10.0)];

fn scalar(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn example_fig3(ctx: &Settings, g: GridArgs) -> anyhow::Result<()> {
    let d = fixtures::hankel_nf1()?;
    let objective = ControlObjective::new(scalar(1.0), DVector::zeros(1), scalar(1.0), DVector::zeros(1))?;
    let grid = product_grid(1, g.grid_min, g.grid_max, g.grid_n, &[])?;
    let dir = out_dir(ctx)?;
    let mut maps = Vec::new();
    for (label, lambda) in FIG3_LAMBDAS {
        let mut prob = DPCProblem::new(
            d.clone(),
            objective.clone(),
            ConstraintSet::default(),
            Regularizer::Quadratic { lambda },
            DVector::zeros(1),
        )?;
        prob.tol = ctx.tol;
        let map = implicit_for_problem(&prob)?;
        write_surface(
            &dir.join(format!("fig3_surface_lambda_{label}.csv")),
            &map,
            &grid,
            &grid,
        )?;
        let mut rows = Vec::with_capacity(grid.len());
        for x0 in &grid {
            let sol = solve_full(&prob.with_xi(x0.clone()))?;
            if !sol.is_optimal() {
                return Err(anyhow!("example problem infeasible at x0 = {}", x0[0]));
            }
            let on_map = map.predict(x0, &sol.u)?;
            rows.push(vec![x0[0], sol.u[0], sol.y[0], on_map[0]]);
        }
        write_table_file(
            &dir.join(format!("fig3_solutions_lambda_{label}.csv")),
            &["x0", "u_opt", "x_opt", "x_hat_map"],
            &rows,
        )?;
        maps.push(map);
    }
    write_json(&dir.join("fig3_maps.json"), &maps)?;
    println!("wrote surfaces and optimal solutions for lambda in {{0, 0.1, 1, 10}}");
    Ok(())
}

fn example_fig4(ctx: &Settings, g: GridArgs) -> anyhow::Result<()> {
    let d = fixtures::hankel_nf2()?;
    let y_ref = DVector::from_vec(vec![0.5, 0.5]);
    let lambda = 1.0;
    let q = DMatrix::identity(2, 2);
    // Input costs are left unspecified for this figure; none are used.
    let objective = ControlObjective::new(q.clone(), y_ref.clone(), DMatrix::zeros(2, 2), DVector::zeros(2))?;
    let constraints = ConstraintSet {
        terminal: Some(TerminalConstraint::last_steps(1, 1, &y_ref)?),
        ..Default::default()
    };
    let mut prob = DPCProblem::new(
        d.clone(),
        objective,
        constraints,
        Regularizer::Quadratic { lambda },
        DVector::zeros(1),
    )?;
    prob.tol = ctx.tol;
    let map = implicit_for_problem(&prob)?;
    let (_, weights) = implicit_terminal(&fit_ls(&d, ctx.tol)?, &q, &y_ref, lambda, 1)?;
    let xi_grid = product_grid(1, g.grid_min, g.grid_max, g.grid_n, &[])?;
    // Second input held at zero.
    let u_grid = product_grid(2, g.grid_min, g.grid_max, g.grid_n, &[(1, 0.0)])?;
    let dir = out_dir(ctx)?;
    write_surface(&dir.join("fig4_surface.csv"), &map, &xi_grid, &u_grid)?;
    fs::write(dir.join("fig4_map.json"), map.to_json()? + "\n")?;
    write_json(&dir.join("fig4_weights.json"), &weights)?;
    println!(
        "wrote terminal-constrained surface ({} points)",
        xi_grid.len() * u_grid.len()
    );
    Ok(())
}
