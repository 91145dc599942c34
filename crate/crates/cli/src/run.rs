use std::fs;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rg_tori::frequency::{bryuno_sum, AlphaTable, LatticeBudget, ScaleSequences};
use rg_tori::oracle::{
    galerkin_newton, lindstedt_expand, loglog_slope, ode_residual, shared_mode_gap, total_gap, GalerkinOptions,
    OdeOptions,
};
use rg_tori::problem::Problem;
use rg_tori::renorm::{Expansion, ResummedSolution};
use rg_tori::trees::TreePool;
use rg_tori::variational::{LagrangianGrid, LockedPoint, Objective, SolveOptions, Variational};
use rg_tori::{Error, Mode};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{Config, ConfigError, RunMode};

/// Lattice radius of the entering momenta sampled by the cluster audit.
const AUDIT_RADIUS: u32 = 30;
/// Step of the finite differences in the identity checks.
const IDENTITY_STEP: f64 = 1e-4;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Math(Error),
    Audit(String),
    Strict(Vec<String>),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Math(Error::Invalid(_)) | RunError::Io(_) => 2,
            RunError::Math(Error::Budget(_) | Error::ScaleCap { .. } | Error::ModeRadius { .. }) => 4,
            RunError::Math(_) | RunError::Audit(_) | RunError::Strict(_) => 3,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Math(e) => write!(f, "{e}"),
            RunError::Audit(m) => write!(f, "counting audit failed: {m}"),
            RunError::Strict(w) => write!(f, "strict mode: {}", w.join("; ")),
            RunError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Math(e)
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

/// A CSV artifact.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&'static str]) -> Self {
        Self { name: name.to_string(), header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| RunError::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.into_inner().map_err(|e| RunError::Io(e.to_string()))
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Map<String, Value>,
    pub tables: Vec<Table>,
    pub warnings: Vec<String>,
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn mode_str(m: &Mode, d: usize) -> String {
    m.to_vec(d).iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

fn setup(cfg: &Config) -> Result<(Problem, TreePool), RunError> {
    let model = cfg.model()?;
    let problem = Problem::new(cfg.omega()?, model, cfg.truncation())?;
    let pool = TreePool::build(&problem)?;
    Ok((problem, pool))
}

fn solve_options(cfg: &Config) -> SolveOptions {
    SolveOptions { grid: cfg.solve.grid, max_newton: cfg.solve.max_newton, ..Default::default() }
}

fn objective(cfg: &Config) -> Objective {
    if cfg.solve.auxiliary {
        Objective::Auxiliary
    } else {
        Objective::Plain
    }
}

/// Run the configured mode.
pub fn execute(cfg: &Config) -> Result<Outcome, RunError> {
    let mut out = match cfg.run.mode {
        RunMode::Bryuno => bryuno(cfg)?,
        RunMode::Trees => trees(cfg)?,
        RunMode::Selfenergy => selfenergy(cfg)?,
        RunMode::Expand => expand(cfg)?,
        RunMode::Solve => solve(cfg)?,
        RunMode::Verify => verify(cfg)?,
    };
    let decay = cfg.model()?.validate().decay_warnings;
    if !decay.is_empty() {
        out.warnings.push(format!("{} terms exceed the declared decay envelope", decay.len()));
    }
    if cfg.run.strict && !out.warnings.is_empty() {
        return Err(RunError::Strict(out.warnings));
    }
    Ok(out)
}

fn alpha_table(table: &AlphaTable) -> Table {
    let mut t = Table::new("alpha.csv", &["m", "radius", "alpha", "argmin"]);
    for (m, a) in table.csv_rows() {
        t.push(vec![m.to_string(), (1u64 << m).to_string(), num(a), table.argmin[m].iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")]);
    }
    t
}

fn scales_table(seq: &ScaleSequences) -> Table {
    let mut t = Table::new("scales.csv", &["n", "m_n", "p_n", "rho_n"]);
    for (n, m, p, rho) in seq.csv_rows() {
        t.push(vec![n.to_string(), m.to_string(), p.map_or(String::new(), |p| p.to_string()), num(rho)]);
    }
    t
}

fn bryuno(cfg: &Config) -> Result<Outcome, RunError> {
    let omega = cfg.omega()?;
    let table = AlphaTable::compute(&omega, cfg.truncation.m_max, &LatticeBudget::default())?;
    let seq = ScaleSequences::resolve_available(&table, cfg.truncation.p_max as usize + 1);
    let mut out = Outcome::default();
    if seq.n_max() < cfg.truncation.p_max as usize + 1 {
        out.warnings.push(format!("scales resolved only up to n = {} with m_max = {}", seq.n_max(), table.m_max()));
    }
    let sum = bryuno_sum(&table);
    out.results.insert("bryuno_partial_sum".into(), json!(sum.partial));
    out.results.insert("bryuno_last_term".into(), json!(sum.last_term));
    out.results.insert("alpha".into(), json!(table.alpha));
    out.results.insert("m_n".into(), json!(seq.m));
    out.tables.push(alpha_table(&table));
    out.tables.push(scales_table(&seq));
    Ok(out)
}

fn audit(problem: &Problem, pool: &TreePool, out: &mut Outcome) -> Result<(), RunError> {
    let trees = pool.siegel_bryuno_trees(problem);
    let clusters = pool.siegel_bryuno_clusters(problem, AUDIT_RADIUS)?;
    out.results.insert(
        "counting_audit".into(),
        json!({
            "trees_checked": trees.checked,
            "tree_violations": trees.violations,
            "clusters_checked": clusters.checked,
            "cluster_violations": clusters.violations,
        }),
    );
    if !trees.passes() || !clusters.passes() {
        let first = trees.violations.iter().chain(&clusters.violations).next().cloned().unwrap_or_default();
        return Err(RunError::Audit(first));
    }
    Ok(())
}

fn trees(cfg: &Config) -> Result<Outcome, RunError> {
    let (problem, pool) = setup(cfg)?;
    let d = problem.d();
    let mut out = Outcome::default();
    let mut t = Table::new("trees.csv", &["id", "order", "scale", "momentum", "divisor", "symmetry", "encoding"]);
    for (id, s) in pool.subtrees.iter().enumerate() {
        t.push(vec![
            id.to_string(),
            s.order.to_string(),
            s.scale.to_string(),
            mode_str(&s.momentum, d),
            num(s.divisor),
            num(s.symmetry),
            pool.encode(id as u32, d),
        ]);
    }
    out.tables.push(t);
    let counts: Vec<usize> = (1..=pool.max_order()).map(|k| pool.of_order(k).len()).collect();
    out.results.insert("subtrees_per_order".into(), json!(counts));
    out.results.insert("cluster_skeletons".into(), json!(pool.shapes.len()));
    audit(&problem, &pool, &mut out)?;
    Ok(out)
}

fn beta0_or_locked(cfg: &Config, v: &Variational, out: &mut Outcome) -> Result<Vec<f64>, RunError> {
    if let Some(b) = &cfg.run.beta0 {
        if b.len() != v.problem.r() {
            return Err(RunError::Config(ConfigError::Invalid(format!(
                "beta0 has {} components, the model has r = {}",
                b.len(),
                v.problem.r()
            ))));
        }
        return Ok(b.clone());
    }
    let lp = v.solve_bifurcation(cfg.run.eps, &solve_options(cfg))?;
    note_locked(&lp, out);
    Ok(lp.beta0_star)
}

fn note_locked(lp: &LockedPoint, out: &mut Outcome) {
    if lp.degenerate {
        out.warnings.push("the Lagrangian is constant on the grid; the locked point is arbitrary".into());
    }
    out.results.insert("locked_point".into(), serde_json::to_value(lp).unwrap_or(Value::Null));
}

fn selfenergy(cfg: &Config) -> Result<Outcome, RunError> {
    let (problem, pool) = setup(cfg)?;
    let v = Variational::new(&problem, &pool, Objective::Plain);
    let mut out = Outcome::default();
    let beta = beta0_or_locked(cfg, &v, &mut out)?;
    let e = Expansion::new(&problem, &pool, cfg.run.eps, &beta)?;
    let mut rng = StdRng::seed_from_u64(cfg.run.seed);
    let rho0 = problem.partition.rho[0];
    let mut xs: Vec<f64> = (0..cfg.run.samples).map(|_| rng.random_range(-rho0..rho0)).collect();
    xs.extend(e.divisor_grid().into_iter().filter(|x| x.abs() < rho0));
    let r = problem.r();
    let mut t = Table::new("selfenergy.csv", &["q", "x", "i", "j", "value", "symmetry_gap"]);
    let mut worst = 0.0f64;
    for q in -1..=problem.p_max() {
        for &x in &xs {
            let a = e.self_energy(q, x)?;
            let b = e.self_energy(q, -x)?;
            let gap = (&a - b.transpose()).norm();
            worst = worst.max(gap);
            for i in 0..r {
                for j in 0..r {
                    t.push(vec![q.to_string(), num(x), i.to_string(), j.to_string(), num(a[(i, j)]), num(gap)]);
                }
            }
        }
    }
    out.tables.push(t);
    out.results.insert("beta0".into(), json!(beta));
    out.results.insert("max_symmetry_gap".into(), json!(worst));
    Ok(out)
}

fn coefficient_table(sol: &ResummedSolution, d: usize) -> Table {
    let mut t = Table::new("coefficients.csv", &["nu", "j", "b", "order_terms"]);
    for (m, v) in &sol.coeffs {
        for (j, c) in v.iter().enumerate() {
            let per: Vec<String> = sol.per_order.iter().map(|o| num(o.get(m).map_or(0.0, |v| v[j]))).collect();
            t.push(vec![mode_str(m, d), j.to_string(), num(*c), per.join(" ")]);
        }
    }
    t
}

fn expand(cfg: &Config) -> Result<Outcome, RunError> {
    let (problem, pool) = setup(cfg)?;
    let v = Variational::new(&problem, &pool, objective(cfg));
    let mut out = Outcome::default();
    let beta = beta0_or_locked(cfg, &v, &mut out)?;
    let sol = v.solution(cfg.run.eps, &beta)?;
    let rep = v.report(cfg.run.eps, &beta)?;
    out.results.insert("beta0".into(), json!(beta));
    out.results.insert("sup_norm".into(), json!(sol.sup_norm()));
    out.results.insert("report".into(), serde_json::to_value(&rep).unwrap_or(Value::Null));
    out.tables.push(coefficient_table(&sol, problem.d()));
    Ok(out)
}

fn lgrid_table(grid: &LagrangianGrid) -> Table {
    let mut t = Table::new("lgrid.csv", &["beta0", "L", "status"]);
    for (b, v) in grid.points.iter().zip(&grid.values) {
        let beta = b.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" ");
        match v {
            Ok(l) => t.push(vec![beta, num(*l), "ok".into()]),
            Err(e) => t.push(vec![beta, String::new(), e.to_string()]),
        }
    }
    t
}

fn solve(cfg: &Config) -> Result<Outcome, RunError> {
    let (problem, pool) = setup(cfg)?;
    let v = Variational::new(&problem, &pool, objective(cfg));
    let opts = solve_options(cfg);
    let grid = v.lagrangian_grid(cfg.run.eps, &opts)?;
    let lp = v.solve_from_grid(cfg.run.eps, &opts, &grid)?;
    let mut out = Outcome::default();
    note_locked(&lp, &mut out);
    let sol = v.solution(cfg.run.eps, &lp.beta0_star)?;
    out.results.insert("sup_norm".into(), json!(sol.sup_norm()));
    out.tables.push(lgrid_table(&grid));
    out.tables.push(coefficient_table(&sol, problem.d()));
    Ok(out)
}

struct Checks {
    table: Table,
    failed: Vec<String>,
}

impl Checks {
    fn new() -> Self {
        Self { table: Table::new("verify.csv", &["check", "value", "tolerance", "pass"]), failed: Vec::new() }
    }

    fn add(&mut self, name: &str, value: f64, tol: f64, pass: bool) {
        if !pass {
            self.failed.push(name.to_string());
        }
        self.table.push(vec![name.to_string(), num(value), num(tol), pass.to_string()]);
    }

    fn at_most(&mut self, name: &str, value: f64, tol: f64) {
        self.add(name, value, tol, value <= tol);
    }
}

fn verify(cfg: &Config) -> Result<Outcome, RunError> {
    let (problem, pool) = setup(cfg)?;
    let eps = cfg.run.eps;
    let k = problem.max_order();
    let d = problem.d();
    let plain = Variational::new(&problem, &pool, Objective::Plain);
    let opts = solve_options(cfg);
    let mut out = Outcome::default();
    let mut checks = Checks::new();

    let grid = plain.lagrangian_grid(eps, &opts)?;
    let lp = plain.solve_from_grid(eps, &opts, &grid)?;
    note_locked(&lp, &mut out);
    checks.at_most("bifurcation_gradient", lp.g_norm, opts.g_tol(eps));
    let beta = lp.beta0_star.clone();
    let sol = plain.solution(eps, &beta)?;

    // tree solution against the Galerkin-Newton solve, warm started from it
    let gopts = GalerkinOptions {
        mode_radius: cfg.oracle.galerkin_radius,
        newton_tol: cfg.oracle.newton_tol,
        warm_start: Some(sol.coeffs.clone()),
        ..Default::default()
    };
    let gal = galerkin_newton(&problem.model, &problem.omega, eps, &beta, &gopts)?;
    checks.at_most("galerkin_vs_tree", shared_mode_gap(&sol.coeffs, &gal.coeffs), cfg.oracle.agreement_tol);
    checks.at_most("galerkin_iterations", gal.iterations as f64, gopts.max_iter as f64);
    out.results.insert(
        "galerkin".into(),
        json!({"iterations": gal.iterations, "residual": gal.residual, "condition": gal.condition, "imag_max": gal.imag_max}),
    );

    let ode = ode_residual(
        &problem.model,
        &problem.omega,
        eps,
        &beta,
        &sol.coeffs,
        &OdeOptions { horizon: cfg.oracle.horizon, tol: cfg.oracle.ode_tol, ..Default::default() },
    )?;
    checks.at_most("ode_residual", ode.distance, cfg.oracle.ode_bound);
    out.results.insert("ode".into(), json!({"distance": ode.distance, "worst_time": ode.worst_time, "steps": ode.steps}));

    for n in 0..=problem.p_max() {
        let gaps = plain.identity_checks(eps, &beta, n, IDENTITY_STEP)?;
        let tol = (10.0 * IDENTITY_STEP * IDENTITY_STEP).max(1e-8);
        checks.at_most(&format!("identity_self_energy_n{n}"), gaps.self_energy_vs_gradient, tol);
        checks.at_most(&format!("identity_gradient_n{n}"), gaps.gradient_vs_lagrangian, tol);
    }

    let phase = plain.phase_lock_verify(eps, &opts, cfg.oracle.agreement_tol)?;
    let min_xi = phase.xi_values.iter().map(|(_, xi)| *xi).fold(1.0, f64::min);
    checks.add("phase_lock_cutoffs", min_xi, 1.0, phase.cutoffs_ok);
    checks.at_most("phase_lock_self_energy", phase.self_energy_gap, cfg.oracle.agreement_tol);
    checks.at_most("phase_lock_coefficients", phase.coefficient_gap, cfg.oracle.agreement_tol);

    // residual against eps and p_max, Lindstedt against Galerkin; away from the locked
    // point, where symmetric forcings can cancel the leading order
    let r = problem.r();
    let base = match &cfg.oracle.slope_beta0 {
        Some(b) if b.len() == r => b.clone(),
        Some(b) => {
            return Err(RunError::Config(ConfigError::Invalid(format!(
                "slope_beta0 has {} components, the model has r = {r}",
                b.len()
            ))))
        }
        None => (0..r).map(|j| 0.7 + 0.6 * j as f64).collect(),
    };
    out.results.insert("slope_beta0".into(), json!(base));
    let mut curve = Table::new("residual_vs_eps.csv", &["eps", "method", "value"]);
    let lin = lindstedt_expand(&problem.model, &problem.omega, &base, k, cfg.oracle.galerkin_radius)?;
    let mut tree_points = Vec::new();
    let mut lin_points = Vec::new();
    let mut worst_increase = 0.0f64;
    // dropped composition mass may move the residual by at most 1%
    let rel_tail = 1e-2;
    for &e in &cfg.run.eps_grid {
        let mut prev = f64::INFINITY;
        for p in 0..=problem.p_max() {
            let res = Variational { max_scale: p, ..plain }.range_residual(e, &base, rel_tail)?;
            curve.push(vec![num(e), format!("tree_p{p}"), num(res)]);
            worst_increase = worst_increase.max(res - prev);
            prev = res;
        }
        tree_points.push((e, prev));
        let g = galerkin_newton(
            &problem.model,
            &problem.omega,
            e,
            &base,
            &GalerkinOptions { mode_radius: cfg.oracle.galerkin_radius, max_iter: 12, ..Default::default() },
        )?;
        let gap = total_gap(&lin.partial_sum(e, k), &g.coeffs);
        curve.push(vec![num(e), "lindstedt".into(), num(gap)]);
        lin_points.push((e, gap));
    }
    let target = (k + 1) as f64;
    let slope = loglog_slope(&tree_points);
    checks.add("residual_slope", slope, 0.2, (slope - target).abs() <= 0.2);
    checks.at_most("residual_increase_in_p", worst_increase, 0.0);
    let lin_slope = loglog_slope(&lin_points);
    checks.add("lindstedt_slope", lin_slope, 0.2, (lin_slope - target).abs() <= 0.2);

    audit(&problem, &pool, &mut out)?;
    checks.add("counting_audit", 0.0, 0.0, true);

    let table = AlphaTable::compute(&problem.omega, problem.truncation.m_max, &LatticeBudget::default())?;
    out.tables.push(checks.table);
    out.tables.push(curve);
    out.tables.push(alpha_table(&table));
    out.tables.push(lgrid_table(&grid));
    out.tables.push(coefficient_table(&sol, d));
    out.results.insert("failed_checks".into(), json!(checks.failed));
    for f in &checks.failed {
        out.warnings.push(format!("verification check {f} failed"));
    }
    Ok(out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write the CSV tables and `report.json` into `dir`; returns the report path.
pub fn write_outputs(cfg: &Config, outcome: &Outcome, dir: &Path) -> Result<PathBuf, RunError> {
    let io = |e: std::io::Error| RunError::Io(format!("cannot write to {}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let echo = serde_json::to_value(cfg).map_err(|e| RunError::Io(e.to_string()))?;
    let canonical = serde_json::to_vec(&echo).map_err(|e| RunError::Io(e.to_string()))?;
    let mut artifacts = Vec::new();
    for t in &outcome.tables {
        let bytes = t.to_csv()?;
        fs::write(dir.join(&t.name), &bytes).map_err(io)?;
        artifacts.push(json!({"file": t.name, "rows": t.rows.len(), "sha256": sha256_hex(&bytes)}));
    }
    let report = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "mode": cfg.run.mode,
        "config": echo,
        "config_sha256": sha256_hex(&canonical),
        "results": outcome.results,
        "warnings": outcome.warnings,
        "artifacts": artifacts,
    });
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| RunError::Io(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io)?;
    Ok(path)
}
