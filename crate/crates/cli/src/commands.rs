use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cascade_mdp::bellman::{
    solve_bellman, solve_coupled_baseline, solve_diagonalizable, solve_partial_feedback, BellmanSolution, DiagMode,
};
use cascade_mdp::ctmc::classify_coupling;
use cascade_mdp::model::{diagonalizable_sufficient, lift_to_joint, triangular_form, TabulatedPolicy};
use cascade_mdp::simulator::{estimate_eta_with, portfolio_series, simulate_stream};
use cascade_mdp::singular::{self, build_qp, exact_interior_solution, qp_oracle_grid, solve_box_qp, steady_state};
use cascade_mdp::zoo::{self, ZooEntry};
use cascade_mdp::{CostSpec, Exec, Policy, ProbabilityVector};
use clap::{Args, ValueEnum};
use serde_json::json;

use crate::model_file::{export_model, parse_model, parse_psi};
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_model(path: &Path) -> Result<ZooEntry, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_model(&text)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes `text` to `dir/name`, or to stdout when no directory is given.
fn emit(dir: Option<&Path>, name: &str, text: &str) -> Result<(), CliError> {
    match dir {
        Some(d) => write_file(&d.join(name), text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Parse(format!("{what}: '{t}' is not a number"))))
        .collect()
}

fn positive(v: f64, what: &str) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Parse(format!("{what} must be positive, got {v}")))
    }
}

fn apply_cost_flags(mut cost: CostSpec, psi: Option<&str>, alpha: Option<f64>) -> Result<CostSpec, CliError> {
    if let Some(kind) = psi {
        cost = cost.with_psi(parse_psi(kind)?);
    }
    if let Some(a) = alpha {
        if !(a >= 0.0) {
            return Err(CliError::Parse(format!("--alpha must be nonnegative, got {a}")));
        }
        cost = cost.with_alpha(a);
    }
    Ok(cost)
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Reduction {
    C1,
    Cweighted,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    model: PathBuf,
    #[arg(long = "T", default_value_t = 5.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Control cost: zero, quad or custom (Σ(u+½)²). Defaults to the model file's.
    #[arg(long)]
    psi: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Controls see x only; the driver enters through its marginal.
    #[arg(long)]
    partial_feedback: bool,
    /// Initial driver distribution for --partial-feedback (default uniform).
    #[arg(long)]
    pz0: Option<String>,
    /// Also solve on the joint state space and report the largest gap.
    #[arg(long)]
    coupled_baseline: bool,
    /// Solve a reduced vector equation instead of the matrix one.
    #[arg(long, value_enum)]
    diag_reduce: Option<Reduction>,
    /// Output directory for k.csv, policy.csv and summary.json.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn k_csv(sol: &BellmanSolution) -> String {
    let (r, n) = (sol.model().r(), sol.model().n());
    let mut out = String::from("t");
    for z in 0..r {
        for x in 0..n {
            write!(out, ",k[{z}][{x}]").unwrap();
        }
    }
    out.push('\n');
    for (t, k) in sol.grid().iter().zip(sol.k_all()) {
        write!(out, "{t:.16e}").unwrap();
        for z in 0..r {
            for x in 0..n {
                write!(out, ",{:.16e}", k[(x, z)]).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

fn policy_csv(tab: &TabulatedPolicy) -> String {
    let (r, n, p) = tab.dims();
    let mut out = String::from("t,z,x");
    for j in 0..p {
        write!(out, ",u{j}").unwrap();
    }
    out.push('\n');
    for (k, t) in tab.grid().iter().enumerate() {
        for z in 0..r {
            for x in 0..n {
                write!(out, "{t:.16e},{z},{x}").unwrap();
                for u in tab.at_cell(k, z, x) {
                    write!(out, ",{u:.16e}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out
}

fn read_policy_csv(path: &Path, r: usize, n: usize, p: usize) -> Result<TabulatedPolicy, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut grid: Vec<f64> = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = |msg: &str| CliError::Parse(format!("{} line {}: {msg}", path.display(), i + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + p {
            return Err(bad(&format!("expected {} fields, found {}", 3 + p, fields.len())));
        }
        let t: f64 = fields[0].parse().map_err(|_| bad("bad time"))?;
        if grid.last() != Some(&t) {
            grid.push(t);
        }
        for f in &fields[3..] {
            values.push(f.parse::<f64>().map_err(|_| bad("bad control value"))?);
        }
    }
    Ok(TabulatedPolicy::new(grid, r, n, p, values)?)
}

fn eta_table(r: usize, n: usize, value: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
    (0..r).map(|z| (0..n).map(|x| value(z, x)).collect()).collect()
}

pub fn solve(a: SolveArgs) -> Result<(), CliError> {
    let entry = read_model(&a.model)?;
    let horizon = positive(a.horizon, "--T")?;
    let dt = positive(a.dt, "--dt")?;
    let cost = apply_cost_flags(entry.cost.clone(), a.psi.as_deref(), a.alpha)?;
    let model = &entry.model;
    let (r, n) = (model.r(), model.n());
    let out = a.out.as_deref();
    let start = Instant::now();

    if let Some(mode) = a.diag_reduce {
        let (mode, c) = match mode {
            Reduction::C1 => (DiagMode::C1, None),
            Reduction::Cweighted => (DiagMode::Cweighted, Some(steady_state(model.c())?)),
        };
        let red = solve_diagonalizable(model, &cost, horizon, dt, mode, c.as_ref())?;
        let mut csv = String::from("t");
        for x in 0..n {
            write!(csv, ",k[{x}]").unwrap();
        }
        csv.push('\n');
        for (i, t) in red.grid().iter().enumerate() {
            write!(csv, "{t:.16e}").unwrap();
            for v in red.k_at(i).iter() {
                write!(csv, ",{v:.16e}").unwrap();
            }
            csv.push('\n');
        }
        let summary = json!({
            "model": entry.name,
            "solver": format!("{mode:?}"),
            "horizon": horizon,
            "dt": dt,
            "eta": (0..n).map(|x| red.optimal_value(x)).collect::<Vec<_>>(),
            "seconds": start.elapsed().as_secs_f64(),
        });
        if out.is_some() {
            emit(out, "k.csv", &csv)?;
        }
        emit(out, "summary.json", &pretty(&summary))?;
        return Ok(());
    }

    let (sol, solver, pz0) = if a.partial_feedback {
        let pz0 = match &a.pz0 {
            Some(s) => ProbabilityVector::from_slice(&parse_list(s, "--pz0")?)?,
            None => ProbabilityVector::uniform(r),
        };
        (solve_partial_feedback(model, &cost, horizon, dt, &pz0)?, "partial-feedback", Some(pz0))
    } else {
        (solve_bellman(model, &cost, horizon, dt)?, "decoupled", None)
    };
    let seconds = start.elapsed().as_secs_f64();
    let mut summary = json!({
        "model": entry.name,
        "solver": solver,
        "horizon": horizon,
        "dt": dt,
        "seconds": seconds,
    });
    match &pz0 {
        Some(pz0) => {
            let eta: Vec<f64> = (0..n)
                .map(|x0| {
                    let mut px = vec![0.0; n];
                    px[x0] = 1.0;
                    sol.optimal_value_mixture(pz0.as_slice(), &px)
                })
                .collect();
            summary["pz0"] = json!(pz0.as_slice());
            summary["eta"] = json!(eta);
        }
        None => summary["eta"] = json!(eta_table(r, n, |z, x| sol.optimal_value(z, x))),
    }
    if a.coupled_baseline {
        let start = Instant::now();
        let joint = solve_coupled_baseline(model, &cost, horizon, dt)?;
        let seconds = start.elapsed().as_secs_f64();
        let mut gap = 0.0f64;
        for i in 0..sol.grid().len() {
            for z in 0..r {
                for x in 0..n {
                    gap = gap.max((sol.k_at(i)[(x, z)] - joint.value(i, z, x)).abs());
                }
            }
        }
        summary["coupled"] = json!({
            "eta": eta_table(r, n, |z, x| joint.optimal_value(z, x)),
            "max_gap": gap,
            "seconds": seconds,
        });
    }
    if out.is_some() {
        emit(out, "k.csv", &k_csv(&sol))?;
        emit(out, "policy.csv", &policy_csv(&sol.tabulate()))?;
    }
    emit(out, "summary.json", &pretty(&summary))
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    model: PathBuf,
    #[arg(long = "T", default_value_t = 5.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of paths; more than one also estimates the expected cost.
    #[arg(long, default_value_t = 1)]
    paths: usize,
    /// Either a `solve` output directory (or its policy.csv) or a constant control list `u0,u1,...`.
    #[arg(long, allow_hyphen_values = true)]
    policy: Option<String>,
    #[arg(long, default_value_t = 0)]
    z0: usize,
    /// Initial controlled state (default: the last one).
    #[arg(long)]
    x0: Option<usize>,
    /// Also write the value, investment and wealth series of the first path.
    #[arg(long)]
    portfolio: bool,
    #[arg(long)]
    psi: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory for path.txt, portfolio.csv and eta.json.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn load_policy(spec: Option<&str>, entry: &ZooEntry) -> Result<Policy, CliError> {
    let m = &entry.model;
    let Some(spec) = spec else { return Ok(Policy::Constant(m.midpoint())) };
    let path = Path::new(spec);
    if path.is_dir() {
        return Ok(Policy::Tabulated(read_policy_csv(&path.join("policy.csv"), m.r(), m.n(), m.p())?));
    }
    if path.is_file() {
        return Ok(Policy::Tabulated(read_policy_csv(path, m.r(), m.n(), m.p())?));
    }
    let u = parse_list(spec, "--policy")?;
    if u.len() != m.p() {
        return Err(CliError::Parse(format!("--policy has {} controls, model has {}", u.len(), m.p())));
    }
    m.check_bounds(&u)?;
    Ok(Policy::Constant(u))
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let entry = read_model(&a.model)?;
    let horizon = positive(a.horizon, "--T")?;
    if a.paths == 0 {
        return Err(CliError::Parse("--paths must be at least 1".into()));
    }
    let model = &entry.model;
    let x0 = a.x0.unwrap_or(model.n() - 1);
    let policy = load_policy(a.policy.as_deref(), &entry)?;
    let out = a.out.as_deref();
    let path = simulate_stream(model, &policy, a.z0, x0, horizon, a.seed, 0)?;
    if out.is_some() || a.paths == 1 {
        emit(out, "path.txt", &path.to_text())?;
    }
    if a.portfolio {
        let v = entry.v.as_ref().ok_or_else(|| CliError::Parse("--portfolio needs a model with V".into()))?;
        let series = portfolio_series(&path, v)?;
        let mut csv = String::from("t,v,s,w\n");
        for k in 0..series.times.len() {
            writeln!(
                csv,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                series.times[k], series.value[k], series.investment[k], series.wealth[k]
            )
            .unwrap();
        }
        emit(out, "portfolio.csv", &csv)?;
    }
    if a.paths > 1 {
        let cost = apply_cost_flags(entry.cost.clone(), a.psi.as_deref(), a.alpha)?;
        let est = estimate_eta_with(Exec::default(), model, &policy, &cost, a.z0, x0, horizon, a.paths, a.seed)?;
        let summary = json!({
            "model": entry.name,
            "z0": a.z0,
            "x0": x0,
            "horizon": horizon,
            "seed": a.seed,
            "n_paths": est.n_paths,
            "mean": est.mean,
            "stderr": est.stderr,
        });
        emit(out, "eta.json", &pretty(&summary))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct QpArgs {
    /// Driver distribution `c1,c2,c3`.
    #[arg(long)]
    c: String,
    /// Step of the brute-force comparison grid.
    #[arg(long, default_value_t = 0.01)]
    oracle_step: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

pub fn qp(a: QpArgs) -> Result<(), CliError> {
    let c = ProbabilityVector::from_slice(&parse_list(&a.c, "--c")?)?;
    let problem = build_qp(&c)?;
    let sol = solve_box_qp(&problem)?;
    let (ou, oeta) = qp_oracle_grid(&problem, positive(a.oracle_step, "--oracle-step")?)?;
    let exact = exact_interior_solution(&problem)?;
    let summary = json!({
        "c": c.as_slice(),
        "u0": sol.u0.as_slice(),
        "eta_star": sol.eta_star,
        "class": sol.class.to_string(),
        "active": sol.active,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "exact_interior": exact.as_ref().map(|u| u.as_slice().to_vec()),
        "oracle": { "step": a.oracle_step, "u": ou.as_slice(), "eta": oeta, "gap": (sol.eta_star - oeta).abs() },
    });
    let text = pretty(&summary);
    match &a.out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Grid divisions per simplex edge.
    #[arg(long, default_value_t = 20)]
    resolution: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let rows = singular::sweep(Exec::default(), a.resolution)?;
    let csv = singular::sweep_csv(&rows);
    match &a.out {
        Some(p) => write_file(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[arg(long, default_value = "4,8,16,32")]
    r_list: String,
    /// Controlled states of the synthetic model.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Median of five timed runs after one discarded warm-up.
fn median_seconds<F: FnMut() -> Result<(), CliError>>(mut f: F) -> Result<f64, CliError> {
    f()?;
    let mut times = Vec::with_capacity(5);
    for _ in 0..5 {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[2])
}

pub fn benchmark(a: BenchmarkArgs) -> Result<(), CliError> {
    let horizon = positive(a.horizon, "--T")?;
    let dt = positive(a.dt, "--dt")?;
    let mut csv = String::from("r,n,decoupled_s,coupled_s,ratio\n");
    for r in parse_list(&a.r_list, "--r-list")? {
        if r < 1.0 || r.fract() != 0.0 {
            return Err(CliError::Parse(format!("--r-list entries must be positive integers, got {r}")));
        }
        let entry = zoo::scaling_model(r as usize, a.n)?;
        let dec = median_seconds(|| solve_bellman(&entry.model, &entry.cost, horizon, dt).map(|_| ()).map_err(Into::into))?;
        let cpl = median_seconds(|| {
            solve_coupled_baseline(&entry.model, &entry.cost, horizon, dt).map(|_| ()).map_err(Into::into)
        })?;
        writeln!(csv, "{r},{},{dec:.6e},{cpl:.6e},{:.4}", a.n, cpl / dec).unwrap();
    }
    match &a.out {
        Some(p) => write_file(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn classify(path: &Path) -> Result<(), CliError> {
    let entry = read_model(path)?;
    let m = &entry.model;
    let mut controls = m.vertices();
    controls.push(m.midpoint());
    let mut jumps = Vec::new();
    for u in controls {
        jumps.extend(lift_to_joint(m, &Policy::Constant(u), 0.0)?.jumps());
    }
    let class = classify_coupling(&jumps, m.r(), m.n())?;
    let tri = triangular_form(m);
    let tri_text = match (tri.valid, tri.column) {
        (false, _) => "invalid".to_string(),
        (true, Some(c)) => format!("valid (column {c})"),
        (true, None) => "valid (no controlled column)".to_string(),
    };
    println!("coupling: {class}");
    println!("diagonalizable (x feedback): {}", diagonalizable_sufficient(m, false));
    println!("diagonalizable (z feedback): {}", diagonalizable_sufficient(m, true));
    println!("triangular form: {tri_text}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct ZooArgs {
    /// Model name, e.g. bond-stock or binary-decision-4.
    name: Option<String>,
    /// List the available names.
    #[arg(long)]
    list: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

pub fn zoo(a: ZooArgs) -> Result<(), CliError> {
    if a.list || a.name.is_none() {
        for name in zoo::NAMES {
            println!("{name}");
        }
        return Ok(());
    }
    let entry = zoo::by_name(a.name.as_deref().unwrap_or_default())?;
    let text = export_model(&entry);
    match &a.out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
