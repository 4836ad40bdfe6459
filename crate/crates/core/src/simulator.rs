//! Exact event-driven simulation of cascade sample paths by thinning,
//! Monte Carlo estimates of the cost functional, and portfolio accounting.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bellman::{CostMatrix, CostSpec, Psi};
use crate::ctmc::ProbabilityVector;
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};
use crate::model::{CascadeModel, Policy};

/// Subintervals used when a time-varying integrand has no closed form.
const SIMPSON_PANELS: usize = 64;

/// Which chain jumped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chain {
    Z,
    X,
}

/// One accepted jump.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub chain: Chain,
    pub from: usize,
    pub to: usize,
    /// Control in force just before the jump.
    pub control: Vec<f64>,
}

/// A simulated trajectory of `(z, x)` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub seed: u64,
    pub stream: u64,
    pub z0: usize,
    pub x0: usize,
    pub horizon: f64,
    pub events: Vec<Event>,
    /// Number of policy evaluations that had to be clamped into the box.
    pub clamped: usize,
}

impl SamplePath {
    /// State `(z, x)` at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> (usize, usize) {
        let (mut z, mut x) = (self.z0, self.x0);
        for e in self.events.iter().take_while(|e| e.time <= t) {
            match e.chain {
                Chain::Z => z = e.to,
                Chain::X => x = e.to,
            }
        }
        (z, x)
    }

    pub fn final_state(&self) -> (usize, usize) {
        self.state_at(f64::INFINITY)
    }

    /// Line-oriented text form: a header row, then one row per event.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "seed,stream,z0,x0,T").unwrap();
        writeln!(out, "{},{},{},{},{:.16e}", self.seed, self.stream, self.z0, self.x0, self.horizon).unwrap();
        let p = self.events.first().map_or(0, |e| e.control.len());
        let mut head = String::from("time,chain,from,to");
        for j in 0..p {
            write!(head, ",u{j}").unwrap();
        }
        writeln!(out, "{head}").unwrap();
        for e in &self.events {
            let chain = match e.chain {
                Chain::Z => "Z",
                Chain::X => "X",
            };
            write!(out, "{:.16e},{chain},{},{}", e.time, e.from, e.to).unwrap();
            for u in &e.control {
                write!(out, ",{u:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`SamplePath::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::InvalidArgument(format!("path line {}: {msg}", line + 1));
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 3 {
            return Err(bad(0, "truncated header"));
        }
        let head: Vec<&str> = lines[1].split(',').collect();
        if head.len() != 5 {
            return Err(bad(1, "expected seed,stream,z0,x0,T"));
        }
        let int = |s: &str, i: usize| s.trim().parse::<u64>().map_err(|_| bad(i, "bad integer"));
        let num = |s: &str, i: usize| s.trim().parse::<f64>().map_err(|_| bad(i, "bad number"));
        let mut path = SamplePath {
            seed: int(head[0], 1)?,
            stream: int(head[1], 1)?,
            z0: int(head[2], 1)? as usize,
            x0: int(head[3], 1)? as usize,
            horizon: num(head[4], 1)?,
            events: Vec::new(),
            clamped: 0,
        };
        for (i, line) in lines.iter().enumerate().skip(3) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 4 {
                return Err(bad(i, "expected time,chain,from,to"));
            }
            let chain = match f[1].trim() {
                "Z" => Chain::Z,
                "X" => Chain::X,
                _ => return Err(bad(i, "chain must be Z or X")),
            };
            let control = f[4..].iter().map(|s| num(s, i)).collect::<Result<Vec<_>>>()?;
            path.events.push(Event { time: num(f[0], i)?, chain, from: int(f[2], i)? as usize, to: int(f[3], i)? as usize, control });
        }
        Ok(path)
    }
}

/// Global bounds on the exit rates of each chain, used for thinning.
#[derive(Debug, Clone, Copy)]
struct RateBound {
    z: f64,
    x: f64,
}

impl RateBound {
    fn of(model: &CascadeModel) -> Self {
        let c = model.c().matrix();
        let z = (0..model.r()).map(|i| -c[(i, i)]).fold(0.0, f64::max);
        Self { z, x: model.max_exit_rate() }
    }

    fn total(&self) -> f64 {
        self.z + self.x
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index `k` such that the cumulative weight first exceeds `v`; weights on
/// `skip` and negative weights are ignored.
fn pick(weights: &[f64], skip: usize, mut v: f64) -> usize {
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if i == skip || w <= 0.0 {
            continue;
        }
        if v < w {
            return i;
        }
        v -= w;
        last = Some(i);
    }
    last.unwrap_or(skip)
}

fn validate_start(model: &CascadeModel, z0: usize, x0: usize, horizon: f64) -> Result<()> {
    if z0 >= model.r() {
        return Err(Error::BadState(z0));
    }
    if x0 >= model.n() {
        return Err(Error::IndexOutOfRange { index: x0, dim: model.n() });
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon {horizon}")));
    }
    Ok(())
}

fn run_path(
    model: &CascadeModel,
    policy: &Policy,
    z0: usize,
    x0: usize,
    horizon: f64,
    seed: u64,
    stream: u64,
    bound: RateBound,
) -> SamplePath {
    let mut path = SamplePath { seed, stream, z0, x0, horizon, events: Vec::new(), clamped: 0 };
    let lambda = bound.total();
    if !(lambda > 0.0) {
        return path;
    }
    let mut rng = rng_for(seed, stream);
    let c = model.c().matrix();
    let mut col = vec![0.0; model.n()];
    let (mut z, mut x, mut t) = (z0, x0, 0.0);
    loop {
        let mut v: f64 = rng.random();
        while v == 0.0 {
            v = rng.random();
        }
        t += -v.ln() / lambda;
        if t > horizon {
            break;
        }
        let w = rng.random::<f64>() * lambda;
        let exit_z = -c[(z, z)];
        if w < exit_z {
            let (u, clamped) = policy.control(model, t, z, x);
            path.clamped += clamped as usize;
            let to = pick(c.column(z).as_slice(), z, w);
            path.events.push(Event { time: t, chain: Chain::Z, from: z, to, control: u });
            z = to;
            continue;
        }
        let w = w - bound.z;
        if w < 0.0 {
            continue;
        }
        let (u, clamped) = policy.control(model, t, z, x);
        path.clamped += clamped as usize;
        model.column_into(z, x, &u, &mut col);
        if w < -col[x] {
            let to = pick(&col, x, w);
            path.events.push(Event { time: t, chain: Chain::X, from: x, to, control: u });
            x = to;
        }
    }
    path
}

/// Simulates one path with stream 0 of `seed`.
pub fn simulate(model: &CascadeModel, policy: &Policy, z0: usize, x0: usize, horizon: f64, seed: u64) -> Result<SamplePath> {
    simulate_stream(model, policy, z0, x0, horizon, seed, 0)
}

/// Simulates one path on an independent stream of `seed`.
pub fn simulate_stream(
    model: &CascadeModel,
    policy: &Policy,
    z0: usize,
    x0: usize,
    horizon: f64,
    seed: u64,
    stream: u64,
) -> Result<SamplePath> {
    validate_start(model, z0, x0, horizon)?;
    Ok(run_path(model, policy, z0, x0, horizon, seed, stream, RateBound::of(model)))
}

/// `n_paths` paths on streams `0..n_paths` of `seed`.
pub fn simulate_many(
    exec: Exec,
    model: &CascadeModel,
    policy: &Policy,
    z0: usize,
    x0: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SamplePath>> {
    validate_start(model, z0, x0, horizon)?;
    let bound = RateBound::of(model);
    Ok(exec.map(n_paths, |i| run_path(model, policy, z0, x0, horizon, seed, i as u64, bound)))
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / SIMPSON_PANELS as f64;
    let mut s = f(a) + f(b);
    for i in 1..SIMPSON_PANELS {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + h * i as f64);
    }
    s * h / 3.0
}

/// `∫_a^b e^{-αs} ds`.
fn discount_integral(alpha: f64, a: f64, b: f64) -> f64 {
    if alpha == 0.0 {
        b - a
    } else {
        ((-alpha * a).exp() - (-alpha * b).exp()) / alpha
    }
}

fn segment_cost(model: &CascadeModel, policy: &Policy, cost: &CostSpec, z: usize, x: usize, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let running = match &cost.l {
        CostMatrix::Constant(l) => l[(x, z)] * discount_integral(cost.alpha, a, b),
        CostMatrix::TimeVarying(_) => simpson(|t| cost.running_at(t)[(x, z)], a, b),
    };
    let psi = if cost.psi.is_zero() {
        0.0
    } else {
        psi_integral(model, policy, &cost.psi, z, x, a, b)
    };
    running + psi
}

fn psi_integral(model: &CascadeModel, policy: &Policy, psi: &Psi, z: usize, x: usize, a: f64, b: f64) -> f64 {
    match policy {
        Policy::Constant(_) => psi.eval(&policy.control(model, a, z, x).0) * (b - a),
        Policy::Tabulated(tab) => {
            let grid = tab.grid();
            let mut total = 0.0;
            let mut k = tab.cell(a);
            let mut lo = a;
            while lo < b {
                let hi = grid.get(k + 1).copied().unwrap_or(f64::INFINITY).min(b);
                let (u, _) = policy.control(model, lo, z, x);
                total += psi.eval(&u) * (hi - lo);
                lo = hi;
                k += 1;
            }
            total
        }
        Policy::ClosedForm(_) => simpson(|t| psi.eval(&policy.control(model, t, z, x).0), a, b),
    }
}

/// The sampled cost functional of one path.
pub fn path_cost(model: &CascadeModel, policy: &Policy, cost: &CostSpec, path: &SamplePath) -> f64 {
    let (mut z, mut x, mut t) = (path.z0, path.x0, 0.0);
    let mut total = 0.0;
    for e in &path.events {
        total += segment_cost(model, policy, cost, z, x, t, e.time);
        match e.chain {
            Chain::Z => z = e.to,
            Chain::X => x = e.to,
        }
        t = e.time;
    }
    total += segment_cost(model, policy, cost, z, x, t, path.horizon);
    total + cost.terminal_at(path.horizon)[(x, z)]
}

/// Monte Carlo estimate of the cost functional.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub values: Vec<f64>,
}

impl EtaEstimate {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 paths, got {n}")));
        }
        let mean = pairwise_sum(&values) / n as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Ok(Self { mean, stderr: (var / n as f64).sqrt(), n_paths: n, values })
    }
}

/// Estimates `η` under `policy` from `n_paths` independent paths.
pub fn estimate_eta(
    model: &CascadeModel,
    policy: &Policy,
    cost: &CostSpec,
    z0: usize,
    x0: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<EtaEstimate> {
    estimate_eta_with(Exec::default(), model, policy, cost, z0, x0, horizon, n_paths, seed)
}

/// [`estimate_eta`] with an explicit execution mode; the result does not depend on it.
pub fn estimate_eta_with(
    exec: Exec,
    model: &CascadeModel,
    policy: &Policy,
    cost: &CostSpec,
    z0: usize,
    x0: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<EtaEstimate> {
    if n_paths < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 paths, got {n_paths}")));
    }
    validate_start(model, z0, x0, horizon)?;
    if cost.phi.shape() != (model.n(), model.r()) {
        return Err(Error::DimensionMismatch { expected: model.n() * model.r(), got: cost.phi.len() });
    }
    let bound = RateBound::of(model);
    let values = exec.map(n_paths, |i| {
        let path = run_path(model, policy, z0, x0, horizon, seed, i as u64, bound);
        path_cost(model, policy, cost, &path)
    });
    EtaEstimate::from_values(values)
}

/// Value, cumulative investment and wealth at time zero and after every event.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSeries {
    pub times: Vec<f64>,
    pub value: Vec<f64>,
    pub investment: Vec<f64>,
    pub wealth: Vec<f64>,
}

/// Accounts for a path with value matrix `V` (`n × r`, `v = V[x][z]`).
///
/// Weight shifts change the investment and price moves change the wealth.
pub fn portfolio_series(path: &SamplePath, v: &DMatrix<f64>) -> Result<PortfolioSeries> {
    let (n, r) = v.shape();
    let in_range = |z: usize, x: usize| z < r && x < n;
    if !in_range(path.z0, path.x0) {
        return Err(Error::DimensionMismatch { expected: n * r, got: path.z0.max(path.x0) + 1 });
    }
    let (mut z, mut x) = (path.z0, path.x0);
    let v0 = v[(x, z)];
    let mut out = PortfolioSeries { times: vec![0.0], value: vec![v0], investment: vec![0.0], wealth: vec![v0] };
    let (mut s, mut w) = (0.0, v0);
    for e in &path.events {
        let (nz, nx) = match e.chain {
            Chain::Z => (e.to, x),
            Chain::X => (z, e.to),
        };
        if !in_range(nz, nx) {
            return Err(Error::DimensionMismatch { expected: n * r, got: nz.max(nx) + 1 });
        }
        match e.chain {
            Chain::X => s += v[(nx, z)] - v[(x, z)],
            Chain::Z => w += v[(x, nz)] - v[(x, z)],
        }
        z = nz;
        x = nx;
        out.times.push(e.time);
        out.value.push(v[(x, z)]);
        out.investment.push(s);
        out.wealth.push(w);
    }
    Ok(out)
}

/// Empirical joint distribution over `(z, x)` at time `t`, index `z * n + x`.
pub fn occupancy(paths: &[SamplePath], t: f64, r: usize, n: usize) -> Result<ProbabilityVector> {
    if paths.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = DVector::zeros(r * n);
    for path in paths {
        if t > path.horizon {
            return Err(Error::TimeOutOfRange { t, horizon: path.horizon });
        }
        let (z, x) = path.state_at(t);
        if z >= r || x >= n {
            return Err(Error::DimensionMismatch { expected: r * n, got: z * n + x + 1 });
        }
        counts[z * n + x] += 1.0;
    }
    ProbabilityVector::new(counts / paths.len() as f64)
}
