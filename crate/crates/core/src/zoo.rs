//! Worked example models: portfolios, the cat's dilemma and its N-way
//! generalization, plus driver generators and a scalable benchmark model.

use nalgebra::{dmatrix, DMatrix};

use crate::bellman::{CostMatrix, CostSpec, Psi};
use crate::ctmc::{kron, Generator};
use crate::error::{Error, Result};
use crate::model::{require_admissible, CascadeModel};

/// A named model with its default cost and optional value matrix.
#[derive(Debug, Clone)]
pub struct ZooEntry {
    pub name: String,
    pub description: String,
    pub model: CascadeModel,
    /// Portfolio value `V[x][z]` (`n × r`).
    pub v: Option<DMatrix<f64>>,
    pub self_financing: bool,
    pub cost: CostSpec,
}

impl ZooEntry {
    fn build(
        name: &str,
        description: &str,
        model: CascadeModel,
        v: Option<DMatrix<f64>>,
        self_financing: bool,
        cost: CostSpec,
    ) -> Result<Self> {
        require_admissible(&model)?;
        if self_financing {
            let v = v.as_ref().expect("self-financing entries carry V");
            if let Some((z, from, to)) = value_jumps(&model, v).first() {
                return Err(Error::PreconditionNotMet(format!(
                    "{name}: move {from} -> {to} under z = {z} changes the value"
                )));
            }
        }
        Ok(Self { name: name.into(), description: description.into(), model, v, self_financing, cost })
    }
}

/// Transitions `(z, from, to)` reachable at some control vertex whose value
/// jump under `V` is nonzero.
pub fn value_jumps(model: &CascadeModel, v: &DMatrix<f64>) -> Vec<(usize, usize, usize)> {
    let n = model.n();
    let mut out = Vec::new();
    let mut p = DMatrix::zeros(n, n);
    for z in 0..model.r() {
        let mut allowed = vec![false; n * n];
        for u in model.vertices() {
            model.assemble_into(z, &u, &mut p);
            for x in 0..n {
                for y in 0..n {
                    if y != x && p[(y, x)] > 0.0 {
                        allowed[x * n + y] = true;
                    }
                }
            }
        }
        for x in 0..n {
            for y in 0..n {
                if allowed[x * n + y] && v[(y, z)] != v[(x, z)] {
                    out.push((z, x, y));
                }
            }
        }
    }
    out
}

fn check_driver(c: &Generator, r: usize) -> Result<()> {
    if c.dim() != r {
        return Err(Error::DimensionMismatch { expected: r, got: c.dim() });
    }
    Ok(())
}

/// Shape of a default driver generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceKind {
    /// Every off-diagonal rate equal.
    Uniform,
    /// Two states, high price (state 0) twice as likely as low in the long run.
    BiasedUp,
}

impl std::str::FromStr for PriceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PriceKind::Uniform),
            "biased_up" | "biased-up" => Ok(PriceKind::BiasedUp),
            other => Err(Error::BadKind(other.into())),
        }
    }
}

/// A driver generator of the given kind with total exit rate `rate`.
pub fn default_price_generator(r: usize, kind: PriceKind, rate: f64) -> Result<Generator> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidArgument(format!("rate {rate}")));
    }
    match kind {
        PriceKind::Uniform => {
            if r == 0 {
                return Err(Error::InvalidArgument("empty driver".into()));
            }
            if r == 1 {
                return Ok(Generator::zeros(1));
            }
            let off = rate / (r - 1) as f64;
            Generator::new(DMatrix::from_fn(r, r, |i, j| if i == j { -rate } else { off }))
        }
        PriceKind::BiasedUp => {
            if r != 2 {
                return Err(Error::BadKind(format!("biased_up needs r = 2, got {r}")));
            }
            Generator::new(dmatrix![-0.5 * rate, rate; 0.5 * rate, -rate])
        }
    }
}

/// `C₁ ⊗ I + I ⊗ C₂`: two independently moving prices.
pub fn independent_prices(c1: &Generator, c2: &Generator) -> Result<Generator> {
    let (a, b) = (c1.dim(), c2.dim());
    let m = kron(c1.matrix(), &DMatrix::identity(b, b)) + kron(&DMatrix::identity(a, a), c2.matrix());
    Generator::new(m)
}

const HALF_BOX: (f64, f64) = (-0.5, 0.5);

/// Bond/stock portfolio rebalanced at constant total position.
pub fn bond_stock_sf(c: Generator) -> Result<ZooEntry> {
    check_driver(&c, 2)?;
    let a = vec![
        dmatrix![0.0, 0.0, 0.0; 0.0, -0.5, 0.5; 0.0, 0.5, -0.5],
        dmatrix![-0.5, 0.5, 0.0; 0.5, -0.5, 0.0; 0.0, 0.0, 0.0],
    ];
    let b = vec![vec![
        dmatrix![0.0, 0.0, 0.0; 0.0, -1.0, -1.0; 0.0, 1.0, 1.0],
        dmatrix![-1.0, -1.0, 0.0; 1.0, 1.0, 0.0; 0.0, 0.0, 0.0],
    ]];
    let model = CascadeModel::new(c, DMatrix::zeros(3, 3), a, b, vec![HALF_BOX])?;
    let v = dmatrix![2.0, -2.0 / 3.0; -2.0, -2.0 / 3.0; -2.0, 2.0 / 3.0];
    let cost = CostSpec::terminal(-&v);
    ZooEntry::build("bond-stock", "self-financing bond/stock portfolio", model, Some(v), true, cost)
}

/// The cat choosing among meat, fish and milk. States: 0 ate meat,
/// 1 ate fish, 2 ate milk, 3 unfed; driver states offer fish/milk,
/// meat/milk and meat/fish.
pub fn cats_dilemma(f: f64, s: f64, c: Generator) -> Result<ZooEntry> {
    if !(f > 0.0 && s > 0.0) {
        return Err(Error::InvalidArgument(format!("rates f = {f}, s = {s}")));
    }
    check_driver(&c, 3)?;
    let (a0, a, b) = decision_matrices(3, f, s);
    let model = CascadeModel::new(c, a0, a, vec![b], vec![HALF_BOX])?;
    ZooEntry::build("cats-dilemma", "cat choosing between two foods offered", model, None, false, fed_reward(4, 3))
}

/// Running reward of one per unit time spent in outcome 1.
fn fed_reward(n: usize, r: usize) -> CostSpec {
    let mut l = DMatrix::zeros(n, r);
    l.row_mut(1).fill(-1.0);
    CostSpec::running(l)
}

/// Unordered pairs `(i, j)`, `i < j`, in descending lexicographic order.
pub fn decision_pairs(n_alt: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..n_alt).flat_map(|i| (i + 1..n_alt).map(move |j| (i, j))).collect();
    pairs.reverse();
    pairs
}

/// `A0`, `A(e_z)` and `B(e_z)` of the `N`-way decision chain with the
/// undecided state last.
fn decision_matrices(n_alt: usize, f: f64, s: f64) -> (DMatrix<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let n = n_alt + 1;
    let home = n_alt;
    let mut a0 = DMatrix::zeros(n, n);
    for i in 0..n_alt {
        a0[(i, i)] = -s;
        a0[(home, i)] = s;
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, j) in decision_pairs(n_alt) {
        let mut az = DMatrix::zeros(n, n);
        az[(i, home)] = 0.5 * f;
        az[(j, home)] = 0.5 * f;
        az[(home, home)] = -f;
        let (plus, minus) = if (j + n_alt - i) % n_alt <= (i + n_alt - j) % n_alt { (i, j) } else { (j, i) };
        let mut bz = DMatrix::zeros(n, n);
        bz[(plus, home)] = f;
        bz[(minus, home)] = -f;
        a.push(az);
        b.push(bz);
    }
    (a0, a, b)
}

/// `N` alternatives offered two at a time, one driver state per pair.
pub fn binary_decision(n_alt: usize, c: Generator) -> Result<ZooEntry> {
    if n_alt < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 alternatives, got {n_alt}")));
    }
    let r = n_alt * (n_alt - 1) / 2;
    check_driver(&c, r)?;
    let (a0, a, b) = decision_matrices(n_alt, 1.0, 1.0);
    let model = CascadeModel::new(c, a0, a, vec![b], vec![HALF_BOX])?;
    let name = format!("binary-decision-{n_alt}");
    ZooEntry::build(&name, "choice among alternatives offered in pairs", model, None, false, fed_reward(n_alt + 1, r))
}

/// Two stocks with independent prices, controls `u` (buy) and `d` (sell).
pub fn two_stock_sf(c: Generator) -> Result<ZooEntry> {
    check_driver(&c, 4)?;
    let tri = dmatrix![-0.5, 0.5, 0.0; 0.5, -1.0, 0.5; 0.0, 0.5, -0.5];
    let low = dmatrix![-0.5, 0.5, 0.0; 0.5, -0.5, 0.0; 0.0, 0.0, 0.0];
    let high = dmatrix![0.0, 0.0, 0.0; 0.0, -0.5, 0.5; 0.0, 0.5, -0.5];
    let b_full = dmatrix![-1.0, 0.0, 0.0; 1.0, -1.0, 0.0; 0.0, 1.0, 0.0];
    let b_low = dmatrix![-1.0, 0.0, 0.0; 1.0, 0.0, 0.0; 0.0, 0.0, 0.0];
    let b_high = dmatrix![0.0, 0.0, 0.0; 0.0, -1.0, 0.0; 0.0, 1.0, 0.0];
    let d_full = dmatrix![0.0, 1.0, 0.0; 0.0, -1.0, 1.0; 0.0, 0.0, -1.0];
    let d_low = dmatrix![0.0, 1.0, 0.0; 0.0, -1.0, 0.0; 0.0, 0.0, 0.0];
    let d_high = dmatrix![0.0, 0.0, 0.0; 0.0, 0.0, 1.0; 0.0, 0.0, -1.0];
    let a = vec![tri.clone(), low, high, tri];
    let b = vec![
        vec![b_full.clone(), b_low, b_high.clone(), b_high],
        vec![d_full.clone(), d_low, d_high, d_full],
    ];
    let model = CascadeModel::new(c, DMatrix::zeros(3, 3), a, b, vec![HALF_BOX; 2])?;
    let v = dmatrix![-2.0, 2.0, 0.0, 2.0; -2.0, 2.0, -2.0, 2.0; -2.0, 0.0, -2.0, 2.0];
    let cost = CostSpec::terminal(-&v);
    ZooEntry::build("two-stock", "self-financing two-stock portfolio", model, Some(v), true, cost)
}

/// Investment/consumption portfolio whose dynamics ignore the prices.
///
/// The cost is the expected terminal investment plus the initial value:
/// `E s(T) + v(0) = E[V(T) - ∫ (VC)[x][z] dt]`.
pub fn invest_consume(c: Generator) -> Result<ZooEntry> {
    check_driver(&c, 4)?;
    let a = dmatrix![-0.5, 0.5, 0.0; 0.5, -1.0, 0.5; 0.0, 0.5, -0.5];
    let b = dmatrix![-1.0, 0.0, 0.0; 1.0, -1.0, 0.0; 0.0, 1.0, 0.0];
    let d = dmatrix![0.0, 1.0, 0.0; 0.0, -1.0, 1.0; 0.0, 0.0, -1.0];
    let model = CascadeModel::new(c, DMatrix::zeros(3, 3), vec![a; 4], vec![vec![b; 4], vec![d; 4]], vec![HALF_BOX; 2])?;
    let v = dmatrix![-2.0, 2.0, -2.0, 2.0; -2.0, 0.0, 0.0, 2.0; -2.0, 2.0, 2.0, 2.0];
    let cost = CostSpec::terminal(v.clone()).with_running(CostMatrix::Constant(-(&v * model.c().matrix())));
    ZooEntry::build("invest-consume", "portfolio with investment and consumption", model, Some(v), false, cost)
}

/// Synthetic cascade with `r` driver states and an `n`-state birth-death
/// chain whose drift is controlled, for timing the solvers.
pub fn scaling_model(r: usize, n: usize) -> Result<ZooEntry> {
    if r == 0 || n < 2 {
        return Err(Error::InvalidArgument(format!("scaling model needs r >= 1, n >= 2 (got {r}, {n})")));
    }
    let c = default_price_generator(r, PriceKind::Uniform, 1.0)?;
    let mut a = Vec::with_capacity(r);
    let mut b = Vec::with_capacity(r);
    for z in 0..r {
        let rate = 0.5 + 0.5 * z as f64 / r as f64;
        let mut az = DMatrix::zeros(n, n);
        let mut bz = DMatrix::zeros(n, n);
        for x in 0..n {
            if x + 1 < n {
                az[(x + 1, x)] = rate;
                az[(x, x)] -= rate;
                bz[(x + 1, x)] = 1.0;
                bz[(x, x)] -= 1.0;
            }
            if x > 0 {
                az[(x - 1, x)] = rate;
                az[(x, x)] -= rate;
                bz[(x - 1, x)] = -1.0;
                bz[(x, x)] += 1.0;
            }
        }
        a.push(az);
        b.push(bz);
    }
    let model = CascadeModel::new(c, DMatrix::zeros(n, n), a, vec![b], vec![HALF_BOX])?;
    let phi = DMatrix::from_fn(n, r, |x, z| x as f64 * (z + 1) as f64 / r as f64);
    let l = DMatrix::from_fn(n, r, |x, _| 0.1 * x as f64);
    let cost = CostSpec::terminal(phi).with_running(CostMatrix::Constant(l)).with_psi(Psi::Quadratic);
    ZooEntry::build("scaling", "birth-death chain under a uniform driver", model, None, false, cost)
}

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 5] = ["bond-stock", "cats-dilemma", "binary-decision-<N>", "two-stock", "invest-consume"];

/// Builds an entry with its default driver generator.
pub fn by_name(name: &str) -> Result<ZooEntry> {
    match name {
        "bond-stock" => bond_stock_sf(default_price_generator(2, PriceKind::Uniform, 0.5)?),
        "cats-dilemma" => cats_dilemma(1.0, 1.0, default_price_generator(3, PriceKind::Uniform, 1.0)?),
        "two-stock" => two_stock_sf(default_price_generator(4, PriceKind::Uniform, 0.5)?),
        "invest-consume" => invest_consume(default_price_generator(4, PriceKind::Uniform, 0.5)?),
        other => {
            let n_alt = other
                .strip_prefix("binary-decision-")
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(|| Error::BadKind(other.into()))?;
            if n_alt < 2 {
                return Err(Error::InvalidArgument(format!("need at least 2 alternatives, got {n_alt}")));
            }
            binary_decision(n_alt, default_price_generator(n_alt * (n_alt - 1) / 2, PriceKind::Uniform, 1.0)?)
        }
    }
}
