//! Finite-state continuous-time Markov chain primitives.
//!
//! Probability vectors are columns and evolve as `ṗ = P p`, so every
//! generator has zero column sums and nonnegative off-diagonal entries.
//! Product states `(z, x)` with `z < r`, `x < n` are flattened to
//! `z * n + x`, matching `z ⊗ x` under the Kronecker product.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{time_grid, Rk4};

/// Tolerance for generator validation.
pub const GENERATOR_TOL: f64 = 1e-12;
/// Tolerance for probability normalization.
pub const PROBABILITY_TOL: f64 = 1e-9;

/// A single counter jump `F_{target,source} - F_{source,source}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JumpMatrix {
    source: usize,
    target: usize,
    dim: usize,
}

impl JumpMatrix {
    pub fn new(source: usize, target: usize, dim: usize) -> Result<Self> {
        for idx in [source, target] {
            if idx >= dim {
                return Err(Error::IndexOutOfRange { index: idx, dim });
            }
        }
        if source == target {
            return Err(Error::SelfLoop(source));
        }
        Ok(Self { source, target, dim })
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        m[(self.target, self.source)] = 1.0;
        m[(self.source, self.source)] = -1.0;
        m
    }
}

/// Alias used by the operation that builds a single jump.
pub fn jump_matrix(source: usize, target: usize, dim: usize) -> Result<JumpMatrix> {
    JumpMatrix::new(source, target, dim)
}

/// An infinitesimal generator (rate matrix with zero column sums).
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    m: DMatrix<f64>,
}

impl Generator {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(m, GENERATOR_TOL)
    }

    /// Validates with a caller-chosen tolerance on column sums and signs.
    pub fn with_tolerance(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if let Some(msg) = generator_violation(&m, tol) {
            return Err(Error::GeneratorInvalid(msg));
        }
        Ok(Self { m })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { m: DMatrix::zeros(dim, dim) }
    }

    /// Builds a generator from counter jumps; duplicate jumps have their rates summed.
    pub fn from_jumps(dim: usize, jumps: &[(JumpMatrix, f64)]) -> Result<Self> {
        let mut m = DMatrix::zeros(dim, dim);
        for (jump, rate) in jumps {
            if jump.dim != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: jump.dim });
            }
            if !(*rate >= 0.0) {
                return Err(Error::NegativeRate(*rate));
            }
            m[(jump.target, jump.source)] += rate;
            m[(jump.source, jump.source)] -= rate;
        }
        Ok(Self { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Total rate out of `state`.
    pub fn exit_rate(&self, state: usize) -> f64 {
        -self.m[(state, state)]
    }

    /// Off-diagonal entries as counter jumps with positive rates.
    pub fn jumps(&self) -> Vec<(JumpMatrix, f64)> {
        let n = self.dim();
        let mut out = Vec::new();
        for source in 0..n {
            for target in 0..n {
                let rate = self.m[(target, source)];
                if source != target && rate > 0.0 {
                    out.push((JumpMatrix { source, target, dim: n }, rate));
                }
            }
        }
        out
    }

    /// True when every state can reach every other along positive rates.
    pub fn is_irreducible(&self) -> bool {
        let n = self.dim();
        if n <= 1 {
            return true;
        }
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(s) = stack.pop() {
                for t in 0..n {
                    let rate = if forward { self.m[(t, s)] } else { self.m[(s, t)] };
                    if t != s && rate > 0.0 && !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
            seen.into_iter().all(|b| b)
        };
        reach(true) && reach(false)
    }

    /// True when exactly one closed class exists, i.e. some state is
    /// reachable from every state. Then the stationary distribution is unique.
    pub fn has_single_closed_class(&self) -> bool {
        let n = self.dim();
        let mut common = vec![true; n];
        for start in 0..n {
            let mut seen = vec![false; n];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(s) = stack.pop() {
                for t in 0..n {
                    if t != s && self.m[(t, s)] > 0.0 && !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
            for (c, s) in common.iter_mut().zip(seen) {
                *c &= s;
            }
        }
        common.into_iter().any(|c| c)
    }
}

/// Returns a description of the first generator invariant `m` violates.
pub(crate) fn generator_violation(m: &DMatrix<f64>, tol: f64) -> Option<String> {
    if m.nrows() != m.ncols() {
        return Some(format!("{}x{} matrix is not square", m.nrows(), m.ncols()));
    }
    for j in 0..m.ncols() {
        let mut sum = 0.0;
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if !v.is_finite() {
                return Some(format!("non-finite entry at ({i}, {j})"));
            }
            if i != j && v < -tol {
                return Some(format!("negative off-diagonal {v} at ({i}, {j})"));
            }
            if i == j && v > tol {
                return Some(format!("positive diagonal {v} at ({i}, {j})"));
            }
            sum += v;
        }
        if sum.abs() > tol {
            return Some(format!("column {j} sums to {sum}"));
        }
    }
    None
}

/// Builds the generator `Σ rate_i G_i` from counter jumps.
pub fn generator_from_jumps(dim: usize, pairs: &[(JumpMatrix, f64)]) -> Result<Generator> {
    Generator::from_jumps(dim, pairs)
}

/// A probability distribution over a finite state set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(DVector<f64>);

impl ProbabilityVector {
    /// Checks normalization and clamps round-off outside `[0, 1]`.
    pub fn new(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidProbability("empty vector".into()));
        }
        let sum: f64 = v.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
        }
        for (i, &x) in v.iter().enumerate() {
            if !(-PROBABILITY_TOL..=1.0 + PROBABILITY_TOL).contains(&x) {
                return Err(Error::InvalidProbability(format!("entry {i} = {x}")));
            }
        }
        Ok(Self(v.map(|x| x.clamp(0.0, 1.0))))
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(v))
    }

    pub fn point(dim: usize, state: usize) -> Result<Self> {
        if state >= dim {
            return Err(Error::IndexOutOfRange { index: state, dim });
        }
        Ok(Self(DVector::from_fn(dim, |i, _| if i == state { 1.0 } else { 0.0 })))
    }

    pub fn uniform(dim: usize) -> Self {
        Self(DVector::from_element(dim, 1.0 / dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ProbabilityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Integrates `ṗ = P(t) p` from `t0` to `t1` with fixed-step RK4.
///
/// The generator is validated at every evaluation time.
pub fn propagate<F>(generator: F, p0: &ProbabilityVector, t0: f64, t1: f64, dt: f64) -> Result<ProbabilityVector>
where
    F: Fn(f64) -> Generator,
{
    if !(t1 >= t0) {
        return Err(Error::InvalidArgument(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    let grid = time_grid(t0, t1, dt)?;
    let n = p0.dim();
    let mut y = p0.as_slice().to_vec();
    let mut rk = Rk4::new(n);
    let mut failure = None;
    let mut f = |t: f64, p: &[f64], dp: &mut [f64]| {
        let g = generator(t);
        if let Some(msg) = generator_violation(g.matrix(), GENERATOR_TOL) {
            failure.get_or_insert(msg);
        }
        if g.dim() != n {
            failure.get_or_insert(format!("generator dimension {} != {n}", g.dim()));
            dp.fill(0.0);
            return;
        }
        mat_vec(g.matrix(), p, dp);
    };
    for w in grid.windows(2) {
        rk.step(&mut f, w[0], w[1] - w[0], &mut y);
    }
    if let Some(msg) = failure {
        return Err(Error::GeneratorInvalid(msg));
    }
    ProbabilityVector::new(DVector::from_vec(y))
}

/// `propagate` for a constant generator.
pub fn propagate_constant(g: &Generator, p0: &ProbabilityVector, t0: f64, t1: f64, dt: f64) -> Result<ProbabilityVector> {
    if g.dim() != p0.dim() {
        return Err(Error::DimensionMismatch { expected: g.dim(), got: p0.dim() });
    }
    propagate(|_| g.clone(), p0, t0, t1, dt)
}

/// `out = m * v` without allocation.
pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let (rows, cols) = m.shape();
    out[..rows].fill(0.0);
    for j in 0..cols {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        let col = m.column(j);
        for i in 0..rows {
            out[i] += col[i] * vj;
        }
    }
}

/// Kronecker product; `(i, j)` pairs flatten to `i * n + j`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Coupling level of a chain on a product space, most specific first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingClass {
    NonDecomposable,
    Decomposable,
    Cascade,
    Uncoupled,
}

impl std::fmt::Display for CouplingClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CouplingClass::NonDecomposable => "NonDecomposable",
            CouplingClass::Decomposable => "Decomposable",
            CouplingClass::Cascade => "Cascade",
            CouplingClass::Uncoupled => "Uncoupled",
        };
        f.write_str(s)
    }
}

fn rates_agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// Classifies a joint chain given by counter jumps on the `r * n` product space.
///
/// Works at the level of jumps: a jump touching both factors makes the
/// chain non-decomposable; z-jumps shared by every x give a cascade, and
/// x-jumps shared by every z on top of that give an uncoupled chain.
pub fn classify_coupling(jumps: &[(JumpMatrix, f64)], r: usize, n: usize) -> Result<CouplingClass> {
    let dim = r * n;
    // (z_src, z_tgt) -> x -> rate, and (x_src, x_tgt) -> z -> rate
    let mut z_moves: BTreeMap<(usize, usize), BTreeMap<usize, f64>> = BTreeMap::new();
    let mut x_moves: BTreeMap<(usize, usize), BTreeMap<usize, f64>> = BTreeMap::new();
    for (jump, rate) in jumps {
        if jump.dim != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: jump.dim });
        }
        if *rate == 0.0 {
            continue;
        }
        let (zs, xs) = (jump.source / n, jump.source % n);
        let (zt, xt) = (jump.target / n, jump.target % n);
        if zs != zt && xs != xt {
            return Ok(CouplingClass::NonDecomposable);
        }
        if zs != zt {
            *z_moves.entry((zs, zt)).or_default().entry(xs).or_insert(0.0) += rate;
        } else {
            *x_moves.entry((xs, xt)).or_default().entry(zs).or_insert(0.0) += rate;
        }
    }
    let shared = |moves: &BTreeMap<(usize, usize), BTreeMap<usize, f64>>, count: usize| {
        moves.values().all(|per| {
            per.len() == count && {
                let first = *per.values().next().unwrap();
                per.values().all(|&v| rates_agree(v, first))
            }
        })
    };
    if !shared(&z_moves, n) {
        return Ok(CouplingClass::Decomposable);
    }
    if !shared(&x_moves, r) {
        return Ok(CouplingClass::Cascade);
    }
    Ok(CouplingClass::Uncoupled)
}

/// Splits a joint generator as `I_r ⊗ A + C ⊗ I_n` when possible.
///
/// Off-diagonal parameters are least-squares averages over the repeated
/// blocks. `C` receives diagonal entries that make its columns sum to zero
/// and `A` absorbs the remaining diagonal mass. Returns `None` when the
/// residual exceeds `tol` or a factor fails generator validation.
pub fn diagonal_parts(joint: &Generator, r: usize, n: usize, tol: f64) -> Option<(Generator, Generator)> {
    let p = joint.matrix();
    if joint.dim() != r * n || r == 0 || n == 0 {
        return None;
    }
    let idx = |z: usize, x: usize| z * n + x;
    let mut a = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(r, r);
    for j in 0..n {
        for l in 0..n {
            if j != l {
                a[(j, l)] = (0..r).map(|i| p[(idx(i, j), idx(i, l))]).sum::<f64>() / r as f64;
            }
        }
    }
    for i in 0..r {
        for k in 0..r {
            if i != k {
                c[(i, k)] = (0..n).map(|j| p[(idx(i, j), idx(k, j))]).sum::<f64>() / n as f64;
            }
        }
    }
    for k in 0..r {
        let off: f64 = (0..r).filter(|&i| i != k).map(|i| c[(i, k)]).sum();
        c[(k, k)] = -off;
    }
    for j in 0..n {
        a[(j, j)] = (0..r).map(|i| p[(idx(i, j), idx(i, j))] - c[(i, i)]).sum::<f64>() / r as f64;
    }
    let rebuilt = kron(&DMatrix::identity(r, r), &a) + kron(&c, &DMatrix::identity(n, n));
    let residual = (p - &rebuilt).amax();
    if residual > tol {
        return None;
    }
    let vtol = tol.max(GENERATOR_TOL);
    let a = Generator::with_tolerance(a, vtol).ok()?;
    let c = Generator::with_tolerance(c, vtol).ok()?;
    Some((a, c))
}

/// Marginal distributions `(p_z, p_x)` of a joint distribution.
pub fn marginals(joint: &ProbabilityVector, r: usize, n: usize) -> Result<(ProbabilityVector, ProbabilityVector)> {
    if joint.dim() != r * n {
        return Err(Error::DimensionMismatch { expected: r * n, got: joint.dim() });
    }
    let mut pz = DVector::zeros(r);
    let mut px = DVector::zeros(n);
    for i in 0..r {
        for j in 0..n {
            let v = joint[i * n + j];
            pz[i] += v;
            px[j] += v;
        }
    }
    Ok((ProbabilityVector::new(pz)?, ProbabilityVector::new(px)?))
}
