//! Bellman equation of a single controlled chain, used by the coupled
//! joint-space baseline and by the diagonalizable reductions.

use nalgebra::{DMatrix, DVector};

use super::{blown_up, check_inputs, CostMatrix, CostSpec, Minimizer};
use crate::ctmc::{kron, ProbabilityVector};
use crate::error::{Error, Result};
use crate::model::{diagonalizable_sufficient, CascadeModel, Diagonalizability};
use crate::ode::{time_grid, Rk4};

/// `k̇ = -l(t) - Mᵀk - min_u(Σ_j u_j (B_jᵀk) + ψ(u))` on `dim` states.
struct Chain {
    dim: usize,
    m: Vec<f64>,
    b: Vec<Vec<f64>>,
}

fn integrate<L>(
    chain: &Chain,
    mut running: L,
    terminal: Vec<f64>,
    horizon: f64,
    dt: f64,
    minimizer: &Minimizer,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)>
where
    L: FnMut(f64, &mut [f64]),
{
    let dim = chain.dim;
    let p = chain.b.len();
    let back = time_grid(horizon, 0.0, dt)?;
    let mut y = terminal;
    let mut ks = Vec::with_capacity(back.len());
    ks.push(DVector::from_column_slice(&y));
    let mut l = vec![0.0; dim];
    let mut s = vec![0.0; p];
    let mut u = vec![0.0; p];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut f = |t: f64, k: &[f64], dk: &mut [f64]| {
        running(t, &mut l);
        for i in 0..dim {
            for j in 0..p {
                s[j] = dot(&chain.b[j][i * dim..(i + 1) * dim], k);
            }
            let m = minimizer.minimize(&s, &mut u);
            dk[i] = -l[i] - dot(&chain.m[i * dim..(i + 1) * dim], k) - m;
        }
    };
    let mut rk = Rk4::new(dim);
    for w in back.windows(2) {
        rk.step(&mut f, w[0], w[1] - w[0], &mut y);
        if blown_up(&y) {
            return Err(Error::StepTooLarge(w[1]));
        }
        ks.push(DVector::from_column_slice(&y));
    }
    let mut grid = back;
    grid.reverse();
    ks.reverse();
    Ok((grid, ks))
}

/// Value function of the coupled `rn`-state chain, index `z * n + x`.
#[derive(Debug, Clone)]
pub struct JointSolution {
    grid: Vec<f64>,
    k: Vec<DVector<f64>>,
    r: usize,
    n: usize,
}

impl JointSolution {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn k_at(&self, i: usize) -> &DVector<f64> {
        &self.k[i]
    }

    pub fn value(&self, i: usize, z: usize, x: usize) -> f64 {
        self.k[i][z * self.n + x]
    }

    pub fn optimal_value(&self, z0: usize, x0: usize) -> f64 {
        self.value(0, z0, x0)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.r, self.n)
    }
}

/// Solves the same control problem as [`super::solve_bellman`] on the joint
/// chain `C ⊗ I_n + blockdiag(A0 + A(e_z))` with dense `rn × rn` matrices
/// and feedback on the joint state.
pub fn solve_coupled_baseline(model: &CascadeModel, cost: &CostSpec, horizon: f64, dt: f64) -> Result<JointSolution> {
    check_inputs(model, cost, horizon, dt)?;
    let minimizer = Minimizer::new(&cost.psi, model.bounds())?;
    let (r, n, p) = (model.r(), model.n(), model.p());
    let dim = r * n;
    let mut m = kron(model.c().matrix(), &DMatrix::identity(n, n));
    let mut b = vec![DMatrix::zeros(dim, dim); p];
    for z in 0..r {
        let block = model.a0() + model.a(z);
        let mut view = m.view_mut((z * n, z * n), (n, n));
        view += &block;
        for (j, bj) in b.iter_mut().enumerate() {
            bj.view_mut((z * n, z * n), (n, n)).copy_from(model.b(j, z));
        }
    }
    let chain = Chain { dim, m: m.as_slice().to_vec(), b: b.iter().map(|bj| bj.as_slice().to_vec()).collect() };
    let flatten = |mat: &DMatrix<f64>, out: &mut [f64]| {
        for z in 0..r {
            for x in 0..n {
                out[z * n + x] = mat[(x, z)];
            }
        }
    };
    let mut terminal = vec![0.0; dim];
    flatten(&cost.terminal_at(horizon), &mut terminal);
    let fixed = match (&cost.l, cost.alpha) {
        (CostMatrix::Constant(l), 0.0) => {
            let mut v = vec![0.0; dim];
            flatten(l, &mut v);
            Some(v)
        }
        _ => None,
    };
    let running = |t: f64, out: &mut [f64]| match &fixed {
        Some(v) => out.copy_from_slice(v),
        None => flatten(&cost.running_at(t), out),
    };
    let (grid, k) = integrate(&chain, running, terminal, horizon, dt, &minimizer)?;
    Ok(JointSolution { grid, k, r, n })
}

/// Which reduced vector equation to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagMode {
    /// `A`, `B_j`, `L` and `Φ` independent of `z`; controls ignore `z`.
    C1,
    /// Stationary driver distribution `c`; coefficients averaged with weights `c`.
    Cweighted,
}

/// Solution `k(t)` of a reduced `n`-vector Bellman equation.
#[derive(Debug, Clone)]
pub struct ReducedSolution {
    grid: Vec<f64>,
    k: Vec<DVector<f64>>,
}

impl ReducedSolution {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn k_at(&self, i: usize) -> &DVector<f64> {
        &self.k[i]
    }

    /// `η* = k(0)[x0]`.
    pub fn optimal_value(&self, x0: usize) -> f64 {
        self.k[0][x0]
    }
}

fn z_independent(m: &DMatrix<f64>) -> bool {
    (1..m.ncols()).all(|z| m.column(z) == m.column(0))
}

/// Solves one of the reduced vector Bellman equations for diagonalizable cascades.
pub fn solve_diagonalizable(
    model: &CascadeModel,
    cost: &CostSpec,
    horizon: f64,
    dt: f64,
    mode: DiagMode,
    c: Option<&ProbabilityVector>,
) -> Result<ReducedSolution> {
    check_inputs(model, cost, horizon, dt)?;
    let minimizer = Minimizer::new(&cost.psi, model.bounds())?;
    let (r, n, p) = (model.r(), model.n(), model.p());
    let weights: Vec<f64> = match mode {
        DiagMode::C1 => {
            if diagonalizable_sufficient(model, false) != Diagonalizability::HoldsByC1 {
                return Err(Error::PreconditionNotMet("A and B_j must not depend on z".into()));
            }
            if !z_independent(&cost.phi) {
                return Err(Error::PreconditionNotMet("terminal cost depends on z".into()));
            }
            if let CostMatrix::Constant(l) = &cost.l {
                if !z_independent(l) {
                    return Err(Error::PreconditionNotMet("running cost depends on z".into()));
                }
            }
            let mut w = vec![0.0; r];
            w[0] = 1.0;
            w
        }
        DiagMode::Cweighted => {
            let c = c.ok_or_else(|| Error::PreconditionNotMet("stationary distribution required".into()))?;
            if c.dim() != r {
                return Err(Error::DimensionMismatch { expected: r, got: c.dim() });
            }
            let drift = model.c().matrix() * c.as_vector();
            if drift.amax() > 1e-8 {
                return Err(Error::PreconditionNotMet(format!("distribution is not stationary (|Cc| = {:e})", drift.amax())));
            }
            c.as_slice().to_vec()
        }
    };
    let mut m = model.a0().clone();
    let mut b = vec![DMatrix::zeros(n, n); p];
    for (z, &w) in weights.iter().enumerate() {
        m += model.a(z) * w;
        for (j, bj) in b.iter_mut().enumerate() {
            *bj += model.b(j, z) * w;
        }
    }
    let chain = Chain { dim: n, m: m.as_slice().to_vec(), b: b.iter().map(|bj| bj.as_slice().to_vec()).collect() };
    let wv = DVector::from_column_slice(&weights);
    let terminal = (cost.terminal_at(horizon) * &wv).as_slice().to_vec();
    let running = |t: f64, out: &mut [f64]| {
        let l = cost.running_at(t) * &wv;
        out.copy_from_slice(l.as_slice());
    };
    if mode == DiagMode::C1 {
        if let CostMatrix::TimeVarying(f) = &cost.l {
            for t in [0.0, horizon] {
                if !z_independent(&f(t)) {
                    return Err(Error::PreconditionNotMet("running cost depends on z".into()));
                }
            }
        }
    }
    let (grid, k) = integrate(&chain, running, terminal, horizon, dt, &minimizer)?;
    Ok(ReducedSolution { grid, k })
}
