//! Backward matrix Bellman equation for cascade models.
//!
//! The minimum return function is stored as an `n × r` matrix `K(t)` with
//! `k(t, z, x) = K[x][z]`. Column `z` evolves as
//!
//! ```text
//! K̇ e_z = -K C e_z - L e_z - (A0 + A(e_z))ᵀ K e_z - m_z,
//! m_z[x] = min_u Σ_j u_j (B_j(e_z)ᵀ K e_z)[x] + ψ(u),
//! ```
//!
//! integrated backward from `K(T) = Φ` with classical RK4.

mod cost;
mod costate;
mod single;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

pub use cost::{CostFn, CostMatrix, CostSpec, MatrixFn, Psi, DEFAULT_CUSTOM_POINTS};
pub(crate) use cost::Minimizer;
pub use costate::{costate_trajectory, costate_verify, CostateTrajectory};
pub use single::{solve_coupled_baseline, solve_diagonalizable, DiagMode, JointSolution, ReducedSolution};

use crate::ctmc::ProbabilityVector;
use crate::error::{Error, Result};
use crate::model::{require_admissible, CascadeModel, Policy, TabulatedPolicy};
use crate::ode::{time_grid, Rk4};

/// Entries beyond this magnitude are treated as numerical blow-up.
pub(crate) const BLOWUP: f64 = 1e12;

impl fmt::Debug for Minimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Minimizer")
    }
}

/// Solution of the matrix Bellman equation on an ascending time grid.
#[derive(Clone)]
pub struct BellmanSolution {
    grid: Vec<f64>,
    k: Vec<DMatrix<f64>>,
    model: CascadeModel,
    cost: CostSpec,
    minimizer: Arc<Minimizer>,
    /// Driver marginal on the grid when controls may not depend on `z`.
    pz: Option<Vec<DVector<f64>>>,
}

impl fmt::Debug for BellmanSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BellmanSolution")
            .field("steps", &(self.grid.len() - 1))
            .field("horizon", &self.horizon())
            .field("partial", &self.pz.is_some())
            .finish()
    }
}

impl BellmanSolution {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn model(&self) -> &CascadeModel {
        &self.model
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    /// `K` at grid index `i`.
    pub fn k_at(&self, i: usize) -> &DMatrix<f64> {
        &self.k[i]
    }

    pub fn k_all(&self) -> &[DMatrix<f64>] {
        &self.k
    }

    /// Driver marginal on the grid, for partial-feedback solutions.
    pub fn driver_marginal(&self) -> Option<&[DVector<f64>]> {
        self.pz.as_deref()
    }

    pub fn is_partial(&self) -> bool {
        self.pz.is_some()
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.horizon();
        let slack = 1e-12 * (1.0 + horizon);
        if !(t >= -slack && t <= horizon + slack) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        let t = t.clamp(0.0, horizon);
        let i = self.grid.partition_point(|&g| g <= t).saturating_sub(1).min(self.grid.len().saturating_sub(2));
        if self.grid.len() < 2 {
            return Ok((0, 0.0));
        }
        let (a, b) = (self.grid[i], self.grid[i + 1]);
        Ok((i, ((t - a) / (b - a)).clamp(0.0, 1.0)))
    }

    /// `K(t)`, linear between grid points.
    pub fn k(&self, t: f64) -> Result<DMatrix<f64>> {
        let (i, w) = self.locate(t)?;
        if w == 0.0 {
            return Ok(self.k[i].clone());
        }
        if w == 1.0 {
            return Ok(self.k[i + 1].clone());
        }
        Ok(&self.k[i] * (1.0 - w) + &self.k[i + 1] * w)
    }

    fn pz_at(&self, t: f64) -> Result<Option<DVector<f64>>> {
        let Some(pz) = &self.pz else { return Ok(None) };
        let (i, w) = self.locate(t)?;
        if self.grid.len() < 2 {
            return Ok(Some(pz[0].clone()));
        }
        Ok(Some(&pz[i] * (1.0 - w) + &pz[i + 1] * w))
    }

    fn control_from(&self, k: &DMatrix<f64>, pz: Option<&DVector<f64>>, z: usize, x: usize) -> Vec<f64> {
        let m = &self.model;
        let mut s = vec![0.0; m.p()];
        for (j, sj) in s.iter_mut().enumerate() {
            *sj = match pz {
                None => m.b(j, z).column(x).dot(&k.column(z)),
                Some(w) => (0..m.r()).map(|zz| w[zz] * m.b(j, zz).column(x).dot(&k.column(zz))).sum(),
            };
        }
        let mut u = vec![0.0; m.p()];
        self.minimizer.minimize(&s, &mut u);
        u
    }

    /// Optimal feedback control at `(t, z, x)`.
    ///
    /// Ties in the bang-bang case go to the midpoint of the control box.
    pub fn optimal_control(&self, t: f64, z: usize, x: usize) -> Result<Vec<f64>> {
        if z >= self.model.r() {
            return Err(Error::BadState(z));
        }
        if x >= self.model.n() {
            return Err(Error::IndexOutOfRange { index: x, dim: self.model.n() });
        }
        let k = self.k(t)?;
        let pz = self.pz_at(t)?;
        Ok(self.control_from(&k, pz.as_ref(), z, x))
    }

    /// `η* = K(0)[x0][z0]`.
    pub fn optimal_value(&self, z0: usize, x0: usize) -> f64 {
        self.k[0][(x0, z0)]
    }

    /// `η*` for a random initial state with independent marginals.
    pub fn optimal_value_mixture(&self, pz0: &[f64], px0: &[f64]) -> f64 {
        let k0 = &self.k[0];
        let mut v = 0.0;
        for (z, &wz) in pz0.iter().enumerate() {
            for (x, &wx) in px0.iter().enumerate() {
                v += wz * wx * k0[(x, z)];
            }
        }
        v
    }

    /// The optimal feedback law, with `K` interpolated between grid points.
    pub fn feedback_policy(&self) -> Policy {
        let sol = Arc::new(self.clone());
        let mid = self.model.midpoint();
        let horizon = self.horizon();
        Policy::closed_form(move |t, z, x| sol.optimal_control(t.clamp(0.0, horizon), z, x).unwrap_or_else(|_| mid.clone()))
    }

    /// Optimal controls at every grid point, held constant on each step.
    pub fn tabulate(&self) -> TabulatedPolicy {
        let m = &self.model;
        let (r, n, p) = (m.r(), m.n(), m.p());
        let mut values = Vec::with_capacity(self.grid.len() * r * n * p);
        for (i, k) in self.k.iter().enumerate() {
            let pz = self.pz.as_ref().map(|v| &v[i]);
            for z in 0..r {
                for x in 0..n {
                    values.extend(self.control_from(k, pz, z, x));
                }
            }
        }
        TabulatedPolicy::new(self.grid.clone(), r, n, p, values).expect("grid is strictly increasing")
    }
}

/// Right-hand side of the decoupled Bellman equation on flat column-major `K`.
pub(crate) struct DecoupledRhs<'a> {
    n: usize,
    r: usize,
    p: usize,
    /// `A0 + A(e_z)`, column-major, one per `z`.
    mz: Vec<Vec<f64>>,
    /// `B_j(e_z)`, column-major, indexed `[z][j]`.
    bz: Vec<Vec<Vec<f64>>>,
    c: Vec<f64>,
    cost: &'a CostSpec,
    l_fixed: Option<DMatrix<f64>>,
    minimizer: &'a Minimizer,
    s: Vec<f64>,
    u: Vec<f64>,
    s_all: Vec<f64>,
    u_pool: Vec<f64>,
    psi_pool: Vec<f64>,
    kc: DMatrix<f64>,
}

impl<'a> DecoupledRhs<'a> {
    pub(crate) fn new(model: &CascadeModel, cost: &'a CostSpec, minimizer: &'a Minimizer) -> Self {
        let (n, r, p) = (model.n(), model.r(), model.p());
        let mz = (0..r).map(|z| (model.a0() + model.a(z)).as_slice().to_vec()).collect();
        let bz = (0..r).map(|z| (0..p).map(|j| model.b(j, z).as_slice().to_vec()).collect()).collect();
        let l_fixed = match (&cost.l, cost.alpha) {
            (CostMatrix::Constant(l), 0.0) => Some(l.clone()),
            _ => None,
        };
        Self {
            n,
            r,
            p,
            mz,
            bz,
            c: model.c().matrix().as_slice().to_vec(),
            cost,
            l_fixed,
            minimizer,
            s: vec![0.0; p],
            u: vec![0.0; p],
            s_all: vec![0.0; r * n * p],
            u_pool: vec![0.0; n * p],
            psi_pool: vec![0.0; n],
            kc: DMatrix::zeros(n, r),
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Stores `K C` for the current `K`.
    fn driver_term(&mut self, k: &[f64]) {
        let (n, r) = (self.n, self.r);
        let kv = nalgebra::DMatrixView::from_slice(k, n, r);
        let cv = nalgebra::DMatrixView::from_slice(&self.c, r, r);
        self.kc.gemm(1.0, &kv, &cv, 0.0);
    }

    fn common(&self, l: &DMatrix<f64>, k: &[f64], x: usize, z: usize) -> f64 {
        let n = self.n;
        let kz = &k[z * n..(z + 1) * n];
        let mk = Self::dot(&self.mz[z][x * n..(x + 1) * n], kz);
        -self.kc[(x, z)] - l[(x, z)] - mk
    }

    /// Full feedback on `(z, x)`.
    pub(crate) fn eval(&mut self, t: f64, k: &[f64], dk: &mut [f64]) {
        self.driver_term(k);
        let (n, r) = (self.n, self.r);
        let l_owned;
        let l = match &self.l_fixed {
            Some(l) => l,
            None => {
                l_owned = self.cost.running_at(t);
                &l_owned
            }
        };
        for z in 0..r {
            let kz = &k[z * n..(z + 1) * n];
            for x in 0..n {
                for j in 0..self.p {
                    self.s[j] = Self::dot(&self.bz[z][j][x * n..(x + 1) * n], kz);
                }
                let m = self.minimizer.minimize(&self.s, &mut self.u);
                dk[x + z * n] = self.common(l, k, x, z) - m;
            }
        }
    }

    /// Controls depend on `x` only; switching values are pooled with weights `w` over `z`.
    pub(crate) fn eval_pooled(&mut self, t: f64, k: &[f64], dk: &mut [f64], w: &[f64], psi: &Psi) {
        self.driver_term(k);
        let (n, r, p) = (self.n, self.r, self.p);
        let l_owned;
        let l = match &self.l_fixed {
            Some(l) => l,
            None => {
                l_owned = self.cost.running_at(t);
                &l_owned
            }
        };
        for z in 0..r {
            let kz = &k[z * n..(z + 1) * n];
            for x in 0..n {
                for j in 0..p {
                    self.s_all[(z * n + x) * p + j] = Self::dot(&self.bz[z][j][x * n..(x + 1) * n], kz);
                }
            }
        }
        for x in 0..n {
            for j in 0..p {
                self.s[j] = (0..r).map(|z| w[z] * self.s_all[(z * n + x) * p + j]).sum();
            }
            self.minimizer.minimize(&self.s, &mut self.u);
            self.u_pool[x * p..(x + 1) * p].copy_from_slice(&self.u);
            self.psi_pool[x] = psi.eval(&self.u);
        }
        for z in 0..r {
            for x in 0..n {
                let u = &self.u_pool[x * p..(x + 1) * p];
                let s = &self.s_all[(z * n + x) * p..(z * n + x + 1) * p];
                let m = Self::dot(u, s) + self.psi_pool[x];
                dk[x + z * n] = self.common(l, k, x, z) - m;
            }
        }
    }
}

pub(crate) fn check_inputs(model: &CascadeModel, cost: &CostSpec, horizon: f64, dt: f64) -> Result<()> {
    require_admissible(model)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon {horizon}")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidStep(dt));
    }
    cost.validate(model.n(), model.r(), model.p())
}

pub(crate) fn blown_up(y: &[f64]) -> bool {
    y.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP)
}

/// Solves the decoupled matrix Bellman equation backward from `K(T) = Φ`.
pub fn solve_bellman(model: &CascadeModel, cost: &CostSpec, horizon: f64, dt: f64) -> Result<BellmanSolution> {
    check_inputs(model, cost, horizon, dt)?;
    let minimizer = Minimizer::new(&cost.psi, model.bounds())?;
    let (n, r) = (model.n(), model.r());
    let back = time_grid(horizon, 0.0, dt)?;
    let terminal = cost.terminal_at(horizon);
    let mut y = terminal.as_slice().to_vec();
    let mut ks = Vec::with_capacity(back.len());
    ks.push(terminal);
    let mut rhs = DecoupledRhs::new(model, cost, &minimizer);
    let mut rk = Rk4::new(n * r);
    let mut f = |t: f64, k: &[f64], dk: &mut [f64]| rhs.eval(t, k, dk);
    for w in back.windows(2) {
        rk.step(&mut f, w[0], w[1] - w[0], &mut y);
        if blown_up(&y) {
            return Err(Error::StepTooLarge(w[1]));
        }
        ks.push(DMatrix::from_column_slice(n, r, &y));
    }
    let mut grid = back;
    grid.reverse();
    ks.reverse();
    Ok(BellmanSolution { grid, k: ks, model: model.clone(), cost: cost.clone(), minimizer: Arc::new(minimizer), pz: None })
}

/// Value of `k(0, ·)` for a solution, `z0ᵀ K(0)ᵀ x0`.
pub fn optimal_value(sol: &BellmanSolution, z0: usize, x0: usize) -> f64 {
    sol.optimal_value(z0, x0)
}

/// See [`BellmanSolution::optimal_control`].
pub fn optimal_control(sol: &BellmanSolution, t: f64, z: usize, x: usize) -> Result<Vec<f64>> {
    sol.optimal_control(t, z, x)
}

/// Bellman equation for controls that see `x` but not `z`.
///
/// The driver marginal `p_z` is integrated forward first (it is autonomous),
/// then `K` backward with switching values pooled over `z` by `p_z(t)`.
/// The value for initial states `(p_z(0), x0)` is
/// [`BellmanSolution::optimal_value_mixture`] with a point mass on `x0`.
pub fn solve_partial_feedback(
    model: &CascadeModel,
    cost: &CostSpec,
    horizon: f64,
    dt: f64,
    pz0: &ProbabilityVector,
) -> Result<BellmanSolution> {
    check_inputs(model, cost, horizon, dt)?;
    let (n, r) = (model.n(), model.r());
    if pz0.dim() != r {
        return Err(Error::DimensionMismatch { expected: r, got: pz0.dim() });
    }
    let minimizer = Minimizer::new(&cost.psi, model.bounds())?;
    let mut grid = time_grid(horizon, 0.0, dt)?;
    grid.reverse();

    // Forward driver marginal at grid points and interval midpoints.
    let cm = model.c().matrix().clone();
    let mut pz_rk = Rk4::new(r);
    let mut fz = |_t: f64, p: &[f64], dp: &mut [f64]| crate::ctmc::mat_vec(&cm, p, dp);
    let mut pz = vec![pz0.as_slice().to_vec()];
    let mut pz_mid = Vec::with_capacity(grid.len());
    let mut cur = pz0.as_slice().to_vec();
    for w in grid.windows(2) {
        let h = 0.5 * (w[1] - w[0]);
        pz_rk.step(&mut fz, w[0], h, &mut cur);
        pz_mid.push(cur.clone());
        pz_rk.step(&mut fz, w[0] + h, h, &mut cur);
        pz.push(cur.clone());
    }

    let terminal = cost.terminal_at(horizon);
    let mut y = terminal.as_slice().to_vec();
    let mut ks = vec![terminal];
    let mut rhs = DecoupledRhs::new(model, cost, &minimizer);
    let mut rk = Rk4::new(n * r);
    for i in (0..grid.len() - 1).rev() {
        let (lo, hi) = (grid[i], grid[i + 1]);
        let mid = 0.5 * (lo + hi);
        let (p_lo, p_mid, p_hi) = (&pz[i], &pz_mid[i], &pz[i + 1]);
        let mut f = |t: f64, k: &[f64], dk: &mut [f64]| {
            let w = if (t - mid).abs() <= (t - lo).abs().min((t - hi).abs()) {
                p_mid
            } else if (t - hi).abs() < (t - lo).abs() {
                p_hi
            } else {
                p_lo
            };
            rhs.eval_pooled(t, k, dk, w, &cost.psi)
        };
        rk.step(&mut f, hi, lo - hi, &mut y);
        if blown_up(&y) {
            return Err(Error::StepTooLarge(lo));
        }
        ks.push(DMatrix::from_column_slice(n, r, &y));
    }
    ks.reverse();
    let pz = pz.into_iter().map(DVector::from_vec).collect();
    Ok(BellmanSolution { grid, k: ks, model: model.clone(), cost: cost.clone(), minimizer: Arc::new(minimizer), pz: Some(pz) })
}
