//! Steady-state control of the decision chain: stationary distributions,
//! the quadratic program for the best constant control, and state/costate
//! diagnostics along singular arcs.

use std::fmt;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::ctmc::{Generator, ProbabilityVector};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ode::{time_grid, Rk4};
use crate::zoo;

/// Stationary distribution of an irreducible generator, `(eeᵀ + XᵀX)⁻¹ e`.
///
/// A single closed class with transient states is also accepted, since the
/// stationary distribution is still unique.
pub fn steady_state(x: &Generator) -> Result<ProbabilityVector> {
    if !x.has_single_closed_class() {
        return Err(Error::Reducible);
    }
    let m = x.matrix();
    let n = m.nrows();
    let e = DVector::from_element(n, 1.0);
    let lhs = DMatrix::from_element(n, n, 1.0) + m.transpose() * m;
    let p = lhs.lu().solve(&e).ok_or_else(|| Error::SingularSolve("stationary system".into()))?;
    let residual = (m * &p).amax();
    if !(residual < 1e-10) {
        return Err(Error::SingularSolve(format!("stationary residual {residual:e}")));
    }
    let total = p.sum();
    ProbabilityVector::new(p / total)
}

/// The `N`-way decision chain with `f = s = 1` under a stationary driver
/// distribution `c`, with tracking target `Qp ≈ m`.
#[derive(Debug, Clone)]
pub struct SingularProblem {
    n_alt: usize,
    a0: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    q: DMatrix<f64>,
    m: DVector<f64>,
}

impl SingularProblem {
    pub fn new(n_alt: usize) -> Result<Self> {
        if n_alt < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 alternatives, got {n_alt}")));
        }
        let r = n_alt * (n_alt - 1) / 2;
        let entry = zoo::binary_decision(n_alt, Generator::zeros(r))?;
        let model = entry.model;
        let n = n_alt + 1;
        let mut q = DMatrix::identity(n, n);
        q[(n_alt, n_alt)] = 0.0;
        let mut m = DVector::from_element(n, 0.5 / n_alt as f64);
        m[n_alt] = 0.0;
        Ok(Self {
            n_alt,
            a0: model.a0().clone(),
            a: (0..r).map(|z| model.a(z).clone()).collect(),
            b: (0..r).map(|z| model.b(0, z).clone()).collect(),
            q,
            m,
        })
    }

    pub fn alternatives(&self) -> usize {
        self.n_alt
    }

    /// Number of driver states (and controls).
    pub fn r(&self) -> usize {
        self.a.len()
    }

    pub fn n(&self) -> usize {
        self.n_alt + 1
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn m(&self) -> &DVector<f64> {
        &self.m
    }

    fn check(&self, c: &ProbabilityVector, u: &[f64]) -> Result<()> {
        let r = self.r();
        if c.dim() != r {
            return Err(Error::DimensionMismatch { expected: r, got: c.dim() });
        }
        if u.len() != r {
            return Err(Error::DimensionMismatch { expected: r, got: u.len() });
        }
        match u.iter().position(|v| !(v.abs() <= 0.5 + 1e-12)) {
            Some(j) => Err(Error::BoxViolation(j)),
            None => Ok(()),
        }
    }

    fn generator_matrix(&self, c: &ProbabilityVector, u: &[f64]) -> DMatrix<f64> {
        let mut x = self.a0.clone();
        for (z, &cz) in c.as_slice().iter().enumerate() {
            x += &self.a[z] * cz + &self.b[z] * (cz * u[z]);
        }
        x
    }

    /// `X(u) = A0 + Σ_z c_z (A(e_z) + u_z B(e_z))`.
    pub fn generator(&self, c: &ProbabilityVector, u: &[f64]) -> Result<Generator> {
        self.check(c, u)?;
        Generator::new(self.generator_matrix(c, u))
    }

    /// Coefficient of `u_j` in `X(u)`: `c_j B(e_j)`.
    pub fn switching_matrix(&self, c: &ProbabilityVector, j: usize) -> DMatrix<f64> {
        &self.b[j] * c[j]
    }

    /// `‖Qp - m‖²`.
    pub fn tracking_cost(&self, p: &DVector<f64>) -> f64 {
        (&self.q * p - &self.m).norm_squared()
    }
}

/// `X(u)` of the cat's dilemma with `f = s = 1`.
pub fn cat_x(c: &ProbabilityVector, u: &[f64]) -> Result<Generator> {
    SingularProblem::new(3)?.generator(c, u)
}

/// Stationary probabilities of the three fed states, `p_i = ½ X[i][unfed]`.
pub fn cat_p(c: &ProbabilityVector, u: &[f64]) -> Result<DVector<f64>> {
    let x = cat_x(c, u)?;
    Ok(DVector::from_fn(3, |i, _| 0.5 * x.matrix()[(i, 3)]))
}

/// `min_u ½uᵀHu + fᵀu + k` over a box, where the objective equals `‖½Au + b‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub k: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub c: DVector<f64>,
}

impl QpProblem {
    pub fn from_residual(a: DMatrix<f64>, b: DVector<f64>, bounds: Vec<(f64, f64)>, c: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() || a.ncols() != bounds.len() {
            return Err(Error::DimensionMismatch { expected: a.ncols(), got: bounds.len() });
        }
        if let Some(j) = bounds.iter().position(|&(lo, hi)| !(lo <= hi)) {
            return Err(Error::BoxViolation(j));
        }
        let h = a.transpose() * &a * 0.5;
        let f = a.transpose() * &b;
        let k = b.dot(&b);
        Ok(Self { h, f, k, a, b, bounds, c })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn with_bounds(self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        Self::from_residual(self.a, self.b, bounds, self.c)
    }

    /// `½uᵀHu + fᵀu + k`.
    pub fn quadratic_form(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.f.dot(u) + self.k
    }

    /// `‖½Au + b‖²`, the same value computed without cancellation.
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        (&self.a * u * 0.5 + &self.b).norm_squared()
    }

    fn project(&self, u: &mut DVector<f64>) {
        for (v, &(lo, hi)) in u.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| lo <= v && v <= hi)
    }
}

/// The cat's dilemma quadratic program for driver distribution `c`.
pub fn build_qp(c: &ProbabilityVector) -> Result<QpProblem> {
    if c.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: c.dim() });
    }
    let (c1, c2, c3) = (c[0], c[1], c[2]);
    let a = DMatrix::from_row_slice(3, 3, &[0.0, -c2, c3, c1, 0.0, -c3, -c1, c2, 0.0]);
    let sixth = 1.0 / 6.0;
    let b = DVector::from_vec(vec![-sixth + 0.25 * (c2 + c3), -sixth + 0.25 * (c1 + c3), -sixth + 0.25 * (c1 + c2)]);
    QpProblem::from_residual(a, b, vec![(-0.5, 0.5); 3], c.as_vector().clone())
}

/// Whether the optimum is zero with an interior minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpClass {
    InteriorZero,
    BoundaryPositive,
}

impl fmt::Display for QpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QpClass::InteriorZero => "InteriorZero",
            QpClass::BoundaryPositive => "BoundaryPositive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u0: DVector<f64>,
    pub eta_star: f64,
    /// Coordinates sitting on a bound.
    pub active: Vec<bool>,
    pub class: QpClass,
    pub iterations: usize,
    /// False when the iteration cap was reached first.
    pub converged: bool,
}

const QP_MAX_ITER: usize = 100_000;
const QP_TOL: f64 = 1e-12;
const ZERO_ETA: f64 = 1e-8;
const ACTIVE_TOL: f64 = 1e-9;

fn pinv(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let tol = (1e-10 * a.norm()).max(f64::MIN_POSITIVE);
    a.clone().pseudo_inverse(tol).map_err(|e| Error::SingularSolve(e.into()))
}

/// Minimizes the box QP by projected gradient, then replaces the iterate by
/// the minimum-norm point of the optimal set.
///
/// The optimal set is the box intersected with `{u : Au = Au*}`; its
/// minimum-norm point is found by Dykstra's alternating projections.
pub fn solve_box_qp(qp: &QpProblem) -> Result<QpSolution> {
    let r = qp.dim();
    let spectral = qp.h.symmetric_eigenvalues().amax();
    let step = 1.0 / (spectral + 1.0);
    let mut u = DVector::from_iterator(r, qp.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < QP_MAX_ITER {
        let g = &qp.h * &u + &qp.f;
        let mut full = &u - &g;
        qp.project(&mut full);
        if (&full - &u).norm() < QP_TOL {
            converged = true;
            break;
        }
        let mut next = &u - &g * step;
        qp.project(&mut next);
        u = next;
        iterations += 1;
    }

    let target = &qp.a * &u;
    let a_pinv = pinv(&qp.a)?;
    let mut x = DVector::zeros(r);
    let (mut pa, mut pb) = (DVector::zeros(r), DVector::zeros(r));
    for _ in 0..QP_MAX_ITER {
        let xa = &x + &pa;
        let y = &xa - &a_pinv * (&qp.a * &xa - &target);
        pa = xa - &y;
        let yb = &y + &pb;
        let mut next = yb.clone();
        qp.project(&mut next);
        pb = yb - &next;
        let moved = (&next - &x).amax();
        x = next;
        if moved < 1e-16 {
            break;
        }
    }
    let u0 = if qp.objective(&x) <= qp.objective(&u) + 1e-13 { x } else { u };
    let eta_star = qp.objective(&u0);
    let active = u0
        .iter()
        .zip(&qp.bounds)
        .map(|(&v, &(lo, hi))| (v - lo).abs() <= ACTIVE_TOL || (hi - v).abs() <= ACTIVE_TOL)
        .collect();
    let class = if eta_star <= ZERO_ETA { QpClass::InteriorZero } else { QpClass::BoundaryPositive };
    Ok(QpSolution { u0, eta_star, active, class, iterations, converged })
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// An exact solution of `Au = -2b` strictly inside the box, if one exists.
///
/// Returns the point of the solution set farthest from the box faces.
pub fn exact_interior_solution(qp: &QpProblem) -> Result<Option<DVector<f64>>> {
    let r = qp.dim();
    let rhs = -&qp.b * 2.0;
    let base = pinv(&qp.a)? * &rhs;
    if (&qp.a * &base - &rhs).amax() > 1e-9 {
        return Ok(None);
    }
    let svd = qp.a.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::SingularSolve("svd".into()))?;
    let tol = 1e-10 * qp.a.norm().max(1e-300);
    let mut sv = vec![0.0; r];
    for (i, &s) in svd.singular_values.iter().enumerate() {
        sv[i] = s;
    }
    let null: Vec<DVector<f64>> =
        (0..r).filter(|&i| sv[i] <= tol).map(|i| v_t.row(i).transpose()).collect();
    let k = null.len();

    // Maximize t subject to lo + t ≤ base + Nv ≤ hi - t over (v, t).
    let mut g = DMatrix::zeros(2 * r, k + 1);
    let mut h = DVector::zeros(2 * r);
    for i in 0..r {
        let (lo, hi) = qp.bounds[i];
        for (col, nv) in null.iter().enumerate() {
            g[(2 * i, col)] = nv[i];
            g[(2 * i + 1, col)] = -nv[i];
        }
        g[(2 * i, k)] = 1.0;
        g[(2 * i + 1, k)] = 1.0;
        h[2 * i] = hi - base[i];
        h[2 * i + 1] = base[i] - lo;
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for rows in subsets(2 * r, k + 1) {
        let gs = DMatrix::from_fn(k + 1, k + 1, |i, j| g[(rows[i], j)]);
        let hs = DVector::from_fn(k + 1, |i, _| h[rows[i]]);
        let lu = gs.lu();
        if lu.determinant().abs() < 1e-14 {
            continue;
        }
        let Some(y) = lu.solve(&hs) else { continue };
        if (&g * &y - &h).max() > 1e-12 {
            continue;
        }
        if best.as_ref().is_none_or(|(t, _)| y[k] > *t) {
            best = Some((y[k], y));
        }
    }
    Ok(best.and_then(|(t, y)| {
        (t > 1e-12).then(|| {
            let mut u = base.clone();
            for (col, nv) in null.iter().enumerate() {
                u += nv * y[col];
            }
            u
        })
    }))
}

/// Largest grid size the oracle will enumerate.
pub const ORACLE_MAX_POINTS: u128 = 100_000_000;

fn axis_points(lo: f64, hi: f64, step: f64) -> Result<usize> {
    let span = hi - lo;
    if span == 0.0 {
        return Ok(1);
    }
    let cells = span / step;
    let rounded = cells.round();
    if rounded < 1.0 || (cells - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(Error::InvalidArgument(format!("step {step} does not divide [{lo}, {hi}]")));
    }
    Ok(rounded as usize + 1)
}

/// Exhaustive search on `axes` in lexicographic order, keeping the first strict minimum.
fn grid_search(qp: &QpProblem, axes: &[Vec<f64>], best: &mut (DVector<f64>, f64)) {
    let r = axes.len();
    let mut idx = vec![0usize; r];
    let mut u = DVector::zeros(r);
    loop {
        for j in 0..r {
            u[j] = axes[j][idx[j]];
        }
        let v = qp.objective(&u);
        if v < best.1 {
            *best = (u.clone(), v);
        }
        let mut j = r;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            idx[j] += 1;
            if idx[j] < axes[j].len() {
                break;
            }
            idx[j] = 0;
        }
    }
}

/// Brute-force minimizer on a grid of spacing `step`, refined twice by
/// zooming ×10 around the incumbent.
pub fn qp_oracle_grid(qp: &QpProblem, step: f64) -> Result<(DVector<f64>, f64)> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidStep(step));
    }
    let counts = qp.bounds.iter().map(|&(lo, hi)| axis_points(lo, hi, step)).collect::<Result<Vec<_>>>()?;
    let total = counts.iter().map(|&c| c as u128).product::<u128>();
    if total > ORACLE_MAX_POINTS {
        return Err(Error::GridTooLarge(total));
    }
    let axes: Vec<Vec<f64>> = qp
        .bounds
        .iter()
        .zip(&counts)
        .map(|(&(lo, hi), &m)| {
            (0..m).map(|i| if i + 1 == m { hi } else { lo + step * i as f64 }).collect()
        })
        .collect();
    let mut best = (DVector::zeros(qp.dim()), f64::INFINITY);
    grid_search(qp, &axes, &mut best);
    let mut h = step;
    for _ in 0..2 {
        let fine = h / 10.0;
        let axes: Vec<Vec<f64>> = qp
            .bounds
            .iter()
            .enumerate()
            .map(|(j, &(lo, hi))| {
                let centre = best.0[j];
                (0..=20)
                    .map(|i| centre - h + fine * i as f64)
                    .filter(|&v| v >= lo - 1e-15 && v <= hi + 1e-15)
                    .map(|v| v.clamp(lo, hi))
                    .collect()
            })
            .collect();
        grid_search(qp, &axes, &mut best);
        h = fine;
    }
    Ok(best)
}

/// One point of the simplex sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub c: [f64; 3],
    pub solution: QpSolution,
}

/// Solves the QP at every `c = (i, j, res - i - j) / res` on the simplex.
pub fn sweep(exec: Exec, resolution: usize) -> Result<Vec<SweepRow>> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("sweep resolution must be positive".into()));
    }
    let points: Vec<[f64; 3]> = (0..=resolution)
        .flat_map(|i| (0..=resolution - i).map(move |j| (i, j)))
        .map(|(i, j)| {
            let d = resolution as f64;
            [i as f64 / d, j as f64 / d, (resolution - i - j) as f64 / d]
        })
        .collect();
    exec.map(points.len(), |k| {
        let c = points[k];
        let qp = build_qp(&ProbabilityVector::from_slice(&c)?)?;
        Ok(SweepRow { c, solution: solve_box_qp(&qp)? })
    })
    .into_iter()
    .collect()
}

/// Sweep rows as CSV with header `c1,c2,c3,u1,u2,u3,eta,class`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("c1,c2,c3,u1,u2,u3,eta,class\n");
    for row in rows {
        for v in row.c.iter().chain(row.solution.u0.iter()) {
            write!(out, "{v:.16e},").unwrap();
        }
        writeln!(out, "{:.16e},{}", row.solution.eta_star, row.solution.class).unwrap();
    }
    out
}

/// State, costate, Hamiltonian and switching functions on a time grid.
#[derive(Debug, Clone)]
pub struct SingularDiagnostics {
    pub grid: Vec<f64>,
    pub p: Vec<DVector<f64>>,
    pub q: Vec<DVector<f64>>,
    pub hamiltonian: Vec<f64>,
    /// `switching[k][j] = qᵀ c_j B(e_j) p` at `grid[k]`.
    pub switching: Vec<Vec<f64>>,
}

/// Integrates `ṗ = X(u(t)) p` forward and
/// `q̇ = -2Qᵀ(Qp - m) - X(u(t))ᵀ q` backward from `q(T) = q_T`, then
/// evaluates `H = ‖Qp - m‖² + qᵀXp` and the switching functions.
pub fn state_costate_integrate<U>(
    problem: &SingularProblem,
    c: &ProbabilityVector,
    u: U,
    horizon: f64,
    p0: &ProbabilityVector,
    q_terminal: &DVector<f64>,
    dt: f64,
) -> Result<SingularDiagnostics>
where
    U: Fn(f64) -> Vec<f64>,
{
    let n = problem.n();
    if p0.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p0.dim() });
    }
    if q_terminal.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: q_terminal.len() });
    }
    let grid = time_grid(0.0, horizon, dt)?;
    let x_at = |t: f64| -> Result<DMatrix<f64>> {
        let ut = u(t);
        problem.check(c, &ut)?;
        Ok(problem.generator_matrix(c, &ut))
    };

    // Forward pass on the grid refined by midpoints, so the backward stages
    // find the state at their exact times.
    let mut fine = vec![p0.as_vector().clone()];
    let mut y = p0.as_slice().to_vec();
    let mut rk = Rk4::new(n);
    let mut failure = None;
    {
        let mut f = |t: f64, p: &[f64], dp: &mut [f64]| match x_at(t) {
            Ok(x) => dp.copy_from_slice((x * DVector::from_column_slice(p)).as_slice()),
            Err(e) => {
                failure.get_or_insert(e);
                dp.fill(0.0);
            }
        };
        for w in grid.windows(2) {
            let h = 0.5 * (w[1] - w[0]);
            rk.step(&mut f, w[0], h, &mut y);
            fine.push(DVector::from_column_slice(&y));
            rk.step(&mut f, w[0] + h, h, &mut y);
            fine.push(DVector::from_column_slice(&y));
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }

    let qm = problem.q.transpose();
    let mut y = q_terminal.as_slice().to_vec();
    let mut qs = vec![q_terminal.clone()];
    let mut failure = None;
    for k in (0..grid.len() - 1).rev() {
        let (t0, t1) = (grid[k], grid[k + 1]);
        let mut f = |t: f64, q: &[f64], dq: &mut [f64]| {
            let half = ((t - t0) / (0.5 * (t1 - t0))).round().clamp(0.0, 2.0) as usize;
            let p = &fine[2 * k + half];
            match x_at(t) {
                Ok(x) => {
                    let q = DVector::from_column_slice(q);
                    let d = -(&qm * (&problem.q * p - &problem.m)) * 2.0 - x.transpose() * q;
                    dq.copy_from_slice(d.as_slice());
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    dq.fill(0.0);
                }
            }
        };
        rk.step(&mut f, t1, t0 - t1, &mut y);
        qs.push(DVector::from_column_slice(&y));
    }
    if let Some(e) = failure {
        return Err(e);
    }
    qs.reverse();

    let p: Vec<DVector<f64>> = fine.into_iter().step_by(2).collect();
    let switches: Vec<DMatrix<f64>> = (0..problem.r()).map(|j| problem.switching_matrix(c, j)).collect();
    let mut hamiltonian = Vec::with_capacity(grid.len());
    let mut switching = Vec::with_capacity(grid.len());
    for (i, &t) in grid.iter().enumerate() {
        let x = x_at(t)?;
        hamiltonian.push(problem.tracking_cost(&p[i]) + qs[i].dot(&(x * &p[i])));
        switching.push(switches.iter().map(|b| qs[i].dot(&(b * &p[i]))).collect());
    }
    Ok(SingularDiagnostics { grid, p, q: qs, hamiltonian, switching })
}

/// Marginals `(p_unfed, p_i)` along the singular arc started undecided:
/// `p_unfed = ½(1 + e^{-2t})`, `p_i = (1 - e^{-2t}) / (2N)`.
pub fn singular_closed_form(n_alt: usize, t: f64) -> Result<(f64, f64)> {
    if n_alt < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 alternatives, got {n_alt}")));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time {t}")));
    }
    let decay = (-2.0 * t).exp();
    Ok((0.5 * (1.0 + decay), (1.0 - decay) / (2.0 * n_alt as f64)))
}

/// Stationary distribution of `A + u f e_jᵀ` from the rank-one update formula.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneSteady {
    pub p: ProbabilityVector,
    /// `‖(A + u f e_jᵀ) p‖_∞` of the normalized formula value.
    pub residual: f64,
    /// Set when the formula missed the residual bound and a direct solve was used.
    pub used_fallback: bool,
}

/// `p(u) = p(0) - (e_jᵀp(0)) u A⁺f / (1 + u e_jᵀA⁺f)`, normalized.
pub fn rank_one_steady(a: &Generator, f: &DVector<f64>, j: usize, u: f64) -> Result<RankOneSteady> {
    let n = a.dim();
    if f.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: f.len() });
    }
    if j >= n {
        return Err(Error::IndexOutOfRange { index: j, dim: n });
    }
    let p0 = steady_state(a)?;
    let mut perturbed = a.matrix().clone();
    for i in 0..n {
        perturbed[(i, j)] += u * f[i];
    }
    let perturbed = Generator::new(perturbed)?;
    let af = pinv(a.matrix())? * f;
    let pj = p0[j];
    let denom = 1.0 + u * af[j];
    let mut p = p0.as_vector() - af * (pj * u / denom);
    p /= p.sum();
    let residual = (perturbed.matrix() * &p).amax();
    if residual.is_finite() && residual < 1e-8 {
        if let Ok(p) = ProbabilityVector::new(p) {
            return Ok(RankOneSteady { p, residual, used_fallback: false });
        }
    }
    Ok(RankOneSteady { p: steady_state(&perturbed)?, residual, used_fallback: true })
}
