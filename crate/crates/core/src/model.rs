//! The controlled cascade model `P(z, u) = A0 + A(z) + Σ_j u_j B_j(z)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::ctmc::{kron, Generator};
use crate::error::{Error, Result};

/// Slack allowed when checking that a control lies in its box.
const BOUND_SLACK: f64 = 1e-12;

/// A cascade MDP: driver generator `C` on `r` states and a control-affine
/// family of generators on `n` controlled states with `p` controls.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    r: usize,
    n: usize,
    p: usize,
    c: Generator,
    a0: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
    b: Vec<Vec<DMatrix<f64>>>,
    bounds: Vec<(f64, f64)>,
}

impl CascadeModel {
    /// Builds a model after checking shapes. `b[j][z]` is `B_j(e_z)`.
    ///
    /// Admissibility is a separate question, see [`check_admissible`].
    pub fn new(
        c: Generator,
        a0: DMatrix<f64>,
        a: Vec<DMatrix<f64>>,
        b: Vec<Vec<DMatrix<f64>>>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let r = c.dim();
        let n = a0.nrows();
        let p = b.len();
        let square = |m: &DMatrix<f64>| {
            if m.nrows() != n || m.ncols() != n {
                Err(Error::DimensionMismatch { expected: n, got: if m.nrows() != n { m.nrows() } else { m.ncols() } })
            } else {
                Ok(())
            }
        };
        if r == 0 || n == 0 {
            return Err(Error::InvalidArgument("empty state space".into()));
        }
        square(&a0)?;
        if a.len() != r {
            return Err(Error::DimensionMismatch { expected: r, got: a.len() });
        }
        a.iter().try_for_each(square)?;
        for bj in &b {
            if bj.len() != r {
                return Err(Error::DimensionMismatch { expected: r, got: bj.len() });
            }
            bj.iter().try_for_each(square)?;
        }
        if bounds.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: bounds.len() });
        }
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!("control {j} has bounds [{lo}, {hi}]")));
            }
        }
        Ok(Self { r, n, p, c, a0, a, b, bounds })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn c(&self) -> &Generator {
        &self.c
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    /// `A(e_z)`.
    pub fn a(&self, z: usize) -> &DMatrix<f64> {
        &self.a[z]
    }

    /// `B_j(e_z)`.
    pub fn b(&self, j: usize, z: usize) -> &DMatrix<f64> {
        &self.b[j][z]
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Same model with a different driver generator.
    pub fn with_driver(&self, c: Generator) -> Result<Self> {
        if c.dim() != self.r {
            return Err(Error::DimensionMismatch { expected: self.r, got: c.dim() });
        }
        Ok(Self { c, ..self.clone() })
    }

    /// Same model with different control bounds.
    pub fn with_bounds(&self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(self.c.clone(), self.a0.clone(), self.a.clone(), self.b.clone(), bounds)
    }

    /// Midpoint of the control box.
    pub fn midpoint(&self) -> Vec<f64> {
        self.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// All `2^p` corners of the control box.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        (0..1usize << self.p)
            .map(|mask| {
                self.bounds
                    .iter()
                    .enumerate()
                    .map(|(j, &(lo, hi))| if mask >> j & 1 == 1 { hi } else { lo })
                    .collect()
            })
            .collect()
    }

    pub fn check_bounds(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.p {
            return Err(Error::DimensionMismatch { expected: self.p, got: u.len() });
        }
        for (j, (&v, &(lo, hi))) in u.iter().zip(&self.bounds).enumerate() {
            if !(v >= lo - BOUND_SLACK && v <= hi + BOUND_SLACK) {
                return Err(Error::ControlOutOfBounds { index: j, value: v, lo, hi });
            }
        }
        Ok(())
    }

    /// Clamps `u` into the box in place; returns whether anything moved.
    pub fn clamp(&self, u: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, &(lo, hi)) in u.iter_mut().zip(&self.bounds) {
            let c = if v.is_nan() { 0.5 * (lo + hi) } else { v.clamp(lo, hi) };
            if c != *v {
                moved = true;
                *v = c;
            }
        }
        moved
    }

    /// Writes `P(z, u)` into `out` without validation.
    pub fn assemble_into(&self, z: usize, u: &[f64], out: &mut DMatrix<f64>) {
        out.copy_from(&self.a0);
        *out += &self.a[z];
        for (j, &uj) in u.iter().enumerate() {
            if uj != 0.0 {
                *out += &self.b[j][z] * uj;
            }
        }
    }

    /// Column `x` of `P(z, u)`.
    pub fn column_into(&self, z: usize, x: usize, u: &[f64], out: &mut [f64]) {
        for (y, o) in out.iter_mut().enumerate() {
            let mut v = self.a0[(y, x)] + self.a[z][(y, x)];
            for (j, &uj) in u.iter().enumerate() {
                v += uj * self.b[j][z][(y, x)];
            }
            *o = v;
        }
    }

    /// Largest total exit rate of the controlled chain over states and box corners.
    pub fn max_exit_rate(&self) -> f64 {
        let mut best: f64 = 0.0;
        let mut m = DMatrix::zeros(self.n, self.n);
        for z in 0..self.r {
            for v in self.vertices() {
                self.assemble_into(z, &v, &mut m);
                for x in 0..self.n {
                    best = best.max(-m[(x, x)]);
                }
            }
        }
        best
    }
}

/// `P(z, u) = A0 + A(z) + Σ_j u_j B_j(z)`.
pub fn assemble_generator(model: &CascadeModel, z: usize, u: &[f64]) -> Result<Generator> {
    if z >= model.r {
        return Err(Error::BadState(z));
    }
    model.check_bounds(u)?;
    let mut m = DMatrix::zeros(model.n, model.n);
    model.assemble_into(z, u, &mut m);
    let tol = admissibility_tol(&m);
    Generator::with_tolerance(m, tol)
}

fn admissibility_tol(m: &DMatrix<f64>) -> f64 {
    1e-12 * (1.0 + m.amax())
}

/// One failed admissibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Matrix name as used in model files, e.g. `A[1]` or `B[0][2]`.
    pub matrix: String,
    pub column: usize,
    pub row: Option<usize>,
    /// Box corner at which the assembled generator failed, if any.
    pub vertex: Option<Vec<f64>>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} column {}", self.matrix, self.column)?;
        if let Some(row) = self.row {
            write!(f, " row {row}")?;
        }
        if let Some(v) = &self.vertex {
            write!(f, " at u = {v:?}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

/// Outcome of [`check_admissible`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdmissibilityReport {
    pub violations: Vec<Violation>,
}

impl AdmissibilityReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

fn column_violations(m: &DMatrix<f64>, name: &str, sign_checks: bool, vertex: Option<&[f64]>, out: &mut Vec<Violation>) {
    let tol = admissibility_tol(m);
    for col in 0..m.ncols() {
        let sum: f64 = m.column(col).iter().sum();
        let mut push = |row: Option<usize>, detail: String| {
            out.push(Violation { matrix: name.to_string(), column: col, row, vertex: vertex.map(|v| v.to_vec()), detail });
        };
        if !sum.is_finite() || sum.abs() > tol {
            push(None, format!("column sums to {sum}"));
            continue;
        }
        if sign_checks {
            for row in 0..m.nrows() {
                let v = m[(row, col)];
                if row != col && v < -tol {
                    push(Some(row), format!("negative rate {v}"));
                    break;
                }
            }
        }
    }
}

/// Checks every structural requirement of a cascade model and the
/// generator property at each corner of the control box.
pub fn check_admissible(model: &CascadeModel) -> AdmissibilityReport {
    let mut v = Vec::new();
    column_violations(model.c.matrix(), "C", true, None, &mut v);
    column_violations(&model.a0, "A0", true, None, &mut v);
    for z in 0..model.r {
        let m = &model.a0 + &model.a[z];
        column_violations(&m, &format!("A[{z}]"), true, None, &mut v);
    }
    for j in 0..model.p {
        for z in 0..model.r {
            column_violations(&model.b[j][z], &format!("B[{j}][{z}]"), false, None, &mut v);
        }
    }
    let mut m = DMatrix::zeros(model.n, model.n);
    for z in 0..model.r {
        for vert in model.vertices() {
            model.assemble_into(z, &vert, &mut m);
            column_violations(&m, &format!("P[{z}]"), true, Some(&vert), &mut v);
        }
    }
    AdmissibilityReport { violations: v }
}

/// Returns `NonAdmissibleModel` naming the first violation, if any.
pub fn require_admissible(model: &CascadeModel) -> Result<()> {
    match check_admissible(model).first() {
        None => Ok(()),
        Some(v) => Err(Error::NonAdmissibleModel(v.to_string())),
    }
}

/// Feedback law `(t, z, x) -> u`.
pub type ControlFn = Arc<dyn Fn(f64, usize, usize) -> Vec<f64> + Send + Sync>;

/// Control values on a time grid, held constant on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPolicy {
    grid: Vec<f64>,
    r: usize,
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl TabulatedPolicy {
    /// `values` is laid out as `[k][z][x][j]`.
    pub fn new(grid: Vec<f64>, r: usize, n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::EmptyInput);
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("policy grid must be strictly increasing".into()));
        }
        let expected = grid.len() * r * n * p;
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        Ok(Self { grid, r, n, p, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.r, self.n, self.p)
    }

    /// Index of the grid cell containing `t` (left-closed).
    pub fn cell(&self, t: f64) -> usize {
        self.grid.partition_point(|&g| g <= t).saturating_sub(1)
    }

    pub fn at_cell(&self, k: usize, z: usize, x: usize) -> &[f64] {
        let start = ((k * self.r + z) * self.n + x) * self.p;
        &self.values[start..start + self.p]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A control policy `u(t, z, x)`.
#[derive(Clone)]
pub enum Policy {
    Constant(Vec<f64>),
    Tabulated(TabulatedPolicy),
    ClosedForm(ControlFn),
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Constant(u) => f.debug_tuple("Constant").field(u).finish(),
            Policy::Tabulated(t) => f.debug_tuple("Tabulated").field(&t.grid.len()).finish(),
            Policy::ClosedForm(_) => f.write_str("ClosedForm(..)"),
        }
    }
}

impl Policy {
    pub fn closed_form<F>(f: F) -> Self
    where
        F: Fn(f64, usize, usize) -> Vec<f64> + Send + Sync + 'static,
    {
        Policy::ClosedForm(Arc::new(f))
    }

    /// Raw control value, not clamped.
    pub fn evaluate(&self, t: f64, z: usize, x: usize) -> Vec<f64> {
        match self {
            Policy::Constant(u) => u.clone(),
            Policy::Tabulated(tab) => tab.at_cell(tab.cell(t), z, x).to_vec(),
            Policy::ClosedForm(f) => f(t, z, x),
        }
    }

    /// Control clamped into the model's box, and whether clamping was needed.
    pub fn control(&self, model: &CascadeModel, t: f64, z: usize, x: usize) -> (Vec<f64>, bool) {
        let mut u = self.evaluate(t, z, x);
        u.resize(model.p, 0.0);
        let clamped = model.clamp(&mut u);
        (u, clamped)
    }

    /// True when the control never changes with time.
    pub fn is_time_invariant(&self) -> bool {
        matches!(self, Policy::Constant(_))
    }
}

/// Joint generator on the `r * n` product space under `policy` at time `t`.
///
/// Column `(z, x)` carries column `x` of `P(z, u(t, z, x))` inside block `z`,
/// plus the driver moves of `C ⊗ I_n`.
pub fn lift_to_joint(model: &CascadeModel, policy: &Policy, t: f64) -> Result<Generator> {
    let (r, n) = (model.r, model.n);
    let mut joint = kron(model.c.matrix(), &DMatrix::identity(n, n));
    let mut col = vec![0.0; n];
    for z in 0..r {
        for x in 0..n {
            let (u, _) = policy.control(model, t, z, x);
            model.column_into(z, x, &u, &mut col);
            for y in 0..n {
                joint[(z * n + y, z * n + x)] += col[y];
            }
        }
    }
    let tol = admissibility_tol(&joint);
    Generator::with_tolerance(joint, tol)
}

/// Rank-one structure in which every `A(z)` and `B_j(z)` lives in a single column.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularForm {
    pub valid: bool,
    /// The only column on which controls and driver act; `None` when all of
    /// `A(z)` and `B_j(z)` vanish.
    pub column: Option<usize>,
    a0: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
    b: Vec<Vec<DMatrix<f64>>>,
}

impl TriangularForm {
    /// Generator of the closed marginal equation `ṗ = X p` given the driver
    /// marginal `c` and per-driver-state controls `u[z]`.
    pub fn marginal_generator(&self, c: &[f64], u: &[Vec<f64>]) -> DMatrix<f64> {
        let mut x = self.a0.clone();
        for (z, &cz) in c.iter().enumerate() {
            x += &self.a[z] * cz;
            for (j, bj) in self.b.iter().enumerate() {
                x += &bj[z] * (cz * u[z][j]);
            }
        }
        x
    }
}

/// Detects the rank-one structure; see [`TriangularForm`].
pub fn triangular_form(model: &CascadeModel) -> TriangularForm {
    let mut column: Option<usize> = None;
    let mut valid = true;
    let mats = model.a.iter().chain(model.b.iter().flatten());
    for m in mats {
        for k in 0..model.n {
            if m.column(k).iter().any(|&v| v != 0.0) {
                match column {
                    None => column = Some(k),
                    Some(c) if c == k => {}
                    Some(_) => valid = false,
                }
            }
        }
    }
    TriangularForm {
        valid,
        column: if valid { column } else { None },
        a0: model.a0.clone(),
        a: model.a.clone(),
        b: model.b.clone(),
    }
}

/// Which sufficient diagonalizability condition a model meets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagonalizability {
    /// `A` and every `B_j` are independent of `z` and controls ignore `z`.
    HoldsByC1,
    /// The controlled generator is independent of `z` for every admissible control.
    HoldsByC2,
    Unknown,
}

impl fmt::Display for Diagonalizability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Diagonalizability::HoldsByC1 => "holds_by_C1",
            Diagonalizability::HoldsByC2 => "holds_by_C2",
            Diagonalizability::Unknown => "unknown",
        })
    }
}

/// Tests the two decidable sufficient conditions for a diagonalizable joint chain.
///
/// The second is checked column by column: the columns of `A(z)` must agree
/// across `z`, and so must those of each `B_j(z)` unless controls may depend
/// on `z`, in which case they must vanish.
pub fn diagonalizable_sufficient(model: &CascadeModel, feedback_on_z: bool) -> Diagonalizability {
    let same = |ms: &[DMatrix<f64>]| ms.iter().all(|m| m == &ms[0]);
    let a_same = same(&model.a);
    let b_same = model.b.iter().all(|bj| same(bj));
    if a_same && b_same && !feedback_on_z {
        return Diagonalizability::HoldsByC1;
    }
    let c2 = (0..model.n).all(|x| {
        let a_col = (1..model.r).all(|z| model.a[z].column(x) == model.a[0].column(x));
        let b_col = model.b.iter().all(|bj| {
            if feedback_on_z {
                bj.iter().all(|m| m.column(x).iter().all(|&v| v == 0.0))
            } else {
                (1..model.r).all(|z| bj[z].column(x) == bj[0].column(x))
            }
        });
        a_col && b_col
    });
    if c2 {
        Diagonalizability::HoldsByC2
    } else {
        Diagonalizability::Unknown
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn toy() -> CascadeModel {
        let c = Generator::new(dmatrix![-1.0, 1.0; 1.0, -1.0]).unwrap();
        let a0 = DMatrix::zeros(2, 2);
        let a = vec![dmatrix![-1.0, 1.0; 1.0, -1.0], dmatrix![-0.5, 0.0; 0.5, 0.0]];
        let b = vec![vec![dmatrix![-1.0, 0.0; 1.0, 0.0], DMatrix::zeros(2, 2)]];
        CascadeModel::new(c, a0, a, b, vec![(-0.5, 0.5)]).unwrap()
    }

    #[test]
    fn assemble_at_zero_control_is_a0_plus_a() {
        let m = toy();
        let g = assemble_generator(&m, 1, &[0.0]).unwrap();
        assert_eq!(g.matrix(), &(m.a0() + m.a(1)));
    }

    #[test]
    fn assemble_errors() {
        let m = toy();
        assert_eq!(assemble_generator(&m, 2, &[0.0]), Err(Error::BadState(2)));
        assert!(matches!(assemble_generator(&m, 0, &[0.7]), Err(Error::ControlOutOfBounds { .. })));
    }

    #[test]
    fn admissibility_detects_wide_box() {
        let m = toy();
        assert!(check_admissible(&m).is_admissible());
        let wide = m.with_bounds(vec![(-2.0, 2.0)]).unwrap();
        let report = check_admissible(&wide);
        assert!(!report.is_admissible());
        assert_eq!(report.first().unwrap().matrix, "P[0]");
    }

    #[test]
    fn lift_with_zero_driver_is_block_diagonal() {
        let m = toy().with_driver(Generator::zeros(2)).unwrap();
        let j = lift_to_joint(&m, &Policy::Constant(vec![0.25]), 0.0).unwrap();
        let p0 = assemble_generator(&m, 0, &[0.25]).unwrap();
        let p1 = assemble_generator(&m, 1, &[0.25]).unwrap();
        assert_eq!(j.matrix().view((0, 0), (2, 2)), p0.matrix().view((0, 0), (2, 2)));
        assert_eq!(j.matrix().view((2, 2), (2, 2)), p1.matrix().view((0, 0), (2, 2)));
        assert!(j.matrix().view((0, 2), (2, 2)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tabulated_cells_are_left_closed() {
        let tab = TabulatedPolicy::new(vec![0.0, 1.0, 2.0], 1, 1, 1, vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(tab.cell(0.0), 0);
        assert_eq!(tab.cell(0.999), 0);
        assert_eq!(tab.cell(1.0), 1);
        assert_eq!(tab.cell(5.0), 2);
        assert_eq!(tab.cell(-1.0), 0);
    }

    #[test]
    fn diagonalizability_of_z_independent_model() {
        let c = Generator::new(dmatrix![-1.0, 1.0; 1.0, -1.0]).unwrap();
        let a = dmatrix![-1.0, 1.0; 1.0, -1.0];
        let b = dmatrix![-1.0, 0.0; 1.0, 0.0];
        let m = CascadeModel::new(c, DMatrix::zeros(2, 2), vec![a.clone(), a], vec![vec![b.clone(), b]], vec![(-0.5, 0.5)]).unwrap();
        assert_eq!(diagonalizable_sufficient(&m, false), Diagonalizability::HoldsByC1);
        assert_eq!(diagonalizable_sufficient(&m, true), Diagonalizability::Unknown);
        assert_eq!(diagonalizable_sufficient(&toy(), false), Diagonalizability::Unknown);
    }
}
