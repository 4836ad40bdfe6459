use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Switching values closer to zero than this count as ties.
pub(crate) const TIE_TOL: f64 = 1e-12;

/// Default number of grid points per control axis for a custom control cost.
pub const DEFAULT_CUSTOM_POINTS: usize = 101;

/// User-supplied control cost `ψ(u)`.
pub type CostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Control cost `ψ`.
#[derive(Clone)]
pub enum Psi {
    Zero,
    /// `ψ(u) = Σ_j u_j²`.
    Quadratic,
    /// Minimized over a grid with `points` values per axis.
    Custom { cost: CostFn, points: usize },
}

impl fmt::Debug for Psi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psi::Zero => f.write_str("Zero"),
            Psi::Quadratic => f.write_str("Quadratic"),
            Psi::Custom { points, .. } => write!(f, "Custom {{ points: {points} }}"),
        }
    }
}

impl Psi {
    pub fn custom<F>(cost: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Psi::Custom { cost: Arc::new(cost), points: DEFAULT_CUSTOM_POINTS }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            Psi::Zero => 0.0,
            Psi::Quadratic => u.iter().map(|v| v * v).sum(),
            Psi::Custom { cost, .. } => cost(u),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Psi::Zero)
    }
}

/// Time-dependent running cost function `t -> L(t)`.
pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Running cost matrix `L` (`n × r`, entry `[x][z]` is the cost rate in state `(z, x)`).
#[derive(Clone)]
pub enum CostMatrix {
    Constant(DMatrix<f64>),
    TimeVarying(MatrixFn),
}

impl fmt::Debug for CostMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostMatrix::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            CostMatrix::TimeVarying(_) => f.write_str("TimeVarying(..)"),
        }
    }
}

impl CostMatrix {
    pub fn at(&self, t: f64) -> Cow<'_, DMatrix<f64>> {
        match self {
            CostMatrix::Constant(m) => Cow::Borrowed(m),
            CostMatrix::TimeVarying(f) => Cow::Owned(f(t)),
        }
    }
}

/// Cost functional `E[∫ e^{-αt}(L[x][z]) + ψ(u) dt + e^{-αT} Φ[x(T)][z(T)]]`.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub l: CostMatrix,
    pub phi: DMatrix<f64>,
    pub psi: Psi,
    pub alpha: f64,
}

impl CostSpec {
    /// No cost at all on an `n × r` model.
    pub fn zero(n: usize, r: usize) -> Self {
        Self { l: CostMatrix::Constant(DMatrix::zeros(n, r)), phi: DMatrix::zeros(n, r), psi: Psi::Zero, alpha: 0.0 }
    }

    /// Terminal cost only.
    pub fn terminal(phi: DMatrix<f64>) -> Self {
        let (n, r) = phi.shape();
        Self { phi, ..Self::zero(n, r) }
    }

    /// Constant running cost only.
    pub fn running(l: DMatrix<f64>) -> Self {
        let (n, r) = l.shape();
        Self { l: CostMatrix::Constant(l), ..Self::zero(n, r) }
    }

    pub fn with_running(mut self, l: CostMatrix) -> Self {
        self.l = l;
        self
    }

    pub fn with_terminal(mut self, phi: DMatrix<f64>) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_psi(mut self, psi: Psi) -> Self {
        self.psi = psi;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub(crate) fn discount(&self, t: f64) -> f64 {
        if self.alpha == 0.0 {
            1.0
        } else {
            (-self.alpha * t).exp()
        }
    }

    /// Discounted running cost matrix at `t`.
    pub fn running_at(&self, t: f64) -> DMatrix<f64> {
        let d = self.discount(t);
        let l = self.l.at(t);
        if d == 1.0 {
            l.into_owned()
        } else {
            l.as_ref() * d
        }
    }

    /// Discounted terminal matrix at the horizon.
    pub fn terminal_at(&self, horizon: f64) -> DMatrix<f64> {
        let d = self.discount(horizon);
        if d == 1.0 {
            self.phi.clone()
        } else {
            &self.phi * d
        }
    }

    pub(crate) fn validate(&self, n: usize, r: usize, p: usize) -> Result<()> {
        let check = |m: &DMatrix<f64>| {
            if m.shape() != (n, r) {
                return Err(Error::DimensionMismatch { expected: n * r, got: m.nrows() * m.ncols() });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("cost matrix has non-finite entries".into()));
            }
            Ok(())
        };
        check(&self.phi)?;
        if let CostMatrix::Constant(l) = &self.l {
            check(l)?;
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("discount rate {}", self.alpha)));
        }
        if let Psi::Custom { points, .. } = &self.psi {
            if p > 2 {
                return Err(Error::CustomPsiDimension(p));
            }
            if *points < 2 {
                return Err(Error::InvalidArgument("custom control grid needs at least 2 points".into()));
            }
        }
        Ok(())
    }
}

/// Pointwise minimizer of `Σ_j u_j s_j + ψ(u)` over the control box.
#[derive(Clone)]
pub(crate) struct Minimizer {
    kind: Kind,
    bounds: Vec<(f64, f64)>,
}

#[derive(Clone)]
enum Kind {
    Zero,
    Quadratic,
    /// Flattened grid points (`p` values each) and the cost at each point.
    Grid { points: Vec<f64>, psi: Vec<f64> },
}

impl Minimizer {
    pub(crate) fn new(psi: &Psi, bounds: &[(f64, f64)]) -> Result<Self> {
        let kind = match psi {
            Psi::Zero => Kind::Zero,
            Psi::Quadratic => Kind::Quadratic,
            Psi::Custom { cost, points } => {
                let p = bounds.len();
                if p > 2 {
                    return Err(Error::CustomPsiDimension(p));
                }
                let axis = |j: usize| -> Vec<f64> {
                    let (lo, hi) = bounds[j];
                    (0..*points).map(|i| lo + (hi - lo) * i as f64 / (*points - 1) as f64).collect()
                };
                let mut flat = Vec::new();
                match p {
                    0 => {}
                    1 => flat.extend(axis(0)),
                    _ => {
                        let (a0, a1) = (axis(0), axis(1));
                        for &u0 in &a0 {
                            for &u1 in &a1 {
                                flat.push(u0);
                                flat.push(u1);
                            }
                        }
                    }
                }
                let psi = if p == 0 { vec![cost(&[])] } else { flat.chunks(p).map(|u| cost(u)).collect() };
                Kind::Grid { points: flat, psi }
            }
        };
        Ok(Self { kind, bounds: bounds.to_vec() })
    }

    /// Writes the minimizing control into `u` and returns the minimum.
    pub(crate) fn minimize(&self, s: &[f64], u: &mut [f64]) -> f64 {
        match &self.kind {
            Kind::Zero => {
                let mut total = 0.0;
                for ((uj, &sj), &(lo, hi)) in u.iter_mut().zip(s).zip(&self.bounds) {
                    *uj = if sj.abs() <= TIE_TOL {
                        0.5 * (lo + hi)
                    } else if sj > 0.0 {
                        lo
                    } else {
                        hi
                    };
                    total += *uj * sj;
                }
                total
            }
            Kind::Quadratic => {
                let mut total = 0.0;
                for ((uj, &sj), &(lo, hi)) in u.iter_mut().zip(s).zip(&self.bounds) {
                    *uj = (-0.5 * sj).clamp(lo, hi);
                    total += *uj * sj + *uj * *uj;
                }
                total
            }
            Kind::Grid { points, psi } => {
                let p = self.bounds.len();
                if p == 0 {
                    return psi[0];
                }
                let mut best = f64::INFINITY;
                let mut best_i = 0;
                for (i, (pt, &c)) in points.chunks_exact(p).zip(psi).enumerate() {
                    let v = pt.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() + c;
                    if v < best {
                        best = v;
                        best_i = i;
                    }
                }
                u.copy_from_slice(&points[best_i * p..(best_i + 1) * p]);
                best
            }
        }
    }
}
