//! Fixed-step classical Runge-Kutta integration on flat `f64` state.
//!
//! Every solver in the crate shares the same grid rule: steps of `dt`
//! from the starting time, with one shorter final step so the grid lands
//! exactly on the end point.

use crate::error::{Error, Result};

/// Time points from `t0` to `t1` (either direction) with step `dt` and a
/// partial final step. The first and last entries are `t0` and `t1` exactly.
pub fn time_grid(t0: f64, t1: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidStep(dt));
    }
    if !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidArgument("non-finite time bound".into()));
    }
    let span = (t1 - t0).abs();
    let sign = if t1 >= t0 { 1.0 } else { -1.0 };
    // Steps shorter than this relative slack are merged into the last one.
    let slack = 1e-9 * dt;
    let full = ((span - slack) / dt).floor().max(0.0) as usize;
    let mut grid = Vec::with_capacity(full + 2);
    grid.push(t0);
    for i in 1..=full {
        grid.push(t0 + sign * dt * i as f64);
    }
    if span > 0.0 {
        grid.push(t1);
    }
    Ok(grid)
}

/// Scratch space for RK4 steps on a state of fixed length.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Self {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    /// Advances `y` from `t` to `t + h` (`h` may be negative).
    ///
    /// `f(t, y, dy)` writes the derivative of `y` at `t` into `dy`.
    pub fn step<F>(&mut self, f: &mut F, t: f64, h: f64, y: &mut [f64])
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        debug_assert_eq!(n, self.k1.len());
        f(t, y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}
