//! Costate equations of the maximum principle, integrated with the
//! controls of a Bellman solution and compared column by column with `K`.

use nalgebra::DMatrix;

use super::{BellmanSolution, CostSpec};
use crate::error::Result;
use crate::model::CascadeModel;
use crate::ode::Rk4;

/// Costates `q_i(t)` on the solution grid, stored as `n × r` matrices with
/// column `i` holding `q_i`.
#[derive(Debug, Clone)]
pub struct CostateTrajectory {
    pub grid: Vec<f64>,
    pub q: Vec<DMatrix<f64>>,
}

/// Integrates `q̇_i = -P_iᵀ q_i - l_i - ψ_i - Σ_k C[k][i] q_k` backward from
/// `q_i(T) = Φ e_i`, where `P_i = A0 + A_i + Σ_j B_ij D_ij` uses the
/// controls `D_ij` read from `sol` at each stage time.
///
/// The last term vanishes for a stationary driver; it is what makes the
/// costates track `K` when `C ≠ 0`.
pub fn costate_trajectory(model: &CascadeModel, cost: &CostSpec, sol: &BellmanSolution) -> Result<CostateTrajectory> {
    let (n, r) = (model.n(), model.r());
    let grid = sol.grid().to_vec();
    let horizon = sol.horizon();
    let terminal = cost.terminal_at(horizon);
    let mut y = terminal.as_slice().to_vec();
    let mut qs = vec![terminal];
    let c = model.c().matrix().clone();
    let mut col = vec![0.0; n];
    let mut failure = None;
    let mut f = |t: f64, q: &[f64], dq: &mut [f64]| {
        let l = cost.running_at(t);
        for i in 0..r {
            for x in 0..n {
                let u = match sol.optimal_control(t, i, x) {
                    Ok(u) => u,
                    Err(e) => {
                        failure.get_or_insert(e);
                        model.midpoint()
                    }
                };
                model.column_into(i, x, &u, &mut col);
                let pq: f64 = col.iter().zip(&q[i * n..(i + 1) * n]).map(|(a, b)| a * b).sum();
                let drive: f64 = (0..r).map(|k| c[(k, i)] * q[x + k * n]).sum();
                dq[x + i * n] = -pq - l[(x, i)] - cost.psi.eval(&u) - drive;
            }
        }
    };
    let mut rk = Rk4::new(n * r);
    for w in grid.windows(2).rev() {
        rk.step(&mut f, w[1], w[0] - w[1], &mut y);
        qs.push(DMatrix::from_column_slice(n, r, &y));
    }
    if let Some(e) = failure {
        return Err(e);
    }
    qs.reverse();
    Ok(CostateTrajectory { grid, q: qs })
}

/// Largest deviation `max_{t,i} ‖q_i(t) - K(t) e_i‖_∞` over the grid.
pub fn costate_verify(model: &CascadeModel, cost: &CostSpec, sol: &BellmanSolution) -> Result<f64> {
    let traj = costate_trajectory(model, cost, sol)?;
    Ok(traj.q.iter().zip(sol.k_all()).map(|(q, k)| (q - k).amax()).fold(0.0, f64::max))
}
