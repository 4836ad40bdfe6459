use cascade_mdp::bellman::{
    costate_verify, solve_bellman, solve_coupled_baseline, solve_diagonalizable, solve_partial_feedback, CostMatrix,
    DiagMode,
};
use cascade_mdp::ctmc::propagate_constant;
use cascade_mdp::model::lift_to_joint;
use cascade_mdp::zoo::{self, bond_stock_sf};
use cascade_mdp::{CascadeModel, CostSpec, Generator, Policy, ProbabilityVector, Psi};
use nalgebra::{DMatrix, DVector};

fn generator(n: usize, rates: &[f64]) -> Generator {
    let mut m = DMatrix::zeros(n, n);
    let mut it = rates.iter();
    for x in 0..n {
        for y in 0..n {
            if x != y {
                m[(y, x)] = *it.next().unwrap();
            }
        }
        m[(x, x)] = -m.column(x).sum();
    }
    Generator::new(m).unwrap()
}

/// Uncontrolled cascade: `r = 2` driver, `n = 3` controlled chain with `z`-dependent rates.
fn uncontrolled() -> (CascadeModel, CostSpec) {
    let c = generator(2, &[0.7, 0.4]);
    let a0 = generator(3, &[0.2, 0.1, 0.3, 0.0, 0.5, 0.2]).into_matrix();
    let a = vec![
        generator(3, &[0.5, 0.0, 0.0, 0.4, 0.1, 0.0]).into_matrix(),
        generator(3, &[0.0, 0.6, 0.2, 0.0, 0.0, 0.3]).into_matrix(),
    ];
    let zero = DMatrix::zeros(3, 3);
    let model = CascadeModel::new(c, a0, a, vec![vec![zero.clone(), zero]], vec![(-0.5, 0.5)]).unwrap();
    let l = DMatrix::from_row_slice(3, 2, &[1.0, -0.5, 0.0, 2.0, 0.3, 0.7]);
    let phi = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, -1.0, 0.5, 2.0, 0.0]);
    (model, CostSpec::terminal(phi).with_running(CostMatrix::Constant(l)))
}

/// `E[∫ L dt + Φ]` by propagating the joint chain forward and integrating with Simpson's rule.
fn forward_oracle(model: &CascadeModel, cost: &CostSpec, z0: usize, x0: usize, horizon: f64, steps: usize) -> f64 {
    let (r, n) = (model.r(), model.n());
    let joint = lift_to_joint(model, &Policy::Constant(model.midpoint()), 0.0).unwrap();
    let flat = |m: &DMatrix<f64>| DVector::from_fn(r * n, |i, _| m[(i % n, i / n)]);
    let l = flat(&cost.running_at(0.0));
    let h = horizon / steps as f64;
    let mut p = ProbabilityVector::point(r * n, z0 * n + x0).unwrap();
    let mut acc = l.dot(p.as_vector());
    for k in 1..=steps {
        p = propagate_constant(&joint, &p, 0.0, h, h).unwrap();
        let w = if k == steps { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * l.dot(p.as_vector());
    }
    acc * h / 3.0 + flat(&cost.phi).dot(p.as_vector())
}

fn max_joint_gap(model: &CascadeModel, cost: &CostSpec, horizon: f64, dt: f64) -> f64 {
    let sol = solve_bellman(model, cost, horizon, dt).unwrap();
    let joint = solve_coupled_baseline(model, cost, horizon, dt).unwrap();
    let mut gap = 0.0f64;
    for i in 0..sol.grid().len() {
        for z in 0..model.r() {
            for x in 0..model.n() {
                gap = gap.max((sol.k_at(i)[(x, z)] - joint.value(i, z, x)).abs());
            }
        }
    }
    gap
}

fn single_driver(model: &CascadeModel, z: usize) -> CascadeModel {
    let b = (0..model.p()).map(|j| vec![model.b(j, z).clone()]).collect();
    CascadeModel::new(Generator::zeros(1), model.a0().clone(), vec![model.a(z).clone()], b, model.bounds().to_vec()).unwrap()
}

#[test]
fn zero_cost_gives_zero_value() {
    let cat = zoo::by_name("cats-dilemma").unwrap();
    let sol = solve_bellman(&cat.model, &CostSpec::zero(4, 3), 2.0, 1e-2).unwrap();
    assert!(sol.k_all().iter().all(|k| k.amax() == 0.0));
    assert_eq!(sol.optimal_value(0, 3), 0.0);
    assert_eq!(sol.optimal_control(1.0, 1, 3).unwrap(), vec![0.0]);
}

#[test]
fn uncontrolled_value_matches_forward_propagation() {
    let (model, cost) = uncontrolled();
    let sol = solve_bellman(&model, &cost, 2.0, 1e-3).unwrap();
    for z0 in 0..2 {
        for x0 in 0..3 {
            let oracle = forward_oracle(&model, &cost, z0, x0, 2.0, 2000);
            assert!((sol.optimal_value(z0, x0) - oracle).abs() < 1e-6, "({z0}, {x0})");
        }
    }
}

#[test]
fn terminal_condition_is_exact() {
    let entry = zoo::by_name("two-stock").unwrap();
    let sol = solve_bellman(&entry.model, &entry.cost, 1.0, 1e-2).unwrap();
    assert_eq!(sol.k_at(sol.grid().len() - 1), &entry.cost.phi);
}

#[test]
fn decoupled_matches_coupled_for_every_psi() {
    let cat = zoo::by_name("cats-dilemma").unwrap();
    let phi = DMatrix::from_fn(4, 3, |x, z| (x as f64 - 1.5) * (z as f64 + 1.0) * 0.3);
    let psis = [Psi::Zero, Psi::Quadratic, Psi::custom(|u| (u[0] + 0.5).powi(2))];
    for psi in psis {
        let cost = cat.cost.clone().with_terminal(phi.clone()).with_psi(psi.clone());
        let gap = max_joint_gap(&cat.model, &cost, 2.0, 1e-2);
        assert!(gap < 1e-6, "{psi:?}: {gap:e}");
    }
    let scaling = zoo::scaling_model(3, 4).unwrap();
    assert!(max_joint_gap(&scaling.model, &scaling.cost, 2.0, 1e-2) < 1e-6);
}

#[test]
fn single_driver_solvers_agree() {
    let cat = zoo::by_name("cats-dilemma").unwrap();
    let model = single_driver(&cat.model, 1);
    let cost = CostSpec::running(DMatrix::from_column_slice(4, 1, &[0.0, -1.0, 0.5, 0.2])).with_psi(Psi::Quadratic);
    let sol = solve_bellman(&model, &cost, 3.0, 1e-2).unwrap();
    let joint = solve_coupled_baseline(&model, &cost, 3.0, 1e-2).unwrap();
    let partial = solve_partial_feedback(&model, &cost, 3.0, 1e-2, &ProbabilityVector::uniform(1)).unwrap();
    let c1 = solve_diagonalizable(&model, &cost, 3.0, 1e-2, DiagMode::C1, None).unwrap();
    let cw = solve_diagonalizable(&model, &cost, 3.0, 1e-2, DiagMode::Cweighted, Some(&ProbabilityVector::uniform(1))).unwrap();
    for i in 0..sol.grid().len() {
        for x in 0..4 {
            let k = sol.k_at(i)[(x, 0)];
            assert!((k - joint.value(i, 0, x)).abs() < 1e-10);
            assert!((k - partial.k_at(i)[(x, 0)]).abs() < 1e-10);
            assert!((k - c1.k_at(i)[x]).abs() < 1e-10);
            assert!((k - cw.k_at(i)[x]).abs() < 1e-10);
        }
    }
}

#[test]
fn partial_feedback_with_absorbed_driver_is_full_feedback() {
    let entry = zoo::by_name("invest-consume").unwrap();
    // every price state falls into state 0 and stays
    let c = Generator::new(DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.5, 0.3, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0, -0.3,
    ]))
    .unwrap();
    let model = entry.model.with_driver(c).unwrap();
    let pz0 = ProbabilityVector::point(4, 0).unwrap();
    let full = solve_bellman(&model, &entry.cost, 3.0, 1e-2).unwrap();
    let partial = solve_partial_feedback(&model, &entry.cost, 3.0, 1e-2, &pz0).unwrap();
    for x0 in 0..3 {
        let mut px = [0.0; 3];
        px[x0] = 1.0;
        let p = partial.optimal_value_mixture(pz0.as_slice(), &px);
        assert!((p - full.optimal_value(0, x0)).abs() < 1e-8);
    }
}

#[test]
fn c1_reduction_matches_matrix_solver() {
    let entry = zoo::by_name("invest-consume").unwrap();
    let v = entry.v.unwrap();
    let phi = DMatrix::from_fn(3, 4, |x, _| v[(x, 0)]);
    let l = DMatrix::from_fn(3, 4, |x, _| 0.1 * x as f64);
    let cost = CostSpec::terminal(phi).with_running(CostMatrix::Constant(l));
    let sol = solve_bellman(&entry.model, &cost, 4.0, 1e-2).unwrap();
    let red = solve_diagonalizable(&entry.model, &cost, 4.0, 1e-2, DiagMode::C1, None).unwrap();
    for i in 0..sol.grid().len() {
        for z in 0..4 {
            assert!((sol.k_at(i).column(z) - red.k_at(i)).amax() < 1e-8);
        }
    }
}

#[test]
fn c1_reduction_rejects_z_dependent_models() {
    let cat = zoo::by_name("cats-dilemma").unwrap();
    assert!(solve_diagonalizable(&cat.model, &cat.cost, 1.0, 1e-2, DiagMode::C1, None).is_err());
    let c = ProbabilityVector::from_slice(&[0.5, 0.3, 0.2]).unwrap();
    assert!(solve_diagonalizable(&cat.model, &cat.cost, 1.0, 1e-2, DiagMode::Cweighted, Some(&c)).is_err());
}

#[test]
fn weighted_reduction_counts_unfed_time() {
    let cat = zoo::by_name("cats-dilemma").unwrap();
    let mut l = DMatrix::zeros(4, 3);
    l.row_mut(3).fill(1.0);
    let cost = CostSpec::running(l);
    let horizon = 3.0;
    let c = ProbabilityVector::uniform(3);
    let red = solve_diagonalizable(&cat.model, &cost, horizon, 1e-3, DiagMode::Cweighted, Some(&c)).unwrap();
    let joint = solve_coupled_baseline(&cat.model, &cost, horizon, 1e-3).unwrap();
    for x0 in 0..4 {
        let coupled: f64 = (0..3).map(|z| joint.optimal_value(z, x0) / 3.0).sum();
        assert!((red.optimal_value(x0) - coupled).abs() < 1e-6);
    }
    // unfed mass from an unfed start is (1 + e^{-2t}) / 2
    let exact = horizon / 2.0 + (1.0 - (-2.0 * horizon).exp()) / 4.0;
    assert!((red.optimal_value(3) - exact).abs() < 1e-6);
}

#[test]
fn costates_track_k_in_exact_cases() {
    let (model, cost) = uncontrolled();
    let sol = solve_bellman(&model, &cost, 2.0, 1e-3).unwrap();
    assert!(costate_verify(&model, &cost, &sol).unwrap() < 1e-8);
    let bond = bond_stock_sf(Generator::zeros(2)).unwrap();
    let sol = solve_bellman(&bond.model, &bond.cost, 3.0, 1e-3).unwrap();
    assert!(costate_verify(&bond.model, &bond.cost, &sol).unwrap() < 1e-8);
}

#[test]
fn halving_the_step_converges_at_fourth_order() {
    let (model, cost) = uncontrolled();
    let k = |dt: f64| solve_bellman(&model, &cost, 2.0, dt).unwrap().k_at(0).clone();
    let (k1, k2, k3) = (k(0.2), k(0.1), k(0.05));
    let order = ((&k1 - &k2).amax() / (&k2 - &k3).amax()).log2();
    assert!(order >= 3.5, "observed order {order}");
}

#[test]
fn larger_box_never_costs_more() {
    for name in ["cats-dilemma", "bond-stock", "two-stock"] {
        let entry = zoo::by_name(name).unwrap();
        let mut values = Vec::new();
        for half in [0.1, 0.3, 0.5] {
            let model = entry.model.with_bounds(vec![(-half, half); entry.model.p()]).unwrap();
            values.push(solve_bellman(&model, &entry.cost, 3.0, 1e-2).unwrap().k_at(0).clone());
        }
        for w in values.windows(2) {
            assert!((&w[1] - &w[0]).max() <= 1e-12, "{name}");
        }
    }
}

#[test]
fn grid_minimization_agrees_with_quadratic_closed_form() {
    let entry = zoo::scaling_model(3, 4).unwrap();
    let quad = solve_bellman(&entry.model, &entry.cost, 2.0, 1e-2).unwrap();
    let custom = entry.cost.clone().with_psi(Psi::custom(|u| u[0] * u[0]));
    let grid = solve_bellman(&entry.model, &custom, 2.0, 1e-2).unwrap();
    assert!((quad.k_at(0) - grid.k_at(0)).amax() < 1e-3);
    for z in 0..3 {
        for x in 0..4 {
            let a = quad.optimal_control(1.0, z, x).unwrap()[0];
            let b = grid.optimal_control(1.0, z, x).unwrap()[0];
            assert!((a - b).abs() <= 0.01 + 1e-12, "({z}, {x}): {a} vs {b}");
        }
    }
}

#[test]
fn bond_stock_terminal_control_is_a_tie() {
    let bond = zoo::by_name("bond-stock").unwrap();
    let sol = solve_bellman(&bond.model, &bond.cost, 1.0, 1e-2).unwrap();
    assert_eq!(sol.optimal_control(1.0, 0, 1).unwrap(), vec![0.0]);
}

#[test]
fn quadratic_control_is_the_stationary_point_inside_a_wide_box() {
    let fast = DMatrix::from_row_slice(2, 2, &[-1e4, 1e4, 1e4, -1e4]);
    let b = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
    let model =
        CascadeModel::new(Generator::zeros(1), DMatrix::zeros(2, 2), vec![fast], vec![vec![b.clone()]], vec![(-1e3, 1e3)])
            .unwrap();
    let cost = CostSpec::terminal(DMatrix::from_column_slice(2, 1, &[0.0, 100.0])).with_psi(Psi::Quadratic);
    let sol = solve_bellman(&model, &cost, 0.01, 1e-5).unwrap();
    for t in [0.0, 0.005, 0.01] {
        let k = sol.k(t).unwrap();
        for x in 0..2 {
            let want = -0.5 * b.column(x).dot(&k.column(0));
            assert_eq!(sol.optimal_control(t, 0, x).unwrap(), vec![want]);
        }
    }
    assert_eq!(sol.optimal_control(0.01, 0, 0).unwrap(), vec![-50.0]);
}
