use cascade_mdp::singular::{
    build_qp, cat_p, cat_x, exact_interior_solution, qp_oracle_grid, rank_one_steady, singular_closed_form,
    solve_box_qp, state_costate_integrate, steady_state, sweep, QpClass, SingularProblem,
};
use cascade_mdp::{Error, Exec, Generator, ProbabilityVector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dist(v: &[f64]) -> ProbabilityVector {
    ProbabilityVector::from_slice(v).unwrap()
}

/// Null vector of a generator from the SVD, normalized to a distribution.
fn null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = m.clone().svd(false, true);
    let k = svd.singular_values.imin();
    let v: DVector<f64> = svd.v_t.unwrap().row(k).transpose();
    &v / v.sum()
}

fn ring() -> Generator {
    Generator::new(DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0])).unwrap()
}

fn arb_simplex() -> impl Strategy<Value = ProbabilityVector> {
    proptest::collection::vec(0.0..1.0f64, 3).prop_filter_map("empty", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-3).then(|| dist(&w.iter().map(|v| v / s).collect::<Vec<_>>()))
    })
}

#[test]
fn steady_state_examples() {
    let x = cat_x(&ProbabilityVector::uniform(3), &[0.0; 3]).unwrap();
    let p = steady_state(&x).unwrap();
    for (i, want) in [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5].iter().enumerate() {
        assert!((p[i] - want).abs() < 1e-12);
    }
    let split = Generator::new(DMatrix::zeros(2, 2)).unwrap();
    assert_eq!(steady_state(&split), Err(Error::Reducible));
}

#[test]
fn cat_p_examples() {
    let cases: [([f64; 3], [f64; 3], [f64; 3]); 3] = [
        ([1.0, 0.0, 0.0], [0.0; 3], [0.0, 0.25, 0.25]),
        ([1.0 / 3.0; 3], [0.0; 3], [1.0 / 6.0; 3]),
        ([0.0, 0.5, 0.5], [0.0, 1.0 / 6.0, -1.0 / 6.0], [1.0 / 6.0; 3]),
    ];
    for (c, u, want) in cases {
        let c = dist(&c);
        let p = cat_p(&c, &u).unwrap();
        let full = steady_state(&cat_x(&c, &u).unwrap()).unwrap();
        for i in 0..3 {
            assert!((p[i] - want[i]).abs() < 1e-12);
            assert!((p[i] - full[i]).abs() < 1e-10);
        }
    }
    assert_eq!(cat_p(&ProbabilityVector::uniform(3), &[0.0, 0.7, 0.0]), Err(Error::BoxViolation(1)));
}

#[test]
fn build_qp_examples() {
    let qp = build_qp(&ProbabilityVector::uniform(3)).unwrap();
    assert!(qp.b.amax() < 1e-16 && qp.f.amax() < 1e-16 && qp.k < 1e-30);
    let qp = build_qp(&dist(&[1.0, 0.0, 0.0])).unwrap();
    let want = DVector::from_vec(vec![-1.0 / 6.0, 1.0 / 12.0, 1.0 / 12.0]);
    assert!((&qp.b - want).amax() < 1e-16);
    assert!((qp.objective(&DVector::zeros(3)) - qp.b.norm_squared()).abs() < 1e-16);
}

#[test]
fn qp_solutions_for_the_three_cases() {
    let uniform = solve_box_qp(&build_qp(&ProbabilityVector::uniform(3)).unwrap()).unwrap();
    assert_eq!(uniform.class, QpClass::InteriorZero);
    assert!(uniform.u0.amax() < 1e-10 && uniform.eta_star <= 1e-12);

    let pair = solve_box_qp(&build_qp(&dist(&[0.0, 0.5, 0.5])).unwrap()).unwrap();
    let want = DVector::from_vec(vec![0.0, 1.0 / 6.0, -1.0 / 6.0]);
    assert_eq!(pair.class, QpClass::InteriorZero);
    assert!((&pair.u0 - want).amax() < 1e-8);

    let qp = build_qp(&dist(&[1.0, 0.0, 0.0])).unwrap();
    let vertex = solve_box_qp(&qp).unwrap();
    assert_eq!(vertex.class, QpClass::BoundaryPositive);
    assert!((vertex.eta_star - 1.0 / 24.0).abs() < 1e-10);
    assert!((vertex.eta_star - qp.objective(&vertex.u0)).abs() < 1e-10);
    assert!(qp.contains(&vertex.u0));
}

#[test]
fn oracle_examples() {
    let (_, eta) = qp_oracle_grid(&build_qp(&ProbabilityVector::uniform(3)).unwrap(), 0.05).unwrap();
    assert!(eta <= 1e-3);
    let qp = build_qp(&dist(&[1.0, 0.0, 0.0])).unwrap();
    let (_, eta) = qp_oracle_grid(&qp, 0.01).unwrap();
    assert!((eta - 1.0 / 24.0).abs() < 1e-4);
    let frozen = qp.clone().with_bounds(vec![(0.0, 0.0); 3]).unwrap();
    let (u, eta) = qp_oracle_grid(&frozen, 0.1).unwrap();
    assert_eq!(u, DVector::zeros(3));
    assert_eq!(eta, qp.b.norm_squared());
    assert!(matches!(qp_oracle_grid(&qp, 1e-4), Err(Error::GridTooLarge(_))));
}

#[test]
fn sweep_claim_and_case_boundary() {
    let rows = sweep(Exec::default(), 20).unwrap();
    assert_eq!(rows.len(), 231);
    for row in &rows {
        let qp = build_qp(&dist(&row.c)).unwrap();
        let zero = row.solution.eta_star <= 1e-8;
        assert_eq!(zero, exact_interior_solution(&qp).unwrap().is_some(), "{:?}", row.c);
        assert_eq!(zero, row.solution.class == QpClass::InteriorZero);
        let top = row.c.iter().cloned().fold(0.0, f64::max);
        if top < 2.0 / 3.0 - 0.05 {
            assert!(zero, "{:?}", row.c);
        }
        if top > 2.0 / 3.0 + 0.05 {
            assert!(!zero, "{:?}", row.c);
        }
    }
    let ray: Vec<f64> = (0..=10)
        .map(|k| {
            let m = 0.7 + 0.03 * k as f64;
            solve_box_qp(&build_qp(&dist(&[m, 0.5 * (1.0 - m), 0.5 * (1.0 - m)])).unwrap()).unwrap().eta_star
        })
        .collect();
    assert!(ray.windows(2).all(|w| w[1] > w[0]), "{ray:?}");
}

#[test]
fn sweep_agrees_with_the_oracle() {
    for row in sweep(Exec::default(), 20).unwrap() {
        let qp = build_qp(&dist(&row.c)).unwrap();
        let (_, oracle) = qp_oracle_grid(&qp, 0.05).unwrap();
        assert!((row.solution.eta_star - oracle).abs() < 1e-6, "{:?}", row.c);
    }
}

#[test]
fn closed_form_limits() {
    assert_eq!(singular_closed_form(3, 0.0).unwrap(), (1.0, 0.0));
    let (pn, pi) = singular_closed_form(5, 50.0).unwrap();
    assert!((pn - 0.5).abs() < 1e-15 && (pi - 0.1).abs() < 1e-15);
    assert!(singular_closed_form(1, 1.0).is_err());
}

#[test]
fn four_way_singular_arc() {
    let problem = SingularProblem::new(4).unwrap();
    let p0 = ProbabilityVector::point(5, 4).unwrap();
    let c = ProbabilityVector::uniform(6);
    let diag = state_costate_integrate(&problem, &c, |_| vec![0.0; 6], 20.0, &p0, &DVector::zeros(5), 1e-3).unwrap();
    let start = diag.grid.partition_point(|&t| t < 5.0);
    for (k, (t, p)) in diag.grid.iter().zip(&diag.p).enumerate() {
        let (pn, pi) = singular_closed_form(4, *t).unwrap();
        assert!((p[4] - pn).abs() < 1e-6);
        assert!((0..4).all(|i| (p[i] - pi).abs() < 1e-6));
        if k >= start {
            assert!(diag.hamiltonian[k].abs() < 1e-4);
            assert!(diag.switching[k].iter().all(|s| s.abs() < 1e-4));
        }
    }
}

#[test]
fn off_arc_controls_switch() {
    let problem = SingularProblem::new(3).unwrap();
    let p0 = ProbabilityVector::point(4, 3).unwrap();
    let c = ProbabilityVector::uniform(3);
    let diag =
        state_costate_integrate(&problem, &c, |_| vec![0.5, -0.5, 0.5], 20.0, &p0, &DVector::zeros(4), 1e-3).unwrap();
    let start = diag.grid.partition_point(|&t| t < 5.0);
    let s = diag.switching[start..].iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(s > 0.01, "max |sigma| = {s}");
}

#[test]
fn rank_one_update_matches_direct_solve() {
    let a = ring();
    let f = DVector::from_vec(vec![0.0, -1.0, 1.0]);
    let base = rank_one_steady(&a, &f, 1, 0.0).unwrap();
    assert!((base.p.as_vector() - steady_state(&a).unwrap().as_vector()).amax() < 1e-12);
    for u in [0.1, -1.0] {
        let out = rank_one_steady(&a, &f, 1, u).unwrap();
        let mut m = a.matrix().clone();
        m.column_mut(1).axpy(u, &f, 1.0);
        assert!((out.p.as_vector() - null_vector(&m)).amax() < 1e-8, "u = {u}");
        assert!((&m * out.p.as_vector()).amax() < 1e-8);
        assert!(!out.used_fallback);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn qp_objective_is_the_tracking_cost(c in arb_simplex(), u in proptest::collection::vec(-0.5..0.5f64, 3)) {
        let problem = SingularProblem::new(3).unwrap();
        let qp = build_qp(&c).unwrap();
        let uv = DVector::from_column_slice(&u);
        let p = steady_state(&problem.generator(&c, &u).unwrap()).unwrap();
        prop_assert!((p[3] - 0.5).abs() < 1e-12);
        prop_assert!((qp.quadratic_form(&uv) - problem.tracking_cost(p.as_vector())).abs() < 1e-9);
        prop_assert!((qp.quadratic_form(&uv) - qp.objective(&uv)).abs() < 1e-10);
        prop_assert!((&qp.h - qp.a.transpose() * &qp.a * 0.5).amax() < 1e-12);
    }
}
