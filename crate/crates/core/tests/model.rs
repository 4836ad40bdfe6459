use cascade_mdp::ctmc::{marginals, propagate, propagate_constant};
use cascade_mdp::model::{
    assemble_generator, check_admissible, diagonalizable_sufficient, lift_to_joint, triangular_form, Diagonalizability,
};
use cascade_mdp::{zoo, CascadeModel, Generator, Policy, ProbabilityVector};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn cat() -> CascadeModel {
    zoo::by_name("cats-dilemma").unwrap().model
}

fn bond() -> CascadeModel {
    zoo::by_name("bond-stock").unwrap().model
}

fn arb_distribution(n: usize) -> impl Strategy<Value = ProbabilityVector> {
    proptest::collection::vec(0.01..1.0f64, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        ProbabilityVector::from_slice(&w.iter().map(|v| v / s).collect::<Vec<_>>()).unwrap()
    })
}

#[test]
fn cat_plus_half_sends_unfed_to_fish() {
    let g = assemble_generator(&cat(), 0, &[0.5]).unwrap();
    assert!((g.matrix()[(1, 3)] - 1.0).abs() < 1e-15);
    assert_eq!(g.matrix()[(2, 3)], 0.0);
}

#[test]
fn zero_control_gives_base_generator() {
    for m in [cat(), bond()] {
        for z in 0..m.r() {
            let g = assemble_generator(&m, z, &[0.0]).unwrap();
            assert_eq!(g.matrix(), &(m.a0() + m.a(z)));
        }
    }
}

#[test]
fn bond_stock_edge_rates_under_low_price() {
    // state 1 holds (-1, -1), state 0 holds (0, 2)
    let g = assemble_generator(&bond(), 1, &[-0.5]).unwrap();
    assert!((g.matrix()[(0, 1)] - 1.0).abs() < 1e-15);
    assert_eq!(g.matrix()[(1, 0)], 0.0);
}

#[test]
fn out_of_box_control_is_rejected() {
    assert!(assemble_generator(&cat(), 0, &[0.6]).is_err());
    assert!(assemble_generator(&cat(), 3, &[0.0]).is_err());
}

#[test]
fn cat_admissibility_depends_on_the_box() {
    assert!(check_admissible(&cat()).is_admissible());
    let wide = cat().with_bounds(vec![(-1.0, 1.0)]).unwrap();
    let report = check_admissible(&wide);
    let v = report.first().expect("wide box must fail");
    assert_eq!(v.column, 3);
    assert!(v.vertex.is_some());
}

#[test]
fn zero_b_model_is_admissible_for_any_box() {
    let c = Generator::new(DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap();
    let a0 = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 2.0, -1.0]);
    let zero = DMatrix::zeros(2, 2);
    let m = CascadeModel::new(c, a0, vec![zero.clone(); 2], vec![vec![zero; 2]], vec![(-100.0, 7.0)]).unwrap();
    assert!(check_admissible(&m).is_admissible());
    let t = triangular_form(&m);
    assert!(t.valid && t.column.is_none());
}

#[test]
fn single_driver_lift_is_the_assembled_generator() {
    let zero = DMatrix::zeros(2, 2);
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 1.0, -0.5]);
    let b = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, 0.0]);
    let m = CascadeModel::new(Generator::zeros(1), zero, vec![a], vec![vec![b]], vec![(-0.5, 0.5)]).unwrap();
    let joint = lift_to_joint(&m, &Policy::Constant(vec![0.25]), 0.0).unwrap();
    assert_eq!(joint.matrix(), assemble_generator(&m, 0, &[0.25]).unwrap().matrix());
}

#[test]
fn frozen_driver_lift_is_block_diagonal() {
    let m = cat().with_driver(Generator::zeros(3)).unwrap();
    let joint = lift_to_joint(&m, &Policy::Constant(vec![0.3]), 0.0).unwrap();
    for z in 0..3 {
        for w in 0..3 {
            let block = joint.matrix().view((4 * z, 4 * w), (4, 4)).into_owned();
            if z == w {
                assert_eq!(block, assemble_generator(&m, z, &[0.3]).unwrap().into_matrix());
            } else {
                assert_eq!(block.amax(), 0.0);
            }
        }
    }
}

#[test]
fn cat_joint_stationary_marginal() {
    let joint = lift_to_joint(&cat(), &Policy::Constant(vec![0.0]), 0.0).unwrap();
    // null vector of the 12-state generator by SVD
    let svd = joint.matrix().clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let k = svd.singular_values.imin();
    let mut v: DVector<f64> = vt.row(k).transpose();
    v /= v.sum();
    let (_, px) = marginals(&ProbabilityVector::new(v).unwrap(), 3, 4).unwrap();
    for (i, want) in [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5].iter().enumerate() {
        assert!((px[i] - want).abs() < 1e-10);
    }
}

#[test]
fn triangular_form_finds_the_unfed_column() {
    let t = triangular_form(&cat());
    assert!(t.valid);
    assert_eq!(t.column, Some(3));
    assert!(!triangular_form(&bond()).valid);
}

#[test]
fn diagonalizability_conditions() {
    let ic = zoo::by_name("invest-consume").unwrap().model;
    assert_eq!(diagonalizable_sufficient(&ic, false), Diagonalizability::HoldsByC1);
    assert_eq!(diagonalizable_sufficient(&ic, true), Diagonalizability::Unknown);
    assert_eq!(diagonalizable_sufficient(&cat(), false), Diagonalizability::Unknown);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assembly_is_affine_in_u(u in -0.5..0.5f64, v in -0.5..0.5f64, a in 0.0..1.0f64, z in 0usize..3) {
        let m = cat();
        let mix = assemble_generator(&m, z, &[a * u + (1.0 - a) * v]).unwrap().into_matrix();
        let sum = assemble_generator(&m, z, &[u]).unwrap().into_matrix() * a
            + assemble_generator(&m, z, &[v]).unwrap().into_matrix() * (1.0 - a);
        prop_assert!((mix - sum).amax() < 1e-14);
    }

    #[test]
    fn interior_controls_are_admissible(u in -0.5..0.5f64, d in -0.5..0.5f64, z in 0usize..4) {
        let m = zoo::by_name("two-stock").unwrap().model;
        prop_assert!(assemble_generator(&m, z, &[u, d]).is_ok());
    }

    #[test]
    fn driver_is_autonomous(u in proptest::collection::vec(-0.5..0.5f64, 3), p0 in arb_distribution(12), t in 0.1..3.0f64) {
        let m = cat();
        let policy = Policy::closed_form(move |_, z, _| vec![u[z]]);
        let joint = lift_to_joint(&m, &policy, 0.0).unwrap();
        let p = propagate_constant(&joint, &p0, 0.0, t, 1e-2).unwrap();
        let (pz, _) = marginals(&p, 3, 4).unwrap();
        let (pz0, _) = marginals(&p0, 3, 4).unwrap();
        let want = propagate_constant(m.c(), &pz0, 0.0, t, 1e-2).unwrap();
        prop_assert!((pz.as_vector() - want.as_vector()).amax() < 1e-8);
    }

    #[test]
    fn triangular_marginal_closes(
        u in proptest::collection::vec(-0.5..0.5f64, 3),
        pz0 in arb_distribution(3),
        px0 in arb_distribution(4),
    ) {
        let m = cat();
        let tri = triangular_form(&m);
        let uz: Vec<Vec<f64>> = u.iter().map(|&v| vec![v]).collect();
        let policy = Policy::closed_form(move |_, z, _| vec![u[z]]);
        let joint = lift_to_joint(&m, &policy, 0.0).unwrap();
        let p0 = ProbabilityVector::new(pz0.as_vector().kronecker(px0.as_vector())).unwrap();
        // uniform driver with exit rate 1 relaxes at rate 3/2
        let pz = pz0.clone();
        let x_gen = move |t: f64| {
            let ct: Vec<f64> = pz.as_slice().iter().map(|c| 1.0 / 3.0 + (c - 1.0 / 3.0) * (-1.5 * t).exp()).collect();
            Generator::with_tolerance(tri.marginal_generator(&ct, &uz), 1e-10).unwrap()
        };
        for t in [1.0, 5.0] {
            let (_, px) = marginals(&propagate_constant(&joint, &p0, 0.0, t, 1e-3).unwrap(), 3, 4).unwrap();
            let ode = propagate(&x_gen, &px0, 0.0, t, 1e-2).unwrap();
            prop_assert!((px.as_vector() - ode.as_vector()).amax() < 1e-6);
        }
    }
}
