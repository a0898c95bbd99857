//! Invariants checked over random inputs.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use scd_stability::ad::{eval, eval2, parse_expr};
use scd_stability::catalog::GSpec;
use scd_stability::subspace::Subspace;

use common::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-3.0..3.0f64, n).prop_map(DVector::from_vec)
}

/// Three subspaces of a common even-dimensional space.
fn subspace_triple() -> impl Strategy<Value = [Subspace; 3]> {
    (1usize..=4)
        .prop_flat_map(|half| {
            let d = 2 * half;
            let sub = (0..=d).prop_flat_map(move |k| matrix(d, k)).prop_map(|m| Subspace::from_columns(&m));
            (sub.clone(), sub.clone(), sub)
        })
        .prop_map(|(a, b, c)| [a, b, c])
}

/// A catalog function of dimension `m` with its `prox` parameters drawn at random.
fn catalog(m: usize) -> impl Strategy<Value = GSpec> {
    prop_oneof![
        prop::collection::vec(0.1..2.0f64, m).prop_map(|w| GSpec::l1(DVector::from_vec(w)).unwrap()),
        (vector(m), prop::collection::vec(0.0..2.0f64, m)).prop_map(|(lo, width)| {
            let hi = &lo + DVector::from_vec(width);
            GSpec::boxed(lo, hi).unwrap()
        }),
        (matrix(m, m), vector(m)).prop_map(move |(r, c)| {
            let q = r.transpose() * &r;
            GSpec::quadratic(q, c).unwrap()
        }),
        (matrix(m + 1, m), prop::collection::vec(0.0..2.0f64, m + 1))
            .prop_map(|(a, c)| GSpec::polyhedral(a, DVector::from_vec(c), vec![]).unwrap()),
    ]
}

fn catalog_with_points() -> impl Strategy<Value = (GSpec, DVector<f64>, DVector<f64>)> {
    (1usize..=3).prop_flat_map(|m| (catalog(m), vector(m), vector(m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dz_is_a_metric_preserved_by_adjoints([a, b, c] in subspace_triple()) {
        let ab = a.dz(&b).unwrap();
        let bc = b.dz(&c).unwrap();
        let ac = a.dz(&c).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - b.dz(&a).unwrap()).abs() <= 1e-14);
        prop_assert!(ac <= ab + bc + 1e-12);
        let adj = a.adjoint().unwrap().dz(&b.adjoint().unwrap()).unwrap();
        prop_assert!((adj - ab).abs() <= 1e-12, "{} vs {}", adj, ab);
        prop_assert_eq!(a.adjoint().unwrap().dim() + a.dim(), a.ambient_dim());
        prop_assert!(a.adjoint().unwrap().adjoint().unwrap().dz(&a).unwrap() <= 1e-12);
    }

    #[test]
    fn derivatives_match_central_differences(
        coef in prop::collection::vec(-2.0..2.0f64, 5),
        x in prop::collection::vec(-1.0..1.0f64, 2),
    ) {
        let src = format!(
            "{}*x1^2*x2 + {}*sin(x1 - x2) + {}*exp(0.5*x2) + {}*x1*x2^3 + {}*sqrt(x1^2 + 1)",
            lit(coef[0]), lit(coef[1]), lit(coef[2]), lit(coef[3]), lit(coef[4])
        );
        let e = parse_expr(&src, 2).unwrap();
        let x = DVector::from_vec(x);
        let (_, grad, hess) = eval2(&e, &x).unwrap();
        let h = 1e-5;
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (eval(&e, &xp).unwrap() - eval(&e, &xm).unwrap()) / (2.0 * h);
            prop_assert!((fd - grad[j]).abs() <= 1e-6 * (1.0 + grad[j].abs()));
            let (_, gp, _) = eval2(&e, &xp).unwrap();
            let (_, gm, _) = eval2(&e, &xm).unwrap();
            let col = (gp - gm) / (2.0 * h);
            prop_assert!((col - hess.column(j)).amax() <= 1e-5 * (1.0 + hess.amax()));
        }
        prop_assert!((&hess - hess.transpose()).amax() <= 1e-12 * (1.0 + hess.amax()));
    }

    #[test]
    fn prox_is_firmly_nonexpansive((g, z1, z2) in catalog_with_points()) {
        let p1 = g.prox(&z1).unwrap();
        let p2 = g.prox(&z2).unwrap();
        let dp = &p1 - &p2;
        let dz = &z1 - &z2;
        prop_assert!(dp.norm_squared() <= dp.dot(&dz) + 1e-8 * (1.0 + dz.norm_squared()));
        // y* = z - prox(z) is a subgradient at prox(z)
        prop_assert!(g.in_subdifferential(&p1, &(&z1 - &p1), 1e-7));
    }

    #[test]
    fn sc_pairs_are_valid_and_self_adjoint((g, z, _) in catalog_with_points()) {
        let y = g.prox(&z).unwrap();
        let ystar = &z - &y;
        let m = y.len();
        let id = DMatrix::<f64>::identity(m, m);
        for pair in g.sc_derivative(&y, &ystar).unwrap() {
            let (p, w) = (pair.p(), pair.w());
            prop_assert!((p * p - p).amax() <= 1e-9);
            prop_assert!((p - p.transpose()).amax() <= 1e-12);
            prop_assert!((w - w.transpose()).amax() <= 1e-12);
            prop_assert!((w * (&id - p) - (&id - p)).amax() <= 1e-9);
            let l = pair.to_subspace();
            prop_assert_eq!(l.dim(), m);
            prop_assert!(l.adjoint().unwrap().dz(&l).unwrap() <= 1e-9);
            let b = pair.prox_jacobian();
            let eig = nalgebra::SymmetricEigen::new((&b + b.transpose()) * 0.5).eigenvalues;
            prop_assert!((&b - b.transpose()).amax() <= 1e-9);
            prop_assert!(eig.iter().all(|&l| (-1e-9..=1.0 + 1e-9).contains(&l)));
        }
    }
}
