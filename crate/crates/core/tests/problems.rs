//! Bundled problem files: they load, sit on the KKT graph, and produce the
//! verdicts worked out by hand for each of them.

mod common;

use nalgebra::{DMatrix, DVector};
use scd_stability::analyzer::{analyze, Verdict};

use common::*;

const Y: Verdict = Verdict::Yes;
const N: Verdict = Verdict::No;

/// (file, soqc, strong_vs, aubin, sll, tilt, full)
const EXPECTED: &[(&str, bool, bool, Verdict, Verdict, Verdict, Verdict)] = &[
    ("box_bounds.json", true, true, Y, Y, Y, Y),
    ("degenerate_multiplier.json", false, true, N, N, Verdict::NotComputed, N),
    ("l1_kink.json", true, true, Y, Y, Y, Y),
    ("negative_curvature.json", true, false, N, N, N, N),
    ("nonlinear_constraint.json", true, true, Y, Y, Y, Y),
    ("quadratic_convex.json", true, true, Y, Y, Y, Y),
    ("separable_mixed.json", true, true, Y, Y, Y, Y),
    ("strict_complementarity.json", true, true, Y, Y, Y, Y),
];

#[test]
fn every_bundled_file_is_listed() {
    let mut listed: Vec<&str> = EXPECTED.iter().map(|e| e.0).collect();
    listed.sort();
    assert_eq!(listed, bundled_names());
}

#[test]
fn reference_points_solve_the_unperturbed_system() {
    for name in bundled_names() {
        let inst = bundled(&name);
        let zero_a = DVector::zeros(inst.n());
        let zero_b = DVector::zeros(inst.m());
        let r = inst
            .kkt_residual(inst.xbar(), inst.ybar_star(), &zero_a, &zero_b)
            .unwrap()
            .norm();
        assert!(r <= 1e-12, "{name}: residual {r}");
    }
}

#[test]
fn verdicts_match_hand_analysis() {
    for &(name, soqc, strong, aubin, sll, tilt, full) in EXPECTED {
        let rep = analyze(&bundled(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(rep.soqc.holds, soqc, "{name}: soqc");
        assert_eq!(rep.strong_vs.holds, strong, "{name}: strong_vs");
        assert_eq!(rep.aubin, aubin, "{name}: aubin");
        assert_eq!(rep.sll, sll, "{name}: sll");
        assert_eq!(rep.tilt_stable, tilt, "{name}: tilt");
        assert_eq!(rep.full_stability, full, "{name}: full stability");
        // failures come with a witness
        if !soqc {
            assert!(rep.soqc.certificate.is_some(), "{name}: soqc certificate");
        }
        if !strong {
            assert!(rep.strong_vs.certificate.is_some(), "{name}: strong_vs certificate");
        }
    }
}

#[test]
fn quadratic_localization_matches_linear_solve() {
    // min 0.5 x'Hx - <a*, x> + 0.5 (x + b)'Q(x + b): the KKT system is
    // H x + y* = a*, y* = Q (x + b), so x = (H + Q)^{-1} (a* - Q b).
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
    let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
    let inv = (&h + &q).try_inverse().unwrap();
    let dx = {
        let mut m = DMatrix::zeros(2, 4);
        m.view_mut((0, 0), (2, 2)).copy_from(&inv);
        m.view_mut((0, 2), (2, 2)).copy_from(&(-&inv * &q));
        m
    };
    let mut da = DMatrix::zeros(2, 4);
    da.view_mut((0, 0), (2, 2)).copy_from(&DMatrix::identity(2, 2));
    let dy = da - &h * &dx;
    let mut expected = DMatrix::zeros(4, 4);
    expected.view_mut((0, 0), (2, 4)).copy_from(&dx);
    expected.view_mut((2, 0), (2, 4)).copy_from(&dy);

    let rep = analyze(&bundled("quadratic_convex.json")).unwrap();
    let jt = rep.jacobian_matrix().unwrap();
    assert!((jt - expected).amax() < 1e-12);
}
