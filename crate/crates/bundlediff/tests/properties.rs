use approx::assert_relative_eq;
use bundlediff::geometry::{geometry_report, Derivatives};
use bundlediff::group::{GroupElement, GroupKind, Irrep};
use bundlediff::harness;
use bundlediff::models::{make_model, ModelParams};
use proptest::prelude::*;

fn small_vec() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.2..1.2f64, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn su2_irreps_are_homomorphisms(a in small_vec(), b in small_vec(), two_j in 1..4i32) {
        let ir = Irrep::su2(two_j);
        let ab = GroupKind::Su2.compose(&GroupElement::new(a.clone()), &GroupElement::new(b.clone())).unwrap();
        let lhs = ir.matrix(&a).mul(&ir.matrix(&b));
        let rhs = ir.matrix(&ab.params);
        for i in 0..ir.dim {
            for j in 0..ir.dim {
                prop_assert!((lhs.a[i][j] - rhs.a[i][j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn u1_inverse_composes_to_identity(x in -3.0..3.0f64) {
        let g = GroupElement::new(vec![x]);
        let gi = GroupKind::U1.inverse(&g).unwrap();
        let e = GroupKind::U1.compose(&g, &gi).unwrap();
        prop_assert!(e.params[0].abs() < 1e-15);
    }

    #[test]
    fn hopf_scalars_are_constant(radius in 0.5..3.0f64, tilt in -0.4..0.4f64, seed in 0..1000u64) {
        let p = ModelParams { radius, tilt, ..ModelParams::default() };
        let m = make_model("hopf", &p, 0.5).unwrap();
        let r2 = radius * radius;
        for pt in harness::sample_points(&m, 5, seed, 1) {
            let s = geometry_report(&m, &pt, Derivatives::Analytic).unwrap().scalars;
            assert_relative_eq!(s.r_p, -6.0 / r2, max_relative = 1e-10);
            assert_relative_eq!(s.hr, -8.0 / r2, max_relative = 1e-10);
            assert_relative_eq!(s.f2, 8.0 / r2, max_relative = 1e-10);
            prop_assert!(s.jtilde.abs() < 1e-9 / r2);
        }
    }

    #[test]
    fn fd_and_analytic_reports_agree(tilt in -0.4..0.4f64, seed in 0..1000u64) {
        let p = ModelParams { tilt, ..ModelParams::default() };
        let m = make_model("warped", &p, 0.5).unwrap();
        for pt in harness::sample_points(&m, 3, seed, 2) {
            let a = geometry_report(&m, &pt, Derivatives::Analytic).unwrap();
            let f = geometry_report(&m, &pt, Derivatives::Fd).unwrap();
            for (x, y) in a.scalars.as_array().iter().zip(f.scalars.as_array()) {
                assert_relative_eq!(*x, y, epsilon = 1e-5, max_relative = 1e-5);
            }
        }
    }
}

#[test]
fn flat_bundle_has_trivial_geometry() {
    let m = make_model("flat", &ModelParams::default(), 0.5).unwrap();
    for pt in harness::sample_points(&m, 20, 3, 0) {
        let r = geometry_report(&m, &pt, Derivatives::Analytic).unwrap();
        for x in r.scalars.as_array() {
            assert_relative_eq!(x, 0.0, epsilon = 1e-14);
        }
        assert_relative_eq!(r.det_gamma, 1.0, epsilon = 1e-14);
    }
}
