use nematic_core::linalg::{cross, normalize};
use nematic_core::potentials::{f_bulk, g_mag};
use nematic_core::profile1d::{i_closed_form, solve_bvp, ProfileQuery};
use nematic_core::tensor::{compose, decompose, dist_to_n, retract_to_n, DecompFlag, DecompParams};
use nematic_core::{MaterialParams, QTensor, Vec3};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.0f64..1.0).prop_filter_map("degenerate", normalize)
}

fn frame() -> impl Strategy<Value = (Vec3, Vec3)> {
    (unit(), unit()).prop_filter_map("parallel", |(n, v)| normalize(cross(n, v)).filter(|_| cross(n, v).iter().map(|x| x * x).sum::<f64>() > 1e-4).map(|m| (n, m)))
}

fn traceless() -> impl Strategy<Value = QTensor> {
    prop::array::uniform5(-2.0f64..2.0).prop_map(QTensor::from_array)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decompose_inverts_compose(s in 0.1f64..3.0, r in 0.0f64..0.9, (n, m) in frame()) {
        let q = compose(&DecompParams { s, r, n, m }).unwrap();
        let d = decompose(&q);
        prop_assert_eq!(d.flag, DecompFlag::Regular);
        prop_assert!((d.params.s - s).abs() < 1e-9 * s.max(1.0));
        prop_assert!((d.params.r - r).abs() < 1e-8);
        let back = compose(&d.params).unwrap();
        prop_assert!((back - q).norm() < 1e-9 * q.norm().max(1.0));
    }

    #[test]
    fn bulk_potential_is_nonnegative(q in traceless()) {
        let m = MaterialParams::default();
        prop_assert!(f_bulk(&q, &m) >= -1e-12);
    }

    #[test]
    fn vacuum_manifold_is_zero_set(n in unit()) {
        let m = MaterialParams::default();
        prop_assert!(f_bulk(&m.vacuum(n), &m).abs() < 1e-12);
        prop_assert!(g_mag(&m.vacuum(n), &m) >= -1e-12);
    }

    #[test]
    fn retraction_lands_on_vacuum_and_is_idempotent(q in traceless()) {
        let m = MaterialParams::default();
        prop_assume!(decompose(&q).flag == DecompFlag::Regular);
        let p = retract_to_n(&q, m.s_star).unwrap();
        prop_assert!(dist_to_n(&p, m.s_star) < 1e-9);
        prop_assert!(f_bulk(&p, &m).abs() < 1e-10);
        let pp = retract_to_n(&p, m.s_star).unwrap();
        prop_assert!((pp - p).norm() < 1e-9);
        prop_assert!(dist_to_n(&q, m.s_star) <= (q - m.vacuum([0.0, 0.0, 1.0])).norm() + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn half_line_profile_matches_closed_form(theta in 0.2f64..2.9) {
        let m = MaterialParams::default();
        let sol = solve_bvp(&ProfileQuery::half_line(theta), 1024, &m).unwrap();
        let exact = i_closed_form(theta, 1.0, &m);
        prop_assert!((sol.value - exact).abs() < 1e-2 * exact, "{} vs {}", sol.value, exact);
        prop_assert!(sol.n3.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }
}
