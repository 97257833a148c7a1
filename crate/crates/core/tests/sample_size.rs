use htenmr::design::{epv, min_sample_size, nagelkerke_to_cox_snell};
use proptest::prelude::*;

const PHI: f64 = 0.371;

fn r2() -> f64 {
    nagelkerke_to_cox_snell(0.15, PHI).unwrap()
}

#[test]
fn published_anchors() {
    let r2 = r2();
    assert!((r2 - 0.110).abs() < 0.001, "{r2}");
    let n14 = min_sample_size(14, PHI, r2, 0.9, 0.05).unwrap().n_min.unwrap();
    let n45 = min_sample_size(45, PHI, r2, 0.9, 0.05).unwrap().n_min.unwrap();
    assert!((n14 as i64 - 1076).abs() <= 5, "{n14}");
    assert!((n45 as i64 - 3456).abs() <= 10, "{n45}");
    assert!((epv::<f64>(742, 45).unwrap() - 16.5).abs() < 0.05);
    assert!((epv::<f64>(742, 14).unwrap() - 53.0).abs() < 0.5);
    assert_eq!(epv::<f64>(0, 3).unwrap(), 0.0);
    assert!(epv::<f64>(5, 0).is_err());
}

#[test]
fn criterion_one_matches_closed_form() {
    let r2 = r2();
    let rep = min_sample_size(14, PHI, r2, 0.9, 0.05).unwrap();
    let oracle = 14.0 / ((0.9 - 1.0) * (1.0 - r2 / 0.9).ln());
    assert!((rep.n_criterion_1 - oracle).abs() < 1e-9 * oracle);
    let n3 = (1.96f64 / 0.05).powi(2) * PHI * (1.0 - PHI);
    assert!((rep.n_criterion_3 - n3).abs() < 1e-9);
}

proptest! {
    #[test]
    fn n_min_monotone(p in 1u64..80, r2 in 0.02f64..0.3, bump in 0.001f64..0.2) {
        let base = min_sample_size(p, PHI, r2, 0.9, 0.05).unwrap().n_min.unwrap();
        let more_p = min_sample_size(p + 1, PHI, r2, 0.9, 0.05).unwrap().n_min.unwrap();
        prop_assert!(more_p >= base);
        let higher = (r2 + bump).min(0.35);
        let at_higher = min_sample_size(p, PHI, higher, 0.9, 0.05).unwrap().n_min.unwrap();
        prop_assert!(at_higher <= base);
    }

    #[test]
    fn criterion_three_independent_of_p(p in 1u64..200, q in 1u64..200, phi in 0.05f64..0.95) {
        let r2 = nagelkerke_to_cox_snell(0.15, phi).unwrap().min(0.5);
        let a = min_sample_size(p, phi, r2, 0.9, 0.05).unwrap();
        let b = min_sample_size(q, phi, r2, 0.9, 0.05).unwrap();
        prop_assert_eq!(a.n_criterion_3, b.n_criterion_3);
    }
}
