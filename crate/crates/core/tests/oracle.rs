//! Estimator and bound outputs against a direct, term-by-term evaluation of the
//! influence-function formulas on small fixed datasets.

mod common;

use common::{case, close, oracle_bound, oracle_late};
use swlate_core::bounds::{swate_bound, v_variables, BoundNuisance};
use swlate_core::estimator::swlate;

#[test]
fn late_matches_direct_summation() {
    for c in 0..10 {
        let case = case(c);
        for weighted in [true, false] {
            for alpha in [0.05, 0.1] {
                let r = swlate(&case.preds, &case.b, alpha, weighted).unwrap();
                let o = oracle_late(&case, weighted);
                let q = if alpha == 0.05 { 1.959963984540054 } else { 1.6448536269514722 };
                assert!(close(r.point, o.point), "case {c} weighted={weighted}: point {} vs {}", r.point, o.point);
                assert!(close(r.se, o.se), "case {c} weighted={weighted}: se {} vs {}", r.se, o.se);
                assert!(close(r.ci_lower, o.point - q * o.se), "case {c}: ci lower");
                assert!(close(r.ci_upper, o.point + q * o.se), "case {c}: ci upper");
                assert_eq!(r.per_fold_points.len(), o.per_fold.len());
                for (a, b) in r.per_fold_points.iter().zip(&o.per_fold) {
                    assert!(close(*a, *b), "case {c}: fold point {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn bounds_match_direct_summation() {
    for c in 0..10 {
        let case = case(c);
        let v = v_variables(&case.b).unwrap();
        // V targets built directly from (Y, D)
        for i in 0..case.b.len() {
            let (y, d) = (case.b.outcome()[i], case.b.treatment()[i] as f64);
            assert!(close(v.upper1[i], y * d + 1.0 - d));
            assert!(close(v.lower1[i], y * d));
            assert!(close(v.upper0[i], y * (1.0 - d)));
            assert!(close(v.lower0[i], y * (1.0 - d) + d));
        }
        let sides = [
            (v.lower1.clone(), v.lower0.clone(), &case.v1[0], &case.v0[0]),
            (v.upper1.clone(), v.upper0.clone(), &case.v1[1], &case.v0[1]),
        ];
        for (t1, t0, v1, v0) in sides {
            let nuis = BoundNuisance { target1: t1.clone(), target0: t0.clone(), v1: v1.clone(), v0: v0.clone() };
            for weighted in [true, false] {
                let r = swate_bound(&case.preds, &case.b, &nuis, 0.05, weighted).unwrap();
                let (point, se) = oracle_bound(&case, &t1, &t0, v1, v0, weighted);
                assert!(close(r.point, point), "case {c}: bound {} vs {point}", r.point);
                assert!(close(r.se, se), "case {c}: bound se {} vs {se}", r.se);
                assert!(close(r.ci_lower, point - 1.959963984540054 * se));
                assert!(close(r.ci_upper, point + 1.959963984540054 * se));
            }
        }
    }
}

#[test]
fn oracle_cases_cover_clipping_and_sizes() {
    let mut clipped = 0;
    let mut sizes = Vec::new();
    for c in 0..10 {
        let case = case(c);
        sizes.push(case.b.len());
        clipped += case.preds.e_raw.iter().filter(|&&p| !(0.01..=0.99).contains(&p)).count();
    }
    assert!(clipped > 0, "no propensity exercised the clip");
    assert!(sizes.iter().all(|&n| (8..=50).contains(&n)));
}
