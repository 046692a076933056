//! Invariants of the estimators, learners, and simulation design.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use swlate_core::bounds::{bounds_report, Scaling};
use swlate_core::crossfit::{cross_fit, ClipBounds, CrossfitPlan, NuisanceLearners, NuisancePredictions};
use swlate_core::dataset::{make_folds_n, pool_for_weights, FoldAssignment, Study, StudySample};
use swlate_core::estimator::{gamma_plugin, swlate};
use swlate_core::learners::{fit, LearnerSpec, ModelParams, TargetType};
use swlate_core::math::{mean, normal_quantile};
use swlate_core::matrix::Matrix;
use swlate_core::simulation::{calibrate, ground_truth_late, DgmSpec, Linearity, COMPLIER};

/// Two-covariate sample with a logistic instrument and imperfect compliance.
fn sample(n: usize, seed: u64, label: Study, perfect: bool) -> StudySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap();
    let z: Vec<u8> = (0..n).map(|i| if i < 2 { i as u8 } else { u8::from(rng.random::<f64>() < 0.5) }).collect();
    let d: Vec<u8> = z.iter().map(|&z| if perfect || rng.random::<f64>() < 0.7 { z } else { 1 - z }).collect();
    let y: Vec<f64> = (0..n).map(|i| 0.3 * f64::from(d[i]) + 0.4 * x.get(i, 0) + 0.3 * rng.random::<f64>()).collect();
    StudySample::unnamed(x, z, d, y, label).unwrap()
}

fn random_preds(n: usize, k: usize, seed: u64) -> NuisancePredictions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect() };
    let (mu1, mu0, m1, m0) = (draw(0.0, 1.0), draw(-0.5, 0.5), draw(0.6, 0.95), draw(0.0, 0.3));
    let (e, eta) = (draw(0.05, 0.95), draw(0.05, 0.95));
    let folds = FoldAssignment::from_labels((0..n).map(|i| i % k).collect(), k).unwrap();
    NuisancePredictions::from_raw(mu1, mu0, m1, m0, e, eta, folds, ClipBounds::default(), ClipBounds::default()).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fold_sizes_differ_by_at_most_one(n in 2usize..500, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let f = make_folds_n(n, k, seed).unwrap();
        let sizes = f.sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(make_folds_n(n, k, seed).unwrap(), f);
    }

    #[test]
    fn clipped_weights_follow_eta(seed in any::<u64>(), n in 10usize..80) {
        let p = random_preds(n, 3, seed);
        for i in 0..n {
            prop_assert!((0.01..=0.99).contains(&p.eta[i]) && (0.01..=0.99).contains(&p.e[i]));
            prop_assert_eq!(p.w[i], (1.0 - p.eta[i]) / p.eta[i]);
        }
    }

    #[test]
    fn point_is_ratio_and_centered_influence_averages_to_zero(seed in any::<u64>(), n in 20usize..120, weighted in any::<bool>()) {
        let b = sample(n, seed, Study::B, false);
        let p = random_preds(n, 4, seed ^ 1);
        let r = swlate(&p, &b, 0.05, weighted).unwrap();
        prop_assert!(rel_close(r.point, r.numerator / r.denominator, 1e-14));
        let g = gamma_plugin(&p, &b, r.point, weighted).unwrap();
        prop_assert!(mean(&g).abs() < 1e-8, "mean influence {}", mean(&g));
    }

    #[test]
    fn rescaling_weights_changes_nothing(seed in any::<u64>(), n in 20usize..120, c in 0.01f64..100.0) {
        let b = sample(n, seed, Study::B, false);
        let p = random_preds(n, 4, seed ^ 2);
        let mut q = p.clone();
        q.w.iter_mut().for_each(|w| *w *= c);
        let (r, s) = (swlate(&p, &b, 0.05, true).unwrap(), swlate(&q, &b, 0.05, true).unwrap());
        prop_assert!(rel_close(r.point, s.point, 1e-12));
        prop_assert!(rel_close(r.se, s.se, 1e-12));
    }

    #[test]
    fn identical_weights_reproduce_unweighted_exactly(seed in any::<u64>(), n in 20usize..120, eta in 0.02f64..0.98) {
        let b = sample(n, seed, Study::B, false);
        let mut p = random_preds(n, 4, seed ^ 3);
        p = NuisancePredictions::from_raw(p.mu1, p.mu0, p.m1, p.m0, p.e_raw, vec![eta; n], p.folds, p.clip_e, p.clip_eta).unwrap();
        let (w, u) = (swlate(&p, &b, 0.05, true).unwrap(), swlate(&p, &b, 0.05, false).unwrap());
        prop_assert_eq!(w.point.to_bits(), u.point.to_bits());
        prop_assert_eq!(w.se.to_bits(), u.se.to_bits());
    }

    #[test]
    fn pooling_keeps_rows_in_order(n_a in 1usize..40, n_b in 1usize..40, seed in any::<u64>()) {
        let a = sample(n_a.max(2), seed, Study::A, false);
        let b = sample(n_b.max(2), seed ^ 4, Study::B, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<usize> = (0..1 + rng.random_range(0..b.len())).map(|_| rng.random_range(0..b.len())).collect();
        let pool = pool_for_weights(&a, &b, &rows).unwrap();
        prop_assert_eq!(pool.covariates.rows(), a.len() + rows.len());
        for i in 0..a.len() {
            prop_assert_eq!(pool.covariates.row(i), a.covariates().row(i));
            prop_assert_eq!(pool.membership[i], 0);
        }
        for (j, &r) in rows.iter().enumerate() {
            prop_assert_eq!(pool.covariates.row(a.len() + j), b.covariates().row(r));
            prop_assert_eq!(pool.membership[a.len() + j], 1);
        }
    }

    #[test]
    fn normal_quantile_matches_reference(p in 1e-10f64..(1.0 - 1e-10)) {
        let reference = Normal::standard().inverse_cdf(p);
        prop_assert!((normal_quantile(p) - reference).abs() < 1e-9 * (1.0 + reference.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stack_weights_lie_on_simplex_and_beat_members(seed in any::<u64>(), logistic in any::<bool>()) {
        let s = sample(120, seed, Study::B, false);
        let (target, y): (TargetType, Vec<f64>) = if logistic {
            (TargetType::Probability, s.treatment().iter().map(|&d| f64::from(d)).collect())
        } else {
            (TargetType::Regression, s.outcome().to_vec())
        };
        let glm = if logistic { LearnerSpec::Logistic } else { LearnerSpec::Linear };
        let spec = LearnerSpec::Stack {
            members: vec![LearnerSpec::Intercept, glm, LearnerSpec::TreeEnsemble { trees: 10, max_depth: 3, min_leaf: 5 }],
            folds: 3,
        };
        let model = fit(&spec, s.covariates(), &y, target, seed).unwrap();
        let ModelParams::Stack(st) = &model.params else { panic!("not a stack") };
        prop_assert!(st.weights.iter().all(|&w| w >= 0.0));
        prop_assert!((st.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let best = st.member_cv_loss.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(st.cv_loss <= best + 1e-10, "stack {} vs best member {}", st.cv_loss, best);
    }

    #[test]
    fn ridge_penalty_path_is_continuous(seed in any::<u64>(), lambda in 0.0f64..10.0) {
        let s = sample(60, seed, Study::B, false);
        let at = |l: f64| fit(&LearnerSpec::RidgeLinear { lambda: l }, s.covariates(), s.outcome(), TargetType::Regression, 0).unwrap();
        let (m, n) = (at(lambda), at(lambda + 1e-9));
        for r in s.covariates().iter_rows() {
            prop_assert!((m.predict_row(r) - n.predict_row(r)).abs() < 1e-6);
        }
    }

    #[test]
    fn bounds_collapse_under_perfect_compliance(seed in any::<u64>(), n in 60usize..160) {
        let b = sample(n, seed, Study::B, true);
        let plan = CrossfitPlan::new(3, NuisanceLearners::glm(), seed);
        let r = bounds_report(None, &b, &plan, 0.05, false, Scaling::Auto).unwrap();
        prop_assert!(r.width().abs() < 1e-8, "width {}", r.width());
    }

    #[test]
    fn own_outcome_never_moves_own_prediction(seed in any::<u64>(), unit in 0usize..80, bump in -50.0f64..50.0, forest in any::<bool>()) {
        let a = sample(60, seed ^ 5, Study::A, false);
        let b = sample(80, seed, Study::B, false);
        let learners = if forest {
            NuisanceLearners::uniform(LearnerSpec::TreeEnsemble { trees: 5, max_depth: 3, min_leaf: 3 })
        } else {
            NuisanceLearners::glm()
        };
        let plan = CrossfitPlan::new(4, learners, seed);
        let base = cross_fit(Some(&a), &b, &plan).unwrap();
        let mut y = b.outcome().to_vec();
        y[unit] += bump;
        let moved = cross_fit(Some(&a), &b.with_outcome(y).unwrap(), &plan).unwrap();
        prop_assert_eq!(base.mu1[unit].to_bits(), moved.mu1[unit].to_bits());
        prop_assert_eq!(base.mu0[unit].to_bits(), moved.mu0[unit].to_bits());
        prop_assert_eq!(base.e[unit].to_bits(), moved.e[unit].to_bits());
        prop_assert_eq!(base.eta[unit].to_bits(), moved.eta[unit].to_bits());
    }
}

#[test]
fn balanced_intercept_sampling_model_is_unweighted() {
    let a = sample(300, 1, Study::A, false);
    let b = sample(400, 2, Study::B, false);
    let mut learners = NuisanceLearners::glm();
    learners.sampling = LearnerSpec::Intercept;
    let plan = CrossfitPlan::new(4, learners, 9);
    let p = cross_fit(Some(&a), &b, &plan).unwrap();
    assert!(p.w.windows(2).all(|w| w[0] == w[1]));
    let (w, u) = (swlate(&p, &b, 0.05, true).unwrap(), swlate(&p, &b, 0.05, false).unwrap());
    assert!((w.point - u.point).abs() < 1e-12 && (w.se - u.se).abs() < 1e-12);
}

#[test]
fn cross_fitting_is_reproducible() {
    let a = sample(150, 3, Study::A, false);
    let b = sample(200, 4, Study::B, false);
    let plan = CrossfitPlan::new(5, NuisanceLearners::ensemble(), 77);
    let (p, q) = (cross_fit(Some(&a), &b, &plan).unwrap(), cross_fit(Some(&a), &b, &plan).unwrap());
    assert_eq!(p, q);
    let other = cross_fit(Some(&a), &b, &CrossfitPlan::new(5, NuisanceLearners::ensemble(), 78)).unwrap();
    assert_ne!(p.mu1, other.mu1);
}

#[test]
fn calibrated_complier_share_hits_target() {
    for s in [0.2, 0.5, 0.8] {
        let mut spec = DgmSpec::new(Linearity::Linear, s);
        spec.n = 100_000;
        let dgm = calibrate(&spec).unwrap();
        let cohorts = dgm.gen_cohorts_seeded(11).unwrap();
        let share = cohorts.b.strata.iter().filter(|&&k| k == COMPLIER).count() as f64 / spec.n as f64;
        assert!((share - s).abs() < 0.01, "strength {s}: complier share {share}");
    }
}

#[test]
fn no_effect_modifiers_means_truth_is_main_effect() {
    let mut spec = DgmSpec::new(Linearity::Linear, 0.5);
    spec.n = 500;
    spec.beta[1..7].iter_mut().for_each(|b| *b = 0.0);
    let truth = ground_truth_late(&calibrate(&spec).unwrap(), 20).unwrap();
    assert_eq!(truth.late_a, spec.beta[0]);
    assert_eq!(truth.late_b, spec.beta[0]);
}
