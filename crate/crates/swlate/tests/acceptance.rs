//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Failing criteria are reported but do not fail the process unless
//! `SWLATE_ACCEPTANCE_STRICT=1` is set.

#[path = "../../core/tests/common/mod.rs"]
#[allow(dead_code)]
mod oracle;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;
use swlate_core::bounds::{swate_bound, v_variables, BoundNuisance, Scaling};
use swlate_core::crossfit::{cross_fit, CrossfitPlan, NuisanceLearners, NuisancePredictions};
use swlate_core::estimator::swlate;
use swlate_core::learners::LearnerSpec;
use swlate_core::simulation::{
    calibrate, ground_truth_late, run_bounds_replication, run_late_replication, summarize_bounds, summarize_late, Analysis,
    BoundsRecord, BoundsSummary, CalibratedDgm, DgmSpec, GroundTruth, LateRecord, Linearity, ReplicationSummary,
    SimulationConfig,
};

const TRUTH_DRAWS: usize = 2000;
/// Stated ground truth for the linear, moderate-compliance scenario.
const LINEAR_MODERATE_TRUTH: f64 = 1.404;

struct Verdict {
    id: u8,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn dgm(linearity: Linearity, strength: f64, n: usize, seed: u64) -> CalibratedDgm {
    let mut spec = DgmSpec::new(linearity, strength);
    spec.n = n;
    spec.seed = seed;
    calibrate(&spec).expect("calibration")
}

fn config(learners: NuisanceLearners, analysis: Analysis) -> SimulationConfig {
    SimulationConfig { plan: CrossfitPlan::new(4, learners, 0), alpha: 0.05, analysis, scaling: Scaling::Raw }
}

fn late_study(label: &str, dgm: &CalibratedDgm, learners: NuisanceLearners, reps: usize) -> (GroundTruth, Vec<LateRecord>) {
    let t = Instant::now();
    let truth = ground_truth_late(dgm, TRUTH_DRAWS).expect("ground truth");
    let cfg = config(learners, Analysis::Late);
    let recs: Vec<LateRecord> = (0..reps).into_par_iter().map(|r| run_late_replication(dgm, &cfg, r)).collect();
    eprintln!("  [{label}: {reps} reps in {:.0?}]", t.elapsed());
    (truth, recs)
}

fn bounds_study(label: &str, dgm: &CalibratedDgm, learners: NuisanceLearners, reps: usize) -> Vec<BoundsRecord> {
    let t = Instant::now();
    let cfg = config(learners, Analysis::Bounds);
    let recs: Vec<BoundsRecord> = (0..reps).into_par_iter().map(|r| run_bounds_replication(dgm, &cfg, r)).collect();
    eprintln!("  [{label}: {reps} reps in {:.0?}]", t.elapsed());
    recs
}

fn late_line(s: &ReplicationSummary) -> String {
    format!(
        "{} mean {:.3} bias {:+.1}% cov {:.3} mcse {:.3} se {:.3} (n={}, failed {})",
        s.estimator, s.mean_point, s.percent_bias, s.coverage, s.mc_se, s.mean_model_se, s.replications, s.failures
    )
}

fn bounds_line(s: &BoundsSummary) -> String {
    format!(
        "{} [{:.3}, {:.3}] width {:.3} cov {:.3} ci-cov {:.3} (n={}, failed {})",
        s.estimator, s.mean_lower, s.mean_upper, s.mean_width, s.coverage, s.ci_coverage, s.replications, s.failures
    )
}

fn criterion_1() -> Verdict {
    let mut worst: f64 = 0.0;
    for c in 0..10 {
        let case = oracle::case(c);
        for weighted in [true, false] {
            let r = swlate(&case.preds, &case.b, 0.05, weighted).unwrap();
            let o = oracle::oracle_late(&case, weighted);
            worst = worst.max((r.point - o.point).abs()).max((r.se - o.se).abs());
            let v = v_variables(&case.b).unwrap();
            let sides = [(&v.lower1, &v.lower0, &case.v1[0], &case.v0[0]), (&v.upper1, &v.upper0, &case.v1[1], &case.v0[1])];
            for (t1, t0, v1, v0) in sides {
                let nuis = BoundNuisance { target1: t1.clone(), target0: t0.clone(), v1: v1.clone(), v0: v0.clone() };
                let r = swate_bound(&case.preds, &case.b, &nuis, 0.05, weighted).unwrap();
                let (point, se) = oracle::oracle_bound(&case, t1, t0, v1, v0, weighted);
                worst = worst.max((r.point - point).abs()).max((r.se - se).abs());
            }
        }
    }
    Verdict {
        id: 1,
        title: "oracle equivalence",
        pass: worst <= oracle::TOL,
        detail: format!("10 datasets, max abs difference {worst:.2e} (tol {:.0e})", oracle::TOL),
    }
}

fn criterion_2() -> Verdict {
    // 300 study-A units against 3/4 of 400 study-B units: every pool is half B
    let d = dgm(Linearity::Linear, 0.5, 400, 21);
    let c = d.gen_cohorts_seeded(5).unwrap();
    let a = c.a.sample.select(&(0..300).collect::<Vec<_>>());
    let mut learners = NuisanceLearners::glm();
    learners.sampling = LearnerSpec::Intercept;
    let p = cross_fit(Some(&a), &c.b.sample, &CrossfitPlan::new(4, learners, 3)).unwrap();
    let w = swlate(&p, &c.b.sample, 0.05, true).unwrap();
    let u = swlate(&p, &c.b.sample, 0.05, false).unwrap();
    let diff = (w.point - u.point).abs().max((w.se - u.se).abs());
    Verdict {
        id: 2,
        title: "constant-weight identity",
        pass: diff <= 1e-12,
        detail: format!("eta {:.3}, weighted {:.6} vs unweighted {:.6}, max diff {diff:.1e}", p.eta[0], w.point, u.point),
    }
}

fn criteria_3_and_5() -> (Verdict, Verdict) {
    let d = dgm(Linearity::Linear, 0.5, 1500, 3);
    let (truth, recs) = late_study("linear moderate, ensemble, N=1500", &d, NuisanceLearners::ensemble(), 300);
    let w = summarize_late(&recs, true, LINEAR_MODERATE_TRUTH);
    let u = summarize_late(&recs, false, LINEAR_MODERATE_TRUTH);
    let w_own = summarize_late(&recs, true, truth.late_a);
    let u_own = summarize_late(&recs, false, truth.late_a);

    let smoke_dgm = dgm(Linearity::Linear, 0.5, 500, 33);
    let (smoke_truth, smoke) = late_study("linear moderate, ensemble, N=500", &smoke_dgm, NuisanceLearners::ensemble(), 100);
    let sw = summarize_late(&smoke, true, smoke_truth.late_a);
    let su = summarize_late(&smoke, false, smoke_truth.late_a);
    let ordered = sw.percent_bias.abs() < su.percent_bias.abs() && sw.coverage > su.coverage;

    let checks = [
        ((w.mean_point - LINEAR_MODERATE_TRUTH).abs() <= 0.05, "weighted mean within 0.05"),
        ((0.90..=0.98).contains(&w.coverage), "weighted coverage in [0.90, 0.98]"),
        (u.percent_bias.abs() > 10.0, "unweighted |bias| > 10%"),
        (u.coverage < 0.60, "unweighted coverage < 0.60"),
        (ordered, "N=500 smoke ordering"),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1).collect();
    let c3 = Verdict {
        id: 3,
        title: "linear moderate, ensemble",
        pass: failed.is_empty(),
        detail: format!(
            "vs {LINEAR_MODERATE_TRUTH}: {}; {}\n      vs own truth {:.3}: {}; {}\n      smoke N=500 vs {:.3}: {}; {}{}",
            late_line(&w),
            late_line(&u),
            truth.late_a,
            late_line(&w_own),
            late_line(&u_own),
            smoke_truth.late_a,
            late_line(&sw),
            late_line(&su),
            if failed.is_empty() { String::new() } else { format!("\n      failed: {}", failed.join(", ")) }
        ),
    };
    let ratio = w.mean_model_se / w.mc_se;
    let c5 = Verdict {
        id: 5,
        title: "model SE vs Monte Carlo SE",
        pass: (ratio - 1.0).abs() <= 0.15,
        detail: format!("weighted mean SE {:.4}, MC SE {:.4}, ratio {ratio:.3}", w.mean_model_se, w.mc_se),
    };
    (c3, c5)
}

fn criterion_4() -> Verdict {
    let d = dgm(Linearity::Nonlinear, 0.5, 1500, 4);
    let (truth, ens) = late_study("nonlinear moderate, ensemble", &d, NuisanceLearners::ensemble(), 300);
    let (_, glm) = late_study("nonlinear moderate, GLM", &d, NuisanceLearners::glm(), 300);
    let e = summarize_late(&ens, true, truth.late_a);
    let g = summarize_late(&glm, true, truth.late_a);
    let checks = [
        (e.percent_bias.abs() < 3.0, "ensemble |bias| < 3%"),
        ((7.0..=17.0).contains(&g.percent_bias.abs()), "GLM |bias| in [7%, 17%]"),
        (g.coverage <= e.coverage - 0.08, "GLM coverage at least 0.08 below ensemble"),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1).collect();
    Verdict {
        id: 4,
        title: "nonlinear moderate",
        pass: failed.is_empty(),
        detail: format!(
            "truth {:.3}: ensemble {}; GLM {}{}",
            truth.late_a,
            late_line(&e),
            late_line(&g),
            if failed.is_empty() { String::new() } else { format!("\n      failed: {}", failed.join(", ")) }
        ),
    }
}

fn criterion_6() -> Verdict {
    let mut rows = Vec::new();
    for (i, s) in [0.1, 0.5, 0.9].into_iter().enumerate() {
        let d = dgm(Linearity::Linear, s, 1500, 60 + i as u64);
        let recs = bounds_study(&format!("bounds, linear, s={s}"), &d, NuisanceLearners::glm(), 200);
        rows.push((s, summarize_bounds(&recs, true, 1.0), summarize_bounds(&recs, false, 1.0)));
    }
    let (w5, u5) = (&rows[1].1, &rows[1].2);
    let (w9, u9) = (&rows[2].1, &rows[2].2);
    let shrinks = |pick: fn(&(f64, BoundsSummary, BoundsSummary)) -> f64| rows.windows(2).all(|p| pick(&p[1]) < pick(&p[0]));
    let checks = [
        (w5.coverage >= 0.90, "s=0.5 weighted coverage >= 0.90"),
        (u5.coverage <= 0.85, "s=0.5 unweighted coverage <= 0.85"),
        (u9.coverage <= 0.05, "s=0.9 unweighted coverage <= 0.05"),
        (w9.coverage >= 0.60, "s=0.9 weighted coverage >= 0.60"),
        (shrinks(|r| r.1.mean_width) && shrinks(|r| r.2.mean_width), "width decreasing in strength"),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1).collect();
    let mut detail = String::from("ATE 1");
    for (s, w, u) in &rows {
        detail.push_str(&format!("\n      s={s}: {}; {}", bounds_line(w), bounds_line(u)));
    }
    if !failed.is_empty() {
        detail.push_str(&format!("\n      failed: {}", failed.join(", ")));
    }
    Verdict { id: 6, title: "bounds across compliance strength", pass: failed.is_empty(), detail }
}

fn criterion_7() -> Verdict {
    let mut spec = DgmSpec::new(Linearity::Linear, 0.5);
    spec.n = 1500;
    spec.seed = 7;
    spec.perfect_compliance = true;
    let d = calibrate(&spec).unwrap();
    let recs = bounds_study("bounds, perfect compliance", &d, NuisanceLearners::glm(), 200);
    let s = summarize_bounds(&recs, true, 1.0);
    let widest = recs.iter().filter(|r| r.ok).map(|r| (r.weighted_upper - r.weighted_lower).abs()).fold(0.0, f64::max);
    Verdict {
        id: 7,
        title: "perfect compliance collapse",
        pass: widest < 1e-2 && s.ci_coverage >= 0.93 && s.failures == 0,
        detail: format!("max |upper - lower| {widest:.2e}; {}", bounds_line(&s)),
    }
}

fn criterion_8() -> Verdict {
    let learners = NuisanceLearners {
        outcome: LearnerSpec::Intercept,
        treatment: LearnerSpec::Intercept,
        instrument: LearnerSpec::Logistic,
        sampling: LearnerSpec::Logistic,
    };
    let mut bias = Vec::new();
    let mut detail = String::new();
    for n in [300, 1500] {
        let d = dgm(Linearity::Linear, 0.5, n, 8);
        let (truth, recs) = late_study(&format!("intercept-only nuisances, N={n}"), &d, learners.clone(), 200);
        let s = summarize_late(&recs, true, truth.late_a);
        bias.push((s.mean_point - truth.late_a).abs());
        detail.push_str(&format!("N={n} truth {:.3}: {}; ", truth.late_a, late_line(&s)));
    }
    detail.push_str(&format!("|bias| {:.4} -> {:.4}", bias[0], bias[1]));
    Verdict { id: 8, title: "double robustness", pass: bias[1] < 0.5 * bias[0], detail }
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Verdict {
    let tmp = tempfile::TempDir::new().unwrap();
    let cfg = tmp.path().join("sim.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "seed": 9, "crossfit": {"learners": "ensemble"},
            "simulation": {"dgm": {"n": 300, "linearity": "nonlinear", "strength": 0.5}, "reps": 6, "truth_reps": 50}}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    let mut runs = Vec::new();
    for threads in ["1", "2", "4"] {
        if out.exists() {
            fs::remove_dir_all(&out).unwrap();
        }
        let status = Command::new(env!("CARGO_BIN_EXE_swlate"))
            .args(["simulate", "--config", cfg.to_str().unwrap(), "--threads", threads, "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        if !status.status.success() {
            return Verdict { id: 9, title: "determinism", pass: false, detail: String::from_utf8_lossy(&status.stderr).into() };
        }
        runs.push(read_dir_sorted(&out));
    }
    let same = runs.windows(2).all(|p| p[0] == p[1]);
    let bytes: usize = runs[0].iter().map(|f| f.1.len()).sum();
    Verdict {
        id: 9,
        title: "determinism",
        pass: same,
        detail: format!("simulate with 1, 2, 4 threads: {} files, {bytes} bytes, identical = {same}", runs[0].len()),
    }
}

fn own_predictions(p: &NuisancePredictions, i: usize) -> [u64; 6] {
    [p.mu1[i], p.mu0[i], p.m1[i], p.m0[i], p.e_raw[i], p.eta_raw[i]].map(f64::to_bits)
}

fn criterion_10() -> Verdict {
    let d = dgm(Linearity::Nonlinear, 0.5, 200, 10);
    let c = d.gen_cohorts_seeded(1).unwrap();
    let (a, b) = (&c.a.sample, &c.b.sample);
    let plan = CrossfitPlan::new(4, NuisanceLearners::ensemble(), 10);
    let base = cross_fit(Some(a), b, &plan).unwrap();
    let mut changed = Vec::new();
    let units: Vec<usize> = (0..b.len()).step_by(10).collect();
    for &i in &units {
        let mut y = b.outcome().to_vec();
        y[i] += 25.0;
        let moved = cross_fit(Some(a), &b.with_outcome(y).unwrap(), &plan).unwrap();
        if own_predictions(&base, i) != own_predictions(&moved, i) {
            changed.push(i);
        }
    }
    Verdict {
        id: 10,
        title: "held-out purity",
        pass: changed.is_empty(),
        detail: format!("{} units perturbed by +25 in Y, own predictions changed for {:?}", units.len(), changed),
    }
}

fn main() {
    let started = Instant::now();
    let run = |f: fn() -> Verdict| -> Verdict {
        let v = f();
        eprintln!("  [criterion {} done at {:.0?}]", v.id, started.elapsed());
        v
    };
    let mut verdicts = vec![run(criterion_1), run(criterion_2)];
    let (c3, c5) = criteria_3_and_5();
    verdicts.extend([c3, run(criterion_4), c5, run(criterion_6), run(criterion_7), run(criterion_8), run(criterion_9), run(criterion_10)]);
    verdicts.sort_by_key(|v| v.id);

    println!("acceptance criteria ({:.0?})", started.elapsed());
    for v in &verdicts {
        println!("criterion {:>2} {} {}: {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.title, v.detail);
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("{passed} of {} criteria passed", verdicts.len());
    if passed < verdicts.len() && std::env::var("SWLATE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
