//! Direct, term-by-term evaluation of the estimator and bound formulas on
//! small fixed datasets.

#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swlate_core::crossfit::{ClipBounds, NuisancePredictions};
use swlate_core::dataset::{FoldAssignment, Study, StudySample};
use swlate_core::matrix::Matrix;

pub const TOL: f64 = 1e-10;

pub struct Case {
    pub b: StudySample,
    pub preds: NuisancePredictions,
    pub v1: [Vec<f64>; 2],
    pub v0: [Vec<f64>; 2],
}

/// Case `c`: n between 8 and 50, outcomes in [0, 1], propensities that
/// sometimes fall outside the clip range, and for `c == 3` identical weights.
pub fn case(c: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + c);
    let n = 8 + (c as usize * 5) % 43;
    let k = 2 + (c as usize % 3);
    let x = Matrix::from_vec(n, 1, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
    // both arms present in every case
    let z: Vec<u8> = (0..n).map(|i| if i < 2 { i as u8 } else { u8::from(rng.random::<f64>() < 0.5) }).collect();
    let d: Vec<u8> = z.iter().map(|&z| if rng.random::<f64>() < 0.8 { z } else { 1 - z }).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let b = StudySample::unnamed(x, z, d, y, Study::B).unwrap();
    let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect() };
    let mu1 = draw(-0.5, 1.5);
    let mu0 = draw(-0.5, 1.0);
    let m1 = draw(0.55, 0.95);
    let m0 = draw(0.0, 0.35);
    let e_raw = draw(0.003, 0.997);
    let eta_raw = if c == 3 { vec![0.4; n] } else { draw(0.003, 0.997) };
    let v = [draw(0.0, 1.0), draw(0.0, 1.0), draw(0.0, 1.0), draw(0.0, 1.0)];
    let folds = FoldAssignment::from_labels((0..n).map(|i| i % k).collect(), k).unwrap();
    let preds =
        NuisancePredictions::from_raw(mu1, mu0, m1, m0, e_raw, eta_raw, folds, ClipBounds::default(), ClipBounds::default()).unwrap();
    Case { b, preds, v1: [v[0].clone(), v[1].clone()], v0: [v[2].clone(), v[3].clone()] }
}

pub fn clip(p: f64) -> f64 {
    p.clamp(0.01, 0.99)
}

/// Weights normalized by their sample mean, or ones when unweighted.
pub fn oracle_weights(p: &NuisancePredictions, weighted: bool) -> Vec<f64> {
    let n = p.eta_raw.len();
    if !weighted {
        return vec![1.0; n];
    }
    let w: Vec<f64> = p.eta_raw.iter().map(|&h| (1.0 - clip(h)) / clip(h)).collect();
    let mut total = 0.0;
    for v in &w {
        total += v;
    }
    w.iter().map(|v| v / (total / n as f64)).collect()
}

pub struct OracleLate {
    pub point: f64,
    pub se: f64,
    pub per_fold: Vec<f64>,
}

pub fn oracle_late(c: &Case, weighted: bool) -> OracleLate {
    let p = &c.preds;
    let n = c.b.len();
    let wn = oracle_weights(p, weighted);
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    for i in 0..n {
        let z = c.b.instrument()[i] as f64;
        let d = c.b.treatment()[i] as f64;
        let y = c.b.outcome()[i];
        let e = clip(p.e_raw[i]);
        num[i] = wn[i] * (z / e * (y - p.mu1[i]) - (1.0 - z) / (1.0 - e) * (y - p.mu0[i]) + p.mu1[i] - p.mu0[i]);
        den[i] = wn[i] * (z / e * (d - p.m1[i]) - (1.0 - z) / (1.0 - e) * (d - p.m0[i]) + p.m1[i] - p.m0[i]);
    }
    let (mut sn, mut sd) = (0.0, 0.0);
    for i in 0..n {
        sn += num[i];
        sd += den[i];
    }
    let beta = (sn / n as f64) / (sd / n as f64);

    let mut strength = 0.0;
    for i in 0..n {
        strength += wn[i] * (p.m1[i] - p.m0[i]);
    }
    strength /= n as f64;
    let mut sq = 0.0;
    for i in 0..n {
        let z = c.b.instrument()[i];
        let e = clip(p.e_raw[i]);
        let (e_z, mu_z, m_z) = if z == 1 { (e, p.mu1[i], p.m1[i]) } else { (1.0 - e, p.mu0[i], p.m0[i]) };
        let sign = 2.0 * z as f64 - 1.0;
        let y = c.b.outcome()[i];
        let d = c.b.treatment()[i] as f64;
        let g = wn[i] / strength
            * (sign / e_z * (y - mu_z - beta * (d - m_z)) + p.mu1[i] - p.mu0[i] - beta * (p.m1[i] - p.m0[i]));
        sq += g * g;
    }
    let se = (sq / n as f64 / n as f64).sqrt();

    let k = p.folds.k();
    let mut per_fold = Vec::new();
    for f in 0..k {
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..n {
            if p.folds.fold_of(i) == f {
                a += num[i];
                b += den[i];
            }
        }
        per_fold.push(a / b);
    }
    OracleLate { point: beta, se, per_fold }
}

/// (point, se) of one bound side.
pub fn oracle_bound(c: &Case, t1: &[f64], t0: &[f64], v1: &[f64], v0: &[f64], weighted: bool) -> (f64, f64) {
    let p = &c.preds;
    let n = c.b.len();
    let wn = oracle_weights(p, weighted);
    let mut phi = vec![0.0; n];
    for i in 0..n {
        let z = c.b.instrument()[i] as f64;
        let e = clip(p.e_raw[i]);
        phi[i] = wn[i] * (z / e * (t1[i] - v1[i]) - (1.0 - z) / (1.0 - e) * (t0[i] - v0[i]) + v1[i] - v0[i]);
    }
    let mut s = 0.0;
    for v in &phi {
        s += v;
    }
    let point = s / n as f64;
    let mut sq = 0.0;
    for v in &phi {
        sq += (v - point) * (v - point);
    }
    (point, (sq / n as f64 / n as f64).sqrt())
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}
