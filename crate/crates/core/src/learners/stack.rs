//! Convex stacking: member weights on the probability simplex chosen to
//! minimize V-fold cross-validated loss (squared error for regression,
//! log-loss for probabilities), solved by projected gradient descent.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{fit, FittedModel, LearnerSpec, ModelParams, TargetType};
use crate::dataset::make_folds_n;
use crate::error::{bail, Error, Result};
use crate::math::derive_seed;
use crate::matrix::Matrix;

const PGD_TOL: f64 = 1e-8;
const PGD_MAX_ITER: usize = 10_000;
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackFit {
    pub members: Vec<FittedModel>,
    pub weights: Vec<f64>,
    /// Cross-validated loss of each surviving member.
    pub member_cv_loss: Vec<f64>,
    /// Cross-validated loss of the weighted combination.
    pub cv_loss: f64,
    /// Names of members dropped because a fit failed.
    pub dropped: Vec<String>,
}

/// Euclidean projection onto `{w : w >= 0, Σw = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

struct Objective<'a> {
    preds: &'a [Vec<f64>],
    y: &'a [f64],
    target: TargetType,
}

impl Objective<'_> {
    fn combine(&self, w: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.y.len()];
        for (p, &wm) in self.preds.iter().zip(w) {
            for (qi, pi) in q.iter_mut().zip(p) {
                *qi += wm * pi;
            }
        }
        q
    }

    fn loss(&self, w: &[f64]) -> f64 {
        let q = self.combine(w);
        let n = self.y.len() as f64;
        let terms: Vec<f64> = match self.target {
            TargetType::Regression => q.iter().zip(self.y).map(|(qi, yi)| (yi - qi) * (yi - qi)).collect(),
            TargetType::Probability => q
                .iter()
                .zip(self.y)
                .map(|(&qi, &yi)| {
                    let qc = qi.clamp(PROB_EPS, 1.0 - PROB_EPS);
                    -(yi * libm::log(qc) + (1.0 - yi) * libm::log(1.0 - qc))
                })
                .collect(),
        };
        crate::math::pairwise_sum(&terms) / n
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let q = self.combine(w);
        let n = self.y.len() as f64;
        let resid: Vec<f64> = match self.target {
            TargetType::Regression => q.iter().zip(self.y).map(|(qi, yi)| 2.0 * (qi - yi)).collect(),
            TargetType::Probability => q
                .iter()
                .zip(self.y)
                .map(|(&qi, &yi)| {
                    if qi <= PROB_EPS || qi >= 1.0 - PROB_EPS {
                        0.0
                    } else {
                        (qi - yi) / (qi * (1.0 - qi))
                    }
                })
                .collect(),
        };
        self.preds
            .iter()
            .map(|p| p.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / n)
            .collect()
    }
}

fn optimize_weights(obj: &Objective<'_>) -> (Vec<f64>, f64) {
    let m = obj.preds.len();
    let mut w = vec![1.0 / m as f64; m];
    let mut f = obj.loss(&w);
    let mut step = 1.0;
    for _ in 0..PGD_MAX_ITER {
        let g = obj.gradient(&w);
        let mut moved = 0.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = project_to_simplex(&w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect::<Vec<_>>());
            let diff: Vec<f64> = cand.iter().zip(&w).map(|(a, b)| a - b).collect();
            let lin: f64 = g.iter().zip(&diff).map(|(a, b)| a * b).sum();
            let sq: f64 = diff.iter().map(|d| d * d).sum();
            let fc = obj.loss(&cand);
            if fc <= f + lin + sq / (2.0 * step) + 1e-15 {
                moved = diff.iter().fold(0.0_f64, |a, d| a.max(d.abs()));
                w = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || moved < PGD_TOL {
            break;
        }
        step *= 2.0;
    }
    (w, f)
}

pub fn fit_stack(
    members: &[LearnerSpec],
    features: &Matrix,
    targets: &[f64],
    target: TargetType,
    folds: usize,
    seed: u64,
) -> Result<FittedModel> {
    if members.is_empty() {
        bail!(Argument, "stack needs at least one member");
    }
    if folds < 2 {
        bail!(Argument, "stack needs at least 2 cross-validation folds, got {folds}");
    }
    let n = features.rows();
    let assignment = make_folds_n(n, folds, derive_seed(seed, 0x5_7ac4))?;
    let fold_rows: Vec<(Vec<usize>, Vec<usize>)> =
        (0..folds).map(|k| (assignment.complement(k), assignment.members(k))).collect();

    let mut kept: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut dropped = Vec::new();
    'member: for (mi, spec) in members.iter().enumerate() {
        if matches!(spec, LearnerSpec::Stack { .. }) {
            bail!(Argument, "stacks cannot be nested");
        }
        let mut cv = vec![0.0; n];
        for (k, (train, test)) in fold_rows.iter().enumerate() {
            let xt = features.select_rows(train);
            let yt: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
            let fitted = fit(spec, &xt, &yt, target, derive_seed(seed, (mi * 1000 + k) as u64 + 1));
            match fitted {
                Ok(model) => {
                    for &i in test {
                        cv[i] = model.predict_row(features.row(i));
                    }
                }
                Err(e) => {
                    log::warn!("dropping stack member {} ({}): {}", mi, spec.name(), e);
                    dropped.push(format!("{}#{mi}", spec.name()));
                    continue 'member;
                }
            }
        }
        kept.push((mi, cv));
    }
    if kept.is_empty() {
        return Err(Error::Numerical("every stack member failed to fit".into()));
    }

    let preds: Vec<Vec<f64>> = kept.iter().map(|(_, p)| p.clone()).collect();
    let obj = Objective { preds: &preds, y: targets, target };
    let member_cv_loss: Vec<f64> = (0..preds.len())
        .map(|j| {
            let mut e = vec![0.0; preds.len()];
            e[j] = 1.0;
            obj.loss(&e)
        })
        .collect();
    let (mut weights, mut cv_loss) = if preds.len() == 1 { (vec![1.0], member_cv_loss[0]) } else { optimize_weights(&obj) };
    // a vertex can only win if the descent stopped early; keep the better point
    let (best_j, best_vertex) = member_cv_loss
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (j, &l)| if l < acc.1 { (j, l) } else { acc });
    if best_vertex < cv_loss {
        weights = vec![0.0; preds.len()];
        weights[best_j] = 1.0;
        cv_loss = best_vertex;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut fitted = Vec::with_capacity(kept.len());
    let mut final_weights = Vec::with_capacity(kept.len());
    let mut final_losses = Vec::with_capacity(kept.len());
    for (j, (mi, _)) in kept.iter().enumerate() {
        let spec = &members[*mi];
        match fit(spec, features, targets, target, derive_seed(seed, (*mi * 1000 + 999) as u64 + 1)) {
            Ok(m) => {
                fitted.push(m);
                final_weights.push(weights[j]);
                final_losses.push(member_cv_loss[j]);
            }
            Err(e) => {
                log::warn!("dropping stack member {} ({}) after full-data refit failed: {}", mi, spec.name(), e);
                dropped.push(format!("{}#{mi}", spec.name()));
            }
        }
    }
    if fitted.is_empty() {
        return Err(Error::Numerical("every stack member failed its full-data refit".into()));
    }
    let total: f64 = final_weights.iter().sum();
    if total <= 0.0 {
        // all weight sat on members that failed the refit; fall back to the best survivor
        let best = final_losses
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (j, &l)| if l < acc.1 { (j, l) } else { acc })
            .0;
        final_weights.iter_mut().enumerate().for_each(|(j, w)| *w = if j == best { 1.0 } else { 0.0 });
    } else {
        final_weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(FittedModel {
        kind: "stack".into(),
        target,
        dim: features.cols(),
        params: ModelParams::Stack(StackFit {
            members: fitted,
            weights: final_weights,
            member_cv_loss: final_losses,
            cv_loss,
            dropped,
        }),
    })
}
