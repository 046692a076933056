//! SWLATE point estimate, influence-function standard error, and Wald CI.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::crossfit::{check_propensities, NuisancePredictions};
use crate::dataset::StudySample;
use crate::error::{bail, Result};
use crate::math::{mean, normal_quantile, pairwise_sum};

/// Denominators at or below this magnitude are treated as a failed instrument.
pub const MIN_DENOMINATOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub point: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
    /// Ratio estimate restricted to each fold.
    pub per_fold_points: Vec<f64>,
    /// Average of `per_fold_points`.
    pub fold_average_point: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub weighted: bool,
    pub n_b: usize,
}

/// Per-unit weights divided by their mean over all of B. Unweighted mode, and
/// weights that are all equal, give exactly 1.
pub fn normalized_weights(preds: &NuisancePredictions, weighted: bool) -> Vec<f64> {
    let n = preds.len();
    if !weighted || preds.w.iter().all(|&w| w == preds.w[0]) {
        return alloc::vec![1.0; n];
    }
    let m = mean(&preds.w);
    preds.w.iter().map(|w| w / m).collect()
}

fn check(preds: &NuisancePredictions, b: &StudySample) -> Result<()> {
    check_propensities(preds, b.len())?;
    if b.is_empty() {
        bail!(Argument, "study B is empty");
    }
    Ok(())
}

fn uncentered_if(preds: &NuisancePredictions, b: &StudySample, weighted: bool, target: &[f64], r1: &[f64], r0: &[f64]) -> Vec<f64> {
    let wn = normalized_weights(preds, weighted);
    (0..b.len())
        .map(|i| {
            let z = f64::from(b.instrument()[i]);
            let e = preds.e[i];
            let inner = z / e * (target[i] - r1[i]) - (1.0 - z) / (1.0 - e) * (target[i] - r0[i]) + r1[i] - r0[i];
            wn[i] * inner
        })
        .collect()
}

/// Per-unit uncentered influence function of the weighted numerator.
pub fn phi_numerator(preds: &NuisancePredictions, b: &StudySample, weighted: bool) -> Result<Vec<f64>> {
    check(preds, b)?;
    Ok(uncentered_if(preds, b, weighted, b.outcome(), &preds.mu1, &preds.mu0))
}

/// Per-unit uncentered influence function of the weighted denominator.
pub fn phi_denominator(preds: &NuisancePredictions, b: &StudySample, weighted: bool) -> Result<Vec<f64>> {
    check(preds, b)?;
    let d: Vec<f64> = b.treatment().iter().map(|&d| f64::from(d)).collect();
    Ok(uncentered_if(preds, b, weighted, &d, &preds.m1, &preds.m0))
}

/// Per-unit plug-in of the centered influence function, evaluated at `beta_hat`.
pub fn gamma_plugin(preds: &NuisancePredictions, b: &StudySample, beta_hat: f64, weighted: bool) -> Result<Vec<f64>> {
    check(preds, b)?;
    if !beta_hat.is_finite() {
        bail!(Argument, "beta_hat must be finite, got {beta_hat}");
    }
    let wn = normalized_weights(preds, weighted);
    let scaled: Vec<f64> = (0..b.len()).map(|i| wn[i] * (preds.m1[i] - preds.m0[i])).collect();
    let norm = mean(&scaled);
    if norm.abs() <= MIN_DENOMINATOR {
        bail!(Estimation, "weighted instrument strength {norm:.3e} is too close to zero; check instrument strength");
    }
    Ok((0..b.len())
        .map(|i| {
            let z = b.instrument()[i];
            let (mu_z, m_z, e_z) = if z == 1 {
                (preds.mu1[i], preds.m1[i], preds.e[i])
            } else {
                (preds.mu0[i], preds.m0[i], 1.0 - preds.e[i])
            };
            let sign = if z == 1 { 1.0 } else { -1.0 };
            let y = b.outcome()[i];
            let d = f64::from(b.treatment()[i]);
            let resid = sign / e_z * (y - mu_z - beta_hat * (d - m_z));
            let contrast = preds.mu1[i] - preds.mu0[i] - beta_hat * (preds.m1[i] - preds.m0[i]);
            wn[i] / norm * (resid + contrast)
        })
        .collect())
}

/// Standard-normal quantile `q_{1-alpha/2}` after validating `alpha`.
pub fn wald_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        bail!(Argument, "alpha must lie in (0, 1), got {alpha}");
    }
    Ok(normal_quantile(1.0 - alpha / 2.0))
}

pub fn swlate(preds: &NuisancePredictions, b: &StudySample, alpha: f64, weighted: bool) -> Result<EstimateReport> {
    let q = wald_quantile(alpha)?;
    let num = phi_numerator(preds, b, weighted)?;
    let den = phi_denominator(preds, b, weighted)?;
    let n = b.len();
    let num_mean = mean(&num);
    let den_mean = mean(&den);
    if den_mean.abs() <= MIN_DENOMINATOR {
        bail!(
            Estimation,
            "estimated first stage {den_mean:.3e} is too close to zero; check instrument strength"
        );
    }
    let point = num_mean / den_mean;
    let gamma = gamma_plugin(preds, b, point, weighted)?;
    let sq: Vec<f64> = gamma.iter().map(|g| g * g).collect();
    let se = libm::sqrt(mean(&sq) / n as f64);
    let half = q * se;

    let k = preds.folds.k();
    let mut per_fold_points = Vec::with_capacity(k);
    for f in 0..k {
        let rows = preds.folds.members(f);
        let fnum: Vec<f64> = rows.iter().map(|&i| num[i]).collect();
        let fden: Vec<f64> = rows.iter().map(|&i| den[i]).collect();
        per_fold_points.push(pairwise_sum(&fnum) / pairwise_sum(&fden));
    }
    let fold_average_point = mean(&per_fold_points);
    Ok(EstimateReport {
        point,
        se,
        ci_lower: point - half,
        ci_upper: point + half,
        alpha,
        per_fold_points,
        fold_average_point,
        numerator: num_mean,
        denominator: den_mean,
        weighted,
        n_b: n,
    })
}
