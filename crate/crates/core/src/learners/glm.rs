//! Generalized linear learners: least squares, ridge, and logistic
//! regression fit by iteratively reweighted least squares.
//!
//! Features are standardized internally; coefficients are stored on the
//! standardized scale together with the centering/scaling needed to map new
//! rows onto it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::math::{expit, mean};
use crate::matrix::{cholesky, cholesky_solve, Matrix};

const IRLS_TOL: f64 = 1e-10;
const IRLS_MAX_ITER: usize = 100;
/// Ridge penalty used when unpenalized logistic regression fails.
pub const FALLBACK_LAMBDA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let p = x.cols();
        let mut center = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            let col = x.col(j);
            let m = mean(&col);
            let sd = crate::math::std_dev(&col);
            center[j] = m;
            // constant columns stay unscaled; the solver reports the singularity
            scale[j] = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        }
        Standardizer { center, scale }
    }

    #[inline]
    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            out[j] = (row[j] - self.center[j]) / self.scale[j];
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Identity,
    Logit,
}

/// A fitted linear predictor `b0 + Σ b_j (x_j - c_j)/s_j`, optionally
/// passed through the logistic link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub standardizer: Standardizer,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub link: Link,
    pub lambda: f64,
    /// Set when unpenalized logistic regression failed (separation or no
    /// convergence) and the ridge fallback was used instead.
    pub fallback: bool,
    pub iterations: usize,
}

impl GlmFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        let mut eta = self.intercept;
        for j in 0..row.len() {
            eta += self.coefficients[j] * (row[j] - self.standardizer.center[j]) / self.standardizer.scale[j];
        }
        eta
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let eta = self.linear_predictor(row);
        match self.link {
            Link::Identity => eta,
            Link::Logit => expit(eta),
        }
    }

    /// Coefficients on the original feature scale: (intercept, slopes).
    pub fn raw_coefficients(&self) -> (f64, Vec<f64>) {
        let slopes: Vec<f64> = self
            .coefficients
            .iter()
            .zip(&self.standardizer.scale)
            .map(|(b, s)| b / s)
            .collect();
        let shift: f64 = slopes.iter().zip(&self.standardizer.center).map(|(b, c)| b * c).sum();
        (self.intercept - shift, slopes)
    }
}

fn standardized(x: &Matrix, st: &Standardizer) -> Matrix {
    let p = x.cols();
    let mut out = Matrix::zeros(x.rows(), p);
    let mut buf = vec![0.0; p];
    for i in 0..x.rows() {
        st.apply_row(x.row(i), &mut buf);
        for j in 0..p {
            out.set(i, j, buf[j]);
        }
    }
    out
}

/// Least squares with optional ridge penalty on standardized slopes:
/// minimizes `(1/n) Σ (y - b0 - z'b)^2 + λ |b|^2`.
pub fn fit_linear(x: &Matrix, y: &[f64], lambda: f64) -> Result<GlmFit> {
    let (n, p) = (x.rows(), x.cols());
    if n == 0 {
        bail!(Estimation, "cannot fit a linear model to zero rows");
    }
    if lambda == 0.0 && n < p + 1 {
        bail!(Estimation, "least squares needs at least p+1 = {} rows, got {n}", p + 1);
    }
    let st = Standardizer::fit(x);
    let z = standardized(x, &st);
    let ybar = mean(y);
    // Standardized columns have mean zero, so the intercept decouples.
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let r = z.row(i);
        let yi = y[i] - ybar;
        for a in 0..p {
            rhs[a] += r[a] * yi;
            for b in 0..=a {
                gram[a * p + b] += r[a] * r[b];
            }
        }
    }
    let nf = n as f64;
    for a in 0..p {
        rhs[a] /= nf;
        for b in 0..=a {
            gram[a * p + b] /= nf;
            gram[b * p + a] = gram[a * p + b];
        }
        gram[a * p + a] += lambda;
    }
    let coefficients = if p == 0 {
        Vec::new()
    } else {
        let l = cholesky(&gram, p, 1e-12).ok_or_else(|| {
            Error::Numerical(format!(
                "singular design matrix ({p} columns, {n} rows); use a ridge learner (lambda > 0)"
            ))
        })?;
        cholesky_solve(&l, p, &rhs)
    };
    Ok(GlmFit {
        standardizer: st,
        intercept: ybar,
        coefficients,
        link: Link::Identity,
        lambda,
        fallback: false,
        iterations: 1,
    })
}

fn bernoulli_deviance(y: &[f64], eta: &[f64]) -> f64 {
    let mut d = 0.0;
    for (yi, &e) in y.iter().zip(eta) {
        // log(1 + exp(e)) computed stably
        let softplus = if e > 0.0 { e + libm::log1p(libm::exp(-e)) } else { libm::log1p(libm::exp(e)) };
        d += softplus - yi * e;
    }
    2.0 * d
}

struct IrlsOutcome {
    intercept: f64,
    coefficients: Vec<f64>,
    converged: bool,
    iterations: usize,
    eta: Vec<f64>,
}

/// Newton/IRLS for penalized logistic regression on standardized features.
/// Objective: `deviance/(2n) + (λ/2)|b|^2`, intercept unpenalized.
fn irls(z: &Matrix, y: &[f64], lambda: f64) -> Option<IrlsOutcome> {
    let (n, p) = (z.rows(), z.cols());
    let q = p + 1;
    let nf = n as f64;
    let ybar = mean(y).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = vec![0.0; q];
    beta[0] = crate::math::logit(ybar);
    let objective = |eta: &[f64], beta: &[f64]| {
        let pen: f64 = beta[1..].iter().map(|b| b * b).sum();
        bernoulli_deviance(y, eta) / (2.0 * nf) + 0.5 * lambda * pen
    };
    let lin = |beta: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| beta[0] + z.row(i).iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };
    let mut eta = lin(&beta);
    let mut obj = objective(&eta, &beta);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..IRLS_MAX_ITER {
        iterations = it + 1;
        let mut h = vec![0.0; q * q];
        let mut g = vec![0.0; q];
        for i in 0..n {
            let mu = expit(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let r = y[i] - mu;
            let row = z.row(i);
            // feature 0 is the intercept
            for a in 0..q {
                let xa = if a == 0 { 1.0 } else { row[a - 1] };
                g[a] += xa * r;
                for b in 0..=a {
                    let xb = if b == 0 { 1.0 } else { row[b - 1] };
                    h[a * q + b] += w * xa * xb;
                }
            }
        }
        for a in 0..q {
            g[a] /= nf;
            if a > 0 {
                g[a] -= lambda * beta[a];
            }
            for b in 0..=a {
                h[a * q + b] /= nf;
                h[b * q + a] = h[a * q + b];
            }
            if a > 0 {
                h[a * q + a] += lambda;
            }
        }
        let l = cholesky(&h, q, 1e-14)?;
        let step = cholesky_solve(&l, q, &g);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let cand_eta = lin(&cand);
            let cand_obj = objective(&cand_eta, &cand);
            if cand_obj.is_finite() && cand_obj <= obj + 1e-15 * obj.abs() {
                let rel = (obj - cand_obj).abs() / (cand_obj.abs() + 0.1);
                beta = cand;
                eta = cand_eta;
                obj = cand_obj;
                accepted = true;
                if rel < IRLS_TOL {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent possible: we are at the optimum up to rounding
            converged = true;
        }
        if converged {
            break;
        }
    }
    Some(IrlsOutcome { intercept: beta[0], coefficients: beta[1..].to_vec(), converged, iterations, eta })
}

fn check_binary(y: &[f64]) -> Result<()> {
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        bail!(Argument, "probability targets must be 0 or 1 (row {i} has {})", y[i]);
    }
    Ok(())
}

/// Logistic regression. With `lambda == 0`, separation or non-convergence
/// triggers a refit with [`FALLBACK_LAMBDA`] and sets `fallback`.
pub fn fit_logistic(x: &Matrix, y: &[f64], lambda: f64) -> Result<GlmFit> {
    let n = x.rows();
    if n == 0 {
        bail!(Estimation, "cannot fit a logistic model to zero rows");
    }
    check_binary(y)?;
    let st = Standardizer::fit(x);
    let z = standardized(x, &st);
    let build = |o: IrlsOutcome, lambda: f64, fallback: bool| GlmFit {
        standardizer: st.clone(),
        intercept: o.intercept,
        coefficients: o.coefficients,
        link: Link::Logit,
        lambda,
        fallback,
        iterations: o.iterations,
    };
    if lambda > 0.0 {
        return match irls(&z, y, lambda) {
            Some(o) => Ok(build(o, lambda, false)),
            None => Err(Error::Numerical(format!("logistic IRLS failed with lambda = {lambda}"))),
        };
    }
    let separated = |o: &IrlsOutcome| o.eta.iter().any(|e| e.abs() > 25.0);
    match irls(&z, y, 0.0) {
        Some(o) if o.converged && !separated(&o) => Ok(build(o, 0.0, false)),
        _ => {
            log::warn!("logistic regression did not converge cleanly; refitting with ridge penalty {FALLBACK_LAMBDA}");
            match irls(&z, y, FALLBACK_LAMBDA) {
                Some(o) => Ok(build(o, FALLBACK_LAMBDA, true)),
                None => Err(Error::Numerical("logistic IRLS failed even with the ridge fallback".into())),
            }
        }
    }
}
