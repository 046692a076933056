//! Additive GLM on a restricted (natural) cubic spline basis per covariate.
//!
//! Each covariate contributes itself plus `k - 2` truncated-power terms with
//! knots at interior quantiles; the fit is linear beyond the outer knots.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::glm::{fit_linear, fit_logistic, GlmFit};
use crate::error::Result;
use crate::math::quantile_sorted;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    /// Knots per input column; fewer than three means linear only.
    knots: Vec<Vec<f64>>,
}

fn cube_plus(v: f64) -> f64 {
    if v > 0.0 {
        v * v * v
    } else {
        0.0
    }
}

impl SplineBasis {
    /// Places `k` knots at evenly spaced quantiles between the 5th and 95th
    /// percentiles of each column. Columns with at most `k` distinct values
    /// stay linear.
    pub fn fit(x: &Matrix, k: usize) -> Self {
        let knots = (0..x.cols())
            .map(|j| {
                let mut col = x.col(j);
                col.sort_by(f64::total_cmp);
                let distinct = 1 + col.windows(2).filter(|w| w[0] != w[1]).count();
                if distinct <= k {
                    return Vec::new();
                }
                let mut t: Vec<f64> = (0..k).map(|i| quantile_sorted(&col, 0.05 + 0.9 * i as f64 / (k - 1) as f64)).collect();
                t.dedup();
                if t.len() < 3 {
                    t.clear();
                }
                t
            })
            .collect();
        SplineBasis { knots }
    }

    pub fn output_dim(&self) -> usize {
        self.knots.iter().map(|t| 1 + t.len().saturating_sub(2)).sum()
    }

    pub fn expand_row(&self, row: &[f64], out: &mut Vec<f64>) {
        for (&x, t) in row.iter().zip(&self.knots) {
            out.push(x);
            let k = t.len();
            if k < 3 {
                continue;
            }
            let (tk, tk1) = (t[k - 1], t[k - 2]);
            let scale = (tk - t[0]) * (tk - t[0]);
            for &tj in &t[..k - 2] {
                let v = cube_plus(x - tj) - cube_plus(x - tk1) * (tk - tj) / (tk - tk1) + cube_plus(x - tk) * (tk1 - tj) / (tk - tk1);
                out.push(v / scale);
            }
        }
    }

    pub fn expand(&self, x: &Matrix) -> Matrix {
        let mut data = Vec::with_capacity(x.rows() * self.output_dim());
        for r in x.iter_rows() {
            self.expand_row(r, &mut data);
        }
        Matrix::from_vec(x.rows(), self.output_dim(), data).expect("basis width is consistent")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveFit {
    pub basis: SplineBasis,
    pub glm: GlmFit,
}

impl AdditiveFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut z = Vec::with_capacity(self.basis.output_dim());
        self.basis.expand_row(row, &mut z);
        self.glm.predict_row(&z)
    }
}

pub fn fit_additive(x: &Matrix, y: &[f64], knots: usize, lambda: f64, logistic: bool) -> Result<AdditiveFit> {
    let basis = SplineBasis::fit(x, knots);
    let z = basis.expand(x);
    let glm = if logistic { fit_logistic(&z, y, lambda)? } else { fit_linear(&z, y, lambda)? };
    Ok(AdditiveFit { basis, glm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn basis_is_linear_beyond_outer_knots() {
        let x = Matrix::from_vec(100, 1, (0..100).map(|i| i as f64).collect()).unwrap();
        let b = SplineBasis::fit(&x, 4);
        assert_eq!(b.output_dim(), 3);
        let at = |v: f64| {
            let mut o = Vec::new();
            b.expand_row(&[v], &mut o);
            o
        };
        // second differences vanish far right of the last knot
        let (a, m, c) = (at(200.0), at(300.0), at(400.0));
        for j in 0..3 {
            assert!((c[j] - 2.0 * m[j] + a[j]).abs() < 1e-6 * (1.0 + c[j].abs()), "term {j}");
        }
        // and every nonlinear term is zero left of the first knot
        assert!(at(-10.0)[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binary_column_stays_linear() {
        let x = Matrix::from_vec(6, 1, vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(SplineBasis::fit(&x, 5).output_dim(), 1);
    }

    #[test]
    fn recovers_convex_curve() {
        let x = Matrix::from_vec(400, 1, (0..400).map(|i| -2.0 + 4.0 * i as f64 / 399.0).collect()).unwrap();
        let y: Vec<f64> = x.iter_rows().map(|r| libm::exp(r[0])).collect();
        let f = fit_additive(&x, &y, 5, 0.0, false).unwrap();
        for v in [-1.5, 0.0, 1.0, 1.8] {
            assert!((f.predict_row(&[v]) - libm::exp(v)).abs() < 0.05, "at {v}");
        }
    }
}
