//! Two-cohort tabular data: validated samples, cross-fitting folds, and the
//! pooled design used to model study membership.

use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Study {
    A,
    B,
}

/// One cohort: covariates plus binary instrument, binary treatment, and a
/// real-valued outcome. Construction validates every invariant, so holders
/// of a `StudySample` never re-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySample {
    covariates: Matrix,
    covariate_names: Vec<String>,
    instrument: Vec<u8>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    label: Study,
}

impl StudySample {
    pub fn new(
        covariates: Matrix,
        covariate_names: Vec<String>,
        instrument: Vec<u8>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        label: Study,
    ) -> Result<Self> {
        let n = covariates.rows();
        if covariate_names.len() != covariates.cols() {
            bail!(
                Argument,
                "{} covariate names for {} covariate columns",
                covariate_names.len(),
                covariates.cols()
            );
        }
        for (what, len) in [("instrument", instrument.len()), ("treatment", treatment.len()), ("outcome", outcome.len())] {
            if len != n {
                bail!(Validation, "{what} has {len} entries but there are {n} covariate rows");
            }
        }
        if let Some(i) = instrument.iter().position(|&z| z > 1) {
            bail!(Validation, "instrument must be 0 or 1 (row {i} has {})", instrument[i]);
        }
        if let Some(i) = treatment.iter().position(|&d| d > 1) {
            bail!(Validation, "treatment must be 0 or 1 (row {i} has {})", treatment[i]);
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            bail!(Validation, "outcome is missing or non-finite at row {i}");
        }
        if let Some(k) = covariates.as_slice().iter().position(|x| !x.is_finite()) {
            bail!(Validation, "covariate is missing or non-finite at row {}", k / covariates.cols().max(1));
        }
        Ok(StudySample { covariates, covariate_names, instrument, treatment, outcome, label })
    }

    /// Convenience constructor with generated covariate names `X1..Xp`.
    pub fn unnamed(covariates: Matrix, instrument: Vec<u8>, treatment: Vec<u8>, outcome: Vec<f64>, label: Study) -> Result<Self> {
        let names = (1..=covariates.cols()).map(|j| alloc::format!("X{j}")).collect();
        Self::new(covariates, names, instrument, treatment, outcome, label)
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariates.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn instrument(&self) -> &[u8] {
        &self.instrument
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn label(&self) -> Study {
        self.label
    }

    pub fn with_label(mut self, label: Study) -> Self {
        self.label = label;
        self
    }

    /// Same units with a replaced outcome vector.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        Self::new(
            self.covariates.clone(),
            self.covariate_names.clone(),
            self.instrument.clone(),
            self.treatment.clone(),
            outcome,
            self.label,
        )
    }

    /// Sub-sample with the given rows (repeats allowed, as in resampling).
    pub fn select(&self, rows: &[usize]) -> StudySample {
        StudySample {
            covariates: self.covariates.select_rows(rows),
            covariate_names: self.covariate_names.clone(),
            instrument: rows.iter().map(|&i| self.instrument[i]).collect(),
            treatment: rows.iter().map(|&i| self.treatment[i]).collect(),
            outcome: rows.iter().map(|&i| self.outcome[i]).collect(),
            label: self.label,
        }
    }
}

/// Assignment of study B's rows to K cross-fitting folds. Fold labels are
/// zero-based internally; exports add one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_index: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    /// Builds an assignment from explicit labels in `0..k`.
    pub fn from_labels(fold_index: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = fold_index.iter().find(|&&f| f >= k) {
            bail!(Argument, "fold label {bad} outside 0..{k}");
        }
        Ok(FoldAssignment { fold_index, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.fold_index
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_index[i]
    }

    /// Row indices in fold `k` (ascending).
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.fold_index.len()).filter(|&i| self.fold_index[i] == k).collect()
    }

    /// Row indices outside fold `k` (ascending).
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.fold_index.len()).filter(|&i| self.fold_index[i] != k).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = alloc::vec![0; self.k];
        for &f in &self.fold_index {
            s[f] += 1;
        }
        s
    }
}

/// Randomly partitions `n` rows into `k` folds whose sizes differ by at most one.
pub fn make_folds_n(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        bail!(Argument, "fold count must be at least 2, got {k}");
    }
    if k > n {
        bail!(Argument, "fold count {k} exceeds the number of rows {n}");
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_index = alloc::vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold_index[row] = pos % k;
    }
    Ok(FoldAssignment { fold_index, k })
}

pub fn make_folds(sample: &StudySample, k: usize, seed: u64) -> Result<FoldAssignment> {
    make_folds_n(sample.len(), k, seed)
}

/// Study A stacked on a subset of study B, with a membership indicator
/// (1 = study B) for fitting the sampling score.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledSample {
    pub covariates: Matrix,
    pub membership: Vec<u8>,
}

pub fn pool_for_weights(a: &StudySample, b: &StudySample, b_rows: &[usize]) -> Result<PooledSample> {
    if a.dim() != b.dim() {
        bail!(Argument, "study A has {} covariates but study B has {}", a.dim(), b.dim());
    }
    if b_rows.is_empty() {
        bail!(Argument, "the study B subset used for the sampling model is empty");
    }
    if let Some(&bad) = b_rows.iter().find(|&&i| i >= b.len()) {
        bail!(Argument, "study B row {bad} out of range");
    }
    let covariates = a.covariates().vstack(&b.covariates().select_rows(b_rows))?;
    let mut membership = alloc::vec![0u8; a.len()];
    membership.resize(a.len() + b_rows.len(), 1);
    Ok(PooledSample { covariates, membership })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny(n: usize, label: Study) -> StudySample {
        let x = Matrix::from_vec(n, 2, (0..2 * n).map(|v| v as f64).collect()).unwrap();
        let z = (0..n).map(|i| (i % 2) as u8).collect();
        let d = (0..n).map(|i| ((i / 2) % 2) as u8).collect();
        let y = (0..n).map(|i| i as f64 * 0.5).collect();
        StudySample::unnamed(x, z, d, y, label).unwrap()
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let x = Matrix::zeros(3, 1);
        let err = StudySample::unnamed(x, vec![0, 1, 0], vec![0, 2, 1], vec![0.0; 3], Study::B).unwrap_err();
        assert_eq!(err.category(), "validation");
        assert!(err.message().contains("row 1"));
    }

    #[test]
    fn rejects_length_mismatch_and_nan() {
        assert!(StudySample::unnamed(Matrix::zeros(3, 1), vec![0, 1], vec![0; 3], vec![0.0; 3], Study::A).is_err());
        assert!(StudySample::unnamed(Matrix::zeros(2, 1), vec![0, 1], vec![0; 2], vec![0.0, f64::NAN], Study::A).is_err());
    }

    #[test]
    fn fold_sizes() {
        let f = make_folds_n(10, 2, 7).unwrap();
        assert_eq!(f.sizes(), vec![5, 5]);
        let mut s = make_folds_n(11, 2, 7).unwrap().sizes();
        s.sort();
        assert_eq!(s, vec![5, 6]);
        let f1 = make_folds_n(1500, 4, 42).unwrap();
        assert_eq!(f1.sizes(), vec![375; 4]);
        assert_eq!(f1, make_folds_n(1500, 4, 42).unwrap());
        assert_ne!(f1, make_folds_n(1500, 4, 43).unwrap());
    }

    #[test]
    fn fold_errors() {
        assert!(make_folds_n(3, 4, 1).is_err());
        assert!(make_folds_n(3, 1, 1).is_err());
    }

    #[test]
    fn pooling_order_and_errors() {
        let a = tiny(3, Study::A);
        let b = tiny(4, Study::B);
        let p = pool_for_weights(&a, &b, &[1, 3]).unwrap();
        assert_eq!(p.covariates.rows(), 5);
        assert_eq!(p.membership, vec![0, 0, 0, 1, 1]);
        for i in 0..3 {
            assert_eq!(p.covariates.row(i), a.covariates().row(i));
        }
        assert_eq!(p.covariates.row(4), b.covariates().row(3));
        assert!(pool_for_weights(&a, &b, &[]).is_err());
        let c = StudySample::unnamed(Matrix::zeros(2, 3), vec![0, 1], vec![0, 1], vec![0.0; 2], Study::B).unwrap();
        assert!(pool_for_weights(&a, &c, &[0]).is_err());
    }

    #[test]
    fn pooled_means_are_weighted_cohort_means() {
        let a = tiny(3, Study::A);
        let b = tiny(5, Study::B);
        let rows = [0, 2, 4];
        let p = pool_for_weights(&a, &b, &rows).unwrap();
        let sub = b.select(&rows);
        for j in 0..2 {
            let pooled = crate::math::mean(&p.covariates.col(j));
            let ma = crate::math::mean(&a.covariates().col(j));
            let mb = crate::math::mean(&sub.covariates().col(j));
            let expected = (3.0 * ma + 3.0 * mb) / 6.0;
            assert!((pooled - expected).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn folds_partition_rows(n in 2usize..300, k in 2usize..10, seed in 0u64..1000) {
            proptest::prop_assume!(k <= n);
            let f = make_folds_n(n, k, seed).unwrap();
            let mut seen = vec![0usize; n];
            for fold in 0..k {
                for i in f.members(fold) {
                    seen[i] += 1;
                }
            }
            proptest::prop_assert!(seen.iter().all(|&c| c == 1));
            let s = f.sizes();
            proptest::prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }
    }
}
