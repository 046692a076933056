//! Supervised learners used for every nuisance function, plus a
//! cross-validated convex stacking ensemble.

mod forest;
mod glm;
mod spline;
mod stack;

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::matrix::Matrix;

pub use forest::{fit_forest, Forest, ForestParams, Tree};
pub use glm::{fit_linear, fit_logistic, GlmFit, Link, Standardizer, FALLBACK_LAMBDA};
pub use spline::{fit_additive, AdditiveFit, SplineBasis};
pub use stack::{fit_stack, project_to_simplex, StackFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetType {
    Regression,
    Probability,
}

/// Learner configuration, serialized as a tagged JSON object, e.g.
/// `{"kind": "tree-ensemble", "trees": 200, "max_depth": 8, "min_leaf": 5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnerSpec {
    /// Constant model: the training mean.
    Intercept,
    Linear,
    Logistic,
    RidgeLinear {
        lambda: f64,
    },
    RidgeLogistic {
        lambda: f64,
    },
    /// Restricted cubic spline expansion of every covariate, fit by least
    /// squares or, for probability targets, logistic regression.
    AdditiveSpline {
        #[serde(default = "default_knots")]
        knots: usize,
        #[serde(default)]
        lambda: f64,
    },
    TreeEnsemble {
        #[serde(default = "default_trees")]
        trees: usize,
        #[serde(default = "default_depth")]
        max_depth: usize,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
    Stack {
        members: Vec<LearnerSpec>,
        #[serde(default = "default_stack_folds")]
        folds: usize,
    },
}

fn default_trees() -> usize {
    ForestParams::default().trees
}
fn default_depth() -> usize {
    ForestParams::default().max_depth
}
fn default_min_leaf() -> usize {
    ForestParams::default().min_leaf
}
fn default_knots() -> usize {
    4
}
fn default_stack_folds() -> usize {
    5
}

impl LearnerSpec {
    pub fn tree_ensemble(params: ForestParams) -> Self {
        LearnerSpec::TreeEnsemble { trees: params.trees, max_depth: params.max_depth, min_leaf: params.min_leaf }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Intercept => "intercept",
            LearnerSpec::Linear => "linear",
            LearnerSpec::Logistic => "logistic",
            LearnerSpec::RidgeLinear { .. } => "ridge-linear",
            LearnerSpec::RidgeLogistic { .. } => "ridge-logistic",
            LearnerSpec::AdditiveSpline { .. } => "additive-spline",
            LearnerSpec::TreeEnsemble { .. } => "tree-ensemble",
            LearnerSpec::Stack { .. } => "stack",
        }
    }

    /// Checks hyperparameter ranges and the no-nested-stacks rule.
    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::RidgeLinear { lambda } | LearnerSpec::RidgeLogistic { lambda } => {
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    bail!(Argument, "ridge penalty must be a finite non-negative number, got {lambda}");
                }
            }
            LearnerSpec::AdditiveSpline { knots, lambda } => {
                if *knots < 3 {
                    bail!(Argument, "additive-spline needs at least 3 knots, got {knots}");
                }
                if !(*lambda >= 0.0 && lambda.is_finite()) {
                    bail!(Argument, "ridge penalty must be a finite non-negative number, got {lambda}");
                }
            }
            LearnerSpec::TreeEnsemble { trees, max_depth, min_leaf } => {
                if *trees == 0 || *max_depth == 0 || *min_leaf == 0 {
                    bail!(Argument, "tree-ensemble needs trees >= 1, max_depth >= 1, min_leaf >= 1");
                }
            }
            LearnerSpec::Stack { members, folds } => {
                if members.is_empty() {
                    bail!(Argument, "stack needs at least one member");
                }
                if *folds < 2 {
                    bail!(Argument, "stack needs at least 2 cross-validation folds, got {folds}");
                }
                for m in members {
                    if matches!(m, LearnerSpec::Stack { .. }) {
                        bail!(Argument, "stacks cannot be nested");
                    }
                    m.validate()?;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Constant(f64),
    Glm(GlmFit),
    Additive(AdditiveFit),
    Forest(Forest),
    Stack(StackFit),
}

/// A trained learner. Immutable once fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub kind: String,
    pub target: TargetType,
    pub dim: usize,
    pub params: ModelParams,
}

impl FittedModel {
    /// True if any GLM inside this model fell back to ridge.
    pub fn used_fallback(&self) -> bool {
        match &self.params {
            ModelParams::Glm(g) => g.fallback,
            ModelParams::Additive(a) => a.glm.fallback,
            ModelParams::Stack(s) => s.members.iter().any(|m| m.used_fallback()),
            _ => false,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let raw = match &self.params {
            ModelParams::Constant(c) => *c,
            ModelParams::Glm(g) => g.predict_row(row),
            ModelParams::Additive(a) => a.predict_row(row),
            ModelParams::Forest(f) => f.predict_row(row),
            ModelParams::Stack(s) => s
                .members
                .iter()
                .zip(&s.weights)
                .filter(|(_, &w)| w > 0.0)
                .map(|(m, &w)| w * m.predict_row(row))
                .sum(),
        };
        match self.target {
            TargetType::Regression => raw,
            TargetType::Probability => raw.clamp(0.0, 1.0),
        }
    }
}

/// Fits a learner. Deterministic given the spec, the data, and `seed`.
pub fn fit(spec: &LearnerSpec, features: &Matrix, targets: &[f64], target: TargetType, seed: u64) -> Result<FittedModel> {
    spec.validate()?;
    let n = features.rows();
    if n == 0 || targets.is_empty() {
        bail!(Estimation, "cannot fit {} to empty data", spec.name());
    }
    if targets.len() != n {
        bail!(Argument, "{} feature rows but {} targets", n, targets.len());
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        bail!(Validation, "target at row {i} is not finite");
    }
    if target == TargetType::Probability {
        if let Some(i) = targets.iter().position(|&t| t != 0.0 && t != 1.0) {
            bail!(Argument, "probability targets must be 0 or 1 (row {i} has {})", targets[i]);
        }
    }
    let params = match spec {
        LearnerSpec::Intercept => ModelParams::Constant(crate::math::mean(targets)),
        LearnerSpec::Linear => ModelParams::Glm(fit_linear(features, targets, 0.0)?),
        LearnerSpec::RidgeLinear { lambda } => ModelParams::Glm(fit_linear(features, targets, *lambda)?),
        LearnerSpec::Logistic | LearnerSpec::RidgeLogistic { .. } => {
            if target != TargetType::Probability {
                bail!(Argument, "{} requires probability targets", spec.name());
            }
            let lambda = if let LearnerSpec::RidgeLogistic { lambda } = spec { *lambda } else { 0.0 };
            ModelParams::Glm(fit_logistic(features, targets, lambda)?)
        }
        LearnerSpec::AdditiveSpline { knots, lambda } => {
            ModelParams::Additive(fit_additive(features, targets, *knots, *lambda, target == TargetType::Probability)?)
        }
        LearnerSpec::TreeEnsemble { trees, max_depth, min_leaf } => ModelParams::Forest(fit_forest(
            features,
            targets,
            ForestParams { trees: *trees, max_depth: *max_depth, min_leaf: *min_leaf },
            seed,
        )?),
        LearnerSpec::Stack { members, folds } => {
            return fit_stack(members, features, targets, target, *folds, seed);
        }
    };
    Ok(FittedModel { kind: spec.name().into(), target, dim: features.cols(), params })
}

pub fn predict(model: &FittedModel, features: &Matrix) -> Result<Vec<f64>> {
    if features.cols() != model.dim {
        bail!(Argument, "model was trained on {} features but got {}", model.dim, features.cols());
    }
    Ok(features.iter_rows().map(|r| model.predict_row(r)).take(features.rows()).collect())
}
