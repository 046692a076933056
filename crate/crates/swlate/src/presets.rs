//! Named learner presets accepted by `--learners` and `crossfit.learners`.

use swlate_core::crossfit::NuisanceLearners;
use swlate_core::learners::{ForestParams, LearnerSpec};

pub const NAMES: [&str; 4] = ["glm", "ensemble", "forest", "additive"];

pub fn learners(name: &str) -> Option<NuisanceLearners> {
    match name {
        "glm" => Some(NuisanceLearners::glm()),
        "ensemble" => Some(NuisanceLearners::ensemble()),
        "forest" => Some(NuisanceLearners::uniform(LearnerSpec::tree_ensemble(ForestParams::default()))),
        "additive" => Some(NuisanceLearners::uniform(LearnerSpec::AdditiveSpline { knots: 4, lambda: 0.0 })),
        _ => None,
    }
}
