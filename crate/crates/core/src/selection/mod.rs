//! Evaluation metrics and the model-selection protocol.

mod compare;
mod cv;
mod metrics;
mod split;

pub use compare::{compare_architectures, ComparisonReport, ConfigurationResult};
pub use cv::{cross_validate, cross_validate_matrix, stratified_folds, CvOptions, CvReport, GridPointResult};
pub use metrics::{auc, cumulative_lift, lift_svg, read_lift_csv, write_lift_csv, AucScore, LiftCurve, LiftPoint};
pub use split::{split_train_test, train_size};

use serde::{Deserialize, Serialize};

use crate::learners::HyperParams;

/// Hyper-parameter grids per learner family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub logistic: Vec<HyperParams>,
    pub boosting: Vec<HyperParams>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            logistic: [0.001, 0.01, 0.1, 1.0].into_iter().map(HyperParams::logistic).collect(),
            boosting: [50, 100, 200].into_iter().map(HyperParams::boosting).collect(),
        }
    }
}

impl Grids {
    /// One point per family.
    pub fn single_point() -> Self {
        Self {
            logistic: vec![HyperParams::logistic(0.01)],
            boosting: vec![HyperParams::boosting(100)],
        }
    }

    pub fn for_learner(&self, kind: crate::learners::LearnerKind) -> &[HyperParams] {
        match kind {
            crate::learners::LearnerKind::Logistic => &self.logistic,
            crate::learners::LearnerKind::Adaboost => &self.boosting,
        }
    }
}
