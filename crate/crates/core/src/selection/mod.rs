//! Model selection: cross-validation, stepwise search and outlier screening.

pub mod cv;
pub mod outliers;
pub mod stepwise;

use crate::model::{Role, ScoreElement};

pub use cv::{assign_folds, cross_validate, r2_from_predictions, roc_auc, CvResult, CvScheme};
pub use outliers::{detect_outliers, OutlierReport, OutlierRow, CONSERVATIVE_THRESHOLD};
pub use stepwise::{
    stepwise_search, stepwise_search_interactive, Criterion, Direction, StepwiseOptions,
    StepwiseTrace,
};

/// Elements and covariates that a stepwise search may add.
#[derive(Debug, Clone, Default)]
pub struct Candidates {
    pub genetic: Vec<ScoreElement>,
    pub env1: Vec<ScoreElement>,
    pub env2: Vec<ScoreElement>,
    pub covariates: Vec<String>,
}

impl Candidates {
    pub fn for_role(&self, role: Role) -> &[ScoreElement] {
        match role {
            Role::Genetic => &self.genetic,
            Role::Env1 => &self.env1,
            Role::Env2 => &self.env2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.genetic.is_empty()
            && self.env1.is_empty()
            && self.env2.is_empty()
            && self.covariates.is_empty()
    }
}
