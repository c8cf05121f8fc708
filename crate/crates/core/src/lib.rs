//! Interaction models between L1-normalised weighted scores, fitted by
//! alternating block optimisation.
//!
//! A model combines a genetic score `g = Σ p_j g_j` with one or two
//! environmental scores `e = Σ q_l e_l` (elements may be products of
//! variables) in a two-way `1 + e + g + e:g` or three-way interaction
//! skeleton, plus covariates. [`fit_alternating`] estimates main coefficients
//! and weights; [`selection`] adds subject-grouped cross-validation,
//! stepwise score construction and outlier flagging; [`simulation`] runs the
//! synthetic two-way/three-way benchmark study.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(a > b)` also rejects NaN

pub mod config;
pub mod dataset;
pub mod error;
pub mod glm;
pub mod model;
pub mod optimizer;
pub mod selection;
pub mod simulation;

pub use dataset::{load_dataset, Dataset, LoadOptions};
pub use error::{Error, Result};
pub use glm::{fit_linear, fit_logistic, information_criteria, DesignFit};
pub use model::{
    compute_score, expand_score_columns, Family, ModelKind, ModelStructure, Role, ScoreElement,
    ScoreSpec,
};
pub use optimizer::{
    canonicalize, fit_alternating, normalize_l1, step_main, step_score, AlternatingFit, FitOptions,
};
pub use config::ModelConfig;
pub use selection::{
    cross_validate, detect_outliers, stepwise_search, Candidates, Criterion, CvResult, CvScheme,
    Direction, OutlierReport, StepwiseOptions, StepwiseTrace,
};
pub use simulation::{run_study, Scenario, SimulationReport};
