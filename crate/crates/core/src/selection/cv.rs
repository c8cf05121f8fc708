//! Subject-grouped cross-validation.
//!
//! Folds are drawn over subjects, never rows, and before any model is fitted,
//! so every fold estimates its own weights. All rows of a held-out subject are
//! predicted by a fit that saw none of them.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Family, ModelStructure};
use crate::optimizer::{fit_alternating, FitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvScheme {
    LeaveOneOut,
    KFold(usize),
}

#[derive(Debug, Clone)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_train: usize,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct FoldError {
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    /// Fold of each subject, in [`Dataset::subject_groups`] order.
    pub subject_folds: Vec<usize>,
    /// Fold of each row (shared by all rows of one subject).
    pub row_folds: Vec<usize>,
    /// Out-of-fold predicted mean per row; NaN where the fold failed.
    pub predictions: Vec<f64>,
    pub r2: f64,
    /// Area under the ROC curve of the predictions (binomial family only).
    pub auc: Option<f64>,
    pub fold_fits: Vec<FoldSummary>,
    pub fold_errors: Vec<FoldError>,
}

impl CvResult {
    pub fn is_partial(&self) -> bool {
        !self.fold_errors.is_empty()
    }
}

/// Fold id per subject. A pure function of its arguments.
pub fn assign_folds(n_subjects: usize, scheme: CvScheme, seed: u64) -> Result<Vec<usize>> {
    if n_subjects < 2 {
        return Err(Error::CrossValidation(format!(
            "need at least 2 subjects, have {n_subjects}"
        )));
    }
    match scheme {
        CvScheme::LeaveOneOut => Ok((0..n_subjects).collect()),
        CvScheme::KFold(k) if k < 2 || k > n_subjects => Err(Error::CrossValidation(format!(
            "{k} folds requested for {n_subjects} subjects"
        ))),
        CvScheme::KFold(k) => {
            let mut order: Vec<usize> = (0..n_subjects).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut folds = vec![0; n_subjects];
            for (pos, subject) in order.into_iter().enumerate() {
                folds[subject] = pos % k;
            }
            Ok(folds)
        }
    }
}

/// `1 - Σ (y - ŷ)² / Σ (y - ȳ)²` over rows with a prediction, with `ȳ` the
/// mean of all outcomes.
pub fn r2_from_predictions(y: &[f64], predictions: &[f64]) -> f64 {
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let (mut sse, mut tss) = (0.0, 0.0);
    for (yi, pi) in y.iter().zip(predictions) {
        if pi.is_nan() {
            continue;
        }
        sse += (yi - pi).powi(2);
        tss += (yi - ybar).powi(2);
    }
    1.0 - sse / tss
}

/// Trapezoidal area under the ROC curve; `None` without both classes.
pub fn roc_auc(y: &[f64], scores: &[f64]) -> Option<f64> {
    let mut pairs: Vec<(f64, bool)> = y
        .iter()
        .zip(scores)
        .filter(|(_, s)| !s.is_nan())
        .map(|(&yi, &s)| (s, yi == 1.0))
        .collect();
    let pos = pairs.iter().filter(|p| p.1).count() as f64;
    let neg = pairs.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return None;
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < pairs.len() {
        // Tied scores move the ROC point diagonally.
        let (prev_tp, prev_fp) = (tp, fp);
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        area += (fp - prev_fp) / neg * (tp + prev_tp) / (2.0 * pos);
    }
    Some(area)
}

/// Cross-validate `structure` on `data`. Each fold is warm-started from the
/// full-data fit when that succeeds.
pub fn cross_validate(
    structure: &ModelStructure,
    data: &Dataset,
    scheme: CvScheme,
    options: &FitOptions,
    seed: u64,
) -> Result<CvResult> {
    let groups = data.subject_groups();
    let subject_folds = assign_folds(groups.len(), scheme, seed)?;
    let n_folds = subject_folds.iter().max().map_or(0, |m| m + 1);
    let mut row_folds = vec![0; data.n_rows()];
    for (g, rows) in groups.iter().enumerate() {
        for &r in rows {
            row_folds[r] = subject_folds[g];
        }
    }

    let start = match fit_alternating(structure, data, options) {
        Ok(full) => full.structure,
        Err(e) => {
            warn!("full-data fit failed ({e}); folds start from the configured weights");
            structure.clone()
        }
    };

    let outcomes: Vec<_> = (0..n_folds)
        .into_par_iter()
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..data.n_rows()).partition(|&r| row_folds[r] == fold);
            let fit = fit_alternating(&start, &data.subset(&train), options)?;
            let preds = fit.predict(&data.subset(&test))?;
            let summary = FoldSummary {
                fold,
                n_train: train.len(),
                converged: fit.converged,
                iterations: fit.iterations,
                objective: fit.objective,
            };
            Ok::<_, Error>((test, preds, summary))
        })
        .collect();

    let mut predictions = vec![f64::NAN; data.n_rows()];
    let mut fold_fits = Vec::new();
    let mut fold_errors = Vec::new();
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((rows, preds, summary)) => {
                for (r, p) in rows.into_iter().zip(preds) {
                    predictions[r] = p;
                }
                fold_fits.push(summary);
            }
            Err(e) => fold_errors.push(FoldError {
                fold,
                message: e.to_string(),
            }),
        }
    }
    if fold_fits.is_empty() {
        return Err(Error::CrossValidation(format!(
            "every fold failed; first error: {}",
            fold_errors[0].message
        )));
    }
    if !fold_errors.is_empty() {
        warn!("{} of {n_folds} folds failed", fold_errors.len());
    }

    let y = data.outcome();
    let auc = match structure.family {
        Family::BinomialLogit => roc_auc(y, &predictions),
        Family::GaussianIdentity => None,
    };
    Ok(CvResult {
        subject_folds,
        row_folds,
        r2: r2_from_predictions(y, &predictions),
        predictions,
        auc,
        fold_fits,
        fold_errors,
    })
}
