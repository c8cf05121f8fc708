//! Outlier flagging from standardised leave-one-subject-out residuals.

use log::warn;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Family, ModelStructure};
use crate::optimizer::FitOptions;
use crate::selection::cv::{cross_validate, CvScheme};

/// |z| > 2.8, roughly p = .005.
pub const CONSERVATIVE_THRESHOLD: f64 = 2.8;
/// |z| > 2.5, roughly p = .01.
pub const LIBERAL_THRESHOLD: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierRow {
    pub row: usize,
    pub subject: String,
    pub residual: f64,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct OutlierReport {
    pub threshold: f64,
    /// Out-of-fold residual per row (Pearson residuals for binomial models);
    /// NaN where the fold failed.
    pub residuals: Vec<f64>,
    pub residual_sd: f64,
    pub z: Vec<f64>,
    pub flagged: Vec<OutlierRow>,
    pub cv_r2: f64,
}

/// Divide by the sample standard deviation and flag |z| above `threshold`.
/// NaN entries are ignored.
pub fn standardize(residuals: &[f64]) -> Result<(f64, Vec<f64>)> {
    let vals: Vec<f64> = residuals.iter().copied().filter(|v| !v.is_nan()).collect();
    if vals.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    let sd = var.sqrt();
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::ZeroVariance);
    }
    Ok((sd, residuals.iter().map(|r| r / sd).collect()))
}

pub fn detect_outliers(
    structure: &ModelStructure,
    data: &Dataset,
    threshold: f64,
    options: &FitOptions,
) -> Result<OutlierReport> {
    let cv = cross_validate(structure, data, CvScheme::LeaveOneOut, options, options.seed)?;
    if cv.is_partial() {
        warn!(
            "{} held-out subjects could not be predicted and are not screened",
            cv.fold_errors.len()
        );
    }
    let y = data.outcome();
    let residuals: Vec<f64> = y
        .iter()
        .zip(&cv.predictions)
        .map(|(yi, mu)| match structure.family {
            Family::GaussianIdentity => yi - mu,
            Family::BinomialLogit => (yi - mu) / (mu * (1.0 - mu)).sqrt(),
        })
        .collect();
    let (residual_sd, z) = standardize(&residuals)?;
    let labels = data.subject_labels();
    let flagged = z
        .iter()
        .enumerate()
        .filter(|(_, z)| z.abs() > threshold)
        .map(|(row, &z)| OutlierRow {
            row,
            subject: labels[row].clone(),
            residual: residuals[row],
            z,
        })
        .collect();
    Ok(OutlierReport {
        threshold,
        residuals,
        residual_sd,
        z,
        flagged,
        cv_r2: cv.r2,
    })
}
