//! Machine-readable reports and their text rendering.

use std::fmt::Write as _;

use gxescore_core::optimizer::AlternatingFit;
use gxescore_core::selection::outliers::OutlierReport;
use gxescore_core::selection::stepwise::StepwiseTrace;
use gxescore_core::selection::CvResult;
use gxescore_core::{canonicalize, Family, ModelKind};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct Envelope<T: Serialize> {
    pub schema_version: u32,
    pub tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_unix: Option<u64>,
    pub command: &'static str,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Serialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Serialize)]
pub struct WeightRow {
    pub element: String,
    pub weight: f64,
    pub se: Option<f64>,
    /// `|w| * 100`.
    pub contribution_pct: f64,
}

#[derive(Serialize)]
pub struct ScoreReport {
    pub role: String,
    pub name: String,
    pub fixed: bool,
    pub sign_flipped: bool,
    pub weights: Vec<WeightRow>,
}

#[derive(Serialize)]
pub struct FitReport {
    pub kind: &'static str,
    pub family: &'static str,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub loglik: f64,
    pub in_sample_r2: f64,
    pub aic: f64,
    pub bic: f64,
    pub parameters: usize,
    pub coefficients: Vec<Coefficient>,
    pub scores: Vec<ScoreReport>,
    pub objective_trace: Vec<f64>,
}

impl FitReport {
    /// Report the canonical parameterisation of `fit`.
    pub fn new(fit: &AlternatingFit) -> Self {
        let fit = canonicalize(fit.clone());
        let s = &fit.structure;
        let coefficients = fit
            .main_names
            .iter()
            .zip(&fit.main_coefficients)
            .zip(&fit.main_se)
            .map(|((term, &estimate), &se)| Coefficient {
                term: term.clone(),
                estimate,
                se,
            })
            .collect();
        let scores = s
            .scores()
            .map(|(role, score)| {
                let se = fit.weight_se[role.index()].as_ref();
                ScoreReport {
                    role: role.to_string(),
                    name: score.name().to_string(),
                    fixed: score.is_fixed(),
                    sign_flipped: fit.canonical_flips[role.index()],
                    weights: score
                        .column_names()
                        .into_iter()
                        .zip(score.weights())
                        .enumerate()
                        .map(|(j, (element, &weight))| WeightRow {
                            element,
                            weight,
                            se: se.map(|v| v[j]),
                            contribution_pct: weight.abs() * 100.0,
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            kind: match s.kind {
                ModelKind::TwoWay => "two_way",
                ModelKind::ThreeWay => "three_way",
            },
            family: match s.family {
                Family::GaussianIdentity => "gaussian",
                Family::BinomialLogit => "binomial",
            },
            n_obs: fit.n_obs,
            converged: fit.converged,
            iterations: fit.iterations,
            objective: fit.objective,
            loglik: fit.loglik,
            in_sample_r2: fit.in_sample_r2,
            aic: fit.aic,
            bic: fit.bic,
            parameters: fit.param_count,
            coefficients,
            scores,
            objective_trace: fit.objective_trace.clone(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} model, n = {}",
            self.kind.replace('_', "-"),
            self.family,
            self.n_obs
        );
        let _ = writeln!(
            out,
            "converged: {} after {} iterations, objective {:.6}",
            if self.converged { "yes" } else { "NO" },
            self.iterations,
            self.objective
        );
        let _ = writeln!(
            out,
            "R2 {:.4}  loglik {:.4}  AIC {:.4}  BIC {:.4}  parameters {}",
            self.in_sample_r2, self.loglik, self.aic, self.bic, self.parameters
        );
        let _ = writeln!(out, "\n{:<24} {:>12} {:>12}", "term", "estimate", "se");
        for c in &self.coefficients {
            let _ = writeln!(out, "{:<24} {:>12.4} {:>12.4}", c.term, c.estimate, c.se);
        }
        for s in &self.scores {
            let tag = if s.fixed { " (fixed)" } else { "" };
            let _ = writeln!(out, "\nscore {} [{}]{tag}", s.name, s.role);
            let _ = writeln!(out, "{:<24} {:>10} {:>10} {:>8}", "element", "weight", "se", "share");
            for w in &s.weights {
                let se = w.se.map_or("-".to_string(), |v| format!("{v:.4}"));
                let _ = writeln!(
                    out,
                    "{:<24} {:>10.4} {:>10} {:>7.0}%",
                    w.element, w.weight, se, w.contribution_pct
                );
            }
        }
        out
    }
}

#[derive(Serialize)]
pub struct CvReport {
    pub scheme: String,
    pub folds: usize,
    pub r2: f64,
    pub auc: Option<f64>,
    pub partial: bool,
    pub fold_errors: Vec<String>,
    pub predictions: Vec<Option<f64>>,
    pub row_folds: Vec<usize>,
}

impl CvReport {
    pub fn new(scheme: String, cv: &CvResult) -> Self {
        Self {
            scheme,
            folds: cv.fold_fits.len() + cv.fold_errors.len(),
            r2: cv.r2,
            auc: cv.auc,
            partial: cv.is_partial(),
            fold_errors: cv
                .fold_errors
                .iter()
                .map(|e| format!("fold {}: {}", e.fold, e.message))
                .collect(),
            predictions: cv
                .predictions
                .iter()
                .map(|p| (!p.is_nan()).then_some(*p))
                .collect(),
            row_folds: cv.row_folds.clone(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("cross-validation ({}, {} folds)\n", self.scheme, self.folds);
        let _ = writeln!(out, "R2 {:.4}", self.r2);
        if let Some(a) = self.auc {
            let _ = writeln!(out, "AUC {a:.4}");
        }
        for e in &self.fold_errors {
            let _ = writeln!(out, "failed {e}");
        }
        out
    }
}

#[derive(Serialize)]
pub struct StepReport {
    pub step: usize,
    pub action: String,
    pub target: String,
    pub element: String,
    pub before: f64,
    pub after: f64,
}

#[derive(Serialize)]
pub struct StepwiseReport {
    pub criterion: String,
    pub initial: f64,
    pub final_value: f64,
    pub steps: Vec<StepReport>,
    pub advisories: Vec<String>,
    pub final_fit: FitReport,
}

impl StepwiseReport {
    pub fn new(trace: &StepwiseTrace) -> Self {
        Self {
            criterion: trace.criterion.to_string(),
            initial: trace.initial_criterion,
            final_value: trace.final_criterion,
            steps: trace
                .steps
                .iter()
                .map(|s| StepReport {
                    step: s.step,
                    action: s.applied.action.to_string(),
                    target: s.applied.target.to_string(),
                    element: s.applied.element.clone(),
                    before: s.criterion_before,
                    after: s.criterion_after,
                })
                .collect(),
            advisories: trace.advisories.clone(),
            final_fit: FitReport::new(&trace.final_fit),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("stepwise search on {}: {:.4}", self.criterion, self.initial);
        let _ = writeln!(out, " -> {:.4}", self.final_value);
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{:>3}. {} {} `{}`  {:.4} -> {:.4}",
                s.step, s.action, s.target, s.element, s.before, s.after
            );
        }
        for a in &self.advisories {
            let _ = writeln!(out, "note: {a}");
        }
        out.push('\n');
        out.push_str(&self.final_fit.render());
        out
    }
}

#[derive(Serialize)]
pub struct FlaggedRow {
    /// 1-based data row after missing-row removal.
    pub row: usize,
    pub subject: String,
    pub residual: f64,
    pub z: f64,
}

#[derive(Serialize)]
pub struct OutliersReport {
    pub threshold: f64,
    pub residual_sd: f64,
    pub cv_r2: f64,
    pub flagged: Vec<FlaggedRow>,
}

impl OutliersReport {
    pub fn new(r: &OutlierReport) -> Self {
        Self {
            threshold: r.threshold,
            residual_sd: r.residual_sd,
            cv_r2: r.cv_r2,
            flagged: r
                .flagged
                .iter()
                .map(|f| FlaggedRow {
                    row: f.row + 1,
                    subject: f.subject.clone(),
                    residual: f.residual,
                    z: f.z,
                })
                .collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "outliers at |z| > {} (residual sd {:.4}, LOOCV R2 {:.4})\n",
            self.threshold, self.residual_sd, self.cv_r2
        );
        if self.flagged.is_empty() {
            out.push_str("none flagged\n");
        }
        for f in &self.flagged {
            let _ = writeln!(
                out,
                "row {:>6}  subject {:<12} residual {:>10.4}  z {:>7.3}",
                f.row, f.subject, f.residual, f.z
            );
        }
        out
    }
}

