//! Alternating block optimisation of the main coefficients and the score
//! weights.
//!
//! Each iteration fits the main model with the scores held fixed, then each
//! non-fixed score in turn (genetic, first environment, second environment)
//! with everything else held fixed. A score block is a regression of the
//! partial residual `y - r0` on `r1 * element_j` with no intercept, where `r0`
//! collects every term of the linear predictor that does not involve the
//! score and `r1` is the coefficient multiplying it. For the logistic family
//! `r0` enters as an offset instead.
//!
//! After a block the raw weights are divided by their L1 norm `c` and every
//! main coefficient of a term containing that score is multiplied by `c`.
//! That leaves the linear predictor unchanged, so the next block starts from
//! exactly the objective the previous one reached and the recorded objective
//! trace is monotone.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{self, fit_linear, fit_logistic, information_criteria, DesignFit};
use crate::model::{expand_score_columns, Family, ModelStructure, Role, Term};

pub const DEFAULT_DELTA: f64 = 1e-4;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_SEED: u64 = 20_170_831;
/// Relative slack allowed when checking the objective trace for monotonicity.
pub const MONOTONE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Convergence threshold on the largest absolute change of any
    /// normalised weight between iterations.
    pub delta: f64,
    pub max_iterations: usize,
    /// Extra starts with random-sign equal-magnitude weights; the fit with the
    /// smallest objective wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            restarts: 0,
            seed: DEFAULT_SEED,
        }
    }
}

/// Result of [`fit_alternating`].
#[derive(Debug, Clone)]
pub struct AlternatingFit {
    /// The model with its final weights.
    pub structure: ModelStructure,
    pub main_names: Vec<String>,
    pub main_coefficients: Vec<f64>,
    /// Standard errors of the main coefficients, conditional on the weights.
    pub main_se: Vec<f64>,
    /// Conditional standard errors of the normalised weights, indexed by
    /// [`Role::index`]; `None` for fixed or absent scores.
    pub weight_se: [Option<Vec<f64>>; 3],
    /// Objective (RSS or deviance) after every block fit, in order.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub param_count: usize,
    pub n_obs: usize,
    pub in_sample_r2: f64,
    /// Sign flips applied per score since fitting, indexed by [`Role::index`].
    pub canonical_flips: [bool; 3],
}

impl AlternatingFit {
    pub fn weights(&self, role: Role) -> Option<&[f64]> {
        self.structure.score(role).map(|s| s.weights())
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.main_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.main_coefficients[i])
    }

    /// Linear predictor on new data.
    pub fn linear_predictor(&self, data: &Dataset) -> Result<DVector<f64>> {
        let prepared = Prepared::new(&self.structure, data)?;
        let scores = prepared.scores_for(&self.structure);
        Ok(prepared.design(&scores) * DVector::from_column_slice(&self.main_coefficients))
    }

    /// Predicted mean on new data.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        let eta = self.linear_predictor(data)?;
        Ok(match self.structure.family {
            Family::GaussianIdentity => eta.iter().copied().collect(),
            Family::BinomialLogit => eta.iter().map(|&t| glm::logistic(t)).collect(),
        })
    }

    /// Negate one score and every main coefficient whose term contains it.
    /// Predictions are unchanged.
    pub fn flip_sign(&mut self, role: Role) {
        let Some(score) = self.structure.score_mut(role) else {
            return;
        };
        let flipped: Vec<f64> = score.weights().iter().map(|w| -w).collect();
        score.set_weights_unchecked(flipped);
        let offset = self.structure.intercept_names().len();
        for (k, term) in self.structure.terms().into_iter().enumerate() {
            if term.contains(role) {
                self.main_coefficients[offset + k] = -self.main_coefficients[offset + k];
            }
        }
        self.canonical_flips[role.index()] ^= true;
    }

    /// True when the objective trace never increases beyond
    /// [`MONOTONE_TOLERANCE`] relative slack.
    pub fn is_monotone(&self) -> bool {
        trace_is_monotone(&self.objective_trace, MONOTONE_TOLERANCE)
    }
}

pub fn trace_is_monotone(trace: &[f64], rel_tol: f64) -> bool {
    let floor = trace.first().copied().unwrap_or(0.0).abs() * f64::EPSILON;
    trace
        .windows(2)
        .all(|w| w[1] <= w[0] + rel_tol * w[0].abs() + floor)
}

/// Divide by the L1 norm, keeping signs.
pub fn normalize_l1(raw: &[f64]) -> Result<Vec<f64>> {
    let l1: f64 = raw.iter().map(|v| v.abs()).sum();
    if !(l1 > 0.0) || !l1.is_finite() {
        return Err(Error::ZeroWeights);
    }
    Ok(raw.iter().map(|v| v / l1).collect())
}

/// Numeric columns of a model evaluated on one dataset.
struct Prepared {
    family: Family,
    y: DVector<f64>,
    intercepts: DMatrix<f64>,
    covariates: DMatrix<f64>,
    elements: [Option<DMatrix<f64>>; 3],
    terms: Vec<Term>,
    main_names: Vec<String>,
}

type Scores = [Option<DVector<f64>>; 3];

impl Prepared {
    fn new(structure: &ModelStructure, data: &Dataset) -> Result<Self> {
        let n = data.n_rows();
        let intercepts = if structure.intercepts.is_empty() {
            DMatrix::from_element(n, 1, 1.0)
        } else {
            columns(data, &structure.intercepts)?
        };
        let mut elements: [Option<DMatrix<f64>>; 3] = Default::default();
        for (role, score) in structure.scores() {
            elements[role.index()] = Some(expand_score_columns(score, data)?);
        }
        Ok(Self {
            family: structure.family,
            y: DVector::from_column_slice(data.outcome()),
            intercepts,
            covariates: columns(data, &structure.covariates)?,
            elements,
            terms: structure.terms(),
            main_names: structure.main_names(),
        })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn score(&self, role: Role, weights: &[f64]) -> DVector<f64> {
        self.elements[role.index()].as_ref().expect("role present") * DVector::from_column_slice(weights)
    }

    fn scores_for(&self, structure: &ModelStructure) -> Scores {
        let mut out: Scores = Default::default();
        for (role, s) in structure.scores() {
            out[role.index()] = Some(self.score(role, s.weights()));
        }
        out
    }

    /// Product of the scores in `term`, skipping `except`.
    fn term_column(&self, term: Term, scores: &Scores, except: Option<Role>) -> DVector<f64> {
        let mut col = DVector::from_element(self.n(), 1.0);
        for role in term.roles().filter(|r| Some(*r) != except) {
            col.component_mul_assign(scores[role.index()].as_ref().expect("role present"));
        }
        col
    }

    fn n_main(&self) -> usize {
        self.intercepts.ncols() + self.terms.len() + self.covariates.ncols()
    }

    fn design(&self, scores: &Scores) -> DMatrix<f64> {
        let n = self.n();
        let ni = self.intercepts.ncols();
        let nt = self.terms.len();
        let mut x = DMatrix::zeros(n, self.n_main());
        x.columns_mut(0, ni).copy_from(&self.intercepts);
        for (k, term) in self.terms.iter().enumerate() {
            x.set_column(ni + k, &self.term_column(*term, scores, None));
        }
        x.columns_mut(ni + nt, self.covariates.ncols())
            .copy_from(&self.covariates);
        x
    }

    fn fit(&self, x: &DMatrix<f64>, offset: Option<&DVector<f64>>) -> Result<DesignFit> {
        match self.family {
            Family::GaussianIdentity => fit_linear(x, &self.y, offset),
            Family::BinomialLogit => fit_logistic(x, &self.y, offset),
        }
    }

    fn fit_main(&self, scores: &Scores) -> Result<DesignFit> {
        self.fit(&self.design(scores), None)
            .map_err(|e| e.rename_column(&self.main_names))
    }

    /// Raw (unnormalised) weights for the score in `role` given the main
    /// coefficients and the other scores.
    fn fit_score(
        &self,
        role: Role,
        beta: &DVector<f64>,
        scores: &Scores,
        score_name: &str,
        element_names: &[String],
    ) -> Result<DesignFit> {
        let ni = self.intercepts.ncols();
        let nt = self.terms.len();
        let mut r0 = &self.intercepts * beta.rows(0, ni);
        if self.covariates.ncols() > 0 {
            r0 += &self.covariates * beta.rows(ni + nt, self.covariates.ncols());
        }
        let mut r1 = DVector::zeros(self.n());
        for (k, term) in self.terms.iter().enumerate() {
            let coef = beta[ni + k];
            if term.contains(role) {
                r1.axpy(coef, &self.term_column(*term, scores, Some(role)), 1.0);
            } else {
                r0.axpy(coef, &self.term_column(*term, scores, None), 1.0);
            }
        }
        if r1.iter().all(|v| *v == 0.0) {
            return Err(Error::Unidentified(score_name.to_string()));
        }
        let mut x = self.elements[role.index()].clone().expect("role present");
        for (i, mut row) in x.row_iter_mut().enumerate() {
            row *= r1[i];
        }
        self.fit(&x, Some(&r0))
            .map_err(|e| e.rename_column(element_names))
    }
}

fn columns(data: &Dataset, names: &[String]) -> Result<DMatrix<f64>> {
    let n = data.n_rows();
    let mut m = DMatrix::zeros(n, names.len());
    for (j, name) in names.iter().enumerate() {
        m.column_mut(j)
            .copy_from_slice(data.column(name)?);
    }
    Ok(m)
}

/// Fit the main model with the score weights currently in `structure`.
pub fn step_main(structure: &ModelStructure, data: &Dataset) -> Result<DesignFit> {
    let prepared = Prepared::new(structure, data)?;
    prepared.fit_main(&prepared.scores_for(structure))
}

/// Raw weights of one score with the main coefficients (in
/// [`ModelStructure::main_names`] order) and the other scores held fixed.
/// The result is not normalised.
pub fn step_score(
    structure: &ModelStructure,
    data: &Dataset,
    target: Role,
    main_coefficients: &[f64],
) -> Result<Vec<f64>> {
    let score = structure
        .score(target)
        .ok_or_else(|| Error::InvalidModel(format!("model has no {target} score")))?;
    if score.is_fixed() {
        return Err(Error::InvalidModel(format!(
            "score `{}` has fixed weights",
            score.name()
        )));
    }
    let prepared = Prepared::new(structure, data)?;
    if main_coefficients.len() != prepared.n_main() {
        return Err(Error::InvalidModel(format!(
            "expected {} main coefficients, got {}",
            prepared.n_main(),
            main_coefficients.len()
        )));
    }
    let beta = DVector::from_column_slice(main_coefficients);
    let fit = prepared.fit_score(
        target,
        &beta,
        &prepared.scores_for(structure),
        score.name(),
        &score.column_names(),
    )?;
    Ok(fit.coefficients.iter().copied().collect())
}

/// Estimate main coefficients and score weights by alternating block fits.
pub fn fit_alternating(
    structure: &ModelStructure,
    data: &Dataset,
    options: &FitOptions,
) -> Result<AlternatingFit> {
    structure.validate(Some(data))?;
    let prepared = Prepared::new(structure, data)?;
    let first = fit_from(&prepared, structure.clone(), options);
    if options.restarts == 0 {
        return first;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best = first;
    for r in 0..options.restarts {
        let mut start = structure.clone();
        for role in structure.roles() {
            let s = start.score_mut(role).expect("role present");
            if s.is_fixed() {
                continue;
            }
            let k = s.len() as f64;
            let w = (0..s.len())
                .map(|_| if rng.random::<bool>() { 1.0 / k } else { -1.0 / k })
                .collect();
            s.set_weights_unchecked(w);
        }
        let candidate = fit_from(&prepared, start, options);
        debug!(
            "restart {r}: objective {:?}",
            candidate.as_ref().map(|f| f.objective)
        );
        best = match (best, candidate) {
            (Ok(b), Ok(c)) => Ok(if c.objective < b.objective { c } else { b }),
            (Err(_), Ok(c)) => Ok(c),
            (b, Err(_)) => b,
        };
    }
    best
}

fn fit_from(
    prepared: &Prepared,
    mut structure: ModelStructure,
    options: &FitOptions,
) -> Result<AlternatingFit> {
    let roles = structure.roles();
    let free: Vec<Role> = roles
        .iter()
        .copied()
        .filter(|r| !structure.score(*r).expect("role present").is_fixed())
        .collect();
    let names: Vec<(String, Vec<String>)> = roles
        .iter()
        .map(|r| {
            let s = structure.score(*r).expect("role present");
            (s.name().to_string(), s.column_names())
        })
        .collect();

    let mut weights: [Vec<f64>; 3] = Default::default();
    for (role, s) in structure.scores() {
        weights[role.index()] = s.weights().to_vec();
    }
    let mut scores = prepared.scores_for(&structure);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = free.is_empty();
    let mut block_fits: [Option<(DesignFit, f64)>; 3] = Default::default();
    let ni = prepared.intercepts.ncols();

    if !free.is_empty() {
        for _ in 0..options.max_iterations {
            iterations += 1;
            let main = prepared.fit_main(&scores)?;
            trace.push(main.objective);
            let mut beta = main.coefficients;
            let mut max_change = 0.0f64;

            for &role in &free {
                let (name, elements) = &names[roles.iter().position(|r| *r == role).unwrap()];
                let sub = prepared.fit_score(role, &beta, &scores, name, elements)?;
                let raw: Vec<f64> = sub.coefficients.iter().copied().collect();
                let c: f64 = raw.iter().map(|v| v.abs()).sum();
                let normalized = normalize_l1(&raw)?;
                for (k, term) in prepared.terms.iter().enumerate() {
                    if term.contains(role) {
                        beta[ni + k] *= c;
                    }
                }
                let previous = &weights[role.index()];
                max_change = normalized
                    .iter()
                    .zip(previous)
                    .fold(max_change, |m, (a, b)| m.max((a - b).abs()));
                scores[role.index()] = Some(prepared.score(role, &normalized));
                weights[role.index()] = normalized;
                trace.push(sub.objective);
                block_fits[role.index()] = Some((sub, c));
            }
            if max_change < options.delta {
                converged = true;
                break;
            }
        }
        if !converged {
            warn!(
                "alternating fit did not converge in {} iterations",
                options.max_iterations
            );
        }
    }

    // Final main fit at the final weights.
    let main = prepared.fit_main(&scores)?;
    trace.push(main.objective);
    if free.is_empty() {
        iterations = 1;
    }

    for &role in &roles {
        structure
            .score_mut(role)
            .expect("role present")
            .set_weights_unchecked(weights[role.index()].clone());
    }
    let mut weight_se: [Option<Vec<f64>>; 3] = Default::default();
    for &role in &free {
        if let Some((sub, c)) = &block_fits[role.index()] {
            weight_se[role.index()] = Some(sub.standard_errors().iter().map(|s| s / c).collect());
        }
    }

    let n = prepared.n();
    let param_count = structure.true_parameter_count();
    let (aic, bic) = information_criteria(main.loglik, param_count, n);
    let ybar = prepared.y.mean();
    let tss: f64 = prepared.y.iter().map(|v| (v - ybar).powi(2)).sum();
    let sse = main.residuals.norm_squared();
    let fit = AlternatingFit {
        main_names: prepared.main_names.clone(),
        main_coefficients: main.coefficients.iter().copied().collect(),
        main_se: main.standard_errors().iter().copied().collect(),
        weight_se,
        objective: main.objective,
        loglik: main.loglik,
        aic,
        bic,
        param_count,
        n_obs: n,
        in_sample_r2: 1.0 - sse / tss,
        objective_trace: trace,
        iterations,
        converged,
        canonical_flips: [false; 3],
        structure,
    };
    if !fit.is_monotone() {
        warn!("objective trace is not monotone: {:?}", fit.objective_trace);
    }
    Ok(fit)
}

/// Pick the sign of each score so that its largest-magnitude weight is
/// positive, compensating in the main coefficients.
pub fn canonicalize(mut fit: AlternatingFit) -> AlternatingFit {
    for role in fit.structure.roles() {
        let w = fit.weights(role).expect("role present");
        let mut lead = 0;
        for (j, v) in w.iter().enumerate() {
            if v.abs() > w[lead].abs() {
                lead = j;
            }
        }
        if w[lead] < 0.0 {
            fit.flip_sign(role);
        }
    }
    fit
}
