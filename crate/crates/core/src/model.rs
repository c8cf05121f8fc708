//! Score specifications and the interaction-model skeleton.

use std::collections::HashSet;
use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

const L1_TOLERANCE: f64 = 1e-10;

/// One entry of a score: a single variable, or the product of several.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScoreElement {
    factors: Vec<String>,
}

impl ScoreElement {
    pub fn new<S: Into<String>>(factors: impl IntoIterator<Item = S>) -> Result<Self> {
        let factors: Vec<String> = factors.into_iter().map(Into::into).collect();
        if factors.is_empty() {
            return Err(Error::InvalidModel("score element has no factors".into()));
        }
        let mut seen = HashSet::new();
        for f in &factors {
            if f.is_empty() {
                return Err(Error::InvalidModel("empty factor name".into()));
            }
            if !seen.insert(f.as_str()) {
                return Err(Error::InvalidModel(format!(
                    "factor `{f}` repeated within one element"
                )));
            }
        }
        Ok(Self { factors })
    }

    pub fn single(name: &str) -> Self {
        Self {
            factors: vec![name.to_string()],
        }
    }

    /// Parse `a` or `a*b*c`.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.split('*').map(str::trim))
    }

    pub fn factors(&self) -> &[String] {
        &self.factors
    }

    pub fn is_product(&self) -> bool {
        self.factors.len() > 1
    }

    /// Order-insensitive identity, so that `a*b` and `b*a` compare equal.
    fn key(&self) -> Vec<&str> {
        let mut k: Vec<&str> = self.factors.iter().map(String::as_str).collect();
        k.sort_unstable();
        k
    }

    pub fn same_as(&self, other: &ScoreElement) -> bool {
        self.key() == other.key()
    }
}

impl fmt::Display for ScoreElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.factors.join("*"))
    }
}

/// A latent score: weighted sum of its elements with Σ|w| = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSpec {
    name: String,
    elements: Vec<ScoreElement>,
    weights: Vec<f64>,
    fixed: bool,
}

impl ScoreSpec {
    /// Equal starting weights `1/n_s`.
    pub fn new(name: &str, elements: Vec<ScoreElement>) -> Result<Self> {
        if name.is_empty() {
            return Err(Error::InvalidModel("score name is empty".into()));
        }
        if elements.is_empty() {
            return Err(Error::InvalidModel(format!("score `{name}` has no elements")));
        }
        for (i, a) in elements.iter().enumerate() {
            if elements[..i].iter().any(|b| a.same_as(b)) {
                return Err(Error::InvalidModel(format!(
                    "element `{a}` appears twice in score `{name}`"
                )));
            }
        }
        let k = elements.len();
        Ok(Self {
            name: name.to_string(),
            elements,
            weights: vec![1.0 / k as f64; k],
            fixed: false,
        })
    }

    /// Convenience constructor from element strings such as `"g1*g3"`.
    pub fn parse(name: &str, elements: &[&str]) -> Result<Self> {
        let elements = elements
            .iter()
            .map(|e| ScoreElement::parse(e))
            .collect::<Result<_>>()?;
        Self::new(name, elements)
    }

    /// Replace the weights. Vectors off the unit L1 sphere are rescaled with a
    /// warning.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.set_weights(weights)?;
        Ok(self)
    }

    pub fn fixed(mut self, fixed: bool) -> Self {
        self.fixed = fixed;
        self
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.elements.len() {
            return Err(Error::InvalidModel(format!(
                "score `{}` has {} elements but {} weights",
                self.name,
                self.elements.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "score `{}` has non-finite weights",
                self.name
            )));
        }
        let l1: f64 = weights.iter().map(|w| w.abs()).sum();
        if (l1 - 1.0).abs() > L1_TOLERANCE {
            if l1 == 0.0 {
                return Err(Error::ZeroWeights);
            }
            warn!(
                "weights of score `{}` sum to {l1} in absolute value; renormalising",
                self.name
            );
            self.weights = weights.iter().map(|w| w / l1).collect();
        } else {
            self.weights = weights;
        }
        Ok(())
    }

    pub(crate) fn set_weights_unchecked(&mut self, weights: Vec<f64>) {
        debug_assert_eq!(weights.len(), self.elements.len());
        self.weights = weights;
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn elements(&self) -> &[ScoreElement] {
        &self.elements
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_fixed(&self) -> bool {
        self.fixed
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Free weights once the L1 constraint is accounted for.
    pub fn free_parameters(&self) -> usize {
        if self.fixed {
            0
        } else {
            self.elements.len() - 1
        }
    }

    pub fn position(&self, element: &ScoreElement) -> Option<usize> {
        self.elements.iter().position(|e| e.same_as(element))
    }

    /// Append an element with weight zero; the L1 norm is unchanged.
    pub fn push_element(&mut self, element: ScoreElement) -> Result<()> {
        if self.position(&element).is_some() {
            return Err(Error::InvalidModel(format!(
                "element `{element}` already in score `{}`",
                self.name
            )));
        }
        self.elements.push(element);
        self.weights.push(0.0);
        Ok(())
    }

    /// Remove an element and renormalise what is left (equal weights if the
    /// remainder is all zero).
    pub fn remove_element(&mut self, index: usize) -> Result<ScoreElement> {
        if self.elements.len() < 2 {
            return Err(Error::InvalidModel(format!(
                "cannot remove the last element of score `{}`",
                self.name
            )));
        }
        let element = self.elements.remove(index);
        self.weights.remove(index);
        let l1: f64 = self.weights.iter().map(|w| w.abs()).sum();
        let k = self.weights.len() as f64;
        if l1 > 0.0 {
            self.weights.iter_mut().for_each(|w| *w /= l1);
        } else {
            self.weights.iter_mut().for_each(|w| *w = 1.0 / k);
        }
        Ok(element)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.elements.iter().map(ToString::to_string).collect()
    }
}

/// Column `j` is the elementwise product of the factors of element `j`.
pub fn expand_score_columns(score: &ScoreSpec, data: &Dataset) -> Result<DMatrix<f64>> {
    let n = data.n_rows();
    let mut out = DMatrix::from_element(n, score.len(), 1.0);
    for (j, element) in score.elements().iter().enumerate() {
        for factor in element.factors() {
            let col = data.column(factor)?;
            for (dst, src) in out.column_mut(j).iter_mut().zip(col) {
                *dst *= src;
            }
        }
    }
    Ok(out)
}

pub fn compute_score(score: &ScoreSpec, data: &Dataset) -> Result<DVector<f64>> {
    let columns = expand_score_columns(score, data)?;
    Ok(columns * DVector::from_column_slice(score.weights()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    TwoWay,
    ThreeWay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    GaussianIdentity,
    BinomialLogit,
}

/// Position of a score within the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Genetic,
    Env1,
    Env2,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Genetic, Role::Env1, Role::Env2];

    pub fn index(self) -> usize {
        self as usize
    }

    fn bit(self) -> u8 {
        1 << self.index()
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Genetic => "genetic",
            Role::Env1 => "env1",
            Role::Env2 => "env2",
        })
    }
}

/// A main-effect or interaction term: a product of distinct scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Term(u8);

impl Term {
    pub fn of(roles: &[Role]) -> Self {
        Term(roles.iter().fold(0, |m, r| m | r.bit()))
    }

    pub fn contains(self, role: Role) -> bool {
        self.0 & role.bit() != 0
    }

    pub fn roles(self) -> impl Iterator<Item = Role> {
        Role::ALL.into_iter().filter(move |r| self.contains(*r))
    }
}

pub const DEFAULT_INTERCEPT: &str = "(Intercept)";

/// Interaction skeleton: scores, intercept indicators, covariates and family.
///
/// An empty `intercepts` list means a single constant intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStructure {
    pub kind: ModelKind,
    pub genetic: ScoreSpec,
    pub env1: ScoreSpec,
    pub env2: Option<ScoreSpec>,
    pub covariates: Vec<String>,
    pub intercepts: Vec<String>,
    pub family: Family,
}

impl ModelStructure {
    pub fn two_way(genetic: ScoreSpec, env: ScoreSpec) -> Self {
        Self {
            kind: ModelKind::TwoWay,
            genetic,
            env1: env,
            env2: None,
            covariates: Vec::new(),
            intercepts: Vec::new(),
            family: Family::GaussianIdentity,
        }
    }

    pub fn three_way(genetic: ScoreSpec, env1: ScoreSpec, env2: ScoreSpec) -> Self {
        Self {
            kind: ModelKind::ThreeWay,
            genetic,
            env1,
            env2: Some(env2),
            covariates: Vec::new(),
            intercepts: Vec::new(),
            family: Family::GaussianIdentity,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<String>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_intercepts(mut self, intercepts: Vec<String>) -> Self {
        self.intercepts = intercepts;
        self
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn roles(&self) -> Vec<Role> {
        match self.kind {
            ModelKind::TwoWay => vec![Role::Genetic, Role::Env1],
            ModelKind::ThreeWay => vec![Role::Genetic, Role::Env1, Role::Env2],
        }
    }

    pub fn score(&self, role: Role) -> Option<&ScoreSpec> {
        match role {
            Role::Genetic => Some(&self.genetic),
            Role::Env1 => Some(&self.env1),
            Role::Env2 => self.env2.as_ref(),
        }
    }

    pub fn score_mut(&mut self, role: Role) -> Option<&mut ScoreSpec> {
        match role {
            Role::Genetic => Some(&mut self.genetic),
            Role::Env1 => Some(&mut self.env1),
            Role::Env2 => self.env2.as_mut(),
        }
    }

    pub fn scores(&self) -> impl Iterator<Item = (Role, &ScoreSpec)> {
        self.roles()
            .into_iter()
            .filter_map(move |r| self.score(r).map(|s| (r, s)))
    }

    /// Score terms in design order: `e, g, e:g` for two-way models and
    /// `e1, e2, g, e1:e2, e1:g, e2:g, e1:e2:g` for three-way models.
    pub fn terms(&self) -> Vec<Term> {
        use Role::*;
        match self.kind {
            ModelKind::TwoWay => vec![
                Term::of(&[Env1]),
                Term::of(&[Genetic]),
                Term::of(&[Env1, Genetic]),
            ],
            ModelKind::ThreeWay => vec![
                Term::of(&[Env1]),
                Term::of(&[Env2]),
                Term::of(&[Genetic]),
                Term::of(&[Env1, Env2]),
                Term::of(&[Env1, Genetic]),
                Term::of(&[Env2, Genetic]),
                Term::of(&[Env1, Env2, Genetic]),
            ],
        }
    }

    pub fn term_name(&self, term: Term) -> String {
        // Design order lists environments before the genetic score.
        let order = [Role::Env1, Role::Env2, Role::Genetic];
        order
            .iter()
            .filter(|r| term.contains(**r))
            .filter_map(|r| self.score(*r).map(ScoreSpec::name))
            .collect::<Vec<_>>()
            .join(":")
    }

    pub fn intercept_names(&self) -> Vec<String> {
        if self.intercepts.is_empty() {
            vec![DEFAULT_INTERCEPT.to_string()]
        } else {
            self.intercepts.clone()
        }
    }

    /// Names of the main-model coefficients in design order.
    pub fn main_names(&self) -> Vec<String> {
        let mut names = self.intercept_names();
        names.extend(self.terms().into_iter().map(|t| self.term_name(t)));
        names.extend(self.covariates.iter().cloned());
        names
    }

    /// Intercepts plus score terms, without covariates.
    pub fn n_structural(&self) -> usize {
        self.intercept_names().len() + self.terms().len()
    }

    /// Parameters actually estimated: main coefficients, covariates, the
    /// `n_s - 1` free weights of every estimated score, and the Gaussian scale.
    pub fn true_parameter_count(&self) -> usize {
        let weights: usize = self.scores().map(|(_, s)| s.free_parameters()).sum();
        let scale = usize::from(self.family == Family::GaussianIdentity);
        self.n_structural() + self.covariates.len() + weights + scale
    }

    /// Columns the model reads from a dataset, outcome excluded.
    pub fn used_columns(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |c: &str| {
            if !out.iter().any(|o| o == c) {
                out.push(c.to_string());
            }
        };
        for (_, s) in self.scores() {
            for e in s.elements() {
                e.factors().iter().for_each(|f| push(f));
            }
        }
        self.covariates.iter().for_each(|c| push(c));
        self.intercepts.iter().for_each(|c| push(c));
        out
    }

    /// Check internal consistency, and against `data` when given.
    pub fn validate(&self, data: Option<&Dataset>) -> Result<()> {
        match (self.kind, &self.env2) {
            (ModelKind::ThreeWay, None) => {
                return Err(Error::InvalidModel(
                    "three-way model needs a second environmental score".into(),
                ))
            }
            (ModelKind::TwoWay, Some(_)) => {
                return Err(Error::InvalidModel(
                    "two-way model cannot have a second environmental score".into(),
                ))
            }
            _ => {}
        }
        let mut names = HashSet::new();
        for (_, s) in self.scores() {
            if !names.insert(s.name()) {
                return Err(Error::InvalidModel(format!(
                    "score name `{}` used twice",
                    s.name()
                )));
            }
        }
        let mut seen = HashSet::new();
        for c in self.covariates.iter().chain(&self.intercepts) {
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidModel(format!("column `{c}` listed twice")));
            }
        }
        let Some(data) = data else { return Ok(()) };

        for c in self.used_columns() {
            data.column(&c)?;
        }
        if !self.intercepts.is_empty() {
            let cols: Vec<&[f64]> = self
                .intercepts
                .iter()
                .map(|c| data.column(c))
                .collect::<Result<_>>()?;
            for row in 0..data.n_rows() {
                let mut active = 0;
                for col in &cols {
                    match col[row] {
                        1.0 => active += 1,
                        0.0 => {}
                        v => {
                            return Err(Error::InvalidData(format!(
                                "intercept indicator has value {v} at row {row}; expected 0 or 1"
                            )))
                        }
                    }
                }
                if active != 1 {
                    return Err(Error::InvalidData(format!(
                        "row {row} has {active} active intercepts; expected exactly one"
                    )));
                }
            }
        }
        if self.family == Family::BinomialLogit {
            if let Some(v) = data.outcome().iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidData(format!(
                    "binomial outcome must be 0 or 1, found {v}"
                )));
            }
        }
        Ok(())
    }
}
