//! Stepwise search over score elements and covariates.

use std::fmt;
use std::io::{BufRead, Write};

use log::{debug, info};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Family, ModelStructure, Role, ScoreElement};
use crate::optimizer::{canonicalize, fit_alternating, AlternatingFit, FitOptions};
use crate::selection::cv::{cross_validate, CvScheme};
use crate::selection::Candidates;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aic,
    Bic,
    CvR2,
    CvAuc,
}

impl Criterion {
    pub fn higher_is_better(self) -> bool {
        matches!(self, Criterion::CvR2 | Criterion::CvAuc)
    }

    /// Is `a` strictly better than `b`?
    pub fn improves(self, a: f64, b: f64) -> bool {
        if a.is_nan() {
            return false;
        }
        if b.is_nan() {
            return true;
        }
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
            Criterion::CvR2 => "cv_r2",
            Criterion::CvAuc => "cv_auc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Add,
    Drop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Add => "add",
            Action::Drop => "drop",
        })
    }
}

/// Where a move applies: a score or the covariate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Score(Role),
    Covariates,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Score(r) => write!(f, "{r}"),
            Target::Covariates => f.write_str("covariate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub action: Action,
    pub target: Target,
    pub element: String,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub applied: Move,
    pub criterion_before: f64,
    pub criterion_after: f64,
}

#[derive(Debug, Clone)]
pub struct StepwiseOptions {
    pub direction: Direction,
    pub criterion: Criterion,
    pub fit: FitOptions,
    /// Fold scheme for the cross-validated criteria.
    pub cv_scheme: CvScheme,
    pub cv_seed: u64,
    pub max_steps: Option<usize>,
}

impl StepwiseOptions {
    pub fn new(direction: Direction, criterion: Criterion) -> Self {
        Self {
            direction,
            criterion,
            fit: FitOptions::default(),
            cv_scheme: CvScheme::LeaveOneOut,
            cv_seed: FitOptions::default().seed,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepwiseTrace {
    pub criterion: Criterion,
    pub initial_criterion: f64,
    pub steps: Vec<StepRecord>,
    pub final_fit: AlternatingFit,
    pub final_criterion: f64,
    /// Elements that entered with a negative canonical weight; recoding them
    /// keeps every element pointing the same way.
    pub advisories: Vec<String>,
}

impl StepwiseTrace {
    pub fn final_structure(&self) -> &ModelStructure {
        &self.final_fit.structure
    }
}

/// One evaluated move, shown to the chooser.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub proposal: Move,
    /// NaN when the candidate model could not be fitted.
    pub value: f64,
}

#[derive(Clone)]
enum Item {
    Element(ScoreElement),
    Covariate(String),
}

#[derive(Clone)]
struct Proposal {
    shown: Move,
    item: Item,
}

struct Pool {
    scores: [Vec<ScoreElement>; 3],
    covariates: Vec<String>,
}

fn check_candidates(base: &ModelStructure, candidates: &Candidates) -> Result<()> {
    for role in Role::ALL {
        let list = candidates.for_role(role);
        if list.is_empty() {
            continue;
        }
        let Some(score) = base.score(role) else {
            return Err(Error::InvalidModel(format!(
                "candidates given for {role} but the model has no such score"
            )));
        };
        if score.is_fixed() {
            return Err(Error::InvalidModel(format!(
                "candidates given for fixed score `{}`",
                score.name()
            )));
        }
        for (i, e) in list.iter().enumerate() {
            if score.position(e).is_some() || list[..i].iter().any(|p| p.same_as(e)) {
                return Err(Error::InvalidModel(format!(
                    "candidate `{e}` duplicates an element of `{}`",
                    score.name()
                )));
            }
        }
    }
    for (i, c) in candidates.covariates.iter().enumerate() {
        if base.covariates.contains(c) || candidates.covariates[..i].contains(c) {
            return Err(Error::InvalidModel(format!("candidate covariate `{c}` duplicated")));
        }
    }
    Ok(())
}

fn proposals(current: &ModelStructure, pool: &Pool, direction: Direction) -> Vec<Proposal> {
    let mut out = Vec::new();
    if direction != Direction::Backward {
        for role in current.roles() {
            for e in &pool.scores[role.index()] {
                out.push(Proposal {
                    shown: Move {
                        action: Action::Add,
                        target: Target::Score(role),
                        element: e.to_string(),
                    },
                    item: Item::Element(e.clone()),
                });
            }
        }
        for c in &pool.covariates {
            out.push(Proposal {
                shown: Move {
                    action: Action::Add,
                    target: Target::Covariates,
                    element: c.clone(),
                },
                item: Item::Covariate(c.clone()),
            });
        }
    }
    if direction != Direction::Forward {
        for (role, score) in current.scores() {
            if score.is_fixed() || score.len() < 2 {
                continue;
            }
            for e in score.elements() {
                out.push(Proposal {
                    shown: Move {
                        action: Action::Drop,
                        target: Target::Score(role),
                        element: e.to_string(),
                    },
                    item: Item::Element(e.clone()),
                });
            }
        }
        for c in &current.covariates {
            out.push(Proposal {
                shown: Move {
                    action: Action::Drop,
                    target: Target::Covariates,
                    element: c.clone(),
                },
                item: Item::Covariate(c.clone()),
            });
        }
    }
    out
}

fn apply(current: &ModelStructure, p: &Proposal) -> Result<ModelStructure> {
    let mut next = current.clone();
    match (&p.shown.action, &p.shown.target, &p.item) {
        (Action::Add, Target::Score(role), Item::Element(e)) => {
            next.score_mut(*role).expect("role present").push_element(e.clone())?;
        }
        (Action::Drop, Target::Score(role), Item::Element(e)) => {
            let s = next.score_mut(*role).expect("role present");
            let i = s.position(e).expect("element in score");
            s.remove_element(i)?;
        }
        (Action::Add, Target::Covariates, Item::Covariate(c)) => next.covariates.push(c.clone()),
        (Action::Drop, Target::Covariates, Item::Covariate(c)) => next.covariates.retain(|x| x != c),
        _ => unreachable!("proposal kinds are built consistently"),
    }
    Ok(next)
}

fn update_pool(pool: &mut Pool, p: &Proposal) {
    match (&p.shown.action, &p.shown.target, &p.item) {
        (Action::Add, Target::Score(role), Item::Element(e)) => {
            pool.scores[role.index()].retain(|x| !x.same_as(e))
        }
        (Action::Drop, Target::Score(role), Item::Element(e)) => {
            pool.scores[role.index()].push(e.clone())
        }
        (Action::Add, Target::Covariates, Item::Covariate(c)) => pool.covariates.retain(|x| x != c),
        (Action::Drop, Target::Covariates, Item::Covariate(c)) => pool.covariates.push(c.clone()),
        _ => unreachable!("proposal kinds are built consistently"),
    }
}

/// Fit `structure` (its weights are the starting point) and score it.
pub fn evaluate(
    structure: &ModelStructure,
    data: &Dataset,
    options: &StepwiseOptions,
) -> Result<(f64, AlternatingFit)> {
    let fit = fit_alternating(structure, data, &options.fit)?;
    let value = match options.criterion {
        Criterion::Aic => fit.aic,
        Criterion::Bic => fit.bic,
        Criterion::CvR2 | Criterion::CvAuc => {
            let cv = cross_validate(
                &fit.structure,
                data,
                options.cv_scheme,
                &options.fit,
                options.cv_seed,
            )?;
            if options.criterion == Criterion::CvR2 {
                cv.r2
            } else {
                cv.auc.ok_or(Error::CriterionUndefined(
                    "cv_auc needs both outcome classes among the predictions",
                ))?
            }
        }
    };
    Ok((value, fit))
}

/// Automatic search: apply the best strictly improving move until none is
/// left. Ties go to the move declared first.
pub fn stepwise_search(
    base: &ModelStructure,
    data: &Dataset,
    candidates: &Candidates,
    options: &StepwiseOptions,
) -> Result<StepwiseTrace> {
    let criterion = options.criterion;
    search(base, data, candidates, options, |evaluated, current| {
        let mut best: Option<usize> = None;
        for (i, e) in evaluated.iter().enumerate() {
            let reference = best.map_or(current, |b| evaluated[b].value);
            if criterion.improves(e.value, reference) {
                best = Some(i);
            }
        }
        Ok(best)
    })
}

/// Interactive search: every round prints the evaluated moves and reads a
/// choice (a row number or `stop`) from `input`. End of input stops.
pub fn stepwise_search_interactive<R: BufRead, W: Write>(
    base: &ModelStructure,
    data: &Dataset,
    candidates: &Candidates,
    options: &StepwiseOptions,
    mut input: R,
    mut output: W,
) -> Result<StepwiseTrace> {
    let criterion = options.criterion;
    let io_err = |source| Error::Io {
        path: "<interactive>".into(),
        source,
    };
    search(base, data, candidates, options, |evaluated, current| {
        let mut order: Vec<usize> = (0..evaluated.len()).collect();
        order.sort_by(|&a, &b| {
            let (va, vb) = (evaluated[a].value, evaluated[b].value);
            if criterion.improves(va, vb) {
                std::cmp::Ordering::Less
            } else if criterion.improves(vb, va) {
                std::cmp::Ordering::Greater
            } else {
                a.cmp(&b)
            }
        });
        writeln!(output, "current {criterion} = {current:.4}").map_err(io_err)?;
        writeln!(
            output,
            "{:>4}  {:<6} {:<10} {:<16} {:>12} {:>10}",
            "#", "action", "target", "element", criterion, "change"
        )
        .map_err(io_err)?;
        for (rank, &i) in order.iter().enumerate() {
            let e = &evaluated[i];
            writeln!(
                output,
                "{:>4}  {:<6} {:<10} {:<16} {:>12.4} {:>+10.4}",
                rank + 1,
                e.proposal.action.to_string(),
                e.proposal.target.to_string(),
                e.proposal.element,
                e.value,
                e.value - current
            )
            .map_err(io_err)?;
        }
        loop {
            write!(output, "choose 1-{} or `stop`: ", order.len()).map_err(io_err)?;
            output.flush().map_err(io_err)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(io_err)? == 0 {
                writeln!(output).map_err(io_err)?;
                return Ok(None);
            }
            let line = line.trim();
            if line.eq_ignore_ascii_case("stop") {
                return Ok(None);
            }
            match line.parse::<usize>() {
                Ok(k) if (1..=order.len()).contains(&k) && !evaluated[order[k - 1]].value.is_nan() => {
                    return Ok(Some(order[k - 1]))
                }
                _ => writeln!(output, "invalid choice `{line}`").map_err(io_err)?,
            }
        }
    })
}

fn search<F>(
    base: &ModelStructure,
    data: &Dataset,
    candidates: &Candidates,
    options: &StepwiseOptions,
    mut choose: F,
) -> Result<StepwiseTrace>
where
    F: FnMut(&[Evaluated], f64) -> Result<Option<usize>>,
{
    if options.criterion == Criterion::CvAuc && base.family == Family::GaussianIdentity {
        return Err(Error::CriterionUndefined("cv_auc is only defined for binomial outcomes"));
    }
    check_candidates(base, candidates)?;
    let mut pool = Pool {
        scores: [
            candidates.genetic.clone(),
            candidates.env1.clone(),
            candidates.env2.clone(),
        ],
        covariates: candidates.covariates.clone(),
    };
    if proposals(base, &pool, options.direction).is_empty() {
        return Err(Error::NoCandidates);
    }

    let (initial, mut current_fit) = evaluate(base, data, options)?;
    let mut current = initial;
    let mut steps = Vec::new();
    let mut advisories = Vec::new();
    info!("stepwise start: {} = {current:.4}", options.criterion);

    loop {
        if options.max_steps.is_some_and(|m| steps.len() >= m) {
            break;
        }
        let props = proposals(&current_fit.structure, &pool, options.direction);
        if props.is_empty() {
            break;
        }
        let results: Vec<(Evaluated, Option<AlternatingFit>)> = props
            .par_iter()
            .map(|p| {
                let outcome =
                    apply(&current_fit.structure, p).and_then(|s| evaluate(&s, data, options));
                match outcome {
                    Ok((value, fit)) => (
                        Evaluated {
                            proposal: p.shown.clone(),
                            value,
                        },
                        Some(fit),
                    ),
                    Err(e) => {
                        debug!("{} {} failed: {e}", p.shown.action, p.shown.element);
                        (
                            Evaluated {
                                proposal: p.shown.clone(),
                                value: f64::NAN,
                            },
                            None,
                        )
                    }
                }
            })
            .collect();
        let evaluated: Vec<Evaluated> = results.iter().map(|r| r.0.clone()).collect();
        let Some(pick) = choose(&evaluated, current)? else {
            break;
        };
        let (chosen, fit) = results.into_iter().nth(pick).expect("valid index");
        let fit = fit.expect("chooser only picks fitted moves");
        let p = &props[pick];
        info!(
            "step {}: {} {} {} ({:.4} -> {:.4})",
            steps.len() + 1,
            p.shown.action,
            p.shown.target,
            p.shown.element,
            current,
            chosen.value
        );
        if let (Action::Add, Target::Score(role), Item::Element(e)) =
            (&p.shown.action, &p.shown.target, &p.item)
        {
            let canon = canonicalize(fit.clone());
            let s = canon.structure.score(*role).expect("role present");
            let w = s.weights()[s.position(e).expect("element added")];
            if w < 0.0 {
                advisories.push(format!(
                    "`{e}` entered score `{}` with negative weight {w:.3}; consider recoding it",
                    s.name()
                ));
            }
        }
        update_pool(&mut pool, p);
        steps.push(StepRecord {
            step: steps.len() + 1,
            applied: chosen.proposal,
            criterion_before: current,
            criterion_after: chosen.value,
        });
        current = chosen.value;
        current_fit = fit;
    }

    Ok(StepwiseTrace {
        criterion: options.criterion,
        initial_criterion: initial,
        steps,
        final_fit: current_fit,
        final_criterion: current,
        advisories,
    })
}
