//! Monte Carlo study of estimation accuracy and interval coverage.
//!
//! Example 1 is a two-way model `y = 5 + 3e + 2g + 4ge + ε`. Example 2 adds a
//! second environment `z`, entered as a fixed one-element score, giving
//! `y = 5 + 3e + z + 2g + 1.5ez + 5ge + 2zg + 2ezg + ε`. Both share the genetic
//! score (four variants and two gene products) and a three-variable
//! environmental score.

use std::fmt::Write as _;

use indexmap::IndexMap;
use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{compute_score, ModelStructure, Role, ScoreElement, ScoreSpec};
use crate::optimizer::{fit_alternating, AlternatingFit, FitOptions, DEFAULT_SEED};

pub const SCHEMA_VERSION: u32 = 1;
/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

const GENE_P: f64 = 0.3;
const ENV_SD: f64 = 1.5;
const Z_MEAN: f64 = 3.0;
const Z_SD: f64 = 1.0;
const GENETIC: [(&str, f64); 6] = [
    ("g1", 0.2),
    ("g2", 0.15),
    ("g3", -0.3),
    ("g4", 0.1),
    ("g1*g3", 0.05),
    ("g2*g3", 0.2),
];
const ENVIRONMENT: [(&str, f64); 3] = [("e1", -0.45), ("e2", 0.35), ("e3", 0.2)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Example {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Medium,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPoint {
    Equal,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneDistribution {
    /// Bernoulli(.3) carrier indicators.
    Binomial,
    /// Normal with the Bernoulli mean and variance.
    GaussianMatched,
}

impl Example {
    pub fn number(self) -> u8 {
        match self {
            Example::One => 1,
            Example::Two => 2,
        }
    }

    /// Residual standard deviation for the effect size.
    pub fn noise_sd(self, effect: Effect) -> f64 {
        match (self, effect) {
            (Example::One, Effect::Medium) => 4.36,
            (Example::One, Effect::Small) => 6.78,
            (Example::Two, Effect::Medium) => 12.31,
            (Example::Two, Effect::Small) => 19.19,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub example: Example,
    pub n_train: usize,
    pub n_val: usize,
    pub effect: Effect,
    pub start: StartPoint,
    pub reps: usize,
    pub seed: u64,
    pub gene_distribution: GeneDistribution,
    /// Replaces the effect-size noise level when set.
    pub noise_sd: Option<f64>,
    #[serde(skip)]
    pub fit: FitOptions,
}

impl Scenario {
    pub fn new(example: Example, n_train: usize, effect: Effect, start: StartPoint) -> Self {
        Self {
            example,
            n_train,
            n_val: 100,
            effect,
            start,
            reps: 100,
            seed: DEFAULT_SEED,
            gene_distribution: GeneDistribution::Binomial,
            noise_sd: None,
            fit: FitOptions::default(),
        }
    }

    pub fn effective_noise_sd(&self) -> f64 {
        self.noise_sd
            .unwrap_or_else(|| self.example.noise_sd(self.effect))
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.n_train < 20 || self.n_val < 2 {
            return Err(Error::Config(format!(
                "sample sizes too small (train {}, validation {})",
                self.n_train, self.n_val
            )));
        }
        if !(self.effective_noise_sd() >= 0.0) {
            return Err(Error::Config("noise standard deviation must be >= 0".into()));
        }
        Ok(())
    }
}

/// Generating parameters of one example.
#[derive(Debug, Clone, Serialize)]
pub struct Truth {
    pub example: Example,
    pub genetic_elements: Vec<String>,
    pub genetic_weights: Vec<f64>,
    pub env_weights: Vec<f64>,
    /// Main coefficients in design order.
    pub main_names: Vec<String>,
    pub main_coefficients: Vec<f64>,
    pub noise_sd: f64,
}

impl Truth {
    pub fn new(example: Example, noise_sd: f64) -> Self {
        let model = model_for(example, StartPoint::True);
        let main_coefficients = match example {
            Example::One => vec![5.0, 3.0, 2.0, 4.0],
            Example::Two => vec![5.0, 3.0, 1.0, 2.0, 1.5, 5.0, 2.0, 2.0],
        };
        Self {
            example,
            genetic_elements: GENETIC.iter().map(|(n, _)| n.to_string()).collect(),
            genetic_weights: GENETIC.iter().map(|(_, w)| *w).collect(),
            env_weights: ENVIRONMENT.iter().map(|(_, w)| *w).collect(),
            main_names: model.main_names(),
            main_coefficients,
            noise_sd,
        }
    }

    /// Model structure carrying the true weights.
    pub fn structure(&self) -> ModelStructure {
        model_for(self.example, StartPoint::True)
    }

    /// Noise-free mean of the outcome.
    pub fn mean(&self, data: &Dataset) -> Result<Vec<f64>> {
        structural_mean(&self.structure(), &self.main_coefficients, data)
    }
}

/// The model fitted in the study: all six genetic elements, three
/// environments and, for Example 2, `z` as a fixed score.
pub fn model_for(example: Example, start: StartPoint) -> ModelStructure {
    let spec = |name: &str, table: &[(&str, f64)]| {
        let elements = table
            .iter()
            .map(|(e, _)| ScoreElement::parse(e).expect("valid element"))
            .collect();
        let s = ScoreSpec::new(name, elements).expect("distinct elements");
        match start {
            StartPoint::Equal => s,
            StartPoint::True => s
                .with_weights(table.iter().map(|(_, w)| *w).collect())
                .expect("normalised weights"),
        }
    };
    let g = spec("g", &GENETIC);
    let e = spec("e", &ENVIRONMENT);
    match example {
        Example::One => ModelStructure::two_way(g, e),
        Example::Two => ModelStructure::three_way(
            g,
            e,
            ScoreSpec::parse("z", &["z"]).expect("valid").fixed(true),
        ),
    }
}

/// `Σ_t β_t Π_{s in t} score_s` over intercept and score terms.
fn structural_mean(structure: &ModelStructure, beta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
    let mut scores: [Option<Vec<f64>>; 3] = Default::default();
    for (role, s) in structure.scores() {
        scores[role.index()] = Some(compute_score(s, data)?.iter().copied().collect());
    }
    let mut mean = vec![beta[0]; data.n_rows()];
    for (k, term) in structure.terms().into_iter().enumerate() {
        for (i, m) in mean.iter_mut().enumerate() {
            let prod: f64 = term
                .roles()
                .map(|r| scores[r.index()].as_ref().expect("role present")[i])
                .product();
            *m += beta[1 + k] * prod;
        }
    }
    Ok(mean)
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub train: Dataset,
    pub validation: Dataset,
    pub truth: Truth,
}

fn rep_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Draw the training and validation samples of replication `rep`.
pub fn generate_example(scenario: &Scenario, rep: usize) -> Result<SimulatedData> {
    scenario.validate()?;
    let truth = Truth::new(scenario.example, scenario.effective_noise_sd());
    let mut rng = rep_rng(scenario.seed, rep);
    let n = scenario.n_train + scenario.n_val;

    let gene_normal = Normal::new(GENE_P, (GENE_P * (1.0 - GENE_P)).sqrt()).expect("valid");
    let env = Normal::new(0.0, ENV_SD).expect("valid");
    let mut cols: IndexMap<String, Vec<f64>> = IndexMap::new();
    for j in 1..=4 {
        let v = (0..n)
            .map(|_| match scenario.gene_distribution {
                GeneDistribution::Binomial => f64::from(u8::from(rng.random::<f64>() < GENE_P)),
                GeneDistribution::GaussianMatched => gene_normal.sample(&mut rng),
            })
            .collect();
        cols.insert(format!("g{j}"), v);
    }
    for l in 1..=3 {
        cols.insert(format!("e{l}"), (0..n).map(|_| env.sample(&mut rng)).collect());
    }
    if scenario.example == Example::Two {
        let z = Normal::new(Z_MEAN, Z_SD).expect("valid");
        cols.insert("z".into(), (0..n).map(|_| z.sample(&mut rng)).collect());
    }
    cols.insert("y".into(), vec![0.0; n]);
    let mut all = Dataset::new(cols, "y")?;
    let mean = truth.mean(&all)?;
    let noise = Normal::new(0.0, truth.noise_sd.max(f64::MIN_POSITIVE)).expect("valid");
    let y = mean
        .iter()
        .map(|m| {
            if truth.noise_sd == 0.0 {
                *m
            } else {
                m + noise.sample(&mut rng)
            }
        })
        .collect();
    all.set_column("y", y)?;

    let train: Vec<usize> = (0..scenario.n_train).collect();
    let val: Vec<usize> = (scenario.n_train..n).collect();
    Ok(SimulatedData {
        train: all.subset(&train),
        validation: all.subset(&val),
        truth,
    })
}

/// `1 - Σ (y - μ)² / Σ (y - ȳ)²` with `ȳ` the sample mean of `y`.
pub fn r2_against(y: &[f64], mu: &[f64]) -> f64 {
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let sse: f64 = y.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum();
    let tss: f64 = y.iter().map(|a| (a - ybar).powi(2)).sum();
    1.0 - sse / tss
}

/// R² of the true mean function on `validation`.
pub fn r2_max(validation: &Dataset, truth: &Truth) -> Result<f64> {
    Ok(r2_against(validation.outcome(), &truth.mean(validation)?))
}

/// R² of a fitted model's predictions on `validation`.
pub fn validation_r2(fit: &AlternatingFit, validation: &Dataset) -> Result<f64> {
    Ok(r2_against(validation.outcome(), &fit.predict(validation)?))
}

/// Coverage of the Wald intervals of one fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub genes: f64,
    pub env: f64,
    pub main: f64,
    /// Signs applied to the true genetic and environmental scores.
    pub signs: [i8; 2],
}

fn covers(est: f64, se: f64, truth: f64) -> bool {
    (est - truth).abs() <= Z_95 * se
}

/// Score the intervals of `fit` against the sign variant of `truth` that
/// maximises the share of covered parameters (ties go to the unflipped truth).
pub fn coverage(fit: &AlternatingFit, truth: &Truth) -> Coverage {
    let structure = &fit.structure;
    let gw = fit.weights(Role::Genetic).expect("genetic score");
    let ew = fit.weights(Role::Env1).expect("environmental score");
    let nan = |n: usize| vec![f64::NAN; n];
    let gse = fit.weight_se[Role::Genetic.index()].clone().unwrap_or_else(|| nan(gw.len()));
    let ese = fit.weight_se[Role::Env1.index()].clone().unwrap_or_else(|| nan(ew.len()));
    let n_int = structure.intercept_names().len();
    let terms = structure.terms();

    let mut best: Option<(usize, Coverage)> = None;
    for signs in [[1i8, 1], [-1, 1], [1, -1], [-1, -1]] {
        let (sg, se) = (f64::from(signs[0]), f64::from(signs[1]));
        let count = |est: &[f64], sd: &[f64], tv: &[f64], s: f64| {
            est.iter()
                .zip(sd)
                .zip(tv)
                .filter(|((e, d), t)| covers(**e, **d, s * **t))
                .count()
        };
        let g_hits = count(gw, &gse, &truth.genetic_weights, sg);
        let e_hits = count(ew, &ese, &truth.env_weights, se);
        let mut m_hits = 0;
        let n_main = n_int + terms.len();
        for k in 0..n_main {
            let mut s = 1.0;
            if k >= n_int {
                let term = terms[k - n_int];
                if term.contains(Role::Genetic) {
                    s *= sg;
                }
                if term.contains(Role::Env1) {
                    s *= se;
                }
            }
            let t = s * truth.main_coefficients[k];
            if covers(fit.main_coefficients[k], fit.main_se[k], t) {
                m_hits += 1;
            }
        }
        let total = g_hits + e_hits + m_hits;
        let cov = Coverage {
            genes: g_hits as f64 / gw.len() as f64,
            env: e_hits as f64 / ew.len() as f64,
            main: m_hits as f64 / n_main as f64,
            signs,
        };
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, cov));
        }
    }
    best.expect("four variants").1
}

#[derive(Debug, Clone, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    /// Set when the replication was excluded from the averages.
    pub error: Option<String>,
    pub converged: bool,
    pub iterations: usize,
    pub r2_val: f64,
    pub r2_max: f64,
    pub ratio: f64,
    pub coverage: Option<Coverage>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub noise_sd: f64,
    pub reps_used: usize,
    pub failed: usize,
    pub non_converged: usize,
    pub ratio_mean: f64,
    /// Robust companions of `ratio_mean`, which small validation samples
    /// with near-zero `r2_max` can dominate.
    pub ratio_median: f64,
    pub ratio_of_means: f64,
    pub genes_cov: f64,
    pub env_cov: f64,
    pub main_cov: f64,
    pub per_rep: Vec<RepRecord>,
}

fn run_rep(scenario: &Scenario, rep: usize) -> RepRecord {
    let mut record = RepRecord {
        rep,
        error: None,
        converged: false,
        iterations: 0,
        r2_val: f64::NAN,
        r2_max: f64::NAN,
        ratio: f64::NAN,
        coverage: None,
    };
    let outcome = (|| -> Result<()> {
        let sim = generate_example(scenario, rep)?;
        let model = model_for(scenario.example, scenario.start);
        let fit = fit_alternating(&model, &sim.train, &scenario.fit)?;
        record.converged = fit.converged;
        record.iterations = fit.iterations;
        record.r2_val = validation_r2(&fit, &sim.validation)?;
        record.r2_max = r2_max(&sim.validation, &sim.truth)?;
        record.ratio = record.r2_val / record.r2_max;
        record.coverage = Some(coverage(&fit, &sim.truth));
        Ok(())
    })();
    if let Err(e) = outcome {
        debug!("rep {rep} failed: {e}");
        record.error = Some(e.to_string());
    } else if !record.converged {
        record.error = Some("did not converge".into());
    }
    record
}

/// Run every replication of `scenario`. Failed and non-converged
/// replications are excluded from the averages and counted.
pub fn run_study(scenario: &Scenario) -> Result<SimulationReport> {
    scenario.validate()?;
    let per_rep: Vec<RepRecord> = (0..scenario.reps)
        .into_par_iter()
        .map(|rep| run_rep(scenario, rep))
        .collect();
    let used: Vec<&RepRecord> = per_rep.iter().filter(|r| r.error.is_none()).collect();
    let failed = per_rep.iter().filter(|r| r.coverage.is_none()).count();
    let non_converged = per_rep.len() - used.len() - failed;
    let mean = |f: &dyn Fn(&RepRecord) -> f64| {
        used.iter().map(|r| f(r)).sum::<f64>() / used.len() as f64
    };
    let cov = |r: &RepRecord| r.coverage.expect("used reps have coverage");
    let mut ratios: Vec<f64> = used.iter().map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let ratio_median = match ratios.len() {
        0 => f64::NAN,
        k if k % 2 == 1 => ratios[k / 2],
        k => 0.5 * (ratios[k / 2 - 1] + ratios[k / 2]),
    };
    Ok(SimulationReport {
        schema_version: SCHEMA_VERSION,
        noise_sd: scenario.effective_noise_sd(),
        reps_used: used.len(),
        failed,
        non_converged,
        ratio_mean: mean(&|r| r.ratio),
        ratio_median,
        ratio_of_means: mean(&|r| r.r2_val) / mean(&|r| r.r2_max),
        genes_cov: mean(&|r| cov(r).genes),
        env_cov: mean(&|r| cov(r).env),
        main_cov: mean(&|r| cov(r).main),
        per_rep,
        scenario: scenario.clone(),
    })
}

/// Plain-text summary with one row per report.
pub fn summary_table(reports: &[SimulationReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>6} {:<7} {:<6} {:>9} {:>7} {:>7} {:>7} {:>6}",
        "example", "n", "effect", "start", "ratio", "genes", "env", "main", "used"
    );
    for r in reports {
        let s = &r.scenario;
        let effect = match s.effect {
            Effect::Medium => "medium",
            Effect::Small => "small",
        };
        let start = match s.start {
            StartPoint::Equal => "equal",
            StartPoint::True => "true",
        };
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:<7} {:<6} {:>9.3} {:>7.3} {:>7.3} {:>7.3} {:>6}",
            s.example.number(),
            s.n_train,
            effect,
            start,
            r.ratio_mean,
            r.genes_cov,
            r.env_cov,
            r.main_cov,
            format!("{}/{}", r.reps_used, s.reps)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn true_weights_are_normalised() {
        let t = Truth::new(Example::One, 1.0);
        let l1: f64 = t.genetic_weights.iter().map(|w| w.abs()).sum();
        assert_abs_diff_eq!(l1, 1.0, epsilon = 1e-12);
        let l1: f64 = t.env_weights.iter().map(|w| w.abs()).sum();
        assert_abs_diff_eq!(l1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn truth_main_names() {
        let t = Truth::new(Example::Two, 1.0);
        assert_eq!(
            t.main_names,
            ["(Intercept)", "e", "z", "g", "e:z", "e:g", "z:g", "e:z:g"]
        );
        assert_eq!(Truth::new(Example::One, 1.0).main_names, ["(Intercept)", "e", "g", "e:g"]);
    }

    #[test]
    fn noiseless_outcome_is_structural() {
        let mut sc = Scenario::new(Example::One, 50, Effect::Medium, StartPoint::Equal);
        sc.noise_sd = Some(0.0);
        let sim = generate_example(&sc, 3).unwrap();
        let d = &sim.train;
        for i in 0..d.n_rows() {
            let c = |n: &str| d.column(n).unwrap()[i];
            let g = 0.2 * c("g1") + 0.15 * c("g2") - 0.3 * c("g3") + 0.1 * c("g4")
                + 0.05 * c("g1") * c("g3")
                + 0.2 * c("g2") * c("g3");
            let e = -0.45 * c("e1") + 0.35 * c("e2") + 0.2 * c("e3");
            assert_abs_diff_eq!(d.outcome()[i], 5.0 + 2.0 * g + 3.0 * e + 4.0 * g * e, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(r2_max(&sim.validation, &sim.truth).unwrap(), 1.0);
    }

    #[test]
    fn example_two_structural_formula() {
        let mut sc = Scenario::new(Example::Two, 30, Effect::Small, StartPoint::Equal);
        sc.noise_sd = Some(0.0);
        let sim = generate_example(&sc, 0).unwrap();
        let d = &sim.train;
        for i in 0..d.n_rows() {
            let c = |n: &str| d.column(n).unwrap()[i];
            let g = 0.2 * c("g1") + 0.15 * c("g2") - 0.3 * c("g3") + 0.1 * c("g4")
                + 0.05 * c("g1") * c("g3")
                + 0.2 * c("g2") * c("g3");
            let e = -0.45 * c("e1") + 0.35 * c("e2") + 0.2 * c("e3");
            let z = c("z");
            let y = 5.0 + 2.0 * g + 3.0 * e + z + 5.0 * g * e + 1.5 * e * z + 2.0 * g * z
                + 2.0 * g * e * z;
            assert_abs_diff_eq!(d.outcome()[i], y, epsilon = 1e-10);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let sc = Scenario::new(Example::Two, 40, Effect::Medium, StartPoint::True);
        let a = generate_example(&sc, 7).unwrap();
        let b = generate_example(&sc, 7).unwrap();
        assert_eq!(a.train.outcome(), b.train.outcome());
        let c = generate_example(&sc, 8).unwrap();
        assert_ne!(a.train.outcome(), c.train.outcome());
    }

    #[test]
    fn noise_sd_matches_effect() {
        let sc = Scenario::new(Example::One, 5000, Effect::Medium, StartPoint::Equal);
        let sim = generate_example(&sc, 0).unwrap();
        let mean = sim.truth.mean(&sim.train).unwrap();
        let resid: Vec<f64> = sim.train.outcome().iter().zip(&mean).map(|(y, m)| y - m).collect();
        let sd = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((sd / 4.36 - 1.0).abs() < 0.05, "sd {sd}");
    }

    #[test]
    fn gaussian_genes_match_moments() {
        let mut sc = Scenario::new(Example::One, 20_000, Effect::Medium, StartPoint::Equal);
        sc.gene_distribution = GeneDistribution::GaussianMatched;
        let sim = generate_example(&sc, 1).unwrap();
        let g = sim.train.column("g2").unwrap();
        let m = g.iter().sum::<f64>() / g.len() as f64;
        let v = g.iter().map(|x| (x - m).powi(2)).sum::<f64>() / g.len() as f64;
        assert!((m - 0.3).abs() < 0.02 && (v - 0.21).abs() < 0.02, "{m} {v}");
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = Scenario::new(Example::One, 250, Effect::Medium, StartPoint::Equal);
        sc.reps = 0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn coverage_prefers_matching_sign() {
        let mut sc = Scenario::new(Example::One, 2000, Effect::Medium, StartPoint::True);
        sc.noise_sd = Some(0.5);
        let sim = generate_example(&sc, 0).unwrap();
        let mut fit = fit_alternating(&model_for(Example::One, StartPoint::True), &sim.train, &sc.fit).unwrap();
        let c = coverage(&fit, &sim.truth);
        assert_eq!(c.signs, [1, 1]);
        fit.flip_sign(Role::Genetic);
        let flipped = coverage(&fit, &sim.truth);
        assert_eq!(flipped.signs, [-1, 1]);
        assert_eq!((c.genes, c.env, c.main), (flipped.genes, flipped.env, flipped.main));
    }
}
