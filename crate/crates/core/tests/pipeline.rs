use std::io::Write as _;

use approx::assert_abs_diff_eq;
use gxescore_core::selection::stepwise::stepwise_search_interactive;
use gxescore_core::simulation::{generate_example, Effect, Example, StartPoint};
use gxescore_core::{
    canonicalize, cross_validate, fit_alternating, load_dataset, stepwise_search, Candidates,
    Criterion, CvScheme, Dataset, Direction, Error, Family, FitOptions, LoadOptions, ModelConfig,
    ModelStructure, Scenario, ScoreElement, ScoreSpec, StepwiseOptions,
};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const CONFIG: &str = r#"
outcome = "y"
subject_id = "id"

[genetic]
name = "g"
elements = ["g1", "g2", "g3", "g4", "g1*g3", "g2*g3"]

[env1]
name = "e"
elements = ["e1", "e2", "e3"]
"#;

fn noiseless_example_one(n: usize) -> Dataset {
    let mut s = Scenario::new(Example::One, n, Effect::Medium, StartPoint::Equal);
    s.noise_sd = Some(0.0);
    generate_example(&s, 0).unwrap().train
}

fn write_csv(data: &Dataset, blank_row: Option<usize>) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    let names: Vec<&str> = data.column_names().collect();
    writeln!(f, "id,{}", names.join(",")).unwrap();
    for i in 0..data.n_rows() {
        let vals: Vec<String> = names
            .iter()
            .enumerate()
            .map(|(c, n)| {
                if blank_row == Some(i) && c == 0 {
                    String::new()
                } else {
                    format!("{:?}", data.column(n).unwrap()[i])
                }
            })
            .collect();
        writeln!(f, "p{},{}", i / 2, vals.join(",")).unwrap();
    }
    f.flush().unwrap();
    f
}

#[test]
fn csv_and_config_round_trip_recovers_truth() {
    let data = noiseless_example_one(300);
    let file = write_csv(&data, Some(5));
    let cfg = ModelConfig::from_toml(CONFIG).unwrap();
    let mut opts = LoadOptions::new(&cfg.outcome);
    opts.subject_id = cfg.subject_id.clone();
    opts.used_columns = Some(cfg.used_columns().unwrap());
    let loaded = load_dataset(file.path(), &opts).unwrap();
    assert_eq!(loaded.n_rows(), 299);
    assert_eq!(loaded.dropped_rows(), 1);
    assert_eq!(loaded.subject_groups().len(), 150);

    let fit_opts = FitOptions {
        delta: 1e-12,
        max_iterations: 10_000,
        ..FitOptions::default()
    };
    let fit = canonicalize(fit_alternating(&cfg.structure().unwrap(), &loaded, &fit_opts).unwrap());
    assert!(fit.converged);
    // g3 (-.3) and e1 (-.45) lead their scores with negative weights, so both
    // canonical scores are negated: e and g change sign, e:g does not.
    for (got, want) in fit.main_coefficients.iter().zip([5.0, -3.0, -2.0, 4.0]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-6);
    }
    let g = fit.structure.genetic.weights();
    for (got, want) in g.iter().zip([-0.2, -0.15, 0.3, -0.1, -0.05, -0.2]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-6);
    }
    for (got, want) in fit.structure.env1.weights().iter().zip([0.45, -0.35, -0.2]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-6);
    }
    assert!(fit.in_sample_r2 > 1.0 - 1e-10);
}

#[test]
fn missing_model_column_is_reported_by_name() {
    let data = noiseless_example_one(40);
    let file = write_csv(&data, None);
    let cfg = ModelConfig::from_toml(&CONFIG.replace("\"e3\"", "\"e9\"")).unwrap();
    let mut opts = LoadOptions::new("y");
    opts.used_columns = Some(cfg.used_columns().unwrap());
    let err = load_dataset(file.path(), &opts).unwrap_err();
    assert!(err.to_string().contains("e9"), "{err}");
    assert!(!err.is_numerical());
}

fn logistic_three_way(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut cols: IndexMap<String, Vec<f64>> = IndexMap::new();
    for name in ["g1", "g2", "e1", "e2", "z1"] {
        let v = (0..n)
            .map(|_| {
                if name.starts_with('g') {
                    f64::from(u8::from(rng.random::<f64>() < 0.4))
                } else {
                    normal.sample(&mut rng)
                }
            })
            .collect();
        cols.insert(name.into(), v);
    }
    let y = (0..n)
        .map(|i| {
            let g = 0.7 * cols["g1"][i] - 0.3 * cols["g2"][i];
            let e = 0.6 * cols["e1"][i] + 0.4 * cols["e2"][i];
            let z = cols["z1"][i];
            let eta = -0.3 + 0.8 * e + 0.5 * z + 0.6 * g + 0.4 * e * z + 1.2 * g * e + 0.3 * g * z
                + 0.5 * g * e * z;
            let p = 1.0 / (1.0 + (-eta).exp());
            f64::from(u8::from(rng.random::<f64>() < p))
        })
        .collect();
    cols.insert("y".into(), y);
    Dataset::new(cols, "y").unwrap()
}

#[test]
fn binomial_three_way_end_to_end() {
    let data = logistic_three_way(1500, 1);
    let model = ModelStructure::three_way(
        ScoreSpec::parse("g", &["g1", "g2"]).unwrap(),
        ScoreSpec::parse("e", &["e1", "e2"]).unwrap(),
        ScoreSpec::parse("z", &["z1"]).unwrap().fixed(true),
    )
    .with_family(Family::BinomialLogit);
    let fit = canonicalize(fit_alternating(&model, &data, &FitOptions::default()).unwrap());
    assert!(fit.converged);
    assert!(fit.is_monotone());
    let g = fit.structure.genetic.weights();
    assert!((g[0] - 0.7).abs() < 0.15 && (g[1] + 0.3).abs() < 0.15, "{g:?}");
    let p = fit.predict(&data).unwrap();
    assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
    // Binomial parameter count has no scale: 8 + 1 + 1.
    assert_eq!(fit.param_count, 10);

    let cv = cross_validate(&model, &data, CvScheme::KFold(5), &FitOptions::default(), 2).unwrap();
    assert!(!cv.is_partial());
    assert!(cv.auc.unwrap() > 0.6, "{:?}", cv.auc);
}

fn stepwise_setup() -> (Dataset, ModelStructure, Candidates) {
    let s = Scenario::new(Example::One, 1500, Effect::Medium, StartPoint::Equal);
    let mut data = generate_example(&s, 2).unwrap().train;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = (0..data.n_rows())
        .map(|_| f64::from(u8::from(rng.random::<f64>() < 0.3)))
        .collect();
    data.set_column("g9", noise).unwrap();
    let base = ModelStructure::two_way(
        ScoreSpec::parse("g", &["g3"]).unwrap(),
        ScoreSpec::parse("e", &["e1", "e2", "e3"]).unwrap(),
    );
    let candidates = Candidates {
        genetic: ["g1", "g9"].iter().map(|e| ScoreElement::parse(e).unwrap()).collect(),
        ..Candidates::default()
    };
    (data, base, candidates)
}

#[test]
fn forward_search_takes_signal_and_leaves_noise() {
    let (data, base, candidates) = stepwise_setup();
    let opts = StepwiseOptions::new(Direction::Forward, Criterion::Bic);
    let trace = stepwise_search(&base, &data, &candidates, &opts).unwrap();
    let names = trace.final_structure().genetic.column_names();
    assert!(names.contains(&"g1".to_string()), "{names:?}");
    assert!(!names.contains(&"g9".to_string()), "{names:?}");
    for s in &trace.steps {
        assert!(s.criterion_after < s.criterion_before);
    }
    assert_eq!(trace.final_criterion, trace.final_fit.bic);
}

#[test]
fn backward_search_drops_noise() {
    let (data, _, _) = stepwise_setup();
    let full = ModelStructure::two_way(
        ScoreSpec::parse("g", &["g1", "g3", "g9"]).unwrap(),
        ScoreSpec::parse("e", &["e1", "e2", "e3"]).unwrap(),
    );
    let opts = StepwiseOptions::new(Direction::Backward, Criterion::Bic);
    let trace = stepwise_search(&full, &data, &Candidates::default(), &opts).unwrap();
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.steps[0].applied.element, "g9");
}

#[test]
fn stepwise_errors() {
    let (data, base, candidates) = stepwise_setup();
    let opts = StepwiseOptions::new(Direction::Forward, Criterion::Bic);
    assert!(matches!(
        stepwise_search(&base, &data, &Candidates::default(), &opts),
        Err(Error::NoCandidates)
    ));
    let auc = StepwiseOptions::new(Direction::Forward, Criterion::CvAuc);
    assert!(matches!(
        stepwise_search(&base, &data, &candidates, &auc),
        Err(Error::CriterionUndefined(_))
    ));
    let dup = Candidates {
        genetic: vec![ScoreElement::parse("g3").unwrap()],
        ..Candidates::default()
    };
    assert!(matches!(
        stepwise_search(&base, &data, &dup, &opts),
        Err(Error::InvalidModel(_))
    ));
}

#[test]
fn interactive_search_follows_the_script() {
    let (data, base, candidates) = stepwise_setup();
    let opts = StepwiseOptions::new(Direction::Forward, Criterion::Aic);

    let mut out = Vec::new();
    let trace =
        stepwise_search_interactive(&base, &data, &candidates, &opts, &b"nonsense\n2\nstop\n"[..], &mut out)
            .unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("invalid choice `nonsense`"));
    assert_eq!(trace.steps.len(), 1);
    // Row 2 is the worse of the two moves, which a user may still pick.
    assert_eq!(trace.steps[0].applied.element, "g9");

    let mut out = Vec::new();
    let trace =
        stepwise_search_interactive(&base, &data, &candidates, &opts, &b""[..], &mut out).unwrap();
    assert!(trace.steps.is_empty());
}

#[test]
fn cv_criterion_search_runs() {
    let (data, base, candidates) = stepwise_setup();
    let small = data.subset(&(0..200).collect::<Vec<_>>());
    let mut opts = StepwiseOptions::new(Direction::Forward, Criterion::CvR2);
    opts.cv_scheme = CvScheme::KFold(5);
    let trace = stepwise_search(&base, &small, &candidates, &opts).unwrap();
    for s in &trace.steps {
        assert!(s.criterion_after > s.criterion_before);
    }
}
