//! `gxescore`: fit, cross-validate, search and screen score interaction
//! models from CSV data, or run the synthetic benchmark study.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure
//! (rank deficiency, separation, non-convergence).

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(a > b)` also rejects NaN

mod report;

use std::io::{self, IsTerminal};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gxescore_core::selection::outliers::CONSERVATIVE_THRESHOLD;
use gxescore_core::selection::stepwise::stepwise_search_interactive;
use gxescore_core::simulation::{
    summary_table, Effect, Example, GeneDistribution, StartPoint, SCHEMA_VERSION as SIM_SCHEMA,
};
use gxescore_core::{
    cross_validate, detect_outliers, fit_alternating, load_dataset, run_study, stepwise_search,
    Criterion, CvScheme, Dataset, Direction, Error, FitOptions, LoadOptions, ModelConfig,
    ModelStructure, Scenario, StepwiseOptions,
};
use serde::Serialize;

use report::{CvReport, Envelope, FitReport, OutliersReport, StepwiseReport, SCHEMA_VERSION};

#[derive(Parser)]
#[command(name = "gxescore", version, about = "Weighted-score interaction models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model by alternating optimisation.
    Fit(Common),
    /// Subject-grouped cross-validated R² (and AUC for binary outcomes).
    Cv {
        #[command(flatten)]
        common: Common,
        /// `loo` or a number of folds.
        #[arg(long, default_value = "loo", value_parser = parse_folds)]
        folds: CvScheme,
    },
    /// Add or drop score elements and covariates by a criterion.
    Stepwise {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = DirectionArg::Forward)]
        direction: DirectionArg,
        #[arg(long, value_enum, default_value_t = CriterionArg::Bic)]
        criterion: CriterionArg,
        /// Fold scheme for the cross-validated criteria.
        #[arg(long, default_value = "loo", value_parser = parse_folds)]
        folds: CvScheme,
        /// Choose each move from a table on standard input.
        #[arg(long)]
        interactive: bool,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Flag rows with large standardised leave-one-subject-out residuals.
    Outliers {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = CONSERVATIVE_THRESHOLD)]
        threshold: f64,
    },
    /// Run the synthetic benchmark study.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Common {
    /// Input CSV (or TSV) file.
    #[arg(long)]
    data: PathBuf,
    /// TOML model configuration.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Field delimiter; defaults to tab for .tsv/.tab files, comma otherwise.
    #[arg(long)]
    delimiter: Option<char>,
}

#[derive(Args)]
struct RunArgs {
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Leave the generation time out of the report.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = gxescore_core::optimizer::DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = gxescore_core::optimizer::DEFAULT_MAX_ITERATIONS)]
    max_iter: usize,
    #[arg(long, default_value_t = gxescore_core::optimizer::DEFAULT_SEED)]
    seed: u64,
    /// Extra random-sign starts.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
}

impl FitArgs {
    fn options(&self) -> FitOptions {
        FitOptions {
            delta: self.delta,
            max_iterations: self.max_iter,
            restarts: self.restarts,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = ExampleArg::All)]
    example: ExampleArg,
    /// Training sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [250, 1000, 5000])]
    n: Vec<usize>,
    #[arg(long, value_enum, default_value_t = EffectArg::All)]
    effect: EffectArg,
    #[arg(long, value_enum, default_value_t = StartArg::All)]
    start: StartArg,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 100)]
    n_val: usize,
    #[arg(long, value_enum, default_value_t = GenesArg::Binomial)]
    genes: GenesArg,
    /// Override the residual standard deviation.
    #[arg(long)]
    noise_sd: Option<f64>,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Forward,
    Backward,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Aic,
    Bic,
    #[value(name = "cv_r2")]
    CvR2,
    #[value(name = "cv_auc")]
    CvAuc,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExampleArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum EffectArg {
    Medium,
    Small,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum StartArg {
    Equal,
    True,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenesArg {
    Binomial,
    Gaussian,
}

fn parse_folds(s: &str) -> Result<CvScheme, String> {
    if s.eq_ignore_ascii_case("loo") {
        return Ok(CvScheme::LeaveOneOut);
    }
    match s.parse::<usize>() {
        Ok(k) if k >= 2 => Ok(CvScheme::KFold(k)),
        _ => Err(format!("expected `loo` or an integer >= 2, got `{s}`")),
    }
}

fn scheme_name(s: CvScheme) -> String {
    match s {
        CvScheme::LeaveOneOut => "loo".into(),
        CvScheme::KFold(k) => format!("{k}-fold"),
    }
}

/// Failure of a command, mapped to an exit code.
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

struct Loaded {
    structure: ModelStructure,
    config: ModelConfig,
    data: Dataset,
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let config = ModelConfig::load(&common.model)?;
    let structure = config.structure()?;
    let mut opts = LoadOptions::new(&config.outcome);
    opts.subject_id = config.subject_id.clone();
    opts.used_columns = Some(config.used_columns()?);
    opts.delimiter = match common.delimiter {
        Some(c) if c.is_ascii() => c as u8,
        Some(c) => return Err(Failure::Usage(format!("delimiter `{c}` is not ASCII"))),
        None => default_delimiter(&common.data),
    };
    let data = load_dataset(&common.data, &opts)?;
    if data.dropped_rows() > 0 {
        log::warn!("{} rows with missing values dropped", data.dropped_rows());
    }
    structure.validate(Some(&data))?;
    Ok(Loaded {
        structure,
        config,
        data,
    })
}

fn default_delimiter(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("tsv" | "tab") => b'\t',
        _ => b',',
    }
}

fn emit<T: Serialize>(run: &RunArgs, command: &'static str, schema: u32, body: T) -> Outcome {
    let Some(path) = &run.out else {
        return Ok(());
    };
    let generated_unix = (!run.no_timestamp).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    });
    let envelope = Envelope {
        schema_version: schema,
        tool_version: env!("CARGO_PKG_VERSION"),
        generated_unix,
        command,
        body,
    };
    let mut text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| Failure::Usage(format!("cannot serialise report: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn configure_threads(run: &RunArgs) -> Outcome {
    if let Some(n) = run.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot set up {n} threads: {e}")))?;
    }
    Ok(())
}

fn run_fit(common: &Common) -> Outcome {
    let l = load(common)?;
    let fit = fit_alternating(&l.structure, &l.data, &common.fit.options())?;
    let report = FitReport::new(&fit);
    print!("{}", report.render());
    emit(&common.run, "fit", SCHEMA_VERSION, &report)?;
    if !fit.converged {
        return Err(Failure::Numerical(format!(
            "no convergence within {} iterations",
            common.fit.max_iter
        )));
    }
    Ok(())
}

fn run_cv(common: &Common, folds: CvScheme) -> Outcome {
    let l = load(common)?;
    let opts = common.fit.options();
    let cv = cross_validate(&l.structure, &l.data, folds, &opts, opts.seed)?;
    let report = CvReport::new(scheme_name(folds), &cv);
    print!("{}", report.render());
    emit(&common.run, "cv", SCHEMA_VERSION, &report)
}

fn run_stepwise(
    common: &Common,
    direction: DirectionArg,
    criterion: CriterionArg,
    folds: CvScheme,
    interactive: bool,
    max_steps: Option<usize>,
) -> Outcome {
    let l = load(common)?;
    let candidates = l.config.candidates()?;
    let mut opts = StepwiseOptions::new(
        match direction {
            DirectionArg::Forward => Direction::Forward,
            DirectionArg::Backward => Direction::Backward,
            DirectionArg::Both => Direction::Bidirectional,
        },
        match criterion {
            CriterionArg::Aic => Criterion::Aic,
            CriterionArg::Bic => Criterion::Bic,
            CriterionArg::CvR2 => Criterion::CvR2,
            CriterionArg::CvAuc => Criterion::CvAuc,
        },
    );
    opts.fit = common.fit.options();
    opts.cv_scheme = folds;
    opts.cv_seed = common.fit.seed;
    opts.max_steps = max_steps;
    let trace = if interactive {
        let stdin = io::stdin();
        if stdin.is_terminal() {
            eprintln!("interactive stepwise search; type a row number or `stop`");
        }
        stepwise_search_interactive(
            &l.structure,
            &l.data,
            &candidates,
            &opts,
            stdin.lock(),
            io::stdout().lock(),
        )?
    } else {
        stepwise_search(&l.structure, &l.data, &candidates, &opts)?
    };
    let report = StepwiseReport::new(&trace);
    print!("{}", report.render());
    emit(&common.run, "stepwise", SCHEMA_VERSION, &report)
}

fn run_outliers(common: &Common, threshold: f64) -> Outcome {
    if !(threshold > 0.0) {
        return Err(Failure::Usage("threshold must be positive".into()));
    }
    let l = load(common)?;
    let r = detect_outliers(&l.structure, &l.data, threshold, &common.fit.options())?;
    let report = OutliersReport::new(&r);
    print!("{}", report.render());
    emit(&common.run, "outliers", SCHEMA_VERSION, &report)
}

fn run_simulate(args: &SimulateArgs) -> Outcome {
    let examples = match args.example {
        ExampleArg::One => vec![Example::One],
        ExampleArg::Two => vec![Example::Two],
        ExampleArg::All => vec![Example::One, Example::Two],
    };
    let effects = match args.effect {
        EffectArg::Medium => vec![Effect::Medium],
        EffectArg::Small => vec![Effect::Small],
        EffectArg::All => vec![Effect::Medium, Effect::Small],
    };
    let starts = match args.start {
        StartArg::Equal => vec![StartPoint::Equal],
        StartArg::True => vec![StartPoint::True],
        StartArg::All => vec![StartPoint::Equal, StartPoint::True],
    };
    let mut reports = Vec::new();
    for &n in &args.n {
        for &example in &examples {
            for &effect in &effects {
                for &start in &starts {
                    let mut s = Scenario::new(example, n, effect, start);
                    s.reps = args.reps;
                    s.n_val = args.n_val;
                    s.seed = args.fit.seed;
                    s.noise_sd = args.noise_sd;
                    s.gene_distribution = match args.genes {
                        GenesArg::Binomial => GeneDistribution::Binomial,
                        GenesArg::Gaussian => GeneDistribution::GaussianMatched,
                    };
                    s.fit = args.fit.options();
                    reports.push(run_study(&s)?);
                }
            }
        }
    }
    print!("{}", summary_table(&reports));
    #[derive(Serialize)]
    struct Body<'a> {
        scenarios: &'a [gxescore_core::SimulationReport],
    }
    emit(&args.run, "simulate", SIM_SCHEMA, Body { scenarios: &reports })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    // Per-replication convergence warnings are summarised in the study report.
    let filter = match cli.command {
        Command::Simulate(_) => "warn,gxescore_core::optimizer=error",
        _ => "warn",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(filter)).init();
    let run = match &cli.command {
        Command::Fit(c)
        | Command::Cv { common: c, .. }
        | Command::Stepwise { common: c, .. }
        | Command::Outliers { common: c, .. } => &c.run,
        Command::Simulate(s) => &s.run,
    };
    let outcome = configure_threads(run).and_then(|()| match &cli.command {
        Command::Fit(c) => run_fit(c),
        Command::Cv { common, folds } => run_cv(common, *folds),
        Command::Stepwise {
            common,
            direction,
            criterion,
            folds,
            interactive,
            max_steps,
        } => run_stepwise(common, *direction, *criterion, *folds, *interactive, *max_steps),
        Command::Outliers { common, threshold } => run_outliers(common, *threshold),
        Command::Simulate(args) => run_simulate(args),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
