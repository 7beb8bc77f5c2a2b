//! Command-line interface around the unmixing library.
//!
//! Four subcommands cover the pipeline: `train` fits the forward operator
//! and noise covariance from paired CSV files, `invert` maps one observation
//! back onto the simplex (point estimate or posterior ensemble), `scaling`
//! prints the design variance factors, and `experiment` runs the synthetic
//! calibration studies. All matrix files are headerless CSV with one row per
//! line; reports are JSON embedding the fully resolved configuration, so any
//! run is reproducible from its own output. Exit codes: 0 success, 1 for
//! invalid parameters or I/O problems, 2 for inconsistent data (parse,
//! shape, rank), 3 for numeric failures, 64 for an unknown subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use simplex_uq::covariance::{
    default_band_width, estimate_covariance, CovarianceEstimate, CovarianceMode,
};
use simplex_uq::error::{Error, Result};
use simplex_uq::inversion::{
    kkt_residual, log_marginal_posterior, map_fixed_operator, mh_sample, uncertainty_factor,
    ChainMeta, ConfidenceEllipse, InversionModel, InversionProblem, McmcConfig,
};
use simplex_uq::io::{format_value, read_matrix_csv, write_matrix_csv};
use simplex_uq::simplex::MixtureDesign;
use simplex_uq::synth::{
    experiment_gamma, experiment_inclusion, experiment_single, resolve_design, GammaConfig,
    GammaReport, InclusionConfig, InclusionReport, SingleConfig, SingleReport,
};
use simplex_uq::training::{
    analytic_scaling_factors, empirical_scaling_factors, estimate_operator, OperatorEstimate,
    TrainingSet,
};

const SEED_ENV: &str = "SIMPLEX_UQ_SEED";

#[derive(Parser)]
#[command(
    name = "simplex-uq",
    version,
    about = "Linear unmixing on the probability simplex with training-uncertainty propagation",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the forward operator and noise covariance from training pairs.
    Train(TrainArgs),
    /// Invert one observation onto the simplex using trained artifacts.
    Invert(InvertArgs),
    /// Print variance scaling factors for a mixture design.
    Scaling(ScalingArgs),
    /// Run a synthetic calibration experiment.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training compositions CSV, one sample per row (N×M).
    #[arg(long)]
    compositions: PathBuf,
    /// Training observations CSV, one sample per row (N×T).
    #[arg(long)]
    observations: PathBuf,
    /// Directory receiving operator.csv, covariance.csv, training_report.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Covariance estimator: mle, sample, diag, band, or band:<K>.
    #[arg(long, default_value = "mle")]
    cov_mode: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    /// Treat the trained operator as exact (constrained least squares).
    Fixed,
    /// Marginalize over training scatter (MCMC posterior ensemble).
    Stochastic,
}

#[derive(Args)]
struct InvertArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model_dir: PathBuf,
    /// Observation CSV: a single row of T channel values.
    #[arg(long)]
    observation: PathBuf,
    /// Directory receiving solution.json (and draws.csv when stochastic).
    #[arg(long)]
    out_dir: PathBuf,
    /// Inversion model.
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Confidence level for the reported ellipses.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Total MCMC steps (stochastic model).
    #[arg(long)]
    chain_length: Option<usize>,
    /// Steps discarded while the proposal scale adapts.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep every k-th post-burn-in state.
    #[arg(long)]
    thinning: Option<usize>,
    /// Initial proposal step scale.
    #[arg(long)]
    scale: Option<f64>,
    /// Step length above which the boundary correction is evaluated.
    #[arg(long)]
    z_threshold: Option<f64>,
    /// Monte Carlo size for each boundary-correction evaluation.
    #[arg(long)]
    z_mc_samples: Option<usize>,
    /// Chain seed (SIMPLEX_UQ_SEED overrides).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScalingArgs {
    /// Design name: pure, binary, multinomial, dmult-replace,
    /// dmult-noreplace, uniform, pseudo-uniform.
    #[arg(long)]
    design: String,
    /// Number of endmembers M.
    #[arg(long)]
    m: usize,
    /// Number of training samples N.
    #[arg(long)]
    n: usize,
    /// Compositions CSV (N×M, one sample per row) for empirical factors.
    #[arg(long)]
    empirical: Option<PathBuf>,
    /// Also write the table to this JSON file.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(subcommand)]
    kind: ExperimentKind,
}

#[derive(Subcommand)]
enum ExperimentKind {
    /// Variance-ratio calibration across designs and sample sizes.
    Gamma(ExperimentRunArgs),
    /// Confidence-ellipse coverage of known compositions.
    Inclusion(ExperimentRunArgs),
    /// One full train-and-invert run with posterior geometry.
    Single(ExperimentRunArgs),
}

#[derive(Args)]
struct ExperimentRunArgs {
    /// Experiment configuration JSON; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving the report JSON and curve CSV.
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads for independent trials (overrides the config).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::InvalidSubcommand => 64,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Invert(args) => cmd_invert(args),
        Command::Scaling(args) => cmd_scaling(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

/// 1: invalid input or I/O; 2: data that does not fit together; 3: numeric.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Param(_)
        | Error::Composition { .. }
        | Error::UnsupportedClosedForm(_)
        | Error::Io { .. } => 1,
        Error::Shape(_)
        | Error::Parse { .. }
        | Error::RankDeficient { .. }
        | Error::NonUnique(_) => 2,
        Error::SingularCovariance(_)
        | Error::StepScale { .. }
        | Error::NonFinite(_)
        | Error::VarianceUndefined(_)
        | Error::UndefinedCorrelation(_) => 3,
    }
}

// ---------------------------------------------------------------- file I/O

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        file: path.display().to_string(),
        source,
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::NonFinite(format!("JSON serialization: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw.trim().parse::<u64>().map(Some).map_err(|_| {
            Error::Param(format!(
                "{SEED_ENV} must be an unsigned 64-bit integer, got '{raw}'"
            ))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Param(format!("{SEED_ENV}: {e}"))),
    }
}

// ------------------------------------------------------------------- train

#[derive(Serialize, Deserialize)]
struct TrainEcho {
    compositions: String,
    observations: String,
    out_dir: String,
    cov_mode: CovarianceMode,
}

#[derive(Serialize, Deserialize)]
struct CorrelationSummary {
    /// Largest |ρ_ij| over i<j with positive variances (0 when none exist).
    max_abs: f64,
    /// Channel pair attaining `max_abs`.
    pair: Option<[usize; 2]>,
    /// Mean |ρ| over adjacent channel pairs.
    mean_adjacent: f64,
}

#[derive(Serialize, Deserialize)]
struct TrainingReport {
    version: String,
    config: TrainEcho,
    n_samples: usize,
    n_endmembers: usize,
    n_channels: usize,
    /// Per-endmember variance scaling factors diag((MMᵀ)⁻¹).
    scaling: Vec<f64>,
    scaling_sum: f64,
    correlation: CorrelationSummary,
}

fn parse_cov_mode(raw: &str, n_samples: usize, t: usize) -> Result<CovarianceMode> {
    match raw {
        "mle" => Ok(CovarianceMode::Mle),
        "sample" => Ok(CovarianceMode::Sample),
        "diag" => Ok(CovarianceMode::Diag),
        "band" => Ok(CovarianceMode::Banded {
            k: default_band_width(n_samples, t),
        }),
        other => {
            if let Some(width) = other.strip_prefix("band:") {
                let k = width.parse::<usize>().map_err(|_| {
                    Error::Param(format!("band width '{width}' is not an unsigned integer"))
                })?;
                Ok(CovarianceMode::Banded { k })
            } else {
                Err(Error::Param(format!(
                    "unknown covariance mode '{other}'; expected mle, sample, diag, band, or band:<K>"
                )))
            }
        }
    }
}

fn correlation_summary(matrix: &Array2<f64>) -> CorrelationSummary {
    let t = matrix.nrows();
    let mut max_abs = 0.0f64;
    let mut pair = None;
    let mut adj_sum = 0.0;
    let mut adj_count = 0usize;
    for i in 0..t {
        for j in (i + 1)..t {
            let (vi, vj) = (matrix[(i, i)], matrix[(j, j)]);
            if vi <= 0.0 || vj <= 0.0 {
                continue;
            }
            let rho = matrix[(i, j)] / (vi * vj).sqrt();
            if rho.abs() > max_abs {
                max_abs = rho.abs();
                pair = Some([i, j]);
            }
            if j == i + 1 {
                adj_sum += rho.abs();
                adj_count += 1;
            }
        }
    }
    CorrelationSummary {
        max_abs,
        pair,
        mean_adjacent: if adj_count == 0 { 0.0 } else { adj_sum / adj_count as f64 },
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let compositions = read_matrix_csv(&args.compositions)?;
    let observations = read_matrix_csv(&args.observations)?;
    let ts = TrainingSet::from_rows(compositions, observations)?;
    let op = estimate_operator(&ts)?;
    let mode = parse_cov_mode(&args.cov_mode, ts.n_samples(), ts.n_channels())?;
    let cov = estimate_covariance(&ts, &op, mode)?;

    ensure_dir(&args.out_dir)?;
    write_matrix_csv(&args.out_dir.join("operator.csv"), op.matrix.view())?;
    write_matrix_csv(&args.out_dir.join("covariance.csv"), cov.matrix.view())?;
    let report = TrainingReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: TrainEcho {
            compositions: args.compositions.display().to_string(),
            observations: args.observations.display().to_string(),
            out_dir: args.out_dir.display().to_string(),
            cov_mode: mode,
        },
        n_samples: ts.n_samples(),
        n_endmembers: ts.n_endmembers(),
        n_channels: ts.n_channels(),
        scaling: op.scaling.to_vec(),
        scaling_sum: op.scaling.sum(),
        correlation: correlation_summary(&cov.matrix),
    };
    write_json(&args.out_dir.join("training_report.json"), &report)?;

    println!(
        "trained {}x{} operator from {} samples (cov mode {})",
        ts.n_channels(),
        ts.n_endmembers(),
        ts.n_samples(),
        mode.name()
    );
    println!("wrote {}", args.out_dir.join("operator.csv").display());
    println!("wrote {}", args.out_dir.join("covariance.csv").display());
    println!("wrote {}", args.out_dir.join("training_report.json").display());
    Ok(())
}

// ------------------------------------------------------------------ invert

#[derive(Serialize)]
struct InvertEcho {
    model_dir: String,
    observation: String,
    out_dir: String,
    model: String,
    level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mcmc: Option<McmcConfig>,
}

#[derive(Serialize)]
struct PosteriorSection {
    map_stochastic: Vec<f64>,
    /// Largest coordinate gap between the fixed MAP and the best draw.
    map_gap: f64,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    acceptance_rate: f64,
    /// Variance inflation at the best draw and its design-wide maximum.
    b_at_map: f64,
    b_max: f64,
    ellipses: Vec<ConfidenceEllipse>,
    meta: ChainMeta,
}

#[derive(Serialize)]
struct Solution {
    version: String,
    config: InvertEcho,
    /// Constrained least-squares estimate (the MAP under the fixed model).
    map_fixed: Vec<f64>,
    kkt_residual: f64,
    log_posterior: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    posterior: Option<PosteriorSection>,
}

fn require_artifact(dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::Param(format!(
            "missing trained artifact {}; run `simplex-uq train --out-dir {}` first",
            path.display(),
            dir.display()
        )));
    }
    Ok(path)
}

fn rows_to_vecs(matrix: &Array2<f64>) -> Vec<Vec<f64>> {
    matrix.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn cmd_invert(args: InvertArgs) -> Result<()> {
    let report: TrainingReport =
        read_json(&require_artifact(&args.model_dir, "training_report.json")?)?;
    let operator = read_matrix_csv(&require_artifact(&args.model_dir, "operator.csv")?)?;
    let cov_matrix = read_matrix_csv(&require_artifact(&args.model_dir, "covariance.csv")?)?;
    let (t, m) = operator.dim();
    if report.n_channels != t || report.n_endmembers != m || report.scaling.len() != m {
        return Err(Error::Shape(format!(
            "training report (T={}, M={}, {} scaling factors) does not match operator.csv ({t}×{m})",
            report.n_channels,
            report.n_endmembers,
            report.scaling.len()
        )));
    }

    let obs_rows = read_matrix_csv(&args.observation)?;
    if obs_rows.nrows() != 1 || obs_rows.ncols() != t {
        return Err(Error::Shape(format!(
            "observation must be a single CSV row of {t} values, got {}×{}",
            obs_rows.nrows(),
            obs_rows.ncols()
        )));
    }
    let observation = obs_rows.row(0).to_owned();

    let op = OperatorEstimate {
        matrix: operator,
        b_matrix: Array2::zeros((0, m)),
        scaling: Array1::from(report.scaling.clone()),
        n_train: report.n_samples,
    };
    let cov = CovarianceEstimate::from_matrix(cov_matrix, report.config.cov_mode, report.n_samples)?;
    let model = match args.model {
        ModelArg::Fixed => InversionModel::FixedOperator,
        ModelArg::Stochastic => InversionModel::StochasticOperator,
    };
    let problem = InversionProblem::new(observation, &op, &cov, model)?;
    let map_fixed = map_fixed_operator(&problem)?;

    let mut mcmc = None;
    let posterior = match model {
        InversionModel::FixedOperator => None,
        InversionModel::StochasticOperator => {
            let mut config = McmcConfig::default();
            if let Some(v) = args.chain_length {
                config.chain_length = v;
            }
            if let Some(v) = args.burn_in {
                config.burn_in = v;
            }
            if let Some(v) = args.thinning {
                config.thinning = v;
            }
            if let Some(v) = args.scale {
                config.scale = v;
            }
            if args.z_threshold.is_some() {
                config.z_threshold = args.z_threshold;
            }
            if let Some(v) = args.z_mc_samples {
                config.z_mc_samples = v;
            }
            if let Some(v) = args.seed {
                config.seed = v;
            }
            if let Some(seed) = seed_override()? {
                config.seed = seed;
            }

            let ensemble = mh_sample(&problem, &config)?;
            if ensemble.meta.mixing_warning {
                eprintln!(
                    "warning: post-burn-in acceptance {:.4} is below 1%; \
                     treat the ensemble with suspicion",
                    ensemble.acceptance_rate
                );
            }
            let factor = uncertainty_factor(&ensemble.map_draw, problem.scaling())?;
            let mut ellipses = Vec::new();
            for i in 0..m {
                for j in (i + 1)..m {
                    ellipses.push(ensemble.confidence_ellipse(args.level, (i, j))?);
                }
            }
            let map_gap = map_fixed
                .values()
                .iter()
                .zip(ensemble.map_draw.values().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);

            ensure_dir(&args.out_dir)?;
            write_matrix_csv(&args.out_dir.join("draws.csv"), ensemble.draws.view())?;
            mcmc = Some(config);
            Some(PosteriorSection {
                map_stochastic: ensemble.map_draw.values().to_vec(),
                map_gap,
                mean: ensemble.mean().to_vec(),
                covariance: rows_to_vecs(&ensemble.summary.covariance),
                acceptance_rate: ensemble.acceptance_rate,
                b_at_map: factor.b,
                b_max: factor.b_max,
                ellipses,
                meta: ensemble.meta.clone(),
            })
        }
    };

    ensure_dir(&args.out_dir)?;
    let solution = Solution {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: InvertEcho {
            model_dir: args.model_dir.display().to_string(),
            observation: args.observation.display().to_string(),
            out_dir: args.out_dir.display().to_string(),
            model: match args.model {
                ModelArg::Fixed => "fixed".to_string(),
                ModelArg::Stochastic => "stochastic".to_string(),
            },
            level: args.level,
            mcmc,
        },
        map_fixed: map_fixed.values().to_vec(),
        kkt_residual: kkt_residual(&problem, map_fixed.values()),
        log_posterior: log_marginal_posterior(map_fixed.values(), &problem),
        posterior,
    };
    write_json(&args.out_dir.join("solution.json"), &solution)?;

    match &solution.posterior {
        None => {
            let rendered: Vec<String> =
                solution.map_fixed.iter().map(|v| format_value(*v)).collect();
            println!("MAP composition: [{}]", rendered.join(", "));
        }
        Some(p) => {
            let rendered: Vec<String> = p.mean.iter().map(|v| format_value(*v)).collect();
            println!("posterior mean: [{}]", rendered.join(", "));
            println!(
                "acceptance {:.4}, {} kept draws",
                p.acceptance_rate,
                p.meta.chain_length.saturating_sub(p.meta.burn_in) / p.meta.thinning.max(1)
            );
        }
    }
    println!("wrote {}", args.out_dir.join("solution.json").display());
    Ok(())
}

// ----------------------------------------------------------------- scaling

#[derive(Serialize)]
struct ScalingTable {
    version: String,
    design: String,
    m: usize,
    n: usize,
    analytic: Vec<f64>,
    analytic_sum: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    empirical: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<Vec<f64>>,
}

fn parse_design(name: &str, m: usize) -> Result<MixtureDesign> {
    let design = match name {
        "pure" => MixtureDesign::RepeatedPure { m, k: 1 },
        "binary" => MixtureDesign::RepeatedBinary { m, k: 1 },
        "multinomial" => MixtureDesign::Multinomial { m },
        "dmult-replace" => MixtureDesign::DoubleMultinomialWithReplacement { m },
        "dmult-noreplace" => MixtureDesign::DoubleMultinomialWithoutReplacement { m },
        "uniform" => MixtureDesign::UniformSimplex { m },
        "pseudo-uniform" => MixtureDesign::PseudoUniform { m },
        other => {
            return Err(Error::Param(format!(
                "unknown design '{other}'; expected pure, binary, multinomial, \
                 dmult-replace, dmult-noreplace, uniform, or pseudo-uniform"
            )))
        }
    };
    design.validate()?;
    Ok(design)
}

fn cmd_scaling(args: ScalingArgs) -> Result<()> {
    let design = resolve_design(parse_design(&args.design, args.m)?, args.n)?;
    let analytic = analytic_scaling_factors(design, args.n)?;

    let empirical = match &args.empirical {
        None => None,
        Some(path) => {
            let samples = read_matrix_csv(path)?;
            if samples.ncols() != args.m || samples.nrows() != args.n {
                return Err(Error::Shape(format!(
                    "{}: expected {}×{} compositions (one sample per row), got {}×{}",
                    path.display(),
                    args.n,
                    args.m,
                    samples.nrows(),
                    samples.ncols()
                )));
            }
            Some(empirical_scaling_factors(samples.t())?)
        }
    };

    println!("design {}  M {}  N {}", design.name(), args.m, args.n);
    match &empirical {
        None => {
            println!("{:>9}  {:>24}", "endmember", "analytic");
            for (j, r) in analytic.iter().enumerate() {
                println!("{j:>9}  {:>24}", format_value(*r));
            }
            println!("{:>9}  {:>24}", "sum", format_value(analytic.sum()));
        }
        Some(emp) => {
            println!(
                "{:>9}  {:>24}  {:>24}  {:>10}",
                "endmember", "analytic", "empirical", "ratio"
            );
            for (j, r) in analytic.iter().enumerate() {
                println!(
                    "{j:>9}  {:>24}  {:>24}  {:>10.6}",
                    format_value(*r),
                    format_value(emp[j]),
                    emp[j] / r
                );
            }
            println!(
                "{:>9}  {:>24}  {:>24}  {:>10.6}",
                "sum",
                format_value(analytic.sum()),
                format_value(emp.sum()),
                emp.sum() / analytic.sum()
            );
        }
    }

    if let Some(path) = &args.json {
        let table = ScalingTable {
            version: env!("CARGO_PKG_VERSION").to_string(),
            design: design.name().to_string(),
            m: args.m,
            n: args.n,
            analytic: analytic.to_vec(),
            analytic_sum: analytic.sum(),
            empirical: empirical.as_ref().map(|e| e.to_vec()),
            ratio: empirical
                .as_ref()
                .map(|e| e.iter().zip(analytic.iter()).map(|(e, a)| e / a).collect()),
        };
        write_json(path, &table)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// -------------------------------------------------------------- experiment

fn gamma_curves_csv(report: &GammaReport) -> String {
    let mut out = String::from("design,m,n,endmember,band,gamma\n");
    for cell in &report.cells {
        for (j, g) in cell.gamma.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                cell.design,
                cell.m,
                cell.n,
                j,
                cell.band,
                format_value(*g)
            ));
        }
    }
    out
}

fn inclusion_curves_csv(report: &InclusionReport) -> String {
    let mut out = String::from(
        "design,n,trials,joint_rate,pair_01,pair_02,pair_12,mean_acceptance,\
         mixing_warnings,map_agreement_rate\n",
    );
    for cell in &report.cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            cell.design,
            cell.n,
            cell.trials,
            format_value(cell.joint_rate),
            format_value(cell.pair_rates[0]),
            format_value(cell.pair_rates[1]),
            format_value(cell.pair_rates[2]),
            format_value(cell.mean_acceptance),
            cell.mixing_warnings,
            format_value(cell.map_agreement_rate)
        ));
    }
    out
}

fn ellipse_curves_csv(report: &SingleReport) -> String {
    let mut out =
        String::from("pair_i,pair_j,level,center_0,center_1,semi_major,semi_minor,angle,chi2\n");
    for e in &report.ellipses {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            e.pair.0,
            e.pair.1,
            format_value(e.level),
            format_value(e.center[0]),
            format_value(e.center[1]),
            format_value(e.semi_axes[0]),
            format_value(e.semi_axes[1]),
            format_value(e.angle),
            format_value(e.chi2)
        ));
    }
    out
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    match args.kind {
        ExperimentKind::Gamma(run) => {
            let mut config: GammaConfig = match &run.config {
                Some(path) => read_json(path)?,
                None => GammaConfig::default(),
            };
            if let Some(seed) = seed_override()? {
                config.seed = seed;
            }
            if let Some(threads) = run.threads {
                config.threads = threads;
            }
            let report = experiment_gamma(&config)?;
            ensure_dir(&run.out_dir)?;
            write_json(&run.out_dir.join("gamma_report.json"), &report)?;
            write_text(
                &run.out_dir.join("gamma_curves.csv"),
                &gamma_curves_csv(&report),
            )?;
            println!(
                "gamma experiment: {} cells -> {}",
                report.cells.len(),
                run.out_dir.display()
            );
        }
        ExperimentKind::Inclusion(run) => {
            let mut config: InclusionConfig = match &run.config {
                Some(path) => read_json(path)?,
                None => InclusionConfig::default(),
            };
            if let Some(seed) = seed_override()? {
                config.seed = seed;
            }
            if let Some(threads) = run.threads {
                config.threads = threads;
            }
            let report = experiment_inclusion(&config)?;
            let warnings: usize = report.cells.iter().map(|c| c.mixing_warnings).sum();
            if warnings > 0 {
                eprintln!("warning: {warnings} trial chains reported poor mixing");
            }
            ensure_dir(&run.out_dir)?;
            write_json(&run.out_dir.join("inclusion_report.json"), &report)?;
            write_text(
                &run.out_dir.join("inclusion_curves.csv"),
                &inclusion_curves_csv(&report),
            )?;
            println!(
                "inclusion experiment: {} cells -> {}",
                report.cells.len(),
                run.out_dir.display()
            );
        }
        ExperimentKind::Single(run) => {
            let mut config: SingleConfig = match &run.config {
                Some(path) => read_json(path)?,
                None => SingleConfig::default(),
            };
            if let Some(seed) = seed_override()? {
                config.seed = seed;
            }
            if run.threads.is_some() {
                eprintln!("note: the single experiment runs one trial; --threads ignored");
            }
            let report = experiment_single(&config)?;
            if report.mixing_warning {
                eprintln!("warning: chain reported poor mixing");
            }
            ensure_dir(&run.out_dir)?;
            write_json(&run.out_dir.join("single_report.json"), &report)?;
            write_text(
                &run.out_dir.join("ellipses.csv"),
                &ellipse_curves_csv(&report),
            )?;
            println!(
                "single experiment: map gap {} -> {}",
                format_value(report.map_gap),
                run.out_dir.display()
            );
        }
    }
    Ok(())
}
