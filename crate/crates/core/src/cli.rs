//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on domain, convergence or failed-check
//! outcomes, 2 on usage errors and unreadable or malformed input files.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::asycov::{covariance_bundle_at, REPRESENTATION_TOL};
use crate::bridge;
use crate::design::{
    build_model_matrices, check_identifiability, ContingencyTable, DesignSpec, SchemeKind, SchemeSpec,
};
use crate::error::Error;
use crate::fit::fit_loglinear;
use crate::power::{
    optimize_proportions, power_at, required_sample_size, HypothesisSpec, PowerRequest, PowerScheme, DEFAULT_ALPHA,
};
use crate::serde_matrix::{from_rows, to_rows};
use crate::simulate::{monte_carlo_cov, SimulationConfig};

pub const OUTPUT_SCHEMA_VERSION: u32 = 1;
/// Directory that relative `--output` and `--dump-thetas` paths resolve
/// against.
pub const OUTPUT_DIR_ENV: &str = "ORCOV_OUTPUT_DIR";
pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Parser, Debug)]
#[command(
    name = "orcov",
    version,
    about = "Odds-ratio association models for two-way contingency tables"
)]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Json)]
    format: Format,
    /// Write output to this file instead of standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Seed for random number generation; overrides a config file seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Tolerance on the disagreement between covariance representations.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct TableArgs {
    /// Observed table CSV.
    #[arg(long)]
    table: PathBuf,
    /// Design JSON with row and column scores.
    #[arg(long)]
    design: PathBuf,
    /// Table row moved to the reference position before fitting.
    #[arg(long, default_value_t = 0)]
    reference_row: usize,
    /// Table column moved to the reference position before fitting.
    #[arg(long, default_value_t = 0)]
    reference_col: usize,
}

#[derive(Args, Debug)]
struct AlternativeArgs {
    #[arg(long)]
    design: PathBuf,
    /// JSON with the alternative `theta_prime` matrix.
    #[arg(long)]
    theta_prime: PathBuf,
    /// JSON with target `row` and `col` marginal distributions.
    #[arg(long)]
    marginals: PathBuf,
    /// Sampling scheme: M, MR or MC.
    #[arg(long, default_value = "M")]
    scheme: SchemeKind,
    /// Planned row (MR) or column (MC) proportions, comma separated.
    #[arg(long, value_delimiter = ',')]
    proportions: Vec<f64>,
    /// Hypothesis JSON with matrix `q`; defaults to all of θ equal to zero.
    #[arg(long)]
    q: Option<PathBuf>,
    /// Significance level; overrides the hypothesis file.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the model to an observed table.
    Fit(TableArgs),
    /// Asymptotic covariance of the estimates at the fitted table.
    Cov {
        #[command(flatten)]
        table: TableArgs,
        /// Sampling scheme used for the η, μ and λ covariances.
        #[arg(long, default_value = "M")]
        scheme: SchemeKind,
        /// Emit all five representations of the θ covariance.
        #[arg(long)]
        all_representations: bool,
    },
    /// Asymptotic power of the Wald test at one or more sample sizes.
    Power {
        #[command(flatten)]
        alt: AlternativeArgs,
        /// Total sample sizes, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<f64>,
        /// Also search planned proportions on a simplex grid of this
        /// resolution (MR and MC only).
        #[arg(long)]
        optimize: Option<usize>,
    },
    /// Smallest sample size reaching a target power.
    Samplesize {
        #[command(flatten)]
        alt: AlternativeArgs,
        #[arg(long)]
        target_power: f64,
    },
    /// Monte Carlo check of the asymptotic covariance.
    Simulate {
        /// Simulation config JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        /// Hypothesis JSON; enables the Wald rejection rate.
        #[arg(long)]
        q: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Write per-replicate estimates to this CSV file.
        #[arg(long)]
        dump_thetas: Option<PathBuf>,
    },
    /// Conversions between regression coefficients and θ.
    Bridge {
        #[command(subcommand)]
        conversion: BridgeCommand,
    },
    /// Validate input files without estimating anything.
    Check {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        theta_prime: Option<PathBuf>,
        #[arg(long)]
        marginals: Option<PathBuf>,
        #[arg(long)]
        q: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        reference_row: usize,
        #[arg(long, default_value_t = 0)]
        reference_col: usize,
    },
}

/// Vectors are comma separated; matrix rows are separated by `;`.
#[derive(Subcommand, Debug)]
enum BridgeCommand {
    /// θ from linear regression coefficients.
    ThetaFromBeta {
        #[arg(long, allow_hyphen_values = true)]
        beta: String,
        #[arg(long)]
        sigma_y2: f64,
        #[arg(long, allow_hyphen_values = true)]
        cov_x: String,
    },
    /// Linear regression coefficients from θ.
    BetaFromTheta {
        #[arg(long, allow_hyphen_values = true)]
        theta: String,
        #[arg(long)]
        sigma_y2: f64,
        #[arg(long, allow_hyphen_values = true)]
        cov_x: String,
    },
    /// θ from a multivariate linear regression coefficient matrix.
    MvThetaFromBeta {
        #[arg(long, allow_hyphen_values = true)]
        beta: String,
        #[arg(long, allow_hyphen_values = true)]
        cov_y: String,
        #[arg(long, allow_hyphen_values = true)]
        cov_x: String,
    },
    /// Log-linear regression coefficients from θ.
    LoglinearBeta {
        #[arg(long, allow_hyphen_values = true)]
        theta: String,
    },
    /// θ from GLM coefficients and dispersion.
    GlmTheta {
        #[arg(long, allow_hyphen_values = true)]
        beta: String,
        #[arg(long)]
        phi: f64,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Json(_) | Error::Parse(_) => CliError::Usage(e.to_string()),
            other => CliError::Lib(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// A command's result in both output formats.
struct Report {
    json: Map<String, Value>,
    csv: Vec<Vec<String>>,
    exit_code: i32,
}

impl Report {
    fn new(command: &str, json: Value, csv: Vec<Vec<String>>) -> Self {
        let mut map = Map::new();
        map.insert("schema_version".into(), json!(OUTPUT_SCHEMA_VERSION));
        map.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        map.insert("command".into(), json!(command));
        if let Value::Object(body) = json {
            map.extend(body);
        }
        Report {
            json: map,
            csv,
            exit_code: 0,
        }
    }
}

/// `x` rounded to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    if x == 0.0 {
        return 0.0;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

fn fmt_num(x: f64) -> String {
    format!("{}", round_sig(x))
}

fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            *v = json!(round_sig(n.as_f64().expect("f64 number")));
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!(to_rows(m))
}

fn vector_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

fn matrix_csv(name: &str, m: &DMatrix<f64>, rows: &mut Vec<Vec<String>>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            rows.push(vec![name.to_owned(), i.to_string(), j.to_string(), fmt_num(m[(i, j)])]);
        }
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn read_input(flag: &str, path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read --{flag}: {e}")))
}

fn parse_with<T>(flag: &str, path: &Path, parse: impl FnOnce(&str) -> crate::Result<T>) -> CliResult<T> {
    let text = read_input(flag, path)?;
    parse(&text).map_err(|e| match e {
        Error::Io(_) | Error::Json(_) | Error::Parse(_) => CliError::Usage(format!("--{flag}: {e}")),
        other => CliError::Lib(other),
    })
}

fn load_table(args: &TableArgs) -> CliResult<ContingencyTable> {
    let t = parse_with("table", &args.table, ContingencyTable::from_csv_str)?;
    Ok(t.with_reference(args.reference_row, args.reference_col)?)
}

fn load_design(path: &Path) -> CliResult<DesignSpec> {
    parse_with("design", path, DesignSpec::from_json_str)
}

#[derive(Deserialize)]
struct ThetaPrimeFile {
    #[serde(default = "one")]
    version: u32,
    theta_prime: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct MarginalsFile {
    #[serde(default = "one")]
    version: u32,
    row: Vec<f64>,
    col: Vec<f64>,
}

fn one() -> u32 {
    1
}

fn check_version(what: &str, version: u32) -> crate::Result<()> {
    if version != 1 {
        return Err(Error::Parse(format!("unsupported {what} version {version}")));
    }
    Ok(())
}

fn parse_theta_prime(text: &str) -> crate::Result<DMatrix<f64>> {
    let f: ThetaPrimeFile = serde_json::from_str(text)?;
    check_version("theta_prime", f.version)?;
    from_rows(&f.theta_prime)
}

fn parse_marginals(text: &str) -> crate::Result<(Vec<f64>, Vec<f64>)> {
    let f: MarginalsFile = serde_json::from_str(text)?;
    check_version("marginals", f.version)?;
    Ok((f.row, f.col))
}

fn load_hypothesis(path: Option<&Path>, alpha: Option<f64>, l: usize) -> CliResult<HypothesisSpec> {
    let hyp = match path {
        Some(p) => parse_with("q", p, HypothesisSpec::from_json_str)?,
        None => HypothesisSpec::all_zero(l, DEFAULT_ALPHA)?,
    };
    Ok(match alpha {
        Some(a) => hyp.with_alpha(a)?,
        None => hyp,
    })
}

fn parse_vector(flag: &str, s: &str) -> CliResult<DVector<f64>> {
    let vals = s
        .split([',', ';'])
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|e| CliError::Usage(format!("--{flag}: {e}")))?;
    Ok(DVector::from_vec(vals))
}

fn parse_matrix(flag: &str, s: &str) -> CliResult<DMatrix<f64>> {
    let rows = s
        .split(';')
        .map(|r| r.split(',').map(|x| x.trim().parse::<f64>()).collect())
        .collect::<std::result::Result<Vec<Vec<f64>>, _>>()
        .map_err(|e| CliError::Usage(format!("--{flag}: {e}")))?;
    from_rows(&rows).map_err(|e| CliError::Usage(format!("--{flag}: {e}")))
}

fn cmd_fit(args: &TableArgs, tol: f64) -> CliResult<Report> {
    let table = load_table(args)?;
    let spec = load_design(&args.design)?;
    spec.check_table_shape(&table)?;
    let mm = build_model_matrices(&spec)?;
    let fit = fit_loglinear(&table, &mm)?;
    let scheme = SchemeSpec::matching(SchemeKind::M, &table);
    let bundle = covariance_bundle_at(&fit.mu_hat, &mm, &spec, &scheme, tol)?;
    let sigma = &bundle.sigma_theta_projection;

    let json = json!({
        "converged": fit.converged,
        "iterations": fit.iterations,
        "row_labels": table.row_labels(),
        "col_labels": table.col_labels(),
        "alpha_hat": fit.alpha_hat,
        "rho_hat": vector_json(&fit.rho_hat),
        "gamma_hat": vector_json(&fit.gamma_hat),
        "theta_hat": matrix_json(&fit.theta_hat),
        "sigma_theta": matrix_json(sigma),
        "mu_hat": matrix_json(fit.mu_hat.cells()),
    });
    let mut csv = vec![header(&["quantity", "row", "col", "value"])];
    csv.push(vec!["alpha_hat".into(), "0".into(), "0".into(), fmt_num(fit.alpha_hat)]);
    for (i, x) in fit.rho_hat.iter().enumerate() {
        csv.push(vec!["rho_hat".into(), (i + 1).to_string(), "0".into(), fmt_num(*x)]);
    }
    for (i, x) in fit.gamma_hat.iter().enumerate() {
        csv.push(vec!["gamma_hat".into(), "0".into(), (i + 1).to_string(), fmt_num(*x)]);
    }
    matrix_csv("theta_hat", &fit.theta_hat, &mut csv);
    matrix_csv("sigma_theta", sigma, &mut csv);
    matrix_csv("mu_hat", fit.mu_hat.cells(), &mut csv);
    Ok(Report::new("fit", json, csv))
}

fn cmd_cov(args: &TableArgs, kind: SchemeKind, all: bool, tol: f64) -> CliResult<Report> {
    let table = load_table(args)?;
    let spec = load_design(&args.design)?;
    spec.check_table_shape(&table)?;
    let mm = build_model_matrices(&spec)?;
    let fit = fit_loglinear(&table, &mm)?;
    let scheme = SchemeSpec::matching(kind, &table);
    let bundle = covariance_bundle_at(&fit.mu_hat, &mm, &spec, &scheme, tol)?;

    let mut json = json!({
        "scheme": kind.to_string(),
        "theta_hat": matrix_json(&fit.theta_hat),
        "sigma_theta": matrix_json(&bundle.sigma_theta_projection),
        "sigma_lambda": matrix_json(&bundle.sigma_lambda),
    });
    let mut csv = vec![header(&["matrix", "row", "col", "value"])];
    matrix_csv("sigma_theta", &bundle.sigma_theta_projection, &mut csv);
    matrix_csv("sigma_lambda", &bundle.sigma_lambda, &mut csv);
    if all {
        let mut reps = Map::new();
        for (name, m) in bundle.routes() {
            reps.insert(name.into(), matrix_json(m));
            matrix_csv(name, m, &mut csv);
        }
        json["representations"] = Value::Object(reps);
        json["max_pairwise_deviation"] = json!(bundle.max_pairwise_deviation);
        csv.push(vec![
            "max_pairwise_deviation".into(),
            "0".into(),
            "0".into(),
            fmt_num(bundle.max_pairwise_deviation),
        ]);
    }
    Ok(Report::new("cov", json, csv))
}

fn power_inputs(alt: &AlternativeArgs) -> CliResult<(PowerRequest, DesignSpec, HypothesisSpec)> {
    let spec = load_design(&alt.design)?;
    let theta_prime = parse_with("theta-prime", &alt.theta_prime, parse_theta_prime)?;
    let (row_marg, col_marg) = parse_with("marginals", &alt.marginals, parse_marginals)?;
    let scheme = match alt.scheme {
        SchemeKind::M => PowerScheme::Multinomial,
        SchemeKind::MR | SchemeKind::MC if alt.proportions.is_empty() => {
            return Err(CliError::Usage(format!(
                "--scheme {} requires --proportions",
                alt.scheme
            )));
        }
        SchemeKind::MR => PowerScheme::RowMultinomial {
            proportions: alt.proportions.clone(),
        },
        SchemeKind::MC => PowerScheme::ColumnMultinomial {
            proportions: alt.proportions.clone(),
        },
        SchemeKind::P => {
            return Err(CliError::Usage("power analysis supports schemes M, MR and MC".into()));
        }
    };
    let hyp = load_hypothesis(alt.q.as_deref(), alt.alpha, spec.l())?;
    let req = PowerRequest {
        theta_prime,
        row_marg,
        col_marg,
        scheme,
    };
    Ok((req, spec, hyp))
}

fn cmd_power(alt: &AlternativeArgs, ns: &[f64], optimize: Option<usize>) -> CliResult<Report> {
    let (req, spec, hyp) = power_inputs(alt)?;
    let mm = build_model_matrices(&spec)?;
    let mut results = Vec::new();
    let mut csv = vec![header(&["n", "delta", "critical_value", "power"])];
    let mut first = None;
    for &n in ns {
        let r = power_at(&req, n, &hyp, &mm, &spec)?;
        results.push(json!({"n": r.n, "delta": r.delta, "power": r.power}));
        csv.push(vec![
            fmt_num(r.n),
            fmt_num(r.delta),
            fmt_num(r.critical_value),
            fmt_num(r.power),
        ]);
        first.get_or_insert(r);
    }
    let first = first.expect("at least one n");
    let mut json = json!({
        "scheme": alt.scheme.to_string(),
        "alpha": hyp.alpha(),
        "df": hyp.df(),
        "critical_value": first.critical_value,
        "results": results,
        "p_prime": matrix_json(first.p_prime.cells()),
    });
    if let Some(resolution) = optimize {
        let best = optimize_proportions(&req, ns[0], &hyp, &mm, &spec, resolution)?;
        json["optimal_proportions"] = json!({
            "n": ns[0],
            "resolution": resolution,
            "proportions": best.proportions,
            "power": best.power,
        });
    }
    Ok(Report::new("power", json, csv))
}

fn cmd_samplesize(alt: &AlternativeArgs, target: f64) -> CliResult<Report> {
    let (req, spec, hyp) = power_inputs(alt)?;
    let mm = build_model_matrices(&spec)?;
    let s = required_sample_size(&req, target, &hyp, &mm, &spec)?;
    let json = json!({
        "scheme": alt.scheme.to_string(),
        "alpha": hyp.alpha(),
        "df": hyp.df(),
        "target_power": s.target_power,
        "n": s.n,
        "power": s.power,
        "power_below": s.power_below,
        "delta_per_unit": s.delta_per_unit,
        "critical_value": s.critical_value,
    });
    let csv = vec![
        header(&["n", "power", "power_below", "target_power"]),
        vec![
            s.n.to_string(),
            fmt_num(s.power),
            s.power_below.map(fmt_num).unwrap_or_default(),
            fmt_num(s.target_power),
        ],
    ];
    Ok(Report::new("samplesize", json, csv))
}

fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    config: &Path,
    design: &Path,
    q: Option<&Path>,
    alpha: Option<f64>,
    dump: Option<&Path>,
    seed: Option<u64>,
) -> CliResult<Report> {
    let mut cfg = parse_with("config", config, SimulationConfig::from_json_str)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let spec = load_design(design)?;
    let mm = build_model_matrices(&spec)?;
    let hyp = match (q, alpha) {
        (None, None) => None,
        _ => Some(load_hypothesis(q, alpha, spec.l())?),
    };
    let report = monte_carlo_cov(&cfg, &mm, &spec, hyp.as_ref())?;

    if let Some(path) = dump {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["replicate".to_string()];
        head.extend((1..=mm.l()).map(|i| format!("theta_{i}")));
        w.write_record(&head).map_err(|e| Error::Parse(e.to_string()))?;
        for (i, t) in report.replicate_thetas.iter().enumerate() {
            if let Some(t) = t {
                let mut rec = vec![i.to_string()];
                rec.extend(t.iter().map(|&x| fmt_num(x)));
                w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(resolve_output(path), bytes)
            .map_err(Error::Io)
            .map_err(CliError::Lib)?;
    }

    let mut json = serde_json::to_value(&report).map_err(Error::Json)?;
    json["scheme"] = json!(cfg.scheme().kind().to_string());
    let mut csv = vec![header(&["quantity", "row", "col", "value"])];
    matrix_csv(
        "theta_mean",
        &DMatrix::from_column_slice(report.theta_mean.len(), 1, report.theta_mean.as_slice()),
        &mut csv,
    );
    if let Some(e) = &report.empirical_cov {
        matrix_csv("empirical_cov", e, &mut csv);
    }
    matrix_csv("asymptotic_cov", &report.asymptotic_cov, &mut csv);
    for (name, v) in [
        ("max_relative_error", report.max_relative_error),
        ("rejection_rate", report.rejection_rate),
    ] {
        if let Some(v) = v {
            csv.push(vec![name.into(), "0".into(), "0".into(), fmt_num(v)]);
        }
    }
    csv.push(vec![
        "n_success".into(),
        "0".into(),
        "0".into(),
        report.n_success.to_string(),
    ]);
    csv.push(vec![
        "n_failed_fits".into(),
        "0".into(),
        "0".into(),
        report.n_failed_fits.to_string(),
    ]);
    Ok(Report::new("simulate", json, csv))
}

fn vector_report(conversion: &str, name: &str, v: &DVector<f64>) -> Report {
    let json = json!({"conversion": conversion, name: vector_json(v)});
    let mut csv = vec![header(&["index", name])];
    csv.extend(v.iter().enumerate().map(|(i, x)| vec![i.to_string(), fmt_num(*x)]));
    Report::new("bridge", json, csv)
}

fn cmd_bridge(c: &BridgeCommand) -> CliResult<Report> {
    Ok(match c {
        BridgeCommand::ThetaFromBeta { beta, sigma_y2, cov_x } => {
            let input = bridge::LinearBridgeInput {
                beta: parse_vector("beta", beta)?,
                sigma_y2: *sigma_y2,
                cov_x: parse_matrix("cov-x", cov_x)?,
            };
            vector_report("theta-from-beta", "theta", &bridge::theta_from_beta_linear(&input)?)
        }
        BridgeCommand::BetaFromTheta { theta, sigma_y2, cov_x } => {
            let beta = bridge::beta_from_theta_linear(
                &parse_vector("theta", theta)?,
                *sigma_y2,
                &parse_matrix("cov-x", cov_x)?,
            )?;
            vector_report("beta-from-theta", "beta", &beta)
        }
        BridgeCommand::MvThetaFromBeta { beta, cov_y, cov_x } => {
            let theta = bridge::theta_from_beta_mvlinear(
                &parse_matrix("beta", beta)?,
                &parse_matrix("cov-y", cov_y)?,
                &parse_matrix("cov-x", cov_x)?,
            )?;
            let json = json!({"conversion": "mv-theta-from-beta", "theta": matrix_json(&theta)});
            let mut csv = vec![header(&["matrix", "row", "col", "value"])];
            matrix_csv("theta", &theta, &mut csv);
            Report::new("bridge", json, csv)
        }
        BridgeCommand::LoglinearBeta { theta } => vector_report(
            "loglinear-beta",
            "beta",
            &bridge::beta_from_theta_loglinear(&parse_vector("theta", theta)?),
        ),
        BridgeCommand::GlmTheta { beta, phi } => vector_report(
            "glm-theta",
            "theta",
            &bridge::theta_from_glm(&parse_vector("beta", beta)?, *phi)?,
        ),
    })
}

struct CheckLog {
    entries: Vec<Value>,
    csv: Vec<Vec<String>>,
    passed: bool,
}

impl CheckLog {
    fn record(&mut self, input: &str, outcome: std::result::Result<(), String>) {
        let (ok, message) = match outcome {
            Ok(()) => (true, "ok".to_string()),
            Err(m) => (false, m),
        };
        self.passed &= ok;
        self.entries
            .push(json!({"input": input, "passed": ok, "message": message}));
        self.csv.push(vec![input.into(), ok.to_string(), message]);
    }

    fn load<T>(&mut self, input: &str, path: Option<&Path>, parse: impl FnOnce(&str) -> crate::Result<T>) -> Option<T> {
        let path = path?;
        let result = fs::read_to_string(path)
            .map_err(|e| format!("cannot read: {e}"))
            .and_then(|text| parse(&text).map_err(|e| e.to_string()));
        match result {
            Ok(v) => {
                self.record(input, Ok(()));
                Some(v)
            }
            Err(m) => {
                self.record(input, Err(m));
                None
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_check(
    table: Option<&Path>,
    design: Option<&Path>,
    theta_prime: Option<&Path>,
    marginals: Option<&Path>,
    q: Option<&Path>,
    config: Option<&Path>,
    reference: (usize, usize),
) -> CliResult<Report> {
    if [table, design, theta_prime, marginals, q, config]
        .iter()
        .all(Option::is_none)
    {
        return Err(CliError::Usage("check needs at least one input file".into()));
    }
    let mut log = CheckLog {
        entries: Vec::new(),
        csv: vec![header(&["input", "passed", "message"])],
        passed: true,
    };
    let table = log.load("table", table, |t| {
        ContingencyTable::from_csv_str(t)?.with_reference(reference.0, reference.1)
    });
    let spec = log.load("design", design, DesignSpec::from_json_str);
    let theta = log.load("theta_prime", theta_prime, parse_theta_prime);
    let marg = log.load("marginals", marginals, parse_marginals);
    let hyp = log.load("q", q, HypothesisSpec::from_json_str);
    let cfg = log.load("config", config, SimulationConfig::from_json_str);

    let mut identifiability = Value::Null;
    if let Some(spec) = &spec {
        if let Some(t) = &table {
            let report = check_identifiability(spec, t);
            let outcome = if report.passed {
                Ok(())
            } else {
                Err(report.failures.join("; "))
            };
            identifiability = serde_json::to_value(&report).map_err(Error::Json)?;
            log.record("identifiability", outcome);
            log.record(
                "margins",
                match t.row_totals().iter().position(|&x| x <= 0.0) {
                    Some(j) => Err(format!("row {j} has zero total")),
                    None => match t.col_totals().iter().position(|&x| x <= 0.0) {
                        Some(k) => Err(format!("column {k} has zero total")),
                        None => Ok(()),
                    },
                },
            );
        } else {
            log.record(
                "design_matrices",
                build_model_matrices(spec).map(|_| ()).map_err(|e| e.to_string()),
            );
        }
        if let Some(theta) = &theta {
            log.record(
                "theta_prime_shape",
                if theta.shape() == (spec.lx(), spec.ly()) {
                    Ok(())
                } else {
                    Err(format!(
                        "theta_prime is {}x{}, expected {}x{}",
                        theta.nrows(),
                        theta.ncols(),
                        spec.lx(),
                        spec.ly()
                    ))
                },
            );
        }
        if let Some((row, col)) = &marg {
            let req = PowerRequest {
                theta_prime: DMatrix::zeros(spec.lx(), spec.ly()),
                row_marg: row.clone(),
                col_marg: col.clone(),
                scheme: PowerScheme::Multinomial,
            };
            log.record("marginals_shape", req.validate(spec).map_err(|e| e.to_string()));
        }
        if let Some(h) = &hyp {
            log.record(
                "q_shape",
                if h.q().ncols() == spec.l() {
                    Ok(())
                } else {
                    Err(format!(
                        "q has {} columns, the design has L = {}",
                        h.q().ncols(),
                        spec.l()
                    ))
                },
            );
        }
        if let Some(c) = &cfg {
            log.record("config_shape", spec.check_table_shape(c.p()).map_err(|e| e.to_string()));
        }
    }

    let json = json!({
        "passed": log.passed,
        "checks": log.entries,
        "identifiability": identifiability,
    });
    let mut report = Report::new("check", json, log.csv);
    report.exit_code = if log.passed { 0 } else { 1 };
    Ok(report)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::SingularBasis { .. }
        | Error::SingularLeadingBlock
        | Error::SingularSchurComplement
        | Error::Singular { .. } => "singular",
        Error::Identifiability { .. } => "identifiability",
        Error::NonConvergence { .. } | Error::IpfNonConvergence { .. } => "convergence",
        Error::Route { .. } | Error::RepresentationMismatch { .. } => "representation",
        Error::UnreachablePower { .. } => "unreachable_power",
        Error::AllReplicatesFailed { .. } => "simulation",
        Error::Dimension(_) => "dimension",
        Error::Domain(_) => "domain",
        Error::Parse(_) | Error::Json(_) => "parse",
        Error::Io(_) => "io",
    }
}

fn dispatch(cli: &Cli) -> CliResult<Report> {
    let tol = cli.tol.unwrap_or(REPRESENTATION_TOL);
    if !(tol > 0.0) {
        return Err(CliError::Usage("--tol must be positive".into()));
    }
    match &cli.command {
        Command::Fit(args) => cmd_fit(args, tol),
        Command::Cov {
            table,
            scheme,
            all_representations,
        } => cmd_cov(table, *scheme, *all_representations, tol),
        Command::Power { alt, n, optimize } => cmd_power(alt, n, *optimize),
        Command::Samplesize { alt, target_power } => cmd_samplesize(alt, *target_power),
        Command::Simulate {
            config,
            design,
            q,
            alpha,
            dump_thetas,
        } => cmd_simulate(config, design, q.as_deref(), *alpha, dump_thetas.as_deref(), cli.seed),
        Command::Bridge { conversion } => cmd_bridge(conversion),
        Command::Check {
            table,
            design,
            theta_prime,
            marginals,
            q,
            config,
            reference_row,
            reference_col,
        } => cmd_check(
            table.as_deref(),
            design.as_deref(),
            theta_prime.as_deref(),
            marginals.as_deref(),
            q.as_deref(),
            config.as_deref(),
            (*reference_row, *reference_col),
        ),
    }
}

fn render(report: Report, format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let mut v = Value::Object(report.json);
            round_json(&mut v);
            let mut s = serde_json::to_string_pretty(&v).expect("serializable");
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
            for rec in &report.csv {
                w.write_record(rec).expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    return 0;
                }
                _ => 2,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };

    let (message, kind, code) = match dispatch(&cli) {
        Ok(report) => {
            let code = report.exit_code;
            let bytes = render(report, cli.format);
            let written = match &cli.output {
                Some(path) => fs::write(resolve_output(path), &bytes),
                None => out.write_all(&bytes),
            };
            match written {
                Ok(()) => return code,
                Err(e) => (format!("cannot write output: {e}"), "io", 1),
            }
        }
        Err(CliError::Usage(m)) => (m, "usage", 2),
        Err(CliError::Lib(e)) => (e.to_string(), error_kind(&e), 1),
    };
    match cli.format {
        Format::Json => {
            let obj = json!({
                "schema_version": OUTPUT_SCHEMA_VERSION,
                "error": {"kind": kind, "message": message},
            });
            let _ = writeln!(err, "{obj}");
        }
        Format::Csv => {
            let _ = writeln!(err, "error: {message}");
        }
    }
    code
}
