//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 unparsable input data or
//! model file, 3 degenerate data, 4 dimension mismatch, 5 rate table with
//! insufficient cells.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::DsimError;
use crate::index_opt::{fit_dsim, SearchConfig};
use crate::model::{ModelDocument, Predictor};
use crate::sample::Sample;
use crate::simulate::{self, generate_noiseless, generate_replicate, parse_angle, ExperimentGrid, Noise, QChoice, SimScenario};
use crate::index_opt::SphericalPoint;
use crate::weighting::{WeightingConfig, WeightingMeasure};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_DIMENSION: i32 = 4;
pub const EXIT_INSUFFICIENT: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "dsim", version, about = "Distributional single index model: fit, predict, simulate")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// RNG seed for simulations
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Weighting measure: `empirical`, `uniform:A,B`, inline JSON, or a JSON file
    #[arg(long, global = true)]
    q: Option<String>,

    /// Grid points per angle, e.g. `40` or `20,40`
    #[arg(long, global = true, value_delimiter = ',')]
    grid: Option<Vec<usize>>,

    /// Refine around the best grid nodes (default)
    #[arg(long, global = true, overrides_with = "no_refine")]
    refine: bool,

    /// Skip local refinement
    #[arg(long, global = true)]
    no_refine: bool,

    /// Output file (stdout when omitted, except for `fit`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model from CSV data
    Fit(FitArgs),
    /// Predict index values, quantiles and CDF values from a fitted model
    Predict(PredictArgs),
    /// Run a Monte Carlo rate table
    Rates(RatesArgs),
    /// Write a synthetic sample as CSV
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Response column (header name, or 0-based index with --no-header)
    #[arg(long)]
    response: String,
    /// Covariate columns, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    covariates: Vec<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    no_header: bool,
    /// Number of grid nodes to refine from
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// A covariate vector, comma separated; repeatable
    #[arg(long = "x", allow_hyphen_values = true)]
    points: Vec<String>,
    /// CSV of covariate rows
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    taus: Vec<f64>,
    /// Response values at which to report the predicted CDF
    #[arg(long = "cdf-at", value_delimiter = ',', allow_hyphen_values = true)]
    cdf_at: Vec<f64>,
}

#[derive(Debug, Args)]
struct RatesArgs {
    /// Experiment grid JSON (defaults to the desk-scale single cell)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the full experiment design (slow)
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    reps: Option<usize>,
    /// Sample sizes, comma separated
    #[arg(long = "n", value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    #[arg(long)]
    mc_draws: Option<usize>,
    /// Also write per-replicate errors here
    #[arg(long)]
    raw_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Angles of the true index, e.g. `pi/4` or `pi/4,pi/2`
    #[arg(long, value_delimiter = ',', default_value = "pi/4")]
    theta0: Vec<String>,
    #[arg(long, value_enum, default_value = "exponential")]
    noise: NoiseArg,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    rep: usize,
    /// Freeze the noise at 1
    #[arg(long)]
    noiseless: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum NoiseArg {
    Gaussian,
    Exponential,
}

impl From<NoiseArg> for Noise {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Gaussian => Noise::Gaussian,
            NoiseArg::Exponential => Noise::Exponential,
        }
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }
}

impl From<DsimError> for CliError {
    fn from(e: DsimError) -> Self {
        let code = match &e {
            DsimError::DimensionMismatch { .. } => EXIT_DIMENSION,
            DsimError::Degenerate(_) => EXIT_DEGENERATE,
            DsimError::Json(_) | DsimError::Model(_) => EXIT_PARSE,
            _ => EXIT_USAGE,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(EXIT_USAGE, e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(stderr, "{e}") } else { write!(stdout, "{e}") };
            return code;
        }
    };
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => {
                let mut buf = Vec::new();
                let r = pool.install(|| dispatch(&cli, &mut buf));
                let _ = stdout.write_all(&buf);
                r
            }
            Err(e) => Err(CliError::new(EXIT_USAGE, e.to_string())),
        },
        None => dispatch(&cli, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> CliResult<i32> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a, stdout),
        Command::Predict(a) => cmd_predict(cli, a, stdout),
        Command::Rates(a) => cmd_rates(cli, a, stdout),
        Command::Simulate(a) => cmd_simulate(cli, a, stdout),
    }
}

fn search_config(cli: &Cli, base: SearchConfig) -> SearchConfig {
    let mut cfg = base;
    if let Some(g) = &cli.grid {
        cfg.grid_sizes = Some(g.clone());
    }
    if cli.no_refine {
        cfg.refine = false;
    } else if cli.refine {
        cfg.refine = true;
    }
    cfg
}

/// Resolves the `--q` argument.
pub fn parse_weighting(spec: &str) -> std::result::Result<WeightingConfig, DsimError> {
    let s = spec.trim();
    if s == "empirical" {
        return Ok(WeightingConfig::Empirical);
    }
    if let Some(rest) = s.strip_prefix("uniform:") {
        let parts: Vec<&str> = rest.split(',').collect();
        let bad = || DsimError::InvalidInput(format!("expected uniform:A,B, got `{s}`"));
        if parts.len() != 2 {
            return Err(bad());
        }
        let a = parts[0].trim().parse().map_err(|_| bad())?;
        let b = parts[1].trim().parse().map_err(|_| bad())?;
        return Ok(WeightingConfig::Density {
            a,
            b,
            name: crate::weighting::DensityName::Uniform,
            params: Default::default(),
            quad_points: None,
        });
    }
    if s.starts_with('{') {
        return WeightingConfig::from_json(s);
    }
    WeightingConfig::from_json(&fs::read_to_string(s)?)
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Numeric columns pulled out of a CSV file.
pub struct Table {
    pub covariates: Vec<Vec<f64>>,
    pub response: Option<Vec<f64>>,
}

fn read_columns(
    path: &Path,
    delimiter: char,
    header: bool,
    covariates: &[String],
    response: Option<&str>,
) -> CliResult<Table> {
    let parse_err = |msg: String| CliError::new(EXIT_PARSE, msg);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .has_headers(header)
        .from_path(path)
        .map_err(|e| parse_err(format!("{}: {e}", path.display())))?;

    let names: Vec<String> = if header {
        reader
            .headers()
            .map_err(|e| parse_err(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect()
    } else {
        Vec::new()
    };
    let locate = |col: &str| -> CliResult<usize> {
        if header {
            names
                .iter()
                .position(|h| h == col)
                .ok_or_else(|| parse_err(format!("column `{col}` not found in {}", path.display())))
        } else {
            col.parse().map_err(|_| parse_err(format!("column `{col}` must be a 0-based index without a header")))
        }
    };
    let cov_idx = covariates.iter().map(|c| locate(c)).collect::<CliResult<Vec<_>>>()?;
    let resp_idx = response.map(locate).transpose()?;
    if let Some(r) = resp_idx {
        if cov_idx.contains(&r) {
            return Err(CliError::new(EXIT_USAGE, "response column is also listed as a covariate"));
        }
    }

    let col_name = |i: usize| names.get(i).cloned().unwrap_or_else(|| i.to_string());
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let row_no = line + 1;
        let record = record.map_err(|e| parse_err(format!("row {row_no}: {e}")))?;
        let cell = |i: usize| -> CliResult<f64> {
            let raw = record
                .get(i)
                .ok_or_else(|| parse_err(format!("row {row_no}, column {}: missing value", col_name(i))))?;
            raw.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("row {row_no}, column {}: cannot parse `{raw}`", col_name(i))))
        };
        rows.push(cov_idx.iter().map(|&i| cell(i)).collect::<CliResult<Vec<_>>>()?);
        if let Some(r) = resp_idx {
            ys.push(cell(r)?);
        }
    }
    Ok(Table { covariates: rows, response: resp_idx.map(|_| ys) })
}

#[derive(Serialize)]
struct FitMetadata<'a> {
    data: &'a Path,
    response: &'a str,
    covariates: &'a [String],
    search: &'a SearchConfig,
    q: &'a WeightingConfig,
    m: usize,
    k: usize,
}

fn cmd_fit(cli: &Cli, a: &FitArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let out = cli.out.as_deref().ok_or_else(|| CliError::new(EXIT_USAGE, "fit needs --out"))?;
    let q_cfg = match &cli.q {
        Some(s) => parse_weighting(s)?,
        None => WeightingConfig::Empirical,
    };
    let q: WeightingMeasure = q_cfg.build()?;
    let mut search = search_config(cli, SearchConfig::default());
    if let Some(r) = a.restarts {
        search.restarts = r;
    }

    let table = read_columns(&a.data, a.delimiter, !a.no_header, &a.covariates, Some(&a.response))?;
    let y = table.response.unwrap_or_default();
    if y.len() < 2 {
        return Err(CliError::new(EXIT_DEGENERATE, format!("need at least 2 rows, got {}", y.len())));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(CliError::new(EXIT_DEGENERATE, "response is constant"));
    }
    let sample = Sample::from_rows(&table.covariates, y)?;

    let fit = fit_dsim(&sample, &q, &search)?;
    let predictor = Predictor::new(fit)?;
    let mut doc = predictor.to_document();
    let fit = predictor.fit();
    doc.metadata = serde_json::to_value(FitMetadata {
        data: &a.data,
        response: &a.response,
        covariates: &a.covariates,
        search: &search,
        q: &q_cfg,
        m: fit.idr.n_index(),
        k: fit.idr.n_thresholds(),
    })
    .map_err(DsimError::from)?;
    fs::write(out, doc.to_json()?)?;

    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ");
    writeln!(stdout, "alpha      [{}]", fmt(&fit.alpha))?;
    writeln!(stdout, "theta      [{}]", fmt(fit.theta.angles()))?;
    writeln!(stdout, "criterion  {:.8}", fit.criterion.value)?;
    writeln!(stdout, "n {}  m {}  k {}", sample.len(), fit.idr.n_index(), fit.idr.n_thresholds())?;
    writeln!(stdout, "model written to {}", out.display())?;
    Ok(EXIT_OK)
}

fn load_model(path: &Path) -> CliResult<(Predictor, Option<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let doc = ModelDocument::from_json(&text).map_err(|e| CliError::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    let names = doc
        .metadata
        .get("covariates")
        .and_then(|v| serde_json::from_value::<Vec<String>>(v.clone()).ok());
    let p = doc.into_predictor().map_err(|e| CliError::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    Ok((p, names))
}

fn cmd_predict(cli: &Cli, a: &PredictArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let (predictor, names) = load_model(&a.model)?;
    let d = predictor.dim();
    for &t in &a.taus {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::new(EXIT_USAGE, format!("tau {t} is outside (0, 1)")));
        }
    }

    let mut points: Vec<Vec<f64>> = Vec::new();
    for p in &a.points {
        let v = p
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| CliError::new(EXIT_PARSE, format!("cannot parse covariate vector `{p}`")))?;
        points.push(v);
    }
    if let Some(input) = &a.input {
        let cols = input_columns(input, names.as_deref(), d)?;
        points.extend(read_columns(input, ',', true, &cols, None)?.covariates);
    }
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(CliError::new(EXIT_DIMENSION, format!("model has dimension {d}, point has {}", bad.len())));
    }

    let mut out = String::from("index,extrapolated");
    for t in &a.taus {
        out.push_str(&format!(",q{t}"));
    }
    for y in &a.cdf_at {
        out.push_str(&format!(",cdf{y}"));
    }
    out.push('\n');
    for x in &points {
        let iv = predictor.index(x)?;
        out.push_str(&format!("{},{}", iv.z, iv.extrapolated));
        for &t in &a.taus {
            out.push_str(&format!(",{}", predictor.quantile_at_index(iv.z, t)?));
        }
        for &y in &a.cdf_at {
            out.push_str(&format!(",{}", predictor.fit().idr.cdf_at_index(iv.z, y)));
        }
        out.push('\n');
    }
    write_output(cli.out.as_deref(), &out, stdout)?;
    Ok(EXIT_OK)
}

/// Covariate columns of a prediction input: the training names when the
/// header has them all, otherwise every column.
fn input_columns(path: &Path, names: Option<&[String]>, d: usize) -> CliResult<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if let Some(names) = names {
        if names.iter().all(|n| header.contains(n)) {
            return Ok(names.to_vec());
        }
    }
    if header.len() != d {
        return Err(CliError::new(EXIT_DIMENSION, format!("model has dimension {d}, input has {} columns", header.len())));
    }
    Ok(header)
}

fn cmd_rates(cli: &Cli, a: &RatesArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let mut grid = match (&a.config, a.full_scale) {
        (Some(path), _) => serde_json::from_str::<ExperimentGrid>(&fs::read_to_string(path)?)
            .map_err(|e| CliError::new(EXIT_PARSE, format!("{}: {e}", path.display())))?,
        (None, true) => ExperimentGrid::full_scale(),
        (None, false) => ExperimentGrid::default(),
    };
    if let Some(s) = cli.seed {
        grid.seed = s;
    }
    if let Some(r) = a.reps {
        grid.reps = r;
    }
    if let Some(n) = &a.n_values {
        grid.n_values = n.clone();
    }
    if let Some(m) = a.mc_draws {
        grid.mc_draws = m;
    }
    grid.search = search_config(cli, grid.search.clone());

    let start = Instant::now();
    let report = simulate::run_table(&grid)?;
    let elapsed = start.elapsed();
    write_output(cli.out.as_deref(), &report.to_csv(), stdout)?;
    if let Some(raw) = &a.raw_out {
        fs::write(raw, report.raw_csv(&grid))?;
    }

    let mut log = std::io::stderr();
    writeln!(log, "cells {}  replicates {}  elapsed {:.1}s", grid.cells(), report.raw.len(), elapsed.as_secs_f64())?;
    for (q, m, avg) in report.averages() {
        writeln!(log, "average {} {} rate {:.3}", q.name(), m.name(), avg)?;
    }
    for f in &report.failures {
        writeln!(log, "failed replicate scenario {} q {} n {} rep {}: {}", f.scenario, f.q.name(), f.n, f.rep, f.message)?;
    }
    if report.insufficient() > 0 {
        writeln!(log, "{} rows have fewer than two usable sample sizes", report.insufficient())?;
        return Ok(EXIT_INSUFFICIENT);
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs, stdout: &mut dyn Write) -> CliResult<i32> {
    let angles = a.theta0.iter().map(|s| parse_angle(s)).collect::<Result<Vec<_>, _>>()?;
    let theta0 = SphericalPoint::new(angles.len() + 1, angles)?;
    let scn = SimScenario { theta0, noise: a.noise.into(), q_choice: QChoice::Empirical, seed: cli.seed.unwrap_or(0) };
    let sample = if a.noiseless { generate_noiseless(&scn, a.n)? } else { generate_replicate(&scn, a.n, a.rep)? };
    let d = sample.dim();

    let mut out = String::new();
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (row, y) in sample.rows().zip(sample.responses()) {
        let cells: Vec<String> = row.iter().chain([y]).map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    write_output(cli.out.as_deref(), &out, stdout)?;
    Ok(EXIT_OK)
}
