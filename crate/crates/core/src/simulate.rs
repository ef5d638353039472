//! Monte Carlo rate experiments.
//!
//! Covariates are iid `Unif(0, 1)^d` and responses are
//! `Y = (alpha0 . X)^3 * noise` with standard normal or standard exponential
//! noise. For each replicate the model is fitted and scored with three errors
//! (index, conditional CDF, bundled). Convergence rates are the OLS slopes of
//! `log(err)` on `-log(n)`.
//!
//! Randomness comes from ChaCha8 with one stream per `(scenario, n, rep, use)`,
//! so replicates are independent tasks and reruns are bitwise-identical. The
//! stream does not depend on the weighting choice: all weighting measures are
//! compared on the same samples.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DsimError, Result};
use crate::index_opt::{fit_dsim, SearchConfig, SphericalPoint};
use crate::model::Predictor;
use crate::sample::{dot, Sample};
use crate::weighting::{Density, WeightingMeasure, DEFAULT_QUAD_POINTS};

pub const DEFAULT_MC_DRAWS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Gaussian,
    Exponential,
}

impl Noise {
    fn draw(self, rng: &mut impl Rng) -> f64 {
        match self {
            Noise::Gaussian => rng.sample(StandardNormal),
            Noise::Exponential => rng.sample(Exp1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Noise::Gaussian => "gaussian",
            Noise::Exponential => "exponential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QChoice {
    Empirical,
    Uniform,
    Truncated,
}

impl QChoice {
    pub fn name(self) -> &'static str {
        match self {
            QChoice::Empirical => "empirical",
            QChoice::Uniform => "uniform",
            QChoice::Truncated => "truncated",
        }
    }

    /// The weighting measure paired with each noise type.
    ///
    /// Gaussian noise: `Unif[-10, 10]` or `N(0, 4)` truncated to `[-4, 10]`.
    /// Exponential noise: `Unif[0, 50]` or `Gamma(3, 1)` truncated to `[0, 50]`.
    pub fn measure(self, noise: Noise) -> WeightingMeasure {
        let (a, b, truncated) = match noise {
            Noise::Gaussian => (-10.0, 10.0, (-4.0, 10.0, Density::TruncatedNormal { mean: 0.0, sd: 2.0 })),
            Noise::Exponential => (0.0, 50.0, (0.0, 50.0, Density::TruncatedGamma { shape: 3.0, scale: 1.0 })),
        };
        let built = match self {
            QChoice::Empirical => Ok(WeightingMeasure::Empirical),
            QChoice::Uniform => WeightingMeasure::uniform(a, b),
            QChoice::Truncated => WeightingMeasure::density(truncated.0, truncated.1, truncated.2, DEFAULT_QUAD_POINTS),
        };
        built.expect("constant intervals are valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub theta0: SphericalPoint,
    pub noise: Noise,
    pub q_choice: QChoice,
    pub seed: u64,
}

impl SimScenario {
    pub fn dim(&self) -> usize {
        self.theta0.dim()
    }

    pub fn alpha0(&self) -> Vec<f64> {
        self.theta0.to_cartesian()
    }

    /// Range `[c_lo, c_hi]` of `alpha0 . x` over the unit cube.
    pub fn index_range(&self) -> (f64, f64) {
        let a = self.alpha0();
        let lo = a.iter().filter(|&&v| v < 0.0).sum();
        let hi = a.iter().filter(|&&v| v > 0.0).sum();
        (lo, hi)
    }

    /// True conditional CDF `P(Y <= y | alpha0 . X = z)`.
    pub fn true_cdf(&self, z: f64, y: f64) -> f64 {
        true_cdf(self.noise, z, y)
    }

    fn stream(&self, n: usize, rep: usize, purpose: u64) -> ChaCha8Rng {
        let mut h = mix(0x6473_696d ^ self.noise as u64);
        for a in self.theta0.angles() {
            h = mix(h ^ a.to_bits());
        }
        h = mix(h ^ n as u64);
        h = mix(h ^ rep as u64);
        h = mix(h ^ purpose);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(h);
        rng
    }
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn true_cdf(noise: Noise, z: f64, y: f64) -> f64 {
    let c = z * z * z;
    if c == 0.0 {
        return if y >= 0.0 { 1.0 } else { 0.0 };
    }
    let u = y / c;
    match (noise, c > 0.0) {
        (Noise::Gaussian, true) => std_normal_cdf(u),
        (Noise::Gaussian, false) => 1.0 - std_normal_cdf(u),
        (Noise::Exponential, true) => {
            if u <= 0.0 {
                0.0
            } else {
                -(-u).exp_m1()
            }
        }
        (Noise::Exponential, false) => {
            if u <= 0.0 {
                1.0
            } else {
                (-u).exp()
            }
        }
    }
}

fn draw_sample(alpha0: &[f64], noise: Noise, frozen: bool, n: usize, rng: &mut impl Rng) -> Result<Sample> {
    if n == 0 {
        return Err(DsimError::InvalidInput("sample size must be positive".into()));
    }
    let d = alpha0.len();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = x.len();
        for _ in 0..d {
            x.push(rng.random::<f64>());
        }
        let z = dot(alpha0, &x[start..]);
        // always drawn so the frozen sample shares covariates with the noisy one
        let eps = noise.draw(rng);
        y.push(if frozen { z * z * z } else { z * z * z * eps });
    }
    Sample::from_flat(x, y, d)
}

/// Sample for replicate 0.
pub fn generate(scn: &SimScenario, n: usize) -> Result<Sample> {
    generate_replicate(scn, n, 0)
}

pub fn generate_replicate(scn: &SimScenario, n: usize, rep: usize) -> Result<Sample> {
    draw_sample(&scn.alpha0(), scn.noise, false, n, &mut scn.stream(n, rep, 0))
}

/// Same covariates as [`generate`], with the noise frozen at 1.
pub fn generate_noiseless(scn: &SimScenario, n: usize) -> Result<Sample> {
    draw_sample(&scn.alpha0(), scn.noise, true, n, &mut scn.stream(n, 0, 0))
}

/// Anything with an index vector and a conditional CDF on the index scale.
pub trait IndexModel {
    fn alpha(&self) -> &[f64];
    fn cdf_at_index(&self, z: f64, y: f64) -> f64;
}

impl IndexModel for Predictor {
    fn alpha(&self) -> &[f64] {
        Predictor::alpha(self)
    }

    fn cdf_at_index(&self, z: f64, y: f64) -> f64 {
        self.fit().idr.cdf_at_index(z, y)
    }
}

/// The data-generating model itself.
#[derive(Debug, Clone)]
pub struct TruthModel {
    pub alpha: Vec<f64>,
    pub noise: Noise,
}

impl IndexModel for TruthModel {
    fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    fn cdf_at_index(&self, z: f64, y: f64) -> f64 {
        true_cdf(self.noise, z, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorTriple {
    pub index_err: f64,
    pub cdf_err: f64,
    pub bundled_err: f64,
}

/// Mean squared integrand and its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean_sq: f64,
    pub std_error: f64,
}

impl McEstimate {
    fn from_terms(terms: &[f64]) -> Self {
        let n = terms.len() as f64;
        let mean = terms.iter().sum::<f64>() / n;
        let var = if terms.len() > 1 {
            terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        McEstimate { mean_sq: mean, std_error: (var / n).sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDetail {
    pub errors: ErrorTriple,
    pub bundled: McEstimate,
    pub cdf: McEstimate,
}

/// Index, CDF and bundled errors with the stream for replicate 0.
pub fn errors(model: &impl IndexModel, scn: &SimScenario, mc_draws: usize) -> Result<ErrorTriple> {
    let mut rng = scn.stream(0, 0, 1);
    errors_with_rng(model, scn, mc_draws, &mut rng).map(|d| d.errors)
}

pub fn errors_with_rng(
    model: &impl IndexModel,
    scn: &SimScenario,
    mc_draws: usize,
    rng: &mut impl Rng,
) -> Result<ErrorDetail> {
    let alpha0 = scn.alpha0();
    let alpha = model.alpha();
    if alpha.len() != alpha0.len() {
        return Err(DsimError::DimensionMismatch { expected: alpha0.len(), got: alpha.len() });
    }
    if mc_draws == 0 {
        return Err(DsimError::InvalidInput("need at least one Monte Carlo draw".into()));
    }
    let index_err = alpha.iter().zip(&alpha0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();

    let d = alpha0.len();
    let (c_lo, c_hi) = scn.index_range();
    let mut bundled_terms = Vec::with_capacity(mc_draws);
    let mut cdf_terms = Vec::with_capacity(mc_draws);
    let mut x = vec![0.0; d];
    let mut xy = vec![0.0; d];
    for _ in 0..mc_draws {
        // y ~ P^Y through an independent covariate draw
        for v in xy.iter_mut() {
            *v = rng.random::<f64>();
        }
        let zy = dot(&alpha0, &xy);
        let y = zy * zy * zy * scn.noise.draw(rng);

        for v in x.iter_mut() {
            *v = rng.random::<f64>();
        }
        let diff = model.cdf_at_index(dot(alpha, &x), y) - scn.true_cdf(dot(&alpha0, &x), y);
        bundled_terms.push(diff * diff);

        let z = c_lo + (c_hi - c_lo) * rng.random::<f64>();
        let diff = model.cdf_at_index(z, y) - scn.true_cdf(z, y);
        cdf_terms.push(diff * diff);
    }
    let bundled = McEstimate::from_terms(&bundled_terms);
    let cdf = McEstimate::from_terms(&cdf_terms);
    Ok(ErrorDetail {
        errors: ErrorTriple { index_err, cdf_err: cdf.mean_sq.sqrt(), bundled_err: bundled.mean_sq.sqrt() },
        bundled,
        cdf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub stderr: f64,
    /// Points entering the regression.
    pub points: usize,
    /// Non-positive errors dropped before taking logs.
    pub dropped: usize,
}

/// OLS slope of `log(err)` on `-log(n)`, pooled over replicates.
pub fn rate_regression(errs: &BTreeMap<usize, Vec<f64>>) -> Result<RateFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dropped = 0;
    for (&n, values) in errs {
        for &e in values {
            if e > 0.0 && e.is_finite() && n > 0 {
                xs.push(-(n as f64).ln());
                ys.push(e.ln());
            } else {
                dropped += 1;
            }
        }
    }
    let distinct_n = errs.iter().filter(|(_, v)| v.iter().any(|&e| e > 0.0 && e.is_finite())).count();
    if distinct_n < 2 {
        return Err(DsimError::InsufficientPoints(distinct_n));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = if xs.len() > 2 { (rss / (m - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(RateFit { slope, stderr, points: xs.len(), dropped })
}

/// Angle expression accepted in configs: a number or `k*pi/m` text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Angle {
    Radians(f64),
    Expr(String),
}

impl Angle {
    pub fn value(&self) -> Result<f64> {
        match self {
            Angle::Radians(v) => Ok(*v),
            Angle::Expr(s) => parse_angle(s),
        }
    }
}

/// Parses `0.5`, `pi`, `pi/4`, `3pi/4`, `2*pi/3`.
pub fn parse_angle(text: &str) -> Result<f64> {
    let s = text.trim().to_ascii_lowercase().replace(' ', "");
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    let bad = || DsimError::InvalidInput(format!("cannot parse angle `{text}`"));
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.to_string(), b.parse::<f64>().map_err(|_| bad())?),
        None => (s.clone(), 1.0),
    };
    let coef = num.strip_suffix("pi").ok_or_else(bad)?.trim_end_matches('*');
    let coef = if coef.is_empty() { 1.0 } else { coef.parse::<f64>().map_err(|_| bad())? };
    Ok(coef * PI / den)
}

/// Formats an angle as a fraction of pi when it is one, e.g. `pi/4`.
pub fn format_angle(a: f64) -> String {
    if a == 0.0 {
        return "0".into();
    }
    for den in 1..=12u32 {
        let k = a * den as f64 / PI;
        let r = k.round();
        if r >= 1.0 && (k - r).abs() < 1e-9 {
            let num = r as u32;
            if (1..den).any(|g| g > 1 && num % g == 0 && den % g == 0) {
                continue;
            }
            let head = if num == 1 { "pi".to_string() } else { format!("{num}pi") };
            return if den == 1 { head } else { format!("{head}/{den}") };
        }
    }
    format!("{a:.6}")
}

pub fn format_theta(theta: &SphericalPoint) -> String {
    let parts: Vec<String> = theta.angles().iter().map(|&a| format_angle(a)).collect();
    if parts.len() == 1 {
        parts[0].clone()
    } else {
        format!("({})", parts.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub theta0: Vec<Angle>,
    pub noise: Noise,
}

impl ScenarioSpec {
    pub fn theta0(&self) -> Result<SphericalPoint> {
        let angles = self.theta0.iter().map(Angle::value).collect::<Result<Vec<_>>>()?;
        SphericalPoint::new(angles.len() + 1, angles)
    }
}

/// Replace fitting with `err = c * n^(-beta)` for every measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub c: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub scenarios: Vec<ScenarioSpec>,
    pub q_choices: Vec<QChoice>,
    pub n_values: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub mc_draws: usize,
    pub search: SearchConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inject: Option<PowerLaw>,
}

impl Default for ExperimentGrid {
    /// Desk-scale rerun of one cell: `d = 2`, `theta0 = pi/4`, exponential
    /// noise, empirical weighting, `n = 2^8 .. 2^11`, 20 replicates.
    fn default() -> Self {
        ExperimentGrid {
            scenarios: vec![ScenarioSpec { theta0: vec![Angle::Expr("pi/4".into())], noise: Noise::Exponential }],
            q_choices: vec![QChoice::Empirical],
            n_values: vec![256, 512, 1024, 2048],
            reps: 20,
            seed: 20240,
            mc_draws: DEFAULT_MC_DRAWS,
            search: SearchConfig::default(),
            inject: None,
        }
    }
}

impl ExperimentGrid {
    /// The full design: six index vectors, two noise types, three
    /// weightings, `n = 2^8 .. 2^13`, 100 replicates. Long-running.
    pub fn full_scale() -> Self {
        let thetas: [&[&str]; 6] =
            [&["pi/4"], &["pi/3"], &["pi/2"], &["pi/4", "pi/2"], &["pi/3", "pi/3"], &["pi/2", "pi/4"]];
        let mut scenarios = Vec::new();
        for noise in [Noise::Exponential, Noise::Gaussian] {
            for t in thetas {
                scenarios.push(ScenarioSpec { theta0: t.iter().map(|s| Angle::Expr(s.to_string())).collect(), noise });
            }
        }
        ExperimentGrid {
            scenarios,
            q_choices: vec![QChoice::Empirical, QChoice::Truncated, QChoice::Uniform],
            n_values: (8..=13).map(|m| 1usize << m).collect(),
            reps: 100,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.q_choices.is_empty() || self.n_values.is_empty() {
            return Err(DsimError::InvalidInput("experiment grid has an empty axis".into()));
        }
        if self.reps == 0 || self.mc_draws == 0 || self.n_values.contains(&0) {
            return Err(DsimError::InvalidInput("reps, mc_draws and n must be positive".into()));
        }
        for s in &self.scenarios {
            s.theta0()?;
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.scenarios.len() * self.q_choices.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Index,
    Cdf,
    Bundled,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::Index, Measure::Cdf, Measure::Bundled];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Index => "index",
            Measure::Cdf => "cdf",
            Measure::Bundled => "bundled",
        }
    }

    pub fn pick(self, e: &ErrorTriple) -> f64 {
        match self {
            Measure::Index => e.index_err,
            Measure::Cdf => e.cdf_err,
            Measure::Bundled => e.bundled_err,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawError {
    pub scenario: usize,
    pub q: QChoice,
    pub n: usize,
    pub rep: usize,
    pub errors: ErrorTriple,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedReplicate {
    pub scenario: usize,
    pub q: QChoice,
    pub n: usize,
    pub rep: usize,
    pub message: String,
}

/// One Table-1 style row. `fit` is `None` when fewer than two sample sizes
/// have usable errors.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub q: QChoice,
    pub noise: Noise,
    pub theta0: SphericalPoint,
    pub measure: Measure,
    pub fit: Option<RateFit>,
    pub reps: usize,
    pub n_min: usize,
    pub n_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub raw: Vec<RawError>,
    pub failures: Vec<FailedReplicate>,
}

impl RateReport {
    pub fn insufficient(&self) -> usize {
        self.rows.iter().filter(|r| r.fit.is_none()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("q,noise,theta0,measure,slope,stderr,reps,n_min,n_max\n");
        for r in &self.rows {
            let (slope, se) = match r.fit {
                Some(f) => (format!("{:.6}", f.slope), format!("{:.6}", f.stderr)),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.q.name(),
                r.noise.name(),
                format_theta(&r.theta0),
                r.measure.name(),
                slope,
                se,
                r.reps,
                r.n_min,
                r.n_max
            );
        }
        out
    }

    pub fn raw_csv(&self, grid: &ExperimentGrid) -> String {
        let mut out = String::from("q,noise,theta0,n,rep,index_err,cdf_err,bundled_err\n");
        for e in &self.raw {
            let spec = &grid.scenarios[e.scenario];
            let theta = spec.theta0().map(|t| format_theta(&t)).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:e},{:e},{:e}",
                e.q.name(),
                spec.noise.name(),
                theta,
                e.n,
                e.rep,
                e.errors.index_err,
                e.errors.cdf_err,
                e.errors.bundled_err
            );
        }
        out
    }

    /// Unweighted mean slope per `(q, measure)` over all cells with a fit.
    pub fn averages(&self) -> Vec<(QChoice, Measure, f64)> {
        let mut acc: BTreeMap<(QChoice, Measure), (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            if let Some(f) = r.fit {
                let e = acc.entry((r.q, r.measure)).or_insert((0.0, 0));
                e.0 += f.slope;
                e.1 += 1;
            }
        }
        acc.into_iter().map(|((q, m), (s, c))| (q, m, s / c as f64)).collect()
    }
}

/// Runs every `(scenario, q, n, rep)` replicate and regresses the errors.
pub fn run_table(grid: &ExperimentGrid) -> Result<RateReport> {
    grid.validate()?;
    let scenarios: Vec<SphericalPoint> = grid.scenarios.iter().map(ScenarioSpec::theta0).collect::<Result<_>>()?;

    let mut tasks = Vec::new();
    for (si, _) in grid.scenarios.iter().enumerate() {
        for &q in &grid.q_choices {
            for &n in &grid.n_values {
                for rep in 0..grid.reps {
                    tasks.push((si, q, n, rep));
                }
            }
        }
    }

    let outcomes: Vec<std::result::Result<RawError, FailedReplicate>> = tasks
        .into_par_iter()
        .map(|(si, q, n, rep)| {
            let scn = SimScenario {
                theta0: scenarios[si].clone(),
                noise: grid.scenarios[si].noise,
                q_choice: q,
                seed: grid.seed,
            };
            run_replicate(grid, &scn, n, rep)
                .map(|errors| RawError { scenario: si, q, n, rep, errors })
                .map_err(|e| FailedReplicate { scenario: si, q, n, rep, message: e.to_string() })
        })
        .collect();

    let mut raw = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => raw.push(r),
            Err(f) => failures.push(f),
        }
    }

    let n_min = *grid.n_values.iter().min().unwrap();
    let n_max = *grid.n_values.iter().max().unwrap();
    let mut rows = Vec::new();
    for (si, spec) in grid.scenarios.iter().enumerate() {
        for &q in &grid.q_choices {
            for m in Measure::ALL {
                let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                for r in raw.iter().filter(|r| r.scenario == si && r.q == q) {
                    by_n.entry(r.n).or_default().push(m.pick(&r.errors));
                }
                rows.push(RateRow {
                    q,
                    noise: spec.noise,
                    theta0: scenarios[si].clone(),
                    measure: m,
                    fit: rate_regression(&by_n).ok(),
                    reps: grid.reps,
                    n_min,
                    n_max,
                });
            }
        }
    }
    Ok(RateReport { rows, raw, failures })
}

fn run_replicate(grid: &ExperimentGrid, scn: &SimScenario, n: usize, rep: usize) -> Result<ErrorTriple> {
    if let Some(p) = grid.inject {
        let e = p.c * (n as f64).powf(-p.beta);
        return Ok(ErrorTriple { index_err: e, cdf_err: e, bundled_err: e });
    }
    let sample = generate_replicate(scn, n, rep)?;
    let q = scn.q_choice.measure(scn.noise);
    let fit = fit_dsim(&sample, &q, &grid.search)?;
    let predictor = Predictor::new(fit)?;
    let mut rng = scn.stream(n, rep, 1);
    errors_with_rng(&predictor, scn, grid.mc_draws, &mut rng).map(|d| d.errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(noise: Noise) -> SimScenario {
        SimScenario {
            theta0: SphericalPoint::new(2, vec![PI / 4.0]).unwrap(),
            noise,
            q_choice: QChoice::Empirical,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_hook_is_exact_cube() {
        let scn = scenario(Noise::Gaussian);
        let s = generate_noiseless(&scn, 50).unwrap();
        let a = scn.alpha0();
        for (row, &y) in s.rows().zip(s.responses()) {
            assert_eq!(y, dot(&a, row).powi(3));
        }
        // shares covariates with the noisy generator
        let noisy = generate(&scn, 50).unwrap();
        assert_eq!(noisy.row(17), s.row(17));
    }

    #[test]
    fn generation_is_reproducible() {
        let scn = scenario(Noise::Exponential);
        assert_eq!(generate(&scn, 100).unwrap(), generate(&scn, 100).unwrap());
        assert_ne!(generate_replicate(&scn, 100, 0).unwrap(), generate_replicate(&scn, 100, 1).unwrap());
        let s = generate(&scn, 500).unwrap();
        assert!(s.responses().iter().all(|&y| y >= 0.0));
        let (lo, hi) = scn.index_range();
        assert_eq!(lo, 0.0);
        assert!((hi - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn truth_plug_in_has_zero_error() {
        let scn = scenario(Noise::Gaussian);
        let truth = TruthModel { alpha: scn.alpha0(), noise: scn.noise };
        let e = errors(&truth, &scn, 500).unwrap();
        assert_eq!(e, ErrorTriple { index_err: 0.0, cdf_err: 0.0, bundled_err: 0.0 });
    }

    #[test]
    fn antipodal_index_error_is_two() {
        let scn = scenario(Noise::Exponential);
        let truth = TruthModel { alpha: scn.alpha0().iter().map(|v| -v).collect(), noise: scn.noise };
        let e = errors(&truth, &scn, 10).unwrap();
        assert!((e.index_err - 2.0).abs() < 1e-15);
    }

    #[test]
    fn error_dimension_mismatch() {
        let scn = scenario(Noise::Exponential);
        let truth = TruthModel { alpha: vec![1.0, 0.0, 0.0], noise: scn.noise };
        assert!(matches!(errors(&truth, &scn, 10), Err(DsimError::DimensionMismatch { .. })));
    }

    #[test]
    fn true_cdf_limits() {
        assert_eq!(true_cdf(Noise::Gaussian, 0.0, -1e-9), 0.0);
        assert_eq!(true_cdf(Noise::Gaussian, 0.0, 0.0), 1.0);
        assert!((true_cdf(Noise::Gaussian, 1.0, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(true_cdf(Noise::Exponential, 1.0, -0.1), 0.0);
        assert!((true_cdf(Noise::Exponential, 1.0, 1.0) - (1.0 - (-1f64).exp())).abs() < 1e-15);
        // negative index flips the noise
        assert!((true_cdf(Noise::Exponential, -1.0, -1.0) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn exact_power_laws() {
        for beta in [1.0 / 3.0, 0.5] {
            let errs: BTreeMap<usize, Vec<f64>> =
                [256usize, 512, 1024].iter().map(|&n| (n, vec![1.7 * (n as f64).powf(-beta); 4])).collect();
            let fit = rate_regression(&errs).unwrap();
            assert!((fit.slope - beta).abs() < 1e-10);
            assert!(fit.stderr < 1e-10);
        }
    }

    #[test]
    fn regression_drops_zero_errors() {
        let mut errs = BTreeMap::new();
        errs.insert(10, vec![0.5, 0.0]);
        errs.insert(100, vec![0.05]);
        let fit = rate_regression(&errs).unwrap();
        assert_eq!(fit.dropped, 1);
        assert_eq!(fit.points, 2);
        assert!((fit.slope - 1.0).abs() < 1e-12);
        errs.remove(&100);
        assert!(matches!(rate_regression(&errs), Err(DsimError::InsufficientPoints(1))));
    }

    #[test]
    fn angles_parse_and_format() {
        assert_eq!(parse_angle("pi/4").unwrap(), PI / 4.0);
        assert_eq!(parse_angle("3pi/4").unwrap(), 3.0 * PI / 4.0);
        assert_eq!(parse_angle("2*pi/3").unwrap(), 2.0 * PI / 3.0);
        assert_eq!(parse_angle("0.5").unwrap(), 0.5);
        assert!(parse_angle("tau").is_err());
        assert_eq!(format_angle(PI / 4.0), "pi/4");
        assert_eq!(format_angle(PI), "pi");
        assert_eq!(format_angle(2.0 * PI / 3.0), "2pi/3");
        assert_eq!(format_angle(0.5), "0.500000");
    }

    #[test]
    fn degenerate_grid_flags_missing_regression() {
        let grid = ExperimentGrid {
            n_values: vec![64],
            reps: 1,
            mc_draws: 100,
            search: SearchConfig { refine: false, ..Default::default() },
            ..Default::default()
        };
        let report = run_table(&grid).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows.iter().all(|r| r.fit.is_none()));
        assert_eq!(report.raw.len(), 1);
        assert_eq!(report.insufficient(), 3);
    }

    #[test]
    fn report_shape_two_scenarios() {
        let mut grid = ExperimentGrid {
            n_values: vec![100, 1000],
            reps: 2,
            inject: Some(PowerLaw { c: 2.0, beta: 1.0 / 3.0 }),
            ..Default::default()
        };
        grid.scenarios.push(ScenarioSpec { theta0: vec![Angle::Expr("pi/3".into())], noise: Noise::Gaussian });
        let report = run_table(&grid).unwrap();
        assert_eq!(report.rows.len(), 6);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.lines().nth(1).unwrap().starts_with("empirical,exponential,pi/4,index,0.333333,"));
        let avg = report.averages();
        assert_eq!(avg.len(), 3);
        assert!(avg.iter().all(|a| (a.2 - 1.0 / 3.0).abs() < 1e-10));
    }
}
