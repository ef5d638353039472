//! Weighting measures for the threshold-integrated squared loss.
//!
//! Every supported measure is reduced to a finite list of `(threshold, weight)`
//! atoms before it reaches the criterion. Continuous measures go through a
//! midpoint rule on equal subintervals.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, DsimError, Result};

pub const DEFAULT_QUAD_POINTS: usize = 512;

/// A density on a compact interval.
#[derive(Clone)]
pub enum Density {
    /// `1 / (b - a)` on `[a, b]`.
    Uniform,
    /// Un-normalized `exp(-(t - mean)^2 / (2 sd^2))`.
    TruncatedNormal { mean: f64, sd: f64 },
    /// Un-normalized `t^(shape - 1) exp(-t / scale)` for `t > 0`.
    TruncatedGamma { shape: f64, scale: f64 },
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Uniform => write!(f, "Uniform"),
            Density::TruncatedNormal { mean, sd } => {
                write!(f, "TruncatedNormal {{ mean: {mean}, sd: {sd} }}")
            }
            Density::TruncatedGamma { shape, scale } => {
                write!(f, "TruncatedGamma {{ shape: {shape}, scale: {scale} }}")
            }
            Density::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Density {
    fn eval(&self, a: f64, b: f64, t: f64) -> f64 {
        match self {
            Density::Uniform => 1.0 / (b - a),
            Density::TruncatedNormal { mean, sd } => {
                let u = (t - mean) / sd;
                (-0.5 * u * u).exp()
            }
            Density::TruncatedGamma { shape, scale } => {
                if t <= 0.0 {
                    0.0
                } else {
                    t.powf(shape - 1.0) * (-t / scale).exp()
                }
            }
            Density::Custom(f) => f(t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensityOnInterval {
    pub a: f64,
    pub b: f64,
    pub density: Density,
    pub quad_points: usize,
}

#[derive(Debug, Clone)]
pub enum WeightingMeasure {
    /// The empirical distribution of the responses.
    Empirical,
    /// Point masses `(t, w)`, `t` strictly increasing and `w > 0`.
    FiniteSupport(Vec<(f64, f64)>),
    DensityOnInterval(DensityOnInterval),
}

/// Finite discrete reduction of a weighting measure.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAtoms {
    pub thresholds: Vec<f64>,
    pub weights: Vec<f64>,
    /// Response multiplicities behind each threshold; only set for the
    /// empirical measure, where `weights[j] == multiplicities[j] / n`.
    pub multiplicities: Option<Vec<usize>>,
}

impl ResolvedAtoms {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Same support, every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        ResolvedAtoms {
            thresholds: self.thresholds.clone(),
            weights: self.weights.iter().map(|w| w * c).collect(),
            multiplicities: None,
        }
    }
}

impl WeightingMeasure {
    pub fn empirical() -> Self {
        WeightingMeasure::Empirical
    }

    pub fn finite(atoms: Vec<(f64, f64)>) -> Result<Self> {
        validate_atoms(&atoms)?;
        Ok(WeightingMeasure::FiniteSupport(atoms))
    }

    pub fn density(a: f64, b: f64, density: Density, quad_points: usize) -> Result<Self> {
        check_finite("density interval", a)?;
        check_finite("density interval", b)?;
        if a >= b {
            return Err(DsimError::InvalidInput(format!("density interval [{a}, {b}] is empty")));
        }
        if quad_points < 2 {
            return Err(DsimError::InvalidInput("quad_points must be at least 2".into()));
        }
        Ok(WeightingMeasure::DensityOnInterval(DensityOnInterval { a, b, density, quad_points }))
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::density(a, b, Density::Uniform, DEFAULT_QUAD_POINTS)
    }

    pub fn is_empirical(&self) -> bool {
        matches!(self, WeightingMeasure::Empirical)
    }

    /// Multiplies the measure by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(DsimError::InvalidInput(format!("scale factor {c} must be positive")));
        }
        Ok(match self {
            WeightingMeasure::Empirical => {
                // the empirical measure has no free mass; route through finite atoms
                return Err(DsimError::InvalidInput(
                    "scale the resolved empirical atoms instead".into(),
                ));
            }
            WeightingMeasure::FiniteSupport(atoms) => {
                WeightingMeasure::FiniteSupport(atoms.iter().map(|&(t, w)| (t, w * c)).collect())
            }
            WeightingMeasure::DensityOnInterval(d) => {
                let inner = d.density.clone();
                let (a, b) = (d.a, d.b);
                WeightingMeasure::DensityOnInterval(DensityOnInterval {
                    a,
                    b,
                    density: Density::Custom(Arc::new(move |t| c * inner.eval(a, b, t))),
                    quad_points: d.quad_points,
                })
            }
        })
    }

    /// Reduces the measure to finite atoms.
    pub fn resolve(&self, responses: &[f64]) -> Result<ResolvedAtoms> {
        match self {
            WeightingMeasure::Empirical => resolve_empirical(responses),
            WeightingMeasure::FiniteSupport(atoms) => {
                validate_atoms(atoms)?;
                Ok(ResolvedAtoms {
                    thresholds: atoms.iter().map(|a| a.0).collect(),
                    weights: atoms.iter().map(|a| a.1).collect(),
                    multiplicities: None,
                })
            }
            WeightingMeasure::DensityOnInterval(d) => resolve_density(d),
        }
    }

    pub fn descriptor(&self) -> WeightingConfig {
        match self {
            WeightingMeasure::Empirical => WeightingConfig::Empirical,
            WeightingMeasure::FiniteSupport(atoms) => {
                WeightingConfig::Finite { atoms: atoms.iter().map(|&(t, w)| [t, w]).collect() }
            }
            WeightingMeasure::DensityOnInterval(d) => {
                let (name, params) = match &d.density {
                    Density::Uniform => (DensityName::Uniform, DensityParams::default()),
                    Density::TruncatedNormal { mean, sd } => (
                        DensityName::TruncatedNormal,
                        DensityParams { mean: Some(*mean), sd: Some(*sd), ..Default::default() },
                    ),
                    Density::TruncatedGamma { shape, scale } => (
                        DensityName::TruncatedGamma,
                        DensityParams { shape: Some(*shape), scale: Some(*scale), ..Default::default() },
                    ),
                    Density::Custom(_) => (DensityName::Custom, DensityParams::default()),
                };
                WeightingConfig::Density { a: d.a, b: d.b, name, params, quad_points: Some(d.quad_points) }
            }
        }
    }
}

fn validate_atoms(atoms: &[(f64, f64)]) -> Result<()> {
    if atoms.is_empty() {
        return Err(DsimError::ZeroMass);
    }
    for &(t, w) in atoms {
        check_finite("atom threshold", t)?;
        check_finite("atom weight", w)?;
        if w <= 0.0 {
            return Err(DsimError::InvalidInput(format!("atom weight {w} at {t} is not positive")));
        }
    }
    if atoms.windows(2).any(|p| p[0].0 >= p[1].0) {
        return Err(DsimError::InvalidInput("atom thresholds must be strictly increasing".into()));
    }
    Ok(())
}

fn resolve_empirical(responses: &[f64]) -> Result<ResolvedAtoms> {
    if responses.is_empty() {
        return Err(DsimError::EmptyResponses);
    }
    let (thresholds, counts) = distinct_with_counts(responses)?;
    let n = responses.len() as f64;
    Ok(ResolvedAtoms {
        weights: counts.iter().map(|&c| c as f64 / n).collect(),
        thresholds,
        multiplicities: Some(counts),
    })
}

/// Sorted distinct values and their multiplicities.
pub fn distinct_with_counts(values: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
    for &v in values {
        check_finite("responses", v)?;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for v in sorted {
        match distinct.last() {
            Some(&last) if last == v => *counts.last_mut().unwrap() += 1,
            _ => {
                distinct.push(v);
                counts.push(1);
            }
        }
    }
    Ok((distinct, counts))
}

fn resolve_density(d: &DensityOnInterval) -> Result<ResolvedAtoms> {
    let h = (d.b - d.a) / d.quad_points as f64;
    let mut thresholds = Vec::with_capacity(d.quad_points);
    let mut weights = Vec::with_capacity(d.quad_points);
    for j in 0..d.quad_points {
        let t = d.a + (j as f64 + 0.5) * h;
        let q = check_finite("density value", d.density.eval(d.a, d.b, t))?;
        if q < 0.0 {
            return Err(DsimError::InvalidInput(format!("density is negative at {t}")));
        }
        // zero-density nodes are outside the support and carry no weight
        if q > 0.0 {
            thresholds.push(t);
            weights.push(q * h);
        }
    }
    if thresholds.is_empty() {
        return Err(DsimError::ZeroMass);
    }
    Ok(ResolvedAtoms { thresholds, weights, multiplicities: None })
}

/// JSON form of a weighting measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeightingConfig {
    Empirical,
    Finite {
        atoms: Vec<[f64; 2]>,
    },
    Density {
        a: f64,
        b: f64,
        name: DensityName,
        #[serde(default)]
        params: DensityParams,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quad_points: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityName {
    Uniform,
    TruncatedNormal,
    TruncatedGamma,
    /// Only produced by [`WeightingMeasure::descriptor`]; cannot be rebuilt.
    Custom,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl WeightingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<WeightingMeasure> {
        match self {
            WeightingConfig::Empirical => Ok(WeightingMeasure::Empirical),
            WeightingConfig::Finite { atoms } => {
                WeightingMeasure::finite(atoms.iter().map(|p| (p[0], p[1])).collect())
            }
            WeightingConfig::Density { a, b, name, params, quad_points } => {
                let missing = |what: &str| {
                    DsimError::InvalidInput(format!("density {name:?} needs parameter `{what}`"))
                };
                let density = match name {
                    DensityName::Uniform => Density::Uniform,
                    DensityName::TruncatedNormal => {
                        let sd = params.sd.ok_or_else(|| missing("sd"))?;
                        if sd <= 0.0 {
                            return Err(DsimError::InvalidInput("sd must be positive".into()));
                        }
                        Density::TruncatedNormal { mean: params.mean.unwrap_or(0.0), sd }
                    }
                    DensityName::TruncatedGamma => {
                        let shape = params.shape.ok_or_else(|| missing("shape"))?;
                        let scale = params.scale.unwrap_or(1.0);
                        if shape <= 0.0 || scale <= 0.0 {
                            return Err(DsimError::InvalidInput(
                                "gamma shape and scale must be positive".into(),
                            ));
                        }
                        Density::TruncatedGamma { shape, scale }
                    }
                    DensityName::Custom => {
                        return Err(DsimError::InvalidInput(
                            "custom densities cannot be rebuilt from JSON".into(),
                        ))
                    }
                };
                WeightingMeasure::density(*a, *b, density, quad_points.unwrap_or(DEFAULT_QUAD_POINTS))
            }
        }
    }
}
