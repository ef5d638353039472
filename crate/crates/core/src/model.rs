//! Prediction from a fitted model.
//!
//! Off the fitted grid the conditional CDF is a right-continuous step function
//! in `y` (0 below the first threshold, 1 from the last one on) and is
//! linearly interpolated in the index `z`, with constant extrapolation beyond
//! the smallest and largest fitted index values.

use serde::{Deserialize, Serialize};

use crate::criterion::{CdfSurface, CriterionValue};
use crate::error::{check_finite, DsimError, Result};
use crate::idr::IdrFit;
use crate::index_opt::{DsimFit, SphericalPoint};
use crate::sample::dot;
use crate::weighting::WeightingConfig;

pub const MODEL_VERSION: u32 = 1;

/// Where an index value falls relative to the fitted grid.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bracket {
    lo: usize,
    hi: usize,
    /// Weight of `hi`, in `[0, 1]`.
    s: f64,
}

impl IdrFit {
    fn bracket(&self, z: f64) -> Bracket {
        let m = self.z.len();
        let j = self.z.partition_point(|&v| v <= z);
        if j == 0 {
            Bracket { lo: 0, hi: 0, s: 0.0 }
        } else if j == m {
            Bracket { lo: m - 1, hi: m - 1, s: 0.0 }
        } else {
            let (a, b) = (self.z[j - 1], self.z[j]);
            Bracket { lo: j - 1, hi: j, s: ((z - a) / (b - a)).clamp(0.0, 1.0) }
        }
    }

    #[inline]
    fn interp(&self, br: Bracket, j: usize) -> f64 {
        let a = self.get(br.lo, j);
        if br.lo == br.hi {
            return a;
        }
        let b = self.get(br.hi, j);
        // columns are non-increasing, so the value stays in [b, a]
        (a + (b - a) * br.s).clamp(b, a)
    }

    /// Interpolated grid row at index `z`, forced non-decreasing, with the
    /// last entry equal to 1.
    pub fn row_at(&self, z: f64) -> Vec<f64> {
        let br = self.bracket(z);
        let k = self.thresholds.len();
        let mut out = Vec::with_capacity(k);
        let mut running = 0.0f64;
        for j in 0..k {
            running = running.max(self.interp(br, j));
            out.push(running);
        }
        out[k - 1] = 1.0;
        out
    }

    /// `F(z, y)` with step interpolation in `y` and linear interpolation in `z`.
    pub fn cdf_at_index(&self, z: f64, y: f64) -> f64 {
        let k = self.thresholds.len();
        let l = self.thresholds.partition_point(|&t| t <= y);
        if l == 0 {
            return 0.0;
        }
        if l == k {
            return 1.0;
        }
        let br = self.bracket(z);
        (0..l).fold(0.0f64, |acc, j| acc.max(self.interp(br, j)))
    }
}

impl CdfSurface for IdrFit {
    fn cdf_at(&self, z: f64, t: f64) -> f64 {
        self.cdf_at_index(z, t)
    }

    fn cdf_row(&self, z: f64, thresholds: &[f64], out: &mut [f64]) {
        let row = self.row_at(z);
        for (o, &t) in out.iter_mut().zip(thresholds) {
            let l = self.thresholds.partition_point(|&s| s <= t);
            *o = if l == 0 { 0.0 } else { row[l - 1] };
        }
    }
}

/// Result of evaluating the index for one covariate vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexValue {
    pub z: f64,
    /// `z` lies outside the range of fitted index values.
    pub extrapolated: bool,
}

/// Immutable predictor built from a [`DsimFit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    fit: DsimFit,
}

impl Predictor {
    pub fn new(fit: DsimFit) -> Result<Self> {
        fit.idr.check_shape_constraints()?;
        Ok(Predictor { fit })
    }

    pub fn fit(&self) -> &DsimFit {
        &self.fit
    }

    pub fn alpha(&self) -> &[f64] {
        &self.fit.alpha
    }

    pub fn dim(&self) -> usize {
        self.fit.alpha.len()
    }

    pub fn index(&self, x: &[f64]) -> Result<IndexValue> {
        if x.len() != self.dim() {
            return Err(DsimError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        for &v in x {
            check_finite("covariates", v)?;
        }
        let z = dot(&self.fit.alpha, x);
        let grid = &self.fit.idr.z;
        Ok(IndexValue { z, extrapolated: z < grid[0] || z > grid[grid.len() - 1] })
    }

    pub fn cdf(&self, x: &[f64], y: f64) -> Result<f64> {
        let z = self.index(x)?.z;
        check_finite("response", y)?;
        Ok(self.fit.idr.cdf_at_index(z, y))
    }

    /// `inf { y : F(z, y) >= tau }`.
    pub fn quantile_at_index(&self, z: f64, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(DsimError::InvalidLevel(tau));
        }
        let row = self.fit.idr.row_at(z);
        let j = row.partition_point(|&v| v < tau);
        Ok(self.fit.idr.thresholds[j.min(row.len() - 1)])
    }

    pub fn quantile(&self, x: &[f64], tau: f64) -> Result<f64> {
        let z = self.index(x)?.z;
        self.quantile_at_index(z, tau)
    }

    /// Mean of the step CDF at index `z`: `sum_j t_j * (jump at t_j)`.
    pub fn mean_at_index(&self, z: f64) -> f64 {
        let row = self.fit.idr.row_at(z);
        let mut prev = 0.0;
        let mut acc = 0.0;
        for (&t, &v) in self.fit.idr.thresholds.iter().zip(&row) {
            acc += t * (v - prev);
            prev = v;
        }
        acc
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        let z = self.index(x)?.z;
        Ok(self.mean_at_index(z))
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument::from_fit(&self.fit)
    }
}

/// Versioned JSON form of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub cdf: Vec<Vec<f64>>,
    pub q_descriptor: WeightingConfig,
    pub criterion: f64,
    pub grid_best: f64,
    pub n: usize,
    pub q_mass: f64,
    /// Free-form provenance (data source, search settings); not interpreted.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

impl ModelDocument {
    pub fn from_fit(fit: &DsimFit) -> Self {
        ModelDocument {
            version: MODEL_VERSION,
            alpha: fit.alpha.clone(),
            theta: fit.theta.angles().to_vec(),
            z: fit.idr.z.clone(),
            thresholds: fit.idr.thresholds.clone(),
            cdf: fit.idr.rows(),
            q_descriptor: fit.q.clone(),
            criterion: fit.criterion.value,
            grid_best: fit.grid_best.value,
            n: fit.criterion.n,
            q_mass: fit.criterion.q_mass,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Rebuilds the predictor, checking every invariant of the fit.
    pub fn into_predictor(self) -> Result<Predictor> {
        if self.version != MODEL_VERSION {
            return Err(DsimError::Model(format!("unsupported version {}", self.version)));
        }
        let norm = self.alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(DsimError::Model(format!("alpha has norm {norm}")));
        }
        let theta = SphericalPoint::new(self.alpha.len(), self.theta)
            .map_err(|e| DsimError::Model(format!("theta: {e}")))?;
        let idr = IdrFit::from_parts(self.z, self.thresholds, self.cdf)
            .map_err(|e| DsimError::Model(format!("cdf grid: {e}")))?;
        let (n, q_mass) = (self.n, self.q_mass);
        let crit = |value| CriterionValue { value, n, q_mass };
        Predictor::new(DsimFit {
            alpha: self.alpha,
            theta,
            idr,
            criterion: crit(self.criterion),
            grid_best: crit(self.grid_best),
            q: self.q_descriptor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(z: Vec<f64>, thresholds: Vec<f64>, cdf: Vec<Vec<f64>>) -> Predictor {
        let idr = IdrFit::from_parts(z, thresholds, cdf).unwrap();
        let cv = CriterionValue { value: 0.0, n: 1, q_mass: 1.0 };
        Predictor::new(DsimFit {
            alpha: vec![1.0],
            theta: SphericalPoint::new(1, vec![0.0]).unwrap(),
            idr,
            criterion: cv,
            grid_best: cv,
            q: WeightingConfig::Empirical,
        })
        .unwrap()
    }

    #[test]
    fn step_in_y() {
        let p = toy(vec![0.0, 1.0], vec![1.0, 2.0, 3.0], vec![vec![0.5, 0.8, 1.0], vec![0.2, 0.4, 1.0]]);
        assert_eq!(p.cdf(&[0.0], 0.99).unwrap(), 0.0);
        assert_eq!(p.cdf(&[0.0], 1.0).unwrap(), 0.5);
        assert_eq!(p.cdf(&[0.0], 2.5).unwrap(), 0.8);
        assert_eq!(p.cdf(&[0.0], 3.0).unwrap(), 1.0);
        assert_eq!(p.cdf(&[1.0], 100.0).unwrap(), 1.0);
    }

    #[test]
    fn linear_in_z_with_constant_extrapolation() {
        let p = toy(vec![0.0, 1.0], vec![1.0, 2.0], vec![vec![0.6, 1.0], vec![0.2, 1.0]]);
        assert!((p.cdf(&[0.5], 1.5).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(p.cdf(&[-3.0], 1.5).unwrap(), 0.6);
        assert_eq!(p.cdf(&[7.0], 1.5).unwrap(), 0.2);
        assert!(p.index(&[7.0]).unwrap().extrapolated);
        assert!(!p.index(&[0.3]).unwrap().extrapolated);
    }

    #[test]
    fn quantiles_and_means() {
        let p = toy(vec![0.0], vec![0.0, 2.0], vec![vec![0.5, 1.0]]);
        assert_eq!(p.mean(&[0.0]).unwrap(), 1.0);
        assert_eq!(p.quantile(&[0.0], 0.5).unwrap(), 0.0);
        assert_eq!(p.quantile(&[0.0], 0.5000001).unwrap(), 2.0);
        assert_eq!(p.quantile(&[0.0], 1.0 - 1e-12).unwrap(), 2.0);
        assert!(matches!(p.quantile(&[0.0], 1.0), Err(DsimError::InvalidLevel(_))));
        assert!(matches!(p.quantile(&[0.0], 0.0), Err(DsimError::InvalidLevel(_))));

        let point = toy(vec![0.0], vec![4.5], vec![vec![1.0]]);
        assert_eq!(point.mean(&[3.0]).unwrap(), 4.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = toy(vec![0.0], vec![0.0], vec![vec![1.0]]);
        assert!(matches!(p.cdf(&[0.0, 1.0], 0.0), Err(DsimError::DimensionMismatch { .. })));
        assert!(p.cdf(&[f64::NAN], 0.0).is_err());
        assert!(p.cdf(&[0.0], f64::INFINITY).is_err());
    }

    #[test]
    fn document_round_trip_and_validation() {
        let p = toy(vec![0.0, 1.0], vec![1.0, 2.0], vec![vec![0.6, 1.0], vec![0.2, 1.0]]);
        let json = p.to_document().to_json().unwrap();
        let back = ModelDocument::from_json(&json).unwrap().into_predictor().unwrap();
        assert_eq!(back.fit().idr, p.fit().idr);

        let mut broken = p.to_document();
        broken.cdf[1][0] = 0.9;
        assert!(matches!(broken.into_predictor(), Err(DsimError::Model(_))));
        let mut broken = p.to_document();
        broken.version = 7;
        assert!(broken.into_predictor().is_err());
    }
}
