//! The threshold-weighted least-squares criterion
//!
//! `L_n(Q; F, alpha) = (1/n) sum_i sum_j w_j (1{Y_i <= t_j} - F(alpha . X_i, t_j))^2`
//!
//! over the resolved atoms `(t_j, w_j)` of `Q`, and its profile over `F`.

use crate::error::{DsimError, Result};
use crate::idr::{self, IdrFit};
use crate::sample::Sample;
use crate::weighting::{ResolvedAtoms, WeightingMeasure};

const UNIT_NORM_TOL: f64 = 1e-9;
const CDF_SLACK: f64 = 1e-9;

/// Anything that can be evaluated as a candidate `F(z, t)`.
pub trait CdfSurface {
    fn cdf_at(&self, z: f64, t: f64) -> f64;

    /// `F(z, t)` for a whole sorted list of thresholds.
    fn cdf_row(&self, z: f64, thresholds: &[f64], out: &mut [f64]) {
        for (o, &t) in out.iter_mut().zip(thresholds) {
            *o = self.cdf_at(z, t);
        }
    }
}

impl<F: Fn(f64, f64) -> f64> CdfSurface for F {
    fn cdf_at(&self, z: f64, t: f64) -> f64 {
        self(z, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionValue {
    pub value: f64,
    pub n: usize,
    /// Total weight of the atoms the value was computed with.
    pub q_mass: f64,
}

pub(crate) fn check_unit(alpha: &[f64]) -> Result<()> {
    let norm = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOL || !norm.is_finite() {
        return Err(DsimError::NonUnitAlpha(norm));
    }
    Ok(())
}

/// Evaluates the criterion for an arbitrary candidate surface.
pub fn evaluate(
    sample: &Sample,
    f: &impl CdfSurface,
    alpha: &[f64],
    atoms: &ResolvedAtoms,
) -> Result<CriterionValue> {
    check_unit(alpha)?;
    if atoms.is_empty() {
        return Err(DsimError::EmptyThresholds);
    }
    let z = sample.project(alpha)?;
    let ts = &atoms.thresholds;
    let mut row = vec![0.0; ts.len()];
    let mut total = 0.0;
    for (i, &y) in sample.responses().iter().enumerate() {
        f.cdf_row(z[i], ts, &mut row);
        let mut inner = 0.0;
        for (j, &fv) in row.iter().enumerate() {
            if !(-CDF_SLACK..=1.0 + CDF_SLACK).contains(&fv) {
                return Err(DsimError::CdfOutOfRange { z: z[i], t: ts[j], value: fv });
            }
            let ind = if y <= ts[j] { 1.0 } else { 0.0 };
            let r = ind - fv;
            inner += match &atoms.multiplicities {
                Some(mult) => mult[j] as f64 * r * r,
                None => atoms.weights[j] * r * r,
            };
        }
        total += inner;
    }
    let n = sample.len() as f64;
    let value = match &atoms.multiplicities {
        Some(_) => total / (n * n),
        None => total / n,
    };
    Ok(CriterionValue { value, n: sample.len(), q_mass: atoms.total_mass() })
}

/// `alpha -> L_n(Q; F_hat_alpha, alpha)`: fits the IDR at the resolved
/// thresholds of `q` and evaluates the criterion on that grid.
pub fn profiled(sample: &Sample, alpha: &[f64], q: &WeightingMeasure) -> Result<(CriterionValue, IdrFit)> {
    let atoms = q.resolve(sample.responses())?;
    profiled_with_atoms(sample, alpha, &atoms, 0.0)
}

pub fn profiled_with_atoms(
    sample: &Sample,
    alpha: &[f64],
    atoms: &ResolvedAtoms,
    tie_tol: f64,
) -> Result<(CriterionValue, IdrFit)> {
    check_unit(alpha)?;
    let z = sample.project(alpha)?;
    let groups = idr::group(&z, tie_tol)?;
    let counts = idr::indicator_counts_checked(&groups, sample.responses(), &atoms.thresholds)?;
    let fit = idr::fit_from_counts(&groups, &atoms.thresholds, &counts);

    let k = atoms.len();
    let mut total = 0.0;
    for g in 0..groups.len() {
        let ng = groups.counts[g] as f64;
        let mut inner = 0.0;
        for j in 0..k {
            let c = counts[g * k + j] as f64;
            let fv = fit.get(g, j);
            // c members with indicator 1, ng - c with indicator 0
            let sq = c * (1.0 - fv) * (1.0 - fv) + (ng - c) * fv * fv;
            inner += match &atoms.multiplicities {
                Some(mult) => mult[j] as f64 * sq,
                None => atoms.weights[j] * sq,
            };
        }
        total += inner;
    }
    let n = sample.len() as f64;
    let value = match &atoms.multiplicities {
        Some(_) => total / (n * n),
        None => total / n,
    };
    Ok((CriterionValue { value, n: sample.len(), q_mass: atoms.total_mass() }, fit))
}
