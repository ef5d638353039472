//! Covariate/response pairs.

use crate::error::{check_finite, DsimError, Result};

/// `n` covariate rows of dimension `d` paired with scalar responses.
///
/// Covariates are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    x: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
}

impl Sample {
    /// Builds a sample from a row-major covariate buffer.
    pub fn from_flat(x: Vec<f64>, y: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(DsimError::InvalidInput("covariate dimension must be positive".into()));
        }
        if y.is_empty() {
            return Err(DsimError::InvalidInput("sample has no observations".into()));
        }
        if x.len() != y.len() * dim {
            return Err(DsimError::SizeMismatch(format!(
                "{} covariate values for {} rows of dimension {}",
                x.len(),
                y.len(),
                dim
            )));
        }
        for &v in &x {
            check_finite("covariates", v)?;
        }
        for &v in &y {
            check_finite("responses", v)?;
        }
        Ok(Sample { x, y, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.len() != y.len() {
            return Err(DsimError::SizeMismatch(format!(
                "{} covariate rows for {} responses",
                rows.len(),
                y.len()
            )));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(DsimError::DimensionMismatch { expected: dim, got: bad.len() });
        }
        Self::from_flat(rows.concat(), y, dim)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(self.dim)
    }

    /// Index values `alpha · X_i` for every observation.
    pub fn project(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        if alpha.len() != self.dim {
            return Err(DsimError::DimensionMismatch { expected: self.dim, got: alpha.len() });
        }
        Ok(self.rows().map(|r| dot(r, alpha)).collect())
    }

    /// Same covariates, responses mapped through `f`.
    pub fn map_responses(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_flat(self.x.clone(), self.y.iter().map(|&v| f(v)).collect(), self.dim)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}
