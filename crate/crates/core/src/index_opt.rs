//! Minimization of the profiled criterion over the unit sphere.
//!
//! Unit vectors are parameterized by hyperspherical angles. The search is an
//! equidistant grid over the angles followed by local derivative-free
//! refinement around the best few grid nodes: golden-section search for
//! `d = 2`, a bounded Nelder-Mead simplex for `d >= 3`.
//!
//! The profiled criterion is piecewise constant in the angles (it depends on
//! the index only through the ordering of the projections), so neither step
//! guarantees a global minimizer.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criterion::{self, CriterionValue};
use crate::error::{DsimError, Result};
use crate::idr::{self, IdrFit};
use crate::optim::{self, Bounds, NelderMeadOptions};
use crate::sample::Sample;
use crate::weighting::{distinct_with_counts, ResolvedAtoms, WeightingConfig, WeightingMeasure};

const TWO_PI: f64 = 2.0 * PI;

/// Angles of a unit vector in `R^dim`.
///
/// For `dim >= 2` there are `dim - 1` angles: the first `dim - 2` are polar
/// angles in `[0, pi]`, the last is an azimuth in `[0, 2 pi)`. For `dim = 1`
/// a single angle in `{0, pi}` encodes the sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    dim: usize,
    angles: Vec<f64>,
}

impl SphericalPoint {
    /// Builds a point, wrapping angles into their canonical ranges without
    /// changing the represented vector.
    pub fn new(dim: usize, angles: Vec<f64>) -> Result<Self> {
        let expected = if dim == 1 { 1 } else { dim.saturating_sub(1) };
        if dim == 0 || angles.len() != expected {
            return Err(DsimError::DimensionMismatch { expected, got: angles.len() });
        }
        if let Some(&a) = angles.iter().find(|a| !a.is_finite()) {
            return Err(DsimError::NonFinite { context: "angles", value: a });
        }
        Ok(SphericalPoint { dim, angles: wrap(dim, angles) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn to_cartesian(&self) -> Vec<f64> {
        to_cartesian(self)
    }

    fn lexicographic(&self, other: &Self) -> Ordering {
        for (a, b) in self.angles.iter().zip(&other.angles) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    }
}

fn wrap(dim: usize, mut angles: Vec<f64>) -> Vec<f64> {
    if dim == 1 {
        let a = angles[0].rem_euclid(TWO_PI);
        angles[0] = if a.cos() >= 0.0 { 0.0 } else { PI };
        return angles;
    }
    let last = angles.len() - 1;
    for i in 0..last {
        let mut a = angles[i].rem_euclid(TWO_PI);
        if a > PI {
            // reflecting a polar angle flips its sine; rotating the next angle by pi compensates
            a = TWO_PI - a;
            angles[i + 1] += PI;
        }
        angles[i] = a;
    }
    angles[last] = angles[last].rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2 pi
    if angles[last] >= TWO_PI {
        angles[last] = 0.0;
    }
    angles
}

/// Colatitude-first hyperspherical chart.
///
/// `d = 2`: `(cos t, sin t)`. `d = 3`: `(sin t1 cos t2, sin t1 sin t2, cos t1)`.
/// In general the polar angles peel coordinates off from the last one down to
/// the third, and the azimuth rotates the first two.
pub fn to_cartesian(theta: &SphericalPoint) -> Vec<f64> {
    let d = theta.dim;
    let a = &theta.angles;
    if d == 1 {
        return vec![if a[0].cos() >= 0.0 { 1.0 } else { -1.0 }];
    }
    let mut out = vec![0.0; d];
    let mut radius = 1.0;
    for (i, &phi) in a[..d - 2].iter().enumerate() {
        out[d - 1 - i] = radius * phi.cos();
        radius *= phi.sin();
    }
    let psi = a[d - 2];
    out[0] = radius * psi.cos();
    out[1] = radius * psi.sin();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Points per angle; `None` uses 40 for the azimuth and 20 per polar angle.
    pub grid_sizes: Option<Vec<usize>>,
    pub refine: bool,
    /// Objective evaluations allowed per refinement.
    pub refine_max_iter: usize,
    pub refine_tol: f64,
    /// Number of best grid nodes to refine from.
    pub restarts: usize,
    pub tie_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            grid_sizes: None,
            refine: true,
            refine_max_iter: 200,
            refine_tol: 1e-6,
            restarts: 3,
            tie_tol: 0.0,
        }
    }
}

impl SearchConfig {
    pub fn grid_sizes_for(&self, dim: usize) -> Result<Vec<usize>> {
        if dim == 1 {
            return Ok(vec![2]);
        }
        let sizes = match &self.grid_sizes {
            Some(s) => s.clone(),
            None => {
                let mut s = vec![20; dim - 2];
                s.push(40);
                s
            }
        };
        if sizes.len() != dim - 1 {
            return Err(DsimError::DimensionMismatch { expected: dim - 1, got: sizes.len() });
        }
        if sizes.iter().any(|&s| s < 2) {
            return Err(DsimError::InvalidInput("every grid size must be at least 2".into()));
        }
        Ok(sizes)
    }

    fn steps(&self, dim: usize) -> Result<Vec<f64>> {
        let sizes = self.grid_sizes_for(dim)?;
        let last = sizes.len() - 1;
        Ok(sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| if i == last { TWO_PI / s as f64 } else { PI / (s - 1) as f64 })
            .collect())
    }
}

/// Grid nodes: polar angles on `[0, pi]` inclusive, azimuth on `[0, 2 pi)`.
pub fn grid_nodes(dim: usize, cfg: &SearchConfig) -> Result<Vec<SphericalPoint>> {
    if dim == 0 {
        return Err(DsimError::InvalidInput("dimension must be positive".into()));
    }
    if dim == 1 {
        return Ok(vec![SphericalPoint::new(1, vec![0.0])?, SphericalPoint::new(1, vec![PI])?]);
    }
    let sizes = cfg.grid_sizes_for(dim)?;
    let last = sizes.len() - 1;
    let axes: Vec<Vec<f64>> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i == last {
                (0..s).map(|j| j as f64 * TWO_PI / s as f64).collect()
            } else {
                (0..s).map(|j| j as f64 * PI / (s - 1) as f64).collect()
            }
        })
        .collect();
    let mut nodes = vec![Vec::new()];
    for axis in &axes {
        nodes = nodes
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                axis.iter().map(move |&a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    // node angles are already in range, so wrapping is skipped
    Ok(nodes.into_iter().map(|angles| SphericalPoint { dim, angles }).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridNode {
    pub theta: SphericalPoint,
    pub criterion: CriterionValue,
}

fn check_sample(sample: &Sample) -> Result<()> {
    if sample.len() < 2 {
        return Err(DsimError::Degenerate(format!("need at least 2 observations, got {}", sample.len())));
    }
    Ok(())
}

fn objective(sample: &Sample, atoms: &ResolvedAtoms, theta: &SphericalPoint, tie_tol: f64) -> Result<CriterionValue> {
    let alpha = theta.to_cartesian();
    criterion::profiled_with_atoms(sample, &alpha, atoms, tie_tol).map(|(v, _)| v)
}

fn rank(a: &GridNode, b: &GridNode) -> Ordering {
    a.criterion.value.total_cmp(&b.criterion.value).then_with(|| a.theta.lexicographic(&b.theta))
}

/// Evaluates the profiled criterion on every grid node, best first.
/// Ties go to the lexicographically smallest angles.
pub fn grid_search(sample: &Sample, q: &WeightingMeasure, cfg: &SearchConfig) -> Result<Vec<GridNode>> {
    check_sample(sample)?;
    let atoms = q.resolve(sample.responses())?;
    grid_search_atoms(sample, &atoms, cfg)
}

fn grid_search_atoms(sample: &Sample, atoms: &ResolvedAtoms, cfg: &SearchConfig) -> Result<Vec<GridNode>> {
    let nodes = grid_nodes(sample.dim(), cfg)?;
    let mut ranked = nodes
        .into_par_iter()
        .map(|theta| {
            let criterion = objective(sample, atoms, &theta, cfg.tie_tol)?;
            Ok(GridNode { theta, criterion })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(rank);
    // values within rounding of a cluster's first value are ties
    let mut start = 0;
    while start < ranked.len() {
        let head = ranked[start].criterion.value;
        let mut end = start + 1;
        while end < ranked.len() && !optim::definitely_less(head, ranked[end].criterion.value) {
            end += 1;
        }
        ranked[start..end].sort_by(|a, b| a.theta.lexicographic(&b.theta));
        start = end;
    }
    Ok(ranked)
}

/// Local refinement around a grid node. Returns `start` unless a strictly
/// better point is found.
pub fn refine(
    sample: &Sample,
    q: &WeightingMeasure,
    start: &SphericalPoint,
    cfg: &SearchConfig,
) -> Result<(SphericalPoint, CriterionValue)> {
    check_sample(sample)?;
    let atoms = q.resolve(sample.responses())?;
    let start_value = objective(sample, &atoms, start, cfg.tie_tol)?;
    refine_atoms(sample, &atoms, start, start_value, cfg)
}

fn refine_atoms(
    sample: &Sample,
    atoms: &ResolvedAtoms,
    start: &SphericalPoint,
    start_value: CriterionValue,
    cfg: &SearchConfig,
) -> Result<(SphericalPoint, CriterionValue)> {
    let dim = sample.dim();
    if start.dim() != dim {
        return Err(DsimError::DimensionMismatch { expected: dim, got: start.dim() });
    }
    if dim == 1 {
        return Ok((start.clone(), start_value));
    }
    let steps = cfg.steps(dim)?;
    let failure: RefCell<Option<DsimError>> = RefCell::new(None);
    let eval = |angles: &[f64]| -> f64 {
        let point = SphericalPoint { dim, angles: wrap(dim, angles.to_vec()) };
        match objective(sample, atoms, &point, cfg.tie_tol) {
            Ok(v) => v.value,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::INFINITY
            }
        }
    };

    let s = start.angles();
    let best = if dim == 2 {
        optim::golden_section(|t| eval(&[t]), s[0] - steps[0], s[0] + steps[0], cfg.refine_tol, cfg.refine_max_iter)
    } else {
        let last = dim - 2;
        let lower = s
            .iter()
            .zip(&steps)
            .enumerate()
            .map(|(i, (&a, &h))| if i == last { a - h } else { (a - h).max(0.0) })
            .collect();
        let upper = s
            .iter()
            .zip(&steps)
            .enumerate()
            .map(|(i, (&a, &h))| if i == last { a + h } else { (a + h).min(PI) })
            .collect();
        let opts = NelderMeadOptions {
            step: steps.iter().map(|h| 0.5 * h).collect(),
            max_evals: cfg.refine_max_iter,
            tol: cfg.refine_tol,
        };
        optim::nelder_mead(|x: &[f64]| eval(x), s, &Bounds { lower, upper }, &opts)
    };
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    if optim::definitely_less(best.value, start_value.value) {
        let theta = SphericalPoint::new(dim, best.x)?;
        // re-evaluate at the wrapped point so the stored value is exact
        let value = objective(sample, atoms, &theta, cfg.tie_tol)?;
        if optim::definitely_less(value.value, start_value.value) {
            return Ok((theta, value));
        }
    }
    Ok((start.clone(), start_value))
}

/// A fitted distributional single index model.
#[derive(Debug, Clone, PartialEq)]
pub struct DsimFit {
    pub alpha: Vec<f64>,
    pub theta: SphericalPoint,
    /// IDR at the final index, on the distinct response values.
    pub idr: IdrFit,
    pub criterion: CriterionValue,
    /// Best criterion value among the grid nodes.
    pub grid_best: CriterionValue,
    pub q: WeightingConfig,
}

/// Grid search, refinement from the best `cfg.restarts` nodes, and the final
/// IDR refit.
pub fn fit_dsim(sample: &Sample, q: &WeightingMeasure, cfg: &SearchConfig) -> Result<DsimFit> {
    check_sample(sample)?;
    let atoms = q.resolve(sample.responses())?;
    let ranked = grid_search_atoms(sample, &atoms, cfg)?;
    let top = &ranked[0];

    let (theta, value) = if cfg.refine {
        let starts = &ranked[..cfg.restarts.clamp(1, ranked.len())];
        let refined = starts
            .par_iter()
            .map(|node| refine_atoms(sample, &atoms, &node.theta, node.criterion, cfg))
            .collect::<Result<Vec<_>>>()?;
        // first minimum in grid-rank order
        refined
            .into_iter()
            .reduce(|best, cand| if optim::definitely_less(cand.1.value, best.1.value) { cand } else { best })
            .expect("at least one start")
    } else {
        (top.theta.clone(), top.criterion)
    };

    let alpha = theta.to_cartesian();
    let z = sample.project(&alpha)?;
    let groups = idr::group(&z, cfg.tie_tol)?;
    let (distinct, _) = distinct_with_counts(sample.responses())?;
    let fit = idr::fit(&groups, sample.responses(), &distinct)?;
    Ok(DsimFit { alpha, theta, idr: fit, criterion: value, grid_best: top.criterion, q: q.descriptor() })
}
