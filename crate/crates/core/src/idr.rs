//! Isotonic distributional regression for a fixed index vector.
//!
//! For grouped index values `z_1 < ... < z_m` and thresholds `t_1 < ... < t_k`
//! the least-squares fit under stochastic monotonicity is, column by column,
//! the weighted antitonic regression of the group indicator means
//! `#{Y_s <= t_j, s in group i} / n_i`. Each column is solved with the
//! pool-adjacent-violators algorithm.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, DsimError, Result};

/// Distinct projection values with their multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedProjections {
    pub z: Vec<f64>,
    pub counts: Vec<usize>,
    /// Indices of the original observations in each group.
    pub members: Vec<Vec<usize>>,
    /// Group index of every observation.
    pub group_of: Vec<usize>,
}

impl GroupedProjections {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn n_obs(&self) -> usize {
        self.group_of.len()
    }
}

/// Groups projections, merging runs whose consecutive gaps are at most `tie_tol`.
///
/// Each group is keyed by the mean of its members.
pub fn group(projections: &[f64], tie_tol: f64) -> Result<GroupedProjections> {
    if projections.is_empty() {
        return Err(DsimError::InvalidInput("no projections to group".into()));
    }
    if !(tie_tol >= 0.0) {
        return Err(DsimError::InvalidInput(format!("tie tolerance {tie_tol} must be >= 0")));
    }
    for &p in projections {
        check_finite("projections", p)?;
    }
    let mut order: Vec<usize> = (0..projections.len()).collect();
    order.sort_by(|&a, &b| projections[a].total_cmp(&projections[b]).then(a.cmp(&b)));

    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for &i in &order {
        let v = projections[i];
        match members.last_mut() {
            Some(current) if v - prev <= tie_tol => current.push(i),
            _ => members.push(vec![i]),
        }
        prev = v;
    }

    let mut group_of = vec![0; projections.len()];
    let mut z = Vec::with_capacity(members.len());
    let mut counts = Vec::with_capacity(members.len());
    for (g, idx) in members.iter().enumerate() {
        let mean = if tie_tol == 0.0 {
            projections[idx[0]]
        } else {
            idx.iter().map(|&i| projections[i]).sum::<f64>() / idx.len() as f64
        };
        z.push(mean);
        counts.push(idx.len());
        for &i in idx {
            group_of[i] = g;
        }
    }
    Ok(GroupedProjections { z, counts, members, group_of })
}

/// Fitted conditional CDFs on the grid `z x thresholds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdrFit {
    pub z: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Row-major `z.len() x thresholds.len()`.
    cdf: Vec<f64>,
}

impl IdrFit {
    /// Builds a fit from parts, checking shape and both monotonicity constraints.
    pub fn from_parts(z: Vec<f64>, thresholds: Vec<f64>, cdf: Vec<Vec<f64>>) -> Result<Self> {
        if z.is_empty() {
            return Err(DsimError::InvalidInput("fit has no index values".into()));
        }
        if thresholds.is_empty() {
            return Err(DsimError::EmptyThresholds);
        }
        if cdf.len() != z.len() || cdf.iter().any(|r| r.len() != thresholds.len()) {
            return Err(DsimError::SizeMismatch(format!(
                "cdf matrix must be {} x {}",
                z.len(),
                thresholds.len()
            )));
        }
        if z.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DsimError::InvalidInput("index grid must be strictly increasing".into()));
        }
        if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DsimError::InvalidInput("thresholds must be strictly increasing".into()));
        }
        let fit = IdrFit { z, thresholds, cdf: cdf.concat() };
        fit.check_shape_constraints()?;
        Ok(fit)
    }

    pub fn n_index(&self) -> usize {
        self.z.len()
    }

    pub fn n_thresholds(&self) -> usize {
        self.thresholds.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cdf[i * self.thresholds.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.thresholds.len();
        &self.cdf[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.cdf.chunks_exact(self.thresholds.len()).map(<[f64]>::to_vec).collect()
    }

    /// Values in `[0, 1]`, rows non-decreasing, columns non-increasing.
    pub fn check_shape_constraints(&self) -> Result<()> {
        let (m, k) = (self.z.len(), self.thresholds.len());
        for i in 0..m {
            for j in 0..k {
                let v = self.get(i, j);
                if !(0.0..=1.0).contains(&v) {
                    return Err(DsimError::CdfOutOfRange { z: self.z[i], t: self.thresholds[j], value: v });
                }
                if j > 0 && v < self.get(i, j - 1) {
                    return Err(DsimError::InvalidInput(format!("row {i} decreases at threshold {j}")));
                }
                if i > 0 && v > self.get(i - 1, j) {
                    return Err(DsimError::InvalidInput(format!("column {j} increases at index {i}")));
                }
            }
        }
        Ok(())
    }
}

/// Counts `#{s in group g : Y_s <= t_j}`, row-major `m x k`.
pub fn indicator_counts(groups: &GroupedProjections, responses: &[f64], thresholds: &[f64]) -> Vec<u32> {
    let (m, k) = (groups.len(), thresholds.len());
    let mut counts = vec![0u32; m * k];
    for (s, &y) in responses.iter().enumerate() {
        // first threshold with y <= t
        let j0 = thresholds.partition_point(|&t| t < y);
        if j0 < k {
            counts[groups.group_of[s] * k + j0] += 1;
        }
    }
    for row in counts.chunks_exact_mut(k) {
        for j in 1..k {
            row[j] += row[j - 1];
        }
    }
    counts
}

/// Fits the isotonic distributional regression at the given thresholds.
pub fn fit(groups: &GroupedProjections, responses: &[f64], thresholds: &[f64]) -> Result<IdrFit> {
    let counts = indicator_counts_checked(groups, responses, thresholds)?;
    Ok(fit_from_counts(groups, thresholds, &counts))
}

pub(crate) fn indicator_counts_checked(
    groups: &GroupedProjections,
    responses: &[f64],
    thresholds: &[f64],
) -> Result<Vec<u32>> {
    if thresholds.is_empty() {
        return Err(DsimError::EmptyThresholds);
    }
    if groups.n_obs() != responses.len() {
        return Err(DsimError::SizeMismatch(format!(
            "{} grouped observations for {} responses",
            groups.n_obs(),
            responses.len()
        )));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(DsimError::InvalidInput("thresholds must be strictly increasing".into()));
    }
    for &y in responses {
        check_finite("responses", y)?;
    }
    Ok(indicator_counts(groups, responses, thresholds))
}

pub(crate) fn fit_from_counts(groups: &GroupedProjections, thresholds: &[f64], counts: &[u32]) -> IdrFit {
    let (m, k) = (groups.len(), thresholds.len());
    let mut cdf = vec![0.0; m * k];
    let mut pava = Antitonic::with_capacity(m);
    let mut column = vec![0.0; m];
    for j in 0..k {
        pava.clear();
        for g in 0..m {
            pava.push(counts[g * k + j] as f64, groups.counts[g] as f64);
        }
        pava.expand_into(&mut column);
        for g in 0..m {
            cdf[g * k + j] = column[g];
        }
    }
    IdrFit { z: groups.z.clone(), thresholds: thresholds.to_vec(), cdf }
}

/// Weighted antitonic PAVA over block sums.
///
/// Means are always `sum / weight` of integer-valued sums, so each fitted
/// value is the correctly rounded block mean.
struct Antitonic {
    sums: Vec<f64>,
    weights: Vec<f64>,
    lens: Vec<usize>,
}

impl Antitonic {
    fn with_capacity(m: usize) -> Self {
        Antitonic { sums: Vec::with_capacity(m), weights: Vec::with_capacity(m), lens: Vec::with_capacity(m) }
    }

    fn clear(&mut self) {
        self.sums.clear();
        self.weights.clear();
        self.lens.clear();
    }

    fn push(&mut self, sum: f64, weight: f64) {
        let (mut s, mut w, mut len) = (sum, weight, 1);
        // pool while the previous block's mean is below the new one
        while let (Some(&ps), Some(&pw)) = (self.sums.last(), self.weights.last()) {
            if ps * w < s * pw {
                s += ps;
                w += pw;
                len += self.lens.pop().unwrap();
                self.sums.pop();
                self.weights.pop();
            } else {
                break;
            }
        }
        self.sums.push(s);
        self.weights.push(w);
        self.lens.push(len);
    }

    fn expand_into(&self, out: &mut [f64]) {
        let mut pos = 0;
        for ((&s, &w), &len) in self.sums.iter().zip(&self.weights).zip(&self.lens) {
            let mean = s / w;
            out[pos..pos + len].fill(mean);
            pos += len;
        }
    }
}
