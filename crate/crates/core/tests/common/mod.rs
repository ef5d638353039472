//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use dsim::{IdrFit, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direct min-max evaluation of the isotonic distributional regression:
/// `F(z_i, t) = min_{a <= i} max_{b >= i} (#{s in groups a..=b : Y_s <= t}) / (n_a + ... + n_b)`
/// over the sorted distinct projections. Returns the distinct projections and
/// the `m x k` matrix.
pub fn minmax_idr(z: &[f64], y: &[f64], thresholds: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut distinct: Vec<f64> = z.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let m = distinct.len();
    let mut out = vec![vec![0.0; thresholds.len()]; m];
    for (j, &t) in thresholds.iter().enumerate() {
        let mut hits = vec![0u64; m];
        let mut sizes = vec![0u64; m];
        for (s, &zs) in z.iter().enumerate() {
            let g = distinct.iter().position(|&v| v == zs).unwrap();
            sizes[g] += 1;
            if y[s] <= t {
                hits[g] += 1;
            }
        }
        for i in 0..m {
            let mut best = f64::INFINITY;
            for a in 0..=i {
                let mut inner = f64::NEG_INFINITY;
                for b in i..m {
                    let num: u64 = hits[a..=b].iter().sum();
                    let den: u64 = sizes[a..=b].iter().sum();
                    inner = inner.max(num as f64 / den as f64);
                }
                best = best.min(inner);
            }
            out[i][j] = best;
        }
    }
    (distinct, out)
}

/// `(1/n) sum_i sum_j w_j (1{Y_i <= t_j} - F(z_i, t_j))^2` with `F` given on the
/// distinct projections.
pub fn brute_criterion(z: &[f64], y: &[f64], grid: &[f64], f: &[Vec<f64>], thresholds: &[f64], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, &zi) in z.iter().enumerate() {
        let g = grid.iter().position(|&v| v == zi).unwrap();
        for (j, &t) in thresholds.iter().enumerate() {
            let ind = if y[i] <= t { 1.0 } else { 0.0 };
            total += weights[j] * (ind - f[g][j]).powi(2);
        }
    }
    total / z.len() as f64
}

/// A random small IDR instance: projections with ties on a coarse lattice,
/// integer-valued responses (so ties there too) and sorted thresholds.
pub struct Instance {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn random_instance(rng: &mut impl Rng, max_n: usize, max_m: usize, max_k: usize) -> Instance {
    let n = rng.random_range(1..=max_n);
    let m = rng.random_range(1..=max_m);
    let levels: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
    let z: Vec<f64> = (0..n).map(|_| levels[rng.random_range(0..m)]).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5i32..=5) as f64).collect();
    let k = rng.random_range(1..=max_k);
    let mut thresholds: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let weights = thresholds.iter().map(|_| rng.random_range(0.01..2.0)).collect();
    Instance { z, y, thresholds, weights }
}

/// Random feasible competitor on an `m x k` grid: entries in `[0, 1]`,
/// non-decreasing along rows and non-increasing down columns.
pub fn random_feasible(rng: &mut impl Rng, m: usize, k: usize) -> Vec<Vec<f64>> {
    let mut f: Vec<Vec<f64>> = (0..m).map(|_| (0..k).map(|_| rng.random::<f64>()).collect()).collect();
    for row in f.iter_mut() {
        row.sort_by(f64::total_cmp);
    }
    for j in 0..k {
        let mut col: Vec<f64> = f.iter().map(|r| r[j]).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        for (i, v) in col.into_iter().enumerate() {
            f[i][j] = v;
        }
    }
    f
}

pub fn is_feasible(f: &[Vec<f64>]) -> bool {
    let rows_ok = f.iter().all(|r| r.windows(2).all(|w| w[0] <= w[1]) && r.iter().all(|&v| (0.0..=1.0).contains(&v)));
    let cols_ok = f.windows(2).all(|p| p[0].iter().zip(&p[1]).all(|(a, b)| a >= b));
    rows_ok && cols_ok
}

pub fn fit_rows(fit: &IdrFit) -> Vec<Vec<f64>> {
    fit.rows()
}

/// Uniform covariates on `[0, 1]^d` with `Y = z^3 * (noise from `eps`)`.
pub fn cubic_sample(rng: &mut impl Rng, alpha: &[f64], n: usize, eps: impl Fn(&mut dyn rand::RngCore) -> f64) -> Sample {
    let d = alpha.len();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let z: f64 = x.iter().zip(alpha).map(|(a, b)| a * b).sum();
        y.push(z * z * z * eps(rng));
        rows.push(x);
    }
    Sample::from_rows(&rows, y).unwrap()
}

pub fn exp_noise(rng: &mut dyn rand::RngCore) -> f64 {
    -(1.0 - rng.random::<f64>()).ln()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    num / (va * vb).sqrt()
}

/// Average ranks, ties sharing the mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            r[p] = avg;
        }
        i = j + 1;
    }
    r
}
