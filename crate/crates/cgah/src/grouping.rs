//! Shared centroid codebook over the joint latent space, cosine group
//! profiles, and the pairwise group affinity.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mf::{dot, FactorMatrix};
use crate::par;

/// Centroids extracted from the stacked user/item latent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    kappa: usize,
    dim: usize,
    centroids: Vec<f64>,
}

impl Codebook {
    pub fn from_centroids(kappa: usize, dim: usize, centroids: Vec<f64>) -> Result<Self> {
        if centroids.len() != kappa * dim {
            return Err(Error::DimensionMismatch("centroid buffer size".into()));
        }
        Ok(Self { kappa, dim, centroids })
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }
}

/// Per-entity cosine similarities to every centroid, in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupProfile {
    count: usize,
    kappa: usize,
    rows: Vec<f64>,
}

impl GroupProfile {
    pub fn from_rows(count: usize, kappa: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != count * kappa {
            return Err(Error::DimensionMismatch("profile buffer size".into()));
        }
        Ok(Self { count, kappa, rows })
    }

    /// All-zero profiles; every pair then shares the maximal affinity, which
    /// is the no-information ablation.
    pub fn uniform(count: usize, kappa: usize) -> Self {
        Self { count, kappa, rows: vec![0.0; count * kappa] }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.rows[e * self.kappa..(e + 1) * self.kappa]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], kappa: usize, dim: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for k in 0..kappa {
        let d = sq_dist(point, &centroids[k * dim..(k + 1) * dim]);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    (best, best_d)
}

/// Lloyd's algorithm with k-means++ seeding over row-major `vectors`.
///
/// Points are assigned in parallel; centroid accumulation and all RNG draws
/// are sequential, so the result depends only on the seed. An emptied cluster
/// is re-seeded to the point farthest from its current centroid.
pub fn kmeans(vectors: &[f64], dim: usize, kappa: usize, seed: u64, max_iters: usize) -> Result<Codebook> {
    if dim == 0 || !vectors.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch("vector buffer not a multiple of dim".into()));
    }
    let n = vectors.len() / dim;
    if kappa < 1 {
        return Err(Error::InvalidConfig("kappa must be at least 1".into()));
    }
    let mut distinct: Vec<&[f64]> = Vec::new();
    for p in 0..n {
        let row = &vectors[p * dim..(p + 1) * dim];
        if !distinct.contains(&row) {
            distinct.push(row);
        }
        if distinct.len() >= kappa {
            break;
        }
    }
    if distinct.len() < kappa {
        return Err(Error::InvalidValue(format!(
            "need at least {kappa} distinct vectors, found {}",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![0.0; kappa * dim];

    // k-means++ seeding: first uniform, then D^2 sampling.
    let first = rng.random_range(0..n);
    centroids[..dim].copy_from_slice(&vectors[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> =
        par::map_collect(n, |p| sq_dist(&vectors[p * dim..(p + 1) * dim], &centroids[..dim]));
    for k in 1..kappa {
        let total: f64 = d2.iter().sum();
        let choice = if total > 0.0 {
            WeightedIndex::new(&d2)
                .map_err(|e| Error::InvalidValue(format!("k-means++ weights: {e}")))?
                .sample(&mut rng)
        } else {
            rng.random_range(0..n)
        };
        let src = &vectors[choice * dim..(choice + 1) * dim];
        centroids[k * dim..(k + 1) * dim].copy_from_slice(src);
        for p in 0..n {
            let d = sq_dist(&vectors[p * dim..(p + 1) * dim], src);
            if d < d2[p] {
                d2[p] = d;
            }
        }
    }

    let mut assign: Vec<usize> = vec![usize::MAX; n];
    for _iter in 0..max_iters {
        let next: Vec<(usize, f64)> =
            par::map_collect(n, |p| nearest(&vectors[p * dim..(p + 1) * dim], &centroids, kappa, dim));
        let changed = next.iter().enumerate().any(|(p, &(k, _))| assign[p] != k);
        for (p, &(k, _)) in next.iter().enumerate() {
            assign[p] = k;
        }

        let mut sums = vec![0.0; kappa * dim];
        let mut counts = vec![0usize; kappa];
        for p in 0..n {
            let k = assign[p];
            counts[k] += 1;
            for (s, v) in sums[k * dim..(k + 1) * dim].iter_mut().zip(&vectors[p * dim..(p + 1) * dim]) {
                *s += v;
            }
        }
        for k in 0..kappa {
            if counts[k] > 0 {
                for (c, s) in centroids[k * dim..(k + 1) * dim].iter_mut().zip(&sums[k * dim..(k + 1) * dim]) {
                    *c = s / counts[k] as f64;
                }
            } else {
                // Re-seed to the point farthest from its assigned centroid.
                let far = next
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
                    .map(|(p, _)| p)
                    .unwrap();
                centroids[k * dim..(k + 1) * dim]
                    .copy_from_slice(&vectors[far * dim..(far + 1) * dim]);
            }
        }
        if !changed {
            break;
        }
    }
    Codebook::from_centroids(kappa, dim, centroids)
}

/// Within-cluster sum of squared distances for a codebook over `vectors`.
pub fn wcss(vectors: &[f64], dim: usize, codebook: &Codebook) -> f64 {
    let n = vectors.len() / dim;
    par::sum_indexed(n, |p| {
        nearest(&vectors[p * dim..(p + 1) * dim], codebook.centroids(), codebook.kappa(), dim).1
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine of every entity row against every centroid.
///
/// Zero-norm rows get an all-zero profile row (with one warning per call);
/// the same convention applies to a degenerate zero centroid.
pub fn compute_group_profile(rows: &[f64], dim: usize, codebook: &Codebook) -> Result<GroupProfile> {
    if codebook.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "factor dim {dim} vs codebook dim {}",
            codebook.dim()
        )));
    }
    if dim == 0 || !rows.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch("row buffer not a multiple of dim".into()));
    }
    let count = rows.len() / dim;
    let kappa = codebook.kappa();
    let zero_rows = rows.chunks(dim).filter(|c| c.iter().all(|&v| v == 0.0)).count();
    if zero_rows > 0 {
        log::warn!("{zero_rows} zero-norm rows get zero cosine profiles");
    }
    let out: Vec<Vec<f64>> = par::map_collect(count, |e| {
        let row = &rows[e * dim..(e + 1) * dim];
        (0..kappa).map(|k| cosine(row, codebook.centroid(k))).collect()
    });
    GroupProfile::from_rows(count, kappa, out.into_iter().flatten().collect())
}

/// Convenience: profiles for users and items from the same codebook.
pub fn factor_profiles(f: &FactorMatrix, codebook: &Codebook) -> Result<(GroupProfile, GroupProfile)> {
    let p = compute_group_profile(f.user_factors(), f.r, codebook)?;
    let q = compute_group_profile(f.item_factors(), f.r, codebook)?;
    Ok((p, q))
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Group affinity of a user/item profile pair:
/// `sigmoid(1 - min_k |p_k - q_k|)`, identically `max_k sigmoid(1 - |p_k - q_k|)`
/// because the logistic is strictly increasing.
pub fn group_affinity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "profile lengths {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let min_delta = p
        .iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .fold(f64::INFINITY, f64::min);
    Ok(sigmoid(1.0 - min_delta))
}

/// Affinities materialized for the observed pairs only, aligned with the
/// rating matrix's row and column entry lists.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMap {
    by_row: Vec<Vec<f64>>,
    by_col: Vec<Vec<f64>>,
}

impl AffinityMap {
    /// Affinity aligned with `RatingMatrix::user_ratings(user)[idx]`.
    pub fn at_row(&self, user: usize, idx: usize) -> f64 {
        self.by_row[user][idx]
    }

    /// Affinity aligned with `RatingMatrix::item_ratings(item)[idx]`.
    pub fn at_col(&self, item: usize, idx: usize) -> f64 {
        self.by_col[item][idx]
    }

    pub fn row(&self, user: usize) -> &[f64] {
        &self.by_row[user]
    }

    pub fn col(&self, item: usize) -> &[f64] {
        &self.by_col[item]
    }
}

impl AffinityMap {
    /// Materialize arbitrary per-pair values over the observed set. Useful
    /// for ablations and tests that pin affinities directly.
    pub fn from_fn<F>(omega: &crate::data::RatingMatrix, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64,
    {
        let by_row = (0..omega.n_users())
            .map(|u| omega.user_ratings(u).iter().map(|&(j, _)| f(u, j as usize)).collect())
            .collect();
        let by_col = (0..omega.n_items())
            .map(|j| omega.item_ratings(j).iter().map(|&(u, _)| f(u as usize, j)).collect())
            .collect();
        Self { by_row, by_col }
    }
}

/// Evaluate [`group_affinity`] for every observed pair of `omega`.
///
/// Unobserved pairs are computed on demand at prediction time instead.
pub fn affinity_matrix(
    p: &GroupProfile,
    q: &GroupProfile,
    omega: &crate::data::RatingMatrix,
) -> Result<AffinityMap> {
    if p.kappa() != q.kappa() {
        return Err(Error::DimensionMismatch("profile kappa mismatch".into()));
    }
    if p.count() < omega.n_users() || q.count() < omega.n_items() {
        return Err(Error::DimensionMismatch("profiles smaller than rating matrix".into()));
    }
    let by_row: Vec<Vec<f64>> = par::map_collect(omega.n_users(), |u| {
        omega
            .user_ratings(u)
            .iter()
            .map(|&(j, _)| group_affinity(p.row(u), q.row(j as usize)).unwrap())
            .collect()
    });
    let by_col: Vec<Vec<f64>> = par::map_collect(omega.n_items(), |j| {
        omega
            .item_ratings(j)
            .iter()
            .map(|&(u, _)| group_affinity(p.row(u as usize), q.row(j)).unwrap())
            .collect()
    });
    Ok(AffinityMap { by_row, by_col })
}
