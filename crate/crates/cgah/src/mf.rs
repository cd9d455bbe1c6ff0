//! Matrix factorization over observed ratings by alternating least squares,
//! plus the affinity-weighted variant used for the group-affinity ablation.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::RatingMatrix;
use crate::error::{Error, Result};
use crate::par;

/// Dense latent factors for users and items, row-major with `r` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    pub r: usize,
    n_users: usize,
    n_items: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
}

impl FactorMatrix {
    pub fn new(n_users: usize, n_items: usize, r: usize) -> Self {
        Self {
            r,
            n_users,
            n_items,
            user_factors: vec![0.0; n_users * r],
            item_factors: vec![0.0; n_items * r],
        }
    }

    pub fn from_parts(
        n_users: usize,
        n_items: usize,
        r: usize,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
    ) -> Result<Self> {
        if user_factors.len() != n_users * r || item_factors.len() != n_items * r {
            return Err(Error::DimensionMismatch("factor buffer sizes".into()));
        }
        Ok(Self { r, n_users, n_items, user_factors, item_factors })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn user_row(&self, i: usize) -> &[f64] {
        &self.user_factors[i * self.r..(i + 1) * self.r]
    }

    pub fn item_row(&self, j: usize) -> &[f64] {
        &self.item_factors[j * self.r..(j + 1) * self.r]
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.item_factors
    }

    pub fn frobenius_sq(&self) -> f64 {
        let h: f64 = self.user_factors.iter().map(|v| v * v).sum();
        let g: f64 = self.item_factors.iter().map(|v| v * v).sum();
        h + g
    }
}

/// Hyperparameters for [`train_mf`] and [`train_mf_ga`].
#[derive(Debug, Clone, Copy)]
pub struct MfConfig {
    /// Latent dimension; matches the code length downstream.
    pub dim: usize,
    /// L2 regularizer weight.
    pub reg: f64,
    /// Maximum number of full alternating sweeps.
    pub iters: usize,
    pub seed: u64,
    /// Half-width of the uniform init; `None` uses `0.1 / sqrt(dim)`.
    pub init_scale: Option<f64>,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self { dim: 20, reg: 0.1, iters: 50, seed: 42, init_scale: None }
    }
}

impl MfConfig {
    fn validate(&self) -> Result<()> {
        if self.reg <= 0.0 {
            return Err(Error::InvalidConfig(format!("reg must be positive, got {}", self.reg)));
        }
        if self.iters < 1 || self.dim < 1 {
            return Err(Error::InvalidConfig("iters and dim must be at least 1".into()));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.init_scale.unwrap_or(0.1 / (self.dim as f64).sqrt())
    }
}

const REL_TOL: f64 = 1e-6;

fn init_factors(n_users: usize, n_items: usize, cfg: &MfConfig) -> FactorMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.scale();
    let user_factors = (0..n_users * cfg.dim).map(|_| rng.random_range(-s..=s)).collect();
    let item_factors = (0..n_items * cfg.dim).map(|_| rng.random_range(-s..=s)).collect();
    FactorMatrix { r: cfg.dim, n_users, n_items, user_factors, item_factors }
}

/// Ridge solve for one entity row: `(sum w^2 f fᵀ + reg I) x = sum w rt f`.
///
/// `terms` yields `(other-side factor row, rating, weight)`.
fn solve_row<'a>(
    terms: impl Iterator<Item = (&'a [f64], f64, f64)>,
    r: usize,
    reg: f64,
    out: &mut [f64],
) {
    let mut a = DMatrix::<f64>::zeros(r, r);
    let mut rhs = DVector::<f64>::zeros(r);
    for (f, rt, w) in terms {
        let w2 = w * w;
        for p in 0..r {
            let fp = f[p];
            rhs[p] += w * rt * fp;
            for q in 0..r {
                a[(p, q)] += w2 * fp * f[q];
            }
        }
    }
    for p in 0..r {
        a[(p, p)] += reg;
    }
    // reg > 0 keeps the system positive definite, so Cholesky cannot fail.
    let sol = Cholesky::new(a).expect("regularized normal equations").solve(&rhs);
    out.copy_from_slice(sol.as_slice());
}

fn mf_objective<W>(train: &RatingMatrix, f: &FactorMatrix, reg: f64, weight: &W) -> f64
where
    W: Fn(usize, usize) -> f64 + Sync + Send,
{
    let rating_loss = par::sum_indexed(train.n_users(), |u| {
        let hu = f.user_row(u);
        train
            .user_ratings(u)
            .iter()
            .map(|&(j, rt)| {
                let pred = weight(u, j as usize) * dot(hu, f.item_row(j as usize));
                (rt - pred) * (rt - pred)
            })
            .sum()
    });
    rating_loss + reg * f.frobenius_sq()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn train_weighted<W>(train: &RatingMatrix, cfg: &MfConfig, weight: W) -> Result<MfOutcome>
where
    W: Fn(usize, usize) -> f64 + Sync + Send,
{
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let r = cfg.dim;
    let mut f = init_factors(train.n_users(), train.n_items(), cfg);
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    trace.push(mf_objective(train, &f, cfg.reg, &weight));

    for _sweep in 0..cfg.iters {
        // User rows are independent given the item factors, and vice versa.
        {
            let item_factors = f.item_factors.clone();
            let weight = &weight;
            par::for_each_chunk_mut(&mut f.user_factors, r, |u, row| {
                let terms = train.user_ratings(u).iter().map(|&(j, rt)| {
                    let j = j as usize;
                    (&item_factors[j * r..(j + 1) * r], rt, weight(u, j))
                });
                solve_row(terms, r, cfg.reg, row);
            });
        }
        {
            let user_factors = f.user_factors.clone();
            let weight = &weight;
            par::for_each_chunk_mut(&mut f.item_factors, r, |j, row| {
                let terms = train.item_ratings(j).iter().map(|&(u, rt)| {
                    let u = u as usize;
                    (&user_factors[u * r..(u + 1) * r], rt, weight(u, j))
                });
                solve_row(terms, r, cfg.reg, row);
            });
        }
        let obj = mf_objective(train, &f, cfg.reg, &weight);
        if !obj.is_finite() {
            return Err(Error::Divergence("non-finite factorization objective".into()));
        }
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if (prev - obj).abs() <= REL_TOL * prev.abs().max(1.0) {
            break;
        }
    }
    Ok(MfOutcome { factors: f, objective_trace: trace })
}

/// Factors plus the per-sweep objective values (non-increasing).
#[derive(Debug, Clone)]
pub struct MfOutcome {
    pub factors: FactorMatrix,
    pub objective_trace: Vec<f64>,
}

/// Minimize `sum_obs (r_ij - h_i . g_j)^2 + reg (|H|^2 + |G|^2)` by
/// alternating per-row ridge solves.
pub fn train_mf(train: &RatingMatrix, cfg: &MfConfig) -> Result<MfOutcome> {
    train_weighted(train, cfg, |_, _| 1.0)
}

/// Affinity-weighted variant: the prediction for an observed pair is
/// `s_ij * (h_i . g_j)`, so each rating behaves as a ridge term with weight
/// `s_ij`. Affinities must be positive.
pub fn train_mf_ga<S>(train: &RatingMatrix, affinity: S, cfg: &MfConfig) -> Result<MfOutcome>
where
    S: Fn(usize, usize) -> f64 + Sync + Send,
{
    for u in 0..train.n_users() {
        for &(j, _) in train.user_ratings(u) {
            let s = affinity(u, j as usize);
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::InvalidValue(format!(
                    "group affinity for ({u}, {j}) is {s}; must be positive"
                )));
            }
        }
    }
    train_weighted(train, cfg, affinity)
}

/// Inner product prediction for one pair.
pub fn predict_mf(f: &FactorMatrix, user: usize, item: usize) -> Result<f64> {
    if user >= f.n_users() || item >= f.n_items() {
        return Err(Error::IndexOutOfRange(format!(
            "({user}, {item}) outside {} x {}",
            f.n_users(),
            f.n_items()
        )));
    }
    Ok(dot(f.user_row(user), f.item_row(item)))
}
