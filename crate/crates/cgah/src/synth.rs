//! Synthetic planted-group datasets for directional experiments and tests.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ContentMatrix, RatingMatrix};
use crate::error::{Error, Result};

/// Planted-group generator settings.
#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Number of planted user and item groups.
    pub kappa: usize,
    /// Fraction of the full matrix observed; every user rates exactly
    /// `round(density * n_items)` items.
    pub density: f64,
    /// Standard deviation of the additive rating noise.
    pub noise: f64,
    /// Strength of the observation bias: which items a user rates is drawn
    /// with weight `exp(bias * (block_mean - 3))`, so preferred blocks are
    /// rated more often, as in real feedback data. 0 samples uniformly.
    pub observation_bias: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 300,
            kappa: 4,
            density: 0.1,
            noise: 0.5,
            observation_bias: 1.0,
            seed: 42,
        }
    }
}

/// Ratings with block structure plus the hidden group assignments.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub ratings: RatingMatrix,
    pub user_groups: Vec<usize>,
    pub item_groups: Vec<usize>,
}

/// Sample a dataset whose ratings are group-block means plus Gaussian noise.
///
/// Block means follow a cyclic pattern over [1, 5], so each user group ranks
/// the item groups in a distinct order.
pub fn planted_groups(cfg: &SynthConfig) -> Result<SynthDataset> {
    let per_user = (cfg.density * cfg.n_items as f64).round() as usize;
    if per_user < 2 {
        return Err(Error::InvalidConfig(
            "density too low: every user needs at least 2 ratings".into(),
        ));
    }
    if cfg.kappa < 2 {
        return Err(Error::InvalidConfig("need at least 2 planted groups".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let user_groups: Vec<usize> = (0..cfg.n_users).map(|_| rng.random_range(0..cfg.kappa)).collect();
    let item_groups: Vec<usize> = (0..cfg.n_items).map(|_| rng.random_range(0..cfg.kappa)).collect();
    let block_mean = |a: usize, b: usize| -> f64 {
        1.0 + 4.0 * (((a + b) % cfg.kappa) as f64) / (cfg.kappa - 1) as f64
    };
    let noise = Normal::new(0.0, cfg.noise)
        .map_err(|e| Error::InvalidConfig(format!("noise sigma: {e}")))?;
    let mut entries = Vec::with_capacity(cfg.n_users * per_user);
    for (u, &gu) in user_groups.iter().enumerate() {
        let rated: Vec<usize> = if cfg.observation_bias == 0.0 {
            sample(&mut rng, cfg.n_items, per_user).into_iter().collect()
        } else {
            // weighted sampling without replacement (exponential-key trick)
            let mut keyed: Vec<(f64, usize)> = (0..cfg.n_items)
                .map(|j| {
                    let w = (cfg.observation_bias * (block_mean(gu, item_groups[j]) - 3.0)).exp();
                    let key = rng.random_range(0.0f64..1.0).powf(1.0 / w);
                    (key, j)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            keyed.into_iter().take(per_user).map(|(_, j)| j).collect()
        };
        for j in rated {
            let mean = block_mean(gu, item_groups[j]);
            entries.push((u as u32, j as u32, mean + noise.sample(&mut rng)));
        }
    }
    Ok(SynthDataset {
        ratings: RatingMatrix::from_entries(cfg.n_users, cfg.n_items, &entries)?,
        user_groups,
        item_groups,
    })
}

/// Content rows that reveal the group: a noisy one-hot block pattern scaled
/// to [0, 1].
pub fn planted_content(
    groups: &[usize],
    kappa: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<ContentMatrix> {
    if dim < kappa {
        return Err(Error::InvalidConfig("content dim must cover the groups".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = groups
        .iter()
        .map(|&g| {
            (0..dim)
                .map(|i| {
                    let base = if i % kappa == g { 0.9 } else { 0.1 };
                    (base + rng.random_range(-noise..=noise)).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    ContentMatrix::from_rows(rows)
}
