//! Alternating optimizer for the hashed preference model: bitwise discrete
//! coordinate descent over the user and item codes, SVD delegate updates,
//! and (in content mode) guarded encoder fine-tuning.
//!
//! Code updates within one half-sweep touch only their own entity's bits and
//! read everything else, so they run in parallel and stay deterministic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::{code_dot, update_delegate, BinaryCodeSet, CodeView, DelegatePair};
use crate::data::{ContentMatrix, RatingMatrix};
use crate::encoder::{encode_all, finetune_epoch, supervised_loss, EncoderParams};
use crate::error::{Error, Result};
use crate::grouping::{affinity_matrix, AffinityMap, GroupProfile};
use crate::mf::FactorMatrix;
use crate::par;

/// Whether the objective carries the content pull terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgahMode {
    Cf,
    Content,
}

/// Hyperparameters for [`train_cgah_cf`] and [`train_cgah`].
#[derive(Debug, Clone)]
pub struct CgahConfig {
    /// Code length in bits; must match the factor dimension.
    pub r: usize,
    pub kappa: usize,
    /// Delegate pull weight; `None` scales `1e-3 * |omega| / (n * r)`.
    pub alpha: Option<f64>,
    /// Item-side delegate pull; `None` scales `1e-3 * |omega| / (m * r)`.
    pub beta: Option<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub max_outer_iters: usize,
    pub inner_dcd_sweeps: usize,
    /// Learning rate for the per-iteration encoder fine-tuning pass.
    pub encoder_lr: f64,
    pub seed: u64,
    pub mode: CgahMode,
}

impl CgahConfig {
    pub fn cf(r: usize, kappa: usize) -> Self {
        Self {
            r,
            kappa,
            alpha: None,
            beta: None,
            lambda1: 0.0,
            lambda2: 0.0,
            max_outer_iters: 30,
            inner_dcd_sweeps: 10,
            encoder_lr: 0.05,
            seed: 42,
            mode: CgahMode::Cf,
        }
    }

    pub fn content(r: usize, kappa: usize) -> Self {
        Self { lambda1: 0.2, lambda2: 0.1, mode: CgahMode::Content, ..Self::cf(r, kappa) }
    }

    fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha {
            if a < 0.0 {
                return Err(Error::InvalidConfig("alpha must be non-negative".into()));
            }
        }
        if let Some(b) = self.beta {
            if b < 0.0 {
                return Err(Error::InvalidConfig("beta must be non-negative".into()));
            }
        }
        if self.mode == CgahMode::Cf && (self.lambda1 != 0.0 || self.lambda2 != 0.0) {
            return Err(Error::InvalidConfig("content weights must be zero in cf mode".into()));
        }
        if self.r < 1 || self.max_outer_iters < 1 || self.inner_dcd_sweeps < 1 {
            return Err(Error::InvalidConfig("r, outer iters, and dcd sweeps must be positive".into()));
        }
        Ok(())
    }

    fn resolve_weights(&self, train: &RatingMatrix) -> ResolvedWeights {
        let omega = train.len() as f64;
        let auto = |count: usize| 1e-3 * omega / (count.max(1) as f64 * self.r as f64);
        ResolvedWeights {
            alpha: self.alpha.unwrap_or_else(|| auto(train.n_users())),
            beta: self.beta.unwrap_or_else(|| auto(train.n_items())),
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }
}

/// Weights after resolving the `auto` delegate scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Objective decomposition recorded along the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub rating: f64,
    /// `-2 alpha tr(B^T X) - 2 beta tr(D^T Y)`, as it enters the objective.
    pub delegate: f64,
    pub content: f64,
    pub total: f64,
}

/// Which block update produced a trace point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Init,
    Users,
    Items,
    DelegateX,
    DelegateY,
    Encoders,
}

/// Optimizer state: the code sets, their delegates, frozen affinities, and
/// the objective traces.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub b: BinaryCodeSet,
    pub d: BinaryCodeSet,
    pub delegates: DelegatePair,
    pub s: AffinityMap,
    pub weights: ResolvedWeights,
    /// Flattened `n x r` user content embeddings, content mode only.
    pub xi: Option<Vec<f64>>,
    /// Flattened `m x r` item content embeddings, content mode only.
    pub zeta: Option<Vec<f64>>,
    pub enc_users: Option<EncoderParams>,
    pub enc_items: Option<EncoderParams>,
    /// Objective after each completed outer iteration (index 0 = initial).
    pub objective_trace: Vec<ObjectiveParts>,
    /// Objective recomputed from scratch after every block update.
    pub block_trace: Vec<(Block, f64)>,
    pub outer_iters_run: usize,
}

impl TrainState {
    /// Assemble a state directly; used by tests and tools that drive the
    /// block updates manually.
    pub fn from_parts(
        b: BinaryCodeSet,
        d: BinaryCodeSet,
        delegates: DelegatePair,
        s: AffinityMap,
        weights: ResolvedWeights,
    ) -> Self {
        Self {
            b,
            d,
            delegates,
            s,
            weights,
            xi: None,
            zeta: None,
            enc_users: None,
            enc_items: None,
            objective_trace: Vec::new(),
            block_trace: Vec::new(),
            outer_iters_run: 0,
        }
    }
}

/// Softened objective, evaluated from scratch.
///
/// `sum_obs (r_ij - s_ij/2 - s_ij b_i.d_j / 2r)^2 - 2a tr(B^T X) - 2b tr(D^T Y)
///  + l1 sum_i |b_i - xi_i|^2 + l2 sum_j |d_j - zeta_j|^2`
pub fn objective(state: &TrainState, train: &RatingMatrix) -> ObjectiveParts {
    let r = state.b.code_len() as f64;
    let rating = par::sum_indexed(train.n_users(), |u| {
        let bu = state.b.view(u);
        train
            .user_ratings(u)
            .iter()
            .enumerate()
            .map(|(idx, &(j, rt))| {
                let s = state.s.at_row(u, idx);
                let dot = code_dot(bu, state.d.view(j as usize)).unwrap() as f64;
                let resid = rt - 0.5 * s - s * dot / (2.0 * r);
                resid * resid
            })
            .sum()
    });
    let delegate = -2.0 * state.weights.alpha * state.delegates.x.trace_alignment(&state.b)
        - 2.0 * state.weights.beta * state.delegates.y.trace_alignment(&state.d);
    let mut content = 0.0;
    if let Some(xi) = &state.xi {
        content += state.weights.lambda1 * embed_gap(&state.b, xi);
    }
    if let Some(zeta) = &state.zeta {
        content += state.weights.lambda2 * embed_gap(&state.d, zeta);
    }
    ObjectiveParts { rating, delegate, content, total: rating + delegate + content }
}

/// `sum_e |code_e - embed_e|^2` for ±1 codes against real embeddings.
fn embed_gap(codes: &BinaryCodeSet, embed: &[f64]) -> f64 {
    let r = codes.code_len();
    par::sum_indexed(codes.count(), |e| {
        (0..r)
            .map(|k| {
                let gap = codes.get_bit(e, k) as f64 - embed[e * r + k];
                gap * gap
            })
            .sum()
    })
}

/// Bit update rule: take the sign opposite to the coefficient, keep the
/// current bit when the coefficient vanishes.
pub fn dcd_sign_rule(coefficient: f64, current: i8) -> i8 {
    if coefficient < 0.0 {
        1
    } else if coefficient > 0.0 {
        -1
    } else {
        current
    }
}

/// Sweep the bits of one packed code until stable or `max_sweeps`.
///
/// The restricted objective in bit `k` is `coeff * b_k + const` with
/// `coeff = sum_j (2 c_j^2 rest_j - 2 e_j c_j) d_jk - 2a x_k - 2l emb_k`,
/// where `c_j = s_j / 2r`, `e_j = r_j - s_j / 2`, and `rest_j` is the code
/// inner product excluding bit `k`. Returns the new words and whether any
/// bit changed.
#[allow(clippy::too_many_arguments)]
fn dcd_sweep_code(
    current: CodeView<'_>,
    neighbors: &[(u32, f64)],
    s_vals: &[f64],
    other: &BinaryCodeSet,
    delegate_row: &[f64],
    delegate_weight: f64,
    embed_row: Option<&[f64]>,
    embed_weight: f64,
    max_sweeps: usize,
) -> (Vec<u64>, bool) {
    let r = current.len;
    let mut bits: Vec<i8> = (0..r)
        .map(|k| if (current.words[k / 64] >> (k % 64)) & 1 == 1 { 1 } else { -1 })
        .collect();
    let mut t: Vec<i64> = neighbors
        .iter()
        .map(|&(j, _)| code_dot(current, other.view(j as usize)).unwrap())
        .collect();
    let inv_2r = 1.0 / (2.0 * r as f64);
    let mut any_change = false;

    for _sweep in 0..max_sweeps {
        let mut sweep_change = false;
        for k in 0..r {
            let mut coeff = -2.0 * delegate_weight * delegate_row[k];
            if let Some(emb) = embed_row {
                coeff += -2.0 * embed_weight * emb[k];
            }
            for (idx, &(j, rating)) in neighbors.iter().enumerate() {
                let s = s_vals[idx];
                let c = s * inv_2r;
                let e = rating - 0.5 * s;
                let djk = other.get_bit(j as usize, k) as f64;
                let rest = (t[idx] - bits[k] as i64 * other.get_bit(j as usize, k) as i64) as f64;
                coeff += (2.0 * c * c * rest - 2.0 * e * c) * djk;
            }
            let new = dcd_sign_rule(coeff, bits[k]);
            if new != bits[k] {
                for (idx, &(j, _)) in neighbors.iter().enumerate() {
                    t[idx] += 2 * new as i64 * other.get_bit(j as usize, k) as i64;
                }
                bits[k] = new;
                sweep_change = true;
                any_change = true;
            }
        }
        if !sweep_change {
            break;
        }
    }

    let mut words = vec![0u64; current.words.len()];
    for (k, &b) in bits.iter().enumerate() {
        if b == 1 {
            words[k / 64] |= 1 << (k % 64);
        }
    }
    (words, any_change)
}

/// Run DCD to convergence for one user's code, in place. Returns whether any
/// bit changed.
pub fn dcd_update_user(
    i: usize,
    state: &mut TrainState,
    train: &RatingMatrix,
    max_sweeps: usize,
) -> bool {
    let r = state.b.code_len();
    let (words, changed) = dcd_sweep_code(
        state.b.view(i),
        train.user_ratings(i),
        state.s.row(i),
        &state.d,
        state.delegates.x.row(i),
        state.weights.alpha,
        state.xi.as_ref().map(|x| &x[i * r..(i + 1) * r]),
        state.weights.lambda1,
        max_sweeps,
    );
    let (dst, wpc) = state.b.words_mut();
    dst[i * wpc..(i + 1) * wpc].copy_from_slice(&words);
    changed
}

/// Run DCD to convergence for one item's code, in place.
pub fn dcd_update_item(
    j: usize,
    state: &mut TrainState,
    train: &RatingMatrix,
    max_sweeps: usize,
) -> bool {
    let r = state.d.code_len();
    let (words, changed) = dcd_sweep_code(
        state.d.view(j),
        train.item_ratings(j),
        state.s.col(j),
        &state.b,
        state.delegates.y.row(j),
        state.weights.beta,
        state.zeta.as_ref().map(|z| &z[j * r..(j + 1) * r]),
        state.weights.lambda2,
        max_sweeps,
    );
    let (dst, wpc) = state.d.words_mut();
    dst[j * wpc..(j + 1) * wpc].copy_from_slice(&words);
    changed
}

/// Parallel half-sweep over every user (or item) code; returns how many
/// entities changed.
fn half_sweep(state: &mut TrainState, train: &RatingMatrix, users: bool, max_sweeps: usize) -> usize {
    let (count, r) = if users {
        (state.b.count(), state.b.code_len())
    } else {
        (state.d.count(), state.d.code_len())
    };
    let results: Vec<(Vec<u64>, bool)> = par::map_collect(count, |e| {
        if users {
            dcd_sweep_code(
                state.b.view(e),
                train.user_ratings(e),
                state.s.row(e),
                &state.d,
                state.delegates.x.row(e),
                state.weights.alpha,
                state.xi.as_ref().map(|x| &x[e * r..(e + 1) * r]),
                state.weights.lambda1,
                max_sweeps,
            )
        } else {
            dcd_sweep_code(
                state.d.view(e),
                train.item_ratings(e),
                state.s.col(e),
                &state.b,
                state.delegates.y.row(e),
                state.weights.beta,
                state.zeta.as_ref().map(|z| &z[e * r..(e + 1) * r]),
                state.weights.lambda2,
                max_sweeps,
            )
        }
    });
    let codes = if users { &mut state.b } else { &mut state.d };
    let (dst, wpc) = codes.words_mut();
    let mut changed = 0;
    for (e, (words, ch)) in results.into_iter().enumerate() {
        if ch {
            dst[e * wpc..(e + 1) * wpc].copy_from_slice(&words);
            changed += 1;
        }
    }
    changed
}

const MONOTONE_TOL: f64 = 1e-9;

fn check_monotone(prev: f64, next: f64, block: Block) -> Result<()> {
    if next > prev + MONOTONE_TOL * prev.abs().max(1.0) {
        return Err(Error::InternalConsistency(format!(
            "objective rose from {prev} to {next} after {block:?} update"
        )));
    }
    Ok(())
}

fn record_block(
    state: &mut TrainState,
    train: &RatingMatrix,
    block: Block,
    prev_total: f64,
) -> Result<f64> {
    let parts = objective(state, train);
    check_monotone(prev_total, parts.total, block)?;
    state.block_trace.push((block, parts.total));
    Ok(parts.total)
}

/// Warm-start codes from MF structure: take signs of the factor rows, then
/// signs of their delegate projections (zeros break to +1).
fn init_codes(factors: &FactorMatrix) -> Result<(BinaryCodeSet, BinaryCodeSet, DelegatePair)> {
    let r = factors.r;
    let raw_b = BinaryCodeSet::from_sign(factors.user_factors(), factors.n_users(), r)?;
    let raw_d = BinaryCodeSet::from_sign(factors.item_factors(), factors.n_items(), r)?;
    let x0 = update_delegate(&raw_b)?;
    let y0 = update_delegate(&raw_d)?;
    let b = BinaryCodeSet::from_sign(x0.values(), factors.n_users(), r)?;
    let d = BinaryCodeSet::from_sign(y0.values(), factors.n_items(), r)?;
    Ok((b, d, DelegatePair { x: x0, y: y0 }))
}

fn validate_common(train: &RatingMatrix, factors: &FactorMatrix, cfg: &CgahConfig) -> Result<()> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if factors.r != cfg.r {
        return Err(Error::DimensionMismatch(format!(
            "factor dim {} vs configured code length {}",
            factors.r, cfg.r
        )));
    }
    if train.n_users() != factors.n_users() || train.n_items() != factors.n_items() {
        return Err(Error::DimensionMismatch("ratings vs factors entity counts".into()));
    }
    if train.n_users() <= cfg.r || train.n_items() <= cfg.r {
        return Err(Error::InvalidValue(format!(
            "delegate updates need more than r = {} users and items",
            cfg.r
        )));
    }
    Ok(())
}

fn run_outer_loop(
    mut state: TrainState,
    train: &RatingMatrix,
    cfg: &CgahConfig,
    mut encoder_ctx: Option<EncoderLoopCtx<'_>>,
) -> Result<TrainState> {
    let initial = objective(&state, train);
    state.block_trace.push((Block::Init, initial.total));
    state.objective_trace.push(initial);
    let mut prev_total = initial.total;

    for _outer in 0..cfg.max_outer_iters {
        let user_changes = half_sweep(&mut state, train, true, cfg.inner_dcd_sweeps);
        prev_total = record_block(&mut state, train, Block::Users, prev_total)?;

        let item_changes = half_sweep(&mut state, train, false, cfg.inner_dcd_sweeps);
        prev_total = record_block(&mut state, train, Block::Items, prev_total)?;

        state.delegates.x = update_delegate(&state.b)?;
        prev_total = record_block(&mut state, train, Block::DelegateX, prev_total)?;

        state.delegates.y = update_delegate(&state.d)?;
        prev_total = record_block(&mut state, train, Block::DelegateY, prev_total)?;

        if let Some(ctx) = encoder_ctx.as_mut() {
            encoder_step(&mut state, ctx)?;
            prev_total = record_block(&mut state, train, Block::Encoders, prev_total)?;
        }

        state.objective_trace.push(objective(&state, train));
        state.outer_iters_run += 1;
        if user_changes == 0 && item_changes == 0 {
            break;
        }
    }
    Ok(state)
}

/// Train codes from ratings alone; profiles must come from the same factors.
pub fn train_cgah_cf(
    train: &RatingMatrix,
    factors: &FactorMatrix,
    p: &GroupProfile,
    q: &GroupProfile,
    cfg: &CgahConfig,
) -> Result<TrainState> {
    if cfg.mode != CgahMode::Cf {
        return Err(Error::InvalidConfig("train_cgah_cf requires cf mode".into()));
    }
    validate_common(train, factors, cfg)?;
    let s = affinity_matrix(p, q, train)?;
    let (b, d, delegates) = init_codes(factors)?;
    let state = TrainState::from_parts(b, d, delegates, s, cfg.resolve_weights(train));
    run_outer_loop(state, train, cfg, None)
}

struct EncoderLoopCtx<'a> {
    content_users: &'a ContentMatrix,
    content_items: &'a ContentMatrix,
    lr: f64,
    rng: ChaCha8Rng,
}

/// One guarded fine-tuning pass per encoder: the SGD epoch is kept only when
/// it lowers the supervised loss, so the block never raises the objective.
fn encoder_step(state: &mut TrainState, ctx: &mut EncoderLoopCtx<'_>) -> Result<()> {
    {
        let enc = state.enc_users.as_mut().expect("content mode has user encoder");
        let before = supervised_loss(enc, ctx.content_users, &state.b);
        let mut candidate = enc.clone();
        finetune_epoch(&mut candidate, ctx.content_users, &state.b, ctx.lr, &mut ctx.rng)?;
        let after = supervised_loss(&candidate, ctx.content_users, &state.b);
        if after <= before {
            *enc = candidate;
            state.xi = Some(encode_all(enc, ctx.content_users)?);
        }
    }
    {
        let enc = state.enc_items.as_mut().expect("content mode has item encoder");
        let before = supervised_loss(enc, ctx.content_items, &state.d);
        let mut candidate = enc.clone();
        finetune_epoch(&mut candidate, ctx.content_items, &state.d, ctx.lr, &mut ctx.rng)?;
        let after = supervised_loss(&candidate, ctx.content_items, &state.d);
        if after <= before {
            *enc = candidate;
            state.zeta = Some(encode_all(enc, ctx.content_items)?);
        }
    }
    Ok(())
}

/// Content-aware training: the cf objective plus encoder pulls, with one
/// fine-tuning pass per outer iteration. Profiles are computed by the caller
/// from the concatenated latent vectors and stay frozen here.
#[allow(clippy::too_many_arguments)]
pub fn train_cgah(
    train: &RatingMatrix,
    content_users: &ContentMatrix,
    content_items: &ContentMatrix,
    factors: &FactorMatrix,
    p: &GroupProfile,
    q: &GroupProfile,
    enc_users: &EncoderParams,
    enc_items: &EncoderParams,
    cfg: &CgahConfig,
) -> Result<TrainState> {
    if cfg.mode != CgahMode::Content {
        return Err(Error::InvalidConfig("train_cgah requires content mode".into()));
    }
    validate_common(train, factors, cfg)?;
    if enc_users.hidden_dim != cfg.r || enc_items.hidden_dim != cfg.r {
        return Err(Error::DimensionMismatch("encoder embedding dim vs code length".into()));
    }
    if content_users.n_entities() != train.n_users()
        || content_items.n_entities() != train.n_items()
    {
        return Err(Error::DimensionMismatch("content rows vs rating matrix".into()));
    }
    let s = affinity_matrix(p, q, train)?;
    let (b, d, delegates) = init_codes(factors)?;
    let mut state = TrainState::from_parts(b, d, delegates, s, cfg.resolve_weights(train));
    state.enc_users = Some(enc_users.clone());
    state.enc_items = Some(enc_items.clone());
    state.xi = Some(encode_all(enc_users, content_users)?);
    state.zeta = Some(encode_all(enc_items, content_items)?);
    let ctx = EncoderLoopCtx {
        content_users,
        content_items,
        lr: cfg.encoder_lr,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x656e_636f_6465_7273),
    };
    run_outer_loop(state, train, cfg, Some(ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::DelegateMatrix;
    use approx::assert_relative_eq;
    use rand::prelude::*;

    fn random_codes(rng: &mut ChaCha8Rng, count: usize, r: usize) -> BinaryCodeSet {
        let rows: Vec<Vec<i8>> = (0..count)
            .map(|_| (0..r).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
            .collect();
        BinaryCodeSet::pack(&rows).unwrap()
    }

    fn random_delegate(rng: &mut ChaCha8Rng, count: usize, r: usize) -> DelegateMatrix {
        let values: Vec<f64> = (0..count * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        DelegateMatrix::from_values(count, r, values).unwrap()
    }

    /// Random instance with hand-assembled state for block-level tests.
    fn random_state(
        rng: &mut ChaCha8Rng,
        n: usize,
        m: usize,
        r: usize,
        max_degree: usize,
        weights: ResolvedWeights,
    ) -> (TrainState, RatingMatrix) {
        let mut entries = Vec::new();
        for u in 0..n as u32 {
            let deg = rng.random_range(1..=max_degree);
            let mut items: Vec<u32> = (0..m as u32).collect();
            items.shuffle(rng);
            for &j in items.iter().take(deg) {
                entries.push((u, j, rng.random_range(1..=5) as f64));
            }
        }
        let train = RatingMatrix::from_entries(n, m, &entries).unwrap();
        let p_rows: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q_rows: Vec<f64> = (0..m * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = GroupProfile::from_rows(n, 3, p_rows).unwrap();
        let q = GroupProfile::from_rows(m, 3, q_rows).unwrap();
        let s = affinity_matrix(&p, &q, &train).unwrap();
        let state = TrainState::from_parts(
            random_codes(rng, n, r),
            random_codes(rng, m, r),
            DelegatePair { x: random_delegate(rng, n, r), y: random_delegate(rng, m, r) },
            s,
            weights,
        );
        (state, train)
    }

    #[test]
    fn sign_rule_cases() {
        assert_eq!(dcd_sign_rule(-2.5, -1), 1);
        assert_eq!(dcd_sign_rule(3.0, 1), -1);
        assert_eq!(dcd_sign_rule(0.0, -1), -1);
        assert_eq!(dcd_sign_rule(0.0, 1), 1);
    }

    #[test]
    fn objective_empty_omega_zero_weights_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train = RatingMatrix::from_entries(2, 2, &[]).unwrap();
        let p = GroupProfile::uniform(2, 2);
        let s = affinity_matrix(&p, &p, &train).unwrap();
        let state = TrainState::from_parts(
            random_codes(&mut rng, 2, 4),
            random_codes(&mut rng, 2, 4),
            DelegatePair {
                x: random_delegate(&mut rng, 2, 4),
                y: random_delegate(&mut rng, 2, 4),
            },
            s,
            ResolvedWeights { alpha: 0.0, beta: 0.0, lambda1: 0.0, lambda2: 0.0 },
        );
        let parts = objective(&state, &train);
        assert_eq!(parts.total, 0.0);
    }

    #[test]
    fn objective_constructed_exact_fit_has_zero_rating_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = random_codes(&mut rng, 1, 8);
        let d = random_codes(&mut rng, 1, 8);
        let p = GroupProfile::from_rows(1, 2, vec![0.3, 0.1]).unwrap();
        let q = GroupProfile::from_rows(1, 2, vec![0.5, 0.9]).unwrap();
        let s_val = crate::grouping::group_affinity(p.row(0), q.row(0)).unwrap();
        let dot = code_dot(b.view(0), d.view(0)).unwrap() as f64;
        let rating = 0.5 * s_val + s_val * dot / 16.0;
        let train = RatingMatrix::from_entries(1, 1, &[(0, 0, rating)]).unwrap();
        let s = affinity_matrix(&p, &q, &train).unwrap();
        let state = TrainState::from_parts(
            b,
            d,
            DelegatePair {
                x: random_delegate(&mut rng, 1, 8),
                y: random_delegate(&mut rng, 1, 8),
            },
            s,
            ResolvedWeights { alpha: 0.0, beta: 0.0, lambda1: 0.0, lambda2: 0.0 },
        );
        let parts = objective(&state, &train);
        assert!(parts.rating.abs() < 1e-24);
    }

    /// Independent scalar-loop oracle for the full objective.
    fn objective_oracle(state: &TrainState, train: &RatingMatrix) -> f64 {
        let r = state.b.code_len();
        let mut total = 0.0;
        for u in 0..train.n_users() {
            for (idx, &(j, rt)) in train.user_ratings(u).iter().enumerate() {
                let s = state.s.at_row(u, idx);
                let mut dot = 0.0;
                for k in 0..r {
                    dot += state.b.get_bit(u, k) as f64 * state.d.get_bit(j as usize, k) as f64;
                }
                let resid = rt - 0.5 * s - s * dot / (2.0 * r as f64);
                total += resid * resid;
            }
        }
        let mut tr_x = 0.0;
        for e in 0..state.b.count() {
            for k in 0..r {
                tr_x += state.b.get_bit(e, k) as f64 * state.delegates.x.row(e)[k];
            }
        }
        let mut tr_y = 0.0;
        for e in 0..state.d.count() {
            for k in 0..r {
                tr_y += state.d.get_bit(e, k) as f64 * state.delegates.y.row(e)[k];
            }
        }
        total -= 2.0 * state.weights.alpha * tr_x + 2.0 * state.weights.beta * tr_y;
        if let Some(xi) = &state.xi {
            for e in 0..state.b.count() {
                for k in 0..r {
                    let gap = state.b.get_bit(e, k) as f64 - xi[e * r + k];
                    total += state.weights.lambda1 * gap * gap;
                }
            }
        }
        if let Some(zeta) = &state.zeta {
            for e in 0..state.d.count() {
                for k in 0..r {
                    let gap = state.d.get_bit(e, k) as f64 - zeta[e * r + k];
                    total += state.weights.lambda2 * gap * gap;
                }
            }
        }
        total
    }

    #[test]
    fn objective_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights =
            ResolvedWeights { alpha: 0.01, beta: 0.02, lambda1: 0.0, lambda2: 0.0 };
        let (state, train) = random_state(&mut rng, 3, 3, 6, 3, weights);
        let parts = objective(&state, &train);
        assert_relative_eq!(parts.total, objective_oracle(&state, &train), epsilon = 1e-12);
    }

    /// Exhaustive restricted minimum over all 2^r codes for one user.
    fn brute_force_user_min(state: &TrainState, train: &RatingMatrix, i: usize) -> f64 {
        let r = state.b.code_len();
        let mut probe = state.clone();
        let mut best = f64::INFINITY;
        for mask in 0u64..(1 << r) {
            for k in 0..r {
                probe.b.set_bit(i, k, if (mask >> k) & 1 == 1 { 1 } else { -1 });
            }
            best = best.min(objective(&probe, train).total);
        }
        best
    }

    #[test]
    fn dcd_user_reaches_exhaustive_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let weights =
            ResolvedWeights { alpha: 1e-3, beta: 1e-3, lambda1: 0.0, lambda2: 0.0 };
        let (mut state, train) = random_state(&mut rng, 1, 3, 6, 3, weights);
        dcd_update_user(0, &mut state, &train, 50);
        let reached = objective(&state, &train).total;
        let best = brute_force_user_min(&state, &train, 0);
        assert_relative_eq!(reached, best, epsilon = 1e-9);
    }

    #[test]
    fn dcd_item_reaches_exhaustive_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let weights =
            ResolvedWeights { alpha: 1e-3, beta: 1e-3, lambda1: 0.0, lambda2: 0.0 };
        let (mut state, train) = random_state(&mut rng, 3, 1, 6, 1, weights);
        dcd_update_item(0, &mut state, &train, 50);
        let reached = objective(&state, &train).total;
        let r = state.d.code_len();
        let mut probe = state.clone();
        let mut best = f64::INFINITY;
        for mask in 0u64..(1 << r) {
            for k in 0..r {
                probe.d.set_bit(0, k, if (mask >> k) & 1 == 1 { 1 } else { -1 });
            }
            best = best.min(objective(&probe, &train).total);
        }
        assert_relative_eq!(reached, best, epsilon = 1e-9);
    }

    #[test]
    fn dcd_converged_bit_flips_cannot_improve() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let weights =
            ResolvedWeights { alpha: 5e-3, beta: 5e-3, lambda1: 0.0, lambda2: 0.0 };
        let (mut state, train) = random_state(&mut rng, 2, 4, 8, 4, weights);
        for i in 0..2 {
            dcd_update_user(i, &mut state, &train, 50);
        }
        let converged = objective(&state, &train).total;
        for i in 0..2 {
            for k in 0..8 {
                let mut probe = state.clone();
                probe.b.set_bit(i, k, -probe.b.get_bit(i, k));
                assert!(
                    objective(&probe, &train).total >= converged - 1e-9,
                    "single flip ({i}, {k}) improved the objective"
                );
            }
        }
    }

    #[test]
    fn item_with_no_ratings_and_zero_pulls_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let weights = ResolvedWeights { alpha: 0.0, beta: 0.0, lambda1: 0.0, lambda2: 0.0 };
        let (mut state, _) = random_state(&mut rng, 2, 3, 6, 2, weights);
        // rebuild train where item 2 has no ratings
        let train = RatingMatrix::from_entries(2, 3, &[(0, 0, 3.0), (1, 1, 2.0), (0, 1, 4.0)])
            .unwrap();
        let p = GroupProfile::uniform(2, 2);
        let q = GroupProfile::uniform(3, 2);
        state.s = affinity_matrix(&p, &q, &train).unwrap();
        let before = state.d.unpack(2);
        let changed = dcd_update_item(2, &mut state, &train, 10);
        assert!(!changed);
        assert_eq!(state.d.unpack(2), before);
    }

    fn two_group_instance(seed: u64) -> (RatingMatrix, FactorMatrix) {
        // Two user blocks preferring two disjoint item blocks.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m, r) = (20, 20, 6);
        let mut entries = Vec::new();
        for u in 0..n as u32 {
            for j in 0..m as u32 {
                if rng.random::<f64>() < 0.4 {
                    let same = (u < 10) == (j < 10);
                    let base = if same { 5.0 } else { 1.0 };
                    entries.push((u, j, base));
                }
            }
        }
        let train = RatingMatrix::from_entries(n, m, &entries).unwrap();
        let cfg = crate::mf::MfConfig { dim: r, reg: 0.1, iters: 30, seed, init_scale: None };
        let factors = crate::mf::train_mf(&train, &cfg).unwrap().factors;
        (train, factors)
    }

    #[test]
    fn train_cf_objective_trace_matches_fresh_objective() {
        let (train, factors) = two_group_instance(8);
        let cb = crate::grouping::kmeans(
            &[factors.user_factors(), factors.item_factors()].concat(),
            factors.r,
            4,
            1,
            30,
        )
        .unwrap();
        let (p, q) = crate::grouping::factor_profiles(&factors, &cb).unwrap();
        let mut cfg = CgahConfig::cf(6, 4);
        cfg.max_outer_iters = 8;
        let state = train_cgah_cf(&train, &factors, &p, &q, &cfg).unwrap();

        let fresh = objective(&state, &train);
        let last = state.objective_trace.last().unwrap();
        assert_eq!(fresh.total, last.total);
        for w in state.objective_trace.windows(2) {
            assert!(w[1].total <= w[0].total + 1e-9 * w[0].total.abs().max(1.0));
        }
        for w in state.block_trace.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9 * w[0].1.abs().max(1.0));
        }
    }

    #[test]
    fn train_cf_constructed_fixed_point_converges_immediately() {
        let (train_seed, factors) = two_group_instance(9);
        let cb = crate::grouping::kmeans(
            &[factors.user_factors(), factors.item_factors()].concat(),
            factors.r,
            3,
            2,
            30,
        )
        .unwrap();
        let (p, q) = crate::grouping::factor_profiles(&factors, &cb).unwrap();

        // Recreate the initialization codes, then synthesize ratings the
        // initial codes already fit exactly.
        let (b0, d0, _) = init_codes(&factors).unwrap();
        let r = factors.r as f64;
        let mut entries = Vec::new();
        for u in 0..train_seed.n_users() {
            for &(j, _) in train_seed.user_ratings(u) {
                let s = crate::grouping::group_affinity(p.row(u), q.row(j as usize)).unwrap();
                let dot = code_dot(b0.view(u), d0.view(j as usize)).unwrap() as f64;
                entries.push((u as u32, j, 0.5 * s + s * dot / (2.0 * r)));
            }
        }
        let train =
            RatingMatrix::from_entries(train_seed.n_users(), train_seed.n_items(), &entries)
                .unwrap();

        let mut cfg = CgahConfig::cf(factors.r, 3);
        cfg.alpha = Some(0.0);
        cfg.beta = Some(0.0);
        let state = train_cgah_cf(&train, &factors, &p, &q, &cfg).unwrap();
        assert_eq!(state.outer_iters_run, 1);
        let parts = objective(&state, &train);
        assert!(parts.rating < 1e-18, "rating loss {}", parts.rating);
    }

    #[test]
    fn train_cf_beats_random_codes_on_grouped_instance() {
        let (train, factors) = two_group_instance(10);
        let stacked = [factors.user_factors(), factors.item_factors()].concat();
        let cb = crate::grouping::kmeans(&stacked, factors.r, 2, 3, 30).unwrap();
        let (p, q) = crate::grouping::factor_profiles(&factors, &cb).unwrap();
        let cfg = CgahConfig::cf(6, 2);
        let state = train_cgah_cf(&train, &factors, &p, &q, &cfg).unwrap();

        // Score the training pairs themselves: learned codes should track
        // high-vs-low ratings better than random codes do on average.
        let fit = |b: &BinaryCodeSet, d: &BinaryCodeSet| -> f64 {
            let mut acc = 0.0;
            for u in 0..train.n_users() {
                for (idx, &(j, rt)) in train.user_ratings(u).iter().enumerate() {
                    let s = state.s.at_row(u, idx);
                    let sim = crate::codes::hamming_similarity(b.view(u), d.view(j as usize))
                        .unwrap();
                    let resid = rt - 0.5 * s - s * (2.0 * sim - 1.0) * 0.5;
                    acc += resid * resid;
                }
            }
            acc
        };
        let learned = fit(&state.b, &state.d);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut better = 0;
        for _ in 0..100 {
            let rb = random_codes(&mut rng, 20, 6);
            let rd = random_codes(&mut rng, 20, 6);
            if learned <= fit(&rb, &rd) {
                better += 1;
            }
        }
        assert!(better >= 95, "learned codes beat only {better}/100 random draws");
    }

    #[test]
    fn train_cf_deterministic() {
        let (train, factors) = two_group_instance(11);
        let stacked = [factors.user_factors(), factors.item_factors()].concat();
        let cb = crate::grouping::kmeans(&stacked, factors.r, 2, 3, 30).unwrap();
        let (p, q) = crate::grouping::factor_profiles(&factors, &cb).unwrap();
        let cfg = CgahConfig::cf(6, 2);
        let a = train_cgah_cf(&train, &factors, &p, &q, &cfg).unwrap();
        let b = train_cgah_cf(&train, &factors, &p, &q, &cfg).unwrap();
        assert_eq!(a.b, b.b);
        assert_eq!(a.d, b.d);
        assert_eq!(a.objective_trace.len(), b.objective_trace.len());
    }

    #[test]
    fn cf_config_rejects_content_weights() {
        let mut cfg = CgahConfig::cf(8, 2);
        cfg.lambda1 = 0.1;
        assert!(cfg.validate().is_err());
    }

    fn content_fixture() -> (RatingMatrix, FactorMatrix, ContentMatrix, ContentMatrix) {
        let (train, factors) = two_group_instance(12);
        let mk = |count: usize, offset: usize| {
            let rows: Vec<Vec<f64>> = (0..count)
                .map(|e| {
                    (0..5)
                        .map(|i| if (e + offset + i).is_multiple_of(4) { 1.0 } else { 0.2 })
                        .collect()
                })
                .collect();
            ContentMatrix::from_rows(rows).unwrap()
        };
        (train, factors, mk(20, 0), mk(20, 2))
    }

    #[test]
    fn train_content_objective_non_increasing() {
        let (train, factors, cu, ci) = content_fixture();
        let stacked = [factors.user_factors(), factors.item_factors()].concat();
        let cb = crate::grouping::kmeans(&stacked, factors.r, 3, 2, 30).unwrap();
        let (p, q) = crate::grouping::factor_profiles(&factors, &cb).unwrap();
        let enc_u = crate::encoder::pretrain_dae(&cu, 6, 0.2, 10, 0.05, 1).unwrap();
        let enc_i = crate::encoder::pretrain_dae(&ci, 6, 0.2, 10, 0.05, 2).unwrap();
        let mut cfg = CgahConfig::content(6, 3);
        cfg.max_outer_iters = 10;
        let state = train_cgah(&train, &cu, &ci, &factors, &p, &q, &enc_u, &enc_i, &cfg).unwrap();
        for w in state.block_trace.windows(2) {
            assert!(
                w[1].1 <= w[0].1 + 1e-9 * w[0].1.abs().max(1.0),
                "{:?} -> {:?}",
                w[0],
                w[1]
            );
        }
        assert!(state.objective_trace.last().unwrap().content > 0.0);
    }

    #[test]
    fn train_content_with_zero_lambdas_matches_cf_codes() {
        let (train, factors, cu, ci) = content_fixture();
        let stacked = [factors.user_factors(), factors.item_factors()].concat();
        let cb = crate::grouping::kmeans(&stacked, factors.r, 3, 2, 30).unwrap();
        let (p, q) = crate::grouping::factor_profiles(&factors, &cb).unwrap();
        let enc_u = crate::encoder::pretrain_dae(&cu, 6, 0.0, 5, 0.05, 1).unwrap();
        let enc_i = crate::encoder::pretrain_dae(&ci, 6, 0.0, 5, 0.05, 2).unwrap();

        let mut content_cfg = CgahConfig::content(6, 3);
        content_cfg.lambda1 = 0.0;
        content_cfg.lambda2 = 0.0;
        content_cfg.max_outer_iters = 5;
        let content_state =
            train_cgah(&train, &cu, &ci, &factors, &p, &q, &enc_u, &enc_i, &content_cfg).unwrap();

        let mut cf_cfg = CgahConfig::cf(6, 3);
        cf_cfg.max_outer_iters = 5;
        let cf_state = train_cgah_cf(&train, &factors, &p, &q, &cf_cfg).unwrap();

        assert_eq!(content_state.b, cf_state.b);
        assert_eq!(content_state.d, cf_state.d);
    }

    #[test]
    fn train_content_embeddings_equal_codes_zero_content_term() {
        // Force xi = b exactly: content term must vanish.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let weights = ResolvedWeights { alpha: 0.0, beta: 0.0, lambda1: 0.5, lambda2: 0.5 };
        let (mut state, train) = random_state(&mut rng, 3, 3, 4, 2, weights);
        let r = 4;
        let exact_b: Vec<f64> = (0..3)
            .flat_map(|e| {
                let row: Vec<f64> = (0..r).map(|k| state.b.get_bit(e, k) as f64).collect();
                row
            })
            .collect();
        let exact_d: Vec<f64> = (0..3)
            .flat_map(|e| {
                let row: Vec<f64> = (0..r).map(|k| state.d.get_bit(e, k) as f64).collect();
                row
            })
            .collect();
        state.xi = Some(exact_b);
        state.zeta = Some(exact_d);
        let parts = objective(&state, &train);
        assert_eq!(parts.content, 0.0);
    }
}
