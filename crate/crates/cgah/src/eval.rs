//! Ranking evaluation (NDCG@k over held-out ratings), the sparsity-sweep
//! experiment driver, and wall-clock retrieval benchmarking of binary versus
//! continuous scoring.

use std::collections::HashSet;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::{code_dot, BinaryCodeSet};
use crate::data::{ContentMatrix, RatingMatrix, SplitSpec};
use crate::encoder::{encode_all, pretrain_dae};
use crate::error::{Error, Result};
use crate::grouping::{
    affinity_matrix, compute_group_profile, factor_profiles, group_affinity, kmeans, GroupProfile,
};
use crate::mf::{dot, train_mf, train_mf_ga, FactorMatrix, MfConfig};
use crate::optimizer::{train_cgah, train_cgah_cf, CgahConfig, CgahMode};
use crate::par;

/// Anything that can score a (user, item) pair for ranking.
pub trait Scorer: Sync {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    fn score(&self, user: usize, item: usize) -> f64;
}

/// Plain inner-product scoring over MF factors.
pub struct MfScorer<'a> {
    pub factors: &'a FactorMatrix,
}

impl Scorer for MfScorer<'_> {
    fn n_users(&self) -> usize {
        self.factors.n_users()
    }
    fn n_items(&self) -> usize {
        self.factors.n_items()
    }
    fn score(&self, user: usize, item: usize) -> f64 {
        dot(self.factors.user_row(user), self.factors.item_row(item))
    }
}

/// Affinity-scaled inner product, the MF ablation with group affinities.
pub struct MfGaScorer<'a> {
    pub factors: &'a FactorMatrix,
    pub p: &'a GroupProfile,
    pub q: &'a GroupProfile,
}

impl Scorer for MfGaScorer<'_> {
    fn n_users(&self) -> usize {
        self.factors.n_users()
    }
    fn n_items(&self) -> usize {
        self.factors.n_items()
    }
    fn score(&self, user: usize, item: usize) -> f64 {
        let s = group_affinity(self.p.row(user), self.q.row(item)).unwrap();
        s * dot(self.factors.user_row(user), self.factors.item_row(item))
    }
}

/// Hashed preference scoring: affinity times code similarity.
pub struct CgahScorer<'a> {
    pub b: &'a BinaryCodeSet,
    pub d: &'a BinaryCodeSet,
    pub p: &'a GroupProfile,
    pub q: &'a GroupProfile,
}

impl Scorer for CgahScorer<'_> {
    fn n_users(&self) -> usize {
        self.b.count()
    }
    fn n_items(&self) -> usize {
        self.d.count()
    }
    fn score(&self, user: usize, item: usize) -> f64 {
        let s = group_affinity(self.p.row(user), self.q.row(item)).unwrap();
        let dot = code_dot(self.b.view(user), self.d.view(item)).unwrap() as f64;
        s * (0.5 + dot / (2.0 * self.b.code_len() as f64))
    }
}

/// DCG over a binary relevance list: `sum (2^rel - 1) / log2(pos + 1)`.
pub fn dcg_at_k(relevance: &[u8], k: usize) -> Result<f64> {
    if relevance.len() < k {
        return Err(Error::DimensionMismatch(format!(
            "relevance list of {} is shorter than k = {k}",
            relevance.len()
        )));
    }
    let mut acc = 0.0;
    for (pos, &rel) in relevance.iter().take(k).enumerate() {
        if rel > 1 {
            return Err(Error::InvalidValue(format!("relevance {rel} outside {{0, 1}}")));
        }
        if rel == 1 {
            acc += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    Ok(acc)
}

/// NDCG of a recommendation list against a relevant set.
///
/// The ideal DCG places `min(k, |relevant|)` ones first; an empty relevant
/// set scores 0 by convention.
pub fn ndcg_at_k(recommended: &[u32], relevant: &HashSet<u32>, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (pos, item) in recommended.iter().take(k).enumerate() {
        if relevant.contains(item) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal_hits = k.min(relevant.len());
    let idcg: f64 = (0..ideal_hits).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
    dcg / idcg
}

/// Metadata attached to an evaluation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMeta {
    pub model: String,
    pub fraction: Option<f64>,
    pub seed: u64,
}

/// Per-k NDCG results, possibly aggregated over repeated splits.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    /// One inner vector of per-k NDCG means per repeat.
    pub repeats: Vec<Vec<f64>>,
    pub meta: RunMeta,
    pub evaluated_users: usize,
    pub skipped_users: usize,
}

impl EvalReport {
    pub fn mean(&self, k_index: usize) -> f64 {
        let n = self.repeats.len() as f64;
        self.repeats.iter().map(|rep| rep[k_index]).sum::<f64>() / n
    }

    pub fn std(&self, k_index: usize) -> f64 {
        let n = self.repeats.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let mean = self.mean(k_index);
        (self.repeats.iter().map(|rep| (rep[k_index] - mean).powi(2)).sum::<f64>() / (n - 1.0))
            .sqrt()
    }

    fn merge(&mut self, other: EvalReport) {
        debug_assert_eq!(self.ks, other.ks);
        self.repeats.extend(other.repeats);
        self.evaluated_users = other.evaluated_users;
        self.skipped_users = other.skipped_users;
    }
}

/// Macro-averaged NDCG@k over all test users.
///
/// Each user is scored on every item except their training items, ranked
/// descending with index tie-breaks, and compared against their test items.
/// Users with no test ratings are ignored; users outside the model are
/// counted as skipped.
pub fn evaluate_model(
    scorer: &dyn Scorer,
    test: &RatingMatrix,
    train: &RatingMatrix,
    ks: &[usize],
) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig("k list must be non-empty and positive".into()));
    }
    let n_items = scorer.n_items();
    enum UserOutcome {
        NoTest,
        Skipped,
        Ndcg(Vec<f64>),
    }
    let outcomes: Vec<UserOutcome> = par::map_collect(test.n_users(), |u| {
        let relevant: HashSet<u32> = test.user_ratings(u).iter().map(|e| e.0).collect();
        if relevant.is_empty() {
            return UserOutcome::NoTest;
        }
        if u >= scorer.n_users() {
            return UserOutcome::Skipped;
        }
        let excluded: HashSet<u32> =
            if u < train.n_users() { train.user_ratings(u).iter().map(|e| e.0).collect() } else { HashSet::new() };
        let mut scored: Vec<(u32, f64)> = (0..n_items as u32)
            .filter(|j| !excluded.contains(j))
            .map(|j| (j, scorer.score(u, j as usize)))
            .collect();
        scored.sort_unstable_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let ranked: Vec<u32> = scored.iter().map(|e| e.0).collect();
        UserOutcome::Ndcg(ks.iter().map(|&k| ndcg_at_k(&ranked, &relevant, k)).collect())
    });

    let mut sums = vec![0.0; ks.len()];
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for outcome in outcomes {
        match outcome {
            UserOutcome::NoTest => {}
            UserOutcome::Skipped => skipped += 1,
            UserOutcome::Ndcg(vals) => {
                evaluated += 1;
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} test users absent from the model were skipped");
    }
    if evaluated == 0 {
        return Err(Error::EmptyDataset);
    }
    let per_k: Vec<f64> = sums.into_iter().map(|s| s / evaluated as f64).collect();
    Ok(EvalReport {
        ks: ks.to_vec(),
        repeats: vec![per_k],
        meta: RunMeta::default(),
        evaluated_users: evaluated,
        skipped_users: skipped,
    })
}

/// Models the sweep driver can train and evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepModel {
    Mf,
    MfGa,
    CgahCf,
    Cgah,
}

impl SweepModel {
    pub fn name(&self) -> &'static str {
        match self {
            SweepModel::Mf => "mf",
            SweepModel::MfGa => "mf-ga",
            SweepModel::CgahCf => "cgah-cf",
            SweepModel::Cgah => "cgah",
        }
    }

    pub fn parse_name(name: &str) -> Result<Self> {
        match name {
            "mf" => Ok(SweepModel::Mf),
            "mf-ga" => Ok(SweepModel::MfGa),
            "cgah-cf" => Ok(SweepModel::CgahCf),
            "cgah" => Ok(SweepModel::Cgah),
            other => Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
        }
    }
}

/// Settings for the content encoders inside the sweep.
#[derive(Debug, Clone, Copy)]
pub struct EncoderSettings {
    pub corruption: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self { corruption: 0.2, epochs: 50, lr: 0.05 }
    }
}

/// Full-factorial sweep configuration.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    pub models: Vec<SweepModel>,
    pub repeats: usize,
    pub base_seed: u64,
    pub ks: Vec<usize>,
    pub mf: MfConfig,
    pub cgah: CgahConfig,
    pub kmeans_iters: usize,
    pub encoder: EncoderSettings,
}

/// Ratings plus optional per-entity content for the sweep.
pub struct SweepDataset<'a> {
    pub ratings: &'a RatingMatrix,
    pub content_users: Option<&'a ContentMatrix>,
    pub content_items: Option<&'a ContentMatrix>,
}

/// Grouping artifacts shared by the affinity-aware models.
pub struct GroupedFactors {
    pub factors: FactorMatrix,
    pub p: GroupProfile,
    pub q: GroupProfile,
}

/// Train MF and cluster the stacked user/item factor rows into a codebook.
pub fn fit_grouped_factors(
    train: &RatingMatrix,
    mf_cfg: &MfConfig,
    kappa: usize,
    kmeans_iters: usize,
    kmeans_seed: u64,
) -> Result<GroupedFactors> {
    let factors = train_mf(train, mf_cfg)?.factors;
    let stacked = [factors.user_factors(), factors.item_factors()].concat();
    let cb = kmeans(&stacked, factors.r, kappa, kmeans_seed, kmeans_iters)?;
    let (p, q) = factor_profiles(&factors, &cb)?;
    Ok(GroupedFactors { factors, p, q })
}

/// One NDCG evaluation of one model on one split. The caller provides
/// per-repeat seeds through the configs.
fn run_model_once(
    model: SweepModel,
    data: &SweepDataset<'_>,
    train: &RatingMatrix,
    test: &RatingMatrix,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut mf_cfg = cfg.mf;
    mf_cfg.seed = seed;
    let report = match model {
        SweepModel::Mf => {
            let out = train_mf(train, &mf_cfg)?;
            evaluate_model(&MfScorer { factors: &out.factors }, test, train, &cfg.ks)?
        }
        SweepModel::MfGa => {
            let grouped = fit_grouped_factors(train, &mf_cfg, cfg.cgah.kappa, cfg.kmeans_iters, seed)?;
            let s = affinity_matrix(&grouped.p, &grouped.q, train)?;
            let mut ga_cfg = mf_cfg;
            ga_cfg.seed = seed.wrapping_add(1);
            let p = &grouped.p;
            let q = &grouped.q;
            let _ = &s;
            let ga = train_mf_ga(
                train,
                |u, j| group_affinity(p.row(u), q.row(j)).unwrap(),
                &ga_cfg,
            )?;
            evaluate_model(
                &MfGaScorer { factors: &ga.factors, p: &grouped.p, q: &grouped.q },
                test,
                train,
                &cfg.ks,
            )?
        }
        SweepModel::CgahCf => {
            let grouped = fit_grouped_factors(train, &mf_cfg, cfg.cgah.kappa, cfg.kmeans_iters, seed)?;
            let mut cgah_cfg = cfg.cgah.clone();
            cgah_cfg.seed = seed;
            cgah_cfg.mode = CgahMode::Cf;
            cgah_cfg.lambda1 = 0.0;
            cgah_cfg.lambda2 = 0.0;
            let state = train_cgah_cf(train, &grouped.factors, &grouped.p, &grouped.q, &cgah_cfg)?;
            evaluate_model(
                &CgahScorer { b: &state.b, d: &state.d, p: &grouped.p, q: &grouped.q },
                test,
                train,
                &cfg.ks,
            )?
        }
        SweepModel::Cgah => {
            let cu = data.content_users.ok_or_else(|| {
                Error::InvalidConfig("cgah content model needs user content".into())
            })?;
            let ci = data.content_items.ok_or_else(|| {
                Error::InvalidConfig("cgah content model needs item content".into())
            })?;
            let fitted = fit_content_model(train, cu, ci, &mf_cfg, cfg, seed)?;
            evaluate_model(
                &CgahScorer { b: &fitted.b, d: &fitted.d, p: &fitted.p, q: &fitted.q },
                test,
                train,
                &cfg.ks,
            )?
        }
    };
    Ok(report.repeats.into_iter().next().unwrap())
}

/// Content-mode artifacts needed for scoring.
pub struct FittedCgah {
    pub b: BinaryCodeSet,
    pub d: BinaryCodeSet,
    pub p: GroupProfile,
    pub q: GroupProfile,
}

/// Pretrain encoders, group on the concatenated `[factors; embeddings]`
/// vectors, and train content-mode codes.
pub fn fit_content_model(
    train: &RatingMatrix,
    content_users: &ContentMatrix,
    content_items: &ContentMatrix,
    mf_cfg: &MfConfig,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<FittedCgah> {
    let factors = train_mf(train, mf_cfg)?.factors;
    let r = factors.r;
    let enc_u = pretrain_dae(
        content_users,
        r,
        cfg.encoder.corruption,
        cfg.encoder.epochs,
        cfg.encoder.lr,
        seed.wrapping_add(101),
    )?;
    let enc_i = pretrain_dae(
        content_items,
        r,
        cfg.encoder.corruption,
        cfg.encoder.epochs,
        cfg.encoder.lr,
        seed.wrapping_add(102),
    )?;
    let xi = encode_all(&enc_u, content_users)?;
    let zeta = encode_all(&enc_i, content_items)?;

    let concat_dim = 2 * r;
    let mut stacked = Vec::with_capacity((train.n_users() + train.n_items()) * concat_dim);
    let mut user_rows = Vec::with_capacity(train.n_users() * concat_dim);
    for u in 0..train.n_users() {
        user_rows.extend_from_slice(factors.user_row(u));
        user_rows.extend_from_slice(&xi[u * r..(u + 1) * r]);
    }
    let mut item_rows = Vec::with_capacity(train.n_items() * concat_dim);
    for j in 0..train.n_items() {
        item_rows.extend_from_slice(factors.item_row(j));
        item_rows.extend_from_slice(&zeta[j * r..(j + 1) * r]);
    }
    stacked.extend_from_slice(&user_rows);
    stacked.extend_from_slice(&item_rows);
    let cb = kmeans(&stacked, concat_dim, cfg.cgah.kappa, seed, cfg.kmeans_iters)?;
    let p = compute_group_profile(&user_rows, concat_dim, &cb)?;
    let q = compute_group_profile(&item_rows, concat_dim, &cb)?;

    let mut cgah_cfg = cfg.cgah.clone();
    cgah_cfg.seed = seed;
    cgah_cfg.mode = CgahMode::Content;
    let state =
        train_cgah(train, content_users, content_items, &factors, &p, &q, &enc_u, &enc_i, &cgah_cfg)?;
    Ok(FittedCgah { b: state.b, d: state.d, p, q })
}

/// Full factorial over fractions, models, and repeats. Returns one report
/// per (fraction, model) holding all repeat rows, in deterministic order.
pub fn sparsity_sweep(data: &SweepDataset<'_>, cfg: &SweepConfig) -> Result<Vec<EvalReport>> {
    if cfg.repeats < 1 {
        return Err(Error::InvalidConfig("repeats must be at least 1".into()));
    }
    let mut out = Vec::new();
    for &fraction in &cfg.fractions {
        for &model in &cfg.models {
            let mut aggregate: Option<EvalReport> = None;
            for repeat in 0..cfg.repeats {
                let seed = cfg.base_seed.wrapping_add(repeat as u64);
                let spec = SplitSpec { train_fraction: fraction, seed, repeats: cfg.repeats };
                let (train, test) = crate::data::split_ratings(data.ratings, &spec)?;
                let per_k = run_model_once(model, data, &train, &test, cfg, seed)?;
                let mut report = EvalReport {
                    ks: cfg.ks.clone(),
                    repeats: vec![per_k],
                    meta: RunMeta {
                        model: model.name().to_string(),
                        fraction: Some(fraction),
                        seed: cfg.base_seed,
                    },
                    evaluated_users: 0,
                    skipped_users: 0,
                };
                match aggregate.as_mut() {
                    Some(agg) => agg.merge(report),
                    None => {
                        report.meta.model = model.name().to_string();
                        aggregate = Some(report);
                    }
                }
            }
            out.push(aggregate.unwrap());
        }
    }
    Ok(out)
}

/// Render sweep reports as the canonical csv: `model,fraction,repeat,k,ndcg`.
pub fn sweep_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("model,fraction,repeat,k,ndcg\n");
    for report in reports {
        let fraction = report
            .meta
            .fraction
            .map_or_else(|| "-".to_string(), |f| format!("{f}"));
        for (rep_idx, rep) in report.repeats.iter().enumerate() {
            for (ki, &k) in report.ks.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    report.meta.model, fraction, rep_idx, k, rep[ki]
                ));
            }
        }
    }
    out
}

/// Scoring strategies compared by the retrieval benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanMode {
    BinaryPopcount,
    AffinityWeightedBinary,
    FloatDot,
}

impl ScanMode {
    pub fn name(&self) -> &'static str {
        match self {
            ScanMode::BinaryPopcount => "binary-popcount",
            ScanMode::AffinityWeightedBinary => "affinity-weighted-binary",
            ScanMode::FloatDot => "float-dot",
        }
    }
}

/// Wall-time statistics for one scoring mode.
#[derive(Debug, Clone)]
pub struct ModeTiming {
    pub mode: ScanMode,
    pub mean_ns: f64,
    pub median_ns: f64,
    pub p99_ns: f64,
    /// Storage for one item under this representation.
    pub bytes_per_item: usize,
}

/// Per-query top-k timing comparison over identical random data.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub item_count: usize,
    pub r: usize,
    pub k: usize,
    pub n_queries: usize,
    pub timings: Vec<ModeTiming>,
}

impl BenchReport {
    /// `float-dot median / mode median`; > 1 means the mode is faster.
    pub fn speedup_vs_float(&self, mode: ScanMode) -> Option<f64> {
        let float = self.timings.iter().find(|t| t.mode == ScanMode::FloatDot)?;
        let target = self.timings.iter().find(|t| t.mode == mode)?;
        Some(float.median_ns / target.median_ns)
    }
}

/// Keep the k best `(score, index)` pairs; identical selection logic across
/// modes so timing differences isolate the scoring cost.
struct TopK {
    k: usize,
    entries: Vec<(f64, u32)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, entries: Vec::with_capacity(k + 1) }
    }

    #[inline]
    fn push(&mut self, score: f64, idx: u32) {
        if self.entries.len() < self.k {
            self.entries.push((score, idx));
            if self.entries.len() == self.k {
                self.entries
                    .sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            }
            return;
        }
        let worst = self.entries[self.k - 1];
        if score > worst.0 || (score == worst.0 && idx < worst.1) {
            self.entries[self.k - 1] = (score, idx);
            let mut i = self.k - 1;
            while i > 0 {
                let better = self.entries[i].0 > self.entries[i - 1].0
                    || (self.entries[i].0 == self.entries[i - 1].0
                        && self.entries[i].1 < self.entries[i - 1].1);
                if better {
                    self.entries.swap(i, i - 1);
                    i -= 1;
                } else {
                    break;
                }
            }
        }
    }

    fn finish(mut self) -> Vec<(f64, u32)> {
        if self.entries.len() < self.k {
            self.entries
                .sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        }
        self.entries
    }
}

/// Fixtures shared by every benchmark mode.
pub struct BenchFixture {
    pub item_codes: BinaryCodeSet,
    pub query_codes: BinaryCodeSet,
    pub item_vecs: Vec<f64>,
    pub query_vecs: Vec<f64>,
    pub item_profiles: GroupProfile,
    pub query_profiles: GroupProfile,
    pub r: usize,
}

impl BenchFixture {
    pub fn generate(item_count: usize, r: usize, n_queries: usize, seed: u64) -> Self {
        let kappa = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codes = |count: usize| {
            let rows: Vec<Vec<i8>> = (0..count)
                .map(|_| (0..r).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
                .collect();
            BinaryCodeSet::pack(&rows).unwrap()
        };
        let item_codes = codes(item_count);
        let query_codes = codes(n_queries);
        let item_vecs: Vec<f64> = (0..item_count * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let query_vecs: Vec<f64> = (0..n_queries * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let item_profiles = GroupProfile::from_rows(
            item_count,
            kappa,
            (0..item_count * kappa).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let query_profiles = GroupProfile::from_rows(
            n_queries,
            kappa,
            (0..n_queries * kappa).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        Self { item_codes, query_codes, item_vecs, query_vecs, item_profiles, query_profiles, r }
    }

    /// One full scan in the given mode; returns the top-k list.
    ///
    /// The hot loops walk flat buffers with `chunks_exact` so scoring cost,
    /// not slice checks, dominates the comparison.
    pub fn scan(&self, mode: ScanMode, query: usize, k: usize) -> Vec<(f64, u32)> {
        let mut top = TopK::new(k);
        match mode {
            ScanMode::BinaryPopcount => {
                let wpc = self.item_codes.words_per_code();
                let qwords = self.query_codes.view(query).words;
                let r = self.r as i64;
                let denom = 2.0 * self.r as f64;
                for (j, iwords) in self.item_codes.words().chunks_exact(wpc).enumerate() {
                    let mut ham = 0u32;
                    for (a, b) in qwords.iter().zip(iwords) {
                        ham += (a ^ b).count_ones();
                    }
                    let dot = r - 2 * ham as i64;
                    top.push(0.5 + dot as f64 / denom, j as u32);
                }
            }
            ScanMode::AffinityWeightedBinary => {
                let wpc = self.item_codes.words_per_code();
                let qwords = self.query_codes.view(query).words;
                let qp = self.query_profiles.row(query);
                let kappa = self.query_profiles.kappa();
                let r = self.r as i64;
                let denom = 2.0 * self.r as f64;
                let profiles = self.item_profiles.rows();
                for (j, iwords) in self.item_codes.words().chunks_exact(wpc).enumerate() {
                    let mut ham = 0u32;
                    for (a, b) in qwords.iter().zip(iwords) {
                        ham += (a ^ b).count_ones();
                    }
                    let ip = &profiles[j * kappa..(j + 1) * kappa];
                    let mut min_delta = f64::INFINITY;
                    for (a, b) in qp.iter().zip(ip) {
                        min_delta = min_delta.min((a - b).abs());
                    }
                    let s = crate::grouping::sigmoid(1.0 - min_delta);
                    let dot = r - 2 * ham as i64;
                    top.push(s * (0.5 + dot as f64 / denom), j as u32);
                }
            }
            ScanMode::FloatDot => {
                let qrow = &self.query_vecs[query * self.r..(query + 1) * self.r];
                for (j, irow) in self.item_vecs.chunks_exact(self.r).enumerate() {
                    top.push(dot(qrow, irow), j as u32);
                }
            }
        }
        top.finish()
    }
}

/// Time single-threaded top-k scans per mode over identical data.
///
/// Ten warmup queries per mode precede the measurements. Modes are
/// interleaved query by query so clock-speed drift hits every mode equally;
/// per-query wall times come from a monotonic clock and medians drive the
/// reported speedups.
pub fn bench_retrieval(
    item_count: usize,
    r: usize,
    n_queries: usize,
    k: usize,
    modes: &[ScanMode],
    seed: u64,
) -> Result<BenchReport> {
    if item_count < 1000 {
        return Err(Error::InvalidConfig(
            "benchmark needs at least 1000 items for stable timing".into(),
        ));
    }
    if n_queries == 0 || k == 0 {
        return Err(Error::InvalidConfig("queries and k must be positive".into()));
    }
    let fx = BenchFixture::generate(item_count, r, n_queries, seed);
    for &mode in modes {
        for warm in 0..10.min(n_queries) {
            std::hint::black_box(fx.scan(mode, warm, k));
        }
    }
    let mut times_ns: Vec<Vec<f64>> = vec![Vec::with_capacity(n_queries); modes.len()];
    for q in 0..n_queries {
        for (mi, &mode) in modes.iter().enumerate() {
            let start = Instant::now();
            std::hint::black_box(fx.scan(mode, q, k));
            times_ns[mi].push(start.elapsed().as_nanos() as f64);
        }
    }
    let mut timings = Vec::new();
    for (mi, &mode) in modes.iter().enumerate() {
        let times = &mut times_ns[mi];
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let median = times[times.len() / 2];
        let p99 = times[((times.len() as f64 * 0.99) as usize).min(times.len() - 1)];
        let bytes_per_item = match mode {
            ScanMode::FloatDot => r * 8,
            _ => r.div_ceil(64) * 8,
        };
        timings.push(ModeTiming { mode, mean_ns: mean, median_ns: median, p99_ns: p99, bytes_per_item });
    }
    Ok(BenchReport { item_count, r, k, n_queries, timings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dcg_hand_cases() {
        let log2_3 = 3.0f64.log2();
        assert_relative_eq!(dcg_at_k(&[1, 1], 2).unwrap(), 1.0 + 1.0 / log2_3, epsilon = 1e-12);
        assert_eq!(dcg_at_k(&[0, 0, 0], 3).unwrap(), 0.0);
        assert_relative_eq!(dcg_at_k(&[0, 1], 2).unwrap(), 1.0 / log2_3, epsilon = 1e-12);
    }

    #[test]
    fn dcg_rejects_bad_inputs() {
        assert!(dcg_at_k(&[1], 2).is_err());
        assert!(dcg_at_k(&[2, 0], 2).is_err());
    }

    #[test]
    fn dcg_monotone_in_k() {
        let rel = [1u8, 0, 1, 1, 0, 1];
        let mut prev = 0.0;
        for k in 1..=rel.len() {
            let v = dcg_at_k(&rel, k).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn ndcg_perfect_and_disjoint() {
        let relevant: HashSet<u32> = [1, 2].into_iter().collect();
        assert_relative_eq!(ndcg_at_k(&[1, 2, 3], &relevant, 2), 1.0, epsilon = 1e-12);
        assert_eq!(ndcg_at_k(&[5, 6, 7], &relevant, 3), 0.0);
        assert_eq!(ndcg_at_k(&[1], &HashSet::new(), 1), 0.0);
    }

    #[test]
    fn ndcg_single_relevant_at_rank_two() {
        let relevant: HashSet<u32> = [9].into_iter().collect();
        let got = ndcg_at_k(&[4, 9], &relevant, 2);
        assert_relative_eq!(got, (1.0 / 3.0f64.log2()) / 1.0, epsilon = 1e-12);
        assert_relative_eq!(got, 0.6309297535714574, epsilon = 1e-9);
    }

    #[test]
    fn ndcg_ignores_order_below_relevant() {
        let relevant: HashSet<u32> = [3].into_iter().collect();
        let a = ndcg_at_k(&[3, 7, 8, 9], &relevant, 4);
        let b = ndcg_at_k(&[3, 9, 8, 7], &relevant, 4);
        assert_eq!(a, b);
    }

    struct FixedScorer {
        n_users: usize,
        n_items: usize,
        table: Vec<Vec<f64>>,
    }

    impl Scorer for FixedScorer {
        fn n_users(&self) -> usize {
            self.n_users
        }
        fn n_items(&self) -> usize {
            self.n_items
        }
        fn score(&self, user: usize, item: usize) -> f64 {
            self.table[user][item]
        }
    }

    fn toy_split() -> (RatingMatrix, RatingMatrix) {
        let train = RatingMatrix::from_entries(2, 4, &[(0, 0, 5.0), (1, 1, 4.0)]).unwrap();
        let test = RatingMatrix::from_entries(2, 4, &[(0, 2, 5.0), (1, 3, 4.0)]).unwrap();
        (train, test)
    }

    #[test]
    fn evaluate_oracle_scores_one() {
        let (train, test) = toy_split();
        // oracle ranks each user's test item first among non-train items
        let scorer = FixedScorer {
            n_users: 2,
            n_items: 4,
            table: vec![vec![0.0, 0.1, 1.0, 0.2], vec![0.1, 0.0, 0.2, 1.0]],
        };
        let report = evaluate_model(&scorer, &test, &train, &[1, 2]).unwrap();
        assert_eq!(report.repeats[0], vec![1.0, 1.0]);
        assert_eq!(report.evaluated_users, 2);
    }

    #[test]
    fn evaluate_reversed_oracle_scores_lower() {
        let (train, test) = toy_split();
        let oracle = FixedScorer {
            n_users: 2,
            n_items: 4,
            table: vec![vec![0.0, 0.1, 1.0, 0.2], vec![0.1, 0.0, 0.2, 1.0]],
        };
        let reversed = FixedScorer {
            n_users: 2,
            n_items: 4,
            table: vec![vec![1.0, 0.9, 0.0, 0.8], vec![0.9, 1.0, 0.8, 0.0]],
        };
        let a = evaluate_model(&oracle, &test, &train, &[2]).unwrap();
        let b = evaluate_model(&reversed, &test, &train, &[2]).unwrap();
        assert!(b.repeats[0][0] < a.repeats[0][0]);
    }

    #[test]
    fn evaluate_matches_per_user_hand_average() {
        // 5 users; hand-computed NDCG@2 values averaged.
        let test = RatingMatrix::from_entries(
            5,
            3,
            &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0), (3, 0, 1.0), (4, 1, 1.0)],
        )
        .unwrap();
        let train = RatingMatrix::from_entries(5, 3, &[]).unwrap();
        // scores rank item order [0,1,2] for every user
        let scorer = FixedScorer {
            n_users: 5,
            n_items: 3,
            table: vec![vec![3.0, 2.0, 1.0]; 5],
        };
        let report = evaluate_model(&scorer, &test, &train, &[2]).unwrap();
        let hit_first = 1.0;
        let hit_second = 1.0 / 3.0f64.log2();
        let miss = 0.0;
        let expected = (hit_first + hit_second + miss + hit_first + hit_second) / 5.0;
        assert_relative_eq!(report.repeats[0][0], expected, epsilon = 1e-12);
    }

    #[test]
    fn evaluate_skips_users_outside_model() {
        let test = RatingMatrix::from_entries(3, 2, &[(0, 0, 1.0), (2, 1, 1.0)]).unwrap();
        let train = RatingMatrix::from_entries(3, 2, &[]).unwrap();
        let scorer =
            FixedScorer { n_users: 1, n_items: 2, table: vec![vec![1.0, 0.0]] };
        let report = evaluate_model(&scorer, &test, &train, &[1]).unwrap();
        assert_eq!(report.evaluated_users, 1);
        assert_eq!(report.skipped_users, 1);
    }

    #[test]
    fn report_mean_and_std_recompute() {
        let report = EvalReport {
            ks: vec![10],
            repeats: vec![vec![0.5], vec![0.7], vec![0.6]],
            meta: RunMeta::default(),
            evaluated_users: 1,
            skipped_users: 0,
        };
        assert_relative_eq!(report.mean(0), 0.6, epsilon = 1e-12);
        assert_relative_eq!(report.std(0), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn sweep_csv_shape() {
        let reports = vec![EvalReport {
            ks: vec![10, 20],
            repeats: vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            meta: RunMeta { model: "mf".into(), fraction: Some(0.5), seed: 0 },
            evaluated_users: 1,
            skipped_users: 0,
        }];
        let csv = sweep_csv(&reports);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,fraction,repeat,k,ndcg");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "mf,0.5,0,10,0.1");
        assert_eq!(lines[4], "mf,0.5,1,20,0.4");
    }

    #[test]
    fn sweep_single_cell_and_repeat_zero_determinism() {
        let data = crate::synth::planted_groups(&crate::synth::SynthConfig {
            n_users: 25,
            n_items: 20,
            density: 0.3,
            ..Default::default()
        })
        .unwrap();
        let mut cfg = SweepConfig {
            fractions: vec![0.9],
            models: vec![SweepModel::Mf],
            repeats: 1,
            base_seed: 4,
            ks: vec![5],
            mf: MfConfig { dim: 4, reg: 0.1, iters: 10, seed: 4, init_scale: None },
            cgah: CgahConfig::cf(4, 2),
            kmeans_iters: 20,
            encoder: EncoderSettings::default(),
        };
        let dataset =
            SweepDataset { ratings: &data.ratings, content_users: None, content_items: None };
        let one = sparsity_sweep(&dataset, &cfg).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].repeats.len(), 1);

        cfg.repeats = 2;
        let two = sparsity_sweep(&dataset, &cfg).unwrap();
        assert_eq!(two[0].repeats.len(), 2);
        // repeat 0 reuses the same seed, so its raw values match exactly
        assert_eq!(one[0].repeats[0], two[0].repeats[0]);
    }

    #[test]
    fn bench_rejects_small_item_count() {
        assert!(bench_retrieval(10, 16, 5, 10, &[ScanMode::BinaryPopcount], 0).is_err());
    }

    #[test]
    fn bench_popcount_ranking_matches_arithmetic_ranking() {
        let fx = BenchFixture::generate(1200, 32, 4, 9);
        for q in 0..4 {
            let via_bits = fx.scan(ScanMode::BinaryPopcount, q, 10);
            // arithmetic route over unpacked ±1 vectors
            let mut arith: Vec<(f64, u32)> = (0..fx.item_codes.count())
                .map(|j| {
                    let dot: i64 = fx
                        .query_codes
                        .unpack(q)
                        .iter()
                        .zip(fx.item_codes.unpack(j))
                        .map(|(&a, b)| a as i64 * b as i64)
                        .sum();
                    (0.5 + dot as f64 / 64.0, j as u32)
                })
                .collect();
            arith.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            arith.truncate(10);
            assert_eq!(via_bits, arith);
        }
    }

    #[test]
    fn topk_selector_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let scores: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut top = TopK::new(10);
        for (i, &s) in scores.iter().enumerate() {
            top.push(s, i as u32);
        }
        let got = top.finish();
        let mut full: Vec<(f64, u32)> =
            scores.iter().enumerate().map(|(i, &s)| (s, i as u32)).collect();
        full.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        full.truncate(10);
        assert_eq!(got, full);
    }
}
