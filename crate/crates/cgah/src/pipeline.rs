//! End-to-end pipeline: stage orchestration with content-hash skipping, a
//! resolved-config snapshot, and deterministic artifacts.
//!
//! Stage outputs live in one directory: `ratings.tsv`, `users.map`,
//! `items.map`, `train.tsv`, `test.tsv`, `mf.model`, `groups.model`,
//! `encoders.model`, `model.cgah`, `trace.csv`, `report.csv`, plus
//! `config.resolved.toml` and `stage_state.tsv` for resumability.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{
    filter_min_degree, ingest_content_keyed, ingest_ratings, split_ratings, ContentMatrix, IdMap,
    RatingFormat, RatingMatrix, SplitSpec,
};
use crate::encoder::pretrain_dae;
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, CgahScorer, EncoderSettings};
use crate::grouping::{compute_group_profile, kmeans};
use crate::mf::{train_mf, MfConfig};
use crate::model::{
    read_mf_model, write_mf_model, CgahModel, EncodersModel, GroupsModel,
};
use crate::optimizer::{train_cgah, train_cgah_cf, CgahConfig, CgahMode};

/// Pipeline stages in canonical dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Split,
    TrainMf,
    PretrainDae,
    Group,
    TrainCgah,
    Eval,
}

pub const STAGE_ORDER: [Stage; 7] = [
    Stage::Ingest,
    Stage::Split,
    Stage::TrainMf,
    Stage::PretrainDae,
    Stage::Group,
    Stage::TrainCgah,
    Stage::Eval,
];

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::TrainMf => "train-mf",
            Stage::PretrainDae => "pretrain-dae",
            Stage::Group => "group",
            Stage::TrainCgah => "train-cgah",
            Stage::Eval => "eval",
        }
    }

    pub fn parse_name(name: &str) -> Result<Self> {
        STAGE_ORDER
            .iter()
            .find(|s| s.name() == name)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{name}`")))
    }
}

/// Resolved configuration for a full run; the CLI fills this from its config
/// file plus flag overrides.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub stages: Vec<Stage>,
    /// Seed for split, clustering, and encoder pretraining; per-model seeds
    /// live in the stage configs.
    pub seed: u64,
    /// Worker count the caller configured (0 = library default); recorded in
    /// the snapshot for reproducibility.
    pub threads: usize,
    pub input: Option<PathBuf>,
    pub format: RatingFormat,
    pub min_degree: usize,
    pub content_users: Option<PathBuf>,
    pub content_items: Option<PathBuf>,
    pub vocab_size: usize,
    pub fraction: f64,
    pub mf: MfConfig,
    pub kappa: usize,
    pub kmeans_iters: usize,
    pub encoder: EncoderSettings,
    pub cgah: CgahConfig,
    pub ks: Vec<usize>,
}

impl PipelineConfig {
    pub fn new(out_dir: PathBuf) -> Self {
        Self {
            out_dir,
            stages: STAGE_ORDER.to_vec(),
            seed: 42,
            threads: 0,
            input: None,
            format: RatingFormat::Tsv,
            min_degree: 10,
            content_users: None,
            content_items: None,
            vocab_size: 500,
            fraction: 0.5,
            mf: MfConfig::default(),
            kappa: 10,
            kmeans_iters: 50,
            encoder: EncoderSettings::default(),
            cgah: CgahConfig::cf(20, 10),
            ks: vec![10, 20, 30, 40, 50],
        }
    }

    fn wants(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("no stages requested".into()));
        }
        if !(self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::InvalidConfig("split fraction must be in (0, 1)".into()));
        }
        if self.kappa < 2 {
            return Err(Error::InvalidConfig("kappa must be at least 2".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidConfig("k list must be non-empty and positive".into()));
        }
        if self.mf.dim != self.cgah.r {
            return Err(Error::InvalidConfig(format!(
                "factor dim {} must equal code length {}",
                self.mf.dim, self.cgah.r
            )));
        }
        if self.wants(Stage::Ingest) && self.input.is_none() {
            return Err(Error::InvalidConfig("ingest stage needs an input path".into()));
        }
        // The pretrain-dae stage is a no-op in cf mode, so content paths are
        // only required when the objective actually uses them.
        let content_mode = self.cgah.mode == CgahMode::Content;
        if content_mode && (self.content_users.is_none() || self.content_items.is_none()) {
            return Err(Error::InvalidConfig(
                "content mode needs user and item content paths".into(),
            ));
        }
        Ok(())
    }

    /// Snapshot of the resolved configuration, valid toml, emitted in a
    /// fixed key order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let path_line = |key: &str, p: &Option<PathBuf>| {
            p.as_ref()
                .map(|v| format!("{key} = {:?}\n", v.display().to_string()))
                .unwrap_or_default()
        };
        out.push_str("[pipeline]\n");
        out.push_str(&path_line("out_dir", &Some(self.out_dir.clone())));
        let stages: Vec<String> = self.stages.iter().map(|s| format!("{:?}", s.name())).collect();
        out.push_str(&format!("stages = [{}]\n", stages.join(", ")));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("threads = {}\n\n", self.threads));

        out.push_str("[data]\n");
        out.push_str(&path_line("input", &self.input));
        let format = match self.format {
            RatingFormat::MovieLensDat => "movielens-dat",
            RatingFormat::AmazonCsv => "amazon-csv",
            RatingFormat::Tsv => "tsv",
        };
        out.push_str(&format!("format = {format:?}\n"));
        out.push_str(&format!("min_degree = {}\n", self.min_degree));
        out.push_str(&path_line("content_users", &self.content_users));
        out.push_str(&path_line("content_items", &self.content_items));
        out.push_str(&format!("vocab_size = {}\n\n", self.vocab_size));

        out.push_str("[split]\n");
        out.push_str(&format!("fraction = {}\n\n", fmt_f64(self.fraction)));

        out.push_str("[mf]\n");
        out.push_str(&format!("dim = {}\n", self.mf.dim));
        out.push_str(&format!("reg = {}\n", fmt_f64(self.mf.reg)));
        out.push_str(&format!("iters = {}\n", self.mf.iters));
        out.push_str(&format!("seed = {}\n", self.mf.seed));
        if let Some(s) = self.mf.init_scale {
            out.push_str(&format!("init_scale = {}\n", fmt_f64(s)));
        }
        out.push('\n');

        out.push_str("[group]\n");
        out.push_str(&format!("kappa = {}\n", self.kappa));
        out.push_str(&format!("kmeans_iters = {}\n\n", self.kmeans_iters));

        out.push_str("[encoder]\n");
        out.push_str(&format!("corruption = {}\n", fmt_f64(self.encoder.corruption)));
        out.push_str(&format!("epochs = {}\n", self.encoder.epochs));
        out.push_str(&format!("lr = {}\n\n", fmt_f64(self.encoder.lr)));

        out.push_str("[cgah]\n");
        let mode = if self.cgah.mode == CgahMode::Cf { "cf" } else { "content" };
        out.push_str(&format!("mode = {mode:?}\n"));
        out.push_str(&format!(
            "alpha = {}\n",
            self.cgah.alpha.map_or_else(|| "\"auto\"".into(), fmt_f64)
        ));
        out.push_str(&format!(
            "beta = {}\n",
            self.cgah.beta.map_or_else(|| "\"auto\"".into(), fmt_f64)
        ));
        out.push_str(&format!("lambda1 = {}\n", fmt_f64(self.cgah.lambda1)));
        out.push_str(&format!("lambda2 = {}\n", fmt_f64(self.cgah.lambda2)));
        out.push_str(&format!("outer_iters = {}\n", self.cgah.max_outer_iters));
        out.push_str(&format!("inner_sweeps = {}\n", self.cgah.inner_dcd_sweeps));
        out.push_str(&format!("encoder_lr = {}\n", fmt_f64(self.cgah.encoder_lr)));
        out.push_str(&format!("seed = {}\n\n", self.cgah.seed));

        out.push_str("[eval]\n");
        let ks: Vec<String> = self.ks.iter().map(|k| k.to_string()).collect();
        out.push_str(&format!("ks = [{}]\n", ks.join(", ")));
        out
    }

    /// Hash of the semantic configuration (paths and out_dir excluded), so
    /// identical experiments produce identical model manifests anywhere.
    pub fn semantic_hash(&self) -> u64 {
        let mut semantic = String::new();
        for line in self.render().lines() {
            let is_path = line.starts_with("out_dir")
                || line.starts_with("input")
                || line.starts_with("content_users")
                || line.starts_with("content_items");
            if !is_path {
                semantic.push_str(line);
                semantic.push('\n');
            }
        }
        fnv1a64(semantic.as_bytes())
    }
}

fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// 64-bit FNV-1a, used for artifact and config fingerprints.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Which stages ran and which were skipped because outputs were current.
#[derive(Debug, Clone, Default)]
pub struct PipelineOutcome {
    pub ran: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

/// File names of every artifact a stage produces.
fn stage_outputs(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Ingest => &["ratings.tsv", "users.map", "items.map"],
        Stage::Split => &["train.tsv", "test.tsv"],
        Stage::TrainMf => &["mf.model"],
        Stage::PretrainDae => &["encoders.model"],
        Stage::Group => &["groups.model"],
        Stage::TrainCgah => &["model.cgah", "trace.csv"],
        Stage::Eval => &["report.csv"],
    }
}

fn stage_inputs(stage: Stage, content_mode: bool) -> Vec<&'static str> {
    match stage {
        Stage::Ingest => vec![],
        Stage::Split => vec!["ratings.tsv"],
        Stage::TrainMf => vec!["train.tsv"],
        Stage::PretrainDae => vec!["users.map", "items.map"],
        Stage::Group => {
            if content_mode {
                vec!["mf.model", "encoders.model", "users.map", "items.map"]
            } else {
                vec!["mf.model"]
            }
        }
        Stage::TrainCgah => {
            if content_mode {
                vec!["train.tsv", "mf.model", "groups.model", "encoders.model", "users.map", "items.map"]
            } else {
                vec!["train.tsv", "mf.model", "groups.model"]
            }
        }
        Stage::Eval => vec!["model.cgah", "train.tsv", "test.tsv"],
    }
}

fn stage_config_slice(cfg: &PipelineConfig, stage: Stage) -> String {
    let full = cfg.render();
    let sections: Vec<&str> = match stage {
        Stage::Ingest => vec!["[data]"],
        Stage::Split => vec!["[split]"],
        Stage::TrainMf => vec!["[mf]"],
        Stage::PretrainDae => vec!["[encoder]", "[data]"],
        Stage::Group => vec!["[group]", "[cgah]"],
        Stage::TrainCgah => vec!["[cgah]", "[group]"],
        Stage::Eval => vec!["[eval]", "[split]"],
    };
    let mut out = format!("seed={}\n", cfg.seed);
    let mut keep = false;
    for line in full.lines() {
        if line.starts_with('[') {
            keep = sections.contains(&line);
        }
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn file_fingerprint(path: &Path) -> Result<u64> {
    Ok(fnv1a64(&fs::read(path)?))
}

fn stage_fingerprint(cfg: &PipelineConfig, stage: Stage) -> Result<u64> {
    let content_mode = cfg.cgah.mode == CgahMode::Content;
    let mut acc = stage_config_slice(cfg, stage).into_bytes();
    for input in stage_inputs(stage, content_mode) {
        let path = cfg.out_dir.join(input);
        acc.extend_from_slice(input.as_bytes());
        acc.extend_from_slice(&file_fingerprint(&path)?.to_le_bytes());
    }
    // external inputs
    match stage {
        Stage::Ingest => {
            if let Some(p) = &cfg.input {
                acc.extend_from_slice(&file_fingerprint(p)?.to_le_bytes());
            }
        }
        Stage::PretrainDae | Stage::Group | Stage::TrainCgah if content_mode => {
            for p in [&cfg.content_users, &cfg.content_items].into_iter().flatten() {
                acc.extend_from_slice(&file_fingerprint(p)?.to_le_bytes());
            }
        }
        _ => {}
    }
    Ok(fnv1a64(&acc))
}

fn load_stage_state(path: &Path) -> HashMap<String, u64> {
    let mut out = HashMap::new();
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines() {
            if let Some((name, fp)) = line.split_once('\t') {
                if let Ok(v) = fp.parse() {
                    out.insert(name.to_string(), v);
                }
            }
        }
    }
    out
}

fn save_stage_state(path: &Path, state: &HashMap<String, u64>) -> Result<()> {
    let mut names: Vec<&String> = state.keys().collect();
    names.sort();
    let mut text = String::new();
    for name in names {
        text.push_str(&format!("{name}\t{}\n", state[name]));
    }
    fs::write(path, text)?;
    Ok(())
}

struct Workspace<'a> {
    cfg: &'a PipelineConfig,
}

impl Workspace<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn full_dims(&self) -> Result<(usize, usize)> {
        let ratings = RatingMatrix::read_tsv(&self.path("ratings.tsv"), None)?;
        Ok((ratings.n_users(), ratings.n_items()))
    }

    fn read_split(&self, dims: (usize, usize)) -> Result<(RatingMatrix, RatingMatrix)> {
        let train = RatingMatrix::read_tsv(&self.path("train.tsv"), Some(dims))?;
        let test = RatingMatrix::read_tsv(&self.path("test.tsv"), Some(dims))?;
        Ok((train, test))
    }

    fn read_content(&self) -> Result<(ContentMatrix, ContentMatrix)> {
        let users = IdMap::read_tsv(&self.path("users.map"))?;
        let items = IdMap::read_tsv(&self.path("items.map"))?;
        let cu = ingest_content_keyed(
            self.cfg.content_users.as_ref().unwrap(),
            &users,
            self.cfg.vocab_size,
        )?;
        let ci = ingest_content_keyed(
            self.cfg.content_items.as_ref().unwrap(),
            &items,
            self.cfg.vocab_size,
        )?;
        Ok((cu, ci))
    }

    fn run_ingest(&self) -> Result<()> {
        let input = self.cfg.input.as_ref().unwrap();
        let ingested = ingest_ratings(input, self.cfg.format)?;
        let filtered = filter_min_degree(&ingested.matrix, self.cfg.min_degree.max(1))?;
        filtered.matrix.write_tsv(&self.path("ratings.tsv"))?;
        ingested.users.select(&filtered.kept_users).write_tsv(&self.path("users.map"))?;
        ingested.items.select(&filtered.kept_items).write_tsv(&self.path("items.map"))?;
        Ok(())
    }

    fn run_split(&self) -> Result<()> {
        let ratings = RatingMatrix::read_tsv(&self.path("ratings.tsv"), None)?;
        let spec = SplitSpec::new(self.cfg.fraction, self.cfg.seed);
        let (train, test) = split_ratings(&ratings, &spec)?;
        train.write_tsv(&self.path("train.tsv"))?;
        test.write_tsv(&self.path("test.tsv"))?;
        Ok(())
    }

    fn run_train_mf(&self) -> Result<()> {
        let dims = self.full_dims()?;
        let train = RatingMatrix::read_tsv(&self.path("train.tsv"), Some(dims))?;
        let out = train_mf(&train, &self.cfg.mf)?;
        write_mf_model(&self.path("mf.model"), &out.factors)?;
        Ok(())
    }

    fn run_pretrain_dae(&self) -> Result<()> {
        let (cu, ci) = self.read_content()?;
        let r = self.cfg.mf.dim;
        let users = pretrain_dae(
            &cu,
            r,
            self.cfg.encoder.corruption,
            self.cfg.encoder.epochs,
            self.cfg.encoder.lr,
            self.cfg.seed.wrapping_add(101),
        )?;
        let items = pretrain_dae(
            &ci,
            r,
            self.cfg.encoder.corruption,
            self.cfg.encoder.epochs,
            self.cfg.encoder.lr,
            self.cfg.seed.wrapping_add(102),
        )?;
        EncodersModel { users, items }.write(&self.path("encoders.model"))?;
        Ok(())
    }

    fn run_group(&self) -> Result<()> {
        let factors = read_mf_model(&self.path("mf.model"))?;
        let r = factors.r;
        let (user_rows, item_rows, dim) = if self.cfg.cgah.mode == CgahMode::Content {
            let encoders = EncodersModel::read(&self.path("encoders.model"))?;
            let (cu, ci) = self.read_content()?;
            let xi = crate::encoder::encode_all(&encoders.users, &cu)?;
            let zeta = crate::encoder::encode_all(&encoders.items, &ci)?;
            let mut user_rows = Vec::with_capacity(factors.n_users() * 2 * r);
            for u in 0..factors.n_users() {
                user_rows.extend_from_slice(factors.user_row(u));
                user_rows.extend_from_slice(&xi[u * r..(u + 1) * r]);
            }
            let mut item_rows = Vec::with_capacity(factors.n_items() * 2 * r);
            for j in 0..factors.n_items() {
                item_rows.extend_from_slice(factors.item_row(j));
                item_rows.extend_from_slice(&zeta[j * r..(j + 1) * r]);
            }
            (user_rows, item_rows, 2 * r)
        } else {
            (factors.user_factors().to_vec(), factors.item_factors().to_vec(), r)
        };
        let stacked = [user_rows.as_slice(), item_rows.as_slice()].concat();
        let codebook = kmeans(&stacked, dim, self.cfg.kappa, self.cfg.seed, self.cfg.kmeans_iters)?;
        let p = compute_group_profile(&user_rows, dim, &codebook)?;
        let q = compute_group_profile(&item_rows, dim, &codebook)?;
        GroupsModel { codebook, p, q }.write(&self.path("groups.model"))?;
        Ok(())
    }

    fn run_train_cgah(&self) -> Result<()> {
        let dims = self.full_dims()?;
        let train = RatingMatrix::read_tsv(&self.path("train.tsv"), Some(dims))?;
        let factors = read_mf_model(&self.path("mf.model"))?;
        let groups = GroupsModel::read(&self.path("groups.model"))?;
        let content_mode = self.cfg.cgah.mode == CgahMode::Content;
        let state = if content_mode {
            let encoders = EncodersModel::read(&self.path("encoders.model"))?;
            let (cu, ci) = self.read_content()?;
            train_cgah(
                &train,
                &cu,
                &ci,
                &factors,
                &groups.p,
                &groups.q,
                &encoders.users,
                &encoders.items,
                &self.cfg.cgah,
            )?
        } else {
            train_cgah_cf(&train, &factors, &groups.p, &groups.q, &self.cfg.cgah)?
        };

        let meta = vec![
            ("mode".to_string(), if content_mode { "content" } else { "cf" }.to_string()),
            ("config_hash".to_string(), format!("{:016x}", self.cfg.semantic_hash())),
            ("r".to_string(), self.cfg.cgah.r.to_string()),
            ("kappa".to_string(), self.cfg.kappa.to_string()),
            ("n_users".to_string(), train.n_users().to_string()),
            ("n_items".to_string(), train.n_items().to_string()),
            ("outer_iters_run".to_string(), state.outer_iters_run.to_string()),
        ];
        let model = CgahModel {
            meta,
            codebook: groups.codebook,
            p: groups.p,
            q: groups.q,
            b: state.b,
            d: state.d,
            x: state.delegates.x,
            y: state.delegates.y,
            enc_users: state.enc_users,
            enc_items: state.enc_items,
        };
        model.write(&self.path("model.cgah"))?;

        let mut trace = String::from("iteration,rating_loss,delegate_terms,content_terms,total\n");
        for (i, parts) in state.objective_trace.iter().enumerate() {
            trace.push_str(&format!(
                "{i},{},{},{},{}\n",
                parts.rating, parts.delegate, parts.content, parts.total
            ));
        }
        fs::write(self.path("trace.csv"), trace)?;
        Ok(())
    }

    fn run_eval(&self) -> Result<()> {
        let model = CgahModel::read(&self.path("model.cgah"))?;
        let dims = (model.b.count(), model.d.count());
        let (train, test) = self.read_split(dims)?;
        let scorer = CgahScorer { b: &model.b, d: &model.d, p: &model.p, q: &model.q };
        let report = evaluate_model(&scorer, &test, &train, &self.cfg.ks)?;
        let model_name = model.meta_value("mode").map_or("cgah", |m| {
            if m == "content" {
                "cgah"
            } else {
                "cgah-cf"
            }
        });
        let mut csv = String::from("model,fraction,repeat,k,ndcg\n");
        for (ki, &k) in report.ks.iter().enumerate() {
            csv.push_str(&format!(
                "{model_name},{},0,{k},{}\n",
                self.cfg.fraction, report.repeats[0][ki]
            ));
        }
        fs::write(self.path("report.csv"), csv)?;
        Ok(())
    }
}

/// Execute the requested stages in dependency order.
///
/// A stage is skipped when all of its outputs exist and the recorded
/// fingerprint (stage config plus input artifact hashes) is unchanged.
/// Failures leave earlier artifacts in place, so a fixed configuration can
/// resume where it stopped.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.resolved.toml"), cfg.render())?;

    let state_path = cfg.out_dir.join("stage_state.tsv");
    let mut state = load_stage_state(&state_path);
    let ws = Workspace { cfg };
    let mut outcome = PipelineOutcome::default();

    for stage in STAGE_ORDER {
        if !cfg.wants(stage) {
            continue;
        }
        if stage == Stage::PretrainDae && cfg.cgah.mode == CgahMode::Cf {
            continue;
        }
        let fingerprint = stage_fingerprint(cfg, stage)?;
        let outputs_exist = stage_outputs(stage).iter().all(|f| ws.path(f).exists());
        if outputs_exist && state.get(stage.name()) == Some(&fingerprint) {
            log::info!("stage {} up to date, skipping", stage.name());
            outcome.skipped.push(stage);
            continue;
        }
        log::info!("running stage {}", stage.name());
        match stage {
            Stage::Ingest => ws.run_ingest()?,
            Stage::Split => ws.run_split()?,
            Stage::TrainMf => ws.run_train_mf()?,
            Stage::PretrainDae => ws.run_pretrain_dae()?,
            Stage::Group => ws.run_group()?,
            Stage::TrainCgah => ws.run_train_cgah()?,
            Stage::Eval => ws.run_eval()?,
        }
        // fingerprint the stage against its now-existing inputs
        let fingerprint = stage_fingerprint(cfg, stage)?;
        state.insert(stage.name().to_string(), fingerprint);
        save_stage_state(&state_path, &state)?;
        outcome.ran.push(stage);
    }
    Ok(outcome)
}

/// Top-k recommendation for one user of a persisted model, excluding the
/// user's training items.
pub fn recommend_for_user(
    model: &CgahModel,
    user: usize,
    k: usize,
    train: Option<&RatingMatrix>,
) -> Result<Vec<(u32, f64)>> {
    if user >= model.b.count() {
        return Err(Error::IndexOutOfRange(format!(
            "user {user} outside model with {} users",
            model.b.count()
        )));
    }
    let exclude: Vec<u32> = match train {
        Some(t) if user < t.n_users() => t.user_ratings(user).iter().map(|e| e.0).collect(),
        _ => Vec::new(),
    };
    crate::codes::topk(user, &model.b, &model.d, &model.p, &model.q, k, &exclude)
}
