//! Command-line pipeline for training and serving group-aware hashed
//! recommendation models.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cgah::data::{IdMap, RatingFormat, RatingMatrix};
use cgah::error::{Error, Result};
use cgah::eval::{
    bench_retrieval, evaluate_model, sparsity_sweep, sweep_csv, CgahScorer, EncoderSettings,
    MfScorer, ScanMode, SweepConfig, SweepDataset, SweepModel,
};
use cgah::mf::MfConfig;
use cgah::model::{read_mf_model, CgahModel};
use cgah::optimizer::{CgahConfig, CgahMode};
use cgah::pipeline::{recommend_for_user, run_pipeline, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "cgah", version, about = "Group-aware hashing for fast recommendations")]
struct Cli {
    /// Worker threads for data-parallel stages; 1 guarantees a serial,
    /// deterministic schedule, 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a rating file, apply the degree filter, and write the canonical
    /// tsv plus id maps.
    Ingest(IngestArgs),
    /// Split ratings.tsv into per-user train/test sets.
    Split(SplitArgs),
    /// Train matrix factorization on train.tsv.
    TrainMf(TrainMfArgs),
    /// Cluster latent vectors into a shared codebook and compute profiles.
    Group(GroupArgs),
    /// Pretrain the denoising autoencoder content encoders.
    PretrainDae(PretrainDaeArgs),
    /// Train hash codes with the alternating discrete optimizer.
    TrainCgah(TrainCgahArgs),
    /// Evaluate a model with NDCG@k on a held-out test set.
    Eval(EvalArgs),
    /// Top-k recommendations for one user from a trained model.
    Recommend(RecommendArgs),
    /// Time binary vs float top-k retrieval scans.
    Bench(BenchArgs),
    /// Full factorial sparsity sweep over fractions and models.
    Sweep(SweepArgs),
    /// Run the configured stages of the pipeline from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "tsv")]
    format: String,
    #[arg(long, default_value_t = 10)]
    min_degree: usize,
    /// Output directory for ratings.tsv, users.map, items.map.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Directory holding ratings.tsv; train.tsv/test.tsv are written here.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct TrainMfArgs {
    /// Working directory with train.tsv; mf.model is written here.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    reg: f64,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct GroupArgs {
    /// Working directory with mf.model; groups.model is written here.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    kappa: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    kmeans_iters: usize,
    /// `content` clusters the concatenated [factors; embeddings] vectors.
    #[arg(long, default_value = "cf")]
    mode: String,
    #[arg(long)]
    content_users: Option<PathBuf>,
    #[arg(long)]
    content_items: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
}

#[derive(Args)]
struct PretrainDaeArgs {
    /// Working directory; encoders.model is written here.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.2)]
    corruption: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    content_users: PathBuf,
    #[arg(long)]
    content_items: PathBuf,
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
}

#[derive(Args)]
struct TrainCgahArgs {
    /// Working directory with train.tsv, mf.model, groups.model.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value = "cf")]
    mode: String,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    kappa: usize,
    #[arg(long, default_value = "auto")]
    alpha: String,
    #[arg(long, default_value = "auto")]
    beta: String,
    #[arg(long, default_value_t = 0.2)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda2: f64,
    #[arg(long, default_value_t = 30)]
    outer_iters: usize,
    #[arg(long, default_value_t = 10)]
    inner_sweeps: usize,
    #[arg(long, default_value_t = 0.05)]
    encoder_lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Model file destination; defaults to <dir>/model.cgah.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    content_users: Option<PathBuf>,
    #[arg(long)]
    content_items: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model: a .cgah container or an mf factor file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Training split, used to exclude seen items from ranking.
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value = "10,20,30,40,50", value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Split fraction recorded in the report; cosmetic.
    #[arg(long)]
    fraction: Option<f64>,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    /// User id; resolved through users.map when --maps is given, otherwise
    /// an internal index.
    #[arg(long)]
    user: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Training split whose items are excluded from results.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Directory with users.map and items.map for id translation.
    #[arg(long)]
    maps: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100_000)]
    items: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(
        long,
        default_value = "binary-popcount,affinity-weighted-binary,float-dot",
        value_delimiter = ','
    )]
    modes: Vec<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Canonical ratings tsv (post filter).
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "0.1,0.5,0.9", value_delimiter = ',')]
    fractions: Vec<f64>,
    #[arg(long, default_value = "mf,mf-ga,cgah-cf", value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value = "10,20,30,40,50", value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    kappa: usize,
    #[arg(long, default_value_t = 0.1)]
    reg: f64,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 30)]
    outer_iters: usize,
    #[arg(long)]
    content_users: Option<PathBuf>,
    #[arg(long)]
    content_items: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    vocab_size: usize,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override every configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured stage list, comma separated.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = cgah::configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(3);
    }
    match dispatch(cli.command, cli.threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::InvalidConfig(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

/// Base config for single-stage invocations rooted at a working directory.
fn stage_config(dir: PathBuf, threads: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(dir);
    cfg.threads = threads;
    cfg
}

fn dispatch(command: Command, threads: usize) -> Result<()> {
    match command {
        Command::Ingest(args) => {
            let mut cfg = stage_config(args.out, threads);
            cfg.stages = vec![Stage::Ingest];
            cfg.input = Some(args.input);
            cfg.format = RatingFormat::parse_name(&args.format)?;
            cfg.min_degree = args.min_degree;
            run_pipeline(&cfg)?;
            Ok(())
        }
        Command::Split(args) => {
            let mut cfg = stage_config(args.out, threads);
            cfg.stages = vec![Stage::Split];
            cfg.fraction = args.fraction;
            cfg.seed = args.seed;
            run_pipeline(&cfg)?;
            Ok(())
        }
        Command::TrainMf(args) => {
            let mut cfg = stage_config(args.dir, threads);
            cfg.stages = vec![Stage::TrainMf];
            cfg.mf = MfConfig {
                dim: args.dim,
                reg: args.reg,
                iters: args.iters,
                seed: args.seed,
                init_scale: None,
            };
            cfg.cgah.r = args.dim;
            run_pipeline(&cfg)?;
            Ok(())
        }
        Command::Group(args) => {
            let mut cfg = stage_config(args.dir, threads);
            cfg.stages = vec![Stage::Group];
            cfg.kappa = args.kappa;
            cfg.seed = args.seed;
            cfg.kmeans_iters = args.kmeans_iters;
            cfg.content_users = args.content_users;
            cfg.content_items = args.content_items;
            cfg.vocab_size = args.vocab_size;
            if config::parse_mode(&args.mode)? == CgahMode::Content {
                cfg.cgah = CgahConfig::content(cfg.mf.dim, args.kappa);
            }
            // mf.model fixes the factor dim; group reads it from the file
            let factors = read_mf_model(&cfg.out_dir.join("mf.model"))?;
            cfg.mf.dim = factors.r;
            cfg.cgah.r = factors.r;
            run_pipeline(&cfg)?;
            Ok(())
        }
        Command::PretrainDae(args) => {
            let mut cfg = stage_config(args.dir, threads);
            cfg.stages = vec![Stage::PretrainDae];
            cfg.mf.dim = args.embed_dim;
            cfg.cgah = CgahConfig::content(args.embed_dim, cfg.kappa);
            cfg.encoder = EncoderSettings {
                corruption: args.corruption,
                epochs: args.epochs,
                lr: args.lr,
            };
            cfg.seed = args.seed;
            cfg.content_users = Some(args.content_users);
            cfg.content_items = Some(args.content_items);
            cfg.vocab_size = args.vocab_size;
            run_pipeline(&cfg)?;
            Ok(())
        }
        Command::TrainCgah(args) => {
            let mut cfg = stage_config(args.dir, threads);
            cfg.stages = vec![Stage::TrainCgah];
            let mode = config::parse_mode(&args.mode)?;
            let mut cgah = if mode == CgahMode::Content {
                CgahConfig::content(args.dim, args.kappa)
            } else {
                CgahConfig::cf(args.dim, args.kappa)
            };
            cgah.alpha = config::parse_auto(&args.alpha)?;
            cgah.beta = config::parse_auto(&args.beta)?;
            if mode == CgahMode::Content {
                cgah.lambda1 = args.lambda1;
                cgah.lambda2 = args.lambda2;
            }
            cgah.max_outer_iters = args.outer_iters;
            cgah.inner_dcd_sweeps = args.inner_sweeps;
            cgah.encoder_lr = args.encoder_lr;
            cgah.seed = args.seed;
            cfg.cgah = cgah;
            cfg.mf.dim = args.dim;
            cfg.kappa = args.kappa;
            cfg.content_users = args.content_users;
            cfg.content_items = args.content_items;
            cfg.vocab_size = args.vocab_size;
            run_pipeline(&cfg)?;
            if let Some(out) = args.out {
                let default = cfg.out_dir.join("model.cgah");
                if out != default {
                    std::fs::copy(&default, &out)?;
                }
            }
            Ok(())
        }
        Command::Eval(args) => run_eval(args),
        Command::Recommend(args) => run_recommend(args),
        Command::Bench(args) => run_bench(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Run(args) => {
            let mut cfg = config::load(&args.config)?;
            cfg.threads = threads;
            if let Some(out) = args.out_dir {
                cfg.out_dir = out;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
                cfg.mf.seed = seed;
                cfg.cgah.seed = seed;
            }
            if let Some(stages) = args.stages {
                cfg.stages = stages.iter().map(|s| Stage::parse_name(s)).collect::<Result<_>>()?;
            }
            let outcome = run_pipeline(&cfg)?;
            for stage in &outcome.ran {
                println!("ran {}", stage.name());
            }
            for stage in &outcome.skipped {
                println!("skipped {} (up to date)", stage.name());
            }
            Ok(())
        }
    }
}

fn run_eval(args: EvalArgs) -> Result<()> {
    // Sniff the model kind by magic.
    let (report, model_name) = match CgahModel::read(&args.model) {
        Ok(model) => {
            let dims = (model.b.count(), model.d.count());
            let train = RatingMatrix::read_tsv(&args.train, Some(dims))?;
            let test = RatingMatrix::read_tsv(&args.test, Some(dims))?;
            let scorer = CgahScorer { b: &model.b, d: &model.d, p: &model.p, q: &model.q };
            let name = if model.meta_value("mode") == Some("content") { "cgah" } else { "cgah-cf" };
            (evaluate_model(&scorer, &test, &train, &args.k)?, name)
        }
        Err(Error::ModelFormat(_)) => {
            let factors = read_mf_model(&args.model)?;
            let dims = (factors.n_users(), factors.n_items());
            let train = RatingMatrix::read_tsv(&args.train, Some(dims))?;
            let test = RatingMatrix::read_tsv(&args.test, Some(dims))?;
            (evaluate_model(&MfScorer { factors: &factors }, &test, &train, &args.k)?, "mf")
        }
        Err(e) => return Err(e),
    };
    let fraction = args.fraction.map_or_else(|| "-".to_string(), |f| f.to_string());
    let mut csv = String::from("model,fraction,repeat,k,ndcg\n");
    for (ki, &k) in report.ks.iter().enumerate() {
        csv.push_str(&format!("{model_name},{fraction},0,{k},{}\n", report.repeats[0][ki]));
    }
    std::fs::write(&args.out, csv)?;
    println!(
        "evaluated {} users ({} skipped); report at {}",
        report.evaluated_users,
        report.skipped_users,
        args.out.display()
    );
    for (ki, &k) in report.ks.iter().enumerate() {
        println!("ndcg@{k} = {:.6}", report.repeats[0][ki]);
    }
    Ok(())
}

fn run_recommend(args: RecommendArgs) -> Result<()> {
    let model = CgahModel::read(&args.model)?;
    let (users_map, items_map) = match &args.maps {
        Some(dir) => (
            Some(IdMap::read_tsv(&dir.join("users.map"))?),
            Some(IdMap::read_tsv(&dir.join("items.map"))?),
        ),
        None => (None, None),
    };
    let user = match &users_map {
        Some(map) => map.lookup(&args.user).ok_or_else(|| {
            Error::InvalidValue(format!("user id `{}` not found in users.map", args.user))
        })? as usize,
        None => args
            .user
            .parse::<usize>()
            .map_err(|_| Error::InvalidConfig("without --maps, --user must be an index".into()))?,
    };
    let train = match &args.train {
        Some(path) => {
            Some(RatingMatrix::read_tsv(path, Some((model.b.count(), model.d.count())))?)
        }
        None => None,
    };
    let ranked = recommend_for_user(&model, user, args.k, train.as_ref())?;
    for (rank, (item, score)) in ranked.iter().enumerate() {
        let shown = items_map
            .as_ref()
            .and_then(|m| m.original(*item))
            .map_or_else(|| item.to_string(), |s| s.to_string());
        println!("{}\t{shown}\t{score:.6}", rank + 1);
    }
    Ok(())
}

fn parse_scan_mode(name: &str) -> Result<ScanMode> {
    match name {
        "binary-popcount" => Ok(ScanMode::BinaryPopcount),
        "affinity-weighted-binary" => Ok(ScanMode::AffinityWeightedBinary),
        "float-dot" => Ok(ScanMode::FloatDot),
        other => Err(Error::InvalidConfig(format!("unknown scan mode `{other}`"))),
    }
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let modes: Vec<ScanMode> =
        args.modes.iter().map(|m| parse_scan_mode(m)).collect::<Result<_>>()?;
    let report = bench_retrieval(args.items, args.dim, args.queries, args.k, &modes, args.seed)?;
    println!(
        "items = {}, r = {}, k = {}, queries = {}",
        report.item_count, report.r, report.k, report.n_queries
    );
    println!("mode,mean_us,median_us,p99_us,bytes_per_item,speedup_vs_float");
    for t in &report.timings {
        let speedup = report
            .speedup_vs_float(t.mode)
            .map_or_else(|| "-".to_string(), |s| format!("{s:.2}"));
        println!(
            "{},{:.1},{:.1},{:.1},{},{}",
            t.mode.name(),
            t.mean_ns / 1000.0,
            t.median_ns / 1000.0,
            t.p99_ns / 1000.0,
            t.bytes_per_item,
            speedup
        );
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let ratings = RatingMatrix::read_tsv(&args.ratings, None)?;
    let models: Vec<SweepModel> =
        args.models.iter().map(|m| SweepModel::parse_name(m)).collect::<Result<_>>()?;
    let needs_content = models.contains(&SweepModel::Cgah);
    let content = if needs_content {
        let cu_path = args.content_users.as_ref().ok_or_else(|| {
            Error::InvalidConfig("cgah model in sweep needs --content-users".into())
        })?;
        let ci_path = args.content_items.as_ref().ok_or_else(|| {
            Error::InvalidConfig("cgah model in sweep needs --content-items".into())
        })?;
        // sweeps run on canonical data, so content is keyed by internal index
        Some((
            cgah::data::ingest_content(cu_path, ratings.n_users(), args.vocab_size)?,
            cgah::data::ingest_content(ci_path, ratings.n_items(), args.vocab_size)?,
        ))
    } else {
        None
    };
    let mut cgah_cfg = CgahConfig::cf(args.dim, args.kappa);
    cgah_cfg.max_outer_iters = args.outer_iters;
    let cfg = SweepConfig {
        fractions: args.fractions.clone(),
        models,
        repeats: args.repeats,
        base_seed: args.seed,
        ks: args.k.clone(),
        mf: MfConfig { dim: args.dim, reg: args.reg, iters: args.iters, seed: args.seed, init_scale: None },
        cgah: cgah_cfg,
        kmeans_iters: 50,
        encoder: EncoderSettings::default(),
    };
    let data = SweepDataset {
        ratings: &ratings,
        content_users: content.as_ref().map(|c| &c.0),
        content_items: content.as_ref().map(|c| &c.1),
    };
    let reports = sparsity_sweep(&data, &cfg)?;
    std::fs::write(&args.out, sweep_csv(&reports))?;
    for report in &reports {
        let fraction = report.meta.fraction.unwrap_or(f64::NAN);
        let mut line = format!("{} @ {:.2}:", report.meta.model, fraction);
        for (ki, &k) in report.ks.iter().enumerate() {
            line.push_str(&format!(" ndcg@{k}={:.4}±{:.4}", report.mean(ki), report.std(ki)));
        }
        println!("{line}");
    }
    println!("csv written to {}", args.out.display());
    Ok(())
}
