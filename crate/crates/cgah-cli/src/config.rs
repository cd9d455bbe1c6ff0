//! Config-file loading for the `run` subcommand.
//!
//! The file is toml with one section per stage; every key has a default, and
//! command-line flags override file values. `run_pipeline` writes the fully
//! resolved result back as `config.resolved.toml`, which can be fed to `run`
//! again to reproduce the artifacts.

use std::env;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use cgah::data::RatingFormat;
use cgah::error::{Error, Result};
use cgah::optimizer::{CgahConfig, CgahMode};
use cgah::pipeline::{PipelineConfig, Stage};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pipeline: Option<PipelineSection>,
    data: Option<DataSection>,
    split: Option<SplitSection>,
    mf: Option<MfSection>,
    group: Option<GroupSection>,
    encoder: Option<EncoderSection>,
    cgah: Option<CgahSection>,
    eval: Option<EvalSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineSection {
    out_dir: Option<String>,
    stages: Option<Vec<String>>,
    seed: Option<u64>,
    threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    input: Option<String>,
    format: Option<String>,
    min_degree: Option<usize>,
    content_users: Option<String>,
    content_items: Option<String>,
    vocab_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitSection {
    fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MfSection {
    dim: Option<usize>,
    reg: Option<f64>,
    iters: Option<usize>,
    seed: Option<u64>,
    init_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupSection {
    kappa: Option<usize>,
    kmeans_iters: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderSection {
    corruption: Option<f64>,
    epochs: Option<usize>,
    lr: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AutoOrValue {
    Value(f64),
    Named(String),
}

impl AutoOrValue {
    pub fn resolve(&self) -> Result<Option<f64>> {
        match self {
            AutoOrValue::Value(v) => Ok(Some(*v)),
            AutoOrValue::Named(s) if s == "auto" => Ok(None),
            AutoOrValue::Named(s) => {
                Err(Error::InvalidConfig(format!("expected a number or \"auto\", got `{s}`")))
            }
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CgahSection {
    mode: Option<String>,
    alpha: Option<AutoOrValue>,
    beta: Option<AutoOrValue>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    outer_iters: Option<usize>,
    inner_sweeps: Option<usize>,
    encoder_lr: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    ks: Option<Vec<usize>>,
}

pub fn parse_mode(name: &str) -> Result<CgahMode> {
    match name {
        "cf" => Ok(CgahMode::Cf),
        "content" => Ok(CgahMode::Content),
        other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
    }
}

fn absolute(path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_absolute() {
        p
    } else {
        env::current_dir().map(|cwd| cwd.join(&p)).unwrap_or(p)
    }
}

/// Optional paths: missing keys and empty strings both mean "not set".
fn opt_path(value: &Option<String>) -> Option<PathBuf> {
    value.as_deref().filter(|s| !s.is_empty()).map(absolute)
}

/// Load a config file and resolve it into a full `PipelineConfig`.
pub fn load(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path)?;
    let file: FileConfig = toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;

    let pipeline = file.pipeline.unwrap_or_default();
    let out_dir = absolute(pipeline.out_dir.as_deref().unwrap_or("cgah-out"));
    let mut cfg = PipelineConfig::new(out_dir);

    if let Some(stages) = pipeline.stages {
        cfg.stages = stages.iter().map(|s| Stage::parse_name(s)).collect::<Result<_>>()?;
    }
    if let Some(seed) = pipeline.seed {
        cfg.seed = seed;
        cfg.mf.seed = seed;
        cfg.cgah.seed = seed;
    }
    if let Some(threads) = pipeline.threads {
        cfg.threads = threads;
    }

    let data = file.data.unwrap_or_default();
    cfg.input = opt_path(&data.input);
    if let Some(f) = data.format {
        cfg.format = RatingFormat::parse_name(&f)?;
    }
    if let Some(d) = data.min_degree {
        cfg.min_degree = d;
    }
    cfg.content_users = opt_path(&data.content_users);
    cfg.content_items = opt_path(&data.content_items);
    if let Some(v) = data.vocab_size {
        cfg.vocab_size = v;
    }

    if let Some(split) = file.split {
        if let Some(f) = split.fraction {
            cfg.fraction = f;
        }
    }

    let mf = file.mf.unwrap_or_default();
    if let Some(d) = mf.dim {
        cfg.mf.dim = d;
    }
    if let Some(r) = mf.reg {
        cfg.mf.reg = r;
    }
    if let Some(i) = mf.iters {
        cfg.mf.iters = i;
    }
    if let Some(s) = mf.seed {
        cfg.mf.seed = s;
    }
    cfg.mf.init_scale = mf.init_scale;

    let group = file.group.unwrap_or_default();
    if let Some(k) = group.kappa {
        cfg.kappa = k;
    }
    if let Some(i) = group.kmeans_iters {
        cfg.kmeans_iters = i;
    }

    let enc = file.encoder.unwrap_or_default();
    if let Some(c) = enc.corruption {
        cfg.encoder.corruption = c;
    }
    if let Some(e) = enc.epochs {
        cfg.encoder.epochs = e;
    }
    if let Some(l) = enc.lr {
        cfg.encoder.lr = l;
    }

    let cgah_sec = file.cgah.unwrap_or_default();
    let mode = match cgah_sec.mode.as_deref() {
        Some(m) => parse_mode(m)?,
        None => CgahMode::Cf,
    };
    let mut cgah = if mode == CgahMode::Content {
        CgahConfig::content(cfg.mf.dim, cfg.kappa)
    } else {
        CgahConfig::cf(cfg.mf.dim, cfg.kappa)
    };
    cgah.seed = cfg.cgah.seed;
    if let Some(a) = &cgah_sec.alpha {
        cgah.alpha = a.resolve()?;
    }
    if let Some(b) = &cgah_sec.beta {
        cgah.beta = b.resolve()?;
    }
    if let Some(l) = cgah_sec.lambda1 {
        cgah.lambda1 = l;
    }
    if let Some(l) = cgah_sec.lambda2 {
        cgah.lambda2 = l;
    }
    if let Some(o) = cgah_sec.outer_iters {
        cgah.max_outer_iters = o;
    }
    if let Some(i) = cgah_sec.inner_sweeps {
        cgah.inner_dcd_sweeps = i;
    }
    if let Some(l) = cgah_sec.encoder_lr {
        cgah.encoder_lr = l;
    }
    if let Some(s) = cgah_sec.seed {
        cgah.seed = s;
    }
    cfg.cgah = cgah;

    if let Some(eval) = file.eval {
        if let Some(ks) = eval.ks {
            cfg.ks = ks;
        }
    }
    Ok(cfg)
}

/// Parse a `--alpha`-style flag: "auto" or a number.
pub fn parse_auto(value: &str) -> Result<Option<f64>> {
    if value == "auto" {
        return Ok(None);
    }
    value
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::InvalidConfig(format!("expected a number or `auto`, got `{value}`")))
}
