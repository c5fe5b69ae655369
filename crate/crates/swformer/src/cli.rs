//! Run configuration and the six subcommands behind the `swformer`
//! binary. Everything here is a thin orchestration layer over the
//! library; tests drive these functions directly.
//!
//! Config files are TOML with a fixed flat key set (`model.*`,
//! `loss.*`, `train.*`, `data.*`, `seed`); unknown keys are rejected
//! so typos fail loudly. `--set key=value` overrides are applied last.
//! Every command writes the effective config and a manifest (sha256 of
//! the config text, seed, crate version) into its output directory, so
//! a run can be reproduced from its artifacts alone.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::analysis::{analyze_pair, swap_subbands, Band};
use crate::checkpoint::{restore_into, restore_optim, snapshot, Checkpoint};
use crate::data::{
    load_png, load_paired_folder, make_corpus, paired_stems, save_corpus, save_png, Degradation,
    PairedSample, PatchSampler,
};
use crate::error::{Error, Result};
use crate::loss::{multi_domain_loss, LossConfig};
use crate::metrics::{psnr, ssim, to_y_channel, MetricReport};
use crate::network::{IoMode, ModelConfig, SwformerNet, Variant};
use crate::optim::{log_to_lines, train_range, AdamW, Schedule};
use crate::tensor::{Shape, Tensor};
use crate::transforms::BAND_NAMES;

// ── Run configuration ────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub patch: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clip; 0 disables.
    pub grad_clip: f64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            steps: 2000,
            batch: 2,
            patch: 64,
            lr_init: 1e-3,
            lr_min: 1e-6,
            weight_decay: 0.0,
            grad_clip: 0.0,
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Paired folder root (degraded/ + clean/); empty means synthetic.
    pub dir: String,
    /// Comma list for synthetic data: rain|haze|blur|lowlight.
    pub kinds: String,
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for DataConfig {
    fn default() -> DataConfig {
        DataConfig { dir: String::new(), kinds: "rain".into(), n_images: 8, height: 64, width: 64 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 0,
            model: ModelConfig::tiny(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value {raw:?} for key {key:?}")))
}

fn parse_list<T: std::str::FromStr + Copy + Default, const N: usize>(
    key: &str,
    raw: &str,
) -> Result<[T; N]> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    if parts.len() != N {
        return Err(Error::Config(format!("key {key:?} wants {N} comma-separated values, got {raw:?}")));
    }
    let mut out = [T::default(); N];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = parse_as(key, p)?;
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one dotted key. `raw` is the unquoted value text; lists
    /// are comma-separated.
    pub fn set_key(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_as(key, raw)?,
            "model.base_width" => self.model.base_width = parse_as(key, raw)?,
            "model.blocks_per_stage" => self.model.blocks_per_stage = parse_list(key, raw)?,
            "model.variant" => self.model.variant = Variant::parse(raw.trim())?,
            "model.io_mode" => self.model.io_mode = IoMode::parse(raw.trim())?,
            "model.in_channels" => self.model.in_channels = parse_as(key, raw)?,
            "model.spatial" => self.model.spatial = parse_as(key, raw)?,
            "model.wavelet" => self.model.wavelet = parse_as(key, raw)?,
            "model.fourier" => self.model.fourier = parse_as(key, raw)?,
            "model.fourier_gate_literal" => self.model.fourier_gate_literal = parse_as(key, raw)?,
            "loss.lambda_fourier" => self.loss.lambda_fourier = parse_as(key, raw)?,
            "loss.scale_weights" => self.loss.scale_weights = parse_list(key, raw)?,
            "train.steps" => self.train.steps = parse_as(key, raw)?,
            "train.batch" => self.train.batch = parse_as(key, raw)?,
            "train.patch" => self.train.patch = parse_as(key, raw)?,
            "train.lr_init" => self.train.lr_init = parse_as(key, raw)?,
            "train.lr_min" => self.train.lr_min = parse_as(key, raw)?,
            "train.weight_decay" => self.train.weight_decay = parse_as(key, raw)?,
            "train.grad_clip" => self.train.grad_clip = parse_as(key, raw)?,
            "train.log_every" => self.train.log_every = parse_as(key, raw)?,
            "data.dir" => self.data.dir = raw.trim().to_string(),
            "data.kinds" => self.data.kinds = raw.trim().to_string(),
            "data.n_images" => self.data.n_images = parse_as(key, raw)?,
            "data.height" => self.data.height = parse_as(key, raw)?,
            "data.width" => self.data.width = parse_as(key, raw)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Merges a TOML document into this config; unknown keys error.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table =
            text.parse().map_err(|e| Error::Config(format!("config parse: {e}")))?;
        let mut flat: Vec<(String, String)> = Vec::new();
        flatten_toml(&table, "", &mut flat)?;
        for (key, raw) in flat {
            self.set_key(&key, &raw)?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_toml(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        let t = &self.train;
        if t.batch == 0 || t.steps == 0 {
            return Err(Error::Config("train.batch and train.steps must be positive".into()));
        }
        if t.patch < 8 || t.patch % 4 != 0 {
            return Err(Error::Config(format!(
                "train.patch must be a multiple of 4 and at least 8, got {}",
                t.patch
            )));
        }
        if !(t.lr_init.is_finite() && t.lr_min.is_finite() && t.lr_init > 0.0 && t.lr_min >= 0.0) {
            return Err(Error::Config("train.lr_init/lr_min out of range".into()));
        }
        if t.weight_decay < 0.0 || t.grad_clip < 0.0 {
            return Err(Error::Config("train.weight_decay and train.grad_clip must be >= 0".into()));
        }
        if self.data.dir.is_empty() {
            parse_kinds(&self.data.kinds)?;
            if self.data.n_images == 0 || self.data.height == 0 || self.data.width == 0 {
                return Err(Error::Config("data.n_images/height/width must be positive".into()));
            }
        }
        Ok(())
    }

    /// Full echo of the effective configuration; feeding the output
    /// back through `from_toml` reproduces the same config.
    pub fn to_toml_string(&self) -> String {
        let ff = |v: f64| {
            let s = format!("{v}");
            if s.contains('.') || s.contains('e') || s.contains("inf") {
                s
            } else {
                format!("{s}.0")
            }
        };
        let list = |v: &[String]| v.join(", ");
        let m = &self.model;
        let t = &self.train;
        format!(
            "seed = {}\n\n\
             [model]\n\
             base_width = {}\n\
             blocks_per_stage = [{}]\n\
             variant = \"{}\"\n\
             io_mode = \"{}\"\n\
             in_channels = {}\n\
             spatial = {}\n\
             wavelet = {}\n\
             fourier = {}\n\
             fourier_gate_literal = {}\n\n\
             [loss]\n\
             lambda_fourier = {}\n\
             scale_weights = [{}]\n\n\
             [train]\n\
             steps = {}\n\
             batch = {}\n\
             patch = {}\n\
             lr_init = {}\n\
             lr_min = {}\n\
             weight_decay = {}\n\
             grad_clip = {}\n\
             log_every = {}\n\n\
             [data]\n\
             dir = \"{}\"\n\
             kinds = \"{}\"\n\
             n_images = {}\n\
             height = {}\n\
             width = {}\n",
            self.seed,
            m.base_width,
            list(&m.blocks_per_stage.map(|b| b.to_string()).to_vec()),
            m.variant.as_str(),
            m.io_mode.as_str(),
            m.in_channels,
            m.spatial,
            m.wavelet,
            m.fourier,
            m.fourier_gate_literal,
            ff(self.loss.lambda_fourier),
            list(&self.loss.scale_weights.map(ff).to_vec()),
            t.steps,
            t.batch,
            t.patch,
            ff(t.lr_init),
            ff(t.lr_min),
            ff(t.weight_decay),
            ff(t.grad_clip),
            t.log_every,
            self.data.dir,
            self.data.kinds,
            self.data.n_images,
            self.data.height,
            self.data.width,
        )
    }
}

fn flatten_toml(table: &toml::Table, prefix: &str, out: &mut Vec<(String, String)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten_toml(t, &key, out)?,
            toml::Value::String(s) => out.push((key, s.clone())),
            toml::Value::Integer(i) => out.push((key, i.to_string())),
            toml::Value::Float(f) => out.push((key, f.to_string())),
            toml::Value::Boolean(b) => out.push((key, b.to_string())),
            toml::Value::Array(items) => {
                let mut parts = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        toml::Value::Integer(i) => parts.push(i.to_string()),
                        toml::Value::Float(f) => parts.push(f.to_string()),
                        toml::Value::String(s) => parts.push(s.clone()),
                        other => {
                            return Err(Error::Config(format!(
                                "key {key:?}: unsupported array element {other:?}"
                            )))
                        }
                    }
                }
                out.push((key, parts.join(",")));
            }
            other => {
                return Err(Error::Config(format!("key {key:?}: unsupported value {other:?}")))
            }
        }
    }
    Ok(())
}

pub fn parse_kinds(s: &str) -> Result<Vec<Degradation>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        out.push(match part {
            "rain" | "rain_streaks" => Degradation::default_rain(),
            "haze" => Degradation::default_haze(),
            "blur" | "gaussian_blur" => Degradation::default_blur(),
            "lowlight" | "low_light" => Degradation::default_low_light(),
            other => {
                return Err(Error::Config(format!(
                    "unknown degradation {other:?} (use rain|haze|blur|lowlight)"
                )))
            }
        });
    }
    if out.is_empty() {
        return Err(Error::Config("data.kinds selects no degradations".into()));
    }
    Ok(out)
}

// ── Argument surface ─────────────────────────────────────────────────────

#[derive(Parser, Debug)]
#[command(name = "swformer", version, about = "multi-domain image restoration toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Train a model (fresh or resumed from <out>/checkpoint.swf)
    Train(TrainArgs),
    /// Restore a paired folder and report PSNR/SSIM
    Eval(EvalArgs),
    /// Restore PNGs with a trained model
    Infer(InferArgs),
    /// Residual spectra, sub-band energy tables, optional band swaps
    Analyze(AnalyzeArgs),
    /// Finite-difference audit of the analytic gradients
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic degradation corpus
    MakeCorpus(MakeCorpusArgs),
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. --set train.steps=100 (repeatable, wins last)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory for artifacts
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the model variant (s|m|l); on eval/infer picks the exit depth
    #[arg(long)]
    pub variant: Option<String>,
    /// Worker threads for per-image fan-out
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Paired folder root (degraded/ + clean/); defaults to data.dir
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Score on the luma channel instead of RGB
    #[arg(long)]
    pub y: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,
    /// PNG file or directory of PNGs
    #[arg(long)]
    pub input: PathBuf,
    /// Write 16-bit output
    #[arg(long)]
    pub sixteen_bit: bool,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Paired folder root (degraded/ + clean/); defaults to data.dir
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also swap these sub-bands between degraded and clean
    /// (comma list of ll|lh|hl|hh, or "all")
    #[arg(long)]
    pub swap: Option<String>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    /// Max relative error accepted
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Coordinates probed per parameter (0 = all)
    #[arg(long, default_value_t = 2)]
    pub coords: usize,
    /// Side length of the probe input
    #[arg(long, default_value_t = 16)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct MakeCorpusArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Write 16-bit PNGs
    #[arg(long)]
    pub sixteen_bit: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Eval(a) => cmd_eval(&a),
        Cmd::Infer(a) => cmd_infer(&a),
        Cmd::Analyze(a) => cmd_analyze(&a),
        Cmd::Gradcheck(a) => cmd_gradcheck(&a),
        Cmd::MakeCorpus(a) => cmd_make_corpus(&a),
    }
}

/// One-line machine-parsable error for stderr.
pub fn error_line(e: &Error) -> String {
    format!("error kind={} msg={:?}", e.kind(), e.to_string())
}

// ── Shared plumbing ──────────────────────────────────────────────────────

pub fn build_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_toml(&text)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &common.variant {
        cfg.model.variant = Variant::parse(v)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set wants key=value, got {kv:?}")))?;
        cfg.set_key(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// PNG writes go through a `.tmp.png` sibling so readers never see a
/// half-written file (the encoder picks its format by extension).
fn save_png_atomic<P: AsRef<Path>>(path: P, t: &Tensor<f32>, sixteen_bit: bool) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp.png");
    save_png(&tmp, t, sixteen_bit)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes config.toml + manifest.txt into `out`, returns the config text.
fn write_run_files(out: &Path, cfg: &RunConfig, command: &str) -> Result<String> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let text = cfg.to_toml_string();
    write_atomic(&out.join("config.toml"), text.as_bytes())?;
    let manifest = format!(
        "command={command}\nconfig_sha256={}\nseed={}\nversion={}\n",
        sha256_hex(&text),
        cfg.seed,
        env!("CARGO_PKG_VERSION"),
    );
    write_atomic(&out.join("manifest.txt"), manifest.as_bytes())?;
    Ok(text)
}

/// Splits `items` into contiguous chunks and maps them on scoped
/// threads; per-chunk results are concatenated in order, so output
/// order matches input order.
fn fan_out<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> Result<Vec<R>> + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return f(items);
    }
    let per = items.len().div_ceil(workers);
    let results: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            items.chunks(per).map(|chunk| s.spawn(|| f(chunk))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn load_training_pairs(cfg: &RunConfig) -> Result<Vec<PairedSample<f32>>> {
    if cfg.data.dir.is_empty() {
        make_corpus(
            cfg.data.n_images,
            cfg.data.height,
            cfg.data.width,
            &parse_kinds(&cfg.data.kinds)?,
            cfg.seed,
        )
    } else {
        load_paired_folder(Path::new(&cfg.data.dir))
    }
}

/// Rebuilds the network a checkpoint was trained with.
fn net_from_checkpoint(ck: &Checkpoint) -> Result<(RunConfig, SwformerNet<f32>)> {
    let cfg = RunConfig::from_toml(&ck.config_text)?;
    let net = SwformerNet::<f32>::new(&cfg.model, ck.seed)?;
    restore_into(ck, &net)?;
    Ok((cfg, net))
}

fn data_root(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.clone());
    }
    if !cfg.data.dir.is_empty() {
        return Ok(PathBuf::from(&cfg.data.dir));
    }
    Err(Error::Config("no data folder: pass --data or set data.dir".into()))
}

fn run_variant(flag: &Option<String>, constructed: Variant) -> Result<Variant> {
    match flag {
        Some(v) => Variant::parse(v),
        None => Ok(constructed),
    }
}

// ── Subcommands ──────────────────────────────────────────────────────────

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let out = &a.common.out;
    let cfg_text = write_run_files(out, &cfg, "train")?;

    let pairs = load_training_pairs(&cfg)?;
    let sampler = PatchSampler::new(pairs, cfg.train.patch, cfg.train.batch, cfg.seed)?;
    let net = SwformerNet::<f32>::new(&cfg.model, cfg.seed)?;
    let mut opt = AdamW::new(net.named_params(), cfg.train.weight_decay);
    if cfg.train.grad_clip > 0.0 {
        opt.grad_clip = Some(cfg.train.grad_clip);
    }

    let ckpt_path = out.join("checkpoint.swf");
    let mut start = 0u64;
    if ckpt_path.exists() {
        let ck = Checkpoint::load(&ckpt_path)?;
        if ck.config_text != cfg_text {
            return Err(Error::Checkpoint(
                "existing checkpoint was trained with a different config".into(),
            ));
        }
        restore_into(&ck, &net)?;
        restore_optim(&ck, &mut opt)?;
        start = opt.t;
        println!("resuming at step {start}");
    }

    let sched = Schedule {
        lr_init: cfg.train.lr_init,
        lr_min: cfg.train.lr_min,
        total_steps: cfg.train.steps,
    };
    let log_path = out.join("train_log.txt");
    let mut log_text = if start > 0 && log_path.exists() {
        std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?
    } else {
        String::new()
    };
    let chunk = cfg.train.log_every.max(1);
    let mut step = start;
    while step < cfg.train.steps {
        let end = (step + chunk).min(cfg.train.steps);
        let log = train_range(&net, &sampler, &mut opt, &cfg.loss, &sched, step..end)?;
        if let Some(last) = log.last() {
            println!("{}", last.to_line());
        }
        log_text.push_str(&log_to_lines(&log));
        write_atomic(&log_path, log_text.as_bytes())?;
        snapshot(&net, Some(&opt), cfg_text.as_str(), cfg.seed).save(&ckpt_path)?;
        step = end;
    }
    println!("checkpoint={}", ckpt_path.display());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let out = &a.common.out;
    write_run_files(out, &cfg, "eval")?;

    let ck = Checkpoint::load(&a.ckpt)?;
    let ck_cfg = RunConfig::from_toml(&ck.config_text)?;
    let run = run_variant(&a.common.variant, ck_cfg.model.variant)?;
    let root = data_root(&a.data, &cfg)?;
    let stems = paired_stems(&root)?;

    let rows = fan_out(&stems, a.common.workers, |chunk| {
        let (_, net) = net_from_checkpoint(&ck)?;
        let mut rows = Vec::with_capacity(chunk.len());
        for (stem, dpath, cpath) in chunk {
            let degraded = load_png::<f32>(dpath)?;
            let clean = load_png::<f32>(cpath)?;
            let restored = net.restore(&degraded, run)?;
            let (x, r) = if a.y {
                (to_y_channel(&restored)?, to_y_channel(&clean)?)
            } else {
                (restored, clean)
            };
            rows.push((stem.clone(), psnr(&x, &r, 1.0)?, ssim(&x, &r)?));
        }
        Ok(rows)
    })?;

    let mut report = MetricReport { y_channel: a.y, ..Default::default() };
    for (stem, p, s) in rows {
        report.push(stem, p, s);
    }
    write_atomic(&out.join("metrics.txt"), report.to_lines().as_bytes())?;
    print!("{}", report.to_lines());
    Ok(())
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let out = &a.common.out;
    write_run_files(out, &cfg, "infer")?;

    let ck = Checkpoint::load(&a.ckpt)?;
    let ck_cfg = RunConfig::from_toml(&ck.config_text)?;
    let run = run_variant(&a.common.variant, ck_cfg.model.variant)?;

    let mut inputs: Vec<PathBuf> = if a.input.is_dir() {
        let mut v = Vec::new();
        for entry in std::fs::read_dir(&a.input).map_err(|e| Error::io(&a.input, e))? {
            let p = entry.map_err(|e| Error::io(&a.input, e))?.path();
            if p.extension().and_then(|e| e.to_str()) == Some("png") {
                v.push(p);
            }
        }
        v
    } else {
        vec![a.input.clone()]
    };
    inputs.sort();
    if inputs.is_empty() {
        return Err(Error::Usage(format!("no png inputs under {}", a.input.display())));
    }

    let written = fan_out(&inputs, a.common.workers, |chunk| {
        let (_, net) = net_from_checkpoint(&ck)?;
        let mut done = Vec::with_capacity(chunk.len());
        for path in chunk {
            let x = load_png::<f32>(path)?;
            let restored = net.restore(&x, run)?;
            let name = path
                .file_name()
                .ok_or_else(|| Error::Usage(format!("bad input path {}", path.display())))?;
            let dest = out.join(name);
            save_png_atomic(&dest, &restored, a.sixteen_bit)?;
            done.push(dest);
        }
        Ok(done)
    })?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let out = &a.common.out;
    write_run_files(out, &cfg, "analyze")?;

    let swap: Option<Vec<Band>> = a.swap.as_deref().map(Band::parse_set).transpose()?;
    if let Some(bands) = &swap {
        if bands.is_empty() {
            eprintln!("warning: empty --swap band set, skipping swaps");
        }
    }
    let root = data_root(&a.data, &cfg)?;
    let stems = paired_stems(&root)?;

    let rows = fan_out(&stems, a.common.workers, |chunk| {
        let mut rows = Vec::with_capacity(chunk.len());
        for (stem, dpath, cpath) in chunk {
            let degraded = load_png::<f32>(dpath)?;
            let clean = load_png::<f32>(cpath)?;
            let rep = analyze_pair(&clean, &degraded)?;
            rep.write_panels(out, stem)?;
            if let Some(bands) = swap.as_ref().filter(|b| !b.is_empty()) {
                let (d2, c2) = swap_subbands(&degraded, &clean, bands)?;
                save_png_atomic(out.join(format!("{stem}_swap_degraded.png")), &d2, false)?;
                save_png_atomic(out.join(format!("{stem}_swap_clean.png")), &c2, false)?;
            }
            let mut line = format!("pair={stem}");
            for (i, name) in BAND_NAMES.iter().enumerate() {
                line.push_str(&format!(" band_{name}={:.9}", rep.energy_fractions[i]));
            }
            rows.push(line);
        }
        Ok(rows)
    })?;

    let table = rows.join("\n") + "\n";
    write_atomic(&out.join("energy.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let out = &a.common.out;
    write_run_files(out, &cfg, "gradcheck")?;
    if a.size < 8 || a.size % 4 != 0 {
        return Err(Error::Config(format!("--size must be a multiple of 4 and at least 8, got {}", a.size)));
    }

    let net = SwformerNet::<f64>::new(&cfg.model, cfg.seed)?;
    let shape = Shape::new(1, cfg.model.in_channels, a.size, a.size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD15EA5E);
    let mut draw = || {
        Tensor::<f64>::from_vec(
            (0..shape.numel()).map(|_| rng.random_range(0.0..1.0)).collect(),
            shape,
        )
    };
    let degraded = draw();
    let clean = draw();
    let targets = net.target_reps(&clean)?;
    let run = cfg.model.variant;
    let f = || {
        let outs = net.forward(&degraded, run, false)?;
        Ok(multi_domain_loss(&outs.exits, &targets, &cfg.loss)?.loss)
    };
    let params = net.named_params();
    let report = crate::tensor::grad_check(&f, &params, a.step, a.tol, a.coords, cfg.seed)?;
    let mut text = format!("{report}\n");

    // The objective is piecewise linear (absolute residuals); a parameter
    // whose step crosses a kink fails the secant even though its gradient
    // is right. A wrong gradient fails at every step, a kink artifact
    // collapses when the step shrinks, so retry failures at step/100.
    let mut refined = None;
    if !report.passed() {
        let failing: Vec<(String, Tensor<f64>)> = report
            .failures()
            .iter()
            .map(|e| {
                let p = params.iter().find(|(n, _)| *n == e.name).unwrap();
                (p.0.clone(), p.1.clone())
            })
            .collect();
        let fine =
            crate::tensor::grad_check(&f, &failing, a.step / 100.0, a.tol, a.coords, cfg.seed)?;
        text.push_str(&format!(
            "retry at step {:.1e} for {} nonsmooth-point candidate(s):\n{fine}\n",
            a.step / 100.0,
            failing.len()
        ));
        refined = Some(fine);
    }
    write_atomic(&out.join("gradcheck.txt"), text.as_bytes())?;
    print!("{text}");
    let (worst, passed) = match &refined {
        Some(fine) => (fine.worst(), fine.passed()),
        None => (report.worst(), report.passed()),
    };
    if !passed {
        return Err(Error::Usage(format!(
            "gradient check failed: worst rel_err {worst:.3e} > tol {:.3e}",
            a.tol
        )));
    }
    Ok(())
}

pub fn cmd_make_corpus(a: &MakeCorpusArgs) -> Result<()> {
    let cfg = build_config(&a.common)?;
    let out = &a.common.out;
    write_run_files(out, &cfg, "make-corpus")?;

    let kinds = parse_kinds(&cfg.data.kinds)?;
    let pairs =
        make_corpus::<f32>(cfg.data.n_images, cfg.data.height, cfg.data.width, &kinds, cfg.seed)?;
    save_corpus(out, &pairs, a.sixteen_bit)?;
    println!(
        "wrote {} pairs ({}x{}) under {}",
        pairs.len(),
        cfg.data.width,
        cfg.data.height,
        out.display()
    );
    Ok(())
}
