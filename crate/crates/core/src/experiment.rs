//! Experiment orchestration: run directories, the flat key-value config
//! format, and the commands the CLI binary dispatches to. Every command
//! echoes its effective configuration into the run directory before doing
//! work, so two runs with identical effective configs are comparable (and,
//! with fixed seeds, byte-identical in their primary outputs).

use crate::complexity::{self, compare, count_model, split_law, ComplexityReport};
use crate::data::{
    generate_corpus, load_frame_dir, read_manifest, CorpusConfig, ManifestEntry, Role,
};
use crate::error::{Error, Result};
use crate::models::{build_from_desc, Fraction, ModelDesc, UNetConfig, Variant};
use crate::scoring::{
    eval_auc, margin_report, psnr, render_roc_csv, render_scores_csv, DecisionConfig,
    MarginReport, Polarity, PsnrMode, ScoreSeries,
};
use crate::tensor::{Dtype, Element, Tensor};
use crate::training::{
    checkpoint_dtype, load_checkpoint, save_checkpoint, stack_frames, train, Checkpoint,
    Precision, TrainConfig,
};
use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Flat key-value config files
// ---------------------------------------------------------------------------

/// Parses `[section]` / `key = value` text. Comments start with `#`,
/// blank lines are skipped, keys may not repeat within a section.
fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("line {}: unterminated section {line:?}", ln + 1)))?
                .trim();
            if name.is_empty() {
                return Err(Error::Config(format!("line {}: empty section name", ln + 1)));
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", ln + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", ln + 1)));
        }
        if section.is_empty() {
            return Err(Error::Config(format!(
                "line {}: key {key:?} appears before any [section] header",
                ln + 1
            )));
        }
        let full = format!("{section}.{key}");
        if map.insert(full.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {full}", ln + 1)));
        }
    }
    Ok(map)
}

/// Pulls typed values out of a parsed config, tracking what was consumed so
/// unknown keys can be rejected wholesale.
struct KvTaker {
    map: BTreeMap<String, String>,
}

impl KvTaker {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<N: std::str::FromStr>(&mut self, key: &str, default: N) -> Result<N> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.map.keys().next() {
            return Err(Error::Config(format!("unknown config key {k}")));
        }
        Ok(())
    }
}

fn parse_on_off(v: &str, key: &str) -> Result<bool> {
    match v {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(Error::Config(format!("bad value {other:?} for {key}: expected on or off"))),
    }
}

fn parse_fraction(v: &str, key: &str) -> Result<Fraction> {
    let (n, d) = v
        .split_once('/')
        .ok_or_else(|| Error::Config(format!("bad value {v:?} for {key}: expected num/den")))?;
    let num = n.trim().parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))?;
    let den = d.trim().parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))?;
    Fraction::new(num, den)
}

// ---------------------------------------------------------------------------
// Variant selection
// ---------------------------------------------------------------------------

/// One ablation-table row: which architecture, and whether the inter-path
/// feature shift is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantSel {
    pub variant: Variant,
    pub shift: bool,
}

impl VariantSel {
    /// Row tag, used for checkpoint/log/score file names.
    pub fn tag(&self) -> String {
        let base = match self.variant {
            Variant::Baseline => "baseline",
            Variant::EncoderSplit => "cpnet075",
            Variant::FullSplit => "cpnet037",
        };
        if self.shift {
            format!("{base}+shift")
        } else {
            base.to_string()
        }
    }

    /// Parses tags like `baseline`, `cpnet075`, `cpnet037+shift`.
    pub fn parse(s: &str) -> Result<Self> {
        let (base, shift) = match s.strip_suffix("+shift") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let variant = match base {
            "baseline" => Variant::Baseline,
            "cpnet075" => Variant::EncoderSplit,
            "cpnet037" => Variant::FullSplit,
            other => {
                return Err(Error::Config(format!(
                    "unknown variant {other:?}: expected baseline, cpnet075, or cpnet037"
                )))
            }
        };
        if variant == Variant::Baseline && shift {
            return Err(Error::Config("baseline has no paths to shift between".into()));
        }
        Ok(VariantSel { variant, shift })
    }
}

/// The five desk-scale ablation rows, in table order.
pub fn default_ablation() -> Vec<VariantSel> {
    ["baseline", "cpnet075", "cpnet075+shift", "cpnet037", "cpnet037+shift"]
        .iter()
        .map(|t| VariantSel::parse(t).unwrap())
        .collect()
}

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

/// Merged, validated view of everything a command needs: dataset shape,
/// architecture, optimizer, and scoring settings, plus the run directory
/// all artifact paths are relative to.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    pub seed: u64,
    pub precision: Precision,
    pub corpus: CorpusConfig,
    pub sel: VariantSel,
    pub arch: UNetConfig,
    pub shift_fraction: Fraction,
    pub train: TrainConfig,
    pub decision: DecisionConfig,
    pub psnr_mode: PsnrMode,
    pub ablate: Vec<VariantSel>,
}

impl RunConfig {
    /// Builds the config for `run_dir` from an optional config file and
    /// `section.key=value` overrides (applied in order after the file).
    pub fn load(run_dir: &Path, config: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = match config {
            Some(p) => parse_kv(&std::fs::read_to_string(p)?)?,
            None => {
                let implicit = run_dir.join("config.ini");
                if implicit.is_file() {
                    parse_kv(&std::fs::read_to_string(&implicit)?)?
                } else {
                    BTreeMap::new()
                }
            }
        };
        for (k, v) in overrides {
            if !k.contains('.') {
                return Err(Error::Usage(format!(
                    "override {k:?} must be section.key (e.g. train.epochs)"
                )));
            }
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(run_dir, map)
    }

    fn from_map(run_dir: &Path, map: BTreeMap<String, String>) -> Result<Self> {
        let mut t = KvTaker { map };

        let seed: u64 = t.parse("run.seed", 7)?;
        let precision = match t.take("run.precision") {
            None => Precision::F32,
            Some(v) => Precision::parse(&v)?,
        };

        let corpus = CorpusConfig {
            width: t.parse("video.width", 64)?,
            height: t.parse("video.height", 64)?,
            train_videos: t.parse("video.train_videos", 16)?,
            train_length: t.parse("video.train_length", 150)?,
            test_videos: t.parse("video.test_videos", 8)?,
            test_length: t.parse("video.test_length", 100)?,
            n_sprites: t.parse("video.n_sprites", 3)?,
            speed_min: t.parse("video.speed_min", 0.8)?,
            speed_max: t.parse("video.speed_max", 2.2)?,
            seed,
        };

        let variant_s = t.take("model.variant").unwrap_or_else(|| "cpnet037".into());
        let shift = match t.take("model.shift") {
            None => variant_s != "baseline",
            Some(v) => parse_on_off(&v, "model.shift")?,
        };
        let sel = VariantSel::parse(&if shift && variant_s != "baseline" {
            format!("{variant_s}+shift")
        } else {
            variant_s.clone()
        })?;
        if variant_s == "baseline" && shift {
            return Err(Error::Config("baseline has no paths to shift between".into()));
        }

        let arch = UNetConfig {
            in_channels_per_frame: 3,
            n_frames: t.parse("model.n_frames", 4)?,
            base_channels: t.parse("model.base_channels", 32)?,
            depth: t.parse("model.depth", 3)?,
            out_channels: 3,
            input_h: corpus.height,
            input_w: corpus.width,
        };
        let shift_fraction = match t.take("model.shift_fraction") {
            None => Fraction::new(1, 4)?,
            Some(v) => parse_fraction(&v, "model.shift_fraction")?,
        };

        let train = TrainConfig {
            lr0: t.parse("train.lr0", 2e-4)?,
            beta1: t.parse("train.beta1", 0.9)?,
            beta2: t.parse("train.beta2", 0.999)?,
            adam_eps: t.parse("train.adam_eps", 1e-8)?,
            batch: t.parse("train.batch", 4)?,
            epochs: t.parse("train.epochs", 10)?,
            seed,
            precision,
            loss_mean: match t.take("train.loss_mean") {
                None => false,
                Some(v) => parse_on_off(&v, "train.loss_mean")?,
            },
        };

        let decision = DecisionConfig {
            gamma: t.parse("eval.gamma", 0.5)?,
            polarity: match t.take("eval.polarity") {
                None => Polarity::LowScoreAbnormal,
                Some(v) => Polarity::parse(&v)?,
            },
        };
        let psnr_mode = match t.take("eval.psnr_mode") {
            None => PsnrMode::Standard,
            Some(v) => PsnrMode::parse(&v)?,
        };

        let ablate = match t.take("ablate.variants") {
            None => default_ablation(),
            Some(v) => {
                let sels: Vec<VariantSel> = v
                    .split(',')
                    .map(|s| VariantSel::parse(s.trim()))
                    .collect::<Result<_>>()?;
                if sels.is_empty() {
                    return Err(Error::Config("ablate.variants is empty".into()));
                }
                sels
            }
        };

        t.finish()?;

        let cfg = RunConfig {
            run_dir: run_dir.to_path_buf(),
            seed,
            precision,
            corpus,
            sel,
            arch,
            shift_fraction,
            train,
            decision,
            psnr_mode,
            ablate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.decision.validate()?;
        self.desc().map(|_| ())
    }

    /// Model description for the selected variant.
    pub fn desc(&self) -> Result<ModelDesc> {
        self.desc_for(self.sel)
    }

    pub fn desc_for(&self, sel: VariantSel) -> Result<ModelDesc> {
        let desc = ModelDesc {
            variant: sel.variant,
            cfg: self.arch.clone(),
            shift_enabled: sel.shift,
            shift_fraction: self.shift_fraction,
        };
        if sel.variant != Variant::Baseline {
            crate::models::CPNetConfig {
                base: self.arch.clone(),
                split_encoder: true,
                split_decoder: sel.variant == Variant::FullSplit,
                shift_enabled: sel.shift,
                shift_fraction: self.shift_fraction,
            }
            .validate()?;
        }
        Ok(desc)
    }

    /// Canonical text form: every effective setting, defaults included.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "precision = {}", self.precision.name());
        let _ = writeln!(s);
        let _ = writeln!(s, "[video]");
        let _ = writeln!(s, "width = {}", self.corpus.width);
        let _ = writeln!(s, "height = {}", self.corpus.height);
        let _ = writeln!(s, "train_videos = {}", self.corpus.train_videos);
        let _ = writeln!(s, "train_length = {}", self.corpus.train_length);
        let _ = writeln!(s, "test_videos = {}", self.corpus.test_videos);
        let _ = writeln!(s, "test_length = {}", self.corpus.test_length);
        let _ = writeln!(s, "n_sprites = {}", self.corpus.n_sprites);
        let _ = writeln!(s, "speed_min = {}", self.corpus.speed_min);
        let _ = writeln!(s, "speed_max = {}", self.corpus.speed_max);
        let _ = writeln!(s);
        let _ = writeln!(s, "[model]");
        let base = VariantSel { variant: self.sel.variant, shift: false };
        let _ = writeln!(s, "variant = {}", base.tag());
        let _ = writeln!(s, "shift = {}", if self.sel.shift { "on" } else { "off" });
        let _ = writeln!(s, "n_frames = {}", self.arch.n_frames);
        let _ = writeln!(s, "base_channels = {}", self.arch.base_channels);
        let _ = writeln!(s, "depth = {}", self.arch.depth);
        let _ = writeln!(s, "shift_fraction = {}", self.shift_fraction);
        let _ = writeln!(s);
        let _ = writeln!(s, "[train]");
        let _ = writeln!(s, "lr0 = {}", self.train.lr0);
        let _ = writeln!(s, "beta1 = {}", self.train.beta1);
        let _ = writeln!(s, "beta2 = {}", self.train.beta2);
        let _ = writeln!(s, "adam_eps = {}", self.train.adam_eps);
        let _ = writeln!(s, "batch = {}", self.train.batch);
        let _ = writeln!(s, "epochs = {}", self.train.epochs);
        let _ = writeln!(s, "loss_mean = {}", if self.train.loss_mean { "on" } else { "off" });
        let _ = writeln!(s);
        let _ = writeln!(s, "[eval]");
        let _ = writeln!(s, "gamma = {}", self.decision.gamma);
        let _ = writeln!(s, "polarity = {}", self.decision.polarity.name());
        let _ = writeln!(s, "psnr_mode = {}", self.psnr_mode.name());
        let _ = writeln!(s);
        let _ = writeln!(s, "[ablate]");
        let tags: Vec<String> = self.ablate.iter().map(|v| v.tag()).collect();
        let _ = writeln!(s, "variants = {}", tags.join(","));
        s
    }

    /// Writes the effective config into the run directory.
    pub fn echo(&self) -> Result<()> {
        std::fs::create_dir_all(&self.run_dir)?;
        std::fs::write(self.run_dir.join("effective-config.ini"), self.render())?;
        Ok(())
    }

    // Artifact layout, all relative to the run directory.
    pub fn data_dir(&self) -> PathBuf {
        self.run_dir.join("data")
    }
    pub fn manifest_path(&self) -> PathBuf {
        self.data_dir().join("manifest.txt")
    }
    pub fn checkpoint_path(&self, sel: VariantSel) -> PathBuf {
        self.run_dir.join("models").join(format!("{}.ckpt", sel.tag()))
    }
    pub fn train_log_path(&self, sel: VariantSel) -> PathBuf {
        self.run_dir.join("logs").join(format!("train-{}.log", sel.tag()))
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.run_dir.join("eval")
    }
    pub fn analysis_dir(&self) -> PathBuf {
        self.run_dir.join("analysis")
    }
    pub fn ablation_dir(&self) -> PathBuf {
        self.run_dir.join("ablation")
    }
}

fn write_creating_dir(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

/// Generates the synthetic corpus into `<run>/data`. Refuses to touch an
/// already-populated data directory unless `force` is set, in which case
/// the directory is wiped and regenerated.
pub fn cmd_gen_data(cfg: &RunConfig, force: bool) -> Result<Vec<ManifestEntry>> {
    cfg.echo()?;
    let dir = cfg.data_dir();
    let populated = dir.is_dir() && dir.read_dir()?.next().is_some();
    if populated {
        if !force {
            return Err(Error::Config(format!(
                "data directory {} is already populated (pass --force to regenerate)",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(&dir)?;
    }
    let entries = generate_corpus(&dir, &cfg.corpus)?;
    let n_train = entries.iter().filter(|e| e.role == Role::Train).count();
    let n_test = entries.len() - n_train;
    println!(
        "wrote {n_train} train + {n_test} test videos ({}x{}, seed {}) under {}",
        cfg.corpus.width,
        cfg.corpus.height,
        cfg.corpus.seed,
        dir.display()
    );
    Ok(entries)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn manifest_or_hint(cfg: &RunConfig) -> Result<Vec<ManifestEntry>> {
    let path = cfg.manifest_path();
    if !path.is_file() {
        return Err(Error::Data(format!(
            "no dataset manifest at {} (run gen-data first)",
            path.display()
        )));
    }
    read_manifest(&path)
}

fn load_role_videos<T: Element>(
    cfg: &RunConfig,
    entries: &[ManifestEntry],
    role: Role,
) -> Result<Vec<(String, crate::data::FrameSequence<T>)>> {
    let mut out = Vec::new();
    for e in entries.iter().filter(|e| e.role == role) {
        let seq = load_frame_dir(&cfg.data_dir().join(&e.dir), cfg.arch.input_h, cfg.arch.input_w)?;
        out.push((e.dir.clone(), seq));
    }
    if out.is_empty() {
        return Err(Error::Data(format!("manifest lists no {} videos", role.name())));
    }
    Ok(out)
}

/// Outcome of training one variant.
pub struct TrainOutcome {
    pub sel: VariantSel,
    pub final_loss: f64,
    pub epochs_run: usize,
    pub checkpoint: PathBuf,
}

/// Trains the configured variant on the corpus and writes checkpoint + log.
/// With `resume`, continues from the existing checkpoint instead of
/// starting over (the schedule and batch order are identical either way).
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<TrainOutcome> {
    cfg.echo()?;
    let entries = manifest_or_hint(cfg)?;
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, cfg.sel, &entries, resume),
        Precision::F64 => train_typed::<f64>(cfg, cfg.sel, &entries, resume),
    }
}

fn train_typed<T: Element>(
    cfg: &RunConfig,
    sel: VariantSel,
    entries: &[ManifestEntry],
    resume: bool,
) -> Result<TrainOutcome> {
    let desc = cfg.desc_for(sel)?;
    let videos: Vec<Vec<Tensor<T>>> = load_role_videos::<T>(cfg, entries, Role::Train)?
        .into_iter()
        .map(|(_, seq)| seq.frames)
        .collect();

    let mut model = build_from_desc::<T>(&desc, cfg.seed)?;
    let ckpt_path = cfg.checkpoint_path(sel);
    let mut resume_state = None;
    let mut prior_log = String::new();
    if resume {
        if !ckpt_path.is_file() {
            return Err(Error::Checkpoint(format!(
                "cannot resume: no checkpoint at {}",
                ckpt_path.display()
            )));
        }
        let ckpt: Checkpoint<T> = load_checkpoint(&ckpt_path)?;
        if ckpt.desc != desc {
            return Err(Error::Checkpoint(format!(
                "checkpoint at {} was trained with a different model configuration",
                ckpt_path.display()
            )));
        }
        for (i, &loss) in ckpt.loss_history.iter().enumerate() {
            let _ = writeln!(prior_log, "epoch={} mean_loss={loss:.8e} resumed=1", i + 1);
        }
        resume_state = Some(ckpt.restore(&mut model)?);
    }

    let tag = sel.tag();
    println!("training {tag} ({} epochs, seed {})", cfg.train.epochs, cfg.seed);
    let mut log = prior_log;
    let ckpt = train(&mut model, &videos, &cfg.train, resume_state, |e| {
        let line = format!(
            "epoch={} lr={:.8e} mean_loss={:.8e} steps={}",
            e.epoch + 1,
            e.lr,
            e.mean_loss,
            e.steps
        );
        println!("  {line}");
        let _ = writeln!(log, "{line}");
    })?;
    write_creating_dir(&cfg.train_log_path(sel), &log)?;
    if let Some(parent) = ckpt_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_checkpoint(&ckpt_path, &ckpt)?;
    let final_loss = *ckpt.loss_history.last().unwrap_or(&f64::NAN);
    println!("saved {} (final mean loss {final_loss:.6e})", ckpt_path.display());
    Ok(TrainOutcome { sel, final_loss, epochs_run: ckpt.epoch, checkpoint: ckpt_path })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Outcome of evaluating one trained variant on the test split.
pub struct EvalOutcome {
    pub sel: VariantSel,
    pub auc: f64,
    pub margin: MarginReport,
    pub frames_scored: usize,
    pub n_videos: usize,
}

/// Scores the test videos with the trained model for the configured
/// variant: per-frame prediction error -> PSNR -> normalized scores ->
/// frame-level AUC and margins, written as CSV + report files.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutcome> {
    cfg.echo()?;
    let entries = manifest_or_hint(cfg)?;
    let ckpt_path = cfg.checkpoint_path(cfg.sel);
    if !ckpt_path.is_file() {
        return Err(Error::Checkpoint(format!(
            "no checkpoint at {} (run train first)",
            ckpt_path.display()
        )));
    }
    match checkpoint_dtype(&ckpt_path)? {
        Dtype::F32 => eval_typed::<f32>(cfg, cfg.sel, &entries),
        Dtype::F64 => eval_typed::<f64>(cfg, cfg.sel, &entries),
    }
}

fn eval_typed<T: Element>(
    cfg: &RunConfig,
    sel: VariantSel,
    entries: &[ManifestEntry],
) -> Result<EvalOutcome> {
    let ckpt_path = cfg.checkpoint_path(sel);
    let ckpt: Checkpoint<T> = load_checkpoint(&ckpt_path)?;
    let desc = ckpt.desc.clone();
    let mut model = build_from_desc::<T>(&desc, 0)?;
    ckpt.restore(&mut model)?;

    let videos = load_role_videos::<T>(cfg, entries, Role::Test)?;
    let window = desc.cfg.n_frames;
    let mut series = Vec::new();
    for (id, seq) in &videos {
        if seq.len() <= window {
            return Err(Error::Data(format!(
                "test video {id} has {} frames; scoring needs more than {window}",
                seq.len()
            )));
        }
        let mut psnrs = Vec::with_capacity(seq.len() - window);
        for t in window..seq.len() {
            let clip: Vec<Tensor<T>> = (t - window..t)
                .map(|f| stack_frames(&[&seq.frames[f]]))
                .collect::<Result<_>>()?;
            let pred = model.forward_predict(&clip)?;
            let gt = stack_frames(&[&seq.frames[t]])?;
            psnrs.push(psnr(&pred, &gt, cfg.psnr_mode)?);
        }
        series.push(ScoreSeries::new(
            id.clone(),
            window,
            psnrs,
            seq.labels[window..].to_vec(),
        )?);
    }

    let roc = eval_auc(&series)?;
    let margin = margin_report(&series)?;
    let tag = sel.tag();
    let eval_dir = cfg.eval_dir();
    write_creating_dir(
        &eval_dir.join(format!("scores-{tag}.csv")),
        &render_scores_csv(&series, &cfg.decision),
    )?;
    write_creating_dir(&eval_dir.join(format!("roc-{tag}.csv")), &render_roc_csv(&roc))?;
    let frames_scored: usize = series.iter().map(|s| s.psnr_db.len()).sum();
    let mut report = String::new();
    let _ = writeln!(report, "schema=eval-report-v1");
    let _ = writeln!(report, "variant={tag}");
    let _ = writeln!(report, "auc={:.4}", roc.auc);
    let _ = writeln!(report, "auc_full={:.17e}", roc.auc);
    let _ = writeln!(report, "n_videos={}", videos.len());
    let _ = writeln!(report, "frames_scored={frames_scored}");
    let _ = writeln!(report, "psnr_normal={:.6}", margin.psnr_normal);
    let _ = writeln!(report, "psnr_abnormal={:.6}", margin.psnr_abnormal);
    let _ = writeln!(report, "psnr_margin={:.6}", margin.psnr_margin);
    let _ = writeln!(report, "score_normal={:.6}", margin.score_normal);
    let _ = writeln!(report, "score_abnormal={:.6}", margin.score_abnormal);
    let _ = writeln!(report, "score_margin={:.6}", margin.score_margin);
    let _ = writeln!(report, "score_margin_full={:.17e}", margin.score_margin);
    let _ = writeln!(report, "n_normal={}", margin.n_normal);
    let _ = writeln!(report, "n_abnormal={}", margin.n_abnormal);
    let _ = writeln!(report, "gamma={}", cfg.decision.gamma);
    let _ = writeln!(report, "polarity={}", cfg.decision.polarity.name());
    let _ = writeln!(report, "psnr_mode={}", cfg.psnr_mode.name());
    write_creating_dir(&eval_dir.join(format!("report-{tag}.txt")), &report)?;
    println!(
        "{tag}: auc {:.4}, score margin {:.4}, psnr margin {:.2} dB over {frames_scored} frames",
        roc.auc, margin.score_margin, margin.psnr_margin
    );
    Ok(EvalOutcome { sel, auc: roc.auc, margin, frames_scored, n_videos: videos.len() })
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

/// Per-variant cost analysis: a report file per variant plus a ratio table
/// against the baseline, including the interior-layer quartering check.
pub struct AnalyzeOutcome {
    pub reports: Vec<(VariantSel, ComplexityReport)>,
    pub table: String,
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeOutcome> {
    cfg.echo()?;
    let dir = cfg.analysis_dir();
    let sels = default_ablation();
    let mut reports = Vec::new();
    for sel in &sels {
        let model = build_from_desc::<f32>(&cfg.desc_for(*sel)?, 0)?;
        let report = count_model(&model)?;
        let tag = sel.tag();
        write_creating_dir(&dir.join(format!("{tag}.txt")), &complexity::render_text(&report))?;
        write_creating_dir(&dir.join(format!("{tag}.kv")), &complexity::render_kv(&report))?;
        reports.push((*sel, report));
    }
    let baseline = &reports[0].1;

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<16} {:>14} {:>10} {:>8} {:>8} {:>10}",
        "variant", "macs", "params", "macs%", "params%", "interior%"
    );
    for (sel, report) in &reports {
        let cmp = compare(report, baseline)?;
        let interior = if sel.variant == Variant::Baseline {
            "-".to_string()
        } else {
            let law = split_law(report, baseline, cfg.arch.n_frames as u64)?;
            format!(
                "{:.1}%",
                100.0 * law.candidate_interior_macs as f64 / law.reference_twin_macs as f64
            )
        };
        let _ = writeln!(
            table,
            "{:<16} {:>14} {:>10} {:>7.2}% {:>7.2}% {:>10}",
            sel.tag(),
            report.total_macs,
            report.total_params,
            cmp.macs_percent(),
            cmp.params_percent(),
            interior
        );
    }
    write_creating_dir(&dir.join("ratios.txt"), &table)?;
    print!("{table}");
    Ok(AnalyzeOutcome { reports, table })
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// One summary row of the ablation table.
pub struct AblationRow {
    pub sel: VariantSel,
    pub macs: u128,
    pub params: u64,
    pub final_loss: f64,
    pub auc: f64,
    pub score_margin: f64,
    pub psnr_margin: f64,
}

pub struct AblateOutcome {
    pub rows: Vec<AblationRow>,
    pub summary_csv: String,
    pub summary_table: String,
}

/// Trains and evaluates every configured variant from scratch and writes
/// one summary table. Deterministic per seed: rerunning with the same
/// effective config reproduces the summary byte for byte.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblateOutcome> {
    cfg.echo()?;
    let entries = manifest_or_hint(cfg)?;
    let mut rows = Vec::new();
    for sel in cfg.ablate.clone() {
        let trained = match cfg.precision {
            Precision::F32 => train_typed::<f32>(cfg, sel, &entries, false)?,
            Precision::F64 => train_typed::<f64>(cfg, sel, &entries, false)?,
        };
        let evaled = match cfg.precision {
            Precision::F32 => eval_typed::<f32>(cfg, sel, &entries)?,
            Precision::F64 => eval_typed::<f64>(cfg, sel, &entries)?,
        };
        let model = build_from_desc::<f32>(&cfg.desc_for(sel)?, 0)?;
        let report = count_model(&model)?;
        rows.push(AblationRow {
            sel,
            macs: report.total_macs,
            params: report.total_params,
            final_loss: trained.final_loss,
            auc: evaled.auc,
            score_margin: evaled.margin.score_margin,
            psnr_margin: evaled.margin.psnr_margin,
        });
    }

    let mut csv = String::from("variant,macs,params,final_loss,auc,score_margin,psnr_margin\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{:.6e},{:.4},{:.4},{:.4}",
            r.sel.tag(),
            r.macs,
            r.params,
            r.final_loss,
            r.auc,
            r.score_margin,
            r.psnr_margin
        );
    }
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<16} {:>14} {:>10} {:>12} {:>7} {:>13} {:>12}",
        "variant", "macs", "params", "final_loss", "auc", "score_margin", "psnr_margin"
    );
    for r in &rows {
        let _ = writeln!(
            table,
            "{:<16} {:>14} {:>10} {:>12.6e} {:>7.4} {:>13.4} {:>12.4}",
            r.sel.tag(),
            r.macs,
            r.params,
            r.final_loss,
            r.auc,
            r.score_margin,
            r.psnr_margin
        );
    }
    let dir = cfg.ablation_dir();
    write_creating_dir(&dir.join("summary.csv"), &csv)?;
    write_creating_dir(&dir.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(AblateOutcome { rows, summary_csv: csv, summary_table: table })
}
