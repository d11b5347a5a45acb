use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use pixlm::checkpoint::Tensor;
use pixlm::noise::{self, SweepConfig, SweepModel};
use pixlm::plot::{LinePlot, Series};
use pixlm::train::{self, HeadConfig, TrainEvent};
use pixlm::{
    BpeTrainer, BpeVocab, Checkpoint, EmbeddingMode, MetricsReport, MetricsRow, Model, ModelConfig, NoiseDictionary,
    NoiseMode, NoiseSpec, RenderConfig, Renderer, Settings, TrainConfig, VocabAtlas,
};

use crate::error::{invalid, require, CliError};
use crate::manifest::RunManifest;
use crate::Common;

const STANDARD_LEVELS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Published perplexities of the large reference runs at the standard levels,
/// drawn beside measured curves for orientation.
const REFERENCE_TOKEN_PPL: [f64; 6] = [269.0, 18581.0, 46543.0, 63840.0, 73288.0, 79457.0];
const REFERENCE_PIXEL_PPL: [f64; 6] = [139.0, 185.0, 242.0, 311.0, 393.0, 485.0];

fn resolve(common: &Common) -> Result<Settings> {
    let mut s = Settings::preset(&common.preset).map_err(|e| CliError::new("invalid_argument", e.to_string()))?;
    if let Some(path) = &common.config {
        require(path)?;
        s.extend(&Settings::load(path).map_err(|e| invalid(path, e))?);
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::new("invalid_argument", format!("--set expects KEY=VALUE, got `{kv}`")))?;
        s.set(k.trim(), v.trim()).map_err(|e| CliError::new("invalid_argument", e.to_string()))?;
    }
    if let Some(seed) = common.seed {
        s.set("seed", seed.to_string()).expect("seed is a known key");
    }
    Ok(s)
}

fn settings_error(e: impl std::fmt::Display) -> CliError {
    CliError::new("invalid_config", e.to_string())
}

fn seed_of(s: &Settings) -> Result<u64> {
    Ok(s.parsed::<u64>("seed").map_err(settings_error)?.unwrap_or(0))
}

fn renderer(s: &Settings) -> Result<Renderer> {
    let cfg = RenderConfig::from_settings(s, &RenderConfig::default()).map_err(settings_error)?;
    if let Some(font) = &cfg.font_file {
        require(font)?;
    }
    Ok(Renderer::new(cfg).map_err(|e| CliError::new("invalid_config", e.to_string()))?)
}

fn model_config(s: &Settings, mode: Option<EmbeddingMode>) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::from_settings(s, &ModelConfig::desk(EmbeddingMode::Pixel)).map_err(settings_error)?;
    if let Some(mode) = mode {
        let mut with = cfg.with_mode(mode);
        if mode == EmbeddingMode::Pixel {
            with = ModelConfig::from_settings(s, &with).map_err(settings_error)?;
            with.embedding_mode = mode;
        }
        cfg = with;
    }
    Ok(cfg)
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    Ok(TrainConfig::from_settings(s, &TrainConfig::desk()).map_err(settings_error)?)
}

fn head_config(s: &Settings) -> Result<HeadConfig> {
    let mut cfg = HeadConfig { seed: seed_of(s)?, ..HeadConfig::default() };
    s.read("head_epochs", &mut cfg.epochs).map_err(settings_error)?;
    s.read("head_lr", &mut cfg.lr).map_err(settings_error)?;
    Ok(cfg)
}

/// Non-blank lines of a text file; an empty file is an error naming it.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| invalid(path, e))?;
    let lines: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if lines.is_empty() {
        return Err(CliError::empty(path).into());
    }
    Ok(lines)
}

fn read_labeled(path: &Path) -> Result<Vec<(usize, String)>> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| invalid(path, e))?;
    let rows = pixlm::corpus::parse_labeled(&text).map_err(|e| invalid(path, e))?;
    if rows.is_empty() {
        return Err(CliError::empty(path).into());
    }
    Ok(rows)
}

fn load_vocab(path: &Path) -> Result<BpeVocab> {
    require(path)?;
    Ok(BpeVocab::load(path).map_err(|e| invalid(path, e))?)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require(path)?;
    Ok(Checkpoint::load(path).map_err(|e| invalid(path, e))?)
}

fn load_dict(path: Option<&Path>) -> Result<NoiseDictionary> {
    match path {
        Some(p) => {
            require(p)?;
            Ok(NoiseDictionary::load(p).map_err(|e| invalid(p, e))?)
        }
        None => Ok(NoiseDictionary::bundled()),
    }
}

/// The atlas a pixel model reads: `path` if given, otherwise rebuilt from
/// the vocabulary. Its renderer fingerprint must match the checkpoint.
fn atlas_for(model: &Model<f32>, path: Option<&Path>, renderer: &Renderer, vocab: &BpeVocab) -> Result<Option<VocabAtlas>> {
    if model.config.embedding_mode == EmbeddingMode::Token {
        return Ok(None);
    }
    let atlas = match path {
        Some(p) => {
            require(p)?;
            VocabAtlas::restore_for(p, renderer).map_err(|e| invalid(p, e))?
        }
        None => VocabAtlas::from_vocab(vocab, renderer)?,
    };
    if model.atlas_hash != Some(atlas.config_hash()) {
        return Err(CliError::new(
            "atlas_mismatch",
            "atlas was rendered with different settings than the checkpoint was trained on",
        )
        .into());
    }
    Ok(Some(atlas))
}

fn check_vocab(model: &Model<f32>, vocab: &BpeVocab, path: &Path) -> Result<()> {
    if vocab.len() > model.config.vocab_size {
        return Err(CliError::at(
            "vocab_mismatch",
            path,
            format!("vocabulary has {} entries but the model predicts {}", vocab.len(), model.config.vocab_size),
        )
        .into());
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

fn ids(vocab: &BpeVocab, text: &str) -> Vec<usize> {
    vocab.encode(text).into_iter().map(|t| t as usize).collect()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_loss_csv(path: &Path, curve: &[train::LossPoint]) -> Result<()> {
    let mut out = String::from("step,loss,lr\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.step, p.loss, p.lr));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Mean perplexity per model over seeds, against noise level.
fn ppl_plot(report: &MetricsReport, corpus: &str, models: &[String], with_reference: bool) -> LinePlot {
    let mut levels: Vec<f64> = report.rows.iter().map(|r| r.noise_p).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let mut series: Vec<Series> = models
        .iter()
        .map(|m| Series {
            name: m.clone(),
            points: levels.iter().filter_map(|&p| report.mean_ppl(m, corpus, p).map(|v| (p, v))).collect(),
        })
        .collect();
    if with_reference {
        for (name, values) in [("ref token", REFERENCE_TOKEN_PPL), ("ref pixel", REFERENCE_PIXEL_PPL)] {
            series.push(Series { name: name.into(), points: STANDARD_LEVELS.iter().copied().zip(values).collect() });
        }
    }
    LinePlot {
        title: format!("perplexity vs noise ({corpus})"),
        x_label: "noise p".into(),
        y_label: "ppl".into(),
        log_y: true,
        series,
    }
}

fn save_plots(plot: &LinePlot, dir: &Path, name: &str, manifest: &mut RunManifest) -> Result<()> {
    for ext in ["pgm", "png"] {
        let path = dir.join(format!("{name}.{ext}"));
        plot.save(&path).with_context(|| format!("writing {}", path.display()))?;
        manifest.output(&path);
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TokenizerTrain {
    /// Training text files, comma separated or repeated.
    #[arg(long, required = true, value_delimiter = ',')]
    corpus: Vec<PathBuf>,
    /// Target vocabulary size; defaults to the `vocab_size` setting.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Disable `<0xNN>` byte tokens.
    #[arg(long)]
    no_byte_fallback: bool,
    #[arg(long)]
    out: PathBuf,
}

impl TokenizerTrain {
    pub fn run(&self, common: &Common) -> Result<()> {
        let s = resolve(common)?;
        let mut m = RunManifest::start("tokenizer-train", &s);
        let mut lines = Vec::new();
        for path in &self.corpus {
            lines.extend(read_lines(path)?);
            m.input(path)?;
        }
        let size = match self.vocab_size {
            Some(n) => n,
            None => s.parsed("vocab_size").map_err(settings_error)?.unwrap_or(512),
        };
        let vocab = BpeTrainer::new(size)
            .byte_fallback(!self.no_byte_fallback)
            .train(&lines)
            .map_err(|e| CliError::new("invalid_argument", e.to_string()))?;
        if vocab.len() < size {
            log::warn!("corpus supports only {} of the requested {size} entries", vocab.len());
        }
        ensure_parent(&self.out)?;
        vocab.save(&self.out).with_context(|| format!("writing {}", self.out.display()))?;
        log::info!("{} entries, {} merges -> {}", vocab.len(), vocab.num_merges(), self.out.display());
        m.config([("vocab_size", size.to_string().as_str())]);
        m.seeds.push(seed_of(&s)?);
        m.output(&self.out);
        m.finish(&self.out)?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct AtlasBuild {
    /// Tokenizer file from `tokenizer-train`.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

impl AtlasBuild {
    pub fn run(&self, common: &Common) -> Result<()> {
        let s = resolve(common)?;
        let mut m = RunManifest::start("atlas-build", &s);
        let vocab = load_vocab(&self.vocab)?;
        m.input(&self.vocab)?;
        let r = renderer(&s)?;
        let atlas = VocabAtlas::from_vocab(&vocab, &r)?;
        ensure_parent(&self.out)?;
        atlas.persist(&self.out).with_context(|| format!("writing {}", self.out.display()))?;
        log::info!("{} rows of {}x{} -> {}", atlas.len(), atlas.height(), atlas.width(), self.out.display());
        m.config(RenderConfig::from_settings(&s, &RenderConfig::default()).map_err(settings_error)?.to_settings().iter());
        m.seeds.push(seed_of(&s)?);
        m.output(&self.out);
        m.finish(&self.out)?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Render {
    #[arg(long)]
    text: String,
    /// `.png` writes PNG; anything else writes binary PGM.
    #[arg(long)]
    out: PathBuf,
}

impl Render {
    pub fn run(&self, common: &Common) -> Result<()> {
        let s = resolve(common)?;
        let mut m = RunManifest::start("render", &s);
        let r = renderer(&s)?;
        let missing = r.missing_chars(&self.text);
        if !missing.is_empty() {
            log::warn!("font has no glyph for {missing:?}");
        }
        let img = r.render_word(&self.text);
        ensure_parent(&self.out)?;
        pixlm::render::save_image(&img, &self.out).with_context(|| format!("writing {}", self.out.display()))?;
        m.config(r.config().to_settings().iter());
        m.config([("text", self.text.as_str())]);
        m.seeds.push(seed_of(&s)?);
        m.output(&self.out);
        m.finish(&self.out)?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Pretrain {
    #[arg(long)]
    vocab: PathBuf,
    /// One document per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Prebuilt atlas; rebuilt from the vocabulary when omitted.
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// pixel or token; defaults to the `embedding_mode` setting.
    #[arg(long)]
    mode: Option<EmbeddingMode>,
    /// Checkpoint path; the loss curve goes to `<out>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
}

impl Pretrain {
    pub fn run(&self, common: &Common) -> Result<()> {
        let s = resolve(common)?;
        let mut m = RunManifest::start("pretrain", &s);
        let lines = read_lines(&self.corpus)?;
        m.input(&self.corpus)?;
        let vocab = load_vocab(&self.vocab)?;
        m.input(&self.vocab)?;
        let mut mcfg = model_config(&s, self.mode)?;
        if mcfg.vocab_size != vocab.len() {
            log::info!("vocab_size set to {} to match {}", vocab.len(), self.vocab.display());
            mcfg.vocab_size = vocab.len();
        }
        let tcfg = train_config(&s)?;
        let atlas = match mcfg.embedding_mode {
            EmbeddingMode::Token => None,
            EmbeddingMode::Pixel => {
                let r = renderer(&s)?;
                Some(match &self.atlas {
                    Some(p) => {
                        require(p)?;
                        m.input(p)?;
                        VocabAtlas::restore_for(p, &r).map_err(|e| invalid(p, e))?
                    }
                    None => VocabAtlas::from_vocab(&vocab, &r)?,
                })
            }
        };
        let docs = train::tokenize_corpus(&vocab, &lines);
        let mut model = Model::<f32>::new(mcfg.clone(), atlas.as_ref())
            .map_err(|e| CliError::new("invalid_config", e.to_string()))?;
        log::info!("{} parameters, {} steps", model.parameter_count(), tcfg.steps);
        ensure_parent(&self.out)?;
        let (bos, eos) = (vocab.bos() as usize, vocab.eos() as usize);
        let mut save_error = None;
        let curve = train::train(&mut model, atlas.as_ref(), &tcfg, &docs, bos, eos, |e| match e {
            TrainEvent::Log(p) => log::info!("step {:>6} loss {:.4} lr {:.2e}", p.step, p.loss, p.lr),
            TrainEvent::Checkpoint { step, model } => {
                if let Err(e) = Checkpoint::from_model(model).save(&self.out) {
                    save_error.get_or_insert(e);
                } else {
                    log::info!("checkpoint at step {step}");
                }
            }
        })
        .map_err(|e| CliError::new("training_failed", e.to_string()))?;
        if let Some(e) = save_error {
            return Err(e.into());
        }
        Checkpoint::from_model(&model).save(&self.out)?;
        let loss_path = with_suffix(&self.out, ".loss.csv");
        write_loss_csv(&loss_path, &curve)?;
        m.config(mcfg.to_settings().iter());
        m.config(tcfg.to_settings().iter());
        m.seeds.push(tcfg.seed);
        m.output(&self.out);
        m.output(&loss_path);
        m.finish(&self.out)?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct EvalPpl {
    /// Checkpoint from `pretrain`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// Metrics CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl EvalPpl {
    pub fn run(&self, common: &Common) -> Result<()> {
        let s = resolve(common)?;
        let mut m = RunManifest::start("eval-ppl", &s);
        let lines = read_lines(&self.corpus)?;
        m.input(&self.corpus)?;
        let vocab = load_vocab(&self.vocab)?;
        m.input(&self.vocab)?;
        let model: Model<f32> = load_checkpoint(&self.model)?.into_model();
        m.input(&self.model)?;
        check_vocab(&model, &vocab, &self.vocab)?;
        let r = renderer(&s)?;
        let atlas = atlas_for(&model, self.atlas.as_deref(), &r, &vocab)?;
        let docs = train::tokenize_corpus(&vocab, &lines);
        let nll = train::perplexity(&model, atlas.as_ref(), &docs, vocab.bos() as usize, vocab.eos() as usize)
            .map_err(|e| CliError::new("evaluation_failed", e.to_string()))?;
        let mut row = MetricsRow::new(&stem(&self.model), &stem(&self.corpus), 0.0);
        row.ppl = nll.perplexity();
        row.tokens = Some(nll.tokens);
        let seed = seed_of(&s)?;
        row.seed = Some(seed);
        let report = MetricsReport { rows: vec![row] };
        m.seeds.push(seed);
        match &self.out {
            Some(out) => {
                ensure_parent(out)?;
                report.write_csv(out).with_context(|| format!("writing {}", out.display()))?;
                m.output(out);
                m.finish(out)?;
            }
            None => print!("{}", report.to_csv()),
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Finetune {
    /// Backbone checkpoint; it is read, never modified.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// `label<TAB>text` lines used to fit the head.
    #[arg(long)]
    train: PathBuf,
    /// `label<TAB>text` lines used for reporting; defaults to `--train`.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// Noise levels at which the test set is scored.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    levels: Vec<f64>,
    /// Homoglyph dictionary; the bundled one when omitted.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Output checkpoint holding the backbone and the `classifier.*` head;
    /// metrics go to `<out>.metrics.csv`.
    #[arg(long)]
    out: PathBuf,
}

impl Finetune {
    pub fn run(&self, common: &Common) -> Result<()> {
        let s = resolve(common)?;
        let mut m = RunManifest::start("finetune", &s);
        let train_rows = read_labeled(&self.train)?;
        m.input(&self.train)?;
        let test_path = self.test.clone().unwrap_or_else(|| self.train.clone());
        let test_rows = if self.test.is_some() { read_labeled(&test_path)? } else { train_rows.clone() };
        if self.test.is_some() {
            m.input(&test_path)?;
        }
        let vocab = load_vocab(&self.vocab)?;
        m.input(&self.vocab)?;
        let ckpt = load_checkpoint(&self.model)?;
        m.input(&self.model)?;
        let model: Model<f32> = ckpt.clone().into_model();
        check_vocab(&model, &vocab, &self.vocab)?;
        let r = renderer(&s)?;
        let atlas = atlas_for(&model, self.atlas.as_deref(), &r, &vocab)?;
        let dict = load_dict(self.dict.as_deref())?;
        for &p in &self.levels {
            NoiseSpec::new(p, 0).map_err(|e| CliError::new("invalid_argument", e.to_string()))?;
        }
        let hcfg = head_config(&s)?;
        let before = model.params.checksum();
        let encode = |rows: &[(usize, String)]| -> Vec<(usize, Vec<usize>)> {
            rows.iter().map(|(l, t)| (*l, ids(&vocab, t))).collect()
        };
        let (train_ex, test_ex) = (encode(&train_rows), encode(&test_rows));
        let (head, fit, degenerate) =
            train::finetune_classifier(&model, atlas.as_ref(), &train_ex, vocab.bos() as usize, &hcfg)
                .map_err(|e| CliError::new("training_failed", e.to_string()))?;
        log::info!("train accuracy {:.3}{}", fit.accuracy, if degenerate { " (single class)" } else { "" });
        let name = stem(&self.model);
        let corpus = stem(&test_path);
        let sm = SweepModel { name: &name, model: &model, atlas: atlas.as_ref() };
        let noise_seed = noise::cell_seed(hcfg.seed, &corpus);
        let mut report = MetricsReport::default();
        for &p in &self.levels {
            let spec = NoiseSpec::new(p, noise_seed).expect("validated above");
            let cm = noise::noised_classification(&sm, &head, &vocab, Some(&r), &test_ex, &spec, &dict)?;
            log::info!("p={p} accuracy {:.3} precision {:.3} recall {:.3}", cm.accuracy, cm.precision, cm.recall);
            let mut row = MetricsRow::new(&name, &corpus, p);
            (row.acc, row.prec, row.rec, row.tokens, row.seed) =
                (Some(cm.accuracy), Some(cm.precision), Some(cm.recall), Some(cm.count), Some(hcfg.seed));
            report.push(row);
        }
        let after = model.params.checksum();
        if before != after {
            return Err(CliError::new("backbone_modified", "backbone checksum changed during fine-tuning").into());
        }
        let mut out = ckpt;
        let (h, c) = head.weight.dim();
        out.extras.insert(
            "classifier.weight".into(),
            Tensor { shape: vec![h, c], values: head.weight.iter().copied().collect() },
        );
        out.extras.insert("classifier.bias".into(), Tensor { shape: vec![c], values: head.bias.to_vec() });
        ensure_parent(&self.out)?;
        out.save(&self.out)?;
        let metrics_path = with_suffix(&self.out, ".metrics.csv");
        report.write_csv(&metrics_path)?;
        let hex: String = before.iter().map(|b| format!("{b:02x}")).collect();
        m.config([
            ("head_epochs", hcfg.epochs.to_string().as_str()),
            ("head_lr", hcfg.lr.to_string().as_str()),
            ("backbone_checksum", hex.as_str()),
        ]);
        m.seeds.push(hcfg.seed);
        m.output(&self.out);
        m.output(&metrics_path);
        m.finish(&self.out)?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct NoiseSweep {
    /// Checkpoints, comma separated; each is named by its file stem.
    #[arg(long, required = true, value_delimiter = ',')]
    models: Vec<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    levels: Vec<f64>,
    /// Homoglyph dictionary; the bundled one when omitted.
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    /// Atlas for pixel models; rebuilt from the vocabulary when omitted.
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// Noise seeds; defaults to the `seed` setting.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// fixed or retokenize.
    #[arg(long, default_value = "fixed")]
    mode: NoiseMode,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
}

impl NoiseSweep {
    pub fn run(&self, common: &Common) -> Result<()> {
        let s = resolve(common)?;
        let mut m = RunManifest::start("noise-sweep", &s);
        let lines = read_lines(&self.corpus)?;
        m.input(&self.corpus)?;
        let vocab = load_vocab(&self.vocab)?;
        m.input(&self.vocab)?;
        let dict = load_dict(self.dict.as_deref())?;
        if let Some(d) = &self.dict {
            m.input(d)?;
        }
        let r = renderer(&s)?;
        let mut loaded = Vec::new();
        for path in &self.models {
            let model: Model<f32> = load_checkpoint(path)?.into_model();
            m.input(path)?;
            check_vocab(&model, &vocab, &self.vocab)?;
            let atlas = atlas_for(&model, self.atlas.as_deref(), &r, &vocab)?;
            let mut name = stem(path);
            if loaded.iter().any(|(n, _, _): &(String, _, _)| *n == name) {
                name = format!("{name}_{}", loaded.len());
            }
            loaded.push((name, model, atlas));
        }
        let sweep_models: Vec<SweepModel<'_>> =
            loaded.iter().map(|(n, model, atlas)| SweepModel { name: n, model, atlas: atlas.as_ref() }).collect();
        let seeds = if self.seeds.is_empty() { vec![seed_of(&s)?] } else { self.seeds.clone() };
        let corpus = stem(&self.corpus);
        let cfg = SweepConfig { corpus_name: corpus.clone(), levels: self.levels.clone(), seeds: seeds.clone(), mode: self.mode };
        let docs = train::tokenize_corpus(&vocab, &lines);
        let report = noise::robustness_sweep(&sweep_models, &vocab, Some(&r), &docs, &dict, &cfg)
            .map_err(|e| CliError::new("invalid_argument", e.to_string()))?;
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let csv = self.out.join("metrics.csv");
        report.write_csv(&csv)?;
        m.output(&csv);
        let names: Vec<String> = loaded.iter().map(|(n, _, _)| n.clone()).collect();
        save_plots(&ppl_plot(&report, &corpus, &names, false), &self.out, "ppl", &mut m)?;
        m.config([("mode", self.mode.to_string().as_str())]);
        m.seeds = seeds;
        m.finish(&self.out)?;
        Ok(())
    }
}

#[derive(Args, Debug)]
pub struct Compare {
    /// Training text; the bundled 200-sentence corpus when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Evaluation text; the training corpus when omitted.
    #[arg(long)]
    eval_corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    levels: Vec<f64>,
    /// Noise seeds; defaults to the `seed` setting.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Homoglyph dictionary; the bundled one when omitted.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Output directory for the tokenizer, atlas, checkpoints and report.
    #[arg(long, default_value = "compare-out")]
    out: PathBuf,
}

impl Compare {
    pub fn run(&self, common: &Common) -> Result<()> {
        let s = resolve(common)?;
        let mut m = RunManifest::start("compare", &s);
        let (train_lines, train_name) = match &self.corpus {
            Some(p) => {
                let lines = read_lines(p)?;
                m.input(p)?;
                (lines, stem(p))
            }
            None => (
                pixlm::corpus::bundled_sentences().into_iter().map(String::from).collect(),
                "bundled".to_string(),
            ),
        };
        let (eval_lines, eval_name) = match &self.eval_corpus {
            Some(p) => {
                let lines = read_lines(p)?;
                m.input(p)?;
                (lines, stem(p))
            }
            None => (train_lines.clone(), train_name.clone()),
        };
        let dict = load_dict(self.dict.as_deref())?;
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;

        let pixel_cfg = model_config(&s, Some(EmbeddingMode::Pixel))?;
        let tcfg = train_config(&s)?;
        let vocab = BpeTrainer::new(pixel_cfg.vocab_size)
            .train(&train_lines)
            .map_err(|e| CliError::new("invalid_argument", e.to_string()))?;
        let vocab_path = self.out.join("tokenizer.txt");
        vocab.save(&vocab_path)?;
        m.output(&vocab_path);
        let r = renderer(&s)?;
        let atlas = VocabAtlas::from_vocab(&vocab, &r)?;
        let atlas_path = self.out.join("atlas.bin");
        atlas.persist(&atlas_path)?;
        m.output(&atlas_path);
        log::info!("vocabulary {} entries, atlas {} rows", vocab.len(), atlas.len());

        let pixel_cfg = ModelConfig { vocab_size: vocab.len(), ..pixel_cfg };
        let token_cfg = pixel_cfg.with_mode(EmbeddingMode::Token);
        let mut trained = BTreeMap::new();
        for (name, cfg, a) in [("pixel", &pixel_cfg, Some(&atlas)), ("token", &token_cfg, None)] {
            log::info!("training {name} model");
            let (model, curve) = train::pretrain(cfg, &tcfg, &vocab, a, &train_lines)
                .map_err(|e| CliError::new("training_failed", format!("{name}: {e}")))?;
            let ckpt = self.out.join(format!("{name}.ckpt"));
            Checkpoint::from_model(&model).save(&ckpt)?;
            let loss = self.out.join(format!("{name}.loss.csv"));
            write_loss_csv(&loss, &curve)?;
            m.output(&ckpt);
            m.output(&loss);
            trained.insert(name, model);
        }

        let models = [
            SweepModel { name: "pixel", model: &trained["pixel"], atlas: Some(&atlas) },
            SweepModel { name: "token", model: &trained["token"], atlas: None },
        ];
        let seeds = if self.seeds.is_empty() { vec![tcfg.seed] } else { self.seeds.clone() };
        let cfg = SweepConfig {
            corpus_name: eval_name.clone(),
            levels: self.levels.clone(),
            seeds: seeds.clone(),
            mode: NoiseMode::FixedTokenization,
        };
        let docs = train::tokenize_corpus(&vocab, &eval_lines);
        let report = noise::robustness_sweep(&models, &vocab, Some(&r), &docs, &dict, &cfg)
            .map_err(|e| CliError::new("invalid_argument", e.to_string()))?;
        let csv = self.out.join("metrics.csv");
        report.write_csv(&csv)?;
        m.output(&csv);

        let mut reference = MetricsReport::default();
        for (name, values) in [("reference_token", REFERENCE_TOKEN_PPL), ("reference_pixel", REFERENCE_PIXEL_PPL)] {
            for (p, v) in STANDARD_LEVELS.iter().zip(values) {
                let mut row = MetricsRow::new(name, "reference", *p);
                row.ppl = Some(v);
                reference.push(row);
            }
        }
        let ref_csv = self.out.join("reference.csv");
        reference.write_csv(&ref_csv)?;
        m.output(&ref_csv);
        save_plots(&ppl_plot(&report, &eval_name, &["pixel".into(), "token".into()], true), &self.out, "ppl", &mut m)?;

        for &p in &self.levels {
            if let (Some(px), Some(tk)) = (report.mean_ppl("pixel", &eval_name, p), report.mean_ppl("token", &eval_name, p)) {
                println!("p={p:.2} pixel={px:.2} token={tk:.2}");
            }
        }
        m.config(pixel_cfg.to_settings().iter());
        m.config(tcfg.to_settings().iter());
        m.config([("preset", common.preset.as_str()), ("train_corpus", train_name.as_str())]);
        m.seeds = seeds;
        m.finish(&self.out)?;
        Ok(())
    }
}
