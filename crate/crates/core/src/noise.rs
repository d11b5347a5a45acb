//! Orthographic noise: confusable-character substitution, robustness sweeps
//! and pixel-space sentence similarity.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::atlas::{AtlasError, VocabAtlas};
use crate::metrics::{MetricsReport, MetricsRow};
use crate::model::{EmbeddingMode, Embedding, Example, Model, ModelError, IGNORE};
use crate::render::{RenderError, Renderer};
use crate::tokenizer::{BpeVocab, TokenId, TokenizerError};
use crate::train::{self, ClassMetrics, ClassifierHead};

/// Homoglyph table shipped with the crate.
pub const BUNDLED_DICTIONARY: &str = include_str!("../assets/homoglyphs.tsv");

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("dictionary line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("noise probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("similarity undefined: pooled vector is zero")]
    UndefinedSimilarity,
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("pixel mode requires {0}")]
    Missing(&'static str),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// Character to visually confusable replacements.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NoiseDictionary {
    map: BTreeMap<char, Vec<char>>,
}

impl NoiseDictionary {
    /// One entry per line: `char<TAB>r1,r2,...`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, NoiseError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| NoiseError::Format { line: i + 1, msg };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, reps) = line.split_once('\t').ok_or_else(|| err("expected char<TAB>replacements".into()))?;
            let key = single_char(key).ok_or_else(|| err(format!("key `{key}` is not a single character")))?;
            let mut list = Vec::new();
            for r in reps.split(',') {
                let c = single_char(r).ok_or_else(|| err(format!("replacement `{r}` is not a single character")))?;
                if c != key && !list.contains(&c) {
                    list.push(c);
                }
            }
            if list.is_empty() {
                return Err(err(format!("`{key}` has no replacement other than itself")));
            }
            if map.insert(key, list).is_some() {
                return Err(err(format!("duplicate entry for `{key}`")));
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self, NoiseError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| NoiseError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_DICTIONARY).expect("bundled dictionary is valid")
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, c: char) -> Option<&[char]> {
        self.map.get(&c).map(Vec::as_slice)
    }

    pub fn contains(&self, c: char) -> bool {
        self.map.contains_key(&c)
    }

    pub fn to_text(&self) -> String {
        self.map
            .iter()
            .map(|(k, v)| {
                let reps: Vec<String> = v.iter().map(char::to_string).collect();
                format!("{k}\t{}\n", reps.join(","))
            })
            .collect()
    }
}

fn single_char(s: &str) -> Option<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseMode {
    /// Token boundaries of the clean text are kept.
    FixedTokenization,
    /// The noised text is tokenized from scratch.
    Retokenize,
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FixedTokenization => "fixed",
            Self::Retokenize => "retokenize",
        })
    }
}

impl FromStr for NoiseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" | "fixed-tokenization" => Ok(Self::FixedTokenization),
            "retokenize" => Ok(Self::Retokenize),
            other => Err(format!("unknown noise mode `{other}` (expected fixed|retokenize)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub p: f64,
    pub seed: u64,
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn new(p: f64, seed: u64) -> Result<Self, NoiseError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(NoiseError::Probability(p));
        }
        Ok(Self { p, seed, mode: NoiseMode::FixedTokenization })
    }
}

/// Stateful substitution stream. Every eligible character consumes the
/// same random draws whatever `p` is, so at a fixed seed the positions
/// replaced at a lower level are a subset of those at a higher level.
pub struct Corrupter<'a> {
    dict: &'a NoiseDictionary,
    p: f64,
    rng: ChaCha8Rng,
}

impl<'a> Corrupter<'a> {
    pub fn new(dict: &'a NoiseDictionary, spec: &NoiseSpec) -> Self {
        Self { dict, p: spec.p, rng: ChaCha8Rng::seed_from_u64(spec.seed) }
    }

    pub fn corrupt(&mut self, text: &str) -> String {
        text.chars()
            .map(|c| match self.dict.get(c) {
                Some(reps) => {
                    let u: f64 = self.rng.random();
                    let pick = reps[self.rng.random_range(0..reps.len())];
                    if u < self.p {
                        pick
                    } else {
                        c
                    }
                }
                None => c,
            })
            .collect()
    }
}

/// Replaces each character with probability `spec.p` by a uniform choice
/// among its confusables.
pub fn corrupt(text: &str, spec: &NoiseSpec, dict: &NoiseDictionary) -> String {
    Corrupter::new(dict, spec).corrupt(text)
}

/// Corrupts within each surface; the number of surfaces never changes.
pub fn corrupt_tokens<S: AsRef<str>>(surfaces: &[S], spec: &NoiseSpec, dict: &NoiseDictionary) -> Vec<String> {
    let mut c = Corrupter::new(dict, spec);
    surfaces.iter().map(|s| c.corrupt(s.as_ref())).collect()
}

/// Per-token corrupted surface of every document under fixed tokenization;
/// `None` where the token is unchanged. Only text pieces are eligible.
pub fn corrupt_corpus(
    vocab: &BpeVocab,
    docs: &[Vec<usize>],
    spec: &NoiseSpec,
    dict: &NoiseDictionary,
) -> Vec<Vec<Option<String>>> {
    let mut c = Corrupter::new(dict, spec);
    docs.iter()
        .map(|doc| {
            doc.iter()
                .map(|&id| {
                    let id = id as TokenId;
                    if vocab.is_special(id) || vocab.is_byte(id) {
                        return None;
                    }
                    let surface = vocab.surface(id);
                    let noised = c.corrupt(&surface);
                    (noised != surface).then_some(noised)
                })
                .collect()
        })
        .collect()
}

/// Inputs of one document as groups: group `i` stands for clean token `i`.
pub type Groups = Vec<Vec<usize>>;

/// Pixel view: every changed token becomes a new atlas row holding its
/// rendered corrupted surface.
pub fn pixel_groups(
    atlas: &VocabAtlas,
    renderer: &Renderer,
    docs: &[Vec<usize>],
    corruptions: &[Vec<Option<String>>],
) -> Result<(Vec<Groups>, VocabAtlas), NoiseError> {
    let mut extra: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::with_capacity(docs.len());
    for (doc, noise) in docs.iter().zip(corruptions) {
        let groups = doc
            .iter()
            .zip(noise)
            .map(|(&id, n)| match n {
                None => vec![id],
                Some(s) => {
                    let next = atlas.len() + extra.len();
                    let row = *index.entry(s.clone()).or_insert_with(|| {
                        extra.push(s.clone());
                        next
                    });
                    vec![row]
                }
            })
            .collect();
        out.push(groups);
    }
    let extended = if extra.is_empty() { atlas.clone() } else { atlas.extend(&extra, renderer)? };
    Ok((out, extended))
}

/// Token view: every changed token is re-encoded on its own, keeping its
/// leading-space marker; unknown characters fall back to bytes.
pub fn token_groups(vocab: &BpeVocab, docs: &[Vec<usize>], corruptions: &[Vec<Option<String>>]) -> Vec<Groups> {
    docs.iter()
        .zip(corruptions)
        .map(|(doc, noise)| {
            doc.iter()
                .zip(noise)
                .map(|(&id, n)| match n {
                    None => vec![id],
                    Some(s) => vocab
                        .encode_word(s, vocab.has_leading_space(id as TokenId))
                        .into_iter()
                        .map(|t| t as usize)
                        .collect(),
                })
                .collect()
        })
        .collect()
}

/// `<s>` followed by the flattened groups. The prediction for clean token
/// `i + 1` (or `</s>`) is read at the last position of group `i`; other
/// positions are not scored. Split into windows of `max_positions`.
pub fn grouped_examples(groups: &Groups, clean: &[usize], bos: usize, eos: usize, max_positions: usize) -> Vec<Example> {
    let mut inputs = vec![bos];
    let mut targets = vec![clean.first().copied().unwrap_or(eos)];
    for (i, g) in groups.iter().enumerate() {
        let next = clean.get(i + 1).copied().unwrap_or(eos);
        for (j, &id) in g.iter().enumerate() {
            inputs.push(id);
            targets.push(if j + 1 == g.len() { next } else { IGNORE });
        }
    }
    inputs
        .chunks(max_positions)
        .zip(targets.chunks(max_positions))
        .map(|(i, t)| Example { inputs: i.to_vec(), targets: t.to_vec() })
        .collect()
}

/// A model under evaluation. Pixel models carry their atlas.
#[derive(Clone, Copy)]
pub struct SweepModel<'a> {
    pub name: &'a str,
    pub model: &'a Model<f32>,
    pub atlas: Option<&'a VocabAtlas>,
}

/// Model inputs for `docs` under the given corruptions, and the atlas to use.
pub fn noised_groups(
    m: &SweepModel<'_>,
    vocab: &BpeVocab,
    renderer: Option<&Renderer>,
    docs: &[Vec<usize>],
    corruptions: &[Vec<Option<String>>],
) -> Result<(Vec<Groups>, Option<VocabAtlas>), NoiseError> {
    match m.model.config.embedding_mode {
        EmbeddingMode::Pixel => {
            let atlas = m.atlas.ok_or(NoiseError::Missing("an atlas"))?;
            let renderer = renderer.ok_or(NoiseError::Missing("a renderer"))?;
            let (groups, ext) = pixel_groups(atlas, renderer, docs, corruptions)?;
            Ok((groups, Some(ext)))
        }
        EmbeddingMode::Token => Ok((token_groups(vocab, docs, corruptions), None)),
    }
}

/// Perplexity of one model on `docs` noised per `spec`.
pub fn noised_perplexity(
    m: &SweepModel<'_>,
    vocab: &BpeVocab,
    renderer: Option<&Renderer>,
    docs: &[Vec<usize>],
    spec: &NoiseSpec,
    dict: &NoiseDictionary,
) -> Result<train::NllSum, NoiseError> {
    let (bos, eos) = (vocab.bos() as usize, vocab.eos() as usize);
    let max = m.model.config.max_positions;
    if spec.mode == NoiseMode::Retokenize {
        let mut c = Corrupter::new(dict, spec);
        let mut noised = Vec::with_capacity(docs.len());
        for d in docs {
            let ids: Vec<TokenId> = d.iter().map(|&i| i as TokenId).collect();
            let text = c.corrupt(&vocab.decode(&ids)?);
            noised.push(vocab.encode(&text).into_iter().map(|t| t as usize).collect::<Vec<_>>());
        }
        let atlas = match m.model.config.embedding_mode {
            EmbeddingMode::Pixel => Some(m.atlas.ok_or(NoiseError::Missing("an atlas"))?),
            EmbeddingMode::Token => None,
        };
        return train::perplexity(m.model, atlas, &noised, bos, eos).map_err(|e| match e {
            train::TrainError::Model(e) => NoiseError::Model(e),
            _ => NoiseError::EmptySentence,
        });
    }
    let corruptions = corrupt_corpus(vocab, docs, spec, dict);
    let (groups, atlas) = noised_groups(m, vocab, renderer, docs, &corruptions)?;
    let mut acc = train::NllSum::default();
    for (g, clean) in groups.iter().zip(docs) {
        let ex = grouped_examples(g, clean, bos, eos, max);
        acc.add(train::score(m.model, atlas.as_ref(), &ex)?);
    }
    Ok(acc)
}

/// Seed of the corruption stream for one sweep cell. It depends on the base
/// seed and corpus only, so every model and level sees the same draws.
pub fn cell_seed(base_seed: u64, corpus: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update(corpus.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub corpus_name: String,
    pub levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub mode: NoiseMode,
}

impl SweepConfig {
    pub fn standard(corpus_name: &str, seeds: Vec<u64>) -> Self {
        Self {
            corpus_name: corpus_name.to_string(),
            levels: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            seeds,
            mode: NoiseMode::FixedTokenization,
        }
    }
}

/// Perplexity of every model at every level and seed. A failing cell is
/// logged and recorded with a `NaN` perplexity; the sweep continues.
pub fn robustness_sweep(
    models: &[SweepModel<'_>],
    vocab: &BpeVocab,
    renderer: Option<&Renderer>,
    docs: &[Vec<usize>],
    dict: &NoiseDictionary,
    config: &SweepConfig,
) -> Result<MetricsReport, NoiseError> {
    for &p in &config.levels {
        NoiseSpec::new(p, 0)?;
    }
    let mut report = MetricsReport::default();
    for &seed in &config.seeds {
        let noise_seed = cell_seed(seed, &config.corpus_name);
        for &p in &config.levels {
            let spec = NoiseSpec { p, seed: noise_seed, mode: config.mode };
            for m in models {
                let mut row = MetricsRow::new(m.name, &config.corpus_name, p);
                row.seed = Some(seed);
                match noised_perplexity(m, vocab, renderer, docs, &spec, dict) {
                    Ok(s) => {
                        row.ppl = s.perplexity();
                        row.tokens = Some(s.tokens);
                    }
                    Err(e) => {
                        log::warn!("cell {} p={p} seed={seed} failed: {e}", m.name);
                        row.ppl = Some(f64::NAN);
                    }
                }
                log::info!("{} p={p} seed={seed} ppl={:?}", m.name, row.ppl);
                report.push(row);
            }
        }
    }
    Ok(report)
}

/// Classifier metrics on `examples` (`(label, ids)`) after noising them.
#[allow(clippy::too_many_arguments)]
pub fn noised_classification(
    m: &SweepModel<'_>,
    head: &ClassifierHead,
    vocab: &BpeVocab,
    renderer: Option<&Renderer>,
    examples: &[(usize, Vec<usize>)],
    spec: &NoiseSpec,
    dict: &NoiseDictionary,
) -> Result<ClassMetrics, NoiseError> {
    let docs: Vec<Vec<usize>> = examples.iter().map(|(_, d)| d.clone()).collect();
    let labels: Vec<usize> = examples.iter().map(|(l, _)| *l).collect();
    let corruptions = corrupt_corpus(vocab, &docs, spec, dict);
    let (groups, atlas) = noised_groups(m, vocab, renderer, &docs, &corruptions)?;
    let bos = vocab.bos() as usize;
    let inputs: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| std::iter::once(bos).chain(g.iter().flatten().copied()).collect())
        .collect();
    let features = train::last_hidden_states(m.model, atlas.as_ref().or(m.atlas), &inputs)?;
    Ok(ClassMetrics::from_predictions(&head.predict(&features), &labels))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilarityLevel {
    /// Flattened rendered images.
    RawPixels,
    /// Outputs of a pixel model's projector.
    Projected,
}

/// Rendering strings of the fixed tokenization of `text`. Byte pieces that
/// together spell one character form a single segment.
pub fn segment(vocab: &BpeVocab, text: &str) -> Result<Vec<String>, NoiseError> {
    let ids = vocab.encode(text);
    let mut segments = Vec::new();
    let mut pending: Vec<TokenId> = Vec::new();
    for id in ids {
        pending.push(id);
        if let Ok(s) = String::from_utf8(vocab.decode_bytes(&pending)?) {
            segments.push(s);
            pending.clear();
        }
    }
    if !pending.is_empty() {
        segments.push(String::from_utf8_lossy(&vocab.decode_bytes(&pending)?).into_owned());
    }
    Ok(segments)
}

fn render_string(segment: &str) -> &str {
    let s = segment.strip_prefix(' ').unwrap_or(segment);
    if s.chars().all(char::is_whitespace) {
        ""
    } else {
        s
    }
}

/// Segments of `a`, and `b` cut at the same character offsets when it has
/// the same length in characters (otherwise `b` is segmented on its own).
pub fn aligned_segments(vocab: &BpeVocab, a: &str, b: &str) -> Result<(Vec<String>, Vec<String>), NoiseError> {
    let sa = segment(vocab, a)?;
    let a_len: usize = sa.iter().map(|s| s.chars().count()).sum();
    let sb = if b.chars().count() == a_len {
        let mut chars = b.chars();
        sa.iter().map(|s| chars.by_ref().take(s.chars().count()).collect()).collect()
    } else {
        segment(vocab, b)?
    };
    Ok((sa, sb))
}

/// Mean over segments of the flattened image (raw level) or of its
/// projection through a pixel model's embedding layer.
pub fn pooled_vector(
    segments: &[String],
    renderer: &Renderer,
    level: SimilarityLevel,
    model: Option<&Model<f32>>,
) -> Result<Vec<f64>, NoiseError> {
    if segments.is_empty() {
        return Err(NoiseError::EmptySentence);
    }
    let mut mean = vec![0.0f64; renderer.config().pixels_per_image()];
    for s in segments {
        let img = renderer.render_word(render_string(s));
        for (m, v) in mean.iter_mut().zip(img.values()) {
            *m += f64::from(v);
        }
    }
    let n = segments.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    match level {
        SimilarityLevel::RawPixels => Ok(mean),
        SimilarityLevel::Projected => {
            let model = model.ok_or(NoiseError::Missing("a pixel model for projected similarity"))?;
            let Embedding::Pixel { weight, bias } = &model.params.embedding else {
                return Err(NoiseError::Model(ModelError::WrongMode(EmbeddingMode::Token)));
            };
            if weight.nrows() != mean.len() {
                return Err(NoiseError::Model(ModelError::Shape(format!(
                    "projector expects {} pixels, renderer produces {}",
                    weight.nrows(),
                    mean.len()
                ))));
            }
            // The projection is affine, so projecting the mean image equals
            // the mean of the projections.
            Ok((0..weight.ncols())
                .map(|j| {
                    f64::from(bias[j]) + mean.iter().enumerate().map(|(i, &x)| x * f64::from(weight[[i, j]])).sum::<f64>()
                })
                .collect())
        }
    }
}

/// Cosine of two vectors; an error when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, NoiseError> {
    if a == b && a.iter().any(|&v| v != 0.0) {
        return Ok(1.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(NoiseError::UndefinedSimilarity);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Sentence similarity in pixel space under the tokenization of `a`.
pub fn pixel_cosine(
    a: &str,
    b: &str,
    vocab: &BpeVocab,
    renderer: &Renderer,
    level: SimilarityLevel,
    model: Option<&Model<f32>>,
) -> Result<f64, NoiseError> {
    let (sa, sb) = aligned_segments(vocab, a, b)?;
    let va = pooled_vector(&sa, renderer, level, model)?;
    let vb = pooled_vector(&sb, renderer, level, model)?;
    cosine(&va, &vb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict(text: &str) -> NoiseDictionary {
        NoiseDictionary::parse(text).unwrap()
    }

    #[test]
    fn parses_entries() {
        let d = dict("a\tа,á\n");
        assert_eq!(d.len(), 1);
        assert_eq!(d.get('a'), Some(&['а', 'á'][..]));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        for bad in ["a\tа\nb\n", "a\tа\nb\tbb\n", "a\tа\nb\tb\n", "a\tа\nab\tc\n", "a\tа\nb\t\n"] {
            match NoiseDictionary::parse(bad) {
                Err(NoiseError::Format { line, .. }) => assert_eq!(line, 2, "{bad:?}"),
                other => panic!("{bad:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn bundled_covers_lowercase_ascii() {
        let d = NoiseDictionary::bundled();
        assert!(('a'..='z').all(|c| d.contains(c)));
        assert_eq!(NoiseDictionary::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn zero_probability_is_identity() {
        let d = NoiseDictionary::bundled();
        let spec = NoiseSpec::new(0.0, 9).unwrap();
        let text = "The quick brown fox, 42 times!";
        assert_eq!(corrupt(text, &spec, &d), text);
    }

    #[test]
    fn forced_substitution() {
        let spec = NoiseSpec::new(1.0, 1).unwrap();
        assert_eq!(corrupt("aaa", &spec, &dict("a\tа\n")), "ааа");
    }

    #[test]
    fn probability_is_validated() {
        assert!(NoiseSpec::new(1.5, 0).is_err());
        assert!(NoiseSpec::new(-0.1, 0).is_err());
    }

    #[test]
    fn levels_are_nested_at_a_fixed_seed() {
        let d = NoiseDictionary::bundled();
        let text = "an apple a day keeps the doctor away ".repeat(20);
        let low = corrupt(&text, &NoiseSpec::new(0.2, 5).unwrap(), &d);
        let high = corrupt(&text, &NoiseSpec::new(0.5, 5).unwrap(), &d);
        for ((c, l), h) in text.chars().zip(low.chars()).zip(high.chars()) {
            if l != c {
                assert_eq!(l, h);
            }
        }
    }

    #[test]
    fn cosine_bounds() {
        assert_eq!(cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0], &[1.0]), Err(NoiseError::UndefinedSimilarity)));
    }

    #[test]
    fn grouped_examples_align_targets() {
        // clean ids 10 11 12; token 1 expanded into three pieces
        let groups = vec![vec![10], vec![20, 21, 22], vec![12]];
        let ex = grouped_examples(&groups, &[10, 11, 12], 1, 2, 64);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].inputs, vec![1, 10, 20, 21, 22, 12]);
        assert_eq!(ex[0].targets, vec![10, 11, IGNORE, IGNORE, 12, 2]);
    }

    #[test]
    fn grouped_examples_match_plain_evaluation_without_noise() {
        let clean: Vec<usize> = (5..40).collect();
        let groups: Groups = clean.iter().map(|&i| vec![i]).collect();
        assert_eq!(grouped_examples(&groups, &clean, 1, 2, 8), train::eval_examples(&clean, 1, 2, 8));
    }
}
