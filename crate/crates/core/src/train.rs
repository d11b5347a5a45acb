//! Pretraining, perplexity and frozen-backbone classification.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::atlas::VocabAtlas;
use crate::model::{log_softmax, EmbeddingMode, Example, Model, ModelConfig, ModelError, IGNORE};
use crate::optim::{AdamW, AdamWConfig, Schedule};
use crate::scalar::Scalar;
use crate::tokenizer::BpeVocab;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("loss became non-finite at step {step} (last finite loss {last:.4}, lr {lr:e})")]
    Diverged { step: usize, last: f64, lr: f64 },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub sequence_length: usize,
    pub lr: f64,
    pub warmup: usize,
    pub min_lr_ratio: f64,
    pub adam: AdamWConfig,
    pub seed: u64,
    pub log_every: usize,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            sequence_length: 64,
            lr: 3e-4,
            warmup: 100,
            min_lr_ratio: 0.1,
            adam: AdamWConfig::default(),
            seed: 0,
            log_every: 50,
            checkpoint_every: 0,
        }
    }

    /// Step count of the reference run; batch geometry is unreported there.
    pub fn paper() -> Self {
        Self { steps: 100_000, warmup: 5_000, sequence_length: 2048, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.warmup > self.steps {
            return bad("warmup exceeds steps");
        }
        if self.batch_size == 0 || self.sequence_length == 0 {
            return bad("batch_size and sequence_length must be positive");
        }
        if !(self.lr >= 0.0) {
            return bad("lr must be non-negative");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { peak: self.lr, warmup: self.warmup, total: self.steps, min_ratio: self.min_lr_ratio }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Progress notifications from [`train`].
pub enum TrainEvent<'a, T> {
    Log(LossPoint),
    Checkpoint { step: usize, model: &'a Model<T> },
}

/// Concatenation of documents as `<s> doc </s>` with random windows drawn
/// for every batch row.
#[derive(Clone, Debug)]
pub struct PackedStream {
    ids: Vec<usize>,
}

impl PackedStream {
    pub fn new(docs: &[Vec<usize>], bos: usize, eos: usize) -> Self {
        let mut ids = Vec::new();
        for d in docs {
            ids.push(bos);
            ids.extend_from_slice(d);
            ids.push(eos);
        }
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// A window of `len + 1` ids turned into a next-token example.
    pub fn sample(&self, rng: &mut impl Rng, len: usize) -> Example {
        let span = (len + 1).min(self.ids.len());
        let start = rng.random_range(0..=self.ids.len() - span);
        Example::shifted(&self.ids[start..start + span], None)
    }
}

/// Tokenizes one document per line; blank lines are dropped.
pub fn tokenize_corpus<S: AsRef<str>>(vocab: &BpeVocab, lines: &[S]) -> Vec<Vec<usize>> {
    lines
        .iter()
        .map(|l| l.as_ref().trim())
        .filter(|l| !l.is_empty())
        .map(|l| vocab.encode(l).into_iter().map(|id| id as usize).collect())
        .collect()
}

/// Runs `config.steps` optimizer steps on windows of `docs`. Deterministic
/// for a given seed. Returns the loss of every step.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    atlas: Option<&VocabAtlas>,
    config: &TrainConfig,
    docs: &[Vec<usize>],
    bos: usize,
    eos: usize,
    mut on_event: impl FnMut(TrainEvent<'_, T>),
) -> Result<Vec<LossPoint>, TrainError> {
    config.validate()?;
    let stream = PackedStream::new(docs, bos, eos);
    if stream.len() < 2 {
        return Err(TrainError::EmptyCorpus);
    }
    let seq_len = config.sequence_length.min(model.config.max_positions);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(config.adam, &model.params);
    let schedule = config.schedule();
    let mut curve = Vec::with_capacity(config.steps);
    let mut last = f64::NAN;
    for step in 0..config.steps {
        let batch: Vec<Example> = (0..config.batch_size).map(|_| stream.sample(&mut rng, seq_len)).collect();
        let lr = schedule.lr(step);
        let (loss, grad, _) = model.loss_and_grad(atlas, &batch)?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(TrainError::Diverged { step, last, lr });
        }
        opt.update(&mut model.params, &grad, lr);
        last = loss;
        let point = LossPoint { step, loss, lr };
        curve.push(point);
        if config.log_every > 0 && (step % config.log_every == 0 || step + 1 == config.steps) {
            on_event(TrainEvent::Log(point));
        }
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            on_event(TrainEvent::Checkpoint { step: step + 1, model });
        }
    }
    Ok(curve)
}

/// Builds a model for `model_config` and trains it on `corpus` lines.
pub fn pretrain<S: AsRef<str>>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    vocab: &BpeVocab,
    atlas: Option<&VocabAtlas>,
    corpus: &[S],
) -> Result<(Model<f32>, Vec<LossPoint>), TrainError> {
    let docs = tokenize_corpus(vocab, corpus);
    if docs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut model = Model::<f32>::new(model_config.clone(), atlas)?;
    let (bos, eos) = (vocab.bos() as usize, vocab.eos() as usize);
    let curve = train(&mut model, atlas, train_config, &docs, bos, eos, |e| {
        if let TrainEvent::Log(p) = e {
            log::info!("step {:>6} loss {:.4} lr {:.2e}", p.step, p.loss, p.lr);
        }
    })?;
    Ok((model, curve))
}

/// [`pretrain`] with a token-embedding table in place of the pixel projector.
pub fn train_token_baseline<S: AsRef<str>>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    vocab: &BpeVocab,
    corpus: &[S],
) -> Result<(Model<f32>, Vec<LossPoint>), TrainError> {
    pretrain(&model_config.with_mode(EmbeddingMode::Token), train_config, vocab, None, corpus)
}

/// Summed negative log-likelihood and number of scored targets.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NllSum {
    pub nll: f64,
    pub tokens: usize,
}

impl NllSum {
    pub fn add(&mut self, other: NllSum) {
        self.nll += other.nll;
        self.tokens += other.tokens;
    }

    /// `exp(mean nll)`; `None` without scored tokens.
    pub fn perplexity(&self) -> Option<f64> {
        (self.tokens > 0).then(|| (self.nll / self.tokens as f64).exp())
    }
}

/// Scores the non-[`IGNORE`] targets of each example.
pub fn score<T: Scalar>(model: &Model<T>, atlas: Option<&VocabAtlas>, examples: &[Example]) -> Result<NllSum, ModelError> {
    let mut acc = NllSum::default();
    for e in examples {
        let logits = model.forward(atlas, &e.inputs)?;
        let logp = log_softmax(logits.view());
        for (i, &t) in e.targets.iter().enumerate() {
            if t == IGNORE {
                continue;
            }
            if t >= logp.ncols() {
                return Err(ModelError::IdOutOfRange { id: t, len: logp.ncols() });
            }
            acc.nll -= logp[[i, t]];
            acc.tokens += 1;
        }
    }
    Ok(acc)
}

/// Evaluation examples for one document: `<s> doc </s>` split into windows
/// of at most `max_positions` inputs, each scored from a fresh context.
pub fn eval_examples(doc: &[usize], bos: usize, eos: usize, max_positions: usize) -> Vec<Example> {
    let mut ids = Vec::with_capacity(doc.len() + 2);
    ids.push(bos);
    ids.extend_from_slice(doc);
    ids.push(eos);
    let full = Example::shifted(&ids, None);
    full.inputs
        .chunks(max_positions)
        .zip(full.targets.chunks(max_positions))
        .map(|(i, t)| Example { inputs: i.to_vec(), targets: t.to_vec() })
        .collect()
}

/// Token-level perplexity over the whole corpus token mass: every document
/// token and its closing `</s>` is predicted.
pub fn perplexity<T: Scalar>(
    model: &Model<T>,
    atlas: Option<&VocabAtlas>,
    docs: &[Vec<usize>],
    bos: usize,
    eos: usize,
) -> Result<NllSum, TrainError> {
    if docs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut acc = NllSum::default();
    for d in docs {
        acc.add(score(model, atlas, &eval_examples(d, bos, eos, model.config.max_positions))?);
    }
    Ok(acc)
}

/// Binary classification quality; label 1 is the positive class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    /// 0 when nothing is predicted positive.
    pub precision: f64,
    /// 0 when there are no positive labels.
    pub recall: f64,
    pub count: usize,
}

impl ClassMetrics {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Self {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fneg = 0usize;
        let mut correct = 0usize;
        for (&p, &l) in predicted.iter().zip(labels) {
            correct += usize::from(p == l);
            match (p == 1, l == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            accuracy: ratio(correct, labels.len()),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fneg),
            count: labels.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { epochs: 300, lr: 0.05, seed: 0 }
    }
}

/// `logits = h · weight + bias` over the last hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl ClassifierHead {
    pub fn predict(&self, features: &Array2<f32>) -> Vec<usize> {
        let logits = features.dot(&self.weight) + &self.bias;
        logits.rows().into_iter().map(|r| usize::from(r[1] > r[0])).collect()
    }
}

/// Final-layer hidden state at the last position of `<s> ids`.
pub fn last_hidden_states<T: Scalar>(
    model: &Model<T>,
    atlas: Option<&VocabAtlas>,
    inputs: &[Vec<usize>],
) -> Result<Array2<f32>, ModelError> {
    let mut out = Array2::zeros((inputs.len(), model.config.hidden_size));
    for (row, ids) in out.rows_mut().into_iter().zip(inputs) {
        let h = model.hidden_states(atlas, ids)?;
        let last = h.row(h.nrows() - 1);
        row.into_iter().zip(last).for_each(|(d, s)| *d = s.to_f64_lossy() as f32);
    }
    Ok(out)
}

/// Fits a two-class linear head on frozen features with full-batch Adam.
/// Returns the head, its training metrics and whether the labels were
/// degenerate (a single class).
pub fn fit_head(features: &Array2<f32>, labels: &[usize], config: &HeadConfig) -> (ClassifierHead, ClassMetrics, bool) {
    let (n, h) = features.dim();
    let degenerate = labels.iter().all(|&l| l == labels[0]);
    if degenerate {
        log::warn!("classifier training labels contain a single class; metrics are degenerate");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut head = ClassifierHead {
        weight: Array2::from_shape_simple_fn((h, 2), || (rng.random::<f32>() - 0.5) * 0.02),
        bias: Array1::zeros(2),
    };
    let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
    let mut mw = Array2::<f32>::zeros((h, 2));
    let mut vw = mw.clone();
    let mut mb = Array1::<f32>::zeros(2);
    let mut vb = mb.clone();
    let inv_n = 1.0 / n.max(1) as f32;
    for t in 1..=config.epochs {
        let mut logits = features.dot(&head.weight) + &head.bias;
        for (mut row, &l) in logits.rows_mut().into_iter().zip(labels) {
            let m = row[0].max(row[1]);
            let (e0, e1) = ((row[0] - m).exp(), (row[1] - m).exp());
            let s = e0 + e1;
            row[0] = (e0 / s - f32::from(l == 0)) * inv_n;
            row[1] = (e1 / s - f32::from(l == 1)) * inv_n;
        }
        let gw = features.t().dot(&logits);
        let gb = logits.sum_axis(Axis(0));
        let lr = config.lr as f32 * (1.0 - b2.powi(t as i32)).sqrt() / (1.0 - b1.powi(t as i32));
        for (p, (g, (m, v))) in head.weight.iter_mut().zip(gw.iter().zip(mw.iter_mut().zip(vw.iter_mut()))) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        }
        for (p, (g, (m, v))) in head.bias.iter_mut().zip(gb.iter().zip(mb.iter_mut().zip(vb.iter_mut()))) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * *m / (v.sqrt() + eps);
        }
    }
    let metrics = ClassMetrics::from_predictions(&head.predict(features), labels);
    (head, metrics, degenerate)
}

/// Head-only fine-tuning: the backbone is only read, never updated.
/// `examples` are `(label, ids)` pairs; `<s>` is prepended to each.
pub fn finetune_classifier<T: Scalar>(
    model: &Model<T>,
    atlas: Option<&VocabAtlas>,
    examples: &[(usize, Vec<usize>)],
    bos: usize,
    config: &HeadConfig,
) -> Result<(ClassifierHead, ClassMetrics, bool), TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let inputs = with_bos(examples.iter().map(|(_, ids)| ids.as_slice()), bos);
    let labels: Vec<usize> = examples.iter().map(|(l, _)| *l).collect();
    let features = last_hidden_states(model, atlas, &inputs)?;
    Ok(fit_head(&features, &labels, config))
}

pub(crate) fn with_bos<'a>(seqs: impl Iterator<Item = &'a [usize]>, bos: usize) -> Vec<Vec<usize>> {
    seqs.map(|s| std::iter::once(bos).chain(s.iter().copied()).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_follow_the_positive_class_convention() {
        let m = ClassMetrics::from_predictions(&[1, 1, 0, 0], &[1, 0, 1, 0]);
        assert_eq!((m.accuracy, m.precision, m.recall), (0.5, 0.5, 0.5));
        let all_pos = ClassMetrics::from_predictions(&[1, 1], &[1, 1]);
        assert_eq!(all_pos.recall, 1.0);
        let all_neg = ClassMetrics::from_predictions(&[0, 0], &[0, 0]);
        assert_eq!((all_neg.accuracy, all_neg.recall, all_neg.precision), (1.0, 0.0, 0.0));
    }

    #[test]
    fn eval_examples_cover_every_token_once() {
        let doc: Vec<usize> = (10..25).collect();
        let ex = eval_examples(&doc, 1, 2, 4);
        let targets: Vec<usize> = ex.iter().flat_map(|e| e.targets.clone()).collect();
        let mut expected = doc.clone();
        expected.push(2);
        assert_eq!(targets, expected);
        assert!(ex.iter().all(|e| e.inputs.len() <= 4));
    }

    #[test]
    fn head_separates_separable_features() {
        let features = Array2::from_shape_fn((40, 3), |(i, j)| if j == 0 { (i % 2) as f32 * 2.0 - 1.0 } else { 0.1 * j as f32 });
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let (_, m, degenerate) = fit_head(&features, &labels, &HeadConfig::default());
        assert_eq!(m.accuracy, 1.0);
        assert!(!degenerate);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { steps: 0, ..TrainConfig::desk() }.validate().is_err());
        assert!(TrainConfig { warmup: 5000, ..TrainConfig::desk() }.validate().is_err());
        assert!(TrainConfig::desk().validate().is_ok());
    }
}
