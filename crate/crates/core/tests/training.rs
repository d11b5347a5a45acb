use pixlm::train::{self, HeadConfig, TrainConfig, TrainEvent};
use pixlm::{BpeTrainer, Checkpoint, EmbeddingMode, Model32, ModelConfig, Renderer, VocabAtlas};

fn setup() -> (pixlm::BpeVocab, VocabAtlas, Vec<Vec<usize>>) {
    let lines = pixlm::corpus::bundled_sentences();
    let vocab = BpeTrainer::new(320).train(&lines).unwrap();
    let atlas = VocabAtlas::from_vocab(&vocab, &Renderer::with_defaults().unwrap()).unwrap();
    let docs = train::tokenize_corpus(&vocab, &lines);
    (vocab, atlas, docs)
}

fn small(mode: EmbeddingMode, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        hidden_size: 32,
        intermediate_size: 64,
        num_heads: 4,
        num_layers: 2,
        vocab_size,
        max_positions: 64,
        ..ModelConfig::desk(mode)
    }
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig { steps, batch_size: 4, sequence_length: 32, warmup: 2.min(steps), log_every: 0, ..TrainConfig::desk() }
}

#[test]
fn zero_learning_rate_step_changes_nothing() {
    let (vocab, atlas, docs) = setup();
    let mut m = Model32::new(small(EmbeddingMode::Pixel, vocab.len()), Some(&atlas)).unwrap();
    let before = m.params.checksum();
    let cfg = TrainConfig { lr: 0.0, warmup: 0, ..quick(1) };
    train::train(&mut m, Some(&atlas), &cfg, &docs, 0, 1, |_| {}).unwrap();
    assert_eq!(m.params.checksum(), before);
}

#[test]
fn same_seed_same_curve_in_both_modes() {
    let (vocab, atlas, docs) = setup();
    for mode in [EmbeddingMode::Pixel, EmbeddingMode::Token] {
        let a = (mode == EmbeddingMode::Pixel).then_some(&atlas);
        let run = |seed| {
            let mut m = Model32::new(small(mode, vocab.len()), a).unwrap();
            let curve = train::train(&mut m, a, &TrainConfig { seed, ..quick(5) }, &docs, 1, 2, |_| {}).unwrap();
            (curve, m.params.checksum())
        };
        let (c1, p1) = run(7);
        let (c2, p2) = run(7);
        assert_eq!(c1, c2);
        assert_eq!(p1, p2);
        assert_ne!(run(8).0, c1);
    }
}

#[test]
fn both_modes_reduce_loss() {
    let (vocab, atlas, docs) = setup();
    for mode in [EmbeddingMode::Pixel, EmbeddingMode::Token] {
        let a = (mode == EmbeddingMode::Pixel).then_some(&atlas);
        let mut m = Model32::new(small(mode, vocab.len()), a).unwrap();
        let cfg = TrainConfig { lr: 3e-3, warmup: 10, ..quick(150) };
        let curve = train::train(&mut m, a, &cfg, &docs, 1, 2, |_| {}).unwrap();
        let mean = |s: &[train::LossPoint]| s.iter().map(|p| p.loss).sum::<f64>() / s.len() as f64;
        let (head, tail) = (mean(&curve[..50]), mean(&curve[100..]));
        assert!(tail < head, "{mode:?}: {head} -> {tail}");
    }
}

#[test]
fn events_report_logs_and_checkpoints() {
    let (vocab, atlas, docs) = setup();
    let mut m = Model32::new(small(EmbeddingMode::Pixel, vocab.len()), Some(&atlas)).unwrap();
    let cfg = TrainConfig { log_every: 2, checkpoint_every: 3, ..quick(6) };
    let (mut logs, mut ckpts) = (Vec::new(), Vec::new());
    train::train(&mut m, Some(&atlas), &cfg, &docs, 1, 2, |e| match e {
        TrainEvent::Log(p) => logs.push(p.step),
        TrainEvent::Checkpoint { step, .. } => ckpts.push(step),
    })
    .unwrap();
    assert_eq!(logs, vec![0, 2, 4, 5]);
    assert_eq!(ckpts, vec![3, 6]);
}

#[test]
fn checkpoint_reload_reproduces_logits() {
    let (vocab, atlas, docs) = setup();
    let mut m = Model32::new(small(EmbeddingMode::Pixel, vocab.len()), Some(&atlas)).unwrap();
    train::train(&mut m, Some(&atlas), &quick(3), &docs, 1, 2, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::from_model(&m).save(&path).unwrap();
    let back: Model32 = Checkpoint::load(&path).unwrap().into_model();
    assert_eq!(back.forward(Some(&atlas), &docs[0]).unwrap(), m.forward(Some(&atlas), &docs[0]).unwrap());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(TrainConfig { steps: 0, ..TrainConfig::desk() }.validate().is_err());
    assert!(TrainConfig { warmup: 10, ..quick(5) }.validate().is_err());
    let (vocab, atlas, _) = setup();
    let mut m = Model32::new(small(EmbeddingMode::Pixel, vocab.len()), Some(&atlas)).unwrap();
    assert!(train::train(&mut m, Some(&atlas), &quick(2), &[], 1, 2, |_| {}).is_err());
    let empty: Vec<Vec<usize>> = Vec::new();
    assert!(train::perplexity(&m, Some(&atlas), &empty, 1, 2).is_err());
}

#[test]
fn head_only_finetuning_leaves_backbone_untouched() {
    let (vocab, atlas, _) = setup();
    let m = Model32::new(small(EmbeddingMode::Pixel, vocab.len()), Some(&atlas)).unwrap();
    let before = m.params.checksum();
    let examples: Vec<(usize, Vec<usize>)> = pixlm::corpus::sentiment_examples(40, 3)
        .into_iter()
        .map(|(l, t)| (l, vocab.encode(&t).into_iter().map(|i| i as usize).collect()))
        .collect();
    let (head, metrics, degenerate) =
        train::finetune_classifier(&m, Some(&atlas), &examples, 1, &HeadConfig::default()).unwrap();
    assert_eq!(m.params.checksum(), before);
    assert!(!degenerate);
    assert_eq!(head.weight.dim(), (32, 2));
    for v in [metrics.accuracy, metrics.precision, metrics.recall] {
        assert!((0.0..=1.0).contains(&v));
    }

    let single: Vec<(usize, Vec<usize>)> = examples.iter().map(|(_, ids)| (1, ids.clone())).collect();
    let (_, m1, degenerate) = train::finetune_classifier(&m, Some(&atlas), &single, 1, &HeadConfig::default()).unwrap();
    assert!(degenerate);
    assert!(m1.recall == 1.0 || m1.recall == 0.0);
}

#[test]
fn perplexity_is_at_least_one() {
    let (vocab, atlas, docs) = setup();
    let m = Model32::new(small(EmbeddingMode::Pixel, vocab.len()), Some(&atlas)).unwrap();
    let ppl = train::perplexity(&m, Some(&atlas), &docs[..10], 1, 2).unwrap().perplexity().unwrap();
    assert!(ppl >= 1.0);
}
