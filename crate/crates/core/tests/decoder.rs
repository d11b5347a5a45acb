use ndarray::{Array1, Array2};
use pixlm::model::{log_softmax, Embedding, Example, ModelError, IGNORE};
use pixlm::train::{self, TrainConfig};
use pixlm::{
    BpeTrainer, EmbeddingMode, Model32, Model64, ModelConfig, NoiseDictionary, NoiseSpec, PositionEncoding,
    Renderer, Sampling, VocabAtlas,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 11] = ["<s>", "</s>", "a", "b", "c", "d", "the", "cat", "sat", "mat", "."];

fn atlas() -> VocabAtlas {
    VocabAtlas::build(&WORDS, &Renderer::with_defaults().unwrap()).unwrap()
}

fn small(mode: EmbeddingMode, positions: PositionEncoding) -> ModelConfig {
    ModelConfig {
        hidden_size: 16,
        intermediate_size: 40,
        num_heads: 4,
        num_layers: 2,
        vocab_size: WORDS.len(),
        max_positions: 32,
        position_encoding: positions,
        seed: 1,
        ..ModelConfig::desk(mode)
    }
}

#[test]
fn appending_tokens_leaves_earlier_logits_unchanged() {
    let a = atlas();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (mode, pos) in [
        (EmbeddingMode::Pixel, PositionEncoding::Rotary),
        (EmbeddingMode::Token, PositionEncoding::Rotary),
        (EmbeddingMode::Pixel, PositionEncoding::Learned),
    ] {
        let m = Model32::new(small(mode, pos), Some(&a)).unwrap();
        let atlas = (mode == EmbeddingMode::Pixel).then_some(&a);
        for _ in 0..100 {
            let n = rng.random_range(1..20);
            let ids: Vec<usize> = (0..n + 1).map(|_| rng.random_range(0..WORDS.len())).collect();
            let short = m.forward(atlas, &ids[..n]).unwrap();
            let long = m.forward(atlas, &ids).unwrap();
            for i in 0..n {
                for j in 0..WORDS.len() {
                    let d = (short[[i, j]] - long[[i, j]]).abs();
                    assert!(d <= 1e-6, "{mode:?} {pos:?} position {i}: {d}");
                }
            }
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let a = atlas();
    let m = Model32::new(small(EmbeddingMode::Pixel, PositionEncoding::Rotary), Some(&a)).unwrap();
    let logits = m.forward(Some(&a), &[0, 6, 7, 8, 2, 3]).unwrap();
    for row in log_softmax(logits.view()).rows() {
        let s: f64 = row.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn single_position_gives_finite_logits() {
    let a = atlas();
    let m = Model32::new(small(EmbeddingMode::Pixel, PositionEncoding::Rotary), Some(&a)).unwrap();
    for id in 0..WORDS.len() {
        let l = m.forward(Some(&a), &[id]).unwrap();
        assert_eq!(l.shape(), &[1, WORDS.len()]);
        assert!(l.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn zeroed_head_gives_vocabulary_size_perplexity() {
    let a = atlas();
    for mode in [EmbeddingMode::Pixel, EmbeddingMode::Token] {
        let mut m = Model64::new(small(mode, PositionEncoding::Rotary), Some(&a)).unwrap();
        m.params.head.fill(0.0);
        let docs = vec![vec![6, 7, 8, 10], vec![2, 3, 4, 5, 2]];
        let ppl = train::perplexity(&m, (mode == EmbeddingMode::Pixel).then_some(&a), &docs, 0, 1)
            .unwrap()
            .perplexity()
            .unwrap();
        assert!((ppl / WORDS.len() as f64 - 1.0).abs() < 1e-6, "{ppl}");
    }
}

#[test]
fn uniform_logits_give_log_vocab_loss_and_spikes_give_zero() {
    let v = WORDS.len();
    let uniform = Array2::<f64>::zeros((3, v));
    let l = pixlm::model::loss(uniform.view(), &[1, 2, 3]).unwrap();
    assert!((l - (v as f64).ln()).abs() < 1e-12);
    let mut spiked = Array2::<f64>::zeros((2, v));
    spiked[[0, 4]] = 1e4;
    spiked[[1, 5]] = 1e4;
    assert!(pixlm::model::loss(spiked.view(), &[4, 5]).unwrap() < 1e-9);
    let masked = pixlm::model::loss(spiked.view(), &[4, IGNORE]).unwrap();
    assert!(masked < 1e-9);
}

#[test]
fn decoder_core_is_mode_agnostic() {
    let a = atlas();
    let pixel = Model64::new(small(EmbeddingMode::Pixel, PositionEncoding::Rotary), Some(&a)).unwrap();
    let mut token = Model64::new(small(EmbeddingMode::Token, PositionEncoding::Rotary), None).unwrap();
    token.params.layers = pixel.params.layers.clone();
    token.params.final_norm = pixel.params.final_norm.clone();
    token.params.head = pixel.params.head.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fake = Array2::from_shape_simple_fn((7, 16), || rng.random::<f64>() - 0.5);
    assert_eq!(pixel.forward_embeddings(fake.view()).unwrap(), token.forward_embeddings(fake.view()).unwrap());

    let ids = [0, 6, 7, 8];
    let via_core = token.forward_embeddings(token.embed(None, &ids).unwrap().view()).unwrap();
    assert_eq!(token.forward(None, &ids).unwrap(), via_core);
    let via_core = pixel.forward_embeddings(pixel.pixel_embed(&a, &ids).unwrap().view()).unwrap();
    assert_eq!(pixel.forward(Some(&a), &ids).unwrap(), via_core);
}

#[test]
fn pixel_embedding_is_affine_in_the_image() {
    let a = atlas();
    let mut m = Model64::new(small(EmbeddingMode::Pixel, PositionEncoding::Rotary), Some(&a)).unwrap();
    let b = Array1::from_shape_fn(16, |i| i as f64 * 0.1);
    m.params.embedding = Embedding::Pixel { weight: Array2::zeros((1000, 16)), bias: b.clone() };
    let e = m.pixel_embed(&a, &[2, 7, 0]).unwrap();
    for row in e.rows() {
        assert_eq!(row, b);
    }

    let dup = VocabAtlas::build(&["x", "y", "x"], &Renderer::with_defaults().unwrap()).unwrap();
    let cfg = ModelConfig { vocab_size: 3, ..small(EmbeddingMode::Pixel, PositionEncoding::Rotary) };
    let m = Model64::new(cfg, Some(&dup)).unwrap();
    let e = m.pixel_embed(&dup, &[0, 2]).unwrap();
    assert_eq!(e.row(0), e.row(1));
}

#[test]
fn hand_computed_projection() {
    // 2x3 images (the narrowest canvas the margin allows), 4-dim projector
    let r = Renderer::new(pixlm::RenderConfig {
        image_height: 2,
        image_width: 3,
        basic_font_size: 2,
        max_font_size: 2,
        min_font_size: 1,
        ..Default::default()
    })
    .unwrap();
    let at = VocabAtlas::build(&["", "I"], &r).unwrap();
    let cfg = ModelConfig {
        hidden_size: 4,
        intermediate_size: 4,
        num_heads: 1,
        num_layers: 1,
        vocab_size: 2,
        max_positions: 4,
        image_dims: Some((2, 3)),
        ..ModelConfig::desk(EmbeddingMode::Pixel)
    };
    let mut m = Model64::new(cfg, Some(&at)).unwrap();
    let w = Array2::from_shape_vec((6, 4), (1..=24).map(f64::from).collect()).unwrap();
    let bias = Array1::from(vec![0.5, -0.5, 1.0, 2.0]);
    m.params.embedding = Embedding::Pixel { weight: w.clone(), bias: bias.clone() };
    let img: Vec<f64> = at.row_bytes(1).unwrap().iter().map(|&p| f64::from(p) / 255.0).collect();
    let e = m.pixel_embed(&at, &[1]).unwrap();
    for j in 0..4 {
        let manual = bias[j] + (0..6).map(|i| img[i] * w[[i, j]]).sum::<f64>();
        assert!((e[[0, j]] - manual).abs() < 1e-12);
    }
}

#[test]
fn errors_are_reported() {
    let a = atlas();
    let m = Model32::new(small(EmbeddingMode::Pixel, PositionEncoding::Rotary), Some(&a)).unwrap();
    assert!(matches!(m.forward(Some(&a), &[0; 33]), Err(ModelError::SequenceTooLong { len: 33, max: 32 })));
    assert!(matches!(m.forward(Some(&a), &[99]), Err(ModelError::Atlas(_))));
    assert!(matches!(m.forward(None, &[1]), Err(ModelError::AtlasRequired)));
    let other = VocabAtlas::build(&WORDS, &Renderer::new(pixlm::RenderConfig { basic_font_size: 9, ..Default::default() }).unwrap()).unwrap();
    assert!(matches!(m.forward(Some(&other), &[1]), Err(ModelError::AtlasMismatch)));
    let bad = ModelConfig { num_heads: 5, ..small(EmbeddingMode::Token, PositionEncoding::Rotary) };
    assert!(Model32::new(bad, None).is_err());
    let ok = ModelConfig { hidden_size: 64, num_heads: 4, ..small(EmbeddingMode::Token, PositionEncoding::Rotary) };
    assert!(Model32::new(ok, None).is_ok());
}

#[test]
fn same_seed_same_parameters() {
    let a = atlas();
    let cfg = small(EmbeddingMode::Pixel, PositionEncoding::Rotary);
    let x = Model32::new(cfg.clone(), Some(&a)).unwrap();
    let y = Model32::new(cfg.clone(), Some(&a)).unwrap();
    assert_eq!(x.params.checksum(), y.params.checksum());
    let z = Model32::new(ModelConfig { seed: 2, ..cfg }, Some(&a)).unwrap();
    assert_ne!(x.params.checksum(), z.params.checksum());
}

#[test]
fn desk_parameter_counts_are_comparable() {
    let p = ModelConfig::desk(EmbeddingMode::Pixel).parameter_count();
    let t = ModelConfig::desk(EmbeddingMode::Token).parameter_count();
    let rel = (p as f64 - t as f64).abs() / p.max(t) as f64;
    assert!(rel < 0.10, "pixel {p} token {t}");
}

#[test]
fn generation_contract() {
    let a = atlas();
    let m = Model32::new(small(EmbeddingMode::Pixel, PositionEncoding::Rotary), Some(&a)).unwrap();
    assert_eq!(m.generate(Some(&a), &[0, 2, 3], 0, Sampling::Greedy, Some(1)).unwrap(), vec![0, 2, 3]);
    let t = Sampling::Temperature { temperature: 1.0, seed: 9 };
    let x = m.generate(Some(&a), &[0], 10, t, None).unwrap();
    assert_eq!(x, m.generate(Some(&a), &[0], 10, t, None).unwrap());
    assert_eq!(x.len(), 11);
    assert!(m.generate(Some(&a), &[], 3, Sampling::Greedy, None).is_err());
    assert!(m.generate(Some(&a), &[0; 40], 1, Sampling::Greedy, None).is_err());
}

#[test]
fn greedy_completes_an_overfit_pattern() {
    let a = atlas();
    let (ta, tb, tc) = (2, 3, 4);
    let doc: Vec<usize> = [ta, tb, tc].iter().copied().cycle().take(60).collect();
    let mut m = Model32::new(small(EmbeddingMode::Pixel, PositionEncoding::Rotary), Some(&a)).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        batch_size: 4,
        sequence_length: 16,
        lr: 3e-3,
        warmup: 10,
        log_every: 0,
        ..TrainConfig::desk()
    };
    let curve = train::train(&mut m, Some(&a), &cfg, &[doc], 0, 1, |_| {}).unwrap();
    let tail: f64 = curve[curve.len() - 10..].iter().map(|p| p.loss).sum::<f64>() / 10.0;
    assert!(tail < 0.05, "final loss {tail}");
    let out = m.generate(Some(&a), &[0, ta, tb], 1, Sampling::Greedy, None).unwrap();
    assert_eq!(out.last(), Some(&tc));
}

#[test]
fn homoglyph_twins_embed_closer_than_other_tokens() {
    let r = Renderer::with_defaults().unwrap();
    let vocab = BpeTrainer::new(400).train(&pixlm::corpus::bundled_sentences()).unwrap();
    let atlas = VocabAtlas::from_vocab(&vocab, &r).unwrap();
    let m = Model32::new(ModelConfig { vocab_size: vocab.len(), ..ModelConfig::desk(EmbeddingMode::Pixel) }, Some(&atlas))
        .unwrap();
    let dict = NoiseDictionary::bundled();
    let spec = NoiseSpec::new(1.0, 4).unwrap();
    let candidates: Vec<usize> =
        (0..vocab.len()).filter(|&i| vocab.surface(i as u32).chars().filter(|c| c.is_ascii_lowercase()).count() >= 2).collect();
    let tokens: Vec<usize> = candidates.iter().copied().step_by((candidates.len() / 50).max(1)).take(50).collect();
    assert_eq!(tokens.len(), 50);
    let twins: Vec<String> = tokens.iter().map(|&t| pixlm::noise::corrupt(&vocab.surface(t as u32), &spec, &dict)).collect();
    let ext = atlas.extend(&twins, &r).unwrap();
    let cos = |x: ndarray::ArrayView1<f32>, y: ndarray::ArrayView1<f32>| {
        let d: f32 = x.dot(&y);
        f64::from(d / (x.dot(&x).sqrt() * y.dot(&y).sqrt()))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut twin_sum, mut other_sum) = (0.0, 0.0);
    for (k, &t) in tokens.iter().enumerate() {
        let other = loop {
            let o = candidates[rng.random_range(0..candidates.len())];
            if o != t {
                break o;
            }
        };
        let e = m.pixel_embed(&ext, &[t, atlas.len() + k, other]).unwrap();
        twin_sum += cos(e.row(0), e.row(1));
        other_sum += cos(e.row(0), e.row(2));
    }
    assert!(twin_sum / 50.0 > other_sum / 50.0, "twin {} other {}", twin_sum / 50.0, other_sum / 50.0);
}

#[test]
fn loss_gradient_batch_masks_ignored_targets() {
    let m = Model64::new(small(EmbeddingMode::Token, PositionEncoding::Rotary), None).unwrap();
    let full = Example { inputs: vec![0, 6, 7], targets: vec![6, 7, 8] };
    let masked = Example { inputs: vec![0, 6, 7], targets: vec![6, IGNORE, 8] };
    let (_, _, n_full) = m.loss_and_grad(None, &[full]).unwrap();
    let (_, _, n_masked) = m.loss_and_grad(None, &[masked]).unwrap();
    assert_eq!((n_full, n_masked), (3, 2));
}
