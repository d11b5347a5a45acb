use std::sync::OnceLock;

use pixlm::noise::{
    self, corrupt, corrupt_corpus, corrupt_tokens, pixel_cosine, pixel_groups, token_groups, Corrupter,
    SimilarityLevel, SweepConfig, SweepModel,
};
use pixlm::train;
use pixlm::{BpeTrainer, BpeVocab, EmbeddingMode, Model, ModelConfig, NoiseDictionary, NoiseSpec, Renderer, VocabAtlas};
use proptest::prelude::*;

fn dict() -> &'static NoiseDictionary {
    static D: OnceLock<NoiseDictionary> = OnceLock::new();
    D.get_or_init(NoiseDictionary::bundled)
}

fn vocab() -> &'static BpeVocab {
    static V: OnceLock<BpeVocab> = OnceLock::new();
    V.get_or_init(|| BpeTrainer::new(320).train(&pixlm::corpus::bundled_sentences()).unwrap())
}

fn spec(p: f64, seed: u64) -> NoiseSpec {
    NoiseSpec::new(p, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn zero_probability_is_identity(text in any::<String>(), seed in any::<u64>()) {
        prop_assert_eq!(corrupt(&text, &spec(0.0, seed), dict()), text);
    }

    #[test]
    fn corruption_preserves_length_and_draws_from_dictionary(text in "[a-zA-Z .,]{0,60}", p in 0.0f64..=1.0, seed in any::<u64>()) {
        let out = corrupt(&text, &spec(p, seed), dict());
        prop_assert_eq!(out.chars().count(), text.chars().count());
        for (a, b) in text.chars().zip(out.chars()) {
            if a != b {
                prop_assert!(dict().get(a).is_some_and(|r| r.contains(&b)), "{a} -> {b}");
            }
        }
        prop_assert_eq!(corrupt(&text, &spec(p, seed), dict()), out);
    }

    #[test]
    fn token_count_is_preserved(words in prop::collection::vec("[a-z]{1,8}", 0..10), p in 0.0f64..=1.0) {
        prop_assert_eq!(corrupt_tokens(&words, &spec(p, 1), dict()).len(), words.len());
    }

    #[test]
    fn lower_levels_are_nested_in_higher(text in "[a-z ]{1,60}", seed in any::<u64>(), lo in 0.0f64..0.5, extra in 0.0f64..0.5) {
        let a = corrupt(&text, &spec(lo, seed), dict());
        let b = corrupt(&text, &spec(lo + extra, seed), dict());
        for ((c, x), y) in text.chars().zip(a.chars()).zip(b.chars()) {
            if x != c {
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn raw_similarity_is_bounded_reflexive_and_symmetric(a in "[a-z]{1,6}( [a-z]{1,6}){0,4}", seed in any::<u64>()) {
        let r = Renderer::with_defaults().unwrap();
        let b = corrupt(&a, &spec(0.4, seed), dict());
        let ab = pixel_cosine(&a, &b, vocab(), &r, SimilarityLevel::RawPixels, None).unwrap();
        let ba = pixel_cosine(&b, &a, vocab(), &r, SimilarityLevel::RawPixels, None).unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(pixel_cosine(&a, &a, vocab(), &r, SimilarityLevel::RawPixels, None).unwrap(), 1.0);
        if vocab().encode(&a).len() == vocab().encode(&b).len() {
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }
}

#[test]
fn forced_substitution() {
    let d = NoiseDictionary::parse("a\tа\n").unwrap();
    assert_eq!(corrupt("aaa", &spec(1.0, 0), &d), "ааа");
    assert_eq!(corrupt("bab", &spec(1.0, 0), &d), "bаb");
}

#[test]
fn replacement_rate_matches_p() {
    let d = NoiseDictionary::parse("a\tа\n").unwrap();
    let text = "a".repeat(100_000);
    let out = Corrupter::new(&d, &spec(0.3, 11)).corrupt(&text);
    let rate = out.chars().filter(|&c| c != 'a').count() as f64 / 1e5;
    assert!((rate - 0.3).abs() < 0.01, "{rate}");
}

#[test]
fn dictionary_entries_are_proper_confusables() {
    let d = dict();
    let text = d.to_text();
    for line in text.lines() {
        let (src, reps) = line.split_once('\t').unwrap();
        assert_eq!(src.chars().count(), 1);
        let reps: Vec<&str> = reps.split(',').collect();
        assert!(!reps.is_empty());
        assert!(reps.iter().all(|r| r.chars().count() == 1));
        assert!(reps.iter().any(|r| r != &src), "{src} maps only to itself");
    }
    assert!(('a'..='z').all(|c| d.contains(c)));
}

fn tiny(mode: EmbeddingMode, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        hidden_size: 16,
        intermediate_size: 32,
        num_heads: 2,
        num_layers: 1,
        vocab_size,
        max_positions: 64,
        ..ModelConfig::desk(mode)
    }
}

fn docs() -> Vec<Vec<usize>> {
    train::tokenize_corpus(vocab(), &pixlm::corpus::bundled_sentences()[..20])
}

#[test]
fn fixed_tokenization_keeps_token_count_and_untouched_images() {
    let r = Renderer::with_defaults().unwrap();
    let atlas = VocabAtlas::from_vocab(vocab(), &r).unwrap();
    let docs = docs();
    let noise = corrupt_corpus(vocab(), &docs, &spec(0.3, 5), dict());
    let (groups, ext) = pixel_groups(&atlas, &r, &docs, &noise).unwrap();
    let mut changed = 0;
    for ((doc, g), n) in docs.iter().zip(&groups).zip(&noise) {
        assert_eq!(g.len(), doc.len());
        for ((&clean, grp), n) in doc.iter().zip(g).zip(n) {
            assert_eq!(grp.len(), 1, "pixel inputs are one image per clean token");
            match n {
                None => assert_eq!(grp[0], clean),
                Some(s) => {
                    changed += 1;
                    assert!(grp[0] >= atlas.len());
                    assert_eq!(ext.row_bytes(grp[0]).unwrap(), r.render_word(s).as_bytes());
                }
            }
        }
    }
    assert!(changed > 0);
    for (g, n) in token_groups(vocab(), &docs, &noise).iter().zip(&noise) {
        assert_eq!(g.len(), n.len());
    }
}

#[test]
fn clean_sweep_cells_equal_plain_perplexity() {
    let r = Renderer::with_defaults().unwrap();
    let atlas = VocabAtlas::from_vocab(vocab(), &r).unwrap();
    let pm = Model::<f32>::new(tiny(EmbeddingMode::Pixel, vocab().len()), Some(&atlas)).unwrap();
    let tm = Model::<f32>::new(tiny(EmbeddingMode::Token, vocab().len()), None).unwrap();
    let docs = docs();
    let (bos, eos) = (vocab().bos() as usize, vocab().eos() as usize);
    for (m, a) in [(&pm, Some(&atlas)), (&tm, None)] {
        let sm = SweepModel { name: "m", model: m, atlas: a };
        let noised = noise::noised_perplexity(&sm, vocab(), Some(&r), &docs, &spec(0.0, 3), dict()).unwrap();
        let plain = train::perplexity(m, a, &docs, bos, eos).unwrap();
        assert_eq!(noised, plain);
    }
}

#[test]
fn sweep_reports_every_cell_once() {
    let r = Renderer::with_defaults().unwrap();
    let atlas = VocabAtlas::from_vocab(vocab(), &r).unwrap();
    let pm = Model::<f32>::new(tiny(EmbeddingMode::Pixel, vocab().len()), Some(&atlas)).unwrap();
    let tm = Model::<f32>::new(tiny(EmbeddingMode::Token, vocab().len()), None).unwrap();
    let models = [
        SweepModel { name: "pixel", model: &pm, atlas: Some(&atlas) },
        SweepModel { name: "token", model: &tm, atlas: None },
    ];
    let cfg = SweepConfig { levels: vec![0.0, 0.2, 0.5], ..SweepConfig::standard("eval", vec![1, 2]) };
    let report = noise::robustness_sweep(&models, vocab(), Some(&r), &docs()[..5], dict(), &cfg).unwrap();
    assert_eq!(report.rows.len(), 2 * 3 * 2);
    for name in ["pixel", "token"] {
        for p in [0.0, 0.2, 0.5] {
            for seed in [1, 2] {
                let n = report.cells(name, "eval", p).filter(|r| r.seed == Some(seed)).count();
                assert_eq!(n, 1, "{name} {p} {seed}");
            }
        }
    }
    assert!(report.rows.iter().all(|r| r.ppl.is_some_and(|v| v >= 1.0)));
}

#[test]
fn invalid_probability_is_rejected() {
    assert!(NoiseSpec::new(1.5, 0).is_err());
    assert!(NoiseSpec::new(-0.1, 0).is_err());
}

#[test]
fn projected_similarity_needs_a_pixel_model() {
    let r = Renderer::with_defaults().unwrap();
    assert!(pixel_cosine("an apple", "an apple", vocab(), &r, SimilarityLevel::Projected, None).is_err());
    let atlas = VocabAtlas::from_vocab(vocab(), &r).unwrap();
    let pm = Model::<f32>::new(tiny(EmbeddingMode::Pixel, vocab().len()), Some(&atlas)).unwrap();
    let c = pixel_cosine("an apple", "аn аpple", vocab(), &r, SimilarityLevel::Projected, Some(&pm)).unwrap();
    assert!((-1.0..=1.0).contains(&c));
}
