use std::time::Instant;

use pixlm::atlas::AtlasError;
use pixlm::{one_hot, BpeTrainer, Renderer, VocabAtlas};
use proptest::prelude::*;

fn renderer() -> Renderer {
    Renderer::with_defaults().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_equal_fresh_renders(words in prop::collection::vec("[a-zа-я]{0,7}", 1..20)) {
        let r = renderer();
        let atlas = VocabAtlas::build(&words, &r).unwrap();
        prop_assert_eq!(atlas.len(), words.len());
        for (i, w) in words.iter().enumerate() {
            let img = r.render_word(w);
            prop_assert_eq!(atlas.row_bytes(i).unwrap(), img.as_bytes());
        }
    }

    #[test]
    fn product_equals_lookup(ids in prop::collection::vec(0usize..12, 0..20)) {
        let words: Vec<String> = (0..12).map(|i| format!("t{i}")).collect();
        let atlas = VocabAtlas::build(&words, &renderer()).unwrap();
        let ids32: Vec<u32> = ids.iter().map(|&i| i as u32).collect();
        let indicator = one_hot::<f64>(&ids32, atlas.len());
        let a = atlas.lookup::<f64>(&ids).unwrap();
        let b = atlas.lookup_as_product(indicator.view()).unwrap();
        prop_assert_eq!(a.shape(), &[ids.len(), 1000]);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn serialization_round_trips(words in prop::collection::vec("[a-z]{0,5}", 1..12)) {
        let atlas = VocabAtlas::build(&words, &renderer()).unwrap();
        let bytes = atlas.to_bytes();
        let back = VocabAtlas::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert!(back == atlas);
    }

    #[test]
    fn truncation_is_rejected(cut in 1usize..200) {
        let atlas = VocabAtlas::build(&["a", "bc", "def"], &renderer()).unwrap();
        let bytes = atlas.to_bytes();
        let n = bytes.len().saturating_sub(cut);
        prop_assert!(VocabAtlas::from_bytes(&bytes[..n]).is_err());
    }
}

#[test]
fn desk_vocabulary_atlas_matches_renders() {
    let corpus = pixlm::corpus::generate_corpus(100_000, 1);
    let vocab = BpeTrainer::new(512).train(&corpus).unwrap();
    assert_eq!(vocab.len(), 512);
    let r = renderer();
    let atlas = VocabAtlas::from_vocab(&vocab, &r).unwrap();
    for id in 0..vocab.len() {
        assert_eq!(atlas.row_bytes(id).unwrap(), r.render_word(&vocab.surface(id as u32)).as_bytes(), "id {id}");
    }
    let again = VocabAtlas::from_vocab(&vocab, &r).unwrap();
    assert_eq!(again.config_hash(), atlas.config_hash());
    assert_eq!(again.as_bytes(), atlas.as_bytes());
}

#[test]
fn empty_lookup_has_image_width() {
    let atlas = VocabAtlas::build(&["a"], &renderer()).unwrap();
    assert_eq!(atlas.lookup::<f32>(&[]).unwrap().shape(), &[0, 1000]);
}

#[test]
fn out_of_range_id_is_named() {
    let atlas = VocabAtlas::build(&["a", "b"], &renderer()).unwrap();
    match atlas.lookup::<f32>(&[0, 7]) {
        Err(AtlasError::IdOutOfRange { id, len }) => assert_eq!((id, len), (7, 2)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn file_round_trip_and_pairing_guard() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.bin");
    let r = renderer();
    let atlas = VocabAtlas::build(&["one", "two", "three"], &r).unwrap();
    atlas.persist(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), atlas.to_bytes());
    assert!(VocabAtlas::restore_for(&path, &r).is_ok());
    let other = Renderer::new(pixlm::RenderConfig { basic_font_size: 11, ..Default::default() }).unwrap();
    assert!(matches!(VocabAtlas::restore_for(&path, &other), Err(AtlasError::ConfigMismatch)));
}

/// Median nanoseconds per single-id lookup over random ids.
fn per_lookup_ns(atlas: &VocabAtlas) -> f64 {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let ids: Vec<usize> = (0..20_000)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % atlas.len() as u64) as usize
        })
        .collect();
    let mut samples: Vec<f64> = (0..5)
        .map(|_| {
            let t = Instant::now();
            let mut sink = 0.0f32;
            for &id in &ids {
                sink += atlas.lookup::<f32>(&[id]).unwrap()[[0, 0]];
            }
            std::hint::black_box(sink);
            t.elapsed().as_nanos() as f64 / ids.len() as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[2]
}

#[test]
fn lookup_cost_does_not_grow_with_vocabulary() {
    let r = renderer();
    let small: Vec<String> = (0..1_000).map(|i| format!("s{i}")).collect();
    let large: Vec<String> = (0..32_000).map(|i| format!("l{i}")).collect();
    let a = VocabAtlas::build(&small, &r).unwrap();
    let b = VocabAtlas::build(&large, &r).unwrap();
    let (ta, tb) = (per_lookup_ns(&a), per_lookup_ns(&b));
    assert!(tb < 3.0 * ta, "1k: {ta:.0} ns, 32k: {tb:.0} ns");
}
