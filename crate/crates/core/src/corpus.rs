//! Deterministic synthetic corpora: a small English-like grammar for
//! pretraining and evaluation, plus a keyword-labelled sentiment set.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 200 sentences shipped with the crate, one per line.
pub const BUNDLED_CORPUS: &str = include_str!("../assets/desk_corpus.txt");

pub fn bundled_sentences() -> Vec<&'static str> {
    BUNDLED_CORPUS.lines().filter(|l| !l.trim().is_empty()).collect()
}

const SUBJECTS: &[&str] = &[
    "the old man", "a young girl", "my neighbor", "the teacher", "our dog", "the farmer", "a small child",
    "the doctor", "her brother", "the king", "a tired student", "the baker", "his mother", "the captain",
    "a quiet woman", "the little boy", "my friend", "the cat", "a strange visitor", "the queen",
    "the gardener", "our uncle", "a busy cook", "the driver", "the painter", "your sister",
];

const VERBS: &[&str] = &[
    "walked to", "looked at", "found", "painted", "cleaned", "visited", "carried", "bought", "sold",
    "opened", "closed", "watched", "remembered", "built", "left", "followed", "fixed", "loved", "noticed",
    "washed", "dropped", "picked up", "forgot", "wanted", "reached", "counted",
];

const OBJECTS: &[&str] = &[
    "the red door", "a wooden box", "the river", "an apple", "the market", "the old house", "a green bottle",
    "the garden", "a letter", "the bridge", "the small boat", "a basket of bread", "the window", "the hill",
    "a yellow hat", "the village", "the library", "a heavy stone", "the new car", "the forest", "a cup of tea",
    "the station", "the blue chair", "a warm coat", "the school", "the kitchen",
];

const TIMES: &[&str] = &[
    "in the morning", "every day", "last night", "after lunch", "before dinner", "on sunday", "at noon",
    "in the winter", "this evening", "yesterday", "once a week", "at dawn", "in the summer", "after the rain",
];

const ADJECTIVES: &[&str] = &[
    "happy", "tired", "hungry", "angry", "quiet", "busy", "cold", "warm", "proud", "sleepy", "afraid",
    "kind", "late", "calm", "bright", "lonely",
];

const THINGS: &[&str] = &[
    "movie", "book", "song", "meal", "trip", "play", "story", "show", "game", "lesson", "party", "concert",
];

pub const POSITIVE: &[&str] = &["good", "great", "wonderful", "lovely", "excellent", "brilliant", "pleasant", "superb"];
pub const NEGATIVE: &[&str] = &["bad", "awful", "terrible", "boring", "dreadful", "poor", "horrible", "dull"];

const PROVERBS: &[&str] = &[
    "an apple a day keeps the doctor away",
    "an apple a day keeps doctor away",
    "the early bird catches the worm",
    "a stitch in time saves nine",
    "still waters run deep",
];

fn pick<'a>(rng: &mut impl Rng, list: &[&'a str]) -> &'a str {
    list.choose(rng).copied().expect("non-empty word list")
}

fn sentence(rng: &mut impl Rng) -> String {
    let s = pick(rng, SUBJECTS);
    match rng.random_range(0..9) {
        0 | 1 => format!("{s} {} {} {}.", pick(rng, VERBS), pick(rng, OBJECTS), pick(rng, TIMES)),
        2 => format!("{s} {} {} because {} was {}.", pick(rng, VERBS), pick(rng, OBJECTS), pick(rng, SUBJECTS), pick(rng, ADJECTIVES)),
        3 => format!("when {s} {} {}, {} {} {}.", pick(rng, VERBS), pick(rng, OBJECTS), pick(rng, SUBJECTS), pick(rng, VERBS), pick(rng, OBJECTS)),
        4 => {
            let words = if rng.random_bool(0.5) { POSITIVE } else { NEGATIVE };
            format!("the {} was {}.", pick(rng, THINGS), pick(rng, words))
        }
        5 => format!("did {s} {} {}?", pick(rng, VERBS), pick(rng, OBJECTS)),
        6 => format!("{s} was {} {}.", pick(rng, ADJECTIVES), pick(rng, TIMES)),
        7 => {
            let words = if rng.random_bool(0.5) { POSITIVE } else { NEGATIVE };
            format!("{s} said that the {} was {}.", pick(rng, THINGS), pick(rng, words))
        }
        _ => {
            if rng.random_bool(0.3) {
                format!("{}.", pick(rng, PROVERBS))
            } else {
                format!("{s} {} {} and {} {}.", pick(rng, VERBS), pick(rng, OBJECTS), pick(rng, VERBS), pick(rng, OBJECTS))
            }
        }
    }
}

/// Sentences from the grammar until at least `target_bytes` of text
/// (newlines included) are produced.
pub fn generate_corpus(target_bytes: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut total = 0;
    while total < target_bytes {
        let s = sentence(&mut rng);
        total += s.len() + 1;
        out.push(s);
    }
    out
}

/// `count` sentences from the grammar.
pub fn generate_sentences(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sentence(&mut rng)).collect()
}

/// Balanced `(label, text)` pairs whose label is decided by the final
/// sentiment word alone (1 = positive).
pub fn sentiment_examples(count: usize, seed: u64) -> Vec<(usize, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let label = i % 2;
            let word = pick(&mut rng, if label == 1 { POSITIVE } else { NEGATIVE });
            let text = match rng.random_range(0..3) {
                0 => format!("the {} was {word}", pick(&mut rng, THINGS)),
                1 => format!("{} said that the {} was {word}", pick(&mut rng, SUBJECTS), pick(&mut rng, THINGS)),
                _ => format!("{} {} {} and it was {word}", pick(&mut rng, SUBJECTS), pick(&mut rng, VERBS), pick(&mut rng, OBJECTS)),
            };
            (label, text)
        })
        .collect()
}

/// Parses `label<TAB>text` lines; labels must be 0 or 1.
pub fn parse_labeled(text: &str) -> Result<Vec<(usize, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line.split_once('\t').ok_or_else(|| format!("line {}: expected label<TAB>text", i + 1))?;
        let label = match label.trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(format!("line {}: label `{other}` is not 0 or 1", i + 1)),
        };
        out.push((label, body.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_sized() {
        let a = generate_corpus(20_000, 4);
        assert_eq!(a, generate_corpus(20_000, 4));
        assert_ne!(a, generate_corpus(20_000, 5));
        let bytes: usize = a.iter().map(|s| s.len() + 1).sum();
        assert!((20_000..20_200).contains(&bytes));
    }

    #[test]
    fn bundled_corpus_has_200_sentences() {
        assert_eq!(bundled_sentences().len(), 200);
    }

    #[test]
    fn sentiment_labels_follow_the_keyword() {
        for (label, text) in sentiment_examples(100, 1) {
            let last = text.rsplit(' ').next().unwrap();
            assert_eq!(POSITIVE.contains(&last), label == 1);
            assert_eq!(NEGATIVE.contains(&last), label == 0);
        }
    }

    #[test]
    fn labeled_parsing() {
        assert_eq!(parse_labeled("1\tgood\n0\tbad\n").unwrap(), vec![(1, "good".into()), (0, "bad".into())]);
        assert!(parse_labeled("2\tx").unwrap_err().contains("line 1"));
        assert!(parse_labeled("1 x").is_err());
    }
}
