//! Byte-pair-encoding tokenizer with byte fallback.
//!
//! Pre-tokenization splits text in front of every ASCII space; the space is
//! folded into the next word as the `▁` marker, so `"a cat"` becomes the
//! chunks `"a"` and `"▁cat"`. Characters outside the learned alphabet, and a
//! literal `▁` in the input, are spelled as UTF-8 byte pieces. Decoding is the
//! exact inverse of encoding.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub type TokenId = u32;

pub const MARKER: char = '▁';
pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const FORMAT_HEADER: &str = "pixlm-bpe v1";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("target vocabulary {target} is smaller than the base vocabulary {base}")]
    TargetTooSmall { target: usize, base: usize },
    #[error("token id {id} out of range for vocabulary of {len}")]
    IdOutOfRange { id: TokenId, len: usize },
    #[error("tokenizer file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PieceKind {
    Special,
    Byte(u8),
    Text,
}

/// Training options.
#[derive(Clone, Debug)]
pub struct BpeTrainer {
    pub vocab_size: usize,
    /// Reserve 256 byte pieces so that every input is representable.
    pub byte_fallback: bool,
}

impl BpeTrainer {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size, byte_fallback: true }
    }

    pub fn byte_fallback(mut self, enabled: bool) -> Self {
        self.byte_fallback = enabled;
        self
    }

    /// Greedy highest-frequency merges until the vocabulary reaches the
    /// target or no pair is left. Ties go to the lexicographically smallest
    /// `(left, right)` pair.
    pub fn train<S: AsRef<str>>(&self, corpus: &[S]) -> Result<BpeVocab, TokenizerError> {
        let mut word_counts: HashMap<Chunk, u64> = HashMap::new();
        let mut any_text = false;
        for doc in corpus {
            let doc = doc.as_ref();
            any_text |= !doc.is_empty();
            for chunk in split_chunks(doc) {
                *word_counts.entry(chunk).or_default() += 1;
            }
        }
        if !any_text {
            return Err(TokenizerError::EmptyCorpus);
        }

        let mut alphabet: BTreeSet<char> = BTreeSet::new();
        for word in word_counts.keys() {
            if word.leading_space {
                alphabet.insert(MARKER);
            }
            // a literal marker has no piece of its own
            alphabet.extend(word.body.chars().filter(|&c| c != MARKER));
        }
        let mut vocab = BpeVocab::base(self.byte_fallback, alphabet.into_iter().map(String::from));
        let base = vocab.len();
        if self.vocab_size < base {
            return Err(TokenizerError::TargetTooSmall { target: self.vocab_size, base });
        }

        // deterministic word order
        let mut words: Vec<(Chunk, u64)> = word_counts.into_iter().collect();
        words.sort_unstable();
        let mut segs: Vec<Vec<TokenId>> = words.iter().map(|(w, _)| vocab.initial_symbols(w)).collect();
        let counts: Vec<u64> = words.iter().map(|(_, c)| *c).collect();

        let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        let mut pair_words: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
        for (wi, seg) in segs.iter().enumerate() {
            for pair in vocab.mergeable_pairs(seg) {
                *pair_counts.entry(pair).or_default() += counts[wi];
                pair_words.entry(pair).or_default().insert(wi);
            }
        }

        while vocab.len() < self.vocab_size {
            let best = pair_counts
                .iter()
                .filter(|(_, &c)| c > 0)
                .max_by(|(pa, ca), (pb, cb)| {
                    ca.cmp(cb).then_with(|| {
                        // smaller strings win ties, so reverse the comparison
                        let ka = (vocab.piece(pa.0), vocab.piece(pa.1));
                        let kb = (vocab.piece(pb.0), vocab.piece(pb.1));
                        kb.cmp(&ka)
                    })
                })
                .map(|(p, _)| *p);
            let Some(pair) = best else { break };
            let merged = vocab.push_merge(pair);

            let affected: Vec<usize> = pair_words.remove(&pair).map(|s| s.into_iter().collect()).unwrap_or_default();
            let mut affected = affected;
            affected.sort_unstable();
            for wi in affected {
                let c = counts[wi];
                for p in vocab.mergeable_pairs(&segs[wi]) {
                    if let Some(v) = pair_counts.get_mut(&p) {
                        *v -= c;
                    }
                    if let Some(set) = pair_words.get_mut(&p) {
                        set.remove(&wi);
                    }
                }
                segs[wi] = apply_merge(&segs[wi], pair, merged);
                for p in vocab.mergeable_pairs(&segs[wi]) {
                    *pair_counts.entry(p).or_default() += c;
                    pair_words.entry(p).or_default().insert(wi);
                }
            }
            pair_counts.remove(&pair);
            pair_counts.retain(|_, c| *c > 0);
        }
        Ok(vocab)
    }
}

/// Pre-tokenized word: an optional leading space plus literal characters.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct Chunk {
    leading_space: bool,
    body: String,
}

/// Splits `text` in front of every space; each space becomes a leading marker.
fn split_chunks(text: &str) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut cur = Chunk { leading_space: false, body: String::new() };
    for c in text.chars() {
        if c == ' ' {
            if cur.leading_space || !cur.body.is_empty() {
                chunks.push(std::mem::replace(&mut cur, Chunk { leading_space: true, body: String::new() }));
            } else {
                cur.leading_space = true;
            }
        } else {
            cur.body.push(c);
        }
    }
    if cur.leading_space || !cur.body.is_empty() {
        chunks.push(cur);
    }
    chunks
}

fn apply_merge(seg: &[TokenId], pair: (TokenId, TokenId), merged: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(seg.len());
    let mut i = 0;
    while i < seg.len() {
        if i + 1 < seg.len() && seg[i] == pair.0 && seg[i + 1] == pair.1 {
            out.push(merged);
            i += 2;
        } else {
            out.push(seg[i]);
            i += 1;
        }
    }
    out
}

/// Trained tokenizer: dense id space of specials, byte pieces, alphabet
/// pieces and merge results, in that order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeVocab {
    pieces: Vec<String>,
    kinds: Vec<PieceKind>,
    piece_ids: HashMap<String, TokenId>,
    /// Ordered merges as `(left, right, result)`.
    merges: Vec<(TokenId, TokenId, TokenId)>,
    merge_rank: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    byte_fallback: bool,
    byte_base: Option<TokenId>,
    alphabet_len: usize,
}

impl BpeVocab {
    fn base(byte_fallback: bool, alphabet: impl IntoIterator<Item = String>) -> Self {
        let mut v = Self {
            pieces: Vec::new(),
            kinds: Vec::new(),
            piece_ids: HashMap::new(),
            merges: Vec::new(),
            merge_rank: HashMap::new(),
            byte_fallback,
            byte_base: None,
            alphabet_len: 0,
        };
        for s in [PAD, BOS, EOS, UNK] {
            v.push_piece(s.to_string(), PieceKind::Special);
        }
        if byte_fallback {
            v.byte_base = Some(v.pieces.len() as TokenId);
            for b in 0..=255u8 {
                v.push_piece(format!("<0x{b:02X}>"), PieceKind::Byte(b));
            }
        }
        for s in alphabet {
            if !v.piece_ids.contains_key(&s) {
                v.push_piece(s, PieceKind::Text);
                v.alphabet_len += 1;
            }
        }
        v
    }

    fn push_piece(&mut self, s: String, kind: PieceKind) -> TokenId {
        let id = self.pieces.len() as TokenId;
        self.piece_ids.insert(s.clone(), id);
        self.pieces.push(s);
        self.kinds.push(kind);
        id
    }

    fn push_merge(&mut self, pair: (TokenId, TokenId)) -> TokenId {
        let s = format!("{}{}", self.pieces[pair.0 as usize], self.pieces[pair.1 as usize]);
        let id = match self.piece_ids.get(&s) {
            Some(&id) => id,
            None => self.push_piece(s, PieceKind::Text),
        };
        self.merge_rank.insert(pair, (self.merges.len(), id));
        self.merges.push((pair.0, pair.1, id));
        id
    }

    fn mergeable_pairs<'a>(&'a self, seg: &'a [TokenId]) -> impl Iterator<Item = (TokenId, TokenId)> + 'a {
        seg.windows(2)
            .filter(|w| self.kinds[w[0] as usize] == PieceKind::Text && self.kinds[w[1] as usize] == PieceKind::Text)
            .map(|w| (w[0], w[1]))
    }

    fn initial_symbols(&self, chunk: &Chunk) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(chunk.body.len() + 1);
        if chunk.leading_space {
            match self.piece_ids.get(MARKER.encode_utf8(&mut [0u8; 4]) as &str) {
                Some(&id) => out.push(id),
                None => self.push_char(' ', false, &mut out),
            }
        }
        for c in chunk.body.chars() {
            self.push_char(c, c != MARKER, &mut out);
        }
        out
    }

    fn push_char(&self, c: char, as_piece: bool, out: &mut Vec<TokenId>) {
        let mut buf = [0u8; 4];
        if as_piece {
            if let Some(&id) = self.piece_ids.get(c.encode_utf8(&mut buf) as &str) {
                if self.kinds[id as usize] == PieceKind::Text {
                    out.push(id);
                    return;
                }
            }
        }
        match self.byte_base {
            Some(base) => out.extend(c.encode_utf8(&mut buf).bytes().map(|b| base + TokenId::from(b))),
            None => out.push(self.unk()),
        }
    }

    fn encode_chunk(&self, chunk: &Chunk) -> Vec<TokenId> {
        let mut seg = self.initial_symbols(chunk);
        loop {
            let best = seg
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id)))
                .min_by_key(|(rank, _, _)| *rank);
            match best {
                Some((_, pair, id)) => seg = apply_merge(&seg, pair, id),
                None => return seg,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pad(&self) -> TokenId {
        0
    }

    pub fn bos(&self) -> TokenId {
        1
    }

    pub fn eos(&self) -> TokenId {
        2
    }

    pub fn unk(&self) -> TokenId {
        3
    }

    pub fn has_byte_fallback(&self) -> bool {
        self.byte_fallback
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Ordered merges as piece strings.
    pub fn merges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.merges.iter().map(|&(a, b, _)| (self.piece(a), self.piece(b)))
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.kinds.get(id as usize) == Some(&PieceKind::Special)
    }

    pub fn is_byte(&self, id: TokenId) -> bool {
        matches!(self.kinds.get(id as usize), Some(PieceKind::Byte(_)))
    }

    /// Raw piece string, including the `▁` marker.
    pub fn piece(&self, id: TokenId) -> &str {
        &self.pieces[id as usize]
    }

    pub fn piece_id(&self, piece: &str) -> Option<TokenId> {
        self.piece_ids.get(piece).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        split_chunks(text).iter().flat_map(|c| self.encode_chunk(c)).collect()
    }

    /// Encodes `body` as a single pre-tokenized word, optionally preceded by
    /// the space marker. Used to re-encode one token's (possibly altered)
    /// surface without letting it merge with its neighbours.
    pub fn encode_word(&self, body: &str, leading_space: bool) -> Vec<TokenId> {
        self.encode_chunk(&Chunk { leading_space, body: body.to_string() })
    }

    /// Whether `id` is a text piece starting with the space marker.
    pub fn has_leading_space(&self, id: TokenId) -> bool {
        self.kinds.get(id as usize) == Some(&PieceKind::Text) && self.pieces[id as usize].starts_with(MARKER)
    }

    /// Token ids grouped by pre-tokenized word.
    pub fn encode_words(&self, text: &str) -> Vec<Vec<TokenId>> {
        split_chunks(text).iter().map(|c| self.encode_chunk(c)).collect()
    }

    /// Raw UTF-8 bytes of `ids`; byte pieces may leave partial characters.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let kind = self
                .kinds
                .get(id as usize)
                .ok_or(TokenizerError::IdOutOfRange { id, len: self.len() })?;
            match kind {
                PieceKind::Special => {}
                PieceKind::Byte(b) => bytes.push(*b),
                PieceKind::Text => {
                    for c in self.pieces[id as usize].chars() {
                        let c = if c == MARKER { ' ' } else { c };
                        let mut buf = [0u8; 4];
                        bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        Ok(bytes)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Renderable text of a piece: the marker is stripped; specials and
    /// whitespace or control pieces are empty.
    pub fn surface(&self, id: TokenId) -> String {
        match self.kinds.get(id as usize) {
            None | Some(PieceKind::Special) => String::new(),
            Some(PieceKind::Byte(b)) => {
                if b.is_ascii_whitespace() || b.is_ascii_control() {
                    String::new()
                } else {
                    self.pieces[id as usize].clone()
                }
            }
            Some(PieceKind::Text) => visible(&self.pieces[id as usize]),
        }
    }

    /// Surfaces of every id, indexed by id.
    pub fn surfaces(&self) -> Vec<String> {
        (0..self.len() as TokenId).map(|id| self.surface(id)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{FORMAT_HEADER}").unwrap();
        writeln!(out, "byte_fallback {}", self.byte_fallback).unwrap();
        writeln!(out, "alphabet {}", self.alphabet_len).unwrap();
        let alpha_start = self.first_merge_id() - self.alphabet_len;
        for piece in &self.pieces[alpha_start..self.first_merge_id()] {
            writeln!(out, "{}", escape(piece)).unwrap();
        }
        writeln!(out, "merges {}", self.merges.len()).unwrap();
        for (a, b) in self.merges() {
            writeln!(out, "{}\t{}", escape(a), escape(b)).unwrap();
        }
        out
    }

    fn first_merge_id(&self) -> usize {
        4 + if self.byte_fallback { 256 } else { 0 } + self.alphabet_len
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let fmt_err = |line: usize, msg: &str| TokenizerError::Format { line, msg: msg.to_string() };
        let mut next = |what: &str| lines.next().ok_or_else(|| fmt_err(0, &format!("unexpected end of file, expected {what}")));

        let (ln, header) = next("header")?;
        if header != FORMAT_HEADER {
            return Err(fmt_err(ln, "unrecognized header"));
        }
        let (ln, l) = next("byte_fallback")?;
        let byte_fallback = match l.strip_prefix("byte_fallback ") {
            Some("true") => true,
            Some("false") => false,
            _ => return Err(fmt_err(ln, "expected `byte_fallback true|false`")),
        };
        let (ln, l) = next("alphabet")?;
        let n_alpha: usize = l
            .strip_prefix("alphabet ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err(ln, "expected `alphabet <count>`"))?;
        let mut alphabet = Vec::with_capacity(n_alpha);
        for _ in 0..n_alpha {
            let (ln, l) = next("alphabet piece")?;
            let piece = unescape(l).ok_or_else(|| fmt_err(ln, "bad escape"))?;
            if piece.chars().count() != 1 {
                return Err(fmt_err(ln, "alphabet pieces must be single characters"));
            }
            alphabet.push(piece);
        }
        let mut vocab = Self::base(byte_fallback, alphabet);
        if vocab.alphabet_len != n_alpha {
            return Err(fmt_err(ln, "duplicate alphabet piece"));
        }
        let (ln, l) = next("merges")?;
        let n_merges: usize = l
            .strip_prefix("merges ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err(ln, "expected `merges <count>`"))?;
        for _ in 0..n_merges {
            let (ln, l) = next("merge")?;
            let (a, b) = l.split_once('\t').ok_or_else(|| fmt_err(ln, "merge lines are `left<TAB>right`"))?;
            let a = unescape(a).ok_or_else(|| fmt_err(ln, "bad escape"))?;
            let b = unescape(b).ok_or_else(|| fmt_err(ln, "bad escape"))?;
            let ia = vocab.piece_id(&a).ok_or_else(|| fmt_err(ln, "merge refers to unknown piece"))?;
            let ib = vocab.piece_id(&b).ok_or_else(|| fmt_err(ln, "merge refers to unknown piece"))?;
            if vocab.kinds[ia as usize] != PieceKind::Text || vocab.kinds[ib as usize] != PieceKind::Text {
                return Err(fmt_err(ln, "only text pieces can be merged"));
            }
            vocab.push_merge((ia, ib));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn visible(piece: &str) -> String {
    let stripped = piece.strip_prefix(MARKER).unwrap_or(piece);
    if stripped.chars().all(|c| c.is_whitespace() || c.is_control()) {
        String::new()
    } else {
        stripped.to_string()
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c == '\\' || c.is_control() || (c.is_whitespace() && c != MARKER) {
            write!(out, "\\u{{{:x}}}", c as u32).unwrap();
        } else {
            out.push(c);
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('\\') {
        out.push_str(&rest[..pos]);
        let tail = rest[pos..].strip_prefix("\\u{")?;
        let end = tail.find('}')?;
        let code = u32::from_str_radix(&tail[..end], 16).ok()?;
        out.push(char::from_u32(code)?);
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_corpus() -> Vec<String> {
        let s = "the cat sat on the mat . the dog sat on the log . a cat and a dog met on the mat .";
        (0..20).map(|i| format!("{s} line {i}")).collect()
    }

    #[test]
    fn single_pair_corpus_learns_that_pair() {
        let base = BpeVocab::base(true, ["a".to_string()]).len();
        let v = BpeTrainer::new(base + 1).train(&["aaaa"]).unwrap();
        assert_eq!(v.len(), base + 1);
        assert_eq!(v.merges().collect::<Vec<_>>(), vec![("a", "a")]);
        assert_eq!(v.encode("aaaa").len(), 2);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(BpeTrainer::new(300).train(&empty), Err(TokenizerError::EmptyCorpus)));
        assert!(matches!(BpeTrainer::new(300).train(&[""]), Err(TokenizerError::EmptyCorpus)));
    }

    #[test]
    fn target_below_base_is_rejected() {
        let err = BpeTrainer::new(100).train(&desk_corpus()).unwrap_err();
        assert!(matches!(err, TokenizerError::TargetTooSmall { .. }));
    }

    #[test]
    fn exact_size_without_byte_fallback() {
        let v = BpeTrainer::new(60).byte_fallback(false).train(&desk_corpus()).unwrap();
        assert_eq!(v.len(), 60);
    }

    #[test]
    fn training_is_deterministic() {
        let a = BpeTrainer::new(300).train(&desk_corpus()).unwrap();
        let b = BpeTrainer::new(300).train(&desk_corpus()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" and "cd" are equally frequent; (a, b) sorts first
        let base = BpeVocab::base(false, ["a", "b", "c", "d", "▁"].map(String::from)).len();
        let v = BpeTrainer::new(base + 1).byte_fallback(false).train(&["ab cd"]).unwrap();
        // "cd" is preceded by the marker, so candidates are (a,b), (▁,c), (c,d)
        assert_eq!(v.merges().next(), Some(("a", "b")));
    }

    #[test]
    fn round_trip_examples() {
        let v = BpeTrainer::new(300).train(&desk_corpus()).unwrap();
        for text in ["", "naïve café", "  leading and  double  spaces ", "tab\there\nnew", "lit▁eral ▁", "день 東京"] {
            assert_eq!(v.decode(&v.encode(text)).unwrap(), text, "{text:?}");
        }
        assert!(v.encode("").is_empty());
    }

    #[test]
    fn unseen_word_has_no_unk() {
        let v = BpeTrainer::new(300).train(&desk_corpus()).unwrap();
        let ids = v.encode("zürich");
        assert!(!ids.is_empty());
        assert!(!ids.contains(&v.unk()));
    }

    #[test]
    fn decode_rejects_bad_ids() {
        let v = BpeTrainer::new(300).train(&desk_corpus()).unwrap();
        assert!(matches!(v.decode(&[v.len() as TokenId]), Err(TokenizerError::IdOutOfRange { .. })));
    }

    #[test]
    fn surfaces() {
        let v = BpeTrainer::new(300).train(&desk_corpus()).unwrap();
        let the = v.piece_id("▁the").expect("frequent word merged");
        assert_eq!(v.surface(the), "the");
        assert_eq!(v.surface(v.bos()), "");
        assert_eq!(v.surface(v.piece_id("▁").unwrap()), "");
        let t = v.piece_id("t").unwrap();
        assert_eq!(v.surface(t), "t");
    }

    #[test]
    fn file_round_trip() {
        let v = BpeTrainer::new(320).train(&desk_corpus()).unwrap();
        let back = BpeVocab::from_text(&v.to_text()).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn malformed_file_reports_line() {
        let err = BpeVocab::from_text("pixlm-bpe v1\nbyte_fallback maybe\n").unwrap_err();
        assert!(matches!(err, TokenizerError::Format { line: 2, .. }));
    }
}
