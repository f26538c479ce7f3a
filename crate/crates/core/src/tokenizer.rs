//! Deterministic byte-pair-encoding tokenizer with word/token alignment.
//!
//! The tokenizer is byte-level: the base alphabet is all 256 byte values (plus
//! three reserved special ids), so any text can be encoded and decoding is
//! lossless. Text is first split into *pretokens* — a word with its single
//! preceding space, a punctuation run with its preceding space, or a run of
//! other whitespace — and merges never cross pretoken boundaries. That keeps
//! every learned token inside one word, so [`Vocab::word_spans`] can assign
//! each token to at most one word by intersecting byte ranges.
//!
//! Fitting is deterministic: the most frequent adjacent pair is merged,
//! ties broken by lexicographic byte order of the pair, stopping at the target
//! vocabulary size or when no pair occurs at least twice.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// Reserved special token ids.
pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
const N_SPECIALS: u32 = 3;
const VOCAB_MAGIC: &str = "attnmem-vocab v1";

/// A word located in a text: its lowercased form, the token indices that
/// cover it, and the byte range of the word itself (leading space excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    pub word: String,
    pub token_range: Range<usize>,
    pub char_range: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ChunkKind {
    /// Alphanumeric run (internal hyphens allowed), possibly space-prefixed.
    Word,
    /// Punctuation run, possibly space-prefixed.
    Punct,
    /// Whitespace that is not a single attached space.
    Space,
}

#[derive(Debug, Clone)]
struct Chunk {
    /// Byte range of the whole chunk, including an attached leading space.
    range: Range<usize>,
    /// Byte range of the word core (for `Word` chunks: no leading space).
    core: Range<usize>,
    kind: ChunkKind,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || !b.is_ascii()
}

/// Splits text into pretoken chunks. A single ASCII space attaches to the
/// word or punctuation run that follows it; any other whitespace forms its
/// own chunk.
fn pretokenize(text: &str) -> Vec<Chunk> {
    let b = text.as_bytes();
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let start = i;
        let mut core_start = i;
        if b[i] == b' ' && i + 1 < b.len() && !b[i + 1].is_ascii_whitespace() {
            // attach this space to the following run
            core_start = i + 1;
            i += 1;
        }
        if i >= b.len() {
            chunks.push(Chunk { range: start..i, core: start..i, kind: ChunkKind::Space });
            break;
        }
        if b[i].is_ascii_whitespace() {
            while i < b.len() && b[i].is_ascii_whitespace() {
                i += 1;
            }
            chunks.push(Chunk { range: start..i, core: start..i, kind: ChunkKind::Space });
        } else if is_word_byte(b[i]) {
            while i < b.len()
                && (is_word_byte(b[i])
                    || (b[i] == b'-'
                        && i > core_start
                        && i + 1 < b.len()
                        && is_word_byte(b[i + 1])))
            {
                i += 1;
            }
            chunks.push(Chunk { range: start..i, core: core_start..i, kind: ChunkKind::Word });
        } else {
            while i < b.len() && !b[i].is_ascii_whitespace() && !is_word_byte(b[i]) {
                i += 1;
            }
            chunks.push(Chunk { range: start..i, core: core_start..i, kind: ChunkKind::Punct });
        }
    }
    chunks
}

/// Maximal alphanumeric runs of a text (hyphens kept inside words),
/// lowercased, with their byte ranges. This is the word segmentation used
/// everywhere words are compared or counted.
pub fn split_words(text: &str) -> Vec<(String, Range<usize>)> {
    pretokenize(text)
        .into_iter()
        .filter(|c| c.kind == ChunkKind::Word)
        .map(|c| (text[c.core.clone()].to_lowercase(), c.core))
        .collect()
}

/// Byte-pair-encoding vocabulary.
#[derive(Debug, Clone)]
pub struct Vocab {
    /// Token id -> byte string. Specials hold display-only placeholders.
    id_to_token: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, u32>,
    /// Learned merges in application order: `(left_id, right_id) -> new_id`.
    merges: Vec<(u32, u32)>,
    merge_to_id: HashMap<(u32, u32), u32>,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn n_merges(&self) -> usize {
        self.merges.len()
    }

    fn base() -> Vocab {
        let mut id_to_token: Vec<Vec<u8>> = vec![
            b"<pad>".to_vec(),
            b"<bos>".to_vec(),
            b"<eos>".to_vec(),
        ];
        for byte in 0u16..256 {
            id_to_token.push(vec![byte as u8]);
        }
        let mut token_to_id = HashMap::new();
        for (id, tok) in id_to_token.iter().enumerate().skip(N_SPECIALS as usize) {
            token_to_id.insert(tok.clone(), id as u32);
        }
        Vocab { id_to_token, token_to_id, merges: Vec::new(), merge_to_id: HashMap::new() }
    }

    fn byte_id(b: u8) -> u32 {
        N_SPECIALS + b as u32
    }

    fn add_merge(&mut self, left: u32, right: u32) -> u32 {
        let mut tok = self.id_to_token[left as usize].clone();
        tok.extend_from_slice(&self.id_to_token[right as usize]);
        let id = self.id_to_token.len() as u32;
        self.id_to_token.push(tok.clone());
        self.token_to_id.insert(tok, id);
        self.merges.push((left, right));
        self.merge_to_id.insert((left, right), id);
        id
    }

    /// Fits a vocabulary on a corpus. `target_vocab` caps the total size
    /// (specials + 256 bytes + merges); fitting also stops when no adjacent
    /// pair occurs at least twice.
    pub fn fit(corpus: &[&str], target_vocab: usize) -> Result<Vocab> {
        let min_size = (N_SPECIALS as usize) + 256;
        if target_vocab < min_size {
            return Err(Error::Input(format!(
                "target vocab {target_vocab} below minimum {min_size} (specials + bytes)"
            )));
        }
        if corpus.iter().all(|t| t.is_empty()) {
            return Err(Error::Input("cannot fit tokenizer on an empty corpus".into()));
        }
        let mut vocab = Vocab::base();

        // Distinct pretokens with counts, in deterministic (sorted) order.
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for text in corpus {
            for chunk in pretokenize(text) {
                *counts.entry(&text[chunk.range]).or_insert(0) += 1;
            }
        }
        let mut items: Vec<(Vec<u32>, u64)> = counts
            .iter()
            .map(|(s, &n)| (s.bytes().map(Vocab::byte_id).collect(), n))
            .collect();
        items.sort_by(|a, b| a.0.cmp(&b.0));

        while vocab.size() < target_vocab {
            // Count adjacent pairs across all pretokens.
            let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (sym, n) in &items {
                for w in sym.windows(2) {
                    *pair_counts.entry((w[0], w[1])).or_insert(0) += n;
                }
            }
            // Most frequent pair; ties broken by lexicographic byte order.
            let mut best: Option<((u32, u32), u64)> = None;
            for (&pair, &n) in &pair_counts {
                let better = match best {
                    None => true,
                    Some((bp, bn)) => {
                        n > bn
                            || (n == bn
                                && pair_key(&vocab, pair) < pair_key(&vocab, bp))
                    }
                };
                if better {
                    best = Some((pair, n));
                }
            }
            let Some((pair, n)) = best else { break };
            if n < 2 {
                break;
            }
            let new_id = vocab.add_merge(pair.0, pair.1);
            for (sym, _) in items.iter_mut() {
                merge_in_place(sym, pair, new_id);
            }
        }
        Ok(vocab)
    }

    /// Encodes text to token ids. Lossless: `decode(encode(t)) == t`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in pretokenize(text) {
            self.encode_chunk(&text.as_bytes()[chunk.range], &mut out);
        }
        out
    }

    fn encode_chunk(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut sym: Vec<u32> = bytes.iter().map(|&b| Vocab::byte_id(b)).collect();
        // Repeatedly apply the earliest-learned merge present.
        loop {
            let mut best: Option<(usize, u32)> = None; // (merge rank, new id)
            for w in sym.windows(2) {
                if let Some(&id) = self.merge_to_id.get(&(w[0], w[1])) {
                    let rank = (id - N_SPECIALS - 256) as usize;
                    if best.map_or(true, |(br, _)| rank < br) {
                        best = Some((rank, id));
                    }
                }
            }
            let Some((rank, new_id)) = best else { break };
            let pair = self.merges[rank];
            merge_in_place(&mut sym, pair, new_id);
        }
        out.extend_from_slice(&sym);
    }

    /// Byte length of one token's decoded text (0 for special ids).
    pub fn token_byte_len(&self, id: u32) -> Result<usize> {
        if id as usize >= self.id_to_token.len() {
            return Err(Error::Index(format!(
                "token id {id} out of vocab {}",
                self.id_to_token.len()
            )));
        }
        if id < N_SPECIALS {
            Ok(0)
        } else {
            Ok(self.id_to_token[id as usize].len())
        }
    }

    /// Decodes token ids back to text. Unknown ids are an error; special ids
    /// decode to empty strings.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let idx = id as usize;
            if idx >= self.id_to_token.len() {
                return Err(Error::Index(format!(
                    "decode: token id {id} out of vocab {}",
                    self.id_to_token.len()
                )));
            }
            if id >= N_SPECIALS {
                bytes.extend_from_slice(&self.id_to_token[idx]);
            }
        }
        String::from_utf8(bytes)
            .map_err(|_| Error::Format("decode: token bytes are not valid UTF-8".into()))
    }

    /// Like [`Vocab::decode`] but replaces invalid UTF-8 with U+FFFD instead
    /// of erroring. Model-generated token streams may split multi-byte
    /// characters; unknown ids are still an error.
    pub fn decode_lossy(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let idx = id as usize;
            if idx >= self.id_to_token.len() {
                return Err(Error::Index(format!(
                    "decode: token id {id} out of vocab {}",
                    self.id_to_token.len()
                )));
            }
            if id >= N_SPECIALS {
                bytes.extend_from_slice(&self.id_to_token[idx]);
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Aligns words to tokens: for each word of `text` (per [`split_words`])
    /// returns the range of token indices whose decoded bytes overlap the
    /// word, plus the word's byte range in `text`. `ids` must decode to
    /// `text` exactly; any token slice of a larger encoding qualifies, so
    /// this works on sliding windows that cut through multi-token words
    /// (the cut fragments simply surface as their partial words).
    pub fn word_spans(&self, text: &str, ids: &[u32]) -> Result<Vec<WordSpan>> {
        let decoded = self.decode(ids)?;
        if decoded != text {
            return Err(Error::Contract(
                "word_spans: ids do not decode to text".into(),
            ));
        }
        // Byte offset boundaries per token; specials decode to zero bytes.
        let mut offsets = Vec::with_capacity(ids.len() + 1);
        let mut o = 0usize;
        offsets.push(o);
        for &id in ids {
            if id >= N_SPECIALS {
                o += self.id_to_token[id as usize].len();
            }
            offsets.push(o);
        }
        let mut spans = Vec::new();
        let mut t0 = 0usize;
        for (word, range) in split_words(text) {
            // First token whose bytes reach into the word...
            while t0 < ids.len() && offsets[t0 + 1] <= range.start {
                t0 += 1;
            }
            // ...through the last token that starts before the word ends.
            let mut t1 = t0;
            while t1 < ids.len() && offsets[t1] < range.end {
                t1 += 1;
            }
            spans.push(WordSpan { word, token_range: t0..t1, char_range: range });
        }
        Ok(spans)
    }

    /// Serializes the vocabulary to a UTF-8 text file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{VOCAB_MAGIC}").unwrap();
        writeln!(out, "vocab={} merges={}", self.size(), self.merges.len()).unwrap();
        writeln!(out, "[merges]").unwrap();
        for &(l, r) in &self.merges {
            writeln!(
                out,
                "{} {}",
                escape_token(&self.id_to_token[l as usize]),
                escape_token(&self.id_to_token[r as usize])
            )
            .unwrap();
        }
        writeln!(out, "[tokens]").unwrap();
        for (id, tok) in self.id_to_token.iter().enumerate().skip((N_SPECIALS as usize) + 256) {
            writeln!(out, "{id} {}", escape_token(tok)).unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Loads a vocabulary saved by [`Vocab::save`], validating the token
    /// table against the merge list.
    pub fn load(path: &Path) -> Result<Vocab> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let magic = lines.next().unwrap_or_default();
        if magic != VOCAB_MAGIC {
            return Err(Error::Format(format!(
                "vocab file: bad header {magic:?}, want {VOCAB_MAGIC:?}"
            )));
        }
        let counts = lines.next().unwrap_or_default();
        let (vocab_n, merges_n) = parse_counts(counts)?;
        if lines.next() != Some("[merges]") {
            return Err(Error::Format("vocab file: missing [merges] section".into()));
        }
        let mut vocab = Vocab::base();
        for _ in 0..merges_n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format("vocab file: truncated merge list".into()))?;
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("vocab file: bad merge line {line:?}")))?;
            let lb = unescape_token(l)?;
            let rb = unescape_token(r)?;
            let lid = *vocab.token_to_id.get(&lb).ok_or_else(|| {
                Error::Format(format!("vocab file: merge refers to unknown token {l:?}"))
            })?;
            let rid = *vocab.token_to_id.get(&rb).ok_or_else(|| {
                Error::Format(format!("vocab file: merge refers to unknown token {r:?}"))
            })?;
            vocab.add_merge(lid, rid);
        }
        if lines.next() != Some("[tokens]") {
            return Err(Error::Format("vocab file: missing [tokens] section".into()));
        }
        for (id, tok) in vocab.id_to_token.iter().enumerate().skip((N_SPECIALS as usize) + 256) {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format("vocab file: truncated token table".into()))?;
            let (id_str, tok_str) = line
                .split_once(' ')
                .ok_or_else(|| Error::Format(format!("vocab file: bad token line {line:?}")))?;
            let want_id: usize = id_str
                .parse()
                .map_err(|_| Error::Format(format!("vocab file: bad token id {id_str:?}")))?;
            let want_tok = unescape_token(tok_str)?;
            if want_id != id || want_tok != *tok {
                return Err(Error::Format(format!(
                    "vocab file: token table row {id} disagrees with merge list"
                )));
            }
        }
        if vocab.size() != vocab_n {
            return Err(Error::Format(format!(
                "vocab file: header says {vocab_n} tokens, reconstructed {}",
                vocab.size()
            )));
        }
        Ok(vocab)
    }
}

fn pair_key(vocab: &Vocab, pair: (u32, u32)) -> (Vec<u8>, Vec<u8>) {
    (
        vocab.id_to_token[pair.0 as usize].clone(),
        vocab.id_to_token[pair.1 as usize].clone(),
    )
}

fn merge_in_place(sym: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut w = 0;
    let mut r = 0;
    while r < sym.len() {
        if r + 1 < sym.len() && sym[r] == pair.0 && sym[r + 1] == pair.1 {
            sym[w] = new_id;
            r += 2;
        } else {
            sym[w] = sym[r];
            r += 1;
        }
        w += 1;
    }
    sym.truncate(w);
}

fn parse_counts(line: &str) -> Result<(usize, usize)> {
    let mut vocab_n = None;
    let mut merges_n = None;
    for part in line.split_whitespace() {
        if let Some(v) = part.strip_prefix("vocab=") {
            vocab_n = v.parse().ok();
        } else if let Some(v) = part.strip_prefix("merges=") {
            merges_n = v.parse().ok();
        }
    }
    match (vocab_n, merges_n) {
        (Some(v), Some(m)) => Ok((v, m)),
        _ => Err(Error::Format(format!("vocab file: bad counts line {line:?}"))),
    }
}

/// Escapes a token byte string for the vocab file: printable ASCII except
/// space and backslash stays literal, everything else becomes `\xNN`.
fn escape_token(tok: &[u8]) -> String {
    let mut out = String::new();
    for &b in tok {
        if b.is_ascii_graphic() && b != b'\\' {
            out.push(b as char);
        } else {
            write!(out, "\\x{b:02x}").unwrap();
        }
    }
    out
}

fn unescape_token(s: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            if i + 3 >= bytes.len() || bytes[i + 1] != b'x' {
                return Err(Error::Format(format!("vocab file: bad escape in {s:?}")));
            }
            let hex = std::str::from_utf8(&bytes[i + 2..i + 4])
                .ok()
                .and_then(|h| u8::from_str_radix(h, 16).ok())
                .ok_or_else(|| Error::Format(format!("vocab file: bad escape in {s:?}")))?;
            out.push(hex);
            i += 4;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_on_run_corpus_is_the_repeated_byte_pair() {
        // "aaaa": pair ("a","a") occurs 3 times; one merge allowed.
        let vocab = Vocab::fit(&["aaaa"], 260).unwrap();
        assert_eq!(vocab.n_merges(), 1);
        let (l, r) = vocab.merges[0];
        assert_eq!(vocab.id_to_token[l as usize], b"a");
        assert_eq!(vocab.id_to_token[r as usize], b"a");
        // "aaaa" now encodes as two "aa" tokens.
        let ids = vocab.encode("aaaa");
        assert_eq!(ids.len(), 2);
        assert_eq!(ids[0], ids[1]);
    }

    #[test]
    fn encode_decode_round_trip() {
        let corpus = "the cat sat on the mat. the cat ran off! rabbit-hole 42 times.";
        let vocab = Vocab::fit(&[corpus], 300).unwrap();
        for text in [corpus, "the mat sat", " spaced  out\nnewline", "unseen words zz!"] {
            let ids = vocab.encode(text);
            assert_eq!(vocab.decode(&ids).unwrap(), text, "round trip of {text:?}");
        }
    }

    #[test]
    fn vocab_size_never_exceeds_target() {
        let vocab = Vocab::fit(&["aa bb aa bb cc aa"], 262).unwrap();
        assert!(vocab.size() <= 262);
    }

    #[test]
    fn merges_never_cross_word_boundaries() {
        // "ab ab ab" repeated: without pretokenization "b a" (with space)
        // would be a frequent pair. Tokens must never span the space+letter
        // boundary partially: every token decodes to a substring that stays
        // inside one pretoken.
        let corpus = "ab ab ab ab ab ab";
        let vocab = Vocab::fit(&[corpus], 2048).unwrap();
        let ids = vocab.encode(corpus);
        let spans = vocab.word_spans(corpus, &ids).unwrap();
        assert_eq!(spans.len(), 6);
        for s in &spans {
            assert_eq!(s.word, "ab");
        }
    }

    #[test]
    fn word_spans_align_and_do_not_overlap() {
        let corpus = "the quick rabbit-hole, near DORIA. the end";
        let vocab = Vocab::fit(&[corpus], 280).unwrap();
        let ids = vocab.encode(corpus);
        let spans = vocab.word_spans(corpus, &ids).unwrap();
        let words: Vec<&str> = spans.iter().map(|s| s.word.as_str()).collect();
        assert_eq!(words, ["the", "quick", "rabbit-hole", "near", "doria", "the", "end"]);
        // spans are disjoint and increasing
        for w in spans.windows(2) {
            assert!(w[0].token_range.end <= w[1].token_range.start);
        }
        // every span's tokens decode to text intersecting the word
        for s in &spans {
            let piece = vocab.decode(&ids[s.token_range.clone()]).unwrap();
            assert!(
                piece.to_lowercase().contains(&s.word),
                "tokens {piece:?} should cover word {:?}",
                s.word
            );
            assert_eq!(
                corpus[s.char_range.clone()].to_lowercase(),
                s.word,
                "char range should select the word"
            );
        }
    }

    #[test]
    fn word_spans_rejects_mismatched_ids() {
        let vocab = Vocab::fit(&["abc abc"], 300).unwrap();
        let ids = vocab.encode("abc abc");
        assert!(vocab.word_spans("abc abd", &ids).is_err());
        let mut short = ids.clone();
        short.pop();
        assert!(vocab.word_spans("abc abc", &short).is_err());
    }

    #[test]
    fn word_spans_work_on_token_slices_that_cut_words() {
        // Fit on a corpus where "waterfall" spans several tokens, then slice
        // the token stream mid-word: spans must still align on the fragment.
        let corpus = "the waterfall sang and the waterfall froze";
        let vocab = Vocab::fit(&[corpus], 262).unwrap(); // almost byte-level
        let ids = vocab.encode(corpus);
        assert!(ids.len() > 8, "want a multi-token encoding");
        let cut = ids.len() / 2;
        let tail = &ids[cut..];
        let tail_text = vocab.decode(tail).unwrap();
        let spans = vocab.word_spans(&tail_text, tail).unwrap();
        assert!(!spans.is_empty());
        // full words of the tail still resolve; ranges stay in bounds
        for s in &spans {
            assert!(s.token_range.end <= tail.len());
            assert_eq!(tail_text[s.char_range.clone()].to_lowercase(), s.word);
        }
        // the final full word is always recoverable
        assert_eq!(spans.last().unwrap().word, "froze");
    }

    #[test]
    fn save_load_round_trip_preserves_encoding() {
        let corpus = "countless keys unlock countless doors, said the keeper of keys.";
        let vocab = Vocab::fit(&[corpus], 320).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.size(), vocab.size());
        assert_eq!(loaded.encode(corpus), vocab.encode(corpus));
    }

    #[test]
    fn load_rejects_corrupted_files() {
        let corpus = "some text to fit on";
        let vocab = Vocab::fit(&[corpus], 300).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        vocab.save(&path).unwrap();

        let good = std::fs::read_to_string(&path).unwrap();
        // wrong magic
        std::fs::write(&path, good.replacen("v1", "v9", 1)).unwrap();
        assert!(Vocab::load(&path).is_err());
        // truncated
        std::fs::write(&path, &good[..good.len() / 2]).unwrap();
        assert!(Vocab::load(&path).is_err());
    }

    #[test]
    fn split_words_keeps_hyphens_and_lowercases() {
        let words = split_words("Rabbit-Hole and CO-OP end-");
        let texts: Vec<&str> = words.iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(texts, ["rabbit-hole", "and", "co-op", "end"]);
    }
}
