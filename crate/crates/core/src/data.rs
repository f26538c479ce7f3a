//! Dataset construction for both experiments.
//!
//! Books: templated narratives sharing one filler vocabulary, with invented
//! proper nouns ("planted keywords") carrying all book-specific content.
//! Because filler structure is identical across books, a model can only
//! memorize a window verbatim by keying on the planted keywords — which is
//! exactly the ground truth the keyword-extraction experiment needs.
//!
//! Facts: a subject × relation grid of single-sentence statements with
//! invented names, yielding equal-token-length factual/counterfactual prompt
//! pairs for the swapping experiment.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rouge_l_recall;
use crate::model::TransformerModel;
use crate::tokenizer::{Vocab, BOS_ID};

/// One sliding-window example: `input_ids ++ label_ids` is a contiguous
/// slice of the source book's token stream, and decoding it reproduces the
/// source text between `char_start` and `char_end` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowExample {
    pub book_id: usize,
    pub window_index: usize,
    pub input_ids: Vec<u32>,
    pub label_ids: Vec<u32>,
    pub char_start: usize,
    pub char_end: usize,
}

/// A planted keyword and how often it occurs in its book.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedKeyword {
    pub word: String,
    pub count: usize,
}

/// A generated narrative whose only distinguishing content is its planted
/// keywords; every keyword is unique to its book.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticBook {
    pub id: usize,
    pub text: String,
    pub keywords: Vec<PlantedKeyword>,
}

impl SyntheticBook {
    pub fn keyword_set(&self) -> BTreeSet<String> {
        self.keywords.iter().map(|k| k.word.clone()).collect()
    }
}

/// One factual statement of the grid: `subject` × `template` → `target`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: usize,
    pub template: usize,
    pub target: String,
}

/// The full fact grid plus the training text it induces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSet {
    pub subjects: Vec<String>,
    pub templates: Vec<String>,
    pub facts: Vec<Fact>,
    /// Training sequences: every fact alone, then rotated two-fact
    /// concatenations so each fact is also seen at a shifted position.
    pub train_texts: Vec<String>,
}

/// Equal-token-length factual/counterfactual prompt pair. Prompts start with
/// BOS; `*_target_ids` encode the target continuation (leading space
/// included).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactPair {
    pub template: usize,
    pub fact_subject: usize,
    pub cf_subject: usize,
    pub fact_prompt: Vec<u32>,
    pub cf_prompt: Vec<u32>,
    pub fact_target: String,
    pub cf_target: String,
    pub fact_target_ids: Vec<u32>,
    pub cf_target_ids: Vec<u32>,
}

const NAME_HEADS: &[&str] = &[
    "bal", "cor", "dor", "fel", "gor", "hal", "jor", "kal", "lor", "mar", "nor", "pel", "quin",
    "ral", "sev", "tor", "ul", "vor", "wex", "yar", "zel", "bren", "dun", "fray", "gil", "hesk",
    "ilm", "jas", "krev", "lusk",
];
const NAME_TAILS: &[&str] = &[
    "a", "ar", "eth", "ia", "ik", "on", "or", "um", "usk", "yn", "en", "os", "ix", "ane", "ul",
];

/// Sentence frames shared by every book; `{a}`/`{b}`/`{c}` take planted
/// keywords. Each frame mentions every slot twice across three chained
/// clauses, so keyword mentions outnumber filler words two to one, and the
/// filler skeleton is identical across books (it reveals only the cycle
/// phase) while all book-distinguishing content rides on the keywords. The
/// frames draw their verbs from a 24-word pool of short words (frame `f`
/// uses verbs `f`, `f+8`, `f+16` mod 24), so every verb recurs in three
/// frames and is cheap enough for the tokenizer to keep whole.
const BOOK_TEMPLATES: &[&str] = &[
    "{a} led {b} , {b} put {c} , {c} ran {a} .",
    "{a} met {b} , {b} let {c} , {c} bid {a} .",
    "{a} hid {b} , {b} cut {c} , {c} lit {a} .",
    "{a} saw {b} , {b} hit {c} , {c} told {a} .",
    "{a} won {b} , {b} bit {c} , {c} drew {a} .",
    "{a} fed {b} , {b} had {c} , {c} gave {a} .",
    "{a} got {b} , {b} ate {c} , {c} took {a} .",
    "{a} set {b} , {b} dug {c} , {c} held {a} .",
    "{a} put {b} , {b} ran {c} , {c} led {a} .",
    "{a} let {b} , {b} bid {c} , {c} met {a} .",
    "{a} cut {b} , {b} lit {c} , {c} hid {a} .",
    "{a} hit {b} , {b} told {c} , {c} saw {a} .",
    "{a} bit {b} , {b} drew {c} , {c} won {a} .",
    "{a} had {b} , {b} gave {c} , {c} fed {a} .",
    "{a} ate {b} , {b} took {c} , {c} got {a} .",
    "{a} dug {b} , {b} held {c} , {c} set {a} .",
    "{a} ran {b} , {b} led {c} , {c} put {a} .",
    "{a} bid {b} , {b} met {c} , {c} let {a} .",
    "{a} lit {b} , {b} hid {c} , {c} cut {a} .",
    "{a} told {b} , {b} saw {c} , {c} hit {a} .",
    "{a} drew {b} , {b} won {c} , {c} bit {a} .",
    "{a} gave {b} , {b} fed {c} , {c} had {a} .",
    "{a} took {b} , {b} got {c} , {c} ate {a} .",
    "{a} held {b} , {b} set {c} , {c} dug {a} .",
];

/// Relation frames for the fact grid; `{}` takes a subject name and the
/// statement continues with the target name.
const FACT_TEMPLATES: &[&str] = &[
    "the capital of {} is",
    "the river of {} is",
    "the founder of {} was",
    "the language of {} is",
    "the emblem of {} is",
    "the harbor of {} is",
    "the festival of {} is",
    "the mountain of {} is",
    "the currency of {} is",
    "the anthem of {} is",
];

/// Draws a fresh invented name not yet in `taken`; names are lowercase
/// syllable pairs, distinct from all filler vocabulary by construction.
fn invent_name(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> Result<String> {
    for _ in 0..1000 {
        let head = NAME_HEADS[rng.random_range(0..NAME_HEADS.len())];
        let tail = NAME_TAILS[rng.random_range(0..NAME_TAILS.len())];
        let name = format!("{head}{tail}");
        if taken.insert(name.clone()) {
            return Ok(name);
        }
    }
    Err(Error::Input(
        "name pool exhausted; reduce keyword or subject counts".into(),
    ))
}

/// Generates `n_books` narratives of `n_sentences` sentences each. Every
/// book plants `keywords_per_book` unique invented names, chained through
/// the shared sentence frames (three slots per sentence, stride one) so each
/// keyword occurs in several consecutive sentences and in no other book.
pub fn synth_books(
    n_books: usize,
    keywords_per_book: usize,
    n_sentences: usize,
    seed: u64,
) -> Result<Vec<SyntheticBook>> {
    if n_books == 0 || keywords_per_book == 0 || n_sentences == 0 {
        return Err(Error::Input("synth_books: all counts must be positive".into()));
    }
    if keywords_per_book < 2 {
        return Err(Error::Input(
            "synth_books: need at least 2 keywords per book to fill sentence frames".into(),
        ));
    }
    if n_sentences < keywords_per_book {
        return Err(Error::Input(format!(
            "synth_books: {n_sentences} sentences cannot give {keywords_per_book} keywords \
             multiple occurrences each; raise the sentence count"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let mut books = Vec::with_capacity(n_books);
    for id in 0..n_books {
        let mut kws = Vec::with_capacity(keywords_per_book);
        for _ in 0..keywords_per_book {
            kws.push(invent_name(&mut rng, &mut taken)?);
        }
        let k = keywords_per_book;
        let mut sentences = Vec::with_capacity(n_sentences);
        for i in 0..n_sentences {
            let template = BOOK_TEMPLATES[i % BOOK_TEMPLATES.len()];
            // Stride-1 keyword chaining: sentence i features keywords
            // i, i+1, i+2 (mod k), so adjacent sentences overlap and the
            // keyword cycle stays out of phase with the frame cycle.
            let sentence = template
                .replace("{a}", &kws[i % k])
                .replace("{b}", &kws[(i + 1) % k])
                .replace("{c}", &kws[(i + 2) % k]);
            sentences.push(sentence);
        }
        let text = sentences.join(" ");
        let keywords = kws
            .iter()
            .map(|w| PlantedKeyword {
                count: count_word(&text, w),
                word: w.clone(),
            })
            .collect::<Vec<_>>();
        for kw in &keywords {
            if kw.count < 2 {
                return Err(Error::Input(format!(
                    "synth_books: keyword {:?} occurs only {} time(s); raise the sentence count",
                    kw.word, kw.count
                )));
            }
        }
        books.push(SyntheticBook { id, text, keywords });
    }
    Ok(books)
}

fn count_word(text: &str, word: &str) -> usize {
    crate::tokenizer::split_words(text)
        .iter()
        .filter(|(w, _)| w == word)
        .count()
}

/// Cuts a book's token stream into fixed-size windows starting at offsets
/// `0, step, 2·step, …`; a trailing partial window is dropped. `char_start`
/// and `char_end` give the window's byte range in `text`.
pub fn sliding_windows(
    vocab: &Vocab,
    text: &str,
    book_id: usize,
    input_len: usize,
    label_len: usize,
    step: usize,
) -> Result<Vec<WindowExample>> {
    if input_len == 0 || label_len == 0 || step == 0 {
        return Err(Error::Input(
            "sliding_windows: input_len, label_len and step must be positive".into(),
        ));
    }
    let ids = vocab.encode(text);
    let window = input_len + label_len;
    if ids.len() < window {
        return Err(Error::Input(format!(
            "sliding_windows: text has {} tokens, shorter than one {window}-token window",
            ids.len()
        )));
    }
    // Byte offset boundaries per token.
    let mut offsets = Vec::with_capacity(ids.len() + 1);
    let mut o = 0usize;
    offsets.push(o);
    for &id in &ids {
        o += vocab.token_byte_len(id)?;
        offsets.push(o);
    }
    let mut out = Vec::new();
    let mut off = 0usize;
    let mut index = 0usize;
    while off + window <= ids.len() {
        out.push(WindowExample {
            book_id,
            window_index: index,
            input_ids: ids[off..off + input_len].to_vec(),
            label_ids: ids[off + input_len..off + window].to_vec(),
            char_start: offsets[off],
            char_end: offsets[off + window],
        });
        off += step;
        index += 1;
    }
    Ok(out)
}

/// Prompt fed to the model for a window: BOS then the input tokens.
pub fn window_prompt(window: &WindowExample) -> Vec<u32> {
    let mut ids = Vec::with_capacity(window.input_ids.len() + 1);
    ids.push(BOS_ID);
    ids.extend_from_slice(&window.input_ids);
    ids
}

/// ROUGE-L recall of the model's greedy label-length continuation against
/// the window's label text. This is the generation path every downstream
/// evaluation (memorization filter, perturbation baseline) shares.
pub fn window_recall(model: &TransformerModel, vocab: &Vocab, window: &WindowExample) -> Result<f64> {
    let gen = model.generate(&window_prompt(window), window.label_ids.len(), &[])?;
    let reference = vocab.decode(&window.label_ids)?;
    let candidate = vocab.decode_lossy(&gen.new_ids)?;
    rouge_l_recall(&reference, &candidate)
}

/// Keeps exactly the windows the model continues verbatim
/// (ROUGE-L recall = 1.0) — the model's memory set for one book.
pub fn verbatim_filter(
    model: &TransformerModel,
    vocab: &Vocab,
    windows: &[WindowExample],
) -> Result<Vec<WindowExample>> {
    let mut kept = Vec::new();
    for w in windows {
        if window_recall(model, vocab, w)? == 1.0 {
            kept.push(w.clone());
        }
    }
    Ok(kept)
}

/// Builds the `n_subjects × n_templates` fact grid: invented subject and
/// target names (all distinct) and the training texts stating every fact.
pub fn fact_grid(n_subjects: usize, n_templates: usize, seed: u64) -> Result<FactSet> {
    if n_subjects < 2 {
        return Err(Error::Input("fact_grid: need at least 2 subjects to form pairs".into()));
    }
    if n_templates == 0 || n_templates > FACT_TEMPLATES.len() {
        return Err(Error::Input(format!(
            "fact_grid: n_templates must be in 1..={}",
            FACT_TEMPLATES.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let subjects: Vec<String> = (0..n_subjects)
        .map(|_| invent_name(&mut rng, &mut taken))
        .collect::<Result<_>>()?;
    let templates: Vec<String> = FACT_TEMPLATES[..n_templates].iter().map(|s| s.to_string()).collect();
    let mut facts = Vec::with_capacity(n_subjects * n_templates);
    for template in 0..n_templates {
        for subject in 0..n_subjects {
            facts.push(Fact {
                subject,
                template,
                target: invent_name(&mut rng, &mut taken)?,
            });
        }
    }

    let sentence = |f: &Fact| -> String {
        format!(
            "{} {} .",
            templates[f.template].replace("{}", &subjects[f.subject]),
            f.target
        )
    };
    let mut train_texts: Vec<String> = facts.iter().map(&sentence).collect();
    // Rotated concatenations: each fact reappears after another fact, so its
    // statement is also learned away from the sequence start.
    for template in 0..n_templates {
        let rot = template % (n_subjects - 1) + 1;
        for subject in 0..n_subjects {
            let a = &facts[template * n_subjects + subject];
            let b = &facts[template * n_subjects + (subject + rot) % n_subjects];
            train_texts.push(format!("{} {}", sentence(a), sentence(b)));
        }
    }
    // A deterministic shuffle so singles and concatenations interleave.
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    train_texts.shuffle(&mut order_rng);
    Ok(FactSet { subjects, templates, facts, train_texts })
}

impl FactSet {
    /// Prompt text of one fact: the relation frame with the subject filled
    /// in, ending right before the target word.
    pub fn prompt_text(&self, fact: &Fact) -> String {
        self.templates[fact.template].replace("{}", &self.subjects[fact.subject])
    }
}

/// Builds every ordered counterfactual pair: same template, different
/// subjects, equal prompt token length, and targets that differ in their
/// first continuation token. Pairs failing the token-length or
/// first-token-distinctness checks are skipped (counted by the caller via
/// the returned length); pair symmetry is preserved because every condition
/// is symmetric.
pub fn fact_pairs(set: &FactSet, vocab: &Vocab) -> Result<Vec<FactPair>> {
    let n_subjects = set.subjects.len();
    let mut pairs = Vec::new();
    for template in 0..set.templates.len() {
        let row: Vec<&Fact> = set
            .facts
            .iter()
            .filter(|f| f.template == template)
            .collect();
        let prompt_ids: Vec<Vec<u32>> = row
            .iter()
            .map(|f| {
                let mut ids = vec![BOS_ID];
                ids.extend(vocab.encode(&set.prompt_text(f)));
                ids
            })
            .collect();
        let target_ids: Vec<Vec<u32>> = row
            .iter()
            .map(|f| vocab.encode(&format!(" {}", f.target)))
            .collect();
        for a in 0..n_subjects {
            for b in 0..n_subjects {
                if a == b
                    || prompt_ids[a].len() != prompt_ids[b].len()
                    || row[a].target == row[b].target
                    || target_ids[a][0] == target_ids[b][0]
                {
                    continue;
                }
                pairs.push(FactPair {
                    template,
                    fact_subject: row[a].subject,
                    cf_subject: row[b].subject,
                    fact_prompt: prompt_ids[a].clone(),
                    cf_prompt: prompt_ids[b].clone(),
                    fact_target: row[a].target.clone(),
                    cf_target: row[b].target.clone(),
                    fact_target_ids: target_ids[a].clone(),
                    cf_target_ids: target_ids[b].clone(),
                });
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Input(
            "fact_pairs: no valid pairs (prompt lengths or first target tokens never align)".into(),
        ));
    }
    Ok(pairs)
}

/// Writes one JSON value per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        let line = serde_json::to_string(item)?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads a JSONL file written by [`write_jsonl`].
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn books_have_disjoint_keywords_with_min_occurrences() {
        let books = synth_books(3, 8, 24, 42).unwrap();
        assert_eq!(books.len(), 3);
        for (i, a) in books.iter().enumerate() {
            assert_eq!(a.keywords.len(), 8);
            for kw in &a.keywords {
                assert!(kw.count >= 2, "{:?} occurs {} times", kw.word, kw.count);
                assert_eq!(count_word(&a.text, &kw.word), kw.count);
            }
            for b in &books[i + 1..] {
                assert!(
                    a.keyword_set().is_disjoint(&b.keyword_set()),
                    "books {} and {} share keywords",
                    a.id,
                    b.id
                );
            }
        }
    }

    #[test]
    fn books_are_seed_deterministic() {
        let a = synth_books(2, 6, 18, 7).unwrap();
        let b = synth_books(2, 6, 18, 7).unwrap();
        let c = synth_books(2, 6, 18, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].text, c[0].text);
    }

    #[test]
    fn synth_books_validates_counts() {
        assert!(synth_books(0, 5, 20, 1).is_err());
        assert!(synth_books(2, 1, 20, 1).is_err());
        assert!(synth_books(2, 21, 20, 1).is_err());
    }

    #[test]
    fn windows_tile_the_source_exactly() {
        let books = synth_books(1, 6, 20, 11).unwrap();
        let text = &books[0].text;
        let vocab = Vocab::fit(&[text.as_str()], 400).unwrap();
        let windows = sliding_windows(&vocab, text, 0, 24, 8, 10).unwrap();
        assert!(windows.len() > 2);
        let ids = vocab.encode(text);
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(w.window_index, i);
            assert_eq!(w.input_ids.len(), 24);
            assert_eq!(w.label_ids.len(), 8);
            let mut joined = w.input_ids.clone();
            joined.extend_from_slice(&w.label_ids);
            assert_eq!(&ids[i * 10..i * 10 + 32], &joined[..], "window {i} offset");
            // decoding reproduces the exact source slice
            let decoded = vocab.decode(&joined).unwrap();
            assert_eq!(&text[w.char_start..w.char_end], decoded);
        }
    }

    #[test]
    fn windows_hand_offsets() {
        // 100 tokens, input 50, label 10, step 30 -> offsets 0 and 30 only.
        let text = "ab ".repeat(100);
        let vocab = Vocab::fit(&[text.as_str()], 261).unwrap();
        let per = vocab.encode(&text).len() as f64 / 100.0;
        // construct token counts directly instead: use a text of exactly 100 tokens
        let _ = per;
        let ids = vocab.encode(&text);
        assert!(ids.len() >= 100);
        let hundred = vocab.decode(&ids[..100]).unwrap();
        let windows = sliding_windows(&vocab, &hundred, 0, 50, 10, 30).unwrap();
        assert_eq!(windows.len(), 2);
        // step = total length -> exactly one window
        let one = sliding_windows(&vocab, &hundred, 0, 50, 10, 100).unwrap();
        assert_eq!(one.len(), 1);
        // shorter than one window -> error
        let tiny = vocab.decode(&ids[..20]).unwrap();
        assert!(sliding_windows(&vocab, &tiny, 0, 50, 10, 30).is_err());
    }

    #[test]
    fn fact_grid_names_are_distinct_and_texts_cover_all_facts() {
        let set = fact_grid(8, 8, 123).unwrap();
        assert_eq!(set.facts.len(), 64);
        assert_eq!(set.train_texts.len(), 128);
        let mut names: BTreeSet<&str> = set.subjects.iter().map(|s| s.as_str()).collect();
        for f in &set.facts {
            assert!(names.insert(&f.target), "duplicate name {:?}", f.target);
        }
        // every fact's statement appears in some training text
        for f in &set.facts {
            let stmt = format!("{} {} .", set.prompt_text(f), f.target);
            assert!(
                set.train_texts.iter().any(|t| t.contains(&stmt)),
                "missing statement {stmt:?}"
            );
        }
        // each fact also appears in a concatenation after another fact
        for f in &set.facts {
            let stmt = format!("{} {} .", set.prompt_text(f), f.target);
            assert!(
                set.train_texts
                    .iter()
                    .any(|t| t.contains(&stmt) && !t.starts_with(&stmt)),
                "fact never trained at a shifted offset: {stmt:?}"
            );
        }
    }

    #[test]
    fn fact_pairs_are_symmetric_equal_length_distinct_targets() {
        let set = fact_grid(6, 4, 9).unwrap();
        let all_text = set.train_texts.join(" ");
        let vocab = Vocab::fit(&[all_text.as_str()], 600).unwrap();
        let pairs = fact_pairs(&set, &vocab).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            assert_eq!(p.fact_prompt.len(), p.cf_prompt.len());
            assert_ne!(p.fact_target, p.cf_target);
            assert_ne!(p.fact_target_ids[0], p.cf_target_ids[0]);
            assert_eq!(p.fact_prompt[0], BOS_ID);
            // symmetry: the reversed pair exists
            assert!(
                pairs.iter().any(|q| q.template == p.template
                    && q.fact_subject == p.cf_subject
                    && q.cf_subject == p.fact_subject),
                "missing reverse of {:?}->{:?}",
                p.fact_subject,
                p.cf_subject
            );
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("windows.jsonl");
        let books = synth_books(1, 4, 12, 3).unwrap();
        let vocab = Vocab::fit(&[books[0].text.as_str()], 320).unwrap();
        let windows = sliding_windows(&vocab, &books[0].text, 0, 16, 4, 8).unwrap();
        write_jsonl(&path, &windows).unwrap();
        let back: Vec<WindowExample> = read_jsonl(&path).unwrap();
        assert_eq!(windows, back);
        // corrupted line -> format error naming the line
        std::fs::write(&path, "{not json}\n").unwrap();
        let err = read_jsonl::<WindowExample>(&path).err().unwrap().to_string();
        assert!(err.contains(":1:"), "{err}");
    }

    #[test]
    fn window_prompt_prepends_bos() {
        let w = WindowExample {
            book_id: 0,
            window_index: 0,
            input_ids: vec![5, 6],
            label_ids: vec![7],
            char_start: 0,
            char_end: 0,
        };
        assert_eq!(window_prompt(&w), vec![BOS_ID, 5, 6]);
    }
}
