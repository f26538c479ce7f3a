//! Quantitative measures for memorization and intervention outcomes:
//! ROUGE-L recall, teacher-forced perplexity, n-gram repetition rate, and
//! first-word matching.

use crate::error::{Error, Result};
use crate::model::{Override, TransformerModel};
use crate::tensor;
use crate::tokenizer::split_words;

/// Length of the longest common subsequence, linear-space two-row DP.
fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L recall over lowercased word sequences:
/// `LCS(reference_words, candidate_words) / len(reference_words)`.
/// The reference must contain at least one word.
pub fn rouge_l_recall(reference: &str, candidate: &str) -> Result<f64> {
    let r: Vec<String> = split_words(reference).into_iter().map(|(w, _)| w).collect();
    if r.is_empty() {
        return Err(Error::Input("rouge_l_recall: reference has no words".into()));
    }
    let c: Vec<String> = split_words(candidate).into_iter().map(|(w, _)| w).collect();
    Ok(lcs_len(&r, &c) as f64 / r.len() as f64)
}

/// Sub-word-level ROUGE-L recall over raw token id sequences (diagnostic
/// counterpart of [`rouge_l_recall`]).
pub fn rouge_l_recall_ids(reference: &[u32], candidate: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Input("rouge_l_recall_ids: reference is empty".into()));
    }
    Ok(lcs_len(reference, candidate) as f64 / reference.len() as f64)
}

/// Mean negative log-likelihood (nats per token) of `label` conditioned on
/// `input`, teacher-forced. Overrides apply to the input positions only.
pub fn mean_nll(
    model: &TransformerModel,
    input: &[u32],
    label: &[u32],
    overrides: &[Override],
) -> Result<f64> {
    let rows = model.score_continuation(input, label, overrides)?;
    let mut total = 0.0f64;
    for (row, &tok) in rows.iter().zip(label) {
        let lse = tensor::lse_row(row);
        total += lse - row[tok as usize] as f64;
    }
    Ok(total / label.len() as f64)
}

/// `exp` of [`mean_nll`]: teacher-forced perplexity of the label tokens.
pub fn perplexity(
    model: &TransformerModel,
    input: &[u32],
    label: &[u32],
    overrides: &[Override],
) -> Result<f64> {
    Ok(mean_nll(model, input, label, overrides)?.exp())
}

/// N-gram repetition rate: `1 − unique n-grams / total n-grams`.
/// Sequences shorter than `n` have no n-grams and score 0 by convention
/// (callers that care should check the length themselves).
pub fn repetition_rate(tokens: &[u32], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Input("repetition_rate: n must be at least 1".into()));
    }
    if tokens.len() < n {
        return Ok(0.0);
    }
    let total = tokens.len() - n + 1;
    let mut seen = std::collections::HashSet::with_capacity(total);
    for w in tokens.windows(n) {
        seen.insert(w);
    }
    Ok(1.0 - seen.len() as f64 / total as f64)
}

/// Outcome of comparing a generation's first word against the two targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FirstWord {
    Factual,
    Counterfactual,
    Neither,
}

impl FirstWord {
    pub fn as_str(self) -> &'static str {
        match self {
            FirstWord::Factual => "factual",
            FirstWord::Counterfactual => "counterfactual",
            FirstWord::Neither => "neither",
        }
    }
}

/// Compares the first word of `generated` (case-insensitive, punctuation
/// stripped) against the factual and counterfactual targets, which must
/// normalize to distinct words.
pub fn first_word_match(generated: &str, factual: &str, counterfactual: &str) -> Result<FirstWord> {
    let norm = |s: &str| split_words(s).into_iter().next().map(|(w, _)| w);
    let f = norm(factual)
        .ok_or_else(|| Error::Input(format!("first_word_match: factual target {factual:?} has no word")))?;
    let c = norm(counterfactual).ok_or_else(|| {
        Error::Input(format!("first_word_match: counterfactual target {counterfactual:?} has no word"))
    })?;
    if f == c {
        return Err(Error::Input(format!(
            "first_word_match: targets {factual:?} and {counterfactual:?} normalize to the same word {f:?}"
        )));
    }
    Ok(match norm(generated) {
        Some(w) if w == f => FirstWord::Factual,
        Some(w) if w == c => FirstWord::Counterfactual,
        _ => FirstWord::Neither,
    })
}

/// Left-to-right arithmetic mean in f64 — the aggregation order used for all
/// reported aggregate metrics.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn rouge_identical_and_disjoint() {
        assert_eq!(rouge_l_recall("the cat sat", "the cat sat").unwrap(), 1.0);
        assert_eq!(rouge_l_recall("the cat sat", "dog runs fast").unwrap(), 0.0);
    }

    #[test]
    fn rouge_hand_value() {
        // LCS("the cat sat", "the dog sat") = "the sat" -> 2/3.
        let r = rouge_l_recall("the cat sat", "the dog sat").unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_is_case_and_punct_insensitive() {
        assert_eq!(rouge_l_recall("The CAT sat.", "the cat, sat!").unwrap(), 1.0);
    }

    #[test]
    fn rouge_empty_reference_is_an_error() {
        assert!(rouge_l_recall("", "anything").is_err());
        assert!(rouge_l_recall("...", "anything").is_err());
        assert!(rouge_l_recall_ids(&[], &[1]).is_err());
    }

    #[test]
    fn rouge_recall_one_iff_reference_subsequence() {
        assert_eq!(rouge_l_recall("b d", "a b c d e").unwrap(), 1.0);
        assert!(rouge_l_recall("d b", "a b c d e").unwrap() < 1.0);
    }

    #[test]
    fn repetition_rate_hand_values() {
        // all distinct
        assert_eq!(repetition_rate(&[1, 2, 3, 4], 2).unwrap(), 0.0);
        // "a b a b a b", n=2 -> 5 bigrams, 2 unique -> 0.6
        let r = repetition_rate(&[1, 2, 1, 2, 1, 2], 2).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        // single repeated token, n=1, length 5 -> 1 - 1/5
        let r = repetition_rate(&[7, 7, 7, 7, 7], 1).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn repetition_rate_edges() {
        assert_eq!(repetition_rate(&[1, 2], 3).unwrap(), 0.0);
        assert!(repetition_rate(&[1, 2], 0).is_err());
    }

    #[test]
    fn repetition_rate_is_relabel_invariant() {
        let a = [1u32, 2, 1, 2, 3, 1];
        let b: Vec<u32> = a.iter().map(|&t| t * 10 + 5).collect(); // bijection
        for n in 1..=4 {
            assert_eq!(repetition_rate(&a, n).unwrap(), repetition_rate(&b, n).unwrap());
        }
    }

    #[test]
    fn first_word_match_cases() {
        assert_eq!(first_word_match("Doria is ...", "Doria", "Mira").unwrap(), FirstWord::Factual);
        assert_eq!(first_word_match("Mira.", "Doria", "Mira").unwrap(), FirstWord::Counterfactual);
        assert_eq!(first_word_match("The", "Doria", "Mira").unwrap(), FirstWord::Neither);
        assert_eq!(first_word_match("", "Doria", "Mira").unwrap(), FirstWord::Neither);
        assert!(first_word_match("x", "same", "Same").is_err());
    }

    #[test]
    fn perplexity_of_noop_override_is_exactly_baseline() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            n_kv_heads: 2,
            d_model: 16,
            d_head: 8,
            d_ff: 32,
            vocab_size: 280,
            max_seq: 32,
        };
        let m = crate::model::TransformerModel::init(cfg, 3).unwrap();
        let input = [1u32, 5, 9];
        let label = [10u32, 11, 12];
        let base = perplexity(&m, &input, &label, &[]).unwrap();
        let cap = std::sync::Arc::new(m.forward(&input, &[]).unwrap().capture);
        let same = perplexity(&m, &input, &label, &[crate::model::Override::replace_k(cap)]).unwrap();
        assert_eq!(base, same);
        assert!(base.is_finite() && base > 0.0);
    }

    #[test]
    fn perplexity_matches_direct_full_forward_nll() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            n_kv_heads: 1,
            d_model: 16,
            d_head: 8,
            d_ff: 32,
            vocab_size: 270,
            max_seq: 32,
        };
        let m = crate::model::TransformerModel::init(cfg, 8).unwrap();
        let input = [3u32, 1, 4];
        let label = [1u32, 5, 9, 2];
        let got = mean_nll(&m, &input, &label, &[]).unwrap();
        // independent path: one full forward over input ++ label
        let mut full: Vec<u32> = input.to_vec();
        full.extend_from_slice(&label);
        let fwd = m.forward(&full, &[]).unwrap();
        let mut want = 0.0f64;
        for (i, &tok) in label.iter().enumerate() {
            let row = fwd.logits.row(input.len() - 1 + i);
            want += crate::tensor::lse_row(row) - row[tok as usize] as f64;
        }
        want /= label.len() as f64;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn mean_is_left_to_right() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert!(mean(&[]).is_nan());
    }
}
