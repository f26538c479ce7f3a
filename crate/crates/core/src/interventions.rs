//! Causal interventions on attention memory: K/V swapping between prompts
//! and targeted K zeroing at keyword positions.
//!
//! A *swap* runs a factual prompt while replacing the keys and/or values its
//! attention layers computed with those captured from a counterfactual
//! prompt of equal token length. Replacing values injects foreign content at
//! correctly-addressed locations; replacing keys corrupts the addressing
//! itself. A *perturbation* zeroes key rows at the prompt positions of
//! chosen words, within a scope of layers, K/V head groups, or individual
//! key dimensions. Both interventions cover prompt positions only, so
//! generated tokens always use natively computed keys and values; zeroed or
//! swapped prompt entries stay in the decode cache and keep acting on every
//! generated token.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{window_prompt, FactPair, WindowExample};
use crate::error::{Error, Result};
use crate::metrics::{self, FirstWord};
use crate::model::{ModelConfig, Override, OverrideKind, ScopeSet, TransformerModel};
use crate::probe::NeuronId;
use crate::tokenizer::Vocab;

/// Which projected streams a swap replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwapTarget {
    K,
    V,
    KV,
}

impl SwapTarget {
    pub const ALL: [SwapTarget; 3] = [SwapTarget::K, SwapTarget::V, SwapTarget::KV];

    pub fn as_str(self) -> &'static str {
        match self {
            SwapTarget::K => "k",
            SwapTarget::V => "v",
            SwapTarget::KV => "kv",
        }
    }

    pub fn parse(s: &str) -> Result<SwapTarget> {
        match s.to_ascii_lowercase().as_str() {
            "k" => Ok(SwapTarget::K),
            "v" => Ok(SwapTarget::V),
            "kv" => Ok(SwapTarget::KV),
            other => Err(Error::Input(format!(
                "unknown swap target {other:?}; use k, v, or kv"
            ))),
        }
    }
}

/// Result of running one prompt without interventions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub generated_ids: Vec<u32>,
    pub generated_text: String,
    pub first_word: FirstWord,
    /// Teacher-forced perplexity of the factual target after the factual
    /// prompt.
    pub ppl_fact: f64,
}

/// Result of one swap run on one prompt pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwapOutcome {
    pub target: SwapTarget,
    pub generated_ids: Vec<u32>,
    pub generated_text: String,
    pub first_word: FirstWord,
    /// Shift of the counterfactual target's first-token logit at the first
    /// generated position, swapped minus unswapped.
    pub delta_logit: f64,
    /// Teacher-forced perplexity of the counterfactual target after the
    /// factual prompt under the swap.
    pub ppl_cf_swapped: f64,
    /// The same continuation after the clean counterfactual prompt.
    pub ppl_cf_clean: f64,
    /// `ppl_cf_swapped - ppl_cf_clean`; zero means the swap left the model
    /// exactly as fluent on the counterfactual answer as the clean prompt.
    pub ppl_overhead: f64,
}

fn swap_overrides(target: SwapTarget, source: &Arc<crate::model::AttnCapture>) -> Vec<Override> {
    match target {
        SwapTarget::K => vec![Override::replace_k(source.clone())],
        SwapTarget::V => vec![Override::replace_v(source.clone())],
        SwapTarget::KV => vec![
            Override::replace_k(source.clone()),
            Override::replace_v(source.clone()),
        ],
    }
}

/// Runs the factual prompt clean: greedy generation, first-word
/// classification against both targets, and factual-target perplexity.
pub fn run_baseline(
    model: &TransformerModel,
    vocab: &Vocab,
    pair: &FactPair,
    n_new: usize,
) -> Result<BaselineOutcome> {
    let gen = model.generate(&pair.fact_prompt, n_new, &[])?;
    let generated_text = vocab.decode_lossy(&gen.new_ids)?;
    let first_word = metrics::first_word_match(&generated_text, &pair.fact_target, &pair.cf_target)?;
    let ppl_fact = metrics::perplexity(model, &pair.fact_prompt, &pair.fact_target_ids, &[])?;
    Ok(BaselineOutcome {
        generated_ids: gen.new_ids,
        generated_text,
        first_word,
        ppl_fact,
    })
}

/// Runs the factual prompt with the counterfactual prompt's K and/or V
/// substituted at every prompt position.
pub fn run_swap(
    model: &TransformerModel,
    vocab: &Vocab,
    pair: &FactPair,
    target: SwapTarget,
    n_new: usize,
) -> Result<SwapOutcome> {
    if pair.fact_prompt.len() != pair.cf_prompt.len() {
        return Err(Error::Contract(format!(
            "run_swap: prompt lengths differ ({} vs {})",
            pair.fact_prompt.len(),
            pair.cf_prompt.len()
        )));
    }
    let source = Arc::new(model.forward(&pair.cf_prompt, &[])?.capture);
    let overrides = swap_overrides(target, &source);

    let swapped = model.generate(&pair.fact_prompt, n_new, &overrides)?;
    let clean = model.forward(&pair.fact_prompt, &[])?;
    let cf_tok = *pair.cf_target_ids.first().ok_or_else(|| {
        Error::Contract("run_swap: counterfactual target has no tokens".into())
    })? as usize;
    let last = clean.logits.dims2().0 - 1;
    let delta_logit =
        swapped.first_logits[cf_tok] as f64 - clean.logits.at(last, cf_tok) as f64;

    let generated_text = vocab.decode_lossy(&swapped.new_ids)?;
    let first_word = metrics::first_word_match(&generated_text, &pair.fact_target, &pair.cf_target)?;

    let ppl_cf_swapped =
        metrics::perplexity(model, &pair.fact_prompt, &pair.cf_target_ids, &overrides)?;
    let ppl_cf_clean = metrics::perplexity(model, &pair.cf_prompt, &pair.cf_target_ids, &[])?;
    Ok(SwapOutcome {
        target,
        generated_ids: swapped.new_ids,
        generated_text,
        first_word,
        delta_logit,
        ppl_cf_swapped,
        ppl_cf_clean,
        ppl_overhead: ppl_cf_swapped - ppl_cf_clean,
    })
}

/// Which part of the key space a perturbation zeroes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbScope {
    /// Every layer and K/V group, all dimensions.
    AllHeads,
    /// Selected (layer, group) heads, all dimensions.
    Heads(Vec<(usize, usize)>),
    /// Individual key dimensions.
    Neurons(Vec<NeuronId>),
}

impl PerturbScope {
    pub fn describe(&self) -> String {
        match self {
            PerturbScope::AllHeads => "all-heads".into(),
            PerturbScope::Heads(h) => format!("heads:{}", h.len()),
            PerturbScope::Neurons(n) => format!("neurons:{}", n.len()),
        }
    }
}

/// Result of one K-zeroing run on one window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbOutcome {
    /// Whether any prompt position was actually zeroed; false means the
    /// perturbed words never occur in this window and the run is a no-op.
    pub touched: bool,
    pub zeroed_positions: usize,
    pub generated_ids: Vec<u32>,
    pub generated_text: String,
    /// Longest-common-subsequence word recall of the window's continuation.
    pub recall: f64,
    /// Teacher-forced perplexity of the true continuation under the
    /// perturbation.
    pub ppl_label: f64,
}

/// Prompt-coordinate token positions of every occurrence of `words` in the
/// window's input (position 0 is the start-of-sequence token).
pub fn word_positions(
    vocab: &Vocab,
    window: &WindowExample,
    words: &BTreeSet<String>,
) -> Result<Vec<usize>> {
    let text = vocab.decode(&window.input_ids)?;
    let mut positions = Vec::new();
    for span in vocab.word_spans(&text, &window.input_ids)? {
        if words.contains(&span.word) {
            positions.extend(span.token_range.map(|t| t + 1));
        }
    }
    positions.sort_unstable();
    positions.dedup();
    Ok(positions)
}

/// Expands a scope into zero-K overrides at the given prompt positions.
pub fn scope_overrides(
    config: &ModelConfig,
    scope: &PerturbScope,
    positions: &[usize],
) -> Result<Vec<Override>> {
    let check_head = |l: usize, g: usize| -> Result<()> {
        if l >= config.n_layers || g >= config.n_kv_heads {
            return Err(Error::Index(format!(
                "scope_overrides: head ({l}, {g}) out of model bounds"
            )));
        }
        Ok(())
    };
    match scope {
        PerturbScope::AllHeads => Ok(vec![Override::zero_k(positions.to_vec())]),
        PerturbScope::Heads(heads) => {
            if heads.is_empty() {
                return Err(Error::Input("scope_overrides: empty head list".into()));
            }
            let mut out = Vec::with_capacity(heads.len());
            for &(l, g) in heads {
                check_head(l, g)?;
                out.push(Override {
                    layers: ScopeSet::only([l]),
                    groups: ScopeSet::only([g]),
                    kind: OverrideKind::ZeroK {
                        positions: positions.to_vec(),
                        dims: ScopeSet::All,
                    },
                });
            }
            Ok(out)
        }
        PerturbScope::Neurons(neurons) => {
            if neurons.is_empty() {
                return Err(Error::Input("scope_overrides: empty neuron list".into()));
            }
            let mut by_head: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
            for n in neurons {
                check_head(n.layer, n.group)?;
                if n.dim >= config.d_head {
                    return Err(Error::Index(format!(
                        "scope_overrides: dim {} out of head width {}",
                        n.dim, config.d_head
                    )));
                }
                by_head.entry((n.layer, n.group)).or_default().insert(n.dim);
            }
            Ok(by_head
                .into_iter()
                .map(|((l, g), dims)| Override {
                    layers: ScopeSet::only([l]),
                    groups: ScopeSet::only([g]),
                    kind: OverrideKind::ZeroK {
                        positions: positions.to_vec(),
                        dims: ScopeSet::Only(dims),
                    },
                })
                .collect())
        }
    }
}

/// Zeroes the keys of every occurrence of `words` in the window's input,
/// then greedily regenerates the continuation and scores its word recall.
pub fn run_perturb(
    model: &TransformerModel,
    vocab: &Vocab,
    window: &WindowExample,
    words: &BTreeSet<String>,
    scope: &PerturbScope,
) -> Result<PerturbOutcome> {
    let positions = word_positions(vocab, window, words)?;
    let overrides = scope_overrides(&model.config, scope, &positions)?;
    let gen = model.generate(&window_prompt(window), window.label_ids.len(), &overrides)?;
    let generated_text = vocab.decode_lossy(&gen.new_ids)?;
    let reference = vocab.decode(&window.label_ids)?;
    let recall = metrics::rouge_l_recall(&reference, &generated_text)?;
    let ppl_label =
        metrics::perplexity(model, &window_prompt(window), &window.label_ids, &overrides)?;
    Ok(PerturbOutcome {
        touched: !positions.is_empty(),
        zeroed_positions: positions.len(),
        generated_ids: gen.new_ids,
        generated_text,
        recall,
        ppl_label,
    })
}

/// A size-matched random control word set: `n` distinct words drawn without
/// replacement from the windows' vocabulary, excluding `exclude`. `short` is
/// set when fewer than `n` candidates exist (all are then returned).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlWords {
    pub words: BTreeSet<String>,
    pub short: bool,
}

pub fn random_control(
    vocab: &Vocab,
    windows: &[WindowExample],
    exclude: &BTreeSet<String>,
    n: usize,
    seed: u64,
) -> Result<ControlWords> {
    if n == 0 {
        return Err(Error::Input("random_control: need a positive sample size".into()));
    }
    let mut pool: BTreeSet<String> = BTreeSet::new();
    for window in windows {
        let text = vocab.decode(&window.input_ids)?;
        for span in vocab.word_spans(&text, &window.input_ids)? {
            if !exclude.contains(&span.word) {
                pool.insert(span.word);
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::Input(
            "random_control: no candidate words outside the excluded set".into(),
        ));
    }
    let pool: Vec<String> = pool.into_iter().collect();
    if pool.len() <= n {
        let short = pool.len() < n;
        return Ok(ControlWords { words: pool.into_iter().collect(), short });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, pool.len(), n);
    Ok(ControlWords {
        words: picked.into_iter().map(|i| pool[i].clone()).collect(),
        short: false,
    })
}
