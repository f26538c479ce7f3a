//! Probes that locate where keys encode memorized content.
//!
//! A *neuron* is one dimension of one grouped key/value head's K projection
//! at one layer. The memory coefficient of a neuron over a dataset is the
//! mean of its K-projection activation across every occurrence of the
//! dataset's anchored terms; multi-token occurrences sum their tokens'
//! activations. Neurons are ranked within each dataset by |coefficient| and
//! across datasets by mean reciprocal rank. The top neurons then score every
//! word of every input, and the highest-scoring words are the extracted
//! keywords.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{window_prompt, WindowExample};
use crate::error::{Error, Result};
use crate::model::{self, TransformerModel};
use crate::tensor::{self, Tensor};
use crate::tokenizer::Vocab;

/// One K-projection dimension: layer, K/V head group, head dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub group: usize,
    pub dim: usize,
}

/// What the probe treats as the vector a token contributes to K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoefSource {
    /// The K rows the layer actually computes from its residual-stream input.
    Contextual,
    /// The literal token embedding multiplied by the layer's K projection,
    /// ignoring context and normalization.
    Static,
}

impl CoefSource {
    pub fn as_str(self) -> &'static str {
        match self {
            CoefSource::Contextual => "contextual",
            CoefSource::Static => "static",
        }
    }

    pub fn parse(s: &str) -> Result<CoefSource> {
        match s {
            "contextual" => Ok(CoefSource::Contextual),
            "static" => Ok(CoefSource::Static),
            other => Err(Error::Input(format!(
                "unknown coefficient source {other:?}; use contextual or static"
            ))),
        }
    }
}

/// Per-neuron mean K activation of anchored-term occurrences over one
/// dataset. `occurrences` counts term occurrences (each contributes to every
/// neuron); `missing_terms` lists anchored terms that never occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefTable {
    pub dataset: String,
    pub source: CoefSource,
    pub n_layers: usize,
    pub n_groups: usize,
    pub d_head: usize,
    pub occurrences: usize,
    pub missing_terms: Vec<String>,
    /// Signed means, laid out `[layer][group][dim]`.
    pub means: Vec<f64>,
}

impl CoefTable {
    fn index(&self, id: NeuronId) -> usize {
        (id.layer * self.n_groups + id.group) * self.d_head + id.dim
    }

    /// Signed mean activation.
    pub fn mean(&self, id: NeuronId) -> f64 {
        self.means[self.index(id)]
    }

    /// Ranking statistic: |mean|.
    pub fn stat(&self, id: NeuronId) -> f64 {
        self.mean(id).abs()
    }

    /// +1 for non-negative mean, −1 otherwise; orients "top activation" for
    /// neurons that encode their content with negative sign.
    pub fn orientation(&self, id: NeuronId) -> f64 {
        if self.mean(id) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// All neuron ids in canonical (layer, group, dim) order.
    pub fn neuron_ids(&self) -> Vec<NeuronId> {
        let mut out = Vec::with_capacity(self.means.len());
        for layer in 0..self.n_layers {
            for group in 0..self.n_groups {
                for dim in 0..self.d_head {
                    out.push(NeuronId { layer, group, dim });
                }
            }
        }
        out
    }

    /// CSV rendering: `dataset,source,layer,group,dim,mean,abs_mean,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,source,layer,group,dim,mean,abs_mean,count\n");
        for id in self.neuron_ids() {
            out.push_str(&format!(
                "{},{},{},{},{},{:.9},{:.9},{}\n",
                self.dataset,
                self.source.as_str(),
                id.layer,
                id.group,
                id.dim,
                self.mean(id),
                self.stat(id),
                self.occurrences
            ));
        }
        out
    }
}

/// Per-(layer, group) K rows for one prompt, in prompt-position order.
fn k_rows(
    model: &TransformerModel,
    prompt: &[u32],
    source: CoefSource,
) -> Result<Vec<Vec<Tensor>>> {
    let cfg = &model.config;
    match source {
        CoefSource::Contextual => {
            let out = model.forward(prompt, &[])?;
            let mut rows = Vec::with_capacity(cfg.n_layers);
            for l in 0..cfg.n_layers {
                let mut per_group = Vec::with_capacity(cfg.n_kv_heads);
                for g in 0..cfg.n_kv_heads {
                    per_group.push(out.capture.k_pre_group(l, g).clone());
                }
                rows.push(per_group);
            }
            Ok(rows)
        }
        CoefSource::Static => {
            let rows_idx: Vec<usize> = prompt.iter().map(|&t| t as usize).collect();
            let emb = tensor::gather_rows(model.weights.tok_emb(), &rows_idx)?;
            let mut rows = Vec::with_capacity(cfg.n_layers);
            for l in 0..cfg.n_layers {
                let k_all = tensor::matmul(&emb, model.weights.layer_tensor(l, model::L_WK))?;
                let mut per_group = Vec::with_capacity(cfg.n_kv_heads);
                for g in 0..cfg.n_kv_heads {
                    per_group.push(tensor::slice_cols(
                        &k_all,
                        g * cfg.d_head,
                        (g + 1) * cfg.d_head,
                    )?);
                }
                rows.push(per_group);
            }
            Ok(rows)
        }
    }
}

/// Word occurrences of `terms` in a window's input, as prompt-coordinate
/// token ranges (BOS offset applied).
fn term_occurrences(
    vocab: &Vocab,
    window: &WindowExample,
    terms: &BTreeSet<String>,
) -> Result<Vec<std::ops::Range<usize>>> {
    let text = vocab.decode(&window.input_ids)?;
    let spans = vocab.word_spans(&text, &window.input_ids)?;
    Ok(spans
        .into_iter()
        .filter(|s| terms.contains(&s.word))
        .map(|s| s.token_range.start + 1..s.token_range.end + 1)
        .collect())
}

/// Mean K activation per neuron over all occurrences of the anchored
/// `terms` in the `windows` of one dataset.
pub fn memory_coefficient(
    model: &TransformerModel,
    vocab: &Vocab,
    windows: &[WindowExample],
    terms: &BTreeSet<String>,
    source: CoefSource,
    dataset: &str,
) -> Result<CoefTable> {
    if terms.is_empty() {
        return Err(Error::Input("memory_coefficient: no anchored terms".into()));
    }
    if windows.is_empty() {
        return Err(Error::Input("memory_coefficient: no input windows".into()));
    }
    let cfg = &model.config;
    let mut sums = vec![0.0f64; cfg.n_layers * cfg.n_kv_heads * cfg.d_head];
    let mut occurrences = 0usize;
    let mut seen: BTreeSet<String> = BTreeSet::new();

    for window in windows {
        let occs = term_occurrences(vocab, window, terms)?;
        if occs.is_empty() {
            continue;
        }
        let text = vocab.decode(&window.input_ids)?;
        for s in vocab.word_spans(&text, &window.input_ids)? {
            if terms.contains(&s.word) {
                seen.insert(s.word);
            }
        }
        let rows = k_rows(model, &window_prompt(window), source)?;
        for occ in &occs {
            occurrences += 1;
            for l in 0..cfg.n_layers {
                for g in 0..cfg.n_kv_heads {
                    let k = &rows[l][g];
                    for pos in occ.clone() {
                        let row = k.row(pos);
                        let base = (l * cfg.n_kv_heads + g) * cfg.d_head;
                        for (d, &v) in row.iter().enumerate() {
                            sums[base + d] += v as f64;
                        }
                    }
                }
            }
        }
    }
    if occurrences == 0 {
        return Err(Error::Input(
            "memory_coefficient: anchored terms never occur in the inputs".into(),
        ));
    }
    let missing_terms = terms.difference(&seen).cloned().collect();
    Ok(CoefTable {
        dataset: dataset.to_string(),
        source,
        n_layers: cfg.n_layers,
        n_groups: cfg.n_kv_heads,
        d_head: cfg.d_head,
        occurrences,
        missing_terms,
        means: sums.into_iter().map(|s| s / occurrences as f64).collect(),
    })
}

fn check_same_geometry(tables: &[CoefTable]) -> Result<()> {
    if tables.is_empty() {
        return Err(Error::Input("need at least one coefficient table".into()));
    }
    let t0 = &tables[0];
    for t in tables {
        if t.n_layers != t0.n_layers || t.n_groups != t0.n_groups || t.d_head != t0.d_head {
            return Err(Error::Contract(
                "coefficient tables disagree on model geometry".into(),
            ));
        }
    }
    Ok(())
}

/// Within-dataset 1-based ranks by (|mean| descending, NeuronId ascending).
fn dataset_ranks(table: &CoefTable) -> BTreeMap<NeuronId, usize> {
    let mut ids = table.neuron_ids();
    ids.sort_by(|a, b| {
        table
            .stat(*b)
            .partial_cmp(&table.stat(*a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    });
    ids.into_iter().enumerate().map(|(i, id)| (id, i + 1)).collect()
}

/// Cross-dataset neuron ranking: score = mean over datasets of 1/rank,
/// sorted by (score descending, NeuronId ascending).
pub fn rank_neurons_mrr(tables: &[CoefTable]) -> Result<Vec<(NeuronId, f64)>> {
    check_same_geometry(tables)?;
    let per_dataset: Vec<BTreeMap<NeuronId, usize>> = tables.iter().map(dataset_ranks).collect();
    let mut out: Vec<(NeuronId, f64)> = tables[0]
        .neuron_ids()
        .into_iter()
        .map(|id| {
            let s: f64 = per_dataset.iter().map(|r| 1.0 / r[&id] as f64).sum();
            (id, s / per_dataset.len() as f64)
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Cross-dataset (layer, group) head ranking. A head's per-dataset statistic
/// is the mean of |coefficient| over its dimensions; ranks aggregate by MRR
/// exactly as for neurons.
pub fn rank_heads_mrr(tables: &[CoefTable]) -> Result<Vec<((usize, usize), f64)>> {
    check_same_geometry(tables)?;
    let t0 = &tables[0];
    let heads: Vec<(usize, usize)> = (0..t0.n_layers)
        .flat_map(|l| (0..t0.n_groups).map(move |g| (l, g)))
        .collect();
    let head_stat = |t: &CoefTable, (l, g): (usize, usize)| -> f64 {
        let mut s = 0.0;
        for d in 0..t.d_head {
            s += t.stat(NeuronId { layer: l, group: g, dim: d });
        }
        s / t.d_head as f64
    };
    let mut scores: BTreeMap<(usize, usize), f64> = heads.iter().map(|&h| (h, 0.0)).collect();
    for t in tables {
        let mut order = heads.clone();
        order.sort_by(|a, b| {
            head_stat(t, *b)
                .partial_cmp(&head_stat(t, *a))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(b))
        });
        for (i, h) in order.iter().enumerate() {
            *scores.get_mut(h).unwrap() += 1.0 / (i + 1) as f64;
        }
    }
    let mut out: Vec<((usize, usize), f64)> = scores
        .into_iter()
        .map(|(h, s)| (h, s / tables.len() as f64))
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Takes the top `budget` heads from an MRR ranking. When
/// `exclude_first_head` is set, group 0 of every layer is skipped (the
/// first head often serves as an attention sink rather than content lookup).
pub fn select_perturb_heads(
    ranked: &[((usize, usize), f64)],
    budget: usize,
    exclude_first_head: bool,
) -> Vec<(usize, usize)> {
    ranked
        .iter()
        .map(|&(h, _)| h)
        .filter(|&(_, g)| !(exclude_first_head && g == 0))
        .take(budget)
        .collect()
}

/// A scoped neuron plus the orientation (+1/−1) that makes its anchored-term
/// activation positive on average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopedNeuron {
    pub id: NeuronId,
    pub orientation: f64,
}

/// Pairs neuron ids with their orientation under `table`.
pub fn orient_scope(table: &CoefTable, ids: &[NeuronId]) -> Vec<ScopedNeuron> {
    ids.iter()
        .map(|&id| ScopedNeuron { id, orientation: table.orientation(id) })
        .collect()
}

/// One word's aggregate keyword score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordScore {
    pub word: String,
    pub score: f64,
    pub occurrences: usize,
}

/// All words of a dataset scored by the scoped neurons, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordScoreTable {
    pub dataset: String,
    pub entries: Vec<KeywordScore>,
}

impl KeywordScoreTable {
    /// CSV rendering: `dataset,word,score,occurrences`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,word,score,occurrences\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{:.9},{}\n",
                self.dataset, e.word, e.score, e.occurrences
            ));
        }
        out
    }
}

/// Scores every word of every input window by the scoped neurons' K
/// activations: an occurrence's score sums `orientation · activation` over
/// its sub-word tokens and the scope; a window contributes the mean over its
/// occurrences of the word; the total is the sum over windows.
pub fn keyword_scores(
    model: &TransformerModel,
    vocab: &Vocab,
    windows: &[WindowExample],
    scope: &[ScopedNeuron],
    source: CoefSource,
    dataset: &str,
) -> Result<KeywordScoreTable> {
    if scope.is_empty() {
        return Err(Error::Input("keyword_scores: empty neuron scope".into()));
    }
    if windows.is_empty() {
        return Err(Error::Input("keyword_scores: no input windows".into()));
    }
    let cfg = &model.config;
    for s in scope {
        if s.id.layer >= cfg.n_layers || s.id.group >= cfg.n_kv_heads || s.id.dim >= cfg.d_head {
            return Err(Error::Index(format!(
                "keyword_scores: neuron {:?} out of model bounds",
                s.id
            )));
        }
    }
    let mut totals: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for window in windows {
        let text = vocab.decode(&window.input_ids)?;
        let spans = vocab.word_spans(&text, &window.input_ids)?;
        if spans.is_empty() {
            continue;
        }
        let rows = k_rows(model, &window_prompt(window), source)?;
        // occurrence score: sum over the word's tokens and the scope
        let mut per_word: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for span in &spans {
            let mut s = 0.0f64;
            for tok in span.token_range.clone() {
                let pos = tok + 1; // BOS offset
                for n in scope {
                    s += n.orientation * rows[n.id.layer][n.id.group].at(pos, n.id.dim) as f64;
                }
            }
            let slot = per_word.entry(span.word.as_str()).or_insert((0.0, 0));
            slot.0 += s;
            slot.1 += 1;
        }
        for (word, (sum, count)) in per_word {
            let slot = totals.entry(word.to_string()).or_insert((0.0, 0));
            slot.0 += sum / count as f64;
            slot.1 += count;
        }
    }
    let mut entries: Vec<KeywordScore> = totals
        .into_iter()
        .map(|(word, (score, occurrences))| KeywordScore { word, score, occurrences })
        .collect();
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.word.cmp(&b.word))
    });
    Ok(KeywordScoreTable { dataset: dataset.to_string(), entries })
}

/// The extracted keyword list; `short` flags tables smaller than the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKeywords {
    pub words: Vec<String>,
    pub short: bool,
}

/// Top `budget` words by score (ties broken lexicographically — the table is
/// already sorted that way). No stop-word filtering: raw lists only.
pub fn extract_top_keywords(table: &KeywordScoreTable, budget: usize) -> Result<TopKeywords> {
    if table.entries.is_empty() {
        return Err(Error::Input("extract_top_keywords: empty score table".into()));
    }
    if budget == 0 {
        return Err(Error::Input("extract_top_keywords: budget must be positive".into()));
    }
    let words: Vec<String> = table
        .entries
        .iter()
        .take(budget)
        .map(|e| e.word.clone())
        .collect();
    let short = words.len() < budget;
    Ok(TopKeywords { words, short })
}

/// Fraction of extracted words that are planted keywords.
pub fn keyword_precision(extracted: &[String], planted: &BTreeSet<String>) -> f64 {
    if extracted.is_empty() {
        return 0.0;
    }
    let hits = extracted.iter().filter(|w| planted.contains(*w)).count();
    hits as f64 / extracted.len() as f64
}
