//! Brute-force f64 reference computations.

use std::collections::{BTreeMap, BTreeSet};

use attnmem::data::{window_prompt, WindowExample};
use attnmem::error::Result;
use attnmem::interventions::SwapTarget;
use attnmem::model::{TransformerModel, LN_EPS};
use attnmem::probe::{CoefSource, CoefTable, NeuronId, ScopedNeuron};
use attnmem::tensor::Tensor;
use attnmem::tokenizer::{split_words, Vocab};

/// Row-major f64 matrix, used only inside the oracles.
#[derive(Clone)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn from_tensor(t: &Tensor) -> Mat {
        let (rows, cols) = t.dims2();
        Mat {
            rows,
            cols,
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.at(i, k) * other.at(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn slice_cols(&self, start: usize, end: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, end - start);
        for i in 0..self.rows {
            for j in start..end {
                out.set(i, j - start, self.at(i, j));
            }
        }
        out
    }
}

fn layer_norm(x: &Mat, gain: &Tensor, bias: &Tensor, eps: f64) -> Mat {
    let g: Vec<f64> = gain.data().iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = bias.data().iter().map(|&v| v as f64).collect();
    let mut out = Mat::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let row: Vec<f64> = (0..x.cols).map(|j| x.at(i, j)).collect();
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        for j in 0..x.cols {
            out.set(i, j, (row[j] - mean) * rstd * g[j] + b[j]);
        }
    }
    out
}

fn softmax_causal(scores: &Mat, scale: f64) -> Mat {
    let mut out = Mat::zeros(scores.rows, scores.cols);
    for i in 0..scores.rows {
        let row: Vec<f64> = (0..=i.min(scores.cols - 1)).map(|j| scores.at(i, j) * scale).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            out.set(i, j, e / sum);
        }
    }
    out
}

/// `LN1(token embedding + positional embedding)` for a prompt, in f64.
fn pre_attention_input(model: &TransformerModel, ids: &[u32]) -> Mat {
    let w = &model.weights;
    let d = model.config.d_model;
    let mut x = Mat::zeros(ids.len(), d);
    for (i, &id) in ids.iter().enumerate() {
        for j in 0..d {
            x.set(
                i,
                j,
                w.tok_emb().at(id as usize, j) as f64 + w.pos_emb().at(i, j) as f64,
            );
        }
    }
    layer_norm(&x, w.ln1_gain(0), w.ln1_bias(0), LN_EPS as f64)
}

/// Per-head attention probabilities and context vectors of a one-layer
/// model's first layer under a full-prompt swap: queries always come from
/// the factual prompt, keys and/or values from the counterfactual one
/// according to `target`. Everything is recomputed from the embeddings in
/// f64 — softmax(Q_f · K_cf^T / sqrt(d_k)) · V_f and its variants.
pub struct RefAttention {
    /// `[head] -> rows x rows` probabilities.
    pub probs: Vec<Mat>,
    /// `[head] -> rows x d_head` context vectors.
    pub ctx: Vec<Mat>,
}

pub fn ref_swapped_attention(
    model: &TransformerModel,
    fact: &[u32],
    cf: &[u32],
    target: SwapTarget,
) -> RefAttention {
    let cfg = &model.config;
    let w = &model.weights;
    assert_eq!(fact.len(), cf.len(), "oracle requires equal prompt lengths");

    let h_fact = pre_attention_input(model, fact);
    let h_cf = pre_attention_input(model, cf);

    let wq = Mat::from_tensor(w.wq(0));
    let wk = Mat::from_tensor(w.wk(0));
    let wv = Mat::from_tensor(w.wv(0));

    let q = h_fact.matmul(&wq);
    let k = match target {
        SwapTarget::K | SwapTarget::KV => h_cf.matmul(&wk),
        SwapTarget::V => h_fact.matmul(&wk),
    };
    let v = match target {
        SwapTarget::V | SwapTarget::KV => h_cf.matmul(&wv),
        SwapTarget::K => h_fact.matmul(&wv),
    };

    let scale = 1.0 / (cfg.d_head as f64).sqrt();
    let mut probs = Vec::with_capacity(cfg.n_heads);
    let mut ctx = Vec::with_capacity(cfg.n_heads);
    for head in 0..cfg.n_heads {
        let g = cfg.group_of(head);
        let qh = q.slice_cols(head * cfg.d_head, (head + 1) * cfg.d_head);
        let kg = k.slice_cols(g * cfg.d_head, (g + 1) * cfg.d_head);
        let vg = v.slice_cols(g * cfg.d_head, (g + 1) * cfg.d_head);
        let mut scores = Mat::zeros(fact.len(), fact.len());
        for i in 0..fact.len() {
            for j in 0..fact.len() {
                let mut acc = 0.0;
                for d in 0..cfg.d_head {
                    acc += qh.at(i, d) * kg.at(j, d);
                }
                scores.set(i, j, acc);
            }
        }
        let p = softmax_causal(&scores, scale);
        let c = p.matmul(&vg);
        probs.push(p);
        ctx.push(c);
    }
    RefAttention { probs, ctx }
}

/// K rows per (layer, group) for one window prompt, shared with the
/// implementation's activations (the oracle re-derives only the
/// aggregation): contextual rows from the capture, static rows recomputed
/// in f64 from the token embeddings and the K projection.
fn ref_k_rows(
    model: &TransformerModel,
    prompt: &[u32],
    source: CoefSource,
) -> Result<Vec<Vec<Mat>>> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(cfg.n_layers);
    match source {
        CoefSource::Contextual => {
            let cap = model.forward(prompt, &[])?.capture;
            for l in 0..cfg.n_layers {
                let mut per_group = Vec::with_capacity(cfg.n_kv_heads);
                for g in 0..cfg.n_kv_heads {
                    per_group.push(Mat::from_tensor(cap.k_pre_group(l, g)));
                }
                out.push(per_group);
            }
        }
        CoefSource::Static => {
            let w = &model.weights;
            let mut emb = Mat::zeros(prompt.len(), cfg.d_model);
            for (i, &id) in prompt.iter().enumerate() {
                for j in 0..cfg.d_model {
                    emb.set(i, j, w.tok_emb().at(id as usize, j) as f64);
                }
            }
            for l in 0..cfg.n_layers {
                let k_all = emb.matmul(&Mat::from_tensor(w.wk(l)));
                let mut per_group = Vec::with_capacity(cfg.n_kv_heads);
                for g in 0..cfg.n_kv_heads {
                    per_group.push(k_all.slice_cols(g * cfg.d_head, (g + 1) * cfg.d_head));
                }
                out.push(per_group);
            }
        }
    }
    Ok(out)
}

/// Naive per-neuron recomputation of the memory coefficient: an explicit
/// loop over neurons, windows, occurrences, and sub-word tokens, each neuron
/// accumulated independently in f64. Returns means in `[layer][group][dim]`
/// order plus the occurrence count.
pub fn ref_memory_coefficient(
    model: &TransformerModel,
    vocab: &Vocab,
    windows: &[WindowExample],
    terms: &BTreeSet<String>,
    source: CoefSource,
) -> Result<(Vec<f64>, usize)> {
    let cfg = &model.config;
    let mut rows_per_window = Vec::with_capacity(windows.len());
    let mut occs_per_window = Vec::with_capacity(windows.len());
    for win in windows {
        let text = vocab.decode(&win.input_ids)?;
        let occs: Vec<std::ops::Range<usize>> = vocab
            .word_spans(&text, &win.input_ids)?
            .into_iter()
            .filter(|s| terms.contains(&s.word))
            .map(|s| s.token_range)
            .collect();
        rows_per_window.push(ref_k_rows(model, &window_prompt(win), source)?);
        occs_per_window.push(occs);
    }
    let occurrences: usize = occs_per_window.iter().map(|o| o.len()).sum();

    let mut means = Vec::with_capacity(cfg.n_layers * cfg.n_kv_heads * cfg.d_head);
    for l in 0..cfg.n_layers {
        for g in 0..cfg.n_kv_heads {
            for d in 0..cfg.d_head {
                let mut sum = 0.0f64;
                for (rows, occs) in rows_per_window.iter().zip(&occs_per_window) {
                    for occ in occs {
                        for tok in occ.clone() {
                            sum += rows[l][g].at(tok + 1, d);
                        }
                    }
                }
                means.push(sum / occurrences as f64);
            }
        }
    }
    Ok((means, occurrences))
}

/// Naive word-major recomputation of the keyword scores: for every distinct
/// word, loop over windows, occurrences, sub-word tokens, and scoped
/// neurons, normalizing by the per-window occurrence count.
pub fn ref_keyword_scores(
    model: &TransformerModel,
    vocab: &Vocab,
    windows: &[WindowExample],
    scope: &[ScopedNeuron],
    source: CoefSource,
) -> Result<BTreeMap<String, f64>> {
    let mut spans_per_window = Vec::with_capacity(windows.len());
    let mut rows_per_window = Vec::with_capacity(windows.len());
    let mut all_words: BTreeSet<String> = BTreeSet::new();
    for win in windows {
        let text = vocab.decode(&win.input_ids)?;
        let spans = vocab.word_spans(&text, &win.input_ids)?;
        for s in &spans {
            all_words.insert(s.word.clone());
        }
        rows_per_window.push(ref_k_rows(model, &window_prompt(win), source)?);
        spans_per_window.push(spans);
    }

    let mut out = BTreeMap::new();
    for word in all_words {
        let mut total = 0.0f64;
        for (spans, rows) in spans_per_window.iter().zip(&rows_per_window) {
            let occs: Vec<_> = spans.iter().filter(|s| s.word == word).collect();
            if occs.is_empty() {
                continue;
            }
            let mut sum = 0.0f64;
            for occ in &occs {
                for tok in occ.token_range.clone() {
                    for n in scope {
                        sum += n.orientation * rows[n.id.layer][n.id.group].at(tok + 1, n.id.dim);
                    }
                }
            }
            total += sum / occs.len() as f64;
        }
        out.insert(word, total);
    }
    Ok(out)
}

/// Independent MRR recomputation with counting-based ranks: a neuron's rank
/// in one dataset is one plus the number of neurons with strictly larger
/// |coefficient| plus the number of equal-statistic neurons that precede it
/// in id order; its score is the mean of reciprocal ranks over datasets.
pub fn ref_neuron_mrr(tables: &[CoefTable]) -> BTreeMap<NeuronId, f64> {
    let ids = tables[0].neuron_ids();
    let mut scores: BTreeMap<NeuronId, f64> = ids.iter().map(|&id| (id, 0.0)).collect();
    for t in tables {
        for &id in &ids {
            let s = t.stat(id);
            let mut rank = 1usize;
            for &other in &ids {
                let so = t.stat(other);
                if so > s || (so == s && other < id) {
                    rank += 1;
                }
            }
            *scores.get_mut(&id).unwrap() += 1.0 / rank as f64;
        }
    }
    for v in scores.values_mut() {
        *v /= tables.len() as f64;
    }
    scores
}

/// ROUGE-L recall over lowercased words via the full quadratic LCS table.
pub fn ref_rouge_recall(reference: &str, candidate: &str) -> f64 {
    let r: Vec<String> = split_words(reference).into_iter().map(|(w, _)| w).collect();
    let c: Vec<String> = split_words(candidate).into_iter().map(|(w, _)| w).collect();
    assert!(!r.is_empty(), "oracle requires a non-empty reference");
    let mut table = vec![vec![0usize; c.len() + 1]; r.len() + 1];
    for i in 1..=r.len() {
        for j in 1..=c.len() {
            table[i][j] = if r[i - 1] == c[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table[r.len()][c.len()] as f64 / r.len() as f64
}
