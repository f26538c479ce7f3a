//! Decoder-only transformer with attention capture and override hooks.
//!
//! The model is a pre-norm transformer: learned token + position embeddings,
//! per-layer causal self-attention with grouped key/value heads, a GELU MLP,
//! and an untied unembedding. Every forward pass records the per-layer,
//! per-head Q/K/V projections (pre- and post-override), attention
//! probabilities, and per-head context vectors in an [`AttnCapture`].
//!
//! [`Override`]s edit the projected K/V of *prompt* positions before
//! attention runs. Generated positions always project natively and attend
//! over the decode cache, which holds the overridden prompt projections —
//! so replacements revert after the first generated token while zeroed
//! prompt keys stay zeroed throughout decoding.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeRef};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use crate::util::fnv1a64;

pub const LN_EPS: f32 = 1e-5;
const CKPT_MAGIC: &str = "attnmem-ckpt v1";

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Number of key/value head groups; query heads share K/V within a group.
    pub n_kv_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            n_kv_heads: 4,
            d_model: 128,
            d_head: 32,
            d_ff: 512,
            vocab_size: 2048,
            max_seq: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = self.n_layers > 0
            && self.n_heads > 0
            && self.n_kv_heads > 0
            && self.d_model > 0
            && self.d_head > 0
            && self.d_ff > 0
            && self.vocab_size > 0
            && self.max_seq > 0;
        if !all_positive {
            return Err(Error::Input("model config: all dimensions must be positive".into()));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(Error::Input(format!(
                "model config: d_model {} != n_heads {} * d_head {}",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return Err(Error::Input(format!(
                "model config: n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        Ok(())
    }

    /// K/V group that query head `h` belongs to.
    pub fn group_of(&self, head: usize) -> usize {
        head / (self.n_heads / self.n_kv_heads)
    }

    fn attn_scale(&self) -> f32 {
        1.0 / (self.d_head as f32).sqrt()
    }
}

/// Which positions/dims an override touches within its layer/group scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScopeSet {
    All,
    Only(BTreeSet<usize>),
}

impl ScopeSet {
    pub fn contains(&self, i: usize) -> bool {
        match self {
            ScopeSet::All => true,
            ScopeSet::Only(s) => s.contains(&i),
        }
    }

    pub fn only(items: impl IntoIterator<Item = usize>) -> ScopeSet {
        ScopeSet::Only(items.into_iter().collect())
    }

    fn max(&self) -> Option<usize> {
        match self {
            ScopeSet::All => None,
            ScopeSet::Only(s) => s.iter().next_back().copied(),
        }
    }
}

/// Attention-projection edit applied to prompt positions.
#[derive(Debug, Clone)]
pub enum OverrideKind {
    /// Replace the K projection of every prompt position with the projection
    /// captured from another prompt of equal token length.
    ReplaceK { source: Arc<AttnCapture> },
    /// Same for the V projection.
    ReplaceV { source: Arc<AttnCapture> },
    /// Zero the K projection at the given prompt positions, restricted to
    /// `dims` of the head dimension.
    ZeroK { positions: Vec<usize>, dims: ScopeSet },
}

/// Scoped attention override. Applies at every layer in `layers` and every
/// K/V group in `groups`.
#[derive(Debug, Clone)]
pub struct Override {
    pub layers: ScopeSet,
    pub groups: ScopeSet,
    pub kind: OverrideKind,
}

impl Override {
    pub fn replace_k(source: Arc<AttnCapture>) -> Override {
        Override { layers: ScopeSet::All, groups: ScopeSet::All, kind: OverrideKind::ReplaceK { source } }
    }

    pub fn replace_v(source: Arc<AttnCapture>) -> Override {
        Override { layers: ScopeSet::All, groups: ScopeSet::All, kind: OverrideKind::ReplaceV { source } }
    }

    pub fn zero_k(positions: Vec<usize>) -> Override {
        Override {
            layers: ScopeSet::All,
            groups: ScopeSet::All,
            kind: OverrideKind::ZeroK { positions, dims: ScopeSet::All },
        }
    }
}

/// Per-layer attention state captured during a prompt forward pass.
#[derive(Debug, Clone)]
struct LayerCapture {
    /// Per query head: `prompt_len x d_head`.
    q: Vec<Tensor>,
    /// Per K/V group, before overrides.
    k_pre: Vec<Tensor>,
    v_pre: Vec<Tensor>,
    /// Per K/V group, after overrides (what attention actually used).
    k: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Per query head: causal attention probabilities, `prompt_len x prompt_len`.
    probs: Vec<Tensor>,
    /// Per query head: attention output `probs * V`, `prompt_len x d_head`.
    ctx: Vec<Tensor>,
}

/// Q/K/V projections, attention probabilities, and per-head attention
/// outputs for one prompt forward pass.
#[derive(Debug, Clone)]
pub struct AttnCapture {
    pub prompt_ids: Vec<u32>,
    n_heads: usize,
    n_kv_heads: usize,
    layers: Vec<LayerCapture>,
}

impl AttnCapture {
    pub fn prompt_len(&self) -> usize {
        self.prompt_ids.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn n_kv_heads(&self) -> usize {
        self.n_kv_heads
    }

    fn group_of(&self, head: usize) -> usize {
        head / (self.n_heads / self.n_kv_heads)
    }

    /// Post-override query projection of a query head.
    pub fn q(&self, layer: usize, head: usize) -> &Tensor {
        &self.layers[layer].q[head]
    }

    /// Post-override K of the group that query head `head` reads.
    pub fn k(&self, layer: usize, head: usize) -> &Tensor {
        &self.layers[layer].k[self.group_of(head)]
    }

    /// Post-override V of the group that query head `head` reads.
    pub fn v(&self, layer: usize, head: usize) -> &Tensor {
        &self.layers[layer].v[self.group_of(head)]
    }

    /// Pre-override K of a K/V group.
    pub fn k_pre_group(&self, layer: usize, group: usize) -> &Tensor {
        &self.layers[layer].k_pre[group]
    }

    /// Pre-override V of a K/V group.
    pub fn v_pre_group(&self, layer: usize, group: usize) -> &Tensor {
        &self.layers[layer].v_pre[group]
    }

    /// Post-override K of a K/V group.
    pub fn k_group(&self, layer: usize, group: usize) -> &Tensor {
        &self.layers[layer].k[group]
    }

    pub fn v_group(&self, layer: usize, group: usize) -> &Tensor {
        &self.layers[layer].v[group]
    }

    /// Causal attention probabilities of a query head.
    pub fn probs(&self, layer: usize, head: usize) -> &Tensor {
        &self.layers[layer].probs[head]
    }

    /// Per-head attention output (`probs * V`).
    pub fn ctx(&self, layer: usize, head: usize) -> &Tensor {
        &self.layers[layer].ctx[head]
    }
}

/// Model parameters in a fixed canonical order:
/// `tok_emb, pos_emb, [per layer: ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b,
/// w_in, w_out], lnf_g, lnf_b, unembed`.
pub struct Weights {
    n_layers: usize,
    pub tensors: Vec<Arc<Tensor>>,
}

pub(crate) const PER_LAYER: usize = 10;
pub(crate) const L_LN1_G: usize = 0;
pub(crate) const L_LN1_B: usize = 1;
pub(crate) const L_WQ: usize = 2;
pub(crate) const L_WK: usize = 3;
pub(crate) const L_WV: usize = 4;
pub(crate) const L_WO: usize = 5;
pub(crate) const L_LN2_G: usize = 6;
pub(crate) const L_LN2_B: usize = 7;
pub(crate) const L_W_IN: usize = 8;
pub(crate) const L_W_OUT: usize = 9;

impl Weights {
    fn layer_base(&self, l: usize) -> usize {
        2 + l * PER_LAYER
    }

    pub fn tok_emb(&self) -> &Tensor {
        &self.tensors[0]
    }

    pub fn pos_emb(&self) -> &Tensor {
        &self.tensors[1]
    }

    pub fn layer_tensor(&self, l: usize, slot: usize) -> &Tensor {
        &self.tensors[self.layer_base(l) + slot]
    }

    pub fn ln1_gain(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_LN1_G)
    }

    pub fn ln1_bias(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_LN1_B)
    }

    pub fn wq(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_WQ)
    }

    pub fn wk(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_WK)
    }

    pub fn wv(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_WV)
    }

    pub fn wo(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_WO)
    }

    pub fn ln2_gain(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_LN2_G)
    }

    pub fn ln2_bias(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_LN2_B)
    }

    pub fn w_in(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_W_IN)
    }

    pub fn w_out(&self, l: usize) -> &Tensor {
        self.layer_tensor(l, L_W_OUT)
    }

    pub fn lnf_g(&self) -> &Tensor {
        &self.tensors[2 + self.n_layers * PER_LAYER]
    }

    pub fn lnf_b(&self) -> &Tensor {
        &self.tensors[3 + self.n_layers * PER_LAYER]
    }

    pub fn unembed(&self) -> &Tensor {
        &self.tensors[4 + self.n_layers * PER_LAYER]
    }

    /// Canonical tensor names, aligned with `tensors`.
    pub fn names(n_layers: usize) -> Vec<String> {
        let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for l in 0..n_layers {
            for slot in ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "w_in", "w_out"] {
                names.push(format!("layer{l}.{slot}"));
            }
        }
        names.push("lnf_g".to_string());
        names.push("lnf_b".to_string());
        names.push("unembed".to_string());
        names
    }
}

/// A decoder-only transformer.
pub struct TransformerModel {
    pub config: ModelConfig,
    pub weights: Weights,
}

/// Output of [`TransformerModel::forward`].
pub struct ForwardPass {
    /// `prompt_len x vocab` logits.
    pub logits: Tensor,
    pub capture: AttnCapture,
}

/// Output of [`TransformerModel::generate`].
pub struct Generation {
    /// Greedily decoded new token ids (`n_new` of them).
    pub new_ids: Vec<u32>,
    /// Logits at the first generated position (the last prompt position).
    pub first_logits: Vec<f32>,
    /// Capture of the prompt forward pass.
    pub capture: AttnCapture,
}

/// Grow-only row matrix used for the decode K/V cache.
struct GrowMat {
    cols: usize,
    data: Vec<f32>,
}

impl GrowMat {
    fn new(cols: usize) -> GrowMat {
        GrowMat { cols, data: Vec::new() }
    }

    fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    fn push_row(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

struct KvCache {
    /// `[layer][group]` K and V rows for all processed positions.
    k: Vec<Vec<GrowMat>>,
    v: Vec<Vec<GrowMat>>,
    len: usize,
}

impl TransformerModel {
    /// Fresh model with seeded Gaussian initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<TransformerModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
        let mut randn = |shape: &[usize], std: f64| -> Arc<Tensor> {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|_| (normal.sample(&mut rng) * std) as f32).collect();
            Arc::new(Tensor::from_vec(shape, data).expect("init shape"))
        };
        let std = 0.02;
        // Residual-writing projections are scaled down by sqrt(2 * n_layers).
        let resid_std = std / ((2 * config.n_layers) as f64).sqrt();
        let ones = |n: usize| Arc::new(Tensor::from_vec(&[n], vec![1.0; n]).expect("ones"));
        let zeros = |n: usize| Arc::new(Tensor::zeros(&[n]));

        let kv_width = config.n_kv_heads * config.d_head;
        let mut tensors: Vec<Arc<Tensor>> = Vec::new();
        tensors.push(randn(&[config.vocab_size, config.d_model], std));
        tensors.push(randn(&[config.max_seq, config.d_model], std));
        for _ in 0..config.n_layers {
            tensors.push(ones(config.d_model)); // ln1_g
            tensors.push(zeros(config.d_model)); // ln1_b
            tensors.push(randn(&[config.d_model, config.d_model], std)); // wq
            tensors.push(randn(&[config.d_model, kv_width], std)); // wk
            tensors.push(randn(&[config.d_model, kv_width], std)); // wv
            tensors.push(randn(&[config.d_model, config.d_model], resid_std)); // wo
            tensors.push(ones(config.d_model)); // ln2_g
            tensors.push(zeros(config.d_model)); // ln2_b
            tensors.push(randn(&[config.d_model, config.d_ff], std)); // w_in
            tensors.push(randn(&[config.d_ff, config.d_model], resid_std)); // w_out
        }
        tensors.push(ones(config.d_model));
        tensors.push(zeros(config.d_model));
        tensors.push(randn(&[config.d_model, config.vocab_size], std));

        Ok(TransformerModel {
            weights: Weights { n_layers: config.n_layers, tensors },
            config,
        })
    }

    fn validate_ids(&self, ids: &[u32], extra: usize) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Input("prompt must contain at least one token".into()));
        }
        if ids.len() + extra > self.config.max_seq {
            return Err(Error::Input(format!(
                "sequence length {} + {extra} new tokens exceeds max_seq {}",
                ids.len(),
                self.config.max_seq
            )));
        }
        for &id in ids {
            if id as usize >= self.config.vocab_size {
                return Err(Error::Index(format!(
                    "token id {id} out of vocab {}",
                    self.config.vocab_size
                )));
            }
        }
        Ok(())
    }

    fn validate_overrides(&self, prompt_len: usize, overrides: &[Override]) -> Result<()> {
        let cfg = &self.config;
        for ov in overrides {
            if let Some(mx) = ov.layers.max() {
                if mx >= cfg.n_layers {
                    return Err(Error::Index(format!(
                        "override layer {mx} out of {} layers",
                        cfg.n_layers
                    )));
                }
            }
            if let Some(mx) = ov.groups.max() {
                if mx >= cfg.n_kv_heads {
                    return Err(Error::Index(format!(
                        "override group {mx} out of {} kv groups",
                        cfg.n_kv_heads
                    )));
                }
            }
            match &ov.kind {
                OverrideKind::ReplaceK { source } | OverrideKind::ReplaceV { source } => {
                    if source.prompt_len() != prompt_len {
                        return Err(Error::Contract(format!(
                            "override source has prompt length {}, run has {prompt_len}; \
                             swapped prompts must have equal token length",
                            source.prompt_len()
                        )));
                    }
                    if source.n_layers() != cfg.n_layers || source.n_kv_heads() != cfg.n_kv_heads {
                        return Err(Error::Contract(
                            "override source capture does not match model geometry".into(),
                        ));
                    }
                    let (_, dh) = source.k_group(0, 0).dims2();
                    if dh != cfg.d_head {
                        return Err(Error::Contract(
                            "override source capture does not match d_head".into(),
                        ));
                    }
                }
                OverrideKind::ZeroK { positions, dims } => {
                    for &p in positions {
                        if p >= prompt_len {
                            return Err(Error::Index(format!(
                                "override position {p} out of prompt length {prompt_len}"
                            )));
                        }
                    }
                    if let Some(mx) = dims.max() {
                        if mx >= cfg.d_head {
                            return Err(Error::Index(format!(
                                "override dim {mx} out of d_head {}",
                                cfg.d_head
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Applies the overrides that target layer `l` / group `g` to that
    /// group's K/V matrices, in list order.
    fn apply_overrides(
        &self,
        l: usize,
        g: usize,
        k: &mut Tensor,
        v: &mut Tensor,
        overrides: &[Override],
    ) {
        for ov in overrides {
            if !ov.layers.contains(l) || !ov.groups.contains(g) {
                continue;
            }
            match &ov.kind {
                OverrideKind::ReplaceK { source } => {
                    *k = source.k_group(l, g).clone();
                }
                OverrideKind::ReplaceV { source } => {
                    *v = source.v_group(l, g).clone();
                }
                OverrideKind::ZeroK { positions, dims } => {
                    for &p in positions {
                        let row = k.row_mut(p);
                        for (d, slot) in row.iter_mut().enumerate() {
                            if dims.contains(d) {
                                *slot = 0.0;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Full forward over a prompt. Returns logits for every position and the
    /// attention capture; overrides apply to these prompt positions only.
    pub fn forward(&self, ids: &[u32], overrides: &[Override]) -> Result<ForwardPass> {
        let (logits, capture, _) = self.forward_with_cache(ids, overrides)?;
        Ok(ForwardPass { logits, capture })
    }

    fn forward_with_cache(
        &self,
        ids: &[u32],
        overrides: &[Override],
    ) -> Result<(Tensor, AttnCapture, KvCache)> {
        self.validate_ids(ids, 0)?;
        self.validate_overrides(ids.len(), overrides)?;
        let cfg = &self.config;
        let w = &self.weights;
        let t = ids.len();
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let pos: Vec<usize> = (0..t).collect();

        let mut x = tensor::add(
            &tensor::gather_rows(w.tok_emb(), &rows)?,
            &tensor::gather_rows(w.pos_emb(), &pos)?,
        )?;

        let mut cache = KvCache { k: Vec::new(), v: Vec::new(), len: t };
        let mut layer_caps = Vec::with_capacity(cfg.n_layers);

        for l in 0..cfg.n_layers {
            let h = tensor::layer_norm(
                &x,
                w.layer_tensor(l, L_LN1_G),
                w.layer_tensor(l, L_LN1_B),
                LN_EPS,
            )?;
            let q_all = tensor::matmul(&h, w.layer_tensor(l, L_WQ))?;
            let k_all = tensor::matmul(&h, w.layer_tensor(l, L_WK))?;
            let v_all = tensor::matmul(&h, w.layer_tensor(l, L_WV))?;

            let mut q = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                q.push(tensor::slice_cols(&q_all, head * cfg.d_head, (head + 1) * cfg.d_head)?);
            }
            let mut k_pre = Vec::with_capacity(cfg.n_kv_heads);
            let mut v_pre = Vec::with_capacity(cfg.n_kv_heads);
            for g in 0..cfg.n_kv_heads {
                k_pre.push(tensor::slice_cols(&k_all, g * cfg.d_head, (g + 1) * cfg.d_head)?);
                v_pre.push(tensor::slice_cols(&v_all, g * cfg.d_head, (g + 1) * cfg.d_head)?);
            }
            let mut k_post = k_pre.clone();
            let mut v_post = v_pre.clone();
            for g in 0..cfg.n_kv_heads {
                let (mut kg, mut vg) = (k_post[g].clone(), v_post[g].clone());
                self.apply_overrides(l, g, &mut kg, &mut vg, overrides);
                k_post[g] = kg;
                v_post[g] = vg;
            }

            let mut probs = Vec::with_capacity(cfg.n_heads);
            let mut ctx = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let g = cfg.group_of(head);
                let scores = tensor::matmul_nt(&q[head], &k_post[g])?;
                let p = tensor::softmax_rows_causal(&scores, cfg.attn_scale())?;
                let c = tensor::matmul(&p, &v_post[g])?;
                probs.push(p);
                ctx.push(c);
            }
            let ctx_refs: Vec<&Tensor> = ctx.iter().collect();
            let attn = tensor::concat_cols(&ctx_refs)?;
            let proj = tensor::matmul(&attn, w.layer_tensor(l, L_WO))?;
            x = tensor::add(&x, &proj)?;

            let h2 = tensor::layer_norm(
                &x,
                w.layer_tensor(l, L_LN2_G),
                w.layer_tensor(l, L_LN2_B),
                LN_EPS,
            )?;
            let mid = tensor::gelu(&tensor::matmul(&h2, w.layer_tensor(l, L_W_IN))?);
            let mlp = tensor::matmul(&mid, w.layer_tensor(l, L_W_OUT))?;
            x = tensor::add(&x, &mlp)?;

            // Seed the decode cache with the (post-override) prompt K/V.
            let mut k_mats = Vec::with_capacity(cfg.n_kv_heads);
            let mut v_mats = Vec::with_capacity(cfg.n_kv_heads);
            for g in 0..cfg.n_kv_heads {
                let mut km = GrowMat::new(cfg.d_head);
                let mut vm = GrowMat::new(cfg.d_head);
                for i in 0..t {
                    km.push_row(k_post[g].row(i));
                    vm.push_row(v_post[g].row(i));
                }
                k_mats.push(km);
                v_mats.push(vm);
            }
            cache.k.push(k_mats);
            cache.v.push(v_mats);

            layer_caps.push(LayerCapture { q, k_pre, v_pre, k: k_post, v: v_post, probs, ctx });
        }

        let xf = tensor::layer_norm(&x, w.lnf_g(), w.lnf_b(), LN_EPS)?;
        let logits = tensor::matmul(&xf, w.unembed())?;
        let capture = AttnCapture {
            prompt_ids: ids.to_vec(),
            n_heads: cfg.n_heads,
            n_kv_heads: cfg.n_kv_heads,
            layers: layer_caps,
        };
        Ok((logits, capture, cache))
    }

    /// One decode step: processes the token at position `pos` (0-based over
    /// the whole sequence), appends its native K/V to the cache, and returns
    /// the logits row for the next token.
    fn decode_step(&self, cache: &mut KvCache, token: u32, pos: usize) -> Result<Vec<f32>> {
        let cfg = &self.config;
        let w = &self.weights;
        let rows = [token as usize];
        let mut x = tensor::add(
            &tensor::gather_rows(w.tok_emb(), &rows)?,
            &tensor::gather_rows(w.pos_emb(), &[pos])?,
        )?;

        for l in 0..cfg.n_layers {
            let h = tensor::layer_norm(
                &x,
                w.layer_tensor(l, L_LN1_G),
                w.layer_tensor(l, L_LN1_B),
                LN_EPS,
            )?;
            let q_all = tensor::matmul(&h, w.layer_tensor(l, L_WQ))?;
            let k_all = tensor::matmul(&h, w.layer_tensor(l, L_WK))?;
            let v_all = tensor::matmul(&h, w.layer_tensor(l, L_WV))?;
            for g in 0..cfg.n_kv_heads {
                cache.k[l][g].push_row(&k_all.data()[g * cfg.d_head..(g + 1) * cfg.d_head]);
                cache.v[l][g].push_row(&v_all.data()[g * cfg.d_head..(g + 1) * cfg.d_head]);
            }
            let n_ctx = cache.k[l][0].rows();

            let mut ctx_parts = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let g = cfg.group_of(head);
                let qh = &q_all.data()[head * cfg.d_head..(head + 1) * cfg.d_head];
                let km = &cache.k[l][g];
                let mut scores = vec![0.0f32; n_ctx];
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = tensor::dot(qh, km.row(j));
                }
                let mut p = vec![0.0f32; n_ctx];
                tensor::softmax_row_into(&scores, cfg.attn_scale() as f64, &mut p);
                // ctx = sum_j p_j * v_j, ascending j — same order as matmul.
                let vm = &cache.v[l][g];
                let mut c = vec![0.0f32; cfg.d_head];
                for (j, &pj) in p.iter().enumerate() {
                    for (cd, vd) in c.iter_mut().zip(vm.row(j)) {
                        *cd += pj * vd;
                    }
                }
                ctx_parts.push(Tensor::from_vec(&[1, cfg.d_head], c)?);
            }
            let refs: Vec<&Tensor> = ctx_parts.iter().collect();
            let attn = tensor::concat_cols(&refs)?;
            let proj = tensor::matmul(&attn, w.layer_tensor(l, L_WO))?;
            x = tensor::add(&x, &proj)?;

            let h2 = tensor::layer_norm(
                &x,
                w.layer_tensor(l, L_LN2_G),
                w.layer_tensor(l, L_LN2_B),
                LN_EPS,
            )?;
            let mid = tensor::gelu(&tensor::matmul(&h2, w.layer_tensor(l, L_W_IN))?);
            let mlp = tensor::matmul(&mid, w.layer_tensor(l, L_W_OUT))?;
            x = tensor::add(&x, &mlp)?;
        }
        let xf = tensor::layer_norm(&x, w.lnf_g(), w.lnf_b(), LN_EPS)?;
        let logits = tensor::matmul(&xf, w.unembed())?;
        Ok(logits.data().to_vec())
    }

    /// Greedy decoding of `n_new` tokens after the prompt. Overrides apply to
    /// prompt positions only; generated tokens always project natively.
    pub fn generate(&self, ids: &[u32], n_new: usize, overrides: &[Override]) -> Result<Generation> {
        if n_new == 0 {
            return Err(Error::Input("generate: n_new must be at least 1".into()));
        }
        self.validate_ids(ids, n_new)?;
        let (logits, capture, mut cache) = self.forward_with_cache(ids, overrides)?;
        let first_logits = logits.row(ids.len() - 1).to_vec();
        let mut new_ids = Vec::with_capacity(n_new);
        let mut next = argmax(&first_logits) as u32;
        new_ids.push(next);
        for step in 1..n_new {
            let row = self.decode_step(&mut cache, next, ids.len() + step - 1)?;
            cache.len += 1;
            next = argmax(&row) as u32;
            new_ids.push(next);
        }
        Ok(Generation { new_ids, first_logits, capture })
    }

    /// Teacher-forced scoring: returns one logits row per continuation token,
    /// where row `i` is the distribution the model assigns to
    /// `continuation[i]`'s position. Overrides apply to `prompt` positions
    /// only; continuation tokens are fed through the decode cache natively,
    /// exactly as [`TransformerModel::generate`] would process them.
    pub fn score_continuation(
        &self,
        prompt: &[u32],
        continuation: &[u32],
        overrides: &[Override],
    ) -> Result<Vec<Vec<f32>>> {
        if continuation.is_empty() {
            return Err(Error::Input("score_continuation: continuation is empty".into()));
        }
        self.validate_ids(prompt, continuation.len())?;
        for &id in continuation {
            if id as usize >= self.config.vocab_size {
                return Err(Error::Index(format!(
                    "token id {id} out of vocab {}",
                    self.config.vocab_size
                )));
            }
        }
        let (logits, _, mut cache) = self.forward_with_cache(prompt, overrides)?;
        let mut rows = Vec::with_capacity(continuation.len());
        rows.push(logits.row(prompt.len() - 1).to_vec());
        for (i, &tok) in continuation[..continuation.len() - 1].iter().enumerate() {
            let row = self.decode_step(&mut cache, tok, prompt.len() + i)?;
            cache.len += 1;
            rows.push(row);
        }
        Ok(rows)
    }

    /// Builds the differentiable next-token loss for one training sequence on
    /// `graph`, mirroring [`TransformerModel::forward`] kernel for kernel.
    /// Returns the scalar loss node; parameter gradients align with
    /// [`Weights::tensors`] order via `param_nodes`.
    pub fn build_loss(
        &self,
        graph: &mut Graph,
        param_nodes: &[NodeRef],
        ids: &[u32],
    ) -> Result<NodeRef> {
        if ids.len() < 2 {
            return Err(Error::Input("training sequence needs at least 2 tokens".into()));
        }
        self.validate_ids(ids, 0)?;
        if param_nodes.len() != self.weights.tensors.len() {
            return Err(Error::Contract(format!(
                "build_loss: expected {} parameter nodes, got {}",
                self.weights.tensors.len(),
                param_nodes.len()
            )));
        }
        let cfg = &self.config;
        let t = ids.len() - 1;
        let input_rows: Vec<usize> = ids[..t].iter().map(|&i| i as usize).collect();
        let targets: Vec<u32> = ids[1..].to_vec();
        let pos: Vec<usize> = (0..t).collect();

        let base = |l: usize, slot: usize| param_nodes[2 + l * PER_LAYER + slot];
        let tok_emb = param_nodes[0];
        let pos_emb = param_nodes[1];
        let lnf_g = param_nodes[2 + cfg.n_layers * PER_LAYER];
        let lnf_b = param_nodes[3 + cfg.n_layers * PER_LAYER];
        let unembed = param_nodes[4 + cfg.n_layers * PER_LAYER];

        let te = graph.gather(tok_emb, &input_rows)?;
        let pe = graph.gather(pos_emb, &pos)?;
        let mut x = graph.add(te, pe)?;

        for l in 0..cfg.n_layers {
            let h = graph.layer_norm(x, base(l, L_LN1_G), base(l, L_LN1_B), LN_EPS)?;
            let q_all = graph.matmul(h, base(l, L_WQ))?;
            let k_all = graph.matmul(h, base(l, L_WK))?;
            let v_all = graph.matmul(h, base(l, L_WV))?;
            let mut ctx = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let g = cfg.group_of(head);
                let qh = graph.slice_cols(q_all, head * cfg.d_head, (head + 1) * cfg.d_head)?;
                let kg = graph.slice_cols(k_all, g * cfg.d_head, (g + 1) * cfg.d_head)?;
                let vg = graph.slice_cols(v_all, g * cfg.d_head, (g + 1) * cfg.d_head)?;
                let scores = graph.matmul_nt(qh, kg)?;
                let p = graph.softmax_causal(scores, cfg.attn_scale())?;
                ctx.push(graph.matmul(p, vg)?);
            }
            let attn = graph.concat_cols(&ctx)?;
            let proj = graph.matmul(attn, base(l, L_WO))?;
            x = graph.add(x, proj)?;
            let h2 = graph.layer_norm(x, base(l, L_LN2_G), base(l, L_LN2_B), LN_EPS)?;
            let pre = graph.matmul(h2, base(l, L_W_IN))?;
            let mid = graph.gelu(pre);
            let mlp = graph.matmul(mid, base(l, L_W_OUT))?;
            x = graph.add(x, mlp)?;
        }
        let xf = graph.layer_norm(x, lnf_g, lnf_b, LN_EPS)?;
        let logits = graph.matmul(xf, unembed)?;
        graph.cross_entropy(logits, &targets)
    }

    /// Registers every parameter as a shared leaf on `graph`, in canonical
    /// order.
    pub fn register_params(&self, graph: &mut Graph) -> Vec<NodeRef> {
        self.weights.tensors.iter().map(|t| graph.shared_leaf(t.clone())).collect()
    }

    /// Serializes config and weights. The format is a small versioned text
    /// header (magic line, config line, tensor count, payload hash) followed
    /// by named tensors as little-endian `f32` with shape prefixes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let cfg = &self.config;
        let names = Weights::names(cfg.n_layers);
        let mut payload: Vec<u8> = Vec::new();
        for (name, tensor) in names.iter().zip(&self.weights.tensors) {
            payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
            payload.extend_from_slice(name.as_bytes());
            payload.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                payload.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let config_line = format!(
            "n_layers={} n_heads={} n_kv_heads={} d_model={} d_head={} d_ff={} vocab_size={} max_seq={}",
            cfg.n_layers, cfg.n_heads, cfg.n_kv_heads, cfg.d_model, cfg.d_head, cfg.d_ff,
            cfg.vocab_size, cfg.max_seq
        );
        let hash = fnv1a64(&[config_line.as_bytes(), &payload]);
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{CKPT_MAGIC}")?;
        writeln!(f, "{config_line}")?;
        writeln!(f, "tensors={}", names.len())?;
        writeln!(f, "hash={hash:016x}")?;
        f.write_all(&payload)?;
        Ok(())
    }

    /// Loads a checkpoint saved by [`TransformerModel::save`]. Verifies the
    /// header, the payload hash, and every tensor's name and shape.
    pub fn load(path: &Path) -> Result<TransformerModel> {
        let bytes = std::fs::read(path)?;
        let mut off = 0usize;
        let mut read_line = |bytes: &[u8]| -> Result<String> {
            let start = off;
            while off < bytes.len() && bytes[off] != b'\n' {
                off += 1;
            }
            if off >= bytes.len() {
                return Err(Error::Format("checkpoint: truncated header".into()));
            }
            let line = String::from_utf8_lossy(&bytes[start..off]).into_owned();
            off += 1;
            Ok(line)
        };
        let magic = read_line(&bytes)?;
        if magic != CKPT_MAGIC {
            return Err(Error::Format(format!(
                "checkpoint: bad magic {magic:?}, want {CKPT_MAGIC:?}"
            )));
        }
        let config_line = read_line(&bytes)?;
        let tensors_line = read_line(&bytes)?;
        let hash_line = read_line(&bytes)?;
        let header_end = off;

        let cfg = parse_config_line(&config_line)?;
        cfg.validate()?;
        let n_tensors: usize = tensors_line
            .strip_prefix("tensors=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("checkpoint: bad tensor count {tensors_line:?}")))?;
        let want_hash = hash_line
            .strip_prefix("hash=")
            .and_then(|v| u64::from_str_radix(v, 16).ok())
            .ok_or_else(|| Error::Format(format!("checkpoint: bad hash line {hash_line:?}")))?;

        let payload = &bytes[header_end..];
        let got_hash = fnv1a64(&[config_line.as_bytes(), payload]);
        if got_hash != want_hash {
            return Err(Error::Format(format!(
                "checkpoint: config/payload hash mismatch (file says {want_hash:016x}, computed {got_hash:016x})"
            )));
        }

        let names = Weights::names(cfg.n_layers);
        if names.len() != n_tensors {
            return Err(Error::Format(format!(
                "checkpoint: config wants {} tensors, header says {n_tensors}",
                names.len()
            )));
        }
        let mut cur = std::io::Cursor::new(payload);
        let mut tensors = Vec::with_capacity(n_tensors);
        for want_name in &names {
            let name_len = read_u32(&mut cur)? as usize;
            let mut name_buf = vec![0u8; name_len];
            cur.read_exact(&mut name_buf)
                .map_err(|_| Error::Format("checkpoint: truncated tensor name".into()))?;
            let name = String::from_utf8_lossy(&name_buf);
            if name != *want_name {
                return Err(Error::Format(format!(
                    "checkpoint: tensor {name:?} where {want_name:?} expected"
                )));
            }
            let ndim = read_u32(&mut cur)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&mut cur)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = vec![0.0f32; n];
            for v in data.iter_mut() {
                let mut b = [0u8; 4];
                cur.read_exact(&mut b)
                    .map_err(|_| Error::Format("checkpoint: truncated tensor data".into()))?;
                *v = f32::from_le_bytes(b);
            }
            tensors.push(Arc::new(Tensor::from_vec(&shape, data)?));
        }
        Ok(TransformerModel {
            weights: Weights { n_layers: cfg.n_layers, tensors },
            config: cfg,
        })
    }
}

fn read_u32(cur: &mut std::io::Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)
        .map_err(|_| Error::Format("checkpoint: truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn parse_config_line(line: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    let mut seen = 0;
    for part in line.split_whitespace() {
        let (key, val) = part
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("checkpoint: bad config entry {part:?}")))?;
        let val: usize = val
            .parse()
            .map_err(|_| Error::Format(format!("checkpoint: bad config value {part:?}")))?;
        match key {
            "n_layers" => cfg.n_layers = val,
            "n_heads" => cfg.n_heads = val,
            "n_kv_heads" => cfg.n_kv_heads = val,
            "d_model" => cfg.d_model = val,
            "d_head" => cfg.d_head = val,
            "d_ff" => cfg.d_ff = val,
            "vocab_size" => cfg.vocab_size = val,
            "max_seq" => cfg.max_seq = val,
            other => return Err(Error::Format(format!("checkpoint: unknown config key {other:?}"))),
        }
        seen += 1;
    }
    if seen != 8 {
        return Err(Error::Format(format!(
            "checkpoint: config line has {seen} entries, want 8"
        )));
    }
    Ok(cfg)
}

/// Index of the largest value; the first one wins on ties.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            n_kv_heads: 2,
            d_model: 32,
            d_head: 8,
            d_ff: 64,
            vocab_size: 300,
            max_seq: 64,
        }
    }

    #[test]
    fn config_validation_catches_bad_geometry() {
        let mut c = tiny_config();
        c.d_model = 30;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.n_kv_heads = 3;
        assert!(c.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let m = TransformerModel::init(tiny_config(), 7).unwrap();
        let ids = [1u32, 5, 9, 250];
        let a = m.forward(&ids, &[]).unwrap();
        let b = m.forward(&ids, &[]).unwrap();
        assert_eq!(a.logits.shape(), &[4, 300]);
        assert_eq!(a.logits.data(), b.logits.data());
        assert!(a.logits.all_finite());
    }

    #[test]
    fn causality_prefix_logits_ignore_suffix() {
        let m = TransformerModel::init(tiny_config(), 3).unwrap();
        let a = m.forward(&[1, 2, 3, 4, 5], &[]).unwrap();
        let b = m.forward(&[1, 2, 3, 99, 98], &[]).unwrap();
        for i in 0..3 {
            assert_eq!(a.logits.row(i), b.logits.row(i), "row {i} must ignore later tokens");
        }
        assert_ne!(a.logits.row(3), b.logits.row(3));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let m = TransformerModel::init(tiny_config(), 11).unwrap();
        let out = m.forward(&[4, 8, 15, 16, 23, 42], &[]).unwrap();
        for l in 0..2 {
            for h in 0..4 {
                let p = out.capture.probs(l, h);
                for i in 0..6 {
                    let s: f64 = p.row(i).iter().map(|&v| v as f64).sum();
                    assert!((s - 1.0).abs() < 1e-5, "layer {l} head {h} row {i}: {s}");
                }
            }
        }
    }

    #[test]
    fn gqa_heads_share_group_kv() {
        let m = TransformerModel::init(tiny_config(), 5).unwrap(); // 4 heads, 2 groups
        let out = m.forward(&[1, 2, 3], &[]).unwrap();
        let cap = &out.capture;
        for l in 0..2 {
            assert_eq!(cap.k(l, 0).data(), cap.k(l, 1).data());
            assert_eq!(cap.k(l, 2).data(), cap.k(l, 3).data());
            assert_eq!(cap.v(l, 0).data(), cap.v(l, 1).data());
            assert_ne!(cap.k(l, 0).data(), cap.k(l, 2).data());
        }
    }

    #[test]
    fn self_swap_is_a_bit_exact_no_op() {
        let m = TransformerModel::init(tiny_config(), 13).unwrap();
        let ids = [7u32, 20, 33, 150, 2];
        let clean = m.forward(&ids, &[]).unwrap();
        let source = Arc::new(clean.capture.clone());
        let swapped = m
            .forward(&ids, &[Override::replace_k(source.clone()), Override::replace_v(source)])
            .unwrap();
        assert_eq!(clean.logits.data(), swapped.logits.data());
    }

    #[test]
    fn replace_k_changes_output_and_keeps_pre_capture() {
        let m = TransformerModel::init(tiny_config(), 17).unwrap();
        let a = [1u32, 2, 3, 4];
        let b = [10u32, 20, 30, 40];
        let cap_b = Arc::new(m.forward(&b, &[]).unwrap().capture);
        let clean = m.forward(&a, &[]).unwrap();
        let swapped = m.forward(&a, &[Override::replace_k(cap_b.clone())]).unwrap();
        assert_ne!(clean.logits.data(), swapped.logits.data());
        // post-override K equals the source's K; pre-override K is retained.
        assert_eq!(swapped.capture.k_group(0, 0).data(), cap_b.k_group(0, 0).data());
        assert_eq!(swapped.capture.k_pre_group(0, 0).data(), clean.capture.k_pre_group(0, 0).data());
    }

    #[test]
    fn replace_applied_twice_equals_once() {
        let m = TransformerModel::init(tiny_config(), 19).unwrap();
        let a = [1u32, 2, 3];
        let cap = Arc::new(m.forward(&[5, 6, 7], &[]).unwrap().capture);
        let once = m.forward(&a, &[Override::replace_k(cap.clone())]).unwrap();
        let twice = m
            .forward(&a, &[Override::replace_k(cap.clone()), Override::replace_k(cap)])
            .unwrap();
        assert_eq!(once.logits.data(), twice.logits.data());
    }

    #[test]
    fn zero_k_zeroes_exactly_the_scoped_positions() {
        let m = TransformerModel::init(tiny_config(), 23).unwrap();
        let ids = [9u32, 8, 7, 6];
        let out = m.forward(&ids, &[Override::zero_k(vec![1, 2])]).unwrap();
        for l in 0..2 {
            for g in 0..2 {
                let k = out.capture.k_group(l, g);
                assert!(k.row(1).iter().all(|&v| v == 0.0));
                assert!(k.row(2).iter().all(|&v| v == 0.0));
                assert!(k.row(0).iter().any(|&v| v != 0.0));
                // pre-override values are kept
                assert!(out.capture.k_pre_group(l, g).row(1).iter().any(|&v| v != 0.0));
            }
        }
    }

    #[test]
    fn zero_k_makes_prompt_attention_to_position_uniform_logit() {
        // With K zeroed at position p, every query's score to p is exactly 0.
        let m = TransformerModel::init(tiny_config(), 29).unwrap();
        let ids = [3u32, 4, 5];
        let out = m.forward(&ids, &[Override::zero_k(vec![1])]).unwrap();
        let cap = &out.capture;
        for h in 0..4 {
            let q = cap.q(0, h);
            let k = cap.k(0, h);
            let s = tensor::matmul_nt(q, k).unwrap();
            assert_eq!(s.at(1, 1), 0.0);
            assert_eq!(s.at(2, 1), 0.0);
        }
    }

    #[test]
    fn override_validation_errors() {
        let m = TransformerModel::init(tiny_config(), 31).unwrap();
        let cap = Arc::new(m.forward(&[1, 2, 3], &[]).unwrap().capture);
        // length mismatch
        let err = m.forward(&[1, 2, 3, 4], &[Override::replace_k(cap.clone())]);
        assert!(matches!(err, Err(Error::Contract(_))));
        // layer out of range
        let ov = Override {
            layers: ScopeSet::only([5]),
            groups: ScopeSet::All,
            kind: OverrideKind::ReplaceK { source: cap },
        };
        assert!(matches!(m.forward(&[1, 2, 3], &[ov]), Err(Error::Index(_))));
        // position out of range
        let ov = Override::zero_k(vec![9]);
        assert!(matches!(m.forward(&[1, 2, 3], &[ov]), Err(Error::Index(_))));
    }

    #[test]
    fn generate_first_token_is_argmax_of_forward_logits() {
        let m = TransformerModel::init(tiny_config(), 37).unwrap();
        let ids = [1u32, 2, 3, 4, 5];
        let fwd = m.forward(&ids, &[]).unwrap();
        let gen = m.generate(&ids, 1, &[]).unwrap();
        assert_eq!(gen.new_ids[0] as usize, argmax(fwd.logits.row(4)));
        assert_eq!(gen.first_logits, fwd.logits.row(4));
    }

    #[test]
    fn incremental_decode_matches_full_forward() {
        // Generating k tokens step by step must equal re-running a full
        // forward over the extended sequence each time.
        let m = TransformerModel::init(tiny_config(), 41).unwrap();
        let ids = vec![5u32, 10, 15];
        let gen = m.generate(&ids, 4, &[]).unwrap();
        let mut seq = ids.clone();
        for step in 0..4 {
            let fwd = m.forward(&seq, &[]).unwrap();
            let want = argmax(fwd.logits.row(seq.len() - 1)) as u32;
            assert_eq!(gen.new_ids[step], want, "step {step}");
            seq.push(want);
        }
    }

    #[test]
    fn generate_is_deterministic_and_bounded() {
        let m = TransformerModel::init(tiny_config(), 43).unwrap();
        let a = m.generate(&[1, 2, 3], 5, &[]).unwrap();
        let b = m.generate(&[1, 2, 3], 5, &[]).unwrap();
        assert_eq!(a.new_ids, b.new_ids);
        assert_eq!(a.new_ids.len(), 5);
        // max_seq enforcement
        let long: Vec<u32> = (0..60).map(|i| (i % 7) as u32).collect();
        assert!(m.generate(&long, 10, &[]).is_err());
    }

    #[test]
    fn training_graph_logits_match_inference_forward() {
        let m = TransformerModel::init(tiny_config(), 47).unwrap();
        let ids = [2u32, 4, 6, 8, 10];
        let mut g = Graph::new();
        let params = m.register_params(&mut g);
        let loss = m.build_loss(&mut g, &params, &ids).unwrap();
        assert!(g.value(loss).is_scalar());
        // The graph's logits node was created right before the loss node.
        // Compare against the inference path on the input prefix.
        let fwd = m.forward(&ids[..4], &[]).unwrap();
        let loss_direct = tensor::cross_entropy(&fwd.logits, &ids[1..]).unwrap();
        assert_eq!(g.value(loss).data()[0], loss_direct);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = TransformerModel::init(tiny_config(), 53).unwrap();
        m.save(&path).unwrap();
        let loaded = TransformerModel::load(&path).unwrap();
        assert_eq!(loaded.config, m.config);
        for (a, b) in m.weights.tensors.iter().zip(&loaded.weights.tensors) {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let ids = [1u32, 2, 3];
        assert_eq!(
            m.forward(&ids, &[]).unwrap().logits.data(),
            loaded.forward(&ids, &[]).unwrap().logits.data()
        );
    }

    #[test]
    fn checkpoint_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = TransformerModel::init(tiny_config(), 59).unwrap();
        m.save(&path).unwrap();
        let good = std::fs::read(&path).unwrap();

        // bad magic
        let mut bad = good.clone();
        bad[0] = b'x';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(TransformerModel::load(&path), Err(Error::Format(_))));

        // flipped payload byte -> hash mismatch
        let mut bad = good.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0xff;
        std::fs::write(&path, &bad).unwrap();
        let err = TransformerModel::load(&path).err().unwrap().to_string();
        assert!(err.contains("hash mismatch"), "{err}");

        // edited config line -> hash mismatch
        let text_end = good.iter().position(|&b| b == b'\n').unwrap();
        let mut bad = good.clone();
        // change "n_layers=2" to "n_layers=3" in the second line
        let idx = find_subslice(&bad, b"n_layers=2").unwrap();
        let _ = text_end;
        bad[idx + 9] = b'3';
        std::fs::write(&path, &bad).unwrap();
        let err = TransformerModel::load(&path).err().unwrap().to_string();
        assert!(err.contains("hash mismatch"), "{err}");

        // truncation
        std::fs::write(&path, &good[..good.len() - 10]).unwrap();
        assert!(matches!(TransformerModel::load(&path), Err(Error::Format(_))));
    }

    fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
        hay.windows(needle.len()).position(|w| w == needle)
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = TransformerModel::init(tiny_config(), 99).unwrap();
        let b = TransformerModel::init(tiny_config(), 99).unwrap();
        let c = TransformerModel::init(tiny_config(), 100).unwrap();
        assert_eq!(a.weights.tensors[0].data(), b.weights.tensors[0].data());
        assert_ne!(a.weights.tensors[0].data(), c.weights.tensors[0].data());
    }
}
