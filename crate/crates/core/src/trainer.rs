//! Memorization training: overfit a small transformer onto a fixed set of
//! token sequences until it reproduces them verbatim.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{window_recall, WindowExample};
use crate::error::{Error, Result};
use crate::model::TransformerModel;
use crate::optim::{adam_step, AdamState};
use crate::tensor::Tensor;
use crate::tokenizer::Vocab;

/// Hyperparameters of one training run. The seed fully determines the run:
/// batching order, optimizer trajectory, and therefore the final weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecipe {
    pub epochs: usize,
    /// Sequences per optimizer step (gradient accumulation, mean-reduced).
    pub batch_size: usize,
    /// Peak learning rate, reached after `warmup_steps` and cosine-decayed
    /// to `lr_final` over the remaining steps.
    pub lr: f32,
    pub lr_final: f32,
    pub warmup_steps: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f32,
    pub seed: u64,
    /// Evaluate memorization every this many epochs (0 = never) and stop
    /// early once the memorized fraction reaches `memorize_threshold`.
    pub eval_every: usize,
    pub memorize_threshold: f64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        TrainRecipe {
            epochs: 200,
            batch_size: 16,
            lr: 1e-3,
            lr_final: 1e-4,
            warmup_steps: 50,
            clip: 1.0,
            seed: 0,
            eval_every: 10,
            memorize_threshold: 1.0,
        }
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of per-sequence mean token losses over the epoch.
    pub loss: f64,
    /// Memorized fraction, when this epoch ran an evaluation.
    pub memorized: Option<f64>,
}

/// Loss curve of a completed run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainLog {
    /// CSV rendering: `epoch,loss,memorized_fraction` (fraction blank on
    /// epochs without an evaluation).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,memorized_fraction\n");
        for e in &self.epochs {
            let frac = e.memorized.map(|f| format!("{f:.6}")).unwrap_or_default();
            out.push_str(&format!("{},{:.6},{}\n", e.epoch, e.loss, frac));
        }
        out
    }
}

/// Learning rate at a 0-based optimizer step: linear warmup to `lr`, then
/// cosine decay to `lr_final`.
pub fn lr_at(recipe: &TrainRecipe, step: usize, total_steps: usize) -> f32 {
    let warm = recipe.warmup_steps.min(total_steps);
    if step < warm {
        return recipe.lr * (step + 1) as f32 / warm as f32;
    }
    let span = total_steps.saturating_sub(warm).max(1);
    let t = (step - warm) as f64 / span as f64;
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos());
    let lo = recipe.lr_final as f64;
    let hi = recipe.lr as f64;
    (lo + (hi - lo) * cos) as f32
}

fn global_norm(grads: &[Tensor]) -> f64 {
    let mut sq = 0.0f64;
    for g in grads {
        for &v in g.data() {
            sq += v as f64 * v as f64;
        }
    }
    sq.sqrt()
}

/// Trains `model` in place to memorize `sequences` (next-token loss over
/// every sequence). When `eval` is given, memorization is measured on those
/// windows every `eval_every` epochs and the run stops once the fraction
/// reaches the recipe threshold. Returns the loss curve.
pub fn train_memorize(
    model: &mut TransformerModel,
    sequences: &[Vec<u32>],
    eval: Option<(&Vocab, &[WindowExample])>,
    recipe: &TrainRecipe,
) -> Result<TrainLog> {
    if sequences.is_empty() {
        return Err(Error::Input("train_memorize: no training sequences".into()));
    }
    for (i, s) in sequences.iter().enumerate() {
        if s.len() < 2 {
            return Err(Error::Input(format!(
                "train_memorize: sequence {i} has {} tokens, need at least 2",
                s.len()
            )));
        }
        if s.len() > model.config.max_seq {
            return Err(Error::Input(format!(
                "train_memorize: sequence {i} has {} tokens, max_seq is {}",
                s.len(),
                model.config.max_seq
            )));
        }
    }
    if recipe.batch_size == 0 {
        return Err(Error::Input("train_memorize: batch_size must be positive".into()));
    }

    let shapes: Vec<Vec<usize>> = model
        .weights
        .tensors
        .iter()
        .map(|t| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut adam = AdamState::new(&shape_refs);
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let steps_per_epoch = sequences.len().div_ceil(recipe.batch_size);
    let total_steps = steps_per_epoch * recipe.epochs;
    let mut step = 0usize;
    let mut log = TrainLog::default();

    for epoch in 0..recipe.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(recipe.batch_size) {
            let mut acc: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let mut graph = Graph::new();
                let params = model.register_params(&mut graph);
                let loss = model.build_loss(&mut graph, &params, &sequences[i])?;
                batch_loss += graph.value(loss).data()[0] as f64;
                let mut grads = graph.backward(loss)?;
                for (slot, node) in acc.iter_mut().zip(&params) {
                    if let Some(g) = grads.take(*node) {
                        crate::tensor::add_assign(slot, &g)?;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for g in acc.iter_mut() {
                crate::tensor::scale_in_place(g, inv);
            }
            if recipe.clip > 0.0 {
                let norm = global_norm(&acc);
                if norm > recipe.clip as f64 {
                    let s = (recipe.clip as f64 / norm) as f32;
                    for g in acc.iter_mut() {
                        crate::tensor::scale_in_place(g, s);
                    }
                }
            }
            let lr = lr_at(recipe, step, total_steps);
            adam_step(&mut adam, &mut model.weights.tensors, &acc, lr)?;
            step += 1;
            epoch_loss += batch_loss / batch.len() as f64;
            // Healthy runs of this architecture keep every weight well below
            // O(10); a parameter at 1e6, infinite, or NaN means the optimizer
            // has blown up (all three fail the same comparison).
            let sane = |t: &Tensor| t.data().iter().all(|v| v.abs() <= 1e6);
            if !(batch_loss / batch.len() as f64).is_finite()
                || !model.weights.tensors.iter().all(|t| sane(t))
            {
                return Err(Error::Diverged {
                    epoch,
                    msg: "loss or weights left the finite training regime".into(),
                });
            }
        }
        let loss = epoch_loss / steps_per_epoch as f64;

        let mut memorized = None;
        if let Some((vocab, windows)) = eval {
            if recipe.eval_every > 0 && (epoch + 1) % recipe.eval_every == 0 {
                memorized = Some(eval_memorization(model, vocab, windows)?);
            }
        }
        log.epochs.push(EpochStats { epoch, loss, memorized });
        if let Some(frac) = memorized {
            if frac >= recipe.memorize_threshold {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok(log)
}

/// Fraction of windows the model continues verbatim (ROUGE-L recall = 1.0
/// on the greedy label-length continuation).
pub fn eval_memorization(
    model: &TransformerModel,
    vocab: &Vocab,
    windows: &[WindowExample],
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Input("eval_memorization: no windows".into()));
    }
    let mut hits = 0usize;
    for w in windows {
        if window_recall(model, vocab, w)? == 1.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / windows.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::{Vocab, BOS_ID};

    fn tiny_config(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            n_kv_heads: 2,
            d_model: 32,
            d_head: 16,
            d_ff: 64,
            vocab_size,
            max_seq: 32,
        }
    }

    fn fast_recipe(epochs: usize, seed: u64) -> TrainRecipe {
        TrainRecipe {
            epochs,
            batch_size: 4,
            lr: 3e-3,
            lr_final: 1e-3,
            warmup_steps: 10,
            clip: 1.0,
            seed,
            eval_every: 0,
            memorize_threshold: 1.0,
        }
    }

    #[test]
    fn single_sequence_memorizes_to_near_zero_loss() {
        let mut m = TransformerModel::init(tiny_config(300), 1).unwrap();
        let seq: Vec<u32> = vec![BOS_ID, 10, 20, 30, 40, 50, 60, 2];
        let log = train_memorize(&mut m, &[seq.clone()], None, &fast_recipe(300, 0)).unwrap();
        let last = log.epochs.last().unwrap().loss;
        assert!(last < 0.01, "final loss {last}");
        // greedy continuation reproduces the sequence
        let gen = m.generate(&seq[..2], seq.len() - 2, &[]).unwrap();
        assert_eq!(gen.new_ids, seq[2..]);
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let mut m = TransformerModel::init(tiny_config(280), 5).unwrap();
        let before: Vec<Vec<f32>> = m.weights.tensors.iter().map(|t| t.data().to_vec()).collect();
        let log = train_memorize(&mut m, &[vec![1, 2, 3]], None, &fast_recipe(0, 0)).unwrap();
        assert!(log.epochs.is_empty());
        for (t, b) in m.weights.tensors.iter().zip(&before) {
            assert_eq!(t.data(), &b[..]);
        }
    }

    #[test]
    fn same_seed_gives_identical_runs() {
        let seqs: Vec<Vec<u32>> = vec![
            vec![1, 4, 9, 16, 25],
            vec![1, 3, 6, 10, 15],
            vec![1, 2, 4, 8, 16],
        ];
        let mut a = TransformerModel::init(tiny_config(280), 2).unwrap();
        let mut b = TransformerModel::init(tiny_config(280), 2).unwrap();
        let la = train_memorize(&mut a, &seqs, None, &fast_recipe(8, 7)).unwrap();
        let lb = train_memorize(&mut b, &seqs, None, &fast_recipe(8, 7)).unwrap();
        assert_eq!(la, lb);
        for (x, y) in a.weights.tensors.iter().zip(&b.weights.tensors) {
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        // a different seed diverges
        let mut c = TransformerModel::init(tiny_config(280), 2).unwrap();
        train_memorize(&mut c, &seqs, None, &fast_recipe(8, 8)).unwrap();
        assert_ne!(c.weights.tensors[0].data(), a.weights.tensors[0].data());
    }

    #[test]
    fn divergence_reports_epoch() {
        let mut m = TransformerModel::init(tiny_config(280), 3).unwrap();
        let recipe = TrainRecipe {
            lr: 1e9,
            lr_final: 1e9,
            warmup_steps: 0,
            clip: 0.0,
            ..fast_recipe(20, 0)
        };
        let err = train_memorize(&mut m, &[vec![1, 2, 3, 4, 5, 6]], None, &recipe);
        match err {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn validates_inputs() {
        let mut m = TransformerModel::init(tiny_config(280), 3).unwrap();
        assert!(train_memorize(&mut m, &[], None, &fast_recipe(1, 0)).is_err());
        assert!(train_memorize(&mut m, &[vec![1]], None, &fast_recipe(1, 0)).is_err());
        let long: Vec<u32> = (0..40).map(|i| i % 7).collect();
        assert!(train_memorize(&mut m, &[long], None, &fast_recipe(1, 0)).is_err());
    }

    #[test]
    fn lr_schedule_shape() {
        let recipe = TrainRecipe {
            lr: 1.0,
            lr_final: 0.1,
            warmup_steps: 10,
            ..fast_recipe(1, 0)
        };
        assert!((lr_at(&recipe, 0, 100) - 0.1).abs() < 1e-6);
        assert!((lr_at(&recipe, 9, 100) - 1.0).abs() < 1e-6);
        // cosine midpoint of the decay span
        let mid = lr_at(&recipe, 10 + 45, 100);
        assert!((mid - 0.55).abs() < 1e-2, "{mid}");
        assert!((lr_at(&recipe, 99, 100) - 0.1).abs() < 1e-2);
        // monotone decay after warmup
        for s in 10..99 {
            assert!(lr_at(&recipe, s, 100) >= lr_at(&recipe, s + 1, 100));
        }
    }

    #[test]
    fn early_stop_on_memorization() {
        // Memorize one window of real text and stop as soon as eval says so.
        let text = "tiny rivers remember their first stone";
        let vocab = Vocab::fit(&[text], 300).unwrap();
        let ids = vocab.encode(text);
        assert!(ids.len() >= 8);
        let window = WindowExample {
            book_id: 0,
            window_index: 0,
            input_ids: ids[..ids.len() - 3].to_vec(),
            label_ids: ids[ids.len() - 3..].to_vec(),
            char_start: 0,
            char_end: text.len(),
        };
        let mut seq = vec![BOS_ID];
        seq.extend_from_slice(&ids);
        let mut m = TransformerModel::init(tiny_config(vocab.size()), 1).unwrap();
        let recipe = TrainRecipe {
            epochs: 400,
            eval_every: 20,
            memorize_threshold: 1.0,
            ..fast_recipe(400, 0)
        };
        let log = train_memorize(&mut m, &[seq], Some((&vocab, std::slice::from_ref(&window))), &recipe)
            .unwrap();
        assert!(log.stopped_early, "should reach memorization before 400 epochs");
        assert_eq!(eval_memorization(&m, &vocab, &[window]).unwrap(), 1.0);
    }
}
