//! Aggregation of experiment outcomes into CSV tables and plot-ready JSON.
//!
//! Records are the raw per-item results the experiment pipelines append to
//! run directories; summaries are deterministic reductions of those records.
//! Every aggregate is the plain mean of per-item values in record order
//! (f64, left to right). Raw outputs are never rescaled: the single
//! higher-is-better transform (`1 − normalized recall`, for unlearning
//! views) happens here in the plot data and nowhere else.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::interventions::{BaselineOutcome, SwapOutcome};
use crate::metrics::{self, FirstWord};
use crate::probe::NeuronId;

/// Repetition-rate orders reported for every generation.
pub const REPETITION_NS: [usize; 4] = [1, 2, 3, 4];

/// Method name reserved for unperturbed reference rows.
pub const METHOD_NONE: &str = "none";

fn repetition_profile(ids: &[u32]) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (i, &n) in REPETITION_NS.iter().enumerate() {
        out[i] = metrics::repetition_rate(ids, n)?;
    }
    Ok(out)
}

fn mean_profile(profiles: &[[f64; 4]]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let col: Vec<f64> = profiles.iter().map(|p| p[i]).collect();
        *slot = metrics::mean(&col);
    }
    out
}

// ---------------------------------------------------------------------------
// Experiment 1: K/V swapping
// ---------------------------------------------------------------------------

/// Raw result for one prompt pair: the clean baseline plus one swap outcome
/// per target, in a fixed target order shared by every record of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exp1Record {
    pub pair_index: usize,
    pub template: usize,
    pub fact_subject: usize,
    pub cf_subject: usize,
    pub baseline: BaselineOutcome,
    pub swaps: Vec<SwapOutcome>,
}

/// One aggregate row of the swap experiment; `target` is `baseline` or a
/// swap target name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp1Summary {
    pub target: String,
    pub n_pairs: usize,
    pub factual_acc: f64,
    pub counterfactual_acc: f64,
    pub neither_frac: f64,
    pub mean_delta_logit: f64,
    pub mean_ppl_overhead: f64,
    pub repetition: [f64; 4],
}

fn first_word_fracs(words: &[FirstWord]) -> (f64, f64, f64) {
    let n = words.len() as f64;
    let count = |w: FirstWord| words.iter().filter(|&&x| x == w).count() as f64 / n;
    (
        count(FirstWord::Factual),
        count(FirstWord::Counterfactual),
        count(FirstWord::Neither),
    )
}

/// Reduces swap records to one row per target plus a baseline row. Every
/// record must carry the same target sequence as the first.
pub fn exp1_summaries(records: &[Exp1Record]) -> Result<Vec<Exp1Summary>> {
    if records.is_empty() {
        return Err(Error::Input("exp1_summaries: no records".into()));
    }
    let targets: Vec<_> = records[0].swaps.iter().map(|s| s.target).collect();
    for r in records {
        let got: Vec<_> = r.swaps.iter().map(|s| s.target).collect();
        if got != targets {
            return Err(Error::Format(format!(
                "exp1 pair {}: swap targets {:?} do not match the run schema {:?}",
                r.pair_index,
                got.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
                targets.iter().map(|t| t.as_str()).collect::<Vec<_>>()
            )));
        }
    }

    let mut rows = Vec::with_capacity(1 + targets.len());
    let base_words: Vec<FirstWord> = records.iter().map(|r| r.baseline.first_word).collect();
    let (f, c, n) = first_word_fracs(&base_words);
    let base_reps = records
        .iter()
        .map(|r| repetition_profile(&r.baseline.generated_ids))
        .collect::<Result<Vec<_>>>()?;
    rows.push(Exp1Summary {
        target: "baseline".into(),
        n_pairs: records.len(),
        factual_acc: f,
        counterfactual_acc: c,
        neither_frac: n,
        mean_delta_logit: 0.0,
        mean_ppl_overhead: 0.0,
        repetition: mean_profile(&base_reps),
    });

    for (i, target) in targets.iter().enumerate() {
        let outs: Vec<&SwapOutcome> = records.iter().map(|r| &r.swaps[i]).collect();
        let words: Vec<FirstWord> = outs.iter().map(|o| o.first_word).collect();
        let (f, c, n) = first_word_fracs(&words);
        let deltas: Vec<f64> = outs.iter().map(|o| o.delta_logit).collect();
        let overheads: Vec<f64> = outs.iter().map(|o| o.ppl_overhead).collect();
        let reps = outs
            .iter()
            .map(|o| repetition_profile(&o.generated_ids))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Exp1Summary {
            target: target.as_str().into(),
            n_pairs: records.len(),
            factual_acc: f,
            counterfactual_acc: c,
            neither_frac: n,
            mean_delta_logit: metrics::mean(&deltas),
            mean_ppl_overhead: metrics::mean(&overheads),
            repetition: mean_profile(&reps),
        });
    }
    Ok(rows)
}

/// CSV rendering of the swap summary table.
pub fn exp1_csv(rows: &[Exp1Summary]) -> String {
    let mut out = String::from(
        "target,n_pairs,factual_acc,counterfactual_acc,neither_frac,\
         mean_delta_logit,mean_ppl_overhead,rep_1,rep_2,rep_3,rep_4\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.target,
            r.n_pairs,
            r.factual_acc,
            r.counterfactual_acc,
            r.neither_frac,
            r.mean_delta_logit,
            r.mean_ppl_overhead,
            r.repetition[0],
            r.repetition[1],
            r.repetition[2],
            r.repetition[3],
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Experiment 2: keyword perturbation
// ---------------------------------------------------------------------------

/// Raw result for one perturbed window. `method` names the word source
/// (`none` for the unperturbed reference, otherwise e.g. `extracted`,
/// `planted`, `random`); `scope` names the zeroed key region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exp2Record {
    pub book_id: usize,
    pub method: String,
    pub scope: String,
    pub window_index: usize,
    pub touched: bool,
    pub zeroed_positions: usize,
    pub recall: f64,
    pub ppl_label: f64,
    pub generated_ids: Vec<u32>,
}

/// One aggregate row of the perturbation experiment. `book` is a book id or
/// `all` for the pooled row; normalized columns are ratios to the same
/// grouping's unperturbed (`none`) row, so `none` rows normalize to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp2Summary {
    pub book: String,
    pub method: String,
    pub scope: String,
    pub n_windows: usize,
    pub touched_frac: f64,
    pub mean_recall: f64,
    pub norm_recall: f64,
    pub mean_ppl: f64,
    pub norm_ppl: f64,
    pub repetition: [f64; 4],
}

struct GroupStats {
    n: usize,
    touched_frac: f64,
    mean_recall: f64,
    mean_ppl: f64,
    repetition: [f64; 4],
}

fn group_stats(rows: &[&Exp2Record]) -> Result<GroupStats> {
    let recalls: Vec<f64> = rows.iter().map(|r| r.recall).collect();
    let ppls: Vec<f64> = rows.iter().map(|r| r.ppl_label).collect();
    let touched: Vec<f64> = rows.iter().map(|r| if r.touched { 1.0 } else { 0.0 }).collect();
    let reps = rows
        .iter()
        .map(|r| repetition_profile(&r.generated_ids))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupStats {
        n: rows.len(),
        touched_frac: metrics::mean(&touched),
        mean_recall: metrics::mean(&recalls),
        mean_ppl: metrics::mean(&ppls),
        repetition: mean_profile(&reps),
    })
}

/// Reduces perturbation records to one row per (book, method, scope) plus
/// pooled `all`-book rows, normalized to each grouping's `none` rows.
/// Emitted order: pooled rows first, then books ascending; within a book,
/// methods and scopes ascend lexicographically with `none` first.
pub fn exp2_summaries(records: &[Exp2Record]) -> Result<Vec<Exp2Summary>> {
    if records.is_empty() {
        return Err(Error::Input("exp2_summaries: no records".into()));
    }

    type Key = (String, String);
    let mut books: BTreeMap<usize, BTreeMap<Key, Vec<&Exp2Record>>> = BTreeMap::new();
    let mut pooled: BTreeMap<Key, Vec<&Exp2Record>> = BTreeMap::new();
    for r in records {
        let key = (r.method.clone(), r.scope.clone());
        books.entry(r.book_id).or_default().entry(key.clone()).or_default().push(r);
        pooled.entry(key).or_default().push(r);
    }

    let reduce = |label: &str, groups: &BTreeMap<Key, Vec<&Exp2Record>>| -> Result<Vec<Exp2Summary>> {
        let baseline_rows: Vec<&Exp2Record> = groups
            .iter()
            .filter(|((m, _), _)| m == METHOD_NONE)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        if baseline_rows.is_empty() {
            return Err(Error::Format(format!(
                "exp2 book {label}: no unperturbed reference rows (method = {METHOD_NONE:?})"
            )));
        }
        let base = group_stats(&baseline_rows)?;
        if base.mean_recall == 0.0 {
            return Err(Error::Input(format!(
                "exp2 book {label}: unperturbed recall is zero; cannot normalize"
            )));
        }
        let mut keys: Vec<&Key> = groups.keys().collect();
        keys.sort_by_key(|(m, s)| (m != METHOD_NONE, m.clone(), s.clone()));
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            let stats = group_stats(&groups[key])?;
            out.push(Exp2Summary {
                book: label.to_string(),
                method: key.0.clone(),
                scope: key.1.clone(),
                n_windows: stats.n,
                touched_frac: stats.touched_frac,
                mean_recall: stats.mean_recall,
                norm_recall: stats.mean_recall / base.mean_recall,
                mean_ppl: stats.mean_ppl,
                norm_ppl: stats.mean_ppl / base.mean_ppl,
                repetition: stats.repetition,
            });
        }
        Ok(out)
    };

    let mut rows = reduce("all", &pooled)?;
    for (book_id, groups) in &books {
        rows.extend(reduce(&book_id.to_string(), groups)?);
    }
    Ok(rows)
}

/// CSV rendering of the perturbation summary table.
pub fn exp2_csv(rows: &[Exp2Summary]) -> String {
    let mut out = String::from(
        "book,method,scope,n_windows,touched_frac,mean_recall,norm_recall,\
         mean_ppl,norm_ppl,rep_1,rep_2,rep_3,rep_4\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.book,
            r.method,
            r.scope,
            r.n_windows,
            r.touched_frac,
            r.mean_recall,
            r.norm_recall,
            r.mean_ppl,
            r.norm_ppl,
            r.repetition[0],
            r.repetition[1],
            r.repetition[2],
            r.repetition[3],
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Keyword extraction and neuron-ranking tables
// ---------------------------------------------------------------------------

/// Per-book keyword extraction result with precision against the planted
/// ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordReport {
    pub book_id: usize,
    pub extracted: Vec<String>,
    pub planted: Vec<String>,
    pub precision: f64,
    pub short: bool,
}

/// CSV rendering: one row per extracted word with its hit flag.
pub fn keyword_csv(reports: &[KeywordReport]) -> String {
    let mut out = String::from("book,rank,word,planted,precision\n");
    for r in reports {
        let planted: std::collections::BTreeSet<&str> =
            r.planted.iter().map(|s| s.as_str()).collect();
        for (rank, w) in r.extracted.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                r.book_id,
                rank + 1,
                w,
                planted.contains(w.as_str()),
                r.precision
            ));
        }
    }
    out
}

/// CSV rendering of a cross-dataset neuron ranking.
pub fn neuron_mrr_csv(ranked: &[(NeuronId, f64)]) -> String {
    let mut out = String::from("rank,layer,group,dim,mrr\n");
    for (i, (id, score)) in ranked.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{:.9}\n",
            i + 1,
            id.layer,
            id.group,
            id.dim,
            score
        ));
    }
    out
}

/// CSV rendering of a cross-dataset head ranking.
pub fn head_mrr_csv(ranked: &[((usize, usize), f64)]) -> String {
    let mut out = String::from("rank,layer,group,mrr\n");
    for (i, ((l, g), score)) in ranked.iter().enumerate() {
        out.push_str(&format!("{},{},{},{:.9}\n", i + 1, l, g, score));
    }
    out
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

/// Plot-ready JSON: per-metric series over exp1 targets, per-method series
/// over exp2 pooled rows, and head-ranking bar data. `memory_disruption` is
/// `1 − norm_recall` so that every exp2 series reads higher-is-better for
/// unlearning; all other values are verbatim from the summaries.
pub fn plot_json(
    exp1: &[Exp1Summary],
    exp2: &[Exp2Summary],
    heads: &[((usize, usize), f64)],
) -> String {
    let pooled: Vec<&Exp2Summary> = exp2.iter().filter(|r| r.book == "all").collect();
    let value = json!({
        "exp1": {
            "targets": exp1.iter().map(|r| r.target.clone()).collect::<Vec<_>>(),
            "metrics": {
                "factual_acc": exp1.iter().map(|r| r.factual_acc).collect::<Vec<_>>(),
                "counterfactual_acc": exp1.iter().map(|r| r.counterfactual_acc).collect::<Vec<_>>(),
                "neither_frac": exp1.iter().map(|r| r.neither_frac).collect::<Vec<_>>(),
                "mean_delta_logit": exp1.iter().map(|r| r.mean_delta_logit).collect::<Vec<_>>(),
                "mean_ppl_overhead": exp1.iter().map(|r| r.mean_ppl_overhead).collect::<Vec<_>>(),
            },
        },
        "exp2": {
            "methods": pooled.iter().map(|r| format!("{}/{}", r.method, r.scope)).collect::<Vec<_>>(),
            "metrics": {
                "memory_disruption": pooled.iter().map(|r| 1.0 - r.norm_recall).collect::<Vec<_>>(),
                "ppl_ratio": pooled.iter().map(|r| r.norm_ppl).collect::<Vec<_>>(),
                "touched_frac": pooled.iter().map(|r| r.touched_frac).collect::<Vec<_>>(),
            },
        },
        "head_mrr": {
            "labels": heads.iter().map(|((l, g), _)| format!("L{l}G{g}")).collect::<Vec<_>>(),
            "scores": heads.iter().map(|(_, s)| *s).collect::<Vec<_>>(),
        },
    });
    // serde_json maps are sorted by key, so the rendering is deterministic
    serde_json::to_string_pretty(&value).expect("static JSON structure")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interventions::SwapTarget;

    fn baseline(word: FirstWord, ids: &[u32]) -> BaselineOutcome {
        BaselineOutcome {
            generated_ids: ids.to_vec(),
            generated_text: String::new(),
            first_word: word,
            ppl_fact: 1.0,
        }
    }

    fn swap(target: SwapTarget, word: FirstWord, delta: f64, overhead: f64) -> SwapOutcome {
        SwapOutcome {
            target,
            generated_ids: vec![9, 9, 9, 9],
            generated_text: String::new(),
            first_word: word,
            delta_logit: delta,
            ppl_cf_swapped: 1.0 + overhead,
            ppl_cf_clean: 1.0,
            ppl_overhead: overhead,
        }
    }

    fn exp1_fixture() -> Vec<Exp1Record> {
        vec![
            Exp1Record {
                pair_index: 0,
                template: 0,
                fact_subject: 0,
                cf_subject: 1,
                baseline: baseline(FirstWord::Factual, &[3, 4, 5, 6]),
                swaps: vec![
                    swap(SwapTarget::K, FirstWord::Neither, -1.0, 4.0),
                    swap(SwapTarget::V, FirstWord::Counterfactual, 2.0, 1.0),
                ],
            },
            Exp1Record {
                pair_index: 1,
                template: 1,
                fact_subject: 1,
                cf_subject: 0,
                baseline: baseline(FirstWord::Factual, &[3, 4, 5, 6]),
                swaps: vec![
                    swap(SwapTarget::K, FirstWord::Factual, -3.0, 2.0),
                    swap(SwapTarget::V, FirstWord::Counterfactual, 4.0, 3.0),
                ],
            },
        ]
    }

    #[test]
    fn exp1_summary_hand_values() {
        let rows = exp1_summaries(&exp1_fixture()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].target, "baseline");
        assert_eq!(rows[0].factual_acc, 1.0);
        assert_eq!(rows[0].mean_delta_logit, 0.0);
        // all-distinct baseline generations: zero repetition at every n
        assert_eq!(rows[0].repetition, [0.0; 4]);

        let k = &rows[1];
        assert_eq!(k.target, "k");
        assert_eq!(k.factual_acc, 0.5);
        assert_eq!(k.counterfactual_acc, 0.0);
        assert_eq!(k.neither_frac, 0.5);
        assert_eq!(k.mean_delta_logit, -2.0);
        assert_eq!(k.mean_ppl_overhead, 3.0);
        // constant generation [9,9,9,9]: 1 unique unigram of 4
        assert_eq!(k.repetition[0], 0.75);

        let v = &rows[2];
        assert_eq!(v.target, "v");
        assert_eq!(v.counterfactual_acc, 1.0);
        assert_eq!(v.mean_delta_logit, 3.0);
        assert_eq!(v.mean_ppl_overhead, 2.0);
    }

    #[test]
    fn exp1_schema_mismatch_names_the_pair() {
        let mut records = exp1_fixture();
        records[1].swaps.reverse();
        let err = exp1_summaries(&records).err().unwrap().to_string();
        assert!(err.contains("pair 1"), "{err}");
        assert!(err.contains("swap targets"), "{err}");
    }

    #[test]
    fn exp1_merge_with_itself_is_identical_up_to_counts() {
        let records = exp1_fixture();
        let once = exp1_summaries(&records).unwrap();
        let mut doubled = records.clone();
        doubled.extend(records);
        let twice = exp1_summaries(&doubled).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(b.n_pairs, 2 * a.n_pairs);
            assert_eq!(a.factual_acc, b.factual_acc);
            assert_eq!(a.counterfactual_acc, b.counterfactual_acc);
            assert_eq!(a.mean_delta_logit, b.mean_delta_logit);
            assert_eq!(a.mean_ppl_overhead, b.mean_ppl_overhead);
        }
    }

    fn exp2_row(
        book_id: usize,
        method: &str,
        scope: &str,
        window_index: usize,
        recall: f64,
        ppl: f64,
    ) -> Exp2Record {
        Exp2Record {
            book_id,
            method: method.into(),
            scope: scope.into(),
            window_index,
            touched: method != METHOD_NONE,
            zeroed_positions: if method == METHOD_NONE { 0 } else { 2 },
            recall,
            ppl_label: ppl,
            generated_ids: vec![1, 2, 3],
        }
    }

    fn exp2_fixture() -> Vec<Exp2Record> {
        vec![
            exp2_row(0, METHOD_NONE, "none", 0, 1.0, 1.0),
            exp2_row(0, METHOD_NONE, "none", 1, 1.0, 1.0),
            exp2_row(0, "planted", "all-heads", 0, 0.25, 3.0),
            exp2_row(0, "planted", "all-heads", 1, 0.75, 5.0),
            exp2_row(0, "random", "all-heads", 0, 1.0, 1.5),
            exp2_row(0, "random", "all-heads", 1, 0.9, 2.5),
            exp2_row(1, METHOD_NONE, "none", 0, 1.0, 2.0),
            exp2_row(1, "planted", "all-heads", 0, 0.5, 4.0),
        ]
    }

    #[test]
    fn exp2_rows_normalize_to_the_unperturbed_reference() {
        let rows = exp2_summaries(&exp2_fixture()).unwrap();
        let find = |book: &str, method: &str| {
            rows.iter().find(|r| r.book == book && r.method == method).unwrap()
        };
        let none = find("0", METHOD_NONE);
        assert_eq!(none.norm_recall, 1.0);
        assert_eq!(none.norm_ppl, 1.0);
        assert_eq!(none.touched_frac, 0.0);

        let planted = find("0", "planted");
        assert_eq!(planted.mean_recall, 0.5);
        assert_eq!(planted.norm_recall, 0.5);
        assert_eq!(planted.mean_ppl, 4.0);
        assert_eq!(planted.norm_ppl, 4.0);
        assert_eq!(planted.touched_frac, 1.0);

        // pooled row covers both books: recalls 0.25,0.75,0.5 -> 0.5
        let pooled = find("all", "planted");
        assert_eq!(pooled.n_windows, 3);
        assert_eq!(pooled.mean_recall, 0.5);
        // pooled baseline recall is 1.0 over three rows
        assert_eq!(pooled.norm_recall, 0.5);

        // ordering: pooled rows first, `none` leading its group
        assert_eq!(rows[0].book, "all");
        assert_eq!(rows[0].method, METHOD_NONE);
    }

    #[test]
    fn exp2_missing_reference_is_a_named_schema_error() {
        let records: Vec<Exp2Record> =
            vec![exp2_row(3, "planted", "all-heads", 0, 0.5, 2.0)];
        let err = exp2_summaries(&records).err().unwrap().to_string();
        assert!(err.contains("book"), "{err}");
        assert!(err.contains("none"), "{err}");
    }

    #[test]
    fn exp2_merge_with_itself_keeps_aggregates() {
        let records = exp2_fixture();
        let once = exp2_summaries(&records).unwrap();
        let mut doubled = records.clone();
        doubled.extend(records);
        let twice = exp2_summaries(&doubled).unwrap();
        assert_eq!(once.len(), twice.len());
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(a.book, b.book);
            assert_eq!(a.method, b.method);
            assert_eq!(b.n_windows, 2 * a.n_windows);
            assert_eq!(a.mean_recall, b.mean_recall);
            assert_eq!(a.norm_recall, b.norm_recall);
            assert_eq!(a.mean_ppl, b.mean_ppl);
        }
    }

    #[test]
    fn csv_outputs_are_stable_and_complete() {
        let e1 = exp1_summaries(&exp1_fixture()).unwrap();
        let c1 = exp1_csv(&e1);
        assert_eq!(c1, exp1_csv(&e1));
        assert_eq!(c1.lines().count(), 1 + e1.len());
        assert!(c1.starts_with("target,n_pairs,"));

        let e2 = exp2_summaries(&exp2_fixture()).unwrap();
        let c2 = exp2_csv(&e2);
        assert_eq!(c2.lines().count(), 1 + e2.len());
        assert!(c2.contains("\nall,none,"));
    }

    #[test]
    fn plot_json_inverts_recall_only() {
        let e1 = exp1_summaries(&exp1_fixture()).unwrap();
        let e2 = exp2_summaries(&exp2_fixture()).unwrap();
        let heads = vec![((0usize, 1usize), 1.0), ((1, 0), 0.5)];
        let rendered = plot_json(&e1, &e2, &heads);
        assert_eq!(rendered, plot_json(&e1, &e2, &heads));
        let v: serde_json::Value = serde_json::from_str(&rendered).unwrap();
        let methods = v["exp2"]["methods"].as_array().unwrap();
        let disruption = v["exp2"]["metrics"]["memory_disruption"].as_array().unwrap();
        assert_eq!(methods.len(), disruption.len());
        // none/none row: norm_recall 1 -> disruption 0
        let none_idx = methods.iter().position(|m| m == "none/none").unwrap();
        assert_eq!(disruption[none_idx].as_f64().unwrap(), 0.0);
        // planted row: norm_recall 0.5 -> disruption 0.5
        let planted_idx = methods.iter().position(|m| m == "planted/all-heads").unwrap();
        assert_eq!(disruption[planted_idx].as_f64().unwrap(), 0.5);
        // raw summaries keep un-inverted values
        assert_eq!(v["exp1"]["metrics"]["factual_acc"][0].as_f64().unwrap(), 1.0);
        assert_eq!(v["head_mrr"]["labels"][0], "L0G1");
    }

    #[test]
    fn keyword_and_mrr_csvs_render_rows() {
        let report = KeywordReport {
            book_id: 2,
            extracted: vec!["ash".into(), "oak".into()],
            planted: vec!["ash".into()],
            precision: 0.5,
            short: false,
        };
        let csv = keyword_csv(&[report]);
        assert!(csv.contains("2,1,ash,true,0.5"));
        assert!(csv.contains("2,2,oak,false,0.5"));

        let csv = neuron_mrr_csv(&[(NeuronId { layer: 1, group: 0, dim: 7 }, 0.75)]);
        assert!(csv.contains("1,1,0,7,0.75"));
        let csv = head_mrr_csv(&[((0, 1), 1.0)]);
        assert!(csv.contains("1,0,1,1.0"));
    }
}
