//! The experiment pipeline behind every subcommand.
//!
//! Stages communicate only through artifacts inside a run directory named by
//! the config hash plus seed: `tokenizer-fit` writes the vocabulary,
//! `synth-data` the datasets, `train` the checkpoints, `exp1`/`exp2` the
//! per-item records and summary tables, and `report` merges one or more
//! completed runs into CSV tables plus plot-ready JSON. Every stage is
//! deterministic given the config: internal seeds derive from the master
//! seed, and item fan-out (pairs, windows) reduces in index order no matter
//! how many worker threads run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attnmem::data::{
    fact_grid, fact_pairs, read_jsonl, sliding_windows, window_recall, write_jsonl, FactSet,
    SyntheticBook, WindowExample,
};
use attnmem::error::Error;
use attnmem::interventions::{
    random_control, run_baseline, run_perturb, run_swap, PerturbScope,
};
use attnmem::model::TransformerModel;
use attnmem::probe::{
    extract_top_keywords, keyword_precision, keyword_scores, memory_coefficient, orient_scope,
    rank_heads_mrr, rank_neurons_mrr, select_perturb_heads, CoefTable, NeuronId,
};
use attnmem::report::{
    exp1_csv, exp1_summaries, exp2_csv, exp2_summaries, head_mrr_csv, keyword_csv, neuron_mrr_csv,
    plot_json, Exp1Record, Exp2Record, KeywordReport, METHOD_NONE,
};
use attnmem::tokenizer::{Vocab, BOS_ID};
use attnmem::trainer::train_memorize;
use attnmem::util::fnv1a64;

use crate::config::ExperimentConfig;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// An error ready for the process boundary: message plus exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Exit-code classification of library errors: invalid parameters are
/// configuration mistakes, training blow-ups are divergence, and everything
/// else (I/O, malformed or inconsistent artifacts) is a data error.
pub fn core_err(e: Error) -> CliError {
    let code = match &e {
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Input(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    };
    CliError { code, message: e.to_string() }
}

fn config_err(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_CONFIG, message: message.into() }
}

fn data_err(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_DATA, message: message.into() }
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// Worker count from `ATTNMEM_THREADS` (default 1).
pub fn thread_count() -> usize {
    std::env::var("ATTNMEM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Applies `f` to every item, fanning out across `thread_count()` workers.
/// Results come back in item order and the first error (by item index) wins,
/// so the outcome is identical for any worker count.
pub fn try_map<T, U, F>(items: &[T], f: F) -> attnmem::error::Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> attnmem::error::Result<U> + Sync,
{
    let threads = thread_count().min(items.len()).max(1);
    if threads <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut buckets: Vec<Vec<attnmem::error::Result<U>>> = Vec::new();
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, slice)| {
                s.spawn(move || {
                    slice
                        .iter()
                        .enumerate()
                        .map(|(j, t)| f(c * chunk + j, t))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            buckets.push(h.join().expect("worker thread panicked"));
        }
    });
    let mut out = Vec::with_capacity(items.len());
    for r in buckets.into_iter().flatten() {
        out.push(r?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Run directory layout
// ---------------------------------------------------------------------------

/// Paths inside one run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn of(cfg: &ExperimentConfig) -> RunDir {
        RunDir { root: Path::new(&cfg.out.dir).join(cfg.run_dir_name()) }
    }

    pub fn config_txt(&self) -> PathBuf {
        self.root.join("config.txt")
    }
    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }
    pub fn books_jsonl(&self) -> PathBuf {
        self.root.join("books.jsonl")
    }
    pub fn book_text(&self, id: usize) -> PathBuf {
        self.root.join(format!("book{id}.txt"))
    }
    pub fn book_keywords(&self, id: usize) -> PathBuf {
        self.root.join(format!("book{id}.keywords.txt"))
    }
    pub fn facts_json(&self) -> PathBuf {
        self.root.join("facts.json")
    }
    pub fn windows_jsonl(&self) -> PathBuf {
        self.root.join("windows.jsonl")
    }
    pub fn pairs_jsonl(&self) -> PathBuf {
        self.root.join("pairs.jsonl")
    }
    pub fn facts_ckpt(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.root.join(&cfg.out.facts_checkpoint)
    }
    pub fn books_ckpt(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.root.join(&cfg.out.books_checkpoint)
    }
    pub fn train_curve(&self, task: &str) -> PathBuf {
        self.root.join(format!("train_{task}.csv"))
    }
    pub fn exp1_records(&self) -> PathBuf {
        self.root.join("exp1_records.jsonl")
    }
    pub fn exp1_summary(&self) -> PathBuf {
        self.root.join("exp1_summary.csv")
    }
    pub fn exp2_records(&self) -> PathBuf {
        self.root.join("exp2_records.jsonl")
    }
    pub fn exp2_summary(&self) -> PathBuf {
        self.root.join("exp2_summary.csv")
    }
    pub fn exp2_admission(&self) -> PathBuf {
        self.root.join("exp2_admission.csv")
    }
    pub fn coef_tables(&self) -> PathBuf {
        self.root.join("coef_tables.jsonl")
    }
    pub fn coef_csv(&self, book: usize) -> PathBuf {
        self.root.join(format!("coef_book{book}.csv"))
    }
    pub fn scores_csv(&self, book: usize) -> PathBuf {
        self.root.join(format!("keyword_scores_book{book}.csv"))
    }
    pub fn keyword_reports(&self) -> PathBuf {
        self.root.join("keyword_reports.jsonl")
    }
    pub fn keywords_csv(&self) -> PathBuf {
        self.root.join("keywords.csv")
    }
    pub fn neuron_mrr_csv(&self) -> PathBuf {
        self.root.join("neuron_mrr.csv")
    }
    pub fn head_mrr_csv(&self) -> PathBuf {
        self.root.join("head_mrr.csv")
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| data_err(format!("write {}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| data_err(format!("read {}: {e}", path.display())))
}

fn require(path: &Path, produced_by: &str) -> CliResult<()> {
    if !path.exists() {
        return Err(data_err(format!(
            "{} not found; run `attnmem {produced_by}` first",
            path.display()
        )));
    }
    Ok(())
}

/// Creates the run directory (if needed) and pins the canonical config text
/// inside it.
fn ensure_run_dir(cfg: &ExperimentConfig) -> CliResult<RunDir> {
    cfg.validate().map_err(core_err)?;
    let run = RunDir::of(cfg);
    std::fs::create_dir_all(&run.root)
        .map_err(|e| data_err(format!("create {}: {e}", run.root.display())))?;
    write_text(&run.config_txt(), &cfg.to_text())?;
    Ok(run)
}

// ---------------------------------------------------------------------------
// Deterministic seed derivation
// ---------------------------------------------------------------------------

fn derived_seed(master: u64, label: &str) -> u64 {
    fnv1a64(&[&master.to_le_bytes(), label.as_bytes()])
}

fn control_seed(master: u64, book: usize, window: usize) -> u64 {
    fnv1a64(&[
        &master.to_le_bytes(),
        b"control",
        &(book as u64).to_le_bytes(),
        &(window as u64).to_le_bytes(),
    ])
}

fn gen_books(cfg: &ExperimentConfig) -> CliResult<Vec<SyntheticBook>> {
    attnmem::data::synth_books(
        cfg.books.n_books,
        cfg.books.keywords_per_book,
        cfg.books.n_sentences,
        derived_seed(cfg.seed, "books"),
    )
    .map_err(core_err)
}

fn gen_facts(cfg: &ExperimentConfig) -> CliResult<FactSet> {
    fact_grid(
        cfg.facts.n_subjects,
        cfg.facts.n_templates,
        derived_seed(cfg.seed, "facts"),
    )
    .map_err(core_err)
}

fn load_vocab(run: &RunDir) -> CliResult<Vocab> {
    require(&run.vocab(), "tokenizer-fit")?;
    Vocab::load(&run.vocab()).map_err(core_err)
}

fn load_model(path: &Path, expect: &attnmem::model::ModelConfig) -> CliResult<TransformerModel> {
    let model = TransformerModel::load(path).map_err(core_err)?;
    if model.config != *expect {
        return Err(data_err(format!(
            "checkpoint {} was trained under different model/tokenizer settings; \
             re-run `attnmem train` with this config",
            path.display()
        )));
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Fits the byte-pair vocabulary on the full synthetic corpus.
pub fn stage_tokenizer_fit(cfg: &ExperimentConfig) -> CliResult<()> {
    let run = ensure_run_dir(cfg)?;
    let books = gen_books(cfg)?;
    let facts = gen_facts(cfg)?;
    let mut corpus: Vec<&str> = books.iter().map(|b| b.text.as_str()).collect();
    corpus.extend(facts.train_texts.iter().map(|t| t.as_str()));
    let vocab = Vocab::fit(&corpus, cfg.tokenizer.target_vocab).map_err(core_err)?;
    vocab.save(&run.vocab()).map_err(core_err)?;
    println!(
        "tokenizer-fit: {} tokens ({} merges) -> {}",
        vocab.size(),
        vocab.n_merges(),
        run.vocab().display()
    );
    Ok(())
}

/// Writes the two datasets: book windows and counterfactual fact pairs.
pub fn stage_synth_data(cfg: &ExperimentConfig) -> CliResult<()> {
    let run = ensure_run_dir(cfg)?;
    let vocab = load_vocab(&run)?;

    let books = gen_books(cfg)?;
    write_jsonl(&run.books_jsonl(), &books).map_err(core_err)?;
    let mut windows: Vec<WindowExample> = Vec::new();
    for book in &books {
        write_text(&run.book_text(book.id), &book.text)?;
        let keyword_lines = book
            .keywords
            .iter()
            .map(|k| k.word.as_str())
            .collect::<Vec<_>>()
            .join("\n")
            + "\n";
        write_text(&run.book_keywords(book.id), &keyword_lines)?;
        windows.extend(
            sliding_windows(
                &vocab,
                &book.text,
                book.id,
                cfg.windows.input_len,
                cfg.windows.label_len,
                cfg.windows.step,
            )
            .map_err(core_err)?,
        );
    }
    write_jsonl(&run.windows_jsonl(), &windows).map_err(core_err)?;

    let facts = gen_facts(cfg)?;
    let pairs = fact_pairs(&facts, &vocab).map_err(core_err)?;
    let facts_text = serde_json::to_string_pretty(&facts)
        .map_err(|e| data_err(format!("serialize fact set: {e}")))?;
    write_text(&run.facts_json(), &facts_text)?;
    write_jsonl(&run.pairs_jsonl(), &pairs).map_err(core_err)?;

    println!(
        "synth-data: {} books / {} windows, {} facts / {} pairs -> {}",
        books.len(),
        windows.len(),
        facts.facts.len(),
        pairs.len(),
        run.root.display()
    );
    Ok(())
}

/// Which memorization model(s) `train` builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTask {
    Facts,
    Books,
    Both,
}

fn bos_prefixed(vocab: &Vocab, text: &str) -> Vec<u32> {
    let mut ids = vec![BOS_ID];
    ids.extend(vocab.encode(text));
    ids
}

/// Evaluation windows for the fact grid: prompt = relation frame, label =
/// target name, so memorization eval measures verbatim fact recitation
/// through the same generation path the experiments use.
fn fact_eval_windows(facts: &FactSet, vocab: &Vocab) -> Vec<WindowExample> {
    facts
        .facts
        .iter()
        .enumerate()
        .map(|(i, f)| WindowExample {
            book_id: 0,
            window_index: i,
            input_ids: vocab.encode(&facts.prompt_text(f)),
            label_ids: vocab.encode(&format!(" {}", f.target)),
            char_start: 0,
            char_end: 0,
        })
        .collect()
}

fn train_one(
    cfg: &ExperimentConfig,
    run: &RunDir,
    vocab: &Vocab,
    task_name: &str,
    sequences: &[Vec<u32>],
    eval_windows: &[WindowExample],
    recipe: &attnmem::trainer::TrainRecipe,
    init_seed: u64,
    ckpt: &Path,
) -> CliResult<()> {
    let mut model =
        TransformerModel::init(cfg.model_config(vocab.size()), init_seed).map_err(core_err)?;
    eprintln!(
        "training {task_name} model: {} sequences, up to {} epochs",
        sequences.len(),
        recipe.epochs
    );
    let log = train_memorize(&mut model, sequences, Some((vocab, eval_windows)), recipe)
        .map_err(core_err)?;
    model.save(ckpt).map_err(core_err)?;
    write_text(&run.train_curve(task_name), &log.to_csv())?;
    let last = log.epochs.last().expect("at least one epoch");
    let memorized = log
        .epochs
        .iter()
        .rev()
        .find_map(|e| e.memorized)
        .map(|f| format!("{f:.3}"))
        .unwrap_or_else(|| "-".into());
    println!(
        "train {task_name}: {} epochs, final loss {:.4}, memorized {} -> {}",
        log.epochs.len(),
        last.loss,
        memorized,
        ckpt.display()
    );
    Ok(())
}

/// Memorization training for the fact grid and/or the books.
pub fn stage_train(cfg: &ExperimentConfig, task: TrainTask) -> CliResult<()> {
    let run = ensure_run_dir(cfg)?;
    let vocab = load_vocab(&run)?;

    if matches!(task, TrainTask::Facts | TrainTask::Both) {
        require(&run.facts_json(), "synth-data")?;
        let facts: FactSet = serde_json::from_str(&read_text(&run.facts_json())?)
            .map_err(|e| data_err(format!("parse {}: {e}", run.facts_json().display())))?;
        let sequences: Vec<Vec<u32>> = facts
            .train_texts
            .iter()
            .map(|t| bos_prefixed(&vocab, t))
            .collect();
        let eval = fact_eval_windows(&facts, &vocab);
        train_one(
            cfg,
            &run,
            &vocab,
            "facts",
            &sequences,
            &eval,
            &cfg.recipe_facts(derived_seed(cfg.seed, "train-facts")),
            derived_seed(cfg.seed, "init-facts"),
            &run.facts_ckpt(cfg),
        )?;
    }

    if matches!(task, TrainTask::Books | TrainTask::Both) {
        require(&run.windows_jsonl(), "synth-data")?;
        let windows: Vec<WindowExample> =
            read_jsonl(&run.windows_jsonl()).map_err(core_err)?;
        let sequences: Vec<Vec<u32>> = windows
            .iter()
            .map(|w| {
                let mut ids = vec![BOS_ID];
                ids.extend_from_slice(&w.input_ids);
                ids.extend_from_slice(&w.label_ids);
                ids
            })
            .collect();
        train_one(
            cfg,
            &run,
            &vocab,
            "books",
            &sequences,
            &windows,
            &cfg.recipe_books(derived_seed(cfg.seed, "train-books")),
            derived_seed(cfg.seed, "init-books"),
            &run.books_ckpt(cfg),
        )?;
    }
    Ok(())
}

/// Experiment 1: Q/K/V swapping over every counterfactual pair.
pub fn stage_exp1(cfg: &ExperimentConfig) -> CliResult<()> {
    let run = ensure_run_dir(cfg)?;
    let vocab = load_vocab(&run)?;
    require(&run.pairs_jsonl(), "synth-data")?;
    let ckpt = run.facts_ckpt(cfg);
    if !ckpt.exists() {
        return Err(data_err(format!(
            "checkpoint {} not found; run `attnmem train --task facts` first",
            ckpt.display()
        )));
    }
    let model = load_model(&ckpt, &cfg.model_config(vocab.size()))?;
    let pairs: Vec<attnmem::data::FactPair> =
        read_jsonl(&run.pairs_jsonl()).map_err(core_err)?;

    let records: Vec<Exp1Record> = try_map(&pairs, |i, pair| {
        let baseline = run_baseline(&model, &vocab, pair, cfg.exp1.n_new_tokens)?;
        let mut swaps = Vec::with_capacity(cfg.exp1.targets.len());
        for &target in &cfg.exp1.targets {
            swaps.push(run_swap(&model, &vocab, pair, target, cfg.exp1.n_new_tokens)?);
        }
        Ok(Exp1Record {
            pair_index: i,
            template: pair.template,
            fact_subject: pair.fact_subject,
            cf_subject: pair.cf_subject,
            baseline,
            swaps,
        })
    })
    .map_err(core_err)?;

    write_jsonl(&run.exp1_records(), &records).map_err(core_err)?;
    let summaries = exp1_summaries(&records).map_err(core_err)?;
    write_text(&run.exp1_summary(), &exp1_csv(&summaries))?;
    for row in &summaries {
        println!(
            "exp1 {:<8} factual {:.3}  counterfactual {:.3}  neither {:.3}  \
             dlogit {:+.3}  ppl overhead {:+.3}",
            row.target,
            row.factual_acc,
            row.counterfactual_acc,
            row.neither_frac,
            row.mean_delta_logit,
            row.mean_ppl_overhead,
        );
    }
    Ok(())
}

/// Distinct planted cue words occurring in one window's input.
fn cues_in_window(
    vocab: &Vocab,
    window: &WindowExample,
    cues: &BTreeSet<String>,
) -> attnmem::error::Result<BTreeSet<String>> {
    let text = vocab.decode(&window.input_ids)?;
    Ok(vocab
        .word_spans(&text, &window.input_ids)?
        .into_iter()
        .filter(|s| cues.contains(&s.word))
        .map(|s| s.word)
        .collect())
}

struct AdmittedBook {
    id: usize,
    windows: Vec<WindowExample>,
    planted: BTreeSet<String>,
    table: CoefTable,
}

/// Experiment 2: coefficient probing, keyword extraction, K perturbation.
pub fn stage_exp2(cfg: &ExperimentConfig) -> CliResult<()> {
    let run = ensure_run_dir(cfg)?;
    let vocab = load_vocab(&run)?;
    require(&run.books_jsonl(), "synth-data")?;
    require(&run.windows_jsonl(), "synth-data")?;
    let ckpt = run.books_ckpt(cfg);
    if !ckpt.exists() {
        return Err(data_err(format!(
            "checkpoint {} not found; run `attnmem train --task books` first",
            ckpt.display()
        )));
    }
    let model = Arc::new(load_model(&ckpt, &cfg.model_config(vocab.size()))?);
    let books: Vec<SyntheticBook> = read_jsonl(&run.books_jsonl()).map_err(core_err)?;
    let windows: Vec<WindowExample> = read_jsonl(&run.windows_jsonl()).map_err(core_err)?;

    // Verbatim filter: a book enters the experiment only with enough
    // perfectly memorized windows.
    let mut admission = String::from("book,n_windows,n_verbatim,fraction,admitted\n");
    let mut admitted: Vec<AdmittedBook> = Vec::new();
    for book in &books {
        let wins: Vec<WindowExample> = windows
            .iter()
            .filter(|w| w.book_id == book.id)
            .cloned()
            .collect();
        let recalls = try_map(&wins, |_, w| window_recall(&model, &vocab, w)).map_err(core_err)?;
        let verbatim: Vec<WindowExample> = wins
            .iter()
            .zip(&recalls)
            .filter(|(_, &r)| r == 1.0)
            .map(|(w, _)| w.clone())
            .collect();
        let frac = if wins.is_empty() {
            0.0
        } else {
            verbatim.len() as f64 / wins.len() as f64
        };
        let ok = !verbatim.is_empty() && frac >= cfg.exp2.min_verbatim;
        admission.push_str(&format!(
            "{},{},{},{:.6},{}\n",
            book.id,
            wins.len(),
            verbatim.len(),
            frac,
            ok
        ));
        if verbatim.is_empty() {
            eprintln!("warning: book {} has no verbatim windows; skipping", book.id);
            continue;
        }
        if !ok {
            eprintln!(
                "warning: book {} verbatim fraction {:.3} below exp2.min_verbatim {}; skipping",
                book.id, frac, cfg.exp2.min_verbatim
            );
            continue;
        }
        println!(
            "exp2 book {}: {}/{} verbatim windows",
            book.id,
            verbatim.len(),
            wins.len()
        );
        let table = memory_coefficient(
            &model,
            &vocab,
            &verbatim,
            &book.keyword_set(),
            cfg.exp2.coef_source,
            &format!("book{}", book.id),
        )
        .map_err(core_err)?;
        for term in &table.missing_terms {
            eprintln!(
                "warning: book {} anchored term {:?} never occurs in its verbatim windows",
                book.id, term
            );
        }
        admitted.push(AdmittedBook {
            id: book.id,
            windows: verbatim,
            planted: book.keyword_set(),
            table,
        });
    }
    write_text(&run.exp2_admission(), &admission)?;
    if admitted.is_empty() {
        return Err(data_err(
            "no book passed the verbatim filter; train the books model longer",
        ));
    }

    // Cross-dataset neuron and head rankings.
    let tables: Vec<CoefTable> = admitted.iter().map(|b| b.table.clone()).collect();
    write_jsonl(&run.coef_tables(), &tables).map_err(core_err)?;
    for b in &admitted {
        write_text(&run.coef_csv(b.id), &b.table.to_csv())?;
    }
    let neurons = rank_neurons_mrr(&tables).map_err(core_err)?;
    let heads = rank_heads_mrr(&tables).map_err(core_err)?;
    write_text(&run.neuron_mrr_csv(), &neuron_mrr_csv(&neurons))?;
    write_text(&run.head_mrr_csv(), &head_mrr_csv(&heads))?;
    let top_neurons: Vec<NeuronId> = neurons
        .iter()
        .take(cfg.exp2.neuron_budget)
        .map(|&(id, _)| id)
        .collect();
    let selected = select_perturb_heads(&heads, cfg.exp2.head_budget, cfg.exp2.exclude_first_head);
    if selected.is_empty() {
        return Err(config_err(
            "no perturbation heads left after exclusion; lower exp2.head_budget \
             or set exp2.exclude_first_head = false",
        ));
    }
    let head_list: Vec<String> = selected
        .iter()
        .map(|(l, g)| format!("L{l}H{g}"))
        .collect();
    let top = top_neurons
        .first()
        .map(|n| format!("L{}H{}d{}", n.layer, n.group, n.dim))
        .unwrap_or_else(|| "-".into());
    println!(
        "exp2 scopes: top neuron {top}, selected heads [{}]",
        head_list.join(", ")
    );

    let scopes: Vec<(&str, PerturbScope)> = vec![
        ("selected", PerturbScope::Heads(selected)),
        ("all", PerturbScope::AllHeads),
    ];

    let mut records: Vec<Exp2Record> = Vec::new();
    let mut keyword_reports: Vec<KeywordReport> = Vec::new();
    for book in &admitted {
        // Keyword extraction from the scoped neurons' K activations.
        let scope_neurons = orient_scope(&book.table, &top_neurons);
        let kw_table = keyword_scores(
            &model,
            &vocab,
            &book.windows,
            &scope_neurons,
            cfg.exp2.coef_source,
            &format!("book{}", book.id),
        )
        .map_err(core_err)?;
        write_text(&run.scores_csv(book.id), &kw_table.to_csv())?;
        let top = extract_top_keywords(&kw_table, cfg.exp2.keyword_budget).map_err(core_err)?;
        if top.short {
            eprintln!(
                "warning: book {} has fewer than {} scoreable words",
                book.id, cfg.exp2.keyword_budget
            );
        }
        let extracted: BTreeSet<String> = top.words.iter().cloned().collect();
        keyword_reports.push(KeywordReport {
            book_id: book.id,
            extracted: top.words.clone(),
            planted: book.planted.iter().cloned().collect(),
            precision: keyword_precision(&top.words, &book.planted),
            short: top.short,
        });

        // Per-window random controls, size-matched to the planted cues
        // present in each window and disjoint from every cue list.
        let mut exclude = book.planted.clone();
        exclude.extend(extracted.iter().cloned());
        let random_sets: Vec<BTreeSet<String>> = try_map(&book.windows, |_, w| {
            let present = cues_in_window(&vocab, w, &book.planted)?;
            if present.is_empty() {
                return Ok(BTreeSet::new());
            }
            let ctrl = random_control(
                &vocab,
                std::slice::from_ref(w),
                &exclude,
                present.len(),
                control_seed(cfg.seed, book.id, w.window_index),
            )?;
            Ok(ctrl.words)
        })
        .map_err(core_err)?;

        // Unperturbed reference rows, then every method x scope.
        let mut emit = |method: &str,
                        scope_name: &str,
                        scope: &PerturbScope,
                        words_for: &(dyn Fn(usize) -> BTreeSet<String> + Sync)|
         -> CliResult<()> {
            let outs = try_map(&book.windows, |j, w| {
                run_perturb(&model, &vocab, w, &words_for(j), scope)
            })
            .map_err(core_err)?;
            for (w, out) in book.windows.iter().zip(outs) {
                records.push(Exp2Record {
                    book_id: book.id,
                    method: method.into(),
                    scope: scope_name.into(),
                    window_index: w.window_index,
                    touched: out.touched,
                    zeroed_positions: out.zeroed_positions,
                    recall: out.recall,
                    ppl_label: out.ppl_label,
                    generated_ids: out.generated_ids,
                });
            }
            Ok(())
        };

        let none = BTreeSet::new();
        emit(METHOD_NONE, METHOD_NONE, &PerturbScope::AllHeads, &|_| none.clone())?;
        for (scope_name, scope) in &scopes {
            emit("extracted", scope_name, scope, &|_| extracted.clone())?;
        }
        for (scope_name, scope) in &scopes {
            emit("planted", scope_name, scope, &|_| book.planted.clone())?;
        }
        for (scope_name, scope) in &scopes {
            emit("random", scope_name, scope, &|j| random_sets[j].clone())?;
        }
    }

    write_jsonl(&run.exp2_records(), &records).map_err(core_err)?;
    write_jsonl(&run.keyword_reports(), &keyword_reports).map_err(core_err)?;
    write_text(&run.keywords_csv(), &keyword_csv(&keyword_reports))?;
    let summaries = exp2_summaries(&records).map_err(core_err)?;
    write_text(&run.exp2_summary(), &exp2_csv(&summaries))?;
    for row in summaries.iter().filter(|r| r.book == "all") {
        println!(
            "exp2 {:<10} {:<9} recall {:.3} (norm {:.3})  ppl {:.2} (norm {:.2})  touched {:.2}",
            row.method, row.scope, row.mean_recall, row.norm_recall, row.mean_ppl, row.norm_ppl,
            row.touched_frac,
        );
    }
    for kr in &keyword_reports {
        println!(
            "exp2 book {} keyword precision {:.3} ({} extracted)",
            kr.book_id,
            kr.precision,
            kr.extracted.len()
        );
    }
    Ok(())
}

/// Merges completed runs into final CSV tables and plot JSON.
pub fn stage_report(out: &Path, runs: &[PathBuf]) -> CliResult<()> {
    if runs.is_empty() {
        return Err(config_err("report needs at least one run directory"));
    }
    let mut exp1_records: Vec<Exp1Record> = Vec::new();
    let mut exp2_records: Vec<Exp2Record> = Vec::new();
    let mut tables: Vec<CoefTable> = Vec::new();
    let mut kw_reports: Vec<KeywordReport> = Vec::new();
    for dir in runs {
        let run = RunDir { root: dir.clone() };
        for (path, label) in [
            (run.exp1_records(), "exp1"),
            (run.exp2_records(), "exp2"),
            (run.coef_tables(), "exp2"),
            (run.keyword_reports(), "exp2"),
        ] {
            if !path.exists() {
                return Err(data_err(format!(
                    "{} not found; run `attnmem {label}` in that run directory first",
                    path.display()
                )));
            }
        }
        exp1_records.extend(read_jsonl::<Exp1Record>(&run.exp1_records()).map_err(core_err)?);
        exp2_records.extend(read_jsonl::<Exp2Record>(&run.exp2_records()).map_err(core_err)?);
        tables.extend(read_jsonl::<CoefTable>(&run.coef_tables()).map_err(core_err)?);
        kw_reports.extend(read_jsonl::<KeywordReport>(&run.keyword_reports()).map_err(core_err)?);
    }

    let exp1_rows = exp1_summaries(&exp1_records).map_err(core_err)?;
    let exp2_rows = exp2_summaries(&exp2_records).map_err(core_err)?;
    let neurons = rank_neurons_mrr(&tables).map_err(core_err)?;
    let heads = rank_heads_mrr(&tables).map_err(core_err)?;

    std::fs::create_dir_all(out)
        .map_err(|e| data_err(format!("create {}: {e}", out.display())))?;
    write_text(&out.join("exp1_summary.csv"), &exp1_csv(&exp1_rows))?;
    write_text(&out.join("exp2_summary.csv"), &exp2_csv(&exp2_rows))?;
    write_text(&out.join("keywords.csv"), &keyword_csv(&kw_reports))?;
    write_text(&out.join("neuron_mrr.csv"), &neuron_mrr_csv(&neurons))?;
    write_text(&out.join("head_mrr.csv"), &head_mrr_csv(&heads))?;
    write_text(&out.join("plot.json"), &plot_json(&exp1_rows, &exp2_rows, &heads))?;
    println!(
        "report: {} exp1 records, {} exp2 records, {} datasets -> {}",
        exp1_records.len(),
        exp2_records.len(),
        tables.len(),
        out.display()
    );
    Ok(())
}
