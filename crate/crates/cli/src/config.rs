//! Plain-text experiment configuration.
//!
//! The format is a human-diffable nested key-value file: `key = value`
//! lines grouped under `[section]` headers, `#` comments allowed. Every
//! tunable the pipeline reads lives here; command-line overrides address
//! values by their dotted path (`train.facts.epochs=400`). A run directory
//! is named by the configuration's content hash plus the seed, so identical
//! settings always resolve to the same artifacts.

use attnmem::error::{Error, Result};
use attnmem::interventions::SwapTarget;
use attnmem::model::ModelConfig;
use attnmem::probe::CoefSource;
use attnmem::trainer::TrainRecipe;
use attnmem::util::fnv1a64;

/// Model dimensions (vocabulary size comes from the fitted tokenizer).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub max_seq: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerSection {
    pub target_vocab: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BooksSection {
    pub n_books: usize,
    pub keywords_per_book: usize,
    pub n_sentences: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowsSection {
    pub input_len: usize,
    pub label_len: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactsSection {
    pub n_subjects: usize,
    pub n_templates: usize,
}

/// Optimizer settings shared by both training tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f32,
    pub lr_final: f32,
    pub warmup_steps: usize,
    pub clip: f32,
}

/// Per-task schedule: epoch budget and the early-stop rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSection {
    pub epochs: usize,
    pub eval_every: usize,
    pub memorize_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp1Section {
    pub targets: Vec<SwapTarget>,
    pub n_new_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Section {
    pub coef_source: CoefSource,
    /// Neurons scoped for keyword scoring (top of the MRR ranking).
    pub neuron_budget: usize,
    /// (layer, group) heads zeroed by the selected-heads perturbation.
    pub head_budget: usize,
    /// Extracted keyword list length (and random-control exclusion basis).
    pub keyword_budget: usize,
    /// Skip group 0 of every layer when selecting perturbation heads.
    pub exclude_first_head: bool,
    /// Verbatim-window fraction a book needs to enter the experiment.
    pub min_verbatim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutSection {
    /// Parent of all run directories; excluded from the config hash so the
    /// same experiment resolves to the same run name anywhere on disk.
    pub dir: String,
    pub facts_checkpoint: String,
    pub books_checkpoint: String,
}

/// Every tunable of the pipeline. A run is reproducible from this plus
/// nothing else: all internal seeds derive from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub tokenizer: TokenizerSection,
    pub books: BooksSection,
    pub windows: WindowsSection,
    pub facts: FactsSection,
    pub train: TrainSection,
    pub train_facts: TaskSection,
    pub train_books: TaskSection,
    pub exp1: Exp1Section,
    pub exp2: Exp2Section,
    pub out: OutSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            model: ModelSection {
                n_layers: 2,
                n_heads: 4,
                n_kv_heads: 2,
                d_model: 64,
                d_head: 16,
                d_ff: 256,
                max_seq: 160,
            },
            tokenizer: TokenizerSection { target_vocab: 512 },
            books: BooksSection {
                n_books: 3,
                keywords_per_book: 20,
                n_sentences: 48,
            },
            windows: WindowsSection {
                input_len: 96,
                label_len: 24,
                step: 16,
            },
            facts: FactsSection {
                n_subjects: 8,
                n_templates: 8,
            },
            train: TrainSection {
                batch_size: 8,
                lr: 1.5e-3,
                lr_final: 2e-4,
                warmup_steps: 100,
                clip: 1.0,
            },
            train_facts: TaskSection {
                epochs: 400,
                eval_every: 10,
                memorize_threshold: 1.0,
            },
            train_books: TaskSection {
                epochs: 300,
                eval_every: 10,
                memorize_threshold: 0.95,
            },
            exp1: Exp1Section {
                targets: vec![SwapTarget::K, SwapTarget::V, SwapTarget::KV],
                n_new_tokens: 6,
            },
            exp2: Exp2Section {
                coef_source: CoefSource::Contextual,
                neuron_budget: 1,
                head_budget: 2,
                exclude_first_head: true,
                keyword_budget: 20,
                min_verbatim: 0.6,
            },
            out: OutSection {
                dir: "runs".into(),
                facts_checkpoint: "model_facts.ckpt".into(),
                books_checkpoint: "model_books.ckpt".into(),
            },
        }
    }
}

/// A typed mutable view of one config value, used to drive parsing,
/// rendering, and overrides from a single key registry.
enum Slot<'a> {
    Usize(&'a mut usize),
    U64(&'a mut u64),
    F32(&'a mut f32),
    F64(&'a mut f64),
    Bool(&'a mut bool),
    Text(&'a mut String),
    Targets(&'a mut Vec<SwapTarget>),
    Source(&'a mut CoefSource),
}

impl Slot<'_> {
    fn render(&self) -> String {
        match self {
            Slot::Usize(v) => v.to_string(),
            Slot::U64(v) => v.to_string(),
            Slot::F32(v) => format!("{v}"),
            Slot::F64(v) => format!("{v}"),
            Slot::Bool(v) => v.to_string(),
            Slot::Text(v) => (*v).clone(),
            Slot::Targets(v) => v
                .iter()
                .map(|t| t.as_str())
                .collect::<Vec<_>>()
                .join(","),
            Slot::Source(v) => v.as_str().to_string(),
        }
    }

    fn assign(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Input(format!("config: invalid value {value:?} for key {key:?}"));
        match self {
            Slot::Usize(v) => **v = value.parse().map_err(|_| bad())?,
            Slot::U64(v) => **v = value.parse().map_err(|_| bad())?,
            Slot::F32(v) => **v = value.parse().map_err(|_| bad())?,
            Slot::F64(v) => **v = value.parse().map_err(|_| bad())?,
            Slot::Bool(v) => **v = value.parse().map_err(|_| bad())?,
            Slot::Text(v) => {
                if value.is_empty() {
                    return Err(bad());
                }
                **v = value.to_string();
            }
            Slot::Targets(v) => {
                let mut targets = Vec::new();
                for part in value.split(',') {
                    targets.push(SwapTarget::parse(part.trim()).map_err(|_| bad())?);
                }
                if targets.is_empty() {
                    return Err(bad());
                }
                **v = targets;
            }
            Slot::Source(v) => **v = CoefSource::parse(value).map_err(|_| bad())?,
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// The key registry: one entry per tunable, in canonical file order.
    fn slots(&mut self) -> Vec<(&'static str, Slot<'_>)> {
        vec![
            ("seed", Slot::U64(&mut self.seed)),
            ("model.n_layers", Slot::Usize(&mut self.model.n_layers)),
            ("model.n_heads", Slot::Usize(&mut self.model.n_heads)),
            ("model.n_kv_heads", Slot::Usize(&mut self.model.n_kv_heads)),
            ("model.d_model", Slot::Usize(&mut self.model.d_model)),
            ("model.d_head", Slot::Usize(&mut self.model.d_head)),
            ("model.d_ff", Slot::Usize(&mut self.model.d_ff)),
            ("model.max_seq", Slot::Usize(&mut self.model.max_seq)),
            (
                "tokenizer.target_vocab",
                Slot::Usize(&mut self.tokenizer.target_vocab),
            ),
            ("books.n_books", Slot::Usize(&mut self.books.n_books)),
            (
                "books.keywords_per_book",
                Slot::Usize(&mut self.books.keywords_per_book),
            ),
            ("books.n_sentences", Slot::Usize(&mut self.books.n_sentences)),
            ("windows.input_len", Slot::Usize(&mut self.windows.input_len)),
            ("windows.label_len", Slot::Usize(&mut self.windows.label_len)),
            ("windows.step", Slot::Usize(&mut self.windows.step)),
            ("facts.n_subjects", Slot::Usize(&mut self.facts.n_subjects)),
            ("facts.n_templates", Slot::Usize(&mut self.facts.n_templates)),
            ("train.batch_size", Slot::Usize(&mut self.train.batch_size)),
            ("train.lr", Slot::F32(&mut self.train.lr)),
            ("train.lr_final", Slot::F32(&mut self.train.lr_final)),
            ("train.warmup_steps", Slot::Usize(&mut self.train.warmup_steps)),
            ("train.clip", Slot::F32(&mut self.train.clip)),
            ("train.facts.epochs", Slot::Usize(&mut self.train_facts.epochs)),
            (
                "train.facts.eval_every",
                Slot::Usize(&mut self.train_facts.eval_every),
            ),
            (
                "train.facts.memorize_threshold",
                Slot::F64(&mut self.train_facts.memorize_threshold),
            ),
            ("train.books.epochs", Slot::Usize(&mut self.train_books.epochs)),
            (
                "train.books.eval_every",
                Slot::Usize(&mut self.train_books.eval_every),
            ),
            (
                "train.books.memorize_threshold",
                Slot::F64(&mut self.train_books.memorize_threshold),
            ),
            ("exp1.targets", Slot::Targets(&mut self.exp1.targets)),
            ("exp1.n_new_tokens", Slot::Usize(&mut self.exp1.n_new_tokens)),
            ("exp2.coef_source", Slot::Source(&mut self.exp2.coef_source)),
            ("exp2.neuron_budget", Slot::Usize(&mut self.exp2.neuron_budget)),
            ("exp2.head_budget", Slot::Usize(&mut self.exp2.head_budget)),
            ("exp2.keyword_budget", Slot::Usize(&mut self.exp2.keyword_budget)),
            (
                "exp2.exclude_first_head",
                Slot::Bool(&mut self.exp2.exclude_first_head),
            ),
            ("exp2.min_verbatim", Slot::F64(&mut self.exp2.min_verbatim)),
            ("out.dir", Slot::Text(&mut self.out.dir)),
            ("out.facts_checkpoint", Slot::Text(&mut self.out.facts_checkpoint)),
            ("out.books_checkpoint", Slot::Text(&mut self.out.books_checkpoint)),
        ]
    }

    /// All dotted keys in canonical order.
    pub fn keys() -> Vec<&'static str> {
        ExperimentConfig::default()
            .slots()
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    /// Sets one value by its dotted key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        for (k, mut slot) in self.slots() {
            if k == key {
                return slot.assign(key, value);
            }
        }
        Err(Error::Input(format!("config: unknown key {key:?}")))
    }

    /// `(dotted key, rendered value)` pairs in canonical order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut copy = self.clone();
        copy.slots()
            .into_iter()
            .map(|(k, slot)| (k, slot.render()))
            .collect()
    }

    /// Canonical file rendering; `from_text` of the result round-trips.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = String::new();
        for (key, value) in self.pairs() {
            let (sec, name) = match key.rsplit_once('.') {
                Some((s, n)) => (s.to_string(), n),
                None => (String::new(), key),
            };
            if sec != section {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{name} = {value}\n"));
        }
        out
    }

    /// Parses a config file: defaults plus whatever keys the text sets.
    pub fn from_text(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(head) = line.strip_prefix('[') {
                let name = head.strip_suffix(']').ok_or_else(|| {
                    Error::Input(format!("config line {}: unterminated section header", i + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Input(format!("config line {}: expected `key = value`", i + 1))
            })?;
            let path = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            if !seen.insert(path.clone()) {
                return Err(Error::Input(format!(
                    "config line {}: duplicate key {path:?}",
                    i + 1
                )));
            }
            cfg.set(&path, value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec.split_once('=').ok_or_else(|| {
            Error::Input(format!("override {spec:?} must look like key=value"))
        })?;
        self.set(key.trim(), value.trim())
    }

    /// Content hash over every pair except `out.dir`, so a run keeps its
    /// name no matter where its artifacts land.
    pub fn hash(&self) -> u64 {
        let lines: Vec<String> = self
            .pairs()
            .into_iter()
            .filter(|(k, _)| *k != "out.dir")
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        let chunks: Vec<&[u8]> = lines.iter().map(|l| l.as_bytes()).collect();
        fnv1a64(&chunks)
    }

    /// Run directory name: config hash plus seed.
    pub fn run_dir_name(&self) -> String {
        format!("{:016x}-seed{}", self.hash(), self.seed)
    }

    /// Model dimensions with the fitted vocabulary size filled in.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.model.n_layers,
            n_heads: self.model.n_heads,
            n_kv_heads: self.model.n_kv_heads,
            d_model: self.model.d_model,
            d_head: self.model.d_head,
            d_ff: self.model.d_ff,
            vocab_size,
            max_seq: self.model.max_seq,
        }
    }

    fn recipe(&self, task: &TaskSection, seed: u64) -> TrainRecipe {
        TrainRecipe {
            epochs: task.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            lr_final: self.train.lr_final,
            warmup_steps: self.train.warmup_steps,
            clip: self.train.clip,
            seed,
            eval_every: task.eval_every,
            memorize_threshold: task.memorize_threshold,
        }
    }

    pub fn recipe_facts(&self, seed: u64) -> TrainRecipe {
        self.recipe(&self.train_facts, seed)
    }

    pub fn recipe_books(&self, seed: u64) -> TrainRecipe {
        self.recipe(&self.train_books, seed)
    }

    /// Structural checks that do not need any data on disk.
    pub fn validate(&self) -> Result<()> {
        self.model_config(1).validate()?;
        let prompt = 1 + self.windows.input_len + self.windows.label_len;
        if prompt > self.model.max_seq {
            return Err(Error::Input(format!(
                "config: window prompt plus continuation needs {prompt} positions, \
                 model.max_seq is {}",
                self.model.max_seq
            )));
        }
        if self.exp1.targets.is_empty() {
            return Err(Error::Input("config: exp1.targets must not be empty".into()));
        }
        let unique: std::collections::BTreeSet<&str> =
            self.exp1.targets.iter().map(|t| t.as_str()).collect();
        if unique.len() != self.exp1.targets.len() {
            return Err(Error::Input("config: exp1.targets repeats a target".into()));
        }
        if self.exp1.n_new_tokens == 0 {
            return Err(Error::Input("config: exp1.n_new_tokens must be positive".into()));
        }
        for (key, v) in [
            ("exp2.neuron_budget", self.exp2.neuron_budget),
            ("exp2.head_budget", self.exp2.head_budget),
            ("exp2.keyword_budget", self.exp2.keyword_budget),
        ] {
            if v == 0 {
                return Err(Error::Input(format!("config: {key} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.exp2.min_verbatim) {
            return Err(Error::Input("config: exp2.min_verbatim must lie in [0, 1]".into()));
        }
        for (key, v) in [
            ("train.facts.memorize_threshold", self.train_facts.memorize_threshold),
            ("train.books.memorize_threshold", self.train_books.memorize_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("config: {key} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}
