//! `attnmem`: memorization experiments on small decoder-only transformers.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use attnmem_cli::config::ExperimentConfig;
use attnmem_cli::pipeline::{self, CliError, CliResult, TrainTask, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "attnmem",
    version,
    about = "Train small transformers to memorize synthetic corpora and probe \
             how their attention layers store it"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the byte-pair vocabulary on the synthetic corpus
    TokenizerFit(StageArgs),
    /// Generate books, sliding windows, the fact grid, and prompt pairs
    SynthData(StageArgs),
    /// Train the memorization checkpoint(s)
    Train {
        #[command(flatten)]
        stage: StageArgs,
        /// Which checkpoint to train
        #[arg(long, value_enum, default_value_t = TaskArg::Both)]
        task: TaskArg,
    },
    /// Swap K/V projections between factual and counterfactual prompts
    Exp1(StageArgs),
    /// Rank K neurons, extract keywords, and zero keyword keys
    Exp2(StageArgs),
    /// Merge completed runs into summary tables and plot data
    Report {
        /// Directory for the merged tables
        #[arg(long)]
        out: PathBuf,
        /// Run directories to merge
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(clap::Args)]
struct StageArgs {
    /// Config file (`[section]` + `key = value` lines); defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.lr=0.001 (any dotted key
    /// also works directly as a flag: --train.lr 0.001)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Facts,
    Books,
    Both,
}

impl From<TaskArg> for TrainTask {
    fn from(t: TaskArg) -> TrainTask {
        match t {
            TaskArg::Facts => TrainTask::Facts,
            TaskArg::Books => TrainTask::Books,
            TaskArg::Both => TrainTask::Both,
        }
    }
}

fn load_config(args: &StageArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError {
                code: EXIT_CONFIG,
                message: format!("read config {}: {e}", path.display()),
            })?;
            ExperimentConfig::from_text(&text).map_err(pipeline::core_err)?
        }
        None => ExperimentConfig::default(),
    };
    for s in &args.set {
        cfg.apply_override(s).map_err(pipeline::core_err)?;
    }
    Ok(cfg)
}

/// Lets every dotted config key act as its own flag by rewriting
/// `--books.n_books 5` / `--books.n_books=5` into `--set books.n_books=5`
/// before clap sees the arguments.
fn rewrite_dotted_flags(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            out.push(arg);
            continue;
        };
        let name = body.split('=').next().unwrap_or("");
        // dotted keys, plus the one top-level config key
        if !name.contains('.') && name != "seed" {
            out.push(arg);
            continue;
        }
        out.push("--set".to_string());
        if body.contains('=') {
            out.push(body.to_string());
        } else if let Some(value) = it.next() {
            out.push(format!("{body}={value}"));
        } else {
            // missing value: forward as-is so the override parser reports it
            out.push(body.to_string());
        }
    }
    out
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::TokenizerFit(a) => pipeline::stage_tokenizer_fit(&load_config(&a)?),
        Command::SynthData(a) => pipeline::stage_synth_data(&load_config(&a)?),
        Command::Train { stage, task } => {
            pipeline::stage_train(&load_config(&stage)?, task.into())
        }
        Command::Exp1(a) => pipeline::stage_exp1(&load_config(&a)?),
        Command::Exp2(a) => pipeline::stage_exp2(&load_config(&a)?),
        Command::Report { out, runs } => pipeline::stage_report(&out, &runs),
    }
}

fn main() -> ExitCode {
    let argv = rewrite_dotted_flags(std::env::args().collect());
    let cli = Cli::parse_from(argv);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code.clamp(1, 255) as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::rewrite_dotted_flags;

    fn rw(args: &[&str]) -> Vec<String> {
        rewrite_dotted_flags(args.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn dotted_flags_become_set_overrides() {
        assert_eq!(
            rw(&["attnmem", "train", "--train.lr", "0.001"]),
            vec!["attnmem", "train", "--set", "train.lr=0.001"]
        );
        assert_eq!(
            rw(&["attnmem", "exp1", "--exp1.targets=kv,k"]),
            vec!["attnmem", "exp1", "--set", "exp1.targets=kv,k"]
        );
    }

    #[test]
    fn plain_flags_pass_through() {
        assert_eq!(
            rw(&["attnmem", "train", "--task", "facts", "--config", "c.conf"]),
            vec!["attnmem", "train", "--task", "facts", "--config", "c.conf"]
        );
    }

    #[test]
    fn top_level_seed_flag_is_rewritten() {
        assert_eq!(
            rw(&["attnmem", "train", "--seed", "3"]),
            vec!["attnmem", "train", "--set", "seed=3"]
        );
    }

    #[test]
    fn dangling_dotted_flag_is_forwarded_for_a_clean_error() {
        assert_eq!(rw(&["attnmem", "train", "--train.lr"]), vec![
            "attnmem",
            "train",
            "--set",
            "train.lr"
        ]);
    }
}
