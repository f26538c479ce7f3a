//! End-to-end tests of the `attnmem` binary: exit codes, flag handling,
//! artifact layout, thread invariance, and report aggregation.

use attnmem_cli::config::ExperimentConfig;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_attnmem")
}

fn smoke_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf")
}

fn default_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.conf")
}

/// Runs the binary with `args` plus a `--set out.dir=<out>` override.
fn run_in(out: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args)
        .arg("--set")
        .arg(format!("out.dir={}", out.display()));
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn attnmem")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// The single run directory created under `out`.
fn run_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .expect("out dir exists")
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected exactly one run dir in {}", out.display());
    dirs.pop().unwrap()
}

/// tokenizer-fit + synth-data with the smoke config.
fn prepare_data(out: &Path, conf: &str) {
    for stage in ["tokenizer-fit", "synth-data"] {
        let o = run_in(out, &[stage, "--config", conf], &[]);
        assert_ok(&o, stage);
    }
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = smoke_conf();
    let conf = conf.to_str().unwrap();

    // Unknown key.
    let o = run_in(
        tmp.path(),
        &["tokenizer-fit", "--config", conf, "--set", "model.bogus=1"],
        &[],
    );
    assert_eq!(o.status.code(), Some(2), "stderr: {}", stderr_of(&o));
    assert!(stderr_of(&o).contains("unknown key"));

    // Structurally invalid settings (d_model must equal n_heads * d_head).
    let o = run_in(
        tmp.path(),
        &["tokenizer-fit", "--config", conf, "--set", "model.d_model=23"],
        &[],
    );
    assert_eq!(o.status.code(), Some(2), "stderr: {}", stderr_of(&o));

    // Unreadable config file.
    let o = run_in(tmp.path(), &["tokenizer-fit", "--config", "/nonexistent.conf"], &[]);
    assert_eq!(o.status.code(), Some(2), "stderr: {}", stderr_of(&o));

    // Clap usage error.
    let o = Command::new(bin()).arg("no-such-stage").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_3_and_name_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = smoke_conf();
    let conf = conf.to_str().unwrap();

    // exp1 with no artifacts at all: the vocabulary is the first thing missing.
    let o = run_in(tmp.path(), &["exp1", "--config", conf], &[]);
    assert_eq!(o.status.code(), Some(3), "stderr: {}", stderr_of(&o));
    assert!(
        stderr_of(&o).contains("run `attnmem tokenizer-fit` first"),
        "stderr: {}",
        stderr_of(&o)
    );

    // After fitting only the tokenizer, training lacks synthesized data.
    let o = run_in(tmp.path(), &["tokenizer-fit", "--config", conf], &[]);
    assert_ok(&o, "tokenizer-fit");
    let o = run_in(tmp.path(), &["train", "--task", "facts", "--config", conf], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_of(&o).contains("run `attnmem synth-data` first"));

    // With data but no checkpoint, experiments point at the train stage.
    let o = run_in(tmp.path(), &["synth-data", "--config", conf], &[]);
    assert_ok(&o, "synth-data");
    let o = run_in(tmp.path(), &["exp1", "--config", conf], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_of(&o).contains("run `attnmem train --task facts` first"));
    let o = run_in(tmp.path(), &["exp2", "--config", conf], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_of(&o).contains("run `attnmem train --task books` first"));
}

#[test]
fn divergent_training_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = smoke_conf();
    let conf = conf.to_str().unwrap();
    // The overrides are part of the run identity, so every stage of this
    // doomed run gets the same ones.
    let hot = [
        "--config",
        conf,
        "--set",
        "train.lr=1e9",
        "--set",
        "train.clip=1e12",
        "--set",
        "train.warmup_steps=0",
    ];
    for stage in ["tokenizer-fit", "synth-data"] {
        let o = run_in(tmp.path(), &[&[stage], &hot[..]].concat(), &[]);
        assert_ok(&o, stage);
    }
    let o = run_in(
        tmp.path(),
        &[&["train", "--task", "facts"], &hot[..]].concat(),
        &[],
    );
    assert_eq!(o.status.code(), Some(4), "stderr: {}", stderr_of(&o));
}

#[test]
fn dotted_flags_are_equivalent_to_set_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = smoke_conf();
    let conf = conf.to_str().unwrap();
    let o = run_in(
        tmp.path(),
        &[
            "tokenizer-fit",
            "--config",
            conf,
            "--books.n_sentences",
            "16",
            "--seed",
            "21",
        ],
        &[],
    );
    assert_ok(&o, "tokenizer-fit with dotted flags");
    let dir = run_dir(tmp.path());
    assert!(dir.file_name().unwrap().to_string_lossy().ends_with("-seed21"));
    let rendered = std::fs::read_to_string(dir.join("config.txt")).unwrap();
    let cfg = ExperimentConfig::from_text(&rendered).unwrap();
    assert_eq!(cfg.books.n_sentences, 16);
    assert_eq!(cfg.seed, 21);
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let tmp1 = tempfile::tempdir().unwrap();
    let tmp2 = tempfile::tempdir().unwrap();
    let conf = smoke_conf();
    let conf = conf.to_str().unwrap();
    for (out, threads) in [(tmp1.path(), "1"), (tmp2.path(), "4")] {
        let envs = [("ATTNMEM_THREADS", threads)];
        for stage in ["tokenizer-fit", "synth-data"] {
            let o = run_in(out, &[stage, "--config", conf], &envs);
            assert_ok(&o, stage);
        }
        let o = run_in(out, &["train", "--task", "facts", "--config", conf], &envs);
        assert_ok(&o, "train facts");
        let o = run_in(out, &["exp1", "--config", conf], &envs);
        assert_ok(&o, "exp1");
    }
    // config.txt records the out.dir, which legitimately differs between the
    // two roots; every data artifact must be byte-identical.
    let (r1, r2) = (run_dir(tmp1.path()), run_dir(tmp2.path()));
    std::fs::remove_file(r1.join("config.txt")).unwrap();
    std::fs::remove_file(r2.join("config.txt")).unwrap();
    let d1 = attnmem_testkit::dir_digest(&r1).unwrap();
    let d2 = attnmem_testkit::dir_digest(&r2).unwrap();
    assert_eq!(d1, d2, "artifacts differ between thread counts");
}

#[test]
fn shipped_configs_parse_and_cover_every_key() {
    // The default config file must list every tunable explicitly and agree
    // with the built-in defaults, so readers can treat it as the reference.
    let text = std::fs::read_to_string(default_conf()).unwrap();
    let parsed = ExperimentConfig::from_text(&text).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
    for key in ExperimentConfig::keys() {
        let name = key.rsplit_once('.').map(|(_, n)| n).unwrap_or(key);
        assert!(
            text.lines().any(|l| l.trim_start().starts_with(&format!("{name} ="))),
            "default.conf does not list {key}"
        );
    }

    // The smoke config must parse and validate too.
    let smoke = std::fs::read_to_string(smoke_conf()).unwrap();
    let smoke = ExperimentConfig::from_text(&smoke).unwrap();
    smoke.validate().unwrap();
}

#[test]
fn checkpoint_from_other_settings_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = smoke_conf();
    let conf = conf.to_str().unwrap();

    // Train under the smoke settings.
    prepare_data(tmp.path(), conf);
    let o = run_in(tmp.path(), &["train", "--task", "facts", "--config", conf], &[]);
    assert_ok(&o, "train facts");
    let trained = run_dir(tmp.path());

    // Prepare a second run with different model dimensions and smuggle the
    // first run's checkpoint into it.
    let tmp2 = tempfile::tempdir().unwrap();
    let wider = ["--config", conf, "--set", "model.d_ff=64"];
    let o = run_in(tmp2.path(), &[&["tokenizer-fit"], &wider[..]].concat(), &[]);
    assert_ok(&o, "tokenizer-fit");
    let o = run_in(tmp2.path(), &[&["synth-data"], &wider[..]].concat(), &[]);
    assert_ok(&o, "synth-data");
    let other = run_dir(tmp2.path());
    std::fs::copy(trained.join("model_facts.ckpt"), other.join("model_facts.ckpt")).unwrap();

    let o = run_in(tmp2.path(), &[&["exp1"], &wider[..]].concat(), &[]);
    assert_eq!(o.status.code(), Some(3), "stderr: {}", stderr_of(&o));
    assert!(
        stderr_of(&o).contains("different model"),
        "stderr: {}",
        stderr_of(&o)
    );
}

#[test]
fn report_is_deterministic_and_merging_a_run_with_itself_keeps_means() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = smoke_conf();
    let conf = conf.to_str().unwrap();
    prepare_data(tmp.path(), conf);
    for args in [
        vec!["train", "--config", conf],
        vec!["exp1", "--config", conf],
        vec!["exp2", "--config", conf],
    ] {
        let o = run_in(tmp.path(), &args, &[]);
        assert_ok(&o, args[0]);
    }
    let run = run_dir(tmp.path());
    let run_str = run.to_str().unwrap();

    let single = tmp.path().join("report1");
    let single2 = tmp.path().join("report1b");
    let doubled = tmp.path().join("report2");
    for (out, runs) in [
        (&single, vec![run_str]),
        (&single2, vec![run_str]),
        (&doubled, vec![run_str, run_str]),
    ] {
        let mut cmd = Command::new(bin());
        cmd.arg("report").arg("--out").arg(out);
        for r in runs {
            cmd.arg(r);
        }
        let o = cmd.output().unwrap();
        assert_ok(&o, "report");
    }

    // Identical inputs, identical bytes.
    let d1 = attnmem_testkit::dir_digest(&single).unwrap();
    let d2 = attnmem_testkit::dir_digest(&single2).unwrap();
    assert_eq!(d1, d2, "report is not deterministic");

    // Merging a run with itself doubles counts but keeps every mean equal.
    let parse = |path: PathBuf| -> Vec<Vec<String>> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|c| c.to_string()).collect())
            .collect()
    };
    let a = parse(single.join("exp1_summary.csv"));
    let b = parse(doubled.join("exp1_summary.csv"));
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra[0], rb[0], "summary rows out of order");
        let n_a: usize = ra[1].parse().unwrap();
        let n_b: usize = rb[1].parse().unwrap();
        assert_eq!(2 * n_a, n_b, "pair counts should double");
        for (ca, cb) in ra[2..].iter().zip(&rb[2..]) {
            let x: f64 = ca.parse().unwrap();
            let y: f64 = cb.parse().unwrap();
            assert!(
                (x - y).abs() < 1e-12,
                "mean column changed when merging a run with itself: {x} vs {y}"
            );
        }
    }

    // Missing artifacts in a listed run directory are a data error.
    let empty = tmp.path().join("empty-run");
    std::fs::create_dir_all(&empty).unwrap();
    let o = Command::new(bin())
        .args(["report", "--out"])
        .arg(tmp.path().join("report3"))
        .arg(&empty)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "stderr: {}", stderr_of(&o));
    assert!(stderr_of(&o).contains("not found"));
}
