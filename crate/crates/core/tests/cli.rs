//! CLI behaviour: exit codes, config-file / environment / flag precedence,
//! and the self-describing bits of every artifact. Byte-level determinism of
//! whole output trees is covered by the acceptance suite.

use std::path::Path;
use std::process::{Command, Output};

fn xaikit(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_xaikit"));
    cmd.args(args).current_dir(dir);
    // the surrounding environment must not leak into the test runs
    for var in [
        "XAIKIT_CONFIG",
        "XAIKIT_MANIFEST",
        "XAIKIT_CHECKPOINT",
        "XAIKIT_OUT",
        "XAIKIT_SEED",
        "XAIKIT_SAMPLES",
        "XAIKIT_METHODS",
    ] {
        cmd.env_remove(var);
    }
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn xaikit")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = xaikit(dir, args, &[]);
    assert!(
        out.status.success(),
        "xaikit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 10 images per class at 64x64: enough for every subcommand, fast to train.
fn synth_tiny(dir: &Path) {
    ok(
        dir,
        &[
            "synth", "--kind", "shapes3", "--out", "data", "--seed", "3", "--train", "6",
            "--val", "2", "--test", "2",
        ],
    );
}

fn train_tiny(dir: &Path) {
    synth_tiny(dir);
    ok(
        dir,
        &[
            "train", "--manifest", "data/manifest.json", "--out", "run", "--seed", "5",
            "--epochs", "1", "--batch", "8",
        ],
    );
}

#[test]
fn missing_input_file_exits_2_and_names_the_path() {
    let t = tempfile::tempdir().unwrap();
    train_tiny(t.path());
    // the checkpoint is opened first, so a bad checkpoint path is named
    let out = xaikit(
        t.path(),
        &[
            "eval", "--manifest", "data/manifest.json", "--checkpoint", "missing/model.ckpt",
            "--out", "ev",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("missing/model.ckpt"),
        "{}",
        stderr_of(&out)
    );
    // with a good checkpoint, a bad manifest path is named
    let out = xaikit(
        t.path(),
        &[
            "eval", "--manifest", "absent/manifest.json", "--checkpoint", "run/model.ckpt",
            "--out", "ev",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("absent/manifest.json"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn missing_required_value_exits_2() {
    let t = tempfile::tempdir().unwrap();
    let out = xaikit(t.path(), &["train", "--manifest", "m.json"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--out"), "{}", stderr_of(&out));
}

#[test]
fn unknown_config_key_exits_2() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("cfg.json"), r#"{ "bogus": 1 }"#).unwrap();
    let out = xaikit(
        t.path(),
        &["train", "--config", "cfg.json", "--manifest", "m.json", "--out", "r"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("bogus"), "{}", stderr_of(&out));
}

#[test]
fn unknown_method_exits_2() {
    let t = tempfile::tempdir().unwrap();
    train_tiny(t.path());
    let out = xaikit(
        t.path(),
        &[
            "explain", "--manifest", "data/manifest.json", "--checkpoint", "run/model.ckpt",
            "--out", "ex", "--methods", "sobel",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("sobel") && err.contains("integrated-gradients"), "{err}");
}

#[test]
fn unknown_split_exits_2() {
    let t = tempfile::tempdir().unwrap();
    train_tiny(t.path());
    let out = xaikit(
        t.path(),
        &[
            "eval", "--manifest", "data/manifest.json", "--checkpoint", "run/model.ckpt",
            "--out", "ev", "--split", "holdout",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("holdout"), "{}", stderr_of(&out));
}

#[test]
fn config_file_supplies_values_and_flags_override_it() {
    let t = tempfile::tempdir().unwrap();
    train_tiny(t.path());
    std::fs::write(
        t.path().join("cfg.json"),
        r#"{ "manifest": "data/manifest.json", "checkpoint": "run/model.ckpt", "out": "evA" }"#,
    )
    .unwrap();
    // everything resolved from the config file
    ok(t.path(), &["eval", "--config", "cfg.json"]);
    assert!(t.path().join("evA/eval.json").is_file());
    // an explicit flag beats the config value
    ok(t.path(), &["eval", "--config", "cfg.json", "--out", "evB"]);
    assert!(t.path().join("evB/eval.json").is_file());
}

#[test]
fn env_overrides_config_and_flag_overrides_env() {
    let t = tempfile::tempdir().unwrap();
    synth_tiny(t.path());
    std::fs::write(
        t.path().join("cfg.json"),
        r#"{ "manifest": "data/manifest.json", "epochs": 1, "batch": 8, "seed": 1 }"#,
    )
    .unwrap();
    // reference checkpoints trained with plain flags (checkpoints carry no
    // paths, so equal seeds mean equal bytes)
    for seed in ["1", "2", "3"] {
        ok(
            t.path(),
            &[
                "train", "--manifest", "data/manifest.json", "--epochs", "1", "--batch", "8",
                "--seed", seed, "--out", &format!("ref{seed}"),
            ],
        );
    }
    let refckpt = |s: &str| std::fs::read(t.path().join(format!("ref{s}/model.ckpt"))).unwrap();

    let run = |out_dir: &str, extra: &[&str], envs: &[(&str, &str)]| {
        let mut args = vec!["train", "--config", "cfg.json", "--out", out_dir];
        args.extend_from_slice(extra);
        let out = xaikit(t.path(), &args, envs);
        assert!(out.status.success(), "{}", stderr_of(&out));
        std::fs::read(t.path().join(out_dir).join("model.ckpt")).unwrap()
    };
    // config alone -> seed 1
    assert_eq!(run("r_cfg", &[], &[]), refckpt("1"));
    // environment beats the config file -> seed 2
    assert_eq!(run("r_env", &[], &[("XAIKIT_SEED", "2")]), refckpt("2"));
    // explicit flag beats the environment -> seed 3
    assert_eq!(
        run("r_flag", &["--seed", "3"], &[("XAIKIT_SEED", "2")]),
        refckpt("3")
    );
    // sanity: the three seeds genuinely differ
    assert_ne!(refckpt("1"), refckpt("2"));
}

#[test]
fn artifacts_embed_their_run_config() {
    let t = tempfile::tempdir().unwrap();
    train_tiny(t.path());
    ok(
        t.path(),
        &[
            "eval", "--manifest", "data/manifest.json", "--checkpoint", "run/model.ckpt",
            "--out", "ev",
        ],
    );
    // every CSV opens with a run_config comment line
    for csv in ["run/train_log.csv", "ev/confusion.csv"] {
        let text = std::fs::read_to_string(t.path().join(csv)).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("# run_config: {"), "{csv}: {first}");
    }
    // JSON reports parse and carry run_config plus their headline numbers
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.path().join("ev/eval.json")).unwrap())
            .unwrap();
    assert!(eval.get("run_config").is_some());
    assert!(eval.get("top1").and_then(|v| v.as_f64()).is_some());
    assert!(eval.get("top3").and_then(|v| v.as_f64()).is_some());
    // and each output directory gets the standalone copy
    for dir in ["run", "ev"] {
        let rc: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(t.path().join(dir).join("run_config.json")).unwrap(),
        )
        .unwrap();
        assert!(rc.is_object());
    }
    // the confusion matrix is a square table over the class names
    let confusion = std::fs::read_to_string(t.path().join("ev/confusion.csv")).unwrap();
    let header = confusion.lines().nth(1).unwrap();
    assert_eq!(header, "true\\pred,disc,square,triangle");
}
