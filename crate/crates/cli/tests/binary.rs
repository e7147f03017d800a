//! The `specshift` executable: flag precedence, streams and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specshift")).args(args).output().unwrap()
}

fn small(dir: &Path) -> Vec<String> {
    let out = dir.to_str().unwrap().to_string();
    ["--out", &out, "--lookback", "24", "--horizon", "12", "--backbone", "linear", "--set", "max_epochs=2", "--set", "hidden=8"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn with<'a>(cmd: &'a str, base: &'a [String], extra: &'a [&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(base.iter().map(String::as_str));
    v.extend_from_slice(extra);
    v
}

#[test]
fn train_then_eval_prints_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    let t = run(&with("train", &base, &["--method", "tifo"]));
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    let stdout = String::from_utf8(t.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.ends_with("model.ckpt")));
    assert!(stdout.lines().all(|l| Path::new(l).exists()));
    let e = run(&with("eval", &base, &[]));
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["method"], "tifo");
}

#[test]
fn named_flags_override_set_which_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.txt");
    std::fs::write(&file, "seed = 1\nlr = 0.5\nmethod = revin\n").unwrap();
    let base = small(dir.path());
    let cfg = file.to_str().unwrap();
    let o = run(&with("synth", &base, &["--config", cfg, "--set", "seed=2", "--set", "lr=0.25", "--seed", "3"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert!(text.contains("seed = 3\n") && text.contains("lr = 0.25\n") && text.contains("method = revin\n"), "{text}");
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(dir.path());
    let code = |o: Output| (o.status.code(), String::from_utf8(o.stderr).unwrap());

    let (c, err) = code(run(&with("train", &base, &["--set", "bogus=1"])));
    assert_eq!(c, Some(2));
    assert!(err.starts_with("error: ") && err.contains("bogus"));
    assert_eq!(code(run(&with("train", &base, &["--method", "magic"]))).0, Some(2));
    assert_eq!(code(run(&with("train", &base, &["--data", "/nonexistent/x.csv"]))).0, Some(3));
    assert_eq!(code(run(&with("eval", &base, &[]))).0, Some(3));

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, "not a checkpoint").unwrap();
    assert_eq!(code(run(&with("eval", &base, &["--checkpoint", garbage.to_str().unwrap()]))).0, Some(5));

    assert!(run(&with("train", &base, &[])).status.success());
    let out = dir.path().to_str().unwrap();
    let (c, err) = code(run(&["eval", "--out", out, "--lookback", "48", "--horizon", "12"]));
    assert_eq!(c, Some(5), "{err}");
}

#[test]
fn every_subcommand_is_listed() {
    let help = String::from_utf8(run(&["--help"]).stdout).unwrap();
    for cmd in ["stats", "train", "eval", "shift", "ablate", "synth"] {
        assert!(help.contains(cmd), "{cmd}");
    }
}
