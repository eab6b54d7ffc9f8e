use std::path::Path;
use std::process::{Command, Output};

fn reflm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reflm")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = reflm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prepare_train_eval_generate_heatmap() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("model.ckpt");
    ok(&["prepare", "--task", "dialogue", "--synthetic", "--size", "30", "--out", s(&data)]);
    ok(&[
        "train", "--data", s(&data), "--out", s(&ckpt), "--epochs", "1", "--hidden_dim", "8", "--embed_dim", "6",
        "--attention_dim", "4", "--sentence_attention",
    ]);
    assert!(ckpt.with_extension("log").exists());

    let eval: serde_json::Value = serde_json::from_str(&ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data)])).unwrap();
    assert!(eval.is_object());

    let report = tmp.path().join("gen.json");
    let text = ok(&[
        "generate", "--checkpoint", s(&ckpt), "--data", s(&data), "--beam-width", "2", "--max-len", "10", "--limit", "2",
        "--out", s(&report),
    ]);
    assert!(text.contains("BLEU"));
    assert!(report.exists());

    let maps = tmp.path().join("maps");
    ok(&["heatmap", "--checkpoint", s(&ckpt), "--data", s(&data), "--index", "0", "--steps", "0..4", "--out-dir", s(&maps)]);
    assert_eq!(std::fs::read_dir(&maps).unwrap().count(), 1);
}

#[test]
fn bad_input_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    for args in [
        vec!["frobnicate"],
        vec!["prepare", "--task", "recipe"],
        vec!["prepare", "--task", "novels", "--synthetic", "--out", s(&missing)],
        vec!["eval", "--checkpoint", s(&missing), "--data", s(&missing)],
        vec!["train", "--data", s(&missing), "--out", s(&missing)],
    ] {
        let out = reflm(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
    }
}

#[test]
fn unknown_config_values_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok(&["prepare", "--task", "recipe", "--synthetic", "--size", "20", "--out", s(&data)]);
    let out = reflm(&["train", "--data", s(&data), "--out", s(&tmp.path().join("m")), "--mode", "psychic"]);
    assert!(!out.status.success());
}
