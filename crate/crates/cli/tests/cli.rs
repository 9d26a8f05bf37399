use std::path::Path;
use std::process::{Command, Output};

use held_core::alignment::{apply, fit, AffineMap, SolveOptions};
use held_core::classifier_ood::{accuracy, predict, LinearHead};
use held_core::tensor_store::{DatasetManifest, Split};
use serde_json::Value;

fn held(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_held"))
        .current_dir(dir)
        .env_remove("HELD_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--out-dir",
        "d",
        "--d-a",
        "16",
        "--d-b",
        "12",
        "--latent-dim",
        "6",
        "--n-public",
        "300",
        "--n-train",
        "200",
        "--n-test",
        "150",
        "--n-ood",
        "100",
    ];
    args.extend_from_slice(extra);
    ok_json(&held(dir, &args));
}

#[test]
fn cka_on_self_paired_data_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    ok_json(&held(
        tmp.path(),
        &[
            "synth",
            "--out-dir",
            "d",
            "--d-a",
            "8",
            "--d-b",
            "8",
            "--latent-dim",
            "8",
            "--noise",
            "0",
            "--maps",
            "identity",
        ],
    ));
    let v = ok_json(&held(tmp.path(), &["cka", "--manifest", "d/manifest.json"]));
    assert!((v["cka"].as_f64().unwrap() - 1.0).abs() <= 1e-9, "{v}");
}

#[test]
fn align_then_classify_matches_plaintext_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &[]);
    ok_json(&held(
        dir,
        &[
            "align",
            "--manifest",
            "d/manifest.json",
            "--lambda",
            "1e-4",
            "--map-out",
            "out.map",
        ],
    ));
    let v = ok_json(&held(
        dir,
        &[
            "classify",
            "--manifest",
            "d/manifest.json",
            "--map",
            "out.map",
            "--head-out",
            "head",
        ],
    ));

    let m = DatasetManifest::load(dir.join("d/manifest.json")).unwrap();
    let (pt, ps) = m.load_pair(Split::Public, None).unwrap();
    let (tt, ts) = m.load_pair(Split::Test, None).unwrap();
    let (oracle, _) = fit(&ps.embeddings, &pt.embeddings, SolveOptions::with_lambda(1e-4)).unwrap();
    let saved = AffineMap::load(dir.join("out.map")).unwrap();
    assert!((&saved.w - &oracle.w).amax() <= 1e-12);
    let head = LinearHead::load(dir.join("head")).unwrap();
    let y = tt.labels.unwrap();
    let want = accuracy(&predict(&head, &apply(&oracle, &ts.embeddings).unwrap()).unwrap(), &y).unwrap();
    // serde_json's default float parser may be off by one ulp.
    assert!((v["mapped_acc"].as_f64().unwrap() - want).abs() <= 1e-12);
    let base = accuracy(&predict(&head, &tt.embeddings).unwrap(), &y).unwrap();
    assert!((v["baseline_acc"].as_f64().unwrap() - base).abs() <= 1e-12);
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = held(tmp.path(), &["cka", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = held(tmp.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validation_and_runtime_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(held(dir, &["cka"]).status.code(), Some(1));
    assert_eq!(held(dir, &["cka", "--manifest", "missing.json"]).status.code(), Some(1));
    assert_eq!(
        held(dir, &["align", "--manifest", "m.json", "--lambda", "-1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        held(dir, &["protocol-bench", "--backend", "rsa"]).status.code(),
        Some(1)
    );
    synth(dir, &[]);
    // Report destination inside a directory that does not exist.
    let out = held(
        dir,
        &["cka", "--manifest", "d/manifest.json", "--output", "no/such/dir/r.json"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_overrides_flags_and_rejects_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &[]);
    std::fs::write(
        dir.join("c.json"),
        r#"{"subcommand": "align", "manifest": "d/manifest.json", "lambda": 0.5}"#,
    )
    .unwrap();
    let v = ok_json(&held(dir, &["align", "--lambda", "1e-4", "--config", "c.json"]));
    assert_eq!(v["lambda"].as_f64().unwrap(), 0.5);

    std::fs::write(dir.join("bad.json"), r#"{"manifest": "d/manifest.json", "lamda": 0.5}"#).unwrap();
    assert_eq!(held(dir, &["align", "--config", "bad.json"]).status.code(), Some(1));
    std::fs::write(dir.join("wrong.json"), r#"{"subcommand": "cka"}"#).unwrap();
    assert_eq!(held(dir, &["align", "--config", "wrong.json"]).status.code(), Some(1));
    std::fs::write(dir.join("na.json"), r#"{"backend": "mock"}"#).unwrap();
    assert_eq!(held(dir, &["cka", "--config", "na.json"]).status.code(), Some(1));
}

#[test]
fn mock_reports_are_byte_identical_and_seeded_by_env() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let args = [
        "pipeline",
        "--synthetic",
        "--backend",
        "mock",
        "--d-a",
        "16",
        "--d-b",
        "12",
        "--latent-dim",
        "6",
        "--n-public",
        "150",
        "--n-train",
        "150",
        "--n-test",
        "100",
        "--few-shot",
        "0,64",
        "--shift-degrees",
        "30",
    ];
    let a = held(dir, &[&args[..], &["--seed", "3"]].concat());
    let b = held(dir, &[&args[..], &["--seed", "3"]].concat());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let env = Command::new(env!("CARGO_BIN_EXE_held"))
        .current_dir(dir)
        .env("HELD_SEED", "3")
        .args(args)
        .output()
        .unwrap();
    assert_eq!(env.stdout, a.stdout);
    let other = held(dir, &[&args[..], &["--seed", "4"]].concat());
    assert_ne!(other.stdout, a.stdout);
    let rows: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert_eq!(rows[1]["train_data"], "public+64");
}

#[test]
fn protocol_commands_with_mock_backend() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, &[]);
    let t = ok_json(&held(
        dir,
        &[
            "protocol-train",
            "--manifest",
            "d/manifest.json",
            "--backend",
            "mock",
            "--few-shot",
            "32",
            "--map-out",
            "p.map",
            "--transcript-out",
            "t.bin",
        ],
    ));
    assert!(t["map_rel_error"].as_f64().unwrap() <= 1e-9);
    assert_eq!(t["n_train"], 332);
    assert_eq!(t["accounting_exact"], true);
    assert_eq!(t["a_decrypt_calls"], 0);
    assert_eq!(
        std::fs::metadata(dir.join("t.bin")).unwrap().len(),
        t["wire_bytes"].as_u64().unwrap()
    );

    for variant in ["local-map", "composed"] {
        let i = ok_json(&held(
            dir,
            &[
                "protocol-infer",
                "--manifest",
                "d/manifest.json",
                "--backend",
                "mock",
                "--map",
                "p.map",
                "--variant",
                variant,
                "--limit",
                "10",
                "--transport",
                "socket",
            ],
        ));
        assert_eq!(i["agreement"].as_f64().unwrap(), 1.0);
        assert_eq!(i["n_queries"], 10);
        assert_eq!(i["privacy_clean"], true);
    }

    let out = held(
        dir,
        &[
            "protocol-bench",
            "--backend",
            "mock",
            "--sizes",
            "8x2",
            "--queries",
            "3",
            "--format",
            "csv",
        ],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("backend,transport,d_a,k,queries,setup_seconds,encrypt.median"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn tokcompat_on_small_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("a.jsonl"),
        "{\"text_id\":\"t\",\"tokens\":[[\"<s>\",0,0],[\"the\",0,3],[\" cat\",3,7]]}\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("b.jsonl"),
        "{\"text_id\":\"t\",\"tokens\":[[\"th\",0,2],[\"e\",2,3],[\" cat\",3,7]]}\n",
    )
    .unwrap();
    std::fs::write(dir.join("va.txt"), "a\nb\nc\n").unwrap();
    std::fs::write(dir.join("vb.txt"), "b\nc\nd\n").unwrap();
    let v = ok_json(&held(
        dir,
        &[
            "tokcompat",
            "--records-a",
            "a.jsonl",
            "--records-b",
            "b.jsonl",
            "--vocab-a",
            "va.txt",
            "--vocab-b",
            "vb.txt",
        ],
    ));
    assert_eq!(v["exact_match_rate"].as_f64().unwrap(), 0.5);
    assert_eq!(v["vocab_jaccard"].as_f64().unwrap(), 0.5);
    assert_eq!(v["tokens_a"], 2);
}

#[test]
fn mia_and_ood_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let v = ok_json(&held(
        dir,
        &[
            "mia",
            "--synthetic",
            "--d-a",
            "8",
            "--d-b",
            "8",
            "--latent-dim",
            "4",
            "--n-public",
            "200",
            "--n-train",
            "100",
            "--n-shadow-in",
            "20",
            "--n-shadow-out",
            "20",
            "--id-subset",
            "16",
            "--seeds",
            "1,2",
            "--features-out",
            "f.tns",
        ],
    ));
    assert_eq!(v.as_array().unwrap().len(), 2);
    let acc = v[0]["accuracy_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(dir.join("f.tns").exists());

    synth(dir, &[]);
    ok_json(&held(
        dir,
        &["align", "--manifest", "d/manifest.json", "--map-out", "m"],
    ));
    let o = ok_json(&held(dir, &["ood", "--manifest", "d/manifest.json", "--map", "m"]));
    assert!(o["auroc_baseline"].as_f64().unwrap() > 0.5);
}
