use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tanszoo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tanszoo"))
        .args(args)
        .current_dir(dir)
        .env_remove("TANSZOO_SEED")
        .output()
        .expect("binary runs")
}

fn small_zoo(dir: &Path) {
    fs::write(
        dir.join("gen.cfg"),
        "n_datasets = 4\nnetworks_per_dataset = 3\n",
    )
    .unwrap();
    let o = tanszoo(dir, &["gen", "--config", "gen.cfg", "--out", "zoo.jsonl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tanszoo(
        dir.path(),
        &["train", "--zoo", "z", "--out", "x", "--bogus"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(tanszoo(dir.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn exit_codes_by_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        tanszoo(d, &["train", "--zoo", "missing.jsonl", "--out", "i.bin"])
            .status
            .code(),
        Some(2)
    );
    small_zoo(d);
    let bad = tanszoo(
        d,
        &[
            "train",
            "--zoo",
            "zoo.jsonl",
            "--out",
            "i.bin",
            "--set",
            "margin=-1",
        ],
    );
    assert_eq!(bad.status.code(), Some(3));
    let unknown = tanszoo(
        d,
        &[
            "train",
            "--zoo",
            "zoo.jsonl",
            "--out",
            "i.bin",
            "--set",
            "nope=1",
        ],
    );
    assert_eq!(unknown.status.code(), Some(3));
    let diverge = tanszoo(
        d,
        &[
            "train",
            "--zoo",
            "zoo.jsonl",
            "--out",
            "i.bin",
            "--set",
            "batch_size=4",
            "--set",
            "lambda=1e9",
        ],
    );
    assert_eq!(diverge.status.code(), Some(4));
}

#[test]
fn pipeline_and_manifest_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_zoo(d);
    let train = [
        "train",
        "--zoo",
        "zoo.jsonl",
        "--out",
        "i.bin",
        "--set",
        "epochs=10",
        "--set",
        "batch_size=4",
    ];
    assert!(tanszoo(d, &train).status.success());
    assert!(d.join("i.bin.loss.csv").exists());
    let replay = tanszoo(
        d,
        &[
            "train",
            "--zoo",
            "zoo.jsonl",
            "--out",
            "j.bin",
            "--config",
            "i.bin.manifest.json",
        ],
    );
    assert!(replay.status.success());
    assert_eq!(
        fs::read(d.join("i.bin")).unwrap(),
        fs::read(d.join("j.bin")).unwrap()
    );

    let o = tanszoo(
        d,
        &[
            "retrieve",
            "--index",
            "i.bin",
            "--zoo",
            "zoo.jsonl",
            "--dataset",
            "d01",
            "--k",
            "3",
            "--rerank",
        ],
    );
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["candidates"].as_array().unwrap().len(), 3);

    fs::write(d.join("probe.jsonl"), "[0.1, 0.2, 0.3]\n").unwrap();
    let o = tanszoo(
        d,
        &["retrieve", "--index", "i.bin", "--probe", "probe.jsonl"],
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "feature width mismatch is a validation error"
    );

    let o = tanszoo(
        d,
        &[
            "predict",
            "--index",
            "i.bin",
            "--zoo",
            "zoo.jsonl",
            "--dataset",
            "d00",
            "--model",
            "d00-m00",
        ],
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let p = v["predicted_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let o = tanszoo(
        d,
        &["eval", "--index", "i.bin", "--zoo", "zoo.jsonl", "--json"],
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["retrieval"]["r_at_1"].as_f64().is_some());

    let o = tanszoo(
        d,
        &[
            "construct-zoo",
            "--universe",
            "zoo.jsonl",
            "--budget",
            "6",
            "--out",
            "c.jsonl",
            "--strategy",
            "random",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(d.join("c.jsonl.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3);
    assert!(tanszoo(
        d,
        &["index", "--index", "i.bin", "--zoo", "c.jsonl", "--out", "k.bin"]
    )
    .status
    .success());
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("g.cfg"),
        "n_datasets = 2\nnetworks_per_dataset = 2\nrng_seed = 5\n",
    )
    .unwrap();
    let seed_of = |out: &str| {
        let m: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(d.join(format!("{out}.manifest.json"))).unwrap(),
        )
        .unwrap();
        m["seeds"]["rng_seed"].as_u64().unwrap()
    };
    let run = |env: Option<&str>, extra: &[&str], out: &str| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_tanszoo"));
        c.current_dir(d).env_remove("TANSZOO_SEED");
        if let Some(e) = env {
            c.env("TANSZOO_SEED", e);
        }
        let mut args = vec!["gen", "--out", out];
        args.extend_from_slice(extra);
        assert!(c.args(&args).status().unwrap().success());
    };
    run(
        Some("11"),
        &["--set", "n_datasets=2", "--set", "networks_per_dataset=2"],
        "a.jsonl",
    );
    assert_eq!(seed_of("a.jsonl"), 11);
    run(Some("11"), &["--config", "g.cfg"], "b.jsonl");
    assert_eq!(seed_of("b.jsonl"), 5);
    run(Some("11"), &["--config", "g.cfg", "--seed", "9"], "c.jsonl");
    assert_eq!(seed_of("c.jsonl"), 9);
}

#[test]
fn bench_hash_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "bench",
        "--seed",
        "7",
        "--set",
        "epochs=3",
        "--set",
        "constraint_cases=5",
    ];
    let mut hashes = Vec::new();
    for out in ["b1", "b2"] {
        let mut a = args.to_vec();
        a.extend(["--out", out]);
        let o = tanszoo(d, &a);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        hashes.push(String::from_utf8(o.stdout).unwrap().trim().to_string());
        assert!(d.join(out).join("report.md").exists());
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[0].len(), 64);
}
