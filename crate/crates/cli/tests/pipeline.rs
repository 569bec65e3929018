use std::fs;
use std::path::Path;

use dualmoco_cli::{run_command, RunConfig};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    let argv = std::iter::once("dualmoco").chain(args.iter().copied());
    run_command(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (d1, d2) = (tmp.path().join("d1"), tmp.path().join("d2"));
    assert_eq!(run(&["gen-data", "--out", p(&d1), "--seed", "7"]), 0);
    assert_eq!(run(&["gen-data", "--out", p(&d2), "--seed", "7"]), 0);
    for name in [
        "parallel.tsv",
        "sts.tsv",
        "nli.tsv",
        "mining_validation.tsv",
        "mining_test.tsv",
        "lexicon.json",
        "resolved_config.json",
    ] {
        assert_eq!(
            fs::read(d1.join(name)).unwrap(),
            fs::read(d2.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn different_seeds_give_different_data() {
    let tmp = TempDir::new().unwrap();
    let (d1, d2) = (tmp.path().join("d1"), tmp.path().join("d2"));
    assert_eq!(run(&["gen-data", "--out", p(&d1), "--seed", "1"]), 0);
    assert_eq!(run(&["gen-data", "--out", p(&d2), "--seed", "2"]), 0);
    assert_ne!(
        fs::read(d1.join("parallel.tsv")).unwrap(),
        fs::read(d2.join("parallel.tsv")).unwrap()
    );
}

#[test]
fn nonpositive_temperature_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"temperature": 0.0}}"#).unwrap();
    let out = tmp.path().join("run");
    assert_eq!(
        run(&["train", "--out", p(&out), "--data", "unused", "--config", p(&cfg)]),
        2
    );
    assert_eq!(
        run(&["train", "--out", p(&out), "--data", "unused", "--temperature", "-0.5"]),
        2
    );
    assert!(!out.join("checkpoint.dmc").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"temprature": 0.1}}"#).unwrap();
    assert_eq!(
        run(&["gen-data", "--out", p(&tmp.path().join("d")), "--config", p(&cfg)]),
        2
    );
}

#[test]
fn missing_inputs_exit_with_io_code() {
    let tmp = TempDir::new().unwrap();
    let out = p(&tmp.path().join("o")).to_string();
    let nowhere = p(&tmp.path().join("nowhere")).to_string();
    assert_eq!(run(&["train", "--out", &out, "--data", &nowhere]), 3);
    assert_eq!(
        run(&["eval-sts", "--out", &out, "--data", &nowhere, "--checkpoint", &nowhere]),
        3
    );
    assert_eq!(run(&["gen-data", "--out", &out, "--config", &nowhere]), 3);
}

#[test]
fn missing_required_path_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(&["embed", "--out", p(tmp.path()), "--data", "x"]), 2);
    assert_eq!(run(&["eval-retrieval", "--out", p(tmp.path())]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
}

#[test]
fn resolved_config_round_trips() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("first");
    assert_eq!(
        run(&["gen-data", "--out", p(&first), "--seed", "99", "--threads", "3"]),
        0
    );
    let resolved = first.join("resolved_config.json");
    let config = RunConfig::load(&resolved).unwrap();
    assert_eq!(config.data.seed, 99);
    assert_eq!(config.eval.threads, 3);

    let second = tmp.path().join("second");
    assert_eq!(run(&["gen-data", "--out", p(&second), "--config", p(&resolved)]), 0);
    assert_eq!(
        fs::read(&resolved).unwrap(),
        fs::read(second.join("resolved_config.json")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("parallel.tsv")).unwrap(),
        fs::read(second.join("parallel.tsv")).unwrap()
    );
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let data = root.join("data");
    let cfg = root.join("small.json");
    fs::write(
        &cfg,
        r#"{
            "data": {"parallel": {"train": 1024, "validation": 64, "test": 200},
                     "mining": {"n_a": 200, "n_b": 200},
                     "sts": {"n": 200}, "nli": {"n": 256}},
            "train": {"epochs": 3, "queue_capacity": 256}
        }"#,
    )
    .unwrap();
    assert_eq!(run(&["gen-data", "--out", p(&data), "--config", p(&cfg)]), 0);

    let model = root.join("model");
    assert_eq!(
        run(&[
            "train",
            "--out",
            p(&model),
            "--config",
            p(&cfg),
            "--data",
            p(&data),
            "--nli"
        ]),
        0
    );
    for name in [
        "checkpoint.dmc",
        "metrics.jsonl",
        "summary.json",
        "nli_head.json",
        "state",
    ] {
        assert!(model.join(name).exists(), "missing {name}");
    }
    let summary = read_json(&model.join("summary.json"));
    assert_eq!(summary["steps"], 3 * (1024 / 64));
    let lines = fs::read_to_string(model.join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3 * 16 + 3);

    let ckpt = model.join("checkpoint.dmc");
    let emb = root.join("emb");
    assert_eq!(
        run(&["embed", "--out", p(&emb), "--checkpoint", p(&ckpt), "--data", p(&data)]),
        0
    );
    let ret = root.join("ret");
    assert_eq!(run(&["eval-retrieval", "--out", p(&ret), "--embeddings", p(&emb)]), 0);
    let r = read_json(&ret.join("retrieval.json"));
    assert_eq!(r["count"], 200);
    for key in ["acc_forward", "acc_backward"] {
        let acc = r[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc), "{key} = {acc}");
    }
    // Retrieval from saved embeddings matches the trainer's own final-epoch evaluation.
    assert_eq!(r["acc_forward"], summary["retrieval_acc_ab"]);
    assert_eq!(r["acc_backward"], summary["retrieval_acc_ba"]);

    let mine = root.join("mine");
    assert_eq!(
        run(&[
            "mine",
            "--out",
            p(&mine),
            "--checkpoint",
            p(&ckpt),
            "--data",
            p(&data),
            "--margin",
            "ratio"
        ]),
        0
    );
    let m = read_json(&mine.join("mining.json"));
    assert_eq!(m["variant"], "ratio");
    assert!(m["pairs"].is_array());

    let sts = root.join("sts");
    assert_eq!(
        run(&[
            "eval-sts",
            "--out",
            p(&sts),
            "--checkpoint",
            p(&ckpt),
            "--data",
            p(&data)
        ]),
        0
    );
    let s = read_json(&sts.join("sts.json"));
    assert_eq!(s["count"], 200);
    assert_eq!(s["spearman"], summary["sts_spearman"]);

    let tokens = root.join("tokens.txt");
    fs::write(&tokens, "1 2 3\n\n4 5 6 7\n").unwrap();
    let dump = root.join("dump");
    assert_eq!(
        run(&[
            "dump-embeddings",
            "--out",
            p(&dump),
            "--checkpoint",
            p(&ckpt),
            "--input",
            p(&tokens),
            "--language",
            "b"
        ]),
        0
    );
    let side = read_json(&dump.join("embeddings.dmce.json"));
    assert_eq!(side["count"], 2);
}
