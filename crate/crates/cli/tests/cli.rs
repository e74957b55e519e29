mod support;

use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};
use support::{hkg, p, small_dataset, stderr, stdout};

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn stats_emits_document_and_checks_expectations() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let g = small_dataset(&data, 1);
    let out = hkg(&["stats", "--data", p(&data)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["partition_holds"], true);
    assert_eq!(doc["stats"]["n_train"], 120);
    assert_eq!(doc["stats"]["n_entities"], g.entities.len());
    assert!(stderr(&out).contains("#HR"));

    let expect = dir.path().join("expect.toml");
    std::fs::write(&expect, format!("n_train = 120\nn_entities = {}\n", g.entities.len())).unwrap();
    let ok = hkg(&["stats", "--data", p(&data), "--expect", p(&expect)]);
    assert_eq!(ok.status.code(), Some(0));

    std::fs::write(&expect, "n_train = 121\n").unwrap();
    let bad = hkg(&["stats", "--data", p(&data), "--expect", p(&expect)]);
    assert_eq!(bad.status.code(), Some(4));
    assert!(stderr(&bad).contains("error[data]: statistics differ: n_train expected 121 got 120"));

    std::fs::write(&expect, "n_trian = 120\n").unwrap();
    let typo = hkg(&["stats", "--data", p(&data), "--expect", p(&expect)]);
    assert_eq!(typo.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_two() {
    for args in [&["frobnicate"][..], &["stats", "--bogus"], &["decompose", "--method", "star"], &[]] {
        let out = hkg(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = stderr(&out);
        assert!(err.starts_with("error[usage]: "), "{err}");
        assert!(err.contains("Usage:"), "{err}");
    }
    assert_eq!(hkg(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_and_io_errors_have_their_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data, 2);
    std::fs::write(data.join("valid.tsv"), "only\ttwo\n").unwrap();
    let out = hkg(&["stats", "--data", p(&data)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).starts_with("error[data]: "));
    let missing = hkg(&["stats", "--data", p(&dir.path().join("nowhere"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).starts_with("error[io]: "));
}

#[test]
fn decompose_then_curvature_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data, 3);
    let dec = dir.path().join("hyper");
    let out = hkg(&["decompose", "--method", "hyper", "--in", p(&data), "--out", p(&dec)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["train.tsv", "valid.tsv", "test.tsv", "provenance.tsv", "entities.tsv", "relations.tsv", "manifest.json"] {
        assert!(dec.join(f).is_file(), "{f}");
    }
    let manifest = read_json(&dec.join("manifest.json"));
    assert_eq!(manifest["subcommand"], "decompose");
    let train_bytes = std::fs::read(data.join("train.tsv")).unwrap();
    assert_eq!(manifest["inputs"][0]["sha256"], hex::encode(Sha256::digest(&train_bytes)));

    let mut csvs = Vec::new();
    for threads in ["1", "3"] {
        let csv = dir.path().join(format!("curv{threads}.csv"));
        let dist = dir.path().join(format!("dist{threads}.csv"));
        let out = hkg(&[
            "curvature", "--in", p(&dec.join("train.tsv")), "--out", p(&csv), "--distribution", p(&dist), "--threads", threads,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(dir.path().join(format!("curv{threads}.csv.manifest.json")).is_file());
        csvs.push(std::fs::read(&csv).unwrap());
        let dist = std::fs::read_to_string(&dist).unwrap();
        let ric: Vec<f64> = dist.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(ric.windows(2).all(|w| w[0] <= w[1]));
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    let footer = text.lines().last().unwrap();
    assert!(footer.starts_with("# over_squashing_proportion="));
    assert!(footer.ends_with(&format!("edges={rows}")));

    // a hyper-relational file is not a triple file
    let out = hkg(&["curvature", "--in", p(&data.join("train.tsv")), "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_eval_round_trip_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data, 4);
    let config = dir.path().join("train.toml");
    std::fs::write(&config, "seed = 5\nepochs = 4\ndim = 8\nbatch_size = 32\n").unwrap();
    let run = |out: &Path| {
        hkg(&[
            "train", "--model", "gnn", "--decompose", "direct", "--config", p(&config), "--data", p(&data), "--out", p(out),
            "--set", "layers=1", "--epochs", "3",
        ])
    };
    let a = dir.path().join("a/model.ckpt");
    let b = dir.path().join("b/model.ckpt");
    for path in [&a, &b] {
        let out = run(path);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let trace = std::fs::read_to_string(dir.path().join("a/model.ckpt.trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
    let manifest = read_json(&dir.path().join("a/model.ckpt.manifest.json"));
    assert_eq!(manifest["config"]["epochs"], 3);
    assert_eq!(manifest["config"]["layers"], 1);
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);

    let report = dir.path().join("report.json");
    let out = hkg(&["eval", "--ckpt", p(&a), "--test", p(&data.join("test.tsv")), "--out", p(&report)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc = read_json(&report);
    assert_eq!(doc["model"], "gnn");
    assert_eq!(doc["decomposition"], "direct");
    for dir_name in ["object", "subject", "average"] {
        let m = &doc[dir_name];
        let mrr = m["mrr"].as_f64().unwrap();
        assert!(mrr > 0.0 && mrr <= 1.0);
        assert!(m["hits_at"]["10"].as_f64().unwrap() >= m["hits_at"]["1"].as_f64().unwrap());
    }
    assert_eq!(doc["average"]["n_queries"], 40);

    let foreign = dir.path().join("foreign.tsv");
    std::fs::write(&foreign, "stranger\tr0\te1\n").unwrap();
    let out = hkg(&["eval", "--ckpt", p(&a), "--test", p(&foreign), "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("vocabulary hash mismatch"));
}

#[test]
fn config_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_dataset(&data, 5);
    let out_path = dir.path().join("m.ckpt");
    let cases: [&[&str]; 3] = [
        &["--model", "complex", "--set", "dim=0"],
        &["--model", "transh"],
        &["--model", "formergnn", "--decompose", "hyper"],
    ];
    for extra in cases {
        let mut args = vec!["train", "--data", p(&data), "--out", p(&out_path)];
        args.extend_from_slice(extra);
        let out = hkg(&args);
        assert_eq!(out.status.code(), Some(3), "{extra:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error[config]: "));
    }
}
