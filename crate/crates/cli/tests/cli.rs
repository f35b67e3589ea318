use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pewflow::topology::synthetic_topology;
use pewflow::traffic::{DatasetBundle, Split};
use pewflow_cli::ResultFile;

fn pewflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pewflow")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_topology(dir: &Path, name: &str, n: usize, links: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.json"));
    let t = synthetic_topology(name, n, links, &[1.0, 2.5, 10.0], seed).unwrap();
    fs::write(&path, t.to_json().unwrap()).unwrap();
    path
}

fn single_link(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("single.json");
    fs::write(
        &path,
        r#"{"name":"single","nodes":[{"id":0,"label":"a"},{"id":1,"label":"b"}],
            "edges":[{"id":0,"src":0,"dst":1,"weight":1.0,"capacity":5.0}]}"#,
    )
    .unwrap();
    path
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn route_reports_single_link_utilization() {
    let dir = tempfile::tempdir().unwrap();
    let topo = single_link(dir.path());
    let dm = dir.path().join("dm.json");
    fs::write(&dm, "[[0, 2], [0, 0]]").unwrap();
    let out = pewflow(&["route", "--topology", s(&topo), "--dm", s(&dm)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["mlu"], 0.4);
    assert_eq!(v["loads"], serde_json::json!([2.0]));
}

#[test]
fn exit_codes_separate_bad_input_from_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let topo = single_link(dir.path());
    let wrong_size = dir.path().join("dm3.json");
    fs::write(&wrong_size, "[[0, 1, 0], [0, 0, 0], [0, 0, 0]]").unwrap();
    assert_eq!(pewflow(&["route", "--topology", s(&topo), "--dm", s(&wrong_size)]).status.code(), Some(2));

    let negative = dir.path().join("neg.json");
    fs::write(&negative, "[[0, -1], [0, 0]]").unwrap();
    assert_eq!(pewflow(&["route", "--topology", s(&topo), "--dm", s(&negative)]).status.code(), Some(2));

    assert_eq!(pewflow(&["train", "--data", "x", "--arch", "transformer", "--out", "y"]).status.code(), Some(2));

    // node 1 has no path back to node 0
    let unroutable = dir.path().join("back.json");
    fs::write(&unroutable, "[[0, 0], [1, 0]]").unwrap();
    assert_eq!(pewflow(&["route", "--topology", s(&topo), "--dm", s(&unroutable)]).status.code(), Some(3));

    let missing = dir.path().join("missing.json");
    let out = pewflow(&["route", "--topology", s(&missing), "--dm", s(&unroutable)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn gen_data_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let topo = write_topology(dir.path(), "ring", 7, 3, 4);
    let out = dir.path().join("data");
    let args = ["gen-data", "--topology", s(&topo), "--samples", "12", "--seed", "5", "--scheme", "ecmp", "--out", s(&out)];
    assert!(pewflow(&args).status.success());
    let first = files(&out);
    fs::remove_dir_all(&out).unwrap();
    assert!(pewflow(&args).status.success());
    assert_eq!(first, files(&out));
    assert!(first.len() >= 4);

    let other = dir.path().join("other");
    let mut args = args;
    args[6] = "6";
    args[10] = s(&other);
    assert!(pewflow(&args).status.success());
    assert_ne!(first.get("train.jsonl"), files(&other).get("train.jsonl"));
}

#[test]
fn variations_split_samples_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let topo = write_topology(dir.path(), "mesh", 10, 6, 9);
    let out = dir.path().join("data");
    let status = pewflow(&[
        "gen-data", "--topology", s(&topo), "--samples", "20", "--variations", "5", "--no-screen", "--out", s(&out),
    ])
    .status;
    assert!(status.success());
    let bundle = DatasetBundle::read_dir(&out).unwrap();
    assert_eq!(bundle.variations.len(), 5);
    for split in Split::ALL {
        let mut counts = vec![0; 5];
        for sample in &bundle.split(split).samples {
            counts[sample.variation.unwrap()] += 1;
        }
        assert_eq!(counts, vec![4; 5], "{split:?}");
    }
    assert_eq!(bundle.manifest.flow_entries, 3 * 20 * 100);
}

#[test]
fn train_evaluate_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    for (i, (n, links)) in [(5, 2), (6, 2), (6, 4)].into_iter().enumerate() {
        let topo = write_topology(dir.path(), &format!("g{i}"), n, links, 30 + i as u64);
        let data = dir.path().join(format!("data{i}"));
        assert!(pewflow(&["gen-data", "--topology", s(&topo), "--samples", "16", "--out", s(&data)]).status.success());
        for arch in ["pew", "gat", "mlp"] {
            let out = pewflow(&[
                "train", "--data", s(&data), "--arch", arch, "--epochs", "2", "--seeds", "1", "--out", s(&results),
            ]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
    }
    let result: ResultFile =
        serde_json::from_slice(&fs::read(results.join("g0__ssp__pew.result.json")).unwrap()).unwrap();
    assert_eq!(result.result.configs.len(), 12);
    assert_eq!(result.manifest.train.unwrap().epochs, 2);
    assert!(results.join("g0__ssp__pew.checkpoint.json").exists());
    assert!(results.join("g0__ssp__pew.curve.csv").exists());

    assert!(pewflow(&["evaluate", "--results", s(&results)]).status.success());
    let ranks = fs::read_to_string(results.join("ranks.csv")).unwrap();
    assert_eq!(ranks.lines().count(), 4, "{ranks}");
    assert!(pewflow(&["analyze", "--results", s(&results)]).status.success());
    let corr: serde_json::Value =
        serde_json::from_slice(&fs::read(results.join("correlation_ssp.json")).unwrap()).unwrap();
    assert!(corr.is_object());
}
