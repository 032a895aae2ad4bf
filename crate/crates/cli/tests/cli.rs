use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn glisp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glisp"))
        .args(args)
        .arg("--dir")
        .arg(dir)
        .output()
        .unwrap()
}

fn report_value(dir: &Path, section: &str, metric: &str) -> String {
    let text = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    text.lines()
        .find_map(|l| {
            let mut it = l.splitn(3, ',');
            (it.next() == Some(section) && it.next() == Some(metric)).then(|| it.next().unwrap().to_string())
        })
        .unwrap_or_else(|| panic!("{section}.{metric} missing from report"))
}

#[test]
fn single_partition_reports_unit_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let graph = tmp.path().join("path.tsv");
    std::fs::write(&graph, "1\t2\n2\t3\n3\t4\n").unwrap();
    let out = glisp(&["partition", "--p", "1", "--graph", graph.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = glisp(&["report"], tmp.path());
    assert!(out.status.success());
    for m in ["rf", "vb", "eb"] {
        assert_eq!(report_value(tmp.path(), "partition", m).parse::<f64>().unwrap(), 1.0, "{m}");
    }
}

#[test]
fn stages_compose() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for args in [
        &["generate", "--n", "500", "--m", "3"][..],
        &["partition", "--p", "4"],
        &["build-store"],
        &["sample-bench", "--fanouts", "5,3", "--batch-size", "64", "--batches", "2"],
        &["reorder", "--reorder", "ps"],
        &["infer", "--chunk-size", "32", "--samplewise"],
        &["report"],
    ] {
        let out = glisp(args, dir);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(report_value(dir, "reorder", "algorithm"), "ps");
    assert_eq!(report_value(dir, "inference", "backing_reads"), "0");
    assert_eq!(report_value(dir, "sampling", "shards"), "4");
    let diff: f64 = report_value(dir, "inference", "max_rel_diff").parse().unwrap();
    assert!(diff <= 1e-5);
}

#[test]
fn missing_artifact_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = glisp(&["build-store"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("graph.tsv") && err.contains("glisp generate"), "{err}");

    let out = glisp(&["report"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"graph": {"vertices": 10}}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_glisp")).args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vertices"));

    let missing = tmp.path().join("nope.json");
    let out = Command::new(env!("CARGO_BIN_EXE_glisp")).args(["run", "--config"]).arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&cfg, format!(r#"{{"workdir": {:?}, "graph": {{"n": 50}}, "partition": {{"p": 0}}}}"#, tmp.path().join("w"))).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_glisp")).args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sample_bench_against_served_shards() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for args in [&["generate", "--n", "300", "--m", "2"][..], &["partition", "--p", "2"], &["build-store"]] {
        assert!(glisp(args, dir).status.success());
    }
    let mut servers = Vec::new();
    let mut addrs = Vec::new();
    for i in 0..2 {
        let mut child = Command::new(env!("CARGO_BIN_EXE_glisp"))
            .args(["serve", "--bind", "127.0.0.1:0", "--store"])
            .arg(dir.join(format!("store/part{i}")))
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        addrs.push(line.trim().rsplit(' ').next().unwrap().to_string());
        servers.push(child);
    }
    let shards = addrs.join(",");
    let out = glisp(&["sample-bench", "--batch-size", "32", "--batches", "2", "--shards", &shards], dir);
    let remote_sample = std::fs::read(dir.join("sample.csv")).unwrap();
    for mut s in servers {
        s.kill().unwrap();
        s.wait().unwrap();
    }
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(glisp(&["sample-bench", "--batch-size", "32", "--batches", "2"], dir).status.success());
    assert_eq!(std::fs::read(dir.join("sample.csv")).unwrap(), remote_sample);
}

#[test]
fn hash_mode_is_selectable() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(glisp(&["generate", "--n", "400", "--m", "3"], dir).status.success());
    let out = glisp(&["partition", "--p", "4", "--mode", "hash"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(glisp(&["report"], dir).status.success());
    let hash_rf: f64 = report_value(dir, "partition", "rf").parse().unwrap();
    assert!(glisp(&["partition", "--p", "4"], dir).status.success());
    assert!(glisp(&["report"], dir).status.success());
    let ada_rf: f64 = report_value(dir, "partition", "rf").parse().unwrap();
    assert!(ada_rf < hash_rf, "adadne {ada_rf} vs hash {hash_rf}");

    let out = glisp(&["partition", "--mode", "metis"], dir);
    assert_eq!(out.status.code(), Some(2));
}
