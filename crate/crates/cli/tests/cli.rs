use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TWO_UNIT: &str = r#"{
  "n_units": 2, "n_nodes": 1, "arrival_rate": 1.0,
  "demand_fractions": [1.0], "service_rates": [1.0, 1.0],
  "preferences": [[1, 2]]
}"#;

const TWO_UNIT_HETERO: &str = r#"{
  "n_units": 2, "n_nodes": 1, "arrival_rate": 1.0,
  "demand_fractions": [1.0], "service_rates": [2.0, 1.0],
  "preferences": [[1, 2]]
}"#;

const ONE_UNIT: &str = r#"{
  "n_units": 1, "n_nodes": 1, "arrival_rate": 1.0,
  "demand_fractions": [1.0], "service_rates": [1.0],
  "preferences": [[1]]
}"#;

fn hyperq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperq"))
        .args(args)
        .env_remove("HYPERQ_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn close(v: &Value, x: f64) -> bool {
    (v.as_f64().unwrap() - x).abs() < 1e-9
}

#[test]
fn solve_with_oracle() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "two.json", TWO_UNIT);
    let doc = json(&hyperq(&["solve", s(&inst), "--oracle"]));
    assert_eq!(doc["version"]["schema"], 1);
    let p = &doc["state_probabilities"];
    for (k, want) in [("0", 0.4), ("1", 0.3), ("2", 0.1), ("3", 0.2)] {
        assert!(close(&p[k], want), "{k}: {}", p[k]);
    }
    assert!(doc["oracle"]["mpre_pct"].as_f64().unwrap() < 1e-6);
    assert_eq!(doc["convergence"]["converged"], true);
    assert!(close(&doc["metrics"]["utilization"][0], 0.5));
    assert!(close(&doc["metrics"]["utilization"][1], 0.3));
}

#[test]
fn parallel_matches_sequential() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("gen.json");
    assert!(hyperq(&[
        "gen",
        "--units",
        "7",
        "--rho",
        "0.6",
        "--seed",
        "4",
        "-o",
        s(&inst)
    ])
    .status
    .success());
    let a = json(&hyperq(&["solve", s(&inst), "--full"]));
    let b = json(&hyperq(&[
        "solve",
        s(&inst),
        "--full",
        "--parallel",
        "--workers",
        "3",
        "--batch-size",
        "5",
    ]));
    let (pa, pb) = (
        a["state_probabilities"].as_object().unwrap(),
        b["state_probabilities"].as_object().unwrap(),
    );
    assert_eq!(pa.len(), 128);
    for (k, v) in pa {
        assert!(
            (v.as_f64().unwrap() - pb[k].as_f64().unwrap()).abs() < 1e-12,
            "{k}"
        );
    }
    assert_eq!(b["timing"]["workers"], 3);
}

#[test]
fn waiting_room_override() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "one.json", ONE_UNIT);
    let doc = json(&hyperq(&["solve", s(&inst), "--buffer", "1"]));
    assert_eq!(doc["queue_tail"].as_array().unwrap().len(), 1);
    assert!(close(&doc["queue_tail"][0], 1.0 / 3.0));
    assert!(close(&doc["state_probabilities"]["0"], 1.0 / 3.0));
    assert!(close(&doc["state_probabilities"]["1"], 1.0 / 3.0));

    let doc = json(&hyperq(&["solve", s(&inst), "--buffer", "2"]));
    let tail = doc["queue_tail"].as_array().unwrap();
    assert_eq!(tail.len(), 2);
    assert!(tail.iter().all(|t| close(t, 0.25)));
}

#[test]
fn csv_agrees_with_json() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("gen.json");
    assert!(hyperq(&[
        "gen",
        "--units",
        "5",
        "--rho",
        "0.4",
        "--buffer",
        "2",
        "-o",
        s(&inst)
    ])
    .status
    .success());
    let csv_path = dir.path().join("dist.csv");
    let doc = json(&hyperq(&[
        "solve",
        s(&inst),
        "--full",
        "--csv",
        s(&csv_path),
    ]));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,state,calls,probability"));
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 32 + 2);
    for row in &rows[..32] {
        let p: f64 = row[3].parse().unwrap();
        assert_eq!(p, doc["state_probabilities"][&row[0]].as_f64().unwrap());
    }
    assert_eq!(rows[1][1], "00001");
    assert_eq!(rows[32][1], "queue:1");
    for (row, t) in rows[32..].iter().zip(doc["queue_tail"].as_array().unwrap()) {
        assert_eq!(row[3].parse::<f64>().unwrap(), t.as_f64().unwrap());
    }
}

#[test]
fn validation_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.json", &TWO_UNIT.replace("[[1, 2]]", "[[1, 1]]"));
    let out = hyperq(&["solve", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a permutation"));

    let extra = write(
        &dir,
        "extra.json",
        &TWO_UNIT.replace("\"n_units\"", "\"colour\": 1, \"n_units\""),
    );
    assert_eq!(hyperq(&["solve", s(&extra)]).status.code(), Some(2));
    let out = hyperq(&["solve", s(&extra), "--lenient"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let inst = write(&dir, "two.json", TWO_UNIT);
    let out = hyperq(&[
        "solve",
        s(&inst),
        "--tol-outer",
        "1e-9",
        "--tol-inner",
        "1e-3",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn not_converged_exits_three() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("gen.json");
    assert!(
        hyperq(&["gen", "--units", "6", "--rho", "0.7", "-o", s(&inst)])
            .status
            .success()
    );
    let out = hyperq(&["solve", s(&inst), "--max-outer", "2"]);
    assert_eq!(out.status.code(), Some(3));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["convergence"]["converged"], false);
}

#[test]
fn oracle_mismatch_exits_four() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("gen.json");
    assert!(
        hyperq(&["gen", "--units", "6", "--rho", "0.7", "-o", s(&inst)])
            .status
            .success()
    );
    let out = hyperq(&[
        "solve",
        s(&inst),
        "--tol-outer",
        "1e-3",
        "--oracle",
        "--oracle-tol",
        "1e-12",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MPRE"));
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "two.json", TWO_UNIT);
    let args = [
        "simulate",
        s(&inst),
        "--arrivals",
        "200000",
        "--reps",
        "5",
        "--seed",
        "9",
    ];
    let a = hyperq(&args);
    let b = hyperq(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let doc: Value = serde_json::from_slice(&a.stdout).unwrap();
    let u = &doc["utilization"];
    assert!((u[0]["mean"].as_f64().unwrap() - 0.5).abs() < 0.02);
    assert!((u[1]["mean"].as_f64().unwrap() - 0.3).abs() < 0.02);
    assert!(doc["utilization_mpre_pct"].as_f64().unwrap() < 5.0);
}

#[test]
fn simulate_rejects_insensitive_spec_with_queue() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "two.json", TWO_UNIT);
    let out = hyperq(&[
        "simulate",
        s(&inst),
        "--dist",
        "lognormal",
        "--buffer",
        "1",
        "--arrivals",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = hyperq(&["simulate", s(&inst), "--dist", "weibull"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_assumption_reports_phi() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "het.json", TWO_UNIT_HETERO);
    let doc = json(&hyperq(&["check-assumption", s(&inst)]));
    assert!(close(&doc["phi"][0], 0.5));
    assert_eq!(doc["ok"], true);
    let inst = write(&dir, "hom.json", TWO_UNIT);
    assert_eq!(json(&hyperq(&["check-assumption", s(&inst)]))["ok"], true);
    let out = hyperq(&["check-assumption", s(&inst), "--format", "text"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("assumption holds"));
}

#[test]
fn gen_is_deterministic() {
    let a = hyperq(&["gen", "--units", "5", "--rho", "0.5", "--seed", "12"]);
    let b = hyperq(&["gen", "--units", "5", "--rho", "0.5", "--seed", "12"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = hyperq(&["gen", "--units", "5", "--rho", "0.5", "--seed", "13"]);
    assert_ne!(a.stdout, c.stdout);
    let doc: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(doc["n_units"], 5);
    assert_eq!(doc["n_nodes"], 10);
}

#[test]
fn bench_writes_csv() {
    let dir = TempDir::new().unwrap();
    let suite = write(
        &dir,
        "suite.json",
        r#"{"experiments": [{"kind": "accuracy", "id": "acc", "n_units": [4], "rho": [0.5],
            "methods": ["cpu", "oracle"], "repeats": 1}]}"#,
    );
    let out_path = dir.path().join("out.csv");
    let out = hyperq(&["bench", s(&suite), "-o", s(&out_path)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "experiment,instance_seed,N,J,rho,C,method,workers,batch,wall_ms,iters,mpre_pct,notes"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("acc,0,4,10,0.5,0,cpu,"));
}

#[test]
fn threads_from_environment() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "two.json", TWO_UNIT);
    let out = Command::new(env!("CARGO_BIN_EXE_hyperq"))
        .args(["solve", s(&inst), "--parallel"])
        .env("HYPERQ_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(json(&out)["timing"]["workers"], 2);
}

#[test]
fn text_format() {
    let dir = TempDir::new().unwrap();
    let inst = write(&dir, "two.json", TWO_UNIT);
    let out = hyperq(&["solve", s(&inst), "--format", "text"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("converged after"));
    assert!(text.contains("unit   1 utilization 0.500000"));
}
