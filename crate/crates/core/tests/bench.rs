use hyperq::bench::{read_csv, run_suite, SuiteSpec, CSV_HEADER};

fn suite(json: &str) -> SuiteSpec {
    serde_json::from_str(json).unwrap()
}

#[test]
fn accuracy_rows_and_savings() {
    let spec = suite(
        r#"{"experiments": [{"kind": "accuracy", "id": "acc", "n_units": [6, 7], "rho": [0.1, 0.9],
            "methods": ["cpu", "oracle"], "repeats": 3}]}"#,
    );
    let mut r = run_suite(&spec);
    assert_eq!(r.records.len(), 8);
    for pair in r.records.chunks(2) {
        assert_eq!(pair[0].method, "cpu");
        assert_eq!(pair[1].method, "oracle");
        assert!(pair[0].iters.unwrap() > 1);
        assert!(pair[0].mpre_pct.unwrap() < 1e-4);
        assert!(pair[1].mpre_pct.is_none());
        assert!(pair[0].notes.starts_with("savings_vs_oracle_pct="));
    }
    let before = r.records.clone();
    r.recompute_mpre();
    assert_eq!(r.records, before);

    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(read_csv(buf.as_slice()).unwrap(), r.records);
}

#[test]
fn oracle_too_large_is_recorded() {
    let spec = suite(
        r#"{"experiments": [{"kind": "accuracy", "id": "big", "n_units": [15], "rho": [0.5],
            "methods": ["oracle"], "repeats": 1}]}"#,
    );
    let r = run_suite(&spec);
    assert_eq!(r.records.len(), 1);
    assert!(r.records[0].wall_ms.is_none());
    assert!(r.records[0].notes.starts_with("error:"));
}

#[test]
fn simulation_and_scaling_rows() {
    let spec = suite(
        r#"{"experiments": [
            {"kind": "simulation", "id": "sim", "n_units": [4], "rho": [0.5],
             "distributions": ["exp", "gamma:5", "weibull"], "arrivals": 20000, "replications": 3},
            {"kind": "scaling", "id": "scale", "n_units": [8], "rho": [0.5],
             "workers": [1, 2], "batch_size": 16, "repeats": 3}
        ]}"#,
    );
    let r = run_suite(&spec);
    let methods: Vec<&str> = r.records.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(
        methods,
        [
            "sim-exp",
            "sim-gamma:5",
            "sim-weibull",
            "cpu",
            "parallel",
            "parallel",
            "amdahl"
        ]
    );
    assert!(r.records[0].mpre_pct.unwrap() < 10.0);
    assert!(r.records[2].notes.starts_with("error:"));
    assert!(r.records[4].mpre_pct.unwrap() < 1e-9);
    assert_eq!(r.records[5].workers, Some(2));
    let amdahl = &r.records[6].notes;
    assert!(
        amdahl.starts_with("P=") || amdahl.starts_with("error:"),
        "{amdahl}"
    );
}

#[test]
fn unknown_experiment_kind_is_rejected() {
    assert!(serde_json::from_str::<SuiteSpec>(r#"{"experiments": [{"kind": "nope"}]}"#).is_err());
}
