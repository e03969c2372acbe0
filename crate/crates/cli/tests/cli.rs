use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ct-factor"));
    c.env_remove("CT_FACTOR_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_schema(name: &str, value: &Value) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    let schema = read_json(&path);
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn write(path: &Path, value: &Value) -> String {
    fs::write(path, serde_json::to_string(value).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn simulate(dir: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["simulate", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    stdout_json(&run(&args))
}

fn corr_file(dir: &Path, n: usize, corr: &[Vec<f64>]) -> String {
    write(&dir.join("corr.json"), &json!({ "n": n, "corr": corr }))
}

fn block_corr(blocks: usize, size: usize, within: f64) -> Vec<Vec<f64>> {
    let p = blocks * size;
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else if i / size == j / size { within } else { 0.0 }).collect())
        .collect()
}

#[test]
fn simulate_is_reproducible_and_well_formed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let flags = ["--d", "3", "--children", "5", "--phi-scale", "0.25", "--n", "1000", "--seed", "7"];
    let sa = simulate(a.path(), &flags);
    let sb = simulate(b.path(), &flags);
    assert_eq!(sa, sb);
    for f in ["model.json", "truth.json", "data.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_schema("simulate_summary.schema.json", &sa);
    assert_schema("model.schema.json", &read_json(&a.path().join("model.json")));
    assert_schema("structure.schema.json", &read_json(&a.path().join("truth.json")));
    assert_eq!(sa["p"], 15);
    assert_eq!(sa["ucc_holds"], true);
    let csv = fs::read_to_string(a.path().join("data.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);
    assert!(csv.starts_with("x1,x2,"));
}

#[test]
fn simulate_violations_and_presets() {
    let dir = tempfile::tempdir().unwrap();
    let s = simulate(dir.path(), &["--d", "4", "--ucc-violation", "0.75", "--phi-scale", "0", "--seed", "1"]);
    assert_eq!(s["violating_fraction"], 0.75);
    assert_eq!(s["violating_factors"].as_array().unwrap().len(), 3);
    assert_eq!(s["thresholdable"], true);

    let s = simulate(dir.path(), &["--preset", "highdim-250", "--phi-scale", "0.75"]);
    assert_eq!((s["n"].as_u64(), s["p"].as_u64(), s["d"].as_u64()), (Some(250), Some(375), Some(25)));
    assert_eq!(fs::read_to_string(dir.path().join("data.csv")).unwrap().lines().count(), 251);

    let out = run(&["simulate", "--preset", "highdim-x", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_recovers_simulated_structure() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--seed", "11"]);
    let data = dir.path().join("data.csv");
    let truth = dir.path().join("truth.json");
    let out_file = dir.path().join("report.json");
    let args = [
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--cv-folds",
        "3",
        "-o",
        out_file.to_str().unwrap(),
    ];
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&out_file);
    assert_schema("ct_result.schema.json", &report);
    assert!(report["selected_metrics"]["f1"].as_f64().unwrap() >= 0.95);
    assert_eq!(report["selected_metrics"]["d_hat"], 3);
    assert!(report["models_evaluated"].as_u64().unwrap() <= 40);
    assert!(report["cv_test_loglik"].as_f64().unwrap().is_finite());

    // everything except wall-clock timing is reproducible
    let again_file = dir.path().join("again.json");
    let mut args2 = args;
    args2[8] = again_file.to_str().unwrap();
    assert!(run(&args2).status.success());
    let mut again = read_json(&again_file);
    let mut first = report.clone();
    first["timing"] = Value::Null;
    again["timing"] = Value::Null;
    assert_eq!(first, again);
}

#[test]
fn fit_on_correlation_input_and_duplicated_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = String::from("a,b,c,d\n");
    let vals = [[1.0, 2.0, 0.3], [2.5, 0.1, -1.0], [0.2, 1.1, 0.7], [3.0, -0.4, 0.2], [1.7, 0.9, -0.3], [-0.5, 0.4, 1.9]];
    for v in vals {
        // column d duplicates column a
        rows.push_str(&format!("{},{},{},{}\n", v[0], v[1], v[2], v[0]));
    }
    let data = dir.path().join("dup.csv");
    fs::write(&data, rows).unwrap();
    let report = stdout_json(&run(&["fit", "--data", data.to_str().unwrap(), "--select", "none"]));
    assert_schema("ct_result.schema.json", &report);
    for cand in report["candidates"].as_array().unwrap() {
        let below_one = cand["tau_values"].as_array().unwrap().iter().all(|t| t.as_f64().unwrap() < 1.0);
        if below_one {
            let support = cand["structure"]["support"].as_array().unwrap();
            let cols = |row: u64| -> Vec<u64> {
                support.iter().filter(|e| e[0] == row).map(|e| e[1].as_u64().unwrap()).collect()
            };
            assert_eq!(cols(0), cols(3));
            assert!(!cols(0).is_empty());
        }
    }

    let corr = corr_file(dir.path(), 200, &block_corr(2, 3, 0.6));
    let report = stdout_json(&run(&["fit", "--corr", &corr, "--thresholds", "0.3,0.5,0.7"]));
    assert_schema("ct_result.schema.json", &report);
    let sel = report["selected_index"].as_u64().unwrap() as usize;
    assert_eq!(report["candidates"][sel]["d"], 2);
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let constant = dir.path().join("const.csv");
    fs::write(&constant, "1,2\n1,3\n1,5\n").unwrap();
    let out = run(&["fit", "--data", constant.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("column 0"));

    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "1,2\n3\n").unwrap();
    assert_eq!(run(&["fit", "--data", ragged.to_str().unwrap()]).status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,x\n").unwrap();
    assert_eq!(run(&["cliques", "--data", bad.to_str().unwrap(), "--tau", "0.5"]).status.code(), Some(2));

    let corr = corr_file(dir.path(), 100, &block_corr(2, 2, 0.5));
    let out = run(&["fit", "--corr", &corr, "--select", "min-hd"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("truth"));

    assert_eq!(run(&["fit", "--corr", &corr, "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["cliques", "--corr", &corr, "--tau", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--corr", "/nonexistent/corr.json"]).status.code(), Some(2));
    assert_eq!(run(&["evaluate", "/nonexistent/a.json", "/nonexistent/b.json"]).status.code(), Some(2));

    let out = bin().args(["cliques", "--corr", &corr, "--tau", "0.3"]).env("CT_FACTOR_JOBS", "0").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["cliques", "--corr", &corr, "--tau", "0.3"]).env("CT_FACTOR_JOBS", "2").output().unwrap();
    assert!(out.status.success());
}

#[test]
fn cliques_on_simple_correlations() {
    let dir = tempfile::tempdir().unwrap();
    let identity: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let c = corr_file(dir.path(), 50, &identity);
    let r = stdout_json(&run(&["cliques", "--corr", &c, "--tau", "0.2"]));
    assert_schema("cliques.schema.json", &r);
    assert_eq!(r["n_cliques"], 6);

    let c = corr_file(dir.path(), 50, &block_corr(3, 4, 0.7));
    let r = stdout_json(&run(&["cliques", "--corr", &c, "--tau", "0.35"]));
    assert_schema("cliques.schema.json", &r);
    assert_eq!(r["n_cliques"], 3);
    assert_eq!(r["cliques"]["cliques"][1], json!([4, 5, 6, 7]));
}

#[test]
fn cliques_on_a_large_sparse_graph_is_fast() {
    let p = 2000;
    let mut corr = vec![vec![0.0; p]; p];
    // deterministic pseudo-random pairs, mean degree 20
    let mut state = 12345u64;
    let mut edges = 0;
    while edges < p * 10 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let i = (state >> 33) as usize % p;
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let j = (state >> 33) as usize % p;
        if i != j && corr[i][j] == 0.0 {
            corr[i][j] = 0.5;
            corr[j][i] = 0.5;
            edges += 1;
        }
    }
    for (i, row) in corr.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let dir = tempfile::tempdir().unwrap();
    let c = corr_file(dir.path(), 100, &corr);
    let r = stdout_json(&run(&["cliques", "--corr", &c, "--tau", "0.3"]));
    assert_eq!(r["n_edges"], p * 10);
    let secs = r["timing"]["build_secs"].as_f64().unwrap() + r["timing"]["search_secs"].as_f64().unwrap();
    assert!(secs < 1.0, "{secs} s");
}

fn model(lambda: Value, phi: Value, omega: Value) -> Value {
    json!({ "lambda": lambda, "phi": phi, "omega": omega })
}

#[test]
fn check_reports_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let orthogonal = model(
        json!([[0.7, 0.0], [0.6, 0.0], [0.8, 0.0], [0.0, 0.7], [0.0, 0.75], [0.0, 0.65]]),
        json!([[1.0, 0.0], [0.0, 1.0]]),
        json!([0.51, 0.64, 0.36, 0.51, 0.4375, 0.5775]),
    );
    let path = write(&dir.path().join("orth.json"), &orthogonal);
    let r = stdout_json(&run(&["check", &path]));
    assert_schema("check.schema.json", &r);
    assert_eq!(r["thresholdability"]["thresholdable"], true);
    assert_eq!(r["unique_children"]["ucc_holds"], true);
    assert_eq!(r["rotational"]["condition1"], true);
    let curve = r["edge_recovery_bound"]["curve"].as_array().unwrap();
    assert_eq!(curve.len(), 5);
    for w in curve.windows(2) {
        assert!(w[1]["eta"].as_f64().unwrap() <= w[0]["eta"].as_f64().unwrap());
    }
    assert!(curve.last().unwrap()["eta"].as_f64().unwrap() < curve[0]["eta"].as_f64().unwrap());

    // factors 1 and 2 share the same children
    let duplicated = model(
        json!([[0.7, 0.0, 0.0], [0.6, 0.0, 0.0], [0.0, 0.5, 0.4], [0.0, 0.4, 0.5], [0.0, 0.6, 0.3]]),
        json!([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
        json!([0.51, 0.64, 0.59, 0.59, 0.55]),
    );
    let path = write(&dir.path().join("dup.json"), &duplicated);
    let r = stdout_json(&run(&["check", &path, "--n-grid", "100,1000"]));
    assert_schema("check.schema.json", &r);
    assert_eq!(r["unique_children"]["ucc_holds"], false);
    assert_eq!(r["unique_children"]["violating_factors"], json!([1, 2]));

    let bad = write(&dir.path().join("bad.json"), &json!({ "lambda": [[0.5]], "phi": [[1.0]], "omega": [-1.0] }));
    assert_eq!(run(&["check", &bad]).status.code(), Some(2));
}

#[test]
fn evaluate_counts_a_moved_loading() {
    let dir = tempfile::tempdir().unwrap();
    let truth: Vec<[usize; 2]> = (0..15).map(|i| [i, i / 5]).collect();
    let mut est = truth.clone();
    est[4] = [4, 1];
    let t = write(&dir.path().join("t.json"), &json!({ "p": 15, "d": 3, "support": truth }));
    let e = write(&dir.path().join("e.json"), &json!({ "p": 15, "d": 3, "support": est }));
    let r = stdout_json(&run(&["evaluate", &e, &t]));
    assert_schema("metric_report.schema.json", &r);
    assert_eq!(r["hd"], 2);

    let other = write(&dir.path().join("o.json"), &json!({ "p": 14, "d": 3, "support": [[0, 0], [1, 1], [2, 2]] }));
    assert_eq!(run(&["evaluate", &other, &t]).status.code(), Some(2));
}

#[test]
fn bench_aggregate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(&["bench", "low", "--reps", "1", "--seed", "5", "--phi-scale", "0.25", "--out-dir", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let agg_a = fs::read(a.path().join("aggregate.json")).unwrap();
    assert_eq!(agg_a, fs::read(b.path().join("aggregate.json")).unwrap());
    let agg = read_json(&a.path().join("aggregate.json"));
    assert_schema("aggregate.schema.json", &agg);
    assert_eq!(agg["conditions"][0]["failures"], 0);
    let csv = fs::read_to_string(a.path().join("replicates.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "condition,replicate,seed,f1,hd,d_hat,d_true,models_evaluated,wall_secs,error");
    assert_eq!(lines.count(), 1);
}

#[test]
fn bench_high_dimensional_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bench", "high", "--preset", "250", "--reps", "2", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg = read_json(&dir.path().join("aggregate.json"));
    assert_schema("aggregate.schema.json", &agg);
    assert_eq!(agg["selection"], "min-hd");
    let conds = agg["conditions"].as_array().unwrap();
    assert_eq!(conds.len(), 2);
    assert_eq!(conds[0]["p"], 375);
    assert_eq!(conds[1]["ucc_violation_fraction"], 0.75);
    assert_eq!(fs::read_to_string(dir.path().join("replicates.csv")).unwrap().lines().count(), 5);
}
