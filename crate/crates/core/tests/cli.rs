use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dualsig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualsig"))
        .args(args)
        .env_remove("DUALSIG_OUT_DIR")
        .output()
        .expect("spawn dualsig")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let out = dir.join(format!("{name}-{seed}"));
    let o = dualsig(&["synth", name, "--seed", &seed.to_string(), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let h = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (h, rows)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let (h, rows) = read_csv(path);
    let i = h.iter().position(|c| c == name).unwrap();
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

/// Writes the observed column of a synthetic file as a single-column CSV.
fn x_only(dir: &Path, synth_dir: &Path) -> PathBuf {
    let x = column(&synth_dir.join("synthetic.csv"), "x");
    let path = dir.join("x.csv");
    let body: String = x.iter().map(|v| format!("{v}\n")).collect();
    fs::write(&path, format!("x\n{body}")).unwrap();
    path
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_is_deterministic_and_reconstructs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dualsig(&["synth", "outlier", "--seed", "1", "--out", p(&dir.path().join("a"))]);
    let b = dualsig(&["synth", "outlier", "--seed", "1", "--out", p(&dir.path().join("b"))]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    let fa = fs::read(dir.path().join("a/synthetic.csv")).unwrap();
    assert_eq!(fa, fs::read(dir.path().join("b/synthetic.csv")).unwrap());

    let f = dir.path().join("a/synthetic.csv");
    let (x, m, s, e) = (column(&f, "x"), column(&f, "true_m"), column(&f, "true_s"), column(&f, "true_eps"));
    assert_eq!(x.len(), 200);
    for t in 0..x.len() {
        assert!((x[t] - (m[t] + s[t] * e[t])).abs() <= 1e-12 * x[t].abs().max(1.0));
    }
    let meta = json(&dir.path().join("a/synthetic.json"));
    assert_eq!(meta["schema_version"], "1");
    assert_eq!(meta["spec"]["seed"], 1);
    assert!(meta["prng"].as_str().unwrap().contains("ChaCha8"));
}

#[test]
fn synth_unknown_scenario_lists_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualsig(&["synth", "nope", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mean-shift"), "{}", stderr(&o));
}

#[test]
fn decompose_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), "mean-shift", 3);
    let input = x_only(dir.path(), &s);
    let out = dir.path().join("dec");
    let o = dualsig(&["decompose", "--input", p(&input), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = read_csv(&out.join("decomposition.csv"));
    assert_eq!(h, ["t", "x", "m", "s", "eps", "w"]);
    assert_eq!(rows.len(), 200);
    let f = out.join("decomposition.csv");
    let (x, m, sd, e) = (column(&f, "x"), column(&f, "m"), column(&f, "s"), column(&f, "eps"));
    for t in 0..x.len() {
        assert!((x[t] - (m[t] + sd[t] * e[t])).abs() <= 1e-10 * x[t].abs().max(1.0));
    }
    let loss = json(&out.join("loss.json"));
    assert_eq!(loss["schema_version"], "1");
    assert!(loss["loss_value"].as_f64().unwrap().is_finite());
    assert_eq!(loss["run"]["hyperparameters"]["spc_window"], 7);
    let diag = json(&out.join("diagnostics.json"));
    assert!(diag["diagnostics"]["lb_p"].as_f64().is_some());
}

#[test]
fn decompose_labels_pass_through() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("l.csv");
    let body: String = (0..40).map(|i| format!("2020-{i:02},{}\n", 10.0 + (i % 3) as f64)).collect();
    fs::write(&input, format!("date,value\n{body}")).unwrap();
    let out = dir.path().join("o");
    let o = dualsig(&["decompose", "--input", p(&input), "--out", p(&out), "--mode", "joint"]);
    assert!(code(&o) == 0 || code(&o) == 3, "{}", stderr(&o));
    let (h, rows) = read_csv(&out.join("decomposition.csv"));
    assert_eq!(h[1], "label");
    assert_eq!(rows[5][1], "2020-05");
}

#[test]
fn decompose_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let nan = dir.path().join("nan.csv");
    fs::write(&nan, "x\n1\n2\nNaN\n4\n").unwrap();
    let o = dualsig(&["decompose", "--input", p(&nan), "--out", p(dir.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("row 3") && stderr(&o).contains("'x'"), "{}", stderr(&o));

    let short = dir.path().join("short.csv");
    fs::write(&short, "x\n1\n2\n").unwrap();
    assert_eq!(code(&dualsig(&["decompose", "--input", p(&short), "--out", p(dir.path())])), 2);

    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&dualsig(&["decompose", "--input", p(&missing), "--out", p(dir.path())])), 1);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), "outlier", 2);
    let input = x_only(dir.path(), &s);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"hyperparameters": {"beta_mean": 1.0, "unknown_key": 3}}"#).unwrap();
    let o = dualsig(&["decompose", "--input", p(&input), "--config", p(&bad), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    let neg = dualsig(&["decompose", "--input", p(&input), "--beta-mean", "-1", "--out", p(dir.path())]);
    assert_eq!(code(&neg), 2);
    assert_eq!(code(&dualsig(&["decompose", "--bogus-flag"])), 2);
    assert_eq!(code(&dualsig(&["--help"])), 0);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), "cycle", 4);
    let input = x_only(dir.path(), &s);
    let cfg = dir.path().join("c.json");
    let out = dir.path().join("from-config");
    fs::write(
        &cfg,
        format!(
            r#"{{"schema_version": "1", "input": "{}", "output_dir": "{}", "hyperparameters": {{"theta": 0.5, "spc_window": 9}}}}"#,
            p(&input),
            p(&out)
        ),
    )
    .unwrap();
    let o = dualsig(&["decompose", "--config", p(&cfg), "--spc-window", "10"]);
    assert!(code(&o) == 0 || code(&o) == 3, "{}", stderr(&o));
    let loss = json(&out.join("loss.json"));
    assert_eq!(loss["run"]["hyperparameters"]["theta"], 0.5);
    assert_eq!(loss["run"]["hyperparameters"]["spc_window"], 10);
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_dualsig"))
        .args(["synth", "cycle", "--seed", "5"])
        .env("DUALSIG_OUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("synthetic.csv").exists());
}

#[test]
fn spc_command() {
    let dir = tempfile::tempdir().unwrap();
    let constant = dir.path().join("c.csv");
    fs::write(&constant, format!("x\n{}", "5\n".repeat(30))).unwrap();
    let out = dir.path().join("spc");
    let o = dualsig(&["spc", "--input", p(&constant), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, _) = read_csv(&out.join("spc.csv"));
    assert_eq!(h, ["t", "x", "z", "p", "w"]);
    assert!(column(&out.join("spc.csv"), "w").iter().all(|&w| w == 1.0));

    // stable base with a spike at t = 50
    let mut x: Vec<f64> = (0..60).map(|i| 10.0 + if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
    x[49] = 20.0;
    let spike = dir.path().join("s.csv");
    fs::write(&spike, format!("x\n{}", x.iter().map(|v| format!("{v}\n")).collect::<String>())).unwrap();
    let out = dir.path().join("spike");
    assert_eq!(code(&dualsig(&["spc", "--input", p(&spike), "--out", p(&out)])), 0);
    let w = column(&out.join("spc.csv"), "w");
    assert_eq!(w[49], 0.0);
    assert_eq!(w[39], 1.0);
    let (_, rows) = read_csv(&out.join("spc.csv"));
    assert_eq!(rows[0][2], "", "no preceding window at t = 1");

    let o = dualsig(&["spc", "--input", p(&constant), "--spc-window", "29", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
}

fn tune_config(dir: &Path, input: &Path, out: &Path, budget: usize) -> PathBuf {
    let cfg = dir.join("tune.json");
    fs::write(
        &cfg,
        format!(
            r#"{{
  "input": "{}",
  "output_dir": "{}",
  "hyperparameters": {{"mode": "joint", "beta_rule": {{"rule": "fixed"}}}},
  "tuning": {{
    "budget": {budget},
    "method": "grid_then_nelder_mead",
    "seeds": [1, 2],
    "search_space": {{"beta_mean": [1.0, 3.9], "gamma_mean": [0.5, 2.0]}}
  }}
}}"#,
            p(input),
            p(out)
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn tune_and_reuse_best_h() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), "mean-shift", 6);
    let input = x_only(dir.path(), &s);
    let out = dir.path().join("tune");
    let cfg = tune_config(dir.path(), &input, &out, 8);
    let o = dualsig(&["tune", "--config", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (h, rows) = read_csv(&out.join("trace.csv"));
    assert!(h.contains(&"score".to_string()));
    assert!(rows.len() <= 8 && rows.len() >= 4);
    let summary = json(&out.join("tuning.json"));
    let best = summary["best_score"].as_f64().unwrap();
    assert!(best >= 0.0);

    // best_h.json is itself a valid run configuration
    let dec = dir.path().join("reuse");
    let o = dualsig(&["decompose", "--config", p(&out.join("best_h.json")), "--input", p(&input), "--out", p(&dec)]);
    assert!(code(&o) == 0 || code(&o) == 3, "{}", stderr(&o));
    let best_h = json(&out.join("best_h.json"));
    assert_eq!(json(&dec.join("loss.json"))["run"]["hyperparameters"], best_h["hyperparameters"]);
}

#[test]
fn tune_budget_one_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), "outlier", 7);
    let input = x_only(dir.path(), &s);
    let out = dir.path().join("t1");
    let cfg = dir.path().join("one.json");
    fs::write(
        &cfg,
        format!(r#"{{"input": "{}", "tuning": {{"budget": 1, "method": "grid", "search_space": {{"theta": [1.0]}}}}}}"#, p(&input)),
    )
    .unwrap();
    let o = dualsig(&["tune", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_csv(&out.join("trace.csv")).1.len(), 1);

    let empty = dir.path().join("empty.json");
    fs::write(&empty, format!(r#"{{"input": "{}", "tuning": {{"budget": 5}}}}"#, p(&input))).unwrap();
    assert_eq!(code(&dualsig(&["tune", "--config", p(&empty), "--out", p(&out)])), 2);

    let malformed = dir.path().join("bad.json");
    fs::write(&malformed, r#"{"tuning": {"budget": "#).unwrap();
    assert_eq!(code(&dualsig(&["tune", "--config", p(&malformed), "--input", p(&input)])), 2);
}

#[test]
fn dualspace_from_decomposition() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), "variance-shift", 8);
    let input = x_only(dir.path(), &s);
    let dec = dir.path().join("dec");
    let o = dualsig(&["decompose", "--input", p(&input), "--out", p(&dec)]);
    assert!(code(&o) == 0 || code(&o) == 3);
    let out = dir.path().join("ds");
    let o = dualsig(&[
        "dualspace",
        "--input",
        p(&dec.join("decomposition.csv")),
        "--out",
        p(&out),
        "--forecast-steps",
        "5",
        "--idw-power",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mass: f64 = column(&out.join("density.csv"), "mass").iter().sum();
    assert!((mass - 1.0).abs() <= 1e-12, "{mass}");
    let (h, rows) = read_csv(&out.join("states.csv"));
    let kind = h.iter().position(|c| c == "kind").unwrap();
    assert_eq!(rows.iter().filter(|r| r[kind] == "forecast").count(), 5);
    assert_eq!(rows.len(), 205);
    assert_eq!(read_csv(&out.join("edges.csv")).1.len(), 199);
    assert_eq!(read_csv(&out.join("vector_field.csv")).1.len(), 400);
    let summary = json(&out.join("dualspace.json"));
    assert_eq!(summary["schema_version"], "1");
    assert!(summary["mutual_information"].as_f64().unwrap() >= 0.0);
}

#[test]
fn dualspace_constant_and_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let constant = dir.path().join("c.csv");
    fs::write(&constant, format!("m,s\n{}", "2,0.5\n".repeat(20))).unwrap();
    let out = dir.path().join("c");
    let o = dualsig(&["dualspace", "--input", p(&constant), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mass = column(&out.join("density.csv"), "mass");
    assert_eq!(mass.iter().filter(|&&v| v > 0.0).count(), 1);
    assert!(column(&out.join("edges.csv"), "dm").iter().all(|&v| v == 0.0));
    assert!(column(&out.join("edges.csv"), "ds").iter().all(|&v| v == 0.0));

    let no_s = dir.path().join("m.csv");
    fs::write(&no_s, "m\n1\n2\n3\n").unwrap();
    assert_eq!(code(&dualsig(&["dualspace", "--input", p(&no_s), "--out", p(&out)])), 1);
}

#[test]
fn diagnose_command() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), "outlier", 9);
    let out = dir.path().join("d");
    let o = dualsig(&["diagnose", "--input", p(&s.join("synthetic.csv")), "--column", "true_eps", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = json(&out.join("diagnostics.json"));
    assert!(d["diagnostics"]["adf_p"].as_f64().unwrap() < 0.05);
    assert_eq!(d["column"], "true_eps");
}

#[test]
fn numbers_are_round_trip_exact() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path(), "composite", 11);
    let (_, rows) = read_csv(&s.join("synthetic.csv"));
    for r in &rows {
        for cell in &r[1..] {
            let v: f64 = cell.parse().unwrap();
            assert_eq!(format!("{v}"), *cell);
        }
    }
}
