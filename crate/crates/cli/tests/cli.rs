use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_kamrev");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, v: &Value) -> String {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("bad stdout ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn strip_metadata(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("metadata");
    v
}

#[test]
fn toy_ex2_constant_forcing_has_no_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &json!({"psi2": [{"coeff": 0.1, "a": 0, "b": 0}]}));
    let out = run(&["toy", "ex2", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let r = stdout_json(&out);
    assert_eq!(r["status"], "ok");
    assert_eq!(r["result"], "NoSolution");
    assert!(r["min_residual"].as_f64().unwrap() >= 0.1 - 1e-12);
}

#[test]
fn miniversal_nilpotent_m2() {
    let out = run(&["miniversal-nilpotent", "--m", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let r = stdout_json(&out);
    assert_eq!(r["m"], 2);
    assert_eq!(r["det_s"], -1);
    for (name, v) in r["identities"].as_object().unwrap() {
        assert_eq!(v, &Value::Bool(true), "{name}");
    }
}

#[test]
fn schema_violation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &json!({"psi2": 3}));
    let out_dir = dir.path().join("out");
    let out = run(&["toy", "ex2", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let r: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["status"], "invalid");
    assert!(r.get("result").is_none());
    assert!(r["error"]["message"].as_str().unwrap().contains("psi2"));
}

#[test]
fn unknown_field_and_bad_json_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &json!({"psi2": [], "extra": 1}));
    assert_eq!(run(&["toy", "ex2", "--config", &cfg]).status.code(), Some(2));
    let p = dir.path().join("broken.json");
    fs::write(&p, "{nope").unwrap();
    assert_eq!(run(&["toy", "ex2", "--config", p.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["dioph-check", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn non_reversible_family_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // a y-odd term in xi breaks reversibility under (x, y) -> (-x, -y)
    let cfg = write_config(
        dir.path(),
        &json!({
            "family": {"n": 2, "m": 1, "p": 0, "s": 1, "R": [], "Q": [],
                       "xi": [{"component": 0, "coeff": 0.1, "y": [1]}]},
            "omega0": [1.0, 1.618033988749895],
            "mu0": [0.0],
            "normalizer": {"order": 8}
        }),
    );
    let out = run(&["normalize", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["status"], "invalid");
}

#[test]
fn resonant_frequency_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let fam = configs().join("families/elliptic.json");
    let cfg = write_config(
        dir.path(),
        &json!({
            "family": fam.to_str().unwrap(),
            "omega0": [1.0, 2.0],
            "mu0": [0.0],
            "normalizer": {"order": 8}
        }),
    );
    let out = run(&["normalize", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    let r = stdout_json(&out);
    assert_eq!(r["status"], "error");
    assert_eq!(r["error"]["kind"], "SmallDivisor");
}

#[test]
fn envelope_fields() {
    let out = run(&["miniversal-nilpotent", "--m", "1", "--seed", "11"]);
    let r = stdout_json(&out);
    assert_eq!(r["command"], "miniversal-nilpotent");
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["seed"], 11);
    let h = r["config_sha256"].as_str().unwrap();
    assert_eq!(h.len(), 64);
    assert!(h.chars().all(|c| c.is_ascii_hexdigit()));
    assert!(r["metadata"]["elapsed_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn config_hash_tracks_content() {
    let a = stdout_json(&run(&["miniversal-nilpotent", "--m", "2"]));
    let b = stdout_json(&run(&["miniversal-nilpotent", "--m", "3"]));
    let c = stdout_json(&run(&["miniversal-nilpotent", "--m", "2", "--seed", "5"]));
    assert_ne!(a["config_sha256"], b["config_sha256"]);
    assert_eq!(a["config_sha256"], c["config_sha256"]);
}

#[test]
fn dioph_measure_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({"omega_box": [[1.0, 2.0], [1.0, 2.0]], "tau": 1.5,
                "gammas": [0.01, 0.04], "horizon": 30, "samples": 3000}),
    );
    let mut reports = vec![];
    let mut csvs = vec![];
    for (i, seed) in ["3", "3", "4"].iter().enumerate() {
        let od = dir.path().join(format!("run{i}"));
        let out = run(&["dioph-measure", "--config", &cfg, "--seed", seed, "--out", od.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        let r: Value = serde_json::from_str(&fs::read_to_string(od.join("report.json")).unwrap()).unwrap();
        reports.push(strip_metadata(r));
        csvs.push(fs::read(od.join("fractions.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(csvs[0], csvs[1]);
    assert_ne!(reports[0]["fractions"], reports[2]["fractions"]);
    let csv = String::from_utf8(csvs[0].clone()).unwrap();
    assert_eq!(csv.lines().next(), Some("gamma,fraction"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = configs().join("dioph-measure.json");
    let one = run(&["dioph-measure", "--config", cfg.to_str().unwrap(), "--threads", "1"]);
    let four = run(&["dioph-measure", "--config", cfg.to_str().unwrap(), "--threads", "4"]);
    let (a, b) = (stdout_json(&one), stdout_json(&four));
    assert_eq!(b["metadata"]["threads"], 4);
    assert_eq!(strip_metadata(a), strip_metadata(b));
}

#[test]
fn normalize_writes_residual_table() {
    let dir = tempfile::tempdir().unwrap();
    let od = dir.path().join("out");
    let cfg = configs().join("normalize.json");
    let out = run(&["normalize", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", od.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&fs::read_to_string(od.join("report.json")).unwrap()).unwrap();
    assert!(r["final_residual"].as_f64().unwrap() <= 1e-10);
    assert!(r["torus"]["max_deviation"].as_f64().unwrap() <= 1e-6);
    let hist = r["residual_history"].as_array().unwrap();
    let csv = fs::read_to_string(od.join("residuals.csv")).unwrap();
    assert_eq!(csv.lines().count(), hist.len() + 1);
}

#[test]
fn shipped_configs_validate_and_run() {
    let dir = configs();
    let cases: &[(&[&str], &str)] = &[
        (&["dioph-check"], "dioph-check.json"),
        (&["dioph-measure"], "dioph-measure.json"),
        (&["cohomology-solve"], "cohomology-solve.json"),
        (&["versal-check"], "versal-check.json"),
        (&["miniversal-nilpotent"], "miniversal-nilpotent.json"),
        (&["toy", "ex1"], "toy-ex1.json"),
        (&["toy", "ex2"], "toy-ex2.json"),
        (&["toy", "linear"], "toy-linear.json"),
    ];
    for (cmd, file) in cases {
        let path = dir.join(file);
        let mut args: Vec<&str> = cmd.to_vec();
        args.extend(["--config", path.to_str().unwrap()]);
        let out = run(&args);
        assert_eq!(out.status.code(), Some(0), "{file}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(stdout_json(&out)["status"], "ok", "{file}");
    }
}

#[test]
fn shipped_example_outcomes() {
    let dir = configs();
    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let r = stdout_json(&run(&["dioph-check", "--config", &p("dioph-check.json")]));
    assert_eq!(r["holds"], true);
    let r = stdout_json(&run(&["versal-check", "--config", &p("versal-check.json")]));
    assert_eq!(r["miniversal"], true);
    assert_eq!(r["codimension"], 1);
    let r = stdout_json(&run(&["cohomology-solve", "--config", &p("cohomology-solve.json")]));
    assert!(r["residual"].as_f64().unwrap() < 1e-12);
    let r = stdout_json(&run(&["toy", "ex1", "--config", &p("toy-ex1.json")]));
    assert_eq!(r["status"], "ok");
}

#[test]
fn resonant_check_fails_without_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({"omega": [1.0, 2.0], "Q": [], "R": [], "tau": 1.5, "gamma": 1e-3, "horizon": 10}),
    );
    let out = run(&["dioph-check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let r = stdout_json(&out);
    assert_eq!(r["holds"], false);
}
