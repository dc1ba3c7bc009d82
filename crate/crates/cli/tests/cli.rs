use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use romi_cli::config::{read_json, Overrides, RunConfig};
use romi_cli::report::{read_csv, Manifest};
use romi_core::designs::DesignKind;
use romi_core::monitoring::MonitoringLimits;
use romi_core::simengine::{preset, simulate};
use romi_core::validation::fixtures::{default_dir, oracle_calibration, Case};
use romi_core::validation::load_fixtures;

fn romi(args: &[&str]) -> Output {
    romi_env(args, &[])
}

fn romi_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_romi"));
    cmd.args(args).env_remove("ROMI_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = romi(&["simulate", "--config", "/no/such/run.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/run.json"), "{}", stderr(&o));
}

#[test]
fn missing_scenario_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", r#"{"scenarios": ["A2", "scenarios/absent.json"], "reps": 1}"#);
    let o = romi(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("scenarios/absent.json") && err.contains("scenarios[1]"), "{err}");
    assert!(!dir.path().join("out").exists(), "nothing written before the configuration is accepted");
}

#[test]
fn misspelled_keys_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", r#"{"scenarios": ["A1"], "mcmc": {"n_iters": 100}}"#);
    let o = romi(&["simulate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mcmc") && stderr(&o).contains("n_iters"), "{}", stderr(&o));
}

#[test]
fn bad_flags_and_thread_counts_are_config_errors() {
    assert_eq!(romi(&["simulate", "--reps", "many"]).status.code(), Some(1));
    assert_eq!(romi(&["frobnicate"]).status.code(), Some(1));
    let o = romi_env(&["calibrate"], &[("ROMI_THREADS", "zero")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ROMI_THREADS"));
    assert_eq!(romi(&["--help"]).status.code(), Some(0));
}

#[test]
fn smoke_run_writes_parseable_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o =
        romi(&["simulate", "--config", s(&configs().join("reference_table.json")), "--reps", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let tables = std::fs::read_to_string(out.join("tables.md")).unwrap();
    assert_eq!(tables.matches("### Scenario").count(), 6);
    assert_eq!(stdout(&o), tables);
    let ocs = read_csv(std::fs::File::open(out.join("oc.csv")).unwrap()).unwrap();
    assert_eq!(ocs.len(), 30);
    assert!(ocs.iter().all(|oc| oc.n_reps == 1 && oc.indications.len() == 3));
    let manifest: Manifest = read_json(&out.join("manifest.json")).unwrap();
    assert_eq!((manifest.seed, manifest.reps), (20_240_601, 1));
    assert!(manifest.files.iter().all(|f| out.join(f).is_file()));
}

#[test]
fn csv_reproduces_in_memory_results_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.json",
        r#"{"scenarios": ["A5"], "designs": ["Independent", "ROMI-v1"], "reps": 12, "seed": 99}"#,
    );
    let out = dir.path().join("out");
    let o = romi(&["simulate", "--config", s(&cfg), "--out", s(&out), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("Scenario,Design,"));
    let parsed = read_csv(std::fs::File::open(out.join("oc.csv")).unwrap()).unwrap();
    let run = RunConfig::load(Some(&cfg)).unwrap().0;
    let expected: Vec<_> = [DesignKind::Independent, DesignKind::RomiV1]
        .iter()
        .map(|&d| simulate(&run.design_config(d, 3).unwrap(), &preset("A5").unwrap(), 12, 99).unwrap())
        .collect();
    assert_eq!(parsed, expected);
}

#[test]
fn manifest_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", r#"{"scenarios": ["A4"], "designs": ["ROMI-v2", "Pool"], "reps": 6}"#);
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    assert!(romi(&["simulate", "--config", s(&cfg), "--seed", "5", "--out", s(&first)]).status.success());
    let again = romi_env(
        &["simulate", "--config", s(&first.join("config.json")), "--out", s(&second)],
        &[("ROMI_THREADS", "3")],
    );
    assert!(again.status.success(), "{}", stderr(&again));
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&first, "oc.csv"), read(&second, "oc.csv"));
    assert_eq!(read(&first, "config.json"), read(&second, "config.json"));
    let m1: Manifest = read_json(&first.join("manifest.json")).unwrap();
    let m2: Manifest = read_json(&second.join("manifest.json")).unwrap();
    assert_eq!(m1.config_sha256, m2.config_sha256);
    assert_eq!(m2.worker_threads, 3);
    let plan =
        RunConfig::load(Some(&first.join("config.json"))).unwrap().0.plan(dir.path(), &Overrides::default()).unwrap();
    assert_eq!(plan.config_hash(), m1.config_sha256);
}

#[test]
fn decide_drops_an_all_toxic_indication() {
    let o = romi(&["decide", s(&configs().join("counts_stage1.json")), "--design", "ROMI-v1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("| I1 | drop: toxicity |"), "{text}");
    assert!(text.contains("| I1 | H | toxicity | 14 | 14 | 1.0000 | 0.95 | yes |"), "{text}");
}

fn fixture_means(name: &str) -> [f64; 2] {
    let f = load_fixtures(&default_dir()).unwrap().into_iter().find(|f| f.name == name).unwrap();
    match f.case {
        Case::PosteriorMeans { q_high, q_low, .. } => [q_high, q_low],
        _ => unreachable!(),
    }
}

fn decide_q_hat(args: &[&str]) -> [f64; 2] {
    let o = romi(args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    [row[9].parse().unwrap(), row[10].parse().unwrap()]
}

#[test]
fn decide_final_matches_the_quadrature_oracle() {
    let counts = configs().join("counts_final.json");
    for (design, fixture, tol) in [
        ("ROMI-v1", "posterior_v1_close", 0.01),
        ("ROMI-v1-NC", "posterior_nc_close", 0.01),
        ("ROMI-v2", "posterior_v2_close", 0.015),
    ] {
        let got = decide_q_hat(&["decide", s(&counts), "--design", design, "--format", "csv"]);
        let want = fixture_means(fixture);
        for d in 0..2 {
            assert!((got[d] - want[d]).abs() < tol, "{design}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn decide_is_a_pure_function_of_its_inputs() {
    let counts = configs().join("counts_final.json");
    let a = romi(&["decide", s(&counts)]);
    let b = romi_env(&["decide", s(&counts)], &[("ROMI_THREADS", "4")]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let reseeded = romi(&["decide", s(&counts), "--seed", "2"]);
    assert_ne!(a.stdout, reseeded.stdout, "the sampler seed is an input");
}

#[test]
fn decide_rejects_bad_count_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.json", r#"{"design": "romi_v1", "stage": "final", "indications": []}"#);
    let o = romi(&["decide", s(&empty)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("indications"));
    let typo = write(
        dir.path(),
        "typo.json",
        r#"{"stage": "stage1", "indications": [{"stage1_high": {"x01": 3, "x0O": 1}}]}"#,
    );
    let o = romi(&["decide", s(&typo), "--design", "romi_v1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("indications[0].stage1_high"), "{}", stderr(&o));
    let no_stage = write(
        dir.path(),
        "nostage.json",
        r#"{"indications": [{"stage1_high": {"x01": 3, "x00": 1, "x11": 0, "x10": 0}}]}"#,
    );
    assert_eq!(romi(&["decide", s(&no_stage), "--design", "romi_v1"]).status.code(), Some(1));
}

#[test]
fn calibrate_matches_the_exhaustive_scan() {
    let o = romi(&[
        "calibrate",
        "--floor",
        "0.25",
        "--delta",
        "0.05",
        "--cutoff",
        "0.8",
        "--target",
        "0.1",
        "--n-max",
        "60",
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row: Vec<String> = stdout(&o).lines().nth(1).unwrap().split(',').map(String::from).collect();
    let (n, p) = oracle_calibration(&MonitoringLimits::default(), 0.05, 0.8, 0.1, 1, 60).unwrap();
    assert_eq!(row[4].parse::<u32>().unwrap(), n);
    assert!((row[6].parse::<f64>().unwrap() - p).abs() < 1e-10);

    let o = romi(&["calibrate", "--target", "1.0", "--n-min", "9", "--format", "csv"]);
    assert_eq!(stdout(&o).lines().nth(1).unwrap().split(',').nth(4), Some("9"));

    let o = romi(&["calibrate", "--n-min", "9", "--n-max", "3"]);
    assert_eq!(o.status.code(), Some(1));
    let o = romi(&["calibrate", "--delta", "0", "--cutoff", "0.8", "--n-max", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1..=10"), "{}", stderr(&o));
}

#[test]
fn calibrate_reads_indications_from_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.json",
        r#"{"indications": [{"limits": {"resp_floor": 0.2}}, {"limits": {"resp_floor": 0.3, "c_fut_stage1": 0.7}}]}"#,
    );
    let o = romi(&["calibrate", "--config", s(&cfg), "--delta", "0.05", "--target", "0.15", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("2,0.3,"));
    let (n, _) =
        oracle_calibration(&MonitoringLimits { resp_floor: 0.3, ..Default::default() }, 0.05, 0.7, 0.15, 1, 100)
            .unwrap();
    assert_eq!(lines[2].split(',').nth(4), Some(n.to_string().as_str()));
}

#[test]
fn verify_reports_each_check_and_names_failures() {
    let o = romi(&["verify", "--level", "quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS fixture tail_tox_n14_limit0.4_c0.95"));

    let dir = tempfile::tempdir().unwrap();
    let o = romi(&["verify", "--regenerate", "--dir", s(dir.path())]);
    assert!(o.status.success());
    let path = dir.path().join("tail_tox_n14_limit0.4_c0.95.json");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut f: serde_json::Value = serde_json::from_str(&text).unwrap();
    let b = f["case"]["boundary"].as_u64().unwrap();
    f["case"]["boundary"] = serde_json::json!(b + 1);
    std::fs::write(&path, f.to_string()).unwrap();
    let o = romi(&["verify", "--dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fixture tail_tox_n14_limit0.4_c0.95"), "{}", stderr(&o));
}

#[test]
fn committed_configs_are_valid() {
    for name in ["reference_table.json", "drift.json"] {
        let path = configs().join(name);
        let (cfg, base) = RunConfig::load(Some(&path)).unwrap();
        let plan = cfg.plan(&base, &Overrides::default()).unwrap();
        assert_eq!(plan.reps, 2000, "{name}");
    }
    let (cfg, base) = RunConfig::load(Some(&configs().join("drift.json"))).unwrap();
    let drift = &cfg.plan(&base, &Overrides::default()).unwrap().scenarios[0];
    assert_eq!(drift.drift.resp_high, -0.025);
}
