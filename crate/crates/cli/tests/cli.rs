use std::path::Path;
use std::process::{Command, Output};

fn flockcp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flockcp"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

#[test]
fn threshold_above_and_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = flockcp(dir.path(), &["threshold", "-d", "1", "-N", "3", "--lambda", "1", "--phi", "1"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let m: f64 = field(&out, "m").parse().unwrap();
    assert!((m - 1.2).abs() < 1e-12);
    assert_eq!(field(&out, "verdict"), "SUPERCRITICAL-POSSIBLE");

    let o = flockcp(dir.path(), &["threshold", "-d", "1", "-N", "4", "--lambda", "1", "--phi", "1"]);
    let out = stdout(&o);
    let m: f64 = field(&out, "m").parse().unwrap();
    assert!((m - 1.0).abs() < 1e-12);
    assert_eq!(field(&out, "verdict"), "EXTINCT");
}

#[test]
fn threshold_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = flockcp(dir.path(), &["threshold", "-d", "2", "-N", "1", "--lambda", "0.25", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    // N = 1 leaves only the 2d lambda factor.
    assert!((v["m"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn invalid_params_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["threshold", "-N", "0"][..],
        &["threshold", "--lambda", "-1"],
        &["threshold", "--phi", "-2"],
        &["simulate", "--init", "random"],
        &["bogus"],
    ] {
        let o = flockcp(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn no_births_dies_in_one_event() {
    let dir = tempfile::tempdir().unwrap();
    let o = flockcp(
        dir.path(),
        &["simulate", "--lambda", "0", "--init", "single:1", "--log-events", "ev.tsv"],
    );
    assert!(o.status.success());
    assert_eq!(field(&stdout(&o), "outcome"), "EXTINCT");
    let log = std::fs::read_to_string(dir.path().join("ev.tsv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 1);
    let cols: Vec<&str> = lines[0].split('\t').collect();
    assert_eq!(cols[1..], ["0", "DISASTER", "0"]);
}

#[test]
fn event_log_matches_event_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = flockcp(
        dir.path(),
        &["simulate", "-N", "3", "--lambda", "1.5", "--t-max", "20", "--seed", "4", "--log-events", "ev.tsv"],
    );
    let out = stdout(&o);
    let events: usize = field(&out, "events").parse().unwrap();
    let log = std::fs::read_to_string(dir.path().join("ev.tsv")).unwrap();
    assert_eq!(log.lines().count(), events);
    let mut last = 0.0;
    for line in log.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 4);
        let t: f64 = cols[0].parse().unwrap();
        assert!(t >= last && t <= 20.0);
        last = t;
        let kind = cols[2];
        assert!(kind == "INTERNAL_BIRTH" || kind == "DISASTER" || kind.starts_with("EXTERNAL_BIRTH("), "{line}");
    }
}

#[test]
fn branching_outcome_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let o = flockcp(
            dir.path(),
            &["simulate", "--process", "branching", "-N", "2", "--lambda", "2", "--init", "single:2", "--cap", "50", "--seed", &seed.to_string()],
        );
        assert!(o.status.success());
        let outcome = field(&stdout(&o), "outcome").to_string();
        assert!(["EXTINCT", "CENSORED", "CAP_EXCEEDED"].contains(&outcome.as_str()), "{outcome}");
    }
}

#[test]
fn couple_check_reports_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let o = flockcp(dir.path(), &["couple-check", "--n1", "2", "--n2", "5", "--seeds", "100"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 violations"));

    let o = flockcp(
        dir.path(),
        &["couple-check", "--against-inf", "-N", "3", "--phi", "1", "--lambda", "2", "--seeds", "50", "--out", "c.csv"],
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn subcritical_survival_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let o = flockcp(
        dir.path(),
        &["survival", "-d", "1", "-N", "1", "--lambda", "0.4", "--trials", "1000", "--out", "s.csv"],
    );
    assert!(o.status.success());
    let rows = flockcp_core::experiments::read_table(std::fs::File::open(dir.path().join("s.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].point <= 0.01);
    assert_eq!(rows[0].n_trials, 1000);
    assert!(dir.path().join("s.csv.manifest.json").exists());
}

#[test]
fn flock_size_search_fails_below_the_contact_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = flockcp(
        dir.path(),
        &["critical", "--kind", "N", "-d", "1", "--lambda", "1", "--phi", "1", "--trials", "200"],
    );
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("[1, 4]"), "{err}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "d = 1\nN = 3\nlambda = 5.0\nphi = 1\nseed = 2\n").unwrap();
    let o = flockcp(dir.path(), &["--config", "run.toml", "threshold", "--lambda", "1"]);
    let m: f64 = field(&stdout(&o), "m").parse().unwrap();
    assert!((m - 1.2).abs() < 1e-12);

    std::fs::write(dir.path().join("bad.toml"), "lamda = 1.0\n").unwrap();
    let o = flockcp(dir.path(), &["--config", "bad.toml", "threshold"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_writes_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = flockcp(
        dir.path(),
        &["sweep", "--Ns", "1,2", "--lambdas", "0,2", "--trials", "50", "--t-max", "10", "--out", "grid.csv"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), flockcp_core::experiments::CSV_HEADER.join(","));
    let rows = flockcp_core::experiments::read_table(std::fs::File::open(dir.path().join("grid.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows.iter().filter(|r| r.lambda == 0.0) {
        assert_eq!(r.surviving, 0);
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("grid.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "sweep");
}

#[test]
fn density_refuses_supercritical_params() {
    let dir = tempfile::tempdir().unwrap();
    let o = flockcp(dir.path(), &["density", "-N", "2", "--lambda", "1", "--phi", "1"]);
    assert_eq!(o.status.code(), Some(1));
}
