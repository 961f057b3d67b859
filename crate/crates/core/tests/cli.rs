use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn fairdyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairdyn")).args(args).output().unwrap()
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    fairdyn(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn bundled() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = fs::read_dir(scenario("."))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    paths.sort();
    paths
}

#[test]
fn table_scenario_prints_visited_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&scenario("uniform_table1.cfg"), dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("Simple [(17,17)]"), "{text}");
    assert!(text.contains("StatPar [(-1.02,17)]"), "{text}");
    assert!(dir.path().join("uniform_table1_visited.json").exists());
}

#[test]
fn fractions_not_summing_to_one_are_rejected_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("uniform_table1.cfg")).unwrap();
    let bad = text.replacen("g1 = 0.2", "g1 = 0.3", 1);
    assert_ne!(text, bad);
    let path = dir.path().join("bad.cfg");
    fs::write(&path, bad).unwrap();
    for cmd in ["validate", "run"] {
        let o = fairdyn(&[cmd, path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{cmd}");
        assert!(stderr(&o).contains("group_a.g1"), "{}", stderr(&o));
    }
}

#[test]
fn missing_config_and_bad_arguments_exit_with_validation_code() {
    let o = fairdyn(&["validate", "/nonexistent/scenario.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = scenario("uniform_oneshot.cfg");
    let o = fairdyn(&["oneshot", cfg.to_str().unwrap(), "--ratio", "-1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_accepts_every_bundled_scenario() {
    for p in bundled() {
        let o = fairdyn(&["validate", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
    }
}

#[test]
fn sweep_rows_follow_the_grid_and_keep_the_arrival_share() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&scenario("eqlos_sweep.cfg"), dir.path(), &["--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut reader = csv::Reader::from_path(dir.path().join("eqlos_sweep_eqlos_sweep.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, fairdyn::output::SWEEP_COLUMNS);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 100);
    let mut previous = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for row in &rows {
        let v = |i: usize| row[i].parse::<f64>().unwrap();
        let (ba, bb) = (v(0), v(1));
        assert!((ba, bb) > previous, "rows out of grid order");
        previous = (ba, bb);
        assert!((v(2) - ba / (ba + bb)).abs() < 1e-9, "{row:?}");
        assert_eq!(&row[7], "true");
    }
}

#[test]
fn oneshot_prints_decision_json() {
    let cfg = scenario("uniform_oneshot.cfg");
    let o = fairdyn(&["oneshot", cfg.to_str().unwrap(), "--ratio", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["theta_a"].is_f64() && v["theta_b"].is_f64(), "{v}");
}

#[test]
fn unwritable_output_directory_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = run(&scenario("uniform_table1.cfg"), &blocker.join("out"), &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn files_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn bundled_scenarios_rerun_byte_identically() {
    for p in bundled() {
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        let a = run(&p, first.path(), &["--jobs", "1"]);
        let b = run(&p, second.path(), &["--jobs", "3"]);
        assert!(a.status.success(), "{}: {}", p.display(), stderr(&a));
        assert!(b.status.success(), "{}: {}", p.display(), stderr(&b));
        assert_eq!(stdout(&a), stdout(&b), "{}", p.display());
        let (fa, fb) = (files_of(first.path()), files_of(second.path()));
        assert!(!fa.is_empty(), "{} wrote nothing", p.display());
        assert!(fa == fb, "{} outputs differ between runs", p.display());
    }
}

#[test]
fn seed_override_changes_random_runs_only_through_the_seed() {
    let cfg = scenario("random_arrivals.cfg");
    let (x, y, z) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run(&cfg, x.path(), &["--seed", "11"]).status.success());
    assert!(run(&cfg, y.path(), &["--seed", "11"]).status.success());
    assert!(run(&cfg, z.path(), &["--seed", "12"]).status.success());
    assert!(files_of(x.path()) == files_of(y.path()));
    assert!(files_of(x.path()) != files_of(z.path()));
}
