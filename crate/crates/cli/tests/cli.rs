use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rate_alloc_core::dc_program::dump::ProblemDump;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rate-alloc"))
}

fn run(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = bin();
    cmd.current_dir(dir);
    if let Some(text) = config {
        let path = dir.join("run.json");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(&path);
    }
    cmd.arg("--out").arg(dir.join("out"));
    cmd.args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(Result::unwrap).collect()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

const SMALL_HEAT: &str = r#"{"scenario": "heat", "heat": {"nodes": 6}}"#;

#[test]
fn solve_heat_writes_three_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--beta", "0.1", "solve"], Some(SMALL_HEAT), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert_eq!(header(&out.join("allocation.csv")), "t,sensor,delta,variance,sensitivity,active");
    assert_eq!(header(&out.join("rates.csv")), "t,sensor,mi_bits,empirical_bits");
    assert!(header(&out.join("ccp_trace.csv")).starts_with("iteration,objective,support_size"));
    assert_eq!(csv_rows(&out.join("allocation.csv")).len(), 6);
    assert!(!csv_rows(&out.join("ccp_trace.csv")).is_empty());
}

#[test]
fn zero_budget_exits_with_two_and_hint() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--scenario", "scalar", "--beta", "0", "solve"], None, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("minimum achievable MSE"), "{}", stderr(&o));
}

#[test]
fn malformed_json_exits_with_one_and_position() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve"], Some("{\n  \"beta\": 1.0,\n  \"scenario\": heat\n}"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3 column"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve"], Some(r#"{"scenario": "scalar", "tolerence": 1e-6}"#), dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tolerence"), "{}", stderr(&o));
}

#[test]
fn zero_support_simulation_is_open_loop() {
    let dir = tempfile::tempdir().unwrap();
    let alloc = dir.path().join("zero.csv");
    fs::write(&alloc, "t,sensor,delta\n1,1,0\n").unwrap();
    let o = run(&["--scenario", "scalar", "simulate", "--allocation", alloc.to_str().unwrap(), "--steps", "40"], None, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    let rates = csv_rows(&out.join("empirical_rates.csv"));
    assert_eq!(rates.len(), 1);
    assert_eq!(rates[0][2].parse::<f64>().unwrap(), 0.0);
    // default scalar source: a = 0.9, f = 1, P_1 = 1
    let mut p = 1.0;
    for row in csv_rows(&out.join("mse.csv")) {
        assert!((row[2].parse::<f64>().unwrap() - p).abs() < 1e-12);
        p = 0.81 * p + 1.0;
    }
}

#[test]
fn simulate_is_deterministic_and_heat_rates_sit_in_the_sandwich() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--beta", "1", "solve"], Some(SMALL_HEAT), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    let sim = |dir: &Path| run(&["--seed", "7", "simulate", "--steps", "4000"], Some(SMALL_HEAT), dir);
    assert_eq!(sim(dir.path()).status.code(), Some(0));
    let first = fs::read(out.join("empirical_rates.csv")).unwrap();
    let first_mse = fs::read(out.join("mse.csv")).unwrap();
    assert_eq!(sim(dir.path()).status.code(), Some(0));
    assert_eq!(first, fs::read(out.join("empirical_rates.csv")).unwrap());
    assert_eq!(first_mse, fs::read(out.join("mse.csv")).unwrap());
    for row in csv_rows(&out.join("empirical_rates.csv")) {
        assert_eq!(&row[5], "1", "sensor outside the rate sandwich: {row:?}");
    }
}

#[test]
fn sweep_deduplicates_and_is_thread_count_independent() {
    let config = r#"{"scenario": "heat", "heat": {"nodes": 6}, "beta_grid": [220, 1, 10, 100, 10]}"#;
    let dir = tempfile::tempdir().unwrap();
    let one = {
        let mut cmd = bin();
        fs::write(dir.path().join("run.json"), config).unwrap();
        cmd.env("RATE_ALLOC_THREADS", "1").arg("--config").arg(dir.path().join("run.json"));
        cmd.arg("--out").arg(dir.path().join("a")).arg("sweep").output().unwrap()
    };
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    let rows = csv_rows(&dir.path().join("a/support_vs_beta.csv"));
    let betas: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(betas, vec![1.0, 10.0, 100.0, 220.0]);
    let support: Vec<usize> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(support.windows(2).all(|w| w[1] <= w[0]), "{support:?}");

    let mut cmd = bin();
    cmd.env("RATE_ALLOC_THREADS", "4").arg("--config").arg(dir.path().join("run.json"));
    let four = cmd.arg("--out").arg(dir.path().join("b")).arg("sweep").output().unwrap();
    assert_eq!(four.status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("a/support_vs_beta.csv")).unwrap(), fs::read(dir.path().join("b/support_vs_beta.csv")).unwrap());
}

#[test]
fn empty_sweep_grid_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep"], Some(r#"{"scenario": "scalar"}"#), dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["sweep", "--sweep", "1:2:0"], Some(r#"{"scenario": "scalar"}"#), dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_flag_marks_infeasible_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--sweep", "0:2:3"], Some(r#"{"scenario": "scalar"}"#), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("out/support_vs_beta.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][4], "infeasible");
    assert_eq!(&rows[1][1], "1");
}

#[test]
fn dumps_round_trip_with_their_solutions() {
    let config = r#"{"scenario": "custom", "horizon": {"finite": 2}, "dump_subproblems": true,
        "system": {"a": [[0.9, 0.1], [0, 0.8]], "f": [[1, 0], [0, 1]], "p_init": [[1, 0], [0, 1]],
                   "c": [[1, 0], [0, 1], [1, 1]]}}"#;
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--beta", "1.5", "solve"], Some(config), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dumps = dir.path().join("out/dumps");
    let mut names: Vec<_> = fs::read_dir(&dumps).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let trace = csv_rows(&dir.path().join("out/ccp_trace.csv"));
    assert_eq!(names.len(), trace.len());
    assert_eq!(names[0], "iter_001.json");
    for (name, rec) in names.iter().zip(&trace) {
        let dump = ProblemDump::read_json(fs::File::open(dumps.join(name)).unwrap()).unwrap();
        let x = dump.solution.as_ref().expect("dump carries its solution").x.clone();
        let f: f64 = rec[1].parse().unwrap();
        assert!((dump.objective_at(&x) - f).abs() <= 1e-9 * f.abs().max(1.0), "{name}");
    }
}
