//! The `layertime` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use layertime::artifacts::{read_curve, read_log, read_summary, LOG_COLUMNS, WALL_CLOCK_COLUMNS};
use layertime::config::RunConfig;

const SMALL: &str = "\
network.width = 3
network.layers = 8
nested.levels = 2
nested.n_coarsest = 4
nested.iterations = 4, 3
data.samples = 80
split.train = 50
split.validation = 30
run.calibration_iters = 3
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_layertime"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.conf");
    std::fs::write(&p, text).unwrap();
    p
}

fn run_cli(args: &[&str]) -> Output {
    bin().args(args).env("LAYERTIME_THREADS", "2").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// log.csv rows without the wall-clock columns.
fn deterministic_columns(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let keep: Vec<usize> = (0..LOG_COLUMNS.len())
        .filter(|&j| !WALL_CLOCK_COLUMNS.contains(&LOG_COLUMNS[j]))
        .collect();
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&j| f[j].to_string()).collect()
        })
        .collect()
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = run_cli(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["log.csv", "curve.csv", "summary.json", "controls.bin"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let log = read_log(&out.join("log.csv")).unwrap();
    assert_eq!(log.len(), 7);
    let curve = read_curve(&out.join("curve.csv")).unwrap();
    assert_eq!(curve.len(), log.len());
    assert!(curve.windows(2).all(|w| w[1].work_units > w[0].work_units));
    assert!(curve.windows(2).all(|w| w[1].level <= w[0].level));

    let summary = read_summary(&out.join("summary.json")).unwrap();
    assert!(summary.calibrated);
    assert!(summary.seconds_per_unit > 0.0);
    summary.config.validate().unwrap();
    let reread: RunConfig = serde_json::from_str(&serde_json::to_string(&summary.config).unwrap()).unwrap();
    assert_eq!(reread, summary.config);

    // regenerate the curve from the log
    let again = dir.path().join("again.csv");
    let o = run_cli(&["curve", "--log", out.join("log.csv").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(&again).unwrap(),
        std::fs::read_to_string(out.join("curve.csv")).unwrap()
    );
}

#[test]
fn repeated_runs_have_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut logs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run_cli(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "5",
            "--seconds-per-unit",
            "0.001",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        logs.push(deterministic_columns(&out.join("log.csv")));
    }
    assert_eq!(logs[0], logs[1]);
}

#[test]
fn non_nested_mode_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}optimizer.non_nested_iterations = 5\n"));
    let out = dir.path().join("out");
    let o = run_cli(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--mode",
        "non-nested",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = read_log(&out.join("log.csv")).unwrap();
    assert_eq!(log.len(), 5);
    assert!(log.iter().all(|r| r.level == 0 && r.layers == 8));
}

#[test]
fn config_errors_exit_with_status_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("data.source = csv\n", "data.path"),
        ("hyper.gama_tik = 1e-5\n", "hyper.gama_tik"),
        ("nested.n_coarsest = 6\n", "nested.n_coarsest"),
    ];
    for (text, field) in cases {
        let cfg = write_config(dir.path(), &format!("{SMALL}{text}"));
        let o = run_cli(&["run", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(stderr(&o).contains(field), "{}", stderr(&o));
    }
    let o = run_cli(&["run", "--config", dir.path().join("absent.conf").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_status_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_cli(&["curve", "--log", dir.path().join("none.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let empty = dir.path().join("log.csv");
    std::fs::write(&empty, LOG_COLUMNS.join(",") + "\n").unwrap();
    let o = run_cli(&["curve", "--log", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no records"));
}

#[test]
fn trace_file_lines() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.txt");
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}run.trace = {}\nrun.seconds_per_unit = 0.01\n", trace.display()),
    );
    let o = run_cli(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(!lines.is_empty());
    for l in lines {
        let f: Vec<&str> = l.split(", ").collect();
        assert_eq!(f.len(), 4, "{l}");
        let levels: usize = f[0].parse().unwrap();
        assert!((1..=3).contains(&levels));
        let _: usize = f[1].parse().unwrap();
        let abs: f64 = f[2].parse().unwrap();
        let rel: f64 = f[3].parse().unwrap();
        assert!(abs >= 0.0 && rel >= 0.0);
    }
}

fn parse_opt(s: &str) -> Option<f64> {
    (!s.is_empty()).then(|| s.parse().unwrap())
}

#[test]
fn sweep_tables_recompute_from_raw() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}run.seconds_per_unit = 0.01\n"));
    let out = dir.path().join("sweep");
    let o = run_cli(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "1,2,3",
        "--grid",
        "hyper.w_i=0,1e-6",
        "hyper.gamma_tik=1e-5,1e-7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("cfg3_seed2").join("log.csv").is_file());

    let mut raw = csv::Reader::from_path(out.join("sweep_raw.csv")).unwrap();
    let accs: Vec<(String, f64)> = raw
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[3].parse().unwrap())
        })
        .collect();
    assert_eq!(accs.len(), 12);

    // independent recomputation of the pooled row
    let v: Vec<f64> = accs.iter().map(|a| a.1).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    let median = 0.5 * (sorted[5] + sorted[6]);

    let mut summary = csv::Reader::from_path(out.join("sweep_summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5);
    let pooled = rows.last().unwrap();
    assert_eq!(&pooled[0], "pooled");
    assert_eq!(&pooled[1], "12");
    assert!((parse_opt(&pooled[3]).unwrap() - mean).abs() < 1e-12);
    assert!((parse_opt(&pooled[4]).unwrap() - median).abs() < 1e-12);
    assert_eq!(parse_opt(&pooled[5]).unwrap(), sorted[11]);
    assert_eq!(parse_opt(&pooled[6]).unwrap(), sorted[0]);
    assert!((parse_opt(&pooled[7]).unwrap() - sd).abs() < 1e-12);
    for row in &rows {
        let (mean, median, max, min) = (
            parse_opt(&row[3]).unwrap(),
            parse_opt(&row[4]).unwrap(),
            parse_opt(&row[5]).unwrap(),
            parse_opt(&row[6]).unwrap(),
        );
        assert!(min <= median && median <= max && min <= mean && mean <= max);
    }
    for (label, row) in ["hyper.w_i=0;hyper.gamma_tik=1e-5"].iter().zip(&rows) {
        assert_eq!(&row[0], *label);
        assert_eq!(&row[1], "3");
    }
}

#[test]
fn sweep_with_every_run_failing_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}run.seconds_per_unit = 0.01\n"));
    let out = dir.path().join("sweep");
    // every cell breaks the layer arithmetic
    let o = run_cli(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "1,2",
        "--grid",
        "network.layers=12,20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("sweep_raw.csv")).unwrap();
    assert_eq!(text.matches(",failed,").count(), 4);
}

#[test]
fn long_schedule_peaks_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "network.width = 8\nnetwork.layers = 64\nnested.levels = 3\nnested.n_coarsest = 16\n\
         nested.iterations = 200, 125, 75\nrun.seconds_per_unit = 0.1\n",
    );
    let out = dir.path().join("out");
    let o = bin()
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let curve = read_curve(&out.join("curve.csv")).unwrap();
    assert_eq!(curve.len(), 400);
    assert!(curve.windows(2).all(|w| w[1].level <= w[0].level));
    assert_eq!(curve[0].level, 2);
    assert_eq!(curve[399].level, 0);
}
