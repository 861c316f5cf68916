use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use evlot::cli::{run_cli, EXIT_INPUT, EXIT_OK, EXIT_USAGE};
use evlot::ingest::{parse_sessions, ModelSet};

fn evlot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evlot"))
}

fn cli(args: &[&str]) -> i32 {
    run_cli(std::iter::once("evlot").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn one_day_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("case.toml");
    fs::write(
        &path,
        format!(
            "label = \"case\"\nw1 = 10\nw2 = 1\ntransformer_kw = 150\nforced_initial = \"none\"\n\
             start = 2019-06-17\nend = 2019-06-17\nrng_seed = 7\n{extra}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["simulate", "--config", "x.toml"]), EXIT_USAGE);
    assert_eq!(cli(&["--help"]), EXIT_OK);
    let out = evlot().arg("--version").output().unwrap();
    assert!(out.status.success());
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "label = \"bad\"\nw1 = -3\nw2 = 1\ntransformer_kw = 150\nforced_initial = \"none\"\nstart = 2019-06-17\nend = 2019-06-17\nrng_seed = 1\n").unwrap();
    let out = evlot()
        .args(["simulate", "--config", s(&path), "--synthetic-seed", "1", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`w1`"), "{err}");

    fs::write(&path, "w1 = 10\nbogus_key = 1\n").unwrap();
    let out = evlot()
        .args(["simulate", "--config", s(&path), "--synthetic-seed", "1", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));
}

#[test]
fn missing_trace_source_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_day_config(dir.path(), "");
    let out = dir.path().join("o");
    assert_eq!(cli(&["-q", "simulate", "--config", s(&cfg), "--out", s(&out)]), EXIT_INPUT);
}

#[test]
fn build_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let model = dir.path().join("model.json");
    assert_eq!(
        cli(&["-q", "generate-trace", "--out", s(&trace), "--start", "2019-06-03", "--end", "2019-06-30", "--seed", "4"]),
        EXIT_OK
    );
    assert_eq!(cli(&["-q", "build-model", "--sessions", s(&trace), "--out", s(&model)]), EXIT_OK);
    let loaded = ModelSet::load(&model).unwrap();
    let expected = ModelSet::from_sessions(&parse_sessions(&trace).unwrap().sessions);
    assert_eq!(loaded, expected);
    assert!(loaded.block(0, 4).mean_arrivals_per_day > 0.0);
    assert!(!dir.path().join("model.rejects.csv").exists());
}

#[test]
fn rejected_rows_are_reported_and_strict_fails() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    fs::write(
        &csv,
        "session_id,arrival,departure,energy_kwh\n\
         a,2019-06-17 09:00:00,2019-06-17 12:00:00,3.3\n\
         d,2019-06-17 08:00:00,2019-06-17 16:00:00,9.0\n\
         b,2019-06-17 10:00:00,2019-06-17 09:00:00,1.0\n\
         c,not a date,2019-06-17 09:00:00,1.0\n",
    )
    .unwrap();
    let model = dir.path().join("m.json");
    assert_eq!(cli(&["-q", "build-model", "--sessions", s(&csv), "--out", s(&model)]), EXIT_OK);
    assert!(ModelSet::load(&model).unwrap().block(0, 4).mean_arrivals_per_day > 0.0);
    let rejects = fs::read_to_string(dir.path().join("m.rejects.csv")).unwrap();
    assert_eq!(rejects.lines().count(), 3, "{rejects}");
    assert_eq!(
        cli(&["-q", "build-model", "--sessions", s(&csv), "--out", s(&model), "--strict"]),
        EXIT_INPUT
    );
}

#[test]
fn empty_session_file_gives_zero_model() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(&csv, "session_id,arrival,departure,energy_kwh\n").unwrap();
    let model = dir.path().join("m.json");
    assert_eq!(cli(&["-q", "build-model", "--sessions", s(&csv), "--out", s(&model)]), EXIT_OK);
    let m = ModelSet::load(&model).unwrap();
    assert!((0..7).all(|d| m.stats(d).iter().all(|b| b.mean_arrivals_per_day == 0.0)));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_day_config(dir.path(), "[synthetic]\nseed = 2\n");
    let run = |name: &str| {
        let out = dir.path().join(name);
        assert_eq!(
            cli(&["-q", "simulate", "--config", s(&cfg), "--out", s(&out), "--snapshot-slots", "40"]),
            EXIT_OK
        );
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in [
        "metrics.csv",
        "config.toml",
        "case_timeseries.csv",
        "case_sessions.csv",
        "case_snapshots.csv",
        "baseline_timeseries.csv",
        "baseline_sessions.csv",
    ] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(x == y, "{f} differs");
    }
    assert!(a.join("case_solver_timing.csv").exists());
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let report_csv = dir.path().join("table.csv");
    assert_eq!(cli(&["-q", "report", s(&a.join("metrics.csv")), "--out", s(&report_csv)]), EXIT_OK);
    let table = fs::read_to_string(&report_csv).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("Status Quo"));
}

#[test]
fn different_seed_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_day_config(dir.path(), "");
    for (name, seed) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(name);
        assert_eq!(
            cli(&["-q", "simulate", "--config", s(&cfg), "--synthetic-seed", seed, "--out", s(&out)]),
            EXIT_OK
        );
    }
    let a = fs::read(dir.path().join("a/baseline_sessions.csv")).unwrap();
    let b = fs::read(dir.path().join("b/baseline_sessions.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn report_without_baseline_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    fs::write(&path, "label,w1,w2,transformer_kw,forced_initial,total_energy_kwh,energy_cost_usd,demand_charge_usd,peak_kw,midday_energy_kwh,sessions,rejected_arrivals,feasible,infeasible_steps,first_infeasible\n").unwrap();
    assert_eq!(cli(&["-q", "report", s(&path)]), EXIT_INPUT);
    assert_eq!(cli(&["-q", "report", s(&dir.path().join("none.csv"))]), EXIT_INPUT);
}

#[test]
fn sweep_writes_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = one_day_config(dir.path(), "[synthetic]\nseed = 1\n");
    let out = dir.path().join("sw");
    let args = [
        "-q", "sweep", "--config", s(&cfg), "--out", s(&out), "--capacities", "20,250", "--rates", "1", "--jobs", "2",
    ];
    assert_eq!(cli(&args), EXIT_OK);
    let grid = out.join("feasibility.csv");
    let first = fs::read_to_string(&grid).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 3, "{first}");
    assert!(lines[1].starts_with("20.0,1,false,"), "{first}");
    assert!(lines[2].starts_with("250.0,1,true,"), "{first}");
    let stamp = fs::metadata(&grid).unwrap().modified().unwrap();
    // a rerun finds both points on file and only rewrites the sorted grid
    assert_eq!(cli(&args), EXIT_OK);
    assert_eq!(fs::read_to_string(&grid).unwrap(), first);
    assert!(fs::metadata(&grid).unwrap().modified().unwrap() >= stamp);
    assert_eq!(cli(&["-q", "sweep", "--config", s(&cfg), "--out", s(&out), "--rates", "fast"]), EXIT_INPUT);
}
