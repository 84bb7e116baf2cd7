//! Runs the built binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use peakshave::cli::ProjectConfig;
use peakshave::report::TextTable;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_peakshave"));
    c.env_remove("PEAKSHAVE_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated project in `root/project` with `records` transactions.
fn project(root: &Path, records: usize, extra: &[&str]) -> PathBuf {
    let proj = root.join("project");
    let sim = root.join("sim");
    let mut args = vec![
        "--out-dir",
        s(&sim),
        "simulate",
        "--hours",
        "24",
        "--emit-panel",
        s(&proj),
    ];
    let n = records.to_string();
    args.extend(["--records", n.as_str()]);
    args.extend(extra);
    ok(&args);
    proj
}

#[test]
fn missing_blocks_file_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let proj = project(dir.path(), 500, &[]);
    fs::remove_file(proj.join("blocks.csv")).unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&["--out-dir", s(&out_dir), "ingest", "--config", s(&proj.join("project.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("blocks.csv"), "{err}");
    assert!(!out_dir.join("panel.json").exists());
}

#[test]
fn zero_hours_is_a_usage_error() {
    let out = run(&["simulate", "--hours", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_trajectory_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["--out-dir", s(d), "simulate", "--hours", "3", "--seed", "17"]);
    }
    assert_eq!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("simulation.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 17);
}

#[test]
fn default_scenario_summary_is_peaked() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["--out-dir", s(dir.path()), "simulate"]);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("simulation.json")).unwrap()).unwrap();
    let inside = summary["mean_base_fee_in_window_gwei"].as_f64().unwrap();
    let outside = summary["mean_base_fee_outside_gwei"].as_f64().unwrap();
    assert!(inside > outside);
}

#[test]
fn bad_rows_land_in_the_rejects_report() {
    let dir = tempfile::tempdir().unwrap();
    let proj = project(dir.path(), 500, &[]);
    let tx = proj.join("tx_alpha.csv");
    let text = fs::read_to_string(&tx).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let kept = lines.len() - 1;
    for i in [1, 5, 9] {
        let mut cells: Vec<&str> = lines[i].split(',').collect();
        cells[2] = "not-a-time";
        lines[i] = cells.join(",");
    }
    fs::write(&tx, lines.join("\n") + "\n").unwrap();

    let out_dir = dir.path().join("out");
    let stdout = ok(&["--out-dir", s(&out_dir), "ingest", "--config", s(&proj.join("project.json"))]);
    let rejects = fs::read_to_string(out_dir.join("rejects.csv")).unwrap();
    assert_eq!(rejects.lines().count(), 1 + 3, "{rejects}");
    assert!(rejects.lines().skip(1).all(|l| l.starts_with("alpha,")));
    let counts = TextTable::parse(&stdout).unwrap();
    let alpha = counts.rows.iter().find(|r| r[0] == "alpha").unwrap();
    assert_eq!(alpha[3].parse::<usize>().unwrap(), kept - 3);
    let total = counts.rows.last().unwrap();
    assert_eq!(total[3], "497");
}

#[test]
fn empty_panel_fit_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let proj = project(dir.path(), 200, &[]);
    let cfg: ProjectConfig = serde_json::from_slice(&fs::read(proj.join("project.json")).unwrap()).unwrap();
    for f in &cfg.firms {
        let path = proj.join(&f.tx_file);
        let header = fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
        fs::write(&path, header + "\n").unwrap();
    }
    let out_dir = dir.path().join("out");
    ok(&["--out-dir", s(&out_dir), "ingest", "--config", s(&proj.join("project.json"))]);
    let out = run(&["--out-dir", s(&out_dir), "fit", "--model", "base"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Ingests and fits a project; returns the output directory.
fn fitted(root: &Path, records: usize, extra: &[&str]) -> PathBuf {
    let proj = project(root, records, extra);
    let out_dir = root.join("out");
    ok(&["--out-dir", s(&out_dir), "ingest", "--config", s(&proj.join("project.json"))]);
    ok(&["--out-dir", s(&out_dir), "fit", "--model", "base"]);
    out_dir
}

#[test]
fn coefficient_table_stars_and_fullness_row() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = fitted(dir.path(), 20_000, &["--pass-through", "0", "--premium", "0.05"]);
    let table = TextTable::parse(&fs::read_to_string(out_dir.join("coefficients_base.txt")).unwrap()).unwrap();
    let sig = table.column("base sig").unwrap();
    let mut off_starred = 0;
    for h in 0..23u8 {
        let row = table.rows.iter().find(|r| r[0] == format!("hour {h}")).unwrap();
        if (11..=18).contains(&h) {
            assert_eq!(row[sig], "***", "hour {h}");
        } else if row[sig] != "---" {
            off_starred += 1;
        }
    }
    assert!(off_starred <= 3, "{off_starred} off-window hours starred");

    let stdout = ok(&["--out-dir", s(&out_dir), "fit", "--model", "fullness"]);
    assert!(stdout.contains("delta (phi_br)"));
    let fit: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("fit_fullness.json")).unwrap()).unwrap();
    assert_eq!(fit["fit_id"], "fullness-n20000");
}

#[test]
fn recommend_regimes_and_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = fitted(dir.path(), 5_000, &[]);
    let o = s(&out_dir);
    let one = ok(&["--out-dir", o, "recommend", "--gas", "high", "--deferrable"]);
    assert!(one.contains("regime: I\n"), "{one}");
    assert!(one.contains("SCHEDULE_OFF_PEAK"));
    let rec: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("recommendation.json")).unwrap()).unwrap();
    assert!(!rec["recommended_hours"].as_array().unwrap().is_empty());
    assert_eq!(rec["decision"], "DEFER");

    let four = ok(&["--out-dir", o, "recommend", "--deferrable=false", "--gas", "low"]);
    assert!(four.contains("regime: IV") && four.contains("ACCEPT_MARKET"), "{four}");

    let patient = ok(&["--out-dir", o, "recommend", "--gas", "high", "--deferrable", "--kappa", "100"]);
    assert!(patient.contains("regime: I\n") && patient.contains("decision: SubmitNow"), "{patient}");

    let bad = run(&["--out-dir", o, "recommend", "--gas", "high", "--deadline-hours", "3"]);
    assert_eq!(bad.status.code(), Some(2));
    let bad_gas = run(&["--out-dir", o, "recommend", "--gas", "medium"]);
    assert_eq!(bad_gas.status.code(), Some(2));
}

#[test]
fn single_firm_scores_to_one_row_and_report_names_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let proj = project(dir.path(), 2_000, &[]);
    let cfg_path = proj.join("project.json");
    let mut cfg: serde_json::Value = serde_json::from_slice(&fs::read(&cfg_path).unwrap()).unwrap();
    cfg["firms"].as_array_mut().unwrap().truncate(1);
    cfg["permutation"]["replications"] = 200.into();
    fs::write(&cfg_path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();

    let out_dir = dir.path().join("out");
    let o = s(&out_dir);
    let c = s(&cfg_path);
    ok(&["--out-dir", o, "ingest", "--config", c]);
    ok(&["--out-dir", o, "fit", "--model", "base"]);

    let missing = run(&["--out-dir", o, "report", "--config", c]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("fit_fullness.json"));

    ok(&["--out-dir", o, "fit", "--model", "fullness"]);
    ok(&["--out-dir", o, "fit", "--model", "fullness", "--by-firm"]);
    let first = ok(&["--out-dir", o, "score", "--config", c]);
    let table = TextTable::parse(&first).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0][0], "alpha");
    let second = ok(&["--out-dir", o, "score", "--config", c]);
    assert_eq!(first, second);

    ok(&["--out-dir", o, "report", "--config", c]);
    let report = out_dir.join("report");
    let mut names: Vec<String> = fs::read_dir(&report).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 7, "{names:?}");
    let floors = TextTable::parse(&fs::read_to_string(report.join("floors.txt")).unwrap()).unwrap();
    assert_eq!(floors.headers, ["Firm", "N", "h*", "mean gas h*", "C_actual", "C_cf", "Floor", "Floor%", "phi h*"]);
    let curve = fs::read_to_string(report.join("forward_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 25);
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .env("PEAKSHAVE_OUT_DIR", dir.path())
        .args(["simulate", "--hours", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("trajectory.csv").is_file());
}

#[test]
fn config_output_dir_is_shared_by_ingest_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let proj = project(dir.path(), 500, &[]);
    let c = proj.join("project.json");
    ok(&["ingest", "--config", s(&c)]);
    ok(&["fit", "--config", s(&c), "--model", "base"]);
    assert!(proj.join("out").join("fit_base.json").is_file());
}
