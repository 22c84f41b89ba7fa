use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use slos::io::{write_dataset, FunctionalDataset, Table};
use slos::simulation::{replicate_data, uniform_grid, Case, CovariateModel, ScenarioConfig};

fn slos() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slos"))
}

fn write_case(dir: &Path, case: Case, n: usize, seed: u64) -> PathBuf {
    let scenario = ScenarioConfig::new(case, n, 1, seed);
    let model = CovariateModel::new(uniform_grid(51).unwrap()).unwrap();
    let (train, _) = replicate_data(&scenario, &model, 0).unwrap();
    let ds = FunctionalDataset {
        data: train,
        labels: Some((0..n).map(|i| format!("s{i}")).collect()),
        response_name: "y".into(),
    };
    let path = dir.join("data.csv");
    write_dataset(&ds, fs::File::create(&path).unwrap()).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fit_args(data: &Path, out: &Path) -> Vec<String> {
    [
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--response",
        "y",
        "--id-column",
        "id",
        "--num-subintervals",
        "20",
        "--out-dir",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn fit_writes_all_outputs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_case(dir.path(), Case::II, 120, 3);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(
        slos()
            .args(fit_args(&data, &a))
            .args(["--no-timestamp", "--threads", "1"]),
    );
    run_ok(
        slos()
            .args(fit_args(&data, &b))
            .args(["--no-timestamp", "--threads", "3"]),
    );
    for name in [
        "beta_hat.csv",
        "coefficients.csv",
        "active_regions.csv",
        "metrics.csv",
        "score_table.csv",
        "run_config.txt",
    ] {
        let x = fs::read(a.join(name)).unwrap();
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let beta = Table::read_file(a.join("beta_hat.csv")).unwrap();
    assert_eq!(beta.rows.len(), 1001);
    let t = beta.numeric_column("t").unwrap();
    assert_eq!((t[0], t[1000]), (0.0, 1.0));
    let coef = Table::read_file(a.join("coefficients.csv")).unwrap();
    assert_eq!(coef.rows.len(), 1 + 23);
    let metrics = Table::read_file(a.join("metrics.csv")).unwrap();
    let names = metrics.column("metric").unwrap();
    let k = names.iter().position(|m| m == "r2").unwrap();
    let r2: f64 = metrics.rows[k][1].parse().unwrap();
    assert!(r2 > 0.5 && r2 <= 1.0, "r2 = {r2}");
}

#[test]
fn timestamp_comment_unless_suppressed() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_case(dir.path(), Case::II, 80, 5);
    let out = dir.path().join("o");
    run_ok(
        slos()
            .args([
                "tune",
                "--data",
                data.to_str().unwrap(),
                "--response",
                "y",
                "--id-column",
                "id",
            ])
            .args(["--num-subintervals", "10", "--out-dir", out.to_str().unwrap()]),
    );
    let text = fs::read_to_string(out.join("score_table.csv")).unwrap();
    assert!(text.starts_with("# generated by slos"));
    assert_eq!(Table::read_file(out.join("score_table.csv")).unwrap().rows.len(), 80);
}

#[test]
fn periodic_fit_matches_at_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_case(dir.path(), Case::III, 100, 9);
    let out = dir.path().join("o");
    run_ok(slos().args(fit_args(&data, &out)).arg("--periodic"));
    let v = Table::read_file(out.join("beta_hat.csv"))
        .unwrap()
        .numeric_column("value")
        .unwrap();
    assert_eq!(v[0].to_bits(), v[1000].to_bits());
    let cfg = fs::read_to_string(out.join("run_config.txt")).unwrap();
    assert!(cfg.contains("periodic = true"));
}

#[test]
fn fixed_tuning_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_case(dir.path(), Case::II, 100, 2);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "data = {:?}\nresponse = \"y\"\nid_column = \"id\"\nnum_subintervals = 15\ngamma = 1e-6\nlambda = 0.0\n",
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("o");
    run_ok(slos().args([
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]));
    let scores = Table::read_file(out.join("score_table.csv")).unwrap();
    assert_eq!(scores.rows.len(), 1);
    assert_eq!(
        Table::read_file(out.join("coefficients.csv")).unwrap().rows.len(),
        1 + 18
    );
}

#[test]
fn permtest_fast_mode() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_case(dir.path(), Case::II, 80, 4);
    let out = dir.path().join("o");
    let stdout = run_ok(
        slos()
            .args([
                "permtest",
                "--data",
                data.to_str().unwrap(),
                "--response",
                "y",
                "--id-column",
                "id",
            ])
            .args([
                "--num-subintervals",
                "10",
                "--permutations",
                "9",
                "--fast",
                "--seed",
                "11",
            ])
            .args(["--no-timestamp", "--out-dir", out.to_str().unwrap()]),
    );
    assert!(stdout.contains("9 permutations"));
    let perm = Table::read_file(out.join("permutation.csv")).unwrap();
    let r2 = perm.numeric_column("r2").unwrap();
    assert_eq!(r2.len(), 9);
    let metrics = Table::read_file(out.join("metrics.csv")).unwrap();
    let get = |k: &str| -> f64 {
        let i = metrics.column("metric").unwrap().iter().position(|m| m == k).unwrap();
        metrics.rows[i][1].parse().unwrap()
    };
    let ge = r2.iter().filter(|&&r| r >= get("observed_r2")).count();
    assert_eq!(get("p_value"), (1 + ge) as f64 / 10.0);
}

#[test]
fn simulate_case_three_omits_null_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(&cfg, "test_n = 200\ngamma_points = 3\nlambda_points = 3\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(
            slos()
                .args([
                    "simulate",
                    "--config",
                    cfg.to_str().unwrap(),
                    "--case",
                    "III",
                    "--n",
                    "60",
                ])
                .args([
                    "--replicates",
                    "2",
                    "--seed",
                    "7",
                    "--no-timestamp",
                    "--out-dir",
                    out.to_str().unwrap(),
                ]),
        );
    }
    assert_eq!(
        fs::read(a.join("study_long.csv")).unwrap(),
        fs::read(b.join("study_long.csv")).unwrap()
    );
    let summary = Table::read_file(a.join("study_summary.csv")).unwrap();
    let methods = summary.column("method").unwrap();
    let metrics = summary.column("metric").unwrap();
    assert!(!methods.iter().any(|m| m == "oracle"));
    assert!(!metrics.iter().any(|m| m == "ise0" || m == "null_proportion"));
    assert!(metrics.iter().any(|m| m == "ise1"));
    assert!(methods.iter().any(|m| m == "slos"));
}

#[test]
fn reports_errors_without_panicking() {
    let dir = tempfile::tempdir().unwrap();
    let out = slos()
        .args(["fit", "--response", "y", "--out-dir", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no data file"));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "y,0,0.5,1\n1,2,,3\n2,3,4,5\n").unwrap();
    let out = slos()
        .args(["fit", "--data", bad.to_str().unwrap(), "--response", "y"])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2, column 3"));
}
