use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hjb_core::data::{SIX_ASSET_MU, SIX_ASSET_SIGMA};

fn hjb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjb")).args(args).output().expect("binary runs")
}

fn six_asset_csv(dir: &Path) -> PathBuf {
    let mut text = SIX_ASSET_MU.map(|v| v.to_string()).join(",") + "\n";
    for row in SIX_ASSET_SIGMA {
        text += &(row.map(|v| v.to_string()).join(",") + "\n");
    }
    let path = dir.join("model.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn alpha_writes_table_and_pieces() {
    let dir = tempfile::tempdir().unwrap();
    let model = six_asset_csv(dir.path());
    let out = dir.path().join("out");
    let o = hjb(&["alpha", "--model", s(&model), "--phi-max", "10", "--pieces", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("alpha.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "phi,alpha,alpha_prime,theta_1,theta_2,theta_3,theta_4,theta_5,theta_6,active_set"
    );
    assert_eq!(lines.count(), 1000);
    assert!(out.join("pieces.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "alpha");
    assert_eq!(manifest["inputs"][s(&model)].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["phi_max"], 10.0);
}

#[test]
fn missing_model_is_an_input_error() {
    let o = hjb(&["alpha", "--phi-max", "10"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("--model"), "{err}");
}

#[test]
fn unreadable_and_malformed_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = hjb(&["alpha", "--model", s(&dir.path().join("absent.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "0.1,0.2\n1,2\n2,1\n").unwrap();
    let o = hjb(&["alpha", "--model", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("positive definite"), "{}", stderr(&o));
    let o = hjb(&["solve", "--model", s(&bad), "--left-bc", "periodic"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_2_with_layer_context() {
    let dir = tempfile::tempdir().unwrap();
    let model = six_asset_csv(dir.path());
    // the linearized scheme with a large step is unstable under the inflow term
    let o = hjb(&[
        "solve", "--model", s(&model), "--epsilon", "1", "--scheme", "semi", "--k-rule", "0.1*h",
        "--x-lo", "-4.6", "--x-hi", "2.3", "--out", s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("time layer"), "{}", stderr(&o));
}

#[test]
fn eoc_table_has_order_column() {
    let dir = tempfile::tempdir().unwrap();
    let model = six_asset_csv(dir.path());
    let o = hjb(&[
        "eoc", "--model", s(&model), "--levels", "0.1,0.05,0.025", "--k-rule", "0.1*h", "--out", s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("eoc.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][3], "eoc_linf_l2");
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1][3], "-");
    for row in &rows[2..] {
        let r: f64 = row[3].parse().unwrap();
        assert!(r > 0.5 && r < 2.5, "{r}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("eoc_linf_l2"));
}

#[test]
fn wave_reports_speed() {
    let dir = tempfile::tempdir().unwrap();
    let model = six_asset_csv(dir.path());
    let o = hjb(&["wave", "--model", s(&model), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let c: f64 = stdout.lines().next().unwrap().trim_start_matches("c = ").parse().unwrap();
    assert!((c - 0.41583).abs() < 1e-5, "{c}");
    let o = hjb(&["wave", "--model", s(&model), "--v-minus", "2", "--v-plus", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn solve_from_stored_pieces() {
    let dir = tempfile::tempdir().unwrap();
    let model = six_asset_csv(dir.path());
    let a = dir.path().join("a");
    assert!(hjb(&["alpha", "--model", s(&model), "--pieces", "--out", s(&a)]).status.success());
    let out = dir.path().join("s");
    let o = hjb(&[
        "solve", "--alpha-csv", s(&a.join("pieces.csv")), "--terminal", "2", "--x-lo", "-1", "--x-hi", "1",
        "--T", "1", "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let phi = std::fs::read_to_string(out.join("phi.csv")).unwrap();
    for line in phi.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(v > 0.0 && v <= 2.0 + 1e-6);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = six_asset_csv(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = hjb(&[
            "portfolio", "--model", s(&model), "--T", "1", "--k-rule", "0.1*h^2", "--out", s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("one"), run("two"));
    for file in ["phi.csv", "strategy.csv", "alpha.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("manifest.json")).unwrap()).unwrap();
        v["created_unix"] = serde_json::Value::Null;
        v["timings"] = serde_json::Value::Null;
        // the output directory is the one input that differs
        v["config"]["out"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn portfolio_from_prices() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.csv");
    let mut text = String::from("date,AAA,BBB,CCC\n");
    // deterministic wiggles with distinct drifts
    let (mut p, mut q, mut r) = (100.0_f64, 50.0_f64, 20.0_f64);
    for t in 0..200 {
        let x = t as f64;
        p *= (0.002 + 0.02 * (0.7 * x).sin()).exp();
        q *= (0.001 + 0.01 * (1.3 * x + 1.0).sin()).exp();
        r *= (0.0005 + 0.005 * (2.9 * x + 2.0).cos()).exp();
        text += &format!("2021-{:02}-{:02},{p},{q},{r}\n", 1 + t / 28, 1 + t % 28);
    }
    std::fs::write(&prices, text).unwrap();
    let out = dir.path().join("p");
    let o = hjb(&[
        "portfolio", "--prices", s(&prices), "--T", "1", "--k-rule", "0.1*h^2", "--stride", "10",
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let strategy = std::fs::read_to_string(out.join("strategy.csv")).unwrap();
    let mut lines = strategy.lines();
    assert_eq!(lines.next().unwrap(), "t,x,y,theta_1,theta_2,theta_3,active_set");
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let sum: f64 = cells[3..6].iter().map(|c| c.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    let o = hjb(&["portfolio", "--prices", s(&prices), "--model", s(&prices)]);
    assert_eq!(o.status.code(), Some(1));
}
