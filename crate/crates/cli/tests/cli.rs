use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn wsan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsan")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

const MINIMAL: &str = "[scenario]\nseed = 1\n\n[topology]\nn_sensors = 20\ndegree = 4\nmode = exact-regular\n\n[timing]\nt_exposure = 20\nt_discovery = 5\n";

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn run_full_setup_writes_artifacts() {
    let out_dir = TempDir::new().unwrap();
    let cfg = scenario("full_setup.ini");
    let out = wsan(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = report(out_dir.path());
    assert_eq!(r["setup_totals"]["messages_sent"], 260);
    assert_eq!(r["setup_totals"]["computations"], 300);
    assert_eq!(r["reconciliation"]["pass"], true);
    let hash = r["config_hash"].as_str().unwrap().to_string();
    for f in ["trace.log", "report.json", "reconciliation.json", "curves.csv", "crl.csv", "binding_0.csv"] {
        let body = fs::read_to_string(out_dir.path().join(f)).unwrap();
        assert!(body.contains(&hash), "{f} lacks the config hash");
    }
    let leftovers: Vec<_> = fs::read_dir(out_dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let cfg = scenario("revocation.ini");
    for d in [&a, &b] {
        let out = wsan(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", d.path().to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn sybil_scenario_passes_with_no_forgeries() {
    let out_dir = TempDir::new().unwrap();
    let cfg = scenario("sybil.ini");
    let out = wsan(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = report(out_dir.path());
    assert_eq!(r["security"]["forged_acceptances"], 0);
    assert_eq!(r["security"]["fake_identity_keys"], 0);
}

#[test]
fn overrides_change_the_seed_and_mode() {
    let out_dir = TempDir::new().unwrap();
    let cfg = scenario("full_setup.ini");
    let out = wsan(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.path().to_str().unwrap(),
        "--seed-override",
        "99",
        "--mode",
        "geometric",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = report(out_dir.path());
    assert_eq!(r["seed"], 99);
    assert_eq!(r["reconciliation"]["pass"], true);
}

#[test]
fn validate_accepts_every_shipped_scenario() {
    for entry in fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        let out = wsan(&["validate", "--config", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}: {}", path.display(), stderr(&out));
    }
}

#[test]
fn validate_rejects_bad_files_with_field_diagnostics() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("no_seed.ini", MINIMAL.replace("seed = 1\n", ""), "seed"),
        ("exposure.ini", MINIMAL.replace("t_exposure = 20", "t_exposure = 5"), "t_exposure"),
        ("refresh.ini", format!("{MINIMAL}cert_validity = 10\nt_refresh = 11\n"), "t_refresh"),
        ("unknown_node.ini", format!("{MINIMAL}\n[adversary]\naction = 3 inject sybil fake:0 sensor:40\n"), "sensor:40"),
        ("syntax.ini", "[topology\nn_sensors = x\n".to_string(), ""),
    ];
    for (name, body, needle) in cases {
        let p = write(&dir, name, &body);
        let out = wsan(&["validate", "--config", p.to_str().unwrap()]);
        assert_eq!(code(&out), 2, "{name}");
        assert!(stderr(&out).contains(needle), "{name}: {}", stderr(&out));
        let run = wsan(&["run", "--config", p.to_str().unwrap(), "--out-dir", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(code(&run), 2, "{name}");
    }
    assert!(!dir.path().join("o").exists());
    let missing = wsan(&["validate", "--config", dir.path().join("absent.ini").to_str().unwrap()]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn lossy_run_with_violations_exits_one() {
    let dir = TempDir::new().unwrap();
    let body = MINIMAL.replace("mode = exact-regular", "mode = geometric").replace("seed = 1", "seed = 1\nlossy = 0.4");
    let p = write(&dir, "lossy.ini", &body);
    let out = wsan(&["run", "--config", p.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    let r = report(dir.path());
    assert_eq!(r["pass"], false);
    assert!(r["halted"].is_null());
    assert_eq!(r["reconciliation"]["applicable"], false);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn sweep_writes_one_run_per_value_and_a_curve_table() {
    let out_dir = TempDir::new().unwrap();
    let cfg = scenario("full_setup.ini");
    let out = wsan(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.path().to_str().unwrap(),
        "--param",
        "d",
        "--values",
        "2..12:2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.path().join("sweep_d.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    let ratios: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
    for r in &rows {
        assert_eq!(r[2], r[8], "simulated computation differs from the closed form");
        assert!(out_dir.path().join(format!("d={}", r[0])).join("report.json").exists());
    }
}

#[test]
fn storage_sweep_ratio_falls_toward_one_third() {
    let out_dir = TempDir::new().unwrap();
    let cfg = scenario("full_setup.ini");
    let out = wsan(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.path().to_str().unwrap(),
        "--param",
        "D",
        "--values",
        "1,2,3,4,6,8,10,12,16",
        "--mode",
        "geometric",
    ]);
    assert!(code(&out) == 0, "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.path().join("sweep_D.csv")).unwrap();
    let ratios: Vec<f64> =
        csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').nth(7).unwrap().parse().unwrap()).collect();
    assert!(ratios.windows(2).all(|w| w[1] < w[0]));
    assert!(ratios.iter().all(|r| *r > 1.0 / 3.0));
}

#[test]
fn empty_sweep_is_a_no_op() {
    let out_dir = TempDir::new().unwrap();
    let target = out_dir.path().join("never");
    let cfg = scenario("full_setup.ini");
    let out = wsan(&["sweep", "--config", cfg.to_str().unwrap(), "--out-dir", target.to_str().unwrap(), "--param", "N", "--values", ""]);
    assert_eq!(code(&out), 0);
    assert!(!target.exists());
}

#[test]
fn sweep_flushes_good_runs_when_one_value_is_invalid() {
    let out_dir = TempDir::new().unwrap();
    let cfg = scenario("full_setup.ini");
    let out = wsan(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.path().to_str().unwrap(),
        "--param",
        "N",
        "--values",
        "10,3,30",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(out_dir.path().join("N=10/report.json").exists());
    assert!(out_dir.path().join("N=30/report.json").exists());
    let csv = fs::read_to_string(out_dir.path().join("sweep_N.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("4,3,") && l.ends_with(",2")), "{csv}");
}

#[test]
fn malformed_values_are_rejected() {
    let cfg = scenario("full_setup.ini");
    for v in ["a,b", "2..x", "2..10:0"] {
        let out = wsan(&["sweep", "--config", cfg.to_str().unwrap(), "--param", "d", "--values", v]);
        assert_eq!(code(&out), 2, "{v}");
    }
}
