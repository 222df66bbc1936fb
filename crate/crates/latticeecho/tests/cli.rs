//! End-to-end tests of the binary: artifact layout, exit codes, sweep
//! behavior, and output round-trips.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use latticeecho::output::{read_pgm, read_table};
use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_latticeecho"))
}

fn write_cfg(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.cfg");
    fs::write(&path, body).unwrap();
    path
}

const RING_CFG: &str = "\
[lattice]
extents = 64
j = 1.0
boundary = periodic

[initial]
kind = gaussian
center = 32
width = 3.0
momentum = 0.7

[schedule]
t0 = 6.0
m = 10.0
delta_t = pi

[run]
t_end = echo
sample_dt = 0.05
";

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn bands_tables_satisfy_band_identities() {
    let dir = tempdir().unwrap();
    let cfg = write_cfg(dir.path(), RING_CFG);
    run_ok(&[
        "bands",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let (_, gapless) = read_table(&dir.path().join("bands_folded_gapless.csv")).unwrap();
    for row in &gapless {
        // columns k, lower, upper, gap; E+ + E- = 2 E0 = 0 for M = 0
        assert!((row[1] + row[2]).abs() < 1e-12);
    }
    let (_, gapped) = read_table(&dir.path().join("bands_folded_gapped.csv")).unwrap();
    let min_gap = gapped.iter().map(|r| r[3]).fold(f64::INFINITY, f64::min);
    assert!((min_gap - 20.0).abs() < 1e-12, "min gap {min_gap}");
    let (_, unfolded) = read_table(&dir.path().join("bands_unfolded.csv")).unwrap();
    assert_eq!(unfolded.len(), 256);
}

#[test]
fn bands_2d_reduced_zone_row_count() {
    let dir = tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "[lattice]\nextents = 64, 64\n\n[initial]\nkind = single_site\nsite = 0, 0\n\n[run]\nt_end = 1.0\nsample_dt = 0.5\n",
    );
    run_ok(&[
        "bands",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let (_, rows) = read_table(&dir.path().join("bands_folded_gapless.csv")).unwrap();
    // one representative per momentum pair on the 64x64 grid
    assert_eq!(rows.len(), 64 * 64 / 2);
}

#[test]
fn run_artifacts_round_trip() {
    let dir = tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        &RING_CFG.replace("sample_dt = 0.05", "sample_dt = 0.05\nsnapshot_times = auto"),
    );
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let (headers, rows) = read_table(&dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(headers, vec!["time", "fidelity", "overlap"]);
    assert_eq!(rows[0][0], 0.0);
    assert!((rows[0][1] - 1.0).abs() < 1e-12);
    // strictly increasing times
    for w in rows.windows(2) {
        assert!(w[1][0] > w[0][0]);
    }
    // five auto snapshots, each re-parseable in both formats
    let mut snaps: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("snap_t") && n.ends_with(".csv"))
        .collect();
    snaps.sort();
    assert_eq!(snaps.len(), 5);
    for name in &snaps {
        let (_, srows) = read_table(&dir.path().join(name)).unwrap();
        assert_eq!(srows.len(), 64);
        let total: f64 = srows.iter().map(|r| r[1]).sum();
        assert!((total - 1.0).abs() < 1e-10, "{name}: total {total}");
        let pgm = name.replace(".csv", ".pgm");
        let (h, w, data) = read_pgm(&dir.path().join(pgm)).unwrap();
        assert_eq!((h, w), (1, 64));
        assert_eq!(data.iter().max(), Some(&255));
    }
    let summary = fs::read_to_string(dir.path().join("run_summary.txt")).unwrap();
    assert!(summary.contains("seed=42"));
    assert!(summary.contains("revival=true"));
}

#[test]
fn run_without_schedule_reports_no_revival() {
    let dir = tempdir().unwrap();
    let body = "\
[lattice]
extents = 32

[initial]
kind = gaussian
center = 16
width = 2.0
momentum = 0.8

[run]
t_end = 10.0
sample_dt = 0.1
";
    let cfg = write_cfg(dir.path(), body);
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let summary = fs::read_to_string(dir.path().join("run_summary.txt")).unwrap();
    assert!(summary.contains("revival=false"));
    assert!(!summary.contains("peak_time"));
}

#[test]
fn env_var_out_dir_fallback() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("from_env");
    let cfg = write_cfg(dir.path(), RING_CFG);
    let status = bin()
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("LATTICEECHO_OUT", &out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("trajectory.csv").is_file());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempdir().unwrap();
    // missing config file
    let s = bin()
        .args(["run", "--config", "/no/such/file.cfg"])
        .status()
        .unwrap();
    assert_eq!(s.code(), Some(2));
    // sample_dt beyond t_end
    let cfg = write_cfg(dir.path(), &RING_CFG.replace("sample_dt = 0.05", "sample_dt = 99.0"));
    let s = bin()
        .args(["run", "--config", cfg.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(s.code(), Some(2));
    // malformed key line
    let cfg = write_cfg(dir.path(), "[lattice]\nextents 64\n");
    let s = bin()
        .args(["bands", "--config", cfg.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(s.code(), Some(2));
}

#[test]
fn check_exit_codes() {
    let out = bin().args(["check", "--size", "8"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for name in [
        "oracle_equivalence",
        "unitarity",
        "beta_formula",
        "folding_identity",
    ] {
        assert!(text.contains(name), "missing {name} in: {text}");
    }
    assert!(text.contains("PASS"));

    let out = bin()
        .args(["check", "--size", "8", "--perturb"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn check_size_four_under_one_second() {
    let start = std::time::Instant::now();
    let s = bin().args(["check", "--size", "4"]).status().unwrap();
    assert_eq!(s.code(), Some(0));
    assert!(start.elapsed().as_secs_f64() < 1.0, "{:?}", start.elapsed());
}

#[test]
fn sweep_delta_t_monotonic_increase() {
    let dir = tempdir().unwrap();
    let m = 10.0;
    let values = format!(
        "{:.17}, {:.17}, {:.17}",
        PI / (8.0 * m),
        PI / (4.0 * m),
        PI / (2.0 * m)
    );
    let body = format!("{RING_CFG}\n[sweep]\naxis = delta_T\nvalues = {values}\n");
    let cfg = write_cfg(dir.path(), &body);
    run_ok(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let (headers, rows) = read_table(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(
        headers,
        vec!["delta_T", "peak_time", "peak_value", "predicted_value", "residual"]
    );
    assert_eq!(rows.len(), 3);
    assert!(rows[0][2] < rows[1][2] && rows[1][2] < rows[2][2], "{rows:?}");
}

#[test]
fn sweep_j2_monotonic_decrease_and_workers_identical() {
    let dir = tempdir().unwrap();
    let body = format!("{RING_CFG}\n[sweep]\naxis = J2\nvalues = 0, 0.1, 0.2\n");
    let cfg = write_cfg(dir.path(), &body);
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("w{workers}"));
        run_ok(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--workers",
            workers,
        ]);
        outputs.push(fs::read(out.join("sweep.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let (_, rows) = read_table(&dir.path().join("w1/sweep.csv")).unwrap();
    assert!(rows[0][2] > rows[1][2] && rows[1][2] > rows[2][2], "{rows:?}");
}

#[test]
fn sweep_single_value_degenerate_csv() {
    let dir = tempdir().unwrap();
    let body = format!("{RING_CFG}\n[sweep]\naxis = M\nvalues = 10.0\n");
    let cfg = write_cfg(dir.path(), &body);
    run_ok(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let (_, rows) = read_table(&dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], 10.0);
}
