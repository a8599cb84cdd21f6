use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gtomo_cli::artifacts::{read_estimate, read_frame_report, read_matrix, read_metrics, read_record_file, read_trace};
use gtomo_core::numerics::{c64, ComplexMatrix};
use tempfile::TempDir;

fn gtomo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtomo")).args(args).output().expect("gtomo runs")
}

fn config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path) -> Output {
    gtomo(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn ingest(cfg: &Path, records: &Path, out: &Path) -> Output {
    gtomo(&["ingest", "--config", cfg.to_str().unwrap(), "--records", records.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstdout {}\nstderr {}", o.status, String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn spin_sphere_exact_recovers_state() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.toml", "scheme = \"spin-sphere\"\ntwo_s = 1\nstate = \"random:3\"\nmode = \"exact\"\n");
    let out = dir.path().join("out");
    assert_ok(&run(&cfg, &out));
    let m = read_metrics(&out.join("metrics.json")).unwrap();
    assert!(m.trace_distance.unwrap() <= 1e-8, "{m:?}");
    let k = m.k_tilde.unwrap();
    assert!((k.estimated - 0.5).abs() < 1e-10);
    let truth = read_matrix(&out.join("rho_true.json")).unwrap();
    let est = read_estimate(&out.join("rho_est.json")).unwrap().estimate().unwrap();
    assert!((&truth - &est).max_abs() < 1e-8);
    assert!(!read_trace(&out.join("trace.csv")).unwrap().is_empty());
}

#[test]
fn pauli_verify_frame() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.toml", "scheme = \"verify-frame\"\nframe = \"pauli\"\n");
    let out = dir.path().join("out");
    assert_ok(&gtomo(&["verify-frame", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let r = read_frame_report(&out.join("metrics.json")).unwrap();
    assert!(r.passed);
    assert!((r.k_tilde.estimated - 2.0).abs() <= 1e-12);
    let closure = r.checks.iter().find(|c| c.name == "closure_residual").unwrap();
    assert!(closure.value <= 1e-12);
    // `run` on a verify-frame config does the same thing
    let out2 = dir.path().join("out2");
    assert_ok(&run(&cfg, &out2));
    assert_eq!(fs::read(out.join("metrics.json")).unwrap(), fs::read(out2.join("metrics.json")).unwrap());
}

#[test]
fn negative_shots_rejected_without_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.toml", "scheme = \"spin-sphere\"\ntwo_s = 1\nstate = \"mixed\"\nmode = \"sampled\"\nshots = -5\n");
    let out = dir.path().join("out");
    let o = run(&cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn invalid_configs_exit_2() {
    let dir = TempDir::new().unwrap();
    for (i, text) in [
        "scheme = \"spin-sphere\"\ntwo_s = 1\nstate = \"mixed\"\nmode = \"exact\"\ncolour = 3\n",
        "scheme = \"homodyne\"\ntwo_s = 1\nnmax = 4\nstate = \"vacuum\"\n",
        "scheme = \"teleport\"\n",
        "scheme = \"homodyne\"\nnmax = 4\nstate = \"basis:0\"\nmode = \"exact\"\n",
        "this is not toml",
    ]
    .iter()
    .enumerate()
    {
        let cfg = config(&dir, &format!("c{i}.toml"), text);
        let out = dir.path().join(format!("out{i}"));
        assert_eq!(run(&cfg, &out).status.code(), Some(2), "{text}");
        assert!(!out.exists());
    }
    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&missing, &dir.path().join("x")).status.code(), Some(1));
}

#[test]
fn empty_records_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.toml", "scheme = \"spin-sphere\"\ntwo_s = 1\n");
    let recs = dir.path().join("r.csv");
    fs::write(&recs, "").unwrap();
    let out = dir.path().join("out");
    assert_eq!(ingest(&cfg, &recs, &out).status.code(), Some(2));
    fs::write(&recs, "scheme,theta,phi,m,count\n").unwrap();
    assert_eq!(ingest(&cfg, &recs, &out).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn records_outside_grid_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.toml", "scheme = \"displaced-count\"\nnmax = 4\nradius = 2.0\nsteps = 10\n");
    let recs = dir.path().join("r.csv");
    fs::write(&recs, "scheme,alpha_re,alpha_im,n,count\ndisplaced-count,5.0,0.0,1,3\n").unwrap();
    assert_eq!(ingest(&cfg, &recs, &dir.path().join("out")).status.code(), Some(2));
    // wrong scheme for the config
    fs::write(&recs, "scheme,phi,x,count\nhomodyne,0.0,0.1,3\n").unwrap();
    assert_eq!(ingest(&cfg, &recs, &dir.path().join("out")).status.code(), Some(2));
}

/// `run` writes its records; ingesting them reproduces `rho_est.json` bit for bit.
fn round_trip(text: &str) {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.toml", text);
    let out = dir.path().join("run");
    assert_ok(&run(&cfg, &out));
    let records = out.join("records.csv");
    let (_, recs) = read_record_file(&records).unwrap();
    assert!(!recs.is_empty());
    let back = dir.path().join("ingest");
    assert_ok(&ingest(&cfg, &records, &back));
    assert_eq!(fs::read(out.join("rho_est.json")).unwrap(), fs::read(back.join("rho_est.json")).unwrap());
    let m = read_metrics(&back.join("metrics.json")).unwrap();
    assert_eq!(m.source, "records");
    assert!(m.fidelity.is_some());
}

#[test]
fn spin_sphere_round_trip() {
    round_trip("scheme = \"spin-sphere\"\ntwo_s = 2\nstate = \"random:1\"\nmode = \"sampled\"\nshots = 5000\nseed = 4\n");
}

#[test]
fn spin_finite_round_trip() {
    round_trip("scheme = \"spin-finite\"\ntwo_s = 1\nfinite_mode = \"rotations\"\nstate = \"random:2\"\nmode = \"sampled\"\nshots = 8000\nseed = 5\n");
}

#[test]
fn homodyne_round_trip() {
    round_trip("scheme = \"homodyne\"\nnmax = 5\nstate = \"fock:1\"\nmode = \"sampled\"\nshots = 5000\nseed = 6\nx_count = 200\n");
}

#[test]
fn displaced_count_round_trip() {
    round_trip("scheme = \"displaced-count\"\nnmax = 4\nstate = \"coherent:0.3,0.1\"\nmode = \"sampled\"\nshots = 3000\nseed = 7\nradius = 3.0\nsteps = 30\n");
}

#[test]
fn hand_built_finite_records() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.toml", "scheme = \"spin-finite\"\ntwo_s = 1\nfinite_mode = \"projectors\"\n");
    // p(+) along z, x, y, -z: 1, 1/2, 1/2, 0
    let h = std::f64::consts::FRAC_PI_2;
    let pi = std::f64::consts::PI;
    let rows = [(0.0, 0.0, 100, 0), (h, 0.0, 50, 50), (h, h, 50, 50), (pi, 0.0, 0, 100)];
    let mut text = String::from("scheme,theta,phi,psi,m,count\n");
    for (theta, phi, up, down) in rows {
        text += &format!("spin-finite,{theta},{phi},0,0.5,{up}\nspin-finite,{theta},{phi},0,-0.5,{down}\n");
    }
    let recs = dir.path().join("r.csv");
    fs::write(&recs, text).unwrap();
    let out = dir.path().join("out");
    assert_ok(&ingest(&cfg, &recs, &out));
    let est = read_estimate(&out.join("rho_est.json")).unwrap().estimate().unwrap();
    let up = ComplexMatrix::from_fn(2, |i, j| c64(if i == 0 && j == 0 { 1.0 } else { 0.0 }, 0.0));
    assert!((&est - &up).max_abs() < 1e-12, "{est:?}");
    assert!(!out.join("rho_true.json").exists());
}

#[test]
fn seed_override_changes_estimate() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.toml", "scheme = \"spin-sphere\"\ntwo_s = 1\nstate = \"mixed\"\nmode = \"sampled\"\nshots = 2000\nseed = 1\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_ok(&run(&cfg, &a));
    assert_ok(&gtomo(&["run", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed-override", "2"]));
    assert_ne!(fs::read(a.join("rho_est.json")).unwrap(), fs::read(b.join("rho_est.json")).unwrap());
    assert_eq!(read_metrics(&b.join("metrics.json")).unwrap().seed, 2);
}

#[test]
fn list_schemes() {
    let o = gtomo(&["list-schemes"]);
    assert_ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    for s in ["spin-sphere", "spin-finite", "homodyne", "displaced-count", "verify-frame"] {
        assert!(text.contains(s), "{text}");
    }
}

#[test]
fn threads_env_accepted() {
    let o = Command::new(env!("CARGO_BIN_EXE_gtomo")).env("GTOMO_THREADS", "1").arg("list-schemes").output().unwrap();
    assert_ok(&o);
}
