use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regpath_core::config::RunConfig;
use regpath_core::io;

fn regpath(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regpath"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("failed to launch regpath")
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, cfg.to_toml_string()).unwrap();
    p
}

fn fixtures(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("fixture_"))
        .collect();
    names.sort();
    names
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn generate_paper_writes_every_fixture_reproducibly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(regpath(&["generate", "--profile", "paper"], a.path()));
    ok(regpath(&["generate", "--profile", "paper"], b.path()));
    let names = fixtures(a.path());
    assert_eq!(names.len(), 2 * 3 * 20);
    assert_eq!(names, fixtures(b.path()));
    for n in &names {
        assert_eq!(
            fs::read(a.path().join(n)).unwrap(),
            fs::read(b.path().join(n)).unwrap(),
            "{n} differs"
        );
    }
    let fx = io::read_fixture_csv(&a.path().join("fixture_m1_0.1_0.csv")).unwrap();
    assert_eq!(fx.times.len(), 100);
    let prov = fx.provenance.expect("fixture carries provenance");
    assert_eq!(prov.config_hash, RunConfig::paper().hash());
}

#[test]
fn zero_noise_fixtures_equal_the_clean_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::ci();
    cfg.noise.sigmas = vec![0.0];
    cfg.noise.trials = 2;
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    ok(regpath(&["generate", "--config", path.to_str().unwrap()], &out));
    let names = fixtures(&out);
    assert_eq!(names.len(), 4);
    for n in names {
        let fx = io::read_fixture_csv(&out.join(&n)).unwrap();
        assert_eq!(fx.data, fx.clean, "{n}");
    }
}

#[test]
fn solve_writes_a_full_path_and_recovers_m1() {
    let dir = tempfile::tempdir().unwrap();
    ok(regpath(&["generate", "--profile", "paper"], dir.path()));
    let out = dir.path().join("solve");
    let fixture = dir.path().join("fixture_m1_0.1_0.csv");
    let o = ok(regpath(
        &[
            "solve",
            "--profile",
            "paper",
            fixture.to_str().unwrap(),
            "--truth",
            "m1",
        ],
        &out,
    ));
    assert!(String::from_utf8_lossy(&o.stdout).contains("best level"));

    let (rows, prov) = io::read_path_csv(&out.join("path.csv")).unwrap();
    assert_eq!(rows.len(), RunConfig::paper().schedule.levels);
    assert!(rows.windows(2).all(|w| w[1].alpha < w[0].alpha));
    let prov = prov.expect("path carries provenance");
    assert_eq!(prov.config_hash, RunConfig::paper().hash());
    assert_eq!(fs::read_dir(out.join("levels")).unwrap().count(), rows.len());

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let err = report["best"]["rel_err_m"].as_f64().unwrap();
    assert!(err <= 0.10, "min-over-levels parameter error {err}");
}

#[test]
fn table_layout_and_semi_convergence_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(regpath(&["table", "--profile", "ci", "--workers", "1"], dir.path()));
    let cfg = RunConfig::ci();

    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(text, fs::read_to_string(dir.path().join("table.txt")).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    for (line, name) in lines[1..].iter().zip(["m1", "m2", "u1", "u2"]) {
        assert!(line.starts_with(name), "{line}");
        assert_eq!(line.matches('±').count(), 3, "{line}");
    }

    let csv = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "row,mean_0.01,std_0.01,mean_0.1,std_0.1,mean_0.2,std_0.2");
    assert_eq!(body.len(), 5);
    assert!(body[1..].iter().all(|l| l.split(',').count() == 7));
    assert!(csv.starts_with(&format!(
        "# config_hash={} master_seed={}",
        cfg.hash(),
        cfg.noise.master_seed
    )));
    assert_eq!(manifest(dir.path())["config_hash"], cfg.hash());

    let paths: Vec<String> = (0..cfg.noise.trials)
        .map(|t| {
            dir.path()
                .join(format!("paths/path_m1_0.2_{t}.csv"))
                .display()
                .to_string()
        })
        .collect();
    let mut args = vec!["report", "--truth", "m1"];
    args.extend(paths.iter().map(String::as_str));
    let rep_out = dir.path().join("report");
    let o = ok(regpath(&args, &rep_out));
    let text = String::from_utf8_lossy(&o.stdout);
    let summary = text.lines().last().unwrap();
    let k: usize = summary
        .strip_prefix("interior minimum in ")
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("unexpected summary {summary}"));
    assert!(k >= 1, "no interior minimum flagged: {text}");
    assert!(rep_out.join("report.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| regpath(args, dir.path()).status.code();

    assert_eq!(code(&["report", "does/not/exist.csv"]), Some(4));
    assert_eq!(code(&["generate", "--workers", "0"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["generate", "--profile", "nope"]), Some(2));
    assert_eq!(code(&["generate", "--config", "does/not/exist.toml"]), Some(4));

    let fixture_dir = dir.path().join("ci");
    ok(regpath(&["generate", "--profile", "ci"], &fixture_dir));
    let f = fixture_dir.join("fixture_m1_0.1_0.csv");
    // A fixture that does not sample the configured grid.
    let short = dir.path().join("short.csv");
    let text = fs::read_to_string(&f).unwrap();
    let kept: Vec<&str> = text.lines().take(20).collect();
    fs::write(&short, kept.join("\n") + "\n").unwrap();
    assert_eq!(code(&["solve", "--profile", "ci", short.to_str().unwrap()]), Some(2));
}

#[test]
fn paper_profile_refuses_pinned_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::paper();
    cfg.inner.tau = 1e-2;
    let path = write_config(dir.path(), &cfg);
    let p = path.to_str().unwrap();
    let out = dir.path().join("out");
    let o = regpath(&["generate", "--config", p], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("inner.tau"));
    ok(regpath(&["generate", "--config", p, "--unsafe-override"], &out));
    let conflict = regpath(
        &["generate", "--config", p, "--profile", "ci", "--unsafe-override"],
        &out,
    );
    assert_eq!(conflict.status.code(), Some(2));
}

#[test]
fn artifacts_carry_hash_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(regpath(&["generate", "--profile", "ci", "--seed", "7"], dir.path()));
    let stderr = String::from_utf8_lossy(&o.stderr);
    let mut cfg = RunConfig::ci();
    cfg.noise.master_seed = 7;
    assert!(
        stderr.contains(&format!("config_hash={} master_seed=7", cfg.hash())),
        "{stderr}"
    );
    let m = manifest(dir.path());
    assert_eq!(m["master_seed"], 7);
    assert_eq!(m["config_hash"], cfg.hash());
    assert_eq!(m["files"].as_array().unwrap().len(), 2 * 3 * 5);
    let fx = io::read_fixture_csv(&dir.path().join("fixture_m2_0.2_4.csv")).unwrap();
    assert_eq!(fx.provenance, Some(io::Provenance::new(cfg.hash(), 7)));

    let other = tempfile::tempdir().unwrap();
    ok(regpath(&["generate", "--profile", "ci", "--seed", "8"], other.path()));
    let a = fs::read(dir.path().join("fixture_m2_0.2_4.csv")).unwrap();
    let b = fs::read(other.path().join("fixture_m2_0.2_4.csv")).unwrap();
    assert_ne!(a, b);
}
