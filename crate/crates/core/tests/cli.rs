use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regional_equalization::report::Manifest;
use regional_equalization::synthetic::{write_fixture, FIXTURE_SEED};

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/yrd_synthetic/config.toml")
}

fn regeq(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regeq"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("regeq runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn all_writes_seven_stages() {
    let dir = tempfile::tempdir().unwrap();
    let o = regeq(&["all"], &fixture_config(), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = Manifest::read(dir.path()).unwrap();
    assert_eq!(manifest.stages.len(), 7);
    manifest.verify(dir.path()).unwrap();
    let theil = std::fs::read_to_string(dir.path().join("theil.csv")).unwrap();
    assert!(!theil.contains('\r'));
}

#[test]
fn single_subcommands_succeed() {
    for cmd in ["ingest", "score", "coupling", "moran", "lisa", "theil", "shortboard", "converge"] {
        let dir = tempfile::tempdir().unwrap();
        let o = regeq(&[cmd], &fixture_config(), dir.path());
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
        assert!(dir.path().join("manifest.json").exists(), "{cmd}");
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(regeq(&["moran", "--threads", "1"], &fixture_config(), &a).status.success());
    assert!(regeq(&["moran", "--threads", "8"], &fixture_config(), &b).status.success());
    for f in ["moran.csv", "moran.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = regeq(&["moran", "--seed", "7"], &fixture_config(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(Manifest::read(dir.path()).unwrap().seed, 7);
}

#[test]
fn malformed_thresholds_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = regeq(
        &["shortboard", "--set", "shortboard.thresholds=[0.5, 0.5]"],
        &fixture_config(),
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("shortboard.thresholds"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = regeq(&["score", "--set", "coupling.beta=1"], &fixture_config(), dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_config_exit_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_regeq")).arg("all").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_panel_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), FIXTURE_SEED).unwrap();
    let panel = dir.path().join("panel.csv");
    let text = std::fs::read_to_string(&panel).unwrap();
    std::fs::write(&panel, text.replacen("shanghai,2017,edu_spend,", "atlantis,2017,edu_spend,", 1)).unwrap();
    let o = regeq(&["ingest"], &dir.path().join("config.toml"), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("atlantis"), "{}", stderr(&o));
}

#[test]
fn boundary_estimate_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    // this draw pushes the spatial error parameter onto its upper bound
    write_fixture(dir.path(), 4).unwrap();
    let o = regeq(&["converge"], &dir.path().join("config.toml"), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("bound"), "{}", stderr(&o));
}

#[test]
fn bundled_fixture_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), FIXTURE_SEED).unwrap();
    let bundled = fixture_config().parent().unwrap().to_path_buf();
    for f in ["schema.json", "panel.csv", "counties.csv", "config.toml"] {
        let fresh = std::fs::read(dir.path().join(f)).unwrap();
        assert!(fresh == std::fs::read(bundled.join(f)).unwrap(), "{f} is stale; rerun generate_fixture");
    }
}
