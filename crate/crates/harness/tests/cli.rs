use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn lab(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonlocal-lab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn invalid_config_lists_every_problem_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[kernel]\nfamily = \"wedge\"\n[grid]\ndim = 1\nhalf_width = 10.0\nspacing = 0.1\ncolour = 3\n\
         [datum]\nkind = \"floor-tail\"\nalpha = 1.0\n[run]\np = 0.5\nt_end = 4.0\n",
    )
    .unwrap();
    let out = lab(&["eigen"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for needle in ["kernel.family", "colour", "run.p"] {
        assert!(err.contains(needle), "missing `{needle}` in:\n{err}");
    }
}

#[test]
fn stages_need_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["verify"], &smoke_config(), dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eigen"));
}

#[test]
fn stage_by_stage_matches_full_run() {
    let staged = tempfile::tempdir().unwrap();
    for stage in ["eigen", "evolve", "barrier", "fundamental", "verify", "report"] {
        let out = lab(&[stage], &smoke_config(), staged.path());
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let full = tempfile::tempdir().unwrap();
    assert!(lab(&["run"], &smoke_config(), full.path()).status.success());
    for name in [
        "eigen.csv",
        "positivity.csv",
        "phi.csv",
        "theorem.csv",
        "trend.csv",
        "fundamental.csv",
    ] {
        assert_eq!(
            fs::read(staged.path().join(name)).unwrap(),
            fs::read(full.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(full.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], 1);
    assert_eq!(manifest["stages"]["evolve"]["invariant_violations"], 0);
}

#[test]
fn resume_refuses_a_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lab(&["run"], &smoke_config(), dir.path()).status.success());
    let changed = dir.path().join("changed.toml");
    fs::write(
        &changed,
        fs::read_to_string(smoke_config())
            .unwrap()
            .replace("t_end = 8.0", "t_end = 4.0"),
    )
    .unwrap();
    let out = lab(&["run", "--resume"], &changed, dir.path());
    assert_eq!(out.status.code(), Some(2));
    let again = lab(&["run", "--resume"], &smoke_config(), dir.path());
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stdout).contains("already complete"));
}
