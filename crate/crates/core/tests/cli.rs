use std::process::{Command, Output};

fn paon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paon"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn passing_run_exits_zero_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("count");
    let o = paon(&["count", "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command=count"));
    assert!(out.join("count.csv").exists());
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("count");
    let o = paon(&[
        "count",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "kernel=3",
        "--set",
        "check_anchor=true",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_settings_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let o = paon(&[
        "count",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "no_such_key=1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    let o = paon(&[
        "approx",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "points=many",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_then_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "# small grid\nheight = 64\nwidth = 64\ncheck_anchor = false\n",
    )
    .unwrap();
    let out = dir.path().join("count");
    let o = paon(&[
        "count",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "width=32",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("height=64"));
    assert!(manifest.contains("width=32"));
}

#[test]
fn keys_lists_every_command_schema() {
    for cmd in paon::cli::COMMANDS {
        let o = paon(&["keys", cmd]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(
            String::from_utf8_lossy(&o.stdout).contains("seed") || cmd == "count" || cmd == "eval",
            "{cmd}"
        );
    }
}
