//! End-to-end tests of the `homoghj` binary: exit codes, file outputs,
//! configuration precedence, and thread-count invariance.  Grids are kept
//! coarse so every spawned run finishes in well under a second.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn homoghj(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_homoghj"));
    // The output-directory fallback reads HOMOGHJ_OUT; keep tests hermetic.
    cmd.env_remove("HOMOGHJ_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.args(args);
    cmd.output().expect("failed to spawn homoghj")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("missing {name} in {}: {e}", dir.display()))
}

#[test]
fn vanish_writes_series_files_and_reports_the_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = homoghj(
        &["vanish", "--example", "5.3", "--dx", "0.0625", "--out"],
        &[],
    );
    // Missing value for --out is a usage error surfaced by the parser.
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));

    let out = homoghj(
        &[
            "vanish",
            "--example",
            "5.3",
            "--dx",
            "0.0625",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("vanish_5.3: slope"));

    let csv = read(dir.path(), "vanish_5.3.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("parameter,error"));
    assert_eq!(lines.count(), 10, "one row per viscosity");
    let meta = read(dir.path(), "vanish_5.3.meta.json");
    assert!(meta.contains("\"fitted_slope\""));
    assert!(read(dir.path(), "vanish_5.3.gnuplot").contains("plot"));
}

#[test]
fn unknown_example_is_a_configuration_error() {
    let out = homoghj(&["vanish", "--example", "9.9"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("--example"), "stderr: {err}");
    assert!(err.contains("9.9"), "stderr: {err}");
    assert!(err.contains("5.1"), "expected the valid-id list: {err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = homoghj(&["vanish", "--example", "5.3", "--nope"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--nope"));
}

#[test]
fn wrong_suite_and_invalid_grid_are_rejected_before_computing() {
    // 6.1 is a torus problem; the vanishing driver must name --example.
    let out = homoghj(&["vanish", "--example", "6.1"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--example"));

    let out = homoghj(&["vanish", "--example", "5.3", "--dx", "-0.1"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--dx"));

    let out = homoghj(&["vanish", "--example", "5.3", "--c-cfl", "1.5"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--c-cfl"));

    let out = homoghj(&["effham", "--example", "6.1", "--n", "100"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--n"));

    // A viscosity below the monotonicity floor of the grid is a
    // configuration problem, reported against --eps.
    let out = homoghj(
        &["solve", "--example", "5.3", "--dx", "0.125", "--eps", "1e-9"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--eps"));
}

#[test]
fn unwritable_output_directory_is_a_numerical_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("occupied");
    fs::write(&blocker, "not a directory").unwrap();
    let out = homoghj(
        &["exact", "--example", "6.1", "--out", blocker.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(1), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("writing outputs"));
}

#[test]
fn flags_override_json_config_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"example": "5.3", "dx": 0.25}"#).unwrap();
    let from_json = dir.path().join("a");
    let from_flag = dir.path().join("b");
    let explicit = dir.path().join("c");

    let out = homoghj(
        &[
            "vanish",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            from_json.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let out = homoghj(
        &[
            "vanish",
            "--config",
            cfg.to_str().unwrap(),
            "--dx",
            "0.125",
            "--out",
            from_flag.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let out = homoghj(
        &[
            "vanish",
            "--example",
            "5.3",
            "--dx",
            "0.25",
            "--out",
            explicit.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));

    let a = read(&from_json, "vanish_5.3.csv");
    let b = read(&from_flag, "vanish_5.3.csv");
    let c = read(&explicit, "vanish_5.3.csv");
    assert_eq!(a, c, "JSON values must act exactly like the explicit flags");
    assert_ne!(a, b, "an explicit --dx must override the JSON value");
}

#[test]
fn unknown_json_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"example": "5.3", "dz": 0.25}"#).unwrap();
    let out = homoghj(&["vanish", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("dz"), "stderr: {err}");
}

#[test]
fn out_env_variable_supplies_the_default_directory() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let out = homoghj(
        &["exact", "--example", "6.1"],
        &[("HOMOGHJ_OUT", env_out.to_str().unwrap())],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let text = read(&env_out, "exact_6.1.csv");
    assert!(text.starts_with("value\n-1.01266413228"), "got {text}");

    // An explicit --out wins over the environment.
    let flag_out = dir.path().join("from_flag");
    let out = homoghj(
        &[
            "exact",
            "--example",
            "6.1",
            "--out",
            flag_out.to_str().unwrap(),
        ],
        &[("HOMOGHJ_OUT", env_out.to_str().unwrap())],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    assert!(flag_out.join("exact_6.1.csv").exists());
}

#[test]
fn thread_count_does_not_change_any_output_byte() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let many = dir.path().join("many");
    for (threads, out_dir) in [("1", &one), ("8", &many)] {
        let out = homoghj(
            &[
                "vanish",
                "--example",
                "5.3",
                "--dx",
                "0.0625",
                "--threads",
                threads,
                "--out",
                out_dir.to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    }
    for name in ["vanish_5.3.csv", "vanish_5.3.meta.json", "vanish_5.3.gnuplot"] {
        assert_eq!(read(&one, name), read(&many, name), "{name} differs");
    }
}

#[test]
fn solve_writes_a_profile_restricted_to_the_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = homoghj(
        &[
            "solve",
            "--example",
            "5.3",
            "--dx",
            "0.125",
            "--eps",
            "0.5",
            "--window",
            "-1,1",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let csv = read(dir.path(), "solve_vanish_5.3_eps5e-1.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,u"));
    let mut rows = 0;
    for line in lines {
        let x: f64 = line.split(',').next().unwrap().parse().unwrap();
        assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x), "x = {x} escaped");
        rows += 1;
    }
    // [-1, 1] at dx = 1/8 holds 17 nodes.
    assert_eq!(rows, 17);
}

#[test]
fn exact_profiles_match_the_catalog_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = homoghj(
        &[
            "exact",
            "--example",
            "5.1",
            "--dx",
            "0.25",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let csv = read(dir.path(), "exact_vanish_5.1.csv");
    let xs: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(xs.len(), 21, "[-2.5, 2.5] at dx = 1/4");
    assert!((xs[0] + 2.5).abs() < 1e-12 && (xs[20] - 2.5).abs() < 1e-12);

    // Homogenization examples have no pointwise reference.
    let out = homoghj(&["exact", "--example", "5.6"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--example"));
}

#[test]
fn effham_quick_mesh_produces_all_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = homoghj(
        &[
            "effham",
            "--example",
            "6.1",
            "--n",
            "16",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    // Six h-series (one per decade of sigma) plus the sigma-series.
    for name in [
        "effham_6.1_h_sigma1e3.csv",
        "effham_6.1_h_sigma1e0.csv",
        "effham_6.1_h_sigma1e-2.csv",
        "effham_6.1_sigma.csv",
    ] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let meta = read(dir.path(), "effham_6.1_sigma.meta.json");
    assert!(meta.contains("\"fitted_slope\""));
}
