//! End-to-end tests of the `kcosym` binary: exit codes, report format, and
//! CSV round-tripping through the command-line surface.

use std::path::Path;
use std::process::{Command, Output};

use kcosym::fields::{read_csv, write_csv, Boundary};

fn run_binary(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcosym"))
        .args(args)
        .output()
        .expect("binary should launch")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("stdout is utf-8")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("stderr is utf-8")
}

/// Asserts every `check=` line has the documented grammar
/// `check=<name> residual=<float> tol=<float> verdict=<pass|fail>`.
fn assert_report_grammar(stdout: &str) -> usize {
    let mut checks = 0;
    for line in stdout.lines() {
        if !line.starts_with("check=") {
            continue;
        }
        checks += 1;
        let fields: Vec<&str> = line.split(' ').collect();
        assert_eq!(fields.len(), 4, "malformed check line: {line}");
        let residual = fields[1]
            .strip_prefix("residual=")
            .unwrap_or_else(|| panic!("missing residual in: {line}"));
        residual
            .parse::<f64>()
            .unwrap_or_else(|_| panic!("residual is not a float in: {line}"));
        let tol = fields[2]
            .strip_prefix("tol=")
            .unwrap_or_else(|| panic!("missing tol in: {line}"));
        tol.parse::<f64>()
            .unwrap_or_else(|_| panic!("tol is not a float in: {line}"));
        let verdict = fields[3]
            .strip_prefix("verdict=")
            .unwrap_or_else(|| panic!("missing verdict in: {line}"));
        assert!(
            verdict == "pass" || verdict == "fail",
            "bad verdict in: {line}"
        );
    }
    checks
}

fn write_config(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).expect("config should be writable");
    path.to_str().expect("utf-8 path").to_owned()
}

const WAVE_CONFIG: &str = r#"
[system]
kind = "wave"
sigma = 1.0
tau = 1.0
spatial_dims = 1
profile = { name = "plane", amplitude = 1.0, wavenumber = 1.0 }

[[grid.axes]]
start = 0.0
stop = 1.0
nodes = 17
boundary = "dirichlet"

[[grid.axes]]
start = 0.0
stop = 6.283185307179586
nodes = 32
boundary = "periodic"

[checks]
tol = 1e-8
field_tol = 5e-2
refine = 2
seed = 3
samples = 64
"#;

const NOETHER_TRANSLATION_CONFIG: &str = r#"
[system]
kind = "wave"
sigma = 2.0
tau = 0.5
spatial_dims = 1

[[grid.axes]]
start = 0.0
stop = 1.0
nodes = 9
boundary = "dirichlet"

[[grid.axes]]
start = 0.0
stop = 6.283185307179586
nodes = 16
boundary = "periodic"

[field]
kind = "translation"
direction = [1.0]

[checks]
samples = 64
"#;

#[test]
fn passing_wave_config_exits_zero_and_writes_report() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(dir.path(), "wave.toml", WAVE_CONFIG);
    let out_dir = dir.path().join("out");
    let output = run_binary(&[
        "wave",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let stdout = stdout_of(&output);
    assert_eq!(
        output.status.code(),
        Some(0),
        "stdout: {stdout}\nstderr: {}",
        stderr_of(&output)
    );
    let checks = assert_report_grammar(&stdout);
    assert!(checks >= 4, "expected several checks, saw {checks}");
    assert!(stdout.contains("verdict=pass"));
    assert!(!stdout.contains("verdict=fail"));
    assert!(stdout.contains("overall=pass"));
    // The report on disk matches what was printed, and the field was saved.
    let report = std::fs::read_to_string(out_dir.join("report.txt")).expect("report.txt");
    assert_eq!(report, stdout);
    assert!(out_dir.join("section.csv").is_file());
}

#[test]
fn failing_check_config_exits_one() {
    let dir = tempfile::tempdir().expect("tempdir");
    let reeb = NOETHER_TRANSLATION_CONFIG
        .replace("kind = \"translation\"", "kind = \"reeb\"")
        .replace("direction = [1.0]", "axis = 0");
    let config = write_config(dir.path(), "reeb.toml", &reeb);
    let out_dir = dir.path().join("out");
    let output = run_binary(&[
        "check-noether",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let stdout = stdout_of(&output);
    assert_eq!(output.status.code(), Some(1), "stdout: {stdout}");
    assert_report_grammar(&stdout);
    // The base-direction pairing is exactly one, so that single condition
    // fails while the two-form and Hamiltonian conditions hold.
    assert!(stdout.contains("check=noether_eta residual=1.000000e0"));
    assert!(stdout.contains("overall=fail"));
    // No current is emitted for a failed candidate.
    assert!(!out_dir.join("current.csv").exists());
}

#[test]
fn malformed_configs_exit_two_without_panicking() {
    let dir = tempfile::tempdir().expect("tempdir");
    let garbage = write_config(dir.path(), "garbage.toml", "not really toml [[[");
    let unknown_key = write_config(
        dir.path(),
        "unknown.toml",
        &format!("{WAVE_CONFIG}\nfrobnicate = 1\n"),
    );
    let missing = dir.path().join("nope.toml");

    for config in [
        garbage.as_str(),
        unknown_key.as_str(),
        missing.to_str().unwrap(),
    ] {
        let output = run_binary(&["wave", "--config", config]);
        assert_eq!(output.status.code(), Some(2), "config: {config}");
        let stderr = stderr_of(&output);
        assert!(
            stderr.starts_with("error:"),
            "stderr should carry a structured error, got: {stderr}"
        );
        assert!(stdout_of(&output).is_empty());
    }
}

#[test]
fn invalid_physics_inputs_exit_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    // Time step far above the stability bound.
    let cfl = WAVE_CONFIG.replace("nodes = 17", "nodes = 3");
    let cfl_config = write_config(dir.path(), "cfl.toml", &cfl);
    let output = run_binary(&["wave", "--config", &cfl_config]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("CFL"));

    // A requested tolerance of zero is not a usable tolerance.
    let good_config = write_config(dir.path(), "wave.toml", WAVE_CONFIG);
    let output = run_binary(&["wave", "--config", &good_config, "--tol", "0"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("positive"));

    // Unknown profile and unknown field family.
    let bad_profile = WAVE_CONFIG.replace("name = \"plane\"", "name = \"swirl\"");
    let bad_profile_config = write_config(dir.path(), "profile.toml", &bad_profile);
    let output = run_binary(&["wave", "--config", &bad_profile_config]);
    assert_eq!(output.status.code(), Some(2));

    let bad_field =
        NOETHER_TRANSLATION_CONFIG.replace("kind = \"translation\"", "kind = \"shear\"");
    let bad_field_config = write_config(dir.path(), "field.toml", &bad_field);
    let output = run_binary(&["check-noether", "--config", &bad_field_config]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn kernel_dim_prints_computed_and_closed_form() {
    for (k, n, expected) in [(2i64, 1i64, 3usize), (1, 4, 0), (3, 2, 16)] {
        let output = run_binary(&["kernel-dim", &k.to_string(), &n.to_string()]);
        assert_eq!(output.status.code(), Some(0));
        let stdout = stdout_of(&output);
        assert_eq!(stdout.trim(), format!("{expected} {expected}"));
    }
    let output = run_binary(&["kernel-dim", "0", "2"]);
    assert_eq!(output.status.code(), Some(2));
    let output = run_binary(&["kernel-dim", "2"]);
    assert_eq!(
        output.status.code(),
        Some(2),
        "missing argument is a usage error"
    );
}

#[test]
fn noether_pass_emits_current_csv_and_is_deterministic() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(dir.path(), "noether.toml", NOETHER_TRANSLATION_CONFIG);
    let out_dir = dir.path().join("out");
    let run = || {
        run_binary(&[
            "check-noether",
            "--config",
            &config,
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "11",
        ])
    };
    let first = run();
    assert_eq!(
        first.status.code(),
        Some(0),
        "stderr: {}",
        stderr_of(&first)
    );
    let stdout = stdout_of(&first);
    assert!(
        stdout.contains("seed=11"),
        "seed must be recorded in the report"
    );
    let current = std::fs::read_to_string(out_dir.join("current.csv")).expect("current.csv");
    let mut lines = current.lines();
    assert_eq!(lines.next(), Some("t1,t2,q1,p1_1,p2_1,F1,F2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 64, "one row per sample");
    // For the momentum-translation current of a lifted configuration
    // translation, F^A equals p^A contracted with the direction.
    for row in &rows {
        let values: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 7);
        assert_eq!(values[5], values[3]);
        assert_eq!(values[6], values[4]);
    }

    let second = run();
    assert_eq!(stdout_of(&second), stdout, "same seed, same report");
    assert_eq!(
        std::fs::read_to_string(out_dir.join("current.csv")).expect("current.csv"),
        current
    );
}

#[test]
fn anisotropic_rotation_fails_killing_check() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config_text = r#"
[system]
kind = "quadratic"
metrics = [[[1.0, 0.0], [0.0, 1.0]], [[-1.0, 0.0], [0.0, -0.5]]]

[[grid.axes]]
start = 0.0
stop = 1.0
nodes = 9
boundary = "dirichlet"

[[grid.axes]]
start = 0.0
stop = 6.283185307179586
nodes = 16
boundary = "periodic"

[field]
kind = "rotation"
plane = [0, 1]

[checks]
samples = 64
"#;
    let config = write_config(dir.path(), "rot.toml", config_text);
    let out_dir = dir.path().join("out");
    let output = run_binary(&[
        "check-noether",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let stdout = stdout_of(&output);
    assert_eq!(output.status.code(), Some(1), "stdout: {stdout}");
    // The rotation is not an isometry of the anisotropic block, and the
    // Killing residual says so in the report.
    let killing_line = stdout
        .lines()
        .find(|l| l.starts_with("check=killing"))
        .expect("killing check reported");
    assert!(
        killing_line.ends_with("verdict=fail"),
        "line: {killing_line}"
    );
}

#[test]
fn section_csv_round_trips_bit_for_bit_through_the_library() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write_config(dir.path(), "wave.toml", WAVE_CONFIG);
    let out_dir = dir.path().join("out");
    let output = run_binary(&[
        "wave",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--refine",
        "1",
    ]);
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        stderr_of(&output)
    );

    let written = out_dir.join("section.csv");
    let section = read_csv(&written, &[Boundary::Dirichlet, Boundary::Periodic])
        .expect("binary output should parse");
    assert_eq!(section.grid().k(), 2);
    assert_eq!(section.n(), 1);
    let rewritten = out_dir.join("roundtrip.csv");
    write_csv(&section, &rewritten).expect("rewrite");
    let original_bytes = std::fs::read(&written).expect("read original");
    let round_trip_bytes = std::fs::read(&rewritten).expect("read rewrite");
    assert_eq!(
        original_bytes, round_trip_bytes,
        "CSV round trip must be exact"
    );
}

#[test]
fn quadratic_and_hdw_residual_commands_pass_on_consistent_configs() {
    let dir = tempfile::tempdir().expect("tempdir");
    let quad = r#"
[system]
kind = "quadratic"
metrics = [[[2.0, 0.5], [0.5, 1.0]], [[-1.0, 0.0], [0.0, -0.5]]]
potential = { kind = "isotropic", strength = 0.3 }
profile = { name = "standing", amplitude = 0.2 }

[[grid.axes]]
start = 0.0
stop = 1.0
nodes = 33
boundary = "dirichlet"

[[grid.axes]]
start = 0.0
stop = 6.283185307179586
nodes = 32
boundary = "periodic"

[checks]
field_tol = 2e-2
samples = 64
refine = 2
"#;
    let config = write_config(dir.path(), "quad.toml", quad);
    let out_quad = dir.path().join("out-quad");
    let output = run_binary(&[
        "quadratic",
        "--config",
        &config,
        "--out",
        out_quad.to_str().unwrap(),
    ]);
    let stdout = stdout_of(&output);
    assert_eq!(
        output.status.code(),
        Some(0),
        "stdout: {stdout}\nstderr: {}",
        stderr_of(&output)
    );
    assert!(stdout.contains("check=hdw_pointwise"));
    assert!(out_quad.join("section.csv").is_file());

    let out_hdw = dir.path().join("out-hdw");
    let output = run_binary(&[
        "hdw-residual",
        "--config",
        &config,
        "--out",
        out_hdw.to_str().unwrap(),
    ]);
    let stdout = stdout_of(&output);
    assert_eq!(
        output.status.code(),
        Some(0),
        "stdout: {stdout}\nstderr: {}",
        stderr_of(&output)
    );
    assert!(stdout.contains("check=gauge_kernel"));
    assert!(stdout.contains("overall=pass"));
}

#[test]
fn wave_command_rejects_mismatched_system_kind() {
    let dir = tempfile::tempdir().expect("tempdir");
    let quad_only = r#"
[system]
kind = "quadratic"
metrics = [[[1.0]]]

[[grid.axes]]
start = 0.0
stop = 1.0
nodes = 9
boundary = "dirichlet"
"#;
    let config = write_config(dir.path(), "quad.toml", quad_only);
    let output = run_binary(&["wave", "--config", &config]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("kind = \"wave\""));
}
