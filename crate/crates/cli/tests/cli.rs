use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ergodic() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ergodic"));
    c.env_remove("ERGODIC_OUT_DIR");
    c
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const ESCAPE: &str = "scenario_kind = \"open_escape\"\nseed = 4\n\n[model]\npreset = \"tent\"\nc = 3.0\n\n[numeric]\nn_cells = 729\ntol = 1e-10\nmax_iters = 2000\n";

#[test]
fn missing_seed_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &ESCAPE.replace("seed = 4\n", ""));
    for sub in ["run", "validate"] {
        let o = ergodic()
            .arg(sub)
            .arg(&cfg)
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(2), "{sub}");
        let msg = stderr(&o);
        assert!(msg.contains("seed") && msg.contains("line"), "{msg}");
    }
    assert!(!dir.path().join("ergodic-out").exists());
}

#[test]
fn type_errors_point_at_the_offending_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        &ESCAPE.replace("n_cells = 729", "n_cells = \"many\""),
    );
    let o = ergodic().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 9"), "{}", stderr(&o));

    let cfg = write(
        dir.path(),
        "k.toml",
        &ESCAPE.replace("open_escape", "open_escapes"),
    );
    let o = ergodic().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn validate_accepts_every_bundled_scenario() {
    for entry in
        fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")).unwrap()
    {
        let path = entry.unwrap().path();
        let o = ergodic().arg("validate").arg(&path).output().unwrap();
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
    }
}

#[test]
fn list_scenarios_names_all_kinds() {
    let o = ergodic().arg("list-scenarios").output().unwrap();
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    for kind in [
        "covering_check",
        "ulam_stability",
        "open_escape",
        "pdmp_run",
        "pdmp_foguel",
        "semiflow_invariance",
        "semiflow_mixing",
    ] {
        assert!(out.contains(kind), "{kind}");
    }
}

#[test]
fn open_escape_reports_two_thirds() {
    let dir = tempfile::tempdir().unwrap();
    let o = ergodic()
        .arg("run")
        .arg(scenario("open_escape_tent3.toml"))
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let lambda = json(&dir.path().join("escape.json"))["lambda"]
        .as_f64()
        .unwrap();
    assert!((lambda - 0.6667).abs() < 1e-3);
    let csv = fs::read_to_string(dir.path().join("escape.csv")).unwrap();
    assert!(csv.starts_with("# lambda="));
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
}

#[test]
fn runtime_failure_exits_one_and_leaves_no_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    // The c = 3 tent is open, so the closed Ulam construction fails.
    let cfg = write(
        dir.path(),
        "c.toml",
        "scenario_kind = \"ulam_stability\"\nseed = 1\n\n[model]\npreset = \"tent\"\nc = 3.0\n\n[numeric]\nn_cells = 27\ntol = 1e-9\nmax_iters = 100\n",
    );
    let out = dir.path().join("out");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("density.csv"), "stale").unwrap();
    fs::write(out.join("manifest.json"), "{}").unwrap();
    fs::write(out.join("notes.txt"), "mine").unwrap();
    let o = ergodic()
        .arg("run")
        .arg(&cfg)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("not closed"));
    let left: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(left, vec!["notes.txt"]);
}

#[test]
fn out_dir_from_environment_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", ESCAPE);
    let env_out = dir.path().join("from_env");
    let o = ergodic()
        .env("ERGODIC_OUT_DIR", &env_out)
        .arg("run")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env_out.join("escape.json").exists());

    let flag_out = dir.path().join("from_flag");
    let o = ergodic()
        .env("ERGODIC_OUT_DIR", &env_out)
        .args(["run", "--seed-override", "99", "--out-dir"])
        .arg(&flag_out)
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&flag_out.join("manifest.json"));
    assert_eq!(m["seed"], 99);
    assert_eq!(m["seed_overridden"], true);
    assert_eq!(json(&env_out.join("manifest.json"))["seed"], 4);
}

#[test]
fn seed_changes_monte_carlo_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "p.toml",
        "scenario_kind = \"pdmp_run\"\nseed = 1\noutputs = [\"trajectory.csv\"]\n\n[model]\npreset = \"two_mode\"\na = 1.0\nb = 1.0\n\n[numeric]\ninitial_x = [0.5]\npath_horizon = 10.0\nn_particles = 10\ntimes = [1.0]\nwindow = { lo = 0.0, hi = 1.0, bins = 5 }\n",
    );
    let mut outputs = Vec::new();
    for seed in ["1", "2", "1"] {
        let out = dir.path().join(format!("s{}", outputs.len()));
        let o = ergodic()
            .args(["run", "--seed-override", seed, "--out-dir"])
            .arg(&out)
            .arg(&cfg)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(!out.join("densities.csv").exists());
        outputs.push(fs::read(out.join("trajectory.csv")).unwrap());
    }
    assert_ne!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}
