use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use synthalign::protocol::Role;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_synthalign"));
    for role in Role::ALL {
        c.env_remove(role.env_var());
    }
    c.env_remove("RUST_LOG");
    c
}

fn mock_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/mock.toml")
        .display()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn demo_run(out: &Path, n: usize) -> Output {
    run(&[
        "--config",
        &mock_config(),
        "--out",
        out.to_str().unwrap(),
        "--log-level",
        "warn",
        "run",
        "--demo",
        &n.to_string(),
    ])
}

#[test]
fn missing_backend_names_the_role() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", dir.path().to_str().unwrap(), "run", "--demo", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("image_gen"), "{err}");
    assert!(err.contains("SYNTHALIGN_BACKEND_IMAGE_GEN_URL"), "{err}");
}

#[test]
fn env_provides_backend_urls() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = bin();
    for role in Role::ALL {
        c.env(role.env_var(), "mock:");
    }
    let o = c
        .args(["--out", dir.path().to_str().unwrap(), "--log-level", "warn", "run", "--demo", "2"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("run-config.toml").exists());
}

#[test]
fn run_rerun_validate_export_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = demo_run(&out, 50);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("paired: 50 degenerate: 0 failed: 0 skipped: 0 new: 50"));

    let o = demo_run(&out, 50);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("skipped: 50 new: 0"), "{}", stdout(&o));

    let store = out.to_str().unwrap();
    let o = run(&["validate", "--store", store]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);

    let o = run(&["--out", dir.path().to_str().unwrap(), "export", "--store", store, "--name", "train"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(dir.path().join("train.dpo.jsonl")).unwrap().lines().count(), 50);

    let sample = |dest: &str| {
        let dest = dir.path().join(dest);
        let o = run(&["--seed", "5", "sample", "--store", store, "--n", "10", "--dest", dest.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(dest.join("records.jsonl")).unwrap()
    };
    assert_eq!(sample("s1"), sample("s2"));

    let reports = dir.path().join("rep");
    let o = run(&["--out", reports.to_str().unwrap(), "analyze", "guidance", "--store", store]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for ext in ["json", "md", "csv"] {
        assert!(reports.join("reports").join(format!("guidance.{ext}")).exists());
    }

    let o = run(&["--out", reports.to_str().unwrap(), "analyze", "overlap", "--store", store]);
    assert_eq!(o.status.code(), Some(1));

    let mismatched = dir.path().join("rank.jsonl");
    fs::write(&mismatched, "{\"prompt_id\":\"p00000\",\"method_id\":\"clip\",\"ranking\":[0,1,2]}\n").unwrap();
    let o = run(&[
        "--out",
        reports.to_str().unwrap(),
        "analyze",
        "overlap",
        "--store",
        store,
        "--rankings",
        mismatched.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn invalid_store_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(demo_run(&out, 3).status.code(), Some(0));
    let log = out.join("records.jsonl");
    let mut bytes = fs::read(&log).unwrap();
    bytes[20] ^= 0x20;
    fs::write(&log, bytes).unwrap();

    let o = run(&["validate", "--store", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["--out", dir.path().to_str().unwrap(), "export", "--store", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("validate"), "{}", stderr(&o));
}

#[test]
fn guidance_on_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(demo_run(&out, 0).status.code(), Some(0));
    let o = run(&["--out", out.to_str().unwrap(), "analyze", "guidance", "--store", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn judge_table_from_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("judge.json");
    fs::write(
        &input,
        r#"{"method_a":"RM","method_b":"CLIP","method_a_wins":53,"method_b_wins":37,"ties":10}"#,
    )
    .unwrap();
    let o = run(&["--out", dir.path().to_str().unwrap(), "analyze", "judge", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.contains("| RM wins | 53 | 58.9% |"), "{table}");
    assert!(table.contains("| CLIP wins | 37 | 41.1% |"), "{table}");
    assert!(table.contains("10.0%"), "{table}");
}

#[test]
fn verify_math_passes() {
    let o = run(&["verify-math"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("0.693147"), "{text}");
    assert_eq!(text.matches(" pass ").count(), 4, "{text}");
}

#[test]
fn usage_errors() {
    assert_eq!(run(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[pipeline]\nguidance_scales = []\n").unwrap();
    assert_eq!(run(&["--config", bad.to_str().unwrap(), "verify-math"]).status.code(), Some(2));
    fs::write(&bad, "colour = 1\n").unwrap();
    assert_eq!(run(&["--config", bad.to_str().unwrap(), "verify-math"]).status.code(), Some(2));
}

#[test]
fn help_lists_commands() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["run", "analyze", "validate", "export", "sample", "verify-math", "mock-serve"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
