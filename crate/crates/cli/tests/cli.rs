use std::fs;
use std::path::Path;
use std::process::Command;

fn sorl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sorl"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path
}

const SMOKE: &str = r#"
[experiment]
name = "smoke"
seeds = [0, 1]
algos = ["sorl", "sac_c", "lagrangian"]

[env]
name = "doom_corridor"
length = 3

[agent]
total_steps = 250
warmup_steps = 80
batch_size = 16
hidden = 8
"#;

fn json_lines(stdout: &[u8]) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("stdout line is JSON"))
        .collect()
}

#[test]
fn run_writes_logs_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let out_dir = tmp.path().join("out");
    let out = sorl().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let lines = json_lines(&out.stdout);
    let done = lines.last().unwrap();
    assert_eq!(done["event"], "done");
    assert_eq!(done["runs"], 6);
    assert_eq!(done["failed"], 0);
    assert!(out_dir.join("manifest.json").is_file());
    for name in ["sorl_seed0", "sorl_seed1", "sac_c_seed0", "sac_c_seed1", "lagrangian_seed0"] {
        assert!(out_dir.join(format!("{name}.jsonl")).is_file(), "missing {name}");
    }

    let sum = sorl().args(["summarize", "--out"]).arg(&out_dir).output().unwrap();
    assert_eq!(sum.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&sum.stderr));
    let lines = json_lines(&sum.stdout);
    assert_eq!(lines[0]["event"], "summary");
    assert_eq!(lines[0]["points"].as_array().unwrap().len(), 3);
    assert!(out_dir.join("pareto.csv").is_file());
    assert!(out_dir.join("violations_vs_return.csv").is_file());
}

#[test]
fn run_honors_the_narrowing_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);
    let out_dir = tmp.path().join("narrow");
    let out = sorl()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--seed", "7", "--algo", "sorl", "--delta", "-5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let runs = manifest["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0]["algo"], "sorl");
    assert_eq!(runs[0]["seed"], 7);
    assert_eq!(runs[0]["log"], "sorl_seed7_deltam5.jsonl");
    assert!(out_dir.join("sorl_seed7_deltam5.jsonl").is_file());
}

#[test]
fn config_problems_exit_one() {
    let tmp = tempfile::tempdir().unwrap();

    let missing = sorl()
        .args(["run", "--config", "/nonexistent/exp.toml", "--out"])
        .arg(tmp.path().join("a"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));

    let cfg = write_config(tmp.path(), "[agent]\nbogus_key = 1\n[env]\nname = \"doom_corridor\"\n");
    let unknown = sorl()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("b"))
        .output()
        .unwrap();
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("error:"));

    let cfg = write_config(tmp.path(), SMOKE);
    let bad_algo = sorl()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("c"))
        .args(["--algo", "dqn"])
        .output()
        .unwrap();
    assert_eq!(bad_algo.status.code(), Some(1));
}

#[test]
fn invocation_problems_exit_one_and_help_exits_zero() {
    let no_flag = sorl().arg("run").output().unwrap();
    assert_eq!(no_flag.status.code(), Some(1));

    let unknown_cmd = sorl().arg("frobnicate").output().unwrap();
    assert_eq!(unknown_cmd.status.code(), Some(1));

    let help = sorl().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("summarize"));
}

#[test]
fn verify_emits_json_checks_and_passes() {
    let out = sorl().arg("verify").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&out.stdout);
    assert!(lines.len() > 10);
    for line in &lines {
        assert!(line.get("check").is_some());
        assert_eq!(line["pass"], true, "failing check line: {line}");
    }
    let summary = lines.last().unwrap();
    assert_eq!(summary["check"], "summary");
    assert_eq!(summary["failed"], 0);
}

#[test]
fn tune_reports_solved_and_unattainable_targets() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMOKE);

    let solved = sorl().args(["tune", "--config"]).arg(&cfg).args(["--delta", "1"]).output().unwrap();
    assert_eq!(solved.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&solved.stderr));
    let v = json_lines(&solved.stdout).remove(0);
    assert_eq!(v["attainable"], true);
    assert!((v["delta_achieved"].as_f64().unwrap() - 1.0).abs() < 1e-5);
    assert!(v["lambda_solved"].as_f64().unwrap() > 0.0);
    assert!(v["penalty_c"].as_f64().unwrap() > 0.0);

    let capped = sorl().args(["tune", "--config"]).arg(&cfg).args(["--delta", "300"]).output().unwrap();
    assert_eq!(capped.status.code(), Some(0));
    let v = json_lines(&capped.stdout).remove(0);
    assert_eq!(v["attainable"], false);
    assert!(v["delta_achieved"].as_f64().unwrap() < 300.0);
}

#[test]
fn faulted_runs_exit_two_and_stay_in_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[experiment]
seeds = [0]
algos = ["sorl"]

[env]
name = "doom_corridor"
length = 2

[agent]
total_steps = 120
warmup_steps = 40
batch_size = 16
hidden = 8
lambda_init = 1e200
"#,
    );
    let out_dir = tmp.path().join("out");
    let out = sorl().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let lines = json_lines(&out.stdout);
    let done = lines.last().unwrap();
    assert_eq!(done["failed"], 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["runs"][0]["error"].as_str().unwrap().contains("training fault"));
}
