use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 6] = [
    "--model.depth=1",
    "--model.base_width=4",
    "--train.seed_epochs=2",
    "--train.recursion_epochs=1",
    "--stop.max_recursions=2",
    "--selection.stage2=auto",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_recurseg"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) -> String {
    let out = dir.display().to_string();
    ok(&["synth", "--out", &out, "--n-pix", "4", "--n-img", "10", "--n-test", "8", "--seed", "3"]);
    dir.join("experiment.toml").display().to_string()
}

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend(TINY);
    v
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path());
    synth(b.path());
    for f in ["d_pix.jsonl", "d_img.jsonl", "test.jsonl", "images/d_img-0007.png"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn dry_run_prints_plan_without_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let out = ok(&["run", "-c", &cfg, "--dry-run", "--stop.max_recursions=7"]);
    assert!(out.contains("stage 1"), "{out}");
    assert!(out.contains("up to 7 recursions"), "{out}");
    assert!(!dir.path().join("experiment").join("state.json").exists());
}

#[test]
fn full_run_resume_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let exp = dir.path().join("experiment");

    // Stop part-way, then let `run` pick up from there.
    ok(&with_tiny(&["train-seed", "-c", &cfg]));
    ok(&with_tiny(&["gen-candidates", "-c", &cfg]));
    let out = ok(&with_tiny(&["recurse", "-c", &cfg, "--steps", "1", "--no-wait"]));
    assert!(out.contains("advanced") || out.contains("finished"), "{out}");
    let state: serde_json::Value = serde_json::from_slice(&std::fs::read(exp.join("state.json")).unwrap()).unwrap();
    assert_eq!(state["recursion_index"], 1);

    let out = ok(&with_tiny(&["run", "-c", &cfg]));
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(summary["outcome"]["status"], "finished");
    assert!(summary["recursion_index"].as_u64().unwrap() >= 1);
    for f in ["report.txt", "report.json", "boxplot.json", "per_unit.csv"] {
        assert!(exp.join("report").join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(exp.join("history.log")).unwrap();
    for event in ["stage1", "candidates", "selected", "trained", "stopped", "report"] {
        assert!(history.contains(&format!("\"event\":\"{event}\"")), "{event}");
    }
    let per_unit = std::fs::read_to_string(exp.join("report").join("per_unit.csv")).unwrap();
    assert!(per_unit.contains("patient"));

    // A finished experiment is not retrained.
    let state_before = std::fs::read(exp.join("state.json")).unwrap();
    ok(&with_tiny(&["run", "-c", &cfg]));
    assert_eq!(std::fs::read(exp.join("state.json")).unwrap(), state_before);

    let out_dir = dir.path().join("eval");
    let table = ok(&with_tiny(&["eval", "-c", &cfg, "--out", &out_dir.display().to_string()]));
    assert!(table.contains("before"), "{table}");
    assert!(out_dir.join("report.json").exists());

    let report = ok(&with_tiny(&["report", "-c", &cfg]));
    assert!(report.contains("recursion  new  total"), "{report}");
    assert!(report.contains("stopped"), "{report}");
}

#[test]
fn changed_config_is_refused_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    ok(&with_tiny(&["train-seed", "-c", &cfg]));
    let mut args = with_tiny(&["run", "-c", &cfg]);
    args.push("--loss.dice_weight=2.0");
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `load`"), "{err}");
}

#[test]
fn stage_failure_exits_nonzero_with_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    std::fs::remove_file(dir.path().join("images").join("d_pix-0000.png")).unwrap();
    let out = run(&with_tiny(&["run", "-c", &cfg]));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage `"), "{err}");
    assert!(!dir.path().join("experiment").join("r0").exists());
}

#[test]
fn unknown_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    let out = run(&["run", "-c", &cfg, "--dry-run", "--train.bogus=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn seed_training_is_reproducible_and_lowers_the_loss() {
    let mut shas = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synth(dir.path());
        let mut args = with_tiny(&["train-seed", "-c", &cfg]);
        // Later overrides win.
        args.push("--train.seed_epochs=4");
        let out = ok(&args);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        shas.push(v["checkpoint"]["sha256"].as_str().unwrap().to_string());
        let state: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("experiment/state.json")).unwrap()).unwrap();
        let losses = state["stage1_losses"].as_array().unwrap();
        assert_eq!(losses.len(), 4);
        let ce = |e: &serde_json::Value| e["cross_entropy"].as_f64().unwrap();
        assert!(ce(&losses[3]) < ce(&losses[0]), "{losses:?}");
    }
    assert_eq!(shas[0], shas[1]);
}
