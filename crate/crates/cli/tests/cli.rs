use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn splitnn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splitnn"))
        .args(args)
        .env("SPLITNN_OUTPUT_DIR", out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn splitnn")
}

fn run_ok(config: &str, extra: &[&str], out: &Path) {
    let path = configs().join(config);
    let mut args = vec!["run", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = splitnn(&args, out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn metrics(out: &Path, run: &str) -> Vec<u8> {
    fs::read(out.join(run).join("metrics.csv")).unwrap()
}

#[test]
fn run_writes_one_row_per_step_and_one_eval_row_per_epoch() {
    let out = tempfile::tempdir().unwrap();
    run_ok("vanilla.toml", &[], out.path());
    let dir = out.path().join("splitnn-vanilla");
    for f in ["metrics.csv", "summary.txt", "weights.spln", "run.info"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let text = String::from_utf8(metrics(out.path(), "splitnn-vanilla")).unwrap();
    let kinds: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    // 4 clients of 100 rows at batch 16: 7 batches each.
    assert_eq!(kinds.iter().filter(|k| **k == "train").count(), 3 * 28);
    assert_eq!(kinds.iter().filter(|k| **k == "eval").count(), 3);
    let weights = fs::read(dir.join("weights.spln")).unwrap();
    assert_eq!(&weights[..4], b"SPLN");
}

#[test]
fn same_seed_gives_identical_metrics_across_runs_and_transports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    run_ok("ushaped.toml", &[], a.path());
    run_ok("ushaped.toml", &[], b.path());
    run_ok("ushaped.toml", &["--transport", "tcp"], c.path());
    let m = metrics(a.path(), "splitnn-ushaped");
    assert_eq!(m, metrics(b.path(), "splitnn-ushaped"));
    assert_eq!(m, metrics(c.path(), "splitnn-ushaped"));
}

#[test]
fn seed_flag_changes_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_ok("federated.toml", &[], a.path());
    run_ok("federated.toml", &["--seed", "8"], b.path());
    assert_ne!(metrics(a.path(), "federated"), metrics(b.path(), "federated"));
}

#[test]
fn vertical_partition_with_vanilla_topology_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("vertical.toml"))
        .unwrap()
        .replace("kind = \"vertical\"", "kind = \"vanilla\"\ncut_points = [1]");
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, text).unwrap();
    for cmd in ["validate", "run"] {
        let o = splitnn(&[cmd, bad.to_str().unwrap()], dir.path());
        assert!(!o.status.success());
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("vertical partition needs the vertical or multitask topology"), "{err}");
    }
    assert!(!dir.path().join("splitnn-vanilla").exists());
}

#[test]
fn unknown_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = fs::read_to_string(configs().join("federated.toml")).unwrap();
    fs::write(&bad, text.replace("seed = 7", "seed = 7\nsede = 3")).unwrap();
    let o = splitnn(&["validate", bad.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
}

#[test]
fn second_run_summary_includes_comparison_and_compare_writes_curves() {
    let out = tempfile::tempdir().unwrap();
    run_ok("federated.toml", &[], out.path());
    run_ok("vanilla.toml", &[], out.path());
    let summary = fs::read_to_string(out.path().join("splitnn-vanilla/summary.txt")).unwrap();
    assert!(summary.contains("Per-client resources"), "{summary}");
    assert!(summary.contains("0.1548"));
    let first = fs::read_to_string(out.path().join("federated/summary.txt")).unwrap();
    assert!(!first.contains("Per-client resources"));

    let o = splitnn(&["compare", out.path().to_str().unwrap()], out.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curves = fs::read_to_string(out.path().join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 3);
}

#[test]
fn compare_refuses_missing_directory() {
    let out = tempfile::tempdir().unwrap();
    let o = splitnn(&["compare", out.path().join("nope").to_str().unwrap()], out.path());
    assert!(!o.status.success());
}
