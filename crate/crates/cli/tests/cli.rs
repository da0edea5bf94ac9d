use std::path::Path;
use std::process::{Command, Output};

fn topk_lab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topk-lab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("TOPK_LAB_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&topk_lab(dir.path(), &["verify-bounds", "--trials", "0"])), 2);
    assert_eq!(code(&topk_lab(dir.path(), &["verify-bounds", "--theorems", "comp_nope"])), 2);
    assert_eq!(code(&topk_lab(dir.path(), &["no-such-command"])), 2);
    assert_eq!(code(&topk_lab(dir.path(), &["--threads", "0", "gradcheck", "--points", "2"])), 2);
}

#[test]
fn missing_base_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(
        &cfg,
        r#"{"version": 1, "seed": 1,
            "data": {"source": "synthetic", "recipe": {"kind": "gaussian_clusters", "n_classes": 4, "dim": 2,
                     "samples": 50, "cluster_spread": 0.3, "overlap_factor": 0.0}},
            "k_schedule": {"kind": "doubling", "max": 2}}"#,
    )
    .unwrap();
    let o = topk_lab(dir.path(), &["--config", cfg.to_str().unwrap(), "train-selector"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let o = topk_lab(dir.path(), &["--config", cfg.to_str().unwrap(), "curve"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn holding_and_violated_bounds_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let ok = topk_lab(
        dir.path(),
        &["--seed", "1", "verify-bounds", "--theorems", "comp_log,cs_cstnd_exp", "--trials", "300"],
    );
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let lines = std::fs::read_to_string(dir.path().join("verify_bounds.jsonl")).unwrap();
    assert!(!lines.is_empty());
    for l in lines.lines() {
        serde_json::from_str::<serde_json::Value>(l).unwrap();
    }
    let bad = topk_lab(
        dir.path(),
        &["--seed", "1", "verify-bounds", "--theorems", "comp_mae", "--k", "2", "--trials", "2000"],
    );
    assert_eq!(code(&bad), 1);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = topk_lab(dir.path(), &["--seed", "3", "gradcheck", "--points", "10"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn synth_with_no_samples_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    let o = topk_lab(
        dir.path(),
        &["synth", "--classes", "3", "--dim", "2", "--samples", "0", "--output", path.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&path).unwrap().trim_end(), "f0,f1,label");
}
