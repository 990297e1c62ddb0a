//! End-to-end CLI tests: generation determinism, exit codes, a miniature
//! train -> eval -> edit pipeline.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stroke-edit"))
}

fn manifest_hash(dir: &Path) -> String {
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    manifest["config_hash"].as_str().unwrap().to_string()
}

#[test]
fn gen_is_deterministic_across_invocations() {
    let work = tempfile::tempdir().unwrap();
    let (a, b) = (work.path().join("a"), work.path().join("b"));
    for out in [&a, &b] {
        let status = bin()
            .args(["gen", "--count", "5", "--seed", "9", "--width", "48", "--height", "16"])
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(manifest_hash(&a), manifest_hash(&b));
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn usage_errors_exit_2() {
    // missing required --out
    let out = bin().args(["gen", "--count", "4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    // unknown flag is an error, not a warning
    let out = bin()
        .args(["gen", "--count", "4", "--out", "/tmp/x", "--bogus-flag"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let work = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["eval", "--mode", "paired", "--out"])
        .arg(work.path().join("r.json"))
        .args(["--ckpt"])
        .arg(work.path().join("missing.ckpt"))
        .args(["--data"])
        .arg(work.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["gen", "pretrain-rec", "train", "eval", "edit"] {
        assert!(text.contains(sub), "help must document {sub}");
    }
    for sub in ["gen", "train", "eval", "edit"] {
        let out = bin().args([sub, "--help"]).output().unwrap();
        assert!(out.status.success(), "{sub} --help failed");
    }
}

#[test]
fn mini_pipeline_train_eval_edit() {
    let work = tempfile::tempdir().unwrap();
    let syn = work.path().join("syn");
    let status = bin()
        .args(["gen", "--count", "8", "--seed", "3", "--width", "48", "--height", "16"])
        .arg("--out")
        .arg(&syn)
        .status()
        .unwrap();
    assert!(status.success());

    let config = work.path().join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "total_iters": 2,
            "batch_size": 3,
            "real_per_batch": 0,
            "lr": 1e-4,
            "seed": 4,
            "model": {
                "base_channels": 4, "image_w": 48, "image_h": 16, "k": 4,
                "rec_hidden": 12, "rec_embed": 8, "rec_attn": 10
            },
            "rec": {"iters": 2, "batch_size": 4},
            "log_interval": 1, "checkpoint_interval": 0, "grid_interval": 1
        })
        .to_string(),
    )
    .unwrap();
    let run = work.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--syn")
        .arg(&syn)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("final.ckpt");
    assert!(ckpt.is_file());
    assert!(run.join("train_log.jsonl").is_file());
    assert!(run.join("grid_0000000.png").is_file());
    // wall-clock metadata is confined to the sidecar
    assert!(run.join("final.meta.json").is_file());

    // eval writes a schema-complete report
    let report_path = work.path().join("report.json");
    let out = bin()
        .args(["eval", "--mode", "paired", "--limit", "3"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--data")
        .arg(&syn)
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(report["n_images"], 3);
    for field in ["mse", "psnr", "ssim", "fid", "seq_acc"] {
        assert!(
            report[field].is_number(),
            "field {field} missing or non-numeric"
        );
        assert!(report[field].as_f64().unwrap().is_finite());
    }

    // unpaired evaluation over a real stand-in corpus with a targets file
    let real = work.path().join("real");
    let status = bin()
        .args(["gen", "--count", "5", "--seed", "8", "--kind", "real", "--width", "48", "--height", "16"])
        .arg("--out")
        .arg(&real)
        .status()
        .unwrap();
    assert!(status.success());
    let targets = work.path().join("targets.txt");
    std::fs::write(&targets, "nova\nlumen\n").unwrap();
    let unpaired_report = work.path().join("unpaired.json");
    let out = bin()
        .args(["eval", "--mode", "unpaired"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--data")
        .arg(&real)
        .arg("--targets")
        .arg(&targets)
        .arg("--out")
        .arg(&unpaired_report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&unpaired_report).unwrap()).unwrap();
    assert_eq!(report["n_images"], 5);
    assert!(report["seq_acc"].as_f64().unwrap().is_finite());

    // edit a corpus image toward a new word
    let edited = work.path().join("edited.png");
    let grid = work.path().join("debug.png");
    let out = bin()
        .args(["edit", "--text", "nova"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--image")
        .arg(syn.join("000000").join("i_s.png"))
        .arg("--out")
        .arg(&edited)
        .arg("--debug-grid")
        .arg(&grid)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(edited.is_file());
    assert!(grid.is_file());

    // unsupported character in --text: usage error naming the character
    let out = bin()
        .args(["edit", "--text", "naïve"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--image")
        .arg(syn.join("000000").join("i_s.png"))
        .arg("--out")
        .arg(work.path().join("x.png"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains('ï'), "error must name the character: {stderr}");
}
