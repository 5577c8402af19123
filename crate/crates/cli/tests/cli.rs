use std::path::Path;
use std::process::{Command, Output};

fn sdemg(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdemg"))
        .args(["--profile", "smoke", "--work-dir"])
        .arg(work)
        .args(args)
        .env_remove("SDEMG_DEVICE")
        .output()
        .expect("spawn sdemg")
}

fn ok(work: &Path, args: &[&str]) -> String {
    let out = sdemg(work, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn smoke_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(w, &["synth"]);
    assert!(ok(w, &["prepare"]).contains("test:"));
    assert!(ok(w, &["train"]).contains("best validation loss"));
    assert!(w.join("model.sdck").exists());
    for m in ["sdemg", "hp", "ts"] {
        ok(w, &["denoise", "--method", m]);
    }
    let eval = ok(w, &["evaluate"]);
    for m in ["sdemg", "hp", "ts", "identity"] {
        assert!(eval.contains(m), "{m} missing from\n{eval}");
    }
    let report = ok(w, &["report"]);
    assert_eq!(report, std::fs::read_to_string(w.join("eval/report.txt")).unwrap());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = sdemg(dir.path(), &["denoise", "--method", "wavelet"]);
    assert!(!out.status.success());

    let out = sdemg(dir.path(), &["evaluate", "--input", "hp"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("METHOD=PATH"));

    // missing corpus
    let out = sdemg(dir.path(), &["prepare"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = Command::new(env!("CARGO_BIN_EXE_sdemg"))
        .args(["--profile", "smoke", "report"])
        .env("SDEMG_DEVICE", "cuda")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}
