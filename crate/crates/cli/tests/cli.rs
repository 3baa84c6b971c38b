use std::path::Path;
use std::process::{Command, Output};

fn agentreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentreg"))
        .args(args)
        .env_remove("AGENTREG_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("cfg.txt");
    std::fs::write(
        &p,
        format!("epochs = 2\ndata.train = 2\ndata.val = 0\ndata.test = 2\ndata.scenes = 1\n{extra}"),
    )
    .unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let data = tmp.path().join("data");
    let train = tmp.path().join("train");
    let eval = tmp.path().join("eval");

    let o = agentreg(&["synth", "--config", &cfg, "--seed", "3", "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("manifest.txt").is_file());

    let o = agentreg(&["train", "--config", &cfg, "--seed", "3", "--variant", "M7", "--data", s(&data), "--out", s(&train)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ck = train.join("checkpoint.a2ck");
    assert!(ck.is_file());

    let o = agentreg(&[
        "eval", "--config", &cfg, "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&eval), "--debug-oracle-pose",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("RR 1.000"));
    for f in ["report.csv", "report.json", "poses.txt"] {
        assert!(eval.join(f).is_file(), "{f}");
    }

    let o = agentreg(&["report", s(&eval), "--out", s(&tmp.path().join("summary"))]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean"));
    assert!(tmp.path().join("summary/summary.txt").is_file());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let bad = small_config(tmp.path(), "no_such_key = 1\n");
    assert_eq!(code(&agentreg(&["synth", "--config", &bad, "--out", s(&out)])), 2);

    let missing = tmp.path().join("absent.txt");
    assert_eq!(code(&agentreg(&["synth", "--config", s(&missing), "--out", s(&out)])), 2);

    let cfg = small_config(tmp.path(), "");
    assert_eq!(
        code(&agentreg(&["train", "--config", &cfg, "--variant", "M9", "--data", s(tmp.path()), "--out", s(&out)])),
        2
    );
    // usage errors are config errors too
    assert_eq!(code(&agentreg(&["synth"])), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_agentreg"))
        .args(["synth", "--config", &cfg, "--out", s(&out)])
        .env("AGENTREG_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn thread_cap_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let o = Command::new(env!("CARGO_BIN_EXE_agentreg"))
        .args(["synth", "--config", &cfg, "--out", s(&tmp.path().join("d"))])
        .env("AGENTREG_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("o");
    let nowhere = tmp.path().join("nowhere");
    assert_eq!(code(&agentreg(&["train", "--config", &cfg, "--data", s(&nowhere), "--out", s(&out)])), 3);

    let data = tmp.path().join("data");
    assert_eq!(code(&agentreg(&["synth", "--config", &cfg, "--out", s(&data)])), 0);
    let junk = tmp.path().join("junk.a2ck");
    std::fs::write(&junk, b"A2CK not really").unwrap();
    assert_eq!(
        code(&agentreg(&["eval", "--config", &cfg, "--data", s(&data), "--checkpoint", s(&junk), "--out", s(&out)])),
        3
    );
    assert_eq!(code(&agentreg(&["report", s(&nowhere)])), 3);
}

#[test]
fn divergence_exits_4_with_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "lr = 1e150\n");
    let data = tmp.path().join("data");
    let train = tmp.path().join("train");
    assert_eq!(code(&agentreg(&["synth", "--config", &cfg, "--out", s(&data)])), 0);
    let o = agentreg(&["train", "--config", &cfg, "--data", s(&data), "--out", s(&train)]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(train.join("nan_dump/info.txt").is_file());
}
