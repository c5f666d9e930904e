use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn models() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn mvusim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvusim")).args(args).output().unwrap()
}

fn model(name: &str) -> String {
    models().join(format!("{name}.json")).display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn estimate_resnet9_total() {
    let o = mvusim(&["estimate", &model("resnet9")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.trim_end().lines().last().unwrap().contains("194688"), "{out}");
    let o = mvusim(&["estimate", &model("resnet9"), "--precision", "1/1"]);
    assert!(stdout(&o).contains("48672"));
}

#[test]
fn verify_succeeds_and_reports_trials() {
    let o = mvusim(&["verify", &model("gemv64"), "--seed", "7", "--trials", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("100/100"), "{}", stdout(&o));
    let o =
        mvusim(&["verify", &model("conv_pool_relu_quant"), "--trials", "3", "--mode", "distributed", "--sequential"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn errors_exit_nonzero_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"name":"bad","layers":[{"name":"x","kind":"gemv","input_shape":[1,1,1,1,64],
        "output_shape":[1,64],"prec_a":{"bits":2,"signed":false},"prec_w":{"bits":2,"signed":true},
        "prec_out":{"bits":8,"signed":true}}]}"#,
    )
    .unwrap();
    let o = mvusim(&["estimate", s(&bad)]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("ERROR UnsupportedShape"), "{}", stderr(&o));

    let o = mvusim(&["compile", &model("resnet9"), "--precision", "8/8", "--out", s(&dir.path().join("x"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("ERROR CapacityExceeded"), "{}", stderr(&o));

    let o = mvusim(&["estimate", s(&dir.path().join("missing.json"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("ERROR "));
}

#[test]
fn compile_and_simulate_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("in.bin");
    assert!(mvusim(&["input", &model("cnn_pipeline"), "--seed", "3", "--out", s(&input)]).status.success());
    for run in ["a", "b"] {
        let out = d.join(run);
        let o = mvusim(&["compile", &model("cnn_pipeline"), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = mvusim(&["simulate", s(&out), "--input", s(&input), "--trace", s(&out.join("trace.txt"))]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("Total"));
    }
    let mut names: Vec<_> = std::fs::read_dir(d.join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 7);
    for n in names {
        let a = std::fs::read(d.join("a").join(&n)).unwrap();
        let b = std::fs::read(d.join("b").join(&n)).unwrap();
        assert!(a == b, "{n:?} differs between runs");
    }
    assert!(d.join("a/output.bin.json").exists());
}

#[test]
fn simulate_rejects_wrong_input_shape() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = d.join("in.bin");
    assert!(mvusim(&["input", &model("gemv64"), "--out", s(&input)]).status.success());
    assert!(mvusim(&["compile", &model("conv_single"), "--out", s(&d.join("p"))]).status.success());
    let o = mvusim(&["simulate", s(&d.join("p")), "--input", s(&input)]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("ERROR ShapeMismatch"), "{}", stderr(&o));
}

#[test]
fn asm_assembles_and_lists() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("p.s");
    std::fs::write(&src, "loop:\n  addi a0, a0, 1\n  blt a0, a1, loop\n  ecall\n").unwrap();
    let out = dir.path().join("p.bin");
    let o = mvusim(&["asm", s(&src), "--out", s(&out), "--list"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("ecall"), "{text}");
    assert!(std::fs::metadata(&out).unwrap().len() > 0);
    std::fs::write(&src, "frobnicate a0\n").unwrap();
    let o = mvusim(&["asm", s(&src), "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("ERROR "));
}
