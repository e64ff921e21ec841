use std::path::Path;
use std::process::Command;

fn fsep(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fsep"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

#[test]
fn gen_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = fsep(
        &["gen", "--scenario", "split-sphere", "--cells", "12", "--steps", "4", "--out", "data"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(
        d.join("run.cfg"),
        "dataset = data/manifest.txt\noutput = out\nt0 = 0\ntf = 3\nsmooth_iterations = 2\n",
    )
    .unwrap();
    let out = fsep(&["run", "--config", "run.cfg"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = fsep(&["report", "--run", "out"], d);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("[summary]\nmode\tserial\n"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // unknown config key
    std::fs::write(d.join("bad.cfg"), "dataset = x\noutput = y\nt0 = 0\ntf = 0\nspeed = 3\n").unwrap();
    assert_eq!(fsep(&["run", "--config", "bad.cfg"], d).status.code(), Some(1));
    // valid config, missing dataset
    std::fs::write(d.join("ok.cfg"), "dataset = missing.txt\noutput = y\nt0 = 0\ntf = 0\n").unwrap();
    assert_eq!(fsep(&["run", "--config", "ok.cfg"], d).status.code(), Some(2));
    // corrupt step file
    fsep(&["gen", "--scenario", "rigid-rotation", "--cells", "6", "--steps", "2", "--out", "data"], d);
    std::fs::write(d.join("data").join("step_0001.bin"), b"FSEP0001").unwrap();
    std::fs::write(d.join("c.cfg"), "dataset = data/manifest.txt\noutput = y\nt0 = 0\ntf = 1\n").unwrap();
    assert_eq!(fsep(&["run", "--config", "c.cfg"], d).status.code(), Some(2));
    // bad arguments
    assert_eq!(fsep(&["gen", "--scenario", "nope", "--out", "z"], d).status.code(), Some(1));
    assert_eq!(fsep(&["report", "--run", "nowhere"], d).status.code(), Some(2));
}
