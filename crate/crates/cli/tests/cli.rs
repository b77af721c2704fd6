use std::path::Path;
use std::process::{Command, Output};

fn ecat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecat")).args(args).output().expect("spawn ecat")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trained checkpoint and a few validation images, via selftest and synth.
fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let run = dir.join("run");
    ok(&ecat(&["selftest", "--out", s(&run)]));
    let val = dir.join("val");
    ok(&ecat(&["synth", "--split", "val", "--count", "3", "--out", s(&val)]));
    (run.join("stage2.ckpt"), val)
}

#[test]
fn compress_decompress_chain_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, val) = fixture(dir.path());
    let img = val.join("00000.ppm");
    let a = dir.path().join("a.ecat");
    let b = dir.path().join("b.ecat");
    let y = dir.path().join("y.ppm");
    ok(&ecat(&["compress", "--checkpoint", s(&ck), s(&img), "-o", s(&a)]));
    let text = ok(&ecat(&["decompress", "--checkpoint", s(&ck), s(&a), "-o", s(&y), "--reference", s(&img)]));
    assert!(text.contains("psnr_db="), "{text}");
    ok(&ecat(&["compress", "--checkpoint", s(&ck), s(&img), "-o", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let y2 = dir.path().join("y2.ppm");
    ok(&ecat(&["decompress", "--checkpoint", s(&ck), s(&b), "-o", s(&y2)]));
    assert_eq!(std::fs::read(&y).unwrap(), std::fs::read(&y2).unwrap());

    let top = ok(&ecat(&["classify", "--checkpoint", s(&ck), s(&a)]));
    assert_eq!(top.lines().count(), 5, "{top}");
    assert!(top.starts_with("1 class="));
}

#[test]
fn classify_takes_only_a_bitstream() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, val) = fixture(dir.path());
    let img = val.join("00000.ppm");
    let a = dir.path().join("a.ecat");
    ok(&ecat(&["compress", "--checkpoint", s(&ck), s(&img), "-o", s(&a)]));
    // A second positional argument is a usage error.
    let extra = ecat(&["classify", "--checkpoint", s(&ck), s(&a), s(&img)]);
    assert_eq!(extra.status.code(), Some(1));
    // An image where a bitstream belongs is rejected as malformed.
    let wrong = ecat(&["classify", "--checkpoint", s(&ck), s(&img)]);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let out = ecat(&["classify", "--checkpoint", s(&missing), "x.ecat"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "bogus_key=1\n").unwrap();
    assert_eq!(ecat(&["selftest", "--config", s(&cfg)]).status.code(), Some(1));
    assert_eq!(ecat(&["selftest", "--profile", "huge"]).status.code(), Some(1));
    assert_eq!(ecat(&["--help"]).status.code(), Some(0));
}

#[test]
fn evaluate_ablate_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let (ck, val) = fixture(dir.path());
    let out = dir.path().join("eval");
    let text = ok(&ecat(&["evaluate", "--checkpoint", s(&ck), "--data", s(&val), "--out", s(&out)]));
    assert!(text.contains("top1="), "{text}");
    let ladder = ok(&ecat(&["ablate", "--checkpoint", s(&ck), "--data", s(&val), "--out", s(&out)]));
    assert_eq!(ladder.lines().count(), 5);
    ok(&ecat(&["curves", s(&out.join("record.csv")), "--out", s(&out)]));
    let rd = std::fs::read_to_string(out.join("rate_distortion.csv")).unwrap();
    assert!(rd.starts_with("bpp,psnr,top1,alpha,beta,seed\n"));
    assert_eq!(rd.lines().count(), 2);
}
