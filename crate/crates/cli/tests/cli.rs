use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wsfcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsfcn")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&wsfcn(&["--help"])), 0);
    for sub in ["synth", "train", "eval", "ablate", "gradcheck", "infer"] {
        assert_eq!(code(&wsfcn(&[sub, "--help"])), 0, "{sub}");
    }
    assert_eq!(code(&wsfcn(&["frobnicate"])), 1);
    assert_eq!(code(&wsfcn(&["train", "--variant", "nope", "--seed", "1"])), 1);
}

#[test]
fn missing_seed_and_bad_configs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = wsfcn(&["train", "--out", p(&dir.path().join("run"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "seed = 1\nlearning_rate = 0.5\n").unwrap();
    let out = wsfcn(&["train", "--config", p(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    assert_eq!(code(&wsfcn(&["train", "--config", p(&dir.path().join("absent.cfg"))])), 2);
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = wsfcn(&["synth", "--seed", "4", "--n-train", "3", "--n-val", "2", "--out", p(d)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["manifest.txt", "train/labels.txt", "train/images/0002.ppm", "val/masks/0001.pgm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(code(&wsfcn(&["synth", "--seed", "4", "--n-train", "0", "--out", p(&a)])), 1);
}

#[test]
fn gradcheck_reports_and_rejects_unknown_scopes() {
    let o = wsfcn(&["gradcheck", "--scope", "sf2", "--seeds", "1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS sf2.sf2_fuse")));
    assert_eq!(code(&wsfcn(&["gradcheck", "--scope", "nope"])), 1);
}

#[test]
fn train_eval_infer_round() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let cfg = dir.path().join("tiny.cfg");
    fs::write(
        &cfg,
        format!(
            "# tiny run\nvariant = full\nd2 = 8\nn_train = 4\nn_val = 2\nbatch_size = 2\n\
             cls_epochs = 1\ntotal_epochs = 2\ndataset = {}\n",
            p(&data)
        ),
    )
    .unwrap();
    let o = wsfcn(&["train", "--config", p(&cfg), "--seed", "5", "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("classification loss"));
    let ck = run.join("final");
    assert!(ck.join("manifest.txt").exists() && run.join("train_log.csv").exists());

    let reports = dir.path().join("eval");
    let o = wsfcn(&["eval", "--checkpoint", p(&ck), "--multi-scale", "--filter-fp", "--out", p(&reports)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(reports.join("metrics.txt")).unwrap();
    assert_eq!(report, stdout(&o));
    assert!(report.starts_with("class_id, iou\n") && report.contains("\nmiou, "));

    let o = wsfcn(&["eval", "--checkpoint", p(&ck), "--variant", "baseline"]);
    assert_eq!(code(&o), 1);
    let o = wsfcn(&["eval", "--checkpoint", p(&ck), "--scales", "1,0"]);
    assert_eq!(code(&o), 1);
    let missing = wsfcn(&["eval", "--checkpoint", p(&dir.path().join("none")), "--dataset", p(&data)]);
    assert_eq!(code(&missing), 2);

    let image = data.join("val/images/0000.ppm");
    let pred = dir.path().join("pred");
    let o = wsfcn(&["infer", "--checkpoint", p(&ck), "--image", p(&image), "--out", p(&pred)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(pred.join("0000_mask.pgm").exists() && pred.join("0000_color.ppm").exists());
}
