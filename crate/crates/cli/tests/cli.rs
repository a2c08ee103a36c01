use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mininet::pipeline::{read_image, write_disk_dataset, DiskConfig};

fn mininet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mininet"))
        .args(args)
        .env("MININET_THREADS", "0")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
    manifest: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DiskConfig {
            train: 10,
            test: 3,
            size: 16,
            max_disks: 2,
            seed: 4,
        };
        let manifest = write_disk_dataset(&dir.path().join("data"), &cfg).unwrap();
        let text = format!(
            "data.manifest = {}\ndata.height = 16\ndata.width = 16\ntrain.epochs = 2\ntrain.batch_size = 2\noptimizer.lr = 1e-3\n",
            manifest.display()
        );
        fs::write(dir.path().join("run.cfg"), text).unwrap();
        Fixture { dir, manifest }
    }

    fn config(&self) -> String {
        self.dir.path().join("run.cfg").display().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Runs `cmd` with the fixture config, writing to `out`.
    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let out = self.out(out).display().to_string();
        let config = self.config();
        let mut args = vec![cmd, "--config", &config, "--out", &out];
        args.extend_from_slice(extra);
        mininet(&args)
    }

    fn trained(&self, out: &str) -> PathBuf {
        let o = self.run("train", out, &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        self.out(out)
    }
}

fn runlog_without_seconds(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if let Some(o) = v.as_object_mut() {
                o.remove("seconds");
            }
            v
        })
        .collect()
}

#[test]
fn params_prints_totals_modules_and_published_delta() {
    let o = mininet(&["params"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for needle in [
        "trainable 29053",
        "non-trainable 982",
        "total 30035",
        "37685",
        "36657",
        "delta: total -7650",
    ] {
        assert!(text.contains(needle), "{needle} missing:\n{text}");
    }
    for module in [
        "stem",
        "encoder1",
        "encoder2",
        "bottleneck",
        "decoder1",
        "decoder2",
        "head",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(module)),
            "{module} row missing"
        );
    }
}

#[test]
fn train_writes_checkpoint_runlog_and_effective_config() {
    let f = Fixture::new();
    let out = f.trained("run");
    for name in [
        "best.ckpt",
        "runlog.jsonl",
        "config.effective.cfg",
        "metrics_test.txt",
        "per_image_test.jsonl",
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    assert!(!out.join(".mininet.lock").exists());
    let log = runlog_without_seconds(&out.join("runlog.jsonl"));
    assert_eq!(log.len(), 3);
    assert_eq!(log[1]["epoch"], 2);
}

#[test]
fn reruns_and_echoed_configs_reproduce_artifacts() {
    let f = Fixture::new();
    let a = f.trained("a");
    let first: Vec<Vec<u8>> = ["best.ckpt", "config.effective.cfg", "per_image_test.jsonl"]
        .iter()
        .map(|n| fs::read(a.join(n)).unwrap())
        .collect();
    let log = runlog_without_seconds(&a.join("runlog.jsonl"));
    f.trained("a");
    for (n, bytes) in ["best.ckpt", "config.effective.cfg", "per_image_test.jsonl"]
        .iter()
        .zip(&first)
    {
        assert_eq!(&fs::read(a.join(n)).unwrap(), bytes, "{n} changed on rerun");
    }
    assert_eq!(runlog_without_seconds(&a.join("runlog.jsonl")), log);

    let echoed = a.join("config.effective.cfg").display().to_string();
    let b = f.out("b").display().to_string();
    let o = mininet(&["train", "--config", &echoed, "--out", &b]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(f.out("b").join("best.ckpt")).unwrap(), first[0]);
    assert_eq!(
        runlog_without_seconds(&f.out("b").join("runlog.jsonl")),
        log
    );
}

#[test]
fn missing_mask_exits_3_naming_the_record_and_echoes_training_defaults() {
    let f = Fixture::new();
    let manifest = fs::read_to_string(&f.manifest).unwrap();
    let broken = manifest.replacen("masks/train003.pgm", "masks/absent.pgm", 1);
    assert_ne!(broken, manifest);
    let path = f.out("broken.tsv");
    fs::write(&path, broken).unwrap();
    let o = f.run(
        "train",
        "broken",
        &[
            "--data.manifest",
            path.to_str().unwrap(),
            "--optimizer.lr",
            "1e-4",
            "--train.epochs",
            "100",
            "--train.patience",
            "4",
        ],
    );
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.contains("train003"), "{err}");
    assert_eq!(err.lines().filter(|l| l.starts_with("error ")).count(), 1);
    assert!(err.contains("error class=data code=3"));
    let echoed = fs::read_to_string(f.out("broken").join("config.effective.cfg")).unwrap();
    for line in [
        "optimizer.lr = 1e-4",
        "train.epochs = 100",
        "train.patience = 4",
    ] {
        assert!(echoed.lines().any(|l| l == line), "{line} missing");
    }
}

#[test]
fn configuration_errors_exit_2() {
    let f = Fixture::new();
    for extra in [
        &["--train.epoch", "3"][..],
        &["--train.epochs", "many"],
        &["--loss.spec", "dice+focal"],
        &["--data.height", "30"],
        &["stray"],
    ] {
        let o = f.run("train", "cfg", extra);
        assert_eq!(code(&o), 2, "{extra:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("class=config"));
    }
    let bad = f.out("bad.cfg");
    fs::write(&bad, "train.epochs = 2\nmodel.width = 4\n").unwrap();
    let o = mininet(&["params", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));
}

#[test]
fn numeric_blowup_exits_4() {
    let f = Fixture::new();
    let o = f.run(
        "train",
        "nan",
        &["--optimizer.lr", "1e30", "--train.epochs", "3"],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("class=numeric"));
}

#[test]
fn eval_reports_six_metrics_and_rejects_foreign_checkpoints() {
    let f = Fixture::new();
    let out = f.trained("run");
    let o = f.run("eval", "run", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(out.join("metrics_test.txt")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header, ["Jacc", "F1", "Acc", "Se", "Sp", "AUC"]);
    assert_eq!(
        fs::read_to_string(out.join("per_image_test.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let o = f.run("eval", "run", &["--model.base_width", "16"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("config.base_width"));
    let o = f.run("eval", "empty", &[]);
    assert_eq!(code(&o), 5);
}

#[test]
fn predict_writes_binary_masks_and_legend_overlays() {
    let f = Fixture::new();
    let out = f.trained("run");
    let o = f.run("predict", "run", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = f.manifest.parent().unwrap().to_path_buf();
    let (mut tp, mut fp, mut fnn) = (0, 0, 0);
    for i in 0..3 {
        let id = format!("test{i:03}");
        let mask = read_image(&out.join(format!("masks/{id}.png"))).unwrap();
        assert_eq!((mask.width, mask.height, mask.channels), (16, 16, 1));
        let pred = mask.to_u8();
        assert!(pred.iter().all(|v| *v == 0 || *v == 255));
        let truth = read_image(&data.join(format!("masks/{id}.pgm")))
            .unwrap()
            .to_u8();
        let overlay = read_image(&out.join(format!("overlays/{id}.png")))
            .unwrap()
            .to_u8();
        for j in 0..pred.len() {
            let px = &overlay[3 * j..3 * j + 3];
            match (pred[j] == 255, truth[j] > 127) {
                (true, true) => {
                    tp += 1;
                    assert_eq!(px, [0, 255, 0]);
                }
                (true, false) => {
                    fp += 1;
                    assert_eq!(px, [0, 0, 255]);
                }
                (false, true) => {
                    fnn += 1;
                    assert_eq!(px, [255, 0, 0]);
                }
                (false, false) => {}
            }
        }
    }
    assert!(tp + fp + fnn > 0);
}

#[test]
fn gradcheck_lists_every_check_and_fails_on_impossible_tolerance() {
    let o = mininet(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("rel_err"));
    assert!(text.lines().filter(|l| l.ends_with("pass")).count() >= 20);
    assert!(text.contains("mini_net"));
    let o = mininet(&["gradcheck", "--gradcheck.tolerance", "1e-12"]);
    assert_eq!(code(&o), 6);
    assert!(stderr(&o).contains("class=audit"));
}

#[test]
fn ablation_prints_a_row_per_spec() {
    let f = Fixture::new();
    let o = f.run("ablate", "ablate", &["--train.epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(f.out("ablate").join("ablation.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert_eq!(
        lines[1].split_whitespace().collect::<Vec<_>>(),
        ["Loss", "Jacc", "F1", "Acc", "Se", "Sp"]
    );
    assert!(lines[2].starts_with("dice ") && lines[3].starts_with("alpha(dice+bce+jacc)"));
}

#[test]
fn busy_output_directory_exits_7() {
    let f = Fixture::new();
    fs::create_dir_all(f.out("busy")).unwrap();
    fs::write(f.out("busy").join(".mininet.lock"), "").unwrap();
    let o = f.run("train", "busy", &[]);
    assert_eq!(code(&o), 7);
    assert!(f.out("busy").join(".mininet.lock").exists());
}
