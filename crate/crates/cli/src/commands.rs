//! One function per subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mininet::architecture::checkpoint;
use mininet::audit;
use mininet::autodiff::gradcheck::report_header;
use mininet::pipeline::{
    evaluate, load_dataset, predict_all, run_ablation, train_with, write_image, Dataset, Manifest,
    Sample,
};
use mininet::{Error, MiniNet, Tensor};

use crate::config::{Config, Settings};
use crate::error::CliError;

/// Parameter totals reported for the published model.
pub const PUBLISHED_TOTAL: usize = 37_685;
pub const PUBLISHED_TRAINABLE: usize = 36_657;

pub const EFFECTIVE_CONFIG: &str = "config.effective.cfg";
pub const CHECKPOINT: &str = "best.ckpt";
pub const RUN_LOG: &str = "runlog.jsonl";
const LOCK: &str = ".mininet.lock";

/// Exclusive use of an output directory for the lifetime of the value.
pub struct OutputDir {
    dir: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::io(format!("create {}", dir.display()), e))?;
        let lock = dir.join(LOCK);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
        {
            Ok(_) => Ok(OutputDir {
                dir: dir.to_path_buf(),
                lock,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked {
                dir: dir.to_path_buf(),
                lock,
            }),
            Err(e) => Err(CliError::io(format!("create {}", lock.display()), e)),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("create {}", parent.display()), e))?;
        }
        fs::write(&path, contents)
            .map_err(|e| CliError::io(format!("write {}", path.display()), e))?;
        Ok(path)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

fn open_output(cfg: &Config, s: &Settings) -> Result<OutputDir, CliError> {
    let out = OutputDir::acquire(&s.output)?;
    out.write(EFFECTIVE_CONFIG, cfg.render())?;
    Ok(out)
}

fn dataset(s: &Settings) -> Result<Dataset, CliError> {
    let manifest = Manifest::load(s.manifest()?)?;
    Ok(load_dataset(&manifest, &s.load)?)
}

fn split<'a>(s: &Settings, data: &'a Dataset) -> Result<&'a [Sample], CliError> {
    let samples = data.split(s.split);
    if samples.is_empty() {
        return Err(Error::Record {
            id: format!("<{} split>", s.split),
            reason: "split has no records".into(),
        }
        .into());
    }
    Ok(samples)
}

fn load_model(s: &Settings) -> Result<MiniNet, CliError> {
    let path = &s.checkpoint;
    if !path.is_file() {
        return Err(CliError::Checkpoint {
            path: path.clone(),
            reason: "file not found".into(),
        });
    }
    match checkpoint::load_expecting(path, &s.model) {
        Ok(c) => Ok(c.model),
        Err(Error::Checkpoint(e)) => Err(CliError::Checkpoint {
            path: path.clone(),
            reason: e.to_string(),
        }),
        Err(Error::Io(e)) => Err(CliError::Checkpoint {
            path: path.clone(),
            reason: e.to_string(),
        }),
        Err(e) => Err(e.into()),
    }
}

pub fn train(cfg: &Config) -> Result<(), CliError> {
    let s = cfg.resolve()?;
    s.manifest()?;
    let out = open_output(cfg, &s)?;
    let data = dataset(&s)?;
    eprintln!(
        "data: {} train, {} val, {} test at {}×{}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        s.load.target.0,
        s.load.target.1
    );
    let model = MiniNet::new(s.model)?;
    let outcome = train_with(model, &data, &s.train, Some(&out.path(CHECKPOINT)), |e| {
        eprintln!(
            "epoch {:>3}  train {:.5}  val {:.5}  alpha {:.4}  {:.1}s{}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.alpha,
            e.seconds,
            if e.improved { "  *" } else { "" }
        )
    })?;
    let log = &outcome.log;
    out.write(RUN_LOG, log.jsonl())?;
    let split = log.report_split;
    out.write(&format!("metrics_{split}.txt"), log.report.table())?;
    out.write(&format!("per_image_{split}.jsonl"), log.report.jsonl())?;
    println!(
        "{} after {} epochs; best epoch {} (val loss {:.5})",
        log.stop,
        log.epochs.len(),
        log.best_epoch,
        log.best_val_loss
    );
    println!("{split} split:\n{}", log.report.table());
    println!("checkpoint {}", out.path(CHECKPOINT).display());
    Ok(())
}

pub fn eval(cfg: &Config) -> Result<(), CliError> {
    let s = cfg.resolve()?;
    s.manifest()?;
    let model = load_model(&s)?;
    let out = open_output(cfg, &s)?;
    let data = dataset(&s)?;
    let report = evaluate(&model, split(&s, &data)?, s.threshold)?;
    out.write(&format!("metrics_{}.txt", s.split), report.table())?;
    out.write(&format!("per_image_{}.jsonl", s.split), report.jsonl())?;
    println!("{} split:\n{}", s.split, report.table());
    Ok(())
}

/// RGB bytes of `image` with true positives green, false positives blue and
/// false negatives red.
pub fn overlay(image: &Tensor, pred: &[bool], truth: &Tensor) -> Vec<u8> {
    let (c, hw) = (image.shape()[0], pred.len());
    let px = image.data();
    let mut rgb = Vec::with_capacity(3 * hw);
    for i in 0..hw {
        let colour = match (pred[i], truth.data()[i] > 0.5) {
            (true, true) => [0, 255, 0],
            (true, false) => [0, 0, 255],
            (false, true) => [255, 0, 0],
            (false, false) => {
                let v = |ch: usize| {
                    (px[(ch.min(c - 1)) * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8
                };
                [v(0), v(1), v(2)]
            }
        };
        rgb.extend_from_slice(&colour);
    }
    rgb
}

pub fn predict(cfg: &Config) -> Result<(), CliError> {
    let s = cfg.resolve()?;
    s.manifest()?;
    let model = load_model(&s)?;
    let out = open_output(cfg, &s)?;
    let data = dataset(&s)?;
    let samples = split(&s, &data)?;
    let preds = predict_all(&model, samples)?;
    let (h, w) = s.load.target;
    for (sample, p) in samples.iter().zip(&preds) {
        let fg: Vec<bool> = p.data().iter().map(|v| *v >= s.threshold).collect();
        let mask: Vec<u8> = fg.iter().map(|f| if *f { 255 } else { 0 }).collect();
        let path = out.path(&format!("masks/{}.png", sample.id));
        fs::create_dir_all(path.parent().expect("has parent"))
            .map_err(|e| CliError::io("create masks directory", e))?;
        write_image(&path, w, h, 1, &mask)?;
        if s.overlay {
            let path = out.path(&format!("overlays/{}.png", sample.id));
            fs::create_dir_all(path.parent().expect("has parent"))
                .map_err(|e| CliError::io("create overlays directory", e))?;
            write_image(&path, w, h, 3, &overlay(&sample.image, &fg, &sample.mask))?;
        }
    }
    println!(
        "wrote {} masks to {}",
        samples.len(),
        out.path("masks").display()
    );
    Ok(())
}

/// Count table plus the comparison with the published totals.
pub fn params_report(cfg: &Config) -> Result<String, CliError> {
    let s = cfg.resolve()?;
    let count = MiniNet::new(s.model)?.parameter_count();
    let dt = count.total as i64 - PUBLISHED_TOTAL as i64;
    let dtr = count.trainable as i64 - PUBLISHED_TRAINABLE as i64;
    Ok(format!(
        "{count}\ntrainable {}  non-trainable {}  total {}\n\
         published: {PUBLISHED_TOTAL} total / {PUBLISHED_TRAINABLE} trainable\n\
         delta: total {:+} ({:+.1}%), trainable {:+} ({:+.1}%)\n",
        count.trainable,
        count.non_trainable,
        count.total,
        dt,
        100.0 * dt as f64 / PUBLISHED_TOTAL as f64,
        dtr,
        100.0 * dtr as f64 / PUBLISHED_TRAINABLE as f64,
    ))
}

pub fn params(cfg: &Config) -> Result<(), CliError> {
    print!("{}", params_report(cfg)?);
    Ok(())
}

pub fn gradcheck(cfg: &Config) -> Result<(), CliError> {
    let s = cfg.resolve()?;
    let started = Instant::now();
    let reports = audit::full_suite(s.tolerance)?;
    println!("{}", report_header());
    for r in &reports {
        print!("{r}");
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.op.as_str())
        .collect();
    let worst = reports.iter().map(|r| r.max_rel_err()).fold(0.0, f64::max);
    println!(
        "{} checks, {} failed, max rel err {worst:.3e}, tolerance {:.1e}, {:.1}s",
        reports.len(),
        failed.len(),
        s.tolerance,
        started.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Audit(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

pub fn ablate(cfg: &Config) -> Result<(), CliError> {
    let s = cfg.resolve()?;
    if s.specs.len() < 2 {
        return Err(CliError::Config(
            "ablate.specs needs at least two loss specs".into(),
        ));
    }
    s.manifest()?;
    let out = open_output(cfg, &s)?;
    let data = dataset(&s)?;
    let table = run_ablation(&s.model, &data, &s.specs, &s.train)?;
    let text = format!("{} split\n{table}", table.split);
    out.write("ablation.txt", &text)?;
    print!("{text}");
    Ok(())
}
