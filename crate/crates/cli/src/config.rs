//! Flat `key = value` configuration with dotted namespaces.
//!
//! Every key has a default; files and flags may only set known keys. Paths
//! are stored absolute so an echoed configuration reproduces the run from
//! any working directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mininet::architecture::ModelConfig;
use mininet::objectives::{AlphaSchedule, DiceForm, LossSpec};
use mininet::pipeline::{AdamConfig, Augment, ChannelMode, LoadOptions, Split, TrainConfig};
use mininet::seed;

use crate::error::CliError;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Value,
    Path,
}

struct Key {
    name: &'static str,
    default: &'static str,
    kind: Kind,
    help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default,
        kind: Kind::Value,
        help,
    }
}

const fn path(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default,
        kind: Kind::Path,
        help,
    }
}

const KEYS: &[Key] = &[
    key(
        "seed",
        "0",
        "root seed; model, data and training seeds are derived from it",
    ),
    path(
        "output.dir",
        "runs/mininet",
        "directory for checkpoints, logs and reports",
    ),
    path(
        "data.manifest",
        "",
        "tab-separated manifest of id, image, mask, split",
    ),
    key("data.height", "256", "resize height, a multiple of 4"),
    key("data.width", "256", "resize width, a multiple of 4"),
    key("data.channels", "rgb", "rgb or gray"),
    key(
        "data.val_fraction",
        "0.1",
        "training fraction held out when the manifest has no val records",
    ),
    key("model.base_width", "8", "channels after the stem"),
    key(
        "model.depthwise",
        "true",
        "depthwise-separable multiscale convolutions",
    ),
    key(
        "model.squeeze_ratio",
        "1",
        "pointwise squeeze factor inside each block",
    ),
    key("train.epochs", "100", "maximum epochs"),
    key("train.batch_size", "4", "images per Adam step"),
    key(
        "train.patience",
        "4",
        "epochs without validation improvement before stopping",
    ),
    key("train.hflip", "false", "random horizontal flips"),
    key("train.vflip", "false", "random vertical flips"),
    key(
        "train.rot90",
        "false",
        "random quarter turns (square images)",
    ),
    key(
        "optimizer.lr",
        "1e-4",
        "Adam learning rate; 0 freezes the model",
    ),
    key("optimizer.beta1", "0.9", "Adam first-moment decay"),
    key("optimizer.beta2", "0.999", "Adam second-moment decay"),
    key("optimizer.eps", "1e-8", "Adam denominator offset"),
    key(
        "loss.spec",
        "alpha(dice+bce+jacc)",
        "terms joined by +; alpha(...) applies the schedule",
    ),
    key("loss.alpha_initial", "1", "alpha at epoch 0"),
    key("loss.alpha_decay", "0.97", "alpha multiplier per epoch"),
    key("loss.smooth", "1", "Dice and Jaccard smoothing"),
    key("loss.dice_form", "standard", "standard or literal"),
    path(
        "eval.checkpoint",
        "",
        "checkpoint to load; empty means <output.dir>/best.ckpt",
    ),
    key("eval.split", "test", "split scored by eval and predict"),
    key(
        "eval.threshold",
        "0.5",
        "probability threshold for masks and metrics",
    ),
    key("predict.overlay", "true", "also write TP/FP/FN overlays"),
    key(
        "ablate.specs",
        "dice; alpha(dice+bce+jacc)",
        "loss specs separated by ;",
    ),
    key("gradcheck.tolerance", "0.02", "maximum relative error"),
];

fn lookup(name: &str) -> Option<(usize, &'static Key)> {
    KEYS.iter().enumerate().find(|(_, k)| k.name == name)
}

/// Current value of every known key, in table order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Config {
    values: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: KEYS.iter().map(|k| k.default.to_string()).collect(),
        }
    }
}

impl Config {
    /// Sets `name`; relative paths resolve against `base`.
    pub fn set(&mut self, name: &str, value: &str, base: &Path) -> Result<(), CliError> {
        let (i, k) =
            lookup(name).ok_or_else(|| CliError::Config(format!("unknown key '{name}'")))?;
        let value = value.trim();
        self.values[i] = if k.kind == Kind::Path && !value.is_empty() {
            absolute(&base.join(value))?.display().to_string()
        } else {
            value.to_string()
        };
        Ok(())
    }

    /// Resolves relative path values, such as the defaults, against `base`.
    pub fn anchor(&mut self, base: &Path) -> Result<(), CliError> {
        for (i, k) in KEYS.iter().enumerate() {
            if k.kind == Kind::Path
                && !self.values[i].is_empty()
                && Path::new(&self.values[i]).is_relative()
            {
                self.values[i] = absolute(&base.join(&self.values[i]))?.display().to_string();
            }
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fail = |reason: String| {
                CliError::Config(format!("{}:{}: {reason}", path.display(), n + 1))
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected 'key = value', found '{line}'")))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(fail(format!("key '{k}' set twice")));
            }
            seen.push(k);
            self.set(k, v, base).map_err(|e| fail(e.to_string()))?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &str {
        let (i, _) = lookup(name).expect("key is listed");
        &self.values[i]
    }

    fn parse<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(name);
        raw.parse()
            .map_err(|e| CliError::Config(format!("{name} = '{raw}': {e}")))
    }

    /// Every key with its value; the inverse of [`Config::apply_file`].
    pub fn render(&self) -> String {
        let mut s = String::from("# mininet effective configuration\n");
        let mut section = "";
        for (k, v) in KEYS.iter().zip(&self.values) {
            let this = k.name.split('.').next().unwrap_or("");
            if this != section && !section.is_empty() {
                s.push('\n');
            }
            section = this;
            s.push_str(&format!("# {}\n{} = {}\n", k.help, k.name, v));
        }
        s
    }

    pub fn resolve(&self) -> Result<Settings, CliError> {
        let root: u64 = self.parse("seed")?;
        let mode: ChannelMode = self.parse("data.channels")?;
        let model = ModelConfig {
            in_channels: mode.channels(),
            base_width: self.parse("model.base_width")?,
            depthwise_multiscale: self.parse("model.depthwise")?,
            squeeze_ratio: self.parse("model.squeeze_ratio")?,
            seed: seed::derive(root, "model"),
        };
        model.validate()?;
        let load = LoadOptions {
            target: (self.parse("data.height")?, self.parse("data.width")?),
            mode,
            val_fraction: self.parse("data.val_fraction")?,
            seed: seed::derive(root, "data"),
        };
        load.validate()?;
        let template = self.loss_template()?;
        let loss = self.loss_spec(self.get("loss.spec"), &template)?;
        let threshold: f32 = self.parse("eval.threshold")?;
        let train = TrainConfig {
            epochs: self.parse("train.epochs")?,
            batch_size: self.parse("train.batch_size")?,
            patience: self.parse("train.patience")?,
            seed: seed::derive(root, "train"),
            loss,
            augment: Augment {
                hflip: self.parse("train.hflip")?,
                vflip: self.parse("train.vflip")?,
                rot90: self.parse("train.rot90")?,
            },
            adam: AdamConfig {
                learning_rate: self.parse("optimizer.lr")?,
                beta1: self.parse("optimizer.beta1")?,
                beta2: self.parse("optimizer.beta2")?,
                eps: self.parse("optimizer.eps")?,
            },
            threshold,
        };
        train.validate()?;
        let specs = self
            .get("ablate.specs")
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| self.loss_spec(s, &template))
            .collect::<Result<Vec<_>, _>>()?;
        let output = PathBuf::from(self.get("output.dir"));
        if output.as_os_str().is_empty() {
            return Err(CliError::Config("output.dir must not be empty".into()));
        }
        let checkpoint = match self.get("eval.checkpoint") {
            "" => output.join("best.ckpt"),
            p => PathBuf::from(p),
        };
        let tolerance: f64 = self.parse("gradcheck.tolerance")?;
        if !(tolerance > 0.0 && tolerance.is_finite()) {
            return Err(CliError::Config(format!(
                "gradcheck.tolerance must be positive, got {tolerance}"
            )));
        }
        Ok(Settings {
            model,
            load,
            train,
            specs,
            manifest: match self.get("data.manifest") {
                "" => None,
                p => Some(PathBuf::from(p)),
            },
            output,
            checkpoint,
            split: self.parse("eval.split")?,
            threshold,
            overlay: self.parse("predict.overlay")?,
            tolerance,
        })
    }

    fn loss_template(&self) -> Result<LossSpec, CliError> {
        let form = match self.get("loss.dice_form") {
            "standard" => DiceForm::Standard,
            "literal" => DiceForm::Literal,
            other => {
                return Err(CliError::Config(format!(
                    "loss.dice_form = '{other}': expected standard or literal"
                )))
            }
        };
        Ok(LossSpec {
            smooth: self.parse("loss.smooth")?,
            dice_form: form,
            alpha: AlphaSchedule::Exponential {
                initial: self.parse("loss.alpha_initial")?,
                decay: self.parse("loss.alpha_decay")?,
            },
            ..LossSpec::default()
        })
    }

    /// Terms from `text`; smoothing, Dice form and (for `alpha(...)`) the
    /// schedule come from the `loss.*` keys.
    fn loss_spec(&self, text: &str, template: &LossSpec) -> Result<LossSpec, CliError> {
        let parsed: LossSpec = text.parse().map_err(|e: mininet::Error| {
            CliError::Config(format!("loss spec '{}': {e}", text.trim()))
        })?;
        let spec = LossSpec {
            dice: parsed.dice,
            jaccard: parsed.jaccard,
            bce: parsed.bce,
            alpha: if parsed.is_weighted() {
                template.alpha
            } else {
                parsed.alpha
            },
            ..*template
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Typed view of a [`Config`].
#[derive(Clone, Debug)]
pub struct Settings {
    pub model: ModelConfig,
    pub load: LoadOptions,
    pub train: TrainConfig,
    pub specs: Vec<LossSpec>,
    pub manifest: Option<PathBuf>,
    pub output: PathBuf,
    pub checkpoint: PathBuf,
    pub split: Split,
    pub threshold: f32,
    pub overlay: bool,
    pub tolerance: f64,
}

impl Settings {
    pub fn manifest(&self) -> Result<&Path, CliError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| CliError::Config("data.manifest is not set".into()))
    }
}

/// Absolute and lexically normalized; `..` is not resolved through links.
fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    use std::path::Component;
    let abs = std::path::absolute(p)
        .map_err(|e| CliError::Config(format!("cannot resolve path {}: {e}", p.display())))?;
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    Ok(out)
}

/// `(key, value)` pairs from the command line.
pub type Overrides = Vec<(String, String)>;

/// `--key value`, `--key=value`, and the `--config`, `--out` and
/// `--dice-literal` shorthands, in any order. Returns the config file (if
/// any) and the overrides in the order given.
pub fn split_flags(args: &[String]) -> Result<(Option<PathBuf>, Overrides), CliError> {
    let mut config = None;
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let name = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Config(format!("unexpected argument '{arg}'")))?;
        if name == "dice-literal" {
            overrides.push(("loss.dice_form".into(), "literal".into()));
            continue;
        }
        let (name, value) = match name.split_once('=') {
            Some((n, v)) => (n.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Config(format!("--{name} needs a value")))?;
                (name.to_string(), v.clone())
            }
        };
        match name.as_str() {
            "config" => config = Some(PathBuf::from(value)),
            "out" => overrides.push(("output.dir".into(), value)),
            _ => overrides.push((name, value)),
        }
    }
    Ok((config, overrides))
}

/// Defaults, then the file, then the overrides.
pub fn build(
    config_file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<Config, CliError> {
    let cwd = Path::new(".");
    let mut cfg = Config::default();
    cfg.anchor(cwd)?;
    if let Some(path) = config_file {
        cfg.apply_file(path)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v, cwd)
            .map_err(|e| CliError::Config(format!("--{k}: {e}")))?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_library_defaults() {
        let s = Config::default().resolve().unwrap();
        assert_eq!(s.train.epochs, 100);
        assert_eq!(s.train.patience, 4);
        assert_eq!(s.train.adam, AdamConfig::default());
        assert_eq!(s.train.loss, LossSpec::default());
        assert_eq!(s.model.base_width, 8);
        assert_eq!(s.specs.len(), 2);
        assert_eq!(s.load.target, (256, 256));
    }

    #[test]
    fn rendered_config_parses_back_identically() {
        let dir = std::env::temp_dir().join(format!("mininet-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let mut cfg = Config::default();
        cfg.anchor(&dir).unwrap();
        cfg.set("train.epochs", "7", &dir).unwrap();
        cfg.set("data.manifest", "m.tsv", &dir).unwrap();
        let file = dir.join("c.cfg");
        fs::write(&file, cfg.render()).unwrap();
        let mut back = Config::default();
        back.apply_file(&file).unwrap();
        assert_eq!(back, cfg);
        assert!(back.get("data.manifest").ends_with("m.tsv"));
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn flags_accept_both_spellings_and_shorthands() {
        let args: Vec<String> = [
            "--train.epochs",
            "3",
            "--optimizer.lr=0.01",
            "--dice-literal",
            "--out",
            "o",
            "--config",
            "c.cfg",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let (config, o) = split_flags(&args).unwrap();
        assert_eq!(config, Some(PathBuf::from("c.cfg")));
        let keys: Vec<&str> = o.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(
            keys,
            [
                "train.epochs",
                "optimizer.lr",
                "loss.dice_form",
                "output.dir"
            ]
        );
        assert!(split_flags(&["--train.epochs".to_string()]).is_err());
        assert!(split_flags(&["stray".to_string()]).is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = Config::default();
        assert!(cfg.set("train.epoch", "3", Path::new(".")).is_err());
        cfg.set("train.epochs", "three", Path::new(".")).unwrap();
        assert!(matches!(cfg.resolve(), Err(CliError::Config(m)) if m.contains("train.epochs")));
        let mut cfg = Config::default();
        cfg.set("loss.dice_form", "fancy", Path::new(".")).unwrap();
        assert!(cfg.resolve().is_err());
    }

    #[test]
    fn loss_keys_shape_every_spec() {
        let mut cfg = Config::default();
        for (k, v) in [
            ("loss.spec", "dice"),
            ("loss.smooth", "0.5"),
            ("loss.dice_form", "literal"),
            ("loss.alpha_decay", "0.9"),
        ] {
            cfg.set(k, v, Path::new(".")).unwrap();
        }
        let s = cfg.resolve().unwrap();
        assert_eq!(s.train.loss.alpha, AlphaSchedule::Constant(1.0));
        assert_eq!(
            (s.train.loss.smooth, s.train.loss.dice_form),
            (0.5, DiceForm::Literal)
        );
        assert_eq!(
            s.specs[1].alpha,
            AlphaSchedule::Exponential {
                initial: 1.0,
                decay: 0.9
            }
        );
    }
}
