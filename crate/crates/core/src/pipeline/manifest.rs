//! Tab-separated dataset manifests.
//!
//! One record per line: `<id>\t<image_path>\t<mask_path>\t<split>`, where
//! split is `train`, `val` or `test`. Blank lines and lines starting with
//! `#` are ignored. Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!(
                "split '{other}' (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    /// Parses manifest text; `base` anchors relative paths.
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let fail = |line: usize, reason: String| Error::Manifest {
            path: origin.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        };
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(fail(
                    i + 1,
                    format!("expected 4 tab-separated fields, found {}", fields.len()),
                ));
            }
            let id = fields[0].trim().to_string();
            if id.is_empty() {
                return Err(fail(i + 1, "empty record id".into()));
            }
            if !seen.insert(id.clone()) {
                return Err(fail(i + 1, format!("duplicate record id '{id}'")));
            }
            let split = fields[3]
                .parse()
                .map_err(|e: Error| fail(i + 1, e.to_string()))?;
            let resolve = |p: &str| {
                let p = Path::new(p.trim());
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            records.push(Record {
                id,
                image: resolve(fields[1]),
                mask: resolve(fields[2]),
                split,
            });
        }
        Ok(Manifest { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Manifest::parse(&text, base, path)
    }

    /// Serializes with paths as given; the inverse of [`Manifest::parse`]
    /// when they are absolute or relative to the same base.
    pub fn to_text(&self, base: &Path) -> String {
        let mut s = String::from("# id\timage\tmask\tsplit\n");
        for r in &self.records {
            let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.id,
                rel(&r.image),
                rel(&r.mask),
                r.split
            ));
        }
        s
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_comments_and_relative_paths() {
        let text =
            "# header\n\na\timg/a.pgm\tmask/a.pgm\ttrain\nb\t/abs/b.png\t/abs/mb.png\tTest\n";
        let m = Manifest::parse(text, Path::new("/data"), Path::new("m.tsv")).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].image, PathBuf::from("/data/img/a.pgm"));
        assert_eq!(m.records[1].mask, PathBuf::from("/abs/mb.png"));
        assert_eq!(m.records[1].split, Split::Test);
        assert_eq!(m.count(Split::Train), 1);
    }

    #[test]
    fn rejects_bad_lines_with_line_numbers() {
        for text in [
            "a\tx\ty\n",
            "a\tx\ty\tholdout\n",
            "a\tx\ty\ttrain\na\tu\tv\ttest\n",
        ] {
            let err = Manifest::parse(text, Path::new("."), Path::new("m.tsv")).unwrap_err();
            assert!(err.to_string().contains("line"), "{err}");
        }
    }

    #[test]
    fn text_round_trips() {
        let text = "a\timg/a.pgm\tmask/a.pgm\ttrain\nb\timg/b.pgm\tmask/b.pgm\tval\n";
        let base = Path::new("/d");
        let m = Manifest::parse(text, base, Path::new("m.tsv")).unwrap();
        assert_eq!(
            Manifest::parse(&m.to_text(base), base, Path::new("m.tsv")).unwrap(),
            m
        );
    }
}
