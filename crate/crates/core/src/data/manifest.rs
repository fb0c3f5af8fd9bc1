//! Dataset manifests, the stratified split and directory ingestion.
//!
//! Manifest files are UTF-8 text:
//!
//! ```text
//! # leafnet-manifest 1
//! # classes: Scab,Alternaria,AppleMosaic,MLB,PowderyMildew,Healthy
//! # seed: 42
//! # ratio: 0.7
//! path<TAB>label<TAB>split
//! Scab/0001.jpg<TAB>Scab<TAB>train
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Class order used for labels, reports and confusion matrices.
pub const CLASS_NAMES: [&str; 6] = ["Scab", "Alternaria", "AppleMosaic", "MLB", "PowderyMildew", "Healthy"];

pub const IMAGE_EXTENSIONS: [&str; 7] = ["png", "jpg", "jpeg", "ppm", "pgm", "pbm", "pnm"];

const MAGIC_LINE: &str = "# leafnet-manifest 1";
const HEADER_ROW: &str = "path\tlabel\tsplit";

pub fn canonical_classes() -> Vec<String> {
    CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Validation(format!(
                "unknown split {other:?} (expected train or val)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub seed: u64,
    pub ratio: f64,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &SampleRecord)> {
        self.records
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// `[class][split]` sample counts.
    pub fn class_counts(&self) -> Vec<[usize; 2]> {
        let mut counts = vec![[0; 2]; self.classes.len()];
        for r in &self.records {
            counts[r.label][r.split as usize] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        validate_classes(&self.classes)?;
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.label >= self.classes.len() {
                return Err(Error::Validation(format!(
                    "{}: label index {} out of range for {} classes",
                    r.path.display(),
                    r.label,
                    self.classes.len()
                )));
            }
            if !seen.insert(&r.path) {
                return Err(Error::Validation(format!("duplicate path {}", r.path.display())));
            }
        }
        Ok(())
    }

    /// Serialize; paths under `base` are written relative to it.
    pub fn to_text(&self, base: Option<&Path>) -> Result<String> {
        self.validate()?;
        let mut out = format!(
            "{MAGIC_LINE}\n# classes: {}\n# seed: {}\n# ratio: {}\n{HEADER_ROW}\n",
            self.classes.join(","),
            self.seed,
            self.ratio
        );
        for r in &self.records {
            let path = base
                .and_then(|b| r.path.strip_prefix(b).ok())
                .unwrap_or(&r.path);
            let path = path.to_str().ok_or_else(|| {
                Error::Validation(format!("path {} is not valid UTF-8", path.display()))
            })?;
            if path.contains(['\t', '\n', '\r']) {
                return Err(Error::Validation(format!(
                    "path {path:?} contains a tab or newline"
                )));
            }
            out.push_str(&format!("{path}\t{}\t{}\n", self.classes[r.label], r.split));
        }
        Ok(out)
    }

    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let parse_err = |line: usize, detail: String| Error::Parse { line, detail };
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| parse_err(0, format!("unexpected end of file, expected {what}")))
        };

        let (n, l) = next("manifest magic line")?;
        if l.trim_end() != MAGIC_LINE {
            return Err(parse_err(n, format!("expected {MAGIC_LINE:?}, found {l:?}")));
        }
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (n, l) = next(key)?;
            let prefix = format!("# {key}:");
            match l.strip_prefix(&prefix) {
                Some(v) => Ok((n, v.trim().to_owned())),
                None => Err(parse_err(n, format!("expected header {prefix:?}, found {l:?}"))),
            }
        };
        let (_, classes) = header("classes")?;
        let classes: Vec<String> = classes.split(',').map(|s| s.trim().to_owned()).collect();
        let (n_seed, seed) = header("seed")?;
        let seed = seed
            .parse()
            .map_err(|_| parse_err(n_seed, format!("seed {seed:?} is not an unsigned integer")))?;
        let (n_ratio, ratio) = header("ratio")?;
        let ratio: f64 = ratio
            .parse()
            .map_err(|_| parse_err(n_ratio, format!("ratio {ratio:?} is not a number")))?;
        let (n, l) = next("column header")?;
        if l.trim_end() != HEADER_ROW {
            return Err(parse_err(n, format!("expected column header {HEADER_ROW:?}, found {l:?}")));
        }

        let mut records = Vec::new();
        for (n, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = l.split('\t').collect();
            let [path, label, split] = fields[..] else {
                return Err(parse_err(n, format!("expected 3 tab-separated fields, found {}", fields.len())));
            };
            let label = classes
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| parse_err(n, format!("unknown class {label:?}")))?;
            let split = split.parse().map_err(|e: Error| parse_err(n, e.to_string()))?;
            let path = PathBuf::from(path);
            let path = match base {
                Some(b) if path.is_relative() => b.join(path),
                _ => path,
            };
            records.push(SampleRecord { path, label, split });
        }
        let manifest = DatasetManifest {
            classes,
            seed,
            ratio,
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
        let base = abs(path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")))?;
        let mut portable = self.clone();
        for r in &mut portable.records {
            r.path = abs(&r.path)?;
        }
        fs::write(path, portable.to_text(Some(&base))?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        Self::parse(&text, base)
    }
}

fn validate_classes(classes: &[String]) -> Result<()> {
    if classes.is_empty() || classes.iter().any(|c| c.is_empty()) {
        return Err(Error::Validation("class list must contain non-empty names".into()));
    }
    for (i, c) in classes.iter().enumerate() {
        if c.contains([',', '\t', '\n']) {
            return Err(Error::Validation(format!("class name {c:?} contains a separator")));
        }
        if classes[..i].contains(c) {
            return Err(Error::Validation(format!("duplicate class {c:?}")));
        }
    }
    Ok(())
}

/// `floor(ratio · n)`, except that products within 1e-9 of an integer
/// count as that integer (0.7 · 10 is 6.999… in binary).
pub fn train_count(n: usize, ratio: f64) -> usize {
    let x = ratio * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// Stratified split: within each class, a seeded shuffle followed by
/// `train_count` train samples; the rest go to validation. Records keep
/// their input order in the manifest.
pub fn split_dataset(
    samples: &[(PathBuf, usize)],
    classes: &[String],
    ratio: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    validate_classes(classes)?;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for (i, (path, label)) in samples.iter().enumerate() {
        let bucket = by_class.get_mut(*label).ok_or_else(|| {
            Error::Validation(format!("{}: label {label} out of range", path.display()))
        })?;
        bucket.push(i);
    }
    let mut splits = vec![Split::Val; samples.len()];
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            return Err(Error::Validation(format!("class {:?} has no samples", classes[c])));
        }
        members.shuffle(&mut rng::derive(seed, &[c as u64]));
        for &i in &members[..train_count(members.len(), ratio)] {
            splits[i] = Split::Train;
        }
    }
    let manifest = DatasetManifest {
        classes: classes.to_vec(),
        seed,
        ratio,
        records: samples
            .iter()
            .zip(splits)
            .map(|((path, label), split)| SampleRecord {
                path: path.clone(),
                label: *label,
                split,
            })
            .collect(),
    };
    manifest.validate()?;
    Ok(manifest)
}

fn fold_name(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, '_' | '-' | ' '))
        .flat_map(char::to_lowercase)
        .collect()
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// One subdirectory per class; image files directly inside each.
///
/// Class order: `classes` when given (matched to directory names ignoring
/// case, `_`, `-` and spaces); otherwise the canonical order when every
/// directory names a canonical class; otherwise lexicographic directory
/// order. Hidden entries are skipped. Samples are sorted by class, then path.
pub fn scan_directory(
    root: &Path,
    classes: Option<&[String]>,
) -> Result<(Vec<String>, Vec<(PathBuf, usize)>)> {
    let mut dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !entry.path().is_dir() {
            continue;
        }
        dirs.push((name, entry.path()));
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Validation(format!(
            "{} contains no class subdirectories",
            root.display()
        )));
    }

    let find = |wanted: &str, dirs: &[(String, PathBuf)]| {
        dirs.iter()
            .position(|(d, _)| fold_name(d) == fold_name(wanted))
    };
    let (names, chosen): (Vec<String>, Vec<PathBuf>) = match classes {
        Some(list) => {
            validate_classes(list)?;
            let mut chosen = Vec::new();
            for c in list {
                let i = find(c, &dirs).ok_or_else(|| {
                    Error::Validation(format!("class {c:?} has no directory under {}", root.display()))
                })?;
                chosen.push(dirs[i].1.clone());
            }
            (list.to_vec(), chosen)
        }
        None => {
            let canonical = canonical_classes();
            let folded: Vec<String> = canonical.iter().map(|c| fold_name(c)).collect();
            let all_canonical = dirs.iter().all(|(d, _)| folded.contains(&fold_name(d)));
            if all_canonical {
                let (mut names, mut chosen) = (Vec::new(), Vec::new());
                for c in &canonical {
                    if let Some(i) = find(c, &dirs) {
                        names.push(c.clone());
                        chosen.push(dirs[i].1.clone());
                    }
                }
                (names, chosen)
            } else {
                dirs.into_iter().unzip()
            }
        }
    };

    let mut samples = Vec::new();
    for (label, dir) in chosen.iter().enumerate() {
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let hidden = path
                .file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with('.'));
            if !hidden && path.is_file() && is_image(&path) {
                files.push(path);
            }
        }
        files.sort();
        samples.extend(files.into_iter().map(|p| (p, label)));
    }
    Ok((names, samples))
}
