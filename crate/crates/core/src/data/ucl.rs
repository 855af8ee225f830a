//! Loader for the smartphone HAR corpus with pre-segmented inertial signals.
//!
//! Expected layout (the archive's top-level folder may be the root itself or
//! a `UCI HAR Dataset` child):
//!
//! ```text
//! {train,test}/Inertial Signals/{total_acc,body_acc,body_gyro}_{x,y,z}_{split}.txt
//! {train,test}/y_{split}.txt
//! {train,test}/subject_{split}.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{names, normalize_splits, DatasetSplits, WindowedDataset, WINDOW};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const UCL_CLASSES: [&str; 6] =
    ["walking", "walking_upstairs", "walking_downstairs", "sitting", "standing", "laying"];
pub const UCL_CHANNELS: [&str; 6] = ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z"];
pub const UCL_VALIDATION_SUBJECTS: [u32; 3] = [27, 29, 30];

/// Which accelerometer signal fills the three acceleration rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AccelerationSource {
    /// Raw acceleration including gravity.
    #[default]
    Total,
    /// Gravity removed.
    Body,
}

impl AccelerationSource {
    fn prefix(self) -> &'static str {
        match self {
            AccelerationSource::Total => "total_acc",
            AccelerationSource::Body => "body_acc",
        }
    }
}

impl FromStr for AccelerationSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(AccelerationSource::Total),
            "body" => Ok(AccelerationSource::Body),
            _ => Err(Error::Usage(format!("unknown acceleration source {s:?} (expected total or body)"))),
        }
    }
}

impl std::fmt::Display for AccelerationSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AccelerationSource::Total => "total",
            AccelerationSource::Body => "body",
        })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Ingest { file: path.to_owned(), line: None, reason: e.to_string() })
}

fn ingest_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Ingest { file: path.to_owned(), line: Some(line), reason: reason.into() }
}

/// One row of `WINDOW` floats per window.
fn read_signal(path: &Path) -> Result<Vec<Vec<f32>>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let row = line
                .split_whitespace()
                .map(|tok| tok.parse::<f32>().map_err(|_| ingest_err(path, i + 1, format!("bad number {tok:?}"))))
                .collect::<Result<Vec<f32>>>()?;
            if row.len() != WINDOW {
                return Err(ingest_err(path, i + 1, format!("expected {WINDOW} values, found {}", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(ingest_err(path, i + 1, format!("non-finite value {v}")));
            }
            Ok(row)
        })
        .collect()
}

/// One integer per line.
fn read_ints(path: &Path) -> Result<Vec<u32>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse::<u32>().map_err(|_| ingest_err(path, i + 1, format!("bad integer {:?}", l.trim()))))
        .collect()
}

fn resolve_root(root: &Path) -> PathBuf {
    let nested = root.join("UCI HAR Dataset");
    if !root.join("train").is_dir() && nested.is_dir() {
        nested
    } else {
        root.to_owned()
    }
}

fn load_split(root: &Path, split: &str, source: AccelerationSource) -> Result<WindowedDataset> {
    let dir = root.join(split);
    let signals = dir.join("Inertial Signals");
    let files: Vec<PathBuf> = [source.prefix(), "body_gyro"]
        .iter()
        .flat_map(|p| ["x", "y", "z"].map(|axis| signals.join(format!("{p}_{axis}_{split}.txt"))))
        .collect();
    let channels = files.iter().map(|f| read_signal(f)).collect::<Result<Vec<_>>>()?;
    let label_file = dir.join(format!("y_{split}.txt"));
    let subject_file = dir.join(format!("subject_{split}.txt"));
    let raw_labels = read_ints(&label_file)?;
    let subjects = read_ints(&subject_file)?;

    let n = raw_labels.len();
    for (file, rows) in files.iter().zip(&channels).map(|(f, c)| (f, c.len())).chain([(&subject_file, subjects.len())]) {
        if rows != n {
            return Err(ingest_err(file, rows.min(n) + 1, format!("{rows} rows but the label file has {n}")));
        }
    }
    let labels = raw_labels
        .iter()
        .enumerate()
        .map(|(i, &l)| match l {
            1..=6 => Ok(l as usize - 1),
            _ => Err(ingest_err(&label_file, i + 1, format!("label {l} outside 1..=6"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if n == 0 {
        return Err(Error::Ingest { file: label_file, line: None, reason: "no windows".into() });
    }

    let x = Tensor4::from_fn((n, 1, UCL_CHANNELS.len(), WINDOW), |i, _, ch, t| channels[ch][i][t])?;
    WindowedDataset::new(x, labels, subjects, names(&UCL_CHANNELS), names(&UCL_CLASSES))
}

/// Loads, splits and normalizes the corpus.
///
/// Validation is carved out of the official training split by subject;
/// the official test split is used as is.
pub fn load_ucl(root: &Path, source: AccelerationSource) -> Result<DatasetSplits> {
    let root = resolve_root(root);
    let official_train = load_split(&root, "train", source)?;
    let test = load_split(&root, "test", source)?;

    let (val_idx, train_idx): (Vec<usize>, Vec<usize>) =
        (0..official_train.len()).partition(|&i| UCL_VALIDATION_SUBJECTS.contains(&official_train.subjects[i]));
    if val_idx.is_empty() || train_idx.is_empty() {
        return Err(Error::Preprocess(format!(
            "training split must contain both validation subjects {UCL_VALIDATION_SUBJECTS:?} and others"
        )));
    }
    let train = official_train.subset(&train_idx)?;
    if let Some(missing) = train.class_histogram().iter().position(|&c| c == 0) {
        return Err(Error::Preprocess(format!("class {} has no training windows", UCL_CLASSES[missing])));
    }
    let validation = official_train.subset(&val_idx)?;
    normalize_splits(DatasetSplits { train, validation, test })
}
