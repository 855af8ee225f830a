//! Loader for the PAMAP2 physical-activity monitoring corpus.
//!
//! Each `subject1NN.dat` holds one row per 100 Hz sample with 54 columns:
//! timestamp, activity ID, heart rate, then three 17-column IMU blocks
//! (hand, chest, ankle). Each block starts with temperature, the ±16g
//! accelerometer, the ±6g accelerometer, the gyroscope, the magnetometer
//! and four orientation columns. Dropouts are written as `NaN`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{downsample, names, normalize_splits, window_starts, DatasetSplits, WindowedDataset, WINDOW, WINDOW_STEP};
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

const COLUMNS: usize = 54;
const ACTIVITY_COLUMN: usize = 1;

/// Source column of each model row: per IMU, ±16g acceleration X,Y,Z then gyroscope X,Y,Z.
pub(crate) const CHANNEL_COLUMNS: [usize; 18] =
    [4, 5, 6, 10, 11, 12, 21, 22, 23, 27, 28, 29, 38, 39, 40, 44, 45, 46];

pub const PAMAP2_CHANNELS: [&str; 18] = [
    "hand_acc_x", "hand_acc_y", "hand_acc_z", "hand_gyro_x", "hand_gyro_y", "hand_gyro_z",
    "chest_acc_x", "chest_acc_y", "chest_acc_z", "chest_gyro_x", "chest_gyro_y", "chest_gyro_z",
    "ankle_acc_x", "ankle_acc_y", "ankle_acc_z", "ankle_gyro_x", "ankle_gyro_y", "ankle_gyro_z",
];

/// Protocol activity IDs; label `i` is `PAMAP2_ACTIVITY_IDS[i]`.
pub const PAMAP2_ACTIVITY_IDS: [u32; 12] = [1, 2, 3, 4, 5, 6, 7, 12, 13, 16, 17, 24];

pub const PAMAP2_CLASSES: [&str; 12] = [
    "lying", "sitting", "standing", "walking", "running", "cycling",
    "nordic_walking", "ascending_stairs", "descending_stairs", "vacuum_cleaning", "ironing", "rope_jumping",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pamap2Options {
    /// Longest run of missing samples (at the source rate) that is filled by
    /// linear interpolation; longer gaps invalidate the windows touching them.
    pub max_gap: usize,
    pub downsample: usize,
    pub test_subject: u32,
    pub validation_subject: u32,
}

impl Default for Pamap2Options {
    fn default() -> Self {
        // 0.2 s at 100 Hz; 100 Hz down to 50 Hz
        Pamap2Options { max_gap: 20, downsample: 2, test_subject: 1, validation_subject: 5 }
    }
}

/// Windows cut from one subject file, before normalization.
#[derive(Debug, Default)]
pub(crate) struct SubjectWindows {
    /// Channel-major windows, `CHANNEL_COLUMNS.len() * WINDOW` values each.
    pub windows: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    /// Windows discarded because they overlapped an unfillable gap.
    pub rejected: usize,
}

fn label_of(activity: u32) -> Option<usize> {
    PAMAP2_ACTIVITY_IDS.iter().position(|&a| a == activity)
}

/// Subject number from a `subjectNNN.dat` name; 101 maps to subject 1.
fn subject_id(path: &Path) -> Option<u32> {
    let stem = path.file_name()?.to_str()?.strip_suffix(".dat")?.strip_prefix("subject")?;
    let n: u32 = stem.parse().ok()?;
    Some(if n > 100 { n - 100 } else { n })
}

fn subject_files(root: &Path) -> Result<Vec<(u32, PathBuf)>> {
    let protocol = root.join("Protocol");
    let dir = if protocol.is_dir() { protocol } else { root.to_owned() };
    let entries = fs::read_dir(&dir).map_err(|e| Error::Ingest { file: dir.clone(), line: None, reason: e.to_string() })?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if let Some(id) = subject_id(&path) {
            files.push((id, path));
        }
    }
    if files.is_empty() {
        return Err(Error::Ingest { file: dir, line: None, reason: "no subjectNNN.dat files".into() });
    }
    files.sort();
    Ok(files)
}

/// Fills interior gaps of at most `max_gap` samples by linear interpolation.
/// Samples in longer or edge gaps are marked invalid and zeroed.
fn fill_gaps(stream: &mut [f64], valid: &mut [bool], max_gap: usize) {
    let mut i = 0;
    while i < stream.len() {
        if !stream[i].is_nan() {
            i += 1;
            continue;
        }
        let start = i;
        while i < stream.len() && stream[i].is_nan() {
            i += 1;
        }
        let gap = i - start;
        if start > 0 && i < stream.len() && gap <= max_gap {
            let (a, b) = (stream[start - 1], stream[i]);
            for (k, v) in stream[start..i].iter_mut().enumerate() {
                *v = a + (b - a) * (k + 1) as f64 / (gap + 1) as f64;
            }
        } else {
            stream[start..i].fill(0.0);
            valid[start..i].fill(false);
        }
    }
}

fn cut_run(activity: u32, run: &mut [Vec<f64>], opts: &Pamap2Options, out: &mut SubjectWindows) {
    let Some(label) = label_of(activity) else { return };
    let len = run[0].len();
    let mut valid = vec![true; len];
    for ch in run.iter_mut() {
        fill_gaps(ch, &mut valid, opts.max_gap);
    }
    let valid = downsample(&valid, opts.downsample);
    let streams: Vec<Vec<f64>> = run.iter().map(|c| downsample(c, opts.downsample)).collect();
    for s in window_starts(valid.len(), WINDOW, WINDOW_STEP) {
        if valid[s..s + WINDOW].iter().all(|&v| v) {
            out.windows.push(streams.iter().flat_map(|c| c[s..s + WINDOW].iter().map(|&v| v as f32)).collect());
            out.labels.push(label);
        } else {
            out.rejected += 1;
        }
    }
}

/// Parses one subject file and cuts windows per contiguous activity run.
pub(crate) fn load_subject(path: &Path, opts: &Pamap2Options) -> Result<SubjectWindows> {
    let text = fs::read_to_string(path).map_err(|e| Error::Ingest { file: path.to_owned(), line: None, reason: e.to_string() })?;
    let err = |line: usize, reason: String| Error::Ingest { file: path.to_owned(), line: Some(line), reason };
    let mut out = SubjectWindows::default();
    let mut run: Vec<Vec<f64>> = vec![Vec::new(); CHANNEL_COLUMNS.len()];
    let mut run_activity = None;
    let mut fields: Vec<&str> = Vec::with_capacity(COLUMNS);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        fields.clear();
        fields.extend(line.split_whitespace());
        if fields.len() != COLUMNS {
            return Err(err(i + 1, format!("expected {COLUMNS} columns, found {}", fields.len())));
        }
        let activity = fields[ACTIVITY_COLUMN]
            .parse::<f64>()
            .ok()
            .filter(|a| a.fract() == 0.0 && *a >= 0.0)
            .ok_or_else(|| err(i + 1, format!("bad activity id {:?}", fields[ACTIVITY_COLUMN])))? as u32;
        if run_activity != Some(activity) {
            if let Some(prev) = run_activity {
                cut_run(prev, &mut run, opts, &mut out);
            }
            run.iter_mut().for_each(Vec::clear);
            run_activity = Some(activity);
        }
        for (ch, &col) in CHANNEL_COLUMNS.iter().enumerate() {
            let v: f64 = fields[col].parse().map_err(|_| err(i + 1, format!("bad number {:?} in column {}", fields[col], col + 1)))?;
            if v.is_infinite() {
                return Err(err(i + 1, format!("infinite value in column {}", col + 1)));
            }
            run[ch].push(v);
        }
    }
    if let Some(prev) = run_activity {
        cut_run(prev, &mut run, opts, &mut out);
    }
    Ok(out)
}

fn assemble(parts: Vec<(u32, SubjectWindows)>) -> Result<WindowedDataset> {
    let n: usize = parts.iter().map(|(_, p)| p.labels.len()).sum();
    if n == 0 {
        return Err(Error::Preprocess("split contains no valid windows".into()));
    }
    let mut data = Vec::with_capacity(n * CHANNEL_COLUMNS.len() * WINDOW);
    let mut labels = Vec::with_capacity(n);
    let mut subjects = Vec::with_capacity(n);
    for (id, part) in parts {
        for w in part.windows {
            data.extend(w);
        }
        subjects.extend(std::iter::repeat(id).take(part.labels.len()));
        labels.extend(part.labels);
    }
    let x = Tensor4::from_vec((n, 1, CHANNEL_COLUMNS.len(), WINDOW), data)?;
    WindowedDataset::new(x, labels, subjects, names(&PAMAP2_CHANNELS), names(&PAMAP2_CLASSES))
}

/// Loads every subject with default options, splits by subject and normalizes.
pub fn load_pamap2(root: &Path) -> Result<DatasetSplits> {
    load_pamap2_with(root, &Pamap2Options::default())
}

pub fn load_pamap2_with(root: &Path, opts: &Pamap2Options) -> Result<DatasetSplits> {
    if opts.test_subject == opts.validation_subject {
        return Err(Error::Config("test and validation subject must differ".into()));
    }
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (id, path) in subject_files(root)? {
        let windows = load_subject(&path, opts)?;
        let dest = if id == opts.test_subject {
            &mut test
        } else if id == opts.validation_subject {
            &mut validation
        } else {
            &mut train
        };
        dest.push((id, windows));
    }
    for (name, split) in [("test", &test), ("validation", &validation)] {
        if split.is_empty() {
            return Err(Error::Preprocess(format!("no file for the {name} subject")));
        }
    }
    let train = assemble(train)?;
    if let Some(missing) = train.class_histogram().iter().position(|&c| c == 0) {
        return Err(Error::Preprocess(format!("class {} has no training windows", PAMAP2_CLASSES[missing])));
    }
    normalize_splits(DatasetSplits { train, validation: assemble(validation)?, test: assemble(test)? })
}
