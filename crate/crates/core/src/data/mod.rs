//! Dataset ingestion and preprocessing.
//!
//! Both corpora end up as [`WindowedDataset`]s: `(N, 1, H, 128)` windows with
//! one sensor axis per row, integer labels, per-window subject IDs and the
//! per-channel statistics used for z-normalization.

mod cache;
mod normalize;
mod pamap2;
mod ucl;
mod window;

pub use cache::{load_dataset, read_dataset, save_dataset, write_dataset, DATASET_MAGIC};
pub use normalize::{channel_stats, normalize_splits, ChannelStats};
pub use pamap2::{load_pamap2, load_pamap2_with, Pamap2Options, PAMAP2_ACTIVITY_IDS, PAMAP2_CHANNELS, PAMAP2_CLASSES};
pub use ucl::{load_ucl, AccelerationSource, UCL_CHANNELS, UCL_CLASSES, UCL_VALIDATION_SUBJECTS};
pub use window::{downsample, segment, window_starts, WINDOW, WINDOW_STEP};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    /// `(N, 1, channels, window)`.
    pub x: Tensor4<f32>,
    pub labels: Vec<usize>,
    pub subjects: Vec<u32>,
    pub num_classes: usize,
    pub channel_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Statistics the windows were normalized with; empty for raw data.
    pub channel_stats: Vec<ChannelStats>,
}

impl WindowedDataset {
    pub fn new(
        x: Tensor4<f32>,
        labels: Vec<usize>,
        subjects: Vec<u32>,
        channel_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let d = x.dims();
        if d.c != 1 {
            return Err(Error::InvalidShape(format!("dataset windows must have one input channel, got {d}")));
        }
        if labels.len() != d.n || subjects.len() != d.n {
            return Err(Error::InvalidShape(format!(
                "{} windows but {} labels and {} subject ids",
                d.n,
                labels.len(),
                subjects.len()
            )));
        }
        if channel_names.len() != d.h {
            return Err(Error::InvalidShape(format!("{} channel names for {} rows", channel_names.len(), d.h)));
        }
        let num_classes = class_names.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Usage(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(WindowedDataset { x, labels, subjects, num_classes, channel_names, class_names, channel_stats: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.x.dims()
    }

    /// Windows `indices` converted to the model's precision.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<Tensor4<T>> {
        Ok(self.x.gather(indices)?.cast())
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(WindowedDataset {
            x: self.x.gather(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i]).collect(),
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        WindowedDataset {
            x: Tensor4::zeros((1, 1, 1, 1)).expect("placeholder"),
            labels: Vec::new(),
            subjects: Vec::new(),
            num_classes: self.num_classes,
            channel_names: self.channel_names.clone(),
            class_names: self.class_names.clone(),
            channel_stats: self.channel_stats.clone(),
        }
    }

    /// Windows per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Windows per subject, ordered by subject ID.
    pub fn subject_counts(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for &s in &self.subjects {
            *m.entry(s).or_insert(0) += 1;
        }
        m
    }
}

/// Subject-disjoint training, validation and test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
    pub test: WindowedDataset,
}

impl DatasetSplits {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &WindowedDataset)> {
        [("train", &self.train), ("validation", &self.validation), ("test", &self.test)].into_iter()
    }

    /// Text summary: split sizes, class histograms and channel statistics.
    pub fn summary(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let t = &self.train;
        writeln!(out, "channels={}", t.dims().h).unwrap();
        writeln!(out, "window={}", t.dims().w).unwrap();
        writeln!(out, "classes={}", t.num_classes).unwrap();
        for (name, split) in self.iter() {
            writeln!(out, "{name}.samples={}", split.len()).unwrap();
            let subjects: Vec<String> = split.subject_counts().keys().map(|s| s.to_string()).collect();
            writeln!(out, "{name}.subjects={}", subjects.join(",")).unwrap();
            for (class, count) in t.class_names.iter().zip(split.class_histogram()) {
                writeln!(out, "{name}.class.{class}={count}").unwrap();
            }
        }
        for (ch, stats) in t.channel_names.iter().zip(&t.channel_stats) {
            writeln!(out, "stats.{ch}.mean={}", stats.mean).unwrap();
            writeln!(out, "stats.{ch}.std={}", stats.std).unwrap();
        }
        out
    }
}

pub(crate) fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}
