use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::metrics::{report, ConfusionMatrix, MetricsReport};
use crate::model::{ModelConfig, PerceptionNet};
use crate::tensor::Scalar;

const EVAL_CHUNK: usize = 256;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps dataset windows to class probabilities.
pub trait Classifier: Sync {
    fn config(&self) -> &ModelConfig;

    /// Row-major `(indices.len(), num_classes)` probabilities.
    fn probabilities(&self, ds: &WindowedDataset, indices: &[usize]) -> Result<Vec<f64>>;
}

impl<T: Scalar> Classifier for PerceptionNet<T> {
    fn config(&self) -> &ModelConfig {
        PerceptionNet::config(self)
    }

    fn probabilities(&self, ds: &WindowedDataset, indices: &[usize]) -> Result<Vec<f64>> {
        let c = PerceptionNet::config(self);
        let d = ds.dims();
        if d.h != c.input_height || d.w != c.input_width || ds.num_classes != c.num_classes {
            return Err(Error::InvalidShape(format!(
                "dataset with {} classes and windows {d} does not fit a model for {} classes and (n,1,{},{})",
                ds.num_classes, c.num_classes, c.input_height, c.input_width
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * c.num_classes);
        for chunk in indices.chunks(EVAL_CHUNK) {
            let p = self.predict_proba(&ds.batch::<T>(chunk)?)?;
            out.extend(p.as_slice().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(out)
    }
}

/// A network of either precision.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyNet {
    F32(PerceptionNet<f32>),
    F64(PerceptionNet<f64>),
}

impl Classifier for AnyNet {
    fn config(&self) -> &ModelConfig {
        match self {
            AnyNet::F32(n) => n.config(),
            AnyNet::F64(n) => n.config(),
        }
    }

    fn probabilities(&self, ds: &WindowedDataset, indices: &[usize]) -> Result<Vec<f64>> {
        match self {
            AnyNet::F32(n) => n.probabilities(ds, indices),
            AnyNet::F64(n) => n.probabilities(ds, indices),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SubjectScore {
    pub correct: usize,
    pub total: usize,
}

impl SubjectScore {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
    /// Only subjects present in the dataset.
    pub per_subject: BTreeMap<u32, SubjectScore>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn render_subjects(&self) -> String {
        let mut out = String::from("subject,correct,total,accuracy\n");
        for (s, score) in &self.per_subject {
            writeln!(out, "{s},{},{},{:.6}", score.correct, score.total, score.accuracy()).unwrap();
        }
        out
    }
}

/// Metrics for fixed predictions on `ds`.
pub fn score_predictions(ds: &WindowedDataset, predictions: Vec<usize>) -> Result<Evaluation> {
    let confusion = ConfusionMatrix::from_labels(&ds.labels, &predictions, ds.num_classes)?;
    let mut per_subject: BTreeMap<u32, SubjectScore> = BTreeMap::new();
    for ((&s, &y), &p) in ds.subjects.iter().zip(&ds.labels).zip(&predictions) {
        let e = per_subject.entry(s).or_default();
        e.total += 1;
        e.correct += usize::from(y == p);
    }
    Ok(Evaluation { report: report(&confusion)?, confusion, per_subject, predictions })
}

/// Single-model evaluation in inference mode.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, ds: &WindowedDataset) -> Result<Evaluation> {
    let all: Vec<usize> = (0..ds.len()).collect();
    let k = model.config().num_classes;
    let probs = model.probabilities(ds, &all)?;
    score_predictions(ds, probs.chunks(k).map(argmax).collect())
}

/// Mean class probabilities over `models`, computed on up to `jobs` threads.
/// The sum runs in model order so the result does not depend on `jobs`.
pub fn ensemble_proba<C: Classifier>(models: &[C], ds: &WindowedDataset, jobs: usize) -> Result<Vec<f64>> {
    let first = models.first().ok_or_else(|| Error::Usage("ensemble needs at least one model".into()))?;
    if let Some(i) = models.iter().position(|m| m.config() != first.config()) {
        return Err(Error::Usage(format!("model {} has a different configuration than model 1", i + 1)));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let per_thread = models.len().div_ceil(jobs.clamp(1, models.len()));
    let results: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = models
            .chunks(per_thread)
            .map(|group| {
                let all = &all;
                s.spawn(move || group.iter().map(|m| m.probabilities(ds, all)).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation thread panicked")).collect()
    });
    let mut sum = vec![0.0f64; ds.len() * first.config().num_classes];
    for probs in results {
        for (acc, p) in sum.iter_mut().zip(probs?) {
            *acc += p;
        }
    }
    let k = models.len() as f64;
    sum.iter_mut().for_each(|v| *v /= k);
    Ok(sum)
}

/// Argmax of the averaged probabilities.
pub fn ensemble_predict<C: Classifier>(models: &[C], ds: &WindowedDataset, jobs: usize) -> Result<Vec<usize>> {
    let classes = models.first().map_or(1, |m| m.config().num_classes);
    Ok(ensemble_proba(models, ds, jobs)?.chunks(classes).map(argmax).collect())
}
