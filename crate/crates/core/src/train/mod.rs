//! Training loop, evaluation, ensembling, checkpoints and the gradient-check
//! harness.

mod checkpoint;
mod eval;
mod gradcheck;

pub use checkpoint::{load_any_checkpoint, read_any_checkpoint, AnyCheckpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use eval::{argmax, ensemble_proba, ensemble_predict, evaluate, score_predictions, AnyNet, Classifier, Evaluation, SubjectScore};
pub use gradcheck::{grad_check, grad_check_with, toy_config, BlockReport, GradCheckConfig, GradCheckReport};

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::layers::{softmax_xent, Mode};
use crate::model::PerceptionNet;
use crate::optim::{AdadeltaConfig, AdadeltaState};
use crate::tensor::Scalar;

/// Quantity whose stagnation ends training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StopMonitor {
    #[default]
    TrainAccuracy,
    ValidationAccuracy,
}

/// Quantity whose minimum selects the kept checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CheckpointMonitor {
    #[default]
    ValidationError,
    TrainError,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without strict improvement of the stop monitor before halting.
    pub patience: usize,
    pub seed: u64,
    pub stop_monitor: StopMonitor,
    pub checkpoint_monitor: CheckpointMonitor,
    pub optimizer: AdadeltaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 2000,
            patience: 100,
            seed: 0,
            stop_monitor: StopMonitor::default(),
            checkpoint_monitor: CheckpointMonitor::default(),
            optimizer: AdadeltaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 || self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "need 1 <= max_epochs and patience <= max_epochs, got {} and {}",
                self.max_epochs, self.patience
            )));
        }
        Ok(())
    }
}

/// Patience counter over a quantity that should increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::NEG_INFINITY, stale: 0 }
    }

    /// Records one epoch; returns true when training should stop.
    pub fn update(&mut self, value: f64) -> bool {
        if value > self.best {
            self.best = value;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience.max(1)
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's training batches.
    pub train_loss: f64,
    /// Accuracy of the training-mode forward passes.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_error: f64,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,train_loss,train_accuracy,val_accuracy,val_error,wall_time_s";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.records {
            writeln!(
                out,
                "{},{:.8},{:.8},{:.8},{:.8},{:.3}",
                r.epoch, r.train_loss, r.train_accuracy, r.val_accuracy, r.val_error, r.wall_time_s
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Records with wall time zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> TrainLog {
        let records = self.records.iter().map(|r| EpochRecord { wall_time_s: 0.0, ..r.clone() }).collect();
        TrainLog { records }
    }

    pub fn min_val_error(&self) -> Option<f64> {
        self.records.iter().map(|r| r.val_error).reduce(f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

pub struct TrainOutcome<T> {
    /// Snapshot with the lowest checkpoint-monitor error.
    pub best: Checkpoint<T>,
    /// State after the last epoch.
    pub last: Checkpoint<T>,
    pub log: TrainLog,
    pub stop: StopReason,
}

fn check_compatible<T: Scalar>(model: &PerceptionNet<T>, ds: &WindowedDataset, name: &str) -> Result<()> {
    let c = model.config();
    let d = ds.dims();
    if d.h != c.input_height || d.w != c.input_width || ds.num_classes != c.num_classes {
        return Err(Error::InvalidShape(format!(
            "{name} split has {} classes and windows {d}, model expects {} classes and (n,1,{},{})",
            ds.num_classes, c.num_classes, c.input_height, c.input_width
        )));
    }
    if ds.is_empty() {
        return Err(Error::Usage(format!("{name} split is empty")));
    }
    Ok(())
}

/// Runs mini-batch Adadelta until the stop monitor stagnates or `max_epochs`.
/// `on_epoch` sees every record as soon as the epoch finishes.
pub fn train<T: Scalar>(
    model: PerceptionNet<T>,
    train_set: &WindowedDataset,
    validation: &WindowedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_compatible(&model, train_set, "training")?;
    check_compatible(&model, validation, "validation")?;

    let mut model = model;
    let lens: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
    let mut optimizer = AdadeltaState::<T>::new(&lens, cfg.optimizer);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let stats = train_set.channel_stats.clone();
    let snapshot = |model: &PerceptionNet<T>, optimizer: &AdadeltaState<T>, epoch, val_error| Checkpoint {
        model: model.clone(),
        optimizer: optimizer.clone(),
        channel_stats: stats.clone(),
        epoch,
        val_error,
        seed: cfg.seed,
    };

    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<Checkpoint<T>> = None;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_set.batch::<T>(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let (logits, cache) = model.forward(&x, Mode::Train, &mut dropout_rng)?;
            if !logits.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch + 1 });
            }
            let out = softmax_xent(&logits, &labels)?;
            let loss = out.loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch + 1 });
            }
            let k = model.config().num_classes;
            correct += out.probs.as_slice().chunks(k).zip(&labels).filter(|(p, &l)| argmax(p) == l).count();
            loss_sum += loss * idx.len() as f64;
            let grads = model.backward(&out.grad, &cache)?;
            optimizer
                .step(&mut model.param_blocks_mut(), &grads.blocks)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {}: {e}", batch + 1)))?;
        }
        let train_accuracy = correct as f64 / train_set.len() as f64;
        let val_accuracy = evaluate(&model, validation)?.report.accuracy;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy,
            val_accuracy,
            val_error: 1.0 - val_accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);

        let monitored_error = match cfg.checkpoint_monitor {
            CheckpointMonitor::ValidationError => record.val_error,
            CheckpointMonitor::TrainError => 1.0 - record.train_accuracy,
        };
        if best.as_ref().map_or(true, |b| monitored_error < b.val_error - 1e-12) {
            best = Some(snapshot(&model, &optimizer, epoch, monitored_error));
        }
        let stop_value = match cfg.stop_monitor {
            StopMonitor::TrainAccuracy => record.train_accuracy,
            StopMonitor::ValidationAccuracy => record.val_accuracy,
        };
        log.records.push(record);
        if stopper.update(stop_value) {
            stop = StopReason::Patience;
            break;
        }
    }
    let last_epoch = log.records.len();
    let last_error = log.records.last().map_or(1.0, |r| r.val_error);
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        last: snapshot(&model, &optimizer, last_epoch, last_error),
        log,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::names;
    use crate::model::ModelConfig;
    use crate::tensor::{Precision, Tensor4};
    use rand::Rng;

    #[test]
    fn stopping_rule_counts_stale_epochs() {
        let mut s = EarlyStopping::new(100);
        let stop_at = (1..=200).find(|_| s.update(0.9));
        assert_eq!(stop_at, Some(101));

        let mut s = EarlyStopping::new(3);
        // improvements reset the counter; equal values do not count as improvement
        let trace = [0.1, 0.2, 0.2, 0.3, 0.3, 0.3, 0.3];
        let stops: Vec<bool> = trace.iter().map(|&v| s.update(v)).collect();
        assert_eq!(stops, vec![false, false, false, false, false, false, true]);
        assert_eq!(s.best(), 0.3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::default().batch_size, 64);
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { max_epochs: 10, patience: 11, ..Default::default() }.validate().is_err());
    }

    pub(crate) fn small_config(precision: Precision) -> ModelConfig {
        ModelConfig {
            input_width: 32,
            filter_width: 3,
            conv_channels: [4, 8, 8],
            num_classes: 2,
            dropout_rate: 0.0,
            ..ModelConfig::ucl()
        }
        .with_precision(precision)
    }

    /// Two classes separated by the sign of a per-class offset.
    pub(crate) fn toy_dataset(n: usize, seed: u64) -> WindowedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Tensor4::from_fn((n, 1, 6, 32), |i, _, _, _| {
            let sign = if labels[i] == 0 { -1.0 } else { 1.0 };
            sign * 0.8 + rng.gen_range(-1.0..1.0f32)
        })
        .unwrap();
        let channels = names(&["a", "b", "c", "d", "e", "f"]);
        WindowedDataset::new(x, labels, (0..n as u32).map(|i| i % 3).collect(), channels, names(&["neg", "pos"])).unwrap()
    }

    fn quick(seed: u64) -> TrainConfig {
        TrainConfig { batch_size: 8, max_epochs: 15, patience: 15, seed, ..Default::default() }
    }

    #[test]
    fn identical_copies_are_memorized() {
        let one = toy_dataset(1, 3);
        let copies = one.subset(&[0; 64]).unwrap();
        let config = ModelConfig { dropout_rate: 0.4, ..small_config(Precision::F32) };
        let net = PerceptionNet::<f32>::init(config, 1).unwrap();
        let cfg = TrainConfig { max_epochs: 200, patience: 5, seed: 1, ..Default::default() };
        let out = train(net, &copies, &copies, &cfg, |_| {}).unwrap();
        assert!(out.log.records.iter().any(|r| r.train_accuracy == 1.0));
        assert_eq!(out.stop, StopReason::Patience);
        assert!(out.log.records.len() < 200);
    }

    #[test]
    fn learns_separable_toy_problem() {
        let (tr, va) = (toy_dataset(48, 1), toy_dataset(16, 2));
        let net = PerceptionNet::<f64>::init(small_config(Precision::F64), 4).unwrap();
        let out = train(net, &tr, &va, &quick(9), |_| {}).unwrap();
        let first = &out.log.records[0];
        let last = out.log.records.last().unwrap();
        assert!(last.train_loss < first.train_loss);
        assert!(out.best.val_error <= 0.1, "{}", out.log.to_csv());
        // kept checkpoint holds the minimum validation error of the log
        assert_eq!(Some(out.best.val_error), out.log.min_val_error());
        let r = &out.log.records[out.best.epoch - 1];
        assert_eq!(r.val_error, out.best.val_error);
        assert!(out.log.records.iter().take(out.best.epoch - 1).all(|e| e.val_error > out.best.val_error - 1e-12));
        assert_eq!(evaluate(&out.best.model, &va).unwrap().report.accuracy, 1.0 - out.best.val_error);
    }

    #[test]
    fn equal_seeds_give_identical_runs() {
        let (tr, va) = (toy_dataset(20, 1), toy_dataset(8, 2));
        let run = |seed| {
            let net = PerceptionNet::<f64>::init(small_config(Precision::F64), 4).unwrap();
            let cfg = TrainConfig { max_epochs: 4, patience: 4, ..quick(seed) };
            train(net, &tr, &va, &cfg, |_| {}).unwrap()
        };
        let (a, b, c) = (run(5), run(5), run(6));
        assert_eq!(a.log.without_timing(), b.log.without_timing());
        assert_eq!(a.last.model, b.last.model);
        assert_eq!(a.last.optimizer, b.last.optimizer);
        assert_ne!(a.last.model, c.last.model);
    }

    #[test]
    fn csv_layout() {
        let (tr, va) = (toy_dataset(10, 1), toy_dataset(4, 2));
        let net = PerceptionNet::<f32>::init(small_config(Precision::F32), 4).unwrap();
        let mut seen = Vec::new();
        let cfg = TrainConfig { max_epochs: 3, patience: 3, ..quick(1) };
        let out = train(net, &tr, &va, &cfg, |r| seen.push(r.epoch)).unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
        assert_eq!(out.stop, StopReason::MaxEpochs);
        let csv = out.log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TrainLog::HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,"));
        assert_eq!(lines[3].split(',').count(), 6);
    }

    #[test]
    fn divergence_aborts_with_location() {
        let tr = toy_dataset(20, 1);
        let mut net = PerceptionNet::<f32>::init(small_config(Precision::F32), 4).unwrap();
        net.param_blocks_mut()[7][0] = f32::INFINITY;
        match train(net.clone(), &tr, &toy_dataset(4, 2), &quick(1), |_| {}) {
            Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 1)),
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("training with an infinite bias succeeded"),
        }

        // an absurd step size blows the weights up after the first update
        let net = PerceptionNet::<f32>::init(small_config(Precision::F32), 4).unwrap();
        let cfg = TrainConfig { optimizer: AdadeltaConfig { lr: 1e38, ..Default::default() }, ..quick(1) };
        let err = train(net, &tr, &toy_dataset(4, 2), &cfg, |_| {}).err().expect("diverged run succeeded");
        assert!(err.to_string().contains("epoch 1, batch 2"), "{err}");
    }

    #[test]
    fn incompatible_dataset_is_rejected() {
        let net = PerceptionNet::<f32>::init(ModelConfig::ucl(), 4).unwrap();
        assert!(matches!(
            train(net, &toy_dataset(4, 1), &toy_dataset(4, 2), &quick(1), |_| {}),
            Err(Error::InvalidShape(_))
        ));
    }
}
