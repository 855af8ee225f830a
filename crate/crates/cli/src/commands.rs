use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fusenet::data::{self, AccelerationSource, DatasetSplits, WindowedDataset};
use fusenet::train::{self as trainer, AnyNet, Checkpoint, CheckpointMonitor, GradCheckConfig, StopMonitor, TrainConfig, TrainLog};
use fusenet::optim::AdadeltaConfig;
use fusenet::{ModelConfig, PerceptionNet, Precision, Scalar};

use crate::manifest::{fresh_run_dir, sha256_file, Manifest};
use crate::{AccArg, CliError, DatasetKind, EvalArgs, GradcheckArgs, PrepareArgs, StopArg, TrainArgs};

fn split_file(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.fnkd"))
}

fn load_split(dir: &Path, split: &str) -> Result<WindowedDataset, CliError> {
    let path = split_file(dir, split);
    if !path.is_file() {
        return Err(CliError::Usage(format!("{} not found; run `fusenet prepare` first", path.display())));
    }
    Ok(data::load_dataset(&path)?)
}

pub fn prepare(args: &PrepareArgs) -> Result<(), CliError> {
    if !args.root.exists() {
        return Err(CliError::Usage(format!("dataset root {} does not exist", args.root.display())));
    }
    let existed = args.out.exists();
    if existed && fs::read_dir(&args.out).map_err(|e| CliError::io(&args.out, e))?.next().is_some() {
        return Err(CliError::Usage(format!("refusing to overwrite non-empty directory {}", args.out.display())));
    }
    fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let result = (|| {
        let manifest = Manifest::create(&args.out, "prepare", &args.argv(), &[])?;
        let splits: DatasetSplits = match args.dataset {
            DatasetKind::Ucl => {
                let source = match args.acc {
                    AccArg::Total => AccelerationSource::Total,
                    AccArg::Body => AccelerationSource::Body,
                };
                data::load_ucl(&args.root, source)?
            }
            DatasetKind::Pamap2 => data::load_pamap2(&args.root)?,
        };
        for (name, split) in splits.iter() {
            let path = split_file(&args.out, name);
            data::save_dataset(split, &path)?;
            manifest.record_output(name, &path)?;
        }
        let summary = format!("dataset={}\n{}", crate::value_name(&args.dataset), splits.summary());
        let summary_path = args.out.join("summary.txt");
        fs::write(&summary_path, &summary).map_err(|e| CliError::io(&summary_path, e))?;
        manifest.record_output("summary", &summary_path)?;
        manifest.finish()?;
        print!("{summary}");
        Ok(())
    })();
    if result.is_err() && !existed {
        let _ = fs::remove_dir_all(&args.out);
    }
    result
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let precision = Precision::from_bits(args.precision)
        .ok_or_else(|| CliError::Usage(format!("--precision must be 32 or 64, got {}", args.precision)))?;
    let train_set = load_split(&args.data, "train")?;
    let validation = load_split(&args.data, "validation")?;
    let d = train_set.dims();
    let config = ModelConfig {
        input_height: d.h,
        input_width: d.w,
        num_classes: train_set.num_classes,
        fusion_layer: args.fusion_layer,
        head: args.head,
        dropout_rate: args.dropout,
        precision,
        ..ModelConfig::default()
    };
    config.validate()?;
    let cfg = TrainConfig {
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        patience: args.patience,
        seed: args.seed,
        stop_monitor: match args.stop_monitor {
            StopArg::TrainAccuracy => StopMonitor::TrainAccuracy,
            StopArg::ValidationAccuracy => StopMonitor::ValidationAccuracy,
        },
        checkpoint_monitor: CheckpointMonitor::ValidationError,
        optimizer: AdadeltaConfig { lr: args.lr, rho: args.rho, epsilon: args.epsilon },
    };
    cfg.validate()?;

    let run_dir = fresh_run_dir(&args.out, &format!("seed{}", args.seed))?;
    let mut extra: Vec<(String, String)> = config.to_kv().into_iter().map(|(k, v)| (format!("model.{k}"), v)).collect();
    extra.push(("param_count".into(), config.param_count()?.to_string()));
    for split in ["train", "validation"] {
        let path = split_file(&args.data, split);
        extra.push((format!("input.{split}"), path.display().to_string()));
        extra.push((format!("input.{split}.sha256"), sha256_file(&path)?));
    }
    extra.push(("run_dir".into(), run_dir.display().to_string()));
    let manifest = Manifest::create(&run_dir, "train", &args.argv(), &extra)?;
    eprintln!("run directory {}", run_dir.display());
    eprintln!("parameters {}", config.param_count()?);

    match precision {
        Precision::F32 => train_typed::<f32>(config, &train_set, &validation, &cfg, &run_dir, &manifest, args.quiet),
        Precision::F64 => train_typed::<f64>(config, &train_set, &validation, &cfg, &run_dir, &manifest, args.quiet),
    }
}

fn train_typed<T: Scalar>(
    config: ModelConfig,
    train_set: &WindowedDataset,
    validation: &WindowedDataset,
    cfg: &TrainConfig,
    run_dir: &Path,
    manifest: &Manifest,
    quiet: bool,
) -> Result<(), CliError> {
    let net = PerceptionNet::<T>::init(config, cfg.seed)?;
    let log_path = run_dir.join("train_log.csv");
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    writeln!(log, "{}", TrainLog::HEADER).map_err(|e| CliError::io(&log_path, e))?;
    let mut write_err = None;
    let outcome = trainer::train(net, train_set, validation, cfg, |r| {
        let row = TrainLog { records: vec![r.clone()] }.to_csv();
        let line = row.lines().nth(1).unwrap_or_default();
        if let Err(e) = writeln!(log, "{line}") {
            write_err.get_or_insert(e);
        }
        if !quiet {
            eprintln!(
                "epoch {:>4}  loss {:.4}  train_acc {:.4}  val_acc {:.4}  {:.1}s",
                r.epoch, r.train_loss, r.train_accuracy, r.val_accuracy, r.wall_time_s
            );
        }
    });
    if let Some(e) = write_err {
        return Err(CliError::io(&log_path, e));
    }
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            manifest.append("aborted", &e)?;
            return Err(e.into());
        }
    };
    manifest.record_output("train_log", &log_path)?;
    let save = |name: &str, ck: &Checkpoint<T>| -> Result<(), CliError> {
        let path = run_dir.join(format!("{name}.fnkc"));
        ck.save(&path)?;
        manifest.record_output(name, &path)
    };
    save("best", &outcome.best)?;
    save("last", &outcome.last)?;
    manifest.append("epochs", outcome.log.records.len())?;
    manifest.append("stop", format!("{:?}", outcome.stop))?;
    manifest.append("best_epoch", outcome.best.epoch)?;
    manifest.append("best_val_error", format!("{:?}", outcome.best.val_error))?;
    manifest.finish()?;
    println!("best_epoch={}", outcome.best.epoch);
    println!("val_accuracy={:.6}", 1.0 - outcome.best.val_error);
    println!("checkpoint={}", run_dir.join("best.fnkc").display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let split = crate::value_name(&args.split);
    let ds = load_split(&args.data, &split)?;
    let mut nets = Vec::with_capacity(args.checkpoints.len());
    for path in &args.checkpoints {
        let ck = trainer::load_any_checkpoint(path)?;
        if !ck.channel_stats().is_empty() && !ds.channel_stats.is_empty() && ck.channel_stats() != ds.channel_stats {
            eprintln!("warning: {} was trained under different normalization statistics", path.display());
        }
        nets.push(ck.into_net());
    }
    let evaluation = if let [net] = nets.as_slice() {
        trainer::evaluate(net, &ds)?
    } else {
        let predictions = trainer::ensemble_predict::<AnyNet>(&nets, &ds, args.jobs.max(1))?;
        trainer::score_predictions(&ds, predictions)?
    };

    let metrics = format!(
        "split={split}\ncheckpoints={}\n{}",
        nets.len(),
        evaluation.report.to_key_values(&ds.class_names)
    );
    let confusion = evaluation.confusion.render(&ds.class_names);
    let subjects = evaluation.render_subjects();
    let table = evaluation.report.render_table(&ds.class_names);
    print!("{metrics}\n{table}\n{confusion}\n{subjects}");

    if let Some(out) = &args.out {
        let dir = fresh_run_dir(out, "eval")?;
        let mut extra = Vec::new();
        for (i, p) in args.checkpoints.iter().enumerate() {
            extra.push((format!("input.checkpoint.{i}.sha256"), sha256_file(p)?));
        }
        let data_path = split_file(&args.data, &split);
        extra.push(("input.data.sha256".into(), sha256_file(&data_path)?));
        let manifest = Manifest::create(&dir, "eval", &args.argv(), &extra)?;
        let predictions: String = evaluation.predictions.iter().map(|p| format!("{p}\n")).collect();
        for (name, text) in [
            ("metrics.txt", &metrics),
            ("report.txt", &table),
            ("confusion.txt", &confusion),
            ("subjects.csv", &subjects),
            ("predictions.txt", &predictions),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
            manifest.record_output(name.split('.').next().unwrap_or(name), &path)?;
        }
        manifest.finish()?;
        eprintln!("wrote {}", dir.display());
    }

    if let Some(min) = args.min_accuracy {
        if evaluation.report.accuracy < min {
            return Err(CliError::Failure(format!(
                "accuracy {:.6} is below the required {min}",
                evaluation.report.accuracy
            )));
        }
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let cfg = GradCheckConfig { seed: args.seed, samples: args.samples, zero_input: args.zero_input, ..Default::default() };
    let report = trainer::grad_check(&cfg, args.tolerance)?;
    print!("{}", report.render());
    if report.passed() {
        Ok(())
    } else {
        let failing: Vec<String> = report
            .blocks
            .iter()
            .filter(|b| !b.passed)
            .map(|b| format!("{} ({:.3e})", b.name, b.max_rel_error))
            .collect();
        Err(CliError::Failure(format!("gradient check failed for {}", failing.join(", "))))
    }
}
