#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusenet::data::{self, DatasetSplits, WindowedDataset, PAMAP2_ACTIVITY_IDS, PAMAP2_CHANNELS, PAMAP2_CLASSES, UCL_CHANNELS, UCL_CLASSES};
use fusenet::Tensor4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fusenet<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_fusenet")).args(args).env_remove("FUSENET_DATA").output().expect("spawn fusenet")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Class-dependent sinusoids with random phase and noise, `(n, 1, height, 128)`.
pub fn synthetic(n: usize, height: usize, subjects: &[u32], seed: u64) -> WindowedDataset {
    let (channels, classes): (Vec<String>, Vec<String>) = if height == 18 {
        (PAMAP2_CHANNELS.map(String::from).to_vec(), PAMAP2_CLASSES.map(String::from).to_vec())
    } else {
        ((0..height).map(|h| UCL_CHANNELS.get(h).map_or(format!("ch{h}"), |s| s.to_string())).collect(), UCL_CLASSES.map(String::from).to_vec())
    };
    let k = classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let phases: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..std::f32::consts::TAU)).collect();
    let x = Tensor4::from_fn((n, 1, height, 128), |i, _, h, t| {
        let freq = 1.0 + labels[i] as f32;
        let amp = 1.0 + 0.1 * h as f32;
        amp * (std::f32::consts::TAU * freq * t as f32 / 128.0 + phases[i] + h as f32).sin() + rng.gen_range(-0.3..0.3)
    })
    .unwrap();
    let subj = (0..n).map(|i| subjects[i % subjects.len()]).collect();
    WindowedDataset::new(x, labels, subj, channels, classes).unwrap()
}

/// Normalized synthetic splits with disjoint subjects.
pub fn synthetic_splits(height: usize, sizes: (usize, usize, usize), seed: u64) -> DatasetSplits {
    data::normalize_splits(DatasetSplits {
        train: synthetic(sizes.0, height, &[1, 3, 6], seed),
        validation: synthetic(sizes.1, height, &[27], seed + 1),
        test: synthetic(sizes.2, height, &[2, 4], seed + 2),
    })
    .unwrap()
}

pub fn write_cache(dir: &Path, splits: &DatasetSplits) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    for (name, split) in splits.iter() {
        data::save_dataset(split, &dir.join(format!("{name}.fnkd"))).unwrap();
    }
    dir.to_owned()
}

/// Smartphone-corpus layout with `rows` windows per split; six-window blocks
/// per subject so every block holds each class once.
pub fn write_fake_ucl(root: &Path, rows: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for split in ["train", "test"] {
        let sig = root.join(split).join("Inertial Signals");
        fs::create_dir_all(&sig).unwrap();
        for prefix in ["total_acc", "body_acc", "body_gyro"] {
            for axis in ["x", "y", "z"] {
                let mut text = String::new();
                for _ in 0..rows {
                    let row: Vec<String> = (0..128).map(|_| format!("{:.7e}", rng.gen_range(-1.0..1.0f32))).collect();
                    writeln!(text, "{}", row.join(" ")).unwrap();
                }
                fs::write(sig.join(format!("{prefix}_{axis}_{split}.txt")), text).unwrap();
            }
        }
        let cycle: &[u32] = if split == "train" { &[1, 27, 3, 29, 5, 30] } else { &[2, 4] };
        let labels: String = (0..rows).map(|i| format!("{}\n", i % 6 + 1)).collect();
        let subjects: String = (0..rows).map(|i| format!("{}\n", cycle[(i / 6) % cycle.len()])).collect();
        fs::write(root.join(split).join(format!("y_{split}.txt")), labels).unwrap();
        fs::write(root.join(split).join(format!("subject_{split}.txt")), subjects).unwrap();
    }
}

/// Protocol files for `subjects`, 300 samples of every activity each.
pub fn write_fake_pamap2(root: &Path, subjects: &[u32]) {
    let dir = root.join("Protocol");
    fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for s in subjects {
        let mut text = String::new();
        let mut row = 0;
        for &activity in [0].iter().chain(&PAMAP2_ACTIVITY_IDS) {
            for _ in 0..300 {
                write!(text, "{:.2} {activity} NaN", row as f64 / 100.0).unwrap();
                for _ in 3..54 {
                    write!(text, " {:.5}", rng.gen_range(-5.0..5.0f64)).unwrap();
                }
                text.push('\n');
                row += 1;
            }
        }
        fs::write(dir.join(format!("subject{}.dat", 100 + s)), text).unwrap();
    }
}

/// The single run directory under `parent`.
pub fn only_run_dir(parent: &Path) -> PathBuf {
    let dirs: Vec<PathBuf> = fs::read_dir(parent).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}
