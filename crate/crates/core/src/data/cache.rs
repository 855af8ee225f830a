//! Preprocessed dataset files.
//!
//! ```text
//! "FNKD1"  u8 precision bits (32)
//! u32 n, c, h, w, classes, text_len      little endian
//! text block: "channel NAME [MEAN STD]" and "class NAME" lines
//! n*c*h*w f32 windows, n i32 labels, n i32 subject ids
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{ChannelStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor4};

pub const DATASET_MAGIC: &[u8; 5] = b"FNKD1";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_dataset(ds: &WindowedDataset, out: &mut impl Write) -> Result<()> {
    let d = ds.dims();
    let mut text = String::new();
    for (i, name) in ds.channel_names.iter().enumerate() {
        match ds.channel_stats.get(i) {
            // `{:?}` on f64 prints the shortest string that parses back exactly
            Some(s) => text.push_str(&format!("channel {name} {:?} {:?}\n", s.mean, s.std)),
            None => text.push_str(&format!("channel {name}\n")),
        }
    }
    for name in &ds.class_names {
        text.push_str(&format!("class {name}\n"));
    }
    let mut buf = Vec::with_capacity(40 + text.len() + ds.x.len() * 4 + ds.len() * 8);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.push(Precision::F32.bits() as u8);
    for v in [d.n, d.c, d.h, d.w, ds.num_classes, text.len()] {
        let v = u32::try_from(v).map_err(|_| format_err(format!("{v} does not fit a u32 header field")))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(text.as_bytes());
    for v in ds.x.as_slice() {
        v.write_le(&mut buf);
    }
    for &l in &ds.labels {
        buf.extend_from_slice(&(l as i32).to_le_bytes());
    }
    for &s in &ds.subjects {
        buf.extend_from_slice(&(s as i32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err(format!("truncated dataset file while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn i32s(&mut self, n: usize, what: &str) -> Result<Vec<i32>> {
        Ok(self.take(n * 4, what)?.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<WindowedDataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(5, "magic")? != DATASET_MAGIC {
        return Err(format_err("not a dataset file (bad magic)"));
    }
    let bits = r.take(1, "precision")?[0];
    if bits != 32 {
        return Err(format_err(format!("unsupported dataset precision {bits}")));
    }
    let (n, c, h, w, classes, text_len) =
        (r.u32("n")?, r.u32("c")?, r.u32("h")?, r.u32("w")?, r.u32("classes")?, r.u32("text length")?);
    let text = std::str::from_utf8(r.take(text_len, "header text")?).map_err(|_| format_err("header text is not UTF-8"))?;

    let mut channel_names = Vec::new();
    let mut stats = Vec::new();
    let mut class_names = Vec::new();
    for line in text.lines() {
        let parts: Vec<&str> = line.split(' ').collect();
        let bad = || format_err(format!("bad header line {line:?}"));
        match parts.as_slice() {
            ["channel", name] => channel_names.push(name.to_string()),
            ["channel", name, mean, std] => {
                channel_names.push(name.to_string());
                stats.push(ChannelStats { mean: mean.parse().map_err(|_| bad())?, std: std.parse().map_err(|_| bad())? });
            }
            ["class", name] => class_names.push(name.to_string()),
            _ => return Err(bad()),
        }
    }
    if class_names.len() != classes || (!stats.is_empty() && stats.len() != channel_names.len()) {
        return Err(format_err("header tables disagree with the declared dims"));
    }

    let len = n.checked_mul(c).and_then(|v| v.checked_mul(h)).and_then(|v| v.checked_mul(w));
    let len = len.ok_or_else(|| format_err("declared dims overflow"))?;
    let data: Vec<f32> = r.take(len.checked_mul(4).ok_or_else(|| format_err("declared dims overflow"))?, "windows")?
        .chunks_exact(4)
        .map(f32::read_le)
        .collect();
    let labels = r.i32s(n, "labels")?;
    let subjects = r.i32s(n, "subject ids")?;
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes after the subject ids", bytes.len() - r.pos)));
    }
    if labels.iter().chain(&subjects).any(|&v| v < 0) {
        return Err(format_err("negative label or subject id"));
    }
    let x = Tensor4::from_vec((n, c, h, w), data)?;
    let mut ds = WindowedDataset::new(
        x,
        labels.into_iter().map(|l| l as usize).collect(),
        subjects.into_iter().map(|s| s as u32).collect(),
        channel_names,
        class_names,
    )?;
    ds.channel_stats = stats;
    Ok(ds)
}

pub fn save_dataset(ds: &WindowedDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<WindowedDataset> {
    let bytes = fs::read(path)?;
    read_dataset(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::names;
    use proptest::prelude::*;

    fn dataset(values: Vec<f32>, n: usize) -> WindowedDataset {
        let x = Tensor4::from_vec((n, 1, 2, values.len() / (2 * n)), values).unwrap();
        let mut ds = WindowedDataset::new(
            x,
            (0..n).map(|i| i % 3).collect(),
            (0..n).map(|i| 100 + i as u32).collect(),
            names(&["acc", "gyro"]),
            names(&["a", "b", "c"]),
        )
        .unwrap();
        ds.channel_stats = vec![ChannelStats { mean: 0.1, std: 1.0 / 3.0 }, ChannelStats { mean: -2e-9, std: 7.25 }];
        ds
    }

    #[test]
    fn header_layout() {
        let ds = dataset(vec![1.5; 8], 2);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(&buf[..5], b"FNKD1");
        assert_eq!(buf[5], 32);
        assert_eq!(u32::from_le_bytes(buf[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[18..22].try_into().unwrap()), 2);
        let text_len = u32::from_le_bytes(buf[26..30].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&buf[30..30 + text_len]).unwrap();
        assert!(text.starts_with("channel acc 0.1 0.3333333333333333\n"), "{text}");
        assert_eq!(buf.len(), 30 + text_len + 8 * 4 + 2 * 4 + 2 * 4);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ds = dataset(vec![0.5; 12], 3);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        for cut in [0, 4, 20, buf.len() - 1] {
            assert!(matches!(read_dataset(&buf[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_dataset(&bad).unwrap_err().to_string().contains("magic"));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_dataset(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.fnkd");
        let ds = dataset((0..24).map(|v| v as f32 * 0.37).collect(), 3);
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(bits in prop::collection::vec(any::<u32>(), 1..8usize), n in 1usize..4) {
            // arbitrary bit patterns, NaN payloads included
            let values: Vec<f32> = bits.iter().cycle().take(n * 2 * 3).map(|&b| f32::from_bits(b)).collect();
            let ds = dataset(values, n);
            let mut buf = Vec::new();
            write_dataset(&ds, &mut buf).unwrap();
            let back = read_dataset(&buf).unwrap();
            let raw = |d: &WindowedDataset| d.x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(raw(&back), raw(&ds));
            prop_assert_eq!(&back.labels, &ds.labels);
            prop_assert_eq!(&back.subjects, &ds.subjects);
            prop_assert_eq!(&back.channel_stats, &ds.channel_stats);
        }
    }
}
