//! Checkpoint files.
//!
//! ```text
//! "FNKC1"  u8 version
//! u32 text_len, text block of key=value lines (config, epoch, seed, ...)
//! u32 buffer count, then per buffer:
//!   u32 name_len, name, u32 rank, rank x u32 dims, little-endian floats
//! ```
//!
//! Floats are 32 or 64 bit according to the `precision` key. Parameter
//! buffers come first, then the optimizer's two accumulators per buffer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PerceptionNet};
use crate::optim::{AdadeltaConfig, AdadeltaState};
use crate::tensor::{Precision, Scalar};
use crate::train::AnyNet;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FNKC1";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: PerceptionNet<T>,
    pub optimizer: AdadeltaState<T>,
    /// Normalization the model was trained under.
    pub channel_stats: Vec<ChannelStats>,
    /// Epoch the snapshot was taken after (1-based; 0 before training).
    pub epoch: usize,
    pub val_error: f64,
    pub seed: u64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl<T: Scalar> Checkpoint<T> {
    /// Untrained snapshot of `model` with fresh optimizer state.
    pub fn fresh(model: PerceptionNet<T>, seed: u64) -> Self {
        let lens: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
        Checkpoint {
            optimizer: AdadeltaState::new(&lens, AdadeltaConfig::default()),
            model,
            channel_stats: Vec::new(),
            epoch: 0,
            val_error: 1.0,
            seed,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    fn header(&self) -> String {
        let mut lines: Vec<String> = self.config().to_kv().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        let opt = &self.optimizer.config;
        lines.push(format!("epoch={}", self.epoch));
        lines.push(format!("val_error={:?}", self.val_error));
        lines.push(format!("seed={}", self.seed));
        lines.push(format!("optimizer.lr={:?}", opt.lr));
        lines.push(format!("optimizer.rho={:?}", opt.rho));
        lines.push(format!("optimizer.epsilon={:?}", opt.epsilon));
        lines.push(format!("optimizer.steps={}", self.optimizer.steps));
        lines.push(format!("stats.count={}", self.channel_stats.len()));
        for (i, s) in self.channel_stats.iter().enumerate() {
            lines.push(format!("stats.{i}={:?} {:?}", s.mean, s.std));
        }
        lines.join("\n") + "\n"
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.header();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());

        let names = self.model.param_names();
        let shapes = self.model.param_shapes();
        let blocks = self.model.param_blocks();
        out.extend_from_slice(&(3 * names.len() as u32).to_le_bytes());
        let mut put = |name: &str, shape: &[usize], data: &[T]| {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in data {
                v.write_le(&mut out);
            }
        };
        for ((name, shape), data) in names.iter().zip(&shapes).zip(&blocks) {
            put(name, shape, data);
        }
        for (prefix, accs) in [("adadelta.grad_sq.", &self.optimizer.grad_sq), ("adadelta.update_sq.", &self.optimizer.update_sq)] {
            for ((name, shape), data) in names.iter().zip(&shapes).zip(accs) {
                put(&format!("{prefix}{name}"), shape, data);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (kv, body) = parse_header(bytes)?;
        let config = ModelConfig::from_kv(&kv)?;
        if config.precision != T::PRECISION {
            return Err(bad(format!(
                "checkpoint holds {}-bit parameters, expected {}-bit",
                config.precision,
                T::PRECISION
            )));
        }
        let mut model = PerceptionNet::<T>::zeroed(config)?;
        let names = model.param_names();
        let shapes = model.param_shapes();

        let mut r = Reader { bytes: body, pos: 0 };
        let count = r.u32("buffer count")?;
        if count != 3 * names.len() {
            return Err(bad(format!("expected {} buffers, found {count}", 3 * names.len())));
        }
        let mut read_block = |want: &str, shape: &[usize]| -> Result<Vec<T>> {
            let len = r.u32("name length")?;
            let name = std::str::from_utf8(r.take(len, "buffer name")?).map_err(|_| bad("buffer name is not UTF-8"))?;
            if name != want {
                return Err(bad(format!("expected buffer `{want}`, found `{name}`")));
            }
            let rank = r.u32("rank")?;
            let dims = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>>>()?;
            if dims != shape {
                return Err(bad(format!("buffer `{name}` has shape {dims:?}, config implies {shape:?}")));
            }
            let size = std::mem::size_of::<T>();
            let n: usize = dims.iter().product();
            Ok(r.take(n * size, name)?.chunks_exact(size).map(T::read_le).collect())
        };

        let mut params = Vec::new();
        for (name, shape) in names.iter().zip(&shapes) {
            params.push(read_block(name, shape)?);
        }
        let mut accs = [Vec::new(), Vec::new()];
        for (acc, prefix) in accs.iter_mut().zip(["adadelta.grad_sq.", "adadelta.update_sq."]) {
            for (name, shape) in names.iter().zip(&shapes) {
                acc.push(read_block(&format!("{prefix}{name}"), shape)?);
            }
        }
        if r.pos != body.len() {
            return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
        }
        for (dst, src) in model.param_blocks_mut().into_iter().zip(&params) {
            dst.copy_from_slice(src);
        }

        let num = |key: &str| -> Result<&str> {
            kv.get(key).map(String::as_str).ok_or_else(|| bad(format!("missing key `{key}`")))
        };
        let parse_f64 = |key: &str| -> Result<f64> { num(key)?.parse().map_err(|_| bad(format!("bad value for `{key}`"))) };
        let parse_u64 = |key: &str| -> Result<u64> { num(key)?.parse().map_err(|_| bad(format!("bad value for `{key}`"))) };
        let [grad_sq, update_sq] = accs;
        let optimizer = AdadeltaState {
            config: AdadeltaConfig {
                lr: parse_f64("optimizer.lr")?,
                rho: parse_f64("optimizer.rho")?,
                epsilon: parse_f64("optimizer.epsilon")?,
            },
            grad_sq,
            update_sq,
            steps: parse_u64("optimizer.steps")?,
        };
        let channel_stats = (0..parse_u64("stats.count")? as usize)
            .map(|i| {
                let key = format!("stats.{i}");
                let v = num(&key)?;
                let (m, s) = v.split_once(' ').ok_or_else(|| bad(format!("bad value for `{key}`")))?;
                let p = |t: &str| t.parse::<f64>().map_err(|_| bad(format!("bad value for `{key}`")));
                Ok(ChannelStats { mean: p(m)?, std: p(s)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            model,
            optimizer,
            channel_stats,
            epoch: parse_u64("epoch")? as usize,
            val_error: parse_f64("val_error")?,
            seed: parse_u64("seed")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?).map_err(|e| with_path(e, path))
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            _ => Err(bad(format!("truncated checkpoint while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

/// Key-value header and the remaining payload.
fn parse_header(bytes: &[u8]) -> Result<(BTreeMap<String, String>, &[u8])> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(5, "magic")? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = r.take(1, "version")?[0];
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version} (this build reads version {CHECKPOINT_VERSION})")));
    }
    let len = r.u32("header length")?;
    let text = std::str::from_utf8(r.take(len, "header")?).map_err(|_| bad("header is not UTF-8"))?;
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad header line {line:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    Ok((kv, &bytes[r.pos..]))
}

/// A checkpoint of either precision.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyCheckpoint {
    F32(Checkpoint<f32>),
    F64(Checkpoint<f64>),
}

impl AnyCheckpoint {
    pub fn config(&self) -> &ModelConfig {
        match self {
            AnyCheckpoint::F32(c) => c.config(),
            AnyCheckpoint::F64(c) => c.config(),
        }
    }

    pub fn channel_stats(&self) -> &[ChannelStats] {
        match self {
            AnyCheckpoint::F32(c) => &c.channel_stats,
            AnyCheckpoint::F64(c) => &c.channel_stats,
        }
    }

    pub fn into_net(self) -> AnyNet {
        match self {
            AnyCheckpoint::F32(c) => AnyNet::F32(c.model),
            AnyCheckpoint::F64(c) => AnyNet::F64(c.model),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            AnyCheckpoint::F32(c) => c.to_bytes(),
            AnyCheckpoint::F64(c) => c.to_bytes(),
        }
    }
}

pub fn read_any_checkpoint(bytes: &[u8]) -> Result<AnyCheckpoint> {
    let (kv, _) = parse_header(bytes)?;
    match kv.get("precision").and_then(|p| p.parse().ok()).and_then(Precision::from_bits) {
        Some(Precision::F32) => Ok(AnyCheckpoint::F32(Checkpoint::from_bytes(bytes)?)),
        Some(Precision::F64) => Ok(AnyCheckpoint::F64(Checkpoint::from_bytes(bytes)?)),
        None => Err(bad("missing or unsupported precision key")),
    }
}

pub fn load_any_checkpoint(path: &Path) -> Result<AnyCheckpoint> {
    read_any_checkpoint(&fs::read(path)?).map_err(|e| with_path(e, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Head;
    use crate::tensor::Tensor4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample<T: Scalar>(config: ModelConfig) -> Checkpoint<T> {
        let model = PerceptionNet::<T>::init(config, 3).unwrap();
        let mut ck = Checkpoint::fresh(model, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in ck.optimizer.grad_sq.iter_mut().chain(ck.optimizer.update_sq.iter_mut()) {
            b.iter_mut().for_each(|v| *v = T::from_f64_lossy(rng.gen_range(0.0..1e-3)));
        }
        ck.optimizer.steps = 12;
        ck.channel_stats = vec![ChannelStats { mean: 0.1, std: 0.3 }; 6];
        ck.epoch = 9;
        ck.val_error = 1.0 / 7.0;
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample::<f32>(ModelConfig::ucl());
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor4::from_fn((3, 1, 6, 128), |_, _, _, _| rng.gen_range(-2.0..2.0f32)).unwrap();
        let (a, b) = (ck.model.logits(&x).unwrap(), back.model.logits(&x).unwrap());
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(p, q)| p.to_bits() == q.to_bits()));

        let dense = ModelConfig { head: Head::Dense { hidden: 20 }, fusion_layer: 1, ..ModelConfig::pamap2() };
        let ck = sample::<f64>(dense.with_precision(Precision::F64));
        let any = read_any_checkpoint(&ck.to_bytes()).unwrap();
        assert_eq!(any, AnyCheckpoint::F64(ck));
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample::<f32>(ModelConfig::ucl()).to_bytes();
        for cut in [3, 6, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::<f32>::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated"), "cut {cut}: {err}");
        }
        let mut bumped = bytes.clone();
        bumped[5] += 1;
        assert!(Checkpoint::<f32>::from_bytes(&bumped).unwrap_err().to_string().contains("unsupported version 2"));
        let mut magic = bytes.clone();
        magic[..5].copy_from_slice(b"FNKD1");
        assert!(read_any_checkpoint(&magic).unwrap_err().to_string().contains("magic"));
        let err = Checkpoint::<f64>::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("32-bit"), "{err}");
        let mut extra = bytes;
        extra.extend_from_slice(&[0; 4]);
        assert!(Checkpoint::<f32>::from_bytes(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fnkc");
        let ck = sample::<f32>(ModelConfig::ucl());
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::<f32>::load(&path).unwrap(), ck);
        assert_eq!(load_any_checkpoint(&path).unwrap().config(), &ModelConfig::ucl());
        std::fs::write(&path, b"FNKC1").unwrap();
        let err = load_any_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("model.fnkc") && err.contains("truncated"), "{err}");
    }
}
