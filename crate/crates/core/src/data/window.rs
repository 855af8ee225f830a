use crate::error::{Error, Result};

/// Samples per window (2.56 s at 50 Hz).
pub const WINDOW: usize = 128;
/// Hop between window starts (50% overlap).
pub const WINDOW_STEP: usize = 64;

/// Start offsets of every full window in a stream of `len` samples.
pub fn window_starts(len: usize, window: usize, step: usize) -> Vec<usize> {
    if len < window || window == 0 || step == 0 {
        return Vec::new();
    }
    (0..=(len - window) / step).map(|i| i * step).collect()
}

/// Cuts equal-length channels into windows with fractional `overlap`.
/// Each window is flattened channel-major: `window[ch * size + t]`.
pub fn segment(channels: &[Vec<f64>], size: usize, overlap: f64) -> Result<Vec<Vec<f64>>> {
    if !(0.0..1.0).contains(&overlap) || size == 0 {
        return Err(Error::Config(format!("bad window size {size} / overlap {overlap}")));
    }
    let len = channels.first().map_or(0, Vec::len);
    if channels.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidShape("channels of one stream differ in length".into()));
    }
    let step = size - (size as f64 * overlap).round() as usize;
    Ok(window_starts(len, size, step.max(1))
        .into_iter()
        .map(|s| channels.iter().flat_map(|c| c[s..s + size].iter().copied()).collect())
        .collect())
}

/// Keeps every `factor`-th sample starting at index 0.
pub fn downsample<T: Copy>(stream: &[T], factor: usize) -> Vec<T> {
    stream.iter().step_by(factor.max(1)).copied().collect()
}
